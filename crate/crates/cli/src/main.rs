//! `dtp`: run a style transfer session, compare images, inspect weight files.
//!
//! Exit codes: 0 success, 1 probe mismatch, 2 bad flags or arguments,
//! 3 I/O or file-format failure, 4 non-finite loss.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use dtp_core::image_io::{self, load_png, resize_bilinear};
use dtp_core::nn::manifest::ExportManifest;
use dtp_core::nn::{Encoder, StoredTensor};
use dtp_core::{Ablations, DtpConfig, Error, WeightStore, WeightsSource};

const EXIT_PROBE_MISMATCH: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NON_FINITE: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "dtp", version, about = "Test-time trained photorealistic style transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize the networks on one content/style pair and write the result.
    Run(RunArgs),
    /// Print the structural similarity of two images.
    Ssim(SsimArgs),
    /// List the tensors of a .dtpw file.
    InspectWeights(InspectArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    content: PathBuf,
    #[arg(long)]
    style: PathBuf,
    /// Output directory for final.png, snapshots and report.csv.
    #[arg(long)]
    out: PathBuf,
    /// Encoder weights: a .dtpw path or "random".
    #[arg(long, default_value = "random")]
    weights: String,
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.07)]
    tau: f64,
    /// Residual blend weight; 0.111111 selects exactly 1/9.
    #[arg(long = "lambda-w", default_value_t = 0.111111)]
    lambda_w: f64,
    #[arg(long = "lambda-c", default_value_t = 0.2)]
    lambda_c: f64,
    #[arg(long = "lambda-cyc", default_value_t = 1.0)]
    lambda_cyc: f64,
    #[arg(long, default_value_t = 0.4)]
    momentum: f64,
    #[arg(long, default_value_t = dtp_core::pipeline::DEFAULT_SEED)]
    seed: u64,
    /// Write iter_{N}.png every N iterations; 0 disables snapshots.
    #[arg(long = "snapshot-every", default_value_t = 0)]
    snapshot_every: usize,
    /// Comma list of no-wf, no-wi, no-fma, no-cyc, no-gen.
    #[arg(long, default_value = "none")]
    ablate: String,
    /// Print SSIM(output, content) after the run.
    #[arg(long)]
    metrics: bool,
    /// Also write matched_points.csv (u,argmax_v,similarity) for the final networks.
    #[arg(long)]
    dump_matches: bool,
}

#[derive(Debug, Args)]
struct SsimArgs {
    a: PathBuf,
    b: PathBuf,
    /// Resize both images to size × size first.
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    path: PathBuf,
    /// Exporter manifest whose probe statistics should be verified.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFinite { .. } | Error::NonFiniteLoss { .. } => EXIT_NON_FINITE,
            ref e if e.is_io() => EXIT_IO,
            _ => EXIT_USAGE,
        };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

fn lambda_w_from_flag(v: f64) -> f64 {
    if (v - 1.0 / 9.0).abs() < 5e-7 {
        1.0 / 9.0
    } else {
        v
    }
}

fn config_from(args: &RunArgs) -> Result<DtpConfig, Failure> {
    let cfg = DtpConfig {
        size: args.size,
        iters: args.iters,
        lr: args.lr,
        tau: args.tau,
        lambda_w: lambda_w_from_flag(args.lambda_w),
        momentum: args.momentum,
        lambda_c: args.lambda_c,
        lambda_cyc: args.lambda_cyc,
        seed: args.seed,
        snapshot_every: args.snapshot_every,
        ablations: Ablations::parse(&args.ablate)?,
        weights: WeightsSource::parse(&args.weights),
        ..DtpConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let cfg = config_from(&args)?;
    let out = dtp_core::run_to_dir(&args.content, &args.style, &args.out, &cfg)?;
    println!("wrote {}", args.out.join("final.png").display());
    if let Some(last) = out.reports.last() {
        println!(
            "iteration {}: l_cont={:.6} l_style={:.6} l_cyc={:.6} l_total={:.6}",
            last.iteration, last.l_cont, last.l_style, last.l_cyc, last.l_total
        );
    }
    if args.metrics {
        let content = resize_bilinear(&load_png(&args.content)?, cfg.size, cfg.size)?;
        println!("SSIM: {:.4}", image_io::ssim(&out.image, &content)?);
    }
    if args.dump_matches {
        let path = args.out.join("matched_points.csv");
        std::fs::write(&path, dtp_core::correspondence::matched_points_csv(&out.matches))
            .map_err(|e| Failure { code: EXIT_IO, message: format!("writing {}: {e}", path.display()) })?;
    }
    Ok(())
}

fn cmd_ssim(args: SsimArgs) -> Result<(), Failure> {
    let mut a = load_png(&args.a)?;
    let mut b = load_png(&args.b)?;
    if let Some(size) = args.size {
        if size == 0 {
            return Err(usage("--size must be positive"));
        }
        a = resize_bilinear(&a, size, size)?;
        b = resize_bilinear(&b, size, size)?;
    } else if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(usage(format!(
            "image sizes differ ({}×{} vs {}×{}); pass --size to resize both",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    println!("SSIM: {:.4}", image_io::ssim(&a, &b)?);
    Ok(())
}

fn describe(name: &str, t: &StoredTensor) -> String {
    let dims: Vec<String> = t.dims.iter().map(usize::to_string).collect();
    format!("{name}\t[{}]\t{}", dims.join(", "), t.dtype().name())
}

fn cmd_inspect(args: InspectArgs) -> Result<(), Failure> {
    let bytes = std::fs::read(&args.path)
        .map_err(|e| Failure { code: EXIT_IO, message: format!("reading {}: {e}", args.path.display()) })?;
    let store = WeightStore::from_bytes(&bytes)?;
    for (name, t) in store.iter() {
        println!("{}", describe(name, t));
    }
    let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    println!("sha256 {digest}");
    if let Some(manifest_path) = args.manifest {
        return check_probe(&store, &manifest_path);
    }
    Ok(())
}

fn check_probe(store: &WeightStore, manifest_path: &Path) -> Result<(), Failure> {
    let (manifest, base) = ExportManifest::load(manifest_path)?;
    let encoder = Encoder::<f32>::from_store(store)?;
    let check = manifest.check(&encoder, &base)?;
    println!(
        "probe {}: mean {:.6e} std {:.6e} checksum {:.6e} (max relative deviation {:.3e})",
        manifest.probe.tap, check.actual.mean, check.actual.std, check.actual.checksum, check.max_rel_diff
    );
    if check.passed() {
        println!("probe OK");
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_PROBE_MISMATCH,
            message: format!(
                "probe mismatch: expected mean {} std {} checksum {}",
                check.expected.mean, check.expected.std, check.expected.checksum
            ),
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    dtp_core::scalar::init_kernel_threads_from_env();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Ssim(args) => cmd_ssim(args),
        Command::InspectWeights(args) => cmd_inspect(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("dtp: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
