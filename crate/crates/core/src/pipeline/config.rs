use std::fmt;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::losses::{LayerSet, LossWeights};

pub const DEFAULT_SEED: u64 = 1006;

/// Single-path switches that remove one component of the method.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Ablations {
    /// Decoder input becomes seeded Gaussian noise.
    pub no_warped_feature: bool,
    /// Output is the decoder alone (`λ_w = 1`).
    pub no_warped_image: bool,
    /// Correlation uses the fresh content feature only.
    pub no_fma: bool,
    /// `λ_cyc = 0`.
    pub no_cycle: bool,
    /// Output is the warped image alone (`λ_w = 0`).
    pub no_generator: bool,
}

/// (canonical name, aliases) in canonical order.
const ABLATION_NAMES: [(&str, &[&str]); 5] = [
    ("no-wf", &["no-warped-feature", "no_warped_feature"]),
    ("no-wi", &["no-warped-image", "no_warped_image"]),
    ("no-fma", &["no_fma"]),
    ("no-cyc", &["no-cycle", "no_cycle"]),
    ("no-gen", &["no-generator", "no_generator"]),
];

impl Ablations {
    pub const ALL_SINGLE: [(&'static str, Ablations); 5] = [
        ("no-wf", Ablations { no_warped_feature: true, ..Self::NONE }),
        ("no-wi", Ablations { no_warped_image: true, ..Self::NONE }),
        ("no-fma", Ablations { no_fma: true, ..Self::NONE }),
        ("no-cyc", Ablations { no_cycle: true, ..Self::NONE }),
        ("no-gen", Ablations { no_generator: true, ..Self::NONE }),
    ];

    pub const NONE: Ablations = Ablations {
        no_warped_feature: false,
        no_warped_image: false,
        no_fma: false,
        no_cycle: false,
        no_generator: false,
    };

    fn flag_mut(&mut self, index: usize) -> &mut bool {
        match index {
            0 => &mut self.no_warped_feature,
            1 => &mut self.no_warped_image,
            2 => &mut self.no_fma,
            3 => &mut self.no_cycle,
            _ => &mut self.no_generator,
        }
    }

    fn flags(&self) -> [bool; 5] {
        [self.no_warped_feature, self.no_warped_image, self.no_fma, self.no_cycle, self.no_generator]
    }

    /// Parses a comma list such as `no-fma,no-cyc`; `none` or an empty
    /// string selects nothing.
    pub fn parse(list: &str) -> Result<Self> {
        let mut out = Ablations::NONE;
        for raw in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if raw == "none" {
                continue;
            }
            let index = ABLATION_NAMES
                .iter()
                .position(|(name, aliases)| *name == raw || aliases.contains(&raw))
                .ok_or_else(|| {
                    let known: Vec<&str> = ABLATION_NAMES.iter().map(|(n, _)| *n).collect();
                    Error::Config(format!("unknown ablation {raw:?}, expected one of {}", known.join(", ")))
                })?;
            *out.flag_mut(index) = true;
        }
        if out.no_generator && out.no_warped_image {
            return Err(Error::Config("no-gen and no-wi together leave no output path".into()));
        }
        Ok(out)
    }

    pub fn is_none(&self) -> bool {
        self.flags().iter().all(|f| !f)
    }
}

impl fmt::Display for Ablations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> =
            ABLATION_NAMES.iter().zip(self.flags()).filter(|(_, on)| *on).map(|((n, _), _)| *n).collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightsSource {
    Random,
    File(PathBuf),
}

impl WeightsSource {
    pub fn parse(s: &str) -> Self {
        if s == "random" {
            WeightsSource::Random
        } else {
            WeightsSource::File(PathBuf::from(s))
        }
    }
}

impl fmt::Display for WeightsSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightsSource::Random => f.write_str("random"),
            WeightsSource::File(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtpConfig {
    /// Working resolution; both images are resized to `size × size`.
    pub size: usize,
    pub iters: usize,
    pub lr: f64,
    pub tau: f64,
    pub lambda_w: f64,
    pub momentum: f64,
    pub lambda_c: f64,
    pub lambda_cyc: f64,
    pub seed: u64,
    /// Write `iter_{N}.png` every this many iterations; 0 disables.
    pub snapshot_every: usize,
    pub ablations: Ablations,
    pub weights: WeightsSource,
    pub layers: LayerSet,
}

impl Default for DtpConfig {
    fn default() -> Self {
        DtpConfig {
            size: 256,
            iters: 1000,
            lr: 1e-4,
            tau: 0.07,
            lambda_w: 1.0 / 9.0,
            momentum: 0.4,
            lambda_c: 0.2,
            lambda_cyc: 1.0,
            seed: DEFAULT_SEED,
            snapshot_every: 0,
            ablations: Ablations::NONE,
            weights: WeightsSource::Random,
            layers: LayerSet::default(),
        }
    }
}

impl DtpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 || self.size % 16 != 0 {
            return Err(Error::Config(format!("size {} must be a positive multiple of 16", self.size)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr = {} must be positive", self.lr)));
        }
        for (name, v) in [("lambda_w", self.lambda_w), ("momentum", self.momentum)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        self.loss_weights().validate()?;
        self.layers.validate()?;
        Ok(())
    }

    /// Loss weights after ablations.
    pub fn loss_weights(&self) -> LossWeights {
        let lambda_cyc = if self.ablations.no_cycle { 0.0 } else { self.lambda_cyc };
        LossWeights { lambda_c: self.lambda_c, lambda_cyc, tau: self.tau }
    }

    /// Residual blend weight after ablations.
    pub fn effective_lambda_w(&self) -> f64 {
        if self.ablations.no_generator {
            0.0
        } else if self.ablations.no_warped_image {
            1.0
        } else {
            self.lambda_w
        }
    }

    /// One `# key=value ...` line echoing every setting.
    pub fn echo(&self) -> String {
        format!(
            "# size={} iters={} lr={} tau={} lambda_w={} momentum={} lambda_c={} lambda_cyc={} seed={} snapshot_every={} weights={} ablate={}",
            self.size,
            self.iters,
            short(self.lr),
            short(self.tau),
            short(self.lambda_w),
            short(self.momentum),
            short(self.lambda_c),
            short(self.lambda_cyc),
            self.seed,
            self.snapshot_every,
            self.weights,
            self.ablations,
        )
    }
}

/// Six significant digits, shortest form.
fn short(x: f64) -> String {
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    format!("{rounded}")
}
