//! Golden probe record written beside an exported `.dtpw` file.
//!
//! ```json
//! {
//!   "source": "torchvision vgg19 IMAGENET1K_V1",
//!   "tensors": { "features.0.weight": "conv1_1.weight", ... },
//!   "probe": { "image": "probe.png", "tap": "relu3_4",
//!              "mean": 0.0, "std": 0.0, "checksum": 0.0 }
//! }
//! ```
//!
//! `checksum` is the sum of squared tap values; `std` is the population
//! standard deviation. The image path is relative to the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Encoder;
use crate::error::{Error, Result};
use crate::image_io;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const PROBE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub source: String,
    #[serde(default)]
    pub tensors: BTreeMap<String, String>,
    pub probe: ProbeRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub image: String,
    #[serde(default = "default_tap")]
    pub tap: String,
    #[serde(flatten)]
    pub stats: ProbeStats,
}

fn default_tap() -> String {
    super::CORRELATION_TAP.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeStats {
    pub mean: f64,
    pub std: f64,
    pub checksum: f64,
}

impl ProbeStats {
    pub fn of<T: Scalar>(t: &Tensor<T>) -> Self {
        let n = t.len().max(1) as f64;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for x in t.data() {
            let x = x.as_f64();
            sum += x;
            sq += x * x;
        }
        let mean = sum / n;
        let var = t.data().iter().map(|x| (x.as_f64() - mean).powi(2)).sum::<f64>() / n;
        ProbeStats { mean, std: var.sqrt(), checksum: sq }
    }

    /// Largest relative deviation over the three statistics.
    pub fn max_rel_diff(&self, other: &ProbeStats) -> f64 {
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
        rel(self.mean, other.mean).max(rel(self.std, other.std)).max(rel(self.checksum, other.checksum))
    }
}

/// Result of comparing engine statistics with the recorded ones.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeCheck {
    pub expected: ProbeStats,
    pub actual: ProbeStats,
    pub max_rel_diff: f64,
}

impl ProbeCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_diff <= PROBE_TOLERANCE
    }
}

impl ExportManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let manifest: ExportManifest =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, base))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Encodes the probe image and compares the tap statistics.
    pub fn check<T: Scalar>(&self, encoder: &Encoder<T>, base_dir: &Path) -> Result<ProbeCheck> {
        let image = image_io::load_png(base_dir.join(&self.probe.image))?;
        let input = image_io::normalize::<T>(&image);
        let taps = encoder.encode_values(&input, &[self.probe.tap.as_str()])?;
        let actual = ProbeStats::of(&taps[self.probe.tap.as_str()]);
        let expected = self.probe.stats;
        Ok(ProbeCheck { expected, actual, max_rel_diff: expected.max_rel_diff(&actual) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_known_tensor() {
        let t = Tensor::<f64>::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = ProbeStats::of(&t);
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.checksum, 30.0);
        assert!((s.std - 1.25f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let m = ExportManifest {
            source: "x".into(),
            tensors: [("features.0.weight".to_string(), "conv1_1.weight".to_string())].into(),
            probe: ProbeRecord {
                image: "probe.png".into(),
                tap: "relu3_4".into(),
                stats: ProbeStats { mean: 0.5, std: 0.25, checksum: 12.0 },
            },
        };
        let back: ExportManifest = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }
}
