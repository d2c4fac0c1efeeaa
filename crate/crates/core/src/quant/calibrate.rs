use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward_traced, ModelConfig, WeightStore, CONCAT_SITE, INPUT_SITE};
use crate::pillars::PseudoImage;
use crate::tensor::Tensor;

/// Lower bound applied to every recorded range.
pub const MAX_ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum CalibMode {
    /// Largest |activation| seen at the site.
    #[default]
    MaxAbs,
    /// Per-frame percentile of |activation| (e.g. 99.9), maximized over frames.
    Percentile(f64),
}

/// Activation ranges per site of the offloaded subgraph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibStats {
    pub max_abs: BTreeMap<String, f64>,
    pub n_frames: usize,
    pub mode: CalibMode,
    /// Hex fingerprint of the config the statistics were collected under.
    pub fingerprint: String,
}

impl CalibStats {
    pub fn site(&self, name: &str) -> Result<f64> {
        self.max_abs
            .get(name)
            .copied()
            .ok_or_else(|| Error::Format(format!("calibration has no site `{name}`")))
    }

    pub fn check_config(&self, config: &ModelConfig) -> Result<()> {
        let want = hex(&config.fingerprint());
        if self.fingerprint != want {
            return Err(Error::Fingerprint(format!(
                "calibration was collected for config {}, current config is {want}",
                self.fingerprint
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn site_range(t: &Tensor, mode: CalibMode) -> f64 {
    match mode {
        CalibMode::MaxAbs => t.max_abs() as f64,
        CalibMode::Percentile(p) => {
            let mut v: Vec<f32> = t.data().iter().map(|x| x.abs()).collect();
            if v.is_empty() {
                return 0.0;
            }
            let k = (((p / 100.0) * (v.len() - 1) as f64).round() as usize).min(v.len() - 1);
            *v.select_nth_unstable_by(k, f32::total_cmp).1 as f64
        }
    }
}

pub fn calibrate(store: &WeightStore, config: &ModelConfig, frames: &[PseudoImage]) -> Result<CalibStats> {
    calibrate_with(store, config, frames, CalibMode::MaxAbs)
}

/// Runs the float subgraph over `frames`, keeping a running maximum of each
/// site's range.
pub fn calibrate_with(
    store: &WeightStore,
    config: &ModelConfig,
    frames: &[PseudoImage],
    mode: CalibMode,
) -> Result<CalibStats> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("calibration set is empty".into()));
    }
    if let CalibMode::Percentile(p) = mode {
        if !(p > 0.0 && p <= 100.0) {
            return Err(Error::InvalidArgument(format!("percentile {p} outside (0, 100]")));
        }
    }
    let mut max_abs: BTreeMap<String, f64> = BTreeMap::new();
    max_abs.insert(INPUT_SITE.to_string(), 0.0);
    max_abs.insert(CONCAT_SITE.to_string(), 0.0);
    for layer in config.layers() {
        max_abs.insert(layer.name, 0.0);
    }
    for frame in frames {
        forward_traced(frame, store, config, &mut |site, t| {
            let r = site_range(t, mode);
            if let Some(m) = max_abs.get_mut(site) {
                *m = m.max(r);
            }
        })?;
    }
    max_abs.values_mut().for_each(|v| *v = v.max(MAX_ABS_FLOOR));
    Ok(CalibStats {
        max_abs,
        n_frames: frames.len(),
        mode,
        fingerprint: hex(&config.fingerprint()),
    })
}
