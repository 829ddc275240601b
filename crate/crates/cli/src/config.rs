//! Run configuration files and checkpoint state.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tfield::field::{softplus_inv, GridSpec};
use tfield::optim::TrainConfig;
use tfield::sim::Manifest;
use tfield::{CameraModel, RenderConfig, TransientFieldGrid, SPEED_OF_LIGHT};

use crate::error::{read_text, CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub resolution: [usize; 3],
    /// Bounds; default is the scene bounds padded by `margin` on every side.
    pub aabb_min: Option<[f64; 3]>,
    pub aabb_max: Option<[f64; 3]>,
    pub margin: f64,
    pub density_scale: f64,
    pub sh_degree: Option<u32>,
    /// Initial density in 1/m.
    pub init_density: f64,
    /// Initial (compressed) transient value.
    pub init_transient: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            resolution: [64; 3],
            aabb_min: None,
            aabb_max: None,
            margin: 0.01,
            density_scale: 100.0,
            sh_degree: None,
            init_density: 1.0,
            init_transient: 0.05,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub render: RenderConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = read_text(p, "config file")?;
                toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
            }
        }
    }
}

/// Everything besides the parameters that a checkpoint directory records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointState {
    pub iter: usize,
    pub train: TrainConfig,
    pub render: RenderConfig,
    /// Multiplier from raw counts to training units.
    pub normalization: f64,
}

pub const GRID_FILE: &str = "grid.tfg";
pub const ADAM_FILE: &str = "adam.adm";
pub const STATE_FILE: &str = "state.json";
pub const LOSS_FILE: &str = "loss.csv";

pub fn checkpoint_path(dir: &Path, file: &str) -> PathBuf {
    dir.join(file)
}

/// Builds the initial grid for a dataset.
///
/// The grid time origin sits at the video origin minus the mean camera
/// distance to the box center, so canonical bins line up with the videos
/// at the typical viewing distance. Without the delay model the grid bins
/// are the video bins.
pub fn initial_grid(
    cfg: &GridConfig,
    manifest: &Manifest,
    cameras: &[&CameraModel],
    n_bins: usize,
    bin_width_s: f64,
    video_t0: f64,
    channels: usize,
    delay: bool,
) -> CliResult<TransientFieldGrid> {
    let (lo, hi) = match (cfg.aabb_min, cfg.aabb_max) {
        (Some(a), Some(b)) => (a, b),
        (None, None) => {
            let (a, b) = manifest
                .scene
                .bounds()
                .ok_or_else(|| CliError::Usage("scene has no surfaces to bound".into()))?;
            (a.add_scalar(-cfg.margin).into(), b.add_scalar(cfg.margin).into())
        }
        _ => return Err(CliError::Usage("set both grid.aabb_min and grid.aabb_max, or neither".into())),
    };
    let center: [f64; 3] = std::array::from_fn(|i| 0.5 * (lo[i] + hi[i]));
    let dist = |c: &CameraModel| {
        let e = c.center();
        (0..3).map(|i| (e[i] - center[i]).powi(2)).sum::<f64>().sqrt()
    };
    let mean_dist = if cameras.is_empty() || !delay {
        0.0
    } else {
        cameras.iter().map(|c| dist(c)).sum::<f64>() / cameras.len() as f64
    };
    let spec = GridSpec {
        resolution: cfg.resolution,
        aabb_min: lo,
        aabb_max: hi,
        n_bins,
        channels,
        bin_width_s,
        t0_offset_bins: video_t0 - mean_dist / (SPEED_OF_LIGHT * bin_width_s),
        density_scale: cfg.density_scale,
        sh_degree: cfg.sh_degree,
    };
    if !(cfg.init_density > 0.0 && cfg.init_transient > 0.0) {
        return Err(CliError::Usage("grid.init_density and grid.init_transient must be positive".into()));
    }
    let d_raw = softplus_inv(cfg.init_density / cfg.density_scale);
    let t_raw = softplus_inv(cfg.init_transient);
    Ok(TransientFieldGrid::constant(spec, d_raw, t_raw)?)
}
