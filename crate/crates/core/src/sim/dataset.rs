//! Multi-view dataset generation.

use nalgebra::{Matrix4, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kv::{parse_blocks, Block};
use super::scene::AnalyticScene;
use super::spad::{sample_counts, SpadModel, LOW_FLUX_LIMIT};
use super::transport::{direct_path_time, ideal_transient_with, TimeBinning, TransportConfig};
use crate::camera::{look_at, CameraModel, HemisphereGrid};
use crate::error::{Error, Result};
use crate::rng;
use crate::video::TransientVideo;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("split must be train or test, got `{s}`"))),
        }
    }
}

/// Cameras with their dataset split.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraSet {
    pub views: Vec<(CameraModel, Split)>,
}

impl CameraSet {
    /// Reads `[intrinsics]` (width, height, fov_deg) followed by any number of
    /// `[hemisphere]` or `[view]` blocks, each tagged with a split.
    pub fn parse(text: &str) -> Result<Self> {
        let blocks = parse_blocks(text)?;
        let intr = blocks
            .iter()
            .find(|b| b.name == "intrinsics")
            .ok_or_else(|| Error::Config("camera file needs an [intrinsics] block".into()))?;
        intr.expect_keys(&["width", "height", "fov_deg"])?;
        let (w, h): (u32, u32) = (intr.parse("width")?, intr.parse("height")?);
        let fov: f64 = intr.parse("fov_deg")?;
        let base = CameraModel::from_fov(w, h, fov, Matrix4::identity())?;
        let mut views = Vec::new();
        for b in &blocks {
            let split = || -> Result<Split> { b.parse_or("split", Split::Train) };
            match b.name.as_str() {
                "intrinsics" => {}
                "hemisphere" => {
                    b.expect_keys(&[
                        "split",
                        "azimuth_deg",
                        "elevation_deg",
                        "n_azimuth",
                        "n_elevation",
                        "radius",
                        "target",
                    ])?;
                    let grid = HemisphereGrid {
                        azimuth_deg: b.pair("azimuth_deg")?,
                        elevation_deg: b.pair("elevation_deg")?,
                        n_azimuth: b.parse("n_azimuth")?,
                        n_elevation: b.parse("n_elevation")?,
                        radius: b.parse("radius")?,
                        target: b.vec3("target")?.into(),
                    };
                    let s = split()?;
                    for pose in grid.poses()? {
                        views.push((base.with_pose(pose)?, s));
                    }
                }
                "view" => {
                    b.expect_keys(&["split", "eye", "target", "up"])?;
                    let up = if b.raw("up").is_some() { b.vec3("up")? } else { Vector3::y() };
                    let pose = look_at(b.vec3("eye")?, b.vec3("target")?, up)?;
                    views.push((base.with_pose(pose)?, split()?));
                }
                other => return Err(Error::Config(format!("line {}: unknown block [{other}]", b.line))),
            }
        }
        if views.is_empty() {
            return Err(Error::Config("camera file defines no views".into()));
        }
        Ok(Self { views })
    }
}

/// Time origin of the recorded window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TimeOrigin {
    Fixed(f64),
    /// Earliest direct arrival over all pixels, minus a margin in bins.
    Auto { margin_bins: f64 },
}

/// Detector block of a scene file together with its time-origin rule.
pub fn parse_spad(text: &str) -> Result<(SpadModel, TimeOrigin)> {
    let blocks = parse_blocks(text)?;
    let b = blocks
        .iter()
        .find(|b| b.name == "spad")
        .ok_or_else(|| Error::Config("scene file needs a [spad] block".into()))?;
    spad_from_block(b)
}

fn spad_from_block(b: &Block) -> Result<(SpadModel, TimeOrigin)> {
    b.expect_keys(&["pulses", "eta", "dark_counts", "n_bins", "bin_width_ps", "t0_offset_bins", "t0_margin_bins"])?;
    let origin = match b.raw("t0_offset_bins").map(|(v, _)| v) {
        None | Some("auto") => TimeOrigin::Auto {
            margin_bins: b.parse_or("t0_margin_bins", 8.0)?,
        },
        Some(_) => TimeOrigin::Fixed(b.parse("t0_offset_bins")?),
    };
    let spad = SpadModel {
        pulses: b.parse("pulses")?,
        eta: b.parse_or("eta", 1.0)?,
        dark_counts: b.parse_or("dark_counts", 0.0)?,
        binning: TimeBinning {
            n_bins: b.parse("n_bins")?,
            bin_width_s: b.parse::<f64>("bin_width_ps")? * 1e-12,
            t0_offset_bins: 0.0,
        },
    };
    spad.validate()?;
    Ok((spad, origin))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub seed: u64,
    pub transport: TransportConfig,
    pub origin: TimeOrigin,
    /// Store expected counts instead of Poisson draws.
    pub noiseless: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            transport: TransportConfig::default(),
            origin: TimeOrigin::Auto { margin_bins: 8.0 },
            noiseless: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestView {
    pub id: usize,
    pub split: Split,
    pub camera: String,
    pub video: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub scene: AnalyticScene,
    pub spad: SpadModel,
    pub config: DatasetConfig,
    /// Multiplier that maps raw counts to training units (99.9th percentile of training bins -> 1).
    pub normalization: f64,
    /// Largest per-pulse detection probability over all pixels.
    pub max_detection_probability: f64,
    pub views: Vec<ManifestView>,
}

impl Manifest {
    pub fn split_ids(&self, split: Split) -> Vec<usize> {
        self.views.iter().filter(|v| v.split == split).map(|v| v.id).collect()
    }
}

#[derive(Clone, Debug)]
pub struct DatasetView {
    pub id: usize,
    pub split: Split,
    pub camera: CameraModel,
    /// Raw photon counts.
    pub video: TransientVideo,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub views: Vec<DatasetView>,
    pub manifest: Manifest,
}

pub fn view_file_stem(id: usize) -> String {
    format!("view_{id:03}")
}

/// Nearest-rank percentile `q` in `[0, 1]` of `values`.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len()) - 1;
    let (_, v, _) = values.select_nth_unstable_by(rank, |a, b| a.total_cmp(b));
    *v
}

/// Scale mapping the 99.9th-percentile bin of `videos` to one.
pub fn normalization_scale<'a>(videos: impl IntoIterator<Item = &'a TransientVideo>) -> f64 {
    let mut all: Vec<f64> = videos.into_iter().flat_map(|v| v.data().iter().copied()).collect();
    let p = percentile(&mut all, 0.999);
    if p > 0.0 {
        1.0 / p
    } else {
        1.0
    }
}

fn auto_origin(scene: &AnalyticScene, cameras: &CameraSet, bin_width_s: f64, margin: f64) -> Result<f64> {
    let mut t_min = f64::INFINITY;
    for (cam, _) in &cameras.views {
        for row in 0..cam.height {
            for col in 0..cam.width {
                if let Some(t) = direct_path_time(scene, &cam.pixel_center_ray(col, row)?) {
                    t_min = t_min.min(t);
                }
            }
        }
    }
    if !t_min.is_finite() {
        return Err(Error::Config("no camera ray hits the scene; cannot place the time window".into()));
    }
    Ok((t_min / bin_width_s - margin).floor())
}

/// Simulates ideal transients and detector counts for every camera.
pub fn generate_dataset(
    scene: &AnalyticScene,
    cameras: &CameraSet,
    spad: &SpadModel,
    cfg: &DatasetConfig,
) -> Result<Dataset> {
    scene.validate()?;
    spad.validate()?;
    let mut spad = *spad;
    spad.binning.t0_offset_bins = match cfg.origin {
        TimeOrigin::Fixed(t0) => t0,
        TimeOrigin::Auto { margin_bins } => auto_origin(scene, cameras, spad.binning.bin_width_s, margin_bins)?,
    };
    let b = spad.binning;
    let mut views = Vec::with_capacity(cameras.views.len());
    let mut worst: f64 = 0.0;
    for (id, (cam, split)) in cameras.views.iter().enumerate() {
        cam.validate()?;
        let w = cam.width as usize;
        let rows: Vec<(Vec<f64>, f64)> = (0..cam.height as usize)
            .into_par_iter()
            .map(|row| -> Result<(Vec<f64>, f64)> {
                let mut out = Vec::with_capacity(w * b.n_bins);
                let mut p_max: f64 = 0.0;
                for col in 0..w {
                    let ray = cam.pixel_center_ray(col as u32, row as u32)?;
                    let lambda = ideal_transient_with(scene, &ray, &b, &cfg.transport)?;
                    p_max = p_max.max(spad.detection_probability(lambda.bins(), scene.ambient_rate));
                    let rates = spad.rates(lambda.bins(), scene.ambient_rate)?;
                    if cfg.noiseless {
                        out.extend_from_slice(&rates);
                    } else {
                        let seed = rng::derive_seed(&[cfg.seed, id as u64, (row * w + col) as u64]);
                        out.extend(sample_counts(&rates, seed));
                    }
                }
                Ok((out, p_max))
            })
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(w * cam.height as usize * b.n_bins);
        for (r, p) in rows {
            data.extend(r);
            worst = worst.max(p);
        }
        let video = TransientVideo::from_data(cam.height as usize, w, 1, b.n_bins, b.bin_width_s, b.t0_offset_bins, data)?;
        views.push(DatasetView {
            id,
            split: *split,
            camera: cam.clone(),
            video,
        });
    }
    if worst >= LOW_FLUX_LIMIT {
        return Err(Error::LowFlux { probability: worst });
    }
    let normalization = normalization_scale(views.iter().filter(|v| v.split == Split::Train).map(|v| &v.video));
    let manifest = Manifest {
        format_version: 1,
        scene: scene.clone(),
        spad,
        config: *cfg,
        normalization,
        max_detection_probability: worst,
        views: views
            .iter()
            .map(|v| ManifestView {
                id: v.id,
                split: v.split,
                camera: format!("{}.json", view_file_stem(v.id)),
                video: format!("{}.trv", view_file_stem(v.id)),
            })
            .collect(),
    };
    Ok(Dataset { views, manifest })
}
