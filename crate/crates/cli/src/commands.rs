//! Subcommand implementations.

use std::path::Path;

use serde::Serialize;
use tfield::apps::{self, ReferenceSurface, WarpMode, WarpSign, WarpSpec};
use tfield::io;
use tfield::metrics::{evaluate_view, integrate_and_tonemap, EvalReport};
use tfield::optim::{compress, decompress, AdamState, LossRecord, TrainView, Trainer};
use tfield::render::{render_video_dynamic, render_video_static};
use tfield::sim::{self, CameraSet, DatasetConfig, Split, TransportConfig};
use tfield::{RenderConfig, TransientFieldGrid, TransientVideo};

use crate::args::{EvalArgs, RenderArgs, SeparateArgs, SimulateArgs, SplitArg, TrainArgs, WarpArgs};
use crate::config::{
    checkpoint_path, initial_grid, CheckpointState, RunConfig, ADAM_FILE, GRID_FILE, LOSS_FILE, STATE_FILE,
};
use crate::error::{create_dir, read_text, require_dir, require_file, CliError, CliResult};
use crate::images;

/// Options shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct Globals {
    pub seed: Option<u64>,
    pub config: Option<std::path::PathBuf>,
}

pub fn simulate(g: &Globals, a: &SimulateArgs) -> CliResult<()> {
    let scene_text = read_text(&a.scene, "scene file")?;
    let cams_text = read_text(&a.cameras, "camera file")?;
    let spad_text = match &a.spad {
        Some(p) => read_text(p, "SPAD file")?,
        None => scene_text.clone(),
    };
    let scene = sim::AnalyticScene::parse(&scene_text)?;
    let cameras = CameraSet::parse(&cams_text)?;
    let (spad, origin) = sim::dataset::parse_spad(&spad_text)?;
    let cfg = DatasetConfig {
        seed: g.seed.unwrap_or(0),
        transport: TransportConfig {
            indirect_strata: a.indirect_strata,
            indirect: !a.direct_only,
        },
        origin,
        noiseless: a.noiseless,
    };
    let ds = sim::generate_dataset(&scene, &cameras, &spad, &cfg)?;
    io::write_dataset(&a.out, &ds)?;
    println!(
        "wrote {} views to {} (t0 {} bins, peak detection probability {:.4}, normalization {:.6e})",
        ds.views.len(),
        a.out.display(),
        ds.manifest.spad.binning.t0_offset_bins,
        ds.manifest.max_detection_probability,
        ds.manifest.normalization
    );
    Ok(())
}

/// Training views of a dataset in normalized units.
pub fn train_views(ds: &sim::Dataset) -> Vec<TrainView> {
    let s = ds.manifest.normalization;
    ds.views
        .iter()
        .filter(|v| v.split == Split::Train)
        .map(|v| TrainView {
            camera: v.camera.clone(),
            video: v.video.map_values(|x| x * s),
        })
        .collect()
}

fn save_checkpoint(dir: &Path, t: &Trainer<'_>, normalization: f64) -> CliResult<()> {
    io::write_grid(&checkpoint_path(dir, GRID_FILE), &t.grid)?;
    io::write_adam(&checkpoint_path(dir, ADAM_FILE), &t.adam)?;
    io::write_loss_log(&checkpoint_path(dir, LOSS_FILE), &t.log)?;
    let state = CheckpointState {
        iter: t.iter,
        train: t.cfg.clone(),
        render: t.render.clone(),
        normalization,
    };
    io::write_json(&checkpoint_path(dir, STATE_FILE), &state)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> CliResult<(TransientFieldGrid, CheckpointState)> {
    require_dir(dir, "checkpoint directory")?;
    let state_path = checkpoint_path(dir, STATE_FILE);
    require_file(&state_path, "checkpoint state")?;
    let state: CheckpointState = io::read_json(&state_path)?;
    let grid = io::read_grid(&checkpoint_path(dir, GRID_FILE))?;
    Ok((grid, state))
}

pub fn train(g: &Globals, a: &TrainArgs) -> CliResult<()> {
    require_dir(&a.data, "dataset directory")?;
    let ds = io::read_dataset(&a.data)?;
    let views = train_views(&ds);
    let first = views
        .first()
        .ok_or_else(|| CliError::Usage("dataset has no training views".into()))?;
    let (n_bins, bin_w, t0, ch) = (
        first.video.n_bins(),
        first.video.bin_width_s(),
        first.video.t0_offset_bins(),
        first.video.channels(),
    );
    let mut trainer = if a.resume {
        let (grid, state) = load_checkpoint(&a.out)?;
        let adam: AdamState = io::read_adam(&checkpoint_path(&a.out, ADAM_FILE))?;
        let log: Vec<LossRecord> = io::read_loss_log(&checkpoint_path(&a.out, LOSS_FILE))?;
        let mut train = state.train;
        if let Some(n) = a.iters {
            train.total_iters = n;
        }
        Trainer::resume(&views, grid, adam, state.iter, log, train, state.render)?
    } else {
        let mut cfg = RunConfig::load(g.config.as_deref())?;
        if let Some(s) = g.seed {
            cfg.train.seed = s;
            cfg.render.seed = s;
        }
        if let Some(n) = a.iters {
            cfg.train.total_iters = n;
        }
        cfg.render.t0_offset_bins = t0;
        cfg.render.model_propagation_delay = !a.no_propagation_delay;
        let cams: Vec<_> = views.iter().map(|v| &v.camera).collect();
        let grid = initial_grid(&cfg.grid, &ds.manifest, &cams, n_bins, bin_w, t0, ch, !a.no_propagation_delay)?;
        create_dir(&a.out)?;
        Trainer::new(&views, grid, cfg.train, cfg.render)?
    };
    let stop = a.stop_after.unwrap_or(usize::MAX).min(trainer.cfg.total_iters);
    let norm = ds.manifest.normalization;
    while trainer.iter < stop {
        if let Some(r) = trainer.step()? {
            log::info!("iter {} loss {:.6e} lr {:.3e}", r.iter, r.loss, r.lr);
        }
        if trainer.cfg.is_milestone(trainer.iter) || trainer.iter == stop {
            save_checkpoint(&a.out, &trainer, norm)?;
        }
    }
    if let (Some(f), Some(l)) = (trainer.log.first(), trainer.log.last()) {
        println!(
            "trained {} / {} iterations: loss {:.6e} -> {:.6e}",
            trainer.iter, trainer.cfg.total_iters, f.loss, l.loss
        );
    }
    Ok(())
}

/// Deterministic inference settings derived from the training render config.
pub fn inference_render(state: &CheckpointState, seed: Option<u64>) -> RenderConfig {
    let mut r = state.render.clone();
    r.jitter = false;
    if let Some(s) = seed {
        r.seed = s;
    }
    r
}

/// Undoes compression and normalization: rendered values back to counts.
fn to_counts(v: &TransientVideo, state: &CheckpointState) -> TransientVideo {
    let (gamma, s) = (state.train.gamma, state.normalization);
    v.map_values(|x| decompress(x, gamma) / s)
}

pub fn render(g: &Globals, a: &RenderArgs) -> CliResult<()> {
    let (grid, state) = load_checkpoint(&a.checkpoint)?;
    require_file(&a.camera, "camera file")?;
    let cams = io::read_cameras(&a.camera)?;
    let cfg = inference_render(&state, g.seed);
    create_dir(&a.out)?;
    if a.dynamic {
        let seq = render_video_dynamic(&grid, &cams, &cfg)?;
        let frames = images::frames_from_sequence(&seq);
        images::write_frames(&a.out, seq.width, seq.height, seq.channels, &frames, None)?;
        println!("wrote {} dynamic frames to {}", frames.len(), a.out.display());
        return Ok(());
    }
    if cams.len() != 1 {
        return Err(CliError::Usage(format!(
            "static rendering needs exactly one camera, file has {} (use --dynamic for trajectories)",
            cams.len()
        )));
    }
    let video = render_video_static(&grid, &cams[0], &cfg)?;
    let (w, h, c) = (video.width(), video.height(), video.channels());
    if a.raw {
        io::write_video(&a.out.join("video.trv"), &to_counts(&video, &state))?;
    }
    let m = video.max_value();
    let mut wrote_something = a.raw;
    if let Some(n) = a.slice {
        if n >= video.n_bins() {
            return Err(CliError::Usage(format!("slice {n} out of range (video has {} bins)", video.n_bins())));
        }
        let gray: Vec<f64> = video_gray_slice(&video, n).iter().map(|v| if m > 0.0 { v / m } else { 0.0 }).collect();
        images::save_image(&a.out.join(format!("slice_{n:06}.png")), w, h, 1, &gray)?;
        wrote_something = true;
    }
    if a.peak_time {
        let img = images::peak_time_image(&video, a.isochrone_period)?;
        images::save_image(&a.out.join("peak_time.png"), w, h, 3, &img)?;
        wrote_something = true;
    }
    if a.composite || !wrote_something {
        let frames = images::frames_from_video(&video);
        let base = a.composite.then(|| integrate_and_tonemap(&to_counts(&video, &state)));
        images::write_frames(&a.out, w, h, c, &frames, base.as_ref())?;
    }
    println!("rendered {}x{} x {} bins to {}", w, h, video.n_bins(), a.out.display());
    Ok(())
}

/// Bin `n` with channels averaged.
fn video_gray_slice(video: &TransientVideo, n: usize) -> Vec<f64> {
    let c = video.channels();
    images::video_slice(video, n)
        .chunks(c)
        .map(|p| p.iter().sum::<f64>() / c as f64)
        .collect()
}

pub fn warp(g: &Globals, a: &WarpArgs) -> CliResult<()> {
    let (grid, state) = load_checkpoint(&a.checkpoint)?;
    require_file(&a.camera, "camera file")?;
    let cams = io::read_cameras(&a.camera)?;
    let cam = match cams.as_slice() {
        [c] => c,
        _ => return Err(CliError::Usage("warp needs exactly one camera".into())),
    };
    for (flag, v) in [("--sphere", &a.sphere), ("--plane", &a.plane)] {
        if let Some(v) = v.as_ref().filter(|v| v.len() != 4) {
            return Err(CliError::Usage(format!("{flag} takes 4 comma-separated numbers, got {}", v.len())));
        }
    }
    let mode = match (&a.sphere, &a.plane) {
        (Some(s), _) => WarpMode::Reference(ReferenceSurface::Sphere {
            center: [s[0], s[1], s[2]],
            radius: s[3],
        }),
        (None, Some(p)) => WarpMode::Reference(ReferenceSurface::Plane {
            normal: [p[0], p[1], p[2]],
            offset: p[3],
        }),
        (None, None) => WarpMode::Depth,
    };
    let spec = WarpSpec {
        mode,
        sign: if a.add_delay { WarpSign::AddDelay } else { WarpSign::RemoveDelay },
    };
    let cfg = inference_render(&state, g.seed);
    let video = apps::warp_video(&grid, cam, &cfg, &spec)?;
    create_dir(&a.out)?;
    if a.raw {
        io::write_video(&a.out.join("video.trv"), &to_counts(&video, &state))?;
    }
    let frames = images::frames_from_video(&video);
    images::write_frames(&a.out, video.width(), video.height(), video.channels(), &frames, None)?;
    println!("wrote {} warped frames to {}", frames.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct SeparationSummary {
    pixels: usize,
    flagged: Vec<usize>,
    direct_mass: f64,
    global_mass: f64,
}

pub fn separate(_g: &Globals, a: &SeparateArgs) -> CliResult<()> {
    require_file(&a.video, "video file")?;
    let video = io::read_video(&a.video)?;
    let sep = apps::separate_direct_global(&video, a.fwhm_bins)?;
    create_dir(&a.out)?;
    io::write_video(&a.out.join("direct.trv"), &sep.direct)?;
    io::write_video(&a.out.join("global.trv"), &sep.global)?;
    for (name, v) in [("direct.png", &sep.direct), ("global.png", &sep.global)] {
        let img = integrate_and_tonemap(v);
        images::save_image(&a.out.join(name), img.width, img.height, img.channels, &img.data)?;
    }
    let summary = SeparationSummary {
        pixels: video.n_pixels(),
        flagged: sep.flagged.clone(),
        direct_mass: sep.direct.data().iter().sum(),
        global_mass: sep.global.data().iter().sum(),
    };
    io::write_json(&a.out.join("separation.json"), &summary)?;
    println!(
        "direct mass {:.6e}, global mass {:.6e}, {} flagged histograms",
        summary.direct_mass,
        summary.global_mass,
        summary.flagged.len()
    );
    Ok(())
}

/// Renders and scores every view of `split`.
pub fn evaluate(
    grid: &TransientFieldGrid,
    state: &CheckpointState,
    ds: &sim::Dataset,
    split: Split,
    undo_gamma: bool,
    seed: Option<u64>,
) -> CliResult<EvalReport> {
    let cfg = inference_render(state, seed);
    let gamma = state.train.gamma;
    let s = ds.manifest.normalization;
    let mut views = Vec::new();
    for v in ds.views.iter().filter(|v| v.split == split) {
        let pred = render_video_static(grid, &v.camera, &cfg)?;
        let (pred, gt) = if undo_gamma {
            (pred.map_values(|x| decompress(x, gamma)), v.video.map_values(|x| x * s))
        } else {
            (pred, v.video.map_values(|x| compress(x * s, gamma)))
        };
        views.push(evaluate_view(v.id, &pred, &gt)?);
    }
    if views.is_empty() {
        return Err(CliError::Usage(format!("dataset has no {split:?} views")));
    }
    Ok(EvalReport::from_views(views))
}

pub fn eval(g: &Globals, a: &EvalArgs) -> CliResult<()> {
    let (grid, state) = load_checkpoint(&a.checkpoint)?;
    require_dir(&a.data, "dataset directory")?;
    let ds = io::read_dataset(&a.data)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let report = evaluate(&grid, &state, &ds, split, a.undo_gamma, g.seed)?;
    create_dir(&a.out)?;
    io::write_atomic(&a.out.join("report.csv"), report.to_csv().as_bytes())?;
    io::write_json(&a.out.join("report.json"), &report)?;
    print!("{}", report.to_table());
    Ok(())
}
