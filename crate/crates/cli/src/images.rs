//! PNG output: frames, slices, peak-time images and composites.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use tfield::metrics::Image;
use tfield::render::FrameSequence;
use tfield::TransientVideo;

use crate::error::{CliError, CliResult};

/// Screen-blend weight of the transient frame over the base image.
pub const COMPOSITE_WEIGHT: f64 = 0.7;
/// Brightness of the odd isochrone bands.
pub const BAND_DIM: f64 = 0.6;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn frame_name(n: usize) -> String {
    format!("frame_{n:06}.png")
}

fn save_err(path: &Path, e: image::ImageError) -> CliError {
    CliError::Io(format!("cannot write {}: {e}", path.display()))
}

/// Saves `data` (`height x width x channels`, values in [0, 1]) as gray or RGB.
pub fn save_image(path: &Path, width: usize, height: usize, channels: usize, data: &[f64]) -> CliResult<()> {
    let (w, h) = (width as u32, height as u32);
    match channels {
        1 => {
            let img: GrayImage = ImageBuffer::from_fn(w, h, |x, y| Luma([to_u8(data[y as usize * width + x as usize])]));
            img.save(path).map_err(|e| save_err(path, e))
        }
        3 => {
            let img: RgbImage = ImageBuffer::from_fn(w, h, |x, y| {
                let i = 3 * (y as usize * width + x as usize);
                Rgb([to_u8(data[i]), to_u8(data[i + 1]), to_u8(data[i + 2])])
            });
            img.save(path).map_err(|e| save_err(path, e))
        }
        c => Err(CliError::Usage(format!("cannot write an image with {c} channels"))),
    }
}

/// Bin `n` of every pixel, channels interleaved.
pub fn video_slice(video: &TransientVideo, n: usize) -> Vec<f64> {
    let nb = video.n_bins();
    let mut out = Vec::with_capacity(video.n_pixels() * video.channels());
    for px in video.pixels() {
        for c in 0..video.channels() {
            out.push(px[c * nb + n]);
        }
    }
    out
}

fn scaled(values: &[f64], scale: f64) -> Vec<f64> {
    if scale > 0.0 {
        values.iter().map(|v| v / scale).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// One frame per time bin, all scaled by the global maximum.
pub fn frames_from_video(video: &TransientVideo) -> Vec<Vec<f64>> {
    let m = video.max_value();
    (0..video.n_bins()).map(|n| scaled(&video_slice(video, n), m)).collect()
}

pub fn frames_from_sequence(seq: &FrameSequence) -> Vec<Vec<f64>> {
    let m = seq.max_value();
    seq.frames.iter().map(|f| scaled(f, m)).collect()
}

/// Screen blend `1 - (1 - base)(1 - w * frame)`.
pub fn screen_blend(base: &[f64], frame: &[f64], weight: f64) -> Vec<f64> {
    base.iter()
        .zip(frame)
        .map(|(b, f)| 1.0 - (1.0 - b.clamp(0.0, 1.0)) * (1.0 - weight * f.clamp(0.0, 1.0)))
        .collect()
}

pub fn write_frames(dir: &Path, width: usize, height: usize, channels: usize, frames: &[Vec<f64>], base: Option<&Image>) -> CliResult<()> {
    for (n, f) in frames.iter().enumerate() {
        let data = match base {
            Some(b) => screen_blend(&b.data, f, COMPOSITE_WEIGHT),
            None => f.clone(),
        };
        save_image(&dir.join(frame_name(n)), width, height, channels, &data)?;
    }
    Ok(())
}

/// HSV (all components in [0, 1]) to RGB.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Per-pixel peak bin (channels summed) and peak magnitude.
pub fn peak_bins(video: &TransientVideo) -> (Vec<usize>, Vec<f64>) {
    let nb = video.n_bins();
    let mut bins = Vec::with_capacity(video.n_pixels());
    let mut mags = Vec::with_capacity(video.n_pixels());
    let mut sum = vec![0.0; nb];
    for px in video.pixels() {
        sum.iter_mut().for_each(|s| *s = 0.0);
        for ch in px.chunks(nb) {
            for (s, v) in sum.iter_mut().zip(ch) {
                *s += v;
            }
        }
        let (b, m) = sum
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bm), (i, v)| if *v > bm { (i, *v) } else { (bi, bm) });
        bins.push(b);
        mags.push(m.max(0.0));
    }
    (bins, mags)
}

/// RGB peak-time image: hue from the peak bin, value from the peak magnitude,
/// dimmed on alternate bands of `period` bins.
pub fn peak_time_image(video: &TransientVideo, period: usize) -> CliResult<Vec<f64>> {
    if period == 0 {
        return Err(CliError::Usage("isochrone period must be positive".into()));
    }
    let (bins, mags) = peak_bins(video);
    let top = mags.iter().copied().fold(0.0, f64::max);
    let nb = video.n_bins() as f64;
    let mut out = Vec::with_capacity(3 * bins.len());
    for (b, m) in bins.iter().zip(&mags) {
        let mut v = if top > 0.0 { m / top } else { 0.0 };
        if (b / period) % 2 == 1 {
            v *= BAND_DIM;
        }
        out.extend(hsv_to_rgb(*b as f64 / nb, 1.0, v));
    }
    Ok(out)
}
