//! Transient IoU, PSNR and SSIM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::TransientVideo;

/// Display gamma of tonemapped images.
pub const DISPLAY_GAMMA: f64 = 2.2;

/// Pixels whose ground-truth mass is below this fraction of the largest pixel mass
/// are left out of the per-video IoU.
pub const IOU_MASS_FLOOR: f64 = 1e-6;

/// Sum of elementwise minima over sum of maxima; one when both are all zero.
pub fn transient_iou(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("transient_iou", a.len(), b.len()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        if !(*x >= 0.0 && *y >= 0.0) {
            return Err(Error::InvalidData("IoU operands must be non-negative".into()));
        }
        num += x.min(*y);
        den += x.max(*y);
    }
    Ok(if den == 0.0 { 1.0 } else { num / den })
}

/// Mean per-pixel IoU over pixels carrying ground-truth signal.
pub fn video_transient_iou(pred: &TransientVideo, gt: &TransientVideo) -> Result<f64> {
    if pred.n_pixels() != gt.n_pixels() || pred.pixel_len() != gt.pixel_len() {
        return Err(Error::shape("video IoU", gt.data().len(), pred.data().len()));
    }
    let masses: Vec<f64> = gt.pixels().map(|p| p.iter().sum()).collect();
    let floor = IOU_MASS_FLOOR * masses.iter().copied().fold(0.0, f64::max);
    let (mut acc, mut n) = (0.0, 0usize);
    for ((p, g), m) in pred.pixels().zip(gt.pixels()).zip(&masses) {
        if *m > floor {
            acc += transient_iou(p, g)?;
            n += 1;
        }
    }
    Ok(if n == 0 { 1.0 } else { acc / n as f64 })
}

/// Row-major image with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape("image", height * width * channels, data.len()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn at(&self, row: usize, col: usize, c: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + c]
    }

    fn same_shape(&self, o: &Image) -> Result<()> {
        if (self.height, self.width, self.channels) != (o.height, o.width, o.channels) {
            return Err(Error::shape("image pair", self.data.len(), o.data.len()));
        }
        Ok(())
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

/// Time-averaged image of a video (no normalization).
pub fn integrate(v: &TransientVideo) -> Image {
    let nb = v.n_bins();
    let mut data = Vec::with_capacity(v.n_pixels() * v.channels());
    for px in v.pixels() {
        for c in 0..v.channels() {
            data.push(px[c * nb..(c + 1) * nb].iter().sum::<f64>() / nb as f64);
        }
    }
    Image {
        height: v.height(),
        width: v.width(),
        channels: v.channels(),
        data,
    }
}

/// Normalizes an image by its maximum and applies display gamma.
pub fn tonemap(img: &Image) -> Image {
    let m = img.max_value();
    let mut out = img.clone();
    if m > 0.0 {
        for v in &mut out.data {
            *v = (*v / m).powf(1.0 / DISPLAY_GAMMA);
        }
    }
    out
}

pub fn integrate_and_tonemap(v: &TransientVideo) -> Image {
    tonemap(&integrate(v))
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.data.len().max(1) as f64;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// PSNR for unit peak; `+inf` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { psnr_from_mse(m) })
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    10.0 * (1.0 / mse).log10()
}

const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window(size: usize) -> Vec<f64> {
    let half = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|x| x / s).collect()
}

/// Mean SSIM over all valid 11x11 Gaussian windows (smaller odd windows for
/// images under 11 pixels), averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let size = 11.min(a.height).min(a.width);
    let size = if size % 2 == 0 { size - 1 } else { size };
    if size == 0 {
        return Err(Error::InvalidInput("empty image".into()));
    }
    let g = gaussian_window(size);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let (mut acc, mut n) = (0.0, 0usize);
    for c in 0..a.channels {
        for r0 in 0..=a.height - size {
            for c0 in 0..=a.width - size {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..size {
                    for j in 0..size {
                        let w = g[i] * g[j];
                        let x = a.at(r0 + i, c0 + j, c);
                        let y = b.at(r0 + i, c0 + j, c);
                        ma += w * x;
                        mb += w * y;
                        saa += w * x * x;
                        sbb += w * y * y;
                        sab += w * x * y;
                    }
                }
                let va = saa - ma * ma;
                let vb = sbb - mb * mb;
                let cov = sab - ma * mb;
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                n += 1;
            }
        }
    }
    Ok(acc / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view_id: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub t_iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub transient_iou: f64,
    pub views: Vec<ViewMetrics>,
}

/// Metrics of one predicted video against ground truth (both in count space).
pub fn evaluate_view(view_id: usize, pred: &TransientVideo, gt: &TransientVideo) -> Result<ViewMetrics> {
    let a = integrate_and_tonemap(pred);
    let b = integrate_and_tonemap(gt);
    Ok(ViewMetrics {
        view_id,
        psnr_db: psnr(&a, &b)?,
        ssim: ssim(&a, &b)?.clamp(0.0, 1.0),
        t_iou: video_transient_iou(pred, gt)?,
    })
}

impl EvalReport {
    pub fn from_views(views: Vec<ViewMetrics>) -> Self {
        let n = views.len().max(1) as f64;
        Self {
            psnr_db: views.iter().map(|v| v.psnr_db).sum::<f64>() / n,
            ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
            transient_iou: views.iter().map(|v| v.t_iou).sum::<f64>() / n,
            views,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("view_id,psnr_db,ssim,t_iou\n");
        for v in &self.views {
            s.push_str(&format!("{},{},{},{}\n", v.view_id, fmt_db(v.psnr_db), v.ssim, v.t_iou));
        }
        s.push_str(&format!(
            "mean,{},{},{}\n",
            fmt_db(self.psnr_db),
            self.ssim,
            self.transient_iou
        ));
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:>6}  {:>9}  {:>7}  {:>7}\n", "view", "PSNR(dB)", "SSIM", "T-IoU");
        let row = |id: String, p: f64, q: f64, t: f64| format!("{id:>6}  {:>9}  {q:>7.4}  {t:>7.4}\n", fmt_db(p));
        for v in &self.views {
            s.push_str(&row(v.view_id.to_string(), v.psnr_db, v.ssim, v.t_iou));
        }
        s.push_str(&row("mean".into(), self.psnr_db, self.ssim, self.transient_iou));
        s
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Image {
        let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
        Image::new(h, w, 1, data).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(transient_iou(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), 0.6);
        assert_eq!(transient_iou(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(transient_iou(&[0.2, 0.7], &[0.2, 0.7]).unwrap(), 1.0);
        assert_eq!(transient_iou(&[0.0; 3], &[0.0; 3]).unwrap(), 1.0);
        assert!(transient_iou(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn tonemap_examples() {
        let v = TransientVideo::from_data(1, 2, 1, 2, 1e-12, 0.0, vec![1.0, 1.0, 4.0, 4.0]).unwrap();
        let t = integrate_and_tonemap(&v);
        assert_eq!(t.data[1], 1.0);
        assert!((t.data[0] - 0.25f64.powf(1.0 / 2.2)).abs() < 1e-15);
        let c = TransientVideo::from_data(2, 2, 1, 3, 1e-12, 0.0, vec![0.3; 12]).unwrap();
        assert!(integrate_and_tonemap(&c).data.iter().all(|x| *x == 1.0));
        let z = TransientVideo::zeros(2, 2, 1, 3, 1e-12, 0.0).unwrap();
        assert!(integrate_and_tonemap(&z).data.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn psnr_and_ssim_identities() {
        let a = img(16, 16, |r, c| ((r * 7 + c * 3) % 10) as f64 / 10.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(0.01), 20.0);
        let b = img(16, 16, |_, _| 0.5);
        let c = img(16, 16, |_, _| 0.6);
        assert!((psnr(&b, &c).unwrap() - 20.0).abs() < 1e-9);
        let (c1, mu_a, mu_b) = (1e-4, 0.5, 0.6);
        let lum = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1);
        assert!((ssim(&b, &c).unwrap() - lum).abs() < 1e-12);
        assert!(psnr(&a, &img(8, 8, |_, _| 0.0)).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let base = img(12, 12, |r, c| (r * 12 + c) as f64 / 144.0);
        let mut last = f64::INFINITY;
        for k in 1..10 {
            let amp = 0.01 * k as f64;
            let noisy = img(12, 12, |r, c| base.at(r, c, 0) + if (r + c) % 2 == 0 { amp } else { -amp });
            let p = psnr(&base, &noisy).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn video_iou_skips_empty_pixels() {
        let gt = TransientVideo::from_data(1, 2, 1, 2, 1e-12, 0.0, vec![1.0, 3.0, 0.0, 0.0]).unwrap();
        let pr = TransientVideo::from_data(1, 2, 1, 2, 1e-12, 0.0, vec![2.0, 2.0, 5.0, 0.0]).unwrap();
        assert_eq!(video_transient_iou(&pr, &gt).unwrap(), 0.6);
        let r = evaluate_view(3, &gt, &gt).unwrap();
        assert_eq!((r.psnr_db, r.t_iou), (f64::INFINITY, 1.0));
        let rep = EvalReport::from_views(vec![r]);
        assert!(rep.to_csv().starts_with("view_id,psnr_db,ssim,t_iou\n3,inf,"));
    }

    proptest! {
        #[test]
        fn iou_symmetric_scale_invariant_bounded(
            a in prop::collection::vec(0.0f64..10.0, 1..32),
            b in prop::collection::vec(0.0f64..10.0, 1..32),
            k in 0.01f64..100.0,
        ) {
            let n = a.len().min(b.len());
            let (a, b) = (&a[..n], &b[..n]);
            let x = transient_iou(a, b).unwrap();
            prop_assert_eq!(x, transient_iou(b, a).unwrap());
            let sa: Vec<f64> = a.iter().map(|v| v * k).collect();
            let sb: Vec<f64> = b.iter().map(|v| v * k).collect();
            prop_assert!((transient_iou(&sa, &sb).unwrap() - x).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&x));
            if a != b {
                prop_assert!(x < 1.0);
            }
        }
    }
}
