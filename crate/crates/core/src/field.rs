//! Dense voxel transient field.
//!
//! Parameters live on the vertices of a regular lattice spanning the box
//! `[aabb_min, aabb_max]` (vertex `(i, j, k)` sits at
//! `aabb_min + (i, j, k) * extent / (G - 1)`). A query trilinearly
//! interpolates the raw parameters and then activates them:
//!
//! - density `sigma = density_scale * softplus(raw)` in 1/m,
//! - transient `tau[n] = softplus(raw[n]) * max(0, sh(d))`.
//!
//! Each vertex stores `channels * n_bins` transient values contiguously.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Numerically safe `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// `d softplus / dx` recovered from `softplus(x)` itself.
#[inline]
pub(crate) fn sigmoid_from_softplus(sp: f64) -> f64 {
    -(-sp).exp_m1()
}

/// `(softplus(x), sigmoid(x))` sharing one exponential.
#[inline]
pub(crate) fn softplus_and_sigmoid(x: f64) -> (f64, f64) {
    if x > 30.0 {
        (x, 1.0 / (1.0 + (-x).exp()))
    } else {
        let e = x.exp();
        let sp = if x < -30.0 { e } else { e.ln_1p() };
        (sp, e / (1.0 + e))
    }
}

/// Real spherical-harmonic basis up to degree 2, `(L + 1)^2` terms.
pub fn sh_basis(degree: u32, d: &Vector3<f64>, out: &mut [f64]) {
    let (x, y, z) = (d.x, d.y, d.z);
    out[0] = 0.282_094_791_773_878_14;
    if degree >= 1 {
        out[1] = 0.488_602_511_902_919_9 * y;
        out[2] = 0.488_602_511_902_919_9 * z;
        out[3] = 0.488_602_511_902_919_9 * x;
    }
    if degree >= 2 {
        out[4] = 1.092_548_430_592_079_2 * x * y;
        out[5] = 1.092_548_430_592_079_2 * y * z;
        out[6] = 0.315_391_565_252_520_05 * (3.0 * z * z - 1.0);
        out[7] = 1.092_548_430_592_079_2 * x * z;
        out[8] = 0.546_274_215_296_039_6 * (x * x - y * y);
    }
}

pub fn sh_len(degree: u32) -> usize {
    ((degree + 1) * (degree + 1)) as usize
}

/// Layout and activation settings of a grid.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub resolution: [usize; 3],
    pub aabb_min: [f64; 3],
    pub aabb_max: [f64; 3],
    pub n_bins: usize,
    pub channels: usize,
    pub bin_width_s: f64,
    /// Time origin of the canonical (delay-free) bins.
    pub t0_offset_bins: f64,
    pub density_scale: f64,
    /// Degree of the directional modulation, `None` for an isotropic field.
    pub sh_degree: Option<u32>,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.resolution.iter().any(|&g| g == 0) {
            return Err(Error::Config("grid resolution must be positive".into()));
        }
        for a in 0..3 {
            if !(self.aabb_min[a].is_finite() && self.aabb_max[a].is_finite() && self.aabb_min[a] < self.aabb_max[a]) {
                return Err(Error::Config("grid bounds must satisfy min < max".into()));
            }
        }
        if self.n_bins == 0 || !(self.channels == 1 || self.channels == 3) {
            return Err(Error::Config("grid needs n_bins >= 1 and 1 or 3 channels".into()));
        }
        if !(self.bin_width_s > 0.0) || !self.t0_offset_bins.is_finite() {
            return Err(Error::Config("grid bin width must be positive".into()));
        }
        if !(self.density_scale > 0.0 && self.density_scale.is_finite()) {
            return Err(Error::Config("density scale must be positive".into()));
        }
        if matches!(self.sh_degree, Some(l) if l > 2) {
            return Err(Error::Config("directional degree must be 0, 1 or 2".into()));
        }
        Ok(())
    }

    pub fn n_voxels(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn pixel_len(&self) -> usize {
        self.channels * self.n_bins
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransientFieldGrid {
    spec: GridSpec,
    aabb_min: Vector3<f64>,
    aabb_max: Vector3<f64>,
    pub(crate) density_raw: Vec<f64>,
    pub(crate) transient_raw: Vec<f64>,
    pub(crate) sh_coeffs: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub sigma: f64,
    pub transient: Vec<f64>,
    pub position: Vector3<f64>,
    pub direction: Vector3<f64>,
}

/// Interpolation support of one point: 8 vertex indices and weights.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub idx: [usize; 8],
    pub w: [f64; 8],
}

impl TransientFieldGrid {
    /// Grid with density `0.1 * density_scale` and transient `1e-3` everywhere.
    pub fn new(spec: GridSpec) -> Result<Self> {
        Self::constant(spec, softplus_inv(0.1), softplus_inv(1e-3))
    }

    pub fn constant(spec: GridSpec, density_raw: f64, transient_raw: f64) -> Result<Self> {
        spec.validate()?;
        let nv = spec.n_voxels();
        let sh_coeffs = spec.sh_degree.map(|l| {
            let k = sh_len(l);
            let mut c = vec![0.0; nv * k];
            let mut basis = [0.0; 9];
            sh_basis(0, &Vector3::z(), &mut basis);
            for v in 0..nv {
                c[v * k] = 1.0 / basis[0];
            }
            c
        });
        Ok(Self {
            aabb_min: Vector3::from(spec.aabb_min),
            aabb_max: Vector3::from(spec.aabb_max),
            density_raw: vec![density_raw; nv],
            transient_raw: vec![transient_raw; nv * spec.pixel_len()],
            sh_coeffs,
            spec,
        })
    }

    pub fn from_parts(
        spec: GridSpec,
        density_raw: Vec<f64>,
        transient_raw: Vec<f64>,
        sh_coeffs: Option<Vec<f64>>,
    ) -> Result<Self> {
        spec.validate()?;
        let nv = spec.n_voxels();
        if density_raw.len() != nv {
            return Err(Error::shape("density parameters", nv, density_raw.len()));
        }
        if transient_raw.len() != nv * spec.pixel_len() {
            return Err(Error::shape("transient parameters", nv * spec.pixel_len(), transient_raw.len()));
        }
        match (spec.sh_degree, &sh_coeffs) {
            (None, None) => {}
            (Some(l), Some(c)) if c.len() == nv * sh_len(l) => {}
            (Some(l), Some(c)) => return Err(Error::shape("directional parameters", nv * sh_len(l), c.len())),
            _ => return Err(Error::Config("directional parameters do not match grid degree".into())),
        }
        let all = density_raw
            .iter()
            .chain(&transient_raw)
            .chain(sh_coeffs.iter().flatten());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("grid parameters must be finite".into()));
        }
        Ok(Self {
            aabb_min: Vector3::from(spec.aabb_min),
            aabb_max: Vector3::from(spec.aabb_max),
            density_raw,
            transient_raw,
            sh_coeffs,
            spec,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }
    pub fn n_bins(&self) -> usize {
        self.spec.n_bins
    }
    pub fn channels(&self) -> usize {
        self.spec.channels
    }
    pub fn pixel_len(&self) -> usize {
        self.spec.pixel_len()
    }
    pub fn bin_width_s(&self) -> f64 {
        self.spec.bin_width_s
    }
    pub fn t0_offset_bins(&self) -> f64 {
        self.spec.t0_offset_bins
    }
    pub fn n_voxels(&self) -> usize {
        self.spec.n_voxels()
    }
    pub fn aabb(&self) -> (Vector3<f64>, Vector3<f64>) {
        (self.aabb_min, self.aabb_max)
    }
    pub fn density_raw(&self) -> &[f64] {
        &self.density_raw
    }
    pub fn transient_raw(&self) -> &[f64] {
        &self.transient_raw
    }
    pub fn sh_coeffs(&self) -> Option<&[f64]> {
        self.sh_coeffs.as_deref()
    }
    pub fn density_raw_mut(&mut self) -> &mut [f64] {
        &mut self.density_raw
    }
    pub fn transient_raw_mut(&mut self) -> &mut [f64] {
        &mut self.transient_raw
    }
    pub fn sh_coeffs_mut(&mut self) -> Option<&mut [f64]> {
        self.sh_coeffs.as_deref_mut()
    }

    /// Linear voxel index, x fastest.
    #[inline]
    pub fn voxel_index(&self, i: usize, j: usize, k: usize) -> usize {
        let [gx, gy, _] = self.spec.resolution;
        i + gx * (j + gy * k)
    }

    /// World position of lattice vertex `(i, j, k)`.
    pub fn vertex_position(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let mut p = self.aabb_min;
        for (a, idx) in [i, j, k].into_iter().enumerate() {
            let g = self.spec.resolution[a];
            if g > 1 {
                p[a] += (self.aabb_max[a] - self.aabb_min[a]) * idx as f64 / (g - 1) as f64;
            }
        }
        p
    }

    /// Lattice spacing along each axis (the full extent for single-vertex axes).
    pub fn voxel_size(&self) -> Vector3<f64> {
        let mut s = self.aabb_max - self.aabb_min;
        for a in 0..3 {
            let g = self.spec.resolution[a];
            if g > 1 {
                s[a] /= (g - 1) as f64;
            }
        }
        s
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.aabb_min[a] && p[a] <= self.aabb_max[a])
    }

    pub(crate) fn stencil(&self, p: &Vector3<f64>) -> Option<Stencil> {
        if !self.contains(p) {
            return None;
        }
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut step = [0usize; 3];
        for a in 0..3 {
            let g = self.spec.resolution[a];
            if g == 1 {
                continue;
            }
            let x = (p[a] - self.aabb_min[a]) / (self.aabb_max[a] - self.aabb_min[a]) * (g - 1) as f64;
            let i0 = (x.floor().max(0.0) as usize).min(g - 2);
            base[a] = i0;
            frac[a] = (x - i0 as f64).clamp(0.0, 1.0);
            step[a] = 1;
        }
        let [gx, gy, _] = self.spec.resolution;
        let mut idx = [0usize; 8];
        let mut w = [0.0f64; 8];
        for c in 0..8 {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let i = base[0] + dx * step[0];
            let j = base[1] + dy * step[1];
            let k = base[2] + dz * step[2];
            idx[c] = i + gx * (j + gy * k);
            let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if dz == 1 { frac[2] } else { 1.0 - frac[2] };
            w[c] = wx * wy * wz;
        }
        Some(Stencil { idx, w })
    }

    /// `(sigma, d sigma / d raw)` at a stencil.
    #[inline]
    pub(crate) fn density_at(&self, st: &Stencil) -> (f64, f64) {
        let raw: f64 = (0..8).map(|c| st.w[c] * self.density_raw[st.idx[c]]).sum();
        let sp = softplus(raw);
        let scale = self.spec.density_scale;
        (scale * sp, scale * sigmoid_from_softplus(sp))
    }

    /// Writes `softplus(interpolated raw transient)` into `sp` and its
    /// derivative into `sig`.
    #[inline]
    pub(crate) fn transient_softplus_at(&self, st: &Stencil, sp: &mut [f64], sig: &mut [f64]) {
        let l = self.pixel_len();
        sp.fill(0.0);
        for c in 0..8 {
            let w = st.w[c];
            if w == 0.0 {
                continue;
            }
            let src = &self.transient_raw[st.idx[c] * l..(st.idx[c] + 1) * l];
            for (o, s) in sp.iter_mut().zip(src) {
                *o += w * s;
            }
        }
        for (v, d) in sp.iter_mut().zip(sig.iter_mut()) {
            (*v, *d) = softplus_and_sigmoid(*v);
        }
    }

    /// Directional modulation before clamping, given the ray's SH basis.
    #[inline]
    pub(crate) fn modulation_at(&self, st: &Stencil, basis: &[f64]) -> f64 {
        match (&self.sh_coeffs, self.spec.sh_degree) {
            (Some(coeffs), Some(l)) => {
                let k = sh_len(l);
                let mut m = 0.0;
                for c in 0..8 {
                    if st.w[c] == 0.0 {
                        continue;
                    }
                    let cv = &coeffs[st.idx[c] * k..(st.idx[c] + 1) * k];
                    let dot: f64 = cv.iter().zip(basis).map(|(a, b)| a * b).sum();
                    m += st.w[c] * dot;
                }
                m
            }
            _ => 1.0,
        }
    }

    pub(crate) fn direction_basis(&self, d: &Vector3<f64>) -> [f64; 9] {
        let mut basis = [0.0; 9];
        if let Some(l) = self.spec.sh_degree {
            sh_basis(l, d, &mut basis);
        }
        basis
    }

    pub fn query(&self, p: &Vector3<f64>, d: &Vector3<f64>) -> Result<FieldSample> {
        check_point(p, d)?;
        let mut transient = vec![0.0; self.pixel_len()];
        let sigma = match self.stencil(p) {
            None => 0.0,
            Some(st) => {
                let (sigma, _) = self.density_at(&st);
                let mut sig = vec![0.0; transient.len()];
                self.transient_softplus_at(&st, &mut transient, &mut sig);
                let m = self.modulation_at(&st, &self.direction_basis(d)).max(0.0);
                if m != 1.0 {
                    transient.iter_mut().for_each(|v| *v *= m);
                }
                sigma
            }
        };
        Ok(FieldSample {
            sigma,
            transient,
            position: *p,
            direction: *d,
        })
    }

    /// Accumulates the parameter gradient of a scalar `L` given
    /// `dL/dsigma` and `dL/dtransient` at the query `(p, d)`.
    pub fn query_gradient(
        &self,
        p: &Vector3<f64>,
        d: &Vector3<f64>,
        d_sigma: f64,
        d_transient: &[f64],
        grad: &mut FieldGradient,
    ) -> Result<()> {
        check_point(p, d)?;
        if d_transient.len() != self.pixel_len() {
            return Err(Error::shape("transient upstream", self.pixel_len(), d_transient.len()));
        }
        grad.check_layout(self)?;
        let Some(st) = self.stencil(p) else {
            return Ok(());
        };
        let (_, dsig) = self.density_at(&st);
        let mut sp = vec![0.0; self.pixel_len()];
        let mut sig = vec![0.0; self.pixel_len()];
        self.transient_softplus_at(&st, &mut sp, &mut sig);
        let basis = self.direction_basis(d);
        let m_pre = self.modulation_at(&st, &basis);
        let mut local = vec![0.0; self.pixel_len()];
        self.scatter(&st, d_sigma * dsig, d_transient, &sp, &sig, m_pre, &basis, grad, &mut local);
        Ok(())
    }

    /// Scatters chain-ruled upstream gradients into the stencil's vertices.
    ///
    /// `d_density_raw` is already multiplied by `d sigma / d raw`; `sp` holds
    /// the softplus-activated transient before modulation and `sig` its slope.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn scatter(
        &self,
        st: &Stencil,
        d_density_raw: f64,
        d_transient: &[f64],
        sp: &[f64],
        sig: &[f64],
        m_pre: f64,
        basis: &[f64],
        grad: &mut FieldGradient,
        local: &mut [f64],
    ) {
        let l = self.pixel_len();
        let m = m_pre.max(0.0);
        local[..l].fill(0.0);
        let mut any = d_density_raw != 0.0;
        let mut d_mod = 0.0;
        for n in 0..l {
            let g = d_transient[n];
            if g != 0.0 {
                d_mod += g * sp[n];
                local[n] = g * m * sig[n];
                any = true;
            }
        }
        if !any {
            return;
        }
        let sh = match (self.spec.sh_degree, m_pre > 0.0 && d_mod != 0.0) {
            (Some(deg), true) => Some((sh_len(deg), d_mod)),
            _ => None,
        };
        for c in 0..8 {
            let w = st.w[c];
            if w == 0.0 {
                continue;
            }
            let v = st.idx[c];
            grad.touch(v);
            grad.density[v] += w * d_density_raw;
            let dst = &mut grad.transient[v * l..(v + 1) * l];
            for (o, g) in dst.iter_mut().zip(&local[..l]) {
                *o += w * g;
            }
            if let (Some((k, dm)), Some(gs)) = (sh, grad.sh.as_mut()) {
                for (o, b) in gs[v * k..(v + 1) * k].iter_mut().zip(basis) {
                    *o += w * dm * b;
                }
            }
        }
    }
}

fn check_point(p: &Vector3<f64>, d: &Vector3<f64>) -> Result<()> {
    if !p.iter().chain(d.iter()).all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("query point and direction must be finite".into()));
    }
    Ok(())
}

/// Gradient buffers shaped like a grid's parameters, with touched-vertex
/// tracking so clearing and merging cost only what was written.
#[derive(Clone, Debug)]
pub struct FieldGradient {
    pixel_len: usize,
    sh_len: usize,
    pub(crate) density: Vec<f64>,
    pub(crate) transient: Vec<f64>,
    pub(crate) sh: Option<Vec<f64>>,
    touched: Vec<bool>,
    touched_list: Vec<usize>,
}

impl FieldGradient {
    pub fn zeros_like(grid: &TransientFieldGrid) -> Self {
        let nv = grid.n_voxels();
        let k = grid.spec.sh_degree.map(sh_len).unwrap_or(0);
        Self {
            pixel_len: grid.pixel_len(),
            sh_len: k,
            density: vec![0.0; nv],
            transient: vec![0.0; nv * grid.pixel_len()],
            sh: grid.spec.sh_degree.map(|_| vec![0.0; nv * k]),
            touched: vec![false; nv],
            touched_list: Vec::new(),
        }
    }

    fn check_layout(&self, grid: &TransientFieldGrid) -> Result<()> {
        if self.density.len() != grid.n_voxels() || self.pixel_len != grid.pixel_len() {
            return Err(Error::shape("gradient buffer", grid.n_voxels(), self.density.len()));
        }
        Ok(())
    }

    #[inline]
    fn touch(&mut self, v: usize) {
        if !self.touched[v] {
            self.touched[v] = true;
            self.touched_list.push(v);
        }
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }
    pub fn transient(&self) -> &[f64] {
        &self.transient
    }
    pub fn sh(&self) -> Option<&[f64]> {
        self.sh.as_deref()
    }

    /// Marks every vertex touched, for dense contributions.
    pub(crate) fn touch_all(&mut self) {
        for v in 0..self.touched.len() {
            self.touch(v);
        }
    }

    /// Vertices that received any contribution since the last clear.
    pub fn touched(&self) -> &[usize] {
        &self.touched_list
    }

    pub fn clear(&mut self) {
        let (l, k) = (self.pixel_len, self.sh_len);
        for &v in &self.touched_list {
            self.touched[v] = false;
            self.density[v] = 0.0;
            self.transient[v * l..(v + 1) * l].fill(0.0);
            if let Some(sh) = self.sh.as_mut() {
                sh[v * k..(v + 1) * k].fill(0.0);
            }
        }
        self.touched_list.clear();
    }

    /// Adds `other` into `self` (touched vertices in `other`'s order).
    pub fn merge(&mut self, other: &FieldGradient) {
        let (l, k) = (self.pixel_len, self.sh_len);
        for &v in &other.touched_list {
            self.touch(v);
            self.density[v] += other.density[v];
            for (a, b) in self.transient[v * l..(v + 1) * l]
                .iter_mut()
                .zip(&other.transient[v * l..(v + 1) * l])
            {
                *a += b;
            }
            if let (Some(a), Some(b)) = (self.sh.as_mut(), other.sh.as_ref()) {
                for (x, y) in a[v * k..(v + 1) * k].iter_mut().zip(&b[v * k..(v + 1) * k]) {
                    *x += y;
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.density.iter().chain(&self.transient).chain(self.sh.iter().flatten()).all(|v| *v == 0.0)
    }
}
