//! Analytic scenes: Lambertian spheres and axis-aligned rectangles lit by
//! a pulsed point or collimated source.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::kv::{parse_blocks, write_blocks, Block};
use crate::error::{Error, Result};

/// Self-intersection offset for secondary rays, meters.
pub const RAY_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Pulse {
    Impulse,
    Gaussian { fwhm_s: f64 },
}

impl Pulse {
    pub fn sigma_s(&self) -> f64 {
        match self {
            Pulse::Impulse => 0.0,
            Pulse::Gaussian { fwhm_s } => fwhm_s / (8.0 * std::f64::consts::LN_2).sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LightKind {
    /// Isotropic emitter.
    Point,
    /// Uniform beam of the given radius along `direction`.
    Collimated { direction: [f64; 3], radius: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Light {
    pub position: [f64; 3],
    pub kind: LightKind,
    /// Point: photons per pulse per steradian. Collimated: photons per pulse per m^2.
    pub intensity: f64,
    pub pulse: Pulse,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Rectangle `x[axis] = offset` bounded on the two remaining axes (in
    /// increasing axis order) by `min` and `max`. Both faces scatter.
    Rect {
        axis: usize,
        offset: f64,
        min: [f64; 2],
        max: [f64; 2],
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub shape: Shape,
    pub albedo: f64,
}

/// Ray-surface hit with the normal facing the incoming ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub surface: usize,
}

fn other_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

impl Surface {
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>, t_min: f64, t_max: f64) -> Option<(f64, Vector3<f64>)> {
        match self.shape {
            Shape::Sphere { center, radius } => {
                let oc = o - Vector3::from(center);
                let b = oc.dot(d);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = [-b - sq, -b + sq].into_iter().find(|t| *t > t_min && *t < t_max)?;
                let p = o + d * t;
                let mut n = (p - Vector3::from(center)) / radius;
                if n.dot(d) > 0.0 {
                    n = -n;
                }
                Some((t, n))
            }
            Shape::Rect { axis, offset, min, max } => {
                if d[axis].abs() < 1e-15 {
                    return None;
                }
                let t = (offset - o[axis]) / d[axis];
                if !(t > t_min && t < t_max) {
                    return None;
                }
                let p = o + d * t;
                let (a, b) = other_axes(axis);
                if p[a] < min[0] || p[a] > max[0] || p[b] < min[1] || p[b] > max[1] {
                    return None;
                }
                let mut n = Vector3::zeros();
                n[axis] = if d[axis] > 0.0 { -1.0 } else { 1.0 };
                Some((t, n))
            }
        }
    }

    /// Axis-aligned bounds of the surface.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        match self.shape {
            Shape::Sphere { center, radius } => {
                let c = Vector3::from(center);
                (c.add_scalar(-radius), c.add_scalar(radius))
            }
            Shape::Rect { axis, offset, min, max } => {
                let (a, b) = other_axes(axis);
                let mut lo = Vector3::zeros();
                let mut hi = Vector3::zeros();
                lo[axis] = offset;
                hi[axis] = offset;
                lo[a] = min[0];
                hi[a] = max[0];
                lo[b] = min[1];
                hi[b] = max[1];
                (lo, hi)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub surfaces: Vec<Surface>,
    pub light: Light,
    /// Ambient photons per bin per pulse reaching the detector.
    pub ambient_rate: f64,
}

impl AnalyticScene {
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.surfaces.iter().enumerate() {
            if !(0.0..=1.0).contains(&s.albedo) {
                return Err(Error::Config(format!("surface {i}: albedo must lie in [0, 1]")));
            }
            match s.shape {
                Shape::Sphere { radius, .. } if !(radius > 0.0) => {
                    return Err(Error::Config(format!("surface {i}: sphere radius must be positive")));
                }
                Shape::Rect { axis, min, max, .. } if axis > 2 || min[0] > max[0] || min[1] > max[1] => {
                    return Err(Error::Config(format!("surface {i}: bad rectangle extents")));
                }
                _ => {}
            }
        }
        if let Pulse::Gaussian { fwhm_s } = self.light.pulse {
            if !(fwhm_s >= 0.0 && fwhm_s.is_finite()) {
                return Err(Error::Config("pulse fwhm must be >= 0".into()));
            }
        }
        if let LightKind::Collimated { direction, radius } = self.light.kind {
            if !(radius > 0.0) || Vector3::from(direction).norm() < 1e-12 {
                return Err(Error::Config("collimated light needs a direction and positive radius".into()));
            }
        }
        if !(self.light.intensity >= 0.0) || !(self.ambient_rate >= 0.0) {
            return Err(Error::Config("intensity and ambient rate must be >= 0".into()));
        }
        Ok(())
    }

    /// Closest hit along `o + t d` with `t` in `(t_min, t_max)`.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>, t_min: f64, t_max: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, s) in self.surfaces.iter().enumerate() {
            let limit = best.map_or(t_max, |b| b.t);
            if let Some((t, normal)) = s.intersect(o, d, t_min, limit) {
                best = Some(Hit {
                    t,
                    point: o + d * t,
                    normal,
                    surface: i,
                });
            }
        }
        best
    }

    pub fn occluded(&self, from: &Vector3<f64>, to: &Vector3<f64>) -> bool {
        let seg = to - from;
        let len = seg.norm();
        let d = seg / len;
        self.surfaces
            .iter()
            .any(|s| s.intersect(from, &d, RAY_EPS, len - RAY_EPS).is_some())
    }

    /// Bounding box of all surfaces.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        self.surfaces.iter().map(|s| s.bounds()).reduce(|(a, b), (c, d)| (a.inf(&c), b.sup(&d)))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let blocks = parse_blocks(text)?;
        let mut light = None;
        let mut surfaces = Vec::new();
        let mut ambient_rate = 0.0;
        for b in &blocks {
            match b.name.as_str() {
                "light" => {
                    if light.is_some() {
                        return Err(Error::Config(format!("line {}: only one [light] block allowed", b.line)));
                    }
                    light = Some(parse_light(b)?);
                }
                "sphere" => {
                    b.expect_keys(&["center", "radius", "albedo"])?;
                    surfaces.push(Surface {
                        shape: Shape::Sphere {
                            center: b.vec3("center")?.into(),
                            radius: b.parse("radius")?,
                        },
                        albedo: b.parse("albedo")?,
                    });
                }
                "plane" => {
                    b.expect_keys(&["axis", "offset", "min", "max", "albedo"])?;
                    let axis = match b.str("axis")? {
                        "x" => 0,
                        "y" => 1,
                        "z" => 2,
                        _ => return Err(b.invalid("axis", "must be x, y or z")),
                    };
                    let (a0, a1) = b.pair("min")?;
                    let (b0, b1) = b.pair("max")?;
                    surfaces.push(Surface {
                        shape: Shape::Rect {
                            axis,
                            offset: b.parse("offset")?,
                            min: [a0, a1],
                            max: [b0, b1],
                        },
                        albedo: b.parse("albedo")?,
                    });
                }
                "scene" => {
                    b.expect_keys(&["ambient_rate"])?;
                    ambient_rate = b.parse_or("ambient_rate", 0.0)?;
                }
                "spad" => {}
                other => {
                    return Err(Error::Config(format!("line {}: unknown block [{other}]", b.line)));
                }
            }
        }
        let scene = Self {
            surfaces,
            light: light.ok_or_else(|| Error::Config("scene needs a [light] block".into()))?,
            ambient_rate,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_blocks(&self) -> Vec<Block> {
        let v3 = |v: [f64; 3]| format!("{} {} {}", v[0], v[1], v[2]);
        let mut out = Vec::new();
        let l = &self.light;
        let mut b = Block::new("light").with("position", v3(l.position)).with("intensity", l.intensity);
        b = match l.kind {
            LightKind::Point => b.with("type", "point"),
            LightKind::Collimated { direction, radius } => b
                .with("type", "collimated")
                .with("direction", v3(direction))
                .with("radius", radius),
        };
        b = match l.pulse {
            Pulse::Impulse => b.with("pulse", "impulse"),
            Pulse::Gaussian { fwhm_s } => b.with("pulse", "gaussian").with("fwhm_ps", fwhm_s * 1e12),
        };
        out.push(b);
        out.push(Block::new("scene").with("ambient_rate", self.ambient_rate));
        for s in &self.surfaces {
            out.push(match s.shape {
                Shape::Sphere { center, radius } => Block::new("sphere")
                    .with("center", v3(center))
                    .with("radius", radius)
                    .with("albedo", s.albedo),
                Shape::Rect { axis, offset, min, max } => Block::new("plane")
                    .with("axis", ["x", "y", "z"][axis])
                    .with("offset", offset)
                    .with("min", format!("{} {}", min[0], min[1]))
                    .with("max", format!("{} {}", max[0], max[1]))
                    .with("albedo", s.albedo),
            });
        }
        out
    }

    pub fn to_text(&self) -> String {
        write_blocks(&self.to_blocks())
    }
}

fn parse_light(b: &Block) -> Result<Light> {
    b.expect_keys(&["type", "position", "direction", "radius", "intensity", "pulse", "fwhm_ps"])?;
    let kind = match b.parse_or("type", "point".to_string())?.as_str() {
        "point" => LightKind::Point,
        "collimated" => LightKind::Collimated {
            direction: b.vec3("direction")?.normalize().into(),
            radius: b.parse("radius")?,
        },
        _ => return Err(b.invalid("type", "must be point or collimated")),
    };
    let pulse = match b.parse_or("pulse", "gaussian".to_string())?.as_str() {
        "impulse" => Pulse::Impulse,
        "gaussian" => Pulse::Gaussian {
            fwhm_s: b.parse_or("fwhm_ps", 35.0)? * 1e-12,
        },
        _ => return Err(b.invalid("pulse", "must be gaussian or impulse")),
    };
    Ok(Light {
        position: b.vec3("position")?.into(),
        kind,
        intensity: b.parse("intensity")?,
        pulse,
    })
}
