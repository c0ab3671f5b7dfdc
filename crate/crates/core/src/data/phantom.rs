//! Synthetic head phantoms with known T1-like / FA-like pairs.
//!
//! Each case draws a latent field: an ellipsoidal head with a soft edge, an
//! inner ellipsoid of raised intensity, and a few low-frequency cosine
//! waves. The T1-like volume is the rendered field plus Gaussian noise; the
//! FA-like volume is the normalized gradient magnitude of the noiseless
//! field.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::volume::Volume;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    /// Radius range in voxels.
    pub radius: [f32; 2],
    /// Multiplier applied to both volumes inside the lesion.
    pub intensity_drop: f32,
    /// Largest normalized ellipsoid radius of the lesion center.
    pub center_spread: f32,
}

impl Default for LesionSpec {
    fn default() -> Self {
        LesionSpec {
            radius: [2.0, 3.5],
            intensity_drop: 0.4,
            center_spread: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub n_cases: usize,
    pub extents: [usize; 3],
    pub lesion: Option<LesionSpec>,
    pub noise_sigma: f32,
    /// Peak amplitude of the low-frequency intensity field.
    pub field_amplitude: f32,
    /// Intensity step of the inner ellipsoid.
    pub structure_contrast: f32,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            seed: 0,
            n_cases: 8,
            extents: [32, 32, 16],
            lesion: None,
            noise_sigma: 0.02,
            field_amplitude: 0.12,
            structure_contrast: 0.25,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_cases == 0 {
            return Err(Error::config("n_cases", "at least one case is required"));
        }
        if self.extents.iter().any(|&e| e < 4) {
            return Err(Error::config(
                "extents",
                format!("{:?}: every extent must be at least 4", self.extents),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("noise_sigma", "must be finite and non-negative"));
        }
        if !(self.field_amplitude >= 0.0 && self.structure_contrast >= 0.0) {
            return Err(Error::config(
                "field_amplitude",
                "field and contrast must be non-negative",
            ));
        }
        if let Some(l) = &self.lesion {
            if !(l.radius[0] > 0.0 && l.radius[0] <= l.radius[1]) {
                return Err(Error::config(
                    "lesion.radius",
                    format!("{:?} is not a positive range", l.radius),
                ));
            }
            if !(0.0..=1.0).contains(&l.intensity_drop) {
                return Err(Error::config("lesion.intensity_drop", "must lie in [0, 1]"));
            }
            if !(0.0..1.0).contains(&l.center_spread) {
                return Err(Error::config("lesion.center_spread", "must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Wave {
    freq: [f32; 3],
    phase: f32,
    amp: f32,
}

/// Latent description of one phantom head.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomField {
    center: [f32; 3],
    axes: [f32; 3],
    inner_center: [f32; 3],
    inner_axes: [f32; 3],
    contrast: f32,
    waves: Vec<Wave>,
}

const EDGE: f32 = 0.03;
const BASE: f32 = 0.55;

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

fn ellipsoid_radius(p: [f32; 3], c: [f32; 3], a: [f32; 3]) -> f32 {
    (0..3).map(|k| ((p[k] - c[k]) / a[k]).powi(2)).sum::<f32>().sqrt()
}

impl PhantomField {
    pub fn sample<R: Rng + ?Sized>(extents: [usize; 3], spec: &PhantomSpec, rng: &mut R) -> Self {
        let e = extents.map(|x| x as f32);
        let center = [0, 1, 2].map(|k| (e[k] - 1.0) / 2.0 + e[k] * rng.random_range(-0.04..0.04));
        let axes = [0, 1, 2].map(|k| e[k] * rng.random_range(0.34..0.42));
        let inner_center = [0, 1, 2].map(|k| center[k] + axes[k] * rng.random_range(-0.1..0.1));
        let inner_axes = [0, 1, 2].map(|k| axes[k] * rng.random_range(0.45..0.6));
        let waves = (0..3)
            .map(|_| Wave {
                freq: [0, 1, 2].map(|k| rng.random_range(-1.5f32..1.5) / e[k]),
                phase: rng.random_range(0.0..std::f32::consts::TAU),
                amp: spec.field_amplitude / 3.0 * rng.random_range(0.5f32..1.0),
            })
            .collect();
        PhantomField {
            center,
            axes,
            inner_center,
            inner_axes,
            contrast: spec.structure_contrast,
            waves,
        }
    }

    /// Normalized ellipsoid radius of voxel `p`; below 1 is inside the head.
    pub fn head_radius(&self, p: [f32; 3]) -> f32 {
        ellipsoid_radius(p, self.center, self.axes)
    }

    fn value(&self, p: [f32; 3]) -> f32 {
        let head = sigmoid((1.0 - self.head_radius(p)) / EDGE);
        let inner = sigmoid((1.0 - ellipsoid_radius(p, self.inner_center, self.inner_axes)) / (2.0 * EDGE));
        let field: f32 = self
            .waves
            .iter()
            .map(|w| {
                let arg: f32 = (0..3).map(|k| w.freq[k] * p[k]).sum::<f32>() * std::f32::consts::TAU + w.phase;
                w.amp * arg.cos()
            })
            .sum();
        (head * (BASE + self.contrast * inner + field)).clamp(0.0, 1.0)
    }

    /// Noiseless T1-like rendering on the given grid.
    pub fn render(&self, extents: [usize; 3]) -> Volume {
        Volume::from_fn(extents, |d, h, w| self.value([d as f32, h as f32, w as f32]))
    }
}

/// Gradient magnitude (central differences, one-sided at the border) scaled
/// so the maximum is 1. A constant field maps to zeros.
pub fn gradient_magnitude(v: &Volume) -> Volume {
    let [nd, nh, nw] = v.extents();
    let x = v.channel(0);
    let at = |d: usize, h: usize, w: usize| x[(d * nh + h) * nw + w] as f64;
    let diff = |lo: f64, hi: f64, span: usize| if span == 0 { 0.0 } else { (hi - lo) / span as f64 };
    let mut g = Vec::with_capacity(x.len());
    for d in 0..nd {
        for h in 0..nh {
            for w in 0..nw {
                let (d0, d1) = (d.saturating_sub(1), (d + 1).min(nd - 1));
                let (h0, h1) = (h.saturating_sub(1), (h + 1).min(nh - 1));
                let (w0, w1) = (w.saturating_sub(1), (w + 1).min(nw - 1));
                let gd = diff(at(d0, h, w), at(d1, h, w), d1 - d0);
                let gh = diff(at(d, h0, w), at(d, h1, w), h1 - h0);
                let gw = diff(at(d, h, w0), at(d, h, w1), w1 - w0);
                g.push((gd * gd + gh * gh + gw * gw).sqrt());
            }
        }
    }
    let max = g.iter().cloned().fold(0.0f64, f64::max);
    let out = if max > 0.0 {
        g.iter().map(|v| (v / max) as f32).collect()
    } else {
        vec![0.0; g.len()]
    };
    Volume::new(v.extents(), 1, out).expect("gradient volume")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCase {
    pub id: String,
    pub t1: Volume,
    pub fa: Volume,
    pub mask: Volume,
    pub field: PhantomField,
}

fn place_lesion<R: Rng + ?Sized>(
    field: &PhantomField,
    extents: [usize; 3],
    lesion: &LesionSpec,
    rng: &mut R,
) -> Result<Volume> {
    for _ in 0..64 {
        let radius = rng.random_range(lesion.radius[0]..=lesion.radius[1]);
        let dir = loop {
            let u = [0; 3].map(|_| rng.random_range(-1.0f32..1.0));
            if u.iter().map(|x| x * x).sum::<f32>() <= 1.0 {
                break u;
            }
        };
        let c = [0, 1, 2].map(|k| field.center[k] + dir[k] * lesion.center_spread * field.axes[k]);
        let mut inside_head = true;
        let mask = Volume::from_fn(extents, |d, h, w| {
            let p = [d as f32, h as f32, w as f32];
            let r2: f32 = (0..3).map(|k| (p[k] - c[k]).powi(2)).sum();
            if r2 <= radius * radius {
                if field.head_radius(p) > 0.95 {
                    inside_head = false;
                }
                1.0
            } else {
                0.0
            }
        });
        if inside_head && mask.voxels().iter().any(|&m| m > 0.0) {
            return Ok(mask);
        }
    }
    Err(Error::Data(format!(
        "lesion radius {:?} does not fit inside the head ellipsoid",
        lesion.radius
    )))
}

pub fn generate_phantoms(spec: &PhantomSpec) -> Result<Vec<PhantomCase>> {
    spec.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0f32, spec.noise_sigma.max(f32::MIN_POSITIVE))
        .map_err(|e| Error::config("noise_sigma", e.to_string()))?;
    (0..spec.n_cases)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
            let field = PhantomField::sample(spec.extents, spec, &mut rng);
            let clean = field.render(spec.extents);
            let fa = gradient_magnitude(&clean);
            let mut t1 = clean.clone();
            if spec.noise_sigma > 0.0 {
                for v in t1.voxels_mut() {
                    *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
                }
            }
            let mut fa = fa;
            let mask = match &spec.lesion {
                Some(l) => {
                    let mask = place_lesion(&field, spec.extents, l, &mut rng)?;
                    for (k, &m) in mask.voxels().iter().enumerate() {
                        if m > 0.0 {
                            t1.voxels_mut()[k] *= l.intensity_drop;
                            fa.voxels_mut()[k] *= l.intensity_drop;
                        }
                    }
                    mask
                }
                None => Volume::filled(spec.extents, 1, 0.0)?,
            };
            Ok(PhantomCase {
                id: format!("case{i:03}"),
                t1,
                fa,
                mask,
                field,
            })
        })
        .collect()
}
