//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::error::{Result, VoxError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates checked per parameter; all of them when the tensor is smaller.
    pub max_coords: usize,
    pub seed: u64,
    /// Skip coordinates whose inputs lie within `10 * step` of a kink of
    /// their own (only meaningful when the parameters feed elementwise ops
    /// directly; network checks rely on the kink signature instead).
    pub kink_margin: bool,
    pub stencil: Stencil,
}

/// Central-difference stencil.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, truncation error O(h^2).
    ThreePoint,
    /// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`, truncation error O(h^4).
    FivePoint,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-3,
            max_coords: 24,
            seed: 0,
            kink_margin: false,
            stencil: Stencil::FivePoint,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation flipped a relu/abs branch somewhere.
    pub skipped_kinks: usize,
    /// `(param index, flat coordinate, analytic, central difference)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

fn eval<T, F>(f: &F, params: &[Tensor<T>]) -> Result<(f64, u64)>
where
    T: Element,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.constant(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g
        .value(out)
        .item()
        .ok_or_else(|| VoxError::NonScalarRoot(g.shape(out).to_vec()))?;
    if !v.is_finite() {
        return Err(VoxError::NonFinite {
            op: g.first_non_finite().unwrap_or("loss"),
        });
    }
    Ok((v.as_f64(), g.kink_signature()))
}

/// Compare analytic gradients of the scalar `f` with central differences.
///
/// The relative error of a coordinate is
/// `|analytic - cd| / max(|analytic|, |cd|, 1e-8)`; the report carries the
/// maximum over checked coordinates.
pub fn grad_check<T, F>(f: F, params: &[Tensor<T>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    T: Element,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    if opts.step <= 0.0 {
        return Err(VoxError::config("grad_check", "step must be positive"));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let root = f(&mut g, &vars)?;
    if !g.value(root).is_finite() {
        return Err(VoxError::NonFinite {
            op: g.first_non_finite().unwrap_or("loss"),
        });
    }
    let base_sig = g.kink_signature();
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| match g.grad_data(v) {
            Some(d) => d.iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; p.numel()],
        })
        .collect();
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst: None,
    };
    let mut work: Vec<Tensor<T>> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        let coords: Vec<usize> = if n <= opts.max_coords {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        for c in coords {
            let x0 = p.data()[c];
            if opts.kink_margin && x0.as_f64().abs() <= 10.0 * opts.step {
                report.skipped_kinks += 1;
                continue;
            }
            let mut values = Vec::with_capacity(4);
            let mut kinked = false;
            let ks: &[f64] = match opts.stencil {
                Stencil::ThreePoint => &[1.0, -1.0],
                Stencil::FivePoint => &[1.0, -1.0, 2.0, -2.0],
            };
            for &k in ks {
                work[pi].data_mut()[c] = x0 + T::from_f64(k * opts.step);
                let (fk, sig) = eval(&f, &work)?;
                kinked |= sig != base_sig;
                values.push(fk);
            }
            work[pi].data_mut()[c] = x0;
            if kinked {
                report.skipped_kinks += 1;
                continue;
            }
            // Differences first, so an input that does not reach the loss gives exactly 0.
            let acc = match opts.stencil {
                Stencil::ThreePoint => (values[0] - values[1]) / 2.0,
                Stencil::FivePoint => (8.0 * (values[0] - values[1]) - (values[2] - values[3])) / 12.0,
            };
            // Use the step actually representable in T.
            let h_eff = ((x0 + T::from_f64(opts.step)).as_f64() - (x0 - T::from_f64(opts.step)).as_f64()) / 2.0;
            let cd = acc / h_eff;
            let a = analytic[pi][c];
            let rel = (a - cd).abs() / a.abs().max(cd.abs()).max(1e-8);
            report.checked += 1;
            if rel >= report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((pi, c, a, cd));
            }
        }
    }
    Ok(report)
}
