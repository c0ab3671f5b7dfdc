//! Least-squares adversarial, cycle-consistency and correlation losses.

use serde::{Deserialize, Serialize};
use voxcore::{Element, Graph, Var};

use crate::error::{Error, Result};

/// Added to each standard deviation in the differentiable correlation.
pub const PEARSON_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_cycle: f64,
    pub beta_corcoe: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_cycle: 1.0,
            beta_corcoe: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("lambda_cycle", self.lambda_cycle), ("beta_corcoe", self.beta_corcoe)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("{v} (must be finite and >= 0)")));
            }
        }
        Ok(())
    }
}

/// Scalar loss values of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub g_adv: f64,
    pub f_adv: f64,
    pub d_x: f64,
    pub d_y: f64,
    pub cycle: f64,
    pub corcoe: f64,
    pub total: f64,
}

impl LossReport {
    pub fn terms(&self) -> [(&'static str, f64); 7] {
        [
            ("g_adv", self.g_adv),
            ("f_adv", self.f_adv),
            ("d_x", self.d_x),
            ("d_y", self.d_y),
            ("cycle", self.cycle),
            ("corcoe", self.corcoe),
            ("total", self.total),
        ]
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.terms().iter().find(|(_, v)| !v.is_finite()) {
            Some((term, _)) => Err(Error::NonFinite {
                term: (*term).to_string(),
            }),
            None => Ok(()),
        }
    }

    /// Generator-side total from the parts.
    pub fn compose(&self, w: &LossWeights) -> f64 {
        self.g_adv + self.f_adv + w.lambda_cycle * self.cycle + w.beta_corcoe * self.corcoe
    }

    /// Element-wise mean of several reports.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let sum = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        LossReport {
            g_adv: sum(|r| r.g_adv),
            f_adv: sum(|r| r.f_adv),
            d_x: sum(|r| r.d_x),
            d_y: sum(|r| r.d_y),
            cycle: sum(|r| r.cycle),
            corcoe: sum(|r| r.corcoe),
            total: sum(|r| r.total),
        }
    }
}

/// `mean((d_real - 1)^2) + mean(d_fake^2)`.
pub fn lsgan_discriminator_loss<T: Element>(g: &mut Graph<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let r = g.offset(d_real, -1.0);
    let r = g.square(r);
    let r = g.mean(r);
    let f = g.square(d_fake);
    let f = g.mean(f);
    Ok(g.add(r, f)?)
}

/// `mean((d_fake - 1)^2)`.
pub fn lsgan_generator_loss<T: Element>(g: &mut Graph<T>, d_fake: Var) -> Var {
    let f = g.offset(d_fake, -1.0);
    let f = g.square(f);
    g.mean(f)
}

pub fn mean_abs_error<T: Element>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}

/// `mae(F(G(x)), x) + mae(G(F(y)), y)`, each averaged over voxels.
pub fn cycle_loss<T: Element>(g: &mut Graph<T>, x: Var, fgx: Var, y: Var, gfy: Var) -> Result<Var> {
    let a = mean_abs_error(g, fgx, x)?;
    let b = mean_abs_error(g, gfy, y)?;
    Ok(g.add(a, b)?)
}

fn centered<T: Element>(g: &mut Graph<T>, a: Var) -> Result<Var> {
    let m = g.mean(a);
    let m = g.neg(m);
    Ok(g.add_scalar(a, m)?)
}

/// Differentiable correlation with population statistics; each standard
/// deviation is offset by [`PEARSON_EPS`] so constant inputs stay finite.
pub fn pearson_guarded<T: Element>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::config(
            "pearson",
            format!("shape {:?} vs {:?}", g.shape(a), g.shape(b)),
        ));
    }
    let ac = centered(g, a)?;
    let bc = centered(g, b)?;
    let prod = g.mul(ac, bc)?;
    let cov = g.mean(prod);
    let mut sigma = |v: Var| {
        let s = g.square(v);
        let s = g.mean(s);
        let s = g.sqrt(s);
        g.offset(s, PEARSON_EPS)
    };
    let sa = sigma(ac);
    let sb = sigma(bc);
    let denom = g.mul(sa, sb)?;
    Ok(g.div(cov, denom)?)
}

/// Exact population correlation in 64-bit. Errors when either input is
/// constant, where the coefficient is undefined.
pub fn pearson<A: Copy + Into<f64>, B: Copy + Into<f64>>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Metric(format!(
            "pearson needs equal non-empty inputs ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v.into()).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v.into()).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x.into() - ma, y.into() - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Metric("correlation undefined for constant input".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorCoeSign {
    /// `(1 - rho)` per term, so minimizing maximizes correlation.
    #[default]
    Minimized,
    /// `rho` per term, literally added to the objective.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorCoeOptions {
    #[serde(default)]
    pub sign: CorCoeSign,
    /// Average per-channel coefficients instead of one joint coefficient.
    #[serde(default)]
    pub per_channel: bool,
}

fn correlation_term<T: Element>(g: &mut Graph<T>, a: Var, b: Var, opts: &CorCoeOptions) -> Result<Var> {
    let channels = g.shape(a).get(1).copied().unwrap_or(1);
    let rho = if opts.per_channel && channels > 1 {
        let mut acc = None;
        for c in 0..channels {
            let ac = g.channel(a, c)?;
            let bc = g.channel(b, c)?;
            let r = pearson_guarded(g, ac, bc)?;
            acc = Some(match acc {
                Some(s) => g.add(s, r)?,
                None => r,
            });
        }
        g.scale(acc.expect("channels > 1"), 1.0 / channels as f64)
    } else {
        pearson_guarded(g, a, b)?
    };
    Ok(match opts.sign {
        CorCoeSign::Minimized => g.affine(rho, -1.0, 1.0),
        CorCoeSign::Raw => rho,
    })
}

/// `(1 - rho(G(x), x)) + (1 - rho(F(y), y))` in the default sign convention.
pub fn corcoe_loss<T: Element>(
    g: &mut Graph<T>,
    x: Var,
    gx: Var,
    y: Var,
    fy: Var,
    opts: &CorCoeOptions,
) -> Result<Var> {
    let a = correlation_term(g, gx, x, opts)?;
    let b = correlation_term(g, fy, y, opts)?;
    Ok(g.add(a, b)?)
}

/// Generator-side loss terms as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorTerms {
    pub g_adv: Var,
    pub f_adv: Var,
    pub cycle: Var,
    pub corcoe: Var,
}

/// `g_adv + f_adv + lambda * cycle + beta * corcoe`; a non-finite term is a
/// divergence error naming that term.
pub fn full_objective<T: Element>(g: &mut Graph<T>, t: &GeneratorTerms, w: &LossWeights) -> Result<Var> {
    for (term, v) in [
        ("g_adv", t.g_adv),
        ("f_adv", t.f_adv),
        ("cycle", t.cycle),
        ("corcoe", t.corcoe),
    ] {
        if !g.value(v).is_finite() {
            return Err(Error::NonFinite { term: term.into() });
        }
    }
    let adv = g.add(t.g_adv, t.f_adv)?;
    let cyc = g.scale(t.cycle, w.lambda_cycle);
    let cor = g.scale(t.corcoe, w.beta_corcoe);
    let total = g.add(adv, cyc)?;
    Ok(g.add(total, cor)?)
}
