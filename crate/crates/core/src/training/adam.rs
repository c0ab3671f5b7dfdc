use voxcore::{Element, Tensor};

use crate::error::{Error, Result};
use crate::models::ModelWeights;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Element = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Element> AdamState<T> {
    pub fn zeros(shapes: &[&[usize]]) -> Self {
        AdamState {
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            t: 0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.t == 0
            && self
                .m
                .iter()
                .chain(&self.v)
                .all(|x| x.data().iter().all(|v| *v == T::zero()))
    }

    /// One bias-corrected Adam update. `grads[i] == None` counts as a zero
    /// gradient. Every gradient is checked before any parameter moves.
    pub fn step(
        &mut self,
        params: &mut [(&str, &mut [T])],
        grads: &[Option<&[T]>],
        lr: f64,
        hp: &AdamParams,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::config(
                "adam",
                format!(
                    "{} params, {} grads, {} moments",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        if !(lr >= 0.0) {
            return Err(Error::config("lr", format!("{lr} (must be >= 0)")));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if let Some(g) = g {
                if g.len() != p.len() {
                    return Err(Error::config(*name, "gradient length differs from parameter"));
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        term: format!("gradient of {name}"),
                    });
                }
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - hp.beta1.powi(t);
        let c2 = 1.0 - hp.beta2.powi(t);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for k in 0..p.len() {
                let g = grads[i].map_or(0.0, |g| g[k].as_f64());
                let mk = hp.beta1 * m[k].as_f64() + (1.0 - hp.beta1) * g;
                let vk = hp.beta2 * v[k].as_f64() + (1.0 - hp.beta2) * g * g;
                m[k] = T::from_f64(mk);
                v[k] = T::from_f64(vk);
                let update = lr * (mk / c1) / ((vk / c2).sqrt() + hp.eps);
                p[k] = T::from_f64(p[k].as_f64() - update);
            }
        }
        Ok(())
    }
}

impl AdamState<f32> {
    pub fn for_model(w: &ModelWeights) -> Self {
        let shapes: Vec<&[usize]> = w.iter().map(|(_, t)| t.shape()).collect();
        AdamState::zeros(&shapes)
    }
}
