use voxcore::{Element, Graph, Tensor, Var};

use super::{AdamParams, AdamState, ImagePool, TrainConfig};
use crate::error::{Error, Result};
use crate::losses::{
    corcoe_loss, cycle_loss, full_objective, lsgan_discriminator_loss, lsgan_generator_loss, GeneratorTerms, LossReport,
};
use crate::models::{
    build_discriminator, build_generator, discriminator_forward, generator_forward, Architecture, Bound,
    DiscriminatorConfig, GeneratorConfig, ModelWeights,
};

/// `G: X -> Y`, `F: Y -> X` and the two discriminators.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleModels {
    pub g: ModelWeights,
    pub f: ModelWeights,
    pub d_x: ModelWeights,
    pub d_y: ModelWeights,
}

impl CycleModels {
    pub fn build(cfg: &TrainConfig) -> Result<Self> {
        let gc = cfg.generator_config();
        let dc = cfg.discriminator_config();
        let s = cfg.seed.wrapping_mul(4);
        Ok(CycleModels {
            g: build_generator(&gc, s)?,
            f: build_generator(&gc, s.wrapping_add(1))?,
            d_x: build_discriminator(&dc, s.wrapping_add(2))?,
            d_y: build_discriminator(&dc, s.wrapping_add(3))?,
        })
    }

    pub fn nets(&self) -> [(&'static str, &ModelWeights); 4] {
        [("g", &self.g), ("f", &self.f), ("d_x", &self.d_x), ("d_y", &self.d_y)]
    }

    pub fn check_compatible(&self, other: &CycleModels) -> Result<()> {
        for ((name, a), (_, b)) in self.nets().iter().zip(other.nets().iter()) {
            a.check_compatible(b)
                .map_err(|e| Error::Incompatible(format!("network {name}: {e}")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptStates {
    pub g: AdamState,
    pub f: AdamState,
    pub d_x: AdamState,
    pub d_y: AdamState,
}

impl OptStates {
    pub fn new(m: &CycleModels) -> Self {
        OptStates {
            g: AdamState::for_model(&m.g),
            f: AdamState::for_model(&m.f),
            d_x: AdamState::for_model(&m.d_x),
            d_y: AdamState::for_model(&m.d_y),
        }
    }

    pub fn states(&self) -> [(&'static str, &AdamState); 4] {
        [("g", &self.g), ("f", &self.f), ("d_x", &self.d_x), ("d_y", &self.d_y)]
    }

    pub fn is_zero(&self) -> bool {
        self.states().iter().all(|(_, s)| s.is_zero())
    }
}

/// Pools of generated `X` (from `F`) and `Y` (from `G`) volumes.
#[derive(Debug, Clone)]
pub struct Pools {
    pub x: ImagePool,
    pub y: ImagePool,
}

impl Pools {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Pools {
            x: ImagePool::new(capacity, seed ^ 0x5851_f42d_4c95_7f2d),
            y: ImagePool::new(capacity, seed ^ 0x1405_7b7e_f767_814f),
        }
    }
}

fn gen_cfg(w: &ModelWeights) -> Result<&GeneratorConfig> {
    match w.architecture() {
        Architecture::Generator(c) => Ok(c),
        other => Err(Error::Incompatible(format!("expected a generator, found {other:?}"))),
    }
}

fn disc_cfg(w: &ModelWeights) -> Result<&DiscriminatorConfig> {
    match w.architecture() {
        Architecture::Discriminator(c) => Ok(c),
        other => Err(Error::Incompatible(format!(
            "expected a discriminator, found {other:?}"
        ))),
    }
}

fn apply(
    w: &mut ModelWeights,
    state: &mut AdamState,
    g: &Graph<f32>,
    bound: &Bound,
    lr: f64,
    hp: &AdamParams,
) -> Result<()> {
    let grads: Vec<Option<&[f32]>> = bound.iter().map(|(_, v)| g.grad_data(v)).collect();
    let mut params: Vec<(&str, &mut [f32])> = w.iter_mut().map(|(n, t)| (n, t.data_mut())).collect();
    state.step(&mut params, &grads, lr, hp)
}

/// LSGAN discriminator loss on a real batch and a fake batch; the fake is
/// detached so no gradient reaches whatever produced it.
pub fn discriminator_objective<T: Element>(
    g: &mut Graph<T>,
    cfg: &DiscriminatorConfig,
    d: &Bound,
    real: Var,
    fake: Var,
) -> Result<Var> {
    let fake = g.detach(fake);
    let d_real = discriminator_forward(g, cfg, d, real)?;
    let d_fake = discriminator_forward(g, cfg, d, fake)?;
    lsgan_discriminator_loss(g, d_real, d_fake)
}

fn scalar(g: &Graph<f32>, v: Var) -> f64 {
    g.value(v).item().map_or(f64::NAN, |x| x as f64)
}

fn discriminator_update(
    d: &mut ModelWeights,
    state: &mut AdamState,
    real: &Tensor<f32>,
    fake: Tensor<f32>,
    lr: f64,
    hp: &AdamParams,
    term: &str,
) -> Result<f64> {
    let cfg = disc_cfg(d)?.clone();
    let mut g = Graph::new();
    let bound = d.bind(&mut g, true);
    let real = g.constant(real.clone());
    let fake = g.constant(fake);
    let loss = discriminator_objective(&mut g, &cfg, &bound, real, fake)?;
    let value = scalar(&g, loss);
    if !value.is_finite() {
        return Err(Error::NonFinite { term: term.into() });
    }
    g.backward(loss)?;
    apply(d, state, &g, &bound, lr, hp)?;
    Ok(value)
}

/// One alternating update: both generators on the full objective, then
/// `D_Y` on real `y` against pooled `G(x)`, then `D_X` on real `x` against
/// pooled `F(y)`.
pub fn train_step(
    models: &mut CycleModels,
    opt: &mut OptStates,
    pools: &mut Pools,
    x: &Tensor<f32>,
    y: &Tensor<f32>,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<LossReport> {
    let hp = AdamParams {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps_adam,
    };
    let gcfg = gen_cfg(&models.g)?.clone();
    let fcfg = gen_cfg(&models.f)?.clone();
    let dxcfg = disc_cfg(&models.d_x)?.clone();
    let dycfg = disc_cfg(&models.d_y)?.clone();

    let mut g = Graph::new();
    let gb = models.g.bind(&mut g, true);
    let fb = models.f.bind(&mut g, true);
    let dxb = models.d_x.bind(&mut g, false);
    let dyb = models.d_y.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let yv = g.constant(y.clone());

    let gx = generator_forward(&mut g, &gcfg, &gb, xv)?;
    let fgx = generator_forward(&mut g, &fcfg, &fb, gx)?;
    let fy = generator_forward(&mut g, &fcfg, &fb, yv)?;
    let gfy = generator_forward(&mut g, &gcfg, &gb, fy)?;
    let dy_fake = discriminator_forward(&mut g, &dycfg, &dyb, gx)?;
    let dx_fake = discriminator_forward(&mut g, &dxcfg, &dxb, fy)?;
    let terms = GeneratorTerms {
        g_adv: lsgan_generator_loss(&mut g, dy_fake),
        f_adv: lsgan_generator_loss(&mut g, dx_fake),
        cycle: cycle_loss(&mut g, xv, fgx, yv, gfy)?,
        corcoe: corcoe_loss(&mut g, xv, gx, yv, fy, &cfg.corcoe)?,
    };
    let total = full_objective(&mut g, &terms, &cfg.loss_weights)?;
    let mut report = LossReport {
        g_adv: scalar(&g, terms.g_adv),
        f_adv: scalar(&g, terms.f_adv),
        cycle: scalar(&g, terms.cycle),
        corcoe: scalar(&g, terms.corcoe),
        total: scalar(&g, total),
        ..LossReport::default()
    };
    report.check_finite()?;
    g.backward(total)?;
    apply(&mut models.g, &mut opt.g, &g, &gb, lr, &hp)?;
    apply(&mut models.f, &mut opt.f, &g, &fb, lr, &hp)?;

    let fake_y = pools.y.query(g.value(gx))?;
    let fake_x = pools.x.query(g.value(fy))?;
    drop(g);

    report.d_y = discriminator_update(&mut models.d_y, &mut opt.d_y, y, fake_y, lr, &hp, "d_y")?;
    report.d_x = discriminator_update(&mut models.d_x, &mut opt.d_x, x, fake_x, lr, &hp, "d_x")?;
    Ok(report)
}

/// Inference through one generator for a `[C, D, H, W]` or `[N, C, D, H, W]`
/// tensor; the output has the input's rank.
pub fn generate(w: &ModelWeights, x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let cfg = gen_cfg(w)?.clone();
    let batched = x.rank() == 5;
    let input = if batched {
        x.clone()
    } else {
        let mut s = vec![1];
        s.extend_from_slice(x.shape());
        x.clone().reshape(s)?
    };
    let mut g = Graph::new();
    let bound = w.bind(&mut g, false);
    let xv = g.constant(input);
    let y = generator_forward(&mut g, &cfg, &bound, xv)?;
    let out = g.value(y).clone();
    if batched {
        Ok(out)
    } else {
        let s = out.shape()[1..].to_vec();
        Ok(out.reshape(s)?)
    }
}
