use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxcore::Tensor;

use super::{generate, lr_at_epoch, train_step, Checkpoint, CycleModels, OptStates, Pools, TrainConfig};
use crate::error::{Error, Result};
use crate::losses::{pearson, LossReport};

/// A model-range (`[-1, 1]`) `[C, D, H, W]` training volume.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedVolume {
    pub id: String,
    pub data: Tensor<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over the epoch's steps.
    pub losses: LossReport,
    pub lr: f64,
}

pub enum TrainEvent<'a> {
    Step {
        epoch: usize,
        step: usize,
        report: &'a LossReport,
    },
    Epoch(&'a EpochLog),
    /// Emitted every `checkpoint_interval` epochs and after the last one.
    Checkpoint {
        checkpoint: &'a Checkpoint,
        last: bool,
    },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

fn check_shapes(set: &[NamedVolume], cfg: &TrainConfig, domain: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::Data(format!("domain {domain} has no volumes")));
    }
    let [d, h, w] = cfg.volume_shape;
    let want = [cfg.channels, d, h, w];
    for v in set {
        if v.data.shape() != want {
            return Err(Error::Data(format!(
                "volume `{}` in domain {domain} has shape {:?}, expected {want:?}",
                v.id,
                v.data.shape()
            )));
        }
    }
    Ok(())
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Index pairs for one epoch: a shuffled pass over the smaller domain, each
/// sample partnered with a uniform draw from the other.
fn epoch_pairs(nx: usize, ny: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let x_small = nx <= ny;
    let (n_small, n_big) = if x_small { (nx, ny) } else { (ny, nx) };
    let mut order: Vec<usize> = (0..n_small).collect();
    order.shuffle(rng);
    order
        .into_iter()
        .map(|i| {
            let j = rng.random_range(0..n_big);
            if x_small {
                (i, j)
            } else {
                (j, i)
            }
        })
        .collect()
}

fn batch(set: &[NamedVolume], idx: impl Iterator<Item = usize>) -> Result<Tensor<f32>> {
    let items: Vec<Tensor<f32>> = idx.map(|i| set[i].data.clone()).collect();
    Ok(Tensor::stack(&items)?)
}

fn run(
    mut models: CycleModels,
    mut optim: OptStates,
    start_epoch: usize,
    x: &[NamedVolume],
    y: &[NamedVolume],
    cfg: &TrainConfig,
    sink: &mut dyn FnMut(TrainEvent) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_shapes(x, cfg, "X")?;
    check_shapes(y, cfg, "Y")?;
    if start_epoch > cfg.epochs {
        return Err(Error::config(
            "epoch",
            format!("checkpoint epoch {start_epoch} exceeds epochs {}", cfg.epochs),
        ));
    }
    let mut pools = Pools::new(
        cfg.pool_size,
        cfg.seed ^ (start_epoch as u64).wrapping_mul(0xd6e8_feb8_6659_fd93),
    );
    let mut log = Vec::with_capacity(cfg.epochs - start_epoch);
    let mut last = None;
    for epoch in start_epoch..cfg.epochs {
        let lr = lr_at_epoch(epoch, cfg)?;
        let mut rng = epoch_rng(cfg.seed, epoch);
        let pairs = epoch_pairs(x.len(), y.len(), &mut rng);
        let steps = (pairs.len() / cfg.batch_size).max(1);
        let mut reports = Vec::with_capacity(steps);
        for step in 0..steps {
            let chunk: Vec<(usize, usize)> = pairs
                .iter()
                .cycle()
                .skip(step * cfg.batch_size)
                .take(cfg.batch_size)
                .copied()
                .collect();
            let bx = batch(x, chunk.iter().map(|p| p.0))?;
            let by = batch(y, chunk.iter().map(|p| p.1))?;
            let report = train_step(&mut models, &mut optim, &mut pools, &bx, &by, cfg, lr)?;
            sink(TrainEvent::Step {
                epoch,
                step,
                report: &report,
            })?;
            reports.push(report);
        }
        let entry = EpochLog {
            epoch,
            losses: LossReport::mean(&reports),
            lr,
        };
        sink(TrainEvent::Epoch(&entry))?;
        log.push(entry);
        let done = epoch + 1;
        if done % cfg.checkpoint_interval == 0 || done == cfg.epochs {
            let ck = Checkpoint {
                models: models.clone(),
                optim: optim.clone(),
                epoch: done,
                config: cfg.clone(),
            };
            sink(TrainEvent::Checkpoint {
                checkpoint: &ck,
                last: done == cfg.epochs,
            })?;
            last = Some(ck);
        }
    }
    let checkpoint = last.unwrap_or(Checkpoint {
        models,
        optim,
        epoch: start_epoch,
        config: cfg.clone(),
    });
    Ok(TrainOutcome { checkpoint, log })
}

/// Train from scratch, or continue a checkpoint with its optimizer state
/// and epoch counter.
pub fn train(
    x: &[NamedVolume],
    y: &[NamedVolume],
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
    sink: &mut dyn FnMut(TrainEvent) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let fresh = CycleModels::build(cfg)?;
    match resume {
        Some(ck) => {
            fresh.check_compatible(&ck.models)?;
            run(ck.models, ck.optim, ck.epoch, x, y, cfg, sink)
        }
        None => {
            let optim = OptStates::new(&fresh);
            run(fresh, optim, 0, x, y, cfg, sink)
        }
    }
}

/// Start from pretrained networks with zeroed optimizer state and a fresh
/// schedule at epoch 0.
pub fn fine_tune(
    pretrained: &Checkpoint,
    x: &[NamedVolume],
    y: &[NamedVolume],
    cfg: &TrainConfig,
    sink: &mut dyn FnMut(TrainEvent) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let fresh = CycleModels::build(cfg)?;
    fresh.check_compatible(&pretrained.models)?;
    let models = pretrained.models.clone();
    let optim = OptStates::new(&models);
    run(models, optim, 0, x, y, cfg, sink)
}

pub const LOSS_CSV_HEADER: &str = "epoch,g_adv,f_adv,d_x,d_y,cycle,corcoe,total,lr";

pub fn write_loss_csv<W: Write>(log: &[EpochLog], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{LOSS_CSV_HEADER}")?;
    for e in log {
        let l = &e.losses;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            e.epoch, l.g_adv, l.f_adv, l.d_x, l.d_y, l.cycle, l.corcoe, l.total, e.lr
        )?;
    }
    Ok(())
}

pub fn read_loss_csv<R: BufRead>(input: R) -> Result<Vec<EpochLog>> {
    let mut lines = input.lines();
    let header = lines.next().transpose().map_err(|e| Error::io("loss log", e))?;
    if header.as_deref() != Some(LOSS_CSV_HEADER) {
        return Err(Error::Data(format!("loss log header {header:?}")));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io("loss log", e))?;
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || Error::Data(format!("loss log line {}: `{line}`", i + 2));
        if cols.len() != 9 {
            return Err(bad());
        }
        let f: Vec<f64> = cols[1..]
            .iter()
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        out.push(EpochLog {
            epoch: cols[0].parse().map_err(|_| bad())?,
            losses: LossReport {
                g_adv: f[0],
                f_adv: f[1],
                d_x: f[2],
                d_y: f[3],
                cycle: f[4],
                corcoe: f[5],
                total: f[6],
            },
            lr: f[7],
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeldOutStats {
    /// Mean over pairs of `mae(F(G(x)), x) + mae(G(F(y)), y)`.
    pub cycle: f64,
    /// Mean exact correlation between `G(x)` and `x`.
    pub pearson_gx_x: f64,
    /// Mean exact correlation between `F(y)` and `y`.
    pub pearson_fy_y: f64,
}

fn mae(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| (*p as f64 - *q as f64).abs())
        .sum();
    s / a.numel() as f64
}

/// Cycle error and input-output correlation on volumes not used for
/// training. `x[i]` is paired with `y[i]` only to average; domains stay
/// independent in every term.
pub fn evaluate_held_out(models: &CycleModels, x: &[NamedVolume], y: &[NamedVolume]) -> Result<HeldOutStats> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Data(format!(
            "held-out sets of {} and {} volumes",
            x.len(),
            y.len()
        )));
    }
    let (mut cycle, mut px, mut py) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let gx = generate(&models.g, &a.data)?;
        let fgx = generate(&models.f, &gx)?;
        let fy = generate(&models.f, &b.data)?;
        let gfy = generate(&models.g, &fy)?;
        cycle += mae(&fgx, &a.data) + mae(&gfy, &b.data);
        px += pearson(gx.data(), a.data.data())?;
        py += pearson(fy.data(), b.data.data())?;
    }
    let n = x.len() as f64;
    Ok(HeldOutStats {
        cycle: cycle / n,
        pearson_gx_x: px / n,
        pearson_fy_y: py / n,
    })
}
