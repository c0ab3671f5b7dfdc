use serde::{Deserialize, Serialize};
use voxcore::{Activation, ConvSpec, Element, Graph, PaddingMode, Var};

use super::{norm, Architecture, Bound, Init, ModelWeights};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub n_res_blocks: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            in_channels: 1,
            out_channels: 1,
            base_width: 64,
            n_res_blocks: 9,
        }
    }
}

impl GeneratorConfig {
    pub fn new(channels: usize, base_width: usize, n_res_blocks: usize) -> Self {
        GeneratorConfig {
            in_channels: channels,
            out_channels: channels,
            base_width,
            n_res_blocks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels != self.out_channels || !matches!(self.in_channels, 1 | 3) {
            return Err(Error::config(
                "channels",
                format!(
                    "{} -> {}: generators map 1 -> 1 or 3 -> 3 channels",
                    self.in_channels, self.out_channels
                ),
            ));
        }
        if self.base_width == 0 {
            return Err(Error::config("base_width", "must be at least 1"));
        }
        if self.n_res_blocks == 0 {
            return Err(Error::config("n_res_blocks", "at least one residual block is required"));
        }
        Ok(())
    }

    fn layers(&self) -> Layers {
        let b = self.base_width;
        let reflect = PaddingMode::Reflect;
        Layers {
            c1: ConvSpec::cubic(self.in_channels, b, 7, 1, 3, reflect),
            d1: ConvSpec::cubic(b, 2 * b, 3, 2, 1, reflect),
            d2: ConvSpec::cubic(2 * b, 4 * b, 3, 2, 1, reflect),
            res: ConvSpec::cubic(4 * b, 4 * b, 3, 1, 1, reflect),
            u1: ConvSpec::cubic(4 * b, 2 * b, 3, 2, 1, PaddingMode::Zero).with_output_padding(1),
            u2: ConvSpec::cubic(2 * b, b, 3, 2, 1, PaddingMode::Zero).with_output_padding(1),
            out: ConvSpec::cubic(b, self.out_channels, 7, 1, 3, reflect),
        }
    }
}

struct Layers {
    c1: ConvSpec,
    d1: ConvSpec,
    d2: ConvSpec,
    res: ConvSpec,
    u1: ConvSpec,
    u2: ConvSpec,
    out: ConvSpec,
}

fn conv_shape(s: &ConvSpec) -> [usize; 5] {
    [s.out_channels, s.in_channels, s.kernel[0], s.kernel[1], s.kernel[2]]
}

fn transpose_shape(s: &ConvSpec) -> [usize; 5] {
    [s.in_channels, s.out_channels, s.kernel[0], s.kernel[1], s.kernel[2]]
}

/// c7s1 stem, two stride-2 downsampling convs, residual blocks, two
/// fractionally-strided upsampling convs and a c7s1 tanh output.
pub fn build_generator(cfg: &GeneratorConfig, seed: u64) -> Result<ModelWeights> {
    cfg.validate()?;
    let l = cfg.layers();
    let mut w = ModelWeights::empty(Architecture::Generator(cfg.clone()));
    let mut init = Init::new(seed);
    for (name, spec) in [("c1", &l.c1), ("d1", &l.d1), ("d2", &l.d2)] {
        init.conv(&mut w, name, conv_shape(spec), spec.out_channels);
        init.norm(&mut w, &format!("{name}.norm"), spec.out_channels);
    }
    for i in 0..cfg.n_res_blocks {
        for k in 1..=2 {
            init.conv(
                &mut w,
                &format!("res{i}.conv{k}"),
                conv_shape(&l.res),
                l.res.out_channels,
            );
            init.norm(&mut w, &format!("res{i}.norm{k}"), l.res.out_channels);
        }
    }
    for (name, spec) in [("u1", &l.u1), ("u2", &l.u2)] {
        init.conv(&mut w, name, transpose_shape(spec), spec.out_channels);
        init.norm(&mut w, &format!("{name}.norm"), spec.out_channels);
    }
    init.conv(&mut w, "out", conv_shape(&l.out), l.out.out_channels);
    Ok(w)
}

fn conv_block<T: Element>(g: &mut Graph<T>, p: &Bound, name: &str, spec: &ConvSpec, x: Var, act: bool) -> Result<Var> {
    let y = g.conv3d(
        x,
        p.get(&format!("{name}.weight"))?,
        Some(p.get(&format!("{name}.bias"))?),
        spec,
    )?;
    let y = norm(g, p, &format!("{name}.norm"), y)?;
    Ok(if act { g.activation(y, Activation::Relu)? } else { y })
}

/// One residual block: conv-IN-ReLU-conv-IN plus the identity skip.
pub(crate) fn res_block<T: Element>(g: &mut Graph<T>, p: &Bound, i: usize, spec: &ConvSpec, x: Var) -> Result<Var> {
    let w1 = p.get(&format!("res{i}.conv1.weight"))?;
    let b1 = p.get(&format!("res{i}.conv1.bias"))?;
    let h = g.conv3d(x, w1, Some(b1), spec)?;
    let h = norm(g, p, &format!("res{i}.norm1"), h)?;
    let h = g.activation(h, Activation::Relu)?;
    let w2 = p.get(&format!("res{i}.conv2.weight"))?;
    let b2 = p.get(&format!("res{i}.conv2.bias"))?;
    let h = g.conv3d(h, w2, Some(b2), spec)?;
    let h = norm(g, p, &format!("res{i}.norm2"), h)?;
    Ok(g.add(x, h)?)
}

/// Forward pass for `[N, C, D, H, W]` input with `D, H, W` divisible by 4.
pub fn generator_forward<T: Element>(g: &mut Graph<T>, cfg: &GeneratorConfig, p: &Bound, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 5 {
        return Err(Error::config(
            "input",
            format!("expected [N, C, D, H, W], got {shape:?}"),
        ));
    }
    if shape[1] != cfg.in_channels {
        return Err(voxcore::VoxError::Dimension {
            op: "generator",
            axis: 1,
            expected: cfg.in_channels,
            found: shape[1],
        }
        .into());
    }
    if let Some(&bad) = shape[2..].iter().find(|&&e| e % 4 != 0 || e == 0) {
        return Err(Error::config(
            "input",
            format!(
                "spatial extents {:?} must be divisible by 4 (extent {bad}); resize the volume first",
                &shape[2..]
            ),
        ));
    }
    let l = cfg.layers();
    let mut h = conv_block(g, p, "c1", &l.c1, x, true)?;
    h = conv_block(g, p, "d1", &l.d1, h, true)?;
    h = conv_block(g, p, "d2", &l.d2, h, true)?;
    for i in 0..cfg.n_res_blocks {
        h = res_block(g, p, i, &l.res, h)?;
    }
    for (name, spec) in [("u1", &l.u1), ("u2", &l.u2)] {
        h = g.conv_transpose3d(
            h,
            p.get(&format!("{name}.weight"))?,
            Some(p.get(&format!("{name}.bias"))?),
            spec,
        )?;
        h = norm(g, p, &format!("{name}.norm"), h)?;
        h = g.activation(h, Activation::Relu)?;
    }
    let y = g.conv3d(h, p.get("out.weight")?, Some(p.get("out.bias")?), &l.out)?;
    Ok(g.activation(y, Activation::Tanh)?)
}
