use serde::{Deserialize, Serialize};
use voxcore::{Activation, ConvSpec, Element, Graph, PaddingMode, Var};

use super::{norm, Architecture, Bound, Init, ModelWeights};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
const STRIDES: [usize; 5] = [2, 2, 2, 1, 1];
const PADDING: [usize; 5] = [2, 2, 2, 1, 1];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub n_layers: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            in_channels: 1,
            base_width: 64,
            n_layers: 5,
        }
    }
}

impl DiscriminatorConfig {
    pub fn new(in_channels: usize, base_width: usize) -> Self {
        DiscriminatorConfig {
            in_channels,
            base_width,
            n_layers: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.in_channels, 1 | 3) {
            return Err(Error::config(
                "in_channels",
                format!("{} (expected 1 or 3)", self.in_channels),
            ));
        }
        if self.base_width == 0 {
            return Err(Error::config("base_width", "must be at least 1"));
        }
        if self.n_layers != 5 {
            return Err(Error::config(
                "n_layers",
                format!("{} (the patch discriminator has 5 layers)", self.n_layers),
            ));
        }
        Ok(())
    }

    pub fn layers(&self) -> [ConvSpec; 5] {
        let b = self.base_width;
        let ch = [self.in_channels, b, 2 * b, 4 * b, 8 * b, 1];
        std::array::from_fn(|i| ConvSpec::cubic(ch[i], ch[i + 1], 4, STRIDES[i], PADDING[i], PaddingMode::Zero))
    }

    /// Spatial extents of the patch score map for a given input.
    pub fn output_extents(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut e = input;
        for spec in self.layers() {
            e = spec.conv_output(e)?;
        }
        Ok(e)
    }
}

pub fn build_discriminator(cfg: &DiscriminatorConfig, seed: u64) -> Result<ModelWeights> {
    cfg.validate()?;
    let mut w = ModelWeights::empty(Architecture::Discriminator(cfg.clone()));
    let mut init = Init::new(seed);
    for (i, spec) in cfg.layers().iter().enumerate() {
        let name = format!("l{}", i + 1);
        init.conv(
            &mut w,
            &name,
            [spec.out_channels, spec.in_channels, 4, 4, 4],
            spec.out_channels,
        );
        if (1..4).contains(&i) {
            init.norm(&mut w, &format!("{name}.norm"), spec.out_channels);
        }
    }
    Ok(w)
}

/// Patch score map; raw scores, no sigmoid.
pub fn discriminator_forward<T: Element>(
    g: &mut Graph<T>,
    cfg: &DiscriminatorConfig,
    p: &Bound,
    v: Var,
) -> Result<Var> {
    let mut h = v;
    for (i, spec) in cfg.layers().iter().enumerate() {
        let name = format!("l{}", i + 1);
        h = g.conv3d(
            h,
            p.get(&format!("{name}.weight"))?,
            Some(p.get(&format!("{name}.bias"))?),
            spec,
        )?;
        if (1..4).contains(&i) {
            h = norm(g, p, &format!("{name}.norm"), h)?;
        }
        if i < 4 {
            h = g.activation(h, Activation::LeakyRelu(LEAKY_SLOPE))?;
        }
    }
    Ok(h)
}
