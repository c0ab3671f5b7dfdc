//! Generators and patch discriminators of the cycle-consistent GAN.

mod discriminator;
mod generator;
mod weights;

pub use discriminator::{build_discriminator, discriminator_forward, DiscriminatorConfig};
pub use generator::{build_generator, generator_forward, GeneratorConfig};
pub use weights::{Architecture, Bound, ModelWeights};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use voxcore::{Element, Graph, Tensor, Var};

use crate::error::Result;

pub(crate) const NORM_EPS: f64 = 1e-5;
pub(crate) const INIT_STD: f32 = 0.02;

/// Parameter initializer: Gaussian conv weights, zero biases, unit gamma and
/// zero beta. Draws happen in declaration order so a seed fixes every value.
pub(crate) struct Init {
    rng: ChaCha8Rng,
    normal: Normal<f32>,
}

impl Init {
    pub(crate) fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, INIT_STD).expect("init std"),
        }
    }

    pub(crate) fn conv(&mut self, w: &mut ModelWeights, name: &str, shape: [usize; 5], bias: usize) {
        let weight = Tensor::from_fn(&shape, |_| self.normal.sample(&mut self.rng));
        w.insert(format!("{name}.weight"), weight);
        w.insert(format!("{name}.bias"), Tensor::zeros(&[bias]));
    }

    pub(crate) fn norm(&mut self, w: &mut ModelWeights, name: &str, channels: usize) {
        w.insert(format!("{name}.gamma"), Tensor::full(&[channels], 1.0));
        w.insert(format!("{name}.beta"), Tensor::zeros(&[channels]));
    }
}

pub(crate) fn norm<T: Element>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    Ok(g.instance_norm(
        x,
        p.get(&format!("{name}.gamma"))?,
        p.get(&format!("{name}.beta"))?,
        NORM_EPS,
    )?)
}
