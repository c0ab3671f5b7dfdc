use rand::Rng;
use voxcore::Tensor;

use crate::error::{Error, Result};

/// Independent uniform draws from each domain; the two index lists share
/// nothing but the RNG stream.
pub fn sample_unpaired<R: Rng + ?Sized>(
    nx: usize,
    ny: usize,
    batch: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if nx == 0 || ny == 0 {
        return Err(Error::Data(format!("cannot sample from empty datasets ({nx}, {ny})")));
    }
    let xs = (0..batch).map(|_| rng.random_range(0..nx)).collect();
    let ys = (0..batch).map(|_| rng.random_range(0..ny)).collect();
    Ok((xs, ys))
}

/// Stack `[C, D, H, W]` volumes into an `[N, C, D, H, W]` batch.
pub fn stack_batch(items: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let owned: Vec<Tensor<f32>> = items.iter().map(|t| (*t).clone()).collect();
    Ok(Tensor::stack(&owned)?)
}
