use super::volume::Volume;
use crate::error::{Error, Result};

/// Sample positions and weights along one axis, corner aligned: target
/// index `i` reads source coordinate `i * (n - 1) / (m - 1)`.
fn taps(n: usize, m: usize) -> Vec<(usize, usize, f64)> {
    (0..m)
        .map(|i| {
            if n == 1 {
                return (0, 0, 0.0);
            }
            let x = i as f64 * (n - 1) as f64 / (m - 1) as f64;
            let lo = (x.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            (lo, hi, x - lo as f64)
        })
        .collect()
}

fn resample_axis(src: &[f32], shape: [usize; 3], axis: usize, m: usize) -> (Vec<f32>, [usize; 3]) {
    let mut out_shape = shape;
    out_shape[axis] = m;
    let taps = taps(shape[axis], m);
    let strides = [shape[1] * shape[2], shape[2], 1];
    let mut out = Vec::with_capacity(out_shape.iter().product());
    for d in 0..out_shape[0] {
        for h in 0..out_shape[1] {
            for w in 0..out_shape[2] {
                let mut idx = [d, h, w];
                let (lo, hi, t) = taps[idx[axis]];
                idx[axis] = 0;
                let base: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
                let a = src[base + lo * strides[axis]] as f64;
                let b = src[base + hi * strides[axis]] as f64;
                out.push(if t == 0.0 { a as f32 } else { (a + (b - a) * t) as f32 });
            }
        }
    }
    (out, out_shape)
}

/// Trilinear resize with corner-aligned sampling. Spacing and affine are
/// rescaled so the corner voxels keep their world positions.
pub fn resize_trilinear(v: &Volume, target: [usize; 3]) -> Result<Volume> {
    if target.iter().any(|&t| t < 2) {
        return Err(Error::config(
            "target",
            format!("extents {target:?} must all be at least 2"),
        ));
    }
    if target == v.extents() {
        return Ok(v.clone());
    }
    let ext = v.extents();
    let mut voxels = Vec::with_capacity(v.channels() * target.iter().product::<usize>());
    for c in 0..v.channels() {
        let mut data = v.channel(c).to_vec();
        let mut shape = ext;
        for (axis, &m) in target.iter().enumerate() {
            if shape[axis] != m {
                (data, shape) = resample_axis(&data, shape, axis, m);
            }
        }
        voxels.extend(data);
    }
    let ratio: Vec<f32> = (0..3)
        .map(|k| {
            if ext[k] == 1 {
                1.0
            } else {
                (ext[k] - 1) as f32 / (target[k] - 1) as f32
            }
        })
        .collect();
    let spacing = v.spacing();
    let mut affine = v.affine();
    for row in affine.iter_mut().take(3) {
        for k in 0..3 {
            row[k] *= ratio[k];
        }
    }
    let mut out = Volume::new(target, v.channels(), voxels)?.with_intensity_range(v.intensity_range());
    out.set_geometry(
        [spacing[0] * ratio[0], spacing[1] * ratio[1], spacing[2] * ratio[2]],
        affine,
    );
    Ok(out)
}
