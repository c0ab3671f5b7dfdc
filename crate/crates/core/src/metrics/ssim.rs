use voxcore::avg_pool2_forward;

use super::{check_pair, MetricWindow};
use crate::data::Volume;
use crate::error::{Error, Result};

/// Per-scale exponents of the five-scale metric; they sum to 1.0001 and are
/// renormalized before use.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

const RANGE_TOL: f64 = 1e-6;

/// Valid-region filtering along one axis.
fn filter_axis(x: &[f64], ext: [usize; 3], axis: usize, w: &[f64]) -> (Vec<f64>, [usize; 3]) {
    let mut out_ext = ext;
    out_ext[axis] = ext[axis] + 1 - w.len();
    let strides = [ext[1] * ext[2], ext[2], 1];
    let step = strides[axis];
    let mut out = Vec::with_capacity(out_ext.iter().product());
    for d in 0..out_ext[0] {
        for h in 0..out_ext[1] {
            let row = d * strides[0] + h * strides[1];
            for q in 0..out_ext[2] {
                let base = row + q;
                let s: f64 = w.iter().enumerate().map(|(i, wi)| wi * x[base + i * step]).sum();
                out.push(s);
            }
        }
    }
    (out, out_ext)
}

fn local_mean(x: &[f64], ext: [usize; 3], w: &[f64]) -> (Vec<f64>, [usize; 3]) {
    let (a, e) = filter_axis(x, ext, 0, w);
    let (b, e) = filter_axis(&a, e, 1, w);
    filter_axis(&b, e, 2, w)
}

struct Maps {
    ext: [usize; 3],
    lum: Vec<f64>,
    cs: Vec<f64>,
}

fn ssim_maps(a: &[f64], b: &[f64], ext: [usize; 3], win: &MetricWindow) -> Result<Maps> {
    if ext.iter().any(|&e| e < win.extent) {
        return Err(Error::Metric(format!(
            "volume {ext:?} is smaller than the {}^3 window",
            win.extent
        )));
    }
    let w = win.weights_1d();
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let (mu_a, oe) = local_mean(a, ext, &w);
    let (mu_b, _) = local_mean(b, ext, &w);
    let (eaa, _) = local_mean(&sq(a, a), ext, &w);
    let (ebb, _) = local_mean(&sq(b, b), ext, &w);
    let (eab, _) = local_mean(&sq(a, b), ext, &w);
    let (c1, c2) = (win.c1(), win.c2());
    let n = mu_a.len();
    let mut lum = Vec::with_capacity(n);
    let mut cs = Vec::with_capacity(n);
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let saa = eaa[i] - ma * ma;
        let sbb = ebb[i] - mb * mb;
        let sab = eab[i] - ma * mb;
        lum.push((2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1));
        cs.push((2.0 * sab + c2) / (saa + sbb + c2));
    }
    Ok(Maps { ext: oe, lum, cs })
}

/// Mean of `values(i)` over output positions whose window center is
/// selected. `sel` covers the full grid `full`.
fn mean_centered(
    maps: &Maps,
    full: [usize; 3],
    r: usize,
    sel: Option<&[bool]>,
    value: impl Fn(usize) -> f64,
) -> Result<f64> {
    let [od, oh, ow] = maps.ext;
    let mut sum = 0.0;
    let mut n = 0usize;
    for d in 0..od {
        for h in 0..oh {
            for w in 0..ow {
                let i = (d * oh + h) * ow + w;
                let keep = sel.is_none_or(|s| s[((d + r) * full[1] + h + r) * full[2] + w + r]);
                if keep {
                    sum += value(i);
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::Metric("no window is centered on a selected voxel".into()));
    }
    Ok(sum / n as f64)
}

fn check_range(v: &Volume, win: &MetricWindow) -> Result<()> {
    let hi = win.dynamic_range;
    if let Some(bad) = v
        .voxels()
        .iter()
        .find(|&&x| !((x as f64) >= -RANGE_TOL && (x as f64) <= hi + RANGE_TOL))
    {
        return Err(Error::Range(format!("{bad} outside the dynamic range [0, {hi}]")));
    }
    Ok(())
}

fn prepare(a: &Volume, b: &Volume, win: &MetricWindow, sel: Option<&[bool]>) -> Result<()> {
    win.validate()?;
    check_pair(a, b)?;
    check_range(a, win)?;
    check_range(b, win)?;
    if let Some(s) = sel {
        if s.len() != a.spatial_len() {
            return Err(Error::Metric(format!(
                "selection of {} voxels for a {:?} grid",
                s.len(),
                a.extents()
            )));
        }
        if !s.iter().any(|&x| x) {
            return Err(Error::Metric("empty voxel selection".into()));
        }
    }
    Ok(())
}

fn channel_f64(v: &Volume, c: usize) -> Vec<f64> {
    v.channel(c).iter().map(|&x| x as f64).collect()
}

/// Windowed SSIM averaged over valid window positions (and over channels).
pub fn ssim3d(a: &Volume, b: &Volume, win: &MetricWindow) -> Result<f64> {
    ssim3d_masked(a, b, win, None)
}

/// SSIM restricted to windows whose center voxel is selected; each window
/// still uses its full support.
pub fn ssim3d_masked(a: &Volume, b: &Volume, win: &MetricWindow, sel: Option<&[bool]>) -> Result<f64> {
    prepare(a, b, win, sel)?;
    let r = win.extent / 2;
    let mut total = 0.0;
    for c in 0..a.channels() {
        let maps = ssim_maps(&channel_f64(a, c), &channel_f64(b, c), a.extents(), win)?;
        total += mean_centered(&maps, a.extents(), r, sel, |i| maps.lum[i] * maps.cs[i])?;
    }
    Ok(total / a.channels() as f64)
}

fn usable_scales(ext: [usize; 3], extent: usize, max: usize) -> usize {
    let mut e = ext;
    let mut m = 0;
    while m < max && e.iter().all(|&x| x >= extent) {
        m += 1;
        e = e.map(|x| x / 2);
    }
    m
}

fn pool_any(sel: &[bool], ext: [usize; 3]) -> Vec<bool> {
    let as_f: Vec<f64> = sel.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
    avg_pool2_forward(&as_f, 1, ext).into_iter().map(|v| v > 0.0).collect()
}

pub fn ms_ssim3d(a: &Volume, b: &Volume, win: &MetricWindow, weights: &[f64]) -> Result<f64> {
    ms_ssim3d_masked(a, b, win, weights, None)
}

/// Multi-scale SSIM: contrast-structure means at every scale but the
/// coarsest, full SSIM at the coarsest, combined as a weighted geometric
/// product. Scales that would fall below the window are dropped and the
/// remaining weights renormalized. With more than one scale, negative
/// per-scale values are clamped to 0. The selection is carried to coarser
/// scales by marking a voxel selected if any voxel it pools is.
pub fn ms_ssim3d_masked(
    a: &Volume,
    b: &Volume,
    win: &MetricWindow,
    weights: &[f64],
    sel: Option<&[bool]>,
) -> Result<f64> {
    prepare(a, b, win, sel)?;
    if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::config("weights", "need at least one non-negative scale weight"));
    }
    let m = usable_scales(a.extents(), win.extent, weights.len());
    if m == 0 {
        return Err(Error::Metric(format!(
            "volume {:?} is smaller than the {}^3 window",
            a.extents(),
            win.extent
        )));
    }
    let wsum: f64 = weights[..m].iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::config("weights", "usable scale weights sum to 0"));
    }
    let alpha: Vec<f64> = weights[..m].iter().map(|w| w / wsum).collect();
    let r = win.extent / 2;
    let mut total = 0.0;
    for c in 0..a.channels() {
        let mut xa = channel_f64(a, c);
        let mut xb = channel_f64(b, c);
        let mut ext = a.extents();
        let mut s = sel.map(<[bool]>::to_vec);
        let mut prod = 1.0;
        for (j, &aj) in alpha.iter().enumerate() {
            let maps = ssim_maps(&xa, &xb, ext, win)?;
            let last = j + 1 == m;
            let mut v = if last {
                mean_centered(&maps, ext, r, s.as_deref(), |i| maps.lum[i] * maps.cs[i])?
            } else {
                mean_centered(&maps, ext, r, s.as_deref(), |i| maps.cs[i])?
            };
            if m > 1 {
                v = v.max(0.0);
            }
            prod *= if aj == 1.0 { v } else { v.powf(aj) };
            if !last {
                xa = avg_pool2_forward(&xa, 1, ext);
                xb = avg_pool2_forward(&xb, 1, ext);
                s = s.map(|s| pool_any(&s, ext));
                ext = ext.map(|e| e / 2);
            }
        }
        total += prod;
    }
    Ok(total / a.channels() as f64)
}
