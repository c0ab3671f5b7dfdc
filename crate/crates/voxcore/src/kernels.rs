//! Raw buffer kernels behind the graph ops. Everything here works on
//! row-major `[N, C, D, H, W]` slices; shape checking happens in the graph.

use crate::element::Element;
use crate::parallel;

/// Upper bound on im2col scratch elements per slab.
const SLAB_BUDGET: usize = 1 << 20;
/// Stride-1 convolutions with at most this many output channels skip
/// im2col: the patch matrix would be as large as the arithmetic.
const DIRECT_MAX_CO: usize = 8;
/// Flat-span elements per task on the direct path.
const DIRECT_CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub ci: usize,
    pub co: usize,
    /// Input extents, already padded.
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    pub fn new(n: usize, ci: usize, co: usize, input: [usize; 3], kernel: [usize; 3], stride: [usize; 3]) -> Self {
        let output = [0, 1, 2].map(|a| (input[a] - kernel[a]) / stride[a] + 1);
        ConvGeom {
            n,
            ci,
            co,
            input,
            kernel,
            stride,
            output,
        }
    }

    fn col_rows(&self) -> usize {
        self.ci * self.kernel.iter().product::<usize>()
    }

    fn in_vol(&self) -> usize {
        self.input.iter().product()
    }

    fn out_vol(&self) -> usize {
        self.output.iter().product()
    }

    fn plane(&self) -> usize {
        self.output[1] * self.output[2]
    }

    /// Output depth rows per slab. Independent of the thread count so that
    /// partial sums are always formed the same way.
    fn slab_depth(&self) -> usize {
        let per_row = self.col_rows() * self.plane();
        (SLAB_BUDGET / per_row.max(1)).clamp(1, self.output[0])
    }

    fn slabs(&self) -> Vec<(usize, usize)> {
        let step = self.slab_depth();
        (0..self.output[0])
            .step_by(step)
            .map(|d0| (d0, (d0 + step).min(self.output[0])))
            .collect()
    }

    pub fn weight_len(&self) -> usize {
        self.co * self.col_rows()
    }

    fn direct(&self) -> bool {
        self.stride == [1; 3] && self.co <= DIRECT_MAX_CO
    }

    /// On the direct path outputs live on the padded input grid: output
    /// `(d, h, w)` sits at flat index `(d * Hp + h) * Wp + w`, and kernel tap
    /// `(a, b, e)` reads `off = (a * Hp + b) * Wp + e` further on. This is the
    /// length of the flat range that covers every valid output.
    fn flat_span(&self) -> usize {
        let [_, ih, iw] = self.input;
        let [od, oh, ow] = self.output;
        ((od - 1) * ih + oh - 1) * iw + ow
    }

    fn tap_offsets(&self) -> Vec<usize> {
        let [_, ih, iw] = self.input;
        let [kd, kh, kw] = self.kernel;
        let mut offs = Vec::with_capacity(kd * kh * kw);
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    offs.push((a * ih + b) * iw + e);
                }
            }
        }
        offs
    }

    /// Output index for flat position `q`, if `q` is a valid output.
    fn flat_to_output(&self, q: usize) -> Option<usize> {
        let [_, ih, iw] = self.input;
        let [od, oh, ow] = self.output;
        let (d, r) = (q / (ih * iw), q % (ih * iw));
        let (h, w) = (r / iw, r % iw);
        (d < od && h < oh && w < ow).then_some((d * oh + h) * ow + w)
    }

    /// `[co, out_vol]` gradient spread onto `[co, flat_span]`, zero elsewhere.
    fn spread<T: Element>(&self, gy: &[T]) -> Vec<T> {
        let span = self.flat_span();
        let ov = self.out_vol();
        let mut out = vec![T::zero(); self.co * span];
        for c in 0..self.co {
            for q in 0..span {
                if let Some(o) = self.flat_to_output(q) {
                    out[c * span + q] = gy[c * ov + o];
                }
            }
        }
        out
    }
}

fn chunks(len: usize) -> Vec<(usize, usize)> {
    (0..len)
        .step_by(DIRECT_CHUNK)
        .map(|s| (s, (s + DIRECT_CHUNK).min(len)))
        .collect()
}

fn axpy<T: Element>(acc: &mut [T], a: T, x: &[T]) {
    for (y, v) in acc.iter_mut().zip(x) {
        *y += a * *v;
    }
}

/// Dot product with eight interleaved partial sums in a fixed order.
fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    let mut s = lanes.iter().copied().fold(T::zero(), |s, v| s + v);
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

fn conv_forward_direct<T: Element>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (iv, ov, k) = (g.in_vol(), g.out_vol(), g.col_rows());
    let offs = g.tap_offsets();
    let parts_of = chunks(g.flat_span());
    let mut y = vec![T::zero(); g.n * g.co * ov];
    for n in 0..g.n {
        let xn = &x[n * g.ci * iv..(n + 1) * g.ci * iv];
        let parts = parallel::map_indexed(g.co * parts_of.len(), |t| {
            let c = t / parts_of.len();
            let (q0, q1) = parts_of[t % parts_of.len()];
            let mut acc = vec![T::zero(); q1 - q0];
            for ci in 0..g.ci {
                let xc = &xn[ci * iv..(ci + 1) * iv];
                for (o, &off) in offs.iter().enumerate() {
                    axpy(&mut acc, w[c * k + ci * offs.len() + o], &xc[q0 + off..q1 + off]);
                }
            }
            acc
        });
        let yn = &mut y[n * g.co * ov..(n + 1) * g.co * ov];
        for (t, part) in parts.into_iter().enumerate() {
            let c = t / parts_of.len();
            let q0 = parts_of[t % parts_of.len()].0;
            let b = bias.map_or(T::zero(), |b| b[c]);
            for (i, v) in part.into_iter().enumerate() {
                if let Some(o) = g.flat_to_output(q0 + i) {
                    yn[c * ov + o] = v + b;
                }
            }
        }
    }
    y
}

fn conv_backward_input_direct<T: Element>(g: &ConvGeom, w: &[T], gy: &[T]) -> Vec<T> {
    let (iv, ov, k, span) = (g.in_vol(), g.out_vol(), g.col_rows(), g.flat_span());
    let offs = g.tap_offsets();
    let parts_of = chunks(iv);
    let mut gx = vec![T::zero(); g.n * g.ci * iv];
    for n in 0..g.n {
        let gyf = g.spread(&gy[n * g.co * ov..(n + 1) * g.co * ov]);
        let parts = parallel::map_indexed(g.ci * parts_of.len(), |t| {
            let ci = t / parts_of.len();
            let (p0, p1) = parts_of[t % parts_of.len()];
            let mut acc = vec![T::zero(); p1 - p0];
            for c in 0..g.co {
                let gc = &gyf[c * span..(c + 1) * span];
                for (o, &off) in offs.iter().enumerate() {
                    let lo = p0.max(off);
                    let hi = p1.min(off + span);
                    if lo < hi {
                        axpy(
                            &mut acc[lo - p0..hi - p0],
                            w[c * k + ci * offs.len() + o],
                            &gc[lo - off..hi - off],
                        );
                    }
                }
            }
            acc
        });
        for (t, part) in parts.into_iter().enumerate() {
            let ci = t / parts_of.len();
            let p0 = parts_of[t % parts_of.len()].0;
            let base = (n * g.ci + ci) * iv + p0;
            gx[base..base + part.len()].copy_from_slice(&part);
        }
    }
    gx
}

fn conv_backward_weight_direct<T: Element>(g: &ConvGeom, x: &[T], gy: &[T]) -> Vec<T> {
    let (iv, ov, span) = (g.in_vol(), g.out_vol(), g.flat_span());
    let offs = g.tap_offsets();
    let mut gw = vec![T::zero(); g.weight_len()];
    for n in 0..g.n {
        let xn = &x[n * g.ci * iv..(n + 1) * g.ci * iv];
        let gyf = g.spread(&gy[n * g.co * ov..(n + 1) * g.co * ov]);
        let parts = parallel::map_indexed(g.co * g.ci, |t| {
            let (c, ci) = (t / g.ci, t % g.ci);
            let gc = &gyf[c * span..(c + 1) * span];
            let xc = &xn[ci * iv..(ci + 1) * iv];
            offs.iter()
                .map(|&off| dot(gc, &xc[off..off + span]))
                .collect::<Vec<T>>()
        });
        for (t, part) in parts.into_iter().enumerate() {
            let base = t * offs.len();
            for (a, b) in gw[base..base + part.len()].iter_mut().zip(part) {
                *a += b;
            }
        }
    }
    gw
}

/// Gather input patches for output depth rows `[d0, d1)` into `col`, laid out
/// as `[ci * kd * kh * kw, rows * Ho * Wo]`.
fn im2col<T: Element>(g: &ConvGeom, x: &[T], d0: usize, d1: usize, col: &mut [T]) {
    let [_, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [_, oh, ow] = g.output;
    let ps = (d1 - d0) * oh * ow;
    let mut row = 0;
    for c in 0..g.ci {
        let xc = &x[c * g.in_vol()..(c + 1) * g.in_vol()];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let dst = &mut col[row * ps..(row + 1) * ps];
                    let mut p = 0;
                    for od in d0..d1 {
                        let zd = od * sd + a;
                        for oy in 0..oh {
                            let base = (zd * ih + oy * sh + b) * iw + e;
                            if sw == 1 {
                                dst[p..p + ow].copy_from_slice(&xc[base..base + ow]);
                            } else {
                                for ox in 0..ow {
                                    dst[p + ox] = xc[base + ox * sw];
                                }
                            }
                            p += ow;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Scatter-add of [`im2col`]'s layout back into an input-shaped buffer.
fn col2im<T: Element>(g: &ConvGeom, col: &[T], d0: usize, d1: usize, gx: &mut [T]) {
    let [_, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [_, oh, ow] = g.output;
    let ps = (d1 - d0) * oh * ow;
    let mut row = 0;
    for c in 0..g.ci {
        let gc = &mut gx[c * g.in_vol()..(c + 1) * g.in_vol()];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let src = &col[row * ps..(row + 1) * ps];
                    let mut p = 0;
                    for od in d0..d1 {
                        let zd = od * sd + a;
                        for oy in 0..oh {
                            let base = (zd * ih + oy * sh + b) * iw + e;
                            if sw == 1 {
                                for (d, s) in gc[base..base + ow].iter_mut().zip(&src[p..p + ow]) {
                                    *d += *s;
                                }
                            } else {
                                for ox in 0..ow {
                                    gc[base + ox * sw] += src[p + ox];
                                }
                            }
                            p += ow;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Valid (unpadded) strided cross-correlation.
pub(crate) fn conv_forward<T: Element>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    if g.direct() {
        return conv_forward_direct(g, x, w, bias);
    }
    let k = g.col_rows();
    let ov = g.out_vol();
    let plane = g.plane();
    let slabs = g.slabs();
    let mut y = vec![T::zero(); g.n * g.co * ov];
    for n in 0..g.n {
        let xn = &x[n * g.ci * g.in_vol()..(n + 1) * g.ci * g.in_vol()];
        let parts = parallel::map_indexed(slabs.len(), |s| {
            let (d0, d1) = slabs[s];
            let ps = (d1 - d0) * plane;
            let mut col = vec![T::zero(); k * ps];
            im2col(g, xn, d0, d1, &mut col);
            let mut out = vec![T::zero(); g.co * ps];
            T::gemm(
                g.co,
                k,
                ps,
                w,
                k as isize,
                1,
                &col,
                ps as isize,
                1,
                T::zero(),
                &mut out,
                ps as isize,
                1,
            );
            out
        });
        let yn = &mut y[n * g.co * ov..(n + 1) * g.co * ov];
        for ((d0, d1), part) in slabs.iter().zip(parts) {
            let ps = (d1 - d0) * plane;
            for c in 0..g.co {
                let dst = &mut yn[c * ov + d0 * plane..c * ov + d0 * plane + ps];
                dst.copy_from_slice(&part[c * ps..(c + 1) * ps]);
            }
        }
        if let Some(b) = bias {
            for c in 0..g.co {
                let bc = b[c];
                yn[c * ov..(c + 1) * ov].iter_mut().for_each(|v| *v += bc);
            }
        }
    }
    y
}

/// Gradient of [`conv_forward`] with respect to its input. This is also the
/// forward pass of the transposed convolution.
pub(crate) fn conv_backward_input<T: Element>(g: &ConvGeom, w: &[T], gy: &[T]) -> Vec<T> {
    if g.direct() {
        return conv_backward_input_direct(g, w, gy);
    }
    let k = g.col_rows();
    let ov = g.out_vol();
    let iv = g.in_vol();
    let plane = g.plane();
    let slabs = g.slabs();
    let group = parallel::workers().max(1);
    let mut gx = vec![T::zero(); g.n * g.ci * iv];
    for n in 0..g.n {
        let gyn = &gy[n * g.co * ov..(n + 1) * g.co * ov];
        let gxn = &mut gx[n * g.ci * iv..(n + 1) * g.ci * iv];
        for chunk in slabs.chunks(group) {
            let cols = parallel::map_indexed(chunk.len(), |s| {
                let (d0, d1) = chunk[s];
                let ps = (d1 - d0) * plane;
                let mut col = vec![T::zero(); k * ps];
                // col = W^T [k, co] x gy_slab [co, ps]
                let off = d0 * plane;
                T::gemm(
                    k,
                    g.co,
                    ps,
                    w,
                    1,
                    k as isize,
                    &gyn[off..],
                    ov as isize,
                    1,
                    T::zero(),
                    &mut col,
                    ps as isize,
                    1,
                );
                col
            });
            for ((d0, d1), col) in chunk.iter().zip(cols) {
                col2im(g, &col, *d0, *d1, gxn);
            }
        }
    }
    gx
}

/// Gradient of [`conv_forward`] with respect to its weight.
pub(crate) fn conv_backward_weight<T: Element>(g: &ConvGeom, x: &[T], gy: &[T]) -> Vec<T> {
    if g.direct() {
        return conv_backward_weight_direct(g, x, gy);
    }
    let k = g.col_rows();
    let ov = g.out_vol();
    let plane = g.plane();
    let slabs = g.slabs();
    let mut gw = vec![T::zero(); g.weight_len()];
    for n in 0..g.n {
        let xn = &x[n * g.ci * g.in_vol()..(n + 1) * g.ci * g.in_vol()];
        let gyn = &gy[n * g.co * ov..(n + 1) * g.co * ov];
        let parts = parallel::map_indexed(slabs.len(), |s| {
            let (d0, d1) = slabs[s];
            let ps = (d1 - d0) * plane;
            let mut col = vec![T::zero(); k * ps];
            im2col(g, xn, d0, d1, &mut col);
            let mut part = vec![T::zero(); g.co * k];
            // part = gy_slab [co, ps] x col^T [ps, k]
            let off = d0 * plane;
            T::gemm(
                g.co,
                ps,
                k,
                &gyn[off..],
                ov as isize,
                1,
                &col,
                1,
                ps as isize,
                T::zero(),
                &mut part,
                k as isize,
                1,
            );
            part
        });
        for part in parts {
            for (a, b) in gw.iter_mut().zip(&part) {
                *a += *b;
            }
        }
    }
    gw
}

/// Per-channel sum over batch and space, `[N, C, V] -> [C]`.
pub(crate) fn channel_sum<T: Element>(data: &[T], n: usize, c: usize, vol: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for s in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let base = (s * c + ch) * vol;
            *o += data[base..base + vol].iter().copied().sum::<T>();
        }
    }
    out
}

/// Zero padding (positive) or cropping (negative) per spatial side.
pub(crate) fn pad_zero<T: Element>(
    x: &[T],
    planes: usize,
    ext: [usize; 3],
    pads: [(isize, isize); 3],
) -> (Vec<T>, [usize; 3]) {
    let out_ext = [0, 1, 2].map(|a| (ext[a] as isize + pads[a].0 + pads[a].1) as usize);
    let iv: usize = ext.iter().product();
    let ov: usize = out_ext.iter().product();
    let mut y = vec![T::zero(); planes * ov];
    for_each_overlap(ext, out_ext, pads, |src, dst, len| {
        for p in 0..planes {
            y[p * ov + dst..p * ov + dst + len].copy_from_slice(&x[p * iv + src..p * iv + src + len]);
        }
    });
    (y, out_ext)
}

/// Adjoint of [`pad_zero`]: crop the padded gradient back to `ext`.
pub(crate) fn pad_zero_backward<T: Element>(
    gy: &[T],
    planes: usize,
    ext: [usize; 3],
    pads: [(isize, isize); 3],
) -> Vec<T> {
    let out_ext = [0, 1, 2].map(|a| (ext[a] as isize + pads[a].0 + pads[a].1) as usize);
    let iv: usize = ext.iter().product();
    let ov: usize = out_ext.iter().product();
    let mut gx = vec![T::zero(); planes * iv];
    for_each_overlap(ext, out_ext, pads, |src, dst, len| {
        for p in 0..planes {
            gx[p * iv + src..p * iv + src + len].copy_from_slice(&gy[p * ov + dst..p * ov + dst + len]);
        }
    });
    gx
}

/// Visit contiguous W-runs shared by the input and its padded/cropped image.
fn for_each_overlap(
    ext: [usize; 3],
    out_ext: [usize; 3],
    pads: [(isize, isize); 3],
    mut f: impl FnMut(usize, usize, usize),
) {
    let range = |a: usize| {
        let lo = pads[a].0.max(0) as usize;
        let hi = (ext[a] as isize + pads[a].0).min(out_ext[a] as isize).max(0) as usize;
        (lo, hi)
    };
    let (d_lo, d_hi) = range(0);
    let (h_lo, h_hi) = range(1);
    let (w_lo, w_hi) = range(2);
    if w_hi <= w_lo {
        return;
    }
    let len = w_hi - w_lo;
    for od in d_lo..d_hi {
        let id = (od as isize - pads[0].0) as usize;
        for oh in h_lo..h_hi {
            let ih = (oh as isize - pads[1].0) as usize;
            let iw = (w_lo as isize - pads[2].0) as usize;
            let src = (id * ext[1] + ih) * ext[2] + iw;
            let dst = (od * out_ext[1] + oh) * out_ext[2] + w_lo;
            f(src, dst, len);
        }
    }
}

/// Mirror index without repeating the edge voxel. An extent of one has
/// nothing to mirror and degenerates to edge replication.
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

fn reflect_maps(ext: [usize; 3], pad: [usize; 3]) -> [Vec<usize>; 3] {
    [0, 1, 2].map(|a| {
        (0..ext[a] + 2 * pad[a])
            .map(|o| reflect_index(o as isize - pad[a] as isize, ext[a]))
            .collect()
    })
}

pub(crate) fn pad_reflect<T: Element>(
    x: &[T],
    planes: usize,
    ext: [usize; 3],
    pad: [usize; 3],
) -> (Vec<T>, [usize; 3]) {
    let maps = reflect_maps(ext, pad);
    let out_ext = [0, 1, 2].map(|a| maps[a].len());
    let iv: usize = ext.iter().product();
    let ov: usize = out_ext.iter().product();
    let mut y = vec![T::zero(); planes * ov];
    for p in 0..planes {
        let xp = &x[p * iv..(p + 1) * iv];
        let yp = &mut y[p * ov..(p + 1) * ov];
        let mut o = 0;
        for &id in &maps[0] {
            for &ih in &maps[1] {
                let row = (id * ext[1] + ih) * ext[2];
                for &iw in &maps[2] {
                    yp[o] = xp[row + iw];
                    o += 1;
                }
            }
        }
    }
    (y, out_ext)
}

pub(crate) fn pad_reflect_backward<T: Element>(gy: &[T], planes: usize, ext: [usize; 3], pad: [usize; 3]) -> Vec<T> {
    let maps = reflect_maps(ext, pad);
    let iv: usize = ext.iter().product();
    let ov: usize = maps.iter().map(Vec::len).product();
    let mut gx = vec![T::zero(); planes * iv];
    for p in 0..planes {
        let gp = &gy[p * ov..(p + 1) * ov];
        let xp = &mut gx[p * iv..(p + 1) * iv];
        let mut o = 0;
        for &id in &maps[0] {
            for &ih in &maps[1] {
                let row = (id * ext[1] + ih) * ext[2];
                for &iw in &maps[2] {
                    xp[row + iw] += gp[o];
                    o += 1;
                }
            }
        }
    }
    gx
}

/// Normalized values and inverse standard deviations saved for backward.
pub(crate) struct NormSaved<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Instance normalization over each `(sample, channel)` spatial block.
pub(crate) fn instance_norm<T: Element>(
    x: &[T],
    n: usize,
    c: usize,
    vol: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, NormSaved<T>) {
    let blocks = n * c;
    let stats = parallel::map_indexed(blocks, |b| {
        let xs = &x[b * vol..(b + 1) * vol];
        let m = vol as f64;
        let rough = xs.iter().map(|v| v.as_f64()).sum::<f64>() / m;
        // One correction pass so a constant block has exactly its value as mean.
        let mean = rough + xs.iter().map(|v| v.as_f64() - rough).sum::<f64>() / m;
        let var = xs.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / m;
        (T::from_f64(mean), T::from_f64(1.0 / (var + eps.as_f64()).sqrt()))
    });
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(blocks);
    for (b, (mean, is)) in stats.into_iter().enumerate() {
        let ch = b % c;
        for i in b * vol..(b + 1) * vol {
            let h = (x[i] - mean) * is;
            xhat[i] = h;
            y[i] = gamma[ch] * h + beta[ch];
        }
        inv_std.push(is);
    }
    (y, NormSaved { xhat, inv_std })
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn instance_norm_backward<T: Element>(
    gy: &[T],
    saved: &NormSaved<T>,
    n: usize,
    c: usize,
    vol: usize,
    gamma: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let m = T::from_f64(vol as f64);
    let mut dx = vec![T::zero(); gy.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n * c {
        let ch = b % c;
        let r = b * vol..(b + 1) * vol;
        let g = &gy[r.clone()];
        let h = &saved.xhat[r.clone()];
        let sum_g: T = g.iter().copied().sum();
        let sum_gh: T = g.iter().zip(h).map(|(&a, &b)| a * b).sum();
        dgamma[ch] += sum_gh;
        dbeta[ch] += sum_g;
        let k = gamma[ch] * saved.inv_std[b] / m;
        for (i, (&gi, &hi)) in r.zip(g.iter().zip(h)) {
            dx[i] = k * (m * gi - sum_g - hi * sum_gh);
        }
    }
    (dx, dgamma, dbeta)
}

/// Output extents of a 2x average pool (odd trailing voxels dropped).
pub fn avg_pool2_shape(ext: [usize; 3]) -> [usize; 3] {
    ext.map(|e| e / 2)
}

/// 2x2x2 average pooling over `planes` consecutive `[D, H, W]` blocks.
pub fn avg_pool2_forward<T: Element>(x: &[T], planes: usize, ext: [usize; 3]) -> Vec<T> {
    let out = avg_pool2_shape(ext);
    let iv: usize = ext.iter().product();
    let ov: usize = out.iter().product();
    let eighth = T::from_f64(0.125);
    let mut y = vec![T::zero(); planes * ov];
    for p in 0..planes {
        let xp = &x[p * iv..(p + 1) * iv];
        let yp = &mut y[p * ov..(p + 1) * ov];
        for d in 0..out[0] {
            for h in 0..out[1] {
                for w in 0..out[2] {
                    let mut s = T::zero();
                    for a in 0..2 {
                        for b in 0..2 {
                            let row = ((2 * d + a) * ext[1] + 2 * h + b) * ext[2] + 2 * w;
                            s += xp[row] + xp[row + 1];
                        }
                    }
                    yp[(d * out[1] + h) * out[2] + w] = s * eighth;
                }
            }
        }
    }
    y
}

pub(crate) fn avg_pool2_backward<T: Element>(gy: &[T], planes: usize, ext: [usize; 3]) -> Vec<T> {
    let out = avg_pool2_shape(ext);
    let iv: usize = ext.iter().product();
    let ov: usize = out.iter().product();
    let eighth = T::from_f64(0.125);
    let mut gx = vec![T::zero(); planes * iv];
    for p in 0..planes {
        let gp = &gy[p * ov..(p + 1) * ov];
        let xp = &mut gx[p * iv..(p + 1) * iv];
        for d in 0..out[0] {
            for h in 0..out[1] {
                for w in 0..out[2] {
                    let g = gp[(d * out[1] + h) * out[2] + w] * eighth;
                    for a in 0..2 {
                        for b in 0..2 {
                            let row = ((2 * d + a) * ext[1] + 2 * h + b) * ext[2] + 2 * w;
                            xp[row] += g;
                            xp[row + 1] += g;
                        }
                    }
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct six-loop correlation used as the oracle for the GEMM path.
    fn naive_conv(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
        let [id, ih, iw] = g.input;
        let [kd, kh, kw] = g.kernel;
        let [od, oh, ow] = g.output;
        let mut y = vec![0.0; g.n * g.co * od * oh * ow];
        for n in 0..g.n {
            for co in 0..g.co {
                for z in 0..od {
                    for r in 0..oh {
                        for q in 0..ow {
                            let mut s = 0.0;
                            for ci in 0..g.ci {
                                for a in 0..kd {
                                    for b in 0..kh {
                                        for e in 0..kw {
                                            let xi = (((n * g.ci + ci) * id + z * g.stride[0] + a) * ih
                                                + r * g.stride[1]
                                                + b)
                                                * iw
                                                + q * g.stride[2]
                                                + e;
                                            let wi = (((co * g.ci + ci) * kd + a) * kh + b) * kw + e;
                                            s += x[xi] * w[wi];
                                        }
                                    }
                                }
                            }
                            y[(((n * g.co + co) * od + z) * oh + r) * ow + q] = s;
                        }
                    }
                }
            }
        }
        y
    }

    fn lcg(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn gemm_conv_matches_naive() {
        for (stride, input) in [([1, 1, 1], [5, 6, 4]), ([2, 2, 1], [7, 6, 5])] {
            let g = ConvGeom::new(2, 3, 4, input, [3, 2, 3], stride);
            let x = lcg(g.n * g.ci * g.in_vol(), 1);
            let w = lcg(g.weight_len(), 2);
            let fast = conv_forward(&g, &x, &w, None);
            let slow = naive_conv(&g, &x, &w);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    /// `<conv(x), y> == <x, conv_in^T(y)>` and `<conv(x), y> == <w, conv_w^T(y)>`.
    fn check_adjoint(g: &ConvGeom) {
        let x = lcg(g.n * g.ci * g.in_vol(), 3);
        let w = lcg(g.weight_len(), 4);
        let y = lcg(g.n * g.co * g.out_vol(), 5);
        let ip = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let lhs = ip(&conv_forward(g, &x, &w, None), &y);
        assert!((lhs - ip(&x, &conv_backward_input(g, &w, &y))).abs() < 1e-10);
        assert!((lhs - ip(&w, &conv_backward_weight(g, &x, &y))).abs() < 1e-10);
    }

    #[test]
    fn direct_path_matches_naive() {
        for (co, input) in [(1, [6, 5, 4]), (2, [9, 7, 40]), (1, [3, 2, 3])] {
            let g = ConvGeom::new(2, 3, co, input, [3, 2, 3], [1, 1, 1]);
            assert!(g.direct());
            let x = lcg(g.n * g.ci * g.in_vol(), 1);
            let w = lcg(g.weight_len(), 2);
            let b: Vec<f64> = (0..co).map(|c| c as f64 + 0.5).collect();
            let fast = conv_forward(&g, &x, &w, Some(&b));
            let slow = naive_conv(&g, &x, &w);
            let ov = g.out_vol();
            for (i, (a, s)) in fast.iter().zip(&slow).enumerate() {
                assert!((a - s - b[(i / ov) % co]).abs() < 1e-12);
            }
            check_adjoint(&g);
        }
    }

    #[test]
    fn gemm_path_is_adjoint() {
        let g = ConvGeom::new(2, 3, 4, [7, 6, 5], [3, 2, 3], [2, 1, 2]);
        assert!(!g.direct());
        check_adjoint(&g);
    }

    #[test]
    fn reflect_index_folds() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-2, 1), 0);
    }

    #[test]
    fn crop_and_pad_are_inverse_on_interior() {
        let x = lcg(2 * 3 * 4 * 5, 3);
        let pads = [(1, 2), (0, 1), (2, 0)];
        let (y, ext) = pad_zero(&x, 2, [3, 4, 5], pads);
        let neg = pads.map(|(a, b)| (-a, -b));
        let (back, ext2) = pad_zero(&y, 2, ext, neg);
        assert_eq!(ext2, [3, 4, 5]);
        assert_eq!(back, x);
    }
}
