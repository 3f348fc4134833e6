//! Raw compute kernels over flat slices: batched matmul and grouped
//! cross-correlation for 2 or 3 spatial dimensions.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Matrix view descriptor for a batched matmul operand.
#[derive(Clone, Copy, Debug)]
pub struct MatLayout {
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

/// `out[b] = op(a[b]) @ op(b[b])` where stored matrices are row-major
/// and `op` optionally transposes. `a_stride`/`b_stride` of 0 broadcast.
#[allow(clippy::too_many_arguments)]
pub fn batched_matmul<S: Scalar>(
    batch: usize,
    a: &[S],
    a_stored: (usize, usize),
    a_t: bool,
    a_stride: usize,
    b: &[S],
    b_stored: (usize, usize),
    b_t: bool,
    b_stride: usize,
    out: &mut [S],
    accumulate: bool,
) {
    let (m, k) = if a_t { (a_stored.1, a_stored.0) } else { a_stored };
    let (k2, n) = if b_t { (b_stored.1, b_stored.0) } else { b_stored };
    debug_assert_eq!(k, k2);
    let (rsa, csa) = if a_t {
        (1isize, a_stored.1 as isize)
    } else {
        (a_stored.1 as isize, 1isize)
    };
    let (rsb, csb) = if b_t {
        (1isize, b_stored.1 as isize)
    } else {
        (b_stored.1 as isize, 1isize)
    };
    let beta = if accumulate { S::one() } else { S::zero() };
    let out_chunk = m * n;
    let run = |i: usize, o: &mut [S]| {
        let pa = &a[i * a_stride..];
        let pb = &b[i * b_stride..];
        debug_assert!(pa.len() >= a_stored.0 * a_stored.1);
        debug_assert!(pb.len() >= b_stored.0 * b_stored.1);
        // SAFETY: operand slices cover the stored matrices (checked above in
        // debug builds, guaranteed by the callers' shape validation).
        unsafe {
            S::gemm(
                m,
                k,
                n,
                S::one(),
                pa.as_ptr(),
                rsa,
                csa,
                pb.as_ptr(),
                rsb,
                csb,
                beta,
                o.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    };
    if batch > 1 && m * n * k > 4096 {
        out.par_chunks_mut(out_chunk)
            .enumerate()
            .for_each(|(i, o)| run(i, o));
    } else {
        for (i, o) in out.chunks_mut(out_chunk).enumerate() {
            run(i, o);
        }
    }
}

/// Geometry of a grouped convolution over up to three spatial axes.
/// Rank-2 convolutions use a unit leading depth axis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub groups: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeometry {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        batch: usize,
        in_channels: usize,
        out_channels: usize,
        groups: usize,
        input: [usize; 3],
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        if groups == 0 || !in_channels.is_multiple_of(groups) || !out_channels.is_multiple_of(groups) {
            return Err(Error::invalid(
                "convolve",
                format!(
                    "channels in={in_channels} out={out_channels} not divisible by groups={groups}"
                ),
            ));
        }
        let mut output = [0; 3];
        for d in 0..3 {
            if stride[d] == 0 {
                return Err(Error::invalid("convolve", "stride must be >= 1"));
            }
            let padded = input[d] + 2 * padding[d];
            if kernel[d] == 0 || kernel[d] > padded {
                return Err(Error::invalid(
                    "convolve",
                    format!(
                        "kernel {:?} larger than padded input {:?}",
                        kernel,
                        [
                            input[0] + 2 * padding[0],
                            input[1] + 2 * padding[1],
                            input[2] + 2 * padding[2]
                        ]
                    ),
                ));
            }
            output[d] = (padded - kernel[d]) / stride[d] + 1;
        }
        Ok(Self {
            batch,
            in_channels,
            out_channels,
            groups,
            input,
            kernel,
            stride,
            padding,
            output,
        })
    }

    pub fn in_spatial(&self) -> usize {
        self.input.iter().product()
    }

    pub fn out_spatial(&self) -> usize {
        self.output.iter().product()
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn cin_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn cout_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.cin_per_group() * self.kernel_volume()
    }

    fn is_pointwise(&self) -> bool {
        self.groups == 1
            && self.kernel == [1, 1, 1]
            && self.stride == [1, 1, 1]
            && self.padding == [0, 0, 0]
    }

    fn is_depthwise(&self) -> bool {
        self.cin_per_group() == 1 && self.cout_per_group() == 1
    }

    /// Input index range `[lo, hi)` of output positions along axis `d`
    /// that read input coordinate `o*stride + k - pad` inside bounds.
    fn valid_out_range(&self, d: usize, k: usize) -> (usize, usize) {
        let s = self.stride[d] as isize;
        let p = self.padding[d] as isize;
        let n_in = self.input[d] as isize;
        let n_out = self.output[d] as isize;
        let k = k as isize;
        // o*s + k - p >= 0  =>  o >= ceil((p - k)/s)
        let lo = if p - k <= 0 { 0 } else { (p - k + s - 1) / s };
        // o*s + k - p <= n_in - 1  =>  o <= floor((n_in - 1 + p - k)/s)
        let hi_num = n_in - 1 + p - k;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let lo = lo.clamp(0, n_out);
        let hi = (hi + 1).clamp(lo, n_out);
        (lo as usize, hi as usize)
    }
}

/// Forward grouped cross-correlation with zero padding.
pub fn conv_forward<S: Scalar>(
    g: &ConvGeometry,
    x: &[S],
    w: &[S],
    bias: Option<&[S]>,
) -> Vec<S> {
    let in_sample = g.in_channels * g.in_spatial();
    let out_sample = g.out_channels * g.out_spatial();
    let mut out = vec![S::zero(); g.batch * out_sample];
    if g.is_pointwise() {
        batched_matmul(
            g.batch,
            w,
            (g.out_channels, g.in_channels),
            false,
            0,
            x,
            (g.in_channels, g.in_spatial()),
            false,
            in_sample,
            &mut out,
            false,
        );
    } else if g.is_depthwise() {
        out.par_chunks_mut(g.out_spatial())
            .enumerate()
            .for_each(|(nc, o)| {
                let c = nc % g.out_channels;
                let n = nc / g.out_channels;
                let xs = &x[n * in_sample + c * g.in_spatial()..][..g.in_spatial()];
                let ws = &w[c * g.kernel_volume()..][..g.kernel_volume()];
                depthwise_accumulate(g, xs, ws, o);
            });
    } else {
        let cols = g.cin_per_group() * g.kernel_volume();
        let p = g.out_spatial();
        let wg = g.cout_per_group() * cols;
        out.par_chunks_mut(out_sample)
            .enumerate()
            .for_each(|(n, o)| {
                let mut col = vec![S::zero(); cols * p];
                for grp in 0..g.groups {
                    let xs = &x[n * in_sample + grp * g.cin_per_group() * g.in_spatial()..]
                        [..g.cin_per_group() * g.in_spatial()];
                    im2col(g, xs, &mut col);
                    let oslice = &mut o[grp * g.cout_per_group() * p..][..g.cout_per_group() * p];
                    batched_matmul(
                        1,
                        &w[grp * wg..][..wg],
                        (g.cout_per_group(), cols),
                        false,
                        0,
                        &col,
                        (cols, p),
                        false,
                        0,
                        oslice,
                        false,
                    );
                }
            });
    }
    if let Some(b) = bias {
        let p = g.out_spatial();
        for (i, chunk) in out.chunks_mut(p).enumerate() {
            let bv = b[i % g.out_channels];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
    out
}

/// Gradients of the convolution with respect to input, weight and bias.
pub fn conv_backward<S: Scalar>(
    g: &ConvGeometry,
    x: &[S],
    w: &[S],
    dy: &[S],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>) {
    let in_sample = g.in_channels * g.in_spatial();
    let out_sample = g.out_channels * g.out_spatial();
    let p = g.out_spatial();
    let mut dx = need_dx.then(|| vec![S::zero(); g.batch * in_sample]);
    let mut dw = need_dw.then(|| vec![S::zero(); g.weight_len()]);
    if g.is_pointwise() {
        if let Some(dx) = dx.as_mut() {
            batched_matmul(
                g.batch,
                w,
                (g.out_channels, g.in_channels),
                true,
                0,
                dy,
                (g.out_channels, p),
                false,
                out_sample,
                dx,
                false,
            );
        }
        if let Some(dw) = dw.as_mut() {
            for n in 0..g.batch {
                batched_matmul(
                    1,
                    &dy[n * out_sample..][..out_sample],
                    (g.out_channels, p),
                    false,
                    0,
                    &x[n * in_sample..][..in_sample],
                    (g.in_channels, p),
                    true,
                    0,
                    dw,
                    true,
                );
            }
        }
    } else if g.is_depthwise() {
        let kv = g.kernel_volume();
        if let Some(dx) = dx.as_mut() {
            dx.par_chunks_mut(g.in_spatial())
                .enumerate()
                .for_each(|(nc, dxs)| {
                    let c = nc % g.in_channels;
                    let n = nc / g.in_channels;
                    let dys = &dy[n * out_sample + c * p..][..p];
                    let ws = &w[c * kv..][..kv];
                    depthwise_backward_input(g, dys, ws, dxs);
                });
        }
        if let Some(dw) = dw.as_mut() {
            for n in 0..g.batch {
                for c in 0..g.in_channels {
                    let xs = &x[n * in_sample + c * g.in_spatial()..][..g.in_spatial()];
                    let dys = &dy[n * out_sample + c * p..][..p];
                    depthwise_backward_weight(g, xs, dys, &mut dw[c * kv..][..kv]);
                }
            }
        }
    } else {
        let cols = g.cin_per_group() * g.kernel_volume();
        let wg = g.cout_per_group() * cols;
        let cpg_in = g.cin_per_group() * g.in_spatial();
        if let Some(dx) = dx.as_mut() {
            dx.par_chunks_mut(in_sample)
                .enumerate()
                .for_each(|(n, dxs)| {
                    let mut dcol = vec![S::zero(); cols * p];
                    for grp in 0..g.groups {
                        let dys = &dy[n * out_sample + grp * g.cout_per_group() * p..]
                            [..g.cout_per_group() * p];
                        batched_matmul(
                            1,
                            &w[grp * wg..][..wg],
                            (g.cout_per_group(), cols),
                            true,
                            0,
                            dys,
                            (g.cout_per_group(), p),
                            false,
                            0,
                            &mut dcol,
                            false,
                        );
                        col2im(g, &dcol, &mut dxs[grp * cpg_in..][..cpg_in]);
                    }
                });
        }
        if let Some(dw) = dw.as_mut() {
            let mut col = vec![S::zero(); cols * p];
            for n in 0..g.batch {
                for grp in 0..g.groups {
                    let xs = &x[n * in_sample + grp * cpg_in..][..cpg_in];
                    im2col(g, xs, &mut col);
                    let dys = &dy[n * out_sample + grp * g.cout_per_group() * p..]
                        [..g.cout_per_group() * p];
                    batched_matmul(
                        1,
                        dys,
                        (g.cout_per_group(), p),
                        false,
                        0,
                        &col,
                        (cols, p),
                        true,
                        0,
                        &mut dw[grp * wg..][..wg],
                        true,
                    );
                }
            }
        }
    }
    (dx, dw)
}

/// Per-channel bias gradient: sum of `dy` over batch and space.
pub fn conv_bias_grad<S: Scalar>(g: &ConvGeometry, dy: &[S]) -> Vec<S> {
    let p = g.out_spatial();
    let mut acc = vec![0.0f64; g.out_channels];
    for (i, chunk) in dy.chunks(p).enumerate() {
        acc[i % g.out_channels] += chunk.iter().map(|v| v.as_f64()).sum::<f64>();
    }
    acc.into_iter().map(S::of).collect()
}

fn depthwise_accumulate<S: Scalar>(g: &ConvGeometry, x: &[S], w: &[S], out: &mut [S]) {
    let [_, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    for a in 0..kd {
        let (d_lo, d_hi) = g.valid_out_range(0, a);
        for b in 0..kh {
            let (h_lo, h_hi) = g.valid_out_range(1, b);
            for c in 0..kw {
                let (w_lo, w_hi) = g.valid_out_range(2, c);
                let wv = w[(a * kh + b) * kw + c];
                if wv == S::zero() {
                    continue;
                }
                for od in d_lo..d_hi {
                    let id = od * sd + a - pd;
                    for oy in h_lo..h_hi {
                        let iy = oy * sh + b - ph;
                        let orow = &mut out[(od * oh + oy) * ow..][..ow];
                        let irow = &x[(id * ih + iy) * iw..][..iw];
                        if sw == 1 {
                            let off = w_lo + c - pw;
                            for (o, &i) in orow[w_lo..w_hi].iter_mut().zip(&irow[off..]) {
                                *o += wv * i;
                            }
                        } else {
                            for ox in w_lo..w_hi {
                                orow[ox] += wv * irow[ox * sw + c - pw];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_backward_input<S: Scalar>(g: &ConvGeometry, dy: &[S], w: &[S], dx: &mut [S]) {
    let [_, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    for a in 0..kd {
        let (d_lo, d_hi) = g.valid_out_range(0, a);
        for b in 0..kh {
            let (h_lo, h_hi) = g.valid_out_range(1, b);
            for c in 0..kw {
                let (w_lo, w_hi) = g.valid_out_range(2, c);
                let wv = w[(a * kh + b) * kw + c];
                for od in d_lo..d_hi {
                    let id = od * sd + a - pd;
                    for oy in h_lo..h_hi {
                        let iy = oy * sh + b - ph;
                        let drow = &dy[(od * oh + oy) * ow..][..ow];
                        let xrow = &mut dx[(id * ih + iy) * iw..][..iw];
                        for ox in w_lo..w_hi {
                            xrow[ox * sw + c - pw] += wv * drow[ox];
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_backward_weight<S: Scalar>(g: &ConvGeometry, x: &[S], dy: &[S], dw: &mut [S]) {
    let [_, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    for a in 0..kd {
        let (d_lo, d_hi) = g.valid_out_range(0, a);
        for b in 0..kh {
            let (h_lo, h_hi) = g.valid_out_range(1, b);
            for c in 0..kw {
                let (w_lo, w_hi) = g.valid_out_range(2, c);
                let mut acc = S::zero();
                for od in d_lo..d_hi {
                    let id = od * sd + a - pd;
                    for oy in h_lo..h_hi {
                        let iy = oy * sh + b - ph;
                        let drow = &dy[(od * oh + oy) * ow..][..ow];
                        let xrow = &x[(id * ih + iy) * iw..][..iw];
                        for ox in w_lo..w_hi {
                            acc += drow[ox] * xrow[ox * sw + c - pw];
                        }
                    }
                }
                dw[(a * kh + b) * kw + c] += acc;
            }
        }
    }
}

/// Unfolds one group's input `[cin_g, D, H, W]` into `[cin_g * K, P]`.
fn im2col<S: Scalar>(g: &ConvGeometry, x: &[S], col: &mut [S]) {
    let [_, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    let p = g.out_spatial();
    col.iter_mut().for_each(|v| *v = S::zero());
    for ci in 0..g.cin_per_group() {
        let xs = &x[ci * g.in_spatial()..][..g.in_spatial()];
        for a in 0..kd {
            let (d_lo, d_hi) = g.valid_out_range(0, a);
            for b in 0..kh {
                let (h_lo, h_hi) = g.valid_out_range(1, b);
                for c in 0..kw {
                    let (w_lo, w_hi) = g.valid_out_range(2, c);
                    let row = ((ci * kd + a) * kh + b) * kw + c;
                    let crow = &mut col[row * p..][..p];
                    for od in d_lo..d_hi {
                        let id = od * sd + a - pd;
                        for oy in h_lo..h_hi {
                            let iy = oy * sh + b - ph;
                            let irow = &xs[(id * ih + iy) * iw..][..iw];
                            let base = (od * oh + oy) * ow;
                            for ox in w_lo..w_hi {
                                crow[base + ox] = irow[ox * sw + c - pw];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `[cin_g * K, P]` back into the input.
fn col2im<S: Scalar>(g: &ConvGeometry, col: &[S], dx: &mut [S]) {
    let [_, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    let p = g.out_spatial();
    for ci in 0..g.cin_per_group() {
        let xs = &mut dx[ci * g.in_spatial()..][..g.in_spatial()];
        for a in 0..kd {
            let (d_lo, d_hi) = g.valid_out_range(0, a);
            for b in 0..kh {
                let (h_lo, h_hi) = g.valid_out_range(1, b);
                for c in 0..kw {
                    let (w_lo, w_hi) = g.valid_out_range(2, c);
                    let row = ((ci * kd + a) * kh + b) * kw + c;
                    let crow = &col[row * p..][..p];
                    for od in d_lo..d_hi {
                        let id = od * sd + a - pd;
                        for oy in h_lo..h_hi {
                            let iy = oy * sh + b - ph;
                            let irow = &mut xs[(id * ih + iy) * iw..][..iw];
                            let base = (od * oh + oy) * ow;
                            for ox in w_lo..w_hi {
                                irow[ox * sw + c - pw] += crow[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop cross-correlation used as an oracle.
    fn naive_conv(g: &ConvGeometry, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.batch * g.out_channels * g.out_spatial()];
        let cin_g = g.cin_per_group();
        let cout_g = g.cout_per_group();
        for n in 0..g.batch {
            for co in 0..g.out_channels {
                let grp = co / cout_g;
                for od in 0..g.output[0] {
                    for oy in 0..g.output[1] {
                        for ox in 0..g.output[2] {
                            let mut acc = 0.0;
                            for ci in 0..cin_g {
                                let cin = grp * cin_g + ci;
                                for a in 0..g.kernel[0] {
                                    for b in 0..g.kernel[1] {
                                        for c in 0..g.kernel[2] {
                                            let id = (od * g.stride[0] + a) as isize - g.padding[0] as isize;
                                            let iy = (oy * g.stride[1] + b) as isize - g.padding[1] as isize;
                                            let ix = (ox * g.stride[2] + c) as isize - g.padding[2] as isize;
                                            if id < 0 || iy < 0 || ix < 0 {
                                                continue;
                                            }
                                            let (id, iy, ix) = (id as usize, iy as usize, ix as usize);
                                            if id >= g.input[0] || iy >= g.input[1] || ix >= g.input[2] {
                                                continue;
                                            }
                                            let xi = (((n * g.in_channels + cin) * g.input[0] + id) * g.input[1] + iy) * g.input[2] + ix;
                                            let wi = (((co * cin_g + ci) * g.kernel[0] + a) * g.kernel[1] + b) * g.kernel[2] + c;
                                            acc += x[xi] * w[wi];
                                        }
                                    }
                                }
                            }
                            let oi = (((n * g.out_channels + co) * g.output[0] + od) * g.output[1] + oy) * g.output[2] + ox;
                            out[oi] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
            })
            .collect()
    }

    fn check(g: ConvGeometry) {
        let x = pseudo(g.batch * g.in_channels * g.in_spatial(), 1);
        let w = pseudo(g.weight_len(), 2);
        let got = conv_forward(&g, &x, &w, None);
        let want = naive_conv(&g, &x, &w);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{g:?}: {a} vs {b}");
        }
        // Adjoint identity: <conv(x), dy> = <x, conv^T(dy)> and likewise for w.
        let dy = pseudo(got.len(), 3);
        let (dx, dw) = conv_backward(&g, &x, &w, &dy, true, true);
        let lhs: f64 = got.iter().zip(&dy).map(|(a, b)| a * b).sum();
        let rx: f64 = x.iter().zip(dx.unwrap().iter()).map(|(a, b)| a * b).sum();
        let rw: f64 = w.iter().zip(dw.unwrap().iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rx).abs() < 1e-9, "{g:?} dx adjoint {lhs} vs {rx}");
        assert!((lhs - rw).abs() < 1e-9, "{g:?} dw adjoint {lhs} vs {rw}");
    }

    #[test]
    fn matches_naive_across_paths() {
        // pointwise
        check(ConvGeometry::new(2, 3, 4, 1, [1, 3, 5], [1, 1, 1], [1, 1, 1], [0, 0, 0]).unwrap());
        // depthwise, stride 2, pad 2
        check(ConvGeometry::new(2, 3, 3, 3, [1, 7, 6], [1, 5, 5], [1, 2, 2], [0, 2, 2]).unwrap());
        // general grouped
        check(ConvGeometry::new(2, 4, 6, 2, [1, 6, 6], [1, 3, 3], [1, 2, 2], [0, 1, 1]).unwrap());
        check(ConvGeometry::new(1, 3, 5, 1, [1, 5, 4], [1, 3, 2], [1, 1, 2], [0, 1, 0]).unwrap());
        // rank-3 depthwise with full-extent kernel
        check(ConvGeometry::new(2, 4, 4, 4, [3, 2, 2], [3, 2, 2], [1, 1, 1], [0, 0, 0]).unwrap());
        // rank-3 general
        check(ConvGeometry::new(1, 2, 3, 1, [3, 4, 4], [2, 3, 3], [1, 2, 1], [1, 1, 1]).unwrap());
    }

    #[test]
    fn output_extent_law() {
        let g = ConvGeometry::new(1, 1, 1, 1, [1, 32, 31], [1, 3, 3], [1, 2, 2], [0, 1, 1]).unwrap();
        assert_eq!(g.output, [1, 16, 16]);
    }

    #[test]
    fn rejects_bad_groups_and_oversized_kernel() {
        assert!(ConvGeometry::new(1, 3, 4, 2, [1, 4, 4], [1, 1, 1], [1, 1, 1], [0, 0, 0]).is_err());
        assert!(ConvGeometry::new(1, 1, 1, 1, [1, 2, 2], [1, 5, 5], [1, 1, 1], [0, 1, 1]).is_err());
    }
}
