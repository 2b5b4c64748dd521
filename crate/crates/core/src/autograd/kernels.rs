//! Forward and backward kernels on raw NCHW tensors.
//!
//! These are used by the graph ops and directly by code that needs the
//! numbers without a tape (metrics, bicubic baselines).

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;

/// Geometry of a 2-D convolution. Padding is symmetric zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvGeom {
    /// Stride 1, dilation 1, one group, padding that preserves size for `kernel`.
    pub fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            padding: kernel / 2,
            dilation: 1,
            groups: 1,
        }
    }

    pub fn output_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

/// Output positions `o` in `[lo, hi)` whose input index `o * stride + offset`
/// falls inside `[0, in_len)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, offset: isize, stride: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let last = in_len as isize - 1 - offset;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last / s + 1).min(out_len as isize);
    if lo >= hi {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

struct ConvDims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    icpg: usize,
    ocpg: usize,
}

fn conv_dims(input: &Tensor, weight: &Tensor, geom: &ConvGeom) -> ConvDims {
    let [n, cin, h, w] = input.dims4();
    let [cout, icpg, kh, kw] = weight.dims4();
    assert!(geom.groups >= 1 && cin % geom.groups == 0 && cout % geom.groups == 0);
    assert_eq!(icpg, cin / geom.groups, "conv weight expects {} input channels per group", icpg);
    let oh = geom.output_len(h, kh).expect("conv input smaller than kernel support");
    let ow = geom.output_len(w, kw).expect("conv input smaller than kernel support");
    ConvDims {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        oh,
        ow,
        icpg,
        ocpg: cout / geom.groups,
    }
}

/// Visits every contiguous run of output pixels fed by one weight tap.
/// Calls `f(weight_index, out_offset, in_offset, len, in_stride)`;
/// the run covers `len` outputs and `len` inputs spaced `in_stride` apart.
#[inline]
fn for_each_tap(
    d: &ConvDims,
    geom: &ConvGeom,
    mut f: impl FnMut(usize, usize, usize, usize, usize),
) {
    for b in 0..d.n {
        for g in 0..geom.groups {
            for ocl in 0..d.ocpg {
                let oc = g * d.ocpg + ocl;
                let out_base = (b * d.cout + oc) * d.oh * d.ow;
                for icl in 0..d.icpg {
                    let ic = g * d.icpg + icl;
                    let in_base = (b * d.cin + ic) * d.h * d.w;
                    for ky in 0..d.kh {
                        let offy = (ky * geom.dilation) as isize - geom.padding as isize;
                        let (oy_lo, oy_hi) = valid_range(d.oh, d.h, offy, geom.stride);
                        if oy_lo == oy_hi {
                            continue;
                        }
                        for kx in 0..d.kw {
                            let offx = (kx * geom.dilation) as isize - geom.padding as isize;
                            let (ox_lo, ox_hi) = valid_range(d.ow, d.w, offx, geom.stride);
                            if ox_lo == ox_hi {
                                continue;
                            }
                            let widx = ((oc * d.icpg + icl) * d.kh + ky) * d.kw + kx;
                            for oy in oy_lo..oy_hi {
                                let iy = (oy * geom.stride) as isize + offy;
                                let ix = (ox_lo * geom.stride) as isize + offx;
                                f(
                                    widx,
                                    out_base + oy * d.ow + ox_lo,
                                    in_base + iy as usize * d.w + ix as usize,
                                    ox_hi - ox_lo,
                                    geom.stride,
                                );
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, geom: &ConvGeom) -> Tensor {
    let d = conv_dims(input, weight, geom);
    let mut out = Tensor::zeros(&[d.n, d.cout, d.oh, d.ow]);
    if let Some(bias) = bias {
        assert_eq!(bias.len(), d.cout);
        let plane = d.oh * d.ow;
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            chunk.fill(bias.data()[i % d.cout]);
        }
    }
    let x = input.data();
    let wt = weight.data();
    let y = out.data_mut();
    for_each_tap(&d, geom, |widx, o, i, len, stride| {
        let wv = wt[widx];
        if stride == 1 {
            for (yo, xi) in y[o..o + len].iter_mut().zip(&x[i..i + len]) {
                *yo += wv * *xi;
            }
        } else {
            for k in 0..len {
                y[o + k] += wv * x[i + k * stride];
            }
        }
    });
    out
}

/// Gradients of a convolution with respect to its input, weight and bias.
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    geom: &ConvGeom,
    grad_out: &Tensor,
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> ConvGrads {
    let d = conv_dims(input, weight, geom);
    let go = grad_out.data();
    let x = input.data();
    let wt = weight.data();

    let input_grad = need_input.then(|| {
        let mut gi = Tensor::zeros(input.shape());
        let gid = gi.data_mut();
        for_each_tap(&d, geom, |widx, o, i, len, stride| {
            let wv = wt[widx];
            if stride == 1 {
                for (g, yo) in gid[i..i + len].iter_mut().zip(&go[o..o + len]) {
                    *g += wv * *yo;
                }
            } else {
                for k in 0..len {
                    gid[i + k * stride] += wv * go[o + k];
                }
            }
        });
        gi
    });

    let weight_grad = need_weight.then(|| {
        let mut gw = Tensor::zeros(weight.shape());
        let gwd = gw.data_mut();
        for_each_tap(&d, geom, |widx, o, i, len, stride| {
            let mut acc = 0.0;
            if stride == 1 {
                for (yo, xi) in go[o..o + len].iter().zip(&x[i..i + len]) {
                    acc += *yo * *xi;
                }
            } else {
                for k in 0..len {
                    acc += go[o + k] * x[i + k * stride];
                }
            }
            gwd[widx] += acc;
        });
        gw
    });

    let bias_grad = need_bias.then(|| {
        let mut gb = vec![0.0; d.cout];
        let plane = d.oh * d.ow;
        for (i, chunk) in go.chunks(plane).enumerate() {
            gb[i % d.cout] += chunk.iter().sum::<f64>();
        }
        Tensor::from_vec(&[d.cout], gb)
    });

    ConvGrads {
        input: input_grad,
        weight: weight_grad,
        bias: bias_grad,
    }
}

/// Output extent of a max pool whose windows are clipped to the input.
/// Matches the unpadded floor rule whenever the input covers one window and
/// degrades to a single global window otherwise.
pub fn pool_output_len(input: usize, kernel: usize, stride: usize) -> usize {
    if input >= kernel {
        (input - kernel) / stride + 1
    } else {
        1
    }
}

/// Max pool with clipped windows. Returns the output and, per output element,
/// the flat input index of the selected maximum.
pub fn max_pool2d(input: &Tensor, kernel: usize, stride: usize) -> (Tensor, Vec<usize>) {
    let [n, c, h, w] = input.dims4();
    let oh = pool_output_len(h, kernel, stride);
    let ow = pool_output_len(w, kernel, stride);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(out.len());
    let x = input.data();
    let y = out.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            let y0 = oy * stride;
            let y1 = (y0 + kernel).min(h);
            for ox in 0..ow {
                let x0 = ox * stride;
                let x1 = (x0 + kernel).min(w);
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = base + y0 * w + x0;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let idx = base + iy * w + ix;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                y[(plane * oh + oy) * ow + ox] = best;
                argmax.push(best_idx);
            }
        }
    }
    (out, argmax)
}

/// Source sample positions for half-pixel-centred linear resampling.
fn linear_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (libm::floor(src) as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = src - i0 as f64;
            (i0, i1, frac)
        })
        .collect()
}

/// Bilinear resize with half-pixel centres (no corner alignment).
pub fn bilinear_resize(input: &Tensor, oh: usize, ow: usize) -> Tensor {
    let [n, c, h, w] = input.dims4();
    let ty = linear_taps(oh, h);
    let tx = linear_taps(ow, w);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let x = input.data();
    let y = out.data_mut();
    for plane in 0..n * c {
        let ib = plane * h * w;
        let ob = plane * oh * ow;
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = x[ib + y0 * w + x0] * (1.0 - fx) + x[ib + y0 * w + x1] * fx;
                let bot = x[ib + y1 * w + x0] * (1.0 - fx) + x[ib + y1 * w + x1] * fx;
                y[ob + oy * ow + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn bilinear_resize_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let [_, _, oh, ow] = grad_out.dims4();
    let ty = linear_taps(oh, h);
    let tx = linear_taps(ow, w);
    let mut gi = Tensor::zeros(input_shape);
    let g = gi.data_mut();
    let go = grad_out.data();
    for plane in 0..n * c {
        let ib = plane * h * w;
        let ob = plane * oh * ow;
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = go[ob + oy * ow + ox];
                g[ib + y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                g[ib + y0 * w + x1] += v * (1.0 - fy) * fx;
                g[ib + y1 * w + x0] += v * fy * (1.0 - fx);
                g[ib + y1 * w + x1] += v * fy * fx;
            }
        }
    }
    gi
}

/// Depth-to-space: `[n, c*r*r, h, w]` to `[n, c, h*r, w*r]`.
pub fn pixel_shuffle(input: &Tensor, r: usize) -> Tensor {
    let [n, cr, h, w] = input.dims4();
    assert_eq!(cr % (r * r), 0, "pixel shuffle needs channels divisible by r^2");
    let c = cr / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let x = input.data();
    let y = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let src = ((b * cr + ch * r * r + i * r + j) * h) * w;
                    for yy in 0..h {
                        let dst = ((b * c + ch) * oh + yy * r + i) * ow + j;
                        for xx in 0..w {
                            y[dst + xx * r] = x[src + yy * w + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Space-to-depth, the exact inverse (and adjoint) of [`pixel_shuffle`].
pub fn pixel_unshuffle(input: &Tensor, r: usize) -> Tensor {
    let [n, c, oh, ow] = input.dims4();
    let (h, w) = (oh / r, ow / r);
    let cr = c * r * r;
    let mut out = Tensor::zeros(&[n, cr, h, w]);
    let x = input.data();
    let y = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let dst = ((b * cr + ch * r * r + i * r + j) * h) * w;
                    for yy in 0..h {
                        let src = ((b * c + ch) * oh + yy * r + i) * ow + j;
                        for xx in 0..w {
                            y[dst + yy * w + xx] = x[src + xx * r];
                        }
                    }
                }
            }
        }
    }
    out
}

#[inline]
fn reflect_index(i: isize, len: usize) -> usize {
    let len = len as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= len {
        i = 2 * (len - 1) - i;
    }
    i as usize
}

/// Reflection padding (edge sample not repeated). Needs `pad < h, w`.
pub fn reflect_pad(input: &Tensor, pad: usize) -> Tensor {
    let [n, c, h, w] = input.dims4();
    assert!(pad < h && pad < w, "reflection pad {} too large for {}x{}", pad, h, w);
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor::zeros(&[n, c, ph, pw]);
    let x = input.data();
    let y = out.data_mut();
    for plane in 0..n * c {
        for py in 0..ph {
            let iy = reflect_index(py as isize - pad as isize, h);
            for px in 0..pw {
                let ix = reflect_index(px as isize - pad as isize, w);
                y[(plane * ph + py) * pw + px] = x[(plane * h + iy) * w + ix];
            }
        }
    }
    out
}

pub fn reflect_pad_backward(input_shape: &[usize], pad: usize, grad_out: &Tensor) -> Tensor {
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut gi = Tensor::zeros(input_shape);
    let g = gi.data_mut();
    let go = grad_out.data();
    for plane in 0..n * c {
        for py in 0..ph {
            let iy = reflect_index(py as isize - pad as isize, h);
            for px in 0..pw {
                let ix = reflect_index(px as isize - pad as isize, w);
                g[(plane * h + iy) * w + ix] += go[(plane * ph + py) * pw + px];
            }
        }
    }
    gi
}

/// Concatenates NCHW tensors along the channel axis.
pub fn concat_channels(items: &[&Tensor]) -> Tensor {
    let [n, _, h, w] = items[0].dims4();
    let total_c: usize = items.iter().map(|t| t.dims4()[1]).sum();
    let mut data = Vec::with_capacity(n * total_c * h * w);
    for b in 0..n {
        for t in items {
            let [tn, tc, th, tw] = t.dims4();
            assert_eq!((tn, th, tw), (n, h, w), "concat of mismatched shapes");
            let len = tc * h * w;
            data.extend_from_slice(&t.data()[b * len..(b + 1) * len]);
        }
    }
    Tensor::from_vec(&[n, total_c, h, w], data)
}

/// Splits a channel-concatenated gradient back into per-input gradients.
pub fn split_channels(grad: &Tensor, channels: &[usize]) -> Vec<Tensor> {
    let [n, total_c, h, w] = grad.dims4();
    debug_assert_eq!(channels.iter().sum::<usize>(), total_c);
    let mut parts: Vec<Vec<f64>> = channels.iter().map(|c| Vec::with_capacity(n * c * h * w)).collect();
    let g = grad.data();
    for b in 0..n {
        let mut offset = b * total_c * h * w;
        for (part, &c) in parts.iter_mut().zip(channels) {
            let len = c * h * w;
            part.extend_from_slice(&g[offset..offset + len]);
            offset += len;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor::from_vec(&[n, c, h, w], d))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor, wt: &Tensor, geom: &ConvGeom) -> Tensor {
        let [n, cin, h, w] = x.dims4();
        let [cout, icpg, kh, kw] = wt.dims4();
        let oh = geom.output_len(h, kh).unwrap();
        let ow = geom.output_len(w, kw).unwrap();
        let ocpg = cout / geom.groups;
        let mut out = Tensor::zeros(&[n, cout, oh, ow]);
        for b in 0..n {
            for oc in 0..cout {
                let g = oc / ocpg;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for icl in 0..icpg {
                            let ic = g * icpg + icl;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * geom.stride + ky * geom.dilation) as isize
                                        - geom.padding as isize;
                                    let ix = (ox * geom.stride + kx * geom.dilation) as isize
                                        - geom.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += wt.data()[((oc * icpg + icl) * kh + ky) * kw + kx]
                                        * x.data()[((b * cin + ic) * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                        out.data_mut()[((b * cout + oc) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: &[usize], k: f64) -> Tensor {
        let len: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|i| libm::sin(i as f64 * k)).collect())
    }

    #[test]
    fn conv_matches_naive_for_all_geometries() {
        let x = ramp(&[2, 4, 9, 7], 0.37);
        for &(k, stride, padding, dilation, groups) in &[
            (3, 1, 1, 1, 1),
            (5, 1, 2, 1, 1),
            (3, 1, 2, 2, 4),
            (5, 1, 4, 2, 4),
            (3, 2, 0, 1, 1),
            (1, 1, 0, 1, 2),
            (7, 1, 3, 1, 4),
        ] {
            let geom = ConvGeom {
                stride,
                padding,
                dilation,
                groups,
            };
            let wt = ramp(&[8, 4 / groups, k, k], 0.71);
            let got = conv2d(&x, &wt, None, &geom);
            let want = naive_conv(&x, &wt, &geom);
            assert!(got.max_abs_diff(&want) < 1e-12, "geom {:?}", geom);
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> == <x, conv_input_grad(g)> and == <w, conv_weight_grad(g)>
        let x = ramp(&[1, 4, 8, 8], 0.13);
        let geom = ConvGeom {
            stride: 2,
            padding: 1,
            dilation: 1,
            groups: 2,
        };
        let wt = ramp(&[4, 2, 3, 3], 0.29);
        let y = conv2d(&x, &wt, None, &geom);
        let g = ramp(y.shape(), 0.51);
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let grads = conv2d_backward(&x, &wt, &geom, &g, true, true, false);
        let via_input: f64 = x.data().iter().zip(grads.input.unwrap().data()).map(|(a, b)| a * b).sum();
        let via_weight: f64 = wt.data().iter().zip(grads.weight.unwrap().data()).map(|(a, b)| a * b).sum();
        assert!((lhs - via_input).abs() < 1e-10);
        assert!((lhs - via_weight).abs() < 1e-10);
    }

    #[test]
    fn pixel_shuffle_round_trips() {
        let x = ramp(&[2, 12, 3, 5], 0.3);
        let y = pixel_shuffle(&x, 2);
        assert_eq!(y.shape(), &[2, 3, 6, 10]);
        assert_eq!(pixel_unshuffle(&y, 2), x);
        // out[c, h*r+i, w*r+j] = in[c*r*r + i*r + j, h, w]
        assert_eq!(y.data()[(1 * 6 + 3) * 10 + 5], x.data()[((4 + 1 * 2 + 1) * 3 + 1) * 5 + 2]);
    }

    #[test]
    fn max_pool_clips_small_inputs() {
        let x = ramp(&[1, 1, 3, 3], 1.1);
        let (y, idx) = max_pool2d(&x, 7, 3);
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        let max = x.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(y.item(), max);
        assert_eq!(x.data()[idx[0]], max);
        assert_eq!(pool_output_len(15, 7, 3), 3);
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let x = ramp(&[1, 2, 4, 5], 0.7);
        assert!(bilinear_resize(&x, 4, 5).max_abs_diff(&x) < 1e-15);
        let c = Tensor::full(&[1, 1, 2, 3], 0.25);
        let up = bilinear_resize(&c, 7, 9);
        assert!(up.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn reflect_pad_layout() {
        let x = Tensor::from_vec(&[1, 1, 1, 3], alloc::vec![1.0, 2.0, 3.0]);
        let x = Tensor::from_vec(&[1, 1, 3, 3], x.data().iter().cycle().take(9).cloned().collect());
        let p = reflect_pad(&x, 2);
        assert_eq!(&p.data()[0..7], &[3.0, 2.0, 1.0, 2.0, 3.0, 2.0, 1.0]);
    }
}
