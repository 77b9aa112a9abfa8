//! Differentiable operations.
//!
//! Layout is row-major. For feature maps the axis order is (time, feature,
//! channel), so the channel axis is innermost.

use super::{numel, BackwardCtx, Tensor};
use crate::error::{Error, Result};

/// Normalization epsilon.
pub const NORM_EPS: f64 = 1e-8;

/// Splits `shape` around `axis` into (outer, extent, inner).
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Axis {
            axis,
            rank: shape.len(),
        });
    }
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    Ok((outer, shape[axis], inner))
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// elementwise

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|ctx: &BackwardCtx<'_>| {
            ctx.needs.iter().map(|&n| n.then(|| ctx.grad.to_vec())).collect()
        }),
    ))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let data: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x - y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|ctx: &BackwardCtx<'_>| {
            vec![
                ctx.needs[0].then(|| ctx.grad.to_vec()),
                ctx.needs[1].then(|| ctx.grad.iter().map(|g| -g).collect()),
            ]
        }),
    ))
}

/// Elementwise (Hadamard) product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let data: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|ctx: &BackwardCtx<'_>| {
            let a = ctx.inputs[0].data();
            let b = ctx.inputs[1].data();
            vec![
                ctx.needs[0].then(|| ctx.grad.iter().zip(b.iter()).map(|(g, y)| g * y).collect()),
                ctx.needs[1].then(|| ctx.grad.iter().zip(a.iter()).map(|(g, x)| g * x).collect()),
            ]
        }),
    ))
}

pub fn scale(a: &Tensor, k: f64) -> Tensor {
    let data: Vec<f64> = a.data().iter().map(|x| k * x).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            vec![Some(ctx.grad.iter().map(|g| k * g).collect())]
        }),
    )
}

/// Sum of all elements, as a shape-`[1]` tensor.
pub fn sum(a: &Tensor) -> Tensor {
    let total: f64 = a.data().iter().sum();
    let n = a.len();
    Tensor::from_op(
        vec![1],
        vec![total],
        vec![a.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| vec![Some(vec![ctx.grad[0]; n])]),
    )
}

/// Arithmetic mean of a list of same-shaped tensors.
pub fn mean_of(items: &[Tensor]) -> Result<Tensor> {
    let (first, rest) = items.split_first().ok_or_else(|| Error::Shape {
        shape: vec![0],
        reason: "mean of an empty list".into(),
    })?;
    let mut acc = first.clone();
    for t in rest {
        acc = add(&acc, t)?;
    }
    Ok(scale(&acc, 1.0 / items.len() as f64))
}

pub fn relu(x: &Tensor) -> Tensor {
    let data: Vec<f64> = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(|ctx: &BackwardCtx<'_>| {
            let x = ctx.inputs[0].data();
            vec![Some(
                ctx.grad
                    .iter()
                    .zip(x.iter())
                    .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                    .collect(),
            )]
        }),
    )
}

/// Parametric ReLU with one learned slope (`slope` has shape `[1]`).
pub fn prelu(x: &Tensor, slope: &Tensor) -> Result<Tensor> {
    if slope.len() != 1 {
        return Err(Error::dim("prelu", x.shape(), slope.shape()));
    }
    let a = slope.item();
    let data: Vec<f64> = x.data().iter().map(|&v| if v >= 0.0 { v } else { a * v }).collect();
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone(), slope.clone()],
        Box::new(|ctx: &BackwardCtx<'_>| {
            let x = ctx.inputs[0].data();
            let a = ctx.inputs[1].item();
            let dx = ctx.needs[0].then(|| {
                ctx.grad
                    .iter()
                    .zip(x.iter())
                    .map(|(&g, &v)| if v >= 0.0 { g } else { a * g })
                    .collect()
            });
            let da = ctx.needs[1].then(|| {
                let s: f64 = ctx
                    .grad
                    .iter()
                    .zip(x.iter())
                    .filter(|(_, &v)| v < 0.0)
                    .map(|(g, v)| g * v)
                    .sum();
                vec![s]
            });
            vec![dx, da]
        }),
    ))
}

/// Largest `f64` strictly below one.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function clamped so the result stays strictly inside (0, 1)
/// even where it would round to an endpoint.
fn logistic(v: f64) -> f64 {
    let y = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, ONE_MINUS_ULP)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let data: Vec<f64> = x.data().iter().map(|&v| logistic(v)).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(|ctx: &BackwardCtx<'_>| {
            vec![Some(
                ctx.grad
                    .iter()
                    .zip(ctx.output)
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect(),
            )]
        }),
    )
}

// ---------------------------------------------------------------------------
// shape manipulation

pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if numel(shape) != x.len() || shape.contains(&0) {
        return Err(Error::dim("reshape", x.shape(), shape));
    }
    Ok(Tensor::from_op(
        shape.to_vec(),
        x.to_vec(),
        vec![x.clone()],
        Box::new(|ctx: &BackwardCtx<'_>| vec![Some(ctx.grad.to_vec())]),
    ))
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For each output flat index, the flat index in the input it is read from.
fn permute_gather_index(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let n = numel(shape);
    let mut index = Vec::with_capacity(n);
    let mut counter = vec![0usize; out_shape.len()];
    for _ in 0..n {
        let src: usize = counter
            .iter()
            .zip(perm)
            .map(|(&c, &p)| c * in_strides[p])
            .sum();
        index.push(src);
        for d in (0..counter.len()).rev() {
            counter[d] += 1;
            if counter[d] < out_shape[d] {
                break;
            }
            counter[d] = 0;
        }
    }
    index
}

/// Reorders axes: output axis `i` is input axis `perm[i]`.
pub fn permute(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::dim("permute", x.shape(), perm));
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let index = permute_gather_index(x.shape(), perm);
    let data = {
        let src = x.data();
        index.iter().map(|&i| src[i]).collect()
    };
    Ok(Tensor::from_op(
        out_shape,
        data,
        vec![x.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let mut g = vec![0.0; ctx.grad.len()];
            for (o, &i) in index.iter().enumerate() {
                g[i] = ctx.grad[o];
            }
            vec![Some(g)]
        }),
    ))
}

/// Picks index `index` along `axis`, dropping that axis.
pub fn select(x: &Tensor, axis: usize, index: usize) -> Result<Tensor> {
    let (outer, extent, inner) = split_axis(x.shape(), axis)?;
    if index >= extent {
        return Err(Error::Shape {
            shape: x.shape().to_vec(),
            reason: format!("index {index} out of range along axis {axis}"),
        });
    }
    let mut out_shape = x.shape().to_vec();
    out_shape.remove(axis);
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    let mut data = Vec::with_capacity(outer * inner);
    {
        let src = x.data();
        for o in 0..outer {
            let start = (o * extent + index) * inner;
            data.extend_from_slice(&src[start..start + inner]);
        }
    }
    Ok(Tensor::from_op(
        out_shape,
        data,
        vec![x.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let mut g = vec![0.0; outer * extent * inner];
            for o in 0..outer {
                let start = (o * extent + index) * inner;
                g[start..start + inner].copy_from_slice(&ctx.grad[o * inner..(o + 1) * inner]);
            }
            vec![Some(g)]
        }),
    ))
}

/// Stacks same-shaped tensors along a new axis inserted at position `axis`.
pub fn stack(items: &[Tensor], axis: usize) -> Result<Tensor> {
    let first = items.first().ok_or_else(|| Error::Shape {
        shape: vec![0],
        reason: "stack of an empty list".into(),
    })?;
    let base = first.shape().to_vec();
    for t in items {
        if t.shape() != base.as_slice() {
            return Err(Error::dim("stack", &base, t.shape()));
        }
    }
    if axis > base.len() {
        return Err(Error::Axis {
            axis,
            rank: base.len() + 1,
        });
    }
    let outer = numel(&base[..axis]);
    let inner = numel(&base[axis..]);
    let count = items.len();
    let mut out_shape = base.clone();
    out_shape.insert(axis, count);
    let mut data = vec![0.0; outer * count * inner];
    for (k, t) in items.iter().enumerate() {
        let src = t.data();
        for o in 0..outer {
            let dst = (o * count + k) * inner;
            data[dst..dst + inner].copy_from_slice(&src[o * inner..(o + 1) * inner]);
        }
    }
    Ok(Tensor::from_op(
        out_shape,
        data,
        items.to_vec(),
        Box::new(move |ctx: &BackwardCtx<'_>| {
            (0..count)
                .map(|k| {
                    ctx.needs[k].then(|| {
                        let mut g = Vec::with_capacity(outer * inner);
                        for o in 0..outer {
                            let src = (o * count + k) * inner;
                            g.extend_from_slice(&ctx.grad[src..src + inner]);
                        }
                        g
                    })
                })
                .collect()
        }),
    ))
}

/// Sums over `axis`, dropping it.
pub fn sum_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, extent, inner) = split_axis(x.shape(), axis)?;
    let mut out_shape = x.shape().to_vec();
    out_shape.remove(axis);
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    let mut data = vec![0.0; outer * inner];
    {
        let src = x.data();
        for o in 0..outer {
            let dst = &mut data[o * inner..(o + 1) * inner];
            for e in 0..extent {
                let start = (o * extent + e) * inner;
                axpy(1.0, &src[start..start + inner], dst);
            }
        }
    }
    Ok(Tensor::from_op(
        out_shape,
        data,
        vec![x.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let mut g = vec![0.0; outer * extent * inner];
            for o in 0..outer {
                for e in 0..extent {
                    let start = (o * extent + e) * inner;
                    g[start..start + inner].copy_from_slice(&ctx.grad[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(g)]
        }),
    ))
}

// ---------------------------------------------------------------------------
// linear maps

/// Matrix product of a `P×Q` and a `Q×R` tensor.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::dim("matmul", a.shape(), b.shape()));
    }
    let (p, q, r) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; p * r];
    {
        let ad = a.data();
        let bd = b.data();
        for i in 0..p {
            let row = &mut out[i * r..(i + 1) * r];
            for k in 0..q {
                axpy(ad[i * q + k], &bd[k * r..(k + 1) * r], row);
            }
        }
    }
    Ok(Tensor::from_op(
        vec![p, r],
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let ad = ctx.inputs[0].data();
            let bd = ctx.inputs[1].data();
            let g = ctx.grad;
            // dA = G·Bᵀ
            let da = ctx.needs[0].then(|| {
                let mut da = vec![0.0; p * q];
                for i in 0..p {
                    let grow = &g[i * r..(i + 1) * r];
                    for k in 0..q {
                        da[i * q + k] = dot(grow, &bd[k * r..(k + 1) * r]);
                    }
                }
                da
            });
            // dB = Aᵀ·G
            let db = ctx.needs[1].then(|| {
                let mut db = vec![0.0; q * r];
                for i in 0..p {
                    let grow = &g[i * r..(i + 1) * r];
                    for k in 0..q {
                        axpy(ad[i * q + k], grow, &mut db[k * r..(k + 1) * r]);
                    }
                }
                db
            });
            vec![da, db]
        }),
    ))
}

/// 1×1 convolution along `axis`: every fibre along `axis` of length `in` is
/// mapped through `weight` (`in × out`) and shifted by `bias` (`out`).
pub fn pointwise_conv(
    x: &Tensor,
    axis: usize,
    weight: &Tensor,
    bias: Option<&Tensor>,
) -> Result<Tensor> {
    let (outer, n_in, inner) = split_axis(x.shape(), axis)?;
    if weight.rank() != 2 || weight.shape()[0] != n_in {
        return Err(Error::dim("pointwise_conv", x.shape(), weight.shape()));
    }
    let n_out = weight.shape()[1];
    if let Some(b) = bias {
        if b.shape() != [n_out] {
            return Err(Error::dim("pointwise_conv bias", weight.shape(), b.shape()));
        }
    }
    let mut out_shape = x.shape().to_vec();
    out_shape[axis] = n_out;
    let mut out = vec![0.0; outer * n_out * inner];
    {
        let xd = x.data();
        let wd = weight.data();
        let bd = bias.map(|b| b.data());
        if inner == 1 {
            for o in 0..outer {
                let row = &mut out[o * n_out..(o + 1) * n_out];
                if let Some(b) = &bd {
                    row.copy_from_slice(b);
                }
                for k in 0..n_in {
                    axpy(xd[o * n_in + k], &wd[k * n_out..(k + 1) * n_out], row);
                }
            }
        } else {
            for o in 0..outer {
                for j in 0..n_out {
                    let dst = &mut out[(o * n_out + j) * inner..(o * n_out + j + 1) * inner];
                    if let Some(b) = &bd {
                        dst.fill(b[j]);
                    }
                    for k in 0..n_in {
                        let src = &xd[(o * n_in + k) * inner..(o * n_in + k + 1) * inner];
                        axpy(wd[k * n_out + j], src, dst);
                    }
                }
            }
        }
    }
    let mut inputs = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        inputs.push(b.clone());
    }
    Ok(Tensor::from_op(
        out_shape,
        out,
        inputs,
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let xd = ctx.inputs[0].data();
            let wd = ctx.inputs[1].data();
            let g = ctx.grad;
            let dx = ctx.needs[0].then(|| {
                let mut dx = vec![0.0; outer * n_in * inner];
                if inner == 1 {
                    for o in 0..outer {
                        let grow = &g[o * n_out..(o + 1) * n_out];
                        for k in 0..n_in {
                            dx[o * n_in + k] = dot(&wd[k * n_out..(k + 1) * n_out], grow);
                        }
                    }
                } else {
                    for o in 0..outer {
                        for k in 0..n_in {
                            let dst = &mut dx[(o * n_in + k) * inner..(o * n_in + k + 1) * inner];
                            for j in 0..n_out {
                                let src = &g[(o * n_out + j) * inner..(o * n_out + j + 1) * inner];
                                axpy(wd[k * n_out + j], src, dst);
                            }
                        }
                    }
                }
                dx
            });
            let dw = ctx.needs[1].then(|| {
                let mut dw = vec![0.0; n_in * n_out];
                if inner == 1 {
                    for o in 0..outer {
                        let grow = &g[o * n_out..(o + 1) * n_out];
                        for k in 0..n_in {
                            axpy(xd[o * n_in + k], grow, &mut dw[k * n_out..(k + 1) * n_out]);
                        }
                    }
                } else {
                    for o in 0..outer {
                        for k in 0..n_in {
                            let xs = &xd[(o * n_in + k) * inner..(o * n_in + k + 1) * inner];
                            for j in 0..n_out {
                                let gs = &g[(o * n_out + j) * inner..(o * n_out + j + 1) * inner];
                                dw[k * n_out + j] += dot(xs, gs);
                            }
                        }
                    }
                }
                dw
            });
            let mut grads = vec![dx, dw];
            if ctx.inputs.len() == 3 {
                grads.push(ctx.needs[2].then(|| {
                    let mut db = vec![0.0; n_out];
                    for o in 0..outer {
                        for (j, d) in db.iter_mut().enumerate() {
                            let start = (o * n_out + j) * inner;
                            *d += g[start..start + inner].iter().sum::<f64>();
                        }
                    }
                    db
                }));
            }
            grads
        }),
    ))
}

// ---------------------------------------------------------------------------
// dilated depthwise convolutions (kernel 3, zero padding = dilation)

/// Tap offsets for a kernel of width 3 at dilation `d`.
fn taps(d: usize) -> [isize; 3] {
    let d = d as isize;
    [-d, 0, d]
}

fn shifted(i: usize, off: isize, extent: usize) -> Option<usize> {
    let j = i as isize + off;
    (j >= 0 && (j as usize) < extent).then_some(j as usize)
}

/// Depthwise convolution over time of an `L×N` map: each feature `n` has its
/// own 3-tap kernel `kernel[n, :]` applied with dilation `d`.
pub fn depthwise_conv1d(x: &Tensor, kernel: &Tensor, bias: &Tensor, dilation: usize) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::dim("depthwise_conv1d", x.shape(), kernel.shape()));
    }
    let (l, n) = (x.shape()[0], x.shape()[1]);
    if kernel.shape() != [n, 3] || bias.shape() != [n] {
        return Err(Error::dim("depthwise_conv1d", x.shape(), kernel.shape()));
    }
    if dilation == 0 {
        return Err(Error::Config("dilation must be at least 1".into()));
    }
    let offs = taps(dilation);
    // kernel transposed to (tap, feature) so the inner loop is contiguous
    let kt: Vec<f64> = {
        let k = kernel.data();
        (0..3).flat_map(|t| (0..n).map(move |c| (t, c))).map(|(t, c)| k[c * 3 + t]).collect()
    };
    let mut out = vec![0.0; l * n];
    {
        let xd = x.data();
        let bd = bias.data();
        for t in 0..l {
            let dst = &mut out[t * n..(t + 1) * n];
            dst.copy_from_slice(&bd);
            for (tap, &off) in offs.iter().enumerate() {
                if let Some(s) = shifted(t, off, l) {
                    let src = &xd[s * n..(s + 1) * n];
                    let kk = &kt[tap * n..(tap + 1) * n];
                    for ((o, &xv), &kv) in dst.iter_mut().zip(src).zip(kk) {
                        *o += xv * kv;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_op(
        vec![l, n],
        out,
        vec![x.clone(), kernel.clone(), bias.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let xd = ctx.inputs[0].data();
            let g = ctx.grad;
            let mut dx = ctx.needs[0].then(|| vec![0.0; l * n]);
            let mut dkt = ctx.needs[1].then(|| vec![0.0; 3 * n]);
            for t in 0..l {
                let gs = &g[t * n..(t + 1) * n];
                for (tap, &off) in offs.iter().enumerate() {
                    let Some(s) = shifted(t, off, l) else { continue };
                    if let Some(dx) = dx.as_mut() {
                        let kk = &kt[tap * n..(tap + 1) * n];
                        for ((d, &gv), &kv) in dx[s * n..(s + 1) * n].iter_mut().zip(gs).zip(kk) {
                            *d += gv * kv;
                        }
                    }
                    if let Some(dk) = dkt.as_mut() {
                        let xs = &xd[s * n..(s + 1) * n];
                        for ((d, &gv), &xv) in dk[tap * n..(tap + 1) * n].iter_mut().zip(gs).zip(xs) {
                            *d += gv * xv;
                        }
                    }
                }
            }
            let dk = dkt.map(|dkt| {
                let mut dk = vec![0.0; n * 3];
                for t in 0..3 {
                    for c in 0..n {
                        dk[c * 3 + t] = dkt[t * n + c];
                    }
                }
                dk
            });
            let db = ctx.needs[2].then(|| {
                let mut db = vec![0.0; n];
                for t in 0..l {
                    axpy(1.0, &g[t * n..(t + 1) * n], &mut db);
                }
                db
            });
            vec![dx, dk, db]
        }),
    ))
}

/// Depthwise 2-D convolution over (time, feature) of an `L×N×C` map: each
/// channel `c` has its own 3×3 kernel `kernel[c, :, :]`, dilated by `d` on
/// both axes, with zero padding `d` so the output keeps the input shape.
pub fn depthwise_conv2d(x: &Tensor, kernel: &Tensor, bias: &Tensor, dilation: usize) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::dim("depthwise_conv2d", x.shape(), kernel.shape()));
    }
    let (l, n, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if kernel.shape() != [c, 3, 3] || bias.shape() != [c] {
        return Err(Error::dim("depthwise_conv2d", x.shape(), kernel.shape()));
    }
    if dilation == 0 {
        return Err(Error::Config("dilation must be at least 1".into()));
    }
    let offs = taps(dilation);
    // kernel transposed to (tap_t, tap_f, channel)
    let kt: Vec<f64> = {
        let k = kernel.data();
        let mut kt = vec![0.0; 9 * c];
        for ch in 0..c {
            for tap in 0..9 {
                kt[tap * c + ch] = k[ch * 9 + tap];
            }
        }
        kt
    };
    let at = |t: usize, f: usize| (t * n + f) * c;
    let mut out = vec![0.0; l * n * c];
    {
        let xd = x.data();
        let bd = bias.data();
        for t in 0..l {
            for f in 0..n {
                let o = at(t, f);
                let dst = &mut out[o..o + c];
                dst.copy_from_slice(&bd);
                for (a, &dt) in offs.iter().enumerate() {
                    let Some(st) = shifted(t, dt, l) else { continue };
                    for (b, &df) in offs.iter().enumerate() {
                        let Some(sf) = shifted(f, df, n) else { continue };
                        let s = at(st, sf);
                        let kk = &kt[(a * 3 + b) * c..(a * 3 + b + 1) * c];
                        for ((o, &xv), &kv) in dst.iter_mut().zip(&xd[s..s + c]).zip(kk) {
                            *o += xv * kv;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_op(
        vec![l, n, c],
        out,
        vec![x.clone(), kernel.clone(), bias.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let xd = ctx.inputs[0].data();
            let g = ctx.grad;
            let at = |t: usize, f: usize| (t * n + f) * c;
            let mut dx = ctx.needs[0].then(|| vec![0.0; l * n * c]);
            let mut dkt = ctx.needs[1].then(|| vec![0.0; 9 * c]);
            for t in 0..l {
                for f in 0..n {
                    let o = at(t, f);
                    let gs = &g[o..o + c];
                    for (a, &dt) in offs.iter().enumerate() {
                        let Some(st) = shifted(t, dt, l) else { continue };
                        for (b, &df) in offs.iter().enumerate() {
                            let Some(sf) = shifted(f, df, n) else { continue };
                            let s = at(st, sf);
                            let tap = a * 3 + b;
                            if let Some(dx) = dx.as_mut() {
                                let kk = &kt[tap * c..(tap + 1) * c];
                                for ((d, &gv), &kv) in dx[s..s + c].iter_mut().zip(gs).zip(kk) {
                                    *d += gv * kv;
                                }
                            }
                            if let Some(dk) = dkt.as_mut() {
                                let xs = &xd[s..s + c];
                                for ((d, &gv), &xv) in dk[tap * c..(tap + 1) * c].iter_mut().zip(gs).zip(xs) {
                                    *d += gv * xv;
                                }
                            }
                        }
                    }
                }
            }
            let dk = dkt.map(|dkt| {
                let mut dk = vec![0.0; 9 * c];
                for ch in 0..c {
                    for tap in 0..9 {
                        dk[ch * 9 + tap] = dkt[tap * c + ch];
                    }
                }
                dk
            });
            let db = ctx.needs[2].then(|| {
                let mut db = vec![0.0; c];
                for chunk in g.chunks_exact(c) {
                    axpy(1.0, chunk, &mut db);
                }
                db
            });
            vec![dx, dk, db]
        }),
    ))
}

// ---------------------------------------------------------------------------
// normalization

/// Mean and reciprocal standard deviation used by a normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub inv_std: f64,
}

impl NormStats {
    pub fn of(data: &[f64]) -> Self {
        let count = data.len() as f64;
        let mean = data.iter().sum::<f64>() / count;
        let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
        Self {
            mean,
            inv_std: 1.0 / (var + NORM_EPS).sqrt(),
        }
    }
}

/// Global layer normalization: mean and variance over every element of the
/// map, affine gain/bias indexed along `axis`.
pub fn global_layer_norm(x: &Tensor, axis: usize, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    global_layer_norm_with(x, axis, gain, bias, None).map(|(y, _)| y)
}

/// As [`global_layer_norm`], optionally with externally fixed statistics.
/// Fixed statistics are treated as constants by the backward pass. Returns
/// the output and the statistics that were applied.
pub fn global_layer_norm_with(
    x: &Tensor,
    axis: usize,
    gain: &Tensor,
    bias: &Tensor,
    fixed: Option<NormStats>,
) -> Result<(Tensor, NormStats)> {
    let (outer, extent, inner) = split_axis(x.shape(), axis)?;
    if gain.shape() != [extent] || bias.shape() != [extent] {
        return Err(Error::dim("global_layer_norm", x.shape(), gain.shape()));
    }
    let count = x.len() as f64;
    let stats = fixed.unwrap_or_else(|| NormStats::of(&x.data()));
    let xhat: Vec<f64> = x.data().iter().map(|v| (v - stats.mean) * stats.inv_std).collect();
    let mut out = vec![0.0; xhat.len()];
    {
        let gd = gain.data();
        let bd = bias.data();
        for o in 0..outer {
            for a in 0..extent {
                let start = (o * extent + a) * inner;
                for i in start..start + inner {
                    out[i] = gd[a] * xhat[i] + bd[a];
                }
            }
        }
    }
    let live = fixed.is_none();
    let inv_std = stats.inv_std;
    let y = Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone(), gain.clone(), bias.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let gd = ctx.inputs[1].data();
            let g = ctx.grad;
            let mut dgain = vec![0.0; extent];
            let mut dbias = vec![0.0; extent];
            let mut dxhat = vec![0.0; xhat.len()];
            for o in 0..outer {
                for a in 0..extent {
                    let start = (o * extent + a) * inner;
                    for i in start..start + inner {
                        dxhat[i] = g[i] * gd[a];
                        dgain[a] += g[i] * xhat[i];
                        dbias[a] += g[i];
                    }
                }
            }
            let dx = ctx.needs[0].then(|| {
                if !live {
                    return dxhat.iter().map(|d| inv_std * d).collect();
                }
                let mean_d = dxhat.iter().sum::<f64>() / count;
                let mean_dx = dxhat.iter().zip(&xhat).map(|(d, h)| d * h).sum::<f64>() / count;
                dxhat
                    .iter()
                    .zip(&xhat)
                    .map(|(d, h)| inv_std * (d - mean_d - h * mean_dx))
                    .collect()
            });
            vec![dx, ctx.needs[1].then_some(dgain), ctx.needs[2].then_some(dbias)]
        }),
    );
    Ok((y, stats))
}

// ---------------------------------------------------------------------------
// framing

/// Overlap-add of `L×K` segments at step `hop`, normalized per sample by the
/// number of contributing segments, then truncated or zero-extended to
/// `out_len` samples.
pub fn overlap_add(segments: &Tensor, hop: usize, out_len: usize) -> Result<Tensor> {
    if segments.rank() != 2 || hop == 0 || hop > segments.shape()[1] || out_len == 0 {
        return Err(Error::Shape {
            shape: segments.shape().to_vec(),
            reason: format!("overlap_add needs L×K segments with 0 < hop ≤ K (hop {hop})"),
        });
    }
    let (l, k) = (segments.shape()[0], segments.shape()[1]);
    let full = (l - 1) * hop + k;
    let mut counts = vec![0.0f64; full];
    for s in 0..l {
        for c in &mut counts[s * hop..s * hop + k] {
            *c += 1.0;
        }
    }
    let mut acc = vec![0.0; full];
    {
        let sd = segments.data();
        for s in 0..l {
            axpy(1.0, &sd[s * k..(s + 1) * k], &mut acc[s * hop..s * hop + k]);
        }
    }
    let mut out: Vec<f64> = acc.iter().zip(&counts).map(|(a, c)| a / c).collect();
    out.resize(out_len, 0.0);
    Ok(Tensor::from_op(
        vec![out_len],
        out,
        vec![segments.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let mut g = vec![0.0; l * k];
            for s in 0..l {
                for j in 0..k {
                    let t = s * hop + j;
                    if t < out_len {
                        g[s * k + j] = ctx.grad[t] / counts[t];
                    }
                }
            }
            vec![Some(g)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let eye = t(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = t(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(matmul(&eye, &b).unwrap().to_vec(), b.to_vec());

        let a = t(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let ones = t(&[2, 1], vec![1.0, 1.0]);
        let y = matmul(&a, &ones).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
        assert_eq!(y.to_vec(), vec![3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = t(&[2, 3], vec![0.0; 6]);
        let b = t(&[2, 3], vec![0.0; 6]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn pointwise_identity_and_shape() {
        let x = t(&[4, 2, 3], (0..24).map(|v| v as f64).collect());
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 4] = 1.0;
        }
        let w = t(&[3, 3], eye);
        let b = t(&[3], vec![0.0; 3]);
        assert_eq!(pointwise_conv(&x, 2, &w, Some(&b)).unwrap().to_vec(), x.to_vec());

        let w5 = t(&[3, 5], vec![0.1; 15]);
        let b5 = t(&[5], vec![0.0; 5]);
        assert_eq!(pointwise_conv(&x, 2, &w5, Some(&b5)).unwrap().shape(), &[4, 2, 5]);
        assert!(pointwise_conv(&x, 3, &w5, Some(&b5)).is_err());
        assert!(pointwise_conv(&x, 1, &w5, Some(&b5)).is_err());
    }

    #[test]
    fn pointwise_middle_axis_matches_manual() {
        // x (2, 3, 2), conv along axis 1 (3 -> 2)
        let x: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 2.0).collect();
        let w: Vec<f64> = vec![1.0, -1.0, 0.5, 2.0, -0.25, 3.0];
        let b = vec![0.1, -0.2];
        let y = pointwise_conv(&t(&[2, 3, 2], x.clone()), 1, &t(&[3, 2], w.clone()), Some(&t(&[2], b.clone())))
            .unwrap()
            .to_vec();
        for o in 0..2 {
            for j in 0..2 {
                for i in 0..2 {
                    let mut e = b[j];
                    for k in 0..3 {
                        e += x[(o * 3 + k) * 2 + i] * w[k * 2 + j];
                    }
                    assert!((y[(o * 2 + j) * 2 + i] - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dconv1d_hand_cases() {
        let x = t(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let k = t(&[1, 3], vec![1.0, 1.0, 1.0]);
        let b = t(&[1], vec![0.0]);
        assert_eq!(depthwise_conv1d(&x, &k, &b, 1).unwrap().to_vec(), vec![3.0, 6.0, 9.0, 7.0]);
        assert_eq!(depthwise_conv1d(&x, &k, &b, 2).unwrap().to_vec(), vec![4.0, 6.0, 4.0, 6.0]);
        let center = t(&[1, 3], vec![0.0, 1.0, 0.0]);
        assert_eq!(depthwise_conv1d(&x, &center, &b, 3).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn dconv2d_all_ones() {
        let x = t(&[4, 4, 1], vec![1.0; 16]);
        let k = t(&[1, 3, 3], vec![1.0; 9]);
        let b = t(&[1], vec![0.0]);
        let y = depthwise_conv2d(&x, &k, &b, 1).unwrap().to_vec();
        // corners see a 2×2 neighbourhood, interior a full 3×3
        assert_eq!(y[0], 4.0);
        assert_eq!(y[3], 4.0);
        assert_eq!(y[12], 4.0);
        assert_eq!(y[15], 4.0);
        assert_eq!(y[5], 9.0);
        assert_eq!(y[10], 9.0);
        assert_eq!(y[1], 6.0);
    }

    #[test]
    fn dconv2d_identity_kernel() {
        let x = t(&[5, 4, 2], (0..40).map(|v| (v as f64).sin()).collect());
        let mut k = vec![0.0; 18];
        k[4] = 1.0;
        k[13] = 1.0;
        let y = depthwise_conv2d(&x, &t(&[2, 3, 3], k), &t(&[2], vec![0.0; 2]), 2).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn dconv_kernel_mismatch() {
        let x = t(&[3, 3, 2], vec![0.0; 18]);
        let k = t(&[3, 3, 3], vec![0.0; 27]);
        assert!(depthwise_conv2d(&x, &k, &t(&[3], vec![0.0; 3]), 1).is_err());
        let x1 = t(&[3, 2], vec![0.0; 6]);
        assert!(depthwise_conv1d(&x1, &t(&[3, 3], vec![0.0; 9]), &t(&[3], vec![0.0; 3]), 1).is_err());
    }

    #[test]
    fn activations() {
        let x = t(&[3], vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).to_vec(), vec![0.0, 0.0, 2.0]);
        let y = prelu(&t(&[2], vec![-2.0, 3.0]), &t(&[1], vec![0.25])).unwrap();
        assert_eq!(y.to_vec(), vec![-0.5, 3.0]);
        assert_eq!(sigmoid(&t(&[1], vec![0.0])).item(), 0.5);
        let s = sigmoid(&t(&[2], vec![-40.0, 40.0])).to_vec();
        assert!(s[0] > 0.0 && s[1] < 1.0);
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let x = Tensor::parameter(&[3], vec![-1.0, 0.0, 1.0]).unwrap();
        sum(&relu(&x)).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn layer_norm_constant_input() {
        let x = t(&[3, 2], vec![5.0; 6]);
        let y = global_layer_norm(&x, 1, &t(&[2], vec![1.0; 2]), &t(&[2], vec![0.0; 2])).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_standardizes() {
        let x = t(&[4, 3, 2], (0..24).map(|v| ((v * 7) % 11) as f64 - 3.0).collect());
        let y = global_layer_norm(&x, 2, &t(&[2], vec![1.0; 2]), &t(&[2], vec![0.0; 2]))
            .unwrap()
            .to_vec();
        let m = y.iter().sum::<f64>() / 24.0;
        let v = y.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 24.0;
        assert!(m.abs() < 1e-6);
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn permute_and_select() {
        let x = t(&[2, 3, 2], (0..12).map(|v| v as f64).collect());
        let p = permute(&x, &[0, 2, 1]).unwrap();
        assert_eq!(p.shape(), &[2, 2, 3]);
        assert_eq!(&p.to_vec()[..6], &[0.0, 2.0, 4.0, 1.0, 3.0, 5.0]);
        let s = select(&x, 2, 1).unwrap();
        assert_eq!(s.shape(), &[2, 3]);
        assert_eq!(s.to_vec(), vec![1.0, 3.0, 5.0, 7.0, 9.0, 11.0]);
        let back = stack(&[select(&x, 2, 0).unwrap(), s], 2).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
        assert!(permute(&x, &[0, 0, 1]).is_err());
    }

    #[test]
    fn sum_axis_values() {
        let x = t(&[2, 2, 3], (0..12).map(|v| v as f64).collect());
        let s = sum_axis(&x, 2).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.to_vec(), vec![3.0, 12.0, 21.0, 30.0]);
    }

    #[test]
    fn overlap_add_counts() {
        let seg = t(&[2, 4], vec![1.0; 8]);
        let y = overlap_add(&seg, 2, 6).unwrap();
        assert_eq!(y.to_vec(), vec![1.0; 6]);
    }
}
