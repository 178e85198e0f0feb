//! Layer kernels. Sequences are `N×E` (time by channel), convolution filters
//! are `F×h×E`, dense weights are `D×O`. No layer carries a bias.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::TokenId;

/// Probabilities are clamped to this before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn embedding_forward(ids: &[TokenId], table: &Tensor) -> Result<Tensor> {
    table.expect_rank(2, "embedding table")?;
    let (vocab, dim) = (table.shape()[0], table.shape()[1]);
    if ids.is_empty() {
        return Err(Error::Input("embedding lookup of an empty sequence".into()));
    }
    let mut out = Vec::with_capacity(ids.len() * dim);
    for (t, &id) in ids.iter().enumerate() {
        let id = id as usize;
        if id >= vocab {
            return Err(Error::Input(format!(
                "token id {id} at position {t} is outside vocabulary of size {vocab}"
            )));
        }
        out.extend_from_slice(table.row(id));
    }
    Tensor::from_vec(&[ids.len(), dim], out)
}

/// Accumulates the table gradient of an embedding lookup into `grad_table`.
pub fn embedding_backward_into(
    ids: &[TokenId],
    upstream: &Tensor,
    grad_table: &mut Tensor,
) -> Result<()> {
    upstream.expect_rank(2, "embedding upstream")?;
    let (vocab, dim) = (grad_table.shape()[0], grad_table.shape()[1]);
    if upstream.shape() != [ids.len(), dim] {
        return Err(Error::Input(format!(
            "embedding upstream shape {:?} does not match {} ids of width {dim}",
            upstream.shape(),
            ids.len()
        )));
    }
    let grad = grad_table.data_mut();
    for (t, &id) in ids.iter().enumerate() {
        let id = id as usize;
        if id >= vocab {
            return Err(Error::Input(format!(
                "token id {id} at position {t} is outside vocabulary of size {vocab}"
            )));
        }
        axpy(1.0, upstream.row(t), &mut grad[id * dim..(id + 1) * dim]);
    }
    Ok(())
}

pub fn embedding_backward(ids: &[TokenId], upstream: &Tensor, vocab: usize) -> Result<Tensor> {
    let dim = upstream.shape().get(1).copied().unwrap_or(0);
    let mut grad = Tensor::zeros(&[vocab, dim]);
    embedding_backward_into(ids, upstream, &mut grad)?;
    Ok(grad)
}

fn conv_dims(x: &Tensor, filters: &Tensor) -> Result<(usize, usize, usize, usize)> {
    x.expect_rank(2, "conv1d input")?;
    filters.expect_rank(3, "conv1d filters")?;
    let (n, e) = (x.shape()[0], x.shape()[1]);
    let (f, h, fe) = (filters.shape()[0], filters.shape()[1], filters.shape()[2]);
    if h % 2 == 0 {
        return Err(Error::config(
            "filter width",
            format!("must be odd for same-length convolution, got {h}"),
        ));
    }
    if fe != e {
        return Err(Error::Input(format!(
            "conv1d channel mismatch: input has {e}, filters expect {fe}"
        )));
    }
    Ok((n, e, f, h))
}

/// Valid filter-tap range `[lo, hi)` for output position `t`.
#[inline]
fn taps(t: usize, n: usize, h: usize) -> (usize, usize) {
    let pad = (h - 1) / 2;
    let lo = pad.saturating_sub(t);
    let hi = h.min(n + pad - t);
    (lo, hi)
}

/// Same-length 1-D convolution with `(h-1)/2` zero padding on each side.
pub fn conv1d_forward(x: &Tensor, filters: &Tensor) -> Result<Tensor> {
    let (n, e, f, h) = conv_dims(x, filters)?;
    let pad = (h - 1) / 2;
    let xs = x.data();
    let ws = filters.data();
    let mut out = vec![0.0; n * f];
    for t in 0..n {
        let (lo, hi) = taps(t, n, h);
        // taps lo..hi read input rows t+lo-pad .. t+hi-pad, contiguous in memory
        let window = &xs[(t + lo - pad) * e..(t + hi - pad) * e];
        let row = &mut out[t * f..(t + 1) * f];
        for (k, o) in row.iter_mut().enumerate() {
            let w = &ws[(k * h + lo) * e..(k * h + hi) * e];
            *o = dot(window, w);
        }
    }
    Tensor::from_vec(&[n, f], out)
}

/// Returns `(grad wrt x, grad wrt filters)`. Zero upstream entries are skipped,
/// which makes the pass cheap when it follows a max pool.
pub fn conv1d_backward(x: &Tensor, filters: &Tensor, upstream: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, e, f, h) = conv_dims(x, filters)?;
    if upstream.shape() != [n, f] {
        return Err(Error::Input(format!(
            "conv1d upstream shape {:?}, expected [{n}, {f}]",
            upstream.shape()
        )));
    }
    let pad = (h - 1) / 2;
    let xs = x.data();
    let ws = filters.data();
    let mut gx = vec![0.0; n * e];
    let mut gw = vec![0.0; f * h * e];
    for t in 0..n {
        let (lo, hi) = taps(t, n, h);
        let (a, b) = ((t + lo - pad) * e, (t + hi - pad) * e);
        for k in 0..f {
            let g = upstream.data()[t * f + k];
            if g == 0.0 {
                continue;
            }
            let (wa, wb) = ((k * h + lo) * e, (k * h + hi) * e);
            axpy(g, &xs[a..b], &mut gw[wa..wb]);
            axpy(g, &ws[wa..wb], &mut gx[a..b]);
        }
    }
    Ok((
        Tensor::from_vec(&[n, e], gx)?,
        Tensor::from_vec(&[f, h, e], gw)?,
    ))
}

/// Max over the time axis of an `N×F` tensor. Ties go to the earliest step.
pub fn global_max_pool(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    x.expect_rank(2, "max pool input")?;
    let (n, f) = (x.shape()[0], x.shape()[1]);
    if n == 0 {
        return Err(Error::Input("max pool over an empty time axis".into()));
    }
    let mut best = x.row(0).to_vec();
    let mut arg = vec![0usize; f];
    for t in 1..n {
        for (k, &v) in x.row(t).iter().enumerate() {
            if v > best[k] {
                best[k] = v;
                arg[k] = t;
            }
        }
    }
    Ok((Tensor::vector(best), arg))
}

/// Routes each channel's upstream gradient to its recorded argmax step.
pub fn global_max_pool_backward(argmax: &[usize], upstream: &Tensor, n: usize) -> Result<Tensor> {
    let f = argmax.len();
    if upstream.len() != f {
        return Err(Error::Input(format!(
            "max pool upstream has {} channels, expected {f}",
            upstream.len()
        )));
    }
    let mut out = Tensor::zeros(&[n, f]);
    let data = out.data_mut();
    for (k, (&t, &g)) in argmax.iter().zip(upstream.data()).enumerate() {
        if t >= n {
            return Err(Error::Input(format!("argmax {t} outside time axis {n}")));
        }
        data[t * f + k] += g;
    }
    Ok(out)
}

/// `x (D) · w (D×O) -> O`.
pub fn dense_forward(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    w.expect_rank(2, "dense weights")?;
    let (d, o) = (w.shape()[0], w.shape()[1]);
    if x.len() != d {
        return Err(Error::Input(format!(
            "dense input width {} does not match weights {d}×{o}",
            x.len()
        )));
    }
    let mut out = vec![0.0; o];
    for (i, &xi) in x.data().iter().enumerate() {
        axpy(xi, w.row(i), &mut out);
    }
    Ok(Tensor::vector(out))
}

/// Returns `(grad wrt x, grad wrt w)`.
pub fn dense_backward(x: &Tensor, w: &Tensor, upstream: &Tensor) -> Result<(Tensor, Tensor)> {
    w.expect_rank(2, "dense weights")?;
    let (d, o) = (w.shape()[0], w.shape()[1]);
    if x.len() != d || upstream.len() != o {
        return Err(Error::Input(format!(
            "dense backward shapes: x {:?}, w {:?}, upstream {:?}",
            x.shape(),
            w.shape(),
            upstream.shape()
        )));
    }
    let g = upstream.data();
    let gx: Vec<f64> = (0..d).map(|i| dot(w.row(i), g)).collect();
    let mut gw = Vec::with_capacity(d * o);
    for &xi in x.data() {
        gw.extend(g.iter().map(|gj| xi * gj));
    }
    Ok((Tensor::vector(gx), Tensor::from_vec(&[d, o], gw)?))
}

/// Applies the same `D×O` dense map to every row of an `N×D` tensor.
pub fn time_distributed_forward(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    x.expect_rank(2, "time-distributed input")?;
    w.expect_rank(2, "time-distributed weights")?;
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let (wd, o) = (w.shape()[0], w.shape()[1]);
    if d != wd {
        return Err(Error::Input(format!(
            "time-distributed input width {d} does not match weights {wd}×{o}"
        )));
    }
    let mut out = vec![0.0; n * o];
    for t in 0..n {
        let row = &mut out[t * o..(t + 1) * o];
        for (i, &xi) in x.row(t).iter().enumerate() {
            axpy(xi, w.row(i), row);
        }
    }
    Tensor::from_vec(&[n, o], out)
}

pub fn time_distributed_backward(
    x: &Tensor,
    w: &Tensor,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor)> {
    x.expect_rank(2, "time-distributed input")?;
    w.expect_rank(2, "time-distributed weights")?;
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[1];
    if upstream.shape() != [n, o] || w.shape()[0] != d {
        return Err(Error::Input(format!(
            "time-distributed backward shapes: x {:?}, w {:?}, upstream {:?}",
            x.shape(),
            w.shape(),
            upstream.shape()
        )));
    }
    let mut gx = vec![0.0; n * d];
    let mut gw = vec![0.0; d * o];
    for t in 0..n {
        let g = upstream.row(t);
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        for (i, &xi) in x.row(t).iter().enumerate() {
            gx[t * d + i] = dot(w.row(i), g);
            axpy(xi, g, &mut gw[i * o..(i + 1) * o]);
        }
    }
    Ok((Tensor::from_vec(&[n, d], gx)?, Tensor::from_vec(&[d, o], gw)?))
}

/// Max-shifted softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / total).collect()
}

/// Gradient wrt the logits given the softmax output and the upstream
/// gradient wrt that output.
pub fn softmax_backward(probs: &[f64], upstream: &[f64]) -> Vec<f64> {
    let inner = dot(probs, upstream);
    probs
        .iter()
        .zip(upstream)
        .map(|(p, u)| p * (u - inner))
        .collect()
}

pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs.get(label).ok_or_else(|| {
        Error::Input(format!(
            "label {label} outside {} classes",
            probs.len()
        ))
    })?;
    Ok(-p.max(LOG_CLAMP).ln())
}

/// Gradient of `cross_entropy(softmax(logits), label)` wrt the logits.
/// Zero when the clamp is active, matching the clamped loss.
pub fn softmax_cross_entropy_backward(probs: &[f64], label: usize) -> Vec<f64> {
    if probs[label] < LOG_CLAMP {
        return vec![0.0; probs.len()];
    }
    let mut g = probs.to_vec();
    g[label] -= 1.0;
    g
}

pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
        }
    }
    best
}
