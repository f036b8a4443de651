//! Multi-head softmax attention with an optional causal mask.

use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::kernels::{gemm, Layout};
use crate::tensor::{CustomOp, Graph, OpCounter, Tensor, Var};

use super::linear;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Position `t` sees positions `0..=t`.
    Causal,
    Full,
}

/// Softmax(Q K^T / sqrt(dh)) V per head for `q, k, v[L, d]`.
///
/// Returns the output and the attention probabilities `[heads, L, L]`
/// (zeros above the diagonal in causal mode).
#[allow(clippy::too_many_arguments)]
pub(crate) fn attend(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    len: usize,
    dim: usize,
    heads: usize,
    mask: MaskMode,
    counter: &mut OpCounter,
) -> (Vec<f32>, Vec<f32>) {
    let dh = dim / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut out = vec![0.0f32; len * dim];
    let mut probs = vec![0.0f32; heads * len * len];
    let mut qh = vec![0.0f32; len * dh];
    let mut kh = vec![0.0f32; len * dh];
    let mut vh = vec![0.0f32; len * dh];
    let mut oh = vec![0.0f32; len * dh];
    counter.scratch(4 * (4 * len * dh) as u64);
    for h in 0..heads {
        split_head(q, len, dim, dh, h, &mut qh);
        split_head(k, len, dim, dh, h, &mut kh);
        split_head(v, len, dim, dh, h, &mut vh);
        let p = &mut probs[h * len * len..(h + 1) * len * len];
        gemm(len, dh, len, &qh, Layout::N, &kh, Layout::T, 0.0, p);
        counter.add_macs((len * len * dh) as u64);
        for t in 0..len {
            let row = &mut p[t * len..(t + 1) * len];
            let visible = match mask {
                MaskMode::Causal => t + 1,
                MaskMode::Full => len,
            };
            let max = row[..visible]
                .iter()
                .fold(f32::NEG_INFINITY, |m, &x| m.max(x * scale));
            let mut z = 0.0f32;
            for x in &mut row[..visible] {
                *x = (*x * scale - max).exp();
                z += *x;
            }
            let inv = 1.0 / z;
            row[..visible].iter_mut().for_each(|x| *x *= inv);
            row[visible..].iter_mut().for_each(|x| *x = 0.0);
        }
        gemm(len, len, dh, p, Layout::N, &vh, Layout::N, 0.0, &mut oh);
        counter.add_macs((len * len * dh) as u64);
        merge_head(&oh, len, dim, dh, h, &mut out);
    }
    (out, probs)
}

fn split_head(src: &[f32], len: usize, dim: usize, dh: usize, h: usize, dst: &mut [f32]) {
    for t in 0..len {
        dst[t * dh..(t + 1) * dh].copy_from_slice(&src[t * dim + h * dh..t * dim + (h + 1) * dh]);
    }
}

fn merge_head(src: &[f32], len: usize, dim: usize, dh: usize, h: usize, dst: &mut [f32]) {
    for t in 0..len {
        dst[t * dim + h * dh..t * dim + (h + 1) * dh].copy_from_slice(&src[t * dh..(t + 1) * dh]);
    }
}

#[derive(Debug)]
struct AttentionOp {
    heads: usize,
    probs: Vec<f32>,
}

impl CustomOp for AttentionOp {
    fn name(&self) -> &'static str {
        "attention"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let (len, dim) = inputs[0].dims2().expect("rank 2");
        let heads = self.heads;
        let dh = dim / heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let (q, k, v) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let mut dq = vec![0.0f32; len * dim];
        let mut dk = vec![0.0f32; len * dim];
        let mut dv = vec![0.0f32; len * dim];
        let mut qh = vec![0.0f32; len * dh];
        let mut kh = vec![0.0f32; len * dh];
        let mut vh = vec![0.0f32; len * dh];
        let mut gh = vec![0.0f32; len * dh];
        let mut tmp = vec![0.0f32; len * dh];
        let mut dp = vec![0.0f32; len * len];
        for h in 0..heads {
            split_head(q, len, dim, dh, h, &mut qh);
            split_head(k, len, dim, dh, h, &mut kh);
            split_head(v, len, dim, dh, h, &mut vh);
            split_head(g, len, dim, dh, h, &mut gh);
            let p = &self.probs[h * len * len..(h + 1) * len * len];
            // dV = P^T dO
            gemm(len, len, dh, p, Layout::T, &gh, Layout::N, 0.0, &mut tmp);
            merge_head(&tmp, len, dim, dh, h, &mut dv);
            // dP = dO V^T, then dS = P * (dP - rowsum(dP * P))
            gemm(len, dh, len, &gh, Layout::N, &vh, Layout::T, 0.0, &mut dp);
            for t in 0..len {
                let pr = &p[t * len..(t + 1) * len];
                let dr = &mut dp[t * len..(t + 1) * len];
                let dot: f32 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                for (d, &pv) in dr.iter_mut().zip(pr) {
                    *d = pv * (*d - dot) * scale;
                }
            }
            gemm(len, len, dh, &dp, Layout::N, &kh, Layout::N, 0.0, &mut tmp);
            merge_head(&tmp, len, dim, dh, h, &mut dq);
            gemm(len, len, dh, &dp, Layout::T, &qh, Layout::N, 0.0, &mut tmp);
            merge_head(&tmp, len, dim, dh, h, &mut dk);
        }
        vec![Some(dq), Some(dk), Some(dv)]
    }
}

/// Records attention over already-projected `q, k, v[L, d]`.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var, heads: usize, mask: MaskMode) -> Result<Var> {
    let (len, dim) = g.value(q).dims2()?;
    if g.shape(k) != [len, dim] || g.shape(v) != [len, dim] {
        return Err(Error::dim(
            "attention",
            format!("q {:?}, k {:?}, v {:?}", g.shape(q), g.shape(k), g.shape(v)),
        ));
    }
    if heads == 0 || dim % heads != 0 {
        return Err(Error::dim("attention", format!("width {dim} not divisible by {heads} heads")));
    }
    let mut counter = OpCounter::new();
    let (out, probs) = attend(
        g.value(q).data(),
        g.value(k).data(),
        g.value(v).data(),
        len,
        dim,
        heads,
        mask,
        &mut counter,
    );
    let gc = g.counter_mut();
    gc.add_macs(counter.macs);
    gc.scratch(counter.peak_bytes());
    // saved probabilities stay resident with the node
    gc.retain(4 * probs.len() as u64);
    let out = Tensor::new(&[len, dim], out)?;
    Ok(g.custom(&[q, k, v], out, Box::new(AttentionOp { heads, probs })))
}

/// Projections of one attention token mixer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnLayerParams {
    pub dim: usize,
    pub heads: usize,
    pub mask: MaskMode,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

impl AttnLayerParams {
    pub fn declare(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        mask: MaskMode,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "attention width {dim} not divisible by {heads} heads"
            )));
        }
        let w = |s: &mut ParamStore, n: &str| {
            s.declare(format!("{prefix}.{n}"), &[dim, dim], Init::FanIn(1.0))
        };
        let b = |s: &mut ParamStore, n: &str| s.declare(format!("{prefix}.{n}"), &[dim], Init::Const(0.0));
        Ok(Self {
            dim,
            heads,
            mask,
            wq: w(store, "wq"),
            bq: b(store, "bq"),
            wk: w(store, "wk"),
            bk: b(store, "bk"),
            wv: w(store, "wv"),
            bv: b(store, "bv"),
            wo: w(store, "wo"),
            bo: b(store, "bo"),
        })
    }
}

/// Attention token mixer over a `[L, d]` activation block.
pub fn causal_attention(g: &mut Graph, p: &Bound, params: &AttnLayerParams, x: Var) -> Result<Var> {
    let q = linear(g, x, p[params.wq], Some(p[params.bq]))?;
    let k = linear(g, x, p[params.wk], Some(p[params.bk]))?;
    let v = linear(g, x, p[params.wv], Some(p[params.bv]))?;
    let o = attention(g, q, k, v, params.heads, params.mask)?;
    linear(g, o, p[params.wo], Some(p[params.bo]))
}
