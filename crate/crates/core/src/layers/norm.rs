use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Graph, Tensor, Var};

#[derive(Debug)]
struct RmsNormOp {
    eps: f32,
}

fn inv_rms(row: &[f32], eps: f32) -> f32 {
    let ms = row.iter().map(|v| v * v).sum::<f32>() / row.len() as f32;
    1.0 / (ms + eps).sqrt()
}

impl CustomOp for RmsNormOp {
    fn name(&self) -> &'static str {
        "rms_norm"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let (rows, d) = inputs[0].dims2().expect("rank 2");
        let (x, scale) = (inputs[0].data(), inputs[1].data());
        let mut dx = vec![0.0f32; rows * d];
        let mut ds = vec![0.0f32; d];
        for r in 0..rows {
            let xr = &x[r * d..(r + 1) * d];
            let gr = &g[r * d..(r + 1) * d];
            let inv = inv_rms(xr, self.eps);
            let mut dot = 0.0f32;
            for j in 0..d {
                ds[j] += gr[j] * xr[j] * inv;
                dot += scale[j] * gr[j] * xr[j];
            }
            let k = dot * inv * inv * inv / d as f32;
            for j in 0..d {
                dx[r * d + j] = scale[j] * gr[j] * inv - xr[j] * k;
            }
        }
        vec![Some(dx), Some(ds)]
    }
}

/// Per-row `x * scale / sqrt(mean(x^2) + eps)`.
pub fn rms_norm(g: &mut Graph, x: Var, scale: Var, eps: f32) -> Result<Var> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::contract("rms_norm", format!("eps must be positive, got {eps}")));
    }
    let (rows, d) = g.value(x).dims2()?;
    if g.shape(scale) != [d] {
        return Err(Error::dim(
            "rms_norm",
            format!("scale {:?} for rows of width {d}", g.shape(scale)),
        ));
    }
    let (xv, sv) = (g.value(x).data(), g.value(scale).data());
    let mut out = vec![0.0f32; rows * d];
    for r in 0..rows {
        let xr = &xv[r * d..(r + 1) * d];
        let inv = inv_rms(xr, eps);
        for j in 0..d {
            out[r * d + j] = xr[j] * inv * sv[j];
        }
    }
    g.counter_mut().add_macs((2 * rows * d) as u64);
    let out = Tensor::new(&[rows, d], out)?;
    Ok(g.custom(&[x, scale], out, Box::new(RmsNormOp { eps })))
}

#[derive(Debug)]
struct CausalConvOp;

impl CustomOp for CausalConvOp {
    fn name(&self) -> &'static str {
        "causal_conv1d"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let (len, ch) = inputs[0].dims2().expect("rank 2");
        let k = inputs[1].shape()[1];
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let mut dx = vec![0.0f32; len * ch];
        let mut dw = vec![0.0f32; ch * k];
        let mut db = vec![0.0f32; ch];
        for t in 0..len {
            for c in 0..ch {
                let gy = g[t * ch + c];
                db[c] += gy;
                for j in 0..k {
                    let Some(src) = (t + j + 1).checked_sub(k) else { continue };
                    dw[c * k + j] += gy * x[src * ch + c];
                    dx[src * ch + c] += gy * w[c * k + j];
                }
            }
        }
        vec![Some(dx), Some(dw), Some(db)]
    }
}

/// Depthwise causal convolution: `y[t, c] = bias[c] + sum_j w[c, j] x[t - K + 1 + j, c]`,
/// treating positions before the start as zero.
pub fn causal_conv1d(g: &mut Graph, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let (len, ch) = g.value(x).dims2()?;
    let (wc, k) = g.value(weight).dims2()?;
    if wc != ch || g.shape(bias) != [ch] {
        return Err(Error::dim(
            "causal_conv1d",
            format!("x {:?}, weight {:?}, bias {:?}", g.shape(x), g.shape(weight), g.shape(bias)),
        ));
    }
    let (xv, wv, bv) = (g.value(x).data(), g.value(weight).data(), g.value(bias).data());
    let mut out = vec![0.0f32; len * ch];
    for t in 0..len {
        for c in 0..ch {
            let mut acc = bv[c];
            for j in 0..k {
                if let Some(src) = (t + j + 1).checked_sub(k) {
                    acc += wv[c * k + j] * xv[src * ch + c];
                }
            }
            out[t * ch + c] = acc;
        }
    }
    g.counter_mut().add_macs((len * ch * k) as u64);
    let out = Tensor::new(&[len, ch], out)?;
    Ok(g.custom(&[x, weight, bias], out, Box::new(CausalConvOp)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_token_normalizes_to_sign() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(&[2, 4], vec![3.0, 3.0, 3.0, 3.0, -0.5, -0.5, -0.5, -0.5]).unwrap());
        let s = g.leaf(Tensor::filled(&[4], 1.0));
        let y = rms_norm(&mut g, x, s, 1e-12).unwrap();
        for (i, v) in g.value(y).data().iter().enumerate() {
            let want = if i < 4 { 1.0 } else { -1.0 };
            assert!((v - want).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_scale_zero_output() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_fn(&[3, 5], |i| i as f32 - 7.0));
        let s = g.leaf(Tensor::zeros(&[5]));
        let y = rms_norm(&mut g, x, s, 1e-6).unwrap();
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));
        assert!(rms_norm(&mut g, x, s, 0.0).is_err());
    }

    #[test]
    fn conv_is_causal_and_matches_hand_case() {
        let mut g = Graph::new();
        // one channel, kernel [1, 2] => y_t = x_{t-1} + 2 x_t
        let x = g.leaf(Tensor::new(&[3, 1], vec![1.0, 10.0, 100.0]).unwrap());
        let w = g.leaf(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
        let b = g.leaf(Tensor::zeros(&[1]));
        let y = causal_conv1d(&mut g, x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 21.0, 210.0]);
    }
}
