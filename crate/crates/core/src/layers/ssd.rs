//! Selective state-space scan with a scalar decay per head.
//!
//! For every head `h`, with `alpha_t = exp(dt_t * a_h)`:
//!
//! ```text
//! H_t = alpha_t * H_{t-1} + dt_t * x_t B_t^T      (H_0 = 0, H_t is head_dim x d_state)
//! y_t = H_t C_t + D * x_t
//! ```
//!
//! `B` and `C` are shared by all heads of a group; `groups` divides `heads`.
//! The recurrent form walks positions one at a time. The chunked form splits
//! the sequence into blocks, resolves each block with decay-weighted matrix
//! products and hands the final state of a block to the next one.

use crate::error::{Error, Result};
use crate::tensor::kernels::{gemm, Layout};
use crate::tensor::{Graph, OpCounter, Tensor, Var};

/// Extents of one scan problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanDims {
    pub len: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub groups: usize,
    pub state: usize,
}

impl ScanDims {
    pub fn inner(&self) -> usize {
        self.heads * self.head_dim
    }

    fn group_of(&self, h: usize) -> usize {
        h / (self.heads / self.groups)
    }

    /// Reads and validates extents from `x[L, inner]`, `dt[L, heads]`,
    /// `b, c[L, groups, state]`, `a[heads]`, `d[inner]`.
    pub fn infer(
        x: &Tensor,
        dt: &Tensor,
        b: &Tensor,
        c: &Tensor,
        a: &Tensor,
        d: &Tensor,
    ) -> Result<Self> {
        let bad = |what: String| Error::dim("ssd_scan", what);
        let (len, inner) = x.dims2()?;
        let (l2, heads) = dt.dims2()?;
        if l2 != len {
            return Err(bad(format!("x {:?} vs dt {:?}", x.shape(), dt.shape())));
        }
        let (groups, state) = match b.shape() {
            [l3, g, n] if *l3 == len => (*g, *n),
            s => return Err(bad(format!("B shape {s:?} for length {len}"))),
        };
        if c.shape() != b.shape() {
            return Err(bad(format!("C {:?} vs B {:?}", c.shape(), b.shape())));
        }
        if a.shape() != [heads] {
            return Err(bad(format!("a {:?} vs {heads} heads", a.shape())));
        }
        if d.shape() != [inner] {
            return Err(bad(format!("D {:?} vs inner width {inner}", d.shape())));
        }
        if inner % heads != 0 || heads % groups != 0 {
            return Err(bad(format!(
                "inner {inner}, heads {heads}, groups {groups} do not nest"
            )));
        }
        Ok(Self {
            len,
            heads,
            head_dim: inner / heads,
            groups,
            state,
        })
    }
}

/// Borrowed scan operands in flat row-major layout.
#[derive(Debug, Clone, Copy)]
pub struct ScanInputs<'a> {
    pub dims: ScanDims,
    pub x: &'a [f32],
    pub dt: &'a [f32],
    pub b: &'a [f32],
    pub c: &'a [f32],
    pub a: &'a [f32],
    pub d: &'a [f32],
}

impl<'a> ScanInputs<'a> {
    pub fn from_tensors(
        x: &'a Tensor,
        dt: &'a Tensor,
        b: &'a Tensor,
        c: &'a Tensor,
        a: &'a Tensor,
        d: &'a Tensor,
    ) -> Result<Self> {
        let dims = ScanDims::infer(x, dt, b, c, a, d)?;
        Ok(Self {
            dims,
            x: x.data(),
            dt: dt.data(),
            b: b.data(),
            c: c.data(),
            a: a.data(),
            d: d.data(),
        })
    }

    /// Step sizes must be positive and decays negative.
    pub fn check_contract(&self) -> Result<()> {
        if let Some(v) = self.dt.iter().find(|v| v.is_nan() || **v <= 0.0) {
            return Err(Error::contract("ssd_scan", format!("step size {v} is not positive")));
        }
        if let Some(v) = self.a.iter().find(|v| v.is_nan() || **v >= 0.0) {
            return Err(Error::contract("ssd_scan", format!("log-decay {v} is not negative")));
        }
        Ok(())
    }

    fn bc_row(&self, buf: &'a [f32], t: usize, g: usize) -> &'a [f32] {
        let n = self.dims.state;
        let off = (t * self.dims.groups + g) * n;
        &buf[off..off + n]
    }
}

/// Position-by-position evaluation.
pub fn ssd_scan_recurrent(
    x: &Tensor,
    dt: &Tensor,
    b: &Tensor,
    c: &Tensor,
    a: &Tensor,
    d: &Tensor,
) -> Result<Tensor> {
    let inp = ScanInputs::from_tensors(x, dt, b, c, a, d)?;
    inp.check_contract()?;
    let y = recurrent(&inp, None, &mut OpCounter::new());
    Tensor::new(x.shape(), y)
}

/// Recurrent scan with every decay factor forced to `alpha`, bypassing the
/// sign checks. Exists for degenerate-case tests (alpha = 1 gives prefix sums).
#[doc(hidden)]
pub fn ssd_scan_recurrent_fixed_decay(
    x: &Tensor,
    dt: &Tensor,
    b: &Tensor,
    c: &Tensor,
    d: &Tensor,
    alpha: f32,
) -> Result<Tensor> {
    let heads = dt.dims2()?.1;
    let a = Tensor::filled(&[heads], -1.0);
    let inp = ScanInputs::from_tensors(x, dt, b, c, &a, d)?;
    let y = recurrent(&inp, Some(alpha), &mut OpCounter::new());
    Tensor::new(x.shape(), y)
}

/// Block-wise evaluation with chunks of `chunk_len` positions.
pub fn ssd_scan_chunked(
    x: &Tensor,
    dt: &Tensor,
    b: &Tensor,
    c: &Tensor,
    a: &Tensor,
    d: &Tensor,
    chunk_len: usize,
) -> Result<Tensor> {
    if chunk_len == 0 {
        return Err(Error::contract("ssd_scan_chunked", "chunk_len must be >= 1"));
    }
    let inp = ScanInputs::from_tensors(x, dt, b, c, a, d)?;
    inp.check_contract()?;
    let y = chunked(&inp, chunk_len, &mut OpCounter::new());
    Tensor::new(x.shape(), y)
}

pub(crate) fn recurrent(inp: &ScanInputs, fixed_alpha: Option<f32>, counter: &mut OpCounter) -> Vec<f32> {
    let ScanDims {
        len,
        heads,
        head_dim,
        state,
        ..
    } = inp.dims;
    let inner = inp.dims.inner();
    let mut y = vec![0.0f32; len * inner];
    let mut h_state = vec![0.0f32; heads * head_dim * state];
    counter.scratch(4 * h_state.len() as u64);
    for t in 0..len {
        for h in 0..heads {
            let g = inp.dims.group_of(h);
            let dt = inp.dt[t * heads + h];
            let alpha = fixed_alpha.unwrap_or_else(|| (dt * inp.a[h]).exp());
            let bt = inp.bc_row(inp.b, t, g);
            let ct = inp.bc_row(inp.c, t, g);
            for p in 0..head_dim {
                let ch = h * head_dim + p;
                let xv = inp.x[t * inner + ch];
                let row = &mut h_state[(h * head_dim + p) * state..(h * head_dim + p + 1) * state];
                let mut acc = 0.0f32;
                for n in 0..state {
                    row[n] = alpha * row[n] + dt * bt[n] * xv;
                    acc += row[n] * ct[n];
                }
                y[t * inner + ch] = acc + inp.d[ch] * xv;
            }
        }
    }
    counter.add_macs((len * inner * (2 * state + 1)) as u64);
    y
}

pub(crate) fn chunked(inp: &ScanInputs, chunk_len: usize, counter: &mut OpCounter) -> Vec<f32> {
    let ScanDims {
        len,
        heads,
        head_dim: pd,
        groups,
        state: ns,
    } = inp.dims;
    let inner = inp.dims.inner();
    let q_max = chunk_len.min(len);
    let mut y = vec![0.0f32; len * inner];
    // state per head stored as [head_dim x d_state]
    let mut h_state = vec![0.0f32; heads * pd * ns];

    let mut cb = vec![0.0f32; groups * q_max * q_max];
    let mut w = vec![0.0f32; q_max * q_max];
    let mut xh = vec![0.0f32; q_max * pd];
    let mut yh = vec![0.0f32; q_max * pd];
    let mut bc = vec![0.0f32; q_max * ns];
    let mut cc = vec![0.0f32; q_max * ns];
    let mut cum = vec![0.0f32; q_max];
    counter.scratch(
        4 * (h_state.len() + cb.len() + w.len() + 2 * xh.len() + 2 * bc.len() + cum.len()) as u64,
    );

    let mut start = 0;
    while start < len {
        let q = chunk_len.min(len - start);
        // C_i . B_j for every group
        for g in 0..groups {
            gather_bc(inp.b, start, q, g, groups, ns, &mut bc);
            gather_bc(inp.c, start, q, g, groups, ns, &mut cc);
            gemm(
                q,
                ns,
                q,
                &cc[..q * ns],
                Layout::N,
                &bc[..q * ns],
                Layout::T,
                0.0,
                &mut cb[g * q * q..(g + 1) * q * q],
            );
            counter.add_macs((q * q * ns) as u64);
        }
        for h in 0..heads {
            let g = inp.dims.group_of(h);
            let a = inp.a[h];
            let mut run = 0.0f32;
            for (i, c) in cum.iter_mut().enumerate().take(q) {
                run += inp.dt[(start + i) * heads + h] * a;
                *c = run;
            }
            let cbg = &cb[g * q * q..(g + 1) * q * q];
            for i in 0..q {
                for j in 0..q {
                    w[i * q + j] = if j <= i {
                        cbg[i * q + j] * (cum[i] - cum[j]).exp() * inp.dt[(start + j) * heads + h]
                    } else {
                        0.0
                    };
                }
            }
            for i in 0..q {
                let src = &inp.x[(start + i) * inner + h * pd..(start + i) * inner + (h + 1) * pd];
                xh[i * pd..(i + 1) * pd].copy_from_slice(src);
            }
            // intra-chunk: W x
            gemm(q, q, pd, &w[..q * q], Layout::N, &xh[..q * pd], Layout::N, 0.0, &mut yh[..q * pd]);
            counter.add_macs((q * q * pd) as u64);

            // carried state: y_i += exp(cum_i) * C_i . H^T
            gather_bc(inp.c, start, q, g, groups, ns, &mut cc);
            for i in 0..q {
                let s = cum[i].exp();
                cc[i * ns..(i + 1) * ns].iter_mut().for_each(|v| *v *= s);
            }
            let hs = &mut h_state[h * pd * ns..(h + 1) * pd * ns];
            gemm(q, ns, pd, &cc[..q * ns], Layout::N, hs, Layout::T, 1.0, &mut yh[..q * pd]);
            counter.add_macs((q * ns * pd) as u64);

            for i in 0..q {
                for p in 0..pd {
                    let ch = h * pd + p;
                    y[(start + i) * inner + ch] = yh[i * pd + p] + inp.d[ch] * xh[i * pd + p];
                }
            }

            // next state: H = exp(cum_last) H + sum_j exp(cum_last - cum_j) dt_j x_j B_j^T
            let last = cum[q - 1];
            let decay = last.exp();
            hs.iter_mut().for_each(|v| *v *= decay);
            for j in 0..q {
                let s = (last - cum[j]).exp() * inp.dt[(start + j) * heads + h];
                xh[j * pd..(j + 1) * pd].iter_mut().for_each(|v| *v *= s);
            }
            gather_bc(inp.b, start, q, g, groups, ns, &mut bc);
            gemm(pd, q, ns, &xh[..q * pd], Layout::T, &bc[..q * ns], Layout::N, 1.0, hs);
            counter.add_macs((pd * q * ns) as u64);
        }
        start += q;
    }
    counter.add_macs((len * inner) as u64);
    y
}

fn gather_bc(src: &[f32], start: usize, q: usize, g: usize, groups: usize, ns: usize, dst: &mut [f32]) {
    for i in 0..q {
        let off = ((start + i) * groups + g) * ns;
        dst[i * ns..(i + 1) * ns].copy_from_slice(&src[off..off + ns]);
    }
}

/// Gradients of a scalar loss with respect to every scan operand, given
/// `grad_y = dL/dy`. States are recomputed forward, then a reverse-time
/// adjoint recurrence runs over them.
pub(crate) struct ScanGrads {
    pub x: Vec<f32>,
    pub dt: Vec<f32>,
    pub b: Vec<f32>,
    pub c: Vec<f32>,
    pub a: Vec<f32>,
    pub d: Vec<f32>,
}

pub(crate) fn backward(inp: &ScanInputs, grad_y: &[f32]) -> ScanGrads {
    let ScanDims {
        len,
        heads,
        head_dim: pd,
        groups,
        state: ns,
    } = inp.dims;
    let inner = inp.dims.inner();
    let hsz = heads * pd * ns;

    // states[t] = H_t for t = 0..=len (H_0 = 0)
    let mut states = vec![0.0f32; (len + 1) * hsz];
    let mut alphas = vec![0.0f32; len * heads];
    for t in 0..len {
        let (prev, cur) = states.split_at_mut((t + 1) * hsz);
        let prev = &prev[t * hsz..];
        let cur = &mut cur[..hsz];
        for h in 0..heads {
            let g = inp.dims.group_of(h);
            let dt = inp.dt[t * heads + h];
            let alpha = (dt * inp.a[h]).exp();
            alphas[t * heads + h] = alpha;
            let bt = inp.bc_row(inp.b, t, g);
            for p in 0..pd {
                let xv = inp.x[t * inner + h * pd + p];
                let base = (h * pd + p) * ns;
                for n in 0..ns {
                    cur[base + n] = alpha * prev[base + n] + dt * bt[n] * xv;
                }
            }
        }
    }

    let mut gx = vec![0.0f32; len * inner];
    let mut gdt = vec![0.0f32; len * heads];
    let mut gb = vec![0.0f32; len * groups * ns];
    let mut gc = vec![0.0f32; len * groups * ns];
    let mut ga = vec![0.0f32; heads];
    let mut gd = vec![0.0f32; inner];
    // adjoint of H_t, carried backwards
    let mut adj = vec![0.0f32; hsz];

    for t in (0..len).rev() {
        let cur = &states[(t + 1) * hsz..(t + 2) * hsz];
        let prev = &states[t * hsz..(t + 1) * hsz];
        for h in 0..heads {
            let g = inp.dims.group_of(h);
            let dt = inp.dt[t * heads + h];
            let alpha = alphas[t * heads + h];
            let carry = if t + 1 < len { alphas[(t + 1) * heads + h] } else { 0.0 };
            let bt = inp.bc_row(inp.b, t, g);
            let ct = inp.bc_row(inp.c, t, g);
            let gbt = (t * groups + g) * ns;
            let mut g_alpha = 0.0f32;
            let mut g_dt = 0.0f32;
            for p in 0..pd {
                let ch = h * pd + p;
                let gy = grad_y[t * inner + ch];
                let xv = inp.x[t * inner + ch];
                let base = (h * pd + p) * ns;
                let mut gx_acc = inp.d[ch] * gy;
                gd[ch] += gy * xv;
                for n in 0..ns {
                    let a_n = ct[n] * gy + carry * adj[base + n];
                    adj[base + n] = a_n;
                    gc[gbt + n] += gy * cur[base + n];
                    gx_acc += dt * a_n * bt[n];
                    gb[gbt + n] += dt * a_n * xv;
                    g_dt += a_n * bt[n] * xv;
                    g_alpha += a_n * prev[base + n];
                }
                gx[t * inner + ch] = gx_acc;
            }
            gdt[t * heads + h] = g_dt + g_alpha * alpha * inp.a[h];
            ga[h] += g_alpha * alpha * dt;
        }
    }
    ScanGrads {
        x: gx,
        dt: gdt,
        b: gb,
        c: gc,
        a: ga,
        d: gd,
    }
}

#[derive(Debug)]
struct ScanOp;

impl crate::tensor::CustomOp for ScanOp {
    fn name(&self) -> &'static str {
        "ssd_scan"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &[f32]) -> Vec<Option<Vec<f32>>> {
        let inp = ScanInputs::from_tensors(inputs[0], inputs[1], inputs[2], inputs[3], inputs[4], inputs[5])
            .expect("validated in forward");
        let g = backward(&inp, grad_out);
        vec![Some(g.x), Some(g.dt), Some(g.b), Some(g.c), Some(g.a), Some(g.d)]
    }
}

/// Which evaluation order a recorded scan uses in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanMode {
    Recurrent,
    Chunked(usize),
}

/// Records a differentiable scan on the graph.
#[allow(clippy::too_many_arguments)]
pub fn ssd_scan(
    g: &mut Graph,
    x: Var,
    dt: Var,
    b: Var,
    c: Var,
    a: Var,
    d: Var,
    mode: ScanMode,
) -> Result<Var> {
    let mut counter = OpCounter::new();
    let y = {
        let inp = ScanInputs::from_tensors(g.value(x), g.value(dt), g.value(b), g.value(c), g.value(a), g.value(d))?;
        inp.check_contract()?;
        match mode {
            ScanMode::Recurrent => recurrent(&inp, None, &mut counter),
            ScanMode::Chunked(0) => {
                return Err(Error::contract("ssd_scan_chunked", "chunk_len must be >= 1"))
            }
            ScanMode::Chunked(q) => chunked(&inp, q, &mut counter),
        }
    };
    let out = Tensor::new(g.shape(x), y)?;
    let gc = g.counter_mut();
    gc.add_macs(counter.macs);
    gc.scratch(counter.peak_bytes());
    Ok(g.custom(&[x, dt, b, c, a, d], out, Box::new(ScanOp)))
}
