use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::{Graph, Var};

use super::linear;
use super::norm::causal_conv1d;
use super::ssd::{ssd_scan, ScanMode};

/// Sizes of one selective state-space token mixer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SsdDims {
    pub dim: usize,
    pub d_inner: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub d_state: usize,
    /// B/C groups shared across heads.
    pub groups: usize,
    /// Width of the causal depthwise convolution, if enabled.
    pub conv_width: Option<usize>,
}

impl SsdDims {
    /// `d_inner = expand * dim`, heads of `head_dim` channels.
    pub fn new(
        dim: usize,
        expand: usize,
        head_dim: usize,
        d_state: usize,
        conv_width: Option<usize>,
    ) -> Result<Self> {
        let d_inner = expand * dim;
        if head_dim == 0 || !d_inner.is_multiple_of(head_dim) {
            return Err(Error::Config(format!(
                "inner width {d_inner} is not a multiple of head_dim {head_dim}"
            )));
        }
        if d_state == 0 {
            return Err(Error::Config("d_state must be positive".into()));
        }
        Ok(Self {
            dim,
            d_inner,
            heads: d_inner / head_dim,
            head_dim,
            d_state,
            groups: 1,
            conv_width,
        })
    }

    fn bc_width(&self) -> usize {
        self.groups * self.d_state
    }

    /// Output width of the input projection: z, x, B, C and the step sizes.
    pub fn in_proj_width(&self) -> usize {
        2 * self.d_inner + 2 * self.bc_width() + self.heads
    }

    fn conv_channels(&self) -> usize {
        self.d_inner + 2 * self.bc_width()
    }
}

/// Learnable state of one SSD token mixer.
#[derive(Debug, Clone, PartialEq)]
pub struct SsdLayerParams {
    pub dims: SsdDims,
    pub scan: ScanMode,
    pub in_proj: ParamId,
    pub conv_weight: Option<ParamId>,
    pub conv_bias: Option<ParamId>,
    pub dt_bias: ParamId,
    /// Stored as `ln(-a)`, so the decay rate `a = -exp(a_log)` stays negative.
    pub a_log: ParamId,
    pub d_skip: ParamId,
    pub out_proj: ParamId,
}

impl SsdLayerParams {
    pub fn declare(store: &mut ParamStore, prefix: &str, dims: SsdDims, scan: ScanMode) -> Self {
        let in_proj = store.declare(
            format!("{prefix}.in_proj"),
            &[dims.dim, dims.in_proj_width()],
            Init::FanIn(1.0),
        );
        let (conv_weight, conv_bias) = match dims.conv_width {
            Some(k) => (
                Some(store.declare(
                    format!("{prefix}.conv_weight"),
                    &[dims.conv_channels(), k],
                    Init::TruncNormal(1.0 / (k as f32).sqrt()),
                )),
                Some(store.declare(
                    format!("{prefix}.conv_bias"),
                    &[dims.conv_channels()],
                    Init::Const(0.0),
                )),
            ),
            None => (None, None),
        };
        let dt_bias = store.declare(
            format!("{prefix}.dt_bias"),
            &[dims.heads],
            Init::InvSoftplusLogUniform {
                min: 1e-3,
                max: 1e-1,
            },
        );
        let a_log = store.declare(
            format!("{prefix}.a_log"),
            &[dims.heads],
            Init::LogUniform { lo: 1.0, hi: 16.0 },
        );
        let d_skip = store.declare(format!("{prefix}.d_skip"), &[dims.d_inner], Init::Const(1.0));
        let out_proj = store.declare(
            format!("{prefix}.out_proj"),
            &[dims.d_inner, dims.dim],
            Init::FanIn(1.0),
        );
        Self {
            dims,
            scan,
            in_proj,
            conv_weight,
            conv_bias,
            dt_bias,
            a_log,
            d_skip,
            out_proj,
        }
    }
}

/// Mamba-2 style token mixer over `x[L, d]`.
///
/// The input projection yields `(z, x, B, C, dt_raw)`; the scan runs on `x`
/// with `dt = softplus(dt_raw + dt_bias)` and the result is gated by
/// `silu(z)` before the output projection.
pub fn mamba2_mixer(g: &mut Graph, p: &Bound, params: &SsdLayerParams, x: Var) -> Result<Var> {
    let d = params.dims;
    let len = g.shape(x)[0];
    let bc = d.bc_width();
    let proj = linear(g, x, p[params.in_proj], None)?;
    let z = g.slice_cols(proj, 0, d.d_inner)?;
    let mut xbc = g.slice_cols(proj, d.d_inner, d.d_inner + 2 * bc)?;
    let dt_raw = g.slice_cols(proj, 2 * d.d_inner + 2 * bc, d.heads)?;
    if let (Some(w), Some(b)) = (params.conv_weight, params.conv_bias) {
        let conv = causal_conv1d(g, xbc, p[w], p[b])?;
        xbc = g.silu(conv);
    }
    let xs = g.slice_cols(xbc, 0, d.d_inner)?;
    let b_flat = g.slice_cols(xbc, d.d_inner, bc)?;
    let c_flat = g.slice_cols(xbc, d.d_inner + bc, bc)?;
    let b_mat = g.reshape(b_flat, &[len, d.groups, d.d_state])?;
    let c_mat = g.reshape(c_flat, &[len, d.groups, d.d_state])?;
    let dt_pre = g.add(dt_raw, p[params.dt_bias])?;
    let dt = g.softplus(dt_pre);
    let a_pos = g.exp(p[params.a_log]);
    let a = g.neg(a_pos);
    let y = ssd_scan(g, xs, dt, b_mat, c_mat, a, p[params.d_skip], params.scan)?;
    let gate = g.silu(z);
    let gated = g.mul(y, gate)?;
    linear(g, gated, p[params.out_proj], None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelMixerKind {
    Swiglu,
    PlainMlp,
    None,
}

impl ChannelMixerKind {
    /// Hidden width for a model width `dim`.
    pub fn hidden(self, dim: usize) -> usize {
        match self {
            ChannelMixerKind::Swiglu => dim * 5 / 2,
            ChannelMixerKind::PlainMlp => 4 * dim,
            ChannelMixerKind::None => 0,
        }
    }
}

/// Per-token feed-forward sublayer.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelMixerParams {
    Swiglu {
        hidden: usize,
        gate: ParamId,
        up: ParamId,
        down: ParamId,
    },
    PlainMlp {
        hidden: usize,
        fc1: ParamId,
        b1: ParamId,
        fc2: ParamId,
        b2: ParamId,
    },
    None,
}

impl ChannelMixerParams {
    pub fn declare(store: &mut ParamStore, prefix: &str, kind: ChannelMixerKind, dim: usize) -> Self {
        let hidden = kind.hidden(dim);
        let w = |s: &mut ParamStore, n: &str, shape: &[usize]| {
            s.declare(format!("{prefix}.{n}"), shape, Init::FanIn(1.0))
        };
        match kind {
            ChannelMixerKind::Swiglu => ChannelMixerParams::Swiglu {
                hidden,
                gate: w(store, "gate", &[dim, hidden]),
                up: w(store, "up", &[dim, hidden]),
                down: w(store, "down", &[hidden, dim]),
            },
            ChannelMixerKind::PlainMlp => ChannelMixerParams::PlainMlp {
                hidden,
                fc1: w(store, "fc1", &[dim, hidden]),
                b1: store.declare(format!("{prefix}.b1"), &[hidden], Init::Const(0.0)),
                fc2: w(store, "fc2", &[hidden, dim]),
                b2: store.declare(format!("{prefix}.b2"), &[dim], Init::Const(0.0)),
            },
            ChannelMixerKind::None => ChannelMixerParams::None,
        }
    }

    pub fn kind(&self) -> ChannelMixerKind {
        match self {
            ChannelMixerParams::Swiglu { .. } => ChannelMixerKind::Swiglu,
            ChannelMixerParams::PlainMlp { .. } => ChannelMixerKind::PlainMlp,
            ChannelMixerParams::None => ChannelMixerKind::None,
        }
    }
}

/// SwiGLU: `(silu(x W_g) * (x W_u)) W_d`; plain MLP: `gelu(x W_1 + b_1) W_2 + b_2`;
/// `None` returns its input unchanged.
pub fn channel_mixer(g: &mut Graph, p: &Bound, params: &ChannelMixerParams, x: Var) -> Result<Var> {
    match *params {
        ChannelMixerParams::Swiglu { gate, up, down, .. } => {
            let a = linear(g, x, p[gate], None)?;
            let a = g.silu(a);
            let b = linear(g, x, p[up], None)?;
            let h = g.mul(a, b)?;
            linear(g, h, p[down], None)
        }
        ChannelMixerParams::PlainMlp { fc1, b1, fc2, b2, .. } => {
            let h = linear(g, x, p[fc1], Some(p[b1]))?;
            let h = g.gelu(h);
            linear(g, h, p[fc2], Some(p[b2]))
        }
        ChannelMixerParams::None => Ok(x),
    }
}
