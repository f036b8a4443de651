//! Building blocks: patch embedding, the two causal token mixers,
//! normalization and the channel mixers.

pub mod attention;
pub mod embed;
pub mod mixer;
pub mod norm;
pub mod ssd;

pub use attention::{attention, causal_attention, AttnLayerParams, MaskMode};
pub use embed::{patch_grid, patchify, PatchEmbedParams, PositionalEmbedding};
pub use mixer::{
    channel_mixer, mamba2_mixer, ChannelMixerKind, ChannelMixerParams, SsdDims, SsdLayerParams,
};
pub use norm::{causal_conv1d, rms_norm};
pub use ssd::{ssd_scan, ssd_scan_chunked, ssd_scan_recurrent, ScanMode};

use crate::error::Result;
use crate::tensor::{Graph, Var};

/// `x W (+ b)` for `x[L, in]`, `W[in, out]`, `b[out]`.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = g.matmul(x, w)?;
    match b {
        Some(b) => g.add(y, b),
        None => Ok(y),
    }
}
