//! Adventurer assembly: patch tokens, a trailing class token, per-block
//! heading tokens and inter-layer flipping.

pub mod checkpoint;
pub mod config;
pub mod sequence;

pub use checkpoint::Checkpoint;
pub use config::{
    FlipMode, Heading, ModelConfig, NormKind, Preset, ScanStrategy, TokenMixerKind, KEYS,
};
pub use sequence::{
    drop_heading, flip_patches, heading_tokens, prepend_heading, prepend_tokens, Role,
    TokenSequence,
};

use crate::error::{Error, Result};
use crate::layers::{
    self, causal_attention, channel_mixer, mamba2_mixer, rms_norm, AttnLayerParams,
    ChannelMixerKind, ChannelMixerParams, MaskMode, PatchEmbedParams, PositionalEmbedding,
    ScanMode, SsdDims, SsdLayerParams,
};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

pub const NORM_EPS: f32 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum TokenMixerParams {
    Ssd(SsdLayerParams),
    Attn(AttnLayerParams),
}

/// One residual sublayer: optional pre-norm scale plus the mixer.
#[derive(Debug, Clone, PartialEq)]
pub struct Sublayer<M> {
    pub norm: Option<ParamId>,
    pub mixer: M,
}

/// Parameters of one block. Without a channel mixer the block holds two
/// token mixers.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub token: Vec<Sublayer<TokenMixerParams>>,
    pub channel: Option<Sublayer<ChannelMixerParams>>,
}

/// Parameter layout of a whole model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub patch: PatchEmbedParams,
    pub cls: ParamId,
    pub pos: PositionalEmbedding,
    pub heading_token: Option<ParamId>,
    pub blocks: Vec<BlockParams>,
    pub final_norm: Option<ParamId>,
    pub head_weight: ParamId,
    pub head_bias: ParamId,
}

fn declare_norm(store: &mut ParamStore, cfg: &ModelConfig, name: String) -> Option<ParamId> {
    match cfg.norm {
        NormKind::Rms => Some(store.declare(name, &[cfg.dim], Init::Const(1.0))),
        NormKind::None => None,
    }
}

impl ModelParams {
    pub fn declare(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let n = cfg.patches();
        let patch = PatchEmbedParams::declare(store, "patch_embed", cfg.patch, d);
        let cls = store.declare("cls_token", &[1, d], Init::TruncNormal(0.02));
        let pos = PositionalEmbedding::declare(store, "pos_embed", n, d);
        let heading_token = (cfg.heading == Heading::Learnable)
            .then(|| store.declare("heading_token", &[1, d], Init::TruncNormal(0.02)));
        let mut blocks = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            let mixers = if cfg.channel_mixer == ChannelMixerKind::None { 2 } else { 1 };
            let mut token = Vec::with_capacity(mixers);
            for j in 0..mixers {
                let prefix = format!("blocks.{i}.mixer{j}");
                let norm = declare_norm(store, cfg, format!("{prefix}.norm"));
                let mixer = match cfg.token_mixer {
                    TokenMixerKind::Mamba2 => {
                        let dims = SsdDims::new(d, 2, cfg.head_dim, cfg.d_state, cfg.conv1d.then_some(4))?;
                        TokenMixerParams::Ssd(SsdLayerParams::declare(
                            store,
                            &prefix,
                            dims,
                            ScanMode::Chunked(cfg.chunk_len),
                        ))
                    }
                    TokenMixerKind::CausalAttn | TokenMixerKind::FullAttn => {
                        let mask = if cfg.token_mixer == TokenMixerKind::CausalAttn {
                            MaskMode::Causal
                        } else {
                            MaskMode::Full
                        };
                        TokenMixerParams::Attn(AttnLayerParams::declare(
                            store,
                            &prefix,
                            d,
                            cfg.attn_heads,
                            mask,
                        )?)
                    }
                };
                token.push(Sublayer { norm, mixer });
            }
            let channel = (cfg.channel_mixer != ChannelMixerKind::None).then(|| {
                let prefix = format!("blocks.{i}.ffn");
                Sublayer {
                    norm: declare_norm(store, cfg, format!("{prefix}.norm")),
                    mixer: ChannelMixerParams::declare(store, &prefix, cfg.channel_mixer, d),
                }
            });
            blocks.push(BlockParams { token, channel });
        }
        let final_norm = declare_norm(store, cfg, "norm_f".into());
        let head_weight = store.declare("head.weight", &[d, cfg.num_classes], Init::TruncNormal(0.02));
        let head_bias = store.declare("head.bias", &[cfg.num_classes], Init::Const(0.0));
        Ok(Self {
            patch,
            cls,
            pos,
            heading_token,
            blocks,
            final_norm,
            head_weight,
            head_bias,
        })
    }
}

/// Exact number of learnable scalars of `cfg`.
pub fn count_params(cfg: &ModelConfig) -> Result<u64> {
    let mut store = ParamStore::shapes_only();
    ModelParams::declare(&mut store, cfg)?;
    Ok(store.numel() as u64)
}

/// What one block saw and produced, for invariant checks.
#[derive(Debug, Clone)]
pub struct BlockTrace {
    pub input: TokenSequence,
    /// Sequence entering the token mixer, heading prefix included.
    pub augmented: TokenSequence,
    /// Output after the heading is dropped, before any flip.
    pub unflipped: TokenSequence,
    pub output: TokenSequence,
}

#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    pub blocks: Vec<BlockTrace>,
}

/// Heading state carried across blocks of one forward pass.
#[derive(Debug, Default)]
struct HeadingState {
    frozen: Option<Option<Var>>,
}

/// A configured model with its parameters.
#[derive(Debug, Clone)]
pub struct Adventurer {
    cfg: ModelConfig,
    seed: u64,
    pub params: ModelParams,
    pub store: ParamStore,
}

impl Adventurer {
    /// Declares and initializes every parameter from `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(seed);
        let params = ModelParams::declare(&mut store, &cfg)?;
        Ok(Self {
            cfg,
            seed,
            params,
            store,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_params(&self) -> usize {
        self.store.numel()
    }

    fn pre_norm(&self, g: &mut Graph, p: &Bound, norm: Option<ParamId>, x: Var) -> Result<Var> {
        match norm {
            Some(s) => rms_norm(g, x, p[s], NORM_EPS),
            None => Ok(x),
        }
    }

    fn apply_token_mixer(&self, g: &mut Graph, p: &Bound, m: &TokenMixerParams, x: Var) -> Result<Var> {
        match m {
            TokenMixerParams::Ssd(s) => mamba2_mixer(g, p, s, x),
            TokenMixerParams::Attn(a) => causal_attention(g, p, a, x),
        }
    }

    /// Token mixer under the configured scan strategy. The bidirectional
    /// mode also runs the mixer over reversed patch positions and averages
    /// the two outputs.
    fn token_mix(
        &self,
        g: &mut Graph,
        p: &Bound,
        m: &TokenMixerParams,
        x: Var,
        prefix: usize,
        patches: usize,
    ) -> Result<Var> {
        let fwd = self.apply_token_mixer(g, p, m, x)?;
        match self.cfg.scan {
            ScanStrategy::OneWay => Ok(fwd),
            ScanStrategy::PerLayerBidirectional => {
                let idx = sequence::reversal_index(prefix, patches);
                let rev_in = g.gather_rows(x, &idx)?;
                let rev = self.apply_token_mixer(g, p, m, rev_in)?;
                let back = g.gather_rows(rev, &idx)?;
                let sum = g.add(fwd, back)?;
                Ok(g.scale(sum, 0.5))
            }
        }
    }

    fn block(
        &self,
        g: &mut Graph,
        p: &Bound,
        block: &BlockParams,
        seq: &TokenSequence,
        state: &mut HeadingState,
        trace: Option<&mut ForwardTrace>,
    ) -> Result<TokenSequence> {
        let n = self.cfg.patches();
        seq.check_boundary(n)?;
        let learned = self.params.heading_token.map(|id| p[id]);
        let tokens = if self.cfg.recalc_heading {
            heading_tokens(g, seq, self.cfg.heading, self.cfg.grid(), learned)?
        } else {
            match state.frozen {
                Some(t) => t,
                None => {
                    let t = heading_tokens(g, seq, self.cfg.heading, self.cfg.grid(), learned)?;
                    state.frozen = Some(t);
                    t
                }
            }
        };
        let augmented = match tokens {
            Some(t) => prepend_tokens(g, seq, t)?,
            None => seq.clone(),
        };
        let prefix = augmented.heading_count();
        let mut x = augmented.data;
        for sub in &block.token {
            let h = self.pre_norm(g, p, sub.norm, x)?;
            let y = self.token_mix(g, p, &sub.mixer, h, prefix, n)?;
            x = g.add(x, y)?;
        }
        if let Some(sub) = &block.channel {
            let h = self.pre_norm(g, p, sub.norm, x)?;
            let y = channel_mixer(g, p, &sub.mixer, h)?;
            x = g.add(x, y)?;
        }
        let mixed = TokenSequence {
            data: x,
            ..augmented.clone()
        };
        let unflipped = drop_heading(g, &mixed)?;
        let output = match self.cfg.flip {
            FlipMode::InterLayer => flip_patches(g, &unflipped)?,
            FlipMode::Off => unflipped.clone(),
        };
        if let Some(t) = trace {
            t.blocks.push(BlockTrace {
                input: seq.clone(),
                augmented,
                unflipped,
                output: output.clone(),
            });
        }
        Ok(output)
    }

    /// Patchify, append the class token, add positions, run every block.
    pub fn forward_features(
        &self,
        g: &mut Graph,
        p: &Bound,
        image: Var,
        mut trace: Option<&mut ForwardTrace>,
    ) -> Result<TokenSequence> {
        let want = [layers::embed::CHANNELS, self.cfg.image, self.cfg.image];
        if g.shape(image) != want {
            return Err(Error::dim(
                "forward_features",
                format!("image {:?}, model expects {want:?}", g.shape(image)),
            ));
        }
        let patches = layers::patchify(g, p, &self.params.patch, image)?;
        let seq = TokenSequence::from_patches(g, patches, p[self.params.cls])?;
        let data = g.add(seq.data, p[self.params.pos.table])?;
        let mut seq = TokenSequence { data, ..seq };
        let mut state = HeadingState::default();
        for block in &self.params.blocks {
            seq = self.block(g, p, block, &seq, &mut state, trace.as_deref_mut())?;
        }
        seq.check_boundary(self.cfg.patches())?;
        Ok(seq)
    }

    /// Linear head on the normalized final class token, `[1, classes]`.
    pub fn logits(&self, g: &mut Graph, p: &Bound, image: Var) -> Result<Var> {
        let seq = self.forward_features(g, p, image, None)?;
        self.head(g, p, &seq)
    }

    pub fn head(&self, g: &mut Graph, p: &Bound, seq: &TokenSequence) -> Result<Var> {
        let cls = seq.cls(g)?;
        let cls = self.pre_norm(g, p, self.params.final_norm, cls)?;
        layers::linear(g, cls, p[self.params.head_weight], Some(p[self.params.head_bias]))
    }

    /// Logits of several images stacked as `[batch, classes]`.
    pub fn batch_logits(&self, g: &mut Graph, p: &Bound, images: &[Var]) -> Result<Var> {
        let rows = images
            .iter()
            .map(|&im| self.logits(g, p, im))
            .collect::<Result<Vec<_>>>()?;
        g.concat_rows(&rows)
    }

    /// Forward-only logits `[classes]` for one image `[3, h, w]`.
    pub fn classify(&self, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let im = g.constant(image.clone());
        let l = self.logits(&mut g, &p, im)?;
        g.value(l).reshape(&[self.cfg.num_classes])
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            seed: self.seed,
            tensors: self
                .store
                .names()
                .iter()
                .cloned()
                .zip(self.store.tensors().iter().cloned())
                .collect(),
        }
    }

    /// Rebuilds a model from a checkpoint, checking every tensor against the
    /// layout implied by its config.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let mut model = Self::new(ckpt.config, ckpt.seed)?;
        model.store.load(ckpt.tensors)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn micro_is_small_and_declares_learnable_token_only_when_asked() {
        let cfg = ModelConfig::micro();
        let m = Adventurer::new(cfg.clone(), 0).unwrap();
        assert!(m.store.id("heading_token").is_none());
        assert_eq!(m.num_params() as u64, count_params(&cfg).unwrap());
        let mut cfg = cfg;
        cfg.heading = Heading::Learnable;
        let m = Adventurer::new(cfg, 0).unwrap();
        assert_eq!(m.store.by_name("heading_token").unwrap().shape(), &[1, 64]);
    }

    #[test]
    fn no_channel_mixer_doubles_token_mixers() {
        let mut cfg = ModelConfig::micro();
        cfg.channel_mixer = ChannelMixerKind::None;
        let m = Adventurer::new(cfg, 0).unwrap();
        assert!(m.params.blocks.iter().all(|b| b.token.len() == 2 && b.channel.is_none()));
    }
}
