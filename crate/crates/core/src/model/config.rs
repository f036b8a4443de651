use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::layers::ChannelMixerKind;

/// Enum with a fixed set of textual spellings used by the config format.
macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($ty::$variant => $text),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    _ => Err(Error::Config(format!(
                        "invalid {} {s:?}; expected one of: {}",
                        stringify!($ty),
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }

        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenMixerKind {
    Mamba2,
    CausalAttn,
    FullAttn,
}

text_enum!(TokenMixerKind {
    Mamba2 => "mamba2",
    CausalAttn => "causal-attn",
    FullAttn => "full-attn",
});

text_enum!(ChannelMixerKind {
    Swiglu => "swiglu",
    PlainMlp => "plain-mlp",
    None => "none",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlipMode {
    InterLayer,
    Off,
}

text_enum!(FlipMode {
    InterLayer => "inter-layer",
    Off => "off",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScanStrategy {
    OneWay,
    PerLayerBidirectional,
}

text_enum!(ScanStrategy {
    OneWay => "one-way",
    PerLayerBidirectional => "per-layer-bidirectional",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormKind {
    Rms,
    None,
}

text_enum!(NormKind {
    Rms => "rms",
    None => "none",
});

/// Tokens prepended to the sequence inside every block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Heading {
    /// Mean of all current tokens, class token included.
    Average,
    /// `N` tokens, each the mean of one cell of a `sqrt(N) x sqrt(N)` split
    /// of the patch grid.
    Grid(usize),
    /// A copy of the current class token activation.
    DuplicateCls,
    /// One trained vector shared by all blocks.
    Learnable,
    Off,
}

impl Heading {
    pub const GRID_SIZES: [usize; 3] = [1, 4, 9];

    /// Every supported mode, grids included.
    pub fn variants() -> Vec<Heading> {
        let mut v = vec![Heading::Average];
        v.extend(Self::GRID_SIZES.iter().map(|&n| Heading::Grid(n)));
        v.extend([Heading::DuplicateCls, Heading::Learnable, Heading::Off]);
        v
    }

    /// Number of prepended positions.
    pub fn count(self) -> usize {
        match self {
            Heading::Grid(n) => n,
            Heading::Off => 0,
            _ => 1,
        }
    }

    /// Cells per side of a grid heading.
    pub fn grid_side(n: usize) -> Option<usize> {
        match n {
            1 => Some(1),
            4 => Some(2),
            9 => Some(3),
            _ => None,
        }
    }
}

impl fmt::Display for Heading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Heading::Average => f.write_str("average"),
            Heading::Grid(n) => write!(f, "grid:{n}"),
            Heading::DuplicateCls => f.write_str("duplicate-cls"),
            Heading::Learnable => f.write_str("learnable"),
            Heading::Off => f.write_str("off"),
        }
    }
}

impl FromStr for Heading {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(Heading::Average),
            "duplicate-cls" => Ok(Heading::DuplicateCls),
            "learnable" => Ok(Heading::Learnable),
            "off" => Ok(Heading::Off),
            _ => {
                let n = s
                    .strip_prefix("grid:")
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|n| Heading::grid_side(*n).is_some())
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "invalid heading {s:?}; expected average, grid:1, grid:4, grid:9, duplicate-cls, learnable or off"
                        ))
                    })?;
                Ok(Heading::Grid(n))
            }
        }
    }
}

impl Serialize for Heading {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Full architectural description of one model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ModelConfig {
    pub depth: usize,
    pub dim: usize,
    pub patch: usize,
    pub image: usize,
    pub num_classes: usize,
    pub token_mixer: TokenMixerKind,
    pub channel_mixer: ChannelMixerKind,
    pub heading: Heading,
    pub recalc_heading: bool,
    pub flip: FlipMode,
    pub scan: ScanStrategy,
    pub norm: NormKind,
    /// State width of the SSD mixer.
    pub d_state: usize,
    /// Channels per SSD head.
    pub head_dim: usize,
    /// Heads of the attention mixers.
    pub attn_heads: usize,
    /// Short causal convolution ahead of the scan.
    pub conv1d: bool,
    /// Chunk length of the scan; 1 still uses the chunked path.
    pub chunk_len: usize,
}

/// Config keys in canonical order.
pub const KEYS: [&str; 17] = [
    "depth",
    "dim",
    "patch",
    "image",
    "num_classes",
    "token_mixer",
    "channel_mixer",
    "heading",
    "recalc_heading",
    "flip",
    "scan",
    "norm",
    "d_state",
    "head_dim",
    "attn_heads",
    "conv1d",
    "chunk_len",
];

/// Named model sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Tiny,
    Small,
    Base,
    Large,
    Micro,
}

text_enum!(Preset {
    Tiny => "tiny",
    Small => "small",
    Base => "base",
    Large => "large",
    Micro => "micro",
});

impl Preset {
    /// Published parameter count, where one exists.
    pub fn target_params(self) -> Option<u64> {
        match self {
            Preset::Tiny => Some(12_000_000),
            Preset::Small => Some(44_000_000),
            Preset::Base => Some(99_000_000),
            Preset::Large => Some(346_000_000),
            Preset::Micro => None,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" => Ok(true),
        "false" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key} expects true/false or on/off, got {v:?}"))),
    }
}

fn parse_count(key: &str, v: &str) -> Result<usize> {
    v.parse::<usize>()
        .map_err(|_| Error::Config(format!("{key} expects a non-negative integer, got {v:?}")))
}

impl ModelConfig {
    pub fn preset(p: Preset) -> Self {
        let (depth, dim) = match p {
            Preset::Tiny => (12, 256),
            Preset::Small => (12, 512),
            Preset::Base => (12, 768),
            Preset::Large => (24, 1024),
            Preset::Micro => return Self::micro(),
        };
        Self {
            depth,
            dim,
            patch: 16,
            image: 224,
            num_classes: 1000,
            token_mixer: TokenMixerKind::Mamba2,
            channel_mixer: ChannelMixerKind::Swiglu,
            heading: Heading::Average,
            recalc_heading: true,
            flip: FlipMode::InterLayer,
            scan: ScanStrategy::OneWay,
            norm: NormKind::Rms,
            d_state: 64,
            head_dim: 64,
            attn_heads: dim / 64,
            conv1d: true,
            chunk_len: 64,
        }
    }

    /// Four blocks of width 64 on 32x32 inputs with 4x4 patches, two classes.
    pub fn micro() -> Self {
        Self {
            depth: 4,
            dim: 64,
            patch: 4,
            image: 32,
            num_classes: 2,
            token_mixer: TokenMixerKind::Mamba2,
            channel_mixer: ChannelMixerKind::Swiglu,
            heading: Heading::Average,
            recalc_heading: true,
            flip: FlipMode::InterLayer,
            scan: ScanStrategy::OneWay,
            norm: NormKind::Rms,
            d_state: 16,
            head_dim: 32,
            attn_heads: 2,
            conv1d: false,
            chunk_len: 32,
        }
    }

    /// Patch grid `(rows, cols)`.
    pub fn grid(&self) -> (usize, usize) {
        (self.image / self.patch, self.image / self.patch)
    }

    pub fn patches(&self) -> usize {
        let (r, c) = self.grid();
        r * c
    }

    /// Inner width of the SSD mixer.
    pub fn d_inner(&self) -> usize {
        2 * self.dim
    }

    /// Checks cross-field constraints.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (key, v) in [
            ("depth", self.depth),
            ("dim", self.dim),
            ("patch", self.patch),
            ("image", self.image),
            ("num_classes", self.num_classes),
            ("d_state", self.d_state),
            ("head_dim", self.head_dim),
            ("attn_heads", self.attn_heads),
            ("chunk_len", self.chunk_len),
        ] {
            if v == 0 {
                return bad(format!("{key} must be positive"));
            }
        }
        if !self.image.is_multiple_of(self.patch) {
            return bad(format!(
                "image {} is not a multiple of patch {}",
                self.image, self.patch
            ));
        }
        if self.token_mixer == TokenMixerKind::Mamba2 && !self.d_inner().is_multiple_of(self.head_dim) {
            return bad(format!(
                "inner width {} is not a multiple of head_dim {}",
                self.d_inner(),
                self.head_dim
            ));
        }
        if self.token_mixer != TokenMixerKind::Mamba2 && !self.dim.is_multiple_of(self.attn_heads) {
            return bad(format!(
                "dim {} is not divisible by attn_heads {}",
                self.dim, self.attn_heads
            ));
        }
        if let Heading::Grid(n) = self.heading {
            let (rows, cols) = self.grid();
            match Heading::grid_side(n) {
                Some(k) if rows % k == 0 && cols % k == 0 => {}
                _ => {
                    return bad(format!(
                        "a {rows}x{cols} patch grid cannot be split into {n} equal cells"
                    ))
                }
            }
        }
        if self.scan == ScanStrategy::PerLayerBidirectional && self.flip != FlipMode::Off {
            return bad("scan=per-layer-bidirectional requires flip=off".into());
        }
        Ok(())
    }

    /// Current value of `key` in config-file spelling.
    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "depth" => self.depth.to_string(),
            "dim" => self.dim.to_string(),
            "patch" => self.patch.to_string(),
            "image" => self.image.to_string(),
            "num_classes" => self.num_classes.to_string(),
            "token_mixer" => self.token_mixer.to_string(),
            "channel_mixer" => self.channel_mixer.to_string(),
            "heading" => self.heading.to_string(),
            "recalc_heading" => self.recalc_heading.to_string(),
            "flip" => self.flip.to_string(),
            "scan" => self.scan.to_string(),
            "norm" => self.norm.to_string(),
            "d_state" => self.d_state.to_string(),
            "head_dim" => self.head_dim.to_string(),
            "attn_heads" => self.attn_heads.to_string(),
            "conv1d" => if self.conv1d { "on" } else { "off" }.to_string(),
            "chunk_len" => self.chunk_len.to_string(),
            _ => return Err(unknown_key(key)),
        })
    }

    /// Sets one field from its textual value, without cross-field checks.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "depth" => self.depth = parse_count(key, v)?,
            "dim" => self.dim = parse_count(key, v)?,
            "patch" => self.patch = parse_count(key, v)?,
            "image" => self.image = parse_count(key, v)?,
            "num_classes" => self.num_classes = parse_count(key, v)?,
            "token_mixer" => self.token_mixer = v.parse()?,
            "channel_mixer" => self.channel_mixer = v.parse()?,
            "heading" => self.heading = v.parse()?,
            "recalc_heading" => self.recalc_heading = parse_bool(key, v)?,
            "flip" => self.flip = v.parse()?,
            "scan" => self.scan = v.parse()?,
            "norm" => self.norm = v.parse()?,
            "d_state" => self.d_state = parse_count(key, v)?,
            "head_dim" => self.head_dim = parse_count(key, v)?,
            "attn_heads" => self.attn_heads = parse_count(key, v)?,
            "conv1d" => self.conv1d = parse_bool(key, v)?,
            "chunk_len" => self.chunk_len = parse_count(key, v)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }

    /// Applies `key=value` strings in order, then validates.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = split_pair(o.as_ref())?;
            self.set(k, v)?;
        }
        self.validate()
    }

    /// Canonical text: every key once, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("known key")))
            .collect()
    }

    /// Parses `key=value` lines on top of the Micro defaults. Blank lines and
    /// `#` comments are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::micro();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = split_pair(line)?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Short identifier of the form `key=value,...` listing the fields that
    /// differ from `base`.
    pub fn diff_id(&self, base: &ModelConfig) -> String {
        let parts: Vec<String> = KEYS
            .iter()
            .filter_map(|k| {
                let v = self.get(k).ok()?;
                (base.get(k).ok()? != v).then(|| format!("{k}={v}"))
            })
            .collect();
        if parts.is_empty() {
            "base".into()
        } else {
            parts.join(",")
        }
    }
}

fn unknown_key(key: &str) -> Error {
    Error::UnknownKey {
        key: key.to_string(),
        valid: KEYS.join(", "),
    }
}

fn split_pair(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Error::Config(format!("expected key=value, got {s:?}")))
}
