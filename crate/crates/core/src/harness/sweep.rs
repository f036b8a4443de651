//! Cartesian ablation sweeps over model configuration axes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::layers::ChannelMixerKind;
use crate::model::{Heading, ModelConfig, TokenMixerKind};

use super::data::ToyDataset;
use super::train::{train_toy, TrainOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Heading average on or off.
    Heading,
    Flip,
    ChannelMixer,
    TokenMixer,
    /// Alternative heading tokens: grid pooling, copied or learned tokens and
    /// a heading that is not recomputed per block.
    HeadingDesign,
}

impl Axis {
    pub const ALL: [Axis; 5] = [
        Axis::Heading,
        Axis::Flip,
        Axis::ChannelMixer,
        Axis::TokenMixer,
        Axis::HeadingDesign,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Heading => "heading",
            Axis::Flip => "flip",
            Axis::ChannelMixer => "channel_mixer",
            Axis::TokenMixer => "token_mixer",
            Axis::HeadingDesign => "heading_design",
        }
    }

    /// `(label, overrides)` for every setting of the axis.
    pub fn settings(self) -> Vec<(String, Vec<String>)> {
        let one = |key: &str, v: String| (v.clone(), vec![format!("{key}={v}")]);
        match self {
            Axis::Heading => ["average", "off"]
                .iter()
                .map(|v| one("heading", v.to_string()))
                .collect(),
            Axis::Flip => ["inter-layer", "off"]
                .iter()
                .map(|v| one("flip", v.to_string()))
                .collect(),
            Axis::ChannelMixer => ChannelMixerKind::ALL
                .iter()
                .map(|k| one("channel_mixer", k.to_string()))
                .collect(),
            Axis::TokenMixer => TokenMixerKind::ALL
                .iter()
                .map(|k| one("token_mixer", k.to_string()))
                .collect(),
            Axis::HeadingDesign => {
                let mut v: Vec<_> = Heading::variants()
                    .into_iter()
                    .filter(|h| *h != Heading::Off)
                    .map(|h| {
                        let (label, mut o) = one("heading", h.to_string());
                        o.push("recalc_heading=true".into());
                        (label, o)
                    })
                    .collect();
                v.push((
                    "average-frozen".into(),
                    vec!["heading=average".into(), "recalc_heading=false".into()],
                ));
                v
            }
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('-', "_");
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == norm)
            .ok_or_else(|| {
                let valid: Vec<_> = Axis::ALL.iter().map(|a| a.name()).collect();
                Error::Config(format!("unknown sweep axis `{s}`; valid axes: {}", valid.join(", ")))
            })
    }
}

/// One cell of the sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    /// Setting label per axis, in axis order.
    pub settings: Vec<String>,
    pub config: Option<ModelConfig>,
    pub final_loss: f32,
    pub final_acc: f32,
    pub fingerprint: Option<u64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub axes: Vec<Axis>,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn failures(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.error.is_some())
    }

    /// One column per axis followed by `final_loss,final_acc`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = self.axes.iter().map(|a| a.name().to_string()).collect();
        header.extend(["final_loss".into(), "final_acc".into()]);
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = r.settings.clone();
            rec.push(r.final_loss.to_string());
            rec.push(r.final_acc.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Every combination of `axes` as `(labels, overrides)`, last axis fastest.
pub fn combinations(axes: &[Axis]) -> Vec<(Vec<String>, Vec<String>)> {
    axes.iter().fold(vec![(Vec::new(), Vec::new())], |acc, axis| {
        let settings = axis.settings();
        acc.into_iter()
            .flat_map(|(labels, overrides)| {
                settings.iter().map(move |(l, o)| {
                    let mut labels = labels.clone();
                    labels.push(l.clone());
                    let mut overrides = overrides.clone();
                    overrides.extend(o.iter().cloned());
                    (labels, overrides)
                })
            })
            .collect()
    })
}

/// Trains one model per combination of `axes`, all from the same seed.
/// Failures are recorded on their row and the sweep moves on.
pub fn ablation_sweep(
    base: &ModelConfig,
    axes: &[Axis],
    data: &ToyDataset,
    opts: TrainOptions,
) -> Result<SweepTable> {
    if axes.is_empty() {
        return Err(Error::Config("a sweep needs at least one axis".into()));
    }
    for (i, a) in axes.iter().enumerate() {
        if axes[..i].contains(a) {
            return Err(Error::Config(format!("sweep axis `{a}` given twice")));
        }
    }
    if axes.contains(&Axis::Heading) && axes.contains(&Axis::HeadingDesign) {
        return Err(Error::Config("`heading` and `heading_design` both set the heading".into()));
    }
    let rows = combinations(axes)
        .into_iter()
        .map(|(settings, overrides)| {
            let mut row = SweepRow {
                settings,
                config: None,
                final_loss: f32::NAN,
                final_acc: f32::NAN,
                fingerprint: None,
                error: None,
            };
            let mut cfg = base.clone();
            let outcome = cfg
                .apply_overrides(&overrides)
                .and_then(|_| train_toy(&cfg, data, opts));
            row.config = Some(cfg);
            match outcome {
                Ok((_, trace)) => {
                    row.final_loss = trace.final_loss;
                    row.final_acc = trace.final_acc;
                    row.fingerprint = Some(trace.fingerprint);
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect();
    Ok(SweepTable {
        axes: axes.to_vec(),
        seed: opts.seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combination_counts() {
        assert_eq!(combinations(&[Axis::Heading, Axis::Flip]).len(), 4);
        assert_eq!(combinations(&[Axis::ChannelMixer]).len(), 3);
        assert_eq!(combinations(&[Axis::TokenMixer, Axis::ChannelMixer]).len(), 9);
        let (labels, overrides) = &combinations(&[Axis::Heading, Axis::Flip])[1];
        assert_eq!(labels, &["average", "off"]);
        assert_eq!(overrides, &["heading=average", "flip=off"]);
    }

    #[test]
    fn axis_names_parse() {
        for a in Axis::ALL {
            assert_eq!(a.name().parse::<Axis>().unwrap(), a);
        }
        assert_eq!("channel-mixer".parse::<Axis>().unwrap(), Axis::ChannelMixer);
        assert!("depth".parse::<Axis>().is_err());
    }

    #[test]
    fn heading_design_covers_every_variant_and_frozen_recalc() {
        let labels: Vec<String> = Axis::HeadingDesign.settings().into_iter().map(|s| s.0).collect();
        for want in ["average", "grid:1", "grid:4", "grid:9", "duplicate-cls", "learnable", "average-frozen"] {
            assert!(labels.iter().any(|l| l == want), "{want} missing from {labels:?}");
        }
    }
}
