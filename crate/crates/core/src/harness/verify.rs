//! Measured checks behind `verify` and the acceptance run.
//!
//! Each `measure_*` function returns raw numbers; [`run_suite`] compares them
//! against fixed tolerances and reports pass/fail per check.

use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::layers::{attention, ssd_scan_chunked, ssd_scan_recurrent, MaskMode};
use crate::model::{
    count_params, flip_patches, Adventurer, Checkpoint, FlipMode, ForwardTrace, Heading,
    ModelConfig, Preset, TokenSequence,
};
use crate::params::ParamStore;
use crate::rng::{uniform_tensor, SplitRng};
use crate::tensor::{Graph, Tensor};

use super::bench::{bench_scaling, BenchOptions, BenchSeries};
use super::data::{GratingSpec, ToyDataset};
use super::oracle::{self, max_abs_err, max_rel_err, Mat, Weights};
use super::sweep::{ablation_sweep, Axis, SweepTable};
use super::train::{train_toy, TrainOptions, TrainTrace};

/// Deliberate defects used to show that the suites can fail.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Faults {
    /// Runs the model with flipping off while the checks still expect it.
    pub disable_flip: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: String,
    pub passed: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, measured: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance: format!("<= {limit:e}"),
            passed: measured <= limit,
        }
    }

    fn within(name: impl Into<String>, measured: f64, target: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance: format!("{target} +/- {tol}"),
            passed: (measured - target).abs() <= tol,
        }
    }

    fn at_least(name: impl Into<String>, measured: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance: format!(">= {limit}"),
            passed: measured >= limit,
        }
    }

    fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self {
            name: name.into(),
            measured: if ok { 1.0 } else { 0.0 },
            tolerance: "true".into(),
            passed: ok,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub checks: Vec<Check>,
    pub seconds: f64,
    /// Set when the suite could not run to completion.
    pub error: Option<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.checks.iter().all(|c| c.passed)
    }

    /// Description of the first failing assertion.
    pub fn first_failure(&self) -> Option<String> {
        if let Some(e) = &self.error {
            return Some(format!("{}: {e}", self.name));
        }
        self.checks.iter().find(|c| !c.passed).map(|c| {
            format!(
                "{}: {} measured {} (want {})",
                self.name, c.name, c.measured, c.tolerance
            )
        })
    }
}

pub const SUITES: [&str; 12] = [
    "oracles",
    "param-counts",
    "scan-equivalence",
    "mask-equivalence",
    "vit-equivalence",
    "gradient-audit",
    "heading-flip",
    "checkpoint",
    "cost-accounting",
    "complexity",
    "trainability",
    "ablation-lattice",
];

/// Runs the named suite.
pub fn run_suite(name: &str, seed: u64, faults: Faults) -> Result<SuiteReport> {
    let start = Instant::now();
    let checks = match name {
        "oracles" => suite_oracles(),
        "param-counts" => suite_param_counts(),
        "scan-equivalence" => suite_scan(seed),
        "mask-equivalence" => suite_mask(seed),
        "vit-equivalence" => suite_vit(seed),
        "gradient-audit" => suite_audit(seed),
        "heading-flip" => suite_heading_flip(seed, faults),
        "checkpoint" => suite_checkpoint(seed),
        "cost-accounting" => suite_cost(seed),
        "complexity" => suite_complexity(seed),
        "trainability" => suite_trainability(seed),
        "ablation-lattice" => suite_lattice(seed),
        other => {
            return Err(Error::Config(format!(
                "unknown suite `{other}`; valid suites: {}",
                SUITES.join(", ")
            )))
        }
    };
    let (checks, error) = match checks {
        Ok(c) => (c, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    Ok(SuiteReport {
        name: name.to_string(),
        checks,
        seconds: start.elapsed().as_secs_f64(),
        error,
    })
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Replaces the default initialization with uniform weights in
/// `[-scale, scale]` (norm scales in `1 +/- scale`) so that every sublayer
/// contributes visibly to the output. Decay and step parameters keep their
/// defaults.
pub fn randomize_weights(store: &mut ParamStore, seed: u64, scale: f32) {
    let mut rng = SplitRng::stream(seed, 77);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        if name.ends_with("a_log") || name.ends_with("dt_bias") || name.ends_with("d_skip") {
            continue;
        }
        let shape = store.get(id).shape().to_vec();
        let fresh = uniform_tensor(&mut rng, &shape, -scale, scale);
        let t = store.get_mut(id);
        if name.ends_with("norm") || name == "norm_f" {
            t.data_mut().iter_mut().zip(fresh.data()).for_each(|(v, f)| *v = 1.0 + f);
        } else {
            t.data_mut().copy_from_slice(fresh.data());
        }
    }
}

/// Uniform `[-1, 1]` image for `cfg`.
pub fn random_image(cfg: &ModelConfig, seed: u64) -> Tensor {
    uniform_tensor(&mut SplitRng::stream(seed, 3), &[3, cfg.image, cfg.image], -1.0, 1.0)
}

// ---------------------------------------------------------------- measurements

#[derive(Debug, Clone, Serialize)]
pub struct ParamCount {
    pub preset: String,
    pub count: u64,
    pub target: Option<u64>,
    /// `count / target - 1`.
    pub deviation: Option<f64>,
}

pub fn measure_param_count(p: Preset) -> Result<ParamCount> {
    let count = count_params(&ModelConfig::preset(p))?;
    let target = p.target_params();
    Ok(ParamCount {
        preset: p.to_string(),
        count,
        target,
        deviation: target.map(|t| count as f64 / t as f64 - 1.0),
    })
}

/// Worst normwise error over a batch of random instances, with a label for
/// the worst one.
#[derive(Debug, Clone, Serialize)]
pub struct Worst {
    pub instances: usize,
    pub max_err: f64,
    pub worst: String,
}

impl Worst {
    fn new() -> Self {
        Self {
            instances: 0,
            max_err: 0.0,
            worst: String::new(),
        }
    }

    fn push(&mut self, err: f64, label: impl FnOnce() -> String) {
        self.instances += 1;
        if err > self.max_err || err.is_nan() {
            self.max_err = if err.is_nan() { f64::INFINITY } else { err };
            self.worst = label();
        }
    }
}

/// Chunked against recurrent scan on random shapes with `L <= max_len` and
/// chunk lengths drawn from `{1, 16, 32, 64, L}`.
pub fn measure_scan_equivalence(instances: usize, max_len: usize, seed: u64) -> Result<Worst> {
    let mut rng = SplitRng::stream(seed, 0x5ca9);
    let mut worst = Worst::new();
    for i in 0..instances {
        let len = rng.random_range(1..=max_len);
        let heads = rng.random_range(1..=4usize);
        let groups = [1, heads][rng.random_range(0..2)];
        let head_dim = rng.random_range(1..=8usize);
        let state = rng.random_range(1..=16usize);
        let chunk = [1, 16, 32, 64, len][rng.random_range(0..5)];
        let inner = heads * head_dim;
        let x = uniform_tensor(&mut rng, &[len, inner], -2.0, 2.0);
        let dt = uniform_tensor(&mut rng, &[len, heads], 0.01, 0.5);
        let b = uniform_tensor(&mut rng, &[len, groups, state], -1.0, 1.0);
        let c = uniform_tensor(&mut rng, &[len, groups, state], -1.0, 1.0);
        let a = uniform_tensor(&mut rng, &[heads], -4.0, -0.1);
        let d = uniform_tensor(&mut rng, &[inner], -1.0, 1.0);
        let rec = ssd_scan_recurrent(&x, &dt, &b, &c, &a, &d)?;
        let ch = ssd_scan_chunked(&x, &dt, &b, &c, &a, &d, chunk)?;
        let err = max_rel_err(ch.data(), &to_f64(&rec));
        worst.push(err, || {
            format!("#{i}: L={len} heads={heads} groups={groups} P={head_dim} N={state} chunk={chunk}")
        });
    }
    Ok(worst)
}

/// Causal attention against full attention with an explicit `-inf` mask,
/// elementwise absolute error.
pub fn measure_mask_equivalence(instances: usize, max_len: usize, seed: u64) -> Result<Worst> {
    let mut rng = SplitRng::stream(seed, 0x3a5c);
    let mut worst = Worst::new();
    for i in 0..instances {
        let len = rng.random_range(1..=max_len);
        let heads = rng.random_range(1..=4usize);
        let dim = heads * rng.random_range(1..=8usize);
        let q = uniform_tensor(&mut rng, &[len, dim], -1.5, 1.5);
        let k = uniform_tensor(&mut rng, &[len, dim], -1.5, 1.5);
        let v = uniform_tensor(&mut rng, &[len, dim], -1.0, 1.0);
        let mut g = Graph::new();
        let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
        let out = attention(&mut g, qv, kv, vv, heads, MaskMode::Causal)?;
        let m = |t: &Tensor| Mat::from_f32(len, dim, t.data());
        let want = oracle::masked_attention(&m(&q), &m(&k), &m(&v), heads, true);
        let err = max_abs_err(g.value(out).data(), &want.data);
        worst.push(err, || format!("#{i}: L={len} heads={heads} d={dim}"));
    }
    Ok(worst)
}

/// Configuration whose forward is a standard vision transformer.
pub fn plain_vit_config() -> ModelConfig {
    let mut cfg = ModelConfig::micro();
    cfg.apply_overrides(&["token_mixer=full-attn", "heading=off", "flip=off", "channel_mixer=plain-mlp"])
        .expect("valid overrides");
    cfg
}

/// Adventurer features and logits against the independent ViT on shared
/// weights, over `inputs` random images.
pub fn measure_vit_equivalence(inputs: usize, seed: u64) -> Result<Worst> {
    let cfg = plain_vit_config();
    let mut m = Adventurer::new(cfg.clone(), seed)?;
    randomize_weights(&mut m.store, seed, 0.2);
    let w = Weights::from_store(&m.store);
    let n = cfg.patches();
    let mut worst = Worst::new();
    for i in 0..inputs {
        let img = random_image(&cfg, seed.wrapping_add(i as u64));
        let mut g = Graph::new();
        let p = m.store.bind_frozen(&mut g);
        let im = g.constant(img.clone());
        let seq = m.forward_features(&mut g, &p, im, None)?;
        let logits = m.head(&mut g, &p, &seq)?;
        let (vit, vit_logits) = oracle::plain_vit(&to_f64(&img), &w, &cfg);
        // the reference keeps the class token in front
        let mut reordered = vit.data[cfg.dim..].to_vec();
        reordered.extend_from_slice(&vit.data[..cfg.dim]);
        let err = max_rel_err(g.value(seq.data).data(), &reordered)
            .max(max_rel_err(g.value(logits).data(), &vit_logits));
        worst.push(err, || format!("input {i} ({n} patches)"));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorAudit {
    pub name: String,
    pub coords: usize,
    /// `max |analytic - numeric| / max |numeric|` over the sampled coordinates.
    pub rel_err: f64,
    pub max_numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub tensors: Vec<TensorAudit>,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Analytic parameter gradients of the classification loss against central
/// differences of the 64-bit reference forward.
pub fn gradient_audit(
    cfg: &ModelConfig,
    seed: u64,
    coords_per_tensor: usize,
    batch: usize,
    step: f64,
) -> Result<AuditReport> {
    let m = Adventurer::new(cfg.clone(), seed)?;
    let images: Vec<Tensor> = (0..batch).map(|i| random_image(cfg, seed + 100 + i as u64)).collect();
    let labels: Vec<usize> = (0..batch).map(|i| i % cfg.num_classes).collect();

    let mut g = Graph::new();
    let p = m.store.bind(&mut g);
    let vars: Vec<_> = images.iter().map(|im| g.constant(im.clone())).collect();
    let logits = m.batch_logits(&mut g, &p, &vars)?;
    let loss = g.cross_entropy(logits, &labels)?;
    g.backward(loss)?;

    let pixels: Vec<Vec<f64>> = images.iter().map(to_f64).collect();
    let ref_loss = |w: &Weights| {
        let rows: Vec<Vec<f64>> = pixels
            .iter()
            .map(|im| oracle::adventurer_forward(im, w, cfg).1)
            .collect();
        oracle::cross_entropy(&rows, &labels)
    };
    let mut weights = Weights::from_store(&m.store);
    let mut rng = SplitRng::stream(seed, 0xa0d1);
    let mut tensors = Vec::new();
    for id in m.store.ids() {
        let name = m.store.name(id).to_string();
        let numel = m.store.get(id).numel();
        let analytic = g.grad(p[id]).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; numel]);
        let picks: Vec<usize> = if numel <= coords_per_tensor {
            (0..numel).collect()
        } else {
            rand::seq::index::sample(&mut rng, numel, coords_per_tensor).into_vec()
        };
        let mut got = Vec::with_capacity(picks.len());
        let mut want = Vec::with_capacity(picks.len());
        for &i in &picks {
            let orig = weights.get_mut(&name).data[i];
            weights.get_mut(&name).data[i] = orig + step;
            let up = ref_loss(&weights);
            weights.get_mut(&name).data[i] = orig - step;
            let down = ref_loss(&weights);
            weights.get_mut(&name).data[i] = orig;
            want.push((up - down) / (2.0 * step));
            got.push(analytic[i]);
        }
        let max_numeric = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        tensors.push(TensorAudit {
            name,
            coords: picks.len(),
            rel_err: max_rel_err(&got, &want),
            max_numeric,
        });
    }
    let worst = tensors
        .iter()
        .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
        .map(|t| (t.rel_err, t.name.clone()))
        .unwrap_or_default();
    Ok(AuditReport {
        tensors,
        max_rel_err: worst.0,
        worst: worst.1,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct InvariantReport {
    pub tokens: usize,
    pub blocks: usize,
    /// Worst heading vs. layer-input mean error.
    pub heading_err: f64,
    /// Every block output flipped back equals its unflipped output.
    pub flip_ok: bool,
    /// Flipping twice is the identity on every block output.
    pub involution_ok: bool,
    /// Roles read `[patch x n, cls]` at every block boundary.
    pub roles_ok: bool,
    pub boundary_error: Option<String>,
}

/// Micro on `image x image` inputs with heading average and flipping.
pub fn measure_heading_flip(image: usize, seed: u64, faults: Faults) -> Result<InvariantReport> {
    let mut cfg = ModelConfig::micro();
    cfg.image = image;
    cfg.heading = Heading::Average;
    cfg.recalc_heading = true;
    cfg.flip = FlipMode::InterLayer;
    cfg.validate()?;
    let mut run_cfg = cfg.clone();
    if faults.disable_flip {
        run_cfg.flip = FlipMode::Off;
    }
    let mut m = Adventurer::new(run_cfg, seed)?;
    randomize_weights(&mut m.store, seed, 0.2);
    let mut g = Graph::new();
    let p = m.store.bind_frozen(&mut g);
    let im = g.constant(random_image(&cfg, seed));
    let mut trace = ForwardTrace::default();
    m.forward_features(&mut g, &p, im, Some(&mut trace))?;

    let n = cfg.patches();
    let mut report = InvariantReport {
        tokens: n + 1,
        blocks: trace.blocks.len(),
        heading_err: 0.0,
        flip_ok: trace.blocks.len() == cfg.depth,
        involution_ok: true,
        roles_ok: true,
        boundary_error: None,
    };
    for b in &trace.blocks {
        for s in [&b.input, &b.output] {
            if let Err(e) = s.check_boundary(n) {
                report.roles_ok = false;
                report.boundary_error.get_or_insert(e.to_string());
            }
        }
        if b.augmented.heading_count() != 1 {
            report.roles_ok = false;
        }
        let input = g.value(b.input.data);
        let mut mean = vec![0.0f64; cfg.dim];
        for r in 0..=n {
            for (j, v) in input.row(r).iter().enumerate() {
                mean[j] += *v as f64 / (n + 1) as f64;
            }
        }
        let err = max_rel_err(g.value(b.augmented.data).row(0), &mean);
        report.heading_err = report.heading_err.max(err);

        let mut h = Graph::new();
        let out = h.constant(g.value(b.output.data).clone());
        let seq = TokenSequence { data: out, ..b.output.clone() };
        let once = flip_patches(&mut h, &seq)?;
        if h.value(once.data).data() != g.value(b.unflipped.data).data() || once.flipped != b.unflipped.flipped {
            report.flip_ok = false;
        }
        let twice = flip_patches(&mut h, &once)?;
        if h.value(twice.data).data() != h.value(seq.data).data() || twice.flipped != seq.flipped {
            report.involution_ok = false;
        }
    }
    Ok(report)
}

/// Benchmark series for mamba2 and full attention.
pub fn measure_complexity(lengths: &[usize], opts: BenchOptions) -> Result<(BenchSeries, BenchSeries)> {
    let ssm = bench_scaling(crate::model::TokenMixerKind::Mamba2, lengths, opts)?;
    let attn = bench_scaling(crate::model::TokenMixerKind::FullAttn, lengths, opts)?;
    Ok((ssm, attn))
}

/// `time(attn) / time(ssm)` at each length measured by both.
pub fn time_ratios(ssm: &BenchSeries, attn: &BenchSeries) -> Vec<(usize, f64)> {
    ssm.records
        .iter()
        .zip(&attn.records)
        .filter(|(s, a)| s.failed.is_none() && a.failed.is_none() && s.len == a.len)
        .map(|(s, a)| (s.len, a.ms_median / s.ms_median))
        .collect()
}

/// The dataset and options of the trainability gate.
pub fn toy_setup(seed: u64) -> (ModelConfig, ToyDataset, TrainOptions) {
    let cfg = ModelConfig::micro();
    let data = ToyDataset::gratings(GratingSpec::new(seed, cfg.num_classes, 128, cfg.image))
        .expect("valid toy dataset");
    let opts = TrainOptions {
        seed,
        ..TrainOptions::default()
    };
    (cfg, data, opts)
}

pub fn measure_trainability(seed: u64) -> Result<TrainTrace> {
    let (cfg, data, opts) = toy_setup(seed);
    Ok(train_toy(&cfg, &data, opts)?.1)
}

/// One-step sweeps over the heading x flip grid, the channel mixers and the
/// heading designs. The heading designs run on 24 x 24 inputs so that a
/// 3 x 3 grid tiles the patch grid.
pub fn measure_lattice(seed: u64) -> Result<Vec<SweepTable>> {
    let opts = TrainOptions {
        steps: 1,
        batch: 2,
        seed,
        ..TrainOptions::default()
    };
    let base = ModelConfig::micro();
    let data = ToyDataset::gratings(GratingSpec::new(seed, base.num_classes, 4, base.image))?;
    let mut small = base.clone();
    small.image = 24;
    let small_data = ToyDataset::gratings(GratingSpec::new(seed, small.num_classes, 4, small.image))?;
    Ok(vec![
        ablation_sweep(&base, &[Axis::Heading, Axis::Flip], &data, opts)?,
        ablation_sweep(&base, &[Axis::ChannelMixer], &data, opts)?,
        ablation_sweep(&small, &[Axis::HeadingDesign], &small_data, opts)?,
    ])
}

// ---------------------------------------------------------------- suites

fn suite_oracles() -> Result<Vec<Check>> {
    let sq = |x: &[f64]| x[0] * x[0];
    let fd = oracle::finite_difference(&sq, &[3.0], 0, 1e-3);
    let ones = vec![1.0; 6];
    let xs: Vec<f64> = (1..=6).map(|v| v as f64).collect();
    let prefix = oracle::ssd_reference(&xs, &ones, &ones, &ones, &[-1.0], &[0.0], 6, 1, 1, 1, Some(1.0));
    let want: Vec<f64> = vec![1.0, 3.0, 6.0, 10.0, 15.0, 21.0];
    let q = Mat::from_f32(2, 1, &[1.0, 2.0]);
    let v = Mat::from_f32(2, 1, &[3.0, 5.0]);
    let att = oracle::masked_attention(&q, &q, &v, 1, true);
    // second row: softmax over scores 2 and 4
    let w0 = 2f64.exp() / (2f64.exp() + 4f64.exp());
    let hand = [3.0, 3.0 * w0 + 5.0 * (1.0 - w0)];
    let att_err = att.data.iter().zip(hand).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(vec![
        Check::within("fd of x^2 at 3", fd, 6.0, 1e-6),
        Check::holds("prefix-sum scan is exact", prefix == want),
        Check::at_most("two-token masked attention", att_err, 1e-12),
    ])
}

fn suite_param_counts() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for &p in Preset::ALL {
        let c = measure_param_count(p)?;
        match c.deviation {
            Some(d) => out.push(Check::at_most(format!("{p} deviation"), d.abs(), 0.10)),
            None => out.push(Check::holds(format!("{p} counts {}", c.count), c.count > 0)),
        }
    }
    Ok(out)
}

fn suite_scan(seed: u64) -> Result<Vec<Check>> {
    let w = measure_scan_equivalence(200, 512, seed)?;
    Ok(vec![Check::at_most(format!("chunked vs recurrent, worst {}", w.worst), w.max_err, 1e-4)])
}

fn suite_mask(seed: u64) -> Result<Vec<Check>> {
    let w = measure_mask_equivalence(100, 64, seed)?;
    Ok(vec![Check::at_most(format!("causal vs masked full, worst {}", w.worst), w.max_err, 1e-5)])
}

fn suite_vit(seed: u64) -> Result<Vec<Check>> {
    let w = measure_vit_equivalence(20, seed)?;
    Ok(vec![Check::at_most(format!("plain vit, worst {}", w.worst), w.max_err, 1e-5)])
}

fn suite_audit(seed: u64) -> Result<Vec<Check>> {
    let r = gradient_audit(&ModelConfig::micro(), seed, 32, 1, 1e-3)?;
    Ok(vec![Check::at_most(format!("gradient audit, worst {}", r.worst), r.max_rel_err, 5e-3)])
}

fn suite_heading_flip(seed: u64, faults: Faults) -> Result<Vec<Check>> {
    let r = measure_heading_flip(64, seed, faults)?;
    Ok(vec![
        Check::holds(format!("{} tokens", r.tokens), r.tokens == 257),
        Check::at_most("heading equals input mean", r.heading_err, 1e-6),
        Check::holds("flip applied after every block", r.flip_ok),
        Check::holds("flip is an involution", r.involution_ok),
        Check::holds("roles at block boundaries", r.roles_ok),
    ])
}

fn suite_checkpoint(seed: u64) -> Result<Vec<Check>> {
    let mut m = Adventurer::new(ModelConfig::micro(), seed)?;
    randomize_weights(&mut m.store, seed, 0.2);
    let bytes = m.to_checkpoint().to_bytes();
    let back = Adventurer::from_checkpoint(Checkpoint::read_from(&mut &bytes[..])?)?;
    let img = random_image(m.config(), seed);
    let same_logits = m.classify(&img)?.data() == back.classify(&img)?.data();
    Ok(vec![
        Check::holds("bytes round trip", back.to_checkpoint().to_bytes() == bytes),
        Check::holds("logits identical after reload", same_logits),
        Check::holds(
            "truncated file rejected",
            matches!(Checkpoint::read_from(&mut &bytes[..bytes.len() - 1]), Err(Error::Truncated(_))),
        ),
    ])
}

fn suite_cost(seed: u64) -> Result<Vec<Check>> {
    let opts = BenchOptions {
        repeats: 5,
        seed,
        min_sample_ms: 0.0,
        ..BenchOptions::default()
    };
    let (ssm, attn) = measure_complexity(&[256, 512, 1024, 2048], opts)?;
    let again = bench_scaling(crate::model::TokenMixerKind::Mamba2, &[256, 512, 1024], opts)?;
    let macs_stable = ssm.records.iter().zip(&again.records).all(|(a, b)| a.macs == b.macs);
    Ok(vec![
        Check::holds("multiply-accumulates identical across runs", macs_stable),
        Check::within("mamba2 memory slope", ssm.memory_slope.unwrap_or(f64::NAN), 1.0, 0.2),
        Check::at_least("full-attn memory slope", attn.memory_slope.unwrap_or(f64::NAN), 1.7),
    ])
}

fn suite_complexity(seed: u64) -> Result<Vec<Check>> {
    let opts = BenchOptions {
        seed,
        ..BenchOptions::default()
    };
    let (ssm, attn) = measure_complexity(&[256, 512, 1024, 2048], opts)?;
    let ratios = time_ratios(&ssm, &attn);
    let increasing = ratios.len() == 4 && ratios.windows(2).all(|w| w[1].1 > w[0].1);
    Ok(vec![
        Check::within("mamba2 time slope", ssm.time_slope.unwrap_or(f64::NAN), 1.0, 0.15),
        Check::within("full-attn time slope", attn.time_slope.unwrap_or(f64::NAN), 2.0, 0.3),
        Check::holds(format!("attn/mamba2 ratio increasing {ratios:.2?}"), increasing),
    ])
}

fn suite_trainability(seed: u64) -> Result<Vec<Check>> {
    let a = measure_trainability(seed)?;
    let b = measure_trainability(seed)?;
    Ok(vec![
        Check::at_least("train accuracy after 500 steps", a.final_acc as f64, 0.95),
        Check::holds("identical trace on rerun", a.losses == b.losses),
    ])
}

fn suite_lattice(seed: u64) -> Result<Vec<Check>> {
    let tables = measure_lattice(seed)?;
    let mut checks = Vec::new();
    for t in &tables {
        let axes: Vec<&str> = t.axes.iter().map(|a| a.name()).collect();
        let failures: Vec<String> = t
            .rows
            .iter()
            .filter_map(|r| r.error.as_ref().map(|e| format!("{:?}: {e}", r.settings)))
            .collect();
        checks.push(Check::holds(
            format!("{axes:?}: every cell trains one step {failures:?}"),
            failures.is_empty(),
        ));
        checks.push(Check::holds(
            format!("{axes:?}: distinct fingerprints"),
            distinct_fingerprints(t),
        ));
    }
    checks.push(Check::holds(
        "fingerprints agree across tables only for equal configs",
        fingerprints_track_configs(&tables),
    ));
    Ok(checks)
}

/// Every row of the table has a fingerprint and no two coincide.
pub fn distinct_fingerprints(table: &SweepTable) -> bool {
    let mut prints: Vec<u64> = table.rows.iter().filter_map(|r| r.fingerprint).collect();
    let n = prints.len();
    prints.sort_unstable();
    prints.dedup();
    n == table.rows.len() && prints.len() == n
}

/// Two cells share a fingerprint exactly when they share a configuration.
pub fn fingerprints_track_configs(tables: &[SweepTable]) -> bool {
    let rows: Vec<_> = tables.iter().flat_map(|t| &t.rows).collect();
    rows.iter().enumerate().all(|(i, a)| {
        rows[..i]
            .iter()
            .all(|b| (a.fingerprint == b.fingerprint) == (a.config == b.config))
    })
}
