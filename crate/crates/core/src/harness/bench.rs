//! Wall-time and memory scaling of single token mixers.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::layers::{
    causal_attention, mamba2_mixer, AttnLayerParams, MaskMode, ScanMode, SsdDims, SsdLayerParams,
};
use crate::model::TokenMixerKind;
use crate::params::{Bound, ParamStore};
use crate::rng::{uniform_tensor, SplitRng};
use crate::tensor::{Graph, Var};

/// Runs discarded before timing starts.
pub const WARMUP: usize = 2;

/// One measurement row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub config_id: String,
    #[serde(rename = "L")]
    pub len: usize,
    pub repeats: usize,
    pub ms_median: f64,
    pub peak_bytes: u64,
    pub macs: u64,
    /// Reason the length could not be measured.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub dim: usize,
    /// Total runs per length, including the warm-up runs.
    pub repeats: usize,
    /// Lengths whose estimated footprint exceeds this are marked failed.
    pub max_bytes: u64,
    pub seed: u64,
    /// Each timing sample repeats the pass until this much time has passed
    /// and reports the mean per pass.
    pub min_sample_ms: f64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            dim: 256,
            repeats: 7,
            max_bytes: 2 << 30,
            seed: 0,
            min_sample_ms: 50.0,
        }
    }
}

/// Records for one mixer plus fitted log-log slopes over the lengths that
/// succeeded.
#[derive(Debug, Clone, Serialize)]
pub struct BenchSeries {
    pub mixer: String,
    pub records: Vec<BenchRecord>,
    pub time_slope: Option<f64>,
    pub memory_slope: Option<f64>,
    /// Forward plus backward at the shortest length.
    pub fwd_bwd: Option<BenchRecord>,
}

/// A single token mixer with its own parameters.
pub struct MixerBench {
    kind: TokenMixerKind,
    store: ParamStore,
    ssd: Option<SsdLayerParams>,
    attn: Option<AttnLayerParams>,
    dim: usize,
}

impl MixerBench {
    pub fn new(kind: TokenMixerKind, dim: usize, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(seed);
        let (mut ssd, mut attn) = (None, None);
        let head_dim = 32.min(2 * dim);
        match kind {
            TokenMixerKind::Mamba2 => {
                let dims = SsdDims::new(dim, 2, head_dim, 16, None)?;
                ssd = Some(SsdLayerParams::declare(&mut store, "mixer", dims, ScanMode::Chunked(64)));
            }
            TokenMixerKind::CausalAttn | TokenMixerKind::FullAttn => {
                let mask = if kind == TokenMixerKind::CausalAttn {
                    MaskMode::Causal
                } else {
                    MaskMode::Full
                };
                let heads = (dim / 16).max(1);
                attn = Some(AttnLayerParams::declare(&mut store, "mixer", dim, heads, mask)?);
            }
        }
        Ok(Self {
            kind,
            store,
            ssd,
            attn,
            dim,
        })
    }

    /// Rough upper bound on bytes a forward at `len` touches.
    pub fn estimate_bytes(&self, len: usize) -> u64 {
        let linear = 4 * 16 * (len * self.dim) as u64;
        match &self.attn {
            Some(a) => linear + 4 * (a.heads * len * len) as u64,
            None => linear,
        }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        match (&self.ssd, &self.attn) {
            (Some(s), _) => mamba2_mixer(g, p, s, x),
            (_, Some(a)) => causal_attention(g, p, a, x),
            _ => unreachable!("one mixer is always declared"),
        }
    }

    /// Runs one pass at `len` and returns (seconds, transient peak bytes,
    /// graph). Parameters and the input are not counted as transient.
    pub fn run(&self, len: usize, backward: bool) -> Result<(f64, u64, Graph)> {
        let mut g = Graph::new();
        let p = if backward {
            self.store.bind(&mut g)
        } else {
            self.store.bind_frozen(&mut g)
        };
        let mut rng = SplitRng::stream(len as u64, 1);
        let x = g.constant(uniform_tensor(&mut rng, &[len, self.dim], -1.0, 1.0));
        let resident = g.counter().live_bytes();
        let start = Instant::now();
        let y = self.forward(&mut g, &p, x)?;
        if backward {
            let loss = g.mean_all(y);
            g.backward(loss)?;
        }
        let secs = start.elapsed().as_secs_f64();
        let peak = g.counter().peak_bytes() - resident;
        Ok((secs, peak, g))
    }

    fn empty_record(&self, len: usize, opts: &BenchOptions, backward: bool) -> BenchRecord {
        let config_id = format!(
            "{}{}-d{}",
            self.kind,
            if backward { "-fwdbwd" } else { "" },
            self.dim
        );
        let need = self.estimate_bytes(len);
        BenchRecord {
            config_id,
            len,
            repeats: opts.repeats,
            ms_median: f64::NAN,
            peak_bytes: 0,
            macs: 0,
            failed: (need > opts.max_bytes).then(|| format!("needs ~{need} bytes, budget {}", opts.max_bytes)),
        }
    }

    /// One timing sample in milliseconds per pass.
    fn sample(&self, rec: &mut BenchRecord, opts: &BenchOptions, backward: bool) -> Result<f64> {
        let (mut total, mut passes) = (0.0, 0);
        while passes == 0 || total * 1e3 < opts.min_sample_ms {
            let (t, peak, g) = self.run(rec.len, backward)?;
            total += t;
            passes += 1;
            rec.peak_bytes = peak;
            rec.macs = g.counter().macs;
        }
        Ok(total * 1e3 / passes as f64)
    }

    /// Measures every length, taking repeat `r` of all lengths before repeat
    /// `r + 1` so that drift in machine speed hits each length alike.
    fn records(&self, lengths: &[usize], opts: &BenchOptions, backward: bool) -> Vec<BenchRecord> {
        let mut recs: Vec<BenchRecord> = lengths.iter().map(|&l| self.empty_record(l, opts, backward)).collect();
        let mut times: Vec<Vec<f64>> = vec![Vec::with_capacity(opts.repeats); lengths.len()];
        for _ in 0..opts.repeats {
            for (rec, t) in recs.iter_mut().zip(&mut times) {
                if rec.failed.is_some() {
                    continue;
                }
                match self.sample(rec, opts, backward) {
                    Ok(ms) => t.push(ms),
                    Err(e) => rec.failed = Some(e.to_string()),
                }
            }
        }
        for (rec, t) in recs.iter_mut().zip(&times) {
            if rec.failed.is_none() {
                rec.ms_median = median(&t[WARMUP..]);
            }
        }
        recs
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    (den > 0.0).then(|| num / den)
}

/// Forward timings of one mixer over increasing lengths.
pub fn bench_scaling(mixer: TokenMixerKind, lengths: &[usize], opts: BenchOptions) -> Result<BenchSeries> {
    if lengths.len() < 3 || lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::contract(
            "bench_scaling",
            format!("need at least 3 strictly ascending lengths, got {lengths:?}"),
        ));
    }
    if opts.repeats < WARMUP + 3 {
        return Err(Error::contract(
            "bench_scaling",
            format!("repeats must be at least {}, got {}", WARMUP + 3, opts.repeats),
        ));
    }
    let bench = MixerBench::new(mixer, opts.dim, opts.seed)?;
    let records = bench.records(lengths, &opts, false);
    let ok: Vec<&BenchRecord> = records.iter().filter(|r| r.failed.is_none()).collect();
    let time_slope = loglog_slope(&ok.iter().map(|r| (r.len as f64, r.ms_median)).collect::<Vec<_>>());
    let memory_slope =
        loglog_slope(&ok.iter().map(|r| (r.len as f64, r.peak_bytes as f64)).collect::<Vec<_>>());
    let fwd_bwd = bench.records(&lengths[..1], &opts, true).pop();
    Ok(BenchSeries {
        mixer: mixer.to_string(),
        records,
        time_slope,
        memory_slope,
        fwd_bwd,
    })
}

/// Writes `config_id,L,ms_median,peak_bytes,macs`; failed lengths get an
/// empty time.
pub fn write_bench_csv(path: &Path, records: &[BenchRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["config_id", "L", "ms_median", "peak_bytes", "macs"])?;
    for r in records {
        let ms = if r.failed.is_some() {
            String::new()
        } else {
            format!("{:.4}", r.ms_median)
        };
        w.write_record([
            r.config_id.clone(),
            r.len.to_string(),
            ms,
            r.peak_bytes.to_string(),
            r.macs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
