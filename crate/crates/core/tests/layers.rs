use adventurer::harness::oracle::{self, fd_gradient, max_rel_err, Mat, Weights};
use adventurer::layers::ssd::ssd_scan_recurrent_fixed_decay;
use adventurer::layers::{
    attention, causal_attention, channel_mixer, mamba2_mixer, rms_norm, ssd_scan,
    ssd_scan_chunked, ssd_scan_recurrent, AttnLayerParams, ChannelMixerKind, ChannelMixerParams,
    MaskMode, ScanMode, SsdDims, SsdLayerParams,
};
use adventurer::params::ParamStore;
use adventurer::rng::{uniform_tensor, SplitRng};
use adventurer::{Error, Graph, Tensor};
use proptest::prelude::*;
use rand_chacha::ChaCha8Rng;

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

struct ScanCase {
    x: Tensor,
    dt: Tensor,
    b: Tensor,
    c: Tensor,
    a: Tensor,
    d: Tensor,
    heads: usize,
    groups: usize,
    state: usize,
}

impl ScanCase {
    fn random(rng: &mut ChaCha8Rng, len: usize, heads: usize, head_dim: usize, groups: usize, state: usize) -> Self {
        let inner = heads * head_dim;
        Self {
            x: uniform_tensor(rng, &[len, inner], -2.0, 2.0),
            dt: uniform_tensor(rng, &[len, heads], 0.01, 0.5),
            b: uniform_tensor(rng, &[len, groups, state], -1.0, 1.0),
            c: uniform_tensor(rng, &[len, groups, state], -1.0, 1.0),
            a: uniform_tensor(rng, &[heads], -4.0, -0.1),
            d: uniform_tensor(rng, &[inner], -1.0, 1.0),
            heads,
            groups,
            state,
        }
    }

    fn len(&self) -> usize {
        self.x.shape()[0]
    }

    fn reference(&self) -> Vec<f64> {
        oracle::ssd_reference(
            &to_f64(&self.x),
            &to_f64(&self.dt),
            &to_f64(&self.b),
            &to_f64(&self.c),
            &to_f64(&self.a),
            &to_f64(&self.d),
            self.len(),
            self.heads,
            self.groups,
            self.state,
            None,
        )
    }

    fn recurrent(&self) -> Tensor {
        ssd_scan_recurrent(&self.x, &self.dt, &self.b, &self.c, &self.a, &self.d).unwrap()
    }

    fn chunked(&self, q: usize) -> Tensor {
        ssd_scan_chunked(&self.x, &self.dt, &self.b, &self.c, &self.a, &self.d, q).unwrap()
    }
}

#[test]
fn scan_memoryless_when_decay_kills_state() {
    let len = 5;
    let x = Tensor::from_fn(&[len, 1], |i| i as f32 - 1.5);
    let dt = Tensor::from_fn(&[len, 1], |i| 0.1 + 0.2 * i as f32);
    let ones = Tensor::filled(&[len, 1, 1], 1.0);
    let a = Tensor::filled(&[1], -1e6);
    let d = Tensor::filled(&[1], 0.7);
    let y = ssd_scan_recurrent(&x, &dt, &ones, &ones, &a, &d).unwrap();
    for t in 0..len {
        let want = (dt.data()[t] + 0.7) * x.data()[t];
        assert!((y.data()[t] - want).abs() < 1e-6);
    }
}

#[test]
fn scan_prefix_sum_with_unit_decay() {
    let len = 6;
    let x = Tensor::from_fn(&[len, 1], |i| (i + 1) as f32);
    let ones = Tensor::filled(&[len, 1], 1.0);
    let bc = Tensor::filled(&[len, 1, 1], 1.0);
    let y = ssd_scan_recurrent_fixed_decay(&x, &ones, &bc, &bc, &Tensor::zeros(&[1]), 1.0).unwrap();
    assert_eq!(y.data(), &[1.0, 3.0, 6.0, 10.0, 15.0, 21.0]);
}

#[test]
fn scan_rejects_bad_contract() {
    let mut rng = SplitRng::stream(5, 0);
    let mut case = ScanCase::random(&mut rng, 4, 1, 2, 1, 2);
    case.dt.data_mut()[2] = 0.0;
    let err = ssd_scan_recurrent(&case.x, &case.dt, &case.b, &case.c, &case.a, &case.d);
    assert!(matches!(err, Err(Error::Contract { .. })));
    case.dt.data_mut()[2] = 0.1;
    assert!(matches!(
        ssd_scan_chunked(&case.x, &case.dt, &case.b, &case.c, &case.a, &case.d, 0),
        Err(Error::Contract { .. })
    ));
}

#[test]
fn scan_recurrent_matches_64_bit_loop() {
    let mut rng = SplitRng::stream(6, 0);
    for (heads, groups) in [(2, 1), (4, 2), (3, 3)] {
        let case = ScanCase::random(&mut rng, 64, heads, 5, groups, 8);
        let err = max_rel_err(case.recurrent().data(), &case.reference());
        assert!(err <= 1e-4, "heads {heads} groups {groups}: {err}");
    }
}

#[test]
fn scan_chunked_matches_recurrent() {
    let mut rng = SplitRng::stream(7, 0);
    let case = ScanCase::random(&mut rng, 256, 2, 8, 1, 16);
    let reference = case.reference();
    let rec = case.recurrent();
    for q in [1, 16, 32, 64, 100, 256] {
        let ch = case.chunked(q);
        let err = max_rel_err(ch.data(), &reference);
        assert!(err <= 1e-4, "chunk {q}: {err}");
        let vs_rec: Vec<f64> = to_f64(&rec);
        assert!(max_rel_err(ch.data(), &vs_rec) <= 1e-4);
    }
}

#[test]
fn scan_is_causal() {
    let mut rng = SplitRng::stream(8, 0);
    let case = ScanCase::random(&mut rng, 20, 2, 3, 1, 4);
    let base = case.chunked(8);
    let mut moved = ScanCase::random(&mut SplitRng::stream(8, 0), 20, 2, 3, 1, 4);
    let cut = 11;
    let inner = 6;
    for v in &mut moved.x.data_mut()[cut * inner..] {
        *v += 3.0;
    }
    for v in &mut moved.b.data_mut()[cut * 4..] {
        *v = -*v;
    }
    let after = moved.chunked(8);
    assert_eq!(&base.data()[..cut * inner], &after.data()[..cut * inner]);
    assert_ne!(&base.data()[cut * inner..], &after.data()[cut * inner..]);
}

/// Every input gradient of the recorded scan against finite differences of
/// the 64-bit loop.
#[test]
fn scan_gradients_match_finite_differences() {
    let mut rng = SplitRng::stream(9, 0);
    for (mode, groups) in [(ScanMode::Recurrent, 1), (ScanMode::Chunked(3), 2)] {
        let case = ScanCase::random(&mut rng, 9, 2, 3, groups, 4);
        let probe = uniform_tensor(&mut rng, case.x.shape(), -1.0, 1.0);
        let mut g = Graph::new();
        let inputs = [&case.x, &case.dt, &case.b, &case.c, &case.a, &case.d];
        let vars: Vec<_> = inputs.iter().map(|t| g.leaf((*t).clone().with_grad())).collect();
        let y = ssd_scan(&mut g, vars[0], vars[1], vars[2], vars[3], vars[4], vars[5], mode).unwrap();
        let pv = g.constant(probe.clone());
        let yp = g.mul(y, pv).unwrap();
        let loss = g.sum_all(yp);
        g.backward(loss).unwrap();

        let base: Vec<Vec<f64>> = inputs.iter().map(|t| to_f64(t)).collect();
        let pf = to_f64(&probe);
        for which in 0..6 {
            let f = |v: &[f64]| {
                let mut args = base.clone();
                args[which] = v.to_vec();
                let y = oracle::ssd_reference(
                    &args[0], &args[1], &args[2], &args[3], &args[4], &args[5], 9, 2, groups, 4, None,
                );
                y.iter().zip(&pf).map(|(a, b)| a * b).sum()
            };
            let fd = fd_gradient(&f, &base[which], 1e-3);
            let err = max_rel_err(g.grad(vars[which]).unwrap(), &fd);
            assert!(err <= 1e-3, "{mode:?} input {which}: {err}");
        }
    }
}

fn random_qkv(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> (Tensor, Tensor, Tensor) {
    (
        uniform_tensor(rng, &[len, dim], -2.0, 2.0),
        uniform_tensor(rng, &[len, dim], -2.0, 2.0),
        uniform_tensor(rng, &[len, dim], -2.0, 2.0),
    )
}

fn run_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, mask: MaskMode) -> Tensor {
    let mut g = Graph::new();
    let (vq, vk, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let o = attention(&mut g, vq, vk, vv, heads, mask).unwrap();
    g.value(o).clone()
}

#[test]
fn attention_single_token_is_value_projection() {
    let mut store = ParamStore::new(3);
    let params = AttnLayerParams::declare(&mut store, "attn", 4, 2, MaskMode::Causal).unwrap();
    let x = uniform_tensor(&mut SplitRng::stream(3, 1), &[1, 4], -1.0, 1.0);
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let vx = g.constant(x.clone());
    let y = causal_attention(&mut g, &p, &params, vx).unwrap();
    let w = Weights::from_store(&store);
    let xm = Mat::from_f32(1, 4, x.data());
    let want = xm
        .matmul(w.mat("attn.wv"))
        .add_row(w.vec("attn.bv"))
        .matmul(w.mat("attn.wo"))
        .add_row(w.vec("attn.bo"));
    assert!(max_rel_err(g.value(y).data(), &want.data) <= 1e-6);
}

#[test]
fn attention_matches_explicit_mask_oracle() {
    let mut rng = SplitRng::stream(10, 0);
    for mask in [MaskMode::Causal, MaskMode::Full] {
        let (q, k, v) = random_qkv(&mut rng, 6, 8);
        let out = run_attention(&q, &k, &v, 2, mask);
        let want = oracle::masked_attention(
            &Mat::from_f32(6, 8, q.data()),
            &Mat::from_f32(6, 8, k.data()),
            &Mat::from_f32(6, 8, v.data()),
            2,
            mask == MaskMode::Causal,
        );
        let err = oracle::max_abs_err(out.data(), &want.data);
        assert!(err <= 1e-5, "{mask:?}: {err}");
    }
}

#[test]
fn causal_attention_ignores_future_tokens() {
    let mut rng = SplitRng::stream(11, 0);
    let (q, k, v) = random_qkv(&mut rng, 10, 4);
    let base = run_attention(&q, &k, &v, 2, MaskMode::Causal);
    let (mut q2, mut k2, mut v2) = (q.clone(), k.clone(), v.clone());
    let cut = 6;
    for t in [&mut q2, &mut k2, &mut v2] {
        for x in &mut t.data_mut()[cut * 4..] {
            *x = 7.0 - *x;
        }
    }
    let moved = run_attention(&q2, &k2, &v2, 2, MaskMode::Causal);
    assert_eq!(&base.data()[..cut * 4], &moved.data()[..cut * 4]);
}

#[test]
fn attention_gradients_match_finite_differences() {
    let mut rng = SplitRng::stream(12, 0);
    for mask in [MaskMode::Causal, MaskMode::Full] {
        let (q, k, v) = random_qkv(&mut rng, 5, 4);
        let probe = uniform_tensor(&mut rng, &[5, 4], -1.0, 1.0);
        let mut g = Graph::new();
        let vars: Vec<_> = [&q, &k, &v].iter().map(|t| g.leaf((*t).clone().with_grad())).collect();
        let o = attention(&mut g, vars[0], vars[1], vars[2], 2, mask).unwrap();
        let pv = g.constant(probe.clone());
        let op = g.mul(o, pv).unwrap();
        let loss = g.sum_all(op);
        g.backward(loss).unwrap();
        let base: Vec<Vec<f64>> = [&q, &k, &v].iter().map(|t| to_f64(t)).collect();
        let pf = to_f64(&probe);
        for which in 0..3 {
            let f = |x: &[f64]| {
                let mut args = base.clone();
                args[which] = x.to_vec();
                let m = |d: &Vec<f64>| Mat { rows: 5, cols: 4, data: d.clone() };
                let o = oracle::masked_attention(&m(&args[0]), &m(&args[1]), &m(&args[2]), 2, mask == MaskMode::Causal);
                o.data.iter().zip(&pf).map(|(a, b)| a * b).sum()
            };
            let fd = fd_gradient(&f, &base[which], 1e-3);
            let err = max_rel_err(g.grad(vars[which]).unwrap(), &fd);
            assert!(err <= 1e-3, "{mask:?} input {which}: {err}");
        }
    }
}

fn mixer_store(conv: Option<usize>, seed: u64) -> (ParamStore, SsdLayerParams) {
    let dims = SsdDims::new(8, 2, 8, 4, conv).unwrap();
    let mut store = ParamStore::new(seed);
    let params = SsdLayerParams::declare(&mut store, "mix", dims, ScanMode::Chunked(4));
    // larger projections than the default init so the check is not dominated by the skip path
    let mut rng = SplitRng::stream(seed, 7);
    for name in ["mix.in_proj", "mix.out_proj", "mix.conv_weight"] {
        if let Some(id) = store.id(name) {
            let shape = store.get(id).shape().to_vec();
            let fresh = uniform_tensor(&mut rng, &shape, -0.5, 0.5);
            store.get_mut(id).data_mut().copy_from_slice(fresh.data());
        }
    }
    (store, params)
}

#[test]
fn mixer_matches_reference_and_in_proj_gradient() {
    for conv in [None, Some(4)] {
        let (store, params) = mixer_store(conv, 13);
        let x = uniform_tensor(&mut SplitRng::stream(13, 1), &[6, 8], -1.0, 1.0);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let vx = g.constant(x.clone());
        let y = mamba2_mixer(&mut g, &p, &params, vx).unwrap();
        let loss = g.mean_all(y);
        g.backward(loss).unwrap();

        let w = Weights::from_store(&store);
        let xm = Mat::from_f32(6, 8, x.data());
        let want = oracle::mamba2_mixer(&xm, &w, "mix", 8, 4);
        assert!(max_rel_err(g.value(y).data(), &want.data) <= 1e-5, "{conv:?}");

        let base = w.mat("mix.in_proj").data.clone();
        let f = |v: &[f64]| {
            let mut w2 = w.clone();
            w2.get_mut("mix.in_proj").data = v.to_vec();
            let y = oracle::mamba2_mixer(&xm, &w2, "mix", 8, 4);
            y.data.iter().sum::<f64>() / y.data.len() as f64
        };
        let fd = fd_gradient(&f, &base, 1e-3);
        let err = max_rel_err(g.grad(p[params.in_proj]).unwrap(), &fd);
        assert!(err <= 5e-3, "{conv:?}: {err}");
    }
}

#[test]
fn mixer_zero_weights_give_zero_output() {
    let (mut store, params) = mixer_store(None, 14);
    for id in [params.in_proj, params.out_proj] {
        store.get_mut(id).data_mut().fill(0.0);
    }
    let x = uniform_tensor(&mut SplitRng::stream(14, 1), &[5, 8], -1.0, 1.0);
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let vx = g.constant(x);
    let y = mamba2_mixer(&mut g, &p, &params, vx).unwrap();
    assert!(g.value(y).data().iter().all(|v| *v == 0.0));
}

#[test]
fn mixer_is_causal() {
    let (store, params) = mixer_store(Some(4), 15);
    let run = |x: &Tensor| {
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let vx = g.constant(x.clone());
        let y = mamba2_mixer(&mut g, &p, &params, vx).unwrap();
        g.value(y).clone()
    };
    let x = uniform_tensor(&mut SplitRng::stream(15, 1), &[12, 8], -1.0, 1.0);
    let mut x2 = x.clone();
    for v in &mut x2.data_mut()[7 * 8..] {
        *v *= -3.0;
    }
    let (a, b) = (run(&x), run(&x2));
    assert_eq!(&a.data()[..7 * 8], &b.data()[..7 * 8]);
}

#[test]
fn swiglu_matches_64_bit_reference() {
    let mut store = ParamStore::new(16);
    let params = ChannelMixerParams::declare(&mut store, "ffn", ChannelMixerKind::Swiglu, 8);
    let x = uniform_tensor(&mut SplitRng::stream(16, 1), &[1, 8], -2.0, 2.0);
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let vx = g.constant(x.clone());
    let y = channel_mixer(&mut g, &p, &params, vx).unwrap();
    let w = Weights::from_store(&store);
    let want = oracle::swiglu(
        &Mat::from_f32(1, 8, x.data()),
        w.mat("ffn.gate"),
        w.mat("ffn.up"),
        w.mat("ffn.down"),
    );
    assert_eq!(w.mat("ffn.gate").cols, 20);
    assert!(max_rel_err(g.value(y).data(), &want.data) <= 1e-5);

    let z = g.constant(Tensor::zeros(&[3, 8]));
    let y0 = channel_mixer(&mut g, &p, &params, z).unwrap();
    assert!(g.value(y0).data().iter().all(|v| *v == 0.0));
}

#[test]
fn plain_mlp_matches_reference_and_none_is_identity() {
    let mut store = ParamStore::new(17);
    let mlp = ChannelMixerParams::declare(&mut store, "mlp", ChannelMixerKind::PlainMlp, 6);
    let none = ChannelMixerParams::declare(&mut store, "none", ChannelMixerKind::None, 6);
    let x = uniform_tensor(&mut SplitRng::stream(17, 1), &[3, 6], -2.0, 2.0);
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let vx = g.constant(x.clone());
    let y = channel_mixer(&mut g, &p, &mlp, vx).unwrap();
    let w = Weights::from_store(&store);
    let want = oracle::plain_mlp(&Mat::from_f32(3, 6, x.data()), &w, "mlp");
    assert!(max_rel_err(g.value(y).data(), &want.data) <= 1e-5);
    let same = channel_mixer(&mut g, &p, &none, vx).unwrap();
    assert_eq!(g.value(same).data(), x.data());
}

#[test]
fn rms_norm_matches_64_bit_reference() {
    let mut rng = SplitRng::stream(18, 0);
    let x = uniform_tensor(&mut rng, &[1, 16], -2.0, 2.0);
    let s = uniform_tensor(&mut rng, &[16], 0.5, 1.5);
    let mut g = Graph::new();
    let vx = g.constant(x.clone());
    let vs = g.constant(s.clone());
    let y = rms_norm(&mut g, vx, vs, 1e-6).unwrap();
    let want = oracle::rms_norm(&Mat::from_f32(1, 16, x.data()), &to_f64(&s), 1e-6);
    assert!(max_rel_err(g.value(y).data(), &want.data) <= 1e-5);
}

#[test]
fn rms_norm_and_conv_gradients() {
    let mut rng = SplitRng::stream(19, 0);
    let x = uniform_tensor(&mut rng, &[4, 6], -2.0, 2.0);
    let s = uniform_tensor(&mut rng, &[6], 0.5, 1.5);
    let probe = uniform_tensor(&mut rng, &[4, 6], -1.0, 1.0);
    let pf = to_f64(&probe);
    let mut g = Graph::new();
    let vx = g.leaf(x.clone().with_grad());
    let vs = g.leaf(s.clone().with_grad());
    let y = rms_norm(&mut g, vx, vs, 1e-5).unwrap();
    let pv = g.constant(probe.clone());
    let yp = g.mul(y, pv).unwrap();
    let loss = g.sum_all(yp);
    g.backward(loss).unwrap();
    let (xf, sf) = (to_f64(&x), to_f64(&s));
    let f = |xv: &[f64], sv: &[f64]| {
        let y = oracle::rms_norm(&Mat { rows: 4, cols: 6, data: xv.to_vec() }, sv, 1e-5);
        y.data.iter().zip(&pf).map(|(a, b)| a * b).sum::<f64>()
    };
    let dx = fd_gradient(&|v| f(v, &sf), &xf, 1e-3);
    let ds = fd_gradient(&|v| f(&xf, v), &sf, 1e-3);
    assert!(max_rel_err(g.grad(vx).unwrap(), &dx) <= 1e-3);
    assert!(max_rel_err(g.grad(vs).unwrap(), &ds) <= 1e-3);

    let w = uniform_tensor(&mut rng, &[6, 3], -1.0, 1.0);
    let b = uniform_tensor(&mut rng, &[6], -1.0, 1.0);
    let mut g = Graph::new();
    let vars: Vec<_> = [&x, &w, &b].iter().map(|t| g.leaf((*t).clone().with_grad())).collect();
    let y = adventurer::layers::causal_conv1d(&mut g, vars[0], vars[1], vars[2]).unwrap();
    let pv = g.constant(probe);
    let yp = g.mul(y, pv).unwrap();
    let loss = g.sum_all(yp);
    g.backward(loss).unwrap();
    let base = [to_f64(&x), to_f64(&w), to_f64(&b)];
    for which in 0..3 {
        let f = |v: &[f64]| {
            let mut a = base.clone();
            a[which] = v.to_vec();
            let y = oracle::causal_conv(
                &Mat { rows: 4, cols: 6, data: a[0].clone() },
                &Mat { rows: 6, cols: 3, data: a[1].clone() },
                &a[2],
            );
            y.data.iter().zip(&pf).map(|(p, q)| p * q).sum()
        };
        let fd = fd_gradient(&f, &base[which], 1e-3);
        assert!(max_rel_err(g.grad(vars[which]).unwrap(), &fd) <= 1e-3, "conv input {which}");
    }
}

/// Counted multiply-accumulates of one mixer call at width 16.
fn mixer_macs(kind: &str, len: usize) -> u64 {
    let mut store = ParamStore::new(20);
    let mut g = Graph::new();
    let x = g.constant(Tensor::filled(&[len, 16], 0.1));
    if kind == "ssd" {
        let dims = SsdDims::new(16, 2, 16, 16, None).unwrap();
        let params = SsdLayerParams::declare(&mut store, "m", dims, ScanMode::Chunked(64));
        let p = store.bind_frozen(&mut g);
        let before = g.counter().macs;
        mamba2_mixer(&mut g, &p, &params, x).unwrap();
        g.counter().macs - before
    } else {
        let params = AttnLayerParams::declare(&mut store, "m", 16, 2, MaskMode::Causal).unwrap();
        let p = store.bind_frozen(&mut g);
        let before = g.counter().macs;
        causal_attention(&mut g, &p, &params, x).unwrap();
        g.counter().macs - before
    }
}

fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

#[test]
fn counted_cost_scales_linearly_and_quadratically() {
    let lens = [128usize, 256, 512, 1024];
    let xs: Vec<f64> = lens.iter().map(|&l| l as f64).collect();
    let ssd: Vec<f64> = lens.iter().map(|&l| mixer_macs("ssd", l) as f64).collect();
    let attn: Vec<f64> = lens.iter().map(|&l| mixer_macs("attn", l) as f64).collect();
    let (s1, s2) = (loglog_slope(&xs, &ssd), loglog_slope(&xs, &attn));
    assert!((s1 - 1.0).abs() <= 0.15, "ssd slope {s1}");
    assert!((s2 - 2.0).abs() <= 0.15, "attention slope {s2}");
    assert_eq!(mixer_macs("ssd", 256), mixer_macs("ssd", 256));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn chunked_equals_recurrent(
        len in 1usize..=512,
        chunk in 1usize..=80,
        heads in 1usize..=3,
        state in 1usize..=8,
        seed in 0u64..10_000,
    ) {
        let mut rng = SplitRng::stream(seed, 0);
        let case = ScanCase::random(&mut rng, len, heads, 4, 1, state);
        let rec = to_f64(&case.recurrent());
        let err = max_rel_err(case.chunked(chunk).data(), &rec);
        prop_assert!(err <= 1e-4, "len {} chunk {}: {}", len, chunk, err);
    }

    #[test]
    fn causal_attention_equals_masked_full(len in 1usize..=64, seed in 0u64..10_000) {
        let mut rng = SplitRng::stream(seed, 0);
        let (q, k, v) = random_qkv(&mut rng, len, 8);
        let out = run_attention(&q, &k, &v, 2, MaskMode::Causal);
        let want = oracle::masked_attention(
            &Mat::from_f32(len, 8, q.data()),
            &Mat::from_f32(len, 8, k.data()),
            &Mat::from_f32(len, 8, v.data()),
            2,
            true,
        );
        prop_assert!(oracle::max_abs_err(out.data(), &want.data) <= 1e-5);
    }
}
