//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use adventurer::harness::bench::BenchOptions;
use adventurer::harness::verify::{
    distinct_fingerprints, fingerprints_track_configs, gradient_audit, measure_complexity, measure_heading_flip,
    measure_lattice, measure_mask_equivalence, measure_param_count, measure_scan_equivalence,
    measure_trainability, measure_vit_equivalence, run_suite, time_ratios, Faults,
};
use adventurer::model::{ModelConfig, Preset};
use adventurer::Result;

const SEED: u64 = 0;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn param_counts() -> Result<Outcome> {
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [Preset::Tiny, Preset::Small, Preset::Base, Preset::Large] {
        let c = measure_param_count(p)?;
        let dev = c.deviation.unwrap_or(f64::INFINITY);
        ok &= dev.abs() <= 0.10;
        parts.push(format!("{} {} ({:+.2}%)", c.preset, c.count, dev * 100.0));
    }
    outcome(ok, parts.join(", "))
}

fn scan_equivalence() -> Result<Outcome> {
    let w = measure_scan_equivalence(200, 512, SEED)?;
    outcome(
        w.instances == 200 && w.max_err <= 1e-4,
        format!("{} instances, max rel err {:.2e} ({})", w.instances, w.max_err, w.worst),
    )
}

fn mask_equivalence() -> Result<Outcome> {
    let w = measure_mask_equivalence(100, 64, SEED)?;
    outcome(
        w.instances == 100 && w.max_err <= 1e-5,
        format!("{} instances, max elementwise err {:.2e} ({})", w.instances, w.max_err, w.worst),
    )
}

fn vit_equivalence() -> Result<Outcome> {
    let w = measure_vit_equivalence(20, SEED)?;
    outcome(
        w.instances == 20 && w.max_err <= 1e-5,
        format!("{} inputs, max rel err {:.2e}", w.instances, w.max_err),
    )
}

fn gradient() -> Result<Outcome> {
    let r = gradient_audit(&ModelConfig::micro(), SEED, 32, 1, 1e-3)?;
    outcome(
        r.max_rel_err <= 5e-3,
        format!("{} tensors, max rel err {:.2e} ({})", r.tensors.len(), r.max_rel_err, r.worst),
    )
}

fn heading_flip() -> Result<Outcome> {
    let r = measure_heading_flip(64, SEED, Faults::default())?;
    let ok = r.tokens == 257 && r.heading_err <= 1e-6 && r.flip_ok && r.involution_ok && r.roles_ok;
    let mut detail = format!(
        "L_seq {} over {} blocks, heading err {:.2e}, flip {}, involution {}, roles {}",
        r.tokens, r.blocks, r.heading_err, r.flip_ok, r.involution_ok, r.roles_ok
    );
    if let Some(e) = r.boundary_error {
        detail.push_str(&format!(" ({e})"));
    }
    outcome(ok, detail)
}

fn complexity() -> Result<Outcome> {
    let opts = BenchOptions {
        seed: SEED,
        ..BenchOptions::default()
    };
    let (ssm, attn) = measure_complexity(&[256, 512, 1024, 2048], opts)?;
    let ts = ssm.time_slope.unwrap_or(f64::NAN);
    let ta = attn.time_slope.unwrap_or(f64::NAN);
    let ratios = time_ratios(&ssm, &attn);
    let increasing = ratios.len() == 4 && ratios.windows(2).all(|w| w[1].1 > w[0].1);
    let ratio_text: Vec<String> = ratios.iter().map(|(l, r)| format!("{l}:{r:.2}")).collect();
    outcome(
        (ts - 1.0).abs() <= 0.15 && (ta - 2.0).abs() <= 0.3 && increasing,
        format!(
            "mamba2 slope {ts:.3}, full-attn slope {ta:.3}, ratios [{}]",
            ratio_text.join(" ")
        ),
    )
}

fn trainability() -> Result<Outcome> {
    let a = measure_trainability(SEED)?;
    let b = measure_trainability(SEED)?;
    let same = a == b;
    outcome(
        a.final_acc >= 0.95 && a.losses.len() <= 500 && same,
        format!(
            "accuracy {:.3} after {} steps, final loss {:.4}, rerun identical {same}",
            a.final_acc,
            a.losses.len(),
            a.final_loss
        ),
    )
}

fn lattice() -> Result<Outcome> {
    let tables = measure_lattice(SEED)?;
    let mut ok = fingerprints_track_configs(&tables);
    let mut parts = Vec::new();
    for t in &tables {
        let clean = t.failures().count() == 0 && t.rows.iter().all(|r| r.final_loss.is_finite());
        let distinct = distinct_fingerprints(t);
        ok &= clean && distinct;
        let axes: Vec<&str> = t.axes.iter().map(|a| a.name()).collect();
        parts.push(format!(
            "{} {} cells finite {clean} distinct {distinct}",
            axes.join("x"),
            t.rows.len()
        ));
    }
    outcome(ok, parts.join("; "))
}

type Criterion = (&'static str, Duration, fn() -> Result<Outcome>);

fn main() -> ExitCode {
    // Independent oracle examples run first so their values are on record.
    match run_suite("oracles", SEED, Faults::default()) {
        Ok(r) => {
            for c in &r.checks {
                println!("oracle  {:<40} measured {:e} (want {})", c.name, c.measured, c.tolerance);
            }
            if !r.passed() {
                println!("FAIL oracles: {}", r.first_failure().unwrap_or_default());
                return ExitCode::FAILURE;
            }
        }
        Err(e) => {
            println!("FAIL oracles: {e}");
            return ExitCode::FAILURE;
        }
    }

    let secs = Duration::from_secs;
    let criteria: [Criterion; 9] = [
        ("1 parameter counts", secs(1), param_counts),
        ("2 scan equivalence", secs(60), scan_equivalence),
        ("3 mask equivalence", secs(30), mask_equivalence),
        ("4 plain vit equivalence", secs(60), vit_equivalence),
        ("5 gradient audit", secs(300), gradient),
        ("6 heading and flip invariants", secs(30), heading_flip),
        ("7 complexity separation", secs(600), complexity),
        ("8 trainability", secs(600), trainability),
        ("9 ablation lattice", secs(300), lattice),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let result = run();
        let took = start.elapsed();
        let in_time = took <= budget;
        let (passed, detail) = match result {
            Ok(o) => (o.passed && in_time, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failed += 1;
        }
        println!(
            "{} {name}: {detail} [{:.1}s of {}s]",
            if passed { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
