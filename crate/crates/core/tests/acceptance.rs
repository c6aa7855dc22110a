//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=2,5` restricts the run to the listed criteria.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use tensortree::bench::{run_experiment, ExperimentReport, ExperimentSpec, FunctionId};

const SEED: u64 = 20240;

struct Outcome {
    pass: bool,
    detail: String,
}

fn experiment(f: FunctionId, n: usize, trials: usize, noise: f64, tree_adaptation: bool) -> ExperimentReport {
    let mut spec = ExperimentSpec::new(f, n, trials, SEED);
    spec.noise = noise;
    spec.adapt.tree_adaptation = tree_adaptation;
    run_experiment(&spec).expect("experiment runs")
}

fn count(r: &ExperimentReport, pred: impl Fn(&tensortree::bench::TrialReport) -> bool) -> usize {
    r.trials.iter().filter(|t| pred(t)).count()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

fn errors(r: &ExperimentReport) -> String {
    let e: Vec<String> = r.trials.iter().map(|t| format!("{:.2e}", t.test_error)).collect();
    e.join(" ")
}

fn recovery_ii() -> Outcome {
    let r = experiment(FunctionId::Ii, 10_000, 10, 0.0, true);
    let ok = count(&r, |t| t.test_error <= 1e-12 && t.storage == 428);
    Outcome {
        pass: ok >= 8,
        detail: format!(
            "{ok}/10 trials with error <= 1e-12 and storage 428 (errors {}; storage {:?})",
            errors(&r),
            r.trials.iter().map(|t| t.storage).collect::<Vec<_>>()
        ),
    }
}

fn accuracy_i() -> Outcome {
    let r = experiment(FunctionId::I, 10_000, 10, 0.0, true);
    let accurate = count(&r, |t| t.test_error <= 1e-4);
    let node = count(&r, |t| t.final_tree.contains(&vec![1, 3, 4, 5]));
    Outcome {
        pass: accurate >= 8 && node >= 8,
        detail: format!("{accurate}/10 with error <= 1e-4, {node}/10 with node {{1,3,4,5}} (errors {})", errors(&r)),
    }
}

fn accuracy_v() -> Outcome {
    let r = experiment(FunctionId::V, 10_000, 10, 0.0, true);
    let accurate = count(&r, |t| t.test_error <= 1e-4);
    Outcome { pass: accurate >= 7, detail: format!("{accurate}/10 with error <= 1e-4 (errors {})", errors(&r)) }
}

fn noisy_ii() -> Outcome {
    let r = experiment(FunctionId::Ii, 10_000, 5, 1e-2, true);
    let ok = count(&r, |t| t.approximation_error <= 1e-4);
    let e: Vec<String> = r.trials.iter().map(|t| format!("{:.2e}", t.approximation_error)).collect();
    Outcome { pass: ok >= 4, detail: format!("{ok}/5 with squared error <= 1e-4 ({})", e.join(" ")) }
}

fn tree_adaptation_needed() -> Outcome {
    let off = experiment(FunctionId::Ii, 1_000, 5, 0.0, false);
    let on = experiment(FunctionId::Ii, 1_000, 5, 0.0, true);
    let m_off = median(off.trials.iter().map(|t| t.test_error).collect());
    let m_on = median(on.trials.iter().map(|t| t.test_error).collect());
    Outcome {
        pass: m_off >= 1e-3 && m_on <= 1e-6,
        detail: format!("median error without adaptation {m_off:.2e} (>= 1e-3), with {m_on:.2e} (<= 1e-6)"),
    }
}

fn seeded(n: u64, check: fn(u64) -> Vec<String>) -> Vec<String> {
    (0..n).flat_map(|k| check(SEED + k)).collect()
}

fn summarize(bad: Vec<String>, what: &str) -> Outcome {
    match bad.first() {
        None => Outcome { pass: true, detail: what.to_string() },
        Some(first) => Outcome { pass: false, detail: format!("{} violations, first: {first}", bad.len()) },
    }
}

fn format_algebra() -> Outcome {
    summarize(seeded(100, common::format_algebra), "100 random networks, all invariants within 1e-10")
}

fn oracles() -> Outcome {
    let mut bad = seeded(50, common::spectrum_oracle);
    bad.extend(seeded(50, common::loo_oracle));
    bad.extend(seeded(200, common::matricization_round_trip));
    summarize(bad, "spectra and LOO within 1e-10 of brute force, matricizations exact")
}

fn determinism() -> Outcome {
    let run = || {
        let mut spec = ExperimentSpec::new(FunctionId::Ii, 500, 3, SEED);
        spec.n_test = 1_000;
        serde_json::to_vec_pretty(&run_experiment(&spec).expect("experiment runs")).expect("serializes")
    };
    let (a, b) = (run(), run());
    Outcome { pass: a == b, detail: format!("two runs, {} bytes each, identical: {}", a.len(), a == b) }
}

fn main() -> ExitCode {
    // cargo passes harness flags such as --nocapture; only filters are honored
    let filter: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let criteria: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "function (ii) recovery", recovery_ii),
        (2, "function (i) accuracy", accuracy_i),
        (3, "function (v) accuracy", accuracy_v),
        (4, "noisy robustness", noisy_ii),
        (5, "tree adaptation necessity", tree_adaptation_needed),
        (6, "format algebra properties", format_algebra),
        (7, "oracles", oracles),
        (8, "determinism", determinism),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if filter.as_ref().is_some_and(|f| !f.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id} [{verdict}] {name}: {} ({:.0}s)", o.detail, t.elapsed().as_secs_f64());
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
