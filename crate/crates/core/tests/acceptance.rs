//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! `VARINN_ACCEPTANCE=1,3,12` restricts the run to the listed criteria.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use varinn::autodiff::Tensor;
use varinn::divergences::{FDivergence, FDivergenceSpec};
use varinn::experiments::checks::{self, CheckOutcome};
use varinn::experiments::{run, ExperimentConfig, ResultRow, RunOptions, Subcommand, HEADER};
use varinn::rkhs::{dv_kl_estimate, CriticBall, DvOptions};
use varinn::rng::seed_everything;
use varinn::training::{mlp_divergence_estimate, CriticFit};
use varinn::Result;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { passed, detail })
}

fn from_checks(outcomes: &[CheckOutcome]) -> Result<Verdict> {
    let failed: Vec<&CheckOutcome> = outcomes.iter().filter(|c| !c.passed).collect();
    let detail = outcomes
        .iter()
        .map(|c| match c.threshold {
            t if t > 0.0 => format!("{} {:.3e} (< {t:.0e})", c.name, c.value),
            _ => format!("{} {} failures", c.name, c.value),
        })
        .collect::<Vec<_>>()
        .join("; ");
    if failed.is_empty() {
        verdict(true, detail)
    } else {
        let why: Vec<String> = failed.iter().map(|c| format!("{}: {}", c.name, c.detail)).collect();
        verdict(false, format!("{detail}; failing: {}", why.join("; ")))
    }
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn scratch_root() -> PathBuf {
    std::env::temp_dir().join(format!("varinn-acceptance-{}", std::process::id()))
}

fn scratch_dir(tag: &str) -> PathBuf {
    let dir = scratch_root().join(tag);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn run_experiment(sub: Subcommand, tag: &str, overrides: &[&str]) -> Result<Vec<ResultRow>> {
    let out = scratch_dir(tag).join("rows.csv");
    let mut args: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    args.push(format!("experiment.output={}", out.display()));
    let cfg = ExperimentConfig::resolve(sub, None, &args)?;
    let summary = run(&cfg, &RunOptions::default(), &mut std::io::sink())?;
    Ok(summary.rows)
}

/// Final values of `metric`, keyed by the run id with its seed removed.
fn finals_by_group(rows: &[ResultRow], metric: &str) -> Vec<(String, Vec<f64>)> {
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for r in rows.iter().filter(|r| r.epoch.is_none() && r.metric_name == metric) {
        let key = r.run_id.rsplit_once(",seed=").map_or(r.run_id.as_str(), |(k, _)| k).to_string();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r.metric_value),
            None => groups.push((key, vec![r.metric_value])),
        }
    }
    groups
}

fn group_median(groups: &[(String, Vec<f64>)], key: &str) -> f64 {
    groups
        .iter()
        .find(|(k, _)| k == key)
        .map_or(f64::NAN, |(_, v)| median(v.clone()))
}

fn gaussian_pair(seed: u64, n: usize, names: (&str, &str)) -> (Tensor, Tensor) {
    let streams = seed_everything(seed);
    let p = Tensor::randn([n, 1], 1.0, &mut streams.stream(names.0));
    let q = Tensor::randn([n, 1], 1.0, &mut streams.stream(names.1)).map(|v| v + 1.0);
    (p, q)
}

fn invertibility() -> Result<Verdict> {
    from_checks(&[checks::coupling_invertibility(100, 11)?, checks::iresnet_invertibility(100, 12)?])
}

fn logdet() -> Result<Verdict> {
    from_checks(&[checks::logdet_oracle(50, 13)?])
}

fn gradients() -> Result<Verdict> {
    let outcomes = checks::loss_gradients(14)?;
    let worst = outcomes.iter().map(|c| c.value).fold(0.0, f64::max);
    let failed: Vec<String> = outcomes.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", c.name, c.detail)).collect();
    verdict(
        failed.is_empty(),
        format!("all losses on {} architectures, worst rel error {worst:.2e} (< 1e-4) {}", outcomes.len(), failed.join("; ")),
    )
}

fn mlp_lower_bound() -> Result<Verdict> {
    let n = 10_000;
    let mut estimates = Vec::new();
    for seed in 0..10 {
        let (p, q) = gaussian_pair(seed, n, ("p", "q"));
        let (p_ev, q_ev) = gaussian_pair(seed, n, ("p_eval", "q_eval"));
        let spec = FDivergenceSpec::from(FDivergence::KL);
        let (est, _) =
            mlp_divergence_estimate(spec, (&p, &q), (&p_ev, &q_ev), CriticFit::default(), &mut seed_everything(seed).stream("critic"))?;
        estimates.push(est);
    }
    let (mean, se) = mean_stderr(&estimates);
    verdict(
        (0.35..=0.55).contains(&mean) && mean <= 0.5 + 2.0 * se,
        format!("mean {mean:.4} ± {se:.4} over 10 seeds, truth 0.5"),
    )
}

fn rkhs_bounds() -> Result<Verdict> {
    let bounds = [0.5, 2.0, 8.0];
    let mut stats = Vec::new();
    for &b in &bounds {
        let mut est = Vec::new();
        for seed in 0..10 {
            let (p, q) = gaussian_pair(seed, 500, ("p", "q"));
            let ball = CriticBall { gamma: 0.5, b, k_half: 6.0 };
            est.push(dv_kl_estimate(&p, None, &q, None, ball, DvOptions::default())?.0);
        }
        stats.push(mean_stderr(&est));
    }
    let monotone = stats.windows(2).all(|w| w[1].0 >= w[0].0 - 2.0 * w[0].1.hypot(w[1].1));
    let last = stats[2].0;
    let null = checks::rkhs_null(500, 15)?;
    let means: Vec<String> = bounds.iter().zip(&stats).map(|(b, (m, s))| format!("b={b}: {m:.4}±{s:.4}")).collect();
    verdict(
        monotone && (0.30..=0.55).contains(&last) && null.passed,
        format!("{}; P=Q |est| {:.4}", means.join(", "), null.value),
    )
}

fn sinkhorn() -> Result<Verdict> {
    from_checks(&checks::sinkhorn_consistency(16)?)
}

fn exact_ot() -> Result<Verdict> {
    from_checks(&checks::w1_oracle(100, 17)?)
}

fn inequalities() -> Result<Verdict> {
    from_checks(&checks::inequality_witnesses(1000, 200, 18)?)
}

fn pareto_trend() -> Result<Verdict> {
    let rows = run_experiment(Subcommand::ParetoMoments, "pareto", &["sweep.alphas=1,2,10", "experiment.seeds=0..5"])?;
    let g = finals_by_group(&rows, "w1");
    let m = |a: &str| group_median(&g, &format!("pareto-moments:alpha={a}"));
    let (w1, w2, w10) = (m("1"), m("2"), m("10"));
    verdict(
        w10 < w2 && w2 < w1,
        format!("median w1: alpha=1 {w1:.4}, alpha=2 {w2:.4}, alpha=10 {w10:.4}"),
    )
}

fn support_ordering() -> Result<Verdict> {
    let rows = run_experiment(
        Subcommand::SupportMismatch,
        "support",
        &["sweep.supports=0:1,3:4,5:6", "experiment.seeds=0..5"],
    )?;
    let g = finals_by_group(&rows, "mmd");
    let m = |loss: &str, s: &str| group_median(&g, &format!("support-mismatch:loss={loss},latent={s}"));
    let (kl01, kl34, kl56) = (m("kl", "U(0,1)"), m("kl", "U(3,4)"), m("kl", "U(5,6)"));
    let (sk01, sk34, sk56) = (m("sinkhorn", "U(0,1)"), m("sinkhorn", "U(3,4)"), m("sinkhorn", "U(5,6)"));
    verdict(
        kl01 < kl56 && sk01 < sk56 && kl34 >= 1.5 * sk34,
        format!(
            "median mmd kl: {kl01:.4} / {kl34:.4} / {kl56:.4}, sinkhorn: {sk01:.4} / {sk34:.4} / {sk56:.4} at U(0,1) / U(3,4) / U(5,6)"
        ),
    )
}

fn ik_prior_effect() -> Result<Verdict> {
    let rows = run_experiment(Subcommand::PriorEffect, "ik", &["sweep.priors=gaussian", "experiment.seeds=0"])?;
    let get = |lp: &str, metric: &str| {
        rows.iter()
            .find(|r| r.epoch.is_none() && r.metric_name == metric && r.run_id.contains(&format!("lambda_prior={lp},")))
            .map_or(f64::NAN, |r| r.metric_value)
    };
    let (e0, e1, e100) = (get("0", "resim_error"), get("1", "resim_error"), get("100", "resim_error"));
    let base = get("0", "resim_error_untrained");
    let reference = [get("0", "resim_error_ref"), get("1", "resim_error_ref"), get("100", "resim_error_ref")];
    verdict(
        e0 < base / 5.0 && e1 <= 1.1 * e0 && e100 > e0,
        format!(
            "untrained {base:.4}; trained lambda'=0 {e0:.4}, 1 {e1:.4}, 100 {e100:.4}; at (0, 1.5): {:.4} / {:.4} / {:.4}",
            reference[0], reference[1], reference[2]
        ),
    )
}

/// CSV body with the wall-time column dropped.
fn without_wall_time(rows: &[ResultRow]) -> Vec<Vec<String>> {
    let wall = HEADER.iter().position(|h| *h == "wall_time_s").expect("wall_time_s column");
    rows.iter()
        .map(|r| {
            let mut cells = r.cells().to_vec();
            cells.remove(wall);
            cells
        })
        .collect()
}

fn determinism() -> Result<Verdict> {
    let cell = ["sweep.alphas=2", "experiment.seeds=3", "train.epochs=2", "experiment.samples=1000", "experiment.eval_samples=500"];
    let mut bodies = Vec::new();
    for round in 0..2 {
        let selfcheck = run_experiment(Subcommand::Selfcheck, &format!("selfcheck{round}"), &[])?;
        let pareto = run_experiment(Subcommand::ParetoMoments, &format!("cell{round}"), &cell)?;
        bodies.push((without_wall_time(&selfcheck), without_wall_time(&pareto)));
    }
    let same_check = bodies[0].0 == bodies[1].0;
    let same_cell = bodies[0].1 == bodies[1].1;
    verdict(
        same_check && same_cell && !bodies[0].0.is_empty() && !bodies[0].1.is_empty(),
        format!(
            "selfcheck {} rows identical: {same_check}; pareto cell {} rows identical: {same_cell}",
            bodies[0].0.len(),
            bodies[0].1.len()
        ),
    )
}

type Criterion = (usize, &'static str, f64, fn() -> Result<Verdict>);

const CRITERIA: [Criterion; 12] = [
    (1, "invertibility", 10.0, invertibility),
    (2, "log-det oracle", 30.0, logdet),
    (3, "gradient suite", 60.0, gradients),
    (4, "MLP critic KL lower bound", 120.0, mlp_lower_bound),
    (5, "RKHS critic bounds", 120.0, rkhs_bounds),
    (6, "Sinkhorn consistency", 30.0, sinkhorn),
    (7, "exact OT oracle", 10.0, exact_ot),
    (8, "inequality witnesses", 60.0, inequalities),
    (9, "Pareto moment trend", 900.0, pareto_trend),
    (10, "support-mismatch ordering", 900.0, support_ordering),
    (11, "IK end-to-end prior effect", 1200.0, ik_prior_effect),
    (12, "determinism", f64::INFINITY, determinism),
];

fn main() -> ExitCode {
    let selected: Option<Vec<usize>> = std::env::var("VARINN_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failures = 0;
    for (id, name, limit, f) in CRITERIA {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        let (passed, detail) = match outcome {
            Ok(v) => (v.passed && secs < limit, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let budget = if limit.is_finite() { format!(" (limit {limit:.0} s)") } else { String::new() };
        println!(
            "{} criterion {id:>2} {name}: {detail} [{secs:.1} s{budget}]",
            if passed { "PASS" } else { "FAIL" }
        );
        failures += usize::from(!passed);
    }
    let _ = std::fs::remove_dir_all(scratch_root());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
