//! Acceptance gate. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion does.
//!
//! Run with `cargo test -p pact --test acceptance -- --nocapture`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pact::contract::FEASIBILITY_TOLERANCE;
use pact::experiment::{run_qos, run_solve, run_sweep_liability, simulate};
use pact::scenario::load_scenario_file;
use pact::{
    brute_force_second_best, satisfies_reduced_constraints, solve_first_best, solve_second_best, verify_feasibility,
    CostCurve, SolveMode, SolverOptions, TypeSet, Valuation,
};

const GRID_STEP: f64 = 1e-3;

/// Published QoS column for the eight bundled services.
const REFERENCE_Q: [f64; 8] = [0.531, 0.555, 0.584, 0.655, 0.691, 0.728, 0.814, 0.848];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

fn scenario_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/table1.scenario")
}

fn worked_instance() -> (TypeSet, Valuation, CostCurve) {
    (
        TypeSet::uniform(vec![1.0, 2.0]).unwrap(),
        Valuation::Log { a: 1.0 },
        CostCurve::quadratic(1.0, 0.0, 0.0).unwrap(),
    )
}

fn close(x: f64, want: f64, tol: f64) -> bool {
    (x - want).abs() <= tol
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let sc = load_scenario_file(scenario_path()).unwrap();
    let rep = run_qos(&sc).unwrap();
    let elapsed = start.elapsed();
    let devs: Vec<f64> = rep
        .table
        .levels
        .iter()
        .zip(REFERENCE_Q)
        .map(|(l, r)| (l.q - r).abs())
        .collect();
    let max_all = devs.iter().copied().fold(0.0, f64::max);
    let max_head = devs[..3].iter().copied().fold(0.0, f64::max);
    let pass = devs.len() == 8
        && max_all <= 0.01
        && max_head <= 0.005
        && rep.gamma_calibration == 10.0
        && elapsed < Duration::from_secs(1);
    Outcome::new(
        pass,
        format!("max |dq| {max_all:.5}, rows 1-3 {max_head:.5}, {elapsed:?}"),
    )
}

fn criterion_2() -> Outcome {
    let (types, v, c) = worked_instance();
    let r = solve_second_best(&types, &v, &c, &SolverOptions::default()).unwrap();
    let oracle = brute_force_second_best(&types, &v, &c, GRID_STEP).unwrap();
    let (q, p) = (r.menu.qs(), r.menu.ps());
    let pass = close(q[0], 0.0, 1e-6)
        && close(q[1], 0.618034, 1e-6)
        && close(p[0], 0.0, 1e-6)
        && close(p[1], 0.962424, 1e-6)
        && close(r.expected_profit, 0.290229, 1e-6)
        && close(oracle.expected_profit, r.expected_profit, 1e-3);
    Outcome::new(
        pass,
        format!(
            "q {:.7?}, p {:.7?}, profit {:.7}, oracle {:.7}",
            q, p, r.expected_profit, oracle.expected_profit
        ),
    )
}

fn criterion_3() -> Outcome {
    let types = TypeSet::new(vec![1.0, 1.1, 5.0], vec![0.6, 0.2, 0.2]).unwrap();
    let (_, v, c) = worked_instance();
    let r = solve_second_best(&types, &v, &c, &SolverOptions::default()).unwrap();
    let oracle = brute_force_second_best(&types, &v, &c, GRID_STEP).unwrap();
    let (q, p) = (r.menu.qs(), r.menu.ps());
    let pass = r.ironed_segments.len() == 1
        && r.ironed_segments[0] == (0..2)
        && r.block_ids[0] == r.block_ids[1]
        && q[0] == 0.0
        && q[1] == 0.0
        && close(q[2], 1.0, 1e-9)
        && close(p[2], 5.0 * 2f64.ln(), 1e-6)
        && close(r.expected_profit, 0.493147, 1e-6)
        && close(oracle.expected_profit, r.expected_profit, 1e-12)
        && oracle.menu.qs() == vec![0.0, 0.0, 1.0];
    Outcome::new(
        pass,
        format!(
            "segments {:?}, q {:?}, p3 {:.7}, profit {:.7}, oracle {:.7}",
            r.ironed_segments, q, p[2], r.expected_profit, oracle.expected_profit
        ),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let sc = load_scenario_file(scenario_path()).unwrap();
    let run = run_solve(&sc, SolveMode::SecondBest, sc.liability_enabled).unwrap();
    let elapsed = start.elapsed();
    let rep = run.feasibility.as_ref().unwrap();
    let u: Vec<f64> = run.result.per_type.iter().map(|t| t.user_utility).collect();
    let nondecreasing = u.windows(2).all(|w| w[1] >= w[0] - FEASIBILITY_TOLERANCE);
    let pass = sc.types.len() == 15
        && rep.feasible
        && rep.constraints_checked == 15 + 210
        && rep.tolerance == FEASIBILITY_TOLERANCE
        && nondecreasing
        && u[0].abs() <= FEASIBILITY_TOLERANCE
        && elapsed < Duration::from_secs(5);
    Outcome::new(
        pass,
        format!(
            "{} constraints, max violation {:.2e}, u1 {:.1e}, {elapsed:?}",
            rep.constraints_checked, rep.max_violation, u[0]
        ),
    )
}

fn random_valuation(rng: &mut ChaCha8Rng) -> Valuation {
    let a = rng.gen_range(0.5..2.0);
    match rng.gen_range(0..3) {
        0 => Valuation::Log { a },
        1 => Valuation::Sqrt { a },
        _ => Valuation::Power {
            a,
            b: rng.gen_range(0.2..0.9),
        },
    }
}

fn random_instance(rng: &mut ChaCha8Rng, k: usize) -> (TypeSet, Valuation, CostCurve) {
    let mut thetas = Vec::with_capacity(k);
    let mut t = rng.gen_range(0.5..2.0);
    for _ in 0..k {
        thetas.push(t);
        t += rng.gen_range(0.05..2.0);
    }
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut pmf: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let head: f64 = pmf[..k - 1].iter().sum();
    pmf[k - 1] = 1.0 - head;
    let types = TypeSet::new(thetas, pmf).unwrap();
    let curve = CostCurve::quadratic(
        rng.gen_range(0.1..3.0),
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.0..0.2),
    )
    .unwrap();
    (types, random_valuation(rng), curve)
}

fn random_suite() -> Vec<(TypeSet, Valuation, CostCurve)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..200)
        .map(|_| {
            let k = rng.gen_range(2..=6);
            random_instance(&mut rng, k)
        })
        .collect()
}

fn criterion_5(suite: &[(TypeSet, Valuation, CostCurve)]) -> Outcome {
    let opts = SolverOptions::default();
    let mut failures = 0;
    let mut reduced_ok = 0;
    for (types, v, c) in suite {
        let menu = match solve_second_best(types, v, c, &opts) {
            Ok(r) => r.menu,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        let reduced = satisfies_reduced_constraints(&menu, types, v, FEASIBILITY_TOLERANCE).unwrap();
        let full = verify_feasibility(&menu, types, v, FEASIBILITY_TOLERANCE).unwrap();
        if reduced {
            reduced_ok += 1;
        }
        if !(reduced && full.feasible) {
            failures += 1;
        }
    }
    Outcome::new(
        failures == 0,
        format!("{} instances, {reduced_ok} pass the reduced set, {failures} failures", suite.len()),
    )
}

fn criterion_6(suite: &[(TypeSet, Valuation, CostCurve)]) -> Outcome {
    let opts = SolverOptions::default();
    let mut failures = 0;
    let mut worst_u: f64 = 0.0;
    for (types, v, c) in suite {
        let sb = solve_second_best(types, v, c, &opts).unwrap();
        let fb = solve_first_best(types, v, c, &opts).unwrap();
        let u = fb.per_type.iter().map(|t| t.user_utility.abs()).fold(0.0, f64::max);
        worst_u = worst_u.max(u);
        let slack = 1e-9 * (1.0 + sb.expected_profit.abs());
        if u > 1e-9
            || fb.expected_profit < sb.expected_profit - slack
            || fb.social_welfare < sb.social_welfare - slack
        {
            failures += 1;
        }
    }
    Outcome::new(
        failures == 0,
        format!("{} instances, max |u| {worst_u:.1e}, {failures} failures", suite.len()),
    )
}

fn criterion_7() -> Outcome {
    let sc = load_scenario_file(scenario_path()).unwrap();
    let with = run_solve(&sc, SolveMode::SecondBest, true).unwrap().result.expected_profit;
    let without = run_solve(&sc, SolveMode::SecondBest, false).unwrap().result.expected_profit;
    let multipliers = [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0];
    let sweep = run_sweep_liability(&sc, &multipliers).unwrap();
    let profits: Vec<f64> = sweep.iter().map(|r| r.expected_profit).collect();
    let nonincreasing = profits.windows(2).all(|w| w[1] <= w[0]);
    Outcome::new(
        with < without && nonincreasing,
        format!("profit {without:.6} -> {with:.6} with liability, sweep {profits:.4?}"),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let opts = SolverOptions::default();
    let start = Instant::now();
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.gen_range(1..=3);
        let (types, v, c) = random_instance(&mut rng, k);
        let solved = solve_second_best(&types, &v, &c, &opts).unwrap().expected_profit;
        let oracle = brute_force_second_best(&types, &v, &c, GRID_STEP).unwrap().expected_profit;
        let gap = (solved - oracle).abs();
        worst = worst.max(gap);
        if gap > GRID_STEP * (1.0 + solved.abs()) {
            failures += 1;
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        failures == 0 && elapsed < Duration::from_secs(60),
        format!("100 instances, max gap {worst:.2e}, {failures} failures, {elapsed:?}"),
    )
}

fn run_pact(args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_pact")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), out.stdout)
}

/// Runs every subcommand into `dir` and returns each artifact's bytes plus
/// the verify transcript.
fn cli_pass(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let sc = scenario_path();
    let sc = sc.to_str().unwrap();
    let d = |name: &str| dir.join(name).to_str().unwrap().to_owned();
    let (sb, fb, qos, sweep, sim) = (d("second"), d("first"), d("qos"), d("sweep"), d("sim"));
    let menu = format!("{sb}/menu.csv");
    let runs: Vec<Vec<&str>> = vec![
        vec!["qos", "-c", sc, "-o", &qos],
        vec!["solve", "-c", sc, "--mode", "second-best", "-o", &sb],
        vec!["solve", "-c", sc, "--mode", "first-best", "-o", &fb],
        vec!["sweep-liability", "-c", sc, "--multipliers", "0,0.5,1,1.5", "-o", &sweep],
        vec!["simulate", "-c", sc, "-m", &menu, "-n", "20000", "--seed", "11", "-o", &sim],
    ];
    for args in &runs {
        let (code, _) = run_pact(args);
        if code != 0 {
            return Err(format!("`pact {}` exited {code}", args[0]));
        }
    }
    let (code, verify_out) = run_pact(&["verify", "-c", sc, "-m", &menu]);
    if code != 0 {
        return Err(format!("`pact verify` exited {code}"));
    }
    let mut files = vec![("verify.stdout".to_owned(), verify_out)];
    for rel in [
        "qos/qos.csv",
        "second/menu.csv",
        "second/summary.csv",
        "first/menu.csv",
        "first/summary.csv",
        "sweep/sweep.csv",
        "sim/sim.csv",
    ] {
        let bytes = std::fs::read(dir.join(rel)).map_err(|e| format!("{rel}: {e}"))?;
        files.push((rel.to_owned(), bytes));
    }
    Ok(files)
}

fn criterion_9() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    match (cli_pass(a.path()), cli_pass(b.path())) {
        (Ok(x), Ok(y)) => {
            let differing: Vec<&str> = x
                .iter()
                .zip(&y)
                .filter(|(l, r)| l.1 != r.1)
                .map(|(l, _)| l.0.as_str())
                .collect();
            Outcome::new(
                differing.is_empty(),
                format!("{} outputs compared, differing: {differing:?}", x.len()),
            )
        }
        (Err(e), _) | (_, Err(e)) => Outcome::new(false, e),
    }
}

fn criterion_10() -> Outcome {
    let (types, v, c) = worked_instance();
    let r = solve_second_best(&types, &v, &c, &SolverOptions::default()).unwrap();
    let n = 1_000_000_u64;
    let sim = simulate(&types, &v, &c, &r.menu, n, 20_240_601, FEASIBILITY_TOLERANCE).unwrap();
    let m: Vec<f64> = r.per_type.iter().map(|t| t.margin).collect();
    let mean = 0.5 * (m[0] + m[1]);
    let sigma = (0.5 * ((m[0] - mean).powi(2) + (m[1] - mean).powi(2))).sqrt();
    let bound = 3.0 * sigma / (n as f64).sqrt();
    let gap = (sim.empirical_profit - 0.290229).abs();
    Outcome::new(
        gap <= bound,
        format!("empirical {:.6}, |gap| {gap:.2e} <= {bound:.2e}", sim.empirical_profit),
    )
}

#[test]
fn acceptance_criteria() {
    let suite = random_suite();
    let results = [
        ("QoS table matches reference scores", criterion_1()),
        ("worked two-type menu", criterion_2()),
        ("ironing with a pooled null block", criterion_3()),
        ("15-type menu passes all 225 constraints", criterion_4()),
        ("reduced constraints imply full feasibility", criterion_5(&suite)),
        ("first-best benchmark ordering", criterion_6(&suite)),
        ("liability lowers profit, sweep nonincreasing", criterion_7()),
        ("solver matches grid oracle", criterion_8()),
        ("CLI output is byte-identical across runs", criterion_9()),
        ("simulated profit within 3 sigma", criterion_10()),
    ];
    let mut failed = Vec::new();
    for (i, (name, outcome)) in results.iter().enumerate() {
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {:>2}: {name} ({})", i + 1, outcome.detail);
        if !outcome.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
