//! Acceptance criteria. Each test prints one `criterion N ... PASS|FAIL` line
//! straight to stdout so that the verdicts show up even when output is captured.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ks_nonlocal::config::RunConfig;
use ks_nonlocal::observables::{k_label, summarize, ObservableSeries, Recorder, SummaryOptions};
use ks_nonlocal::params::{classify_exponents, ModelParams, Regime, Tau};
use ks_nonlocal::stepper::{RunResult, StepStatus, Stepper, StepperConfig, Termination};
use ks_nonlocal::verification::{
    build_mms_case, convergence_study, default_mms_params, equilibrium_mms_case, mms_errors, ode_comparison_oracle,
    spatial_levels, temporal_levels, Level, OracleOptions,
};
use ks_nonlocal::{integrate, FaceScheme, Grid, State};

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {n:>2} {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {n} failed: {detail}");
}

const RUN1: &str = "model.chi = 5\nmodel.alpha = 1.5\nmodel.beta = 3\ngrid.cells = 256\n\
                    init.u.mass = 4\ninit.u.width = 0.05\nrun.t_end = 50\n";
const RUN2: &str = "model.chi = 10\nmodel.alpha = 1.5\nmodel.beta = 3\ngrid.cells = 256\n\
                    init.u.mass = 8\ninit.u.width = 0.05\nrun.t_end = 100\n";
const RUN3: &str = "model.chi = 5\nmodel.alpha = 2\nmodel.beta = 2\ngrid.dim = 2\ngrid.cells = 64\n\
                    init.u.mass = 8\ninit.u.width = 0.1\nrun.t_end = 50\n";

/// One of the long runs of criteria 1–3 together with per-step audits.
struct Witness {
    config: RunConfig,
    result: RunResult,
    series: ObservableSeries,
    elapsed: Duration,
    /// max over accepted steps of `|Δ∫u − dt ∫source| / ∫u_n`
    worst_defect: f64,
    min_u: f64,
    min_v: f64,
}

fn simulate(text: &str) -> Witness {
    let config = RunConfig::parse(text).expect("acceptance config");
    let start = Instant::now();
    let initial = config.initial_state().expect("initial data");
    let mut stepper = Stepper::new(&config.grid, config.params, config.stepper).expect("stepper");
    let mut recorder = Recorder::new(&config.k_list, config.sample_interval);
    let (mut worst_defect, mut min_u, mut min_v) = (0.0f64, initial.u.min(), initial.v.min());
    let result = stepper
        .run_with(initial, config.t_end, &mut recorder, |state, outcome| {
            if outcome.status.accepted() {
                let d = &outcome.diagnostics;
                worst_defect = worst_defect.max(d.mass_defect() / d.mass_before);
                min_u = min_u.min(state.u.min());
                min_v = min_v.min(state.v.min());
            }
        })
        .expect("run");
    let elapsed = start.elapsed();
    Witness { config, result, series: recorder.into_series(), elapsed, worst_defect, min_u, min_v }
}

fn witness(i: usize) -> &'static Witness {
    static CELLS: [OnceLock<Witness>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    CELLS[i - 1].get_or_init(|| simulate([RUN1, RUN2, RUN3][i - 1]))
}

fn plateau_verdicts(w: &Witness) -> (bool, String) {
    let summary = summarize(
        &w.series,
        &SummaryOptions { y1: None, linf_threshold: w.config.stepper.blowup_linf_threshold },
    );
    let mut names = vec!["linf_u".to_string()];
    names.extend(w.config.k_list.iter().map(|&k| k_label(k)));
    let mut ok = w.result.termination == Termination::ReachedTEnd && summary.linf_bounded_below_threshold;
    let mut detail = format!("termination={}", w.result.termination.as_str());
    for name in names {
        let c = summary.column(&name).expect("column");
        ok &= c.plateau;
        detail.push_str(&format!(", {name} max={:.4e} plateau={}", c.max, c.plateau));
    }
    (ok, detail)
}

#[test]
fn criterion_01_mass_envelope() {
    let w = witness(1);
    let bound = 4.0 * (1.0 + 1e-6);
    let max_mass = w.series.rows.iter().map(|r| r.mass).fold(0.0, f64::max);
    let y1 = 1.0;
    let falls = w.series.rows.iter().find(|r| r.mass < 1.1 * y1).map(|r| r.t);
    let reached = w.result.termination == Termination::ReachedTEnd && w.result.state.t == 50.0;
    let fast = w.elapsed <= Duration::from_secs(60);
    verdict(
        1,
        "mass envelope",
        reached && max_mass <= bound && falls.is_some() && fast,
        &format!("max ∫u = {max_mass:.12}, first t with ∫u < 1.1 y1: {falls:?}, runtime {:.2?}", w.elapsed),
    );
}

#[test]
fn criterion_02_subquadratic_boundedness() {
    let w = witness(2);
    let (ok, detail) = plateau_verdicts(w);
    let fast = w.elapsed <= Duration::from_secs(300);
    verdict(2, "subquadratic boundedness", ok && fast, &format!("{detail}, runtime {:.2?}", w.elapsed));
}

#[test]
fn criterion_03_superquadratic_boundedness() {
    let w = witness(3);
    let (ok, detail) = plateau_verdicts(w);
    let fast = w.elapsed <= Duration::from_secs(600);
    verdict(3, "superquadratic boundedness", ok && fast, &format!("{detail}, runtime {:.2?}", w.elapsed));
}

fn equilibrium_drift(grid: &Grid, params: ModelParams) -> f64 {
    let ustar = params.homogeneous_equilibrium(grid.measure()).unwrap();
    let mut stepper = Stepper::new(grid, params, StepperConfig::default()).unwrap();
    let mut state = State::new(grid.field(ustar), grid.field(ustar));
    let k_list = [2.0, 4.0, 8.0];
    let obs = |s: &State| {
        let row = ks_nonlocal::observables::record(s, grid, &params, &k_list, 0).unwrap();
        let mut v = vec![row.mass, row.int_u_beta, row.linf_u, row.linf_v];
        v.extend(row.int_u_k);
        v
    };
    let reference = obs(&state);
    let mut drift = 0.0f64;
    for _ in 0..1000 {
        let (next, outcome) = stepper.step(&state);
        assert!(outcome.status.accepted());
        state = next;
        for (a, b) in obs(&state).iter().zip(&reference) {
            drift = drift.max((a - b).abs() / b.abs());
        }
    }
    drift
}

#[test]
fn criterion_04_steady_state_preservation() {
    let p1 = ModelParams::new(5.0, 1.0, 1.0, 1.5, 3.0, Tau::Parabolic).unwrap();
    let p2 = ModelParams::new(5.0, 2.0, 0.5, 2.0, 2.0, Tau::Parabolic).unwrap();
    let d1 = equilibrium_drift(&Grid::line(2.0, 256).unwrap(), p1);
    let d2 = equilibrium_drift(&Grid::rect(1.0, 1.5, 32, 48).unwrap(), p2);
    verdict(
        4,
        "steady-state preservation",
        d1 < 1e-9 && d2 < 1e-9,
        &format!("max relative drift over 1000 steps: 1D {d1:.2e}, 2D {d2:.2e}"),
    );
}

fn conservation_defect(grid: &Grid, u0: ks_nonlocal::Field) -> f64 {
    let params = ModelParams::degenerate(2.0, 0.0, 0.0, 1.5, 3.0, Tau::Parabolic).unwrap();
    let mut stepper = Stepper::new(grid, params, StepperConfig::default()).unwrap();
    let v0 = grid.field_from_fn(|x, y| 1.0 + 0.5 * (3.0 * x).cos() * (2.0 * y).cos());
    let mut state = State::new(u0, v0);
    let m0 = integrate(&state.u, grid).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (next, outcome) = stepper.step(&state);
        assert!(outcome.status.accepted(), "{outcome:?}");
        state = next;
        worst = worst.max((integrate(&state.u, grid).unwrap() - m0).abs() / m0);
    }
    worst
}

#[test]
fn criterion_05_conservation_degeneration() {
    let g1 = Grid::line(1.0, 128).unwrap();
    let u1 = ks_nonlocal::init::gaussian_bump(&g1, 3.0, 0.08, Some(&[0.3])).unwrap();
    let g2 = Grid::rect(1.0, 1.0, 24, 24).unwrap();
    let u2 = ks_nonlocal::init::gaussian_bump(&g2, 3.0, 0.15, Some(&[0.4, 0.6])).unwrap();
    let d1 = conservation_defect(&g1, u1);
    let d2 = conservation_defect(&g2, u2);
    verdict(
        5,
        "conservation degeneration",
        d1 < 1e-8 && d2 < 1e-8,
        &format!("max relative mass change over 1e4 steps: 1D {d1:.2e}, 2D {d2:.2e}"),
    );
}

#[test]
fn criterion_06_discrete_mass_identity() {
    let mut ok = true;
    let mut parts = Vec::new();
    for i in 1..=3 {
        let w = witness(i);
        let limit = 10.0 * w.config.stepper.linear_tol;
        ok &= w.worst_defect <= limit && w.result.audit.accepted_steps > 0;
        parts.push(format!("run {i}: {:.2e} over {} steps", w.worst_defect, w.result.audit.accepted_steps));
    }
    verdict(6, "discrete mass identity", ok, &format!("max |Δ∫u − dt∫source|/∫u, limit 1e-9; {}", parts.join("; ")));
}

#[test]
fn criterion_07_mms_convergence() {
    let params = default_mms_params();
    let t_end = 0.1;
    let spatial_1d = {
        let case = build_mms_case(params, &Grid::line(1.0, 16).unwrap());
        convergence_study(&case, &spatial_levels(1.0, 16, 4, 0.25), t_end, FaceScheme::Central).unwrap()
    };
    let spatial_2d = {
        let case = build_mms_case(params, &Grid::rect(1.0, 1.0, 8, 8).unwrap());
        convergence_study(&case, &spatial_levels(1.0, 8, 3, 0.25), t_end, FaceScheme::Central).unwrap()
    };
    let temporal = {
        let case = build_mms_case(params, &Grid::line(1.0, 512).unwrap());
        convergence_study(&case, &temporal_levels(512, 0.01, 4), 0.2, FaceScheme::Central).unwrap()
    };
    let eq = {
        let grid = Grid::rect(1.0, 1.0, 16, 16).unwrap();
        let case = equilibrium_mms_case(params, &grid);
        let (eu, ev) = mms_errors(&case, Level { cells: 16, dt: 1e-3 }, t_end, FaceScheme::Central).unwrap();
        eu.max(ev)
    };
    let s = spatial_1d.min_order_u().min(spatial_1d.min_order_v());
    let s2 = spatial_2d.min_order_u().min(spatial_2d.min_order_v());
    let t = temporal.min_order_u().min(temporal.min_order_v());
    verdict(
        7,
        "MMS convergence",
        s >= 1.9 && s2 >= 1.9 && t >= 0.9 && eq <= 1e-12,
        &format!("spatial order 1D {s:.3} (4 levels), 2D {s2:.3} (3 levels), temporal {t:.3} (4 levels), equilibrium error {eq:.1e}"),
    );
}

#[test]
fn criterion_08_classifier_table() {
    use Regime::*;
    // (alpha, beta, n, expected)
    let table = [
        (1.0, 3.0, 3, SubquadraticBounded),
        (1.5, 3.0, 1, SubquadraticBounded),
        (1.5, 2.5, 3, SubquadraticBounded),
        (1.99, 1.02, 2, SubquadraticBounded),
        // alpha = 2 sits on the superquadratic side
        (2.0, 2.0, 2, SuperquadraticBounded),
        (2.5, 2.0, 2, SuperquadraticBounded),
        (2.0, 0.75, 1, SuperquadraticBounded),
        // beta = (n+4)/2 - alpha
        (1.5, 1.5, 2, Uncovered),
        (1.0, 1.5, 1, Uncovered),
        // beta = n/2
        (2.0, 1.0, 2, Uncovered),
        (2.0, 1.5, 3, Uncovered),
        // alpha = 1 + 2 beta / n
        (3.0, 2.0, 2, Uncovered),
    ];
    let wrong: Vec<String> = table
        .iter()
        .filter(|&&(a, b, n, want)| classify_exponents(a, b, n) != want)
        .map(|&(a, b, n, want)| format!("({a},{b},{n}) → {} want {want}", classify_exponents(a, b, n)))
        .collect();
    verdict(8, "classifier table", wrong.is_empty(), &format!("{} triples, mismatches: {wrong:?}", table.len()));
}

#[test]
fn criterion_09_ode_comparison_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (dt, t_end) = (2e-3, 5.0);
    let mut all_ok = true;
    let mut worst_excess = 0.0f64;
    let mut worst_ratio = 0.0f64;
    let mut measurable = 0;
    for _ in 0..100 {
        let y1: f64 = rng.gen_range(0.5..2.0);
        let y0 = rng.gen_range(0.0..3.0 * y1);
        let k = rng.gen_range(0.1..1.0);
        let p = rng.gen_range(0.0..1.0);
        let q: f64 = rng.gen_range(1.0..2.0);
        let wobble = rng.gen_range(0.0..0.9);
        let omega = rng.gen_range(0.5..5.0);
        let drain = rng.gen_range(0.0..0.5);
        // y' = k(1 + w sin ωt) y^p (y1^q − y^q) − d (y − y1)_+ ; nonpositive above y1
        let phi = move |t: f64, y: f64| {
            k * (1.0 + wobble * (omega * t).sin()) * y.powf(p) * (y1.powf(q) - y.powf(q)) - drain * (y - y1).max(0.0)
        };
        let opts = OracleOptions::default();
        let coarse = ode_comparison_oracle(phi, y0, y1, t_end, dt, &opts);
        let fine = ode_comparison_oracle(phi, y0, y1, t_end, dt / 2.0, &opts);
        let floor = 1e-13 * coarse.cap;
        // c = excess / dt must not grow when dt halves (it halves or better)
        let c_coarse = coarse.excess / dt;
        let c_fine = fine.excess / (dt / 2.0);
        let halves = fine.excess <= floor || c_fine <= 0.5 * c_coarse + floor / dt;
        let ok = coarse.violation.is_none() && coarse.excess <= dt && fine.excess <= dt / 2.0 && halves;
        all_ok &= ok;
        worst_excess = worst_excess.max(coarse.excess);
        if coarse.excess > floor {
            measurable += 1;
            worst_ratio = worst_ratio.max(c_fine / c_coarse);
        }
    }
    verdict(
        9,
        "ODE comparison oracle",
        all_ok,
        &format!("100 random rates, max excess over cap {worst_excess:.2e} at dt={dt}, {measurable} with excess above roundoff, worst c(dt/2)/c(dt) {worst_ratio:.3}"),
    );
}

#[test]
fn criterion_10_positivity() {
    let mut ok = true;
    let mut parts = Vec::new();
    for i in 1..=3 {
        let w = witness(i);
        ok &= w.min_u >= -1e-12 && w.min_v >= -1e-12;
        parts.push(format!("run {i}: min u {:.1e}, min v {:.1e}", w.min_u, w.min_v));
    }
    // oversized dt on a sharp, strongly attracted bump
    let cfg = RunConfig::parse(RUN2).unwrap();
    let mut stepper = Stepper::new(&cfg.grid, cfg.params, cfg.stepper).unwrap();
    let u = cfg.init_u.build(&cfg.grid, &cfg.params, 0).unwrap();
    let v = cfg.grid.field_from_fn(|x, _| 4.0 * (-(x - 0.5).powi(2) / 0.005).exp());
    let (next, outcome) = stepper.step_with_dt(&State::new(u, v), 0.5);
    let retried = outcome.status == StepStatus::DtReduced && outcome.diagnostics.retries > 0;
    let nonneg = next.u.min() >= -1e-12 && next.v.min() >= -1e-12;
    ok &= retried && nonneg;
    parts.push(format!(
        "dt=0.5 injection: status {:?}, {} retries, accepted dt {:.2e}, min u {:.1e}",
        outcome.status,
        outcome.diagnostics.retries,
        outcome.diagnostics.dt,
        next.u.min()
    ));
    verdict(10, "positivity", ok, &parts.join("; "));
}

#[test]
fn criterion_11_determinism() {
    let config = RunConfig::parse(RUN1).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let a = pool.install(|| config.execute().unwrap()).series.to_csv();
    let b = pool.install(|| config.execute().unwrap()).series.to_csv();
    let c = config.execute().unwrap().series.to_csv();
    verdict(
        11,
        "determinism",
        a == b && a == c,
        &format!("{} CSV bytes; single-thread repeat identical: {}, default pool identical: {}", a.len(), a == b, a == c),
    );
}
