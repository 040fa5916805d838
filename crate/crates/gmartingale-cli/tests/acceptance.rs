//! End-to-end acceptance suite. Each test checks one numbered claim and
//! prints a single pass/fail line (visible with `--nocapture`).
//!
//! Run with:
//!   cargo test --test acceptance -- --nocapture --test-threads=1

use std::process::Command;
use std::sync::Arc;

use gmartingale::driver::{GDriver, PerturbedDriver};
use gmartingale::estimates::{
    bundled_corpus, bundled_corpus_two_time, uniqueness_discrepancy, verify_apriori,
    verify_qv_sandwich, verify_compensator_sign,
};
use gmartingale::grid::SpaceGrid;
use gmartingale::nested::{nested_expectation, SurfaceStack};
use gmartingale::payoff::{parse_payoff, CylinderPayoff};
use gmartingale::represent::{
    check_a_monotone, extract_representation, path_grid_for, reconstruction_report,
    symmetric_case_check,
};
use gmartingale::simulate::{mc_expectation, sample_paths, VolatilityControl};

/// Gaussian quadrature oracle: E[f(Y)] for Y ~ N(0, sigma_sq), computed
/// by composite Simpson on [-12σ, 12σ] split at the kinks of f.
mod oracle {
    pub fn gaussian_expectation(
        f: impl Fn(f64) -> f64,
        sigma_sq: f64,
        kinks: &[f64],
    ) -> f64 {
        let sigma = sigma_sq.sqrt();
        let lo = -12.0 * sigma;
        let hi = 12.0 * sigma;
        let mut cuts = vec![lo];
        for &k in kinks {
            if k > lo && k < hi {
                cuts.push(k);
            }
        }
        cuts.push(hi);
        cuts.sort_by(f64::total_cmp);
        let pdf = |y: f64| (-y * y / (2.0 * sigma_sq)).exp()
            / (2.0 * std::f64::consts::PI * sigma_sq).sqrt();
        let mut total = 0.0;
        for w in cuts.windows(2) {
            total += simpson(|y| f(y) * pdf(y), w[0], w[1], 4000);
        }
        total
    }

    pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        let n = 2 * panels;
        let h = (b - a) / n as f64;
        let mut sum = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * f(a + i as f64 * h);
        }
        sum * h / 3.0
    }
}

fn report(n: usize, desc: &str, pass: bool, detail: String) {
    println!(
        "criterion {n}: {} - {desc} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

fn driver() -> GDriver {
    GDriver::new(4.0, 1.0).unwrap()
}

fn payoff(expr: &str, times: &[f64]) -> CylinderPayoff {
    CylinderPayoff::new(times.to_vec(), parse_payoff(expr).unwrap(), *times.last().unwrap())
        .unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gmartingale"))
}

/// Value printed by the expect command, parsed back from stdout.
fn run_expect(payoff: &str) -> f64 {
    let out = bin()
        .args([
            "expect",
            &format!("--payoff={payoff}"),
            "--times=1",
            "--sigma-bar-sq=4",
            "--sigma-low-sq=1",
            "--nx=801",
            "--x-min=-20",
            "--x-max=20",
        ])
        .output()
        .expect("running expect");
    assert!(out.status.success(), "expect failed: {out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    let tail = text.split("] = ").nth(1).expect("value in output");
    tail.split(' ').next().unwrap().parse().expect("numeric value")
}

#[test]
fn criterion_01_quadratic_expectations() {
    let up = run_expect("b1*b1");
    let lo = run_expect("-(b1*b1)");
    let pass = (up - 4.0).abs() <= 0.04 && (lo + 1.0).abs() <= 0.01;
    report(
        1,
        "quadratic payoffs match closed forms via the CLI",
        pass,
        format!("E[b1*b1] = {up}, E[-(b1*b1)] = {lo}"),
    );
}

#[test]
fn criterion_02_degenerate_driver_matches_quadrature() {
    let corpus: Vec<(&str, fn(f64) -> f64, Vec<f64>)> = vec![
        ("b1*b1", |x| x * x, vec![]),
        ("abs(b1)", |x| x.abs(), vec![0.0]),
        ("max(b1, 0)", |x| x.max(0.0), vec![0.0]),
        ("min(abs(b1), 1)", |x| x.abs().min(1.0), vec![-1.0, 0.0, 1.0]),
        ("b1", |x| x, vec![]),
        ("3", |_| 3.0, vec![]),
    ];
    let sg = SpaceGrid::new(-20.0, 20.0, 401).unwrap();
    let tol = 10.0 * sg.dx() * sg.dx() + 1e-8;
    let mut worst = 0.0f64;
    for sigma_sq in [1.0, 4.0] {
        let d = GDriver::new(sigma_sq, sigma_sq).unwrap();
        for (expr, f, kinks) in &corpus {
            let (value, _) = nested_expectation(d, &payoff(expr, &[1.0]), sg, 0.5).unwrap();
            let exact = oracle::gaussian_expectation(f, sigma_sq, kinks);
            worst = worst.max((value - exact).abs());
        }
    }
    report(
        2,
        "degenerate drivers reproduce Gaussian quadrature",
        worst <= tol,
        format!("worst |error| = {worst:.3e}, tol = {tol:.3e}"),
    );
}

/// Seeded random payoff from a small family of Lipschitz atoms with
/// dyadic coefficients (so scaling stays exact in floating point).
fn random_payoff(seed: u64, idx: u64) -> CylinderPayoff {
    let u = |slot: u64| gmartingale::rng::uniform_draw(seed, idx, slot);
    let dyadic = |slot: u64| (u(slot) * 16.0).round() / 8.0 - 1.0;
    let n_atoms = 1 + (u(0) * 3.0) as usize;
    let mut text = String::new();
    for a in 0..n_atoms {
        let c = dyadic(10 + a as u64);
        let k = dyadic(20 + a as u64);
        let atom = match (u(30 + a as u64) * 4.0) as usize {
            0 => format!("{c} * b1"),
            1 => format!("abs(b1 - {k})"),
            2 => format!("max(b1, {k})"),
            _ => format!("min(abs(b1), abs({k}))"),
        };
        if a > 0 {
            text.push_str(" + ");
        }
        text.push_str(&atom);
    }
    payoff(&text, &[1.0])
}

#[test]
fn criterion_03_sublinearity_suite() {
    let d = driver();
    let sg = SpaceGrid::new(-10.0, 10.0, 101).unwrap();
    let mut worst_subadd = f64::NEG_INFINITY;
    let mut all_exact = true;
    for i in 0..200u64 {
        let phi = random_payoff(31, i);
        let psi = random_payoff(37, i);
        let e_phi = nested_expectation(d, &phi, sg, 0.5).unwrap().0;
        let e_psi = nested_expectation(d, &psi, sg, 0.5).unwrap().0;

        // positive homogeneity, exact for powers of two
        let lambda = [0.5, 2.0, 4.0][(i % 3) as usize];
        let scaled = CylinderPayoff::new(vec![1.0], phi.expr().scaled(lambda), 1.0).unwrap();
        let e_scaled = nested_expectation(d, &scaled, sg, 0.5).unwrap().0;
        all_exact &= e_scaled == lambda * e_phi;

        // monotonicity: phi <= phi + |psi| pointwise, exact
        let abs_psi = CylinderPayoff::new(
            vec![1.0],
            gmartingale::payoff::PayoffExpr::new(gmartingale::payoff::Expr::Call(
                gmartingale::payoff::Func::Abs,
                vec![psi.expr().expr().clone()],
            ))
            .unwrap(),
            1.0,
        )
        .unwrap();
        let upper = CylinderPayoff::new(vec![1.0], phi.expr().sum(abs_psi.expr()), 1.0).unwrap();
        let e_upper = nested_expectation(d, &upper, sg, 0.5).unwrap().0;
        all_exact &= e_phi <= e_upper;

        // subadditivity up to rounding
        let both = CylinderPayoff::new(vec![1.0], phi.expr().sum(psi.expr()), 1.0).unwrap();
        let e_both = nested_expectation(d, &both, sg, 0.5).unwrap().0;
        worst_subadd = worst_subadd.max(e_both - (e_phi + e_psi));
    }
    let pass = all_exact && worst_subadd <= 1e-9;
    report(
        3,
        "sublinearity over 200 random payoff pairs",
        pass,
        format!("exact checks: {all_exact}, worst subadditivity violation = {worst_subadd:.3e}"),
    );
}

#[test]
fn criterion_04_apriori_estimate() {
    let d = driver();
    let pd = PerturbedDriver::default_for(d).unwrap();
    let mut all_pass = true;
    let mut quadratic_margin = f64::NAN;
    for (expr, times) in bundled_corpus().into_iter().chain(bundled_corpus_two_time()) {
        let cp = payoff(expr, &times);
        let horizon = *times.last().unwrap();
        let sg = if times.len() == 1 {
            SpaceGrid::new(-20.0, 20.0, 801).unwrap()
        } else {
            SpaceGrid::new(-12.0 * horizon.sqrt(), 12.0 * horizon.sqrt(), 121).unwrap()
        };
        let (_, stack) = nested_expectation(d, &cp, sg, 0.5).unwrap();
        let r = verify_apriori(pd, &cp, &stack, sg, 0.5, 1000, 400, 11).unwrap();
        all_pass &= r.pass;
        if expr == "b1*b1" {
            quadratic_margin = r.margin;
        }
    }
    let margin_ok = (quadratic_margin - 1.5).abs() <= 0.075;
    report(
        4,
        "a priori eta bound over the corpus",
        all_pass && margin_ok,
        format!("all reports pass: {all_pass}, quadratic margin = {quadratic_margin:.4}"),
    );
}

#[test]
fn criterion_05_pathwise_relations() {
    let d = driver();
    let cp = payoff("b1*b1", &[1.0]);
    let sg = SpaceGrid::new(-20.0, 20.0, 401).unwrap();
    let (_, stack) = nested_expectation(d, &cp, sg, 0.5).unwrap();
    let stack = Arc::new(stack);
    let tg = gmartingale::grid::TimeGrid::new(0.0, 1.0, 1000).unwrap();
    let n_paths = 10_000;
    let mut zeta: Vec<f64> = (0..1000)
        .map(|k| 2.0 * gmartingale::rng::uniform_draw(5, 0xABCD, k) - 1.0)
        .collect();
    zeta[0] = 1.0;
    let controls = [
        VolatilityControl::Constant(2.0),
        VolatilityControl::Piecewise(vec![(0.0, 3.7), (0.25, 1.2), (0.8, 4.0)]),
        VolatilityControl::Feedback(stack),
    ];
    let mut all_pass = true;
    let mut bangbang_dev = 0.0f64;
    for control in &controls {
        let bundle = sample_paths(d, control, tg, n_paths, 13).unwrap();
        let bundles = std::slice::from_ref(&bundle);
        for z in [&vec![1.0; 1000], &zeta] {
            for r in verify_qv_sandwich(d, bundles, z).unwrap() {
                all_pass &= r.pass;
            }
            for r in verify_compensator_sign(d, bundles, z, n_paths, 13).unwrap() {
                all_pass &= r.pass;
                if r.name == "compensator_bangbang" {
                    bangbang_dev = bangbang_dev.max(r.lhs - 3.0 * r.mc_stderr);
                }
            }
        }
    }
    report(
        5,
        "pathwise quadratic-variation relations at zero tolerance",
        all_pass && bangbang_dev <= 0.0,
        format!("all exact checks pass: {all_pass}, bang-bang excess = {bangbang_dev:.3e}"),
    );
}

fn monotone_worst(expr: &str, nx: usize, n_paths: usize) -> (bool, f64, f64) {
    let d = driver();
    let cp = payoff(expr, &[1.0]);
    let sg = SpaceGrid::new(-20.0, 20.0, nx).unwrap();
    let (_, stack) = nested_expectation(d, &cp, sg, 0.5).unwrap();
    let stack = Arc::new(stack);
    let tg = path_grid_for(&cp, 1.0, 400).unwrap();
    let bundle = sample_paths(d, &VolatilityControl::Feedback(stack.clone()), tg, n_paths, 23)
        .unwrap();
    let rs = extract_representation(&stack, &cp, &bundle).unwrap();
    let max_eta = 0.5
        * stack
            .intervals
            .iter()
            .flat_map(|iv| iv.slices.iter())
            .map(|s| s.max_abs_dxx())
            .fold(0.0f64, f64::max);
    let tol = 2.0 * sg.dx() * max_eta;
    let mono = check_a_monotone(&rs, tol);
    (mono.pass, (-mono.worst_da).max(0.0), tol)
}

#[test]
fn criterion_06_a_monotonicity() {
    let mut all_pass = true;
    for (expr, _) in bundled_corpus() {
        let (pass, _, _) = monotone_worst(expr, 401, 500);
        all_pass &= pass;
    }
    let (_, worst_coarse, _) = monotone_worst("abs(b1)", 201, 500);
    let (_, worst_fine, _) = monotone_worst("abs(b1)", 401, 500);
    let halves = worst_fine <= 0.5 * worst_coarse;
    report(
        6,
        "A increments nondecreasing within grid tolerance",
        all_pass && halves,
        format!(
            "corpus pass: {all_pass}, worst violation {worst_coarse:.3e} -> {worst_fine:.3e}"
        ),
    );
}

#[test]
fn criterion_07_symmetric_case() {
    let d = driver();
    let mut pass = true;
    let mut detail = String::new();
    for (expr, times) in [("b1", vec![1.0]), ("b1 + 2*b2", vec![1.0, 2.0])] {
        let horizon: f64 = *times.last().unwrap();
        let nx = if times.len() == 1 { 401 } else { 121 };
        let sg = SpaceGrid::new(-12.0 * horizon.sqrt(), 12.0 * horizon.sqrt(), nx).unwrap();
        let r = symmetric_case_check(d, &payoff(expr, &times), sg, 0.5, 500, 400, 29, 1e-8)
            .unwrap();
        pass &= r.is_symmetric && r.eta_l1 <= 1e-6;
        detail.push_str(&format!("[{expr}: gap {:.2e}, eta {:.2e}] ", r.gap, r.eta_l1));
    }
    report(7, "symmetric payoffs have vanishing eta", pass, detail);
}

fn residual_l2(expr: &str, nx: usize, steps: usize) -> f64 {
    let d = driver();
    let cp = payoff(expr, &[1.0]);
    let sg = SpaceGrid::new(-16.0, 16.0, nx).unwrap();
    let (_, stack) = nested_expectation(d, &cp, sg, 0.5).unwrap();
    let tg = path_grid_for(&cp, 1.0, steps).unwrap();
    let bundle = sample_paths(d, &VolatilityControl::Constant(4.0), tg, 1000, 41).unwrap();
    let rs = extract_representation(&stack, &cp, &bundle).unwrap();
    reconstruction_report(&rs).l2
}

#[test]
fn criterion_08_residual_convergence() {
    let mut decreasing = true;
    let mut detail = String::new();
    for expr in ["b1*b1", "abs(b1)"] {
        let levels = [
            residual_l2(expr, 129, 100),
            residual_l2(expr, 257, 400),
            residual_l2(expr, 513, 1600),
        ];
        decreasing &= levels[1] < levels[0] && levels[2] < levels[1];
        detail.push_str(&format!("[{expr}: {:.2e} {:.2e} {:.2e}] ", levels[0], levels[1], levels[2]));
    }
    // dyadic grid: linear payoffs reconstruct with residual exactly zero
    let mut linear_exact = true;
    for expr in ["b1", "2*b1"] {
        let l2 = residual_l2(expr, 257, 256);
        linear_exact &= l2 == 0.0;
        detail.push_str(&format!("[{expr}: {l2:e}] "));
    }
    report(
        8,
        "reconstruction residual shrinks under refinement, exactly zero for linear",
        decreasing && linear_exact,
        detail,
    );
}

#[test]
fn criterion_09_mc_pde_consistency() {
    let d = driver();
    let mut consistent = true;
    let mut monotone_in_family = true;
    let mut detail = String::new();
    for (expr, times) in bundled_corpus() {
        let cp = payoff(expr, &times);
        let sg = SpaceGrid::new(-20.0, 20.0, 401).unwrap();
        let (pde, stack) = nested_expectation(d, &cp, sg, 0.5).unwrap();
        let stack = Arc::new(stack);
        let tg = path_grid_for(&cp, 1.0, 500).unwrap();
        let family = [
            VolatilityControl::Constant(1.0),
            VolatilityControl::Constant(4.0),
            VolatilityControl::Feedback(stack.clone()),
        ];
        let mc = mc_expectation(d, &cp, &family, tg, 4000, 47).unwrap();
        let feedback = mc.per_control.last().unwrap();
        let tol = (0.02 * pde.abs()).max(3.0 * feedback.stderr);
        consistent &= (feedback.mean - pde).abs() <= tol;
        // growing the control family can only raise the sup estimate
        let mc1 = mc_expectation(d, &cp, &family[..1], tg, 4000, 47).unwrap();
        let mc2 = mc_expectation(d, &cp, &family[..2], tg, 4000, 47).unwrap();
        monotone_in_family &= mc1.estimate <= mc2.estimate && mc2.estimate <= mc.estimate;
        detail.push_str(&format!("[{expr}: pde {pde:.3}, mc {:.3}] ", feedback.mean));
    }
    report(
        9,
        "feedback-control Monte Carlo agrees with the PDE value",
        consistent && monotone_in_family,
        detail,
    );
}

fn stack_for(nx: usize) -> (SurfaceStack, SpaceGrid) {
    let cp = payoff("b1*b1", &[1.0]);
    let sg = SpaceGrid::new(-8.0, 8.0, nx).unwrap();
    let (_, stack) = nested_expectation(driver(), &cp, sg, 0.5).unwrap();
    (stack, sg)
}

#[test]
fn criterion_10_uniqueness_regression() {
    let d = driver();
    let pd = PerturbedDriver::default_for(d).unwrap();
    let cp = payoff("b1*b1", &[1.0]);
    let (s101, sg101) = stack_for(101);
    let (s201, _) = stack_for(201);
    let (s401, _) = stack_for(401);
    let d_coarse = uniqueness_discrepancy(pd, &s101, &s201, &cp, 500, 400, 53, 0.0)
        .unwrap()
        .lhs;
    let d_fine = uniqueness_discrepancy(pd, &s201, &s401, &cp, 500, 400, 53, 0.0)
        .unwrap()
        .lhs;
    let bounded = d_coarse <= sg101.dx();
    let decreasing = d_fine < d_coarse;
    let corrupted = uniqueness_discrepancy(pd, &s201, &s201, &cp, 500, 400, 53, 0.1).unwrap();
    let negative_ok =
        !corrupted.pass && (corrupted.lhs - 0.1).abs() <= 0.005;
    report(
        10,
        "eta discrepancy shrinks under refinement; corrupted control fails",
        bounded && decreasing && negative_ok,
        format!(
            "d(N,2N) = {d_coarse:.3e} -> {d_fine:.3e}, corrupted lhs = {:.4}",
            corrupted.lhs
        ),
    );
}

#[test]
fn criterion_11_gnormal_moments_vs_quadrature() {
    let mut worst = 0.0f64;
    for d in [GDriver::new(4.0, 1.0).unwrap(), GDriver::new(1.0, 1.0).unwrap()] {
        for a in [-2.0, 1.0] {
            for p in [1.0, 2.0, 3.0, 4.0] {
                let closed = d.gnormal_abs_moment(a, p).unwrap();
                let sigma_sq = 2.0 * d.g(a * a);
                let exact =
                    oracle::gaussian_expectation(|y| y.abs().powf(p), sigma_sq, &[0.0]);
                worst = worst.max((closed - exact).abs() / exact.abs());
            }
        }
    }
    report(
        11,
        "closed-form absolute moments match quadrature",
        worst <= 1e-10,
        format!("worst relative error = {worst:.3e}"),
    );
}

#[test]
fn criterion_12_verify_is_deterministic() {
    let run = |workers: &str| -> (bool, String) {
        let out = bin()
            .args([
                "verify",
                "--paths=300",
                "--nt=200",
                "--seed=2024",
                &format!("--workers={workers}"),
            ])
            .output()
            .expect("running verify");
        let text = String::from_utf8(out.stdout).unwrap();
        // drop the header line: it carries the timestamp
        let body = text.splitn(2, '\n').nth(1).unwrap_or("").to_string();
        (out.status.success(), body)
    };
    let (ok1, body1) = run("1");
    let (ok2, body2) = run("4");
    let (ok3, body3) = run("2");
    let pass = ok1 && ok2 && ok3 && body1 == body2 && body1 == body3;
    report(
        12,
        "verification output is byte-identical across worker counts",
        pass,
        format!(
            "exits ok: {}, bodies identical: {}",
            ok1 && ok2 && ok3,
            body1 == body2 && body1 == body3
        ),
    );
}
