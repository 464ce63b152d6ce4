//! Acceptance criteria. Runs as a plain binary (`harness = false`) so the
//! report prints one line per criterion, in order:
//!
//! ```text
//! cargo test -p dln --test acceptance
//! ```
//!
//! Exits non-zero if any criterion fails.

use std::time::Instant;

use dln::battery::max_entrywise_relative;
use dln::chain::{balancedness_residual, moments, ridge_norm_sq, Chain};
use dln::fiber::{fiber_metric, ridge_differential, ridge_gradient_coords, tangent_from_coords, TangentCoords};
use dln::flows::{
    learning_flow, ness_flow, ou_noise, regularized_flow, regularizing_flow, IntegratorSpec, LossSpec, StochasticSpec,
};
use dln::linalg::{self, fro, singular_values, Mat};
use dln::realization::{
    balance_realization, probe_points, similarity_action, transfer_drift, BalanceOptions, BalanceStatus, StateSpace,
};
use dln::variational::{minimize_ridge_on_fiber, minimize_schatten_on_fiber, MinimizeOptions};
use dln::{Complex64, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    summary: String,
    notes: Vec<String>,
}

impl Outcome {
    fn new(passed: bool, summary: String) -> Self {
        Outcome {
            passed,
            summary,
            notes: Vec::new(),
        }
    }

    fn note(mut self, s: String) -> Self {
        self.notes.push(s);
        self
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random unbalanced chain with well-conditioned layers `I + 0.5 Gaussian`,
/// so the cubic Ness velocity stays non-stiff at the steps used below.
fn unit_chain<T: Scalar>(depth: usize, d: usize, r: &mut ChaCha8Rng) -> Chain<T> {
    let layers = (0..depth)
        .map(|_| Mat::<T>::identity(d, d) + linalg::random_matrix::<T, _>(d, r) * T::from_real(0.5))
        .collect();
    Chain::new(layers).unwrap()
}

// 1. G(t) = G(0) e^{-4t} under the regularizing flow.
fn decay_error<T: Scalar>(w: &Chain<T>, dt: f64) -> f64 {
    let r = regularizing_flow(w, &IntegratorSpec::rk4(dt, 1.0).with_stride(usize::MAX)).unwrap();
    max_entrywise_relative(&moments(&r.final_chain), &moments(w).scaled((-4.0f64).exp()))
}

fn criterion_1() -> Outcome {
    const TOL: f64 = 1e-6;
    const RATIO: (f64, f64) = (14.0, 18.0);
    let widths = [1, 2, 3, 4];
    let depths = [2, 3, 4, 6];
    let mut r = rng(101);
    let mut worst = 0.0f64;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let mut complex = 0;
    for i in 0..20 {
        let d = widths[i % 4];
        let n = depths[(i / 4 + i) % 4];
        let (e_fine, e_coarse) = if (i / 2) % 2 == 1 {
            complex += 1;
            let w = Chain::<Complex64>::random(n, d, &mut r).unwrap();
            (decay_error(&w, 1e-3), decay_error(&w, 2e-3))
        } else {
            let w = Chain::<f64>::random(n, d, &mut r).unwrap();
            (decay_error(&w, 1e-3), decay_error(&w, 2e-3))
        };
        worst = worst.max(e_fine);
        let ratio = e_coarse / e_fine;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    Outcome::new(
        worst <= TOL && lo >= RATIO.0 && hi <= RATIO.1,
        format!(
            "exact moment decay: 20 starts ({complex} complex), max entrywise rel err {worst:.2e} at t=1, dt=1e-3 (tol {TOL:.0e}); \
             error ratio dt=2e-3 vs 1e-3 in [{lo:.2}, {hi:.2}] (window [{}, {}])",
            RATIO.0, RATIO.1
        ),
    )
}

// 2. Ridge minimum equals N sum sigma^{2/N}, attained on the balanced orbit.
fn criterion_2() -> Outcome {
    let mut r = rng(202);
    let (mut gap, mut bal, mut spread) = (0.0f64, 0.0f64, 0.0f64);
    let mut all_converged = true;
    for i in 0..10 {
        let d = 1 + i % 3;
        let n = 2 + (i / 3) % 3;
        let opts = MinimizeOptions::default().with_restarts(4, 1000 + i as u64);
        let rep = if i % 2 == 0 {
            let x: Mat<f64> = linalg::random_matrix(d, &mut r);
            minimize_ridge_on_fiber(&x, n, &opts).unwrap().report
        } else {
            let x: Mat<Complex64> = linalg::random_matrix(d, &mut r);
            minimize_ridge_on_fiber(&x, n, &opts).unwrap().report
        };
        gap = gap.max(rep.relative_gap);
        bal = bal.max(rep.balance_residual);
        spread = spread.max(rep.restart_spread);
        all_converged &= rep.converged;
    }
    Outcome::new(
        gap <= 1e-6 && bal <= 1e-6 && spread <= 1e-7,
        format!(
            "minimum norm is balanced: 10 X, d<=3, N<=4, 4 restarts each; max rel gap to N sum s^(2/N) {gap:.2e} (tol 1e-6), \
             max balance residual {bal:.2e} (tol 1e-6), max restart spread {spread:.2e} (tol 1e-7), all converged {all_converged}"
        ),
    )
}

// 3. X = 4, d = 1, N = 2: minimizers (+-2, +-2), value 8.
fn criterion_3() -> Outcome {
    let x = Mat::<f64>::from_element(1, 1, 4.0);
    let res = minimize_ridge_on_fiber(&x, 2, &MinimizeOptions::default().with_restarts(64, 3)).unwrap();
    let mut worst = (res.objective() - 8.0).abs();
    let (mut plus, mut minus) = (0, 0);
    for w in &res.restart_minimizers {
        let (a, b) = (w.layer(2)[(0, 0)], w.layer(1)[(0, 0)]);
        worst = worst.max((a.abs() - 2.0).abs()).max((b.abs() - 2.0).abs());
        for v in res.report.per_restart.iter().map(|p| (p.objective - 8.0).abs()) {
            worst = worst.max(v);
        }
        if a > 0.0 {
            plus += 1;
        } else {
            minus += 1;
        }
    }
    Outcome::new(
        worst <= 1e-8,
        format!(
            "scalar fiber x=4: 64 restarts, max deviation from |w_k| = 2 and value 8: {worst:.2e} (tol 1e-8); \
             branches found: (+2,+2) x{plus}, (-2,-2) x{minus}"
        ),
    )
}

// 4. <grad, v_a> = dR(a) and finite differences of ||w||^2.
fn gradient_errors<T: Scalar>(w: &Chain<T>, a: &TangentCoords<T>) -> (f64, f64) {
    let b = ridge_gradient_coords(w).unwrap();
    let lhs = fiber_metric(w, &b, a).unwrap();
    let rhs = ridge_differential(w, a).unwrap();
    let metric_err = (lhs - rhs).abs() / rhs.abs().max(1.0);
    let v = tangent_from_coords(w, a).unwrap().into_ambient();
    let eps = 1e-6;
    let mut plus = w.clone();
    plus.axpy(eps, &v);
    let mut minus = w.clone();
    minus.axpy(-eps, &v);
    let fd = (ridge_norm_sq(&plus) - ridge_norm_sq(&minus)) / (2.0 * eps);
    let fd_err = (fd - rhs).abs() / rhs.abs().max(1.0);
    (metric_err, fd_err)
}

fn criterion_4() -> Outcome {
    let mut r = rng(404);
    let (mut metric, mut fd) = (0.0f64, 0.0f64);
    for i in 0..20 {
        let d = 1 + i % 4;
        let n = 2 + i % 5;
        let (m, f) = if i % 2 == 0 {
            let w = Chain::<f64>::random(n, d, &mut r).unwrap();
            let a = TangentCoords::random(n, d, &mut r);
            gradient_errors(&w, &a)
        } else {
            let w = Chain::<Complex64>::random(n, d, &mut r).unwrap();
            let a = TangentCoords::random(n, d, &mut r);
            gradient_errors(&w, &a)
        };
        metric = metric.max(m);
        fd = fd.max(f);
    }
    Outcome::new(
        metric <= 1e-8 && fd <= 1e-4,
        format!(
            "gradient correctness: 20 (w, a), max |g(b, a) - dR(a)| rel {metric:.2e} (tol 1e-8), \
             max central-difference rel err at eps=1e-6 {fd:.2e} (tol 1e-4)"
        ),
    )
}

// 5. Learning flow conserves G.
fn conservation_drift<T: Scalar>(w: Chain<T>, y: Mat<T>) -> f64 {
    let loss = LossSpec::quadratic(y).unwrap();
    let g0 = moments(&w);
    let mut cur = w;
    let mut worst = 0.0f64;
    // 200 segments of 10 steps: G(t) is inspected every 0.01 on [0, 2].
    for _ in 0..200 {
        cur = learning_flow(&cur, &loss, &IntegratorSpec::rk4(1e-3, 0.01).with_stride(usize::MAX))
            .unwrap()
            .final_chain;
        worst = worst.max(moments(&cur).distance(&g0));
    }
    worst
}

fn criterion_5() -> Outcome {
    let mut r = rng(505);
    let mut worst = 0.0f64;
    for (i, (d, n)) in [(2, 3), (1, 4), (3, 2), (2, 4), (3, 3), (4, 3)].into_iter().enumerate() {
        let drift = if i % 2 == 0 {
            let w = unit_chain::<f64>(n, d, &mut r);
            conservation_drift(w, linalg::random_matrix(d, &mut r))
        } else {
            let w = unit_chain::<Complex64>(n, d, &mut r);
            conservation_drift(w, linalg::random_matrix(d, &mut r))
        };
        worst = worst.max(drift);
    }
    Outcome::new(
        worst <= 1e-7,
        format!("learning-flow conservation: 6 instances, quadratic loss, max_t ||G(t) - G(0)|| on [0, 2] = {worst:.2e} (tol 1e-7)"),
    )
}

// 6. Ness dissipation: d/dt ||G||^2 against -4 ||w_G||^2.
struct Dissipation {
    rel_err_4: f64,
    rel_err_8: f64,
    ratio: (f64, f64),
    monotone: bool,
}

fn ness_dissipation<T: Scalar>(w: &Chain<T>) -> Dissipation {
    let dt = 1e-4;
    let r = ness_flow(w, &IntegratorSpec::rk4(dt, 0.2)).unwrap();
    let s = &r.trace.samples;
    let g2: Vec<f64> = s.iter().map(|x| x.g_fro * x.g_fro).collect();
    let mut out = Dissipation {
        rel_err_4: 0.0,
        rel_err_8: 0.0,
        ratio: (f64::INFINITY, 0.0),
        monotone: g2.windows(2).all(|p| p[1] <= p[0]),
    };
    for i in (1..s.len() - 1).step_by(50) {
        let deriv = (g2[i + 1] - g2[i - 1]) / (s[i + 1].t - s[i - 1].t);
        let speed = s[i].ness_speed_sq.expect("ness trace records ||w_G||^2");
        out.rel_err_4 = out.rel_err_4.max((deriv + 4.0 * speed).abs() / (4.0 * speed));
        out.rel_err_8 = out.rel_err_8.max((deriv + 8.0 * speed).abs() / (8.0 * speed));
        let q = -deriv / speed;
        out.ratio = (out.ratio.0.min(q), out.ratio.1.max(q));
    }
    out
}

fn criterion_6() -> Outcome {
    let mut r = rng(606);
    let mut runs = Vec::new();
    for (i, (d, n)) in [(1, 2), (2, 3), (3, 4), (2, 5)].into_iter().enumerate() {
        runs.push(if i % 2 == 0 {
            ness_dissipation(&unit_chain::<f64>(n, d, &mut r))
        } else {
            ness_dissipation(&unit_chain::<Complex64>(n, d, &mut r))
        });
    }
    // The scalar example w = (2, 1): G = -3, w_G = (6, -3).
    let scalar = ness_dissipation(&Chain::<f64>::scalars(&[2.0, 1.0]).unwrap().scaled(0.5));
    runs.push(scalar);
    let err4 = runs.iter().map(|d| d.rel_err_4).fold(0.0, f64::max);
    let err8 = runs.iter().map(|d| d.rel_err_8).fold(0.0, f64::max);
    let lo = runs.iter().map(|d| d.ratio.0).fold(f64::INFINITY, f64::min);
    let hi = runs.iter().map(|d| d.ratio.1).fold(0.0, f64::max);
    let monotone = runs.iter().all(|d| d.monotone);
    Outcome::new(
        err4 <= 1e-4 && monotone,
        format!(
            "Ness dissipation: 5 trajectories, dt=1e-4; max rel err of d/dt||G||^2 vs -4||w_G||^2: {err4:.2e} (tol 1e-4); \
             ||G||^2 non-increasing: {monotone}"
        ),
    )
    .note(format!(
        "measured -d/dt||G||^2 / ||w_G||^2 in [{lo:.6}, {hi:.6}]; against -8||w_G||^2 the max rel err is {err8:.2e}. \
         With velocity -2 w_G, d/dt||G||^2 = 2<G, -2(H(G) + H(G)*)> = -8 Re sum Tr(G* H(G)) = -8||w_G||^2, \
         so the -4 coefficient cannot hold (see decisions ledger)"
    ))
}

// 7. Regularized flow: dG/dt = -2 kappa G.
fn criterion_7() -> Outcome {
    let mut r = rng(707);
    let w = Chain::<Complex64>::random(3, 2, &mut r).unwrap();
    let run = regularized_flow(&w, &LossSpec::zero(), 1.0, &IntegratorSpec::rk4(1e-3, 1.0)).unwrap();
    let expected = moments(&w).scaled((-2.0f64).exp());
    let closed = moments(&run.final_chain).distance(&expected) / expected.norm();

    let kappa = 0.5;
    let mut slopes = Vec::new();
    for seed in 0..3 {
        let mut r = rng(7070 + seed);
        let w = unit_chain::<f64>(3, 2, &mut r);
        let loss = LossSpec::quadratic(linalg::random_matrix(2, &mut r)).unwrap();
        let run = regularized_flow(&w, &loss, kappa, &IntegratorSpec::rk4(1e-3, 4.0).with_stride(10)).unwrap();
        slopes.push(run.trace.fit_g_decay().unwrap().slope);
    }
    let slope_err = slopes
        .iter()
        .map(|s| (s + 2.0 * kappa).abs() / (2.0 * kappa))
        .fold(0.0, f64::max);
    Outcome::new(
        closed <= 1e-8 && slope_err <= 0.01,
        format!(
            "regularized-flow rate: E=0, kappa=1: ||G(1) - G(0)e^-2|| / ||G(0)e^-2|| = {closed:.2e} (tol 1e-8); \
             quadratic loss, kappa=0.5: fitted ||G|| slopes {:?} vs -2 kappa = -1 (max rel dev {slope_err:.2e}, tol 1e-2)",
            slopes.iter().map(|s| format!("{s:.6}")).collect::<Vec<_>>()
        ),
    )
    .note(format!(
        "FLAGGED, not asserted: a decay rate equal to kappa would give slope {:.2}; the measured slope is -2 kappa",
        -kappa
    ))
}

// 8. Regularizing and Ness flows reach the same balanced orbit.
fn limit_points<T: Scalar>(w: &Chain<T>) -> (f64, f64, f64, f64) {
    let reg = regularizing_flow(w, &IntegratorSpec::rk4(1e-3, 6.0).with_stride(1000)).unwrap();
    let ness = ness_flow(w, &IntegratorSpec::rk4(1e-3, 40.0).with_stride(1000)).unwrap();
    let (a, b) = (&reg.final_chain, &ness.final_chain);
    let sv_err = a
        .layers()
        .iter()
        .zip(b.layers())
        .flat_map(|(x, y)| {
            singular_values(x)
                .into_iter()
                .zip(singular_values(y))
                .map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max);
    let x_err = fro(&(dln::end_to_end(a) - dln::end_to_end(b))) / fro(&dln::end_to_end(a));
    (
        sv_err,
        x_err,
        balancedness_residual(a),
        balancedness_residual(b),
    )
}

fn criterion_8() -> Outcome {
    let mut r = rng(808);
    let (mut sv, mut x, mut br, mut bn) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (i, (d, n)) in [(1, 2), (2, 3), (3, 3), (2, 4)].into_iter().enumerate() {
        let (a, b, c, e) = if i % 2 == 0 {
            limit_points(&unit_chain::<f64>(n, d, &mut r))
        } else {
            limit_points(&unit_chain::<Complex64>(n, d, &mut r))
        };
        sv = sv.max(a);
        x = x.max(b);
        br = br.max(c);
        bn = bn.max(e);
    }
    Outcome::new(
        sv <= 1e-6 && x <= 1e-6 && br <= 1e-8 && bn <= 1e-8,
        format!(
            "regularizing vs Ness limits: 4 starts; max singular-value mismatch {sv:.2e} (tol 1e-6), \
             end-to-end rel mismatch {x:.2e} (tol 1e-6), balance residuals {br:.2e} / {bn:.2e} (tol 1e-8)"
        ),
    )
}

// 9. Schatten-p minimum.
fn criterion_9() -> Outcome {
    let mut r = rng(909);
    let (mut gap, mut bal) = (0.0f64, 0.0f64);
    let mut cases = 0;
    for p in [1.5, 3.0] {
        for i in 0..4 {
            let d = 1 + i % 3;
            let n = 2 + (i + 1) % 3;
            let opts = MinimizeOptions::default().with_restarts(3, 90 + i as u64);
            let rep = if i % 2 == 0 {
                let x: Mat<f64> = linalg::random_matrix(d, &mut r);
                minimize_schatten_on_fiber(&x, n, p, &opts).unwrap().report
            } else {
                let x: Mat<Complex64> = linalg::random_matrix(d, &mut r);
                minimize_schatten_on_fiber(&x, n, p, &opts).unwrap().report
            };
            gap = gap.max(rep.relative_gap);
            bal = bal.max(rep.balance_residual);
            cases += 1;
        }
    }
    Outcome::new(
        gap <= 1e-5 && bal <= 1e-5,
        format!(
            "Schatten-p minimum: p in {{1.5, 3}}, {cases} X; max rel gap to N (sum s^(p/N))^(1/p) {gap:.2e} (tol 1e-5), \
             max balance residual {bal:.2e} (tol 1e-5)"
        ),
    )
}

// 10. Transfer-function invariance and balanced realizations.
fn criterion_10() -> Outcome {
    let mut r = rng(1010);
    let mut drift = 0.0f64;
    for _ in 0..4 {
        let sys = StateSpace::<Complex64>::random(3, 2, 2, &mut r).unwrap();
        let m = Mat::<Complex64>::identity(3, 3) + linalg::random_matrix::<Complex64, _>(3, &mut r) * Complex64::new(0.5, 0.0);
        let t = similarity_action(&m, &sys).unwrap();
        drift = drift.max(transfer_drift(&sys, &t, &probe_points(&sys, 5)).unwrap());
    }
    let scalar = StateSpace::<f64>::new(
        Mat::from_element(1, 1, 0.0),
        Mat::from_element(1, 1, 4.0),
        Mat::from_element(1, 1, 1.0),
    )
    .unwrap();
    let one = balance_realization(&scalar, &BalanceOptions::default()).unwrap();
    let scalar_err = (one.cost - 8.0).abs();

    let sys = loop {
        let s = StateSpace::<f64>::random(3, 1, 1, &mut r).unwrap();
        if s.minimality().minimal {
            break s;
        }
    };
    let opts = BalanceOptions {
        restarts: 8,
        seed: 11,
        init_scale: 0.5,
        ..Default::default()
    };
    let multi = balance_realization(&sys, &opts).unwrap();
    let monotone = multi.cost_trajectory.windows(2).all(|p| p[1] <= p[0]);
    Outcome::new(
        drift <= 1e-9 && scalar_err <= 1e-9 && multi.restart_spread <= 1e-5 && multi.status == BalanceStatus::Converged,
        format!(
            "realization: max rel H(z) drift under similarity at 5 probes {drift:.2e} (tol 1e-9); \
             (0,4,1) balanced cost error {scalar_err:.2e} (tol 1e-9); random minimal n=3: 8 restarts, cost spread \
             {:.2e} (tol 1e-5), status {:?}, H drift along descent {:.2e}, cost monotone {monotone}",
            multi.restart_spread, multi.status, multi.tf_drift
        ),
    )
}

// 11. OU stationary second moment 1/(beta kappa).
fn criterion_11() -> Outcome {
    let (kappa, beta) = (1.0, 1.0);
    let spec = StochasticSpec {
        dt: 0.01,
        t_end: 1_000_000.0,
        burn_in: 10.0,
        sample_every: 100,
        trace_every: usize::MAX,
        keep_samples: false,
    };
    let w = Chain::<f64>::scalars(&[0.0, 0.0]).unwrap();
    let run = ou_noise(&w, kappa, beta, &spec, 11).unwrap();
    let s = run.stats;
    let target = 1.0 / (beta * kappa);
    let rel = (s.second_moment - target).abs() / target;
    let em_bias = 1.0 / (1.0 - kappa * spec.dt / 2.0) - 1.0;
    Outcome::new(
        rel <= 0.05 && s.effective_samples >= 1e6,
        format!(
            "OU statistics: d=1, N=2, kappa=beta=1, dt=1e-2; second moment per coordinate {:.5} vs 1/(beta kappa) = {target} \
             (rel err {rel:.2e}, tol 5e-2) over {:.3e} effective samples (need 1e6; lag-1 autocorrelation {:.3})",
            s.second_moment, s.effective_samples, s.lag1_autocorrelation
        ),
    )
    .note(format!(
        "expected Euler-Maruyama bias +{em_bias:.2e}. FLAGGED, not asserted: a stationary density proportional to \
         exp(-beta kappa ||w||^2) would give second moment {:.3}, half of the SDE value",
        target / 2.0
    ))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("5", criterion_5),
        ("6", criterion_6),
        ("7", criterion_7),
        ("8", criterion_8),
        ("9", criterion_9),
        ("10", criterion_10),
        ("11", criterion_11),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let start = Instant::now();
    let mut failed = Vec::new();
    for (id, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let t = Instant::now();
        let out = f();
        let tag = if out.passed { "PASS" } else { "FAIL" };
        println!("{tag} [{id:>2}] {} ({:.1} s)", out.summary, t.elapsed().as_secs_f64());
        for n in &out.notes {
            println!("          note: {n}");
        }
        if !out.passed {
            failed.push(id);
        }
    }
    println!("acceptance: {} failed {:?}, total {:.1} s", failed.len(), failed, start.elapsed().as_secs_f64());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
