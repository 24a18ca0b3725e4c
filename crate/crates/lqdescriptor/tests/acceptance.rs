//! Acceptance criteria, one line per criterion. Runs without the libtest
//! harness so the summary is always printed.

mod common;

use std::f64::consts::{PI, TAU};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;

use rand::Rng;

use lqdescriptor::config::Tolerances;
use lqdescriptor::control::{feasibility, finite_horizon_oracle, optimal_value, synthesize};
use lqdescriptor::linalg::{self, eye, from_rows, zeros, CMat, CVec, C64};
use lqdescriptor::lure::{self, LureSolution};
use lqdescriptor::palindromic::{self, build_palindromic, hermitian_inertia, inertia_along, InertiaTriple};
use lqdescriptor::popov::{self, kyp_check, kyp_lift, kyp_matrix, popov_eval, popov_normal_rank, popov_sweep, refined_grid};
use lqdescriptor::system::{self, controllability, feedback_form, feedback_form_from_transforms, WeightedSystem};

use common::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn s3() -> f64 {
    3f64.sqrt()
}

fn worked_form(w: &WeightedSystem) -> system::FeedbackForm {
    let wm = from_rows(&[&[1.0, 1.0], &[-1.0, 0.0]]);
    let t = from_rows(&[&[1.0, 1.0], &[1.0, 0.0]]);
    feedback_form_from_transforms(w, &wm, &t, &zeros(1, 2), (1, 1, 0)).unwrap()
}

fn fef_example() -> Outcome {
    let tol = Tolerances::default();
    let w = example();
    let fef = feedback_form(&w, &tol).map_err(|e| e.to_string())?;
    let dims = (fef.n1, fef.n2, fef.n3);
    ensure(dims == (1, 1, 0), format!("dims {dims:?}"))?;
    // W (zE - A + ... ) T identity checked independently of the stored residual
    let lhs_e = &fef.w * w.e() * &fef.t;
    let lhs_a = &fef.w * (w.a() + w.b() * &fef.f) * &fef.t;
    let lhs_b = &fef.w * w.b();
    let res = (lhs_e - fef.e_f()).norm() + (lhs_a - fef.a_f()).norm() + (lhs_b - fef.b_f()).norm();
    ensure(res <= 1e-10, format!("identity residual {res:.3e}"))?;
    ensure(fef.residual <= 1e-10, format!("stored residual {:.3e}", fef.residual))?;
    Ok(format!("dims (1,1,0), identity residual {res:.1e}"))
}

fn kyp_interval() -> Outcome {
    let tol = Tolerances::default();
    let w = example();
    let ede = worked_form(&w).ede;
    let lmin = |p: f64| linalg::min_herm_eig(&kyp_matrix(&ede, &(eye(1) * C64::new(p, 0.0))));
    let (hi, lo, mid) = (lmin(s3()), lmin(-s3()), lmin(0.0));
    ensure(hi.abs() <= 1e-8 && lo.abs() <= 1e-8, format!("boundary eigenvalues {hi:.3e}, {lo:.3e}"))?;
    ensure(mid > 0.0, format!("M_s(0) min eigenvalue {mid:.3e}"))?;
    let p = kyp_lift(&worked_form(&w), &(eye(1) * C64::new(-1.0, 0.0)));
    let target = from_rows(&[&[-1.0, -1.0], &[-1.0, -1.0]]);
    ensure((&p - target).norm() < 1e-12, "lifted P differs")?;
    let rep = kyp_check(&w, &p, &tol).map_err(|e| e.to_string())?;
    ensure(rep.feasible, format!("lifted P infeasible ({:.3e})", rep.min_eig_on_v))?;
    Ok(format!("lambda_min at +-sqrt3: {hi:.1e}, {lo:.1e}; M_s(0) min {mid:.3}; lifted P feasible"))
}

fn lure_example() -> Outcome {
    let tol = Tolerances::default();
    let w = example();
    let sol = lure::lure_solve(&w, &tol).map_err(|e| e.to_string())?;
    let exe = w.e().adjoint() * &sol.x * w.e();
    let target = from_rows(&[&[0.0, 0.0], &[0.0, s3()]]);
    let d = linalg::norm_max(&(&exe - target));
    ensure(d <= 1e-8, format!("E*XE off by {d:.3e}"))?;
    let cert = lure::lure_verify(&w, &sol, &tol).map_err(|e| e.to_string())?;
    ensure(cert.residual_on_v <= 1e-8, format!("residual {:.3e}", cert.residual_on_v))?;
    ensure(cert.stabilizing, "not stabilizing")?;
    let worked = LureSolution {
        x: from_rows(&[&[s3(), s3()], &[s3(), s3()]]),
        k: from_rows(&[&[0.0, 2f64.sqrt()]]),
        l: from_rows(&[&[-(s3() + 1.0) / 2f64.sqrt()]]),
    };
    let g = linalg::norm_max(&(sol.gram() - worked.gram()));
    ensure(g <= 1e-8, format!("[K L] gram differs by {g:.3e}"))?;
    Ok(format!("E*XE error {d:.1e}, residual {:.1e}, stabilizing, gram error {g:.1e}", cert.residual_on_v))
}

fn optimal_example() -> Outcome {
    let tol = Tolerances::default();
    let w = example();
    let sol = lure::lure_solve(&w, &tol).map_err(|e| e.to_string())?;
    let x0 = x0_example();
    let v = optimal_value(&w, &sol, &x0, &tol).map_err(|e| e.to_string())?;
    ensure((v - s3()).abs() <= 1e-8, format!("optimal value {v}"))?;
    let res = synthesize(&w, &sol, &x0, 41, &tol).map_err(|e| e.to_string())?;
    let r = 1.0 - 2.0 / (s3() + 1.0);
    let mut worst = 0.0f64;
    for j in 0..=40 {
        let rj = r.powi(j as i32);
        let u = 2.0 / (s3() + 1.0) * rj;
        let x = [r * rj, rj];
        worst = worst.max((res.trajectory.u[j][0] - C64::new(u, 0.0)).norm());
        for (k, xk) in x.iter().enumerate() {
            worst = worst.max((res.trajectory.x[j][k] - C64::new(*xk, 0.0)).norm());
        }
    }
    ensure(worst <= 1e-8, format!("closed forms off by {worst:.3e}"))?;
    let j40 = res.objective.partial[39];
    ensure((j40 - s3()).abs() <= 1e-8, format!("J_40 = {j40}"))?;
    Ok(format!("value {v:.12}, closed-form error {worst:.1e}, |J_40 - sqrt3| = {:.1e}", (j40 - s3()).abs()))
}

fn inertia_example() -> Outcome {
    let tol = Tolerances::default();
    let w = example();
    let p = build_palindromic(&w);
    for om in [PI / 2.0, PI, 1.5 * PI] {
        let t = palindromic::inertia_at_omega(&p, om, &tol);
        let o = inertia_oracle(&palindromic_hermitian(&w, om), 1e-10);
        ensure(t == InertiaTriple::new(3, 0, 2), format!("inertia {t} at {om}"))?;
        ensure((t.n_plus, t.n_zero, t.n_minus) == o, format!("oracle {o:?} at {om}"))?;
    }
    let mut g = rng(5);
    for _ in 0..20 {
        let om = g.gen_range(0.05..TAU - 0.05);
        let phi = popov_eval(&w, om, &tol);
        ensure(phi.defined, format!("Popov undefined at {om}"))?;
        let ip = hermitian_inertia(&phi.value, &tol);
        let expect = InertiaTriple::new(w.n(), 0, w.n()) + ip;
        let got = palindromic::inertia_at_omega(&p, om, &tol);
        ensure(got == expect, format!("at {om}: {got} vs {expect}"))?;
    }
    Ok("(3,0,2) at pi/2, pi, 3pi/2 (oracle agrees); congruence identity at 20 angles".into())
}

fn census_example() -> Outcome {
    let tol = Tolerances::default();
    let w = example();
    let c = palindromic::pkcf_census(&build_palindromic(&w), 1, &tol).map_err(|e| e.to_string())?;
    ensure(c.p5_count == 0, format!("P5 count {}", c.p5_count))?;
    ensure(c.off_circle_pairs.len() == 2, format!("{} off-circle pairs", c.off_circle_pairs.len()))?;
    let has_zero_inf = c.off_circle_pairs.iter().any(|(l, r)| l.norm() < 1e-8 && r.is_none());
    let has_pair = c.off_circle_pairs.iter().any(|(l, r)| {
        (l - C64::new(2.0 - s3(), 0.0)).norm() <= 1e-8 && r.is_some_and(|r| (r - C64::new(2.0 + s3(), 0.0)).norm() <= 1e-8)
    });
    ensure(has_zero_inf && has_pair, format!("pairs {:?}", c.off_circle_pairs))?;
    ensure(c.net_at_zero() == 1, format!("net at zero {}", c.net_at_zero()))?;
    ensure(c.positivity_certified && c.q == 1, "not certified")?;
    Ok("P5 0, pairs {0,inf} and {2-sqrt3,2+sqrt3}, net +1 at 0, certified with q=1".into())
}

fn dare_corpus_check() -> Outcome {
    let tol = Tolerances::default();
    let corpus = dare_corpus(50, 7);
    let (mut worst_res, mut worst_diff) = (0.0f64, 0.0f64);
    for (i, w) in corpus.iter().enumerate() {
        ensure(controllability(&w.sys, &tol).map_err(|e| e.to_string())?.r_controllable, format!("system {i} not controllable"))?;
        let sol = lure::lure_solve_ede(w, &tol).map_err(|e| format!("system {i}: {e}"))?;
        let res = dare_residual(w, &sol.x);
        let diff = linalg::norm_max(&(&sol.x - dare_oracle(w)));
        worst_res = worst_res.max(res);
        worst_diff = worst_diff.max(diff);
    }
    ensure(worst_res <= 1e-8, format!("worst DARE residual {worst_res:.3e}"))?;
    ensure(worst_diff <= 1e-7, format!("worst oracle gap {worst_diff:.3e}"))?;
    Ok(format!("50 systems, worst residual {worst_res:.1e}, worst gap to iteration {worst_diff:.1e}"))
}

fn oracle_convergence() -> Outcome {
    let tol = Tolerances::default();
    let w = example();
    let mut prev = f64::INFINITY;
    let mut j30 = f64::NAN;
    for n in 1..=30 {
        let v = finite_horizon_oracle(&w, &x0_example(), n, &tol).map_err(|e| e.to_string())?.value;
        ensure(v <= prev + 1e-12, format!("J_{n} = {v} > J_{} = {prev}", n - 1))?;
        prev = v;
        j30 = v;
    }
    ensure((j30 - s3()).abs() <= 1e-6, format!("J_30 = {j30}"))?;
    let mut g = rng(8);
    let mut worst = 0.0f64;
    for (i, w) in dare_corpus(50, 7).iter().enumerate() {
        let x = lure::lure_solve_ede(w, &tol).map_err(|e| e.to_string())?.x;
        let x0 = random_vec(&mut g, w.n());
        let v = finite_horizon_oracle(w, &x0, 40, &tol).map_err(|e| format!("system {i}: {e}"))?.value;
        let exact = (x0.adjoint() * &x * &x0)[(0, 0)].re;
        worst = worst.max((v - exact).abs());
    }
    ensure(worst <= 1e-5, format!("worst |J_40 - x0*Xx0| = {worst:.3e}"))?;
    Ok(format!("J_N non-increasing, |J_30 - sqrt3| = {:.1e}, corpus worst {worst:.1e}", (j30 - s3()).abs()))
}

/// `G(1/conj z)^* M_0(P) G(z)` assembled here without the library.
fn zero_kyp_oracle(w: &WeightedSystem, p: &CMat, z: C64) -> Option<f64> {
    let (e, a, b) = (w.e(), w.a(), w.b());
    let col = |z: C64| -> Option<CMat> {
        let x = linalg::solve(&(e * z - a), b)?;
        Some(linalg::vstack(&[&x, &eye(b.ncols())]))
    };
    let zr = C64::new(1.0, 0.0) / z.conj();
    let (g, gr) = (col(z)?, col(zr)?);
    let m0 = linalg::block(&[
        vec![&(a.adjoint() * p * a - e.adjoint() * p * e), &(a.adjoint() * p * b)],
        vec![&(b.adjoint() * p * a), &(b.adjoint() * p * b)],
    ]);
    let v = gr.adjoint() * m0 * &g;
    Some(v.norm() / ((1.0 + p.norm()) * (1.0 + g.norm()) * (1.0 + gr.norm())))
}

fn property_suites() -> Outcome {
    let tol = Tolerances::default();
    let mut g = rng(9);

    let mut worst_zero = 0.0f64;
    let mut done = 0;
    while done < 100 {
        let (e, a, b) = random_descriptor(&mut g, true);
        let n = a.nrows();
        let Ok(w) = WeightedSystem::from_parts(e, a, b.clone(), eye(n), zeros(n, b.ncols()), eye(b.ncols())) else { continue };
        let p = herm_mat(&mut g, n);
        let z = C64::from_polar(g.gen_range(0.3..3.0), g.gen_range(0.0..TAU));
        let (Some(r), Some(o)) = (popov::zero_kyp_residual(&w, &p, z, &tol), zero_kyp_oracle(&w, &p, z)) else { continue };
        worst_zero = worst_zero.max(r).max(o);
        done += 1;
    }
    ensure(worst_zero <= 1e-10, format!("zero-KYP identity {worst_zero:.3e}"))?;

    for case in 0..100 {
        let n = g.gen_range(1..=6);
        let phi = g.gen_range(0.0..TAU);
        let q = linalg::full_svd(&complex_mat(&mut g, n, n)).u;
        let d: Vec<f64> = (0..n).map(|_| [-1.0, 0.0, 1.0][g.gen_range(0..3)] * g.gen_range(0.5..2.0)).collect();
        let h = &q * CMat::from_diagonal(&CVec::from_iterator(n, d.iter().map(|x| C64::new(*x, 0.0)))) * q.adjoint();
        // eigenvalues on the line through e^{i phi}
        let mtx = h * C64::from_polar(1.0, phi);
        let x = complex_mat(&mut g, n, n) + eye(n) * C64::new(2.0, 0.0);
        let before = inertia_along(&mtx, phi, &tol).map_err(|e| e.to_string())?;
        let after = inertia_along(&(x.adjoint() * &mtx * &x), phi, &tol).map_err(|e| e.to_string())?;
        let expect = (d.iter().filter(|v| **v > 0.0).count(), d.iter().filter(|v| **v == 0.0).count(), d.iter().filter(|v| **v < 0.0).count());
        ensure(before == after, format!("case {case}: {before} vs {after}"))?;
        ensure((before.n_plus, before.n_zero, before.n_minus) == expect, format!("case {case}: {before} vs {expect:?}"))?;
    }

    let mut worst_energy = 0.0f64;
    let mut trajectories = 0;
    {
        let w = example();
        let sol = lure::lure_solve(&w, &tol).map_err(|e| e.to_string())?;
        let r = synthesize(&w, &sol, &x0_example(), 40, &tol).map_err(|e| e.to_string())?;
        worst_energy = worst_energy.max(r.energy_residual);
        trajectories += 1;
    }
    for w in dare_corpus(20, 11) {
        let sol = lure::lure_solve(&w, &tol).map_err(|e| e.to_string())?;
        let x0 = random_vec(&mut g, w.n());
        let r = synthesize(&w, &sol, &x0, 40, &tol).map_err(|e| e.to_string())?;
        worst_energy = worst_energy.max(r.energy_residual);
        trajectories += 1;
    }
    let mut disagreements = Vec::new();
    let (mut certified, mut checked) = (0, 0);
    for (i, w) in popov_corpus(100, 12).iter().enumerate() {
        let band = tol.circle_band(w.sys.pencil().norm()).max(1e-8);
        if controllability(&w.sys, &tol).map_err(|e| e.to_string())?.has_unit_circle_modes(band) {
            continue;
        }
        checked += 1;
        let verdict = (|| -> lqdescriptor::error::Result<(bool, bool)> {
            let grid = refined_grid(w, &tol)?;
            let sweep = popov_sweep(w, &grid, &tol).nonnegative(&tol, 1.0 + w.weight().norm());
            let q = popov_normal_rank(w, &tol)?;
            let census = palindromic::pkcf_census(&build_palindromic(w), q, &tol)?.positivity_certified;
            Ok((sweep, census))
        })();
        match verdict {
            Ok((s, c)) if s == c => {
                certified += usize::from(c);
                // descriptor trajectories for the energy balance
                if c && feasibility(w, &tol).map(|f| f.feasible).unwrap_or(false) {
                    let energy = (|| -> lqdescriptor::error::Result<f64> {
                        let sol = lure::lure_solve(w, &tol)?;
                        let basis = system::consistent_initials(&feedback_form(w, &tol)?, &tol);
                        let x0 = &basis * random_vec(&mut g, basis.ncols());
                        Ok(synthesize(w, &sol, &x0, 40, &tol)?.energy_residual)
                    })();
                    match energy {
                        Ok(e) => {
                            worst_energy = worst_energy.max(e);
                            trajectories += 1;
                        }
                        // not strongly stabilizable; no trajectory to check
                        Err(lqdescriptor::error::Error::Infeasible(_)) => {}
                        Err(e) => disagreements.push(format!("system {i}: synthesis {e}")),
                    }
                }
            }
            Ok((s, c)) => disagreements.push(format!("system {i}: sweep {s}, census {c}")),
            Err(e) => disagreements.push(format!("system {i}: {e}")),
        }
    }
    ensure(worst_energy <= 1e-8, format!("energy balance {worst_energy:.3e}"))?;
    ensure(disagreements.is_empty(), format!("{} disagreements: {}", disagreements.len(), disagreements.join("; ")))?;
    Ok(format!(
        "zero-KYP {worst_zero:.1e}; congruence 100/100; energy {worst_energy:.1e} over {trajectories} trajectories; Popov vs census 0 disagreements on {checked} systems ({certified} nonnegative)"
    ))
}

fn negative_controls() -> Outcome {
    let tol = Tolerances::default();
    let w = example();
    let neg = WeightedSystem::from_parts(w.e().clone(), w.a().clone(), w.b().clone(), w.q.clone(), w.s.clone(), -&w.r).unwrap();
    let f = feasibility(&neg, &tol).map_err(|e| e.to_string())?;
    ensure(!f.feasible, "negated-R example reported feasible")?;
    let mut infeasible = 1;
    for d in dare_corpus(10, 13) {
        let (n, m) = (d.n(), d.m());
        let neg = WeightedSystem::from_parts(eye(n), d.a().clone(), d.b().clone(), zeros(n, n), zeros(n, m), -&d.r).unwrap();
        ensure(!feasibility(&neg, &tol).map_err(|e| e.to_string())?.feasible, "negated-R corpus system reported feasible")?;
        infeasible += 1;
    }

    let sol = lure::lure_solve(&w, &tol).map_err(|e| e.to_string())?;
    let mut g = rng(14);
    for _ in 0..10 {
        let mut bad = sol.clone();
        bad.x += herm_mat(&mut g, 2).map(|z| C64::new(z.re, 0.0)) * C64::new(0.1, 0.0);
        let cert = lure::lure_verify(&w, &bad, &tol).map_err(|e| e.to_string())?;
        ensure(!cert.passes(&tol), "perturbed solution passes")?;
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("singular.json");
    std::fs::write(&path, r#"{"n":1,"m":1,"field":"real","E":[[0]],"A":[[0]],"B":[[1]],"Q":[[1]],"S":[[0]],"R":[[1]]}"#)
        .map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_lqd")).arg("analyze").arg(&path).output().map_err(|e| e.to_string())?;
    let stderr = String::from_utf8_lossy(&out.stderr);
    ensure(out.status.code() == Some(2), format!("exit code {:?}", out.status.code()))?;
    ensure(stderr.contains("pencil not regular"), format!("message {stderr}"))?;
    Ok(format!("{infeasible} negated-R systems infeasible; 10 perturbed solutions rejected; singular pencil exit 2"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("running-example feedback form", fef_example),
        ("KYP interval on the explicit part", kyp_interval),
        ("Lur'e solution of the running example", lure_example),
        ("optimal value and synthesized trajectory", optimal_example),
        ("palindromic inertia", inertia_example),
        ("palindromic census", census_example),
        ("DARE cross-check corpus", dare_corpus_check),
        ("finite-horizon oracle convergence", oracle_convergence),
        ("property suites", property_suites),
        ("negative controls", negative_controls),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = std::time::Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.2}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
