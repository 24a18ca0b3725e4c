//! Optimal value, zero dynamics, trajectory synthesis with multipliers,
//! feasibility and a finite-horizon reference solver.

use std::f64::consts::TAU;

use crate::config::Tolerances;
use crate::error::{infeasible, invalid, numerical, unsupported, Error, Result};
use crate::linalg::{self, block, zeros, CMat, CVec, C64};
use crate::lure::{self, deflating_from_solution, LureSolution, SubspaceKind};
use crate::pencil::{self, MatrixPencil};
use crate::popov::{popov_sweep, refined_grid};
use crate::system::{self, controllability, DescriptorSystem, FeedbackForm, Trajectory, WeightedSystem};

fn stage_cost(w: &WeightedSystem, x: &CVec, u: &CVec) -> f64 {
    let xu = CVec::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied());
    (xu.adjoint() * w.weight() * &xu)[(0, 0)].re
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveSums {
    /// `J_N` for `N = 1..=horizon`.
    pub partial: Vec<f64>,
    pub stage: Vec<f64>,
    /// Partial sums over the last quarter agree within the residual tolerance.
    pub converged: bool,
}

impl ObjectiveSums {
    pub fn total(&self) -> f64 {
        self.partial.last().copied().unwrap_or(0.0)
    }
}

pub fn objective(w: &WeightedSystem, traj: &Trajectory, horizon: usize, tol: &Tolerances) -> ObjectiveSums {
    let h = horizon.min(traj.horizon());
    let stage: Vec<f64> = (0..h).map(|j| stage_cost(w, &traj.x[j], &traj.u[j])).collect();
    let mut partial = Vec::with_capacity(h);
    let mut acc = 0.0;
    for c in &stage {
        acc += c;
        partial.push(acc);
    }
    let start = h.saturating_sub((h / 4).max(2));
    let tail = &partial[start..];
    let converged = h >= 2 && match (tail.iter().copied().reduce(f64::min), tail.iter().copied().reduce(f64::max)) {
        (Some(lo), Some(hi)) => hi - lo <= tol.residual * (1.0 + hi.abs()),
        _ => true,
    };
    ObjectiveSums { partial, stage, converged }
}

fn check_consistent(w: &WeightedSystem, fef: &FeedbackForm, x0: &CVec, tol: &Tolerances) -> Result<()> {
    if x0.len() != w.n() {
        return invalid(format!("initial state must have length {}", w.n()));
    }
    let basis = system::consistent_initials(fef, tol);
    let d = system::distance_to_span(&basis, x0);
    if d > 1e-8 * (1.0 + x0.norm()) {
        return invalid(format!("initial state is not consistent (distance {d:.3e})"));
    }
    Ok(())
}

/// Rejects initial states of the wrong length or outside the consistent set.
pub fn check_initial_state(w: &WeightedSystem, x0: &CVec, tol: &Tolerances) -> Result<()> {
    if x0.len() != w.n() {
        return invalid(format!("initial state must have length {}", w.n()));
    }
    check_consistent(w, &system::feedback_form(w, tol)?, x0, tol)
}

/// `x0* E* X E x0`.
pub fn optimal_value(w: &WeightedSystem, sol: &LureSolution, x0: &CVec, tol: &Tolerances) -> Result<f64> {
    let fef = system::feedback_form(w, tol)?;
    check_consistent(w, &fef, x0, tol)?;
    Ok(quadratic_value(w, sol, x0))
}

fn quadratic_value(w: &WeightedSystem, sol: &LureSolution, x: &CVec) -> f64 {
    let ex = w.e() * x;
    (ex.adjoint() * &sol.x * ex)[(0, 0)].re
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZeroDynamicsReport {
    pub stabilizable: bool,
    pub asymptotically_stable: bool,
    pub strongly_stabilizable: bool,
    pub strongly_asymptotically_stable: bool,
    pub index_of_r: usize,
    pub normal_rank: usize,
    /// Points with `|lambda| >= 1` where `R(lambda)` loses rank, with that rank.
    pub rank_profile: Vec<(C64, usize)>,
}

/// Zero dynamics of `(E, A, B, C, D)` through `R(z) = [zE - A, -B; C, D]`.
pub fn zero_dynamics(sys: &DescriptorSystem, c: &CMat, d: &CMat, tol: &Tolerances) -> Result<ZeroDynamicsReport> {
    let (n, m) = (sys.n(), sys.m());
    let p = c.nrows();
    if c.shape() != (p, n) || d.shape() != (p, m) {
        return invalid("output matrices do not fit the system");
    }
    let e = block(&[vec![&sys.e, &zeros(n, m)], vec![&zeros(p, n), &zeros(p, m)]]);
    let a = block(&[vec![&sys.a, &sys.b], vec![&(-c), &(-d)]]);
    let r = MatrixPencil { e, a };
    let spec = pencil::generalized_spectrum(&r, tol)?;
    let band = tol.circle_band(r.norm());
    let mut profile = Vec::new();
    let mut pts: Vec<C64> = spec.finite_eigenvalues.iter().copied().filter(|l| l.norm() >= 1.0 - band).collect();
    pts.extend((0..32).map(|k| linalg::cis(TAU * k as f64 / 32.0)));
    for l in pts {
        let rk = linalg::rank(&r.at(l), tol.rank_derived);
        if rk < spec.normal_rank {
            profile.push((l, rk));
        }
    }
    let stabilizable = profile.is_empty();
    let asymptotically_stable = stabilizable && spec.normal_rank == n + m;
    let index_ok = spec.index <= 1;
    Ok(ZeroDynamicsReport {
        stabilizable,
        asymptotically_stable,
        strongly_stabilizable: stabilizable && index_ok,
        strongly_asymptotically_stable: asymptotically_stable && index_ok,
        index_of_r: spec.index,
        normal_rank: spec.normal_rank,
        rank_profile: profile,
    })
}

#[derive(Clone, Debug)]
pub struct OptimalControlResult {
    pub optimal_value: f64,
    pub trajectory: Trajectory,
    pub objective: ObjectiveSums,
    /// Multipliers of the BVD optimality system.
    pub multipliers_mu: Vec<CVec>,
    /// Multipliers of the palindromic optimality system, `m_j = mu_j - mu_{j+1}`
    /// (one fewer than the horizon).
    pub multipliers_m: Vec<CVec>,
    pub existence: bool,
    pub uniqueness: bool,
    pub step_residual: f64,
    pub bvd_residual: f64,
    pub palindromic_residual: f64,
    /// `||E* mu_N||` at the horizon.
    pub terminal_residual: f64,
    /// `||sum_k E* m_k - E* mu_0||`.
    pub sum_residual: f64,
    pub energy_residual: f64,
    /// Largest deviation of `mu_j` from the multiplier rows of the BVD
    /// deflating subspace applied to `(x_j, u_j)`; nonzero only in `ker E*`.
    pub representation_gap: f64,
}

/// `sum_j cost_j - (x0*E*XEx0 - x_N*E*XEx_N + sum_j ||K x_j + L u_j||^2)`.
pub fn energy_balance_residual(w: &WeightedSystem, sol: &LureSolution, traj: &Trajectory) -> f64 {
    let h = traj.horizon();
    if h < 2 {
        return 0.0;
    }
    let mut lhs = 0.0;
    let mut defect = 0.0;
    for j in 0..h - 1 {
        lhs += stage_cost(w, &traj.x[j], &traj.u[j]);
        defect += (&sol.k * &traj.x[j] + &sol.l * &traj.u[j]).norm_squared();
    }
    let rhs = quadratic_value(w, sol, &traj.x[0]) - quadratic_value(w, sol, &traj.x[h - 1]) + defect;
    (lhs - rhs).abs() / (1.0 + lhs.abs().max(rhs.abs()))
}

pub fn synthesize(w: &WeightedSystem, sol: &LureSolution, x0: &CVec, horizon: usize, tol: &Tolerances) -> Result<OptimalControlResult> {
    let (n, m) = (w.n(), w.m());
    let fef = system::feedback_form(w, tol)?;
    check_consistent(w, &fef, x0, tol)?;
    let zd = zero_dynamics(&w.sys, &sol.k, &sol.l, tol)?;
    if !zd.strongly_stabilizable {
        return infeasible("closed-loop zero dynamics are not strongly stabilizable; no optimal control exists");
    }
    let coker = linalg::left_null_space(w.e(), tol.rank);
    let q = sol.q();
    let kr = coker.ncols();
    let step = block(&[
        vec![w.e(), &zeros(n, m)],
        vec![&sol.k, &sol.l],
        vec![&(coker.adjoint() * w.a()), &(coker.adjoint() * w.b())],
    ]);
    let pinv = linalg::pinv(&step, tol.rank_derived);
    let scale = 1.0 + step.norm();
    let mut traj = Trajectory { x: Vec::with_capacity(horizon), u: Vec::with_capacity(horizon) };
    let mut step_residual = 0.0f64;
    let mut rhs_top = w.e() * x0;
    for _ in 0..horizon {
        let rhs = CVec::from_iterator(n + q + kr, rhs_top.iter().copied().chain(std::iter::repeat_n(C64::new(0.0, 0.0), q + kr)));
        let v = &pinv * &rhs;
        let res = (&step * &v - &rhs).norm() / (scale * (1.0 + rhs.norm()));
        step_residual = step_residual.max(res);
        let x = CVec::from_iterator(n, v.iter().take(n).copied());
        let u = CVec::from_iterator(m, v.iter().skip(n).copied());
        rhs_top = w.a() * &x + w.b() * &u;
        traj.x.push(x);
        traj.u.push(u);
    }
    if step_residual > 1e-8 {
        return numerical(format!("closed-loop step equations inconsistent (residual {step_residual:.3e})"));
    }

    let bvd = deflating_from_solution(w, &fef, sol, SubspaceKind::Bvd, tol)?;
    let xu = |j: usize| CVec::from_iterator(n + m, traj.x[j].iter().chain(traj.u[j].iter()).copied());
    let (e, a, b) = (w.e(), w.a(), w.b());
    // mu_0 comes from the multiplier rows of Y; later terms follow the
    // recursion with E* mu_j pinned to -E* X E x_j.
    let mu_rows = bvd.subspace.y.rows(0, n).into_owned();
    let stack = linalg::vstack(&[&a.adjoint(), &b.adjoint(), &e.adjoint()]);
    let stack_pinv = linalg::pinv(&stack, tol.rank_derived);
    let mut mus: Vec<CVec> = Vec::with_capacity(horizon);
    if horizon > 0 {
        mus.push(&mu_rows * xu(0));
    }
    for j in 0..horizon.saturating_sub(1) {
        let (x, u) = (&traj.x[j], &traj.u[j]);
        let r2 = e.adjoint() * &mus[j] + &w.q * x + &w.s * u;
        let r3 = w.s.adjoint() * x + &w.r * u;
        let r4 = -(e.adjoint() * &sol.x * e * &traj.x[j + 1]);
        let rhs = CVec::from_iterator(2 * n + m, r2.iter().chain(r3.iter()).chain(r4.iter()).copied());
        mus.push(&stack_pinv * rhs);
    }
    let representation_gap = (0..mus.len()).map(|j| (&mus[j] - &mu_rows * xu(j)).norm()).fold(0.0, f64::max);
    let ms: Vec<CVec> = (0..mus.len().saturating_sub(1)).map(|j| &mus[j] - &mus[j + 1]).collect();

    let wscale = 1.0 + e.norm() + a.norm() + b.norm() + w.weight().norm();
    let mut bvd_res = 0.0f64;
    let mut pal_res = 0.0f64;
    for j in 0..horizon.saturating_sub(2) {
        let (x, u, x1, u1) = (&traj.x[j], &traj.u[j], &traj.x[j + 1], &traj.u[j + 1]);
        let r2 = a.adjoint() * &mus[j + 1] - e.adjoint() * &mus[j] - &w.q * x - &w.s * u;
        let r3 = b.adjoint() * &mus[j + 1] - w.s.adjoint() * x - &w.r * u;
        bvd_res = bvd_res.max((r2.norm() + r3.norm()) / wscale);
        let p2 = a.adjoint() * &ms[j + 1] + &w.q * x1 + &w.s * u1 - e.adjoint() * &ms[j] - &w.q * x - &w.s * u;
        let p3 = b.adjoint() * &ms[j + 1] + w.s.adjoint() * x1 + &w.r * u1 - w.s.adjoint() * x - &w.r * u;
        pal_res = pal_res.max((p2.norm() + p3.norm()) / wscale);
    }
    let terminal = mus.last().map_or(0.0, |mu| (e.adjoint() * mu).norm());
    let sum_m = ms.iter().fold(CVec::zeros(n), |acc, mj| acc + e.adjoint() * mj);
    let sum_residual = mus.first().map_or(0.0, |mu0| (sum_m - e.adjoint() * mu0).norm());
    let obj = objective(w, &traj, horizon, tol);
    let energy = energy_balance_residual(w, sol, &traj);
    Ok(OptimalControlResult {
        optimal_value: quadratic_value(w, sol, x0),
        trajectory: traj,
        objective: obj,
        multipliers_mu: mus,
        multipliers_m: ms,
        existence: zd.strongly_stabilizable,
        uniqueness: zd.strongly_asymptotically_stable,
        step_residual,
        bvd_residual: bvd_res,
        palindromic_residual: pal_res,
        terminal_residual: terminal,
        sum_residual,
        energy_residual: energy,
        representation_gap,
    })
}

#[derive(Clone, Debug)]
pub struct OracleResult {
    pub value: f64,
    /// `x_0..x_N` and `u_0..u_{N-1}` padded with a zero input at `N`.
    pub trajectory: Trajectory,
    pub kkt_residual: f64,
}

/// Minimizes the first `N` stage costs subject to the dynamics,
/// `E x_0 = E x0` and `E x_N = 0` through the KKT system.
pub fn finite_horizon_oracle(w: &WeightedSystem, x0: &CVec, horizon: usize, tol: &Tolerances) -> Result<OracleResult> {
    let (n, m) = (w.n(), w.m());
    if horizon == 0 {
        return invalid("horizon must be at least 1");
    }
    if x0.len() != n {
        return invalid(format!("initial state must have length {n}"));
    }
    let big_n = horizon;
    let range_e = linalg::range_basis(w.e(), tol.rank);
    let rk = range_e.ncols();
    let row_e = linalg::range_basis(&w.e().adjoint(), tol.rank);
    // x_0..x_{N-1} full, x_N restricted to the row space of E, u_0..u_{N-1}
    let nv = n * big_n + rk + m * big_n;
    let xi = |j: usize| j * n;
    let x_last = n * big_n;
    let ui = |j: usize| n * big_n + rk + j * m;
    let nc = n * big_n + 2 * rk;
    let mut h = zeros(nv, nv);
    let wt = w.weight();
    for j in 0..big_n {
        for (bi, oi) in [(0, xi(j)), (n, ui(j))] {
            for (bj, oj) in [(0, xi(j)), (n, ui(j))] {
                let (ri, ci) = (if bi == 0 { n } else { m }, if bj == 0 { n } else { m });
                h.view_mut((oi, oj), (ri, ci)).copy_from(&wt.view((bi, bj), (ri, ci)));
            }
        }
    }
    let mut cmat = zeros(nc, nv);
    let mut d = CVec::zeros(nc);
    for j in 0..big_n {
        let r0 = j * n;
        if j + 1 < big_n {
            cmat.view_mut((r0, xi(j + 1)), (n, n)).copy_from(w.e());
        } else {
            cmat.view_mut((r0, x_last), (n, rk)).copy_from(&(w.e() * &row_e));
        }
        cmat.view_mut((r0, xi(j)), (n, n)).copy_from(&(-w.a()));
        cmat.view_mut((r0, ui(j)), (n, m)).copy_from(&(-w.b()));
    }
    let r0 = n * big_n;
    cmat.view_mut((r0, xi(0)), (rk, n)).copy_from(&(range_e.adjoint() * w.e()));
    let target = range_e.adjoint() * w.e() * x0;
    d.rows_mut(r0, rk).copy_from(&target);
    cmat.view_mut((r0 + rk, x_last), (rk, rk)).copy_from(&(range_e.adjoint() * w.e() * &row_e));

    let kkt = block(&[vec![&h, &cmat.adjoint()], vec![&cmat, &zeros(nc, nc)]]);
    let rhs = CVec::from_iterator(nv + nc, std::iter::repeat_n(C64::new(0.0, 0.0), nv).chain(d.iter().copied()));
    let kkt_scale = 1.0 + kkt.norm();
    let residual_of = |s: &CVec| (&kkt * s - &rhs).norm() / (kkt_scale * (1.0 + rhs.norm()));

    // Stage ordering makes the KKT matrix banded.
    let mut order: Vec<usize> = (0..rk).map(|i| nv + r0 + i).collect();
    for j in 0..big_n {
        order.extend(xi(j)..xi(j) + n);
        order.extend(ui(j)..ui(j) + m);
        order.extend(nv + j * n..nv + (j + 1) * n);
    }
    order.extend(x_last..x_last + rk);
    order.extend((0..rk).map(|i| nv + r0 + rk + i));
    let dim = nv + nc;
    let kp = CMat::from_fn(dim, dim, |a, b| kkt[(order[a], order[b])]);
    let unpermute = |sp: &CVec| {
        let mut out = CVec::zeros(dim);
        for (a, &o) in order.iter().enumerate() {
            out[o] = sp[a];
        }
        out
    };
    let mut sol = None;
    if let Some(lu) = BandLu::factor(kp) {
        let rp = CVec::from_fn(dim, |a, _| rhs[order[a]]);
        let mut s = unpermute(&lu.solve(&rp));
        // iterative refinement
        for _ in 0..2 {
            let r = &rhs - &kkt * &s;
            let rp = CVec::from_fn(dim, |a, _| r[order[a]]);
            let s2 = &s + unpermute(&lu.solve(&rp));
            if residual_of(&s2) < residual_of(&s) {
                s = s2;
            } else {
                break;
            }
        }
        if s.iter().all(|z| z.is_finite()) {
            sol = Some(s);
        }
    }
    let sol = match sol {
        Some(s) if residual_of(&s) < 1e-10 => s,
        _ => &linalg::pinv(&kkt, tol.rank_derived) * &rhs,
    };
    let kkt_residual = residual_of(&sol);
    let v = sol.rows(0, nv).into_owned();
    let cres = (&cmat * &v - &d).norm() / (1.0 + d.norm());
    if cres > 1e-7 {
        return infeasible(format!("terminal constraint cannot be met within {horizon} steps (constraint residual {cres:.3e})"));
    }
    if kkt_residual > 1e-6 {
        return numerical(format!("KKT system could not be solved (residual {kkt_residual:.3e})"));
    }
    let mut traj = Trajectory { x: Vec::with_capacity(big_n + 1), u: Vec::with_capacity(big_n + 1) };
    for j in 0..big_n {
        traj.x.push(v.rows(xi(j), n).into_owned());
        traj.u.push(v.rows(ui(j), m).into_owned());
    }
    traj.x.push(&row_e * v.rows(x_last, rk));
    traj.u.push(CVec::zeros(m));
    let value = (0..big_n).map(|j| stage_cost(w, &traj.x[j], &traj.u[j])).sum();
    Ok(OracleResult { value, trajectory: traj, kkt_residual })
}

/// LU factors with partial pivoting of a banded matrix, stored densely.
struct BandLu {
    lu: CMat,
    piv: Vec<usize>,
    kl: usize,
    ku: usize,
}

impl BandLu {
    fn factor(mut a: CMat) -> Option<BandLu> {
        let n = a.nrows();
        let (mut kl, mut ku) = (0, 0);
        for j in 0..n {
            for i in 0..n {
                if a[(i, j)] != C64::new(0.0, 0.0) {
                    kl = kl.max(i.saturating_sub(j));
                    ku = ku.max(j.saturating_sub(i));
                }
            }
        }
        let big = linalg::norm_max(&a);
        let mut piv = vec![0; n];
        for k in 0..n {
            let lo = (k + kl + 1).min(n);
            let hi = (k + kl + ku + 1).min(n);
            let p = (k..lo).max_by(|&x, &y| a[(x, k)].norm().total_cmp(&a[(y, k)].norm()))?;
            if a[(p, k)].norm() <= 1e-14 * big {
                return None;
            }
            piv[k] = p;
            if p != k {
                for j in k..hi {
                    a.swap((k, j), (p, j));
                }
            }
            let pivot = a[(k, k)];
            for i in k + 1..lo {
                let f = a[(i, k)] / pivot;
                if f == C64::new(0.0, 0.0) {
                    continue;
                }
                a[(i, k)] = f;
                for j in k + 1..hi {
                    let t = a[(k, j)];
                    a[(i, j)] -= f * t;
                }
            }
        }
        Some(BandLu { lu: a, piv, kl, ku })
    }

    fn solve(&self, b: &CVec) -> CVec {
        let n = b.len();
        let mut y = b.clone();
        for k in 0..n {
            y.swap_rows(k, self.piv[k]);
            let yk = y[k];
            for i in k + 1..(k + self.kl + 1).min(n) {
                y[i] -= self.lu[(i, k)] * yk;
            }
        }
        for k in (0..n).rev() {
            let mut acc = y[k];
            for j in k + 1..(k + self.kl + self.ku + 1).min(n) {
                acc -= self.lu[(k, j)] * y[j];
            }
            y[k] = acc / self.lu[(k, k)];
        }
        y
    }
}

#[derive(Clone, Debug)]
pub struct Feasibility {
    pub feasible: bool,
    pub solution: Option<LureSolution>,
    pub reason: String,
}

pub fn feasibility(w: &WeightedSystem, tol: &Tolerances) -> Result<Feasibility> {
    let rep = controllability(&w.sys, tol)?;
    let band = tol.circle_band(w.sys.pencil().norm());
    if rep.has_unit_circle_modes(band.max(1e-8)) {
        return unsupported("uncontrollable modes on the unit circle");
    }
    let grid = refined_grid(w, tol)?;
    let sweep = popov_sweep(w, &grid, tol);
    if !sweep.nonnegative(tol, 1.0 + w.weight().norm()) {
        return Ok(Feasibility {
            feasible: false,
            solution: None,
            reason: format!("Popov function has eigenvalue {:.3e} at omega = {:.6}", sweep.min_eig, sweep.worst_omega),
        });
    }
    match lure::lure_solve(w, tol) {
        Ok(sol) => {
            let cert = lure::lure_verify(w, &sol, tol)?;
            if cert.stabilizing && cert.residual_on_v <= tol.residual {
                Ok(Feasibility { feasible: true, solution: Some(sol), reason: "stabilizing Lur'e solution found".into() })
            } else {
                Ok(Feasibility { feasible: false, solution: None, reason: "Lur'e solution is not stabilizing".into() })
            }
        }
        Err(Error::NumericalFailure(msg)) => Ok(Feasibility { feasible: false, solution: None, reason: msg }),
        Err(e) => Err(e),
    }
}
