//! Popov function, KYP matrix and projected semidefiniteness.

use std::f64::consts::TAU;

use rand::Rng;

use crate::config::Tolerances;
use crate::error::{numerical, Result};
use crate::linalg::{self, block, blockdiag, cis, eye, zeros, CMat, C64};
use crate::palindromic::{build_palindromic, circle_angles};
use crate::pencil;
use crate::system::{self, controllability, FeedbackForm, WeightedSystem};

#[derive(Clone, Debug)]
pub struct PopovSample {
    pub omega: f64,
    pub value: CMat,
    pub defined: bool,
}

/// `[(zE - A)^{-1} B; I]`, or `None` when `zE - A` is singular.
pub fn transfer_column(w: &WeightedSystem, z: C64, tol: &Tolerances) -> Option<CMat> {
    let (n, m) = (w.n(), w.m());
    let pz = w.e() * z - w.a();
    if n > 0 && linalg::rank(&pz, tol.rank_derived) < n {
        return None;
    }
    let x = if n == 0 { zeros(0, m) } else { linalg::solve(&pz, w.b())? };
    Some(linalg::vstack(&[&x, &eye(m)]))
}

/// `Phi(z) = G(1/conj z)^* [Q S; S* R] G(z)`; on the unit circle this is the
/// usual Hermitian pullback.
pub fn popov_value(w: &WeightedSystem, z: C64, tol: &Tolerances) -> Option<CMat> {
    let wt = w.weight();
    if (z.norm() - 1.0).abs() < 1e-14 {
        let g = transfer_column(w, z, tol)?;
        return Some(linalg::herm(&(g.adjoint() * wt * g)));
    }
    if z.norm() == 0.0 {
        return None;
    }
    let g = transfer_column(w, z, tol)?;
    let gr = transfer_column(w, C64::new(1.0, 0.0) / z.conj(), tol)?;
    Some(gr.adjoint() * wt * g)
}

pub fn popov_eval(w: &WeightedSystem, omega: f64, tol: &Tolerances) -> PopovSample {
    match popov_value(w, cis(omega), tol) {
        Some(value) => PopovSample { omega, value, defined: true },
        None => PopovSample { omega, value: zeros(w.m(), w.m()), defined: false },
    }
}

/// Normal rank of the Popov function from 64 seeded unit-circle samples.
pub fn popov_normal_rank(w: &WeightedSystem, tol: &Tolerances) -> Result<usize> {
    let mut rng = tol.rng();
    let mut best = None;
    for _ in 0..64 {
        let s = popov_eval(w, rng.gen_range(0.0..TAU), tol);
        if s.defined {
            let r = linalg::rank(&s.value, tol.rank_derived);
            best = Some(best.map_or(r, |b: usize| b.max(r)));
        }
    }
    match best {
        Some(r) => Ok(r),
        None => numerical("Popov function undefined at every sample point"),
    }
}

/// `[A*PA - E*PE + Q, A*PB + S; B*PA + S*, B*PB + R]`.
pub fn kyp_matrix(w: &WeightedSystem, p: &CMat) -> CMat {
    let (e, a, b) = (w.e(), w.a(), w.b());
    let m11 = a.adjoint() * p * a - e.adjoint() * p * e + &w.q;
    let m12 = a.adjoint() * p * b + &w.s;
    let m22 = b.adjoint() * p * b + &w.r;
    linalg::herm(&block(&[vec![&m11, &m12], vec![&m12.adjoint(), &m22]]))
}

/// The pure-`P` part of the KYP matrix, which vanishes on the transfer column.
pub fn kyp_matrix_homogeneous(w: &WeightedSystem, p: &CMat) -> CMat {
    let (e, a, b) = (w.e(), w.a(), w.b());
    let m11 = a.adjoint() * p * a - e.adjoint() * p * e;
    let m12 = a.adjoint() * p * b;
    let m22 = b.adjoint() * p * b;
    block(&[vec![&m11, &m12], vec![&m12.adjoint(), &m22]])
}

/// `||G(1/conj z)^* M_0(P) G(z)||` relative to `(1 + ||P||)`; `None` off the
/// domain of the transfer function.
pub fn zero_kyp_residual(w: &WeightedSystem, p: &CMat, z: C64, tol: &Tolerances) -> Option<f64> {
    let g = transfer_column(w, z, tol)?;
    let zr = if (z.norm() - 1.0).abs() < 1e-14 { z } else { C64::new(1.0, 0.0) / z.conj() };
    let gr = transfer_column(w, zr, tol)?;
    let val = gr.adjoint() * kyp_matrix_homogeneous(w, p) * &g;
    Some(val.norm() / ((1.0 + p.norm()) * (1.0 + g.norm()) * (1.0 + gr.norm())))
}

#[derive(Clone, Debug, PartialEq)]
pub struct KypReport {
    pub feasible: bool,
    pub min_eig_on_v: f64,
}

/// Minimum eigenvalue of `V* M(P) V` with `V` an orthonormal basis of the
/// system space.
pub fn kyp_check(w: &WeightedSystem, p: &CMat, tol: &Tolerances) -> Result<KypReport> {
    let fef = system::feedback_form(w, tol)?;
    Ok(kyp_check_with(w, &fef, p, tol))
}

pub fn kyp_check_with(w: &WeightedSystem, fef: &FeedbackForm, p: &CMat, tol: &Tolerances) -> KypReport {
    let v = system::system_space(fef, tol);
    kyp_check_on(w, &v, p, tol)
}

pub fn kyp_check_on(w: &WeightedSystem, v: &CMat, p: &CMat, tol: &Tolerances) -> KypReport {
    let mm = kyp_matrix(w, p);
    let min = if v.ncols() == 0 { 0.0 } else { linalg::min_herm_eig(&linalg::herm(&(v.adjoint() * &mm * v))) };
    KypReport { feasible: min >= -tol.residual * (1.0 + mm.norm()), min_eig_on_v: min }
}

/// `P = W* diag(P11, 0) W`.
pub fn kyp_lift(fef: &FeedbackForm, p11: &CMat) -> CMat {
    let pf = blockdiag(&[p11, &zeros(fef.n() - fef.n1, fef.n() - fef.n1)]);
    linalg::herm(&(fef.w.adjoint() * pf * &fef.w))
}

/// 256 equispaced angles plus unit-circle eigenvalue angles shifted by
/// `±1e-6`, sorted.
pub fn default_grid(w: &WeightedSystem, tol: &Tolerances) -> Result<Vec<f64>> {
    let mut grid: Vec<f64> = (0..256).map(|k| TAU * k as f64 / 256.0).collect();
    for theta in unit_circle_angles(w, tol)? {
        for d in [-1e-6, 1e-6] {
            grid.push((theta + d).rem_euclid(TAU));
        }
    }
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    Ok(grid)
}

/// `default_grid` plus the unit-circle eigenvalue angles of the palindromic
/// pencil and the midpoints between neighbouring ones. Eigenvalues of the
/// Popov function can only change sign at those angles, so every sign region
/// is sampled.
pub fn refined_grid(w: &WeightedSystem, tol: &Tolerances) -> Result<Vec<f64>> {
    let mut grid = default_grid(w, tol)?;
    let angles: Vec<f64> = circle_angles(&build_palindromic(w), tol)?.into_iter().map(|(t, _)| t).collect();
    for (k, &t) in angles.iter().enumerate() {
        let next = if k + 1 < angles.len() { angles[k + 1] } else { angles[0] + TAU };
        grid.push(t);
        grid.push(((t + next) / 2.0).rem_euclid(TAU));
    }
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    Ok(grid)
}

/// Angles in `[0, 2pi)` of finite pencil eigenvalues within the circle band.
pub fn unit_circle_angles(w: &WeightedSystem, tol: &Tolerances) -> Result<Vec<f64>> {
    let p = w.sys.pencil();
    let band = tol.circle_band(p.norm());
    let mut out: Vec<f64> = pencil::eigenvalues(&p)?
        .into_iter()
        .flatten()
        .filter(|l| (l.norm() - 1.0).abs() < band)
        .map(|l| l.arg().rem_euclid(TAU))
        .collect();
    out.sort_by(|a, b| a.total_cmp(b));
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct PopovSweep {
    pub min_eig: f64,
    pub worst_omega: f64,
    pub points: usize,
    pub undefined: usize,
}

impl PopovSweep {
    pub fn nonnegative(&self, tol: &Tolerances, scale: f64) -> bool {
        self.min_eig >= -tol.residual * scale
    }
}

pub fn popov_sweep(w: &WeightedSystem, grid: &[f64], tol: &Tolerances) -> PopovSweep {
    let mut sweep = PopovSweep { min_eig: f64::INFINITY, worst_omega: f64::NAN, points: grid.len(), undefined: 0 };
    for &om in grid {
        let s = popov_eval(w, om, tol);
        if !s.defined {
            sweep.undefined += 1;
            continue;
        }
        let l = if w.m() == 0 { 0.0 } else { linalg::min_herm_eig(&s.value) };
        if l < sweep.min_eig {
            sweep.min_eig = l;
            sweep.worst_omega = om;
        }
    }
    sweep
}

#[derive(Clone, Debug)]
pub struct PopovCheckReport {
    pub passes: bool,
    pub sweep: PopovSweep,
    /// Largest zero-KYP residual over the defined grid points.
    pub zero_kyp_residual: f64,
}

/// Checks that a KYP solution forces a nonnegative Popov function on the grid.
pub fn kyp_implies_popov_check(w: &WeightedSystem, p: &CMat, grid: &[f64], tol: &Tolerances) -> PopovCheckReport {
    let sweep = popov_sweep(w, grid, tol);
    let zero = grid.iter().filter_map(|&om| zero_kyp_residual(w, p, cis(om), tol)).fold(0.0, f64::max);
    let passes = sweep.nonnegative(tol, 1.0 + w.weight().norm());
    PopovCheckReport { passes, sweep, zero_kyp_residual: zero }
}

#[derive(Clone, Debug, PartialEq)]
pub enum KypVerdict {
    /// Popov function nonnegative and the system R-controllable, so a KYP solution exists.
    Solvable,
    /// Popov function negative somewhere on the circle: no KYP solution.
    PopovNegative { omega: f64, min_eig: f64 },
    /// Popov function nonnegative but the system is not R-controllable.
    ExistenceNotGuaranteed,
}

pub fn kyp_verdict(w: &WeightedSystem, grid: &[f64], tol: &Tolerances) -> Result<KypVerdict> {
    let sweep = popov_sweep(w, grid, tol);
    if !sweep.nonnegative(tol, 1.0 + w.weight().norm()) {
        return Ok(KypVerdict::PopovNegative { omega: sweep.worst_omega, min_eig: sweep.min_eig });
    }
    if controllability(&w.sys, tol)?.r_controllable {
        Ok(KypVerdict::Solvable)
    } else {
        Ok(KypVerdict::ExistenceNotGuaranteed)
    }
}
