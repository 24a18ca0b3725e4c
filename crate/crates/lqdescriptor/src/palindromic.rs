//! Palindromic and BVD pencils, inertia along lines through the origin,
//! unit-circle inertia sweeps and the palindromic block census.

use std::f64::consts::TAU;

use crate::config::Tolerances;
use crate::error::{invalid, numerical, Result};
use crate::linalg::{self, block, zeros, CMat, C64, I};
use crate::pencil::{self, MatrixPencil};
use crate::system::WeightedSystem;

/// `z Acal* - Acal` with `Acal = [0, A, B; E*, Q, S; 0, S*, R]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PalindromicPencil {
    pub acal: CMat,
}

impl PalindromicPencil {
    pub fn dim(&self) -> usize {
        self.acal.nrows()
    }

    pub fn pencil(&self) -> MatrixPencil {
        MatrixPencil { e: self.acal.adjoint(), a: self.acal.clone() }
    }

    pub fn at(&self, z: C64) -> CMat {
        self.acal.adjoint() * z - &self.acal
    }
}

/// `z Ecal - Acal` with `Ecal = [0, E, 0; A*, 0, 0; B*, 0, 0]` and
/// `Acal = [0, A, B; E*, Q, S; 0, S*, R]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BvdPencil {
    pub ecal: CMat,
    pub acal: CMat,
}

impl BvdPencil {
    pub fn pencil(&self) -> MatrixPencil {
        MatrixPencil { e: self.ecal.clone(), a: self.acal.clone() }
    }
}

fn coupling(w: &WeightedSystem) -> CMat {
    let (n, m) = (w.n(), w.m());
    block(&[
        vec![&zeros(n, n), w.a(), w.b()],
        vec![&w.e().adjoint(), &w.q, &w.s],
        vec![&zeros(m, n), &w.s.adjoint(), &w.r],
    ])
}

pub fn build_palindromic(w: &WeightedSystem) -> PalindromicPencil {
    PalindromicPencil { acal: coupling(w) }
}

pub fn build_bvd(w: &WeightedSystem) -> BvdPencil {
    let (n, m) = (w.n(), w.m());
    let ecal = block(&[
        vec![&zeros(n, n), w.e(), &zeros(n, m)],
        vec![&w.a().adjoint(), &zeros(n, n), &zeros(n, m)],
        vec![&w.b().adjoint(), &zeros(m, n), &zeros(m, m)],
    ]);
    BvdPencil { ecal, acal: coupling(w) }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct InertiaTriple {
    pub n_plus: usize,
    pub n_zero: usize,
    pub n_minus: usize,
}

impl InertiaTriple {
    pub fn new(n_plus: usize, n_zero: usize, n_minus: usize) -> Self {
        InertiaTriple { n_plus, n_zero, n_minus }
    }

    pub fn dim(&self) -> usize {
        self.n_plus + self.n_zero + self.n_minus
    }

    pub fn signature(&self) -> i64 {
        self.n_plus as i64 - self.n_minus as i64
    }
}

impl std::ops::Add for InertiaTriple {
    type Output = InertiaTriple;

    fn add(self, o: InertiaTriple) -> InertiaTriple {
        InertiaTriple::new(self.n_plus + o.n_plus, self.n_zero + o.n_zero, self.n_minus + o.n_minus)
    }
}

impl std::fmt::Display for InertiaTriple {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.n_plus, self.n_zero, self.n_minus)
    }
}

/// Inertia of a Hermitian matrix; eigenvalues below `dim * rank_derived * max(1, ||H||)`
/// in modulus count as zero.
pub fn hermitian_inertia(h: &CMat, tol: &Tolerances) -> InertiaTriple {
    let d = h.nrows();
    let tau = d.max(1) as f64 * tol.rank_derived * h.norm().max(1.0);
    let mut t = InertiaTriple::new(0, 0, 0);
    for l in linalg::herm_eigvals(h) {
        if l > tau {
            t.n_plus += 1;
        } else if l < -tau {
            t.n_minus += 1;
        } else {
            t.n_zero += 1;
        }
    }
    t
}

/// Inertia of `e^{-i phi} M`, which must be Hermitian.
pub fn inertia_along(mtx: &CMat, phi: f64, tol: &Tolerances) -> Result<InertiaTriple> {
    if !mtx.is_square() {
        return invalid("inertia needs a square matrix");
    }
    let h = mtx * linalg::cis(-phi);
    let skew = (&h - h.adjoint()).norm();
    if skew > 1e-10 * (1.0 + h.norm()) {
        return invalid(format!("matrix is not quasi-Hermitian along {phi} (skew part {skew:.3e})"));
    }
    Ok(hermitian_inertia(&linalg::herm(&h), tol))
}

/// `M(omega) = i e^{-i omega/2} Acal + (i e^{-i omega/2} Acal)*`.
pub fn hermitian_at(p: &PalindromicPencil, omega: f64) -> CMat {
    let x = &p.acal * (I * linalg::cis(-omega / 2.0));
    linalg::herm(&(&x + x.adjoint())) * C64::new(1.0, 0.0)
}

pub fn inertia_at_omega(p: &PalindromicPencil, omega: f64, tol: &Tolerances) -> InertiaTriple {
    hermitian_inertia(&hermitian_at(p, omega), tol)
}

/// Angles in `[0, 2pi)` of the unit-circle eigenvalues of the pencil, merged
/// when closer than `1e-6`, with multiplicities.
pub fn circle_angles(p: &PalindromicPencil, tol: &Tolerances) -> Result<Vec<(f64, usize)>> {
    let spec = pencil::generalized_spectrum(&p.pencil(), tol)?;
    let band = tol.circle_band(p.pencil().norm());
    let mut th: Vec<f64> = spec
        .finite_eigenvalues
        .iter()
        .filter(|l| (l.norm() - 1.0).abs() < band.max(1e-6))
        .map(|l| l.arg().rem_euclid(TAU))
        .map(|t| if t < 1e-6 || TAU - t < 1e-6 { 0.0 } else { t })
        .collect();
    th.sort_by(|a, b| a.total_cmp(b));
    let mut out: Vec<(f64, usize)> = Vec::new();
    for t in th {
        match out.last_mut() {
            Some((u, k)) if t - *u < 1e-6 => *k += 1,
            _ => out.push((t, 1)),
        }
    }
    Ok(out)
}

/// Offset for two-sided jump measurement around `theta`.
fn jump_offset(theta: f64, angles: &[f64]) -> f64 {
    let mut gap = f64::INFINITY;
    for &a in angles {
        let d = (a - theta).rem_euclid(TAU);
        let d = d.min(TAU - d);
        if d > 1e-9 {
            gap = gap.min(d);
        }
    }
    (1e-4f64).min(gap / 2.0)
}

/// Sweep over `grid` plus every unit-circle eigenvalue angle and its two
/// neighbours at the jump offset; sorted by `omega`.
pub fn inertia_sweep(p: &PalindromicPencil, grid: &[f64], tol: &Tolerances) -> Result<Vec<(f64, InertiaTriple)>> {
    let angles: Vec<f64> = circle_angles(p, tol)?.into_iter().map(|(t, _)| t).collect();
    let mut pts: Vec<f64> = grid.to_vec();
    for &t in &angles {
        let d = jump_offset(t, &angles);
        pts.push(t);
        pts.push((t - d).rem_euclid(TAU));
        pts.push(t + d);
    }
    pts.retain(|x| x.is_finite());
    pts.sort_by(|a, b| a.total_cmp(b));
    pts.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
    Ok(pts.into_iter().map(|om| (om, inertia_at_omega(p, om, tol))).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AngleCensus {
    pub theta: f64,
    pub multiplicity: usize,
    /// Net count of sign-characteristic `+1` minus `-1` blocks of odd-jump type.
    pub net_p2: i64,
    pub before: InertiaTriple,
    pub at: InertiaTriple,
    pub after: InertiaTriple,
    /// Eigenvalue structure at this angle that leaves the signature unchanged.
    pub zero_jump_structure: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PkcfCensus {
    pub dim: usize,
    pub normal_rank: usize,
    pub p5_count: usize,
    pub unit_circle: Vec<AngleCensus>,
    /// `(lambda, 1/conj lambda)` with `|lambda| < 1`; `None` stands for infinity.
    pub off_circle_pairs: Vec<(C64, Option<C64>)>,
    pub unpaired: Vec<Option<C64>>,
    pub q: usize,
    pub condition_i: bool,
    pub condition_ii: bool,
    pub positivity_certified: bool,
}

impl PkcfCensus {
    pub fn net_at_zero(&self) -> i64 {
        self.unit_circle.iter().find(|a| a.theta == 0.0).map_or(0, |a| a.net_p2)
    }
}

fn census_at(p: &PalindromicPencil, theta: f64, mult: usize, angles: &[f64], tol: &Tolerances) -> Result<AngleCensus> {
    let d = jump_offset(theta, angles);
    // continuous omega on both sides, so theta = 0 uses a negative left point
    let before = inertia_at_omega(p, theta - d, tol);
    let after = inertia_at_omega(p, theta + d, tol);
    let at = inertia_at_omega(p, theta, tol);
    let jump = after.signature() - before.signature();
    if jump % 2 != 0 || before.n_zero != after.n_zero {
        return numerical(format!(
            "jump measurement ambiguous at angle {theta:.6} ({before} -> {after}); refine the tolerances or separate clustered eigenvalues"
        ));
    }
    let net = jump / 2;
    Ok(AngleCensus {
        theta,
        multiplicity: mult,
        net_p2: net,
        before,
        at,
        after,
        zero_jump_structure: mult as i64 > net.abs(),
    })
}

pub fn pkcf_census(p: &PalindromicPencil, q: usize, tol: &Tolerances) -> Result<PkcfCensus> {
    let pp = p.pencil();
    let spec = pencil::generalized_spectrum(&pp, tol)?;
    let dim = p.dim();
    let mut circ = circle_angles(p, tol)?;
    if circ.first().is_none_or(|(t, _)| *t != 0.0) {
        circ.insert(0, (0.0, 0));
    }
    let angles: Vec<f64> = circ.iter().map(|(t, _)| *t).collect();
    let mut unit_circle = Vec::with_capacity(circ.len());
    for &(t, k) in &circ {
        unit_circle.push(census_at(p, t, k, &angles, tol)?);
    }

    let band = tol.circle_band(pp.norm()).max(1e-6);
    let mut inside: Vec<C64> = Vec::new();
    let mut outside: Vec<Option<C64>> = vec![None; spec.infinite_multiplicity];
    for l in &spec.finite_eigenvalues {
        if l.norm() < 1.0 - band {
            inside.push(*l);
        } else if l.norm() > 1.0 + band {
            outside.push(Some(*l));
        }
    }
    let mut pairs = Vec::new();
    let mut unpaired = Vec::new();
    for l in inside {
        let target = if l.norm() < 1e-8 { None } else { Some(C64::new(1.0, 0.0) / l.conj()) };
        let pos = outside.iter().position(|o| match (o, target) {
            (None, None) => true,
            (Some(x), Some(t)) => (x - t).norm() < 1e-6 * (1.0 + t.norm()),
            _ => false,
        });
        match pos {
            Some(i) => pairs.push((l, outside.remove(i))),
            None => unpaired.push(Some(l)),
        }
    }
    unpaired.extend(outside);

    let condition_i = unit_circle.iter().all(|a| a.theta == 0.0 || a.net_p2 == 0);
    let condition_ii = unit_circle.iter().find(|a| a.theta == 0.0).map_or(q == 0, |a| a.net_p2 == q as i64);
    Ok(PkcfCensus {
        dim,
        normal_rank: spec.normal_rank,
        p5_count: dim - spec.normal_rank,
        unit_circle,
        off_circle_pairs: pairs,
        unpaired,
        q,
        condition_i,
        condition_ii,
        positivity_certified: condition_i && condition_ii,
    })
}

/// `rk(Acal* - Acal)`, which equals `2 rk [E - A, B]`.
pub fn rank_at_one(p: &PalindromicPencil, tol: &Tolerances) -> usize {
    linalg::rank(&p.at(C64::new(1.0, 0.0)), tol.rank_derived)
}
