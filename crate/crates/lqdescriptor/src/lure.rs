//! Discrete-time Lur'e equations: verification, stabilizing solutions through
//! the BVD pencil, the lift from the explicit part, and deflating subspaces.

use std::f64::consts::TAU;

use rand::Rng;

use crate::config::Tolerances;
use crate::error::{invalid, numerical, unsupported, Error, Result};
use crate::linalg::{self, block, blockdiag, eye, zeros, CMat, C64};
use crate::palindromic::{build_bvd, build_palindromic};
use crate::pencil::{self, DeflatingReport, DeflatingSubspace, MatrixPencil};
use crate::popov::{kyp_check_on, kyp_matrix, popov_normal_rank};
use crate::system::{self, controllability, FeedbackForm, WeightedSystem};

/// `M(X) = [K L]* [K L]` on the system space, with `q` rows in `[K L]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LureSolution {
    pub x: CMat,
    pub k: CMat,
    pub l: CMat,
}

impl LureSolution {
    pub fn q(&self) -> usize {
        self.k.nrows()
    }

    /// `[K L]* [K L]`, invariant under left unitary factors.
    pub fn gram(&self) -> CMat {
        let kl = linalg::hstack(&[&self.k, &self.l]);
        kl.adjoint() * kl
    }

    fn check_shapes(&self, n: usize, m: usize) -> Result<()> {
        let q = self.q();
        if self.x.shape() != (n, n) || self.k.shape() != (q, n) || self.l.shape() != (q, m) {
            return invalid(format!(
                "solution shapes X {:?}, K {:?}, L {:?} do not fit n = {n}, m = {m}",
                self.x.shape(),
                self.k.shape(),
                self.l.shape()
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LureCertificate {
    /// `||V* (M(X) - [K L]*[K L]) V|| / (1 + ||[Q S; S* R]||)`.
    pub residual_on_v: f64,
    /// Normal rank of `[zE - A, -B; (z-1)K, (z-1)L]` equals `n + q`.
    pub rank_condition_ok: bool,
    pub stabilizing: bool,
    pub kyp_feasible: bool,
    pub hermitian: bool,
    pub q: usize,
    pub popov_rank: usize,
    pub normal_rank: usize,
}

impl LureCertificate {
    pub fn passes(&self, tol: &Tolerances) -> bool {
        self.residual_on_v <= tol.residual
            && self.rank_condition_ok
            && self.stabilizing
            && self.kyp_feasible
            && self.hermitian
            && self.q == self.popov_rank
    }
}

/// `[zE - A, -B; K, L]` as a pencil.
pub fn extended_pencil(w: &WeightedSystem, sol: &LureSolution) -> MatrixPencil {
    let (n, m, q) = (w.n(), w.m(), sol.q());
    let e = blockdiag(&[w.e(), &zeros(q, m)]);
    let e = if e.shape() == (n + q, n + m) { e } else { zeros(n + q, n + m) };
    let a = block(&[vec![w.a(), w.b()], vec![&(-&sol.k), &(-&sol.l)]]);
    MatrixPencil { e, a }
}

/// `[zE - A, -B; (z-1)K, (z-1)L]` as a pencil.
pub fn rank_pencil(w: &WeightedSystem, sol: &LureSolution) -> MatrixPencil {
    let e = block(&[vec![w.e(), &zeros(w.n(), w.m())], vec![&sol.k, &sol.l]]);
    let a = block(&[vec![w.a(), w.b()], vec![&sol.k, &sol.l]]);
    MatrixPencil { e, a }
}

fn pencil_normal_rank(p: &MatrixPencil, tol: &Tolerances) -> usize {
    match pencil::staircase_reduce(p, tol) {
        Ok(s) => s.normal_rank(),
        Err(_) => pencil::normal_rank(p, tol),
    }
}

/// Full row rank of `[lambda E - A, -B; K, L]` on the unit circle, at pencil
/// eigenvalues outside the open disk and at random points outside; also no
/// finite eigenvalue of the extended pencil outside the open disk.
pub fn is_stabilizing(w: &WeightedSystem, sol: &LureSolution, tol: &Tolerances) -> Result<bool> {
    let p = extended_pencil(w, sol);
    let rows = p.shape().0;
    let band = tol.circle_band(p.norm());
    let full = |l: C64| linalg::rank(&p.at(l), tol.rank_derived) == rows;
    let mut pts: Vec<C64> = (0..64).map(|k| linalg::cis(TAU * k as f64 / 64.0)).collect();
    for l in pencil::eigenvalues(&w.sys.pencil())?.into_iter().flatten() {
        if l.norm() >= 1.0 - band {
            pts.push(l);
        }
    }
    let mut rng = tol.rng();
    for _ in 0..10 {
        pts.push(C64::from_polar(rng.gen_range(1.05..4.0), rng.gen_range(0.0..TAU)));
    }
    if !pts.into_iter().all(full) {
        return Ok(false);
    }
    let spec = pencil::generalized_spectrum(&p, tol)?;
    Ok(spec.finite_eigenvalues.iter().all(|l| l.norm() < 1.0 - band))
}

pub fn lure_verify(w: &WeightedSystem, sol: &LureSolution, tol: &Tolerances) -> Result<LureCertificate> {
    let fef = system::feedback_form(w, tol)?;
    lure_verify_with(w, &fef, sol, tol)
}

pub fn lure_verify_with(w: &WeightedSystem, fef: &FeedbackForm, sol: &LureSolution, tol: &Tolerances) -> Result<LureCertificate> {
    let (n, m) = (w.n(), w.m());
    sol.check_shapes(n, m)?;
    let v = system::system_space(fef, tol);
    let diff = kyp_matrix(w, &sol.x) - sol.gram();
    let residual = (v.adjoint() * diff * &v).norm() / (1.0 + w.weight().norm());
    let normal_rank = pencil_normal_rank(&rank_pencil(w, sol), tol);
    let hermitian = (&sol.x - sol.x.adjoint()).norm() <= 1e-10 * (1.0 + sol.x.norm());
    Ok(LureCertificate {
        residual_on_v: residual,
        rank_condition_ok: normal_rank == n + sol.q(),
        stabilizing: is_stabilizing(w, sol, tol)?,
        kyp_feasible: kyp_check_on(w, &v, &sol.x, tol).feasible,
        hermitian,
        q: sol.q(),
        popov_rank: popov_normal_rank(w, tol)?,
        normal_rank,
    })
}

/// Factors `M = [K L]* [K L]` keeping eigenvalues above `1e-10 ||M||`.
pub fn factor_kyp(mm: &CMat, n: usize, q: usize, tol: &Tolerances) -> Result<(CMat, CMat)> {
    let (d, vecs) = linalg::herm_eig(mm);
    let scale = d.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if let Some(&lo) = d.first() {
        if lo < -tol.residual * (1.0 + scale) {
            return numerical(format!("KYP matrix has a negative eigenvalue {lo:.3e}; X does not solve the KYP inequality"));
        }
    }
    let keep: Vec<usize> = (0..d.len()).filter(|&i| d[i] > 1e-10 * scale).collect();
    if keep.len() != q {
        return numerical(format!("KYP matrix has rank {} but the Popov function has rank {q}", keep.len()));
    }
    let dim = mm.nrows();
    let kl = CMat::from_fn(q, dim, |i, j| vecs[(j, keep[q - 1 - i])].conj() * d[keep[q - 1 - i]].sqrt());
    Ok((kl.columns(0, n).into_owned(), kl.columns(n, dim - n).into_owned()))
}

/// Stabilizing solution for an explicit system (`E = I`).
pub fn lure_solve_ede(w: &WeightedSystem, tol: &Tolerances) -> Result<LureSolution> {
    let (n, m) = (w.n(), w.m());
    if (w.e() - eye(n)).norm() > 1e-12 * (1.0 + w.e().norm()) {
        return invalid("explicit solver needs E = I");
    }
    let q = popov_normal_rank(w, tol)?;
    // Inputs with B u = 0, S u = 0 and R u = 0 play no role.
    let col = linalg::vstack(&[w.b(), &w.s, &w.r]);
    let dead = linalg::null_space(&col, tol.rank_derived);
    let live = linalg::unitary_completion(&dead).columns(dead.ncols(), m - dead.ncols()).into_owned();
    let wl = if dead.ncols() > 0 {
        WeightedSystem {
            sys: system::DescriptorSystem::unchecked(eye(n), w.a().clone(), w.b() * &live),
            q: w.q.clone(),
            s: &w.s * &live,
            r: linalg::herm(&(live.adjoint() * &w.r * &live)),
        }
    } else {
        w.clone()
    };
    let ml = wl.m();
    if q > ml {
        return numerical(format!("Popov rank {q} exceeds the number of active inputs {ml}"));
    }
    let x = stable_solution(&wl, q < ml, tol)?;
    let x = linalg::herm(&x);
    let mm = kyp_matrix(w, &x);
    let (k, l) = factor_kyp(&mm, n, q, tol)?;
    Ok(LureSolution { x, k, l })
}

/// Rows of the BVD pencil orthogonal to its constant input column, restricted
/// to the `(mu, x)` columns.
fn compressed_bvd(w: &WeightedSystem, tol: &Tolerances) -> MatrixPencil {
    let n = w.n();
    let bvd = build_bvd(w);
    let col = linalg::vstack(&[w.b(), &w.s, &w.r]);
    let range = linalg::range_basis(&col, tol.rank_derived);
    let u = linalg::unitary_completion(&range);
    let r = range.ncols();
    let top = u.columns(r, u.ncols() - r).adjoint();
    MatrixPencil {
        e: &top * bvd.ecal.columns(0, 2 * n),
        a: &top * bvd.acal.columns(0, 2 * n),
    }
}

fn circle_check(lambdas: &[Option<C64>], band: f64) -> Result<()> {
    for l in lambdas.iter().flatten() {
        if (l.norm() - 1.0).abs() < band {
            return unsupported(format!("eigenvalue {:.6}{:+.6}i on the unit circle in the selection set", l.re, l.im));
        }
    }
    Ok(())
}

fn x_from_basis(y: &CMat, n: usize) -> Result<CMat> {
    let ymu = y.rows(0, n).into_owned();
    let yx = y.rows(n, n).into_owned();
    if n > 0 && linalg::rank(&yx, 1e-10) < n {
        return unsupported("stable subspace is not a graph over the state");
    }
    let inv = linalg::inverse(&yx).ok_or_else(|| Error::UnsupportedStructure("state block of the subspace singular".into()))?;
    Ok(-(ymu * inv))
}

fn stable_solution(w: &WeightedSystem, singular: bool, tol: &Tolerances) -> Result<CMat> {
    let n = w.n();
    if n == 0 {
        return Ok(zeros(0, 0));
    }
    let p = compressed_bvd(w, tol);
    if p.shape() != (2 * n, 2 * n) {
        return numerical("compressed BVD pencil is not square");
    }
    let band = tol.circle_band(p.norm());
    if !singular {
        let mut g = linalg::qz(&p.e, &p.a)?;
        circle_check(&g.eigenvalues(), band)?;
        let k = g.reorder_by(|l| matches!(l, Some(v) if v.norm() < 1.0));
        if k != n {
            return unsupported(format!("{k} stable eigenvalues in the BVD pencil, expected {n}"));
        }
        return x_from_basis(&g.right_subspace(n), n);
    }
    // Right-singular part plus the stable part of the regular block.
    let st = pencil::staircase_reduce(&p, tol)?;
    let (_, c1) = st.right_block;
    let gsz = st.regular_size;
    let mut g = linalg::qz(&st.regular.e, &st.regular.a)?;
    circle_check(&g.eigenvalues(), band)?;
    let k = g.reorder_by(|l| matches!(l, Some(v) if v.norm() < 1.0));
    if c1 + k != n {
        return unsupported(format!("singular BVD structure gives a {}-dimensional selection, expected {n}", c1 + k));
    }
    let right_reg = st.right.columns(c1, gsz) * g.right_subspace(k);
    let y = linalg::hstack(&[&st.right.columns(0, c1).into_owned(), &right_reg]);
    x_from_basis(&y, n)
}

/// Lifts an explicit-part solution to the original coordinates:
/// `X = W* diag(X11, 0) W`, `K = ([K1, 0] - L F T) T^{-1}`.
pub fn lift_solution(fef: &FeedbackForm, ede: &LureSolution) -> Result<LureSolution> {
    let n = fef.n();
    let q = ede.q();
    let rest = n - fef.n1;
    let xf = blockdiag(&[&ede.x, &zeros(rest, rest)]);
    let x = linalg::herm(&(fef.w.adjoint() * xf * &fef.w));
    let kf = linalg::hstack(&[&ede.k, &zeros(q, rest)]);
    let tinv = linalg::inverse(&fef.t).ok_or_else(|| Error::NumericalFailure("T singular".into()))?;
    let k = (kf - &ede.l * &fef.f * &fef.t) * tinv;
    Ok(LureSolution { x, k, l: ede.l.clone() })
}

pub fn lure_solve(w: &WeightedSystem, tol: &Tolerances) -> Result<LureSolution> {
    lure_solve_with(w, None, tol)
}

/// As [`lure_solve`] with an optional feedback used in the normal form.
pub fn lure_solve_with(w: &WeightedSystem, f: Option<&CMat>, tol: &Tolerances) -> Result<LureSolution> {
    if !controllability(&w.sys, tol)?.i_controllable {
        return unsupported("system is not I-controllable");
    }
    let fef = system::feedback_form_with(w, f, tol)?;
    if fef.n3 != 0 {
        return unsupported("normal form keeps a higher-index part");
    }
    let ede = lure_solve_ede(&fef.ede, tol)?;
    lift_solution(&fef, &ede)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubspaceKind {
    Palindromic,
    Bvd,
}

#[derive(Clone, Debug)]
pub struct SolutionSubspace {
    pub kind: SubspaceKind,
    pub subspace: DeflatingSubspace,
    pub report: DeflatingReport,
    /// Deviation of the multiplier rows from `X(A-E), XB` (palindromic) or
    /// `-XE, 0` (BVD); its columns lie in `ker E*`.
    pub g: CMat,
    /// `||E* G||` relative to `1 + ||G||`.
    pub g_kernel_residual: f64,
    /// `||Y* (Acal* - Acal) Y||` for the palindromic kind.
    pub neutrality: Option<f64>,
}

pub fn deflating_from_solution(
    w: &WeightedSystem,
    fef: &FeedbackForm,
    sol: &LureSolution,
    kind: SubspaceKind,
    tol: &Tolerances,
) -> Result<SolutionSubspace> {
    let (n, m) = (w.n(), w.m());
    sol.check_shapes(n, m)?;
    if fef.n3 != 0 {
        return unsupported("deflating subspace needs an I-controllable normal form");
    }
    let (n1, n2) = (fef.n1, fef.n2);
    let winv = linalg::inverse(&fef.w).ok_or_else(|| Error::NumericalFailure("W singular".into()))?;
    let xf = winv.adjoint() * &sol.x * &winv;
    let x11 = xf.view((0, 0), (n1, n1)).into_owned();
    let t_f = fef.t_f();
    let t_f_inv = linalg::inverse(&t_f).ok_or_else(|| Error::NumericalFailure("T_F singular".into()))?;
    let u_f = blockdiag(&[&fef.w.adjoint(), &t_f]);

    let mu1 = match kind {
        SubspaceKind::Palindromic => linalg::hstack(&[&(&x11 * (&fef.a11 - eye(n1))), &zeros(n1, n2), &(&x11 * &fef.b1)]),
        SubspaceKind::Bvd => linalg::hstack(&[&(-&x11), &zeros(n1, n2), &zeros(n1, m)]),
    };
    let mu2 = linalg::hstack(&[&zeros(n2, n1), &(-eye(n2)), &(-&fef.b2)]);
    let x1 = linalg::hstack(&[&eye(n1), &zeros(n1, n2), &zeros(n1, m)]);
    let x2 = linalg::hstack(&[&zeros(n2, n1), &zeros(n2, n2), &(-&fef.b2)]);
    let uu = linalg::hstack(&[&zeros(m, n1), &zeros(m, n2), &eye(m)]);
    let yhat = linalg::vstack(&[&mu1, &mu2, &x1, &x2, &uu]);
    let y = u_f * yhat * t_f_inv;

    let big = match kind {
        SubspaceKind::Palindromic => build_palindromic(w).pencil(),
        SubspaceKind::Bvd => build_bvd(w).pencil(),
    };
    // Smallest Z with im [E Y, A Y] in im Z; the reduced pencil follows.
    let ey = &big.e * &y;
    let ay = &big.a * &y;
    let z = linalg::range_basis(&linalg::hstack(&[&ey, &ay]), tol.rank_derived);
    if z.ncols() != n + sol.q() {
        return numerical(format!("image of the subspace has dimension {}, expected {}", z.ncols(), n + sol.q()));
    }
    let reduced = MatrixPencil { e: z.adjoint() * ey, a: z.adjoint() * ay };
    let subspace = DeflatingSubspace { y, z, reduced };
    let report = pencil::verify_deflating(&big, &subspace, tol);
    if !report.passes(1e-8) || report.rank_y != n + m {
        return numerical(format!(
            "deflating subspace check failed: residual {:.3e}, rank {} of {}, reduced normal rank {} of {}",
            report.residual,
            report.rank_y,
            n + m,
            report.reduced_normal_rank,
            report.reduced_rows
        ));
    }
    let ymu = subspace.y.rows(0, n).into_owned();
    let base = match kind {
        SubspaceKind::Palindromic => linalg::hstack(&[&(&sol.x * (w.a() - w.e())), &(&sol.x * w.b())]),
        SubspaceKind::Bvd => linalg::hstack(&[&(-(&sol.x * w.e())), &zeros(n, m)]),
    };
    let g = ymu - base;
    let g_kernel_residual = (w.e().adjoint() * &g).norm() / (1.0 + g.norm());
    if g_kernel_residual > 1e-8 {
        return numerical(format!("multiplier correction leaves ker E* (residual {g_kernel_residual:.3e})"));
    }
    let neutrality = match kind {
        SubspaceKind::Palindromic => {
            let acal = build_palindromic(w).acal;
            let y = &subspace.y;
            Some((y.adjoint() * (acal.adjoint() - &acal) * y).norm() / (1.0 + acal.norm() * y.norm() * y.norm()))
        }
        SubspaceKind::Bvd => None,
    };
    Ok(SolutionSubspace { kind, subspace, report, g, g_kernel_residual, neutrality })
}
