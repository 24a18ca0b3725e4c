//! Matrix pencils `zE - A`: regularity, spectra, staircase reduction and
//! deflating-subspace checks.

use rand::Rng;

use crate::config::Tolerances;
use crate::error::{invalid, numerical, Result};
use crate::linalg::{self, eye, full_svd, qz, zeros, CMat, C64, ONE, ZERO};

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixPencil {
    pub e: CMat,
    pub a: CMat,
}

impl MatrixPencil {
    pub fn new(e: CMat, a: CMat) -> Result<Self> {
        if e.shape() != a.shape() {
            return invalid(format!("pencil shapes differ: E is {:?}, A is {:?}", e.shape(), a.shape()));
        }
        if !linalg::is_finite(&e) || !linalg::is_finite(&a) {
            return invalid("pencil has non-finite entries");
        }
        Ok(MatrixPencil { e, a })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.e.shape()
    }

    pub fn is_square(&self) -> bool {
        self.e.nrows() == self.e.ncols()
    }

    /// `lambda E - A`.
    pub fn at(&self, lambda: C64) -> CMat {
        &self.e * lambda - &self.a
    }

    /// Frobenius norm of the coefficient pair.
    pub fn norm(&self) -> f64 {
        (self.e.norm_squared() + self.a.norm_squared()).sqrt()
    }

    pub fn transpose(&self) -> MatrixPencil {
        MatrixPencil { e: self.e.transpose(), a: self.a.transpose() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizedSpectrum {
    pub finite_eigenvalues: Vec<C64>,
    pub infinite_multiplicity: usize,
    pub normal_rank: usize,
    pub index: usize,
}

/// Kronecker block sizes outside the finite spectrum.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SingularStructure {
    /// Parameters `k` of the `k x (k+1)` blocks (right minimal indices).
    pub right_indices: Vec<usize>,
    /// Parameters `k` of the `(k+1) x k` blocks (left minimal indices).
    pub left_indices: Vec<usize>,
    /// Sizes of the nilpotent blocks of the regular part.
    pub infinite_blocks: Vec<usize>,
}

impl SingularStructure {
    pub fn is_empty(&self) -> bool {
        self.right_indices.is_empty() && self.left_indices.is_empty()
    }
}

/// Result of the staircase reduction: `left* (zE - A) right` is block upper
/// triangular with a right-singular block, a square regular block and a
/// left-singular block on the diagonal.
#[derive(Clone, Debug)]
pub struct Staircase {
    pub left: CMat,
    pub right: CMat,
    pub reduced: MatrixPencil,
    /// `(rows, cols)` of the leading right-singular block.
    pub right_block: (usize, usize),
    /// Size of the regular block, which starts at `right_block`.
    pub regular_size: usize,
    pub regular: MatrixPencil,
    pub structure: SingularStructure,
    /// Norm of the entries discarded below the block diagonal, relative to the pencil.
    pub reconstruction_residual: f64,
}

impl Staircase {
    pub fn normal_rank(&self) -> usize {
        let (m, _) = self.reduced.shape();
        m - self.structure.left_indices.len()
    }
}

struct Pass {
    left: CMat,
    right: CMat,
    e: CMat,
    a: CMat,
    steps: Vec<(usize, usize)>,
    rows: usize,
    cols: usize,
}

/// Column compression of `E` followed by row compression of the matching
/// columns of `A`, repeated until the remaining `E` block has full column rank.
fn right_pass(e: &CMat, a: &CMat, tau: f64) -> Pass {
    let (m, n) = e.shape();
    let mut e = e.clone();
    let mut a = a.clone();
    let mut left = eye(m);
    let mut right = eye(n);
    let (mut r0, mut c0) = (0, 0);
    let mut steps = Vec::new();
    while c0 < n {
        let sub = e.view((r0, c0), (m - r0, n - c0)).into_owned();
        let f = full_svd(&sub);
        let rho = f.s.iter().filter(|&&s| s > tau).count();
        let nu = (n - c0) - rho;
        if nu == 0 {
            break;
        }
        let k = n - c0;
        let vperm = CMat::from_fn(k, k, |i, j| f.v[(i, (j + rho) % k)]);
        let tail_e = e.columns(c0, k) * &vperm;
        e.columns_mut(c0, k).copy_from(&tail_e);
        let tail_a = a.columns(c0, k) * &vperm;
        a.columns_mut(c0, k).copy_from(&tail_a);
        let tail_r = right.columns(c0, k) * &vperm;
        right.columns_mut(c0, k).copy_from(&tail_r);
        e.view_mut((r0, c0), (m - r0, nu)).fill(ZERO);

        let sub_a = a.view((r0, c0), (m - r0, nu)).into_owned();
        let g = full_svd(&sub_a);
        let mu = g.s.iter().filter(|&&s| s > tau).count();
        if m > r0 {
            let uh = g.u.adjoint();
            let rows_e = &uh * e.rows(r0, m - r0);
            e.rows_mut(r0, m - r0).copy_from(&rows_e);
            let rows_a = &uh * a.rows(r0, m - r0);
            a.rows_mut(r0, m - r0).copy_from(&rows_a);
            let cols_l = left.columns(r0, m - r0) * &g.u;
            left.columns_mut(r0, m - r0).copy_from(&cols_l);
            a.view_mut((r0 + mu, c0), (m - r0 - mu, nu)).fill(ZERO);
        }
        steps.push((nu, mu));
        r0 += mu;
        c0 += nu;
    }
    Pass { left, right, e, a, steps, rows: r0, cols: c0 }
}

/// Kronecker counts from staircase step dimensions `(nu_i, mu_i)`:
/// returns (minimal indices, nilpotent block sizes).
fn step_counts(steps: &[(usize, usize)]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut minimal = Vec::new();
    let mut nilpotent = Vec::new();
    for (i, &(nu, mu)) in steps.iter().enumerate() {
        if mu > nu {
            return numerical(format!("staircase step {i} has more rows ({mu}) than columns ({nu})"));
        }
        for _ in 0..(nu - mu) {
            minimal.push(i);
        }
        let next_nu = steps.get(i + 1).map(|s| s.0).unwrap_or(0);
        if next_nu > mu {
            return numerical(format!("staircase step {} widens ({next_nu} > {mu})", i + 1));
        }
        for _ in 0..(mu - next_nu) {
            nilpotent.push(i + 1);
        }
    }
    Ok((minimal, nilpotent))
}

fn staircase_tau(p: &MatrixPencil, tol: &Tolerances) -> f64 {
    let (m, n) = p.shape();
    m.max(n).max(1) as f64 * tol.rank_derived * p.norm()
}

/// Infinite-eigenvalue block sizes of a square regular pencil.
pub fn infinite_structure(p: &MatrixPencil, tol: &Tolerances) -> Result<Vec<usize>> {
    let pass = right_pass(&p.e, &p.a, staircase_tau(p, tol));
    let (minimal, nilpotent) = step_counts(&pass.steps)?;
    if !minimal.is_empty() {
        return numerical("pencil treated as regular has a singular part");
    }
    Ok(nilpotent)
}

pub fn staircase_reduce(p: &MatrixPencil, tol: &Tolerances) -> Result<Staircase> {
    let (m, n) = p.shape();
    let tau = staircase_tau(p, tol);
    let en = p.e.norm();
    let an = p.a.norm();
    let radius = if en > 0.0 { (an / en).max(1e-3) } else { 1.0 };
    let mut rng = tol.rng();
    let mut last_err = None;
    for _attempt in 0..4 {
        let lambda0 = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * radius;
        // Moebius image: shifts the point lambda0 to infinity so the first pass
        // only peels off right-singular blocks.
        let e_hat = &p.e * lambda0 - &p.a;
        let a_hat = -p.e.clone();
        let tau_hat = tau * (1.0 + lambda0.norm());
        let p1 = right_pass(&e_hat, &a_hat, tau_hat);
        let (right_idx, nil1) = match step_counts(&p1.steps) {
            Ok(v) => v,
            Err(err) => {
                last_err = Some(err);
                continue;
            }
        };
        if !nil1.is_empty() {
            last_err = Some(crate::error::Error::NumericalFailure("shift point hit an eigenvalue".into()));
            continue;
        }
        let (r1, c1) = (p1.rows, p1.cols);
        let rem_e = p1.e.view((r1, c1), (m - r1, n - c1)).transpose();
        let rem_a = p1.a.view((r1, c1), (m - r1, n - c1)).transpose();
        let p2 = right_pass(&rem_e, &rem_a, tau_hat);
        let (left_idx, nil2) = match step_counts(&p2.steps) {
            Ok(v) => v,
            Err(err) => {
                last_err = Some(err);
                continue;
            }
        };
        if !nil2.is_empty() {
            last_err = Some(crate::error::Error::NumericalFailure("shift point hit an eigenvalue".into()));
            continue;
        }
        let (r2, c2) = (p2.rows, p2.cols);
        let g = (m - r1) - c2;
        if g != (n - c1) - r2 {
            last_err = Some(crate::error::Error::NumericalFailure(format!(
                "regular block is not square ({} x {})",
                g,
                (n - c1) - r2
            )));
            continue;
        }
        // Reorder the transposed second pass so the regular block comes first.
        let mr = m - r1;
        let nc = n - c1;
        let row_perm = CMat::from_fn(mr, mr, |i, j| if j == (i + c2) % mr { ONE } else { ZERO });
        let col_perm = CMat::from_fn(nc, nc, |i, j| if i == (j + r2) % nc { ONE } else { ZERO });
        let u_rem = p2.right.map(|z| z.conj()) * row_perm.transpose();
        let v_rem = p2.left.map(|z| z.conj()) * &col_perm;
        let left = &p1.left * linalg::blockdiag(&[&eye(r1), &u_rem]);
        let right = &p1.right * linalg::blockdiag(&[&eye(c1), &v_rem]);
        let mut re = left.adjoint() * &p.e * &right;
        let mut ra = left.adjoint() * &p.a * &right;
        let mut dropped = 0.0f64;
        for mat in [&mut re, &mut ra] {
            let lower1 = mat.view((r1, 0), (m - r1, c1)).norm();
            let lower2 = mat.view((r1 + g, c1), (m - r1 - g, g)).norm();
            dropped = dropped.max(lower1).max(lower2);
            mat.view_mut((r1, 0), (m - r1, c1)).fill(ZERO);
            mat.view_mut((r1 + g, c1), (m - r1 - g, g)).fill(ZERO);
        }
        let regular = MatrixPencil {
            e: re.view((r1, c1), (g, g)).into_owned(),
            a: ra.view((r1, c1), (g, g)).into_owned(),
        };
        let infinite_blocks = infinite_structure(&regular, tol)?;
        return Ok(Staircase {
            left,
            right,
            reduced: MatrixPencil { e: re, a: ra },
            right_block: (r1, c1),
            regular_size: g,
            regular,
            structure: SingularStructure { right_indices: right_idx, left_indices: left_idx, infinite_blocks },
            reconstruction_residual: dropped / (1.0 + p.norm()),
        });
    }
    Err(last_err.unwrap_or_else(|| crate::error::Error::NumericalFailure("staircase reduction failed".into())))
}

/// Sample points for rank tests: seeded, spread around the unit circle.
pub fn sample_points(tol: &Tolerances, count: usize) -> Vec<C64> {
    let mut rng = tol.rng();
    (0..count)
        .map(|_| C64::from_polar(rng.gen_range(0.3..3.0), rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect()
}

/// Maximum pointwise rank over seeded sample points.
pub fn normal_rank_sampled(p: &MatrixPencil, tol: &Tolerances, count: usize) -> usize {
    let scale = p.norm();
    sample_points(tol, count)
        .into_iter()
        .map(|l| {
            let m = p.at(l);
            let tau = linalg::rank_threshold(m.shape(), scale * (1.0 + l.norm()), tol.rank_derived);
            linalg::rank_abs(&m, tau)
        })
        .max()
        .unwrap_or(0)
}

pub fn normal_rank(p: &MatrixPencil, tol: &Tolerances) -> usize {
    normal_rank_sampled(p, tol, 20)
}

pub fn is_regular(p: &MatrixPencil, tol: &Tolerances) -> Result<bool> {
    if !p.is_square() {
        return invalid(format!("regularity needs a square pencil, got {:?}", p.shape()));
    }
    let n = p.shape().0;
    let sampled = normal_rank_sampled(p, tol, 20) == n;
    let st = staircase_reduce(p, tol)?;
    let structural = st.structure.is_empty();
    if sampled != structural {
        return numerical("sampled determinant and staircase disagree on regularity");
    }
    Ok(sampled)
}

pub fn generalized_spectrum(p: &MatrixPencil, tol: &Tolerances) -> Result<GeneralizedSpectrum> {
    let st = staircase_reduce(p, tol)?;
    let normal_rank = st.normal_rank();
    let mut finite = Vec::new();
    let mut infinite = 0;
    if st.regular_size > 0 {
        let f = qz(&st.regular.e, &st.regular.a)?;
        for ev in f.eigenvalues() {
            match ev {
                Some(v) => finite.push(v),
                None => infinite += 1,
            }
        }
    }
    let inf_struct: usize = st.structure.infinite_blocks.iter().sum();
    if inf_struct != infinite {
        return numerical(format!(
            "infinite multiplicity from QZ ({infinite}) and staircase ({inf_struct}) disagree"
        ));
    }
    let k2 = st.structure.infinite_blocks.iter().copied().max().unwrap_or(0);
    let k4 = st.structure.left_indices.iter().map(|&k| k + 1).max().unwrap_or(0);
    Ok(GeneralizedSpectrum { finite_eigenvalues: finite, infinite_multiplicity: infinite, normal_rank, index: k2.max(k4) })
}

/// Eigenvalues of a square pencil straight from QZ (`None` = infinite).
pub fn eigenvalues(p: &MatrixPencil) -> Result<Vec<Option<C64>>> {
    Ok(qz(&p.e, &p.a)?.eigenvalues())
}

#[derive(Clone, Debug)]
pub struct DeflatingSubspace {
    pub y: CMat,
    pub z: CMat,
    pub reduced: MatrixPencil,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeflatingReport {
    pub residual: f64,
    pub rank_y: usize,
    pub y_cols: usize,
    pub reduced_normal_rank: usize,
    pub reduced_rows: usize,
}

impl DeflatingReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.residual <= tol && self.rank_y == self.y_cols && self.reduced_normal_rank == self.reduced_rows
    }
}

pub fn verify_deflating(p: &MatrixPencil, d: &DeflatingSubspace, tol: &Tolerances) -> DeflatingReport {
    let mut residual = 0.0f64;
    for l in sample_points(tol, 6) {
        let lhs = p.at(l) * &d.y;
        let rhs = &d.z * d.reduced.at(l);
        residual = residual.max((lhs - rhs).norm() / (1.0 + p.norm()));
    }
    DeflatingReport {
        residual,
        rank_y: linalg::rank(&d.y, tol.rank_derived),
        y_cols: d.y.ncols(),
        reduced_normal_rank: normal_rank(&d.reduced, tol),
        reduced_rows: d.reduced.shape().0,
    }
}

/// Left factor `Z` solving `(zE - A) Y = Z (zE_r - A_r)` in the least-squares sense.
pub fn cofactor(p: &MatrixPencil, y: &CMat, reduced: &MatrixPencil, tol: &Tolerances) -> CMat {
    let lhs = linalg::hstack(&[&(&p.e * y), &(&p.a * y)]);
    let rhs = linalg::hstack(&[&reduced.e, &reduced.a]);
    lhs * linalg::pinv(&rhs, tol.rank_derived)
}

/// `k x (k+1)` block `z[I 0] - [0 I]` of a right minimal index `k`.
pub fn right_singular_block(k: usize) -> MatrixPencil {
    let mut e = zeros(k, k + 1);
    let mut a = zeros(k, k + 1);
    for i in 0..k {
        e[(i, i)] = ONE;
        a[(i, i + 1)] = ONE;
    }
    MatrixPencil { e, a }
}
