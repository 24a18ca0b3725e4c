//! Dense complex linear algebra: SVD-based rank decisions, subspace bases,
//! Hermitian eigenvalues, a complex QZ with eigenvalue reordering, and a
//! generalized Sylvester solver.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{numerical, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn cis(theta: f64) -> C64 {
    C64::from_polar(1.0, theta)
}

pub fn from_real(m: &DMatrix<f64>) -> CMat {
    m.map(c)
}

pub fn from_rows(rows: &[&[f64]]) -> CMat {
    let r = rows.len();
    let cc = if r == 0 { 0 } else { rows[0].len() };
    CMat::from_fn(r, cc, |i, j| c(rows[i][j]))
}

pub fn eye(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn zeros(r: usize, c: usize) -> CMat {
    CMat::zeros(r, c)
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn norm_f(m: &CMat) -> f64 {
    m.norm()
}

/// Max-abs entry.
pub fn norm_max(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn herm(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Block matrix from a grid of blocks; every block in a row shares a height,
/// every block in a column shares a width.
pub fn block(rows: &[Vec<&CMat>]) -> CMat {
    let heights: Vec<usize> = rows.iter().map(|r| r[0].nrows()).collect();
    let widths: Vec<usize> = rows[0].iter().map(|b| b.ncols()).collect();
    let mut out = zeros(heights.iter().sum(), widths.iter().sum());
    let mut r0 = 0;
    for (bi, row) in rows.iter().enumerate() {
        let mut c0 = 0;
        for (bj, b) in row.iter().enumerate() {
            debug_assert_eq!(b.nrows(), heights[bi]);
            debug_assert_eq!(b.ncols(), widths[bj]);
            out.view_mut((r0, c0), (heights[bi], widths[bj])).copy_from(*b);
            c0 += widths[bj];
        }
        r0 += heights[bi];
    }
    out
}

pub fn hstack(ms: &[&CMat]) -> CMat {
    block(&[ms.to_vec()])
}

pub fn vstack(ms: &[&CMat]) -> CMat {
    let rows: Vec<Vec<&CMat>> = ms.iter().map(|m| vec![*m]).collect();
    block(&rows)
}

pub fn blockdiag(ms: &[&CMat]) -> CMat {
    let r: usize = ms.iter().map(|m| m.nrows()).sum();
    let cc: usize = ms.iter().map(|m| m.ncols()).sum();
    let mut out = zeros(r, cc);
    let (mut i, mut j) = (0, 0);
    for m in ms {
        out.view_mut((i, j), (m.nrows(), m.ncols())).copy_from(*m);
        i += m.nrows();
        j += m.ncols();
    }
    out
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    CMat::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Full SVD `m = U diag(s) V*` with square unitary factors and singular values
/// sorted in decreasing order.
pub struct FullSvd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v: CMat,
}

pub fn full_svd(m: &CMat) -> FullSvd {
    let (r, cc) = m.shape();
    if r == 0 || cc == 0 {
        return FullSvd { u: eye(r), s: vec![], v: eye(cc) };
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let k = r.min(cc);
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let s = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let u_thin = CMat::from_fn(r, k, |i, j| u[(i, idx[j])]);
    let v_thin = CMat::from_fn(cc, k, |i, j| vt[(idx[j], i)].conj());
    FullSvd { u: unitary_completion(&u_thin), s, v: unitary_completion(&v_thin) }
}

pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return vec![];
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

pub fn rank_threshold(shape: (usize, usize), sigma_max: f64, factor: f64) -> f64 {
    shape.0.max(shape.1) as f64 * factor * sigma_max
}

/// Numerical rank with threshold `max(r,c) * factor * sigma_max`.
pub fn rank(m: &CMat, factor: f64) -> usize {
    let s = singular_values(m);
    if s.is_empty() || s[0] == 0.0 {
        return 0;
    }
    let tau = rank_threshold(m.shape(), s[0], factor);
    s.iter().filter(|&&x| x > tau).count()
}

/// Rank with an absolute threshold.
pub fn rank_abs(m: &CMat, tau: f64) -> usize {
    singular_values(m).iter().filter(|&&x| x > tau).count()
}

/// Orthonormal basis of the right null space.
pub fn null_space(m: &CMat, factor: f64) -> CMat {
    let cc = m.ncols();
    if m.nrows() == 0 {
        return eye(cc);
    }
    if cc == 0 {
        return zeros(0, 0);
    }
    let f = full_svd(m);
    let r = rank_from(&f.s, m.shape(), factor);
    f.v.columns(r, cc - r).into_owned()
}

pub fn null_space_abs(m: &CMat, tau: f64) -> CMat {
    let cc = m.ncols();
    if m.nrows() == 0 {
        return eye(cc);
    }
    let f = full_svd(m);
    let r = f.s.iter().filter(|&&x| x > tau).count();
    f.v.columns(r, cc - r).into_owned()
}

/// Orthonormal basis of the left null space (`y* m = 0`).
pub fn left_null_space(m: &CMat, factor: f64) -> CMat {
    null_space(&m.adjoint(), factor)
}

/// Orthonormal basis of the column space.
pub fn range_basis(m: &CMat, factor: f64) -> CMat {
    let r0 = m.nrows();
    if m.ncols() == 0 || r0 == 0 {
        return zeros(r0, 0);
    }
    let f = full_svd(m);
    let r = rank_from(&f.s, m.shape(), factor);
    f.u.columns(0, r).into_owned()
}

fn rank_from(s: &[f64], shape: (usize, usize), factor: f64) -> usize {
    if s.is_empty() || s[0] == 0.0 {
        return 0;
    }
    let tau = rank_threshold(shape, s[0], factor);
    s.iter().filter(|&&x| x > tau).count()
}

/// Completes an orthonormal `n x k` matrix to a unitary `n x n` matrix whose
/// first `k` columns are `m`.
pub fn unitary_completion(m: &CMat) -> CMat {
    let (n, k) = m.shape();
    if k >= n {
        return m.clone();
    }
    let q = hstack(&[m, &eye(n)]).qr().q();
    let mut out = q;
    out.view_mut((0, 0), (n, k)).copy_from(m);
    out
}

/// Moore-Penrose pseudo-inverse with a rank factor.
pub fn pinv(m: &CMat, factor: f64) -> CMat {
    let (r, cc) = m.shape();
    if r == 0 || cc == 0 {
        return zeros(cc, r);
    }
    let f = full_svd(m);
    let k = rank_from(&f.s, m.shape(), factor);
    let mut out = zeros(cc, r);
    for i in 0..k {
        let v = f.v.column(i);
        let u = f.u.column(i);
        out += (v * u.adjoint()).scale(1.0 / f.s[i]);
    }
    out
}

/// Solves the square system `a x = b` by LU; `None` when singular.
pub fn solve(a: &CMat, b: &CMat) -> Option<CMat> {
    if a.nrows() == 0 {
        return Some(zeros(0, b.ncols()));
    }
    a.clone().lu().solve(b)
}

pub fn inverse(a: &CMat) -> Option<CMat> {
    if a.nrows() == 0 {
        return Some(zeros(0, 0));
    }
    a.clone().try_inverse()
}

/// Eigenvalues (ascending) and eigenvectors of a Hermitian matrix.
pub fn herm_eig(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    if n == 0 {
        return (vec![], zeros(0, 0));
    }
    let eig = herm(m).symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMat::from_fn(n, n, |i, j| eig.eigenvectors[(i, idx[j])]);
    (vals, vecs)
}

pub fn herm_eigvals(m: &CMat) -> Vec<f64> {
    herm_eig(m).0
}

pub fn min_herm_eig(m: &CMat) -> f64 {
    herm_eigvals(m).first().copied().unwrap_or(f64::INFINITY)
}

/// 2x2 unitary stored row-major.
#[derive(Clone, Copy, Debug)]
struct Rot([[C64; 2]; 2]);

impl Rot {
    fn identity() -> Self {
        Rot([[ONE, ZERO], [ZERO, ONE]])
    }

    /// `U` with `U [a; b] = [nu; 0]`.
    fn left_zero(a: C64, b: C64) -> Self {
        let nu = (a.norm_sqr() + b.norm_sqr()).sqrt();
        if nu == 0.0 {
            return Rot::identity();
        }
        let (a, b) = (a / nu, b / nu);
        Rot([[a.conj(), b.conj()], [-b, a]])
    }

    /// `V` with `[b, a] V = [0, nu]`: zeroes the first entry of a row pair.
    fn right_zero(b: C64, a: C64) -> Self {
        let nu = (a.norm_sqr() + b.norm_sqr()).sqrt();
        if nu == 0.0 {
            return Rot::identity();
        }
        let (a, b) = (a / nu, b / nu);
        Rot([[a, b.conj()], [-b, a.conj()]])
    }

    fn adjoint(&self) -> Self {
        let m = self.0;
        Rot([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }
}

fn apply_left(m: &mut CMat, i: usize, j: usize, u: &Rot) {
    let u = u.0;
    for k in 0..m.ncols() {
        let (x, y) = (m[(i, k)], m[(j, k)]);
        m[(i, k)] = u[0][0] * x + u[0][1] * y;
        m[(j, k)] = u[1][0] * x + u[1][1] * y;
    }
}

fn apply_right(m: &mut CMat, i: usize, j: usize, v: &Rot) {
    let v = v.0;
    for k in 0..m.nrows() {
        let (x, y) = (m[(k, i)], m[(k, j)]);
        m[(k, i)] = x * v[0][0] + y * v[1][0];
        m[(k, j)] = x * v[0][1] + y * v[1][1];
    }
}

/// Generalized Schur form of the pencil `zE - A`:
/// `Q* A Z = a_tri`, `Q* E Z = e_tri`, both upper triangular.
#[derive(Clone, Debug)]
pub struct Qz {
    pub a_tri: CMat,
    pub e_tri: CMat,
    pub q: CMat,
    pub z: CMat,
}

/// Relative size below which `beta` counts as zero (infinite eigenvalue).
pub const INFINITE_RATIO: f64 = 1e-10;

impl Qz {
    pub fn n(&self) -> usize {
        self.a_tri.nrows()
    }

    /// `(alpha, beta)` pairs; the eigenvalue is `alpha / beta`.
    pub fn pairs(&self) -> Vec<(C64, C64)> {
        (0..self.n()).map(|i| (self.a_tri[(i, i)], self.e_tri[(i, i)])).collect()
    }

    /// Eigenvalue at a diagonal position; `None` for an infinite one.
    pub fn eigenvalue(&self, i: usize) -> Option<C64> {
        pair_value(self.a_tri[(i, i)], self.e_tri[(i, i)])
    }

    pub fn eigenvalues(&self) -> Vec<Option<C64>> {
        (0..self.n()).map(|i| self.eigenvalue(i)).collect()
    }

    /// Swaps the adjacent diagonal entries `k` and `k + 1`.
    pub fn swap(&mut self, k: usize) {
        let (a11, a12, a22) = (self.a_tri[(k, k)], self.a_tri[(k, k + 1)], self.a_tri[(k + 1, k + 1)]);
        let (b11, b12, b22) = (self.e_tri[(k, k)], self.e_tri[(k, k + 1)], self.e_tri[(k + 1, k + 1)]);
        // Null vector of b22*A_blk - a22*E_blk is the eigenvector of the lower eigenvalue.
        let m11 = b22 * a11 - a22 * b11;
        let m12 = b22 * a12 - a22 * b12;
        let nu = (m11.norm_sqr() + m12.norm_sqr()).sqrt();
        let scale = (a11.norm() + a12.norm() + a22.norm()) * (b11.norm() + b12.norm() + b22.norm());
        if nu <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            return;
        }
        let (x1, x2) = (m12 / nu, -m11 / nu);
        let zr = Rot([[x1, -x2.conj()], [x2, x1.conj()]]);
        apply_right(&mut self.a_tri, k, k + 1, &zr);
        apply_right(&mut self.e_tri, k, k + 1, &zr);
        apply_right(&mut self.z, k, k + 1, &zr);
        let sa = self.a_tri[(k, k)].norm_sqr() + self.a_tri[(k + 1, k)].norm_sqr();
        let se = self.e_tri[(k, k)].norm_sqr() + self.e_tri[(k + 1, k)].norm_sqr();
        let u = if sa >= se {
            Rot::left_zero(self.a_tri[(k, k)], self.a_tri[(k + 1, k)])
        } else {
            Rot::left_zero(self.e_tri[(k, k)], self.e_tri[(k + 1, k)])
        };
        apply_left(&mut self.a_tri, k, k + 1, &u);
        apply_left(&mut self.e_tri, k, k + 1, &u);
        apply_right(&mut self.q, k, k + 1, &u.adjoint());
        self.a_tri[(k + 1, k)] = ZERO;
        self.e_tri[(k + 1, k)] = ZERO;
    }

    /// Moves the selected diagonal entries to the leading positions, keeping
    /// their relative order. Returns how many were selected.
    pub fn reorder(&mut self, select: &[bool]) -> usize {
        let mut sel = select.to_vec();
        let mut next = 0;
        for k in 0..sel.len() {
            if sel[k] {
                let mut j = k;
                while j > next {
                    self.swap(j - 1);
                    sel.swap(j - 1, j);
                    j -= 1;
                }
                next += 1;
            }
        }
        next
    }

    /// Reorders by a predicate on the eigenvalue (`None` = infinite).
    pub fn reorder_by(&mut self, pred: impl Fn(Option<C64>) -> bool) -> usize {
        let sel: Vec<bool> = self.eigenvalues().into_iter().map(pred).collect();
        self.reorder(&sel)
    }

    /// Leading `k` columns of `Z`: a deflating subspace of `zE - A`.
    pub fn right_subspace(&self, k: usize) -> CMat {
        self.z.columns(0, k).into_owned()
    }
}

pub fn pair_value(alpha: C64, beta: C64) -> Option<C64> {
    if beta.norm() <= INFINITE_RATIO * alpha.norm() || beta.norm() == 0.0 {
        None
    } else {
        Some(alpha / beta)
    }
}

/// Complex QZ algorithm for the square pencil `zE - A`.
pub fn qz(e: &CMat, a: &CMat) -> Result<Qz> {
    let n = a.nrows();
    assert_eq!(a.shape(), (n, n));
    assert_eq!(e.shape(), (n, n));
    if n == 0 {
        return Ok(Qz { a_tri: zeros(0, 0), e_tri: zeros(0, 0), q: zeros(0, 0), z: zeros(0, 0) });
    }
    if !is_finite(a) || !is_finite(e) {
        return numerical("non-finite entries in pencil");
    }
    let qr = e.clone().qr();
    let q0 = qr.q();
    let mut t = qr.r();
    let mut h = q0.adjoint() * a;
    let mut q = q0;
    let mut z = eye(n);
    for i in 0..n {
        for j in 0..i {
            t[(i, j)] = ZERO;
        }
    }

    // Hessenberg-triangular reduction.
    for j in 0..n.saturating_sub(2) {
        for i in (j + 2..n).rev() {
            let u = Rot::left_zero(h[(i - 1, j)], h[(i, j)]);
            apply_left(&mut h, i - 1, i, &u);
            apply_left(&mut t, i - 1, i, &u);
            apply_right(&mut q, i - 1, i, &u.adjoint());
            h[(i, j)] = ZERO;
            let v = Rot::right_zero(t[(i, i - 1)], t[(i, i)]);
            apply_right(&mut h, i - 1, i, &v);
            apply_right(&mut t, i - 1, i, &v);
            apply_right(&mut z, i - 1, i, &v);
            t[(i, i - 1)] = ZERO;
        }
    }

    let eps = f64::EPSILON;
    let hnorm = h.norm().max(f64::MIN_POSITIVE);
    let tnorm = t.norm().max(f64::MIN_POSITIVE);
    let mut ihi = n;
    let mut iter = 0usize;
    let mut total = 0usize;
    let max_total = 100 * n.max(4);
    while ihi > 0 {
        let hi = ihi - 1;
        if hi == 0 {
            break;
        }
        let mut ilo = 0;
        for k in (1..=hi).rev() {
            let sub = h[(k, k - 1)].norm();
            let diag = h[(k, k)].norm() + h[(k - 1, k - 1)].norm();
            if sub <= eps * diag || sub <= eps * hnorm {
                h[(k, k - 1)] = ZERO;
                ilo = k;
                break;
            }
        }
        if ilo == hi {
            ihi -= 1;
            iter = 0;
            continue;
        }
        if let Some(k) = (ilo..=hi).find(|&k| t[(k, k)].norm() <= eps * tnorm) {
            t[(k, k)] = ZERO;
            for jj in k..hi {
                let u = Rot::left_zero(t[(jj, jj + 1)], t[(jj + 1, jj + 1)]);
                apply_left(&mut t, jj, jj + 1, &u);
                apply_left(&mut h, jj, jj + 1, &u);
                apply_right(&mut q, jj, jj + 1, &u.adjoint());
                t[(jj + 1, jj + 1)] = ZERO;
                if jj > ilo {
                    let v = Rot::right_zero(h[(jj + 1, jj - 1)], h[(jj + 1, jj)]);
                    apply_right(&mut h, jj - 1, jj, &v);
                    apply_right(&mut t, jj - 1, jj, &v);
                    apply_right(&mut z, jj - 1, jj, &v);
                    h[(jj + 1, jj - 1)] = ZERO;
                    t[(jj, jj - 1)] = ZERO;
                }
            }
            let v = Rot::right_zero(h[(hi, hi - 1)], h[(hi, hi)]);
            apply_right(&mut h, hi - 1, hi, &v);
            apply_right(&mut t, hi - 1, hi, &v);
            apply_right(&mut z, hi - 1, hi, &v);
            h[(hi, hi - 1)] = ZERO;
            t[(hi, hi - 1)] = ZERO;
            continue;
        }

        iter += 1;
        total += 1;
        if total > max_total {
            return numerical("QZ iteration did not converge");
        }
        let shift = if iter.is_multiple_of(10) {
            h[(hi, hi)] / t[(hi, hi)] + c(h[(hi, hi - 1)].norm() / t[(hi - 1, hi - 1)].norm())
        } else {
            wilkinson_shift(&h, &t, hi)
        };
        let x = h[(ilo, ilo)] - shift * t[(ilo, ilo)];
        let y = h[(ilo + 1, ilo)];
        let u = Rot::left_zero(x, y);
        apply_left(&mut h, ilo, ilo + 1, &u);
        apply_left(&mut t, ilo, ilo + 1, &u);
        apply_right(&mut q, ilo, ilo + 1, &u.adjoint());
        for k in ilo..hi {
            let v = Rot::right_zero(t[(k + 1, k)], t[(k + 1, k + 1)]);
            apply_right(&mut h, k, k + 1, &v);
            apply_right(&mut t, k, k + 1, &v);
            apply_right(&mut z, k, k + 1, &v);
            t[(k + 1, k)] = ZERO;
            if k + 1 < hi {
                let u = Rot::left_zero(h[(k + 1, k)], h[(k + 2, k)]);
                apply_left(&mut h, k + 1, k + 2, &u);
                apply_left(&mut t, k + 1, k + 2, &u);
                apply_right(&mut q, k + 1, k + 2, &u.adjoint());
                h[(k + 2, k)] = ZERO;
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            h[(i, j)] = ZERO;
            t[(i, j)] = ZERO;
        }
    }
    Ok(Qz { a_tri: h, e_tri: t, q, z })
}

fn wilkinson_shift(h: &CMat, t: &CMat, hi: usize) -> C64 {
    let k = hi - 1;
    let (a11, a12, a21, a22) = (h[(k, k)], h[(k, hi)], h[(hi, k)], h[(hi, hi)]);
    let (b11, b12, b22) = (t[(k, k)], t[(k, hi)], t[(hi, hi)]);
    // M = B^{-1} A for the trailing 2x2 block.
    let m21 = a21 / b22;
    let m22 = a22 / b22;
    let m11 = (a11 - b12 * m21) / b11;
    let m12 = (a12 - b12 * m22) / b11;
    let tr = m11 + m22;
    let det = m11 * m22 - m12 * m21;
    let disc = (tr * tr * 0.25 - det).sqrt();
    let l1 = tr * 0.5 + disc;
    let l2 = tr * 0.5 - disc;
    let target = m22;
    if (l1 - target).norm() < (l2 - target).norm() {
        l1
    } else {
        l2
    }
}

/// Solves `A11 R - L A22 = C`, `E11 R - L E22 = F` for `(R, L)`.
pub fn gen_sylvester(a11: &CMat, a22: &CMat, e11: &CMat, e22: &CMat, cm: &CMat, fm: &CMat) -> Result<(CMat, CMat)> {
    let p = a11.nrows();
    let qd = a22.nrows();
    if p == 0 || qd == 0 {
        return Ok((zeros(p, qd), zeros(p, qd)));
    }
    let ip = eye(p);
    let iq = eye(qd);
    let pq = p * qd;
    let mut big = zeros(2 * pq, 2 * pq);
    big.view_mut((0, 0), (pq, pq)).copy_from(&kron(&iq, a11));
    big.view_mut((0, pq), (pq, pq)).copy_from(&(-kron(&a22.transpose(), &ip)));
    big.view_mut((pq, 0), (pq, pq)).copy_from(&kron(&iq, e11));
    big.view_mut((pq, pq), (pq, pq)).copy_from(&(-kron(&e22.transpose(), &ip)));
    let mut rhs = zeros(2 * pq, 1);
    for j in 0..qd {
        for i in 0..p {
            rhs[(j * p + i, 0)] = cm[(i, j)];
            rhs[(pq + j * p + i, 0)] = fm[(i, j)];
        }
    }
    let sol = match solve(&big, &rhs) {
        Some(s) => s,
        None => return numerical("generalized Sylvester equation is singular"),
    };
    let r = CMat::from_fn(p, qd, |i, j| sol[(j * p + i, 0)]);
    let l = CMat::from_fn(p, qd, |i, j| sol[(pq + j * p + i, 0)]);
    Ok((r, l))
}
