//! Descriptor systems, the feedback equivalence form, the system space,
//! controllability tests and simulation.

use rand::Rng;

use crate::config::Tolerances;
use crate::error::{invalid, numerical, unsupported, Result};
use crate::linalg::{self, block, blockdiag, eye, qz, zeros, CMat, CVec, C64};
use crate::pencil::{self, MatrixPencil};

/// `E x_{j+1} = A x_j + B u_j` with a regular pencil `zE - A`.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorSystem {
    pub e: CMat,
    pub a: CMat,
    pub b: CMat,
}

impl DescriptorSystem {
    pub fn new(e: CMat, a: CMat, b: CMat) -> Result<Self> {
        Self::new_with(e, a, b, &Tolerances::default())
    }

    pub fn new_with(e: CMat, a: CMat, b: CMat, tol: &Tolerances) -> Result<Self> {
        let n = e.nrows();
        if e.shape() != (n, n) || a.shape() != (n, n) {
            return invalid(format!("E and A must be square of equal size, got {:?} and {:?}", e.shape(), a.shape()));
        }
        if b.nrows() != n {
            return invalid(format!("B must have {n} rows, got {}", b.nrows()));
        }
        if !linalg::is_finite(&b) {
            return invalid("B has non-finite entries");
        }
        let p = MatrixPencil::new(e.clone(), a.clone())?;
        if !pencil::is_regular(&p, tol)? {
            return invalid("pencil not regular");
        }
        Ok(DescriptorSystem { e, a, b })
    }

    /// No regularity check; for internal use on systems known to be regular.
    pub(crate) fn unchecked(e: CMat, a: CMat, b: CMat) -> Self {
        DescriptorSystem { e, a, b }
    }

    pub fn n(&self) -> usize {
        self.e.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn pencil(&self) -> MatrixPencil {
        MatrixPencil { e: self.e.clone(), a: self.a.clone() }
    }

    pub fn is_real(&self) -> bool {
        [&self.e, &self.a, &self.b].iter().all(|m| m.iter().all(|z| z.im == 0.0))
    }
}

/// Plant plus quadratic weights `[Q S; S* R]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedSystem {
    pub sys: DescriptorSystem,
    pub q: CMat,
    pub s: CMat,
    pub r: CMat,
}

impl WeightedSystem {
    /// Validates shapes and symmetrizes `Q` and `R`.
    pub fn new(sys: DescriptorSystem, q: CMat, s: CMat, r: CMat) -> Result<Self> {
        let (n, m) = (sys.n(), sys.m());
        if q.shape() != (n, n) {
            return invalid(format!("Q must be {n}x{n}"));
        }
        if s.shape() != (n, m) {
            return invalid(format!("S must be {n}x{m}"));
        }
        if r.shape() != (m, m) {
            return invalid(format!("R must be {m}x{m}"));
        }
        for (name, mat) in [("Q", &q), ("S", &s), ("R", &r)] {
            if !linalg::is_finite(mat) {
                return invalid(format!("{name} has non-finite entries"));
            }
        }
        Ok(WeightedSystem { sys, q: linalg::herm(&q), s, r: linalg::herm(&r) })
    }

    /// Builds and checks everything in one go.
    pub fn from_parts(e: CMat, a: CMat, b: CMat, q: CMat, s: CMat, r: CMat) -> Result<Self> {
        Self::new(DescriptorSystem::new(e, a, b)?, q, s, r)
    }

    pub fn n(&self) -> usize {
        self.sys.n()
    }

    pub fn m(&self) -> usize {
        self.sys.m()
    }

    pub fn e(&self) -> &CMat {
        &self.sys.e
    }

    pub fn a(&self) -> &CMat {
        &self.sys.a
    }

    pub fn b(&self) -> &CMat {
        &self.sys.b
    }

    /// `[Q S; S* R]`.
    pub fn weight(&self) -> CMat {
        block(&[vec![&self.q, &self.s], vec![&self.s.adjoint(), &self.r]])
    }

    /// Same plant with every weight negated.
    pub fn negated(&self) -> WeightedSystem {
        WeightedSystem { sys: self.sys.clone(), q: -self.q.clone(), s: -self.s.clone(), r: -self.r.clone() }
    }

    pub fn scale(&self) -> f64 {
        1.0 + self.e().norm() + self.a().norm() + self.b().norm()
    }
}

/// Feedback equivalence form: `W [zE - A, -B] T_F` equals
/// `[zI - A11, 0, 0, -B1; 0, -I, zE23, -B2; 0, 0, zE33 - I, 0]` with
/// `T_F = [T, 0; F T, I]`.
#[derive(Clone, Debug)]
pub struct FeedbackForm {
    pub w: CMat,
    pub t: CMat,
    pub f: CMat,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub a11: CMat,
    pub b1: CMat,
    pub e23: CMat,
    pub e33: CMat,
    pub b2: CMat,
    pub q_f: CMat,
    pub s_f: CMat,
    pub r_f: CMat,
    /// The explicit system `(I, A11, B1)` with its reduced weights.
    pub ede: WeightedSystem,
    /// Max-abs deviation of `W E T`, `W (A + BF) T`, `W B` from the canonical
    /// shape, relative to `||W|| ||T|| (1 + ||[E A B]||)`.
    pub residual: f64,
}

impl FeedbackForm {
    pub fn n(&self) -> usize {
        self.n1 + self.n2 + self.n3
    }

    pub fn m(&self) -> usize {
        self.b1.ncols()
    }

    /// `T_F = [T, 0; F T, I]`.
    pub fn t_f(&self) -> CMat {
        let m = self.m();
        let ft = &self.f * &self.t;
        block(&[vec![&self.t, &zeros(self.n(), m)], vec![&ft, &eye(m)]])
    }

    pub fn e_f(&self) -> CMat {
        let (n1, n2, n3) = (self.n1, self.n2, self.n3);
        let mut e = zeros(self.n(), self.n());
        e.view_mut((0, 0), (n1, n1)).copy_from(&eye(n1));
        e.view_mut((n1, n1 + n2), (n2, n3)).copy_from(&self.e23);
        e.view_mut((n1 + n2, n1 + n2), (n3, n3)).copy_from(&self.e33);
        e
    }

    pub fn a_f(&self) -> CMat {
        let mut a = eye(self.n());
        a.view_mut((0, 0), (self.n1, self.n1)).copy_from(&self.a11);
        a
    }

    pub fn b_f(&self) -> CMat {
        linalg::vstack(&[&self.b1, &self.b2, &zeros(self.n3, self.m())])
    }

    /// The transformed system `(E_F, A_F, B_F)` with weights `(Q_F, S_F, R_F)`.
    pub fn transformed(&self) -> WeightedSystem {
        WeightedSystem {
            sys: DescriptorSystem::unchecked(self.e_f(), self.a_f(), self.b_f()),
            q: self.q_f.clone(),
            s: self.s_f.clone(),
            r: self.r_f.clone(),
        }
    }
}

fn transformed_weights(w: &WeightedSystem, t: &CMat, f: &CMat) -> (CMat, CMat, CMat) {
    let (q, s, r) = (&w.q, &w.s, &w.r);
    let inner = q + s * f + f.adjoint() * s.adjoint() + f.adjoint() * r * f;
    let q_f = linalg::herm(&(t.adjoint() * inner * t));
    let s_f = t.adjoint() * (s + f.adjoint() * r);
    (q_f, s_f, r.clone())
}

/// Assembles a feedback form from given transforms and block sizes, measuring
/// how far the transformed system is from the canonical shape.
pub fn assemble(w: &WeightedSystem, wm: &CMat, t: &CMat, f: &CMat, dims: (usize, usize, usize)) -> Result<FeedbackForm> {
    let (n1, n2, n3) = dims;
    let (n, m) = (w.n(), w.m());
    if n1 + n2 + n3 != n {
        return invalid(format!("block sizes {n1}+{n2}+{n3} do not add up to {n}"));
    }
    if wm.shape() != (n, n) || t.shape() != (n, n) || f.shape() != (m, n) {
        return invalid("transform shapes do not match the system");
    }
    let ef = wm * w.e() * t;
    let af = wm * (w.a() + w.b() * f) * t;
    let bf = wm * w.b();
    let a11 = af.view((0, 0), (n1, n1)).into_owned();
    let b1 = bf.rows(0, n1).into_owned();
    let b2 = bf.rows(n1, n2).into_owned();
    let e23 = ef.view((n1, n1 + n2), (n2, n3)).into_owned();
    let e33 = ef.view((n1 + n2, n1 + n2), (n3, n3)).into_owned();
    let (q_f, s_f, r_f) = transformed_weights(w, t, f);

    let q11 = q_f.view((0, 0), (n1, n1)).into_owned();
    let q12 = q_f.view((0, n1), (n1, n2)).into_owned();
    let q22 = q_f.view((n1, n1), (n2, n2)).into_owned();
    let s1 = s_f.rows(0, n1).into_owned();
    let s2 = s_f.rows(n1, n2).into_owned();
    let s_s = &s1 - &q12 * &b2;
    let r_s = b2.adjoint() * &q22 * &b2 - b2.adjoint() * &s2 - s2.adjoint() * &b2 + &r_f;
    let ede = WeightedSystem {
        sys: DescriptorSystem::unchecked(eye(n1), a11.clone(), b1.clone()),
        q: linalg::herm(&q11),
        s: s_s,
        r: linalg::herm(&r_s),
    };
    let mut form = FeedbackForm {
        w: wm.clone(),
        t: t.clone(),
        f: f.clone(),
        n1,
        n2,
        n3,
        a11,
        b1,
        e23,
        e33,
        b2,
        q_f,
        s_f,
        r_f,
        ede,
        residual: 0.0,
    };
    let dev = linalg::norm_max(&(&ef - form.e_f()))
        .max(linalg::norm_max(&(&af - form.a_f())))
        .max(linalg::norm_max(&(&bf - form.b_f())));
    let scale = (1.0 + wm.norm()) * (1.0 + t.norm()) * (1.0 + w.e().norm() + w.a().norm() + w.b().norm());
    form.residual = dev / scale;
    Ok(form)
}

/// User-supplied transforms; rejected unless they reach the canonical shape.
pub fn feedback_form_from_transforms(
    w: &WeightedSystem,
    wm: &CMat,
    t: &CMat,
    f: &CMat,
    dims: (usize, usize, usize),
) -> Result<FeedbackForm> {
    let form = assemble(w, wm, t, f, dims)?;
    if form.residual > 1e-8 {
        return invalid(format!("transforms do not produce the canonical shape (residual {:.3e})", form.residual));
    }
    if linalg::inverse(wm).is_none() || linalg::inverse(t).is_none() {
        return invalid("W and T must be invertible");
    }
    Ok(form)
}

pub fn feedback_form(w: &WeightedSystem, tol: &Tolerances) -> Result<FeedbackForm> {
    feedback_form_with(w, None, tol)
}

/// Feedback that makes `Z* (A + BF) S` invertible when possible, where the
/// columns of `S` and `Z` span the kernel and cokernel of `E`.
fn index_reducing_feedback(w: &WeightedSystem, tol: &Tolerances) -> CMat {
    let (n, m) = (w.n(), w.m());
    let ker = linalg::null_space(w.e(), tol.rank);
    let coker = linalg::left_null_space(w.e(), tol.rank);
    let k = ker.ncols();
    let zero = zeros(m, n);
    if k == 0 || m == 0 {
        return zero;
    }
    let m0 = coker.adjoint() * w.a() * &ker;
    if linalg::rank(&m0, tol.rank_derived) == k {
        return zero;
    }
    let bz = coker.adjoint() * w.b();
    let target = linalg::rank(&linalg::hstack(&[&m0, &bz]), tol.rank_derived);
    let scale = (1.0 + m0.norm()) / (1e-300 + bz.norm()).max(1e-12);
    let mut rng = tol.rng();
    let mut best = (linalg::rank(&m0, tol.rank_derived), zero.clone());
    for _ in 0..8 {
        let g = CMat::from_fn(m, k, |_, _| C64::new(rng.gen_range(-1.0..1.0), 0.0) * scale);
        let r = linalg::rank(&(&m0 + &bz * &g), tol.rank_derived);
        if r > best.0 {
            best = (r, &g * ker.adjoint());
        }
        if best.0 == target {
            break;
        }
    }
    best.1
}

pub fn feedback_form_with(w: &WeightedSystem, f_opt: Option<&CMat>, tol: &Tolerances) -> Result<FeedbackForm> {
    let (n, m) = (w.n(), w.m());
    let f = match f_opt {
        Some(f) => {
            if f.shape() != (m, n) {
                return invalid(format!("F must be {m}x{n}"));
            }
            f.clone()
        }
        None => index_reducing_feedback(w, tol),
    };
    let af = w.a() + w.b() * &f;
    if linalg::rank(w.e(), tol.rank) == n {
        let winv = match linalg::inverse(w.e()) {
            Some(x) => x,
            None => return numerical("E numerically singular"),
        };
        let form = assemble(w, &winv, &eye(n), &f, (n, 0, 0))?;
        return Ok(form);
    }

    let mut g = qz(w.e(), &af)?;
    let n1 = g.reorder_by(|v| v.is_some());
    let ninf = n - n1;
    let (et, at) = (&g.e_tri, &g.a_tri);
    let e11 = et.view((0, 0), (n1, n1)).into_owned();
    let e12 = et.view((0, n1), (n1, ninf)).into_owned();
    let e22 = et.view((n1, n1), (ninf, ninf)).into_owned();
    let a11 = at.view((0, 0), (n1, n1)).into_owned();
    let a12 = at.view((0, n1), (n1, ninf)).into_owned();
    let a22 = at.view((n1, n1), (ninf, ninf)).into_owned();
    let (rr, lp) = linalg::gen_sylvester(&a11, &a22, &e11, &e22, &(-&a12), &(-&e12))?;
    let lm = -lp;
    let left = block(&[vec![&eye(n1), &lm], vec![&zeros(ninf, n1), &eye(ninf)]]);
    let right = block(&[vec![&eye(n1), &rr], vec![&zeros(ninf, n1), &eye(ninf)]]);
    let e11_inv = linalg::inverse(&e11).ok_or_else(|| crate::error::Error::NumericalFailure("finite block singular".into()))?;
    let a22_inv = linalg::inverse(&a22).ok_or_else(|| crate::error::Error::NumericalFailure("infinite block singular".into()))?;
    let w0 = blockdiag(&[&e11_inv, &a22_inv]) * left * g.q.adjoint();
    let t0 = &g.z * right;

    let nil = &a22_inv * &e22;
    let b_inf = (&w0 * w.b()).rows(n1, ninf).into_owned();
    let scale = 1.0 + nil.norm();
    let (t_inf, n2) = if linalg::norm_max(&nil) <= 1e3 * f64::EPSILON * scale * (ninf.max(1) as f64) {
        (eye(ninf), ninf)
    } else {
        let ker = linalg::null_space(&nil, tol.rank_derived);
        let n2 = ker.ncols();
        let proj = eye(ninf) - &ker * ker.adjoint();
        if (&proj * &b_inf).norm() > 1e-8 * (1.0 + b_inf.norm()) {
            return unsupported("inputs drive a higher-index chain that feedback cannot remove");
        }
        (linalg::unitary_completion(&ker), n2)
    };
    let n3 = ninf - n2;
    let wm = blockdiag(&[&eye(n1), &t_inf.adjoint()]) * w0;
    let t = t0 * blockdiag(&[&eye(n1), &t_inf]);
    let form = assemble(w, &wm, &t, &f, (n1, n2, n3))?;
    if form.residual > 1e-8 {
        return numerical(format!("feedback form residual {:.3e} too large", form.residual));
    }
    Ok(form)
}

/// Orthonormal basis of the system space.
pub fn system_space(fef: &FeedbackForm, tol: &Tolerances) -> CMat {
    let (n1, n2, n3, m) = (fef.n1, fef.n2, fef.n3, fef.m());
    let mut vf = zeros(fef.n() + m, n1 + m);
    vf.view_mut((0, 0), (n1, n1)).copy_from(&eye(n1));
    vf.view_mut((n1, n1), (n2, m)).copy_from(&(-&fef.b2));
    vf.view_mut((n1 + n2 + n3, n1), (m, m)).copy_from(&eye(m));
    linalg::range_basis(&(fef.t_f() * vf), tol.rank_derived)
}

/// Basis of the initial states admitting a behavior with `E x_0 = E x^0`.
pub fn consistent_initials(fef: &FeedbackForm, tol: &Tolerances) -> CMat {
    let (n1, n2, n3) = (fef.n1, fef.n2, fef.n3);
    let stacked = linalg::vstack(&[&fef.e23, &fef.e33]);
    let k3 = if n3 == 0 { zeros(0, 0) } else { linalg::null_space(&stacked, tol.rank_derived) };
    let basis = blockdiag(&[&eye(n1), &eye(n2), &k3]);
    linalg::range_basis(&(&fef.t * basis), tol.rank_derived)
}

/// Distance of `x` from the span of the orthonormal columns of `basis`.
pub fn distance_to_span(basis: &CMat, x: &CVec) -> f64 {
    let p = basis * (basis.adjoint() * x);
    (x - p).norm()
}

/// `Pi = W^{-1} diag(I_{n1}, 0) W`.
pub fn projector_pi(fef: &FeedbackForm) -> Result<CMat> {
    if fef.n3 != 0 {
        return unsupported("projector needs an I-controllable system");
    }
    let winv = linalg::inverse(&fef.w).ok_or_else(|| crate::error::Error::NumericalFailure("W singular".into()))?;
    let mut d = zeros(fef.n(), fef.n());
    d.view_mut((0, 0), (fef.n1, fef.n1)).copy_from(&eye(fef.n1));
    Ok(winv * d * &fef.w)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllabilityReport {
    pub r_controllable: bool,
    pub c_controllable: bool,
    pub i_controllable: bool,
    pub stabilizable: bool,
    pub uncontrollable_modes: Vec<C64>,
}

impl ControllabilityReport {
    pub fn has_unit_circle_modes(&self, band: f64) -> bool {
        self.uncontrollable_modes.iter().any(|l| (l.norm() - 1.0).abs() < band)
    }
}

fn full_row_rank(m: &CMat, tol: &Tolerances) -> bool {
    linalg::rank(m, tol.rank_derived) == m.nrows()
}

pub fn controllability(sys: &DescriptorSystem, tol: &Tolerances) -> Result<ControllabilityReport> {
    let n = sys.n();
    let spec = pencil::generalized_spectrum(&sys.pencil(), tol)?;
    let mut modes: Vec<C64> = Vec::new();
    for l in spec.finite_eigenvalues {
        if modes.iter().any(|x| (x - l).norm() < 1e-8 * (1.0 + l.norm())) {
            continue;
        }
        let m = linalg::hstack(&[&(&sys.e * l - &sys.a), &sys.b]);
        if !full_row_rank(&m, tol) {
            modes.push(l);
        }
    }
    let band = tol.circle_band(sys.pencil().norm());
    let r = modes.is_empty();
    let c = r && full_row_rank(&linalg::hstack(&[&sys.e, &sys.b]), tol);
    let ker = linalg::null_space(&sys.e, tol.rank);
    let i = full_row_rank(&linalg::hstack(&[&sys.e, &(&sys.a * ker), &sys.b]), tol) || n == 0;
    let stabilizable = modes.iter().all(|l| l.norm() < 1.0 - band);
    Ok(ControllabilityReport {
        r_controllable: r,
        c_controllable: c,
        i_controllable: i,
        stabilizable,
        uncontrollable_modes: modes,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub x: Vec<CVec>,
    pub u: Vec<CVec>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.x.len()
    }

    /// Max over `j` of `||E x_{j+1} - A x_j - B u_j||`.
    pub fn residual(&self, sys: &DescriptorSystem) -> f64 {
        (0..self.horizon().saturating_sub(1))
            .map(|j| (&sys.e * &self.x[j + 1] - &sys.a * &self.x[j] - &sys.b * &self.u[j]).norm())
            .fold(0.0, f64::max)
    }

    pub fn zero(n: usize, m: usize, horizon: usize) -> Trajectory {
        Trajectory { x: vec![CVec::zeros(n); horizon], u: vec![CVec::zeros(m); horizon] }
    }
}

/// Runs the feedback form forward from `x1_0` with inputs `v` given in
/// feedback-form coordinates, returning original coordinates.
pub fn simulate(fef: &FeedbackForm, v: &[CVec], x1_0: &CVec) -> Result<Trajectory> {
    let (n1, n2, n3, m) = (fef.n1, fef.n2, fef.n3, fef.m());
    if x1_0.len() != n1 {
        return invalid(format!("initial state of the explicit part must have length {n1}"));
    }
    if v.iter().any(|vj| vj.len() != m) {
        return invalid(format!("inputs must have length {m}"));
    }
    let ft = &fef.f * &fef.t;
    let mut x1 = x1_0.clone();
    let mut traj = Trajectory { x: Vec::with_capacity(v.len()), u: Vec::with_capacity(v.len()) };
    for vj in v {
        let x2 = -(&fef.b2 * vj);
        let xi = linalg::vstack(&[&CMat::from_column_slice(n1, 1, x1.as_slice()), &CMat::from_column_slice(n2, 1, x2.as_slice()), &zeros(n3, 1)]);
        let xi = CVec::from_column_slice(xi.as_slice());
        traj.x.push(&fef.t * &xi);
        traj.u.push(&ft * &xi + vj);
        x1 = &fef.a11 * &x1 + &fef.b1 * vj;
    }
    Ok(traj)
}
