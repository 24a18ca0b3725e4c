#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lqdescriptor::linalg::{self, eye, from_rows, zeros, CMat, CVec, C64};
use lqdescriptor::pencil::{self, MatrixPencil};
use lqdescriptor::system::WeightedSystem;

pub fn example() -> WeightedSystem {
    WeightedSystem::from_parts(
        from_rows(&[&[0.0, 0.0], &[0.0, 1.0]]),
        from_rows(&[&[-1.0, 1.0], &[1.0, 0.0]]),
        from_rows(&[&[-1.0], &[0.0]]),
        eye(2),
        zeros(2, 1),
        eye(1),
    )
    .unwrap()
}

pub fn x0_example() -> CVec {
    CVec::from_vec(vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)])
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn real_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMat {
    CMat::from_fn(r, c, |_, _| C64::new(rng.gen_range(-1.0..1.0), 0.0))
}

pub fn complex_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMat {
    CMat::from_fn(r, c, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

pub fn herm_mat(rng: &mut ChaCha8Rng, n: usize) -> CMat {
    let g = complex_mat(rng, n, n);
    (&g + g.adjoint()) * C64::new(0.5, 0.0)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| C64::new(rng.gen_range(-1.0..1.0), 0.0))
}

pub fn spectral_radius(a: &CMat) -> f64 {
    let p = MatrixPencil { e: eye(a.nrows()), a: a.clone() };
    pencil::eigenvalues(&p).unwrap().into_iter().flatten().map(|l| l.norm()).fold(0.0, f64::max)
}

/// Explicit systems with stable `A`, `Q >= 0`, `R > 0`, `S = 0`.
pub fn dare_corpus(count: usize, seed: u64) -> Vec<WeightedSystem> {
    let mut g = rng(seed);
    (0..count)
        .map(|_| {
            let n = g.gen_range(1..=6);
            let m = g.gen_range(1..=3usize.min(n));
            let a = real_mat(&mut g, n, n);
            let rho = spectral_radius(&a).max(1e-3);
            let target = g.gen_range(0.2..0.8);
            let a = a * C64::new(target / rho, 0.0);
            let b = real_mat(&mut g, n, m);
            let k = g.gen_range(1..=n);
            let gq = real_mat(&mut g, n, k);
            let q = &gq * gq.adjoint();
            let gr = real_mat(&mut g, m, m);
            let r = &gr * gr.adjoint() + eye(m) * C64::new(0.5, 0.0);
            WeightedSystem::from_parts(eye(n), a, b, q, zeros(n, m), r).unwrap()
        })
        .collect()
}

fn dare_map(w: &WeightedSystem, x: &CMat) -> CMat {
    let (a, b) = (w.a(), w.b());
    let g = &w.r + b.adjoint() * x * b;
    let ginv = linalg::inverse(&g).expect("R + B*XB invertible");
    a.adjoint() * x * a + &w.q - a.adjoint() * x * b * ginv * b.adjoint() * x * a
}

/// Riccati value iteration from zero.
pub fn dare_oracle(w: &WeightedSystem) -> CMat {
    let mut x = zeros(w.n(), w.n());
    for _ in 0..200_000 {
        let nx = dare_map(w, &x);
        let d = (&nx - &x).norm();
        x = nx;
        if d <= 1e-15 * (1.0 + x.norm()) {
            break;
        }
    }
    x
}

/// `||A*XA - X + Q - A*XB (R + B*XB)^{-1} B*XA|| / (1 + ||X||)`.
pub fn dare_residual(w: &WeightedSystem, x: &CMat) -> f64 {
    (dare_map(w, x) - x).norm() / (1.0 + x.norm())
}

/// Random regular descriptor system; `E` singular with probability one half.
pub fn random_descriptor(g: &mut ChaCha8Rng, complex: bool) -> (CMat, CMat, CMat) {
    let n = g.gen_range(1..=4);
    let m = g.gen_range(1..=2);
    let mk = |g: &mut ChaCha8Rng, r: usize, c: usize| if complex { complex_mat(g, r, c) } else { real_mat(g, r, c) };
    let e = if g.gen_bool(0.5) || n == 1 {
        eye(n)
    } else {
        let rank = g.gen_range(1..n);
        mk(g, n, rank) * mk(g, rank, n)
    };
    (e, mk(g, n, n), mk(g, n, m))
}

/// Weighted systems with indefinite or semidefinite weights of random shift.
pub fn popov_corpus(count: usize, seed: u64) -> Vec<WeightedSystem> {
    let mut g = rng(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let (e, a, b) = random_descriptor(&mut g, false);
        let (n, m) = (a.nrows(), b.ncols());
        let h = real_mat(&mut g, n + m, n + m);
        let shift = g.gen_range(-0.5..2.5);
        let wt = (&h + h.adjoint()) * C64::new(0.5, 0.0) + eye(n + m) * C64::new(shift, 0.0);
        let q = wt.view((0, 0), (n, n)).into_owned();
        let s = wt.view((0, n), (n, m)).into_owned();
        let r = wt.view((n, n), (m, m)).into_owned();
        if let Ok(w) = WeightedSystem::from_parts(e, a, b, q, s, r) {
            out.push(w);
        }
    }
    out
}

/// Inertia of a Hermitian matrix through the real symmetric embedding
/// `[[Re, -Im], [Im, Re]]`, whose spectrum doubles that of `h`.
pub fn inertia_oracle(h: &CMat, tol: f64) -> (usize, usize, usize) {
    let n = h.nrows();
    let emb = DMatrix::<f64>::from_fn(2 * n, 2 * n, |i, j| {
        let z = h[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    let ev = emb.symmetric_eigenvalues();
    let scale = ev.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let count = |f: &dyn Fn(f64) -> bool| ev.iter().filter(|v| f(**v)).count() / 2;
    (count(&|v| v > tol * scale), count(&|v| v.abs() <= tol * scale), count(&|v| v < -tol * scale))
}

/// Hermitian `i e^{-i omega/2} A + adjoint` for the palindromic coupling
/// matrix of `w`, assembled independently of the library.
pub fn palindromic_hermitian(w: &WeightedSystem, omega: f64) -> CMat {
    let (n, m) = (w.n(), w.m());
    let d = 2 * n + m;
    let mut acal = zeros(d, d);
    acal.view_mut((0, n), (n, n)).copy_from(w.a());
    acal.view_mut((0, 2 * n), (n, m)).copy_from(w.b());
    acal.view_mut((n, 0), (n, n)).copy_from(&w.e().adjoint());
    acal.view_mut((n, n), (n, n)).copy_from(&w.q);
    acal.view_mut((n, 2 * n), (n, m)).copy_from(&w.s);
    acal.view_mut((2 * n, n), (m, n)).copy_from(&w.s.adjoint());
    acal.view_mut((2 * n, 2 * n), (m, m)).copy_from(&w.r);
    let f = C64::new(0.0, 1.0) * C64::from_polar(1.0, -omega / 2.0);
    let h = acal * f;
    &h + h.adjoint()
}
