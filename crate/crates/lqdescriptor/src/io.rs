//! JSON system and solution files, CSV writers.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::error::{invalid, Error, Result};
use crate::linalg::{CMat, CVec, C64};
use crate::lure::{LureCertificate, LureSolution};
use crate::palindromic::InertiaTriple;
use crate::system::{DescriptorSystem, Trajectory, WeightedSystem};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Complex([f64; 2]),
}

impl Entry {
    fn value(self) -> C64 {
        match self {
            Entry::Real(x) => C64::new(x, 0.0),
            Entry::Complex([re, im]) => C64::new(re, im),
        }
    }
}

pub type MatrixJson = Vec<Vec<Entry>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Real,
    Complex,
}

#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemFile {
    pub n: usize,
    pub m: usize,
    #[serde(default = "default_field")]
    pub field: Field,
    pub E: MatrixJson,
    pub A: MatrixJson,
    pub B: MatrixJson,
    pub Q: MatrixJson,
    pub S: MatrixJson,
    pub R: MatrixJson,
}

fn default_field() -> Field {
    Field::Real
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateJson {
    pub residual_on_v: f64,
    pub rank_condition_ok: bool,
    pub stabilizing: bool,
    pub kyp_feasible: bool,
    pub hermitian: bool,
    pub popov_rank: usize,
    pub normal_rank: usize,
    pub passes: bool,
}

impl CertificateJson {
    pub fn from_certificate(c: &LureCertificate, tol: &Tolerances) -> Self {
        CertificateJson {
            residual_on_v: c.residual_on_v,
            rank_condition_ok: c.rank_condition_ok,
            stabilizing: c.stabilizing,
            kyp_feasible: c.kyp_feasible,
            hermitian: c.hermitian,
            popov_rank: c.popov_rank,
            normal_rank: c.normal_rank,
            passes: c.passes(tol),
        }
    }
}

#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    #[serde(default = "default_field")]
    pub field: Field,
    pub X: MatrixJson,
    pub K: MatrixJson,
    pub L: MatrixJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateJson>,
}

pub fn matrix_from_json(name: &str, rows: &MatrixJson, shape: (usize, usize)) -> Result<CMat> {
    let (r, c) = shape;
    // an empty list stands for any matrix with no rows or no columns
    if r == 0 || c == 0 {
        if rows.iter().all(|row| row.is_empty()) && (rows.is_empty() || rows.len() == r) {
            return Ok(CMat::zeros(r, c));
        }
        return invalid(format!("{name}: expected a {r}x{c} matrix"));
    }
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        let got_c = rows.first().map_or(0, |row| row.len());
        return invalid(format!("{name}: expected a {r}x{c} matrix, found {}x{got_c}", rows.len()));
    }
    let m = CMat::from_fn(r, c, |i, j| rows[i][j].value());
    if !m.iter().all(|z| z.is_finite()) {
        return invalid(format!("{name}: entries must be finite"));
    }
    Ok(m)
}

pub fn matrix_to_json(m: &CMat, field: Field) -> MatrixJson {
    (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .map(|j| {
                    let z = m[(i, j)];
                    match field {
                        Field::Real => Entry::Real(z.re),
                        Field::Complex => Entry::Complex([z.re, z.im]),
                    }
                })
                .collect()
        })
        .collect()
}

fn field_of(ms: &[&CMat]) -> Field {
    if ms.iter().all(|m| m.iter().all(|z| z.im == 0.0)) {
        Field::Real
    } else {
        Field::Complex
    }
}

fn asymmetry(m: &CMat) -> f64 {
    (m - m.adjoint()).iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

impl SystemFile {
    pub fn from_system(w: &WeightedSystem) -> Self {
        let field = field_of(&[w.e(), w.a(), w.b(), &w.q, &w.s, &w.r]);
        SystemFile {
            n: w.n(),
            m: w.m(),
            field,
            E: matrix_to_json(w.e(), field),
            A: matrix_to_json(w.a(), field),
            B: matrix_to_json(w.b(), field),
            Q: matrix_to_json(&w.q, field),
            S: matrix_to_json(&w.s, field),
            R: matrix_to_json(&w.r, field),
        }
    }

    /// Builds the weighted system; the second value lists warnings.
    pub fn to_system(&self, tol: &Tolerances) -> Result<(WeightedSystem, Vec<String>)> {
        let (n, m) = (self.n, self.m);
        let e = matrix_from_json("E", &self.E, (n, n))?;
        let a = matrix_from_json("A", &self.A, (n, n))?;
        let b = matrix_from_json("B", &self.B, (n, m))?;
        let q = matrix_from_json("Q", &self.Q, (n, n))?;
        let s = matrix_from_json("S", &self.S, (n, m))?;
        let r = matrix_from_json("R", &self.R, (m, m))?;
        let mut warnings = Vec::new();
        for (name, mm) in [("Q", &q), ("R", &r)] {
            let d = asymmetry(mm);
            if d > 1e-8 {
                warnings.push(format!("{name} is not Hermitian (asymmetry {d:.3e}); using its Hermitian part"));
            }
        }
        if self.field == Field::Real && [&e, &a, &b, &q, &s, &r].iter().any(|mm| mm.iter().any(|z| z.im != 0.0)) {
            warnings.push("field is \"real\" but complex entries were found".into());
        }
        let sys = DescriptorSystem::new_with(e, a, b, tol)?;
        Ok((WeightedSystem::new(sys, q, s, r)?, warnings))
    }
}

impl SolutionFile {
    pub fn from_solution(sol: &LureSolution, cert: Option<CertificateJson>) -> Self {
        let field = field_of(&[&sol.x, &sol.k, &sol.l]);
        SolutionFile {
            n: sol.x.nrows(),
            m: sol.l.ncols(),
            q: sol.q(),
            field,
            X: matrix_to_json(&sol.x, field),
            K: matrix_to_json(&sol.k, field),
            L: matrix_to_json(&sol.l, field),
            certificate: cert,
        }
    }

    pub fn to_solution(&self) -> Result<LureSolution> {
        Ok(LureSolution {
            x: matrix_from_json("X", &self.X, (self.n, self.n))?,
            k: matrix_from_json("K", &self.K, (self.q, self.n))?,
            l: matrix_from_json("L", &self.L, (self.q, self.m))?,
        })
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("malformed {what}: {e}")))
}

pub fn read_system(path: &Path, tol: &Tolerances) -> Result<(WeightedSystem, Vec<String>)> {
    parse_json::<SystemFile>(&read_text(path)?, "system file")?.to_system(tol)
}

pub fn read_solution(path: &Path) -> Result<LureSolution> {
    parse_json::<SolutionFile>(&read_text(path)?, "solution file")?.to_solution()
}

pub fn to_json_pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Parses `"0,1"` or `"1+2i, -3i"` style vectors.
pub fn parse_vector(s: &str, n: usize) -> Result<CVec> {
    let parts: Vec<&str> = s.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    if parts.len() != n {
        return invalid(format!("vector \"{s}\" has {} entries, expected {n}", parts.len()));
    }
    let vals = parts.iter().map(|p| parse_complex(p)).collect::<Result<Vec<_>>>()?;
    Ok(CVec::from_vec(vals))
}

fn parse_complex(p: &str) -> Result<C64> {
    let bad = || Error::InvalidInput(format!("cannot parse number \"{p}\""));
    let t = p.replace(' ', "");
    if let Some(body) = t.strip_suffix('i').or_else(|| t.strip_suffix('j')) {
        // split at the last sign that is not an exponent sign
        let bytes = body.as_bytes();
        let split = (1..bytes.len()).rev().find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
        let (re, im) = match split {
            Some(k) => (&body[..k], &body[k..]),
            None => ("0", body),
        };
        let im = match im {
            "" | "+" => 1.0,
            "-" => -1.0,
            s => s.parse::<f64>().map_err(|_| bad())?,
        };
        return Ok(C64::new(re.parse::<f64>().map_err(|_| bad())?, im));
    }
    Ok(C64::new(t.parse::<f64>().map_err(|_| bad())?, 0.0))
}

pub fn inertia_csv(rows: &[(f64, InertiaTriple)]) -> String {
    let mut s = String::from("omega,n_plus,n_zero,n_minus\n");
    for (om, t) in rows {
        let _ = writeln!(s, "{om},{},{},{}", t.n_plus, t.n_zero, t.n_minus);
    }
    s
}

fn fmt_entry(z: C64) -> String {
    if z.im == 0.0 {
        format!("{}", z.re)
    } else {
        format!("{}{:+}i", z.re, z.im)
    }
}

/// Columns `j, x1..xn, u1..um, stage_cost, partial_sum`.
pub fn trajectory_csv(traj: &Trajectory, stage: &[f64]) -> String {
    let n = traj.x.first().map_or(0, |x| x.len());
    let m = traj.u.first().map_or(0, |u| u.len());
    let mut s = String::from("j");
    for i in 1..=n {
        let _ = write!(s, ",x{i}");
    }
    for i in 1..=m {
        let _ = write!(s, ",u{i}");
    }
    s.push_str(",stage_cost,partial_sum\n");
    let mut acc = 0.0;
    for (j, c) in stage.iter().enumerate().take(traj.horizon()) {
        acc += c;
        let _ = write!(s, "{j}");
        for z in traj.x[j].iter().chain(traj.u[j].iter()) {
            let _ = write!(s, ",{}", fmt_entry(*z));
        }
        let _ = writeln!(s, ",{c},{acc}");
    }
    s
}
