use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use lqdescriptor::config::{Tolerances, DEFAULT_SEED};
use lqdescriptor::control;
use lqdescriptor::error::{Error, Result};
use lqdescriptor::io::{self, CertificateJson, SolutionFile};
use lqdescriptor::linalg::{CMat, C64};
use lqdescriptor::lure;
use lqdescriptor::palindromic::{self, build_palindromic};
use lqdescriptor::pencil;
use lqdescriptor::popov::{self, KypVerdict};
use lqdescriptor::system::{self, WeightedSystem};

/// Linear-quadratic optimal control of implicit difference equations.
#[derive(Parser)]
#[command(name = "lqd", version)]
struct Cli {
    #[command(flatten)]
    tol: TolArgs,
    /// Print reports as JSON instead of key: value lines.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct TolArgs {
    /// Rank threshold factor for input data (default: machine epsilon).
    #[arg(long, global = true)]
    tol_rank: Option<f64>,
    /// Relative unit-circle band (default: 1e-8).
    #[arg(long, global = true)]
    tol_circle: Option<f64>,
    /// Residual threshold for certificates (default: 1e-8).
    #[arg(long, global = true)]
    tol_residual: Option<f64>,
    /// Seed for sample points (default: 20150811).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

impl TolArgs {
    fn tolerances(&self) -> Tolerances {
        let mut t = Tolerances::default();
        if let Some(r) = self.tol_rank {
            t = t.with_rank(r);
        }
        if let Some(c) = self.tol_circle {
            t.circle = c;
        }
        if let Some(r) = self.tol_residual {
            t.residual = r;
        }
        t.seed = self.seed.unwrap_or(DEFAULT_SEED);
        t
    }
}

#[derive(Subcommand)]
enum Command {
    /// Regularity, spectrum, index, normal-form sizes, controllability.
    Analyze { file: PathBuf },
    /// Feedback equivalence form and its transformations.
    Fef { file: PathBuf },
    /// Popov function rank, unit-circle sweep and KYP verdict.
    Popov {
        file: PathBuf,
        /// Equispaced points added to the refined grid.
        #[arg(long, default_value_t = 256)]
        sweep: usize,
    },
    /// Inertia of the palindromic pencil along the unit circle as CSV.
    Inertia {
        file: PathBuf,
        #[arg(long, default_value_t = 64)]
        sweep: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Palindromic Kronecker census and the positivity certificate.
    PkcfCheck { file: PathBuf },
    /// KYP inequality on the system space for a given P.
    KypCheck {
        file: PathBuf,
        /// P as a JSON matrix, e.g. "[[-1,-1],[-1,-1]]".
        #[arg(long, conflicts_with = "solution")]
        p: Option<String>,
        /// Take P = X from a solution file.
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Lur'e equation: solve or verify.
    Lure {
        #[command(subcommand)]
        action: LureAction,
    },
    /// Optimal value x0* E* X E x0 (optionally against the finite-horizon oracle).
    OptimalValue {
        file: PathBuf,
        #[arg(long)]
        x0: String,
        #[arg(long)]
        solution: Option<PathBuf>,
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value_t = 30)]
        horizon: usize,
    },
    /// Optimal trajectory with multipliers; trajectory CSV to --out or stdout.
    Synthesize {
        file: PathBuf,
        #[arg(long)]
        x0: String,
        #[arg(long, default_value_t = 40)]
        horizon: usize,
        #[arg(long)]
        solution: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-horizon reference solution with terminal constraint E x_N = 0.
    Oracle {
        file: PathBuf,
        #[arg(long)]
        x0: String,
        #[arg(long, default_value_t = 30)]
        horizon: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum LureAction {
    Solve {
        file: PathBuf,
        /// Write the solution file here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Verify {
        file: PathBuf,
        #[arg(long)]
        solution: PathBuf,
        /// Exit 1 when the certificate fails.
        #[arg(long)]
        strict: bool,
    },
}

struct Ctx {
    tol: Tolerances,
    json: bool,
}

impl Ctx {
    fn load(&self, path: &Path) -> Result<WeightedSystem> {
        let (w, warnings) = io::read_system(path, &self.tol)?;
        for msg in warnings {
            eprintln!("warning: {msg}");
        }
        Ok(w)
    }

    fn report(&self, mut v: Value) {
        if let Value::Object(map) = &mut v {
            map.insert("seed".into(), json!(self.tol.seed));
        }
        if self.json {
            println!("{}", io::to_json_pretty(&v));
            return;
        }
        if let Value::Object(map) = v {
            for (k, val) in map {
                match val {
                    Value::String(s) => println!("{k}: {s}"),
                    other => println!("{k}: {other}"),
                }
            }
        }
    }
}

fn cnum(z: C64) -> Value {
    if z.im == 0.0 {
        json!(z.re)
    } else {
        json!([z.re, z.im])
    }
}

fn cmat(m: &CMat) -> Value {
    let field = if m.iter().all(|z| z.im == 0.0) { io::Field::Real } else { io::Field::Complex };
    serde_json::to_value(io::matrix_to_json(m, field)).unwrap_or(Value::Null)
}

fn solution_for(ctx: &Ctx, w: &WeightedSystem, path: &Option<PathBuf>) -> Result<lure::LureSolution> {
    match path {
        Some(p) => io::read_solution(p),
        None => lure::lure_solve(w, &ctx.tol),
    }
}

fn emit_csv(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => io::write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let ctx = Ctx { tol: cli.tol.tolerances(), json: cli.json };
    let tol = &ctx.tol;
    match cli.cmd {
        Command::Analyze { file } => {
            let w = ctx.load(&file)?;
            let spec = pencil::generalized_spectrum(&w.sys.pencil(), tol)?;
            let fef = system::feedback_form(&w, tol)?;
            let ctrl = system::controllability(&w.sys, tol)?;
            let vdim = system::system_space(&fef, tol).ncols();
            ctx.report(json!({
                "n": w.n(),
                "m": w.m(),
                "regular": true,
                "finite_eigenvalues": spec.finite_eigenvalues.iter().map(|z| cnum(*z)).collect::<Vec<_>>(),
                "infinite_multiplicity": spec.infinite_multiplicity,
                "index": spec.index,
                "n1": fef.n1,
                "n2": fef.n2,
                "n3": fef.n3,
                "r_controllable": ctrl.r_controllable,
                "c_controllable": ctrl.c_controllable,
                "i_controllable": ctrl.i_controllable,
                "stabilizable": ctrl.stabilizable,
                "uncontrollable_modes": ctrl.uncontrollable_modes.iter().map(|z| cnum(*z)).collect::<Vec<_>>(),
                "system_space_dim": vdim,
            }));
        }
        Command::Fef { file } => {
            let w = ctx.load(&file)?;
            let fef = system::feedback_form(&w, tol)?;
            ctx.report(json!({
                "n1": fef.n1,
                "n2": fef.n2,
                "n3": fef.n3,
                "W": cmat(&fef.w),
                "T": cmat(&fef.t),
                "F": cmat(&fef.f),
                "A11": cmat(&fef.a11),
                "B1": cmat(&fef.b1),
                "B2": cmat(&fef.b2),
                "E23": cmat(&fef.e23),
                "E33": cmat(&fef.e33),
                "residual": fef.residual,
            }));
        }
        Command::Popov { file, sweep } => {
            let w = ctx.load(&file)?;
            let q = popov::popov_normal_rank(&w, tol)?;
            let mut grid: Vec<f64> = (0..sweep).map(|k| TAU * k as f64 / sweep.max(1) as f64).collect();
            grid.extend(popov::refined_grid(&w, tol)?);
            grid.sort_by(|a, b| a.total_cmp(b));
            let sw = popov::popov_sweep(&w, &grid, tol);
            let verdict = match popov::kyp_verdict(&w, &grid, tol)? {
                KypVerdict::Solvable => "solvable".to_string(),
                KypVerdict::PopovNegative { omega, min_eig } => format!("not solvable: Popov eigenvalue {min_eig:.6e} at omega {omega:.6}"),
                KypVerdict::ExistenceNotGuaranteed => "existence not guaranteed (not R-controllable)".to_string(),
            };
            ctx.report(json!({
                "popov_normal_rank": q,
                "min_eigenvalue": sw.min_eig,
                "worst_omega": sw.worst_omega,
                "points": sw.points,
                "undefined_points": sw.undefined,
                "nonnegative": sw.nonnegative(tol, 1.0 + w.weight().norm()),
                "kyp": verdict,
            }));
        }
        Command::Inertia { file, sweep, out } => {
            let w = ctx.load(&file)?;
            let p = build_palindromic(&w);
            let grid: Vec<f64> = (0..sweep).map(|k| TAU * k as f64 / sweep as f64).collect();
            let rows = palindromic::inertia_sweep(&p, &grid, tol)?;
            emit_csv(&out, &io::inertia_csv(&rows))?;
        }
        Command::PkcfCheck { file } => {
            let w = ctx.load(&file)?;
            let q = popov::popov_normal_rank(&w, tol)?;
            let c = palindromic::pkcf_census(&build_palindromic(&w), q, tol)?;
            let angles: Vec<Value> = c
                .unit_circle
                .iter()
                .map(|a| {
                    json!({
                        "theta": a.theta,
                        "multiplicity": a.multiplicity,
                        "net_sign": a.net_p2,
                        "before": a.before.to_string(),
                        "at": a.at.to_string(),
                        "after": a.after.to_string(),
                    })
                })
                .collect();
            let pairs: Vec<Value> = c
                .off_circle_pairs
                .iter()
                .map(|(l, r)| json!([cnum(*l), r.map_or(json!("inf"), cnum)]))
                .collect();
            ctx.report(json!({
                "dim": c.dim,
                "normal_rank": c.normal_rank,
                "singular_block_count": c.p5_count,
                "q": c.q,
                "unit_circle": angles,
                "off_circle_pairs": pairs,
                "net_at_zero": c.net_at_zero(),
                "condition_i": c.condition_i,
                "condition_ii": c.condition_ii,
                "positivity_certified": c.positivity_certified,
            }));
        }
        Command::KypCheck { file, p, solution } => {
            let w = ctx.load(&file)?;
            let pm = match (p, solution) {
                (Some(text), _) => {
                    let mj: io::MatrixJson = io::parse_json(&text, "matrix")?;
                    io::matrix_from_json("P", &mj, (w.n(), w.n()))?
                }
                (None, Some(path)) => io::read_solution(&path)?.x,
                (None, None) => return Err(Error::InvalidInput("kyp-check needs --p or --solution".into())),
            };
            let rep = popov::kyp_check(&w, &pm, tol)?;
            ctx.report(json!({ "feasible": rep.feasible, "min_eig_on_v": rep.min_eig_on_v }));
        }
        Command::Lure { action: LureAction::Solve { file, out } } => {
            let w = ctx.load(&file)?;
            let sol = lure::lure_solve(&w, tol)?;
            let cert = lure::lure_verify(&w, &sol, tol)?;
            let text = io::to_json_pretty(&SolutionFile::from_solution(&sol, Some(CertificateJson::from_certificate(&cert, tol))));
            match out {
                Some(p) => {
                    io::write_text(&p, &text)?;
                    eprintln!("solution written to {} (seed {})", p.display(), tol.seed);
                }
                None => println!("{text}"),
            }
        }
        Command::Lure { action: LureAction::Verify { file, solution, strict } } => {
            let w = ctx.load(&file)?;
            let sol = io::read_solution(&solution)?;
            let cert = lure::lure_verify(&w, &sol, tol)?;
            let c = CertificateJson::from_certificate(&cert, tol);
            let passes = c.passes;
            ctx.report(serde_json::to_value(c).unwrap_or(Value::Null));
            if strict && !passes {
                return Ok(ExitCode::from(1));
            }
        }
        Command::OptimalValue { file, x0, solution, oracle, horizon } => {
            let w = ctx.load(&file)?;
            let x0 = io::parse_vector(&x0, w.n())?;
            control::check_initial_state(&w, &x0, tol)?;
            let sol = solution_for(&ctx, &w, &solution)?;
            let v = control::optimal_value(&w, &sol, &x0, tol)?;
            let mut rep = json!({ "optimal_value": v });
            if oracle {
                let r = control::finite_horizon_oracle(&w, &x0, horizon, tol)?;
                rep["horizon"] = json!(horizon);
                rep["oracle_value"] = json!(r.value);
                rep["oracle_gap"] = json!(r.value - v);
            }
            ctx.report(rep);
        }
        Command::Synthesize { file, x0, horizon, solution, out } => {
            let w = ctx.load(&file)?;
            let x0 = io::parse_vector(&x0, w.n())?;
            control::check_initial_state(&w, &x0, tol)?;
            let sol = solution_for(&ctx, &w, &solution)?;
            let r = control::synthesize(&w, &sol, &x0, horizon, tol)?;
            let csv = io::trajectory_csv(&r.trajectory, &r.objective.stage);
            let rep = json!({
                "optimal_value": r.optimal_value,
                "partial_sum": r.objective.total(),
                "converged": r.objective.converged,
                "existence": r.existence,
                "uniqueness": r.uniqueness,
                "step_residual": r.step_residual,
                "bvd_residual": r.bvd_residual,
                "palindromic_residual": r.palindromic_residual,
                "terminal_residual": r.terminal_residual,
                "energy_residual": r.energy_residual,
            });
            match out {
                Some(p) => {
                    io::write_text(&p, &csv)?;
                    ctx.report(rep);
                }
                None => {
                    print!("{csv}");
                    eprintln!("{}", serde_json::to_string(&rep).unwrap_or_default());
                }
            }
        }
        Command::Oracle { file, x0, horizon, out } => {
            let w = ctx.load(&file)?;
            let x0 = io::parse_vector(&x0, w.n())?;
            control::check_initial_state(&w, &x0, tol)?;
            let r = control::finite_horizon_oracle(&w, &x0, horizon, tol)?;
            let obj = control::objective(&w, &r.trajectory, horizon, tol);
            if let Some(p) = &out {
                io::write_text(p, &io::trajectory_csv(&r.trajectory, &obj.stage))?;
            }
            ctx.report(json!({ "horizon": horizon, "value": r.value, "kkt_residual": r.kkt_residual }));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
