//! The `hardy` command line.
//!
//! Exit codes: 0 success, 1 i/o or internal failure, 2 invalid
//! configuration or rejected weights, 3 nonconvergence (partial artifacts
//! are kept), 4 a verification found a violation.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::{Experiment, ExperimentConfig};
use crate::constructions::{self, check_subsolution, check_supersolution, delta_w_envelope};
use crate::discretization::GradedGrid;
use crate::error::{HardyError, Result};
use crate::geometry::{self, ScenarioKind};
use crate::report::{curve_plot_script, margin_plot_script, Artifacts};
use crate::solver::{self, find_threshold, local_hardy_check, min_rayleigh, mu_curve, QuotientOperators};
use crate::weights;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;
pub const EXIT_VIOLATION: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "hardy", version, about = "Weighted Hardy quotients singular on a boundary submanifold")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `run.output`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimum of the discrete quotient at one lambda.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        lambda: Option<f64>,
    },
    /// mu along a lambda grid `lo:hi:count`.
    Curve {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        lambdas: Option<String>,
    },
    /// Bracket of the threshold on two grids.
    Threshold {
        #[command(flatten)]
        common: Common,
    },
    /// Distance expansions and metric components.
    VerifyGeometry {
        #[command(flatten)]
        common: Common,
    },
    /// Sign sweeps of the sub- and supersolution, flat residual and envelope.
    VerifyConstructions {
        #[command(flatten)]
        common: Common,
    },
    /// Constant of the improved local Hardy inequality.
    LocalHardy {
        #[command(flatten)]
        common: Common,
    },
    /// The boundary integral deciding attainment.
    Ik {
        #[command(flatten)]
        common: Common,
    },
    /// Every command above, with plot scripts.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// The command named in `run.command`.
    Run {
        #[command(flatten)]
        common: Common,
    },
}

/// Exit code of an error.
pub fn exit_code(e: &HardyError) -> i32 {
    match e {
        HardyError::Config { .. }
        | HardyError::Expr(_)
        | HardyError::InvalidScenario(_)
        | HardyError::HypothesisViolated { .. }
        | HardyError::InvalidGrid(_)
        | HardyError::Json(_) => EXIT_CONFIG,
        HardyError::NotConverged { .. } | HardyError::Indefinite { .. } | HardyError::PlateauNotCertified(_) => {
            EXIT_NONCONVERGENCE
        }
        _ => EXIT_INTERNAL,
    }
}

/// Result of one subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub summary: String,
}

impl Outcome {
    fn ok(summary: String) -> Self {
        Outcome { code: EXIT_OK, summary }
    }
}

fn fname(p: &std::path::Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load(common: &Common) -> Result<(Experiment, Artifacts)> {
    let exp = ExperimentConfig::load(&common.config)?.validate()?;
    let dir = common.out.clone().unwrap_or_else(|| exp.config.run.output.clone());
    let art = Artifacts::new(dir)?;
    Ok((exp, art))
}

const VALIDATION_SAMPLES: usize = 4096;

fn validated(exp: &Experiment) -> Result<()> {
    weights::validate_weights(&exp.weights, &exp.scenario, VALIDATION_SAMPLES).map(|_| ())
}

fn ambient_ops(exp: &Experiment, n: usize) -> Result<QuotientOperators> {
    let g = GradedGrid::build(&exp.scenario, n, exp.config.run.gamma)?;
    QuotientOperators::assemble(&g, &exp.weights)
}

pub fn solve(exp: &Experiment, art: &mut Artifacts, lambda: f64) -> Result<Outcome> {
    validated(exp)?;
    let ops = ambient_ops(exp, exp.config.run.n)?;
    let r = min_rayleigh(&ops, lambda, &exp.solver_options(), None)?;
    let verified = r.verify(&ops)?;
    let mut v = serde_json::to_value(&r)?;
    v["verified_residual"] = json!(verified);
    v["plateau"] = json!(exp.scenario.plateau());
    let p = art.json("solve.json", v)?;
    Ok(Outcome::ok(format!("mu({lambda}) = {:.10} -> {}", r.mu, fname(&p))))
}

pub fn curve(exp: &Experiment, art: &mut Artifacts, lambdas: &[f64]) -> Result<Outcome> {
    validated(exp)?;
    let ops = ambient_ops(exp, exp.config.run.n)?;
    let c = mu_curve(&ops, lambdas, &exp.solver_options())?;
    let csv = art.text("curve.csv", &c.to_csv())?;
    art.text("curve.gp", &curve_plot_script("curve.csv", exp.scenario.plateau(), "mu against lambda"))?;
    art.json(
        "curve.json",
        json!({
            "signature": ops.signature,
            "plateau": exp.scenario.plateau(),
            "nonincreasing": c.nonincreasing,
            "concavity_defect": c.concavity_defect,
            "audit": c.audit,
            "failed": c.failed,
        }),
    )?;
    let code = if c.failed.is_empty() { EXIT_OK } else { EXIT_NONCONVERGENCE };
    Ok(Outcome {
        code,
        summary: format!("{} points, nonincreasing = {} -> {}", c.points.len(), c.nonincreasing, fname(&csv)),
    })
}

pub fn threshold(exp: &Experiment, art: &mut Artifacts) -> Result<Outcome> {
    validated(exp)?;
    let g = &exp.config.run.grids;
    let coarse = ambient_ops(exp, g[0])?;
    let fine = ambient_ops(exp, g[1])?;
    let t = find_threshold(&coarse, &fine, exp.scenario.plateau(), exp.config.run.width, &exp.solver_options())?;
    let p = art.json("threshold.json", t.to_json())?;
    Ok(Outcome::ok(format!(
        "coarse [{}, {}], fine [{}, {}], {} -> {}",
        t.coarse.lambda_lo,
        t.coarse.lambda_hi,
        t.fine.lambda_lo,
        t.fine.lambda_hi,
        match t.overlap {
            Some((lo, hi)) => format!("overlap [{lo}, {hi}]"),
            None => "no overlap".to_string(),
        },
        fname(&p)
    )))
}

/// Rungs of the expansion ladder that fit in the scenario's collar.
fn expansion_rungs(s: &geometry::Scenario) -> Vec<f64> {
    [0.2, 0.1, 0.05, 0.025].into_iter().filter(|r| *r < 0.9 * s.safe_beta()).collect()
}

pub fn verify_geometry(exp: &Experiment, art: &mut Artifacts) -> Result<Outcome> {
    let s = exp.scenario.with_beta(exp.scenario.safe_beta())?;
    let rungs = expansion_rungs(&s);
    let samples = geometry::ladder_samples(&s, &rungs, 9, 4);
    let rep = geometry::check_distance_expansions(&s, &samples)?;
    art.text("expansions.csv", &rep.to_csv())?;
    let fits = rep.rung_fits();
    let chart = geometry::FermiChart::new(&exp.scenario, &vec![0.0; s.sub_dim()])?;
    let mut metric = Vec::new();
    for frac in [0.5, 0.25, 0.1] {
        let r = frac * chart.radius();
        let mut y = vec![0.0; s.dim()];
        let spread = (s.dim() as f64).sqrt();
        for v in &mut y {
            *v = r / spread;
        }
        let m = geometry::metric_components(&chart, &y, None)?;
        metric.push(json!({
            "y": y,
            "g11_residual": m.g11_residual,
            "g1b_residual": m.g1b_residual,
            "identity_residual": m.identity_residual,
        }));
    }
    let stable = |f: fn(&geometry::RungFit) -> f64| -> f64 {
        let v: Vec<f64> = fits.iter().map(f).filter(|c| *c > 0.0).collect();
        if v.is_empty() {
            return 1.0;
        }
        v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let p = art.json(
        "geometry.json",
        json!({
            "rungs": rungs,
            "samples": samples.len(),
            "excluded": rep.excluded.len(),
            "max_r2": rep.rows.iter().map(|r| r.r2).fold(0.0, f64::max),
            "fits": fits,
            "fit_ratio": {"c1": stable(|f| f.c1), "c3": stable(|f| f.c3), "c4": stable(|f| f.c4)},
            "metric": metric,
        }),
    )?;
    Ok(Outcome::ok(format!("{} rows -> {}", rep.rows.len(), fname(&p))))
}

pub fn verify_constructions(exp: &Experiment, art: &mut Artifacts) -> Result<Outcome> {
    validated(exp)?;
    let s = &exp.scenario;
    let run = &exp.config.run;
    let beta = exp.sweep_beta();
    let mut sweeps = Vec::new();
    let mut failed = Vec::new();
    for &eps in &run.eps {
        let r = check_subsolution(s, &exp.weights, run.sweep_lambda, eps, beta, run.samples, run.seed)?;
        let name = format!("subsolution_eps{eps}");
        art.text(&format!("{name}.csv"), &r.margin_csv())?;
        art.text(&format!("{name}.gp"), &margin_plot_script(&format!("{name}.csv"), &name))?;
        let p = art.json(&format!("{name}.json"), r.to_json())?;
        if !r.passed() {
            failed.push(fname(&p));
        }
        sweeps.push(json!({"kind": "subsolution", "eps": eps, "violations": r.violations, "report": fname(&p)}));
    }
    let r = check_supersolution(s, &exp.weights, run.sweep_lambda, beta, run.samples, run.seed)?;
    art.text("supersolution.csv", &r.margin_csv())?;
    art.text("supersolution.gp", &margin_plot_script("supersolution.csv", "supersolution"))?;
    let p = art.json("supersolution.json", r.to_json())?;
    if !r.passed() {
        failed.push(fname(&p));
    }
    sweeps.push(json!({
        "kind": "supersolution",
        "violations": r.violations,
        "positivity_violations": r.positivity_violations,
        "report": fname(&p),
    }));

    let flat = if s.kind() == ScenarioKind::FlatSlab {
        let (n, k) = (s.dim(), s.sub_dim());
        let mut rows = Vec::new();
        for dt in [0.05, 0.1, 0.2] {
            let mut x = vec![0.0; n];
            x[0] = dt / 2f64.sqrt();
            x[1] = dt / 2f64.sqrt();
            rows.push(json!({
                "delta_tilde": dt,
                "residual": constructions::flat_ground_state_residual(n, k, &x)?,
                "fd_relative_gap": constructions::flat_ground_state_fd_check(n, k, &x)?,
            }));
        }
        json!(rows)
    } else {
        serde_json::Value::Null
    };

    let sb = s.with_beta(beta)?;
    let rungs: Vec<f64> = [0.5, 0.25, 0.125, 0.0625].iter().map(|f| f * beta).collect();
    let eps_env = run.eps.iter().cloned().fold(0.0, f64::max);
    let env = delta_w_envelope(&sb, &exp.weights.q, eps_env, &rungs, 16)?;
    let summary = art.json(
        "constructions.json",
        json!({
            "beta": beta,
            "lambda": run.sweep_lambda,
            "samples": run.samples,
            "seed": run.seed,
            "sweeps": sweeps,
            "flat_residual": flat,
            "envelope": env,
        }),
    )?;
    if failed.is_empty() {
        Ok(Outcome::ok(format!("violations = 0 -> {}", fname(&summary))))
    } else {
        Ok(Outcome {
            code: EXIT_VIOLATION,
            summary: format!("violations found; see {}", failed.join(", ")),
        })
    }
}

pub fn local_hardy(exp: &Experiment, art: &mut Artifacts) -> Result<Outcome> {
    validated(exp)?;
    let run = &exp.config.run;
    let beta = exp.sweep_beta();
    let mut rows = Vec::new();
    let mut negative = None;
    for &n in &run.grids {
        let r = local_hardy_check(&exp.scenario, &exp.weights, beta, n, run.gamma, &exp.solver_options())?;
        if r.c <= 0.0 && negative.is_none() {
            let mut csv = String::from("index,value\n");
            for (i, v) in r.minimizer.iter().enumerate() {
                csv.push_str(&format!("{i},{v:.12e}\n"));
            }
            negative = Some(art.text(&format!("local_hardy_minimizer_n{n}.csv"), &csv)?);
        }
        rows.push(serde_json::to_value(&r)?);
    }
    let p = art.json("local_hardy.json", json!({"beta": beta, "results": rows}))?;
    match negative {
        None => Ok(Outcome::ok(format!("c > 0 on every grid -> {}", fname(&p)))),
        Some(dump) => Ok(Outcome {
            code: EXIT_VIOLATION,
            summary: format!("nonpositive constant; minimizer in {}", fname(&dump)),
        }),
    }
}

/// The integral only needs `q/p <= 1` on `Sigma_k`, so a maximum below one
/// is reported rather than rejected.
pub fn ik(exp: &Experiment, art: &mut Artifacts) -> Result<Outcome> {
    let rep = weights::inspect_weights(&exp.weights, &exp.scenario, VALIDATION_SAMPLES, 0);
    let blocking = rep.offenders.iter().find(|o| {
        !(o.condition == weights::Condition::MaxRatioIsOne && rep.max_ratio_on_sigma < 1.0)
    });
    if let Some(o) = blocking {
        return Err(HardyError::HypothesisViolated {
            condition: o.condition,
            detail: format!("worst value {:.6e} at {:?}", o.value, o.point),
            report: Some(Box::new(rep.clone())),
        });
    }
    let r = weights::attainment_integral(&exp.weights, &exp.scenario, exp.config.run.ik_tol)?;
    let mut v = r.to_json();
    v["max_ratio_on_sigma"] = json!(rep.max_ratio_on_sigma);
    let p = art.json("ik.json", v)?;
    let value = match r.value {
        Some(v) => format!("I_k = {v:.12}"),
        None if r.verdict == weights::Verdict::Divergent => "I_k divergent".to_string(),
        None => "I_k indeterminate".to_string(),
    };
    Ok(Outcome::ok(format!("{value} -> {}", fname(&p))))
}

/// Runs every subcommand into one directory and writes an index.
pub fn report(exp: &Experiment, art: &mut Artifacts) -> Result<Outcome> {
    let lambdas = exp.lambdas()?;
    let steps: Vec<(&str, Box<dyn Fn(&mut Artifacts) -> Result<Outcome>>)> = vec![
        ("verify-geometry", Box::new(|a| verify_geometry(exp, a))),
        ("verify-constructions", Box::new(|a| verify_constructions(exp, a))),
        ("ik", Box::new(|a| ik(exp, a))),
        ("solve", Box::new(|a| solve(exp, a, exp.config.run.lambda))),
        ("curve", Box::new(|a| curve(exp, a, &lambdas))),
        ("threshold", Box::new(|a| threshold(exp, a))),
        ("local-hardy", Box::new(|a| local_hardy(exp, a))),
    ];
    let mut index = Vec::new();
    let mut code = EXIT_OK;
    for (name, step) in steps {
        let (c, summary) = match step(art) {
            Ok(o) => (o.code, o.summary),
            Err(e) => (exit_code(&e), e.to_string()),
        };
        index.push(json!({"command": name, "exit": c, "summary": summary}));
        code = worse(code, c);
    }
    let files: Vec<String> = art
        .written()
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let p = art.json("report.json", json!({"steps": index, "artifacts": files, "exit": code}))?;
    Ok(Outcome {
        code,
        summary: format!("report -> {}", fname(&p)),
    })
}

/// Severity order: configuration, nonconvergence, violation, internal, ok.
fn worse(a: i32, b: i32) -> i32 {
    let rank = |c: i32| match c {
        EXIT_CONFIG => 4,
        EXIT_NONCONVERGENCE => 3,
        EXIT_VIOLATION => 2,
        EXIT_INTERNAL => 1,
        _ => 0,
    };
    if rank(b) > rank(a) {
        b
    } else {
        a
    }
}

fn dispatch(name: &str, exp: &Experiment, art: &mut Artifacts, lambda: Option<f64>, lambdas: Option<&str>) -> Result<Outcome> {
    match name {
        "solve" => solve(exp, art, lambda.unwrap_or(exp.config.run.lambda)),
        "curve" => {
            let l = match lambdas {
                Some(spec) => solver::parse_lambda_grid(spec)?,
                None => exp.lambdas()?,
            };
            curve(exp, art, &l)
        }
        "threshold" => threshold(exp, art),
        "verify-geometry" => verify_geometry(exp, art),
        "verify-constructions" => verify_constructions(exp, art),
        "local-hardy" => local_hardy(exp, art),
        "ik" => ik(exp, art),
        "report" => report(exp, art),
        other => Err(HardyError::Config {
            field: "run.command".into(),
            message: format!("unknown command `{other}`"),
        }),
    }
}

/// Executes a parsed command line.
pub fn execute(cli: &Cli) -> Result<Outcome> {
    let (name, common, lambda, lambdas) = match &cli.command {
        Command::Solve { common, lambda } => ("solve", common, *lambda, None),
        Command::Curve { common, lambdas } => ("curve", common, None, lambdas.as_deref()),
        Command::Threshold { common } => ("threshold", common, None, None),
        Command::VerifyGeometry { common } => ("verify-geometry", common, None, None),
        Command::VerifyConstructions { common } => ("verify-constructions", common, None, None),
        Command::LocalHardy { common } => ("local-hardy", common, None, None),
        Command::Ik { common } => ("ik", common, None, None),
        Command::Report { common } => ("report", common, None, None),
        Command::Run { common } => ("run", common, None, None),
    };
    let (exp, mut art) = load(common)?;
    let name = if name == "run" {
        exp.config.run.command.clone().ok_or_else(|| HardyError::Config {
            field: "run.command".into(),
            message: "missing".into(),
        })?
    } else {
        name.to_string()
    };
    dispatch(&name, &exp, &mut art, lambda, lambdas)
}

/// Parses `args`, runs, prints a one-line summary and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(o) => {
            println!("{}", o.summary);
            o.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_cover_error_kinds() {
        assert_eq!(exit_code(&HardyError::ZeroDenominator), EXIT_INTERNAL);
        assert_eq!(exit_code(&HardyError::Indefinite { retries: 5 }), EXIT_NONCONVERGENCE);
        assert_eq!(
            exit_code(&HardyError::Config {
                field: "x".into(),
                message: "y".into()
            }),
            EXIT_CONFIG
        );
        assert_eq!(worse(EXIT_VIOLATION, EXIT_NONCONVERGENCE), EXIT_NONCONVERGENCE);
        assert_eq!(worse(EXIT_OK, EXIT_VIOLATION), EXIT_VIOLATION);
    }

    #[test]
    fn missing_config_is_a_config_error() {
        assert_eq!(run(["hardy", "ik", "--config", "/nonexistent/config.json"]), EXIT_CONFIG);
        assert_eq!(run(["hardy", "frobnicate"]), EXIT_CONFIG);
    }
}
