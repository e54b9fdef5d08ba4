#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use mmloc::calibration::{b_of_d, c_of_efficiency, d_of_bp, C_RANGE, C_TOL, D_RANGE, D_TOL};
use mmloc::estimators::{estimate, Dataset};
use mmloc::functionals::population_functionals;
use mmloc::neighborhood::{eps_max, table1, CurvatureScaling};
use mmloc::numeric::{fmt_sig12, round_json_sig12};
use mmloc::simulation::{simulate, write_outputs, SimConfig};
use mmloc::{CentralModel, Contaminant, Error, MixtureDistribution, TuningPsi, TuningRho};

#[derive(Parser)]
#[command(
    name = "mmloc",
    version,
    about = "MM-location estimation with an S-scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Copy)]
struct Tuning {
    /// Breakdown point of the S-scale, in (0, 0.5]
    #[arg(long, default_value_t = 0.5)]
    bp: f64,
    /// Efficiency of the MM-location at the central model, in (0, 1)
    #[arg(long, default_value_t = 0.95)]
    eff: f64,
    /// Use this c instead of calibrating it from --eff
    #[arg(long)]
    c: Option<f64>,
    /// Use this d (with b = E rho_d) instead of calibrating it from --bp
    #[arg(long)]
    d: Option<f64>,
    #[arg(long, default_value = "normal")]
    central: CentralModel,
}

#[derive(Subcommand)]
enum Command {
    /// Solve d, b and c for a breakdown point and an efficiency
    Calibrate {
        #[command(flatten)]
        tuning: Tuning,
        #[arg(long)]
        text: bool,
    },
    /// S-scale, S-location and MM-location of a data file
    Estimate {
        /// One number per line; blank lines and # comments are skipped
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
        #[arg(long)]
        text: bool,
    },
    /// Population functionals and asymptotic variance of a contaminated model
    Functionals {
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        /// point:x | atoms:x:w,... | normal:m:sd | uniform:a:b
        #[arg(long, default_value = "point:4")]
        contam: Contaminant,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        mu: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[command(flatten)]
        tuning: Tuning,
        #[arg(long)]
        text: bool,
    },
    /// Largest certified contamination size for one breakdown point
    Epsmax {
        #[arg(long, default_value_t = 0.5)]
        bp: f64,
        #[arg(long, default_value = "literal")]
        scaling: CurvatureScaling,
        #[arg(long, default_value = "normal")]
        central: CentralModel,
        #[arg(long)]
        text: bool,
    },
    /// Breakdown point, d and certified contamination size for six breakdown points
    Table1 {
        #[arg(long, default_value = "literal")]
        scaling: CurvatureScaling,
        #[arg(long, default_value = "normal")]
        central: CentralModel,
        /// Aligned table instead of CSV
        #[arg(long)]
        text: bool,
    },
    /// Monte Carlo probes described by a JSON config
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's `output`
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::Json(_) | Error::Parse { .. } | Error::Config { .. } => 1,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn check_tuning_flags(t: &Tuning) -> Result<(), Failure> {
    if !(t.bp > 0.0 && t.bp <= 0.5) {
        return Err(Failure::usage(format!("--bp {} is not in (0, 0.5]", t.bp)));
    }
    if !(t.eff > 0.0 && t.eff < 1.0) {
        return Err(Failure::usage(format!("--eff {} is not in (0, 1)", t.eff)));
    }
    if t.c.is_some_and(|c| !(c > 0.0)) {
        return Err(Failure::usage("--c must be positive"));
    }
    if t.d.is_some_and(|d| !(d > 0.0)) {
        return Err(Failure::usage("--d must be positive"));
    }
    Ok(())
}

fn resolve(t: &Tuning) -> Result<(TuningPsi, TuningRho), Failure> {
    check_tuning_flags(t)?;
    let c = match t.c {
        Some(c) => c,
        None => c_of_efficiency(t.eff, t.central)?,
    };
    let (d, b) = match t.d {
        Some(d) => (d, b_of_d(d, t.central)?),
        None => (d_of_bp(t.bp, t.central)?, t.bp),
    };
    Ok((TuningPsi::new(c)?, TuningRho::new(d, b)?))
}

fn tuning_json(psi: &TuningPsi, rho: &TuningRho) -> Value {
    json!({"c": psi.c(), "d": rho.d(), "b": rho.b()})
}

fn print_value(value: Value, text: bool) {
    let value = round_json_sig12(value);
    if text {
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        let width = lines.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in lines {
            println!("{k:<width$}  {v}");
        }
    } else {
        println!(
            "{}",
            serde_json::to_string_pretty(&value).expect("serializable")
        );
    }
}

fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), v, out);
            }
        }
        Value::String(s) => out.push((prefix.into(), s.clone())),
        other => out.push((prefix.into(), other.to_string())),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Calibrate { tuning, text } => {
            let (psi, rho) = resolve(&tuning)?;
            print_value(
                json!({
                    "bp": tuning.bp,
                    "eff": tuning.eff,
                    "central": tuning.central.to_string(),
                    "d": rho.d(),
                    "b": rho.b(),
                    "c": psi.c(),
                    "tolerances": {
                        "d": D_TOL,
                        "d_range": [D_RANGE.0, D_RANGE.1],
                        "c": C_TOL,
                        "c_range": [C_RANGE.0, C_RANGE.1],
                        "expectation_abs": 1e-10,
                    },
                }),
                text,
            );
        }
        Command::Estimate { data, tuning, text } => {
            let (psi, rho) = resolve(&tuning)?;
            let data = Dataset::from_path(&data)?;
            let fit = estimate(&data, &psi, &rho);
            if fit.degenerate {
                return Err(Failure {
                    code: 2,
                    message: format!(
                        "degenerate scale: more than {} of the observations equal {}",
                        fmt_sig12(1.0 - rho.b()),
                        fmt_sig12(fit.s_location)
                    ),
                });
            }
            let mut value = to_value(&fit);
            let ci = match (fit.mm_location, fit.std_error) {
                (Some(m), Some(se)) => json!([m - 1.96 * se, m + 1.96 * se]),
                _ => Value::Null,
            };
            value["ci95"] = ci;
            value["tuning"] = tuning_json(&psi, &rho);
            print_value(value, text);
        }
        Command::Functionals {
            eps,
            contam,
            mu,
            sigma,
            tuning,
            text,
        } => {
            let (psi, rho) = resolve(&tuning)?;
            let dist = MixtureDistribution::new(eps, mu, sigma, tuning.central, contam.clone())?;
            let fv = population_functionals(&dist, &psi, &rho)?;
            let mut value = to_value(&fv);
            value["eps"] = json!(eps);
            value["contaminant"] = json!(contam.to_string());
            value["tuning"] = tuning_json(&psi, &rho);
            print_value(value, text);
        }
        Command::Epsmax {
            bp,
            scaling,
            central,
            text,
        } => {
            if !(bp > 0.0 && bp <= 0.5) {
                return Err(Failure::usage(format!("--bp {bp} is not in (0, 0.5]")));
            }
            let d = d_of_bp(bp, central)?;
            let rho = TuningRho::new(d, bp)?;
            let report = eps_max(&rho, central, scaling)?;
            let mut value = to_value(&report);
            value["bp"] = json!(bp);
            value["d"] = json!(d);
            value["eps_max"] = json!(report.eps);
            print_value(value, text);
        }
        Command::Table1 {
            scaling,
            central,
            text,
        } => {
            let rows = table1(central, scaling)?;
            if text {
                println!("{:>6}  {:>8}  {:>8}", "bp", "d", "eps_max");
                for r in rows {
                    println!("{:>6.2}  {:>8.3}  {:>8.3}", r.bp, r.d, r.eps_max);
                }
            } else {
                println!("bp,d,eps_max");
                for r in rows {
                    println!(
                        "{},{},{}",
                        fmt_sig12(r.bp),
                        fmt_sig12(r.d),
                        fmt_sig12(r.eps_max)
                    );
                }
            }
        }
        Command::Simulate { config, out } => {
            let cfg = SimConfig::from_path(&config)?;
            let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output));
            let result = simulate(&cfg)?;
            write_outputs(&result, &dir)?;
            for c in &result.cells {
                println!(
                    "contaminant={} eps={} n={} ks={} exceed_mu={} remainder_q50={} certified={}",
                    c.contaminant,
                    fmt_sig12(c.eps),
                    c.n,
                    fmt_sig12(c.ks),
                    fmt_sig12(c.exceed_mu),
                    fmt_sig12(c.remainder_q50),
                    c.certified
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    #[cfg(feature = "parallel")]
    if !matches!(cli.command, Command::Simulate { .. }) {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
