//! Seeded Monte Carlo probes of uniform consistency, uniform asymptotic
//! normality and the linear expansion of the MM-location, over a finite
//! family of contaminants.
//!
//! Every (contaminant, eps, n) cell draws replication `r` from its own
//! generator stream, so results do not depend on scheduling or thread count.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::point_estimates;
use crate::functionals::{population_functionals, w_term, FunctionalValues};
use crate::kernels::{TuningPsi, TuningRho};
use crate::model::{stream_rng, CentralModel, Contaminant, MixtureDistribution};
use crate::neighborhood::{certify, CurvatureScaling};
use crate::numeric::{fmt_sig12, median, quantile_sorted, round_json_sig12, variance};
use crate::parallel::map_indexed;

pub const SCHEMA_VERSION: u32 = 1;

fn default_central() -> String {
    "normal".into()
}

fn default_sigma() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    0.1
}

fn default_output() -> String {
    "sim-out".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningConfig {
    pub c: f64,
    pub d: f64,
    pub b: f64,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            c: TuningPsi::DEFAULT_C,
            d: TuningRho::DEFAULT_D,
            b: TuningRho::DEFAULT_B,
        }
    }
}

/// JSON document describing a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub schema_version: u32,
    pub master_seed: u64,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub eps_values: Vec<f64>,
    /// Contaminant specs (`point:4`, `normal:4:0.1`, ...); the default family when absent.
    #[serde(default)]
    pub contaminants: Option<Vec<String>>,
    #[serde(default = "default_central")]
    pub central: String,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub tuning: TuningConfig,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Directory receiving `results.csv` and `summary.json`.
    #[serde(default = "default_output")]
    pub output: String,
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn config_error(field: &str, reason: impl Into<String>) -> Error {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Self::config_error(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if self.replications == 0 {
            return Err(Self::config_error("replications", "must be at least 1"));
        }
        if self.sample_sizes.is_empty() {
            return Err(Self::config_error("sample_sizes", "must not be empty"));
        }
        if let Some(i) = self.sample_sizes.iter().position(|&n| n < 2) {
            return Err(Self::config_error(
                &format!("sample_sizes[{i}]"),
                "must be at least 2",
            ));
        }
        if self.eps_values.is_empty() {
            return Err(Self::config_error("eps_values", "must not be empty"));
        }
        let (_, rho) = self
            .tuning()
            .map_err(|e| Self::config_error("tuning", e.to_string()))?;
        for (i, &eps) in self.eps_values.iter().enumerate() {
            if !(eps >= 0.0 && eps < rho.breakdown_point()) {
                return Err(Self::config_error(
                    &format!("eps_values[{i}]"),
                    format!("{eps} is not in [0, {})", rho.breakdown_point()),
                ));
            }
        }
        if !(self.delta > 0.0) {
            return Err(Self::config_error("delta", "must be positive"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) || !self.mu.is_finite() {
            return Err(Self::config_error(
                "sigma",
                "mu must be finite and sigma positive",
            ));
        }
        self.central_model()?;
        self.family()?;
        Ok(())
    }

    pub fn tuning(&self) -> Result<(TuningPsi, TuningRho)> {
        Ok((
            TuningPsi::new(self.tuning.c)?,
            TuningRho::new(self.tuning.d, self.tuning.b)?,
        ))
    }

    pub fn central_model(&self) -> Result<CentralModel> {
        self.central
            .parse()
            .map_err(|e: Error| Self::config_error("central", e.to_string()))
    }

    /// The contaminant family, parsed; the default one when not configured.
    pub fn family(&self) -> Result<Vec<Contaminant>> {
        match &self.contaminants {
            None => Ok(default_family(self.mu, self.sigma)),
            Some(list) => list
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    s.parse().map_err(|e: Error| {
                        Self::config_error(&format!("contaminants[{i}]"), e.to_string())
                    })
                })
                .collect(),
        }
    }
}

/// Point masses at `mu ± k sigma`, `k ∈ {2, 4, 8, 16}`, and narrow normals at `mu ± 4 sigma`.
pub fn default_family(mu: f64, sigma: f64) -> Vec<Contaminant> {
    let mut family = Vec::new();
    for k in [2.0, 4.0, 8.0, 16.0] {
        family.push(Contaminant::Point(mu + k * sigma));
        family.push(Contaminant::Point(mu - k * sigma));
    }
    for sign in [1.0, -1.0] {
        family.push(Contaminant::Normal {
            mean: mu + sign * 4.0 * sigma,
            sd: 0.1 * sigma,
        });
    }
    family
}

/// Statistics of one (contaminant, eps, n) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub contaminant: String,
    pub eps: f64,
    pub n: usize,
    pub replications: usize,
    pub degenerate: usize,
    /// Both neighborhood conditions hold at this eps (literal curvature).
    pub certified: bool,
    pub functionals: FunctionalValues,
    /// Fractions of replications with |estimate - functional| > delta.
    pub exceed_mu: f64,
    pub exceed_sigma: f64,
    pub exceed_mu_tilde: f64,
    pub median_abs_error: f64,
    /// KS distance of sqrt(n)(mu_hat - mu(F))/sqrt(V) to the standard normal.
    pub ks: f64,
    /// Empirical variance of sqrt(n) mu_hat.
    pub var_scaled: f64,
    /// Empirical variance of sqrt(n) sigma(F) mean(W).
    pub var_linear: f64,
    /// Quantiles of |R_n| = |sqrt(n)(mu_hat - mu) - sqrt(n) sigma mean(W)|.
    pub remainder_q50: f64,
    pub remainder_q90: f64,
    pub remainder_q99: f64,
}

/// Worst case over the contaminant family at one (eps, n).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FamilyMax {
    pub eps: f64,
    pub n: usize,
    pub max_ks: f64,
    pub max_exceed_mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub schema_version: u32,
    pub master_seed: u64,
    pub cells: Vec<CellResult>,
    pub family_max: Vec<FamilyMax>,
    pub notes: Vec<String>,
}

/// One replication's raw outputs.
struct Replication {
    err_mu: f64,
    err_sigma: f64,
    err_mu_tilde: f64,
    scaled: f64,
    linear: f64,
}

fn replicate(
    dist: &MixtureDistribution,
    fv: &FunctionalValues,
    psi: &TuningPsi,
    rho: &TuningRho,
    n: usize,
    master_seed: u64,
    stream: u64,
) -> Option<Replication> {
    let mut rng = stream_rng(master_seed, stream);
    let xs = dist.sample_with(&mut rng, n);
    let (mu_hat, s_est) = point_estimates(&xs, psi, rho)?;
    let root_n = (n as f64).sqrt();
    let w_bar = xs
        .iter()
        .map(|&x| w_term(x, fv, psi, rho).unwrap_or(f64::NAN))
        .sum::<f64>()
        / n as f64;
    Some(Replication {
        err_mu: mu_hat - fv.mu,
        err_sigma: s_est.scale - fv.sigma,
        err_mu_tilde: s_est.location - fv.mu_tilde,
        scaled: root_n * mu_hat,
        linear: root_n * fv.sigma * w_bar,
    })
}

fn fraction(values: &[f64], delta: f64) -> f64 {
    values.iter().filter(|v| v.abs() > delta).count() as f64 / values.len() as f64
}

/// Runs every cell of the configuration.
pub fn simulate(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let (psi, rho) = cfg.tuning()?;
    let central = cfg.central_model()?;
    let family = cfg.family()?;

    let mut cells = Vec::new();
    let mut cell_index: u64 = 0;
    for &eps in &cfg.eps_values {
        let certified = certify(eps, &rho, central, CurvatureScaling::Literal)?.certified;
        // with eps = 0 the contaminant is irrelevant: one cell
        let members: Vec<Option<&Contaminant>> = if eps == 0.0 {
            vec![None]
        } else {
            family.iter().map(Some).collect()
        };
        for h in members {
            let contaminant = h.cloned().unwrap_or(Contaminant::Point(cfg.mu));
            let dist =
                MixtureDistribution::new(eps, cfg.mu, cfg.sigma, central, contaminant.clone())?;
            let fv = population_functionals(&dist, &psi, &rho)?;
            for &n in &cfg.sample_sizes {
                let stream_base = cell_index << 32;
                cell_index += 1;
                let reps: Vec<Option<Replication>> = map_indexed(cfg.replications, |r| {
                    replicate(
                        &dist,
                        &fv,
                        &psi,
                        &rho,
                        n,
                        cfg.master_seed,
                        stream_base | r as u64,
                    )
                });
                let reps: Vec<Replication> = reps.into_iter().flatten().collect();
                let degenerate = cfg.replications - reps.len();
                if reps.len() < 2 {
                    return Err(Error::Degenerate(format!(
                        "{degenerate} of {} replications were degenerate",
                        cfg.replications
                    )));
                }
                let label = match h {
                    Some(c) => c.to_string(),
                    None => "none".into(),
                };
                cells.push(summarize(
                    label, eps, n, certified, fv, degenerate, &reps, cfg.delta,
                ));
            }
        }
    }

    let mut family_max: Vec<FamilyMax> = Vec::new();
    for &eps in &cfg.eps_values {
        for &n in &cfg.sample_sizes {
            let group: Vec<&CellResult> =
                cells.iter().filter(|c| c.eps == eps && c.n == n).collect();
            family_max.push(FamilyMax {
                eps,
                n,
                max_ks: group.iter().map(|c| c.ks).fold(0.0, f64::max),
                max_exceed_mu: group.iter().map(|c| c.exceed_mu).fold(0.0, f64::max),
            });
        }
    }

    Ok(SimResult {
        schema_version: SCHEMA_VERSION,
        master_seed: cfg.master_seed,
        cells,
        family_max,
        notes: vec![
            "sup over n >= m in the consistency probability is approximated by the max over the simulated sample sizes".into(),
            "sup over the contamination neighborhood is approximated by the max over the configured contaminant family".into(),
        ],
    })
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    contaminant: String,
    eps: f64,
    n: usize,
    certified: bool,
    fv: FunctionalValues,
    degenerate: usize,
    reps: &[Replication],
    delta: f64,
) -> CellResult {
    let pick = |f: fn(&Replication) -> f64| reps.iter().map(f).collect::<Vec<f64>>();
    let err_mu = pick(|r| r.err_mu);
    let root_n = (n as f64).sqrt();
    let z: Vec<f64> = err_mu.iter().map(|e| root_n * e / fv.v.sqrt()).collect();
    let mut remainder: Vec<f64> = reps
        .iter()
        .map(|r| (root_n * r.err_mu - r.linear).abs())
        .collect();
    remainder.sort_by(f64::total_cmp);
    let abs_err: Vec<f64> = err_mu.iter().map(|e| e.abs()).collect();
    CellResult {
        contaminant,
        eps,
        n,
        replications: reps.len() + degenerate,
        degenerate,
        certified,
        functionals: fv,
        exceed_mu: fraction(&err_mu, delta),
        exceed_sigma: fraction(&pick(|r| r.err_sigma), delta),
        exceed_mu_tilde: fraction(&pick(|r| r.err_mu_tilde), delta),
        median_abs_error: median(&abs_err),
        ks: ks_distance(&z).expect("at least two replications"),
        var_scaled: variance(&pick(|r| r.scaled)),
        var_linear: variance(&pick(|r| r.linear)),
        remainder_q50: quantile_sorted(&remainder, 0.5),
        remainder_q90: quantile_sorted(&remainder, 0.9),
        remainder_q99: quantile_sorted(&remainder, 0.99),
    }
}

/// Exceedance fractions per cell.
pub fn run_consistency_probe(cfg: &SimConfig) -> Result<Vec<CellResult>> {
    Ok(simulate(cfg)?.cells)
}

/// KS distances per cell and the family maximum per (eps, n).
pub fn run_uan_probe(cfg: &SimConfig) -> Result<(Vec<CellResult>, Vec<FamilyMax>)> {
    let r = simulate(cfg)?;
    Ok((r.cells, r.family_max))
}

/// Remainder quantiles per cell.
pub fn run_linearization_probe(cfg: &SimConfig) -> Result<Vec<CellResult>> {
    Ok(simulate(cfg)?.cells)
}

/// Two-sided Kolmogorov–Smirnov distance to the standard normal.
pub fn ks_distance(sample: &[f64]) -> Result<f64> {
    if sample.is_empty() {
        return Err(crate::error::invalid("sample", "must not be empty"));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    let normal = CentralModel::StandardNormal;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            ((i + 1) as f64 / m - f).max(f - i as f64 / m)
        })
        .fold(0.0, f64::max))
}

pub const CSV_HEADER: [&str; 25] = [
    "contaminant",
    "eps",
    "n",
    "replications",
    "degenerate",
    "certified",
    "mu_f",
    "sigma_f",
    "mu_tilde_f",
    "v_f",
    "h_f",
    "j_f",
    "exceed_mu",
    "exceed_sigma",
    "exceed_mu_tilde",
    "median_abs_error",
    "ks",
    "var_scaled",
    "var_linear",
    "remainder_q50",
    "remainder_q90",
    "remainder_q99",
    "rho_residual",
    "psi_residual",
    "competing_minimizer",
];

/// Writes `results.csv` (one row per cell) and `summary.json` into `dir`.
pub fn write_outputs(result: &SimResult, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("results.csv")).map_err(csv_error)?;
    w.write_record(CSV_HEADER).map_err(csv_error)?;
    for c in &result.cells {
        let f = &c.functionals;
        let mut row = vec![
            c.contaminant.clone(),
            fmt_sig12(c.eps),
            c.n.to_string(),
            c.replications.to_string(),
            c.degenerate.to_string(),
            c.certified.to_string(),
        ];
        row.extend(
            [
                f.mu,
                f.sigma,
                f.mu_tilde,
                f.v,
                f.h,
                f.j,
                c.exceed_mu,
                c.exceed_sigma,
                c.exceed_mu_tilde,
                c.median_abs_error,
                c.ks,
                c.var_scaled,
                c.var_linear,
                c.remainder_q50,
                c.remainder_q90,
                c.remainder_q99,
                f.diagnostics.rho_residual,
                f.diagnostics.psi_residual,
            ]
            .map(fmt_sig12),
        );
        row.push(
            f.diagnostics
                .competing_minimizer
                .map(fmt_sig12)
                .unwrap_or_default(),
        );
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    let json = serde_json::to_string_pretty(&round_json_sig12(serde_json::to_value(result)?))?;
    std::fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::mean;

    fn smoke(reps: usize, seed: u64) -> SimConfig {
        SimConfig {
            schema_version: 1,
            master_seed: seed,
            sample_sizes: vec![100, 400],
            replications: reps,
            eps_values: vec![0.0, 0.05],
            contaminants: Some(vec!["point:4".into(), "normal:-4:0.1".into()]),
            central: "normal".into(),
            mu: 0.0,
            sigma: 1.0,
            tuning: TuningConfig::default(),
            delta: 0.1,
            output: "unused".into(),
        }
    }

    #[test]
    fn ks_of_single_point() {
        assert!((ks_distance(&[0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(ks_distance(&[]).is_err());
    }

    #[test]
    fn ks_of_exact_quantiles() {
        let m = 100;
        let xs: Vec<f64> = (0..m)
            .map(|i| CentralModel::StandardNormal.quantile((i as f64 + 0.5) / m as f64))
            .collect();
        assert!(ks_distance(&xs).unwrap() <= 0.5 / m as f64 + 1e-15);
    }

    #[test]
    fn ks_of_normal_draws() {
        let n = 100_000;
        let xs = MixtureDistribution::standard(CentralModel::StandardNormal)
            .sample(n, 5)
            .unwrap();
        assert!(ks_distance(&xs).unwrap() < 1.36 / (n as f64).sqrt() * 1.5);
    }

    #[test]
    fn config_parsing_reports_fields() {
        let ok = r#"{"schema_version": 1, "master_seed": 1, "sample_sizes": [50],
                     "replications": 3, "eps_values": [0.0]}"#;
        let cfg = SimConfig::from_json(ok).unwrap();
        assert_eq!(cfg.family().unwrap().len(), 10);
        let missing =
            r#"{"schema_version": 1, "master_seed": 1, "sample_sizes": [50], "eps_values": [0.0]}"#;
        let err = SimConfig::from_json(missing).unwrap_err().to_string();
        assert!(err.contains("replications"), "{err}");
        let unknown = ok.replace("\"replications\"", "\"replicates\"");
        assert!(SimConfig::from_json(&unknown).is_err());
        let bad_eps = ok.replace("[0.0]", "[0.0, 0.6]");
        let err = SimConfig::from_json(&bad_eps).unwrap_err().to_string();
        assert!(err.contains("eps_values[1]"), "{err}");
        let bad_contam = ok.replace(
            "\"eps_values\"",
            "\"contaminants\": [\"point:1\", \"spike:2\"], \"eps_values\"",
        );
        let err = SimConfig::from_json(&bad_contam).unwrap_err().to_string();
        assert!(err.contains("contaminants[1]"), "{err}");
        let zero = ok.replace("\"replications\": 3", "\"replications\": 0");
        assert!(SimConfig::from_json(&zero).is_err());
    }

    #[test]
    fn default_family_is_mirrored() {
        let fam = default_family(1.0, 2.0);
        assert!(
            fam.contains(&Contaminant::Point(33.0)) && fam.contains(&Contaminant::Point(-31.0))
        );
        assert!(fam.contains(&Contaminant::Normal {
            mean: -7.0,
            sd: 0.2
        }));
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = smoke(30, 7);
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cells.len(), 2 + 2 * 2);
        let c = simulate(&smoke(30, 8)).unwrap();
        assert_ne!(a.cells[0].ks, c.cells[0].ks);
        for cell in &a.cells {
            assert!((0.0..=1.0).contains(&cell.ks));
            assert!((0.0..=1.0).contains(&cell.exceed_mu));
            assert_eq!(cell.degenerate, 0);
        }
    }

    #[test]
    fn outputs_round_trip_to_disk() {
        let dir = std::env::temp_dir().join(format!("mmloc-sim-{}", std::process::id()));
        let result = simulate(&smoke(10, 3)).unwrap();
        write_outputs(&result, &dir).unwrap();
        let csv_text = std::fs::read_to_string(dir.join("results.csv")).unwrap();
        assert_eq!(csv_text.lines().count(), 1 + result.cells.len());
        assert!(csv_text.starts_with("contaminant,eps,n,"));
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap())
                .unwrap();
        assert_eq!(json["cells"].as_array().unwrap().len(), result.cells.len());
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn streams_do_not_correlate() {
        let (mut a, mut b) = (stream_rng(11, 1), stream_rng(11, 2));
        let dist = MixtureDistribution::standard(CentralModel::StandardNormal);
        let xs = dist.sample_with(&mut a, 10_000);
        let ys = dist.sample_with(&mut b, 10_000);
        let (mx, my) = (mean(&xs), mean(&ys));
        let cov: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / 9_999.0;
        assert!((cov / (variance(&xs) * variance(&ys)).sqrt()).abs() < 0.05);
    }
}
