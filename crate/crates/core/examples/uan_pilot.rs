//! Pilot run that locks the KS threshold used by the acceptance suite.
//!
//! Runs the uniform-normality probe for the default tuning at eps = 0.1 with a
//! point mass at 4 under a seed that the acceptance run never uses, and writes
//! `tests/fixtures/uan_pilot.json`. The threshold is the pilot KS distance at
//! the largest sample size plus the asymptotic 95% KS critical value
//! 1.36 / sqrt(replications).
//!
//! ```text
//! cargo run --release --example uan_pilot
//! ```

use std::path::Path;

use mmloc::numeric::round_json_sig12;
use mmloc::simulation::{run_uan_probe, SimConfig, TuningConfig, SCHEMA_VERSION};
use serde_json::json;

const PILOT_SEED: u64 = 0x5EED_0001;

fn main() -> mmloc::Result<()> {
    let cfg = SimConfig {
        schema_version: SCHEMA_VERSION,
        master_seed: PILOT_SEED,
        sample_sizes: vec![200, 2000],
        replications: 5000,
        eps_values: vec![0.1],
        contaminants: Some(vec!["point:4".into()]),
        central: "normal".into(),
        mu: 0.0,
        sigma: 1.0,
        tuning: TuningConfig::default(),
        delta: 0.1,
        output: String::new(),
    };
    let (cells, _) = run_uan_probe(&cfg)?;
    let ks: Vec<f64> = cells.iter().map(|c| c.ks).collect();
    let critical = 1.36 / (cfg.replications as f64).sqrt();
    let fixture = json!({
        "master_seed": PILOT_SEED,
        "replications": cfg.replications,
        "eps": 0.1,
        "contaminant": "point:4",
        "tuning": cfg.tuning,
        "sample_sizes": cfg.sample_sizes,
        "ks": ks,
        "critical_value": critical,
        "threshold": ks[ks.len() - 1] + critical,
    });
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/uan_pilot.json");
    let text = serde_json::to_string_pretty(&round_json_sig12(fixture))?;
    std::fs::write(&path, text + "\n")?;
    println!("{}", path.display());
    Ok(())
}
