//! Prints `n` draws from a contaminated model, one per line.
//!
//! ```text
//! cargo run --example draw -- <n> <seed> [eps] [contaminant]
//! ```

use mmloc::{CentralModel, Contaminant, MixtureDistribution};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args
        .first()
        .and_then(|s| s.parse().ok())
        .expect("usage: draw <n> <seed> [eps] [contaminant]");
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).expect("seed");
    let eps: f64 = args.get(2).map_or(0.0, |s| s.parse().expect("eps"));
    let contaminant: Contaminant = args
        .get(3)
        .map_or("point:4", String::as_str)
        .parse()
        .expect("contaminant");
    let dist = MixtureDistribution::new(eps, 0.0, 1.0, CentralModel::StandardNormal, contaminant)
        .expect("model");
    for x in dist.sample(n, seed).expect("sample") {
        println!("{x:?}");
    }
}
