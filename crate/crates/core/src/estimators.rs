//! Sample estimators: the scale profile `s_n(t)`, the S-scale and S-location
//! that minimize it, and the MM-location solving the ψ-equation with the
//! S-scale plugged in.

use std::io::BufRead;
use std::path::Path;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::kernels::{TuningPsi, TuningRho};
use crate::numeric::{bisect_predicate, brent, golden_section};

/// Observations `x_1, ..., x_n`; finite, `n >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    obs: Vec<f64>,
}

impl Dataset {
    pub fn new(obs: Vec<f64>) -> Result<Self> {
        if obs.len() < 2 {
            return Err(invalid(
                "data",
                format!("need at least 2 observations, got {}", obs.len()),
            ));
        }
        if let Some(i) = obs.iter().position(|x| !x.is_finite()) {
            return Err(invalid("data", format!("observation {i} is not finite")));
        }
        Ok(Self { obs })
    }

    /// One number per line; blank lines and `#` comments are skipped.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut obs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let v: f64 = content.parse().map_err(|_| Error::Parse {
                line: i + 1,
                reason: format!("`{content}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: i + 1,
                    reason: format!("`{content}` is not finite"),
                });
            }
            obs.push(v);
        }
        Self::new(obs)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn values(&self) -> &[f64] {
        &self.obs
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// `x -> a * x + m`.
    pub fn affine(&self, a: f64, m: f64) -> Result<Self> {
        Self::new(self.obs.iter().map(|x| a * x + m).collect())
    }

    fn range(&self) -> (f64, f64) {
        self.obs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            })
    }
}

/// Root of the scale equation at a fixed center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleSolution {
    pub scale: f64,
    /// No positive root: at most a fraction `b` of the points differ from `t`.
    pub degenerate: bool,
}

/// S-scale and S-location of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SEstimate {
    pub scale: f64,
    pub location: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateResult {
    pub mm_location: Option<f64>,
    pub s_scale: f64,
    pub s_location: f64,
    pub std_error: Option<f64>,
    /// Plug-in asymptotic variance `V` of `sqrt(n) * mm_location`.
    pub asymptotic_variance: Option<f64>,
    pub n: usize,
    pub degenerate: bool,
}

const GRID_POINTS: usize = 512;
const GRID_RTOL: f64 = 1e-9;
const FINE_RTOL: f64 = 1e-13;

/// Solves `(1/n) sum rho((x_i - t)/s) = b` for `s`, reusing nothing between calls.
pub fn scale_profile(data: &Dataset, t: f64, rho: &TuningRho) -> ScaleSolution {
    Profile::new(data.values(), rho).solve(t, None, 1e-12)
}

/// `(1/n) sum rho((x_i - t)/s)`.
pub fn mean_rho(xs: &[f64], t: f64, s: f64, rho: &TuningRho) -> f64 {
    xs.iter().map(|x| rho.eval((x - t) / s)).sum::<f64>() / xs.len() as f64
}

/// `(1/n) sum psi((x_i - m)/s)`; nonincreasing in `m`.
pub fn mean_psi(xs: &[f64], m: f64, s: f64, psi: &TuningPsi) -> f64 {
    xs.iter().map(|x| psi.eval((x - m) / s)).sum::<f64>() / xs.len() as f64
}

struct Profile<'a> {
    xs: &'a [f64],
    rho: &'a TuningRho,
    spread: f64,
}

impl<'a> Profile<'a> {
    fn new(xs: &'a [f64], rho: &'a TuningRho) -> Self {
        let (lo, hi) = xs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
        Self {
            xs,
            rho,
            spread: hi - lo,
        }
    }

    /// Mean ρ minus b and its derivative in `s`.
    fn residual(&self, t: f64, s: f64) -> (f64, f64) {
        let inv = 1.0 / s;
        let (mut sum, mut dsum) = (0.0, 0.0);
        for &x in self.xs {
            let u = (x - t) * inv;
            sum += self.rho.eval(u);
            dsum += self.rho.d1(u) * u;
        }
        let n = self.xs.len() as f64;
        (sum / n - self.rho.b(), -dsum * inv / n)
    }

    fn solve(&self, t: f64, guess: Option<f64>, rtol: f64) -> ScaleSolution {
        let nonzero = self.xs.iter().filter(|&&x| x != t).count();
        if (nonzero as f64) <= self.rho.b() * self.xs.len() as f64 {
            return ScaleSolution {
                scale: 0.0,
                degenerate: true,
            };
        }
        let floor = 1e-12 * self.spread.max(f64::MIN_POSITIVE);
        let mut s = guess
            .filter(|g| g.is_finite() && *g > 0.0)
            .unwrap_or(self.spread.max(floor));
        let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
        for _ in 0..200 {
            let (g, dg) = self.residual(t, s);
            if g > 0.0 {
                lo = s;
            } else if g < 0.0 {
                hi = s;
            } else {
                break;
            }
            if hi.is_finite() && lo > 0.0 && hi - lo <= rtol * hi {
                s = 0.5 * (lo + hi);
                break;
            }
            let newton = s - g / dg;
            let next = if dg < 0.0 && newton > lo && newton < hi {
                newton
            } else if !hi.is_finite() {
                2.0 * s
            } else if lo == 0.0 {
                if s <= floor * 1e-200 {
                    break;
                }
                0.5 * s
            } else {
                (lo * hi).sqrt()
            };
            let done = (next - s).abs() <= rtol * s;
            s = next;
            if done {
                break;
            }
        }
        ScaleSolution {
            scale: s,
            degenerate: false,
        }
    }
}

/// Largest group of tied observations, returned as (value, count).
fn largest_tie(xs: &[f64]) -> (f64, usize) {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (sorted[0], 0);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        if j - i > best.1 {
            best = (sorted[i], j - i);
        }
        i = j;
    }
    best
}

/// Minimizer of `s_n` on a grid cell around a local minimum. At an interior
/// minimum `ds/dt = 0`, i.e. `mean rho'((x - t)/s(t)) = 0`; solving that is far
/// sharper than comparing profile values, which are flat to second order.
fn refine_minimum(profile: &Profile<'_>, a: f64, b: f64, seed: f64, tol: f64) -> (f64, f64) {
    let stationarity = |t: f64| {
        let s = profile.solve(t, Some(seed), FINE_RTOL).scale;
        profile
            .xs
            .iter()
            .map(|x| profile.rho.d1((x - t) / s))
            .sum::<f64>()
    };
    let (ha, hb) = (stationarity(a), stationarity(b));
    if ha >= 0.0 && hb <= 0.0 {
        if let Ok(t) = brent(stationarity, a, b, 1e-4 * tol, 0.0) {
            return (t, profile.solve(t, Some(seed), FINE_RTOL).scale);
        }
    }
    golden_section(|t| profile.solve(t, Some(seed), FINE_RTOL).scale, a, b, tol)
}

/// Scale and location of the S-estimate; `scale == 0` flags degeneracy.
fn s_search(data: &Dataset, rho: &TuningRho) -> (SEstimate, bool) {
    let xs = data.values();
    let n = xs.len() as f64;
    let (tie_value, tie_count) = largest_tie(xs);
    if (n - tie_count as f64) <= rho.b() * n {
        return (
            SEstimate {
                scale: 0.0,
                location: tie_value,
            },
            true,
        );
    }
    let profile = Profile::new(xs, rho);
    let (lo, hi) = data.range();
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let mut grid = Vec::with_capacity(GRID_POINTS);
    let mut guess = None;
    for i in 0..GRID_POINTS {
        let t = if i == GRID_POINTS - 1 {
            hi
        } else {
            lo + step * i as f64
        };
        let sol = profile.solve(t, guess, GRID_RTOL);
        guess = Some(sol.scale);
        grid.push((t, sol.scale));
    }

    let mut minima: Vec<usize> = (0..GRID_POINTS)
        .filter(|&i| {
            let left = i == 0 || grid[i].1 <= grid[i - 1].1;
            let right = i == GRID_POINTS - 1 || grid[i].1 <= grid[i + 1].1;
            left && right
        })
        .collect();
    minima.sort_by(|&a, &b| grid[a].1.total_cmp(&grid[b].1).then(a.cmp(&b)));
    minima.truncate(3);

    let tol = 1e-10 * (hi - lo);
    let mut best: Option<SEstimate> = None;
    for i in minima {
        let a = grid[i.saturating_sub(1)].0;
        let b = grid[(i + 1).min(GRID_POINTS - 1)].0;
        let seed = grid[i].1;
        let (t, s) = refine_minimum(&profile, a, b, seed, tol);
        let (t, s) = if grid[i].1 < s { grid[i] } else { (t, s) };
        let candidate = SEstimate {
            scale: s,
            location: t,
        };
        best = Some(match best {
            None => candidate,
            Some(cur) => {
                let tie = (candidate.scale - cur.scale).abs() <= 1e-12 * cur.scale;
                if (tie && candidate.location < cur.location)
                    || (!tie && candidate.scale < cur.scale)
                {
                    candidate
                } else {
                    cur
                }
            }
        });
    }
    let best = best.expect("grid has at least one local minimum");
    let scale = profile
        .solve(best.location, Some(best.scale), FINE_RTOL)
        .scale;
    (
        SEstimate {
            scale,
            location: best.location,
        },
        false,
    )
}

/// S-scale `inf_t s_n(t)` and S-location `argmin_t s_n(t)` (smallest minimizer on ties).
pub fn s_estimates(data: &Dataset, rho: &TuningRho) -> Result<SEstimate> {
    let (est, degenerate) = s_search(data, rho);
    if degenerate {
        return Err(Error::Degenerate(format!(
            "more than a fraction {} of the observations equal {}",
            1.0 - rho.b(),
            est.location
        )));
    }
    Ok(est)
}

/// Root in `m` of `(1/n) sum psi((x_i - m)/s) = 0`; the midpoint of the zero
/// interval when ψ saturation makes it non-unique.
pub fn mm_location(data: &Dataset, s_scale: f64, psi: &TuningPsi) -> Result<f64> {
    if !(s_scale > 0.0 && s_scale.is_finite()) {
        return Err(Error::Degenerate(format!(
            "scale must be positive, got {s_scale}"
        )));
    }
    let xs = data.values();
    let (lo, hi) = data.range();
    let reach = 2.0 * psi.saturation_radius() * s_scale;
    let (left, right) = (lo - reach, hi + reach);
    let f = |m: f64| mean_psi(xs, m, s_scale, psi);

    // left end of the zero set: f > 0 strictly before it
    let (a_lo, a_hi) = bisect_predicate(|m| f(m) <= 0.0, left, right, 0.0);
    if f(a_hi) < 0.0 {
        return Ok(0.5 * (a_lo + a_hi));
    }
    // flat zero stretch: find where f turns negative
    let (b_lo, b_hi) = bisect_predicate(|m| f(m) < 0.0, a_hi, right, 0.0);
    Ok(0.5 * (0.5 * (a_lo + a_hi) + 0.5 * (b_lo + b_hi)))
}

/// Plug-in asymptotic variance: every population expectation replaced by a
/// sample mean and the functionals by the estimates. Keeps the cross term.
fn plug_in_variance(
    xs: &[f64],
    mu: f64,
    s_est: &SEstimate,
    psi: &TuningPsi,
    rho: &TuningRho,
) -> Option<f64> {
    let n = xs.len() as f64;
    let sigma = s_est.scale;
    let (mut e, mut j_num, mut j_den) = (0.0, 0.0, 0.0);
    for &x in xs {
        let u = (x - mu) / sigma;
        let ut = (x - s_est.location) / sigma;
        e += psi.d1(u);
        j_num += psi.d1(u) * u;
        j_den += rho.d1(ut) * ut;
    }
    let (e, j_num, j_den) = (e / n, j_num / n, j_den / n);
    if e <= 0.0 || j_den == 0.0 {
        return None;
    }
    let j = j_num / j_den;
    let second: f64 = xs
        .iter()
        .map(|&x| {
            let w =
                psi.eval((x - mu) / sigma) - j * (rho.eval((x - s_est.location) / sigma) - rho.b());
            w * w
        })
        .sum::<f64>()
        / n;
    Some(sigma * sigma * second / (e * e))
}

/// S-scale, S-location, MM-location and its plug-in standard error.
pub fn estimate(data: &Dataset, psi: &TuningPsi, rho: &TuningRho) -> EstimateResult {
    let (s_est, degenerate) = s_search(data, rho);
    let n = data.len();
    if degenerate {
        return EstimateResult {
            mm_location: None,
            s_scale: 0.0,
            s_location: s_est.location,
            std_error: None,
            asymptotic_variance: None,
            n,
            degenerate: true,
        };
    }
    let mu = mm_location(data, s_est.scale, psi).ok();
    let v = mu.and_then(|m| plug_in_variance(data.values(), m, &s_est, psi, rho));
    EstimateResult {
        mm_location: mu,
        s_scale: s_est.scale,
        s_location: s_est.location,
        std_error: v.map(|v| (v / n as f64).sqrt()),
        asymptotic_variance: v,
        n,
        degenerate: false,
    }
}

/// The three point estimates without the standard error, as used in the
/// Monte Carlo loops. `None` when the sample is degenerate.
pub fn point_estimates(xs: &[f64], psi: &TuningPsi, rho: &TuningRho) -> Option<(f64, SEstimate)> {
    let data = Dataset { obs: xs.to_vec() };
    let (s_est, degenerate) = s_search(&data, rho);
    if degenerate {
        return None;
    }
    let mu = mm_location(&data, s_est.scale, psi).ok()?;
    Some((mu, s_est))
}
