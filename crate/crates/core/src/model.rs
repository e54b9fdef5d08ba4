//! Members of the contamination neighborhood
//! `F(x) = (1 - eps) F0((x - mu) / sigma) + eps H(x)`.
//!
//! Besides CDF evaluation and seeded sampling this module hosts the
//! expectation engine used by every population-level computation. The
//! integrands that occur (ψ, ρ and their derivatives after centering and
//! scaling) are constant outside a finite window, so an expectation splits
//! into exact atom contributions, adaptive quadrature over the window and an
//! exact tail term taken from the CDF.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::numeric;

const QUAD_TOL: f64 = 1e-13;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Symmetric unimodal law with positive density; the `F0` of the neighborhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CentralModel {
    #[default]
    StandardNormal,
    /// Standard logistic, `F(x) = 1 / (1 + exp(-x))`.
    Logistic,
}

impl CentralModel {
    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            CentralModel::StandardNormal => FRAC_1_SQRT_2PI * (-0.5 * x * x).exp(),
            CentralModel::Logistic => {
                let e = (-x.abs()).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            CentralModel::StandardNormal => 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2),
            CentralModel::Logistic => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Upper tail `1 - F(x)` without cancellation.
    pub fn sf(&self, x: f64) -> f64 {
        self.cdf(-x)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        match self {
            CentralModel::StandardNormal => normal_quantile(p),
            CentralModel::Logistic => (p / (1.0 - p)).ln(),
        }
    }

    /// Half-width beyond which the density is numerically negligible.
    fn effective_radius(&self) -> f64 {
        match self {
            CentralModel::StandardNormal => 40.0,
            CentralModel::Logistic => 745.0,
        }
    }

    /// Fisher information for location, the reciprocal of the MLE variance.
    pub fn fisher_information(&self) -> f64 {
        match self {
            CentralModel::StandardNormal => 1.0,
            CentralModel::Logistic => {
                // score is -tanh(x/2); integrate score² f numerically
                let f = |x: f64| {
                    let s = (0.5 * x).tanh();
                    s * s * self.pdf(x)
                };
                2.0 * numeric::integrate(f, 0.0, 60.0, 1e-14).unwrap_or(1.0 / 3.0)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            CentralModel::StandardNormal => rng.sample(StandardNormal),
            CentralModel::Logistic => {
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                (u / (1.0 - u)).ln()
            }
        }
    }

    fn name(&self) -> &'static str {
        match self {
            CentralModel::StandardNormal => "normal",
            CentralModel::Logistic => "logistic",
        }
    }
}

impl FromStr for CentralModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "normal" => Ok(CentralModel::StandardNormal),
            "logistic" => Ok(CentralModel::Logistic),
            other => Err(invalid(
                "central",
                format!("unknown central model `{other}`"),
            )),
        }
    }
}

impl fmt::Display for CentralModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The contaminating distribution `H`.
#[derive(Debug, Clone, PartialEq)]
pub enum Contaminant {
    Point(f64),
    /// `(location, weight)` pairs; weights sum to one.
    Atoms(Vec<(f64, f64)>),
    Normal {
        mean: f64,
        sd: f64,
    },
    Uniform {
        a: f64,
        b: f64,
    },
}

impl Contaminant {
    pub fn atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(invalid("atoms", "at least one atom is required"));
        }
        if atoms.iter().any(|&(x, w)| !x.is_finite() || !(w >= 0.0)) {
            return Err(invalid(
                "atoms",
                "locations must be finite and weights nonnegative",
            ));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(
                "atoms",
                format!("weights sum to {total}, expected 1"),
            ));
        }
        Ok(Contaminant::Atoms(atoms))
    }

    pub fn normal(mean: f64, sd: f64) -> Result<Self> {
        if !mean.is_finite() || !(sd.is_finite() && sd > 0.0) {
            return Err(invalid("normal", "mean must be finite and sd positive"));
        }
        Ok(Contaminant::Normal { mean, sd })
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(invalid(
                "uniform",
                format!("need finite a < b, got [{a}, {b}]"),
            ));
        }
        Ok(Contaminant::Uniform { a, b })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Contaminant::Point(x0) => f64::from(u8::from(x >= *x0)),
            Contaminant::Atoms(atoms) => atoms.iter().filter(|a| x >= a.0).map(|a| a.1).sum(),
            Contaminant::Normal { mean, sd } => CentralModel::StandardNormal.cdf((x - mean) / sd),
            Contaminant::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Contaminant::Point(x0) => *x0,
            Contaminant::Atoms(atoms) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for &(x, w) in atoms {
                    acc += w;
                    if u < acc {
                        return x;
                    }
                }
                atoms.last().map(|a| a.0).unwrap_or(0.0)
            }
            Contaminant::Normal { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
            Contaminant::Uniform { a, b } => rng.random_range(*a..*b),
        }
    }

    /// Mirror image about `center`.
    pub fn reflect(&self, center: f64) -> Self {
        let r = |x: f64| 2.0 * center - x;
        match self {
            Contaminant::Point(x0) => Contaminant::Point(r(*x0)),
            Contaminant::Atoms(atoms) => {
                Contaminant::Atoms(atoms.iter().map(|&(x, w)| (r(x), w)).collect())
            }
            Contaminant::Normal { mean, sd } => Contaminant::Normal {
                mean: r(*mean),
                sd: *sd,
            },
            Contaminant::Uniform { a, b } => Contaminant::Uniform { a: r(*b), b: r(*a) },
        }
    }

    /// Image under `x -> scale * x + shift`, `scale != 0`.
    pub fn affine(&self, scale: f64, shift: f64) -> Self {
        let m = |x: f64| scale * x + shift;
        match self {
            Contaminant::Point(x0) => Contaminant::Point(m(*x0)),
            Contaminant::Atoms(atoms) => {
                Contaminant::Atoms(atoms.iter().map(|&(x, w)| (m(x), w)).collect())
            }
            Contaminant::Normal { mean, sd } => Contaminant::Normal {
                mean: m(*mean),
                sd: scale.abs() * sd,
            },
            Contaminant::Uniform { a, b } => Contaminant::Uniform {
                a: m(*a).min(m(*b)),
                b: m(*a).max(m(*b)),
            },
        }
    }
}

fn parse_num(field: &'static str, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| invalid(field, format!("`{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(invalid(field, format!("`{s}` is not finite")));
    }
    Ok(v)
}

impl FromStr for Contaminant {
    type Err = Error;

    /// `point:<x0>`, `atoms:<x1>:<w1>,<x2>:<w2>,...`, `normal:<mean>:<sd>`, `uniform:<a>:<b>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| invalid("contaminant", format!("`{s}` lacks a `kind:` prefix")))?;
        match kind {
            "point" => Ok(Contaminant::Point(parse_num("point", rest)?)),
            "atoms" => {
                let atoms = rest
                    .split(',')
                    .map(|pair| {
                        let (x, w) = pair
                            .split_once(':')
                            .ok_or_else(|| invalid("atoms", format!("`{pair}` is not x:w")))?;
                        Ok((parse_num("atoms", x)?, parse_num("atoms", w)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Contaminant::atoms(atoms)
            }
            "normal" => {
                let (m, sd) = rest
                    .split_once(':')
                    .ok_or_else(|| invalid("normal", "expected normal:<mean>:<sd>"))?;
                Contaminant::normal(parse_num("normal", m)?, parse_num("normal", sd)?)
            }
            "uniform" => {
                let (a, b) = rest
                    .split_once(':')
                    .ok_or_else(|| invalid("uniform", "expected uniform:<a>:<b>"))?;
                Contaminant::uniform(parse_num("uniform", a)?, parse_num("uniform", b)?)
            }
            other => Err(invalid("contaminant", format!("unknown kind `{other}`"))),
        }
    }
}

impl fmt::Display for Contaminant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Contaminant::Point(x) => write!(f, "point:{x}"),
            Contaminant::Atoms(atoms) => {
                f.write_str("atoms:")?;
                for (i, (x, w)) in atoms.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{x}:{w}")?;
                }
                Ok(())
            }
            Contaminant::Normal { mean, sd } => write!(f, "normal:{mean}:{sd}"),
            Contaminant::Uniform { a, b } => write!(f, "uniform:{a}:{b}"),
        }
    }
}

/// An integrand that is `f(x)` on `[lo, hi]` and constant outside.
///
/// `breaks` lists interior points where `f` is only piecewise smooth; the
/// quadrature splits there.
pub struct Windowed<F> {
    f: F,
    lo: f64,
    hi: f64,
    left: f64,
    right: f64,
    breaks: Vec<f64>,
}

impl<F: Fn(f64) -> f64> Windowed<F> {
    pub fn new(f: F, lo: f64, hi: f64, left: f64, right: f64) -> Self {
        Self {
            f,
            lo,
            hi,
            left,
            right,
            breaks: Vec::new(),
        }
    }

    /// `f` is non-constant only on `|x - center| < radius * scale`.
    pub fn centered(f: F, center: f64, scale: f64, radius: f64, left: f64, right: f64) -> Self {
        Self::new(
            f,
            center - radius * scale,
            center + radius * scale,
            left,
            right,
        )
    }

    pub fn with_breaks(mut self, breaks: impl IntoIterator<Item = f64>) -> Self {
        self.breaks.extend(breaks);
        self
    }

    pub fn value(&self, x: f64) -> f64 {
        if x < self.lo {
            self.left
        } else if x > self.hi {
            self.right
        } else {
            (self.f)(x)
        }
    }

    /// `E[g(X)]` for a continuous law given by (cdf, sf, pdf) and a list of
    /// extra knots where its density concentrates.
    fn expect_continuous(
        &self,
        cdf: impl Fn(f64) -> f64,
        sf: impl Fn(f64) -> f64,
        pdf: impl Fn(f64) -> f64,
        support: (f64, f64),
        knots: &[f64],
    ) -> Result<f64> {
        let tails = self.left * cdf(self.lo) + self.right * sf(self.hi);
        let a = self.lo.max(support.0);
        let b = self.hi.min(support.1);
        if a >= b {
            return Ok(tails);
        }
        let mut cuts: Vec<f64> = self
            .breaks
            .iter()
            .chain(knots)
            .copied()
            .filter(|&x| x > a && x < b)
            .collect();
        cuts.push(a);
        cuts.push(b);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut total = tails;
        for w in cuts.windows(2) {
            total += numeric::integrate(|x| (self.f)(x) * pdf(x), w[0], w[1], QUAD_TOL)?;
        }
        Ok(total)
    }
}

/// `F = (1 - eps) F0((x - mu) / sigma) + eps H`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureDistribution {
    eps: f64,
    mu: f64,
    sigma: f64,
    central: CentralModel,
    contaminant: Contaminant,
}

impl MixtureDistribution {
    pub fn new(
        eps: f64,
        mu: f64,
        sigma: f64,
        central: CentralModel,
        contaminant: Contaminant,
    ) -> Result<Self> {
        if !(0.0..0.5).contains(&eps) {
            return Err(invalid("eps", format!("must lie in [0, 1/2), got {eps}")));
        }
        if !mu.is_finite() {
            return Err(invalid("mu", "must be finite"));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(invalid("sigma", format!("must be positive, got {sigma}")));
        }
        Ok(Self {
            eps,
            mu,
            sigma,
            central,
            contaminant,
        })
    }

    /// The uncontaminated member `F0((x - mu) / sigma)`.
    pub fn uncontaminated(central: CentralModel, mu: f64, sigma: f64) -> Result<Self> {
        Self::new(0.0, mu, sigma, central, Contaminant::Point(mu))
    }

    pub fn standard(central: CentralModel) -> Self {
        Self::uncontaminated(central, 0.0, 1.0).expect("valid parameters")
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn central(&self) -> CentralModel {
        self.central
    }

    pub fn contaminant(&self) -> &Contaminant {
        &self.contaminant
    }

    /// Image of the whole mixture under `x -> scale * x + shift`, `scale != 0`.
    /// The central model is symmetric, so a negative scale only mirrors `H`.
    pub fn affine(&self, scale: f64, shift: f64) -> Result<Self> {
        if scale == 0.0 || !scale.is_finite() {
            return Err(invalid("scale", format!("{scale} is not a nonzero number")));
        }
        Self::new(
            self.eps,
            scale * self.mu + shift,
            scale.abs() * self.sigma,
            self.central,
            self.contaminant.affine(scale, shift),
        )
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let c = self.central.cdf((x - self.mu) / self.sigma);
        if self.eps == 0.0 {
            return c;
        }
        (1.0 - self.eps) * c + self.eps * self.contaminant.cdf(x)
    }

    /// `n` i.i.d. draws using the stream `(seed, 0)`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(invalid("n", "sample size must be at least 1"));
        }
        let mut rng = stream_rng(seed, 0);
        Ok(self.sample_with(&mut rng, n))
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.draw(rng)).collect()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.eps > 0.0 && rng.random::<f64>() < self.eps {
            self.contaminant.sample(rng)
        } else {
            self.mu + self.sigma * self.central.sample(rng)
        }
    }

    /// `E_F[g(X)]` with absolute error well below `1e-10`.
    pub fn expect<F: Fn(f64) -> f64>(&self, g: &Windowed<F>) -> Result<f64> {
        let (mu, sigma, central) = (self.mu, self.sigma, self.central);
        let r = central.effective_radius();
        let knots: Vec<f64> = [-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|k| mu + k * sigma)
            .collect();
        let base = g.expect_continuous(
            |x| central.cdf((x - mu) / sigma),
            |x| central.sf((x - mu) / sigma),
            |x| central.pdf((x - mu) / sigma) / sigma,
            (mu - r * sigma, mu + r * sigma),
            &knots,
        )?;
        if self.eps == 0.0 {
            return Ok(base);
        }
        let contam = match &self.contaminant {
            Contaminant::Point(x0) => checked(g, *x0)?,
            Contaminant::Atoms(atoms) => atoms
                .iter()
                .map(|&(x, w)| Ok(w * checked(g, x)?))
                .sum::<Result<f64>>()?,
            Contaminant::Normal { mean, sd } => {
                let normal = CentralModel::StandardNormal;
                let knots: Vec<f64> = [-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0]
                    .iter()
                    .map(|k| mean + k * sd)
                    .collect();
                g.expect_continuous(
                    |x| normal.cdf((x - mean) / sd),
                    |x| normal.sf((x - mean) / sd),
                    |x| normal.pdf((x - mean) / sd) / sd,
                    (mean - 40.0 * sd, mean + 40.0 * sd),
                    &knots,
                )?
            }
            Contaminant::Uniform { a, b } => {
                let (a, b) = (*a, *b);
                g.expect_continuous(
                    |x| ((x - a) / (b - a)).clamp(0.0, 1.0),
                    |x| ((b - x) / (b - a)).clamp(0.0, 1.0),
                    |_| 1.0 / (b - a),
                    (a, b),
                    &[],
                )?
            }
        };
        Ok((1.0 - self.eps) * base + self.eps * contam)
    }
}

fn checked<F: Fn(f64) -> f64>(g: &Windowed<F>, x: f64) -> Result<f64> {
    let v = g.value(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { x, value: v })
    }
}

/// Standard normal quantile: Acklam's rational approximation polished by one
/// Halley step against the accurate CDF.
fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < 0.02425 {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - 0.02425 {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let normal = CentralModel::StandardNormal;
    let e = normal.cdf(x) - p;
    let u = e / normal.pdf(x);
    x - u / (1.0 + 0.5 * x * u)
}

/// Generator for replication `stream` under `master_seed`; streams never overlap.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}
