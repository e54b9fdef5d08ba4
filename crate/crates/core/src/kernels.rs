//! The smooth location score ψ_c and Tukey's biweight loss ρ_d.
//!
//! ψ_c is linear on `|u| <= 0.8c`, follows the quartic `p4(|u|/c)` up to `c`
//! and is flat at `p4(1)` beyond. ρ_d is the usual biweight, equal to one
//! outside `[-d, d]`. Both are C² across their breakpoints; at an exact
//! breakpoint the inner (closed) branch is used.

use crate::error::{invalid, Error, Result};

/// Coefficients of `p4` in increasing degree.
// p4 expanded about v = 1, where p4(1) = 0.9 and the first two derivatives
// vanish: p4(v) = 0.9 - 25 w^3 + 62.5 w^4 with w = 1 - v. Same polynomial as
// 38.4 - 175v + 300v^2 - 225v^3 + 62.5v^4, but flat to the last bit at w = 0.
const P4_TOP: f64 = 0.9;

fn p4(v: f64) -> f64 {
    let w = 1.0 - v;
    P4_TOP + w * w * w * (62.5 * w - 25.0)
}

fn p4_d1(v: f64) -> f64 {
    let w = 1.0 - v;
    w * w * (75.0 - 250.0 * w)
}

fn p4_d2(v: f64) -> f64 {
    let w = 1.0 - v;
    w * (750.0 * w - 150.0)
}

/// Order of a kernel derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivOrder {
    First,
    Second,
}

impl TryFrom<u8> for DerivOrder {
    type Error = Error;

    fn try_from(order: u8) -> Result<Self> {
        match order {
            1 => Ok(DerivOrder::First),
            2 => Ok(DerivOrder::Second),
            other => Err(Error::InvalidOrder(other)),
        }
    }
}

/// Tuning constant of ψ_c.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningPsi {
    c: f64,
}

impl TuningPsi {
    /// Tuning giving 95% efficiency at the normal model.
    pub const DEFAULT_C: f64 = 1.525;

    pub fn new(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(invalid(
                "c",
                format!("must be finite and positive, got {c}"),
            ));
        }
        Ok(Self { c })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Value of |ψ| on the flat branch, `p4(1)`.
    pub fn saturation(&self) -> f64 {
        p4(1.0)
    }

    /// |u| beyond which ψ is constant.
    pub fn saturation_radius(&self) -> f64 {
        self.c
    }

    /// Points where the branch changes, on the positive half-line.
    pub fn breakpoints(&self) -> [f64; 2] {
        [0.8 * self.c, self.c]
    }

    pub fn eval(&self, u: f64) -> f64 {
        let a = u.abs();
        let v = if a <= 0.8 * self.c {
            a / self.c
        } else if a <= self.c {
            p4(a / self.c)
        } else {
            p4(1.0)
        };
        v.copysign(u)
    }

    /// ψ′(u); even in u.
    pub fn d1(&self, u: f64) -> f64 {
        let a = u.abs();
        if a <= 0.8 * self.c {
            1.0 / self.c
        } else if a <= self.c {
            p4_d1(a / self.c) / self.c
        } else {
            0.0
        }
    }

    /// ψ″(u); odd in u.
    pub fn d2(&self, u: f64) -> f64 {
        let a = u.abs();
        if a > 0.8 * self.c && a <= self.c {
            p4_d2(a / self.c) / (self.c * self.c) * u.signum()
        } else {
            0.0
        }
    }

    pub fn deriv(&self, u: f64, order: u8) -> Result<f64> {
        Ok(match DerivOrder::try_from(order)? {
            DerivOrder::First => self.d1(u),
            DerivOrder::Second => self.d2(u),
        })
    }
}

impl Default for TuningPsi {
    fn default() -> Self {
        Self { c: Self::DEFAULT_C }
    }
}

/// Tuning constant `d` of ρ_d and the right-hand side `b` of the scale equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningRho {
    d: f64,
    b: f64,
}

impl TuningRho {
    /// 50% breakdown tuning at the normal model.
    pub const DEFAULT_D: f64 = 1.548;
    pub const DEFAULT_B: f64 = 0.5;

    /// Closed-form `sup_x [ρ_1″(x)]⁻`: the minimum of `6 - 36v² + 30v⁴` is `-4.8` at `v² = 0.6`.
    const NEG_SUP_UNIT: f64 = 4.8;

    pub fn new(d: f64, b: f64) -> Result<Self> {
        if !(d.is_finite() && d > 0.0) {
            return Err(invalid(
                "d",
                format!("must be finite and positive, got {d}"),
            ));
        }
        if !(b > 0.0 && b < 1.0) {
            return Err(invalid("b", format!("must lie in (0, 1), got {b}")));
        }
        Ok(Self { d, b })
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Asymptotic breakdown point of the S-scale, `min(b, 1 - b)`.
    pub fn breakdown_point(&self) -> f64 {
        self.b.min(1.0 - self.b)
    }

    pub fn cutoff(&self) -> f64 {
        self.d
    }

    pub fn eval(&self, u: f64) -> f64 {
        if u.abs() <= self.d {
            let v2 = (u / self.d).powi(2);
            v2 * (3.0 + v2 * (-3.0 + v2))
        } else {
            1.0
        }
    }

    pub fn d1(&self, u: f64) -> f64 {
        if u.abs() <= self.d {
            let v = u / self.d;
            let v2 = v * v;
            6.0 * v * (1.0 - v2) * (1.0 - v2) / self.d
        } else {
            0.0
        }
    }

    pub fn d2(&self, u: f64) -> f64 {
        if u.abs() <= self.d {
            let v2 = (u / self.d).powi(2);
            (6.0 + v2 * (-36.0 + 30.0 * v2)) / (self.d * self.d)
        } else {
            0.0
        }
    }

    pub fn deriv(&self, u: f64, order: u8) -> Result<f64> {
        Ok(match DerivOrder::try_from(order)? {
            DerivOrder::First => self.d1(u),
            DerivOrder::Second => self.d2(u),
        })
    }

    /// `sup_x max(-ρ″(x), 0)`.
    pub fn second_deriv_neg_sup(&self) -> f64 {
        Self::NEG_SUP_UNIT / (self.d * self.d)
    }
}

impl Default for TuningRho {
    fn default() -> Self {
        Self {
            d: Self::DEFAULT_D,
            b: Self::DEFAULT_B,
        }
    }
}

/// `sup_x max(-g(x), 0)` for an arbitrary second-derivative curve supported in
/// `[-radius, radius]`: a dense grid followed by golden-section refinement
/// around the worst node.
pub fn neg_sup_by_grid<G: Fn(f64) -> f64>(g: G, radius: f64, points: usize) -> f64 {
    let points = points.max(3);
    let step = 2.0 * radius / (points - 1) as f64;
    let (mut best_x, mut best) = (0.0, f64::INFINITY);
    for i in 0..points {
        let x = -radius + step * i as f64;
        let v = g(x);
        if v < best {
            best = v;
            best_x = x;
        }
    }
    let lo = (best_x - step).max(-radius);
    let hi = (best_x + step).min(radius);
    let (_, refined) = crate::numeric::golden_section(&g, lo, hi, 1e-12 * radius.max(1.0));
    (-best.min(refined)).max(0.0)
}
