//! Tuning constants: `b` from `d` (or `d` from a target breakdown point) for
//! the S-scale, and `c` from a target efficiency at the central model for the
//! MM-location.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::kernels::{TuningPsi, TuningRho};
use crate::model::{CentralModel, MixtureDistribution, Windowed};
use crate::numeric::bisect_predicate;

pub const D_RANGE: (f64, f64) = (0.0, 20.0);
pub const D_TOL: f64 = 1e-6;
pub const C_RANGE: (f64, f64) = (0.1, 50.0);
pub const C_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationTarget {
    pub breakdown_point: f64,
    pub efficiency: f64,
}

impl CalibrationTarget {
    pub fn new(breakdown_point: f64, efficiency: f64) -> Result<Self> {
        check_bp(breakdown_point)?;
        if !(efficiency > 0.0 && efficiency < 1.0) {
            return Err(invalid(
                "efficiency",
                format!("{efficiency} is not in (0, 1)"),
            ));
        }
        Ok(Self {
            breakdown_point,
            efficiency,
        })
    }

    /// Solves both constants; `b` equals the breakdown point.
    pub fn solve(&self, central: CentralModel) -> Result<(TuningPsi, TuningRho)> {
        let d = d_of_bp(self.breakdown_point, central)?;
        let c = c_of_efficiency(self.efficiency, central)?;
        Ok((TuningPsi::new(c)?, TuningRho::new(d, self.breakdown_point)?))
    }
}

impl Default for CalibrationTarget {
    fn default() -> Self {
        Self {
            breakdown_point: 0.5,
            efficiency: 0.95,
        }
    }
}

fn check_bp(bp: f64) -> Result<()> {
    if bp > 0.0 && bp <= 0.5 {
        Ok(())
    } else {
        Err(invalid(
            "breakdown_point",
            format!("{bp} is not in (0, 0.5]"),
        ))
    }
}

/// `E_{F0} ρ_d(X)`.
pub fn b_of_d(d: f64, central: CentralModel) -> Result<f64> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(invalid("d", format!("{d} is not a positive number")));
    }
    // b does not enter ρ_d itself
    let rho = TuningRho::new(d, 0.5)?;
    MixtureDistribution::standard(central).expect(&Windowed::centered(
        move |x| rho.eval(x),
        0.0,
        1.0,
        d,
        1.0,
        1.0,
    ))
}

/// The `d` with `b_of_d(d) = bp`, by bisection on `(0, 20]`.
pub fn d_of_bp(bp: f64, central: CentralModel) -> Result<f64> {
    check_bp(bp)?;
    let (lo, hi) = D_RANGE;
    if b_of_d(hi, central)? > bp {
        return Err(Error::NoRoot(format!(
            "b_of_d stays above {bp} on (0, {hi}]"
        )));
    }
    let mut err = None;
    // b_of_d decreases, so "b <= bp" switches from false to true
    let (a, b) = bisect_predicate(
        |d| match b_of_d(d, central) {
            Ok(b) => b <= bp,
            Err(e) => {
                err.get_or_insert(e);
                true
            }
        },
        lo,
        hi,
        D_TOL * 1e-3,
    );
    match err {
        Some(e) => Err(e),
        None => Ok(0.5 * (a + b)),
    }
}

/// `(E ψ′_c)^2 / (E ψ_c^2 · I(F0))`: the reciprocal of the symmetric-case
/// asymptotic variance relative to the maximum likelihood estimator.
pub fn efficiency_of_c(c: f64, central: CentralModel) -> Result<f64> {
    let psi = TuningPsi::new(c)?;
    let dist = MixtureDistribution::standard(central);
    let breaks = [-0.8 * c, 0.8 * c];
    let slope = dist.expect(
        &Windowed::centered(move |x| psi.d1(x), 0.0, 1.0, c, 0.0, 0.0).with_breaks(breaks),
    )?;
    let top = psi.saturation() * psi.saturation();
    let square = dist.expect(
        &Windowed::centered(move |x| psi.eval(x).powi(2), 0.0, 1.0, c, top, top)
            .with_breaks(breaks),
    )?;
    Ok(slope * slope / (square * central.fisher_information()))
}

/// Smallest `c` in `[0.1, 50]` reaching efficiency `eff`.
pub fn c_of_efficiency(eff: f64, central: CentralModel) -> Result<f64> {
    if !(eff > 0.0 && eff < 1.0) {
        return Err(invalid("efficiency", format!("{eff} is not in (0, 1)")));
    }
    let (lo, hi) = C_RANGE;
    let lo_eff = efficiency_of_c(lo, central)?;
    if lo_eff >= eff {
        return Ok(lo);
    }
    // first grid cell whose right end reaches the target, then bisection inside it
    let cells = 500;
    let step = (hi - lo) / cells as f64;
    let mut left = lo;
    let mut right = None;
    for i in 1..=cells {
        let c = lo + step * i as f64;
        if efficiency_of_c(c, central)? >= eff {
            right = Some(c);
            break;
        }
        left = c;
    }
    let right = right.ok_or_else(|| {
        invalid(
            "efficiency",
            format!("{eff} is not attainable for c in [{lo}, {hi}]"),
        )
    })?;
    let mut err = None;
    let (a, b) = bisect_predicate(
        |c| match efficiency_of_c(c, central) {
            Ok(v) => v >= eff,
            Err(e) => {
                err.get_or_insert(e);
                true
            }
        },
        left,
        right,
        C_TOL * 1e-3,
    );
    match err {
        Some(e) => Err(e),
        None => Ok(0.5 * (a + b)),
    }
}
