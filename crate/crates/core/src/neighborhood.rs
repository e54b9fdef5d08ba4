//! Size of the contamination neighborhood on which the S-location is
//! certified uniformly consistent: scale bounds `s⁻`/`s⁺`, the threshold `t*`
//! of the separation condition, the curvature condition, and `ε(ρ)`.

use serde::Serialize;

use crate::calibration::d_of_bp;
use crate::error::{invalid, Result};
use crate::functionals::{rho_window, solve_decreasing_scale};
use crate::kernels::TuningRho;
use crate::model::{CentralModel, MixtureDistribution, Windowed};
use crate::numeric::{bisect_predicate, golden_section};
use crate::parallel::{map_indexed, map_slice};

/// Strict inequalities count as satisfied only above this margin.
pub const CERT_MARGIN: f64 = 1e-8;
pub const EPS_TOL: f64 = 5e-4;
pub const TABLE_BPS: [f64; 6] = [0.50, 0.45, 0.40, 0.35, 0.30, 0.25];

const S_GRID: usize = 400;
const CURV_GRID: usize = 200;
const T_SEARCH_MAX: f64 = 64.0;

/// How the curvature condition scales `E ρ″((X - t)/s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CurvatureScaling {
    /// `ρ″` evaluated at `(X - t)/s`, no further factor.
    #[default]
    Literal,
    /// Second derivative of `t -> ρ((x - t)/s)`, i.e. the literal value over `s²`.
    Jacobian,
}

impl std::str::FromStr for CurvatureScaling {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(Self::Literal),
            "jacobian" => Ok(Self::Jacobian),
            other => Err(invalid(
                "scaling",
                format!("`{other}` is not literal|jacobian"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NeighborhoodReport {
    pub eps: f64,
    pub s_minus: f64,
    pub s_plus: f64,
    /// `None` when the separation condition fails for every `t`.
    pub t_star: Option<f64>,
    /// Separation left side minus `ε/(1-ε)` at `t*`, or its limit as
    /// `|t| -> ∞` when there is no `t*`.
    pub margin15: f64,
    /// `1 - (b + ε)/(1 - ε)`: the separation margin in the limit `|t| -> ∞`.
    pub limit_margin15: f64,
    /// Curvature left side minus right side; `None` without `t*`.
    pub margin16: Option<f64>,
    pub certified: bool,
    pub scaling: CurvatureScaling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TableRow {
    pub bp: f64,
    pub d: f64,
    pub eps_max: f64,
}

fn check_eps(eps: f64, rho: &TuningRho) -> Result<()> {
    if !(eps >= 0.0 && eps < rho.breakdown_point()) {
        return Err(invalid(
            "eps",
            format!("{eps} is not in [0, {})", rho.breakdown_point()),
        ));
    }
    Ok(())
}

fn central_expect_rho(
    central: &MixtureDistribution,
    rho: &TuningRho,
    t: f64,
    s: f64,
) -> Result<f64> {
    central.expect(&rho_window(*rho, t, s))
}

/// `(s⁻, s⁺)`: the scale under all contamination at the center and at infinity.
pub fn scale_bounds(eps: f64, rho: &TuningRho, central: CentralModel) -> Result<(f64, f64)> {
    check_eps(eps, rho)?;
    let f0 = MixtureDistribution::standard(central);
    let b = rho.b();
    let s_plus = solve_decreasing_scale(
        |s| Ok((1.0 - eps) * central_expect_rho(&f0, rho, 0.0, s)? + eps - b),
        1.0,
    )?;
    let s_minus = solve_decreasing_scale(
        |s| Ok((1.0 - eps) * central_expect_rho(&f0, rho, 0.0, s)? - b),
        1.0,
    )?;
    Ok((s_minus, s_plus))
}

/// Separation and curvature pieces at a fixed `ε`.
struct Conditions {
    eps: f64,
    f0: MixtureDistribution,
    rho: TuningRho,
    ratio: f64,
    s_minus: f64,
    s_plus: f64,
    s_grid: Vec<f64>,
    base: Vec<f64>,
}

impl Conditions {
    fn new(eps: f64, rho: &TuningRho, central: CentralModel) -> Result<Self> {
        let (s_minus, s_plus) = scale_bounds(eps, rho, central)?;
        let f0 = MixtureDistribution::standard(central);
        let s_grid: Vec<f64> = if s_plus > s_minus {
            let ratio = (s_plus / s_minus).ln();
            (0..S_GRID)
                .map(|k| {
                    if k == S_GRID - 1 {
                        s_plus
                    } else {
                        s_minus * (ratio * k as f64 / (S_GRID - 1) as f64).exp()
                    }
                })
                .collect()
        } else {
            vec![s_minus]
        };
        let base = map_slice(&s_grid, |&s| central_expect_rho(&f0, rho, 0.0, s))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            eps,
            f0,
            rho: *rho,
            ratio: eps / (1.0 - eps),
            s_minus,
            s_plus,
            s_grid,
            base,
        })
    }

    fn separation_at(&self, t: f64, s: f64) -> Result<f64> {
        Ok(central_expect_rho(&self.f0, &self.rho, t, s)?
            - central_expect_rho(&self.f0, &self.rho, 0.0, s)?)
    }

    /// `inf_{s in [s⁻, s⁺]} E ρ((X - t)/s) - E ρ(X/s)`.
    fn separation(&self, t: f64) -> Result<f64> {
        let mut best = (0, f64::INFINITY);
        for (k, (&s, &b0)) in self.s_grid.iter().zip(&self.base).enumerate() {
            let v = central_expect_rho(&self.f0, &self.rho, t, s)? - b0;
            if v < best.1 {
                best = (k, v);
            }
        }
        if self.s_grid.len() < 3 {
            return Ok(best.1);
        }
        let lo = self.s_grid[best.0.saturating_sub(1)];
        let hi = self.s_grid[(best.0 + 1).min(self.s_grid.len() - 1)];
        let (_, refined) = golden_section(
            |s| self.separation_at(t, s).unwrap_or(f64::INFINITY),
            lo,
            hi,
            1e-10 * hi,
        );
        Ok(best.1.min(refined))
    }

    fn limit_margin(&self) -> f64 {
        // E ρ((X - t)/s) -> 1 and E ρ(X/s⁻) = b/(1 - ε)
        1.0 - self.rho.b() / (1.0 - self.eps) - self.ratio
    }

    /// `(t*, margin at t*)`, or `None` with the limit margin.
    fn t_star(&self) -> Result<(Option<f64>, f64)> {
        if self.ratio == 0.0 {
            // every |t| > 0 separates; the closure of that set starts at 0
            return Ok((Some(0.0), self.limit_margin()));
        }
        let target = self.ratio + CERT_MARGIN;
        if self.separation(0.0)? > target {
            return Ok((Some(0.0), self.separation(0.0)? - self.ratio));
        }
        let mut hi = 1.0;
        while self.separation(hi)? <= target {
            hi *= 2.0;
            if hi > T_SEARCH_MAX {
                return Ok((None, self.limit_margin()));
            }
        }
        let mut err = None;
        let (_, t) = bisect_predicate(
            |t| match self.separation(t) {
                Ok(v) => v > target,
                Err(e) => {
                    err.get_or_insert(e);
                    true
                }
            },
            0.0,
            hi,
            1e-10,
        );
        if let Some(e) = err {
            return Err(e);
        }
        Ok((Some(t), self.separation(t)? - self.ratio))
    }

    fn curvature_at(&self, t: f64, s: f64, scaling: CurvatureScaling) -> Result<f64> {
        let rho = self.rho;
        let e = self.f0.expect(&Windowed::centered(
            move |x| rho.d2((x - t) / s),
            t,
            s,
            rho.d(),
            0.0,
            0.0,
        ))?;
        Ok(match scaling {
            CurvatureScaling::Literal => e,
            CurvatureScaling::Jacobian => e / (s * s),
        })
    }

    /// Curvature margin over `[0, t*] x [s⁻, s⁺]` (symmetric in `t`).
    fn curvature(&self, t_star: f64, scaling: CurvatureScaling) -> Result<f64> {
        let ts: Vec<f64> = (0..CURV_GRID)
            .map(|i| t_star * i as f64 / (CURV_GRID - 1) as f64)
            .collect();
        let ss: Vec<f64> = (0..CURV_GRID)
            .map(|j| {
                self.s_minus + (self.s_plus - self.s_minus) * j as f64 / (CURV_GRID - 1) as f64
            })
            .collect();
        let rows = map_indexed(CURV_GRID, |i| {
            ss.iter()
                .map(|&s| self.curvature_at(ts[i], s, scaling))
                .collect::<Result<Vec<f64>>>()
        });
        let grid = rows.into_iter().collect::<Result<Vec<_>>>()?;

        let mut cells: Vec<(usize, usize, f64)> = grid
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &v)| (i, j, v)))
            .collect();
        cells.sort_by(|a, b| a.2.total_cmp(&b.2));
        let mut best = cells[0].2;
        let clamp = |k: isize| k.clamp(0, CURV_GRID as isize - 1) as usize;
        for &(i, j, _) in cells.iter().take(3) {
            let (t_lo, t_hi) = (ts[clamp(i as isize - 1)], ts[clamp(i as isize + 1)]);
            let (s_lo, s_hi) = (ss[clamp(j as isize - 1)], ss[clamp(j as isize + 1)]);
            let (mut t, mut s) = (ts[i], ss[j]);
            for _ in 0..4 {
                if t_hi > t_lo {
                    t = golden_section(
                        |t| self.curvature_at(t, s, scaling).unwrap_or(f64::INFINITY),
                        t_lo,
                        t_hi,
                        1e-10,
                    )
                    .0;
                }
                if s_hi > s_lo {
                    s = golden_section(
                        |s| self.curvature_at(t, s, scaling).unwrap_or(f64::INFINITY),
                        s_lo,
                        s_hi,
                        1e-10,
                    )
                    .0;
                }
            }
            best = best.min(self.curvature_at(t, s, scaling)?);
        }
        Ok(best - self.ratio * self.rho.second_deriv_neg_sup())
    }

    fn report(&self, scaling: CurvatureScaling) -> Result<NeighborhoodReport> {
        let (t_star, margin15) = self.t_star()?;
        let margin16 = match t_star {
            Some(t) => Some(self.curvature(t, scaling)?),
            None => None,
        };
        let certified =
            t_star.is_some() && margin15 > CERT_MARGIN && margin16.is_some_and(|m| m > CERT_MARGIN);
        Ok(NeighborhoodReport {
            eps: self.eps,
            s_minus: self.s_minus,
            s_plus: self.s_plus,
            t_star,
            margin15,
            limit_margin15: self.limit_margin(),
            margin16,
            certified,
            scaling,
        })
    }
}

/// Smallest `t >= 0` beyond which the separation condition holds, if any.
pub fn t_star(eps: f64, rho: &TuningRho, central: CentralModel) -> Result<Option<f64>> {
    Ok(Conditions::new(eps, rho, central)?.t_star()?.0)
}

/// Curvature margin on `[-t*, t*] x [s⁻, s⁺]`; negative means the condition fails.
pub fn check_curvature(
    eps: f64,
    t_star: f64,
    rho: &TuningRho,
    central: CentralModel,
    scaling: CurvatureScaling,
) -> Result<f64> {
    if !(t_star >= 0.0) {
        return Err(invalid("t_star", format!("{t_star} is negative")));
    }
    Conditions::new(eps, rho, central)?.curvature(t_star, scaling)
}

/// Both conditions at one `ε`.
pub fn certify(
    eps: f64,
    rho: &TuningRho,
    central: CentralModel,
    scaling: CurvatureScaling,
) -> Result<NeighborhoodReport> {
    Conditions::new(eps, rho, central)?.report(scaling)
}

/// Largest certified `ε` (bisection to `5e-4`) and the report there. When no
/// `ε > 0` certifies, the report is the one at `ε = 0`.
pub fn eps_max(
    rho: &TuningRho,
    central: CentralModel,
    scaling: CurvatureScaling,
) -> Result<NeighborhoodReport> {
    let mut lo = certify(0.0, rho, central, scaling)?;
    if !lo.certified {
        return Ok(lo);
    }
    let mut hi = rho.breakdown_point();
    while hi - lo.eps > EPS_TOL {
        let mid = 0.5 * (lo.eps + hi);
        let report = certify(mid, rho, central, scaling)?;
        if report.certified {
            lo = report;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// One row per breakdown point in `{0.50, 0.45, ..., 0.25}`; rows run in parallel.
pub fn table1(central: CentralModel, scaling: CurvatureScaling) -> Result<Vec<TableRow>> {
    map_slice(&TABLE_BPS, |&bp| {
        let d = d_of_bp(bp, central)?;
        let rho = TuningRho::new(d, bp)?;
        Ok(TableRow {
            bp,
            d,
            eps_max: eps_max(&rho, central, scaling)?.eps,
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::b_of_d;

    const N: CentralModel = CentralModel::StandardNormal;

    fn calibrated(d: f64) -> TuningRho {
        TuningRho::new(d, b_of_d(d, N).unwrap()).unwrap()
    }

    // trapezoid expectation under the standard normal on a 10^6-point grid
    fn trapezoid(g: impl Fn(f64) -> f64) -> f64 {
        let (a, b, n) = (-12.0, 12.0, 1_000_000);
        let h = (b - a) / n as f64;
        (0..=n)
            .map(|i| {
                let x = a + h * i as f64;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * g(x) * N.pdf(x)
            })
            .sum::<f64>()
            * h
    }

    fn bisect(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let up = f(lo) > 0.0;
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) > 0.0) == up {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn bounds_collapse_without_contamination() {
        let rho = calibrated(1.548);
        let (lo, hi) = scale_bounds(0.0, &rho, N).unwrap();
        assert!((lo - 1.0).abs() < 1e-10 && (hi - 1.0).abs() < 1e-10);
    }

    #[test]
    fn bounds_match_trapezoid_oracle() {
        let rho = TuningRho::new(1.548, 0.5).unwrap();
        let (lo, hi) = scale_bounds(0.1, &rho, N).unwrap();
        assert!(lo < 1.0 && 1.0 < hi);
        let e = |s: f64| trapezoid(|x| rho.eval(x / s));
        let hi_oracle = bisect(|s| 0.9 * e(s) + 0.1 - 0.5, 0.5, 3.0);
        let lo_oracle = bisect(|s| 0.9 * e(s) - 0.5, 0.3, 2.0);
        assert!((hi - hi_oracle).abs() < 1e-4, "{hi} vs {hi_oracle}");
        assert!((lo - lo_oracle).abs() < 1e-4, "{lo} vs {lo_oracle}");
    }

    #[test]
    fn bounds_spread_with_eps() {
        let rho = TuningRho::new(1.548, 0.5).unwrap();
        let mut prev = scale_bounds(0.0, &rho, N).unwrap();
        for eps in [0.05, 0.1] {
            let cur = scale_bounds(eps, &rho, N).unwrap();
            assert!(cur.0 < prev.0 && cur.1 > prev.1);
            prev = cur;
        }
        assert!(scale_bounds(0.5, &rho, N).is_err());
        assert!(scale_bounds(-0.1, &rho, N).is_err());
    }

    #[test]
    fn t_star_zero_without_contamination() {
        assert_eq!(t_star(0.0, &calibrated(1.548), N).unwrap(), Some(0.0));
    }

    #[test]
    fn t_star_matches_double_grid() {
        let rho = TuningRho::new(1.548, 0.5).unwrap();
        let eps = 0.05;
        let t = t_star(eps, &rho, N).unwrap().unwrap();
        let (lo, hi) = scale_bounds(eps, &rho, N).unwrap();
        let f0 = MixtureDistribution::standard(N);
        let ss: Vec<f64> = (0..400)
            .map(|k| lo + (hi - lo) * k as f64 / 399.0)
            .collect();
        let base: Vec<f64> = ss
            .iter()
            .map(|&s| f0.expect(&rho_window(rho, 0.0, s)).unwrap())
            .collect();
        let ratio = eps / (1.0 - eps);
        let separates = |t: f64| {
            ss.iter()
                .zip(&base)
                .map(|(&s, b0)| f0.expect(&rho_window(rho, t, s)).unwrap() - b0)
                .fold(f64::INFINITY, f64::min)
                > ratio
        };
        // scan a window around t* in steps of 1e-3
        let mut grid_t = (t - 0.05).max(0.0);
        while !separates(grid_t) {
            grid_t += 1e-3;
        }
        assert!((grid_t - t).abs() < 2e-3, "{t} vs {grid_t}");
    }

    #[test]
    fn t_star_grows_with_eps() {
        let rho = TuningRho::new(1.548, 0.5).unwrap();
        let mut prev = 0.0;
        for eps in [0.02, 0.05, 0.08, 0.11] {
            let t = t_star(eps, &rho, N).unwrap().unwrap();
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn no_t_star_past_the_separation_limit() {
        // 1 - (b + eps)/(1 - eps) <= 0 once eps >= (1 - b)/2
        let rho = TuningRho::new(1.548, 0.5).unwrap();
        let report = certify(0.26, &rho, N, CurvatureScaling::Literal).unwrap();
        assert!(report.t_star.is_none() && !report.certified);
        assert!(report.limit_margin15 < 0.0);
    }

    #[test]
    fn curvature_at_center_without_contamination() {
        let rho = calibrated(1.548);
        let margin = check_curvature(0.0, 0.0, &rho, N, CurvatureScaling::Literal).unwrap();
        let oracle = trapezoid(|x| rho.d2(x));
        assert!((margin - oracle).abs() < 1e-8);
        assert!(margin > 0.0);
    }

    #[test]
    fn curvature_margin_falls_with_eps() {
        let rho = TuningRho::new(1.548, 0.5).unwrap();
        let mut prev = f64::INFINITY;
        for eps in [0.0, 0.03, 0.06, 0.09] {
            let t = t_star(eps, &rho, N).unwrap().unwrap();
            let m = check_curvature(eps, t, &rho, N, CurvatureScaling::Literal).unwrap();
            assert!(m < prev);
            prev = m;
        }
        let t = t_star(0.2, &rho, N).unwrap().unwrap();
        assert!(check_curvature(0.2, t, &rho, N, CurvatureScaling::Literal).unwrap() < 0.0);
    }

    #[test]
    fn jacobian_scaling_divides_by_s_squared() {
        let rho = TuningRho::new(1.548, 0.5).unwrap();
        let c = Conditions::new(0.05, &rho, N).unwrap();
        let (t, s) = (0.3, 1.1);
        let lit = c.curvature_at(t, s, CurvatureScaling::Literal).unwrap();
        let jac = c.curvature_at(t, s, CurvatureScaling::Jacobian).unwrap();
        assert!((jac * s * s - lit).abs() < 1e-14);
        let oracle = trapezoid(|x| rho.d2((x - t) / s));
        assert!((lit - oracle).abs() < 1e-8);
    }

    #[test]
    fn eps_max_matches_independent_oracle() {
        // numpy Gauss-Legendre + brentq implementation of the same conditions
        for (d, lit, jac) in [(1.548, 0.073, 0.080), (2.937, 0.125, 0.129)] {
            let rho = calibrated(d);
            let a = eps_max(&rho, N, CurvatureScaling::Literal).unwrap().eps;
            let b = eps_max(&rho, N, CurvatureScaling::Jacobian).unwrap().eps;
            assert!((a - lit).abs() < 1.5e-3, "{d}: {a}");
            assert!((b - jac).abs() < 1.5e-3, "{d}: {b}");
        }
    }

    #[test]
    fn certified_eps_brackets_eps_max() {
        let rho = TuningRho::new(1.548, 0.5).unwrap();
        let report = eps_max(&rho, N, CurvatureScaling::Literal).unwrap();
        assert!(report.certified);
        assert!(report.margin15 > CERT_MARGIN);
        assert!(report.margin16.unwrap() > CERT_MARGIN);
        for eps in [0.5 * report.eps, report.eps] {
            assert!(
                certify(eps, &rho, N, CurvatureScaling::Literal)
                    .unwrap()
                    .certified
            );
        }
        assert!(
            !certify(report.eps + 0.02, &rho, N, CurvatureScaling::Literal)
                .unwrap()
                .certified
        );
    }
}
