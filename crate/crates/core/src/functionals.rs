//! Population counterparts of the sample estimators: `σ(F,t)`, `σ(F)`,
//! `μ̃(F)`, `μ(F)`, the asymptotic variance `V` with `H(F)` and `J(F)`, and the
//! linear term `W` of the MM-location expansion.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::kernels::{TuningPsi, TuningRho};
use crate::model::{MixtureDistribution, Windowed};
use crate::numeric::{brent, golden_section};
use crate::parallel::map_indexed;

const GRID_POINTS: usize = 512;
const GRID_HALF_WIDTH: f64 = 6.0;
const ROOT_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FunctionalValues {
    pub mu: f64,
    pub sigma: f64,
    pub mu_tilde: f64,
    pub v: f64,
    pub h: f64,
    pub j: f64,
    /// `E_F ψ′((X - μ)/σ)`, the reciprocal of `h`.
    pub e: f64,
    pub b: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    /// `E_F ρ((X - μ̃)/σ) - b`.
    pub rho_residual: f64,
    /// `E_F ψ((X - μ)/σ)`.
    pub psi_residual: f64,
    /// Another local minimizer of `σ(F,t)` within `1e-8` relative of the best.
    pub competing_minimizer: Option<f64>,
}

pub(crate) fn rho_window(rho: TuningRho, t: f64, s: f64) -> Windowed<impl Fn(f64) -> f64> {
    Windowed::centered(move |x| rho.eval((x - t) / s), t, s, rho.d(), 1.0, 1.0)
}

pub(crate) fn rho_d1_window(rho: TuningRho, t: f64, s: f64) -> Windowed<impl Fn(f64) -> f64> {
    Windowed::centered(move |x| rho.d1((x - t) / s), t, s, rho.d(), 0.0, 0.0)
}

/// `ρ′(u)·u` with `u = (x - t)/s`.
fn rho_d1u_window(rho: TuningRho, t: f64, s: f64) -> Windowed<impl Fn(f64) -> f64> {
    Windowed::centered(
        move |x| {
            let u = (x - t) / s;
            rho.d1(u) * u
        },
        t,
        s,
        rho.d(),
        0.0,
        0.0,
    )
}

fn psi_breaks(psi: TuningPsi, m: f64, s: f64) -> [f64; 2] {
    let inner = psi.breakpoints()[0] * s;
    [m - inner, m + inner]
}

fn psi_window(psi: TuningPsi, m: f64, s: f64) -> Windowed<impl Fn(f64) -> f64> {
    let top = psi.saturation();
    Windowed::centered(
        move |x| psi.eval((x - m) / s),
        m,
        s,
        psi.saturation_radius(),
        -top,
        top,
    )
    .with_breaks(psi_breaks(psi, m, s))
}

fn psi_d1_window(psi: TuningPsi, m: f64, s: f64) -> Windowed<impl Fn(f64) -> f64> {
    Windowed::centered(
        move |x| psi.d1((x - m) / s),
        m,
        s,
        psi.saturation_radius(),
        0.0,
        0.0,
    )
    .with_breaks(psi_breaks(psi, m, s))
}

fn psi_d1u_window(psi: TuningPsi, m: f64, s: f64) -> Windowed<impl Fn(f64) -> f64> {
    Windowed::centered(
        move |x| {
            let u = (x - m) / s;
            psi.d1(u) * u
        },
        m,
        s,
        psi.saturation_radius(),
        0.0,
        0.0,
    )
    .with_breaks(psi_breaks(psi, m, s))
}

/// `g(x)` on the union of the ψ window at `m` and the ρ window at `t`.
fn joint_window<G: Fn(f64) -> f64>(
    g: G,
    psi: TuningPsi,
    rho: TuningRho,
    m: f64,
    t: f64,
    s: f64,
) -> Windowed<G> {
    let rp = psi.saturation_radius() * s;
    let rr = rho.d() * s;
    let lo = (m - rp).min(t - rr);
    let hi = (m + rp).max(t + rr);
    let (left, right) = (g(lo - 1.0), g(hi + 1.0));
    Windowed::new(g, lo, hi, left, right)
        .with_breaks(psi_breaks(psi, m, s))
        .with_breaks([m - rp, m + rp, t - rr, t + rr])
}

fn admissible(dist: &MixtureDistribution, rho: &TuningRho) -> Result<()> {
    if dist.eps() >= rho.breakdown_point() {
        return Err(invalid(
            "eps",
            format!(
                "{} is not below the breakdown point {} of the scale",
                dist.eps(),
                rho.breakdown_point()
            ),
        ));
    }
    Ok(())
}

/// Expands `[lo, hi]` geometrically around `s0` until the decreasing `g`
/// changes sign, then solves with Brent.
pub(crate) fn solve_decreasing_scale<G: FnMut(f64) -> Result<f64>>(
    mut g: G,
    s0: f64,
) -> Result<f64> {
    let mut err = None;
    let mut value = |s: f64| match g(s) {
        Ok(v) => v,
        Err(e) => {
            err.get_or_insert(e);
            f64::NAN
        }
    };
    let (mut lo, mut hi) = (s0 / 1.25, s0 * 1.25);
    let mut k = 0;
    while value(lo) <= 0.0 {
        lo /= 2.0;
        k += 1;
        if k > 200 {
            return Err(Error::NoRoot("scale equation has no positive root".into()));
        }
    }
    k = 0;
    while value(hi) >= 0.0 {
        hi *= 2.0;
        k += 1;
        if k > 200 {
            return Err(Error::NoRoot("scale equation has no finite root".into()));
        }
    }
    let root = brent(&mut value, lo, hi, 0.0, ROOT_RTOL);
    match err {
        Some(e) => Err(e),
        None => root,
    }
}

fn sigma_at_from(dist: &MixtureDistribution, t: f64, rho: &TuningRho, s0: f64) -> Result<f64> {
    let b = rho.b();
    solve_decreasing_scale(|s| Ok(dist.expect(&rho_window(*rho, t, s))? - b), s0)
}

/// `σ(F,t)`: the root in `s` of `E_F ρ((X - t)/s) = b`.
pub fn sigma_at(dist: &MixtureDistribution, t: f64, rho: &TuningRho) -> Result<f64> {
    admissible(dist, rho)?;
    sigma_at_from(dist, t, rho, dist.sigma())
}

/// `d σ(F,t)/dt` has the sign of `-E ρ′((X - t)/σ(F,t))`.
fn stationarity(dist: &MixtureDistribution, t: f64, rho: &TuningRho, s0: f64) -> Result<f64> {
    let s = sigma_at_from(dist, t, rho, s0)?;
    dist.expect(&rho_d1_window(*rho, t, s))
}

fn refine(
    dist: &MixtureDistribution,
    rho: &TuningRho,
    a: f64,
    b: f64,
    s0: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    let (ha, hb) = (
        stationarity(dist, a, rho, s0)?,
        stationarity(dist, b, rho, s0)?,
    );
    let t = if ha >= 0.0 && hb <= 0.0 {
        let mut err = None;
        let t = brent(
            |t| {
                stationarity(dist, t, rho, s0).unwrap_or_else(|e| {
                    err.get_or_insert(e);
                    f64::NAN
                })
            },
            a,
            b,
            1e-4 * tol,
            0.0,
        );
        if let Some(e) = err {
            return Err(e);
        }
        t?
    } else {
        golden_section(
            |t| sigma_at_from(dist, t, rho, s0).unwrap_or(f64::INFINITY),
            a,
            b,
            tol,
        )
        .0
    };
    Ok((t, sigma_at_from(dist, t, rho, s0)?))
}

/// `σ(F) = inf_t σ(F,t)` and `μ̃(F)`, plus a competing minimizer if one is
/// numerically tied.
fn s_functionals(dist: &MixtureDistribution, rho: &TuningRho) -> Result<(f64, f64, Option<f64>)> {
    let (center, scale) = (dist.mu(), dist.sigma());
    let lo = center - GRID_HALF_WIDTH * scale;
    let step = 2.0 * GRID_HALF_WIDTH * scale / (GRID_POINTS - 1) as f64;
    let ts: Vec<f64> = (0..GRID_POINTS).map(|i| lo + step * i as f64).collect();
    let grid: Vec<f64> = map_indexed(GRID_POINTS, |i| sigma_at_from(dist, ts[i], rho, scale))
        .into_iter()
        .collect::<Result<_>>()?;

    let mut minima: Vec<usize> = (0..GRID_POINTS)
        .filter(|&i| {
            (i == 0 || grid[i] <= grid[i - 1]) && (i == GRID_POINTS - 1 || grid[i] <= grid[i + 1])
        })
        .collect();
    minima.sort_by(|&a, &b| grid[a].total_cmp(&grid[b]).then(a.cmp(&b)));
    minima.truncate(3);

    let tol = 1e-10 * scale;
    let mut refined = Vec::with_capacity(minima.len());
    for i in minima {
        let a = ts[i.saturating_sub(1)];
        let b = ts[(i + 1).min(GRID_POINTS - 1)];
        let (t, s) = refine(dist, rho, a, b, grid[i], tol)?;
        refined.push(if grid[i] < s {
            (ts[i], grid[i])
        } else {
            (t, s)
        });
    }
    let best = refined
        .iter()
        .copied()
        .reduce(|cur, cand| {
            let tie = (cand.1 - cur.1).abs() <= 1e-12 * cur.1;
            if (tie && cand.0 < cur.0) || (!tie && cand.1 < cur.1) {
                cand
            } else {
                cur
            }
        })
        .expect("grid has a local minimum");
    let competing = refined
        .iter()
        .find(|(t, s)| (t - best.0).abs() > 1e-6 * scale && (s - best.1).abs() <= 1e-8 * best.1)
        .map(|(t, _)| *t);
    Ok((best.1, best.0, competing))
}

/// Root of the decreasing `m -> E_F ψ((X - m)/σ)`.
fn mu_functional(
    dist: &MixtureDistribution,
    psi: &TuningPsi,
    sigma: f64,
    start: f64,
) -> Result<f64> {
    let mut err = None;
    let mut f = |m: f64| {
        dist.expect(&psi_window(*psi, m, sigma))
            .unwrap_or_else(|e| {
                err.get_or_insert(e);
                f64::NAN
            })
    };
    let mut width = sigma;
    let (mut lo, mut hi) = (start - width, start + width);
    for _ in 0..200 {
        if f(lo) > 0.0 && f(hi) < 0.0 {
            break;
        }
        width *= 2.0;
        lo = start - width;
        hi = start + width;
    }
    let root = brent(&mut f, lo, hi, 0.0, 1e-15);
    match err {
        Some(e) => Err(e),
        None => root,
    }
}

/// `σ(F)`, `μ̃(F)`, `μ(F)` and the asymptotic variance of the MM-location.
pub fn population_functionals(
    dist: &MixtureDistribution,
    psi: &TuningPsi,
    rho: &TuningRho,
) -> Result<FunctionalValues> {
    admissible(dist, rho)?;
    let (sigma, mu_tilde, competing) = s_functionals(dist, rho)?;
    let mu = mu_functional(dist, psi, sigma, mu_tilde)?;
    let b = rho.b();

    let e = dist.expect(&psi_d1_window(*psi, mu, sigma))?;
    if e <= 0.0 {
        return Err(Error::Degenerate(format!(
            "E psi'((X - mu)/sigma) = {e} is not positive"
        )));
    }
    let j_num = dist.expect(&psi_d1u_window(*psi, mu, sigma))?;
    let j_den = dist.expect(&rho_d1u_window(*rho, mu_tilde, sigma))?;
    if j_den == 0.0 {
        return Err(Error::Degenerate("E rho'(u) u vanishes".into()));
    }
    let j = j_num / j_den;
    let (p, r) = (*psi, *rho);
    let sq = dist.expect(&joint_window(
        move |x| {
            let w = p.eval((x - mu) / sigma) - j * (r.eval((x - mu_tilde) / sigma) - b);
            w * w
        },
        p,
        r,
        mu,
        mu_tilde,
        sigma,
    ))?;
    let h = 1.0 / e;
    Ok(FunctionalValues {
        mu,
        sigma,
        mu_tilde,
        v: sigma * sigma * h * h * sq,
        h,
        j,
        e,
        b,
        diagnostics: Diagnostics {
            rho_residual: dist.expect(&rho_window(*rho, mu_tilde, sigma))? - b,
            psi_residual: dist.expect(&psi_window(*psi, mu, sigma))?,
            competing_minimizer: competing,
        },
    })
}

/// `W(x) = (ψ((x - μ)/σ) - J (ρ((x - μ̃)/σ) - b)) / e`, so that
/// `μ̂_n - μ ≈ σ · mean W(x_i)`.
pub fn w_term(x: f64, fv: &FunctionalValues, psi: &TuningPsi, rho: &TuningRho) -> Result<f64> {
    if fv.e == 0.0 || !fv.e.is_finite() {
        return Err(Error::Degenerate(format!("e = {} cannot scale W", fv.e)));
    }
    let u = (x - fv.mu) / fv.sigma;
    let ut = (x - fv.mu_tilde) / fv.sigma;
    Ok((psi.eval(u) - fv.j * (rho.eval(ut) - fv.b)) / fv.e)
}

/// `E_F[W(X)]` and `E_F[W(X)^2]`.
pub fn w_moments(
    dist: &MixtureDistribution,
    fv: &FunctionalValues,
    psi: &TuningPsi,
    rho: &TuningRho,
) -> Result<(f64, f64)> {
    let (p, r, f) = (*psi, *rho, *fv);
    let w = move |x: f64| w_term(x, &f, &p, &r).unwrap_or(f64::NAN);
    let first = dist.expect(&joint_window(w, p, r, f.mu, f.mu_tilde, f.sigma))?;
    let second = dist.expect(&joint_window(
        move |x| w(x) * w(x),
        p,
        r,
        f.mu,
        f.mu_tilde,
        f.sigma,
    ))?;
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CentralModel, Contaminant};

    fn normal() -> MixtureDistribution {
        MixtureDistribution::standard(CentralModel::StandardNormal)
    }

    fn point_mix(eps: f64, x0: f64) -> MixtureDistribution {
        MixtureDistribution::new(
            eps,
            0.0,
            1.0,
            CentralModel::StandardNormal,
            Contaminant::Point(x0),
        )
        .unwrap()
    }

    // Simpson rule on a fixed fine grid plus exact atom: independent of the
    // adaptive engine.
    fn simpson_expect(dist: &MixtureDistribution, g: impl Fn(f64) -> f64) -> f64 {
        let (a, b, n) = (-12.0, 12.0, 24_000);
        let h = (b - a) / n as f64;
        let mut sum = 0.0;
        for i in 0..=n {
            let x = a + h * i as f64;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            sum += w * g(x) * CentralModel::StandardNormal.pdf(x);
        }
        let base = sum * h / 3.0;
        let contam = match dist.contaminant() {
            Contaminant::Point(x0) => g(*x0),
            _ => unreachable!(),
        };
        (1.0 - dist.eps()) * base + dist.eps() * contam
    }

    fn bisect(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let flo = f(lo);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) > 0.0) == (flo > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn sigma_at_calibration_identity() {
        let rho = TuningRho::new(
            1.548,
            crate::calibration::b_of_d(1.548, CentralModel::StandardNormal).unwrap(),
        )
        .unwrap();
        assert!((sigma_at(&normal(), 0.0, &rho).unwrap() - 1.0).abs() < 1e-10);
        let moved =
            MixtureDistribution::uncontaminated(CentralModel::StandardNormal, 3.0, 2.0).unwrap();
        assert!((sigma_at(&moved, 3.0, &rho).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn sigma_at_rejects_inadmissible_eps() {
        let rho = TuningRho::default();
        let dist = MixtureDistribution::new(
            0.49,
            0.0,
            1.0,
            CentralModel::StandardNormal,
            Contaminant::Point(4.0),
        )
        .unwrap();
        assert!(sigma_at(&dist, 0.0, &rho).is_ok());
        let rho = TuningRho::new(1.548, 0.3).unwrap();
        assert!(sigma_at(&dist, 0.0, &rho).is_err());
    }

    #[test]
    fn sigma_at_matches_monte_carlo_root() {
        let rho = TuningRho::default();
        let dist = point_mix(0.1, 4.0);
        let s = sigma_at(&dist, 0.0, &rho).unwrap();
        let n = 10_000_000;
        let xs = dist.sample(n, 99).unwrap();
        let mc = |s: f64| xs.iter().map(|x| rho.eval(x / s)).sum::<f64>() / n as f64 - rho.b();
        let s_mc = bisect(mc, 0.3, 5.0);
        let rhos: Vec<f64> = xs.iter().map(|x| rho.eval(x / s_mc)).collect();
        let sd = crate::numeric::variance(&rhos).sqrt();
        let slope = xs.iter().map(|x| rho.d1(x / s_mc) * x / s_mc).sum::<f64>() / n as f64 / s_mc;
        let se = sd / (n as f64).sqrt() / slope.abs();
        assert!((s - s_mc).abs() < 3.0 * se, "{s} vs {s_mc} (se {se})");
    }

    #[test]
    fn symmetric_central_model_reduces() {
        let (psi, rho) = (TuningPsi::default(), TuningRho::default());
        let dist =
            MixtureDistribution::uncontaminated(CentralModel::StandardNormal, 1.5, 0.7).unwrap();
        let fv = population_functionals(&dist, &psi, &rho).unwrap();
        assert!((fv.mu - 1.5).abs() < 1e-10);
        assert!((fv.mu_tilde - 1.5).abs() < 1e-10);
        assert!(fv.j.abs() < 1e-12);
        let eps2 = dist
            .expect(
                &Windowed::centered(
                    |x| psi.eval((x - fv.mu) / fv.sigma).powi(2),
                    fv.mu,
                    fv.sigma,
                    psi.saturation_radius(),
                    psi.saturation().powi(2),
                    psi.saturation().powi(2),
                )
                .with_breaks(psi_breaks(psi, fv.mu, fv.sigma)),
            )
            .unwrap();
        let shortcut = fv.sigma * fv.sigma * eps2 / (fv.e * fv.e);
        assert!((fv.v - shortcut).abs() < 1e-10 * shortcut);
        assert!(fv.diagnostics.rho_residual.abs() < 1e-9);
        assert!(fv.diagnostics.psi_residual.abs() < 1e-9);
        assert!(fv.diagnostics.competing_minimizer.is_none());
    }

    #[test]
    fn variance_at_normal_for_default_tuning() {
        let fv = population_functionals(&normal(), &TuningPsi::default(), &TuningRho::default())
            .unwrap();
        // scipy quad oracle with sigma(Phi) = 0.999770659514358 at b = 0.5
        assert!((fv.v - 1.049_243_782_172_440_3).abs() < 1e-9, "{}", fv.v);
        assert!((fv.sigma - 0.999_770_659_514_358).abs() < 1e-10);
    }

    #[test]
    fn functionals_are_equivariant() {
        let (psi, rho) = (TuningPsi::default(), TuningRho::default());
        let base = point_mix(0.1, 4.0);
        let fv = population_functionals(&base, &psi, &rho).unwrap();
        let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(1.0);
        for (a, m) in [(2.5, -3.0), (-1.5, 4.0)] {
            let moved = base.affine(a, m).unwrap();
            let gv = population_functionals(&moved, &psi, &rho).unwrap();
            assert!(rel(gv.mu, a * fv.mu + m) < 1e-9);
            assert!(rel(gv.mu_tilde, a * fv.mu_tilde + m) < 1e-9);
            assert!(rel(gv.sigma, a.abs() * fv.sigma) < 1e-9);
            assert!(rel(gv.v, a * a * fv.v) < 1e-9);
            assert!(rel(gv.h, fv.h) < 1e-9 && rel(gv.j, a.signum() * fv.j) < 1e-9);
        }
    }

    #[test]
    fn sigma_equals_profile_at_mu_tilde() {
        let (psi, rho) = (TuningPsi::default(), TuningRho::default());
        let dist = point_mix(0.05, 4.0);
        let fv = population_functionals(&dist, &psi, &rho).unwrap();
        let s = sigma_at(&dist, fv.mu_tilde, &rho).unwrap();
        assert!((s - fv.sigma).abs() < 1e-11 * s);
    }

    #[test]
    fn point_mass_matches_grid_oracle() {
        let (psi, rho) = (TuningPsi::default(), TuningRho::default());
        let dist = point_mix(0.1, 4.0);
        let fv = population_functionals(&dist, &psi, &rho).unwrap();
        assert!(fv.diagnostics.rho_residual.abs() < 1e-9);
        assert!(fv.diagnostics.psi_residual.abs() < 1e-9);

        let b = rho.b();
        let sigma_oracle = |t: f64| {
            bisect(
                |s| simpson_expect(&dist, |x| rho.eval((x - t) / s)) - b,
                0.5,
                3.0,
            )
        };
        // coarse pass at 1e-2 over [-2, 6], then 1e-4 around the best cell
        let coarse = (0..=800)
            .map(|i| -2.0 + 0.01 * i as f64)
            .map(|t| (t, sigma_oracle(t)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let fine = (0..=400)
            .map(|i| coarse.0 - 0.02 + 1e-4 * i as f64)
            .map(|t| (t, sigma_oracle(t)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!(
            (fv.mu_tilde - fine.0).abs() <= 1e-4,
            "{} vs {}",
            fv.mu_tilde,
            fine.0
        );
        assert!((fv.sigma - fine.1).abs() <= 1e-4);
        assert!(fv.sigma <= fine.1 + 1e-9);

        let psi_mean = |m: f64| simpson_expect(&dist, |x| psi.eval((x - m) / fine.1));
        let mut m = -2.0;
        while psi_mean(m + 1e-2) > 0.0 {
            m += 1e-2;
        }
        let mut m_fine = m;
        while psi_mean(m_fine + 1e-4) > 0.0 {
            m_fine += 1e-4;
        }
        assert!((fv.mu - m_fine).abs() <= 2e-4, "{} vs {}", fv.mu, m_fine);
    }

    #[test]
    fn w_variance_identity() {
        let (psi, rho) = (TuningPsi::default(), TuningRho::default());
        for dist in [
            point_mix(0.0, 4.0),
            point_mix(0.05, 4.0),
            point_mix(0.1, 4.0),
        ] {
            let fv = population_functionals(&dist, &psi, &rho).unwrap();
            let (m1, m2) = w_moments(&dist, &fv, &psi, &rho).unwrap();
            assert!(m1.abs() < 1e-9, "{m1}");
            let var = m2 - m1 * m1;
            assert!((var * fv.sigma * fv.sigma - fv.v).abs() < 1e-8 * fv.v);
            let scaled = var * fv.e * fv.e;
            assert!((scaled * fv.sigma * fv.sigma * fv.h * fv.h - fv.v).abs() < 1e-8 * fv.v);
        }
    }

    #[test]
    fn w_term_vanishes_at_symmetric_center() {
        let (psi, rho) = (TuningPsi::default(), TuningRho::default());
        let fv = population_functionals(&normal(), &psi, &rho).unwrap();
        assert!(w_term(fv.mu, &fv, &psi, &rho).unwrap().abs() < 1e-10);
        let mut broken = fv;
        broken.e = 0.0;
        assert!(w_term(0.0, &broken, &psi, &rho).is_err());
    }
}
