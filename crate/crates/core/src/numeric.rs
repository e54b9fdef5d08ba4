//! Scalar numerical building blocks: bracketed root finding, golden-section
//! minimization and adaptive Gauss–Kronrod quadrature.
//!
//! Everything here works on plain `f64` closures and carries no knowledge of
//! the statistical model; the higher modules pick tolerances.

use crate::error::{Error, Result};

/// Brent's method on a bracket with a sign change.
///
/// Stops when the bracket is narrower than `xtol + rtol * |x|` or when an
/// exact zero is hit.
pub fn brent<F>(mut f: F, a: f64, b: f64, xtol: f64, rtol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (a, b);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || !fa.is_finite() || !fb.is_finite() {
        return Err(Error::NoRoot(format!(
            "no sign change on [{a}, {b}]: f = ({fa}, {fb})"
        )));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * (xtol + rtol * b.abs());
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    Ok(b)
}

/// Locates the switch point of a monotone predicate on `[lo, hi]`.
///
/// Requires `pred(lo) == false` and `pred(hi) == true`; returns the final
/// `(lo, hi)` pair with `hi - lo <= tol` (or no representable midpoint left).
pub fn bisect_predicate<P>(mut pred: P, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64)
where
    P: FnMut(f64) -> bool,
{
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo, hi)
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section minimization of a unimodal function on `[a, b]`.
/// Returns `(argmin, min)`.
pub fn golden_section<F>(mut f: F, a: f64, b: f64, tol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (a.min(b), a.max(b));
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
        if x1 >= x2 {
            break;
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

// Gauss–Kronrod 7/15 abscissae and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gk15<F>(f: &mut F, a: f64, b: f64) -> Result<Panel>
where
    F: FnMut(f64) -> f64,
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut eval = |x: f64| -> Result<f64> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { x, value: v })
        }
    };
    let fc = eval(center)?;
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = eval(center - dx)? + eval(center + dx)?;
        kronrod += w * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Ok(Panel {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    })
}

/// Globally adaptive Gauss–Kronrod (7/15) quadrature on a finite interval.
///
/// Subdivides the panel with the largest error estimate until the summed
/// estimate is below `abs_tol` or the panel budget is exhausted.
pub fn integrate<F>(mut f: F, a: f64, b: f64, abs_tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    if b <= a {
        return Ok(0.0);
    }
    let mut panels = vec![gk15(&mut f, a, b)?];
    let min_width = (b - a) * 1e-12;
    for _ in 0..400 {
        let total: f64 = panels.iter().map(|p| p.error).sum();
        if total <= abs_tol {
            break;
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("non-empty");
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if p.b - p.a < min_width {
            panels.push(p);
            break;
        }
        panels.push(gk15(&mut f, p.a, mid)?);
        panels.push(gk15(&mut f, mid, p.b)?);
    }
    Ok(panels.iter().map(|p| p.value).sum())
}

/// `q`-quantile (linear interpolation between order statistics) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() as f64 - 1.0)
}

/// Rounds to 12 significant digits, the precision used for every emitted number.
pub fn round_sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Formats with 12 significant digits (shortest representation of the rounded value).
pub fn fmt_sig12(x: f64) -> String {
    let r = round_sig12(x);
    let a = r.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e12).contains(&a) {
        format!("{r:e}")
    } else {
        format!("{r}")
    }
}

/// Rounds every float in a JSON value to 12 significant digits.
pub fn round_json_sig12(value: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match value {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .and_then(|x| serde_json::Number::from_f64(round_sig12(x)))
            .map(Value::Number)
            .unwrap_or(Value::Null),
        Value::Array(a) => Value::Array(a.into_iter().map(round_json_sig12).collect()),
        Value::Object(o) => Value::Object(
            o.into_iter()
                .map(|(k, v)| (k, round_json_sig12(v)))
                .collect(),
        ),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_cube_root() {
        let r = brent(|x| x * x * x - 2.0, 0.0, 2.0, 1e-15, 1e-15).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-14);
    }

    #[test]
    fn brent_rejects_missing_sign_change() {
        assert!(matches!(
            brent(|x| x * x + 1.0, -1.0, 1.0, 1e-12, 0.0),
            Err(Error::NoRoot(_))
        ));
    }

    #[test]
    fn predicate_bisection_brackets_threshold() {
        let (lo, hi) = bisect_predicate(|x| x > 0.3, 0.0, 1.0, 1e-12);
        assert!(lo <= 0.3 && hi >= 0.3 && hi - lo <= 1e-12);
    }

    #[test]
    fn golden_section_parabola() {
        let (x, fx) = golden_section(|x| (x - 0.7).powi(2) + 1.0, -3.0, 5.0, 1e-10);
        assert!((x - 0.7).abs() < 1e-7);
        assert!((fx - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quadrature_gaussian_mass() {
        let v = integrate(
            |x| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            -8.0,
            8.0,
            1e-13,
        )
        .unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadrature_kinked_integrand() {
        let v = integrate(|x: f64| x.abs(), -1.0, 2.0, 1e-12).unwrap();
        assert!((v - 2.5).abs() < 1e-11);
    }

    #[test]
    fn quadrature_reports_non_finite() {
        let r = integrate(|x| if x > 0.5 { f64::NAN } else { x }, 0.0, 1.0, 1e-10);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn sig12_formatting() {
        assert_eq!(fmt_sig12(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_sig12(0.0), "0");
        assert_eq!(fmt_sig12(1234567.891234567), "1234567.89123");
        assert_eq!(fmt_sig12(5.551115123125783e-17), "5.55111512313e-17");
        assert_eq!(fmt_sig12(-2.5e13), "-2.5e13");
    }

    #[test]
    fn json_rounding_reaches_nested_floats() {
        let v = serde_json::json!({"a": [1.0 / 3.0, 2], "b": {"c": 2.0 / 3.0}, "d": "x"});
        let r = round_json_sig12(v);
        assert_eq!(
            r.to_string(),
            r#"{"a":[0.333333333333,2],"b":{"c":0.666666666667},"d":"x"}"#
        );
    }

    #[test]
    fn order_statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!((variance(&[1.0, 2.0, 3.0, 4.0]) - 5.0 / 3.0).abs() < 1e-15);
    }
}
