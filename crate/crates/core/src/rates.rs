//! Least-squares fits of the asymptotic laws near a blowup and the
//! log-model tail used to extrapolate past the last resolved state.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum number of samples in the final decade for a rate fit.
pub const MIN_WINDOW: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub samples: usize,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Some(LinearFit {
        slope,
        intercept,
        r2,
        samples: n,
    })
}

/// Quadratic least squares `y ≈ c0 + c1·x + c2·x²`, returned as `[c0, c1, c2]`.
pub fn quadratic_fit(x: &[f64], y: &[f64]) -> Option<[f64; 3]> {
    if x.len() < 3 || y.len() != x.len() {
        return None;
    }
    // centre and scale for conditioning
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let sx = x.iter().map(|v| (v - mx).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut m = [[0.0f64; 4]; 3];
    for (a, b) in x.iter().zip(y) {
        let u = (a - mx) / sx;
        let p = [1.0, u, u * u];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += p[i] * p[j];
            }
            m[i][3] += p[i] * b;
        }
    }
    let c = solve3(m)?;
    // expand back to powers of x
    let (c0, c1, c2) = (c[0], c[1] / sx, c[2] / (sx * sx));
    Some([
        c0 - c1 * mx + c2 * mx * mx,
        c1 - 2.0 * c2 * mx,
        c2,
    ])
}

fn solve3(mut m: [[f64; 4]; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for k in col..4 {
                    m[r][k] -= f * m[col][k];
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

/// `∫₀^δ (−C ln s + D)² ds`.
pub fn log_tail_integral(c: f64, d: f64, delta: f64) -> f64 {
    if delta <= 0.0 {
        return 0.0;
    }
    let l = delta.ln();
    c * c * delta * (l * l - 2.0 * l + 2.0) - 2.0 * c * d * delta * (l - 1.0) + d * d * delta
}

/// Fit of `φ₁ ≈ C·(−ln δ) + D`.
pub fn fit_log_law(delta: &[f64], phi1: &[f64]) -> Option<LinearFit> {
    let x: Vec<f64> = delta.iter().map(|d| -d.ln()).collect();
    linear_fit(&x, phi1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum RateModel {
    /// `γ` at a minimum label against `1/(δ ln² δ)`.
    MinLabelRate,
    /// `γ` at a generic label against `1/(δ |ln δ|³)`.
    GenericLabelRate,
    /// `φ₁` against `−ln δ`.
    Phi1Log,
    /// `∫(Ψ)⁻²` against `1/δ`.
    MomentInverse,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RatesError {
    #[error("insufficient window: {found} samples in the final decade, need {MIN_WINDOW}")]
    InsufficientWindow { found: usize },
    #[error("series is missing column {0}")]
    MissingColumn(&'static str),
}

/// Samples along a run, indexed by the distance `δ = τ* − τ` to the blowup
/// surface (or its Boussinesq analogue).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RateSeries {
    pub blowup: bool,
    pub delta: Vec<f64>,
    pub phi1: Vec<f64>,
    pub m2: Vec<f64>,
    pub gamma_min: Vec<f64>,
    pub gamma_generic: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub model: RateModel,
    pub constant: f64,
    pub intercept: f64,
    pub r2: f64,
    pub samples: usize,
    pub delta_lo: f64,
    pub delta_hi: f64,
}

/// Fits `model` over the final resolved decade `δ ∈ [δ_min, 10 δ_min]`.
pub fn fit_rates(series: &RateSeries, model: RateModel) -> Result<RateFit, RatesError> {
    let y_col: &[f64] = match model {
        RateModel::MinLabelRate => &series.gamma_min,
        RateModel::GenericLabelRate => &series.gamma_generic,
        RateModel::Phi1Log => &series.phi1,
        RateModel::MomentInverse => &series.m2,
    };
    if !series.blowup {
        return Err(RatesError::InsufficientWindow { found: 0 });
    }
    if y_col.len() != series.delta.len() || y_col.is_empty() {
        return Err(RatesError::MissingColumn(match model {
            RateModel::MinLabelRate => "gamma_min",
            RateModel::GenericLabelRate => "gamma_generic",
            RateModel::Phi1Log => "phi1",
            RateModel::MomentInverse => "m2",
        }));
    }
    let delta_min = series
        .delta
        .iter()
        .copied()
        .filter(|d| d.is_finite() && *d > 0.0)
        .fold(f64::INFINITY, f64::min);
    let hi = 10.0 * delta_min;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (&d, &v) in series.delta.iter().zip(y_col) {
        if !(d >= delta_min && d <= hi) || !v.is_finite() {
            continue;
        }
        let l = d.ln();
        x.push(match model {
            RateModel::MinLabelRate => 1.0 / (d * l * l),
            RateModel::GenericLabelRate => 1.0 / (d * l.abs().powi(3)),
            RateModel::Phi1Log => -l,
            RateModel::MomentInverse => 1.0 / d,
        });
        y.push(v);
    }
    if x.len() < MIN_WINDOW {
        return Err(RatesError::InsufficientWindow { found: x.len() });
    }
    let f = linear_fit(&x, &y).ok_or(RatesError::InsufficientWindow { found: x.len() })?;
    Ok(RateFit {
        model,
        constant: f.slope,
        intercept: f.intercept,
        r2: f.r2,
        samples: f.samples,
        delta_lo: delta_min,
        delta_hi: hi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_has_unit_r2() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14 && (f.intercept - 1.0).abs() < 1e-14);
        assert!((f.r2 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn quadratic_recovers_coefficients() {
        let x: Vec<f64> = (0..10).map(|i| 1.9 + 0.01 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|t| 0.5 - 2.0 * t + 0.75 * t * t).collect();
        let c = quadratic_fit(&x, &y).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-7 && (c[1] + 2.0).abs() < 1e-7 && (c[2] - 0.75).abs() < 1e-8);
    }

    #[test]
    fn tail_integral_matches_numerical_quadrature() {
        let (c, d, delta) = (0.3, 1.2, 1e-3);
        // substitute s = δ e^{−u}, midpoint rule in u on [0, 60]
        let n = 200_000;
        let h = 60.0 / n as f64;
        let num: f64 = (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) * h;
                let s = delta * (-u).exp();
                (-c * s.ln() + d).powi(2) * s * h
            })
            .sum();
        assert!((num / log_tail_integral(c, d, delta) - 1.0).abs() < 1e-8);
    }

    fn series(n: usize) -> RateSeries {
        let delta: Vec<f64> = (0..n).map(|i| 1e-3 * 10f64.powf(-(i as f64) / (n - 1) as f64)).collect();
        RateSeries {
            blowup: true,
            phi1: delta.iter().map(|d| -0.3 * d.ln() + 0.1).collect(),
            m2: delta.iter().map(|d| 0.3 / d).collect(),
            gamma_min: delta.iter().map(|d| -2.0 / (d * d.ln().powi(2))).collect(),
            gamma_generic: delta.iter().map(|d| 0.5 / (d * d.ln().abs().powi(3))).collect(),
            delta,
        }
    }

    #[test]
    fn model_constants_are_recovered() {
        let s = series(40);
        let f = fit_rates(&s, RateModel::Phi1Log).unwrap();
        assert!((f.constant - 0.3).abs() < 1e-10 && f.r2 > 0.999_999);
        assert!((fit_rates(&s, RateModel::MomentInverse).unwrap().constant - 0.3).abs() < 1e-10);
        assert!((fit_rates(&s, RateModel::MinLabelRate).unwrap().constant + 2.0).abs() < 1e-9);
        assert!((fit_rates(&s, RateModel::GenericLabelRate).unwrap().constant - 0.5).abs() < 1e-9);
    }

    #[test]
    fn short_or_bounded_runs_are_rejected() {
        assert!(matches!(
            fit_rates(&series(10), RateModel::Phi1Log),
            Err(RatesError::InsufficientWindow { found: 10 })
        ));
        let mut s = series(40);
        s.blowup = false;
        assert!(matches!(
            fit_rates(&s, RateModel::MinLabelRate),
            Err(RatesError::InsufficientWindow { .. })
        ));
    }
}
