//! Exact and semi-exact solutions for the one-dimensional construction with
//! `γ₀ = cos 4πx`, `ρ₀ = −sin² 2πx`, where `1/J = μ₁cos²(2πx) + sin²(2πx)/μ₁`.
//!
//! `μ₁ = exp ∫N` and `N` solves `N' = ½N² − αN + αW`, `W' = N²` with
//! `N(0) = 1`, `W(0) = 0`.

use std::f64::consts::PI;

use thiserror::Error;

use crate::ode::{self, OdeError, OdeProblem, OdeSolution, OdeTol, TerminalStatus};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClosedFormError {
    #[error("{what}: argument {value} outside the domain")]
    Domain { what: &'static str, value: f64 },
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("N did not diverge before t = {t_end}")]
    NoDivergence { t_end: f64 },
}

/// `ρ₀ = −sin²(2πx)` of the construction.
pub fn rho0_part2(x: f64) -> f64 {
    -(2.0 * PI * x).sin().powi(2)
}

/// `μ₂'(0)` fixed by requiring `γ₀ = 1 + ρ₀μ₂'(0)` to have zero mean:
/// `1 + μ₂'(0)·∫ρ₀ = 0` with `∫ρ₀ = −½`.
pub const MU2_PRIME_0: f64 = 2.0;

/// `γ₀(x) = 1 + ρ₀(x)μ₂'(0)`, which equals `cos 4πx`.
pub fn induced_gamma0(x: f64) -> f64 {
    1.0 + rho0_part2(x) * MU2_PRIME_0
}

/// `μ₁(t) = 4/(2 − t)²` at `α = 0`.
pub fn mu1_exact_undamped(t: f64) -> Result<f64, ClosedFormError> {
    if !(0.0..2.0).contains(&t) {
        return Err(ClosedFormError::Domain {
            what: "mu1_exact_undamped",
            value: t,
        });
    }
    Ok(4.0 / ((2.0 - t) * (2.0 - t)))
}

/// `−ln(1 − 2α)/α`, with the limit 2 at `α = 0`.
#[allow(non_snake_case)]
pub fn T_alpha_B_formula(alpha: f64) -> Result<f64, ClosedFormError> {
    if alpha == 0.0 {
        return Ok(2.0);
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(ClosedFormError::Domain {
            what: "T_alpha_B_formula",
            value: alpha,
        });
    }
    Ok(-(-2.0 * alpha).ln_1p() / alpha)
}

/// Lower bound `4α²/(e^{−αt} − (1 − 2α))²` for `μ₁`; `4/(2 − t)²` at `α = 0`.
pub fn mu1_lower_bound(alpha: f64, t: f64) -> f64 {
    if alpha == 0.0 {
        return 4.0 / ((2.0 - t) * (2.0 - t));
    }
    let d = (-alpha * t).exp() - (1.0 - 2.0 * alpha);
    4.0 * alpha * alpha / (d * d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mu1Sample {
    pub t: f64,
    pub n: f64,
    pub w: f64,
    pub mu1: f64,
}

#[derive(Debug, Clone)]
pub struct Mu1Path {
    pub alpha: f64,
    pub samples: Vec<Mu1Sample>,
    /// Bracket `(t_lo, t_hi)` of the divergence of `N` (and `μ₁`).
    pub bracket: (f64, f64),
    pub t_div: f64,
    solution: OdeSolution,
}

impl Mu1Path {
    /// `μ₁(t)` from the dense output, for `0 ≤ t ≤ t_lo`.
    pub fn mu1_at(&self, t: f64) -> Result<f64, ClosedFormError> {
        self.solution
            .eval(t)
            .map(|y| y[2].exp())
            .ok_or(ClosedFormError::Domain {
                what: "Mu1Path::mu1_at",
                value: t,
            })
    }

    /// `N(t) = (ln μ₁)'`.
    pub fn n_at(&self, t: f64) -> Result<f64, ClosedFormError> {
        self.solution.eval(t).map(|y| y[0]).ok_or(ClosedFormError::Domain {
            what: "Mu1Path::n_at",
            value: t,
        })
    }
}

/// Integrates the `(N, W, ln μ₁)` system until `N` diverges.
#[allow(non_snake_case)]
pub fn solve_N(alpha: f64, tol: &OdeTol) -> Result<Mu1Path, ClosedFormError> {
    if !(0.0..0.5).contains(&alpha) {
        return Err(ClosedFormError::Domain {
            what: "solve_N",
            value: alpha,
        });
    }
    let t_end = 2.0 * T_alpha_B_formula(alpha)? + 10.0;
    let p = OdeProblem::new(0.0, vec![1.0, 0.0, 0.0], move |_, y, d| {
        d[0] = 0.5 * y[0] * y[0] - alpha * y[0] + alpha * y[1];
        d[1] = y[0] * y[0];
        d[2] = y[0];
        Ok(())
    });
    let solution = ode::integrate(p, t_end, tol)?;
    let bracket = match solution.status {
        TerminalStatus::BlowupBracketed { t_lo, t_hi } => (t_lo, t_hi),
        _ => return Err(ClosedFormError::NoDivergence { t_end }),
    };
    let samples = solution
        .nodes
        .iter()
        .map(|(t, y)| Mu1Sample {
            t: *t,
            n: y[0],
            w: y[1],
            mu1: y[2].exp(),
        })
        .collect();
    Ok(Mu1Path {
        alpha,
        samples,
        bracket,
        t_div: 0.5 * (bracket.0 + bracket.1),
        solution,
    })
}

/// `J = 1/(μ₁cos²(2πx) + sin²(2πx)/μ₁)` along `path`.
pub fn jacobian_part2(alpha: f64, x: f64, t: f64, path: &Mu1Path) -> Result<f64, ClosedFormError> {
    if alpha != path.alpha {
        return Err(ClosedFormError::Domain {
            what: "jacobian_part2 (alpha differs from the path)",
            value: alpha,
        });
    }
    if t >= path.bracket.0 {
        return Err(ClosedFormError::Domain {
            what: "jacobian_part2 (past divergence)",
            value: t,
        });
    }
    let mu1 = path.mu1_at(t)?;
    Ok(jacobian_from_mu1(mu1, x))
}

/// `γ = N(μ₁cos² − sin²/μ₁)/(μ₁cos² + sin²/μ₁)`, i.e. `−∂ₜ ln J`.
pub fn gamma_from_mu1(mu1: f64, n: f64, x: f64) -> f64 {
    let c = (2.0 * PI * x).cos().powi(2);
    let s = (2.0 * PI * x).sin().powi(2);
    n * (mu1 * c - s / mu1) / (mu1 * c + s / mu1)
}

pub fn jacobian_from_mu1(mu1: f64, x: f64) -> f64 {
    let c = (2.0 * PI * x).cos().powi(2);
    let s = (2.0 * PI * x).sin().powi(2);
    1.0 / (mu1 * c + s / mu1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> OdeTol {
        OdeTol {
            rel: 1e-12,
            abs: 1e-14,
            event: 1e-6,
        }
    }

    #[test]
    fn undamped_closed_form() {
        assert_eq!(mu1_exact_undamped(0.0).unwrap(), 1.0);
        assert_eq!(mu1_exact_undamped(1.0).unwrap(), 4.0);
        let t = 2.0 - 1e-6;
        assert!(((2.0 - t) * (2.0 - t) * mu1_exact_undamped(t).unwrap() - 4.0).abs() < 1e-6);
        assert!(mu1_exact_undamped(2.0).is_err());
    }

    #[test]
    fn formula_values() {
        assert!((T_alpha_B_formula(0.25).unwrap() - 4.0 * 2f64.ln()).abs() < 1e-14);
        assert!((T_alpha_B_formula(0.4).unwrap() - 4.023_594_781_085_251).abs() < 1e-12);
        assert!((T_alpha_B_formula(1e-9).unwrap() - 2.0).abs() < 1e-8);
        assert_eq!(T_alpha_B_formula(0.0).unwrap(), 2.0);
        assert!(T_alpha_B_formula(0.5).is_err());
    }

    #[test]
    fn undamped_path_matches_closed_form() {
        let p = solve_N(0.0, &tol()).unwrap();
        assert!((p.t_div - 2.0).abs() < 1e-6, "{}", p.t_div);
        for t in [0.0, 0.5, 1.0, 1.5, 1.9, 1.99] {
            let want = mu1_exact_undamped(t).unwrap();
            let got = p.mu1_at(t).unwrap();
            assert!((got / want - 1.0).abs() < 1e-9, "t={t}: {got} vs {want}");
        }
        assert_eq!(p.samples[0].mu1, 1.0);
        assert_eq!(p.samples[0].n, 1.0);
    }

    #[test]
    fn damped_divergence_respects_bound_and_formula() {
        for alpha in [0.1, 0.25, 0.4] {
            let p = solve_N(alpha, &tol()).unwrap();
            assert!(p.t_div <= T_alpha_B_formula(alpha).unwrap(), "{alpha}: {}", p.t_div);
            for s in &p.samples {
                assert!(s.mu1 >= mu1_lower_bound(alpha, s.t) * (1.0 - 1e-9));
            }
        }
    }

    #[test]
    fn second_order_form_agrees() {
        // N'' = N N' − αN' + αN², N'(0) = ½ − α
        let alpha = 0.25;
        let p = solve_N(alpha, &tol()).unwrap();
        let q = OdeProblem::new(0.0, vec![1.0, 0.5 - alpha], move |_, y, d| {
            d[0] = y[1];
            d[1] = y[0] * y[1] - alpha * y[1] + alpha * y[0] * y[0];
            Ok(())
        });
        let s = ode::integrate(q, 2.0, &tol()).unwrap();
        for t in [0.5, 1.0, 1.5, 2.0] {
            let a = p.solution.eval(t).unwrap()[0];
            let b = s.eval(t).unwrap()[0];
            assert!((a / b - 1.0).abs() < 1e-8, "t={t}: {a} vs {b}");
        }
    }

    #[test]
    fn jacobian_examples() {
        let p = solve_N(0.0, &tol()).unwrap();
        for x in [0.0, 0.1, 0.3] {
            assert!((jacobian_part2(0.0, x, 0.0, &p).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!((jacobian_part2(0.0, 0.0, 1.0, &p).unwrap() - 0.25).abs() < 1e-9);
        assert!((jacobian_part2(0.0, 0.25, 1.0, &p).unwrap() - 4.0).abs() < 1e-8);
        assert!(jacobian_part2(0.0, 0.0, 2.5, &p).is_err());
    }

    #[test]
    fn induced_gamma0_is_cos4pix_with_zero_mean() {
        let n = 1000;
        let mut mean = 0.0;
        for i in 0..n {
            let x = i as f64 / n as f64;
            assert!((induced_gamma0(x) - (4.0 * PI * x).cos()).abs() < 1e-14);
            mean += induced_gamma0(x);
        }
        assert!((mean / n as f64).abs() < 1e-14);
    }
}
