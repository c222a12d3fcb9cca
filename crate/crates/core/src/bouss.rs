//! Damped Boussinesq along characteristics.
//!
//! The state is `(τ, σ, A)` with `τ' = e^{−αt}/φ₁²`, `σ' = −τ'A`,
//! `A' = e^{αt}φ₁`, and `φ₁ = ∫(1 + γ₀τ − ρ₀σ)⁻¹` recomputed on every call.
//! The integrator also carries `ℓ = ln d_ref`, the log of the denominator at
//! the reference minimum, so that label values near the minimum keep full
//! relative precision as that denominator goes to zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::euler::{ode_tol, tail_blowup_time};
use crate::fields::{InitialData, Label, LabelField, Tolerances};
use crate::ode::{self, IntegrandBlowup, OdeError, OdeProblem, OdeSolution, TerminalStatus};
use crate::quadrature::{self, moment_integrals_tracked, Moments, QuadError};
use crate::rates::{linear_fit, quadratic_fit};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoussError {
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("integrand blowup: the state has left the resolvable region")]
    IntegrandBlowup,
    #[error("t = {t} lies past the end of the computed trajectory ({t_last})")]
    PastBlowup { t: f64, t_last: f64 },
    #[error("alpha must be finite and >= 0, got {0}")]
    InvalidAlpha(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharState {
    pub t: f64,
    pub tau: f64,
    pub sigma: f64,
    pub a: f64,
    /// Denominator at the reference minimum.
    pub d_ref: f64,
    pub phi1: f64,
}

impl CharState {
    pub fn initial() -> Self {
        Self {
            t: 0.0,
            tau: 0.0,
            sigma: 0.0,
            a: 0.0,
            d_ref: 1.0,
            phi1: 1.0,
        }
    }
}

fn moments(data: &InitialData, tau: f64, sigma: f64, d_ref: f64, quad_rel: f64) -> Result<Moments, BoussError> {
    let m = moment_integrals_tracked(data, tau, sigma, d_ref, quad_rel)?;
    if !m.converged {
        return Err(BoussError::IntegrandBlowup);
    }
    Ok(m)
}

/// `(τ', σ', A')` at `(t, τ, σ, A)`.
pub fn char_rhs(
    data: &InitialData,
    alpha: f64,
    t: f64,
    state: [f64; 3],
    quad_rel: f64,
) -> Result<[f64; 3], BoussError> {
    let [tau, sigma, a] = state;
    let m = moments(data, tau, sigma, data.reference_denominator(tau, sigma), quad_rel)?;
    let tp = (-alpha * t).exp() / (m.phi1 * m.phi1);
    Ok([tp, -tp * a, (alpha * t).exp() * m.phi1])
}

/// A computed characteristic trajectory.
#[derive(Debug, Clone)]
pub struct CharRun<'a> {
    pub data: &'a InitialData,
    pub alpha: f64,
    pub tol: Tolerances,
    pub solution: OdeSolution,
}

/// Integrates the characteristic system from `t = 0` to `t_end` or until the
/// quadrature can no longer resolve the state.
pub fn solve_char<'a>(
    data: &'a InitialData,
    alpha: f64,
    t_end: f64,
    tol: &Tolerances,
) -> Result<CharRun<'a>, BoussError> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(BoussError::InvalidAlpha(alpha));
    }
    let quad_rel = tol.quad_rel;
    let cache = data.cache();
    let (g_ref, r_ref) = (cache.gamma_ref(), cache.rho_ref());
    let p = OdeProblem::new(0.0, vec![0.0, 0.0, 0.0, 0.0], move |t, y, dy| {
        let d_ref = y[3].exp();
        let m = moments(data, y[0], y[1], d_ref, quad_rel).map_err(|_| IntegrandBlowup)?;
        let tp = (-alpha * t).exp() / (m.phi1 * m.phi1);
        dy[0] = tp;
        dy[1] = -tp * y[2];
        dy[2] = (alpha * t).exp() * m.phi1;
        dy[3] = tp * (g_ref + r_ref * y[2]) / d_ref;
        Ok(())
    });
    let solution = ode::integrate(p, t_end, &ode_tol(tol))?;
    Ok(CharRun {
        data,
        alpha,
        tol: *tol,
        solution,
    })
}

impl<'a> CharRun<'a> {
    fn state_from(&self, t: f64, y: &[f64]) -> Result<CharState, BoussError> {
        let d_ref = y[3].exp();
        let m = moments(self.data, y[0], y[1], d_ref, self.tol.quad_rel)?;
        Ok(CharState {
            t,
            tau: y[0],
            sigma: y[1],
            a: y[2],
            d_ref,
            phi1: m.phi1,
        })
    }

    /// State at `t` from the dense output.
    pub fn state_at(&self, t: f64) -> Result<CharState, BoussError> {
        let y = self.solution.eval(t).ok_or(BoussError::PastBlowup {
            t,
            t_last: self.solution.t_last(),
        })?;
        self.state_from(t, &y)
    }

    /// States at the accepted nodes.
    pub fn node_states(&self) -> Result<Vec<CharState>, BoussError> {
        self.solution
            .nodes
            .iter()
            .map(|(t, y)| self.state_from(*t, y))
            .collect()
    }

    pub fn last_state(&self) -> Result<CharState, BoussError> {
        let (t, y) = self.solution.nodes.last().expect("nonempty");
        self.state_from(*t, y)
    }
}

/// Moments at a state (φ₁, K̄₂, L̄₂, M₂ and quadrature diagnostics).
pub fn state_moments(data: &InitialData, state: &CharState, quad_rel: f64) -> Result<Moments, BoussError> {
    moments(data, state.tau, state.sigma, state.d_ref, quad_rel)
}

fn denominators(data: &InitialData, state: &CharState, labels: &[Label]) -> Result<Vec<f64>, BoussError> {
    labels
        .iter()
        .map(|&a| {
            let d = data.denominator_at(a, state.tau, state.sigma, state.d_ref);
            if d > 0.0 {
                Ok(d)
            } else {
                Err(BoussError::PastBlowup {
                    t: state.t,
                    t_last: state.t,
                })
            }
        })
        .collect()
}

/// `J(a) = 1/((1 + γ₀τ − ρ₀σ)φ₁)`.
pub fn jacobian_at(data: &InitialData, state: &CharState, labels: &[Label]) -> Result<LabelField, BoussError> {
    let d = denominators(data, state, labels)?;
    Ok(LabelField {
        labels: labels.to_vec(),
        values: d.iter().map(|d| 1.0 / (d * state.phi1)).collect(),
    })
}

/// `γ = τ'(K₁ − K̄₂/φ₁) + τ'A(L₁ − L̄₂/φ₁)`, i.e. `−∂ₜ ln J` along the label.
pub fn gamma_bouss_at(
    data: &InitialData,
    alpha: f64,
    state: &CharState,
    labels: &[Label],
    quad_rel: f64,
) -> Result<LabelField, BoussError> {
    let m = state_moments(data, state, quad_rel)?;
    let d = denominators(data, state, labels)?;
    let tp = (-alpha * state.t).exp() / (m.phi1 * m.phi1);
    let values = labels
        .iter()
        .zip(&d)
        .map(|(&a, d)| {
            tp * ((data.gamma0(a) / d - m.kbar2 / m.phi1) + (data.rho0(a) / d - m.lbar2 / m.phi1) * state.a)
        })
        .collect();
    Ok(LabelField {
        labels: labels.to_vec(),
        values,
    })
}

/// `ρ(a) = ρ₀(a)J(a)`.
pub fn rho_at(data: &InitialData, state: &CharState, labels: &[Label]) -> Result<LabelField, BoussError> {
    let mut j = jacobian_at(data, state, labels)?;
    for (v, &a) in j.values.iter_mut().zip(labels) {
        *v *= data.rho0(a);
    }
    Ok(j)
}

/// Extremes of `γ` over the quadrature grid and the minima.
pub fn gamma_extrema(data: &InitialData, alpha: f64, state: &CharState, m: &Moments) -> (f64, f64) {
    let tp = (-alpha * state.t).exp() / (m.phi1 * m.phi1);
    quadrature::grid_extrema(
        data,
        m.levels_used,
        state.tau,
        state.sigma,
        state.d_ref,
        tp,
        tp * state.a,
        -tp * (m.kbar2 + state.a * m.lbar2) / m.phi1,
    )
}

/// Both sides of the lower bound `J(a_j) ≥ [(1 + m₀τ)·∫(1 + γ₀τ)⁻¹]⁻¹`, valid
/// at a minimum `a_j` with `ρ₀(a_j) = 0` while `σ ≤ 0` and `ρ₀ ≥ 0`.
pub fn jacobian_lower_bound(
    data: &InitialData,
    state: &CharState,
    label: Label,
    quad_rel: f64,
) -> Result<(f64, f64), BoussError> {
    let j = jacobian_at(data, state, &[label])?.values[0];
    let d_e = data.denominator_at(label, state.tau, 0.0, data.reference_denominator(state.tau, 0.0));
    let phi_e = moments(data, state.tau, 0.0, data.reference_denominator(state.tau, 0.0), quad_rel)?.phi1;
    Ok((j, 1.0 / (d_e * phi_e)))
}

/// Watch labels: the minima of `γ₀` followed by `n_generic` seeded uniform labels.
pub fn watch_labels(data: &InitialData, seed: u64, n_generic: usize) -> Vec<Label> {
    let mut labels = data.minimum_labels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_generic {
        labels.push(Label::new(rng.gen::<f64>(), rng.gen::<f64>()));
    }
    labels
}

pub const DEFAULT_GENERIC_LABELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlowupKind {
    #[serde(rename = "J_to_infinity")]
    JToInfinity,
    #[serde(rename = "J_to_zero")]
    JToZero,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    /// `p` in `J ~ c (T − t)^p`.
    pub exponent: f64,
    pub constant: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupEstimate {
    pub kind: BlowupKind,
    /// Extrapolated singular time (`+∞` when `kind = None`).
    pub t_est: f64,
    pub bracket: (f64, f64),
    pub rate_fit: Option<LogLogFit>,
    /// Watch label carrying the mechanism.
    pub label: Option<Label>,
    /// Last time the quadrature resolved the state.
    pub t_resolved: f64,
}

/// Detection result with the trajectory it came from.
#[derive(Debug, Clone)]
pub struct Detection<'a> {
    pub estimate: BlowupEstimate,
    pub run: CharRun<'a>,
    pub watch: Vec<Label>,
}

/// Horizon used when no blowup occurs.
pub const DEFAULT_HORIZON: f64 = 50.0;

/// Integrates until the state leaves the resolvable region and extrapolates
/// the singular time.
pub fn detect_blowup<'a>(
    data: &'a InitialData,
    alpha: f64,
    watch: &[Label],
    tol: &Tolerances,
) -> Result<Detection<'a>, BoussError> {
    detect_blowup_until(data, alpha, watch, tol, DEFAULT_HORIZON)
}

pub fn detect_blowup_until<'a>(
    data: &'a InitialData,
    alpha: f64,
    watch: &[Label],
    tol: &Tolerances,
    t_end: f64,
) -> Result<Detection<'a>, BoussError> {
    let run = solve_char(data, alpha, t_end, tol)?;
    let n_min = data.minima().len();
    let none = |run: CharRun<'a>| {
        let t_last = run.solution.t_last();
        Ok(Detection {
            estimate: BlowupEstimate {
                kind: BlowupKind::None,
                t_est: f64::INFINITY,
                bracket: (t_last, f64::INFINITY),
                rate_fit: None,
                label: None,
                t_resolved: t_last,
            },
            run,
            watch: watch.to_vec(),
        })
    };
    let (t_lo, _t_hi) = match run.solution.status {
        TerminalStatus::BlowupBracketed { t_lo, t_hi } => (t_lo, t_hi),
        _ => return none(run),
    };

    // samples over the final stretch: the last accepted nodes plus dense points
    let nodes = &run.solution.nodes;
    let last = run.last_state()?;
    let d_lo = last.d_ref;
    let mut ts: Vec<f64> = nodes
        .iter()
        .rev()
        .take_while(|(_, y)| y[3].exp() <= 1e4 * d_lo)
        .map(|(t, _)| *t)
        .collect();
    let t_first = ts.last().copied().unwrap_or(t_lo);
    let span = (t_lo - t_first).max(1e-12);
    for k in 1..40 {
        ts.push(t_lo - span * k as f64 / 40.0);
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();

    struct Sample {
        t: f64,
        d: f64,
        phi1: f64,
        j: Vec<f64>,
        g: Vec<f64>,
    }
    let mut samples = Vec::with_capacity(ts.len());
    for &t in &ts {
        // interpolated states right at the edge may fall just outside
        let Ok(s) = run.state_at(t) else { continue };
        let Ok(j) = jacobian_at(data, &s, watch).map(|f| f.values) else { continue };
        let Ok(g) = gamma_bouss_at(data, alpha, &s, watch, tol.quad_rel).map(|f| f.values) else {
            continue;
        };
        samples.push(Sample {
            t,
            d: s.d_ref,
            phi1: s.phi1,
            j,
            g,
        });
    }
    let generic: Vec<usize> = (n_min..watch.len()).collect();
    let minima: Vec<usize> = (0..n_min.min(watch.len())).collect();

    // exponents of J against the reference denominator over the window
    let slope_vs_d = |idx: usize| -> f64 {
        let x: Vec<f64> = samples.iter().map(|s| s.d.ln()).collect();
        let y: Vec<f64> = samples.iter().map(|s| s.j[idx].ln()).collect();
        linear_fit(&x, &y).map_or(0.0, |f| f.slope)
    };
    let q_gen = if generic.is_empty() {
        0.0
    } else {
        generic.iter().map(|&i| slope_vs_d(i)).sum::<f64>() / generic.len() as f64
    };
    let (q_min, min_idx) = minima
        .iter()
        .map(|&i| (slope_vs_d(i), i))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap_or((0.0, 0));

    let (kind, label_idx, t_est, unc) = if q_gen >= 0.25 {
        // J → 0 at generic labels with γ ~ 2/(T − t): extrapolate the zero of 1/γ
        let gi = *generic
            .iter()
            .max_by(|&&a, &&b| samples.last().unwrap().g[a].total_cmp(&samples.last().unwrap().g[b]))
            .expect("generic labels");
        let g_end = samples.last().unwrap().g[gi];
        let guess = 2.0 / g_end;
        let window: Vec<&Sample> = samples.iter().filter(|s| t_lo - s.t <= 9.0 * guess).collect();
        let fit_root = |w: &[&Sample]| -> Option<f64> {
            let x: Vec<f64> = w.iter().map(|s| s.t).collect();
            let y: Vec<f64> = w.iter().map(|s| 1.0 / s.g[gi]).collect();
            let c = quadratic_fit(&x, &y)?;
            quadratic_root_after(c, t_lo)
        };
        let t_all = fit_root(&window).unwrap_or(t_lo + guess);
        let half = &window[window.len() / 2..];
        let t_half = fit_root(half).unwrap_or(t_all);
        (BlowupKind::JToZero, gi, t_all, (t_all - t_half).abs())
    } else if q_min <= -0.25 {
        let cache = data.cache();
        let kappa = cache.gamma_ref() + cache.rho_ref() * last.a;
        let pts: Vec<(f64, f64)> = samples.iter().map(|s| (s.d, s.phi1)).collect();
        let (t, u) = tail_blowup_time(alpha, last.t, d_lo, kappa, &pts).unwrap_or((t_lo, 0.0));
        (BlowupKind::JToInfinity, min_idx, t, u)
    } else {
        return none(run);
    };

    // log-log fit of J against T − t over the last decade
    let rate_fit = {
        let gap = (t_est - last.t).max(0.0);
        let (x, y): (Vec<f64>, Vec<f64>) = samples
            .iter()
            .filter(|s| t_est - s.t > 0.0 && t_est - s.t <= 10.0 * gap)
            .map(|s| ((t_est - s.t).ln(), s.j[label_idx].ln()))
            .unzip();
        linear_fit(&x, &y).map(|f| LogLogFit {
            exponent: f.slope,
            constant: f.intercept.exp(),
            r2: f.r2,
        })
    };
    let unc = unc.max(1e-15 * t_est.abs());
    Ok(Detection {
        estimate: BlowupEstimate {
            kind,
            t_est,
            bracket: (t_est - unc, t_est + unc),
            rate_fit,
            label: Some(watch[label_idx]),
            t_resolved: last.t,
        },
        run,
        watch: watch.to_vec(),
    })
}

/// Smallest root `> t0` of `c0 + c1 t + c2 t²`.
fn quadratic_root_after(c: [f64; 3], t0: f64) -> Option<f64> {
    let [c0, c1, c2] = c;
    let roots = if c2.abs() < 1e-300 {
        vec![-c0 / c1]
    } else {
        let disc = c1 * c1 - 4.0 * c2 * c0;
        if disc < 0.0 {
            return None;
        }
        let q = -0.5 * (c1 + c1.signum() * disc.sqrt());
        vec![q / c2, c0 / q]
    };
    roots
        .into_iter()
        .filter(|r| r.is_finite() && *r > t0 - 1e-12)
        .min_by(f64::total_cmp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closedform::mu1_exact_undamped;
    use crate::fields::make_initial_data;

    #[test]
    fn rhs_at_rest() {
        let d = make_initial_data("cos(2*pi*x)*cos(2*pi*y)", "sin(2*pi*x)^2", 16).unwrap();
        let r = char_rhs(&d, 0.3, 0.0, [0.0, 0.0, 0.0], 1e-12).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-14 && r[1] == 0.0 && (r[2] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn initial_fields() {
        let d = make_initial_data("cos(2*pi*x)*cos(2*pi*y)", "sin(2*pi*x)^2", 16).unwrap();
        let s = CharState::initial();
        let labels = watch_labels(&d, 7, 4);
        let j = jacobian_at(&d, &s, &labels).unwrap();
        assert!(j.values.iter().all(|v| *v == 1.0));
        let g = gamma_bouss_at(&d, 0.2, &s, &labels, 1e-12).unwrap();
        let r = rho_at(&d, &s, &labels).unwrap();
        for (k, &a) in labels.iter().enumerate() {
            assert!((g.values[k] - d.gamma0(a)).abs() < 1e-13);
            assert_eq!(r.values[k], d.rho0(a));
        }
    }

    #[test]
    fn part2_jacobian_matches_closed_form_at_t1() {
        let d = make_initial_data("cos(4*pi*x)", "-sin(2*pi*x)^2", 16).unwrap();
        let run = solve_char(&d, 0.0, 1.0, &Tolerances::default()).unwrap();
        let s = run.last_state().unwrap();
        let j = jacobian_at(&d, &s, &[Label::new(0.25, 0.3), Label::new(0.0, 0.7)]).unwrap();
        assert_eq!(mu1_exact_undamped(1.0).unwrap(), 4.0);
        assert!((j.values[0] - 4.0).abs() < 1e-7, "{}", j.values[0]);
        assert!((j.values[1] - 0.25).abs() < 1e-8);
    }

    #[test]
    fn watch_labels_are_seeded() {
        let d = make_initial_data("cos(2*pi*x)*cos(2*pi*y)", "0", 16).unwrap();
        assert_eq!(watch_labels(&d, 3, 8), watch_labels(&d, 3, 8));
        assert_ne!(watch_labels(&d, 3, 8), watch_labels(&d, 4, 8));
        assert_eq!(watch_labels(&d, 3, 8).len(), 10);
    }

    #[test]
    fn quadratic_roots() {
        // (t − 2)(t − 3)
        assert_eq!(quadratic_root_after([6.0, -5.0, 1.0], 1.0), Some(2.0));
        assert_eq!(quadratic_root_after([6.0, -5.0, 1.0], 2.5), Some(3.0));
        assert_eq!(quadratic_root_after([1.0, 0.0, 1.0], 0.0), None);
    }
}
