//! Damped and undamped Euler along characteristics: the time maps
//! `t^E(τ) = ∫₀^τ φ₁(μ)² dμ` and `t^E_α = −ln|1 − α t^E|/α`, the blowup time
//! `T^E`, the regime trichotomy in `α`, and `γ` at labels.
//!
//! Distances to the blowup surface are carried as `δ = τ* − τ`; the reference
//! denominator `1 + m₀τ = |m₀|δ` is then formed without cancellation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{InitialData, Label, LabelField, Tolerances};
use crate::ode::{self, IntegrandBlowup, OdeError, OdeProblem, OdeSolution, OdeTol, TerminalStatus};
use crate::quadrature::{self, moment_integrals_tracked, Moments, QuadError};
use crate::rates::{fit_log_law, log_tail_integral, LinearFit};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EulerError {
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("tau = {tau} outside [0, {tau_star})")]
    TauOutOfRange { tau: f64, tau_star: f64 },
    #[error("quadrature unresolved at distance {delta} from the blowup surface")]
    Unresolved { delta: f64 },
    #[error("undamped Euler does not blow up for this data (T^E = +inf)")]
    UndampedNoBlowup,
    #[error("t = {t} lies past the blowup time")]
    PastBlowup { t: f64 },
    #[error("alpha must be finite and >= 0, got {0}")]
    InvalidAlpha(f64),
}

pub(crate) fn ode_tol(tol: &Tolerances) -> OdeTol {
    OdeTol {
        rel: tol.ode_rel,
        abs: tol.ode_abs,
        event: tol.event_tol,
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

const GL_POINTS: usize = 10;
const MAX_PANELS: usize = 60;

/// Euler moments (`σ = 0`) at `τ = τ* − δ`.
pub fn euler_moments(data: &InitialData, delta: f64, quad_rel: f64) -> Result<Moments, EulerError> {
    let tau = data.tau_star() - delta;
    let m = moment_integrals_tracked(data, tau, 0.0, euler_reference_denominator(data, delta), quad_rel)?;
    if !m.converged {
        return Err(EulerError::Unresolved { delta });
    }
    Ok(m)
}

/// `1 + γ₀(a_ref)τ` at `τ = τ* − δ`, written as `|m₀|δ + (γ_ref − m₀)τ`.
pub fn euler_reference_denominator(data: &InitialData, delta: f64) -> f64 {
    let tau = data.tau_star() - delta;
    -data.m0() * delta + (data.cache().gamma_ref() - data.m0()) * tau
}

/// `γ` at `labels` from Euler moments, given `e^{−αt}` at that instant.
pub fn gamma_from_moments(
    data: &InitialData,
    delta: f64,
    m: &Moments,
    decay: f64,
    labels: &[Label],
) -> Vec<f64> {
    let tau = data.tau_star() - delta;
    let d_ref = euler_reference_denominator(data, delta);
    let tau_prime = decay / (m.phi1 * m.phi1);
    labels
        .iter()
        .map(|&a| {
            let d = data.denominator_at(a, tau, 0.0, d_ref);
            tau_prime * (data.gamma0(a) / d - m.kbar2 / m.phi1)
        })
        .collect()
}

/// The undamped time map and its limit, built panel by panel towards `τ*`.
/// Panel `k ≥ 1` covers `δ ∈ [τ*2^{−k}, τ*2^{1−k}]`.
#[derive(Debug, Clone)]
pub struct TimeMaps<'a> {
    data: &'a InitialData,
    tol: Tolerances,
    pub tau_star: f64,
    /// `T^E`, `+∞` when the increments do not decay summably.
    pub te: f64,
    pub te_err: f64,
    panels: Vec<f64>,
    /// `δ` at the deepest fully resolved panel edge.
    pub delta_resolved: f64,
    /// Extrapolated `∫_{τ*−δ_resolved}^{τ*} φ₁²`.
    pub tail: f64,
    pub fit: Option<LinearFit>,
    pub diagnostic: Option<String>,
    /// `(δ, φ₁, M₂)` at every quadrature node used.
    pub samples: Vec<(f64, f64, f64)>,
}

impl<'a> TimeMaps<'a> {
    pub fn new(data: &'a InitialData, tol: &Tolerances) -> Result<Self, EulerError> {
        Self::with_depth(data, tol, MAX_PANELS)
    }

    /// As [`TimeMaps::new`] but with at most `max_panels` panels.
    pub fn with_depth(data: &'a InitialData, tol: &Tolerances, max_panels: usize) -> Result<Self, EulerError> {
        let tau_star = data.tau_star();
        let (gx, gw) = gauss_legendre(GL_POINTS);
        let mut panels = Vec::new();
        let mut samples = Vec::new();
        let mut diagnostic = None;
        let mut divergent = false;
        'outer: for k in 1..=max_panels.max(2) {
            let lo = tau_star * 0.5f64.powi(k as i32);
            let hi = 2.0 * lo;
            let (c, r) = (0.5 * (hi + lo), 0.5 * (hi - lo));
            let mut sum = 0.0;
            let mut local = Vec::with_capacity(GL_POINTS);
            for (x, w) in gx.iter().zip(&gw) {
                let delta = c + r * x;
                match euler_moments(data, delta, tol.quad_rel) {
                    Ok(m) => {
                        sum += w * m.phi1 * m.phi1;
                        local.push((delta, m.phi1, m.m2));
                    }
                    Err(EulerError::Unresolved { .. }) => break 'outer,
                    Err(e) => return Err(e),
                }
            }
            panels.push(sum * r);
            samples.extend(local);
            // curve minima give φ₁ ~ δ^{−1/2}: increments stop decaying
            let n = panels.len();
            if n >= 10 && (1..=3).all(|j| panels[n - j] >= 0.8 * panels[n - j - 1]) {
                divergent = true;
                diagnostic = Some(format!(
                    "t^E increments stopped decaying (last ratio {:.3}); minima are not isolated",
                    panels[n - 1] / panels[n - 2]
                ));
                break;
            }
        }
        if panels.len() < 3 {
            return Err(EulerError::Unresolved {
                delta: tau_star * 0.5f64.powi(panels.len() as i32 + 1),
            });
        }
        let k = panels.len();
        let delta_resolved = tau_star * 0.5f64.powi(k as i32);
        let (te, te_err, tail, fit) = if divergent {
            (f64::INFINITY, 0.0, f64::INFINITY, None)
        } else {
            let window = |lo_panel: usize, hi_panel: usize| {
                let start = (lo_panel - 1) * GL_POINTS;
                let end = hi_panel * GL_POINTS;
                let s = &samples[start..end];
                let d: Vec<f64> = s.iter().map(|v| v.0).collect();
                let p: Vec<f64> = s.iter().map(|v| v.1).collect();
                fit_log_law(&d, &p)
            };
            let fit = window(k - 1, k).expect("two panels of samples");
            let alt = window(k - 2, k - 1).expect("two panels of samples");
            let tail = log_tail_integral(fit.slope, fit.intercept, delta_resolved);
            let tail_alt = log_tail_integral(alt.slope, alt.intercept, delta_resolved);
            let body: f64 = panels.iter().sum();
            let err = (tail - tail_alt).abs() + body * tol.quad_rel;
            (body + tail, err, tail, Some(fit))
        };
        Ok(Self {
            data,
            tol: *tol,
            tau_star,
            te,
            te_err,
            panels,
            delta_resolved,
            tail,
            fit,
            diagnostic,
            samples,
        })
    }

    pub fn data(&self) -> &InitialData {
        self.data
    }

    pub fn panels_used(&self) -> usize {
        self.panels.len()
    }

    /// `∫_{δ_a}^{δ_b} φ₁² dδ` by one Gauss–Legendre rule (`δ_a < δ_b`).
    fn partial(&self, da: f64, db: f64) -> Result<f64, EulerError> {
        if db <= da {
            return Ok(0.0);
        }
        let (gx, gw) = gauss_legendre(GL_POINTS);
        let (c, r) = (0.5 * (db + da), 0.5 * (db - da));
        let mut sum = 0.0;
        for (x, w) in gx.iter().zip(&gw) {
            let m = euler_moments(self.data, c + r * x, self.tol.quad_rel)?;
            sum += w * m.phi1 * m.phi1;
        }
        Ok(sum * r)
    }

    fn panel_of(&self, delta: f64) -> usize {
        // smallest k with τ*2^{−k} ≤ δ
        let k = (self.tau_star / delta).log2().ceil().max(1.0) as usize;
        if self.tau_star * 0.5f64.powi(k as i32) > delta {
            k + 1
        } else {
            k
        }
    }

    fn check_tau(&self, tau: f64) -> Result<f64, EulerError> {
        if !(tau >= 0.0 && tau < self.tau_star) {
            return Err(EulerError::TauOutOfRange {
                tau,
                tau_star: self.tau_star,
            });
        }
        Ok(self.tau_star - tau)
    }

    /// `t^E(τ)`.
    pub fn t_e(&self, tau: f64) -> Result<f64, EulerError> {
        let delta = self.check_tau(tau)?;
        self.t_e_delta(delta)
    }

    /// `t^E(τ* − δ)`.
    pub fn t_e_delta(&self, delta: f64) -> Result<f64, EulerError> {
        if delta >= self.tau_star {
            return Ok(0.0);
        }
        let k = self.panel_of(delta);
        if k > self.panels.len() {
            if self.te.is_finite() {
                return Ok(self.te - self.tail_from(delta));
            }
            return Err(EulerError::Unresolved { delta });
        }
        let upper = self.tau_star * 0.5f64.powi(k as i32 - 1);
        Ok(self.panels[..k - 1].iter().sum::<f64>() + self.partial(delta, upper)?)
    }

    fn tail_from(&self, delta: f64) -> f64 {
        match self.fit {
            Some(f) => log_tail_integral(f.slope, f.intercept, delta),
            None => f64::INFINITY,
        }
    }

    /// `T^E − t^E(τ* − δ)` summed from the far side (no cancellation).
    pub fn remaining_delta(&self, delta: f64) -> Result<f64, EulerError> {
        if !self.te.is_finite() {
            return Ok(f64::INFINITY);
        }
        if delta >= self.tau_star {
            return Ok(self.te);
        }
        let k = self.panel_of(delta);
        if k > self.panels.len() {
            return Ok(self.tail_from(delta));
        }
        let lower = self.tau_star * 0.5f64.powi(k as i32);
        Ok(self.partial(lower, delta)? + self.panels[k..].iter().sum::<f64>() + self.tail)
    }

    /// `t^E_α(τ) = −ln|1 − α t^E(τ)|/α` (`t^E` at `α = 0`).
    pub fn t_e_alpha(&self, alpha: f64, tau: f64) -> Result<f64, EulerError> {
        let te = self.t_e(tau)?;
        Ok(damped_time(alpha, te))
    }

    /// `δ` with `t^E(τ* − δ) = s`, by bracketing on panels and safeguarded Newton.
    pub fn delta_at_undamped_time(&self, s: f64) -> Result<f64, EulerError> {
        if s <= 0.0 {
            return Ok(self.tau_star);
        }
        if s >= self.te {
            return Err(EulerError::PastBlowup { t: s });
        }
        let mut acc = 0.0;
        let mut k = 1;
        while k <= self.panels.len() && acc + self.panels[k - 1] < s {
            acc += self.panels[k - 1];
            k += 1;
        }
        let (mut lo, mut hi) = if k > self.panels.len() {
            (0.0, self.delta_resolved)
        } else {
            let lo = self.tau_star * 0.5f64.powi(k as i32);
            (lo, 2.0 * lo)
        };
        // f(δ) = t^E(δ) − s is decreasing in δ
        let f = |d: f64| -> Result<f64, EulerError> { Ok(self.t_e_delta(d)? - s) };
        let mut d = 0.5 * (lo + hi);
        for _ in 0..200 {
            let fd = f(d)?;
            if fd > 0.0 {
                lo = d;
            } else {
                hi = d;
            }
            let slope = match euler_moments(self.data, d, self.tol.quad_rel) {
                Ok(m) => -m.phi1 * m.phi1,
                Err(_) => f64::NAN,
            };
            let newton = d - fd / slope;
            let next = if newton.is_finite() && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - d).abs() <= 1e-15 * d.max(1e-300) || hi - lo <= 1e-15 * hi {
                return Ok(next);
            }
            d = next;
        }
        Ok(d)
    }

    /// `δ(t)` along the damped flow, from `e^{−αt} = 1 − α t^E(τ)`.
    pub fn delta_at(&self, alpha: f64, t: f64) -> Result<f64, EulerError> {
        let s = undamped_equivalent(alpha, t);
        self.delta_at_undamped_time(s).map_err(|e| match e {
            EulerError::PastBlowup { .. } => EulerError::PastBlowup { t },
            other => other,
        })
    }
}

/// `−ln(1 − α s)/α`, `+∞` once `α s ≥ 1`.
pub fn damped_time(alpha: f64, s: f64) -> f64 {
    if alpha == 0.0 {
        return s;
    }
    if alpha * s >= 1.0 {
        return f64::INFINITY;
    }
    -(-alpha * s).ln_1p() / alpha
}

/// `(1 − e^{−αt})/α`, the undamped time reached by the damped flow at `t`.
pub fn undamped_equivalent(alpha: f64, t: f64) -> f64 {
    if alpha == 0.0 {
        t
    } else {
        -(-alpha * t).exp_m1() / alpha
    }
}

/// `t^E(τ)` for a single `τ` (builds the panels up to `τ` only).
pub fn undamped_time_map(data: &InitialData, tau: f64) -> Result<f64, EulerError> {
    let tol = Tolerances::default();
    let ts = data.tau_star();
    if !(tau >= 0.0 && tau < ts) {
        return Err(EulerError::TauOutOfRange { tau, tau_star: ts });
    }
    if tau == 0.0 {
        return Ok(0.0);
    }
    let delta = ts - tau;
    let k = ((ts / delta).log2().ceil() as usize).max(1) + 1;
    let maps = TimeMaps::with_depth(data, &tol, k.max(3));
    match maps {
        Ok(m) => m.t_e(tau),
        // panels past the resolution limit are not needed for τ itself
        Err(EulerError::Unresolved { .. }) => {
            let (gx, gw) = gauss_legendre(GL_POINTS);
            let mut total = 0.0;
            let mut hi = ts;
            while hi > delta {
                let lo = (0.5 * hi).max(delta);
                let (c, r) = (0.5 * (hi + lo), 0.5 * (hi - lo));
                for (x, w) in gx.iter().zip(&gw) {
                    let m = euler_moments(data, c + r * x, tol.quad_rel)?;
                    total += w * r * m.phi1 * m.phi1;
                }
                hi = lo;
            }
            Ok(total)
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UndampedBlowup {
    /// `T^E`, `+∞` for curve minima.
    pub te: f64,
    pub err_estimate: f64,
    pub panels: usize,
    pub delta_resolved: f64,
    pub tail: f64,
    pub diagnostic: Option<String>,
}

/// `T^E = lim t^E(τ)` as `τ → τ*`.
pub fn blowup_time_undamped(data: &InitialData, tol: &Tolerances) -> Result<UndampedBlowup, EulerError> {
    blowup_time_undamped_depth(data, tol, MAX_PANELS)
}

/// [`blowup_time_undamped`] with at most `depth` panels.
pub fn blowup_time_undamped_depth(
    data: &InitialData,
    tol: &Tolerances,
    depth: usize,
) -> Result<UndampedBlowup, EulerError> {
    let m = TimeMaps::with_depth(data, tol, depth)?;
    Ok(UndampedBlowup {
        te: m.te,
        err_estimate: m.te_err,
        panels: m.panels_used(),
        delta_resolved: m.delta_resolved,
        tail: m.tail,
        diagnostic: m.diagnostic.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Blowup,
    NontrivialSteady,
    TrivialSteady,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub alpha: f64,
    pub alpha_critical: f64,
    pub te: f64,
    /// `T^E_α = −ln(1 − αT^E)/α`, present iff `regime = Blowup`.
    pub t_blowup: Option<f64>,
    /// Limit of `γ` at the profile labels, present iff steady.
    pub steady_profile: Option<LabelField>,
}

pub fn classify_regime(data: &InitialData, alpha: f64, tol: &Tolerances) -> Result<RegimeReport, EulerError> {
    let maps = TimeMaps::new(data, tol)?;
    classify_with_maps(&maps, alpha, &data.minimum_labels())
}

/// Classifies against precomputed maps; the steady profile is evaluated at
/// `labels`.
pub fn classify_with_maps(maps: &TimeMaps<'_>, alpha: f64, labels: &[Label]) -> Result<RegimeReport, EulerError> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(EulerError::InvalidAlpha(alpha));
    }
    if !maps.te.is_finite() {
        return Err(EulerError::UndampedNoBlowup);
    }
    let alpha_critical = 1.0 / maps.te;
    let ratio = alpha * maps.te;
    let data = maps.data;
    let (regime, t_blowup, steady_profile) = if (ratio - 1.0).abs() <= maps.tol.event_tol {
        // γ = τ'(K₁ − K̄₂/φ₁) with e^{−αt} = α(T^E − t^E) at the deepest resolved δ
        let delta = maps.delta_resolved;
        let m = euler_moments(data, delta, maps.tol.quad_rel)?;
        let decay = alpha * maps.remaining_delta(delta)?;
        let values = gamma_from_moments(data, delta, &m, decay, labels);
        (
            Regime::NontrivialSteady,
            None,
            Some(LabelField {
                labels: labels.to_vec(),
                values,
            }),
        )
    } else if ratio < 1.0 {
        (Regime::Blowup, Some(damped_time(alpha, maps.te)), None)
    } else {
        (
            Regime::TrivialSteady,
            None,
            Some(LabelField {
                labels: labels.to_vec(),
                values: vec![0.0; labels.len()],
            }),
        )
    };
    Ok(RegimeReport {
        regime,
        alpha,
        alpha_critical,
        te: maps.te,
        t_blowup,
        steady_profile,
    })
}

/// Integrates `τ' = e^{−αt}/φ₁(τ)²` from `τ(0) = 0`. The run ends with
/// `BlowupBracketed` when `τ` reaches the quadrature resolution limit before
/// `t_end`.
pub fn solve_tau_alpha(
    data: &InitialData,
    alpha: f64,
    t_end: f64,
    tol: &Tolerances,
) -> Result<OdeSolution, EulerError> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(EulerError::InvalidAlpha(alpha));
    }
    let tau_star = data.tau_star();
    let quad_rel = tol.quad_rel;
    let p = OdeProblem::new(0.0, vec![0.0], move |t, y, dy| {
        let delta = tau_star - y[0];
        if !(delta > 0.0) {
            return Err(IntegrandBlowup);
        }
        let m = euler_moments(data, delta, quad_rel).map_err(|_| IntegrandBlowup)?;
        dy[0] = (-alpha * t).exp() / (m.phi1 * m.phi1);
        Ok(())
    });
    Ok(ode::integrate(p, t_end, &ode_tol(tol))?)
}

/// `γ` at `labels` at time `t`, with `τ_α(t)` from [`solve_tau_alpha`].
pub fn gamma_euler_at(
    data: &InitialData,
    alpha: f64,
    labels: &[Label],
    t: f64,
    tol: &Tolerances,
) -> Result<LabelField, EulerError> {
    if t == 0.0 {
        return Ok(LabelField {
            labels: labels.to_vec(),
            values: labels.iter().map(|&a| data.gamma0(a)).collect(),
        });
    }
    let sol = solve_tau_alpha(data, alpha, t, tol)?;
    if sol.status != TerminalStatus::ReachedTEnd {
        return Err(EulerError::PastBlowup { t });
    }
    let delta = data.tau_star() - sol.last_state()[0];
    let m = euler_moments(data, delta, tol.quad_rel)?;
    Ok(LabelField {
        labels: labels.to_vec(),
        values: gamma_from_moments(data, delta, &m, (-alpha * t).exp(), labels),
    })
}

/// Extremes of `γ` over the quadrature grid and the minima at `δ`.
pub fn gamma_extrema(data: &InitialData, delta: f64, m: &Moments, decay: f64) -> (f64, f64) {
    let tau = data.tau_star() - delta;
    let tp = decay / (m.phi1 * m.phi1);
    quadrature::grid_extrema(
        data,
        m.levels_used,
        tau,
        0.0,
        euler_reference_denominator(data, delta),
        tp,
        0.0,
        -tp * m.kbar2 / m.phi1,
    )
}

/// Trapezoid integral of a sampled `‖γ‖∞` series.
pub fn bkm_integral(series: &[(f64, f64)]) -> f64 {
    bkm_cumulative(series).last().copied().unwrap_or(0.0)
}

/// Running trapezoid integral, one value per sample.
pub fn bkm_cumulative(series: &[(f64, f64)]) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    for (i, s) in series.iter().enumerate() {
        if i > 0 {
            let p = series[i - 1];
            acc += 0.5 * (s.0 - p.0) * (s.1 + p.1);
        }
        out.push(acc);
    }
    out
}

/// Time at which `τ` (or its Boussinesq analogue) reaches the surface, from the
/// last resolved state: `e^{−αT} = e^{−αt_lo} − α·(1/|κ|)∫₀^{d_lo}φ₁² dd`,
/// where `φ₁ ≈ C(−ln d) + D` is fitted on `(d, φ₁)` samples and
/// `κ = dd/dτ`. Returns `(T, uncertainty)`.
pub(crate) fn tail_blowup_time(
    alpha: f64,
    t_lo: f64,
    d_lo: f64,
    kappa: f64,
    samples: &[(f64, f64)],
) -> Option<(f64, f64)> {
    let d: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let p: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let fit = fit_log_law(&d, &p)?;
    let half = samples.len() / 2;
    let fit_far = fit_log_law(&d[..samples.len() - half], &p[..samples.len() - half]).unwrap_or(fit);
    let time = |f: &LinearFit| {
        let tail = log_tail_integral(f.slope, f.intercept, d_lo) / kappa.abs();
        if alpha == 0.0 {
            t_lo + tail
        } else {
            let rest = (-alpha * t_lo).exp() - alpha * tail;
            if rest <= 0.0 {
                f64::INFINITY
            } else {
                -rest.ln() / alpha
            }
        }
    };
    let t = time(&fit);
    Some((t, (t - time(&fit_far)).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::make_initial_data;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        for p in 0..20 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
            let exact = if p % 2 == 0 { 2.0 / (p as f64 + 1.0) } else { 0.0 };
            assert!((q - exact).abs() < 1e-14, "degree {p}");
        }
    }

    #[test]
    fn time_map_of_cos4pix_is_arctanh() {
        let d = make_initial_data("cos(4*pi*x)", "0", 16).unwrap();
        assert_eq!(undamped_time_map(&d, 0.0).unwrap(), 0.0);
        let t = undamped_time_map(&d, 0.5).unwrap();
        assert!((t - 0.5f64.atanh()).abs() < 1e-10, "{t}");
        assert!((t - 0.549_306_1).abs() < 1e-7);
    }

    #[test]
    fn curve_minima_never_blow_up_in_finite_time() {
        let d = make_initial_data("cos(4*pi*x)", "0", 16).unwrap();
        let b = blowup_time_undamped(&d, &Tolerances::default()).unwrap();
        assert!(b.te.is_infinite());
        assert!(b.diagnostic.is_some());
        assert!(matches!(
            classify_regime(&d, 0.1, &Tolerances::default()),
            Err(EulerError::UndampedNoBlowup)
        ));
    }

    #[test]
    fn tau_alpha_starts_with_unit_slope_and_inverts_tanh() {
        let d = make_initial_data("cos(4*pi*x)", "0", 16).unwrap();
        let tol = Tolerances::default();
        let sol = solve_tau_alpha(&d, 0.0, 1.5, &tol).unwrap();
        assert_eq!(sol.status, TerminalStatus::ReachedTEnd);
        for t in [0.1, 0.5, 1.0, 1.5] {
            let tau = sol.eval(t).unwrap()[0];
            assert!((tau - t.tanh()).abs() < 1e-8, "t={t}: {tau}");
        }
        let (t1, y1) = &sol.nodes[1];
        assert!((y1[0] / t1 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn damped_time_identities() {
        assert_eq!(damped_time(0.0, 1.3), 1.3);
        let (a, s) = (0.4, 1.1);
        assert!((undamped_equivalent(a, damped_time(a, s)) - s).abs() < 1e-14);
        assert!(damped_time(a, s) > s);
        assert!(damped_time(0.5, 2.0).is_infinite());
    }

    #[test]
    fn bkm_trapezoid() {
        let s: Vec<(f64, f64)> = (0..=10).map(|i| (i as f64 / 10.0, 1.0)).collect();
        assert!((bkm_integral(&s) - 1.0).abs() < 1e-14);
        assert_eq!(bkm_integral(&[]), 0.0);
    }

    #[test]
    fn tail_time_recovers_a_synthetic_law() {
        // φ₁ = 0.3(−ln d) + 1, κ = −1, α = 0: T = t_lo + ∫₀^{d_lo} φ₁²
        let s: Vec<(f64, f64)> = (0..10)
            .map(|i| {
                let d = 1e-4 * 1.3f64.powi(i);
                (d, -0.3 * d.ln() + 1.0)
            })
            .collect();
        let (t, unc) = tail_blowup_time(0.0, 1.0, 1e-4, -1.0, &s).unwrap();
        assert!((t - 1.0 - log_tail_integral(0.3, 1.0, 1e-4)).abs() < 1e-14);
        assert!(unc < 1e-14);
    }
}
