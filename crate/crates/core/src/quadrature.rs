//! Nested periodic trapezoid quadrature over the unit torus.
//!
//! Every integrand met here is 1-periodic in both variables, so the
//! equispaced trapezoid rule converges spectrally. Levels double the number
//! of points per axis; each level reuses all points of the coarser ones, and
//! the error estimate is the difference between the two finest levels.
//!
//! The moment integrals `φ₁`, `K̄₂`, `L̄₂` are swept over cached samples of
//! `γ₀` and `ρ₀` (stored relative to their values at a reference minimum so
//! that denominators near the minimum are formed without cancellation).

use std::sync::OnceLock;

use thiserror::Error;

use crate::fields::{Dependence, InitialData, Label};

/// Points per axis at the finest 2D level.
pub const DEFAULT_CAP_2D: usize = 1 << 12;
/// Points at the finest level for data varying along one axis only. Chosen so
/// the worst sweep stays below the 2D evaluation budget.
pub const DEFAULT_CAP_1D: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadError {
    #[error("integrand returned a non-finite value at ({x}, {y})")]
    NonFiniteSample { x: f64, y: f64 },
    #[error("no convergence: value {value}, error estimate {err_estimate} after {levels_used} levels")]
    NoConvergence {
        value: f64,
        err_estimate: f64,
        levels_used: usize,
    },
    #[error("denominator Ψ − ρ₀σ reached {min_denominator} (not positive)")]
    DenominatorSignChange { min_denominator: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub err_estimate: f64,
    pub levels_used: usize,
    /// False when the cap was reached before successive levels agreed.
    pub converged: bool,
}

impl QuadResult {
    /// Turns an unconverged result into [`QuadError::NoConvergence`].
    pub fn checked(self) -> Result<Self, QuadError> {
        if self.converged {
            Ok(self)
        } else {
            Err(QuadError::NoConvergence {
                value: self.value,
                err_estimate: self.err_estimate,
                levels_used: self.levels_used,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrapezoidRule {
    pub base: usize,
    pub cap: usize,
}

impl Default for TrapezoidRule {
    fn default() -> Self {
        Self::new(16, DEFAULT_CAP_2D)
    }
}

impl TrapezoidRule {
    pub fn new(base: usize, cap: usize) -> Self {
        assert!(base >= 2 && base.is_power_of_two() && cap >= base);
        Self { base, cap }
    }

    fn levels(&self) -> usize {
        (self.cap / self.base).trailing_zeros() as usize + 1
    }

    /// Integrates `f` over `[0,1]²`.
    ///
    /// Convergence is declared when two successive levels differ by at most
    /// `rel_tol` times the larger of `|value|` and the mean of `|f|`; the
    /// second scale keeps mean-zero integrands from never converging.
    pub fn integrate(
        &self,
        f: impl Fn(f64, f64) -> f64,
        rel_tol: f64,
    ) -> Result<QuadResult, QuadError> {
        let mut sum = 0.0;
        let mut abs_sum = 0.0;
        let mut prev: Option<f64> = None;
        let mut err = f64::INFINITY;
        for level in 0..self.levels() {
            let n = self.base << level;
            let h = 1.0 / n as f64;
            for j in 0..n {
                let y = j as f64 * h;
                let step = if level > 0 && j % 2 == 0 { 2 } else { 1 };
                let start = if level > 0 && j % 2 == 0 { 1 } else { 0 };
                let mut row = 0.0;
                let mut row_abs = 0.0;
                let mut i = start;
                while i < n {
                    let x = i as f64 * h;
                    let v = f(x, y);
                    if !v.is_finite() {
                        return Err(QuadError::NonFiniteSample { x, y });
                    }
                    row += v;
                    row_abs += v.abs();
                    i += step;
                }
                sum += row;
                abs_sum += row_abs;
            }
            let count = (n * n) as f64;
            let value = sum / count;
            let scale = value.abs().max(abs_sum / count);
            if let Some(p) = prev {
                err = (value - p).abs();
                if err <= rel_tol * scale {
                    return Ok(QuadResult {
                        value,
                        err_estimate: err,
                        levels_used: level + 1,
                        converged: true,
                    });
                }
            }
            prev = Some(value);
        }
        Ok(QuadResult {
            value: prev.unwrap_or(0.0),
            err_estimate: err,
            levels_used: self.levels(),
            converged: false,
        })
    }
}

/// [`TrapezoidRule::integrate`] with the default rule.
pub fn integrate_q(f: impl Fn(f64, f64) -> f64, rel_tol: f64) -> Result<QuadResult, QuadError> {
    TrapezoidRule::default().integrate(f, rel_tol)
}

#[derive(Debug)]
struct SampleSet {
    dgamma: Vec<f64>,
    drho: Vec<f64>,
}

/// Lazily filled samples of `γ₀ − γ_ref` and `ρ₀ − ρ_ref` on the nested grids.
/// Set `k` holds exactly the points that level `k` adds to level `k − 1`.
#[derive(Debug)]
pub(crate) struct SampleCache {
    dependence: Dependence,
    base: usize,
    gamma_ref: f64,
    rho_ref: f64,
    has_rho: bool,
    sets: Vec<OnceLock<SampleSet>>,
}

impl SampleCache {
    pub(crate) fn new(
        dependence: Dependence,
        base: usize,
        gamma_ref: f64,
        rho_ref: f64,
        has_rho: bool,
    ) -> Self {
        let cap = match dependence {
            Dependence::Both => DEFAULT_CAP_2D,
            _ => DEFAULT_CAP_1D,
        };
        let levels = (cap / base).trailing_zeros() as usize + 1;
        Self {
            dependence,
            base,
            gamma_ref,
            rho_ref,
            has_rho,
            sets: (0..levels).map(|_| OnceLock::new()).collect(),
        }
    }

    pub(crate) fn gamma_ref(&self) -> f64 {
        self.gamma_ref
    }

    pub(crate) fn rho_ref(&self) -> f64 {
        self.rho_ref
    }

    pub(crate) fn levels(&self) -> usize {
        self.sets.len()
    }

    fn points_per_axis(&self, level: usize) -> usize {
        self.base << level
    }

    fn total_points(&self, level: usize) -> usize {
        let n = self.points_per_axis(level);
        match self.dependence {
            Dependence::Both => n * n,
            _ => n,
        }
    }

    /// Calls `visit` on every point that `level` adds, in a fixed order.
    fn for_new_points(&self, level: usize, mut visit: impl FnMut(f64, f64)) {
        let n = self.points_per_axis(level);
        let h = 1.0 / n as f64;
        match self.dependence {
            Dependence::Both => {
                for j in 0..n {
                    let (start, step) = if level > 0 && j % 2 == 0 { (1, 2) } else { (0, 1) };
                    let y = j as f64 * h;
                    let mut i = start;
                    while i < n {
                        visit(i as f64 * h, y);
                        i += step;
                    }
                }
            }
            Dependence::OnlyX | Dependence::OnlyY => {
                let (start, step) = if level > 0 { (1, 2) } else { (0, 1) };
                let mut i = start;
                while i < n {
                    let s = i as f64 * h;
                    if self.dependence == Dependence::OnlyX {
                        visit(s, 0.0);
                    } else {
                        visit(0.0, s);
                    }
                    i += step;
                }
            }
        }
    }

    fn set(&self, level: usize, data: &InitialData) -> &SampleSet {
        self.sets[level].get_or_init(|| {
            let mut dgamma = Vec::new();
            let mut drho = Vec::new();
            self.for_new_points(level, |x, y| {
                let a = Label::new(x, y);
                dgamma.push(data.gamma0(a) - self.gamma_ref);
                if self.has_rho {
                    drho.push(data.rho0(a) - self.rho_ref);
                }
            });
            SampleSet { dgamma, drho }
        })
    }
}

/// The shared-sweep integrals of the characteristic solution at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    /// `∫ (Ψ − ρ₀σ)⁻¹`
    pub phi1: f64,
    /// `∫ γ₀ (Ψ − ρ₀σ)⁻²`
    pub kbar2: f64,
    /// `∫ ρ₀ (Ψ − ρ₀σ)⁻²`
    pub lbar2: f64,
    /// `∫ (Ψ − ρ₀σ)⁻²`
    pub m2: f64,
    pub err_estimate: f64,
    pub levels_used: usize,
    pub points_per_axis: usize,
    pub converged: bool,
    /// `|∫J − 1|` with `J` summed on the next-coarser grid.
    pub norm_residual: f64,
    pub min_denominator: f64,
}

#[derive(Default, Clone, Copy)]
struct Sums {
    inv: f64,
    inv2: f64,
    dg_inv2: f64,
    dr_inv2: f64,
    absg_inv2: f64,
    absr_inv2: f64,
    min_d: f64,
}

fn sweep_set(set: &SampleSet, g_ref: f64, r_ref: f64, tau: f64, sigma: f64, d_ref: f64) -> Result<Sums, f64> {
    const BLOCK: usize = 512;
    let mut total = Sums {
        min_d: f64::INFINITY,
        ..Sums::default()
    };
    let n = set.dgamma.len();
    let mut start = 0;
    while start < n {
        let end = (start + BLOCK).min(n);
        let mut b = Sums {
            min_d: f64::INFINITY,
            ..Sums::default()
        };
        if set.drho.is_empty() {
            for &dg in &set.dgamma[start..end] {
                let d = d_ref + dg * tau;
                b.min_d = b.min_d.min(d);
                let inv = 1.0 / d;
                let inv2 = inv * inv;
                b.inv += inv;
                b.inv2 += inv2;
                b.dg_inv2 += dg * inv2;
                b.absg_inv2 += (dg + g_ref).abs() * inv2;
            }
        } else {
            for (&dg, &dr) in set.dgamma[start..end].iter().zip(&set.drho[start..end]) {
                let d = d_ref + dg * tau - dr * sigma;
                b.min_d = b.min_d.min(d);
                let inv = 1.0 / d;
                let inv2 = inv * inv;
                b.inv += inv;
                b.inv2 += inv2;
                b.dg_inv2 += dg * inv2;
                b.dr_inv2 += dr * inv2;
                b.absg_inv2 += (dg + g_ref).abs() * inv2;
                b.absr_inv2 += (dr + r_ref).abs() * inv2;
            }
        }
        if !(b.min_d > 0.0) || !b.inv.is_finite() {
            return Err(b.min_d);
        }
        total.inv += b.inv;
        total.inv2 += b.inv2;
        total.dg_inv2 += b.dg_inv2;
        total.dr_inv2 += b.dr_inv2;
        total.absg_inv2 += b.absg_inv2;
        total.absr_inv2 += b.absr_inv2;
        total.min_d = total.min_d.min(b.min_d);
        start = end;
    }
    Ok(total)
}

/// `φ₁`, `K̄₂`, `L̄₂` at `(τ, σ)`, with the reference denominator
/// `1 + γ₀(a_ref)τ − ρ₀(a_ref)σ` formed directly.
pub fn moment_integrals(
    data: &InitialData,
    tau: f64,
    sigma: f64,
    rel_tol: f64,
) -> Result<Moments, QuadError> {
    moment_integrals_tracked(data, tau, sigma, data.reference_denominator(tau, sigma), rel_tol)
}

/// As [`moment_integrals`] but with the reference denominator supplied by the
/// caller (typically integrated alongside `τ`, `σ` so it keeps full relative
/// precision as it approaches zero).
pub fn moment_integrals_tracked(
    data: &InitialData,
    tau: f64,
    sigma: f64,
    d_ref: f64,
    rel_tol: f64,
) -> Result<Moments, QuadError> {
    let cache = data.cache();
    let (g_ref, r_ref) = (cache.gamma_ref(), cache.rho_ref());

    // minima may sit between grid points
    let mut min_label_d = f64::INFINITY;
    for m in data.minima() {
        min_label_d = min_label_d.min(data.denominator_at(m.at, tau, sigma, d_ref));
    }
    if !(min_label_d > 0.0) || !(d_ref > 0.0) {
        return Err(QuadError::DenominatorSignChange {
            min_denominator: min_label_d.min(d_ref),
        });
    }

    let mut acc = Sums {
        min_d: f64::INFINITY,
        ..Sums::default()
    };
    let mut prev: Option<(f64, f64, f64, f64)> = None;
    let mut last = None;
    for level in 0..cache.levels() {
        let set = cache.set(level, data);
        let s = sweep_set(set, g_ref, r_ref, tau, sigma, d_ref)
            .map_err(|min_denominator| QuadError::DenominatorSignChange { min_denominator })?;
        acc.inv += s.inv;
        acc.inv2 += s.inv2;
        acc.dg_inv2 += s.dg_inv2;
        acc.dr_inv2 += s.dr_inv2;
        acc.absg_inv2 += s.absg_inv2;
        acc.absr_inv2 += s.absr_inv2;
        acc.min_d = acc.min_d.min(s.min_d);

        let count = cache.total_points(level) as f64;
        let phi1 = acc.inv / count;
        let m2 = acc.inv2 / count;
        let kbar2 = (acc.dg_inv2 + g_ref * acc.inv2) / count;
        let lbar2 = (acc.dr_inv2 + r_ref * acc.inv2) / count;
        let kscale = acc.absg_inv2 / count;
        let lscale = acc.absr_inv2 / count;

        let rel = |new: f64, old: f64, scale: f64| {
            if scale > 0.0 {
                (new - old).abs() / scale
            } else {
                0.0
            }
        };
        let (err, residual) = match prev {
            Some((p_phi, p_m2, p_k, p_l)) => (
                rel(phi1, p_phi, phi1)
                    .max(rel(m2, p_m2, m2))
                    .max(rel(kbar2, p_k, kscale))
                    .max(rel(lbar2, p_l, lscale)),
                (p_phi / phi1 - 1.0).abs(),
            ),
            None => (f64::INFINITY, f64::INFINITY),
        };
        let converged = err <= rel_tol;
        let m = Moments {
            phi1,
            kbar2,
            lbar2,
            m2,
            err_estimate: err,
            levels_used: level + 1,
            points_per_axis: cache.points_per_axis(level),
            converged,
            norm_residual: residual,
            min_denominator: acc.min_d.min(min_label_d),
        };
        if converged {
            return Ok(m);
        }
        last = Some(m);
        prev = Some((phi1, m2, kbar2, lbar2));
    }
    Ok(last.expect("at least one level"))
}

/// Min and max over the cached grid (up to `levels_used` levels) and the
/// minima labels of `(cg·γ₀ + cr·ρ₀)/(Ψ − ρ₀σ) + shift`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn grid_extrema(
    data: &InitialData,
    levels_used: usize,
    tau: f64,
    sigma: f64,
    d_ref: f64,
    cg: f64,
    cr: f64,
    shift: f64,
) -> (f64, f64) {
    let cache = data.cache();
    let (g_ref, r_ref) = (cache.gamma_ref(), cache.rho_ref());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for level in 0..levels_used.min(cache.levels()) {
        let set = cache.set(level, data);
        for (k, &dg) in set.dgamma.iter().enumerate() {
            let dr = set.drho.get(k).copied().unwrap_or(0.0);
            let d = d_ref + dg * tau - dr * sigma;
            let rho = if set.drho.is_empty() { 0.0 } else { dr + r_ref };
            let v = (cg * (dg + g_ref) + cr * rho) / d + shift;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    for m in data.minima() {
        let d = data.denominator_at(m.at, tau, sigma, d_ref);
        let v = (cg * data.gamma0(m.at) + cr * data.rho0(m.at)) / d + shift;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{InitialData, Tolerances};
    use std::f64::consts::PI;

    #[test]
    fn constant_is_exact_at_every_level() {
        let r = integrate_q(|_, _| 1.0, 1e-12).unwrap();
        assert_eq!(r.value, 1.0);
        assert!(r.converged && r.levels_used >= 2);
    }

    #[test]
    fn near_singular_closed_form() {
        // ∫ dx / (1 + τ cos 4πx) = (1 − τ²)^(−1/2)
        let r = integrate_q(|x, _| 1.0 / (1.0 + 0.5 * (4.0 * PI * x).cos()), 1e-12).unwrap();
        assert!((r.value - 2.0 / 3f64.sqrt()).abs() < 1e-12, "{}", r.value);
    }

    #[test]
    fn closed_form_oracle_by_composite_sum() {
        // independent oracle: 10⁶-point midpoint sum in x
        let n = 1_000_000;
        let oracle: f64 = (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) / n as f64;
                1.0 / (1.0 + 0.5 * (4.0 * PI * x).cos())
            })
            .sum::<f64>()
            / n as f64;
        assert!((oracle - 1.154_700_5).abs() < 1e-7);
        let r = integrate_q(|x, _| 1.0 / (1.0 + 0.5 * (4.0 * PI * x).cos()), 1e-12).unwrap();
        assert!((r.value - oracle).abs() < 1e-9);
    }

    #[test]
    fn mean_zero_harmonic_converges_to_zero() {
        let r = integrate_q(|x, y| (2.0 * PI * x).cos() * (2.0 * PI * y).cos(), 1e-12).unwrap();
        assert!(r.converged);
        assert!(r.value.abs() < 1e-14);
    }

    #[test]
    fn non_finite_samples_are_reported() {
        let r = integrate_q(|x, _| 1.0 / x, 1e-8);
        assert!(matches!(r, Err(QuadError::NonFiniteSample { .. })));
    }

    #[test]
    fn cap_without_agreement_is_flagged() {
        let rule = TrapezoidRule::new(4, 16);
        let r = rule
            .integrate(|x, _| 1.0 / (1.0 + 0.999 * (2.0 * PI * x).cos()), 1e-14)
            .unwrap();
        assert!(!r.converged);
        assert!(matches!(r.checked(), Err(QuadError::NoConvergence { .. })));
    }

    #[test]
    fn doubling_shrinks_error_spectrally() {
        let f = |x: f64, _: f64| 1.0 / (1.0 + 0.9 * (2.0 * PI * x).cos());
        let exact = 1.0 / (1.0f64 - 0.81).sqrt();
        let mut last_err = f64::INFINITY;
        for cap in [16usize, 32, 64, 128] {
            let v = TrapezoidRule::new(cap, cap).integrate(f, 1e-300).unwrap().value;
            let e = (v - exact).abs();
            if e > 1e-13 {
                assert!(e * 4.0 <= last_err, "cap {cap}: {e} vs {last_err}");
            }
            last_err = e;
        }
    }

    fn data(g: &str, r: &str) -> InitialData {
        InitialData::build(g, r, 16, &Tolerances::default()).unwrap()
    }

    #[test]
    fn moments_at_time_zero() {
        let d = data("cos(2*pi*x)*cos(2*pi*y)", "sin(2*pi*x)^2");
        let m = moment_integrals(&d, 0.0, 0.0, 1e-12).unwrap();
        assert!((m.phi1 - 1.0).abs() < 1e-14);
        assert!(m.kbar2.abs() < 1e-14);
        assert!((m.lbar2 - 0.5).abs() < 1e-14);
    }

    #[test]
    fn euler_moment_closed_form() {
        let d = data("cos(4*pi*x)", "0");
        let m = moment_integrals(&d, 0.8, 0.0, 1e-12).unwrap();
        assert!((m.phi1 - 5.0 / 3.0).abs() < 1e-11, "{}", m.phi1);
        assert!(m.norm_residual < 1e-10);
    }

    #[test]
    fn moments_without_rho_ignore_sigma() {
        let d = data("cos(2*pi*x)*cos(2*pi*y)", "0");
        let a = moment_integrals(&d, 0.6, 0.0, 1e-12).unwrap();
        let b = moment_integrals(&d, 0.6, -3.0, 1e-12).unwrap();
        assert_eq!(a.phi1, b.phi1);
        assert_eq!(a.kbar2, b.kbar2);
    }

    #[test]
    fn crossing_the_blowup_surface_is_an_error() {
        let d = data("cos(2*pi*x)*cos(2*pi*y)", "0");
        let r = moment_integrals(&d, 1.01, 0.0, 1e-10);
        assert!(matches!(r, Err(QuadError::DenominatorSignChange { .. })));
    }

    #[test]
    fn phi1_grows_logarithmically_near_tau_star() {
        // slope of φ₁ against −ln(1 − τ) approaches Σ 2π/λ = 2·2π/(4π²) = 1/π
        let d = data("cos(2*pi*x)*cos(2*pi*y)", "0");
        let p = |delta: f64| moment_integrals(&d, 1.0 - delta, 0.0, 1e-9).unwrap().phi1;
        let (d1, d2) = (1e-3, 1e-4);
        let slope = (p(d2) - p(d1)) / ((1.0 / d2).ln() - (1.0 / d1).ln());
        assert!(slope > 0.0 && (slope - 1.0 / PI).abs() < 0.02, "{slope}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn phi1_positive_below_tau_star(tau in 0.0..0.99f64, sigma in -2.0..0.0f64) {
            let d = data("cos(2*pi*x)*cos(2*pi*y)", "sin(2*pi*x)^2");
            let m = moment_integrals(&d, tau, sigma, 1e-8).unwrap();
            proptest::prop_assert!(m.phi1 > 0.0 && m.phi1.is_finite());
        }
    }
}
