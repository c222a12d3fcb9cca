//! Initial data on the periodic unit square, its minima analysis, and the
//! lift of the reduced 2D fields back to the 3D stagnation-point ansatz.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::quadrature::{self, SampleCache, TrapezoidRule};

/// A point of the label torus `Q = [0,1)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub x: f64,
    pub y: f64,
}

impl Label {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Wraps both coordinates into `[0, 1)`.
    pub fn wrapped(self) -> Self {
        Self::new(self.x.rem_euclid(1.0), self.y.rem_euclid(1.0))
    }

    /// Distance on the torus.
    pub fn torus_distance(self, other: Label) -> f64 {
        let d = |a: f64, b: f64| {
            let t = (a - b).rem_euclid(1.0);
            t.min(1.0 - t)
        };
        d(self.x, other.x).hypot(d(self.y, other.y))
    }
}

/// Values of some quantity attached to a list of Lagrangian labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelField {
    pub labels: Vec<Label>,
    pub values: Vec<f64>,
}

impl LabelField {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub ode_rel: f64,
    pub ode_abs: f64,
    pub quad_rel: f64,
    pub event_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            ode_rel: 1e-10,
            ode_abs: 1e-13,
            quad_rel: 1e-10,
            event_tol: 1e-6,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<(), FieldsError> {
        let all = [self.ode_rel, self.ode_abs, self.quad_rel, self.event_tol];
        if all.iter().all(|t| t.is_finite() && *t > 0.0) {
            Ok(())
        } else {
            Err(FieldsError::InvalidParams(format!(
                "tolerances must be positive and finite: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub alpha: f64,
    pub grid_n: usize,
    pub tolerances: Tolerances,
}

impl Params {
    pub fn validate(&self) -> Result<(), FieldsError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(FieldsError::InvalidParams(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        validate_grid_n(self.grid_n)?;
        self.tolerances.validate()
    }
}

pub fn validate_grid_n(grid_n: usize) -> Result<(), FieldsError> {
    if grid_n < 16 || !grid_n.is_power_of_two() {
        return Err(FieldsError::InvalidParams(format!(
            "grid_n must be a power of two >= 16, got {grid_n}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldsError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("minimum of gamma0 is {m0}, not negative")]
    NonNegativeMinimum { m0: f64 },
    #[error("gamma0 is identically zero")]
    ConstantField,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Quadrature(#[from] quadrature::QuadError),
}

/// One located minimum of `γ₀` with the Hessian eigenvalues there
/// (`lambda1 >= lambda2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub at: Label,
    pub value: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Which coordinates the integrands actually depend on. Data that varies
/// along a single axis is integrated with a 1D rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dependence {
    Both,
    OnlyX,
    OnlyY,
}

/// The pair `(γ₀, ρ₀)` together with its minima analysis.
#[derive(Debug)]
pub struct InitialData {
    gamma0: Expr,
    rho0: Expr,
    gamma_shift: f64,
    m0: f64,
    minima: Vec<Minimum>,
    ref_index: usize,
    degenerate: bool,
    dependence: Dependence,
    grid_n: usize,
    cache: SampleCache,
}

impl InitialData {
    /// Parses and analyzes the data. Fails with [`FieldsError::NonNegativeMinimum`]
    /// when `γ₀ >= 0`; use [`InitialData::build_unchecked`] to proceed anyway.
    pub fn build(
        gamma0: &str,
        rho0: &str,
        grid_n: usize,
        tol: &Tolerances,
    ) -> Result<Self, FieldsError> {
        let data = Self::build_unchecked(gamma0, rho0, grid_n, tol)?;
        if data.m0 >= 0.0 {
            return Err(FieldsError::NonNegativeMinimum { m0: data.m0 });
        }
        Ok(data)
    }

    pub fn build_unchecked(
        gamma0: &str,
        rho0: &str,
        grid_n: usize,
        tol: &Tolerances,
    ) -> Result<Self, FieldsError> {
        validate_grid_n(grid_n)?;
        tol.validate()?;
        let gamma0 = Expr::parse(gamma0)?;
        let rho0 = Expr::parse(rho0)?;
        if gamma0.constant_value().is_some() {
            return Err(FieldsError::ConstantField);
        }
        let dependence = match (
            gamma0.uses_x() || rho0.uses_x(),
            gamma0.uses_y() || rho0.uses_y(),
        ) {
            (true, false) => Dependence::OnlyX,
            (false, true) => Dependence::OnlyY,
            _ => Dependence::Both,
        };

        let rule = TrapezoidRule::new(grid_n.max(16), quadrature::DEFAULT_CAP_2D);
        let mean = rule
            .integrate(|x, y| gamma0.eval(x, y), tol.quad_rel)?
            .value;
        let gamma_shift = if mean.abs() > tol.quad_rel { mean } else { 0.0 };
        let g = |x: f64, y: f64| gamma0.eval(x, y) - gamma_shift;

        let scan_n = grid_n.max(128);
        let (minima, degenerate, scan_max_abs) = analyze_minima(&g, scan_n, tol);
        if scan_max_abs <= 1e-14 {
            return Err(FieldsError::ConstantField);
        }
        let m0 = minima
            .iter()
            .map(|m| m.value)
            .fold(f64::INFINITY, f64::min);
        // the minimum with the smallest ρ₀ has the smallest denominator
        // whenever σ ≤ 0, so it is the natural reference
        let ref_index = (0..minima.len())
            .min_by(|&i, &j| {
                let (a, b) = (minima[i].at, minima[j].at);
                rho0.eval(a.x, a.y)
                    .total_cmp(&rho0.eval(b.x, b.y))
                    .then(minima[i].value.total_cmp(&minima[j].value))
            })
            .expect("at least one minimum");
        let (rho_ref, gamma_ref) = {
            let a = minima[ref_index].at;
            (rho0.eval(a.x, a.y), g(a.x, a.y))
        };
        let cache = SampleCache::new(dependence, grid_n, gamma_ref, rho_ref, !rho0.is_identically_zero());
        Ok(Self {
            gamma0,
            rho0,
            gamma_shift,
            m0,
            minima,
            ref_index,
            degenerate,
            dependence,
            grid_n,
            cache,
        })
    }

    #[inline]
    pub fn gamma0(&self, a: Label) -> f64 {
        self.gamma0.eval(a.x, a.y) - self.gamma_shift
    }

    #[inline]
    pub fn rho0(&self, a: Label) -> f64 {
        self.rho0.eval(a.x, a.y)
    }

    pub fn gamma0_source(&self) -> &str {
        self.gamma0.source()
    }

    pub fn rho0_source(&self) -> &str {
        self.rho0.source()
    }

    pub fn rho_is_zero(&self) -> bool {
        self.rho0.is_identically_zero()
    }

    /// Amount subtracted from `γ₀` to make it mean-zero (0 when none was needed).
    pub fn mean_projection(&self) -> f64 {
        self.gamma_shift
    }

    pub fn m0(&self) -> f64 {
        self.m0
    }

    /// `τ* = −1/m₀`.
    pub fn tau_star(&self) -> f64 {
        -1.0 / self.m0
    }

    pub fn minima(&self) -> &[Minimum] {
        &self.minima
    }

    pub fn minimum_labels(&self) -> Vec<Label> {
        self.minima.iter().map(|m| m.at).collect()
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn dependence(&self) -> Dependence {
        self.dependence
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    pub(crate) fn cache(&self) -> &SampleCache {
        &self.cache
    }

    /// The minimum used as the reference point for denominators: the one
    /// with the smallest `ρ₀`.
    pub fn reference_label(&self) -> Label {
        self.minima[self.ref_index].at
    }

    /// `1 + γ₀(a_ref)τ − ρ₀(a_ref)σ`, the denominator at the reference label.
    pub fn reference_denominator(&self, tau: f64, sigma: f64) -> f64 {
        1.0 + self.cache.gamma_ref() * tau - self.cache.rho_ref() * sigma
    }

    /// `Ψ(a) − ρ₀(a)σ` written relative to the tracked reference denominator,
    /// which avoids cancellation for labels near the minimum.
    pub fn denominator_at(&self, a: Label, tau: f64, sigma: f64, d_ref: f64) -> f64 {
        let dg = self.gamma0(a) - self.cache.gamma_ref();
        let dr = self.rho0(a) - self.cache.rho_ref();
        d_ref + dg * tau - dr * sigma
    }
}

/// Builds initial data with default tolerances.
pub fn make_initial_data(
    gamma0_spec: &str,
    rho0_spec: &str,
    grid_n: usize,
) -> Result<InitialData, FieldsError> {
    InitialData::build(gamma0_spec, rho0_spec, grid_n, &Tolerances::default())
}

/// Lifts reduced values to the 3D ansatz: velocity `(u, v, zγ)` and
/// temperature `zρ`.
pub fn eval_ansatz(gamma: f64, rho: f64, uv: [f64; 2], z: f64) -> ([f64; 3], f64) {
    ([uv[0], uv[1], z * gamma], z * rho)
}

const FD_GRAD: f64 = 1e-5;
const FD_HESS: f64 = 1e-4;

fn gradient(g: &impl Fn(f64, f64) -> f64, x: f64, y: f64) -> [f64; 2] {
    let h = FD_GRAD;
    [
        (g(x + h, y) - g(x - h, y)) / (2.0 * h),
        (g(x, y + h) - g(x, y - h)) / (2.0 * h),
    ]
}

fn hessian(g: &impl Fn(f64, f64) -> f64, x: f64, y: f64) -> [[f64; 2]; 2] {
    let h = FD_HESS;
    let c = g(x, y);
    let gxx = (g(x + h, y) - 2.0 * c + g(x - h, y)) / (h * h);
    let gyy = (g(x, y + h) - 2.0 * c + g(x, y - h)) / (h * h);
    let gxy = (g(x + h, y + h) - g(x + h, y - h) - g(x - h, y + h) + g(x - h, y - h))
        / (4.0 * h * h);
    [[gxx, gxy], [gxy, gyy]]
}

fn eigenvalues(m: [[f64; 2]; 2]) -> (f64, f64) {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    (0.5 * tr + disc, 0.5 * tr - disc)
}

/// Newton iteration on ∇γ₀ = 0 starting from a grid argmin.
fn refine_minimum(g: &impl Fn(f64, f64) -> f64, x0: f64, y0: f64, h: f64) -> (f64, f64) {
    let (mut x, mut y) = (x0, y0);
    for _ in 0..30 {
        let gr = gradient(g, x, y);
        let hs = hessian(g, x, y);
        let det = hs[0][0] * hs[1][1] - hs[0][1] * hs[1][0];
        let (l1, l2) = eigenvalues(hs);
        if !(det.is_finite() && l2 > 1e-6 * l1.abs().max(1.0)) {
            break;
        }
        let dx = -(hs[1][1] * gr[0] - hs[0][1] * gr[1]) / det;
        let dy = -(-hs[1][0] * gr[0] + hs[0][0] * gr[1]) / det;
        if dx.hypot(dy) > 2.0 * h {
            break;
        }
        let (nx, ny) = (x + dx, y + dy);
        if g(nx, ny) > g(x, y) + 1e-15 {
            break;
        }
        x = nx;
        y = ny;
        if dx.hypot(dy) < 1e-14 {
            break;
        }
    }
    (x.rem_euclid(1.0), y.rem_euclid(1.0))
}

/// Returns (minima, degenerate, max |γ₀| on the scan grid).
fn analyze_minima(
    g: &impl Fn(f64, f64) -> f64,
    n: usize,
    tol: &Tolerances,
) -> (Vec<Minimum>, bool, f64) {
    let sample = |n: usize| -> Vec<f64> {
        let h = 1.0 / n as f64;
        let mut v = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                v.push(g(i as f64 * h, j as f64 * h));
            }
        }
        v
    };
    let vals = sample(n);
    let h = 1.0 / n as f64;
    let idx = |i: usize, j: usize| (j % n) * n + (i % n);
    let max_abs = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let grid_min = vals.iter().copied().fold(f64::INFINITY, f64::min);

    // discrete local minima (ties allowed), refined by Newton
    let mut candidates: Vec<(f64, f64, f64)> = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let v = vals[idx(i, j)];
            let is_local_min = (0..3).all(|dj| {
                (0..3).all(|di| {
                    (di == 1 && dj == 1) || v <= vals[idx(i + n + di - 1, j + n + dj - 1)]
                })
            });
            if is_local_min {
                let (x, y) = refine_minimum(g, i as f64 * h, j as f64 * h, h);
                candidates.push((g(x, y), x, y));
            }
        }
    }
    let m0 = candidates
        .iter()
        .map(|c| c.0)
        .fold(grid_min, f64::min);

    // Degeneracy: count grid points inside a band whose width scales like h².
    // Isolated quadratic minima give an n-independent count, curves of minima
    // a count growing linearly in n.
    let curvature = {
        let best = candidates
            .iter()
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .copied()
            .unwrap_or((m0, 0.0, 0.0));
        let (l1, _) = eigenvalues(hessian(g, best.1, best.2));
        l1.abs().max(1e-8)
    };
    let band_count = |n: usize, v: &[f64]| {
        let band = 2.0 * curvature / (n * n) as f64;
        v.iter().filter(|&&x| x - m0 <= band).count()
    };
    let c1 = band_count(n, &vals);
    let c2 = band_count(2 * n, &sample(2 * n));
    let degenerate = c1 >= 4 && (c2 as f64) >= 1.5 * c1 as f64;

    let tie = tol.event_tol;
    let mut minima: Vec<Minimum> = Vec::new();
    if degenerate {
        // one representative per connected component of the tied set
        let band = 2.0 * curvature / (n * n) as f64;
        let in_set: Vec<bool> = vals.iter().map(|&v| v - m0 <= band.max(tie)).collect();
        let mut seen = vec![false; n * n];
        for start in 0..n * n {
            if !in_set[start] || seen[start] {
                continue;
            }
            let mut stack = vec![start];
            seen[start] = true;
            let mut best = start;
            while let Some(k) = stack.pop() {
                if vals[k] < vals[best] {
                    best = k;
                }
                let (i, j) = (k % n, k / n);
                for (di, dj) in [(1, 0), (n - 1, 0), (0, 1), (0, n - 1)] {
                    let nk = idx(i + di, j + dj);
                    if in_set[nk] && !seen[nk] {
                        seen[nk] = true;
                        stack.push(nk);
                    }
                }
            }
            let (x, y) = ((best % n) as f64 * h, (best / n) as f64 * h);
            let (l1, l2) = eigenvalues(hessian(g, x, y));
            minima.push(Minimum {
                at: Label::new(x, y),
                value: g(x, y),
                lambda1: l1,
                lambda2: l2,
            });
        }
    } else {
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (v, x, y) in candidates {
            if v - m0 > tie {
                continue;
            }
            let at = Label::new(x, y);
            if minima.iter().any(|m| m.at.torus_distance(at) < 2.0 * h) {
                continue;
            }
            let (l1, l2) = eigenvalues(hessian(g, x, y));
            minima.push(Minimum {
                at,
                value: v,
                lambda1: l1,
                lambda2: l2,
            });
        }
    }
    minima.sort_by(|a, b| {
        (a.at.x, a.at.y)
            .partial_cmp(&(b.at.x, b.at.y))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    (minima, degenerate, max_abs)
}
