//! Dormand–Prince 5(4) with PI step control, dense output, terminal events
//! and blowup bracketing by step-size collapse.

use thiserror::Error;

/// Raised by a right-hand side that cannot be evaluated at the requested
/// state (typically because the state lies past a singular surface). The
/// integrator rejects the step and retries with half the step size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("integrand blowup")]
pub struct IntegrandBlowup;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("stiffness stall at t = {t}: {rejections} consecutive rejections")]
    StiffnessStall { t: f64, rejections: u64 },
    #[error("event function never changes sign on the solution")]
    NoSignChange,
}

pub type RhsFn<'a> = dyn FnMut(f64, &[f64], &mut [f64]) -> Result<(), IntegrandBlowup> + 'a;
pub type EventFn<'a> = dyn Fn(f64, &[f64]) -> f64 + 'a;

pub struct OdeProblem<'a> {
    pub dim: usize,
    pub rhs: Box<RhsFn<'a>>,
    pub t0: f64,
    pub y0: Vec<f64>,
    /// Terminal events: integration stops at the first sign change.
    pub events: Vec<Box<EventFn<'a>>>,
}

impl<'a> OdeProblem<'a> {
    pub fn new(
        t0: f64,
        y0: Vec<f64>,
        rhs: impl FnMut(f64, &[f64], &mut [f64]) -> Result<(), IntegrandBlowup> + 'a,
    ) -> Self {
        Self {
            dim: y0.len(),
            rhs: Box::new(rhs),
            t0,
            y0,
            events: Vec::new(),
        }
    }

    pub fn with_event(mut self, g: impl Fn(f64, &[f64]) -> f64 + 'a) -> Self {
        self.events.push(Box::new(g));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeTol {
    pub rel: f64,
    pub abs: f64,
    /// Width to which event times and blowup brackets are resolved.
    pub event: f64,
}

impl Default for OdeTol {
    fn default() -> Self {
        Self {
            rel: 1e-10,
            abs: 1e-13,
            event: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TerminalStatus {
    ReachedTEnd,
    EventHit { index: usize, t: f64 },
    BlowupBracketed { t_lo: f64, t_hi: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub rhs_evals: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub failed_rhs: u64,
}

#[derive(Debug, Clone)]
struct DenseStep {
    t0: f64,
    h: f64,
    // r1..r5 laid out as 5 consecutive blocks of `dim`
    coeffs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub dim: usize,
    /// Accepted nodes, starting with the initial condition.
    pub nodes: Vec<(f64, Vec<f64>)>,
    steps: Vec<DenseStep>,
    pub status: TerminalStatus,
    pub stats: OdeStats,
}

impl OdeSolution {
    pub fn t_start(&self) -> f64 {
        self.nodes[0].0
    }

    pub fn t_last(&self) -> f64 {
        self.nodes.last().expect("nonempty").0
    }

    pub fn last_state(&self) -> &[f64] {
        &self.nodes.last().expect("nonempty").1
    }

    /// Dense-output value at `t` inside the covered interval. Times within
    /// a few ulps of either end are clamped to it.
    pub fn eval(&self, t: f64) -> Option<Vec<f64>> {
        let (a, b) = (self.t_start(), self.t_last());
        let slack = 4.0 * f64::EPSILON * a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
        if !(t >= a - slack && t <= b + slack) {
            return None;
        }
        let t = t.clamp(a, b);
        if self.steps.is_empty() || t == self.t_start() {
            return Some(self.nodes[0].1.clone());
        }
        let k = self
            .steps
            .partition_point(|s| s.t0 + s.h < t)
            .min(self.steps.len() - 1);
        Some(self.eval_step(&self.steps[k], t))
    }

    fn eval_step(&self, s: &DenseStep, t: f64) -> Vec<f64> {
        let n = self.dim;
        let th = (t - s.t0) / s.h;
        let th1 = 1.0 - th;
        (0..n)
            .map(|i| {
                let r = |j: usize| s.coeffs[j * n + i];
                r(0) + th * (r(1) + th1 * (r(2) + th * (r(3) + th1 * r(4))))
            })
            .collect()
    }

    /// First crossing of `g` along the accepted nodes, bisected on the dense
    /// output to within `tol`.
    pub fn locate_event(&self, g: impl Fn(f64, &[f64]) -> f64, tol: f64) -> Result<f64, OdeError> {
        let mut prev = g(self.nodes[0].0, &self.nodes[0].1);
        if prev == 0.0 {
            return Ok(self.nodes[0].0);
        }
        for (k, (t, y)) in self.nodes.iter().enumerate().skip(1) {
            let cur = g(*t, y);
            if cur == 0.0 {
                return Ok(*t);
            }
            if cur.signum() != prev.signum() {
                let s = &self.steps[k - 1];
                return Ok(bisect(|tt| g(tt, &self.eval_step(s, tt)), s.t0, s.t0 + s.h, prev, tol));
            }
            prev = cur;
        }
        Err(OdeError::NoSignChange)
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, fa: f64, tol: f64) -> f64 {
    let sa = fa.signum();
    while b - a > tol {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == sa {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const MAX_CONSECUTIVE_REJECTIONS: u64 = 1_000_000;

fn err_norm(y0: &[f64], y1: &[f64], e: &[f64], tol: &OdeTol) -> f64 {
    let s: f64 = y0
        .iter()
        .zip(y1)
        .zip(e)
        .map(|((a, b), e)| {
            let sc = tol.abs + tol.rel * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / y0.len() as f64).sqrt()
}

/// Integrates `problem` from `t0` to `t_end`.
pub fn integrate(mut problem: OdeProblem<'_>, t_end: f64, tol: &OdeTol) -> Result<OdeSolution, OdeError> {
    let n = problem.dim;
    if n == 0 || problem.y0.len() != n {
        return Err(OdeError::InvalidProblem(format!(
            "dim {n} does not match y0 length {}",
            problem.y0.len()
        )));
    }
    if !(t_end > problem.t0) {
        return Err(OdeError::InvalidProblem(format!(
            "t_end {t_end} must exceed t0 {}",
            problem.t0
        )));
    }
    if !(tol.rel > 0.0 && tol.abs > 0.0 && tol.event > 0.0) {
        return Err(OdeError::InvalidProblem("tolerances must be positive".into()));
    }

    let mut stats = OdeStats::default();
    let mut t = problem.t0;
    let mut y = problem.y0.clone();
    let mut k1 = vec![0.0; n];
    stats.rhs_evals += 1;
    if (problem.rhs)(t, &y, &mut k1).is_err() || k1.iter().any(|v| !v.is_finite()) {
        return Err(OdeError::InvalidProblem("rhs fails at the initial state".into()));
    }

    let mut h = initial_step(&mut problem, t, &y, &k1, t_end, tol, &mut stats);
    let mut g_prev: Vec<f64> = problem.events.iter().map(|g| g(t, &y)).collect();

    let mut nodes = vec![(t, y.clone())];
    let mut steps: Vec<DenseStep> = Vec::new();
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut ytmp = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut err_old: f64 = 1e-4;
    let mut consecutive_rejections: u64 = 0;
    let mut first_failure: Option<f64> = None;
    let mut last_failed = false;

    let status = loop {
        if t >= t_end {
            break TerminalStatus::ReachedTEnd;
        }
        let h_min = 1e-14 * t.abs().max(1.0);
        if h < h_min {
            let t_hi = first_failure.unwrap_or(t + h_min).max(t);
            break TerminalStatus::BlowupBracketed { t_lo: t, t_hi };
        }
        if consecutive_rejections >= MAX_CONSECUTIVE_REJECTIONS {
            return Err(OdeError::StiffnessStall {
                t,
                rejections: consecutive_rejections,
            });
        }
        if t + h > t_end {
            h = t_end - t;
        }

        let stages = (|| -> Result<(), IntegrandBlowup> {
            let rhs = &mut problem.rhs;
            for i in 0..n {
                ytmp[i] = y[i] + h * A21 * k1[i];
            }
            rhs(t + C2 * h, &ytmp, &mut k2)?;
            for i in 0..n {
                ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            rhs(t + C3 * h, &ytmp, &mut k3)?;
            for i in 0..n {
                ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            rhs(t + C4 * h, &ytmp, &mut k4)?;
            for i in 0..n {
                ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            rhs(t + C5 * h, &ytmp, &mut k5)?;
            for i in 0..n {
                ytmp[i] = y[i]
                    + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            rhs(t + h, &ytmp, &mut k6)?;
            for i in 0..n {
                y1[i] = y[i]
                    + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            if y1.iter().any(|v| !v.is_finite()) {
                return Err(IntegrandBlowup);
            }
            rhs(t + h, &y1, &mut k7)?;
            if [&k2, &k3, &k4, &k5, &k6, &k7]
                .iter()
                .any(|k| k.iter().any(|v| !v.is_finite()))
            {
                return Err(IntegrandBlowup);
            }
            Ok(())
        })();
        stats.rhs_evals += 6;

        if stages.is_err() {
            stats.failed_rhs += 1;
            stats.rejected += 1;
            consecutive_rejections += 1;
            let t_fail = t + h;
            first_failure = Some(first_failure.map_or(t_fail, |f: f64| f.min(t_fail)));
            h *= 0.5;
            last_failed = true;
            continue;
        }

        for i in 0..n {
            err[i] = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let e = err_norm(&y, &y1, &err, tol);
        if e > 1.0 || !e.is_finite() {
            stats.rejected += 1;
            consecutive_rejections += 1;
            let fac = if e.is_finite() {
                (0.9 * e.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.1
            };
            h *= fac;
            continue;
        }

        // accepted
        let t_new = t + h;
        let mut coeffs = vec![0.0; 5 * n];
        for i in 0..n {
            let ydiff = y1[i] - y[i];
            let bspl = h * k1[i] - ydiff;
            coeffs[i] = y[i];
            coeffs[n + i] = ydiff;
            coeffs[2 * n + i] = bspl;
            coeffs[3 * n + i] = ydiff - h * k7[i] - bspl;
            coeffs[4 * n + i] = h
                * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        }
        steps.push(DenseStep { t0: t, h, coeffs });
        stats.accepted += 1;
        consecutive_rejections = 0;
        if first_failure.is_some_and(|f| f <= t_new) {
            first_failure = None;
        }

        let e_safe = e.max(1e-10);
        let mut fac = 0.9 * e_safe.powf(-0.7 / 5.0) * err_old.powf(0.4 / 5.0);
        fac = fac.clamp(0.2, 5.0);
        if last_failed {
            fac = fac.min(1.0);
        }
        last_failed = false;
        err_old = e_safe;

        t = t_new;
        std::mem::swap(&mut y, &mut y1);
        std::mem::swap(&mut k1, &mut k7);
        nodes.push((t, y.clone()));

        let mut hit = None;
        for (idx, g) in problem.events.iter().enumerate() {
            let gv = g(t, &y);
            let gp = g_prev[idx];
            if gp != 0.0 && (gv == 0.0 || gv.signum() != gp.signum()) {
                let s = steps.last().expect("just pushed");
                let sol_view = |tt: f64| {
                    let th = (tt - s.t0) / s.h;
                    let th1 = 1.0 - th;
                    let yy: Vec<f64> = (0..n)
                        .map(|i| {
                            let r = |j: usize| s.coeffs[j * n + i];
                            r(0) + th * (r(1) + th1 * (r(2) + th * (r(3) + th1 * r(4))))
                        })
                        .collect();
                    g(tt, &yy)
                };
                let te = if gv == 0.0 {
                    t
                } else {
                    bisect(sol_view, s.t0, t, gp, tol.event)
                };
                if hit.is_none_or(|(_, t0)| te < t0) {
                    hit = Some((idx, te));
                }
            }
            g_prev[idx] = gv;
        }
        if let Some((index, te)) = hit {
            break TerminalStatus::EventHit { index, t: te };
        }
        h *= fac;
    };

    Ok(OdeSolution {
        dim: n,
        nodes,
        steps,
        status,
        stats,
    })
}

fn initial_step(
    problem: &mut OdeProblem<'_>,
    t: f64,
    y: &[f64],
    f0: &[f64],
    t_end: f64,
    tol: &OdeTol,
    stats: &mut OdeStats,
) -> f64 {
    let n = y.len();
    let sc: Vec<f64> = y.iter().map(|v| tol.abs + tol.rel * v.abs()).collect();
    let rms = |v: &[f64]| {
        (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    let d0 = rms(y);
    let d1 = rms(f0);
    let span = t_end - t;
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, f)| a + h0 * f).collect();
    let mut f1 = vec![0.0; n];
    stats.rhs_evals += 1;
    if (problem.rhs)(t + h0, &y1, &mut f1).is_err() {
        return h0 * 0.01;
    }
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol(rel: f64) -> OdeTol {
        OdeTol {
            rel,
            abs: rel * 1e-3,
            event: 1e-6,
        }
    }

    #[test]
    fn linear_decay() {
        let p = OdeProblem::new(0.0, vec![1.0], |_, y, d| {
            d[0] = -y[0];
            Ok(())
        });
        let s = integrate(p, 1.0, &tol(1e-10)).unwrap();
        assert_eq!(s.status, TerminalStatus::ReachedTEnd);
        assert!((s.last_state()[0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn eval_clamps_roundoff_past_the_end() {
        let p = OdeProblem::new(0.0, vec![1.0], |_, y, d| {
            d[0] = -y[0];
            Ok(())
        });
        let s = integrate(p, 0.7, &tol(1e-10)).unwrap();
        let h = 0.7 / 3.0;
        assert!(s.eval(3.0 * h + f64::EPSILON).is_some());
        assert!(s.eval(-f64::MIN_POSITIVE).is_some());
        assert!(s.eval(0.7 + 1e-12).is_none());
    }

    #[test]
    fn tightening_tolerance_reduces_error() {
        let run = |rel: f64| {
            let p = OdeProblem::new(0.0, vec![1.0], |_, y, d| {
                d[0] = -y[0];
                Ok(())
            });
            (integrate(p, 1.0, &tol(rel)).unwrap().last_state()[0] - (-1.0f64).exp()).abs()
        };
        let mut prev = run(1e-4);
        for rel in [1e-5, 1e-6, 1e-7] {
            let e = run(rel);
            assert!(e * 2.0 <= prev, "{rel}: {e} vs {prev}");
            prev = e;
        }
    }

    #[test]
    fn quadratic_blowup_is_bracketed_near_two() {
        let p = OdeProblem::new(0.0, vec![1.0], |_, y, d| {
            d[0] = 0.5 * y[0] * y[0];
            Ok(())
        });
        let s = integrate(p, 10.0, &tol(1e-10)).unwrap();
        match s.status {
            TerminalStatus::BlowupBracketed { t_lo, t_hi } => {
                assert!(t_hi - t_lo <= 1e-6);
                assert!((t_lo - 2.0).abs() < 1e-6, "{t_lo}");
            }
            other => panic!("{other:?}"),
        }
        // dense output against the closed form at probe times
        for tp in [0.5, 1.5, 1.9] {
            let t = s
                .locate_event(|t, y| y[0] - 2.0 / (2.0 - tp) + 0.0 * t, 1e-9)
                .unwrap();
            assert!((t - tp).abs() < 1e-6, "{t} vs {tp}");
        }
    }

    #[test]
    fn failing_rhs_brackets_the_surface() {
        // rhs refuses states past y = 3: the crossing of y = 1 + t is at t = 2
        let p = OdeProblem::new(0.0, vec![1.0], |_, y, d| {
            if y[0] >= 3.0 {
                return Err(IntegrandBlowup);
            }
            d[0] = 1.0;
            Ok(())
        });
        let s = integrate(p, 5.0, &tol(1e-8)).unwrap();
        match s.status {
            TerminalStatus::BlowupBracketed { t_lo, t_hi } => {
                assert!(t_lo <= 2.0 && 2.0 <= t_hi + 1e-12, "{t_lo} {t_hi}");
                assert!(t_hi - t_lo <= 1e-6);
            }
            other => panic!("{other:?}"),
        }
        assert!(s.stats.failed_rhs > 0);
    }

    #[test]
    fn terminal_event_at_ln_10() {
        let p = OdeProblem::new(0.0, vec![1.0], |_, y, d| {
            d[0] = y[0];
            Ok(())
        })
        .with_event(|_, y| y[0] - 10.0);
        let s = integrate(p, 5.0, &tol(1e-10)).unwrap();
        match s.status {
            TerminalStatus::EventHit { index, t } => {
                assert_eq!(index, 0);
                assert!((t - 10f64.ln()).abs() < 1e-6);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn locate_event_cases() {
        let p = OdeProblem::new(0.0, vec![0.0], |_, _, d| {
            d[0] = 1.0;
            Ok(())
        });
        let s = integrate(p, 1.0, &tol(1e-8)).unwrap();
        assert!((s.locate_event(|t, _| t - 0.5, 1e-6).unwrap() - 0.5).abs() <= 1e-6);
        assert_eq!(s.locate_event(|_, _| 1.0, 1e-6), Err(OdeError::NoSignChange));
    }

    #[test]
    fn accepted_nodes_increase_and_runs_reproduce() {
        let run = || {
            let p = OdeProblem::new(0.0, vec![1.0, 0.0], |_, y, d| {
                d[0] = y[1];
                d[1] = -y[0];
                Ok(())
            });
            integrate(p, 10.0, &tol(1e-9)).unwrap()
        };
        let a = run();
        let b = run();
        assert!(a.nodes.windows(2).all(|w| w[1].0 > w[0].0));
        assert_eq!(a.nodes.len(), b.nodes.len());
        for (x, y) in a.nodes.iter().zip(&b.nodes) {
            assert_eq!(x.0.to_bits(), y.0.to_bits());
            assert_eq!(x.1, y.1);
        }
        let y = a.eval(3.3).unwrap();
        assert!((y[0] - 3.3f64.cos()).abs() < 1e-7);
    }

    #[test]
    fn invalid_problems_are_rejected() {
        let p = OdeProblem::new(1.0, vec![1.0], |_, _, d| {
            d[0] = 0.0;
            Ok(())
        });
        assert!(matches!(integrate(p, 0.5, &tol(1e-8)), Err(OdeError::InvalidProblem(_))));
    }
}
