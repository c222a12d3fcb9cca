//! Pseudo-spectral solver for the two-dimensional nonlocal system on the
//! periodic unit square, used to cross-check the characteristic solvers.
//!
//! Fields are stored as 2/3-rule truncated Fourier coefficients. The velocity
//! is the curl-free field `u' = ∇φ` with `Δφ = −γ`, so `div u' = −γ` and
//! `ω = v_x − u_y ≡ 0`. Tracers carry a label, a position and `J`, with
//! `J' = −Jγ(X)` and velocities from Hermite bicubic interpolation.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{InitialData, Label};

/// Largest mean of `γ` accepted by the Poisson inversion.
pub const MEAN_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("gamma has mean {mean:e}; the periodic Poisson problem needs mean zero")]
    NonZeroMean { mean: f64 },
    #[error("dt = {dt:e} exceeds the advective limit {limit:e}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("non-finite field value at t = {t}")]
    NonFinite { t: f64 },
    #[error("grid size must be even and >= 8, got {0}")]
    InvalidGrid(usize),
    #[error("field has {found} values, expected {expected}")]
    FieldSize { found: usize, expected: usize },
    #[error("snapshot i/o: {0}")]
    Io(String),
}

impl From<io::Error> for SpectralError {
    fn from(e: io::Error) -> Self {
        SpectralError::Io(e.to_string())
    }
}

/// FFT plans, wavenumbers and the dealiasing mask for one grid size.
pub struct Grid {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// `2π m` for signed index `m`, zero at the Nyquist index.
    k: Vec<f64>,
    keep: Vec<bool>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid").field("n", &self.n).finish()
    }
}

impl Grid {
    pub fn new(n: usize) -> Result<Arc<Self>, SpectralError> {
        if n < 8 || n % 2 != 0 {
            return Err(SpectralError::InvalidGrid(n));
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let signed = |i: usize| if i <= n / 2 { i as i64 } else { i as i64 - n as i64 };
        let k = (0..n)
            .map(|i| {
                if i == n / 2 {
                    0.0
                } else {
                    2.0 * std::f64::consts::PI * signed(i) as f64
                }
            })
            .collect();
        // keep |m| < n/3 on both axes
        let keep = (0..n).map(|i| 3 * signed(i).unsigned_abs() < n as u64).collect();
        Ok(Arc::new(Self { n, fwd, inv, k, keep }))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn transpose(&self, a: &[Complex64], out: &mut [Complex64]) {
        let n = self.n;
        const B: usize = 32;
        for ib in (0..n).step_by(B) {
            for jb in (0..n).step_by(B) {
                for i in ib..(ib + B).min(n) {
                    for j in jb..(jb + B).min(n) {
                        out[j * n + i] = a[i * n + j];
                    }
                }
            }
        }
    }

    /// Physical `[iy][ix]` to spectral `[kx][ky]`, unnormalized.
    fn forward(&self, buf: &mut Vec<Complex64>, tmp: &mut Vec<Complex64>) {
        self.fwd.process(buf);
        self.transpose(buf, tmp);
        self.fwd.process(tmp);
        std::mem::swap(buf, tmp);
    }

    /// Spectral `[kx][ky]` to physical `[iy][ix]`, normalized.
    fn inverse(&self, buf: &mut Vec<Complex64>, tmp: &mut Vec<Complex64>) {
        self.inv.process(buf);
        self.transpose(buf, tmp);
        self.inv.process(tmp);
        let s = 1.0 / (self.n * self.n) as f64;
        for v in tmp.iter_mut() {
            *v *= s;
        }
        std::mem::swap(buf, tmp);
    }

    fn masked(&self, kx: usize, ky: usize) -> bool {
        self.keep[kx] && self.keep[ky]
    }

    fn apply_mask(&self, a: &mut [Complex64]) {
        let n = self.n;
        for kx in 0..n {
            for ky in 0..n {
                if !self.masked(kx, ky) {
                    a[kx * n + ky] = Complex64::new(0.0, 0.0);
                }
            }
        }
    }

    /// Spectrum of a real physical field.
    fn spectrum(&self, f: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut tmp = vec![Complex64::default(); buf.len()];
        self.forward(&mut buf, &mut tmp);
        buf
    }

    /// Inverse transform of two real fields' spectra at once.
    fn inverse_pair(&self, a: &[Complex64], b: &[Complex64], tmp: &mut Vec<Complex64>) -> (Vec<f64>, Vec<f64>) {
        let i = Complex64::new(0.0, 1.0);
        let mut buf: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x + i * y).collect();
        self.inverse(&mut buf, tmp);
        (buf.iter().map(|z| z.re).collect(), buf.iter().map(|z| z.im).collect())
    }

    /// Forward transform of two real fields at once.
    fn forward_pair(&self, p: &[f64], q: &[f64], tmp: &mut Vec<Complex64>) -> (Vec<Complex64>, Vec<Complex64>) {
        let n = self.n;
        let mut buf: Vec<Complex64> = p.iter().zip(q).map(|(&x, &y)| Complex64::new(x, y)).collect();
        self.forward(&mut buf, tmp);
        let mut a = vec![Complex64::default(); n * n];
        let mut b = vec![Complex64::default(); n * n];
        for kx in 0..n {
            for ky in 0..n {
                let z = buf[kx * n + ky];
                let zc = buf[((n - kx) % n) * n + (n - ky) % n].conj();
                a[kx * n + ky] = 0.5 * (z + zc);
                b[kx * n + ky] = Complex64::new(0.0, -0.5) * (z - zc);
            }
        }
        (a, b)
    }

    /// `(i kx)^px (i ky)^py f̂`.
    fn deriv(&self, f: &[Complex64], px: u32, py: u32) -> Vec<Complex64> {
        let n = self.n;
        let i = Complex64::new(0.0, 1.0);
        let mut out = f.to_vec();
        for kx in 0..n {
            let cx = (i * self.k[kx]).powu(px);
            for ky in 0..n {
                let cy = (i * self.k[ky]).powu(py);
                out[kx * n + ky] *= cx * cy;
            }
        }
        out
    }

    /// `φ̂ = γ̂/|k|²` (so that `Δφ = −γ`), zero mean.
    fn potential(&self, g: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut out = vec![Complex64::default(); n * n];
        for kx in 0..n {
            for ky in 0..n {
                let k2 = self.k[kx] * self.k[kx] + self.k[ky] * self.k[ky];
                if k2 > 0.0 {
                    out[kx * n + ky] = g[kx * n + ky] / k2;
                }
            }
        }
        out
    }
}

fn check_len(f: &[f64], n: usize) -> Result<(), SpectralError> {
    if f.len() != n * n {
        return Err(SpectralError::FieldSize {
            found: f.len(),
            expected: n * n,
        });
    }
    Ok(())
}

/// Curl-free velocity `u' = ∇φ`, `Δφ = −γ`, of a mean-zero field on an
/// `n × n` grid stored row-major by `y`.
pub fn velocity_from_gamma(gamma: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>), SpectralError> {
    let grid = Grid::new(n)?;
    check_len(gamma, n)?;
    let g = grid.spectrum(gamma);
    let mean = g[0].re / (n * n) as f64;
    if mean.abs() > MEAN_TOL {
        return Err(SpectralError::NonZeroMean { mean });
    }
    let phi = grid.potential(&g);
    let mut tmp = vec![Complex64::default(); n * n];
    Ok(grid.inverse_pair(&grid.deriv(&phi, 1, 0), &grid.deriv(&phi, 0, 1), &mut tmp))
}

/// Periodic Hermite bicubic interpolation from nodal values and derivatives.
struct Hermite<'a> {
    n: usize,
    f: &'a [f64],
    fx: &'a [f64],
    fy: &'a [f64],
    fxy: &'a [f64],
}

impl Hermite<'_> {
    fn at(&self, x: f64, y: f64) -> f64 {
        let n = self.n;
        let h = 1.0 / n as f64;
        let (sx, sy) = (x.rem_euclid(1.0) * n as f64, y.rem_euclid(1.0) * n as f64);
        let (i0, j0) = ((sx.floor() as usize) % n, (sy.floor() as usize) % n);
        let (s, t) = (sx - sx.floor(), sy - sy.floor());
        let (i1, j1) = ((i0 + 1) % n, (j0 + 1) % n);
        let b0 = |u: f64| [(1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u), u * u * (3.0 - 2.0 * u)];
        let b1 = |u: f64| [u * (1.0 - u) * (1.0 - u), -u * u * (1.0 - u)];
        let (vs, ds, vt, dt) = (b0(s), b1(s), b0(t), b1(t));
        let mut acc = 0.0;
        for (cj, j) in [j0, j1].into_iter().enumerate() {
            for (ci, i) in [i0, i1].into_iter().enumerate() {
                let p = j * n + i;
                acc += self.f[p] * vs[ci] * vt[cj]
                    + h * (self.fx[p] * ds[ci] * vt[cj] + self.fy[p] * vs[ci] * dt[cj])
                    + h * h * self.fxy[p] * ds[ci] * dt[cj];
            }
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tracer {
    pub label: Label,
    /// Position `X(a, t)` (not wrapped).
    pub x: [f64; 2],
    pub j: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralDiagnostics {
    #[serde(rename = "I")]
    pub i_t: f64,
    pub mean_gamma: f64,
    pub sup_gamma: f64,
    pub min_gamma: f64,
    pub bkm_partial: f64,
}

#[derive(Debug, Clone)]
pub struct SpectralState {
    pub n: usize,
    pub t: f64,
    /// Physical `γ`, row-major by `y`.
    pub gamma: Vec<f64>,
    pub rho: Vec<f64>,
    pub tracers: Vec<Tracer>,
    /// Running `∫‖γ‖∞ dt`.
    pub bkm_partial: f64,
    gh: Vec<Complex64>,
    rh: Vec<Complex64>,
    grid: Arc<Grid>,
}

struct Rhs {
    dg: Vec<Complex64>,
    dr: Vec<Complex64>,
    dtr: Vec<[f64; 3]>,
    umax: f64,
}

impl SpectralState {
    /// Samples `γ₀, ρ₀` on the grid and places a tracer at every label.
    pub fn new(data: &InitialData, n: usize, labels: &[Label]) -> Result<Self, SpectralError> {
        let grid = Grid::new(n)?;
        let h = 1.0 / n as f64;
        let mut g = vec![0.0; n * n];
        let mut r = vec![0.0; n * n];
        for iy in 0..n {
            for ix in 0..n {
                let a = Label::new(ix as f64 * h, iy as f64 * h);
                g[iy * n + ix] = data.gamma0(a);
                r[iy * n + ix] = data.rho0(a);
            }
        }
        let tracers = labels
            .iter()
            .map(|&a| Tracer {
                label: a,
                x: [a.x, a.y],
                j: 1.0,
            })
            .collect();
        Self::from_fields(grid, &g, &r, tracers)
    }

    pub fn from_fields(grid: Arc<Grid>, gamma: &[f64], rho: &[f64], tracers: Vec<Tracer>) -> Result<Self, SpectralError> {
        let n = grid.n;
        check_len(gamma, n)?;
        check_len(rho, n)?;
        let mut gh = grid.spectrum(gamma);
        let mut rh = grid.spectrum(rho);
        grid.apply_mask(&mut gh);
        grid.apply_mask(&mut rh);
        let mut s = Self {
            n,
            t: 0.0,
            gamma: Vec::new(),
            rho: Vec::new(),
            tracers,
            bkm_partial: 0.0,
            gh,
            rh,
            grid,
        };
        s.refresh_physical();
        Ok(s)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    fn refresh_physical(&mut self) {
        let mut tmp = vec![Complex64::default(); self.n * self.n];
        let (g, r) = self.grid.inverse_pair(&self.gh, &self.rh, &mut tmp);
        self.gamma = g;
        self.rho = r;
    }

    /// `max|γ|` on the grid.
    pub fn sup_abs_gamma(&self) -> f64 {
        self.gamma.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn rhs(&self, gh: &[Complex64], rh: &[Complex64], tracers: &[Tracer], alpha: f64) -> Result<Rhs, SpectralError> {
        let grid = &self.grid;
        let n = self.n;
        let n2 = (n * n) as f64;
        let mean = gh[0].re / n2;
        if mean.abs() > MEAN_TOL {
            return Err(SpectralError::NonZeroMean { mean });
        }
        let mut tmp = vec![Complex64::default(); n * n];
        let phi = grid.potential(gh);
        let (g, r) = grid.inverse_pair(gh, rh, &mut tmp);
        let (u, v) = grid.inverse_pair(&grid.deriv(&phi, 1, 0), &grid.deriv(&phi, 0, 1), &mut tmp);
        let (gx, gy) = grid.inverse_pair(&grid.deriv(gh, 1, 0), &grid.deriv(gh, 0, 1), &mut tmp);
        let (rx, ry) = grid.inverse_pair(&grid.deriv(rh, 1, 0), &grid.deriv(rh, 0, 1), &mut tmp);

        let mut g2 = 0.0;
        let mut rsum = 0.0;
        let mut umax: f64 = 0.0;
        let mut p = vec![0.0; n * n];
        let mut q = vec![0.0; n * n];
        for i in 0..n * n {
            g2 += g[i] * g[i];
            rsum += r[i];
            umax = umax.max(u[i].abs()).max(v[i].abs());
            p[i] = -g[i] * g[i] - u[i] * gx[i] - v[i] * gy[i];
            q[i] = -u[i] * rx[i] - v[i] * ry[i] - g[i] * r[i];
        }
        let i_t = 2.0 * g2 / n2 - rsum / n2;
        let (mut dg, mut dr) = grid.forward_pair(&p, &q, &mut tmp);
        grid.apply_mask(&mut dg);
        grid.apply_mask(&mut dr);
        for k in 0..n * n {
            dg[k] += rh[k] - alpha * gh[k];
        }
        dg[0] += i_t * n2;

        let dtr = if tracers.is_empty() {
            Vec::new()
        } else {
            let (pxx, pyy) = grid.inverse_pair(&grid.deriv(&phi, 2, 0), &grid.deriv(&phi, 0, 2), &mut tmp);
            let (pxy, gxy) = grid.inverse_pair(&grid.deriv(&phi, 1, 1), &grid.deriv(gh, 1, 1), &mut tmp);
            let (pxxy, pxyy) = grid.inverse_pair(&grid.deriv(&phi, 2, 1), &grid.deriv(&phi, 1, 2), &mut tmp);
            let hu = Hermite { n, f: &u, fx: &pxx, fy: &pxy, fxy: &pxxy };
            let hv = Hermite { n, f: &v, fx: &pxy, fy: &pyy, fxy: &pxyy };
            let hg = Hermite { n, f: &g, fx: &gx, fy: &gy, fxy: &gxy };
            tracers
                .iter()
                .map(|tr| {
                    let (x, y) = (tr.x[0], tr.x[1]);
                    [hu.at(x, y), hv.at(x, y), -tr.j * hg.at(x, y)]
                })
                .collect()
        };
        Ok(Rhs { dg, dr, dtr, umax })
    }

    /// Advective time-step limit `0.5·h/‖u'‖∞` at the current state.
    pub fn cfl_limit(&self) -> Result<f64, SpectralError> {
        let (u, v) = self.velocity()?;
        let umax = u.iter().chain(&v).fold(0.0f64, |m, x| m.max(x.abs()));
        Ok(if umax > 0.0 {
            0.5 / (self.n as f64 * umax)
        } else {
            f64::INFINITY
        })
    }

    /// Current velocity `(u, v)` on the grid.
    pub fn velocity(&self) -> Result<(Vec<f64>, Vec<f64>), SpectralError> {
        let mean = self.gh[0].re / (self.n * self.n) as f64;
        if mean.abs() > MEAN_TOL {
            return Err(SpectralError::NonZeroMean { mean });
        }
        let phi = self.grid.potential(&self.gh);
        let mut tmp = vec![Complex64::default(); self.n * self.n];
        Ok(self
            .grid
            .inverse_pair(&self.grid.deriv(&phi, 1, 0), &self.grid.deriv(&phi, 0, 1), &mut tmp))
    }

    /// `max|v_x − u_y|` on the grid.
    pub fn vorticity_max(&self) -> f64 {
        let phi = self.grid.potential(&self.gh);
        let vx = self.grid.deriv(&self.grid.deriv(&phi, 0, 1), 1, 0);
        let uy = self.grid.deriv(&self.grid.deriv(&phi, 1, 0), 0, 1);
        let w: Vec<Complex64> = vx.iter().zip(&uy).map(|(a, b)| a - b).collect();
        let mut tmp = vec![Complex64::default(); self.n * self.n];
        let (om, _) = self.grid.inverse_pair(&w, &vec![Complex64::default(); w.len()], &mut tmp);
        om.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// One classical RK4 step.
    pub fn step(&mut self, alpha: f64, dt: f64) -> Result<(), SpectralError> {
        let k1 = self.rhs(&self.gh, &self.rh, &self.tracers, alpha)?;
        let limit = if k1.umax > 0.0 {
            0.5 / (self.n as f64 * k1.umax)
        } else {
            f64::INFINITY
        };
        if dt > limit {
            return Err(SpectralError::CflViolation { dt, limit });
        }
        let stage = |c: f64, k: &Rhs| {
            let gh: Vec<Complex64> = self.gh.iter().zip(&k.dg).map(|(a, b)| a + c * b).collect();
            let rh: Vec<Complex64> = self.rh.iter().zip(&k.dr).map(|(a, b)| a + c * b).collect();
            let tr: Vec<Tracer> = self
                .tracers
                .iter()
                .zip(&k.dtr)
                .map(|(t, d)| Tracer {
                    label: t.label,
                    x: [t.x[0] + c * d[0], t.x[1] + c * d[1]],
                    j: t.j + c * d[2],
                })
                .collect();
            (gh, rh, tr)
        };
        let (g2, r2, t2) = stage(0.5 * dt, &k1);
        let k2 = self.rhs(&g2, &r2, &t2, alpha)?;
        let (g3, r3, t3) = stage(0.5 * dt, &k2);
        let k3 = self.rhs(&g3, &r3, &t3, alpha)?;
        let (g4, r4, t4) = stage(dt, &k3);
        let k4 = self.rhs(&g4, &r4, &t4, alpha)?;

        let w = dt / 6.0;
        for i in 0..self.gh.len() {
            self.gh[i] += w * (k1.dg[i] + 2.0 * k2.dg[i] + 2.0 * k3.dg[i] + k4.dg[i]);
            self.rh[i] += w * (k1.dr[i] + 2.0 * k2.dr[i] + 2.0 * k3.dr[i] + k4.dr[i]);
        }
        for (m, tr) in self.tracers.iter_mut().enumerate() {
            for c in 0..2 {
                tr.x[c] += w * (k1.dtr[m][c] + 2.0 * k2.dtr[m][c] + 2.0 * k3.dtr[m][c] + k4.dtr[m][c]);
            }
            tr.j += w * (k1.dtr[m][2] + 2.0 * k2.dtr[m][2] + 2.0 * k3.dtr[m][2] + k4.dtr[m][2]);
        }
        let sup_before = self.sup_abs_gamma();
        self.t += dt;
        self.refresh_physical();
        let finite = self.gamma.iter().chain(&self.rho).all(|v| v.is_finite())
            && self.tracers.iter().all(|t| t.x[0].is_finite() && t.x[1].is_finite() && t.j.is_finite());
        if !finite {
            return Err(SpectralError::NonFinite { t: self.t });
        }
        self.bkm_partial += 0.5 * dt * (sup_before + self.sup_abs_gamma());
        Ok(())
    }

    pub fn diagnostics(&self) -> SpectralDiagnostics {
        let n2 = (self.n * self.n) as f64;
        let (mut g2, mut rs, mut gs) = (0.0, 0.0, 0.0);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (g, r) in self.gamma.iter().zip(&self.rho) {
            g2 += g * g;
            rs += r;
            gs += g;
            lo = lo.min(*g);
            hi = hi.max(*g);
        }
        SpectralDiagnostics {
            i_t: 2.0 * g2 / n2 - rs / n2,
            mean_gamma: gs / n2,
            sup_gamma: hi,
            min_gamma: lo,
            bkm_partial: self.bkm_partial,
        }
    }

    /// `(γ, ρ)` interpolated at the tracer positions.
    pub fn tracer_values(&self) -> Vec<(f64, f64)> {
        let grid = &self.grid;
        let n = self.n;
        let mut tmp = vec![Complex64::default(); n * n];
        let (gx, gy) = grid.inverse_pair(&grid.deriv(&self.gh, 1, 0), &grid.deriv(&self.gh, 0, 1), &mut tmp);
        let (rx, ry) = grid.inverse_pair(&grid.deriv(&self.rh, 1, 0), &grid.deriv(&self.rh, 0, 1), &mut tmp);
        let (gxy, rxy) = grid.inverse_pair(&grid.deriv(&self.gh, 1, 1), &grid.deriv(&self.rh, 1, 1), &mut tmp);
        let hg = Hermite { n, f: &self.gamma, fx: &gx, fy: &gy, fxy: &gxy };
        let hr = Hermite { n, f: &self.rho, fx: &rx, fy: &ry, fxy: &rxy };
        self.tracers
            .iter()
            .map(|t| (hg.at(t.x[0], t.x[1]), hr.at(t.x[0], t.x[1])))
            .collect()
    }

    /// Writes `γ` and `ρ` as flat little-endian arrays with a header and
    /// appends one line per file to `manifest.txt` in `dir`.
    pub fn write_snapshot(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>, SpectralError> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut manifest = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("manifest.txt"))?;
        for (name, field) in [("gamma", &self.gamma), ("rho", &self.rho)] {
            let file = format!("{stem}_{name}.bin");
            let path = dir.join(&file);
            let mut bytes = Vec::with_capacity(32 + 8 * field.len());
            bytes.extend_from_slice(SNAPSHOT_MAGIC);
            bytes.extend_from_slice(&(self.n as u64).to_le_bytes());
            bytes.extend_from_slice(&self.t.to_le_bytes());
            bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
            bytes.extend_from_slice(name.as_bytes());
            for v in field.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            fs::write(&path, bytes)?;
            writeln!(manifest, "{file} n={} t={:?} field={name}", self.n, self.t)?;
            written.push(path);
        }
        Ok(written)
    }
}

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"BLSNAP01";

/// A snapshot read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub n: usize,
    pub t: f64,
    pub field: String,
    pub values: Vec<f64>,
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, SpectralError> {
    let b = fs::read(path)?;
    let bad = || SpectralError::Io(format!("{}: malformed snapshot", path.display()));
    if b.len() < 28 || &b[..8] != SNAPSHOT_MAGIC {
        return Err(bad());
    }
    let n = u64::from_le_bytes(b[8..16].try_into().unwrap()) as usize;
    let t = f64::from_le_bytes(b[16..24].try_into().unwrap());
    let len = u32::from_le_bytes(b[24..28].try_into().unwrap()) as usize;
    let start = 28 + len;
    if b.len() != start + 8 * n * n {
        return Err(bad());
    }
    let field = String::from_utf8(b[28..start].to_vec()).map_err(|_| bad())?;
    let values = b[start..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Snapshot { n, t, field, values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOptions {
    /// Fraction of the advective limit used as the step.
    pub cfl: f64,
    pub dt_max: f64,
    /// Halt once `‖γ‖∞` exceeds this multiple of its initial value.
    pub growth_limit: f64,
    /// Write a snapshot every this many steps into the directory.
    pub snapshots: Option<(PathBuf, usize)>,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            cfl: 0.25,
            dt_max: 0.01,
            growth_limit: 50.0,
            snapshots: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralStatus {
    ReachedEnd,
    GrowthLimit,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSample {
    pub t: f64,
    pub diagnostics: SpectralDiagnostics,
    pub tracers: Vec<Tracer>,
    /// `(γ, ρ)` at the tracer positions.
    pub values: Vec<(f64, f64)>,
    pub vorticity_max: f64,
}

#[derive(Debug, Clone)]
pub struct SpectralRun {
    pub n: usize,
    pub alpha: f64,
    pub status: SpectralStatus,
    pub steps: usize,
    /// One sample at `t = 0` and one per requested time reached.
    pub samples: Vec<SpectralSample>,
    pub state: SpectralState,
}

fn sample(s: &SpectralState) -> SpectralSample {
    SpectralSample {
        t: s.t,
        diagnostics: s.diagnostics(),
        tracers: s.tracers.clone(),
        values: s.tracer_values(),
        vorticity_max: s.vorticity_max(),
    }
}

/// Integrates from `t = 0`, landing exactly on each of `times` (ascending).
pub fn run_spectral(
    data: &InitialData,
    alpha: f64,
    n: usize,
    labels: &[Label],
    times: &[f64],
    opts: &SpectralOptions,
) -> Result<SpectralRun, SpectralError> {
    let mut state = SpectralState::new(data, n, labels)?;
    let sup0 = state.sup_abs_gamma();
    let mut samples = vec![sample(&state)];
    let mut steps = 0;
    let mut status = SpectralStatus::ReachedEnd;
    'outer: for &target in times {
        while state.t < target {
            let limit = state.cfl_limit()?;
            let mut dt = (2.0 * opts.cfl * limit).min(opts.dt_max);
            if state.t + dt >= target - 1e-12 * target.max(1.0) {
                dt = target - state.t;
            }
            match state.step(alpha, dt) {
                Ok(()) => {}
                Err(SpectralError::NonFinite { .. }) => {
                    status = SpectralStatus::NonFinite;
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
            if state.t > target - 1e-12 * target.max(1.0) {
                state.t = target;
            }
            steps += 1;
            if let Some((dir, every)) = &opts.snapshots {
                if *every > 0 && steps % every == 0 {
                    state.write_snapshot(dir, &format!("step{steps:06}"))?;
                }
            }
            if state.sup_abs_gamma() > opts.growth_limit * sup0 {
                status = SpectralStatus::GrowthLimit;
                break 'outer;
            }
        }
        samples.push(sample(&state));
    }
    Ok(SpectralRun {
        n,
        alpha,
        status,
        steps,
        samples,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::make_initial_data;
    use std::f64::consts::PI;

    fn field(n: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let h = 1.0 / n as f64;
        let mut v = vec![0.0; n * n];
        for iy in 0..n {
            for ix in 0..n {
                v[iy * n + ix] = f(ix as f64 * h, iy as f64 * h);
            }
        }
        v
    }

    #[test]
    fn single_mode_velocity() {
        let n = 32;
        let (u, v) = velocity_from_gamma(&field(n, |x, _| (2.0 * PI * x).cos()), n).unwrap();
        let want = field(n, |x, _| -(2.0 * PI * x).sin() / (2.0 * PI));
        for i in 0..n * n {
            assert!((u[i] - want[i]).abs() < 1e-15 && v[i].abs() < 1e-15);
        }
        assert!(matches!(
            velocity_from_gamma(&vec![0.1; n * n], n),
            Err(SpectralError::NonZeroMean { .. })
        ));
    }

    #[test]
    fn pair_transforms_round_trip() {
        let n = 16;
        let g = Grid::new(n).unwrap();
        let p = field(n, |x, y| (2.0 * PI * x).sin() + (4.0 * PI * y).cos() * 0.3);
        let q = field(n, |x, y| (2.0 * PI * (x + y)).cos());
        let mut tmp = vec![Complex64::default(); n * n];
        let (a, b) = g.forward_pair(&p, &q, &mut tmp);
        let (p2, q2) = g.inverse_pair(&a, &b, &mut tmp);
        for i in 0..n * n {
            assert!((p[i] - p2[i]).abs() < 1e-14 && (q[i] - q2[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn hermite_reproduces_cubics_locally() {
        let n = 16;
        let g = Grid::new(n).unwrap();
        let f = field(n, |x, y| (2.0 * PI * x).sin() * (2.0 * PI * y).cos());
        let fh = g.spectrum(&f);
        let mut tmp = vec![Complex64::default(); n * n];
        let (fx, fy) = g.inverse_pair(&g.deriv(&fh, 1, 0), &g.deriv(&fh, 0, 1), &mut tmp);
        let (fxy, _) = g.inverse_pair(&g.deriv(&fh, 1, 1), &fh, &mut tmp);
        let h = Hermite { n, f: &f, fx: &fx, fy: &fy, fxy: &fxy };
        for &(x, y) in &[(0.0, 0.0), (0.13, 0.77), (0.5, 0.31), (1.02, -0.4)] {
            let want = (2.0 * PI * x).sin() * (2.0 * PI * y).cos();
            assert!((h.at(x, y) - want).abs() < 2e-4, "{x},{y}");
        }
    }

    #[test]
    fn initial_diagnostics() {
        let d = make_initial_data("cos(2*pi*x)*cos(2*pi*y)", "0", 16).unwrap();
        let s = SpectralState::new(&d, 32, &[]).unwrap();
        let dg = s.diagnostics();
        assert!((dg.i_t - 0.5).abs() < 1e-14 && dg.mean_gamma.abs() < 1e-15);
        assert!((dg.sup_gamma - 1.0).abs() < 1e-14 && (dg.min_gamma + 1.0).abs() < 1e-14);
        let d = make_initial_data("cos(4*pi*x)", "-sin(2*pi*x)^2", 16).unwrap();
        let s = SpectralState::new(&d, 32, &[]).unwrap();
        assert!((s.diagnostics().i_t - 1.5).abs() < 1e-14);
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let g = Grid::new(16).unwrap();
        let mut s = SpectralState::from_fields(g, &[0.0; 256], &[0.0; 256], vec![]).unwrap();
        s.step(0.3, 0.01).unwrap();
        assert!(s.gamma.iter().chain(&s.rho).all(|v| *v == 0.0));
    }

    #[test]
    fn cfl_is_enforced() {
        let d = make_initial_data("cos(2*pi*x)*cos(2*pi*y)", "0", 16).unwrap();
        let mut s = SpectralState::new(&d, 32, &[]).unwrap();
        let lim = s.cfl_limit().unwrap();
        assert!(matches!(s.step(0.0, 2.0 * lim), Err(SpectralError::CflViolation { .. })));
    }

    #[test]
    fn snapshot_round_trip() {
        let d = make_initial_data("cos(2*pi*x)*cos(2*pi*y)", "sin(2*pi*x)^2", 16).unwrap();
        let s = SpectralState::new(&d, 16, &[]).unwrap();
        let dir = std::env::temp_dir().join(format!("blowup-snap-{}", std::process::id()));
        let files = s.write_snapshot(&dir, "init").unwrap();
        let back = read_snapshot(&files[1]).unwrap();
        assert_eq!((back.n, back.t, back.field.as_str()), (16, 0.0, "rho"));
        assert_eq!(back.values, s.rho);
        assert!(fs::read_to_string(dir.join("manifest.txt")).unwrap().contains("init_gamma.bin"));
        fs::remove_dir_all(dir).ok();
    }
}
