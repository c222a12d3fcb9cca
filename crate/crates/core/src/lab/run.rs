//! Scenario execution: one record per α, time series on disk, one summary.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{AlphaSpec, ConfigError, ScenarioConfig, System};
use super::series::Table;
use crate::bouss::{self, detect_blowup_until, BlowupKind, CharState};
use crate::closedform::{self, gamma_from_mu1, jacobian_from_mu1};
use crate::euler::{self, classify_with_maps, damped_time, euler_moments, euler_reference_denominator, Regime, TimeMaps};
use crate::fields::{InitialData, Label, Tolerances};
use crate::ode::OdeTol;
use crate::rates::fit_log_law;
use crate::spectral::{run_spectral, SpectralOptions, SpectralStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub model: String,
    pub constant: f64,
    pub exponent: Option<f64>,
    pub r2: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantMaxima {
    /// Worst `|∫J − 1|` over accepted steps.
    pub norm_residual: Option<f64>,
    pub mean_gamma: Option<f64>,
    pub min_phi1: Option<f64>,
    pub max_sigma: Option<f64>,
    pub vorticity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDiscrepancies {
    pub reference: String,
    /// Divergence time of the reference, when it has one.
    pub t_reference: Option<f64>,
    pub max_j_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecord {
    pub alpha_spec: AlphaSpec,
    pub alpha: f64,
    pub tolerances: Tolerances,
    pub regime: Option<String>,
    pub blowup_kind: Option<BlowupKind>,
    /// `null` when nothing blows up.
    pub t_est: Option<f64>,
    pub bracket: Option<(f64, f64)>,
    pub rate_fit: Option<FitSummary>,
    pub invariant_maxima: InvariantMaxima,
    pub oracle_discrepancies: Option<OracleDiscrepancies>,
    pub timeseries_csv: Option<PathBuf>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub system: System,
    pub gamma0: String,
    pub rho0: String,
    pub grid_n: usize,
    pub seed: u64,
    pub tolerances: Tolerances,
    /// Undamped Euler blowup time of `γ₀`, when it was needed.
    pub te: Option<f64>,
    pub watch_labels: Vec<Label>,
    pub records: Vec<AlphaRecord>,
}

impl RunSummary {
    pub fn failed(&self) -> bool {
        self.records.iter().any(|r| r.error.is_some())
    }

    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        write_json(path, self)
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut s = serde_json::to_string_pretty(v).map_err(std::io::Error::other)?;
    s.push('\n');
    fs::write(path, s)
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// `<stem>.alpha<i>.csv` next to the configured path.
fn series_path(base: &Path, index: usize) -> PathBuf {
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    base.with_file_name(format!("{stem}.alpha{index}.csv"))
}

fn j_columns(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn char_header(n_watch: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "tau", "sigma", "A", "phi1"].map(String::from).to_vec();
    h.extend(j_columns("J_w", n_watch));
    h.extend(
        ["gamma_min", "gamma_max", "bkm_partial", "delta", "m2", "gamma_generic", "norm_residual", "blowup"]
            .map(String::from),
    );
    h
}

struct Context<'a> {
    cfg: &'a ScenarioConfig,
    data: &'a InitialData,
    maps: Option<TimeMaps<'a>>,
    watch: Vec<Label>,
}

/// Runs every α of the scenario. Per-α failures are recorded, not raised.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunSummary, ConfigError> {
    cfg.validate()?;
    let data = InitialData::build(cfg.gamma0(), cfg.rho0(), cfg.grid_n, &cfg.tolerances)?;
    run_with_data(cfg, &data)
}

fn run_with_data(cfg: &ScenarioConfig, data: &InitialData) -> Result<RunSummary, ConfigError> {
    let watch = bouss::watch_labels(data, cfg.seed, cfg.generic_labels);
    // T^E is needed for the Euler system and for symbolic α
    let need_te = cfg.system == System::Euler || cfg.has_symbolic_alpha();
    let maps = if need_te {
        let m = TimeMaps::new(data, &cfg.tolerances).map_err(|e| ConfigError::Parse(format!("T^E: {e}")))?;
        if cfg.has_symbolic_alpha() && !m.te.is_finite() {
            return Err(ConfigError::SymbolicNotApplicable(cfg.system));
        }
        Some(m)
    } else {
        None
    };
    let te = maps.as_ref().map(|m| m.te).and_then(finite);
    let ctx = Context { cfg, data, maps, watch };

    let mut records = Vec::with_capacity(cfg.alpha_list.len());
    for (i, spec) in cfg.alpha_list.iter().enumerate() {
        let alpha = match *spec {
            AlphaSpec::Value(a) => a,
            AlphaSpec::Symbolic(s) => s.factor() / te.expect("checked above"),
        };
        let mut rec = AlphaRecord {
            alpha_spec: *spec,
            alpha,
            tolerances: cfg.tolerances,
            regime: None,
            blowup_kind: None,
            t_est: None,
            bracket: None,
            rate_fit: None,
            invariant_maxima: InvariantMaxima::default(),
            oracle_discrepancies: None,
            timeseries_csv: None,
            error: None,
        };
        let outcome = match cfg.system {
            System::Euler => run_euler(&ctx, alpha, &mut rec),
            System::Boussinesq | System::Part2 => run_bouss(&ctx, alpha, &mut rec),
            System::Spectral => run_spec(&ctx, alpha, i, &mut rec),
        };
        match outcome {
            Ok(table) => {
                if let Some(base) = &cfg.outputs.timeseries_csv {
                    let path = series_path(base, i);
                    match table.write_csv(&path) {
                        Ok(()) => rec.timeseries_csv = Some(path),
                        Err(e) => rec.error = Some(e.to_string()),
                    }
                }
            }
            Err(e) => rec.error = Some(e),
        }
        records.push(rec);
    }
    let summary = RunSummary {
        scenario: cfg.name.clone(),
        system: cfg.system,
        gamma0: cfg.gamma0().to_owned(),
        rho0: cfg.rho0().to_owned(),
        grid_n: cfg.grid_n,
        seed: cfg.seed,
        tolerances: cfg.tolerances,
        te,
        watch_labels: ctx.watch.clone(),
        records,
    };
    if let Some(p) = &cfg.outputs.summary_json {
        summary
            .write_json(p)
            .map_err(|e| ConfigError::Io { path: p.display().to_string(), msg: e.to_string() })?;
    }
    Ok(summary)
}

fn run_euler(ctx: &Context<'_>, alpha: f64, rec: &mut AlphaRecord) -> Result<Table, String> {
    let maps = ctx.maps.as_ref().expect("maps for euler");
    let data = ctx.data;
    let tol = &ctx.cfg.tolerances;
    let report = classify_with_maps(maps, alpha, &ctx.watch).map_err(|e| e.to_string())?;
    rec.regime = Some(regime_name(report.regime).into());
    rec.t_est = report.t_blowup;
    rec.bracket = report.t_blowup.map(|t| {
        let e = maps.te_err / (1.0 - alpha * maps.te).max(f64::MIN_POSITIVE);
        (t - e, t + e)
    });
    let blowup = report.regime == Regime::Blowup;
    if blowup {
        // φ₁ against −ln δ over the final resolved decade
        let s: Vec<_> = maps.samples.iter().filter(|s| s.0 <= 10.0 * maps.delta_resolved).collect();
        let d: Vec<f64> = s.iter().map(|v| v.0).collect();
        let p: Vec<f64> = s.iter().map(|v| v.1).collect();
        rec.rate_fit = fit_log_law(&d, &p).map(|f| FitSummary {
            model: "phi1_log".into(),
            constant: f.slope,
            exponent: None,
            r2: f.r2,
        });
    }

    let generic = ctx.watch.get(data.minima().len()).copied();
    let mut table = Table::new(char_header(ctx.watch.len()));
    let tau_star = maps.tau_star;
    let (mut bkm, mut prev): (f64, Option<(f64, f64)>) = (0.0, None);
    let (mut worst_norm, mut min_phi) = (0.0f64, f64::INFINITY);
    const PER_PANEL: usize = 8;
    let steps = PER_PANEL * maps.panels_used();
    for j in 0..=steps {
        let delta = tau_star * 0.5f64.powf(j as f64 / PER_PANEL as f64);
        let delta = if j == 0 { tau_star } else { delta.max(maps.delta_resolved) };
        let te = maps.t_e_delta(delta).map_err(|e| e.to_string())?;
        let t = damped_time(alpha, te);
        if !t.is_finite() {
            break;
        }
        let m = euler_moments(data, delta, tol.quad_rel).map_err(|e| e.to_string())?;
        let decay = if alpha == 0.0 { 1.0 } else { (-alpha * t).exp() };
        let (lo, hi) = euler::gamma_extrema(data, delta, &m, decay);
        let sup = lo.abs().max(hi.abs());
        if let Some((pt, ps)) = prev {
            bkm += 0.5 * (t - pt) * (sup + ps);
        }
        prev = Some((t, sup));
        let tau = tau_star - delta;
        let d_ref = euler_reference_denominator(data, delta);
        let mut row = vec![t, tau, 0.0, f64::NAN, m.phi1];
        for &a in &ctx.watch {
            row.push(1.0 / (data.denominator_at(a, tau, 0.0, d_ref) * m.phi1));
        }
        let gg = generic.map_or(f64::NAN, |a| euler::gamma_from_moments(data, delta, &m, decay, &[a])[0]);
        row.extend([lo, hi, bkm, delta, m.m2, gg, m.norm_residual, if blowup { 1.0 } else { 0.0 }]);
        worst_norm = worst_norm.max(m.norm_residual.abs());
        min_phi = min_phi.min(m.phi1);
        table.push(row);
    }
    rec.invariant_maxima = InvariantMaxima {
        norm_residual: Some(worst_norm),
        mean_gamma: None,
        min_phi1: finite(min_phi),
        max_sigma: Some(0.0),
        vorticity: None,
    };
    Ok(table)
}

fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::Blowup => "blowup",
        Regime::NontrivialSteady => "nontrivial_steady",
        Regime::TrivialSteady => "trivial_steady",
    }
}

fn run_bouss(ctx: &Context<'_>, alpha: f64, rec: &mut AlphaRecord) -> Result<Table, String> {
    let data = ctx.data;
    let tol = &ctx.cfg.tolerances;
    let det = detect_blowup_until(data, alpha, &ctx.watch, tol, ctx.cfg.horizon()).map_err(|e| e.to_string())?;
    let est = &det.estimate;
    let blowup = est.kind != BlowupKind::None;
    rec.blowup_kind = Some(est.kind);
    rec.regime = Some(if blowup { "blowup" } else { "no_blowup_before_horizon" }.into());
    rec.t_est = finite(est.t_est);
    rec.bracket = blowup.then_some(est.bracket);
    rec.rate_fit = est.rate_fit.map(|f| FitSummary {
        model: "jacobian_loglog".into(),
        constant: f.constant,
        exponent: Some(f.exponent),
        r2: f.r2,
    });

    let states: Vec<CharState> = det
        .run
        .solution
        .nodes
        .iter()
        .filter_map(|(t, _)| det.run.state_at(*t).ok())
        .collect();
    let generic = ctx.watch.get(data.minima().len()).copied();
    let mut table = Table::new(char_header(ctx.watch.len()));
    let (mut bkm, mut prev): (f64, Option<(f64, f64)>) = (0.0, None);
    let mut inv = InvariantMaxima {
        norm_residual: Some(0.0),
        min_phi1: Some(f64::INFINITY),
        max_sigma: Some(f64::NEG_INFINITY),
        ..Default::default()
    };
    for s in &states {
        let Ok(m) = bouss::state_moments(data, s, tol.quad_rel) else { continue };
        let Ok(j) = bouss::jacobian_at(data, s, &ctx.watch) else { continue };
        let (lo, hi) = bouss::gamma_extrema(data, alpha, s, &m);
        let sup = lo.abs().max(hi.abs());
        if let Some((pt, ps)) = prev {
            bkm += 0.5 * (s.t - pt) * (sup + ps);
        }
        prev = Some((s.t, sup));
        let gg = generic
            .and_then(|a| bouss::gamma_bouss_at(data, alpha, s, &[a], tol.quad_rel).ok())
            .map_or(f64::NAN, |f| f.values[0]);
        let mut row = vec![s.t, s.tau, s.sigma, s.a, m.phi1];
        row.extend(j.values);
        row.extend([lo, hi, bkm, s.d_ref, m.m2, gg, m.norm_residual, if blowup { 1.0 } else { 0.0 }]);
        table.push(row);
        inv.norm_residual = inv.norm_residual.map(|v| v.max(m.norm_residual.abs()));
        inv.min_phi1 = inv.min_phi1.map(|v| v.min(m.phi1));
        inv.max_sigma = inv.max_sigma.map(|v| v.max(s.sigma));
    }
    rec.invariant_maxima = inv;

    if ctx.cfg.system == System::Part2 {
        let otol = OdeTol { rel: tol.ode_rel, abs: tol.ode_abs, event: tol.event_tol };
        rec.oracle_discrepancies = Some(match closedform::solve_N(alpha, &otol) {
            Ok(path) => {
                let mut worst = 0.0f64;
                for s in states.iter().filter(|s| s.t < 0.95 * path.bracket.0) {
                    let (Ok(mu), Ok(j)) = (path.mu1_at(s.t), bouss::jacobian_at(data, s, &ctx.watch)) else {
                        continue;
                    };
                    for (a, v) in ctx.watch.iter().zip(&j.values) {
                        worst = worst.max((v - jacobian_from_mu1(mu, a.x)).abs());
                    }
                }
                OracleDiscrepancies {
                    reference: "n_system".into(),
                    t_reference: Some(path.t_div),
                    max_j_error: Some(worst),
                }
            }
            Err(e) => return Err(format!("closed-form reference: {e}")),
        });
    }
    Ok(table)
}

fn run_spec(ctx: &Context<'_>, alpha: f64, index: usize, rec: &mut AlphaRecord) -> Result<Table, String> {
    let cfg = ctx.cfg;
    let horizon = cfg.horizon();
    let times: Vec<f64> = (1..=50).map(|k| horizon * k as f64 / 50.0).collect();
    let opts = SpectralOptions {
        snapshots: cfg.outputs.snapshots.as_ref().map(|d| (d.join(format!("alpha{index}")), cfg.snapshot_every.unwrap_or(50))),
        ..SpectralOptions::default()
    };
    let run = run_spectral(ctx.data, alpha, cfg.spectral_n, &ctx.watch, &times, &opts).map_err(|e| e.to_string())?;
    rec.regime = Some(
        match run.status {
            SpectralStatus::ReachedEnd => "reached_end",
            SpectralStatus::GrowthLimit => "growth_limit",
            SpectralStatus::NonFinite => "non_finite",
        }
        .into(),
    );
    let mut h = vec!["t".to_string()];
    h.extend(j_columns("J_w", ctx.watch.len()));
    h.extend(["gamma_min", "gamma_max", "bkm_partial", "I", "mean_gamma", "vorticity_max"].map(String::from));
    let mut table = Table::new(h);
    let (mut mean, mut vort) = (0.0f64, 0.0f64);
    for s in &run.samples {
        let d = &s.diagnostics;
        let mut row = vec![s.t];
        row.extend(s.tracers.iter().map(|t| t.j));
        row.extend([d.min_gamma, d.sup_gamma, d.bkm_partial, d.i_t, d.mean_gamma, s.vorticity_max]);
        table.push(row);
        mean = mean.max(d.mean_gamma.abs());
        vort = vort.max(s.vorticity_max);
    }
    rec.invariant_maxima = InvariantMaxima {
        mean_gamma: Some(mean),
        vorticity: Some(vort),
        ..Default::default()
    };
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub gamma: f64,
    pub rho: f64,
    pub jacobian: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRecord {
    pub alpha: f64,
    pub t_reference: Option<f64>,
    pub horizon_time: Option<f64>,
    pub spectral_n: usize,
    /// Characteristic vs spectral.
    pub char_vs_spectral: Option<Discrepancy>,
    /// Characteristic vs the closed form (part-2 data only).
    pub char_vs_closed_form: Option<Discrepancy>,
    pub spectral_vs_closed_form: Option<Discrepancy>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub scenario: String,
    pub horizon_fraction: f64,
    pub records: Vec<CompareRecord>,
}

impl CompareReport {
    pub fn failed(&self) -> bool {
        self.records.iter().any(|r| r.error.is_some())
    }

    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        write_json(path, self)
    }
}

fn update(d: &mut Discrepancy, g: f64, r: f64, j: f64) {
    d.gamma = d.gamma.max(g.abs());
    d.rho = d.rho.max(r.abs());
    d.jacobian = d.jacobian.max(j.abs());
}

/// Runs the characteristic and spectral solvers to `horizon_fraction·T_est`
/// and reports the largest tracer-label differences over four probe times.
pub fn compare_oracles(cfg: &ScenarioConfig, horizon_fraction: f64) -> Result<CompareReport, ConfigError> {
    cfg.validate()?;
    if !(horizon_fraction > 0.0 && horizon_fraction < 1.0) {
        return Err(ConfigError::InvalidHorizon(horizon_fraction));
    }
    if cfg.system == System::Spectral {
        return Err(ConfigError::CompareNotApplicable(cfg.system));
    }
    let data = InitialData::build(cfg.gamma0(), cfg.rho0(), cfg.grid_n, &cfg.tolerances)?;
    let watch = bouss::watch_labels(&data, cfg.seed, cfg.generic_labels);
    let tol = cfg.tolerances;
    let te = if cfg.system == System::Euler || cfg.has_symbolic_alpha() {
        let m = TimeMaps::new(&data, &tol).map_err(|e| ConfigError::Parse(format!("T^E: {e}")))?;
        Some(m.te)
    } else {
        None
    };
    let mut records = Vec::new();
    for spec in &cfg.alpha_list {
        let alpha = match *spec {
            AlphaSpec::Value(a) => a,
            AlphaSpec::Symbolic(s) => match te.filter(|t| t.is_finite()) {
                Some(t) => s.factor() / t,
                None => return Err(ConfigError::SymbolicNotApplicable(cfg.system)),
            },
        };
        let mut rec = CompareRecord {
            alpha,
            t_reference: None,
            horizon_time: None,
            spectral_n: cfg.spectral_n,
            char_vs_spectral: None,
            char_vs_closed_form: None,
            spectral_vs_closed_form: None,
            error: None,
        };
        if let Err(e) = compare_one(cfg, &data, &watch, alpha, te, horizon_fraction, &mut rec) {
            rec.error = Some(e);
        }
        records.push(rec);
    }
    Ok(CompareReport {
        scenario: cfg.name.clone(),
        horizon_fraction,
        records,
    })
}

fn compare_one(
    cfg: &ScenarioConfig,
    data: &InitialData,
    watch: &[Label],
    alpha: f64,
    te: Option<f64>,
    fraction: f64,
    rec: &mut CompareRecord,
) -> Result<(), String> {
    let tol = &cfg.tolerances;
    let t_ref = match cfg.system {
        System::Euler => {
            let te = te.filter(|t| t.is_finite()).ok_or("T^E is infinite")?;
            if alpha * te >= 1.0 {
                return Err("no blowup time: alpha >= 1/T^E".into());
            }
            damped_time(alpha, te)
        }
        _ => {
            let det = detect_blowup_until(data, alpha, watch, tol, cfg.horizon()).map_err(|e| e.to_string())?;
            if det.estimate.kind == BlowupKind::None {
                return Err("no blowup detected before the horizon".into());
            }
            det.estimate.t_est
        }
    };
    let t_h = fraction * t_ref;
    rec.t_reference = Some(t_ref);
    rec.horizon_time = Some(t_h);
    let times: Vec<f64> = (1..=4).map(|k| t_h * k as f64 / 4.0).collect();
    let run = bouss::solve_char(data, alpha, t_h, tol).map_err(|e| e.to_string())?;
    let spec = run_spectral(data, alpha, cfg.spectral_n, watch, &times, &SpectralOptions::default())
        .map_err(|e| e.to_string())?;
    if spec.status != SpectralStatus::ReachedEnd {
        return Err(format!("spectral run stopped early ({:?})", spec.status));
    }
    let otol = OdeTol { rel: tol.ode_rel, abs: tol.ode_abs, event: tol.event_tol };
    let path = if cfg.system == System::Part2 {
        Some(closedform::solve_N(alpha, &otol).map_err(|e| e.to_string())?)
    } else {
        None
    };
    let zero = || Discrepancy { gamma: 0.0, rho: 0.0, jacobian: 0.0 };
    let (mut cs, mut cc, mut sc) = (zero(), zero(), zero());
    for s in &spec.samples[1..] {
        let t = s.t.min(run.solution.t_last());
        let st = run.state_at(t).map_err(|e| e.to_string())?;
        let j = bouss::jacobian_at(data, &st, watch).map_err(|e| e.to_string())?.values;
        let g = bouss::gamma_bouss_at(data, alpha, &st, watch, tol.quad_rel)
            .map_err(|e| e.to_string())?
            .values;
        for (k, a) in watch.iter().enumerate() {
            let r = data.rho0(*a) * j[k];
            let (gs, rs, js) = (s.values[k].0, s.values[k].1, s.tracers[k].j);
            update(&mut cs, g[k] - gs, r - rs, j[k] - js);
            if let Some(p) = &path {
                let mu = p.mu1_at(s.t).map_err(|e| e.to_string())?;
                let n = p.n_at(s.t).map_err(|e| e.to_string())?;
                let jc = jacobian_from_mu1(mu, a.x);
                let gc = gamma_from_mu1(mu, n, a.x);
                let rc = data.rho0(*a) * jc;
                update(&mut cc, g[k] - gc, r - rc, j[k] - jc);
                update(&mut sc, gs - gc, rs - rc, js - jc);
            }
        }
    }
    rec.char_vs_spectral = Some(cs);
    if path.is_some() {
        rec.char_vs_closed_form = Some(cc);
        rec.spectral_vs_closed_form = Some(sc);
    }
    Ok(())
}
