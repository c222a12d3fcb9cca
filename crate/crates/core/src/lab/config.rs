//! Scenario files: TOML documents whose keys match [`ScenarioConfig`].

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::closedform;
use crate::fields::{validate_grid_n, FieldsError, Tolerances};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("alpha_list is empty")]
    EmptyAlphaList,
    #[error("alpha {0} is invalid (must be finite and >= 0)")]
    InvalidAlpha(f64),
    #[error("symbolic alpha values need Euler-type data with finite T^E (system = {0:?})")]
    SymbolicNotApplicable(System),
    #[error("horizon fraction must lie in (0, 1), got {0}")]
    InvalidHorizon(f64),
    #[error("compare needs system = euler, boussinesq or part2, got {0:?}")]
    CompareNotApplicable(System),
    #[error(transparent)]
    Fields(#[from] FieldsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    Euler,
    Boussinesq,
    Spectral,
    Part2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymbolicAlpha {
    HalfCritical,
    Critical,
    TwiceCritical,
}

impl SymbolicAlpha {
    pub fn factor(self) -> f64 {
        match self {
            SymbolicAlpha::HalfCritical => 0.5,
            SymbolicAlpha::Critical => 1.0,
            SymbolicAlpha::TwiceCritical => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Value(f64),
    Symbolic(SymbolicAlpha),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub timeseries_csv: Option<PathBuf>,
    pub summary_json: Option<PathBuf>,
    /// Directory for spectral field snapshots.
    pub snapshots: Option<PathBuf>,
}

fn default_grid_n() -> usize {
    16
}

fn default_spectral_n() -> usize {
    256
}

fn default_generic_labels() -> usize {
    crate::bouss::DEFAULT_GENERIC_LABELS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub system: System,
    /// Defaults to the part-2 data when `system = part2`.
    #[serde(default)]
    pub gamma0: Option<String>,
    #[serde(default)]
    pub rho0: Option<String>,
    pub alpha_list: Vec<AlphaSpec>,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_generic_labels")]
    pub generic_labels: usize,
    /// Final time for runs that do not blow up, and for spectral runs.
    #[serde(default)]
    pub t_end: Option<f64>,
    #[serde(default = "default_spectral_n")]
    pub spectral_n: usize,
    /// Spectral steps between snapshots.
    #[serde(default)]
    pub snapshot_every: Option<usize>,
}

pub const PART2_GAMMA0: &str = "cos(4*pi*x)";
pub const PART2_RHO0: &str = "-sin(2*pi*x)^2";

/// Command-line overrides applied after parsing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub grid_n: Option<usize>,
    pub tol_rel: Option<f64>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(n) = o.grid_n {
            self.grid_n = n;
        }
        if let Some(r) = o.tol_rel {
            self.tolerances.ode_rel = r;
            self.tolerances.quad_rel = r;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(dir) = &o.out_dir {
            let o = &mut self.outputs;
            for p in [&mut o.timeseries_csv, &mut o.summary_json, &mut o.snapshots]
                .into_iter()
                .flatten()
            {
                *p = dir.join(p.file_name().unwrap_or(p.as_os_str()));
            }
            if o.summary_json.is_none() {
                o.summary_json = Some(dir.join(format!("{}.summary.json", self.name)));
            }
            if o.timeseries_csv.is_none() {
                o.timeseries_csv = Some(dir.join(format!("{}.csv", self.name)));
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.trim().is_empty() {
            return Err(ConfigError::Parse("name is empty".into()));
        }
        if self.alpha_list.is_empty() {
            return Err(ConfigError::EmptyAlphaList);
        }
        for a in &self.alpha_list {
            match a {
                AlphaSpec::Value(v) if !(v.is_finite() && *v >= 0.0) => return Err(ConfigError::InvalidAlpha(*v)),
                AlphaSpec::Symbolic(_) if !matches!(self.system, System::Euler | System::Boussinesq | System::Spectral) => {
                    return Err(ConfigError::SymbolicNotApplicable(self.system))
                }
                _ => {}
            }
        }
        validate_grid_n(self.grid_n)?;
        self.tolerances.validate()?;
        if self.spectral_n < 8 || self.spectral_n % 2 != 0 {
            return Err(ConfigError::Parse(format!("spectral_n must be even and >= 8, got {}", self.spectral_n)));
        }
        if let Some(t) = self.t_end {
            if !(t.is_finite() && t > 0.0) {
                return Err(ConfigError::Parse(format!("t_end must be positive, got {t}")));
            }
        }
        if self.system != System::Part2 && self.gamma0.is_none() {
            return Err(ConfigError::Parse("gamma0 is required".into()));
        }
        Ok(())
    }

    pub fn gamma0(&self) -> &str {
        self.gamma0.as_deref().unwrap_or(PART2_GAMMA0)
    }

    pub fn rho0(&self) -> &str {
        match (&self.rho0, self.system) {
            (Some(r), _) => r,
            (None, System::Part2) => PART2_RHO0,
            (None, _) => "0",
        }
    }

    pub fn has_symbolic_alpha(&self) -> bool {
        self.alpha_list.iter().any(|a| matches!(a, AlphaSpec::Symbolic(_)))
    }

    /// Horizon used when nothing blows up.
    pub fn horizon(&self) -> f64 {
        self.t_end.unwrap_or(match self.system {
            System::Spectral => 0.5,
            _ => crate::bouss::DEFAULT_HORIZON,
        })
    }
}

/// Part-2 divergence times from the `N` system, used when `system = part2`.
pub fn part2_reference(alpha: f64, tol: &Tolerances) -> Option<f64> {
    let t = crate::ode::OdeTol {
        rel: tol.ode_rel,
        abs: tol.ode_abs,
        event: tol.event_tol,
    };
    closedform::solve_N(alpha, &t).ok().map(|p| p.t_div)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
name = "demo"
system = "euler"
gamma0 = "cos(2*pi*x)*cos(2*pi*y)"
alpha_list = ["half_critical", 0.3]
"#;

    #[test]
    fn parses_mixed_alpha_list() {
        let c = ScenarioConfig::from_toml(BASE).unwrap();
        assert_eq!(c.alpha_list[0], AlphaSpec::Symbolic(SymbolicAlpha::HalfCritical));
        assert_eq!(c.alpha_list[1], AlphaSpec::Value(0.3));
        assert_eq!(c.grid_n, 16);
        assert_eq!(c.rho0(), "0");
        assert_eq!(c.tolerances, Tolerances::default());
    }

    #[test]
    fn empty_alpha_list_is_rejected() {
        let t = BASE.replace(r#"["half_critical", 0.3]"#, "[]");
        assert_eq!(ScenarioConfig::from_toml(&t), Err(ConfigError::EmptyAlphaList));
    }

    #[test]
    fn part2_defaults_and_symbolic_rejection() {
        let t = "name = \"p\"\nsystem = \"part2\"\nalpha_list = [0.0, 0.25]\n";
        let c = ScenarioConfig::from_toml(t).unwrap();
        assert_eq!((c.gamma0(), c.rho0()), (PART2_GAMMA0, PART2_RHO0));
        let t = "name = \"p\"\nsystem = \"part2\"\nalpha_list = [\"critical\"]\n";
        assert!(matches!(
            ScenarioConfig::from_toml(t),
            Err(ConfigError::SymbolicNotApplicable(System::Part2))
        ));
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        assert!(matches!(
            ScenarioConfig::from_toml(&format!("{BASE}colour = 1\n")),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            ScenarioConfig::from_toml(&BASE.replace("0.3", "-1.0")),
            Err(ConfigError::InvalidAlpha(_))
        ));
    }

    #[test]
    fn overrides_redirect_outputs() {
        let mut c = ScenarioConfig::from_toml(BASE).unwrap();
        c.outputs.timeseries_csv = Some("runs/demo.csv".into());
        c.apply(&Overrides {
            grid_n: Some(32),
            tol_rel: Some(1e-9),
            seed: Some(4),
            out_dir: Some("/tmp/out".into()),
        })
        .unwrap();
        assert_eq!(c.grid_n, 32);
        assert_eq!(c.tolerances.quad_rel, 1e-9);
        assert_eq!(c.outputs.timeseries_csv.as_deref(), Some(Path::new("/tmp/out/demo.csv")));
        assert_eq!(
            c.outputs.summary_json.as_deref(),
            Some(Path::new("/tmp/out/demo.summary.json"))
        );
    }
}
