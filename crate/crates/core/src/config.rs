//! Experiment configuration: a TOML document with sections `[params]`,
//! `[grid]`, `[time]`, `[newton]` and `[output]`, overridable by
//! `MEMSFBP_SECTION_KEY` environment variables and `section.key=value`
//! command-line assignments.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::continuation::ContinuationControls;
use crate::dynamics::TimeControls;
use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::params::{GapParams, Params};

pub const ENV_PREFIX: &str = "MEMSFBP_";

const SECTIONS: [&str; 5] = ["params", "grid", "time", "newton", "output"];

/// Which model a driver uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    #[default]
    Full,
    Sar,
}

/// Initial membrane data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitShape {
    #[default]
    Rest,
    /// `u = -a(1-x²)`, `v = -1 + a(1-x²)/2`.
    Bump,
    /// Asymmetric profile, for symmetry negative controls.
    Tilted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsSection {
    pub eps: f64,
    pub lambda: f64,
    pub mu: f64,
    /// `μ / λ` along continuation rays and sweeps.
    pub ratio: f64,
    pub model: Model,
    pub eps_values: Vec<f64>,
    pub lambda_values: Vec<f64>,
    pub init: InitShape,
    pub init_amplitude: f64,
}

impl Default for ParamsSection {
    fn default() -> Self {
        ParamsSection {
            eps: 0.1,
            lambda: 0.1,
            mu: 0.1,
            ratio: 1.0,
            model: Model::Full,
            eps_values: vec![0.4, 0.2, 0.1, 0.05],
            lambda_values: vec![0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
            init: InitShape::Rest,
            init_amplitude: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub nz: usize,
    /// Vertical cells of the physical raster.
    pub raster_nz: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            nx: 200,
            nz: 100,
            raster_nz: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
    pub inner_iterations: usize,
    pub touchdown_gap: f64,
    pub kappa: f64,
}

impl Default for TimeSection {
    fn default() -> Self {
        let tc = TimeControls::default();
        let gap = GapParams::default();
        TimeSection {
            dt: tc.dt,
            t_end: tc.t_end,
            record_every: tc.record_every,
            inner_iterations: tc.inner_iterations,
            touchdown_gap: gap.touchdown_gap,
            kappa: gap.kappa,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonSection {
    pub tol: f64,
    pub max_iter: usize,
    pub step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub max_points: usize,
    pub after_fold: usize,
    pub pinned_lower: bool,
    pub spectrum: bool,
}

impl Default for NewtonSection {
    fn default() -> Self {
        let c = ContinuationControls::default();
        NewtonSection {
            tol: crate::steady::STEADY_TOLERANCE,
            max_iter: 50,
            step: c.step,
            min_step: c.min_step,
            max_step: c.max_step,
            max_points: c.max_points,
            after_fold: c.after_fold,
            pinned_lower: false,
            spectrum: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub snapshots: bool,
    pub raster: bool,
    pub dump_matrix: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            snapshots: true,
            raster: false,
            dump_matrix: false,
        }
    }
}

/// Full experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub params: ParamsSection,
    pub grid: GridSection,
    pub time: TimeSection,
    pub newton: NewtonSection,
    pub output: OutputSection,
}

fn parse_scalar(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Applies `section.key = value` to a TOML table.
pub fn set_key(table: &mut Table, path: &str, raw: &str) -> Result<()> {
    let (section, key) = path
        .split_once('.')
        .ok_or_else(|| Error::Config(format!("override `{path}` must have the form section.key")))?;
    if !SECTIONS.contains(&section) {
        return Err(Error::Config(format!("unknown section `{section}` in override `{path}`")));
    }
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    let Value::Table(sec) = entry else {
        return Err(Error::Config(format!("`{section}` is not a table")));
    };
    sec.insert(key.to_string(), parse_scalar(raw));
    Ok(())
}

/// Environment overrides `MEMSFBP_SECTION_KEY=value`, in sorted order.
pub fn env_overrides<I>(vars: I) -> Vec<(String, String)>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut out: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
            let section = SECTIONS.iter().find(|s| rest.starts_with(&format!("{s}_")))?;
            let key = &rest[section.len() + 1..];
            Some((format!("{section}.{key}"), v))
        })
        .collect();
    out.sort();
    out
}

impl ExperimentConfig {
    /// Builds a configuration from optional TOML text plus overrides, applied
    /// in order.
    pub fn from_sources(text: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = match text {
            Some(t) => {
                // Deserializing the text itself keeps line numbers in errors.
                toml::from_str::<ExperimentConfig>(t).map_err(|e| Error::Config(e.to_string()))?;
                t.parse::<Table>().map_err(|e| Error::Config(e.to_string()))?
            }
            None => Table::new(),
        };
        for (path, raw) in overrides {
            set_key(&mut table, path, raw)?;
        }
        let cfg: ExperimentConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => Some(
                std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            ),
            None => None,
        };
        Self::from_sources(text.as_deref(), overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let key = |k: &str, e: Error| Error::Config(format!("{k}: {e}"));
        Params::new(self.params.eps, self.params.lambda, self.params.mu).map_err(|e| key("params", e))?;
        if !(self.params.ratio >= 0.0 && self.params.ratio.is_finite()) {
            return Err(Error::Config("params.ratio: must be finite and >= 0".into()));
        }
        if self.params.eps_values.is_empty() {
            return Err(Error::Config("params.eps_values: must not be empty".into()));
        }
        if self.params.eps_values.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::Config("params.eps_values: entries must be finite and >= 0".into()));
        }
        if self.params.lambda_values.is_empty() {
            return Err(Error::Config("params.lambda_values: must not be empty".into()));
        }
        if self.params.lambda_values.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Config("params.lambda_values: entries must be finite and >= 0".into()));
        }
        if !(0.0..0.5).contains(&self.params.init_amplitude) {
            return Err(Error::Config("params.init_amplitude: must lie in [0, 0.5)".into()));
        }
        self.grid2d().map_err(|e| key("grid", e))?;
        self.time_controls().map_err(|e| key("time", e))?;
        self.gap_params().map_err(|e| key("time", e))?;
        self.continuation().validate().map_err(|e| key("newton", e))?;
        if self.grid.raster_nz == 0 {
            return Err(Error::Config("grid.raster_nz: must be positive".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> Params {
        Params {
            eps: self.params.eps,
            lambda: self.params.lambda,
            mu: self.params.mu,
        }
    }

    pub fn grid2d(&self) -> Result<Grid2D> {
        Grid2D::new(self.grid.nx, self.grid.nz)
    }

    pub fn time_controls(&self) -> Result<TimeControls> {
        let tc = TimeControls {
            dt: self.time.dt,
            t_end: self.time.t_end,
            record_every: self.time.record_every,
            inner_iterations: self.time.inner_iterations,
        };
        tc.validate()?;
        Ok(tc)
    }

    pub fn gap_params(&self) -> Result<GapParams> {
        GapParams::new(self.time.kappa, self.time.touchdown_gap)
    }

    pub fn continuation(&self) -> ContinuationControls {
        ContinuationControls {
            step: self.newton.step,
            min_step: self.newton.min_step,
            max_step: self.newton.max_step,
            tol: self.newton.tol,
            max_newton: self.newton.max_iter,
            max_points: self.newton.max_points,
            after_fold: self.newton.after_fold,
            t_max: f64::INFINITY,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ExperimentConfig::from_sources(None, &[]).unwrap();
        assert_eq!(c.grid.nx, 200);
        assert_eq!(c.grid.nz, 100);
        assert_eq!(c.time.dt, 1e-4);
    }

    #[test]
    fn file_then_overrides() {
        let text = "[params]\neps = 0.2\nlambda = 0.3\n[grid]\nnx = 40\nnz = 20\n";
        let c = ExperimentConfig::from_sources(
            Some(text),
            &[("params.lambda".into(), "0.5".into()), ("output.dir".into(), "runs/a".into())],
        )
        .unwrap();
        assert_eq!(c.params.eps, 0.2);
        assert_eq!(c.params.lambda, 0.5);
        assert_eq!(c.output.dir, PathBuf::from("runs/a"));
        let c = ExperimentConfig::from_sources(None, &[("params.eps_values".into(), "[0.1, 0.01]".into())]).unwrap();
        assert_eq!(c.params.eps_values, vec![0.1, 0.01]);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::from_sources(Some("[grid]\nnxx = 4\n"), &[]).unwrap_err();
        assert!(err.to_string().contains("nxx") && err.to_string().contains("line 2"), "{err}");
        let err = ExperimentConfig::from_sources(Some("[grid]\nnx = \n"), &[]).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = ExperimentConfig::from_sources(None, &[("grid.nx".into(), "7".into())]).unwrap_err();
        assert!(err.to_string().contains("nx"), "{err}");
        assert!(ExperimentConfig::from_sources(None, &[("physics.nx".into(), "7".into())]).is_err());
    }

    #[test]
    fn environment_names_map_to_keys() {
        let vars = vec![
            ("MEMSFBP_TIME_T_END".to_string(), "2".to_string()),
            ("MEMSFBP_PARAMS_EPS".to_string(), "0.3".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let o = env_overrides(vars);
        assert_eq!(o, vec![("params.eps".into(), "0.3".into()), ("time.t_end".into(), "2".into())]);
        let c = ExperimentConfig::from_sources(None, &o).unwrap();
        assert_eq!(c.time.t_end, 2.0);
    }
}
