//! Experiment configuration: TOML schema, validation, and conversion into
//! the in-memory model types.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerConfig, EstimatorMode, OptimizerKind};
use crate::error::{Error, Result};
use crate::model::{DisturbanceSchedule, QuadraticCost, StateSpace};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PlantCfg {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    /// Defaults to zero feedthrough.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CostCfg {
    pub q: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    #[serde(default)]
    pub v: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ControllerCfg {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_obs: Option<Vec<Vec<f64>>>,
    pub k_i: Vec<Vec<f64>>,
    pub k_p: Vec<Vec<f64>>,
    /// "phi1" or "phi2".
    pub optimizer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// "observer" or "bypass".
    pub estimator: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceEntryCfg {
    pub t: f64,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimulationCfg {
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub t_final: f64,
    pub xi0: Vec<f64>,
    pub disturbance: Vec<DisturbanceEntryCfg>,
}

fn default_dt() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepCfg {
    /// "rho", "q", or "m_sc".
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CertifyCfg {
    #[serde(default = "default_alpha_tol")]
    pub alpha_tol: f64,
}

fn default_alpha_tol() -> f64 {
    1e-3
}

impl Default for CertifyCfg {
    fn default() -> Self {
        Self {
            alpha_tol: default_alpha_tol(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantCfg,
    pub cost: CostCfg,
    pub controller: ControllerCfg,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepCfg>,
    #[serde(default, skip_serializing_if = "is_default_certify")]
    pub certify: CertifyCfg,
}

fn is_default_certify(c: &CertifyCfg) -> bool {
    *c == CertifyCfg::default()
}

fn to_matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::Config(format!("{field}: matrix must be non-empty")));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(Error::Config(format!("{field}: rows must be non-empty")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!(
            "{field}: rows have inconsistent lengths"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config(format!("{field}: non-finite entry")));
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

fn to_vector(v: &[f64], field: &str) -> Result<DVector<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config(format!("{field}: non-finite entry")));
    }
    Ok(DVector::from_row_slice(v))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn state_space(&self) -> Result<StateSpace> {
        let a = to_matrix(&self.plant.a, "plant.a")?;
        let b = to_matrix(&self.plant.b, "plant.b")?;
        let c = to_matrix(&self.plant.c, "plant.c")?;
        let d = match &self.plant.d {
            Some(d) => to_matrix(d, "plant.d")?,
            None => DMatrix::zeros(c.nrows(), b.ncols()),
        };
        StateSpace::new(a, b, c, d)
            .map_err(|e| Error::Config(format!("plant: {e}")))
    }

    pub fn cost(&self) -> Result<QuadraticCost> {
        let q = to_matrix(&self.cost.q, "cost.q")?;
        let c = to_vector(&self.cost.c, "cost.c")?;
        QuadraticCost::new(q, c, self.cost.v).map_err(|e| Error::Config(format!("cost: {e}")))
    }

    pub fn controller(&self, ss: &StateSpace) -> Result<ControllerConfig> {
        let optimizer = match self.controller.optimizer.as_str() {
            "phi1" => OptimizerKind::Phi1,
            "phi2" => OptimizerKind::Phi2,
            other => {
                return Err(Error::Config(format!(
                    "controller.optimizer: expected \"phi1\" or \"phi2\", got \"{other}\""
                )))
            }
        };
        let estimator = match self.controller.estimator.as_str() {
            "observer" => EstimatorMode::Observer,
            "bypass" => EstimatorMode::Bypass,
            other => {
                return Err(Error::Config(format!(
                    "controller.estimator: expected \"observer\" or \"bypass\", got \"{other}\""
                )))
            }
        };
        if optimizer == OptimizerKind::Phi2 {
            match self.controller.rho {
                None => {
                    return Err(Error::Config(
                        "controller.rho: required when optimizer = \"phi2\"".into(),
                    ))
                }
                Some(r) if !(r > 0.0 && r.is_finite()) => {
                    return Err(Error::Config(format!(
                        "controller.rho: must be positive and finite, got {r}"
                    )))
                }
                _ => {}
            }
        }
        let l_obs = match &self.controller.l_obs {
            Some(l) => Some(to_matrix(l, "controller.l_obs")?),
            None => None,
        };
        let cfg = ControllerConfig {
            l_obs,
            k_i: to_matrix(&self.controller.k_i, "controller.k_i")?,
            k_p: to_matrix(&self.controller.k_p, "controller.k_p")?,
            optimizer,
            rho: self.controller.rho,
            estimator,
        };
        cfg.validate(ss)
            .map_err(|e| Error::Config(format!("controller: {e}")))?;
        Ok(cfg)
    }

    pub fn schedule(&self, m: usize) -> Result<DisturbanceSchedule> {
        let sim = self.simulation.as_ref().ok_or_else(|| {
            Error::Config("simulation: section required for this command".into())
        })?;
        let mut entries = Vec::with_capacity(sim.disturbance.len());
        for (i, e) in sim.disturbance.iter().enumerate() {
            let w = to_vector(&e.w, &format!("simulation.disturbance[{i}].w"))?;
            if w.len() != m {
                return Err(Error::Config(format!(
                    "simulation.disturbance[{i}].w: expected length {m}, got {}",
                    w.len()
                )));
            }
            entries.push((e.t, w));
        }
        DisturbanceSchedule::new(entries)
            .map_err(|e| Error::Config(format!("simulation.disturbance: {e}")))
    }

    /// Cross-checks the simulation block against the plant/controller
    /// dimensions and returns `(dt, t_final, xi0)`.
    pub fn simulation_params(&self, state_dim: usize) -> Result<(f64, f64, DVector<f64>)> {
        let sim = self.simulation.as_ref().ok_or_else(|| {
            Error::Config("simulation: section required for this command".into())
        })?;
        if !(sim.dt > 0.0 && sim.dt.is_finite()) {
            return Err(Error::Config(format!(
                "simulation.dt: must be positive and finite, got {}",
                sim.dt
            )));
        }
        if !(sim.t_final >= sim.dt && sim.t_final.is_finite()) {
            return Err(Error::Config(format!(
                "simulation.t_final: must be finite and at least dt, got {}",
                sim.t_final
            )));
        }
        let xi0 = to_vector(&sim.xi0, "simulation.xi0")?;
        if xi0.len() != state_dim {
            return Err(Error::Config(format!(
                "simulation.xi0: expected length {state_dim} for this layout, got {}",
                xi0.len()
            )));
        }
        Ok((sim.dt, sim.t_final, xi0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"
        [plant]
        a = [[-5.0]]
        b = [[1.0]]
        c = [[1.0]]

        [cost]
        q = [[2.0]]
        c = [-20.0]
        v = 100.0

        [controller]
        k_i = [[1.0]]
        k_p = [[1.0]]
        optimizer = "phi1"
        estimator = "bypass"

        [simulation]
        dt = 1e-3
        t_final = 100.0
        xi0 = [0.0, 0.0]
        disturbance = [{ t = 0.0, w = [2.0] }, { t = 50.0, w = [-10.0] }]
    "#;

    #[test]
    fn parses_scalar_example() {
        let cfg = ExperimentConfig::parse(SCALAR).unwrap();
        let ss = cfg.state_space().unwrap();
        assert_eq!((ss.n, ss.m, ss.p), (1, 1, 1));
        assert_eq!(ss.d[(0, 0)], 0.0);
        let cost = cfg.cost().unwrap();
        assert_eq!(cost.q[(0, 0)], 2.0);
        let ctrl = cfg.controller(&ss).unwrap();
        assert_eq!(ctrl.optimizer, OptimizerKind::Phi1);
        assert_eq!(ctrl.estimator, EstimatorMode::Bypass);
        let sched = cfg.schedule(ss.m).unwrap();
        assert_eq!(sched.entries().len(), 2);
        let (dt, tf, xi0) = cfg.simulation_params(2).unwrap();
        assert_eq!((dt, tf), (1e-3, 100.0));
        assert_eq!(xi0.len(), 2);
    }

    #[test]
    fn round_trip_is_identical() {
        let cfg = ExperimentConfig::parse(SCALAR).unwrap();
        let text = cfg.to_toml().unwrap();
        let again = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn phi2_without_rho_names_the_field() {
        let text = SCALAR.replace("optimizer = \"phi1\"", "optimizer = \"phi2\"");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let ss = cfg.state_space().unwrap();
        let err = cfg.controller(&ss).unwrap_err();
        assert!(err.to_string().contains("controller.rho"));
    }

    #[test]
    fn ragged_matrix_rejected() {
        let text = SCALAR.replace("a = [[-5.0]]", "a = [[-5.0], [1.0, 2.0]]");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let err = cfg.state_space().unwrap_err();
        assert!(err.to_string().contains("plant.a"));
    }

    #[test]
    fn unknown_key_rejected() {
        let text = format!("{SCALAR}\nbogus = 1\n");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn wrong_disturbance_dim_rejected() {
        let cfg = ExperimentConfig::parse(SCALAR).unwrap();
        assert!(cfg.schedule(2).is_err());
    }
}
