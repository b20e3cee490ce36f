//! Scenario files: one JSON document describing the plant, the channel and
//! the run options. Unknown fields are rejected.

use nalgebra::DVector;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::analysis::{AnalysisOptions, OutputWeighting, PassivityForm};
use crate::error::{Error, Result};
use crate::lmi::{SolveOptions, SolverMethod};
use crate::model::{Gain, LossModel, Plant, Schedule};
use crate::numerics::{matrix_from_rows, DefinitenessMargin};
use crate::sim::{EnsembleOptions, InputSignal};
use crate::synthesis::{EtaSpec, SynthesisOptions};

pub type Rows = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub plant: PlantConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub loss: LossConfig,
    /// Feedback gain `K` (m2 × n) for analysis and simulation; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<Rows>,
    /// Dissipation level, or `"maximize"`. Passivity is skipped when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<EtaConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub passivity: PassivityConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
}

/// Plant matrices as row arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub a: Rows,
    pub b1: Rows,
    pub b2: Rows,
    pub c1: Rows,
    pub d11: Rows,
    pub d12: Rows,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    #[default]
    FullPacket,
    /// Slot `k` carries sensor `s1[k]` and actuator `s2[k]` (1-based, 0 = idle).
    Periodic { s1: Vec<usize>, s2: Vec<usize> },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Sensor-to-controller loss probability.
    pub alpha1: f64,
    /// Controller-to-actuator loss probability.
    pub alpha2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum EtaConfig {
    Value(f64),
    Keyword(EtaKeyword),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum EtaKeyword {
    Maximize,
}

impl EtaConfig {
    pub fn parse_flag(s: &str) -> std::result::Result<Self, String> {
        match s {
            "max" | "maximize" => Ok(Self::Keyword(EtaKeyword::Maximize)),
            v => v
                .parse::<f64>()
                .map(Self::Value)
                .map_err(|_| format!("expected a number or `max`, got `{v}`")),
        }
    }

    pub fn spec(self) -> EtaSpec {
        match self {
            Self::Value(v) => EtaSpec::Fixed(v),
            Self::Keyword(EtaKeyword::Maximize) => EtaSpec::Maximize,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum MethodConfig {
    #[default]
    Barrier,
    Subgradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Relative definiteness margin.
    pub margin: f64,
    pub budget: usize,
    pub seed: u64,
    pub restarts: usize,
    pub method: MethodConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolveOptions::default();
        Self { margin: d.margin.epsilon_rel(), budget: d.budget, seed: d.seed, restarts: d.restarts, method: MethodConfig::Barrier }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct PassivityConfig {
    pub output_weighting: OutputWeighting,
    pub form: PassivityForm,
    /// Absolute tolerance when maximizing η.
    pub eta_tol: f64,
}

impl Default for PassivityConfig {
    fn default() -> Self {
        Self { output_weighting: OutputWeighting::default(), form: PassivityForm::default(), eta_tol: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub signal: InputSignal,
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    /// Initial state; zero when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub converge_tol: f64,
    /// Number of leading trials written out with `--dump-traces`.
    pub dump_limit: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            signal: InputSignal::WhiteNoise { sigma: 1.0 },
            horizon: 200,
            trials: 1000,
            seed: 0,
            x0: None,
            converge_tol: 1e-6,
            dump_limit: 10,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))
    }

    pub fn plant(&self) -> Result<Plant> {
        let p = &self.plant;
        let m = |name: &str, rows: &Rows| {
            matrix_from_rows(rows).map_err(|e| Error::InvalidMatrix(format!("plant.{name}: {e}")))
        };
        Plant::new(m("a", &p.a)?, m("b1", &p.b1)?, m("b2", &p.b2)?, m("c1", &p.c1)?, m("d11", &p.d11)?, m("d12", &p.d12)?)
    }

    pub fn schedule(&self, plant: &Plant) -> Result<Schedule> {
        match &self.schedule {
            ScheduleConfig::FullPacket => Ok(Schedule::FullPacket),
            ScheduleConfig::Periodic { s1, s2 } => Schedule::periodic(s1.clone(), s2.clone(), plant.p2(), plant.m2()),
        }
    }

    pub fn loss(&self) -> Result<LossModel> {
        LossModel::new(self.loss.alpha1, self.loss.alpha2)
    }

    pub fn gain(&self, plant: &Plant) -> Result<Gain> {
        let g = match &self.gain {
            Some(rows) => Gain::new(matrix_from_rows(rows).map_err(|e| Error::InvalidMatrix(format!("gain: {e}")))?)?,
            None => Gain::zeros(plant.m2(), plant.n()),
        };
        g.check_dims(plant)?;
        Ok(g)
    }

    pub fn solve_options(&self) -> Result<SolveOptions> {
        let s = &self.solver;
        Ok(SolveOptions {
            budget: s.budget,
            seed: s.seed,
            margin: DefinitenessMargin::new(s.margin)?,
            restarts: s.restarts,
            method: match s.method {
                MethodConfig::Barrier => SolverMethod::Barrier,
                MethodConfig::Subgradient => SolverMethod::Subgradient,
            },
            ..SolveOptions::default()
        })
    }

    pub fn analysis_options(&self) -> Result<AnalysisOptions> {
        Ok(AnalysisOptions {
            solve: self.solve_options()?,
            output_weighting: self.passivity.output_weighting,
            form: self.passivity.form,
        })
    }

    pub fn synthesis_options(&self) -> Result<SynthesisOptions> {
        Ok(SynthesisOptions {
            analysis: self.analysis_options()?,
            eta_tol: self.passivity.eta_tol,
            ..SynthesisOptions::default()
        })
    }

    pub fn ensemble_options(&self, eta: f64) -> EnsembleOptions {
        let s = &self.simulation;
        EnsembleOptions {
            trials: s.trials,
            base_seed: s.seed,
            eta,
            x0: s.x0.as_ref().map(|v| DVector::from_vec(v.clone())),
            converge_tol: s.converge_tol,
        }
    }
}

/// JSON Schema for [`ScenarioConfig`], as shipped in `schema/scenario.schema.json`.
pub fn scenario_schema() -> String {
    let schema = schemars::schema_for!(ScenarioConfig);
    serde_json::to_string_pretty(&schema).expect("schema serializes") + "\n"
}
