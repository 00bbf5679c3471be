//! Scenario documents: everything needed to score services, fit costs and
//! solve for a menu, loaded from JSON and fully validated.

use std::collections::HashSet;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::contract::{TypeSet, Valuation};
use crate::cost::{CostFamily, CostParams};
use crate::error::{ensure, ValidationError};
use crate::qos::{Environment, ServiceConfig};
use crate::solver::SolverOptions;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(#[from] ValidationError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub task_label: String,
    pub environment: Environment,
    pub services: Vec<ServiceConfig>,
    pub cost_params: CostParams,
    pub types: TypeSet,
    pub valuation: Valuation,
    pub cost_fit_family: CostFamily,
    pub solver_options: SolverOptions,
    pub liability_enabled: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    task_label: String,
    environment: Environment,
    services: Vec<ServiceConfig>,
    cost_params: CostParams,
    types: TypesDoc,
    #[serde(default)]
    valuation: Option<ValuationDoc>,
    #[serde(default)]
    cost_fit: Option<CostFitDoc>,
    #[serde(default)]
    solver: Option<SolverOptions>,
    #[serde(default)]
    liability_enabled: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TypesDoc {
    thetas: Vec<f64>,
    pmf: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ValuationFamily {
    Log,
    Sqrt,
    Power,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ValuationDoc {
    family: ValuationFamily,
    #[serde(default = "one")]
    a: f64,
    #[serde(default)]
    b: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostFitDoc {
    family: CostFamily,
}

impl ValuationDoc {
    fn into_valuation(self) -> Result<Valuation, ValidationError> {
        let v = match (self.family, self.b) {
            (ValuationFamily::Log, None) => Valuation::Log { a: self.a },
            (ValuationFamily::Sqrt, None) => Valuation::Sqrt { a: self.a },
            (ValuationFamily::Power, Some(b)) => Valuation::Power { a: self.a, b },
            (ValuationFamily::Power, None) => {
                return Err(ValidationError::new("b", "power valuation needs an exponent"))
            }
            (_, Some(_)) => return Err(ValidationError::new("b", "exponent only applies to the power family")),
        };
        v.validate()?;
        Ok(v)
    }
}

/// Parses and validates a scenario document.
pub fn load_scenario(document: &str) -> Result<Scenario, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let doc: ScenarioDoc = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    Ok(doc.validate()?)
}

pub fn load_scenario_file(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_scenario(&text)
}

impl ScenarioDoc {
    fn validate(self) -> Result<Scenario, ValidationError> {
        let mut environment = self.environment;
        environment.validate().map_err(|e| e.under("environment"))?;
        if environment.task_label.is_empty() {
            environment.task_label = self.task_label.clone();
        } else {
            ensure(
                environment.task_label == self.task_label,
                "environment.task_label",
                "disagrees with the top-level task_label",
            )?;
        }

        ensure(!self.services.is_empty(), "services", "at least one service is required")?;
        let mut seen = HashSet::new();
        for (i, svc) in self.services.iter().enumerate() {
            let prefix = format!("services[{i}]");
            svc.validate().map_err(|e| e.under(&prefix))?;
            ensure(
                seen.insert(svc.id),
                &format!("{prefix}.id"),
                format!("duplicate service id {}", svc.id),
            )?;
        }
        self.cost_params.validate().map_err(|e| e.under("cost_params"))?;
        let types = TypeSet::new(self.types.thetas, self.types.pmf).map_err(|e| e.under("types"))?;
        let valuation = match self.valuation {
            Some(doc) => doc.into_valuation().map_err(|e| e.under("valuation"))?,
            None => Valuation::default(),
        };
        let solver_options = self.solver.unwrap_or_default();
        solver_options.validate().map_err(|e| e.under("solver"))?;

        Ok(Scenario {
            task_label: self.task_label,
            environment,
            services: self.services,
            cost_params: self.cost_params,
            types,
            valuation,
            cost_fit_family: self.cost_fit.map(|c| c.family).unwrap_or_default(),
            solver_options,
            liability_enabled: self.liability_enabled,
        })
    }
}
