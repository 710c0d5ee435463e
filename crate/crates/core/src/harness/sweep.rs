//! One run per value of a scenario field, in parallel.

use rayon::prelude::*;
use thiserror::Error;

use super::metrics::MetricsReport;
use super::scenario::{Scenario, ScenarioError};
use super::world::run_scenario;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("axis {0} does not name a scenario field")]
    UnknownAxis(String),
    #[error("value {value} for {axis}: {source}")]
    Scenario {
        axis: String,
        value: String,
        #[source]
        source: Box<ScenarioError>,
    },
}

/// Sets the dotted `path` (e.g. `config.batch_size`) in a scenario's TOML
/// tree. The field must already be present in the serialized form.
pub fn with_field(template: &Scenario, path: &str, value: toml::Value) -> Result<Scenario, SweepError> {
    let mut tree = toml::Value::try_from(template).expect("scenarios serialize");
    let mut cursor = &mut tree;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cursor.as_table_mut().ok_or_else(|| SweepError::UnknownAxis(path.into()))?;
        if i + 1 == parts.len() {
            if !table.contains_key(*part) {
                return Err(SweepError::UnknownAxis(path.into()));
            }
            table.insert(part.to_string(), value.clone());
            break;
        }
        cursor = table.get_mut(*part).ok_or_else(|| SweepError::UnknownAxis(path.into()))?;
    }
    tree.try_into().map_err(|e: toml::de::Error| SweepError::Scenario {
        axis: path.into(),
        value: value.to_string(),
        source: Box::new(e.into()),
    })
}

/// Parses a comma-separated list of TOML scalars. Anything that does not
/// parse as a TOML value is taken as a bare string.
pub fn parse_values(list: &str) -> Vec<toml::Value> {
    list.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| {
            format!("v = {v}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(v.to_string()))
        })
        .collect()
}

pub fn sweep(template: &Scenario, axis: &str, values: &[toml::Value]) -> Result<Vec<MetricsReport>, SweepError> {
    let scenarios: Vec<Scenario> = values
        .iter()
        .map(|v| {
            let mut s = with_field(template, axis, v.clone())?;
            s.name = format!("{}[{}={}]", template.name, axis, v);
            Ok(s)
        })
        .collect::<Result<_, SweepError>>()?;
    scenarios
        .par_iter()
        .zip(values.par_iter())
        .map(|(s, v)| {
            run_scenario(s).map(|o| o.metrics).map_err(|e| SweepError::Scenario {
                axis: axis.into(),
                value: v.to_string(),
                source: Box::new(e),
            })
        })
        .collect()
}

pub fn to_csv(reports: &[MetricsReport]) -> String {
    let mut s = MetricsReport::csv_header();
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}
