//! JSON configs for each subcommand.

use std::path::Path;

use nestocc::cltlab::{ExperimentPlan, PlanLaw, Term};
use nestocc::laws::WeightLaw;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupancyConfig {
    pub schema: u32,
    pub n: u64,
    pub j_max: usize,
    pub law: WeightLaw,
    pub seed: u64,
    pub replicates: usize,
    pub h: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrwConfig {
    pub schema: u32,
    pub law: PlanLaw,
    /// Deepest generation counted.
    #[serde(alias = "depth")]
    pub j: usize,
    pub t: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Grid step for comparing mean counts with `V_j(t)`; skipped when absent.
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub budget: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewalConfig {
    pub schema: u32,
    pub law: PlanLaw,
    pub h: f64,
    pub t_max: f64,
    pub j_max: usize,
    /// Subset of [`RenewalCheck`]; empty runs all of them.
    #[serde(default)]
    pub checks: Vec<RenewalCheck>,
    /// Also write one `t,value` CSV per grid.
    #[serde(default)]
    pub dump_grids: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenewalCheck {
    Lorden,
    VBand,
    PowerBand,
    Growth,
    Subadditivity,
    Expansion,
}

impl RenewalCheck {
    pub const ALL: [RenewalCheck; 6] = [
        RenewalCheck::Lorden,
        RenewalCheck::VBand,
        RenewalCheck::PowerBand,
        RenewalCheck::Growth,
        RenewalCheck::Subadditivity,
        RenewalCheck::Expansion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RenewalCheck::Lorden => "lorden",
            RenewalCheck::VBand => "v_band",
            RenewalCheck::PowerBand => "power_band",
            RenewalCheck::Growth => "growth",
            RenewalCheck::Subadditivity => "subadditivity",
            RenewalCheck::Expansion => "expansion",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub schema: u32,
    pub plan: ExperimentPlan,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VanishConfig {
    pub schema: u32,
    pub term: Term,
    pub plan: ExperimentPlan,
}

fn default_bound() -> f64 {
    5.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapConfig {
    pub schema: u32,
    pub law: PlanLaw,
    pub h: f64,
    pub t_max: f64,
    pub j: usize,
    pub n_list: Vec<f64>,
    #[serde(default = "default_bound")]
    pub bound: f64,
}

/// Byte offset of a 1-based line/column position.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len();
    }
    text.len()
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T, CliError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value: T = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let at = byte_offset(text, inner.line(), inner.column());
        let location = if path.is_empty() || path == "." || inner.is_syntax() || inner.is_eof() {
            format!("byte {at}")
        } else {
            format!("{path} (byte {at})")
        };
        CliError::ConfigInvalid {
            location,
            message: inner.to_string(),
        }
    })?;
    de.end().map_err(|e| CliError::ConfigInvalid {
        location: format!("byte {}", byte_offset(text, e.line(), e.column())),
        message: e.to_string(),
    })?;
    Ok(value)
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text)
}

pub fn check_schema(schema: u32) -> Result<(), CliError> {
    if schema != SCHEMA {
        return Err(CliError::ConfigInvalid {
            location: "schema".into(),
            message: format!("unsupported schema {schema}, expected {SCHEMA}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn syntax_error_names_byte_offset() {
        let err = parse::<RenewalConfig>("{\n  \"schema\": 1,\n  \"h\": 0.1,,\n}").unwrap_err();
        match err {
            CliError::ConfigInvalid { location, .. } => assert_eq!(location, "byte 28"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn data_error_names_field() {
        let text = r#"{"schema":1,"law":{"kind":"gem","theta":1},"h":"x","t_max":5,"j_max":1}"#;
        match parse::<RenewalConfig>(text).unwrap_err() {
            CliError::ConfigInvalid { location, .. } => assert!(location.starts_with("h "), "{location}"),
            e => panic!("{e}"),
        }
        let text = r#"{"schema":1,"law":{"kind":"gem","theta":1},"h":0.1,"t_max":5,"j_max":1,"extra":0}"#;
        assert!(matches!(
            parse::<RenewalConfig>(text),
            Err(CliError::ConfigInvalid { .. })
        ));
    }

    #[test]
    fn offsets() {
        assert_eq!(byte_offset("ab\ncd", 2, 2), 4);
        assert_eq!(byte_offset("ab\ncd", 1, 1), 0);
    }
}
