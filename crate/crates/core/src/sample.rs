//! Task instances and rollout records as they appear on the wire.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::table::{table_from_json, table_to_json, CellRef, Table, TableError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    ShortQa,
    LongQa,
    FactVerification,
    TableToText,
    TextToSql,
}

/// One gold string or several accepted variants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GoldAnswer {
    One(String),
    Many(Vec<String>),
}

impl GoldAnswer {
    pub fn variants(&self) -> &[String] {
        match self {
            GoldAnswer::One(s) => std::slice::from_ref(s),
            GoldAnswer::Many(v) => v,
        }
    }
}

impl Default for GoldAnswer {
    fn default() -> Self {
        GoldAnswer::Many(Vec::new())
    }
}

mod tables_as_grids {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tables: &[Table], s: S) -> Result<S::Ok, S::Error> {
        let grids: Vec<serde_json::Value> = tables.iter().map(table_to_json).collect();
        grids.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Table>, D::Error> {
        let raw: Vec<serde_json::Value> = Vec::deserialize(d)?;
        raw.iter()
            .map(table_from_json)
            .collect::<Result<Vec<_>, TableError>>()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub task_type: TaskType,
    #[serde(default)]
    pub question: String,
    #[serde(default, with = "tables_as_grids")]
    pub tables: Vec<Table>,
    #[serde(default)]
    pub gold_answer: GoldAnswer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_positions: Option<Vec<CellRef>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_sql: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub db_ref: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SampleError {
    #[error("sample {0}: text_to_sql needs gold_sql and db_ref")]
    MissingSqlFields(String),
    #[error("sample {id}: gold position {position:?} is not in any table")]
    GoldPositionNotInTable { id: String, position: CellRef },
    #[error("sample {0}: no gold answer")]
    NoGold(String),
}

impl Sample {
    /// Checks the cross-field invariants that serde cannot express.
    pub fn validate(&self) -> Result<(), SampleError> {
        match self.task_type {
            TaskType::TextToSql => {
                if self.gold_sql.is_none() || self.db_ref.is_none() {
                    return Err(SampleError::MissingSqlFields(self.id.clone()));
                }
            }
            _ => {
                if self.gold_answer.variants().is_empty() {
                    return Err(SampleError::NoGold(self.id.clone()));
                }
                if let Some(gold) = &self.gold_positions {
                    if let Some(bad) = gold
                        .iter()
                        .find(|p| !self.tables.iter().any(|t| t.contains(p)))
                    {
                        return Err(SampleError::GoldPositionNotInTable {
                            id: self.id.clone(),
                            position: bad.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Gold SQL for text-to-SQL samples, falling back to the first gold
    /// answer variant.
    pub fn reference_sql(&self) -> Option<&str> {
        self.gold_sql
            .as_deref()
            .or_else(|| self.gold_answer.variants().first().map(String::as_str))
    }
}

/// One model response for a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub sample_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}
