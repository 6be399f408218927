//! Field schema: the ordered list of fields, their key lexicons and the data
//! types their values may take. Class 0 is background; field `i` is class `i`.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::typer::{DataType, TypeSet};

const INVOICE_SCHEMA: &str = include_str!("../data/invoice_schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldDef {
    pub id: usize,
    pub name: String,
    pub keys: Vec<String>,
    pub allowed_types: Vec<DataType>,
}

impl FieldDef {
    pub fn type_set(&self) -> TypeSet {
        TypeSet::of(&self.allowed_types)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSchema {
    pub fields: Vec<FieldDef>,
}

impl FieldSchema {
    /// The seven invoice fields with their key lists and value types.
    pub fn invoice_default() -> Self {
        Self::from_json(INVOICE_SCHEMA).expect("bundled schema is valid")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let schema: FieldSchema =
            serde_json::from_str(s).map_err(|e| Error::validation(format!("schema: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s).map_err(|e| e.context(path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.fields.is_empty() {
            return Err(Error::validation("schema has no fields"));
        }
        let mut names = HashSet::new();
        for (i, f) in self.fields.iter().enumerate() {
            if f.id != i + 1 {
                return Err(Error::validation(format!(
                    "field {:?}: ids must be 1..N in order, found {} at position {}",
                    f.name,
                    f.id,
                    i + 1
                )));
            }
            if !names.insert(f.name.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate field name {:?}",
                    f.name
                )));
            }
            if f.keys.is_empty() {
                return Err(Error::validation(format!("field {:?} has no keys", f.name)));
            }
            for k in &f.keys {
                if k.is_empty() || k.trim() != k || k.to_lowercase() != *k {
                    return Err(Error::validation(format!(
                        "field {:?}: key {k:?} must be lowercase, trimmed and non-empty",
                        f.name
                    )));
                }
            }
            if f.allowed_types.is_empty() || f.allowed_types.contains(&DataType::Other) {
                return Err(Error::validation(format!(
                    "field {:?}: allowed_types must be a non-empty subset of number/date/money",
                    f.name
                )));
            }
        }
        Ok(())
    }

    /// Number of fields, excluding background.
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// Number of classes including background.
    pub fn num_classes(&self) -> usize {
        self.fields.len() + 1
    }

    pub fn field(&self, class: usize) -> Option<&FieldDef> {
        class.checked_sub(1).and_then(|i| self.fields.get(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn hash(&self) -> [u8; 32] {
        let canon = serde_json::to_vec(self).expect("schema serializes");
        Sha256::digest(&canon).into()
    }
}
