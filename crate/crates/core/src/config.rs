//! Serializable model descriptions.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dsm::{make_cpg_model, CpgParams, DsmModel, TableContext};
use crate::error::{Error, Result};
use crate::ism::{GeneratorSpec, IsmModel};
use crate::seq::Alphabet;

/// `{"model":"jc69+cpg","lambda":0.5}` or
/// `{"model":"table","k":2,"phi":{"ACG:T":0.5,...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", deny_unknown_fields)]
pub enum ModelConfig {
    #[serde(rename = "jc69+cpg")]
    JcCpg {
        lambda: f64,
        #[serde(default = "unit")]
        base_rate: f64,
    },
    #[serde(rename = "table")]
    Table {
        k: usize,
        phi: HashMap<String, f64>,
        #[serde(default)]
        alphabet: Option<String>,
        #[serde(default)]
        generator: Option<GeneratorSpec>,
        #[serde(default)]
        phi_min: Option<f64>,
        #[serde(default)]
        phi_max: Option<f64>,
    },
}

fn unit() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn cpg(lambda: f64) -> Self {
        ModelConfig::JcCpg { lambda, base_rate: 1.0 }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn lambda(&self) -> Option<f64> {
        match self {
            ModelConfig::JcCpg { lambda, .. } => Some(*lambda),
            ModelConfig::Table { .. } => None,
        }
    }

    pub fn alphabet(&self) -> Result<Alphabet> {
        match self {
            ModelConfig::Table { alphabet: Some(s), .. } => Alphabet::new(s),
            _ => Ok(Alphabet::dna()),
        }
    }

    pub fn build(&self) -> Result<DsmModel> {
        match self {
            ModelConfig::JcCpg { lambda, base_rate } => make_cpg_model(CpgParams { lambda: *lambda, base_rate: *base_rate }),
            ModelConfig::Table { k, phi, generator, phi_min, phi_max, .. } => {
                let alphabet = self.alphabet()?;
                let declared = match (phi_min, phi_max) {
                    (Some(lo), Some(hi)) => Some((*lo, *hi)),
                    (None, None) => None,
                    _ => return Err(Error::Context("give both phi_min and phi_max or neither".into())),
                };
                let table = TableContext::from_keys(*k, &alphabet, phi, declared)?;
                let spec = generator.clone().unwrap_or(GeneratorSpec::Jc69 { rate: 1.0 });
                let ism = IsmModel::shared(spec.build(alphabet.size())?);
                DsmModel::new(ism, Arc::new(table))
            }
        }
    }
}
