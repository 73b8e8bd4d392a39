//! JSON document for fitted calibrators. Parameter values are stored as
//! hexadecimal float strings so they round-trip bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cagcn::CagcnParams;
use super::hexfloat::{format_hex_float, parse_hex_float};
use super::{Calibrator, CalibratorConfig, FitSummary, GatsParams, Method, Params};
use crate::dataset::{to_json_bytes, FORMAT_VERSION};
use crate::error::{CalibError, Result};
use crate::kernels::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratorFile {
    pub format_version: u32,
    pub method: Method,
    pub seed: u64,
    pub num_classes: usize,
    pub config: CalibratorConfig,
    pub parameters: BTreeMap<String, Vec<String>>,
    pub fit: Option<FitSummary>,
}

fn hex(values: &[f64]) -> Vec<String> {
    values.iter().copied().map(format_hex_float).collect()
}

impl From<&Calibrator> for CalibratorFile {
    fn from(c: &Calibrator) -> Self {
        let mut p = BTreeMap::new();
        let mut put = |name: &str, v: &[f64]| {
            p.insert(name.to_string(), hex(v));
        };
        match &c.params {
            Params::Ts { temperature } => put("temperature", &[*temperature]),
            Params::Vs { weights, bias } => {
                put("weights", weights);
                put("bias", bias);
            }
            Params::Ets { temperature, weights } => {
                put("temperature", &[*temperature]);
                put("weights", weights);
            }
            Params::Cagcn(cp) => {
                put("w1", cp.w1.data());
                put("b1", &cp.b1);
                put("w2", &cp.w2);
                put("b2", &[cp.b2]);
            }
            Params::Gats(g) => {
                put("t0", &[g.t0]);
                put("omega", &[g.omega]);
                put("gamma_t", &[g.gamma_train]);
                put("gamma_n", &[g.gamma_neighbor]);
                put("theta", g.theta.data());
            }
        }
        CalibratorFile {
            format_version: FORMAT_VERSION,
            method: c.config.method,
            seed: c.config.seed,
            num_classes: c.num_classes,
            config: c.config,
            parameters: p,
            fit: c.fit,
        }
    }
}

impl CalibratorFile {
    fn array(&self, name: &str, len: usize) -> Result<Vec<f64>> {
        let raw = self
            .parameters
            .get(name)
            .ok_or_else(|| CalibError::InvalidConfig(format!("missing parameter `{name}`")))?;
        if raw.len() != len {
            return Err(CalibError::ShapeMismatch(format!(
                "parameter `{name}` has {} values, expected {len}",
                raw.len()
            )));
        }
        raw.iter().map(|s| parse_hex_float(s)).collect()
    }

    fn scalar(&self, name: &str) -> Result<f64> {
        Ok(self.array(name, 1)?[0])
    }

    pub fn to_calibrator(&self) -> Result<Calibrator> {
        if self.format_version != FORMAT_VERSION {
            return Err(CalibError::InvalidConfig(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        let k = self.num_classes;
        let cfg = self.config;
        let params = match self.method {
            Method::Ts => Params::Ts { temperature: self.scalar("temperature")? },
            Method::Vs => Params::Vs { weights: self.array("weights", k)?, bias: self.array("bias", k)? },
            Method::Ets => {
                let w = self.array("weights", 3)?;
                Params::Ets { temperature: self.scalar("temperature")?, weights: [w[0], w[1], w[2]] }
            }
            Method::Cagcn => {
                let hd = cfg.cagcn_hidden;
                Params::Cagcn(CagcnParams {
                    w1: Matrix::new(k, hd, self.array("w1", k * hd)?)?,
                    b1: self.array("b1", hd)?,
                    w2: self.array("w2", hd)?,
                    b2: self.scalar("b2")?,
                })
            }
            Method::Gats => Params::Gats(GatsParams {
                t0: self.scalar("t0")?,
                omega: self.scalar("omega")?,
                gamma_train: self.scalar("gamma_t")?,
                gamma_neighbor: self.scalar("gamma_n")?,
                theta: Matrix::new(cfg.heads, k, self.array("theta", cfg.heads * k)?)?,
            }),
        };
        Ok(Calibrator { config: cfg, num_classes: k, params, fit: self.fit })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        to_json_bytes(self)
    }

    pub fn read(path: &Path) -> Result<CalibratorFile> {
        let text = std::fs::read_to_string(path).map_err(|e| CalibError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CalibError::Json { path: path.into(), source: e })
    }
}
