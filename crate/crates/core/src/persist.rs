//! Versioned JSON model files.
//!
//! A file stores everything needed to predict: training data in raw units,
//! scaling bounds, metric weights, `k` and the decision policy, plus
//! descriptive tuning metadata. Non-finite reals are written as the strings
//! `"inf"` and `"-inf"`.

use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{Arm, ScalingParams, TrialDataset};
use crate::error::{Error, Result};
use crate::estimator::{CnnModel, DecisionPolicy, RegimeModel};
use crate::neighbors::DiagonalMetric;
use crate::tuning::Method;

pub const FORMAT_NAME: &str = "cknn-model";
pub const FORMAT_VERSION: u32 = 1;

/// A real that may be infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtF64(pub f64);

impl Serialize for ExtF64 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            v if v.is_finite() => s.serialize_f64(v),
            v if v == f64::INFINITY => s.serialize_str("inf"),
            v if v == f64::NEG_INFINITY => s.serialize_str("-inf"),
            _ => s.serialize_str("nan"),
        }
    }
}

impl<'de> Deserialize<'de> for ExtF64 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(ExtF64(v)),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(ExtF64(f64::INFINITY)),
                "-inf" => Ok(ExtF64(f64::NEG_INFINITY)),
                "nan" => Ok(ExtF64(f64::NAN)),
                other => Err(serde::de::Error::custom(format!("expected a number, got `{other}`"))),
            },
        }
    }
}

/// How the model was obtained; informational only.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub method: Option<Method>,
    pub delta: Option<ExtF64>,
    pub importance: Option<Vec<ExtF64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum RegimeFile {
    Cnn {
        k: usize,
        policy: DecisionPolicy,
        n_arms: usize,
        sigma2: Vec<f64>,
        scaling: ScalingParams,
        covariate_names: Vec<String>,
        covariates: Vec<Vec<f64>>,
        treatments: Vec<Arm>,
        outcomes: Vec<f64>,
        propensities: Vec<f64>,
    },
    Constant {
        arm: Arm,
        n_arms: usize,
        p: usize,
    },
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(default)]
    meta: ModelMeta,
    regime: RegimeFile,
}

#[derive(Deserialize)]
struct Header {
    format: Option<String>,
    version: Option<u32>,
}

fn to_file(model: &RegimeModel, meta: &ModelMeta) -> ModelFile {
    let regime = match model {
        RegimeModel::Constant { arm, n_arms, p } => RegimeFile::Constant {
            arm: *arm,
            n_arms: *n_arms,
            p: *p,
        },
        RegimeModel::Cnn(m) => {
            let t = m.training();
            RegimeFile::Cnn {
                k: m.k(),
                policy: m.policy(),
                n_arms: t.n_arms(),
                sigma2: m.metric().sigma2().to_vec(),
                scaling: m.scaling().clone(),
                covariate_names: t.covariate_names().to_vec(),
                covariates: t.covariates().rows().into_iter().map(|r| r.to_vec()).collect(),
                treatments: t.treatments().to_vec(),
                outcomes: t.outcomes().to_vec(),
                propensities: t.propensities().to_vec(),
            }
        }
    };
    ModelFile {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        meta: meta.clone(),
        regime,
    }
}

fn from_file(file: ModelFile) -> Result<(RegimeModel, ModelMeta)> {
    let model = match file.regime {
        RegimeFile::Constant { arm, n_arms, p } => RegimeModel::constant(arm, n_arms, p)?,
        RegimeFile::Cnn {
            k,
            policy,
            n_arms,
            sigma2,
            scaling,
            covariate_names,
            covariates,
            treatments,
            outcomes,
            propensities,
        } => {
            let n = covariates.len();
            let p = sigma2.len();
            if covariates.iter().any(|r| r.len() != p) || scaling.min.len() != p || scaling.max.len() != p {
                return Err(Error::Model("inconsistent covariate dimensions".into()));
            }
            let x = Array2::from_shape_vec((n, p), covariates.concat())
                .map_err(|e| Error::Model(e.to_string()))?;
            let training =
                TrialDataset::with_names(covariate_names, x, treatments, outcomes, propensities, n_arms)?;
            let metric = DiagonalMetric::new(sigma2)?;
            RegimeModel::cnn(CnnModel::new(training, scaling, metric, k, policy)?)
        }
    };
    Ok((model, file.meta))
}

pub fn to_json(model: &RegimeModel, meta: &ModelMeta) -> Result<String> {
    serde_json::to_string(&to_file(model, meta)).map_err(|e| Error::Model(e.to_string()))
}

pub fn from_json(text: &str) -> Result<(RegimeModel, ModelMeta)> {
    let header: Header = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
    if header.format.as_deref() != Some(FORMAT_NAME) {
        return Err(Error::Model(format!("not a {FORMAT_NAME} file")));
    }
    let version = header
        .version
        .ok_or_else(|| Error::Model("missing format version".into()))?;
    if version > FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
    from_file(file)
}

pub fn write_model<W: Write>(mut writer: W, model: &RegimeModel, meta: &ModelMeta) -> Result<()> {
    let text = to_json(model, meta)?;
    writer
        .write_all(text.as_bytes())
        .map_err(|source| Error::Io {
            path: "<model>".into(),
            source,
        })
}

pub fn read_model<R: Read>(mut reader: R) -> Result<(RegimeModel, ModelMeta)> {
    let mut text = String::new();
    reader.read_to_string(&mut text).map_err(|source| Error::Io {
        path: "<model>".into(),
        source,
    })?;
    from_json(&text)
}

pub fn load_model(path: impl AsRef<std::path::Path>) -> Result<(RegimeModel, ModelMeta)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_json(&text)
}
