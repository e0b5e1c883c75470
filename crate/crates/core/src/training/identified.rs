use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::loss::{ENCODER_PREFIX, MODEL_PREFIX};
use super::scaler::Scaler;
use crate::autodiff::{Parameters, Tensor};
use crate::encoder::{Encoder, WINDOW_ORDER};
use crate::error::{Error, Result};
use crate::model::KoopmanModel;

pub const MODEL_FORMAT: &str = "koopid-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A trained model with its encoder and the data scaling it was trained
/// under. This is the unit written to and read from model files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedModel {
    pub format: String,
    pub version: u32,
    pub model: KoopmanModel,
    pub encoder: Encoder,
    pub scaler: Scaler,
}

impl IdentifiedModel {
    pub fn new(model: KoopmanModel, encoder: Encoder, scaler: Scaler) -> Result<Self> {
        let im = IdentifiedModel {
            format: MODEL_FORMAT.into(),
            version: MODEL_FORMAT_VERSION,
            model,
            encoder,
            scaler,
        };
        im.validate()?;
        Ok(im)
    }

    /// Re-checks every dimension, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT || self.version != MODEL_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported model file `{}` version {}",
                self.format, self.version
            )));
        }
        let m = &self.model;
        let rebuilt = KoopmanModel::from_parts(
            m.a.clone(),
            m.c.clone(),
            m.c_identity,
            m.b.clone(),
            m.k.clone(),
            m.n_u(),
        )?;
        if rebuilt != *m {
            return Err(Error::Dimension("model header disagrees with its matrices".into()));
        }
        if self.encoder.order() != WINDOW_ORDER {
            return Err(Error::Data(format!(
                "encoder window order `{}` is not supported",
                self.encoder.order()
            )));
        }
        Encoder::from_net(
            self.encoder.lag(),
            self.encoder.n_u(),
            self.encoder.n_y(),
            self.encoder.net().clone(),
        )?;
        if self.encoder.n_z() != m.n_z()
            || self.encoder.n_u() != m.n_u()
            || self.encoder.n_y() != m.n_y()
            || self.scaler.n_u() != m.n_u()
            || self.scaler.n_y() != m.n_y()
        {
            return Err(Error::Dimension("model, encoder and scaler dimensions disagree".into()));
        }
        let mut finite = true;
        self.visit_params("", &mut |_, t| finite &= t.is_finite());
        if !finite {
            return Err(Error::Data("model file contains non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn lag(&self) -> usize {
        self.encoder.lag()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let im: IdentifiedModel = serde_json::from_str(text)?;
        im.validate()?;
        Ok(im)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        IdentifiedModel::from_json(&fs::read_to_string(path)?)
    }
}

impl Parameters for IdentifiedModel {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.model.visit_params(&format!("{prefix}{MODEL_PREFIX}"), f);
        self.encoder.visit_params(&format!("{prefix}{ENCODER_PREFIX}"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.model.visit_params_mut(&format!("{prefix}{MODEL_PREFIX}"), f);
        self.encoder
            .visit_params_mut(&format!("{prefix}{ENCODER_PREFIX}"), f);
    }
}
