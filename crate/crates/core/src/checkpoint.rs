//! JSON checkpoints: the encoder configuration plus every named tensor.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augmentation::Discriminator;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::KeyphraseModel;
use crate::nn::Parameters;
use crate::tensor::Tensor;

const FORMAT: &str = "streamkp-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Extractor,
    Discriminator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: CheckpointKind,
    pub encoder: EncoderConfig,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn capture<P: Parameters>(kind: CheckpointKind, encoder: &EncoderConfig, params: &P) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            kind,
            encoder: encoder.clone(),
            tensors: params.state_dict(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ckpt.format != FORMAT || ckpt.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported format {} v{}",
                path.display(),
                ckpt.format,
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    fn expect(&self, kind: CheckpointKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("expected a {kind:?} checkpoint, found {:?}", self.kind)));
        }
        Ok(())
    }

    pub fn into_model(self) -> Result<KeyphraseModel> {
        self.expect(CheckpointKind::Extractor)?;
        let mut model = KeyphraseModel::new(self.encoder)?;
        model.load_state_dict(&self.tensors)?;
        Ok(model)
    }

    pub fn into_discriminator(self) -> Result<Discriminator> {
        self.expect(CheckpointKind::Discriminator)?;
        let mut disc = Discriminator::new(self.encoder)?;
        disc.load_state_dict(&self.tensors)?;
        Ok(disc)
    }
}

pub fn save_model(path: impl AsRef<Path>, model: &KeyphraseModel) -> Result<()> {
    Checkpoint::capture(CheckpointKind::Extractor, model.config(), model).save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<KeyphraseModel> {
    Checkpoint::load(path)?.into_model()
}

pub fn save_discriminator(path: impl AsRef<Path>, disc: &Discriminator) -> Result<()> {
    Checkpoint::capture(CheckpointKind::Discriminator, disc.encoder.config(), disc).save(path)
}

pub fn load_discriminator(path: impl AsRef<Path>) -> Result<Discriminator> {
    Checkpoint::load(path)?.into_discriminator()
}
