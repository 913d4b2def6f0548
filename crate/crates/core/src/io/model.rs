//! JSON model files. Floats are written in shortest round-trip form and
//! parsed exactly, so a saved network reloads bit-for-bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MasoError, Result};
use crate::linalg::{Matrix, Shape3};
use crate::network::{LayerSpec, Network};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    /// Seed the network was initialised and trained with, if known.
    pub seed: Option<u64>,
    /// Hex of [`Network::fingerprint`].
    pub fingerprint: String,
    pub input_shape: Shape3,
    pub layers: Vec<LayerSpec>,
    pub w_final: Matrix,
    pub b_final: Vec<f64>,
}

impl ModelFile {
    pub fn from_network(net: &Network, seed: Option<u64>) -> Self {
        ModelFile {
            version: MODEL_FORMAT_VERSION,
            seed,
            fingerprint: format!("{:016x}", net.fingerprint()),
            input_shape: net.input_shape(),
            layers: net.layers().to_vec(),
            w_final: net.w_final().clone(),
            b_final: net.b_final().to_vec(),
        }
    }

    /// Rebuilds the network and checks the stored fingerprint.
    pub fn into_network(self) -> Result<Network> {
        if self.version != MODEL_FORMAT_VERSION {
            return Err(MasoError::Schema(format!(
                "model version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                self.version
            )));
        }
        let stored = u64::from_str_radix(&self.fingerprint, 16)
            .map_err(|_| MasoError::Schema(format!("fingerprint {:?} is not hex", self.fingerprint)))?;
        let net = Network::new(self.input_shape, self.layers, self.w_final, self.b_final)?;
        if net.fingerprint() != stored {
            return Err(MasoError::FingerprintMismatch(stored, net.fingerprint()));
        }
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn save_model(net: &Network, seed: Option<u64>, path: &Path) -> Result<()> {
    std::fs::write(path, ModelFile::from_network(net, seed).to_json()?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Network> {
    load_model_file(path)?.into_network()
}

pub fn load_model_file(path: &Path) -> Result<ModelFile> {
    ModelFile::from_json(&std::fs::read_to_string(path)?)
}
