use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_network, BuildOptions, Dims, NetworkInstance};
use crate::data::ChannelStats;
use crate::error::{config_err, Error, Result};
use crate::search_space::Genotype;
use crate::tensor::Tensor;

/// JSON form of a trained network: the genotype and build options rebuild
/// the structure, named flat arrays restore the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkCheckpoint {
    pub genotype: Genotype,
    pub dims: Dims,
    pub options: BuildOptions,
    pub params: BTreeMap<String, Tensor>,
    /// Statistics used to standardize the training data, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_stats: Option<Vec<ChannelStats>>,
}

impl NetworkCheckpoint {
    pub fn from_network(net: &NetworkInstance, train_stats: Option<Vec<ChannelStats>>) -> Self {
        NetworkCheckpoint {
            genotype: net.genotype.clone(),
            dims: net.dims,
            options: net.options,
            params: net.names.iter().cloned().zip(net.params.iter().cloned()).collect(),
            train_stats,
        }
    }

    pub fn restore(&self) -> Result<NetworkInstance> {
        let mut net = build_network(&self.genotype, self.dims, self.options)?;
        if self.params.len() != net.params.len() {
            return Err(config_err!("checkpoint has {} parameters, network expects {}", self.params.len(), net.params.len()));
        }
        for (name, slot) in net.names.iter().zip(net.params.iter_mut()) {
            let t = self.params.get(name).ok_or_else(|| config_err!("checkpoint lacks parameter `{name}`"))?;
            if t.shape() != slot.shape() {
                return Err(config_err!("parameter `{name}` has shape {:?}, expected {:?}", t.shape(), slot.shape()));
            }
            *slot = t.clone();
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let s = serde_json::to_string(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| config_err!("{}: {e}", path.display()))
    }
}
