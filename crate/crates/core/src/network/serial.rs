//! Versioned JSON document for networks.
//!
//! Nodes are stored in the canonical order of the tree text form, so two equal
//! networks produce identical documents.

use serde::{Deserialize, Serialize};

use super::{OrthState, TreeTensorNetwork};
use crate::basis::FeatureBasis;
use crate::error::{Error, Result};
use crate::tensor::FullTensor;
use crate::tree::DimensionTree;

pub const FORMAT_NAME: &str = "tensortree-network";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkDocument {
    pub format: String,
    pub version: u32,
    pub tree: String,
    pub bases: Vec<FeatureBasis>,
    pub cores: Vec<CoreEntry>,
    pub orth_state: DocOrth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocOrth {
    None,
    All,
    /// Canonical index of the node.
    Node(usize),
}

impl TreeTensorNetwork {
    pub fn to_document(&self) -> NetworkDocument {
        let order = self.tree.canonical_order();
        let mut pos = vec![0; order.len()];
        for (k, &id) in order.iter().enumerate() {
            pos[id] = k;
        }
        NetworkDocument {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            tree: self.tree.to_text(),
            bases: self.bases.clone(),
            cores: order
                .iter()
                .map(|&id| CoreEntry { shape: self.cores[id].shape().to_vec(), data: self.cores[id].data().to_vec() })
                .collect(),
            orth_state: match self.orth {
                OrthState::None => DocOrth::None,
                OrthState::All => DocOrth::All,
                OrthState::Node(a) => DocOrth::Node(pos[a]),
            },
        }
    }

    pub fn from_document(doc: &NetworkDocument) -> Result<Self> {
        if doc.format != FORMAT_NAME {
            return Err(Error::Parse(format!("unknown format {:?}", doc.format)));
        }
        if doc.version != FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported version {}", doc.version)));
        }
        let tree = DimensionTree::from_text(&doc.tree)?;
        if doc.cores.len() != tree.len() {
            return Err(Error::Parse(format!("{} cores for {} nodes", doc.cores.len(), tree.len())));
        }
        let cores = doc
            .cores
            .iter()
            .map(|c| FullTensor::new(c.shape.clone(), c.data.clone()))
            .collect::<Result<Vec<_>>>()?;
        let orth = match doc.orth_state {
            DocOrth::None => OrthState::None,
            DocOrth::All => OrthState::All,
            DocOrth::Node(k) if k < tree.len() && k != tree.root() => OrthState::Node(k),
            DocOrth::Node(k) => return Err(Error::Parse(format!("bad orthogonality node {k}"))),
        };
        TreeTensorNetwork::from_parts(tree, doc.bases.clone(), cores, orth)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: NetworkDocument = serde_json::from_str(s)?;
        Self::from_document(&doc)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
