use serde::{Deserialize, Serialize};

use crate::data::{IdentityDataset, ImageTensor, TargetSet};
use crate::error::{Error, Result};

/// Which target image a probe is compared with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairingMode {
    /// A→A: the canonical image of the encoded target set.
    #[serde(rename = "A->A")]
    SameImage,
    /// A→A′: an image of the target identity that was not encoded.
    #[serde(rename = "A->A'")]
    OtherImage,
}

impl PairingMode {
    pub fn label(&self) -> &'static str {
        match self {
            PairingMode::SameImage => "A->A",
            PairingMode::OtherImage => "A->A'",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPair {
    pub probe_index: usize,
    pub probe_label: usize,
    pub probe: ImageTensor,
    pub target: ImageTensor,
}

/// Pairs every probe (optionally excluding the target identity, matched by name)
/// with one target image.
pub fn make_eval_pairs(
    probes: &IdentityDataset,
    target: &TargetSet,
    mode: PairingMode,
    exclude_target: bool,
) -> Result<Vec<EvalPair>> {
    if probes.is_empty() {
        return Err(Error::Config("probe set is empty".into()));
    }
    let target_image = match mode {
        PairingMode::SameImage => target.canonical_image().clone(),
        PairingMode::OtherImage => target
            .alternates
            .first()
            .cloned()
            .ok_or_else(|| Error::Config("A->A' pairing needs an alternate target image".into()))?,
    };
    let pairs: Vec<EvalPair> = probes
        .items
        .iter()
        .enumerate()
        .filter(|(_, it)| !(exclude_target && probes.identities[it.label] == target.name))
        .map(|(i, it)| EvalPair {
            probe_index: i,
            probe_label: it.label,
            probe: it.image.clone(),
            target: target_image.clone(),
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::Config("no probes left after excluding the target identity".into()));
    }
    Ok(pairs)
}
