use std::sync::Arc;

use crate::config::EngineConfig;
use crate::error::{Error, Result};

use super::sequence::{gaps_of, MarkingSequence};

/// Read-only view of the complete sequences at one point in time.
///
/// Cloning is cheap and the contents never change, whatever happens to the
/// database afterwards. Sequence ids equal their index in [`Self::sequences`].
#[derive(Clone, Debug)]
pub struct DatabaseSnapshot {
    version: u64,
    config: EngineConfig,
    sequences: Arc<Vec<Arc<MarkingSequence>>>,
}

impl DatabaseSnapshot {
    pub(crate) fn new(
        version: u64,
        config: EngineConfig,
        sequences: Arc<Vec<Arc<MarkingSequence>>>,
    ) -> Self {
        Self {
            version,
            config,
            sequences,
        }
    }

    /// Builds a snapshot from externally produced sequences (a loaded
    /// database file, a synthetic benchmark database).
    pub fn from_sequences(config: EngineConfig, sequences: Vec<MarkingSequence>) -> Result<Self> {
        config.validate()?;
        for (idx, seq) in sequences.iter().enumerate() {
            if seq.sequence_id != idx as u64 {
                return Err(Error::invalid(format!(
                    "sequence ids must be dense from 0: position {idx} has id {}",
                    seq.sequence_id
                )));
            }
            if seq.entries.len() != config.k {
                return Err(Error::invalid(format!(
                    "sequence {} has {} entries, expected k = {}",
                    seq.sequence_id,
                    seq.entries.len(),
                    config.k
                )));
            }
            let recomputed = gaps_of(&seq.entries);
            if recomputed.len() != seq.gaps.len()
                || recomputed
                    .iter()
                    .zip(&seq.gaps)
                    .any(|(a, b)| (a - b).abs() > 1e-9)
            {
                return Err(Error::invalid(format!(
                    "sequence {} stores gaps inconsistent with its entry positions",
                    seq.sequence_id
                )));
            }
        }
        Ok(Self {
            version: 0,
            config,
            sequences: Arc::new(sequences.into_iter().map(Arc::new).collect()),
        })
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn sequences(&self) -> &[Arc<MarkingSequence>] {
        &self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&MarkingSequence> {
        self.sequences.get(id as usize).map(|s| s.as_ref())
    }
}
