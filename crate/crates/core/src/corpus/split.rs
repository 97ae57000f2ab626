use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClinicalNote;
use crate::error::{Error, Result};

/// Frozen test ids, labeled supervised ids and the unlabeled pretraining remainder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub test_ids: Vec<String>,
    pub supervised_ids: Vec<String>,
    pub pretrain_ids: Vec<String>,
}

/// Draws `test_size` then `supervised_size` notes uniformly from the labeled
/// (trauma / non-trauma) notes. Every other note, including excluded and
/// unlabeled ones, goes to the pretraining split in corpus order.
pub fn make_splits(
    corpus: &[ClinicalNote],
    test_size: usize,
    supervised_size: usize,
    seed: u64,
) -> Result<SplitManifest> {
    let mut eligible: Vec<usize> = corpus
        .iter()
        .enumerate()
        .filter(|(_, n)| n.binary_label().is_some())
        .map(|(i, _)| i)
        .collect();
    let needed = test_size + supervised_size;
    if needed > eligible.len() {
        return Err(Error::Sizing {
            needed,
            available: eligible.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    eligible.shuffle(&mut rng);
    let mut taken = vec![false; corpus.len()];
    for &i in &eligible[..needed] {
        taken[i] = true;
    }
    let ids = |range: &[usize]| range.iter().map(|&i| corpus[i].id.clone()).collect();
    Ok(SplitManifest {
        seed,
        test_ids: ids(&eligible[..test_size]),
        supervised_ids: ids(&eligible[test_size..needed]),
        pretrain_ids: corpus
            .iter()
            .zip(&taken)
            .filter(|(_, &t)| !t)
            .map(|(n, _)| n.id.clone())
            .collect(),
    })
}
