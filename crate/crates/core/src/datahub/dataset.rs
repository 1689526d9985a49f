use std::collections::HashSet;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type Pair = (usize, usize);

/// Users, items and the three disjoint splits of positive pairs.
///
/// The interaction matrix `A` is defined by the train split only.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionDataset {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    train: Vec<Pair>,
    val: Vec<Pair>,
    test: Vec<Pair>,
    user_train: Vec<Vec<usize>>,
}

impl InteractionDataset {
    /// Validates and canonicalises (sorts) the splits.
    pub fn new(
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        mut train: Vec<Pair>,
        mut val: Vec<Pair>,
        mut test: Vec<Pair>,
    ) -> Result<Self> {
        let (nu, ni) = (user_ids.len(), item_ids.len());
        let mut seen = HashSet::new();
        for (name, split) in [("train", &train), ("val", &val), ("test", &test)] {
            for &(u, i) in split {
                if u >= nu || i >= ni {
                    return Err(Error::Data(format!(
                        "{name} pair ({u},{i}) outside {nu} users x {ni} items"
                    )));
                }
                if !seen.insert((u, i)) {
                    return Err(Error::Data(format!(
                        "pair ({u},{i}) appears more than once across splits"
                    )));
                }
            }
        }
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        let mut user_train = vec![Vec::new(); nu];
        for &(u, i) in &train {
            user_train[u].push(i);
        }
        if let Some(u) = user_train.iter().position(Vec::is_empty) {
            return Err(Error::Data(format!("user {} has no train positive", user_ids[u])));
        }
        Ok(InteractionDataset {
            user_ids,
            item_ids,
            train,
            val,
            test,
            user_train,
        })
    }

    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn train(&self) -> &[Pair] {
        &self.train
    }

    pub fn val(&self) -> &[Pair] {
        &self.val
    }

    pub fn test(&self) -> &[Pair] {
        &self.test
    }

    /// Sorted train items of user `u`.
    pub fn train_items(&self, u: usize) -> &[usize] {
        &self.user_train[u]
    }

    pub fn is_train_positive(&self, u: usize, i: usize) -> bool {
        self.user_train[u].binary_search(&i).is_ok()
    }

    /// Per-user item lists of a split.
    pub fn by_user(&self, split: &[Pair]) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users()];
        for &(u, i) in split {
            out[u].push(i);
        }
        out
    }

    /// Users of each item in the train split.
    pub fn item_users(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_items()];
        for &(u, i) in &self.train {
            out[i].push(u);
        }
        out
    }

    /// SHA-256 over the canonical text form, hex encoded.
    pub fn canonical_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"users\n");
        for id in &self.user_ids {
            h.update(id.as_bytes());
            h.update(b"\n");
        }
        h.update(b"items\n");
        for id in &self.item_ids {
            h.update(id.as_bytes());
            h.update(b"\n");
        }
        for (name, split) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            h.update(name.as_bytes());
            h.update(b"\n");
            for (u, i) in split {
                h.update(format!("{u}\t{i}\n").as_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
