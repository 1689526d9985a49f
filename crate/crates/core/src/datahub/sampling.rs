//! BPR triplet sampling.

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;

use super::InteractionDataset;
use crate::rng;

/// A `(user, positive item, negative item)` training triplet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TripletEpoch {
    pub triplets: Vec<Triplet>,
    /// Positives skipped because their user has no non-interacted item.
    pub skipped: usize,
}

/// One triplet per train positive, shuffled, with the negative drawn
/// uniformly from items the user has not interacted with in train.
pub fn sample_bpr_triplets(ds: &InteractionDataset, epoch_seed: u64) -> TripletEpoch {
    let mut r = rng::stream(epoch_seed, "bpr-neg");
    let ni = ds.num_items();
    let mut positives = ds.train().to_vec();
    positives.shuffle(&mut r);
    let mut out = TripletEpoch::default();
    for (user, pos) in positives {
        if ds.train_items(user).len() >= ni {
            out.skipped += 1;
            continue;
        }
        let neg = loop {
            let j = r.random_range(0..ni);
            if !ds.is_train_positive(user, j) {
                break j;
            }
        };
        out.triplets.push(Triplet { user, pos, neg });
    }
    if out.skipped > 0 {
        warn!(
            "{} positives skipped: their users interacted with every item",
            out.skipped
        );
    }
    out
}
