//! Synthetic datasets with planted item clusters.
//!
//! Items are split into equal contiguous clusters. Each user belongs to one
//! cluster and draws most of its positives from it. Every modality feature
//! is the item's cluster centroid plus isotropic Gaussian noise, so the
//! semantic graph degrades with `noise_level` while behaviour stays clean.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::interactions::{split_per_user, MIN_USER_INTERACTIONS};
use super::{InteractionDataset, Modality, ModalityFeatures};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub num_users: usize,
    pub num_items: usize,
    pub num_clusters: usize,
    pub feature_dim: usize,
    /// Noise norm relative to the (unit-norm) centroid.
    pub noise_level: f64,
    pub interactions_per_user: usize,
    /// Probability that a positive is drawn from the user's own cluster.
    pub in_cluster_prob: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_users: 200,
            num_items: 100,
            num_clusters: 2,
            feature_dim: 32,
            noise_level: 1.5,
            interactions_per_user: 10,
            in_cluster_prob: 0.9,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub dataset: InteractionDataset,
    pub visual: ModalityFeatures,
    pub textual: ModalityFeatures,
    /// Cluster of every item.
    pub labels: Vec<usize>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_clusters == 0 || self.num_items == 0 || self.num_users == 0 || self.feature_dim == 0 {
            return bad("synthetic sizes must be positive".into());
        }
        if !self.num_items.is_multiple_of(self.num_clusters) {
            return bad(format!(
                "num_items ({}) must be divisible by num_clusters ({})",
                self.num_items, self.num_clusters
            ));
        }
        let per_cluster = self.num_items / self.num_clusters;
        if self.interactions_per_user < MIN_USER_INTERACTIONS || self.interactions_per_user > per_cluster {
            return bad(format!(
                "interactions_per_user must lie in [{MIN_USER_INTERACTIONS}, {per_cluster}]"
            ));
        }
        if self.num_clusters == 1 && self.in_cluster_prob < 1.0 {
            return bad("a single cluster needs in_cluster_prob = 1".into());
        }
        if !(0.0..=1.0).contains(&self.in_cluster_prob) || !self.noise_level.is_finite() || self.noise_level < 0.0 {
            return bad("in_cluster_prob must lie in [0,1] and noise_level must be >= 0".into());
        }
        Ok(())
    }
}

pub fn item_labels(num_items: usize, num_clusters: usize) -> Vec<usize> {
    let per = num_items / num_clusters;
    (0..num_items).map(|i| i / per).collect()
}

fn features<R: Rng>(spec: &SynthSpec, labels: &[usize], modality: Modality, r: &mut R) -> Result<ModalityFeatures> {
    let dim = spec.feature_dim;
    let scale = 1.0 / (dim as f64).sqrt();
    let centroids: Vec<Vec<f64>> = (0..spec.num_clusters)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(r)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let mut data = Vec::with_capacity(labels.len() * dim);
    for &k in labels {
        for c in 0..dim {
            let noise: f64 = if spec.noise_level > 0.0 {
                let z: f64 = StandardNormal.sample(r);
                spec.noise_level * scale * z
            } else {
                0.0
            };
            data.push(centroids[k][c] + noise);
        }
    }
    ModalityFeatures::new(modality, Matrix::from_vec(labels.len(), dim, data)?)
}

pub fn synth_planted(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let labels = item_labels(spec.num_items, spec.num_clusters);
    let per = spec.num_items / spec.num_clusters;

    let mut r = rng::stream(spec.seed, "synth/interactions");
    let mut per_user = Vec::with_capacity(spec.num_users);
    for u in 0..spec.num_users {
        let home = u % spec.num_clusters;
        let mut items: Vec<usize> = Vec::with_capacity(spec.interactions_per_user);
        while items.len() < spec.interactions_per_user {
            let cluster = if r.random::<f64>() < spec.in_cluster_prob {
                home
            } else {
                let other = r.random_range(0..spec.num_clusters - 1);
                if other >= home {
                    other + 1
                } else {
                    other
                }
            };
            let item = cluster * per + r.random_range(0..per);
            if !items.contains(&item) {
                items.push(item);
            }
        }
        per_user.push(items);
    }

    let user_ids = (0..spec.num_users).map(|u| format!("u{u:05}")).collect();
    let item_ids = (0..spec.num_items).map(|i| format!("i{i:05}")).collect();
    let (dataset, dropped) = split_per_user(user_ids, item_ids, per_user, spec.seed)?;
    debug_assert_eq!(dropped, 0);

    let visual = features(
        spec,
        &labels,
        Modality::Visual,
        &mut rng::stream(spec.seed, "synth/visual"),
    )?;
    let textual = features(
        spec,
        &labels,
        Modality::Textual,
        &mut rng::stream(spec.seed, "synth/textual"),
    )?;
    Ok(SynthData {
        dataset,
        visual,
        textual,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_partition_items() {
        let l = item_labels(100, 4);
        for k in 0..4 {
            assert_eq!(l.iter().filter(|&&c| c == k).count(), 25);
        }
    }

    #[test]
    fn indivisible_items_rejected() {
        let spec = SynthSpec {
            num_items: 101,
            ..SynthSpec::default()
        };
        assert!(synth_planted(&spec).is_err());
    }

    #[test]
    fn noiseless_features_repeat_centroid() {
        let spec = SynthSpec {
            noise_level: 0.0,
            ..SynthSpec::default()
        };
        let d = synth_planted(&spec).unwrap();
        let m = d.textual.matrix();
        assert_eq!(m.row(0), m.row(49));
        assert_ne!(m.row(0), m.row(50));
    }

    #[test]
    fn mostly_in_cluster_and_reproducible() {
        let spec = SynthSpec {
            seed: 5,
            ..SynthSpec::default()
        };
        let a = synth_planted(&spec).unwrap();
        let b = synth_planted(&spec).unwrap();
        assert_eq!(a.dataset.canonical_hash(), b.dataset.canonical_hash());
        assert_eq!(a.visual, b.visual);
        let all: Vec<_> = a
            .dataset
            .train()
            .iter()
            .chain(a.dataset.val())
            .chain(a.dataset.test())
            .collect();
        assert_eq!(all.len(), 200 * 10);
        let inside = all
            .iter()
            .filter(|(u, i)| a.labels[*i] == (a.dataset.user_ids()[*u][1..].parse::<usize>().unwrap() % 2))
            .count();
        let frac = inside as f64 / all.len() as f64;
        assert!((frac - 0.9).abs() < 0.03, "{frac}");
    }
}
