//! TSV interaction ingestion, k-core filtering and per-user splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;

use super::dataset::{InteractionDataset, Pair};
use crate::error::{Error, Result};
use crate::rng;

/// Users with fewer interactions than this cannot fill train, val and test.
pub const MIN_USER_INTERACTIONS: usize = 3;

#[derive(Clone, Debug)]
pub struct LoadOptions {
    /// Iterative k-core threshold for users and items; 0 disables filtering.
    pub core: usize,
    pub split_seed: u64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { core: 5, split_seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub lines: usize,
    pub duplicates: usize,
    pub core_removed_pairs: usize,
    pub dropped_users: usize,
}

/// Parses `user<TAB>item` lines. Blank lines are skipped.
pub fn parse_interactions(text: &str, path: &Path) -> Result<(Vec<(String, String)>, LoadReport)> {
    let mut report = LoadReport::default();
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let mut fields = line.split('\t');
        let (Some(u), Some(i), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: "expected exactly two tab-separated fields: user<TAB>item".into(),
            });
        };
        let (u, i) = (u.trim(), i.trim());
        if u.is_empty() || i.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: "empty user or item id".into(),
            });
        }
        if seen.insert((u.to_string(), i.to_string())) {
            pairs.push((u.to_string(), i.to_string()));
        } else {
            report.duplicates += 1;
        }
    }
    if pairs.is_empty() {
        return Err(Error::Data(format!("{}: no interactions", path.display())));
    }
    Ok((pairs, report))
}

/// Repeatedly removes users and items with fewer than `core` interactions.
pub fn k_core(mut pairs: Vec<(String, String)>, core: usize) -> Vec<(String, String)> {
    if core == 0 {
        return pairs;
    }
    loop {
        let mut ucount: BTreeMap<&str, usize> = BTreeMap::new();
        let mut icount: BTreeMap<&str, usize> = BTreeMap::new();
        for (u, i) in &pairs {
            *ucount.entry(u).or_default() += 1;
            *icount.entry(i).or_default() += 1;
        }
        let keep: Vec<bool> = pairs
            .iter()
            .map(|(u, i)| ucount[u.as_str()] >= core && icount[i.as_str()] >= core)
            .collect();
        if keep.iter().all(|&k| k) {
            return pairs;
        }
        let mut it = keep.into_iter();
        pairs.retain(|_| it.next().unwrap());
    }
}

/// Number of (train, val, test) positives for a user with `n` interactions.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    debug_assert!(n >= MIN_USER_INTERACTIONS);
    let tenth = ((n as f64) * 0.1).round() as usize;
    let held = tenth.max(1);
    (n - 2 * held, held, held)
}

/// Splits each user's items 8:1:1 after a seeded per-user shuffle.
///
/// `per_user` must hold each user's distinct items. Users with fewer than
/// [`MIN_USER_INTERACTIONS`] items are dropped; the count is returned.
pub fn split_per_user(
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    per_user: Vec<Vec<usize>>,
    seed: u64,
) -> Result<(InteractionDataset, usize)> {
    let mut kept_users = Vec::new();
    let mut splits: (Vec<Pair>, Vec<Pair>, Vec<Pair>) = Default::default();
    let mut dropped = 0;
    for (u, mut items) in per_user.into_iter().enumerate() {
        if items.len() < MIN_USER_INTERACTIONS {
            dropped += 1;
            continue;
        }
        items.sort_unstable();
        let mut r = rng::indexed_stream(seed, "split", u as u64);
        items.shuffle(&mut r);
        let (ntr, nva, _) = split_counts(items.len());
        let nu = kept_users.len();
        for (k, &i) in items.iter().enumerate() {
            let target = if k < ntr {
                &mut splits.0
            } else if k < ntr + nva {
                &mut splits.1
            } else {
                &mut splits.2
            };
            target.push((nu, i));
        }
        kept_users.push(user_ids[u].clone());
    }
    if kept_users.is_empty() {
        return Err(Error::Data("no user has enough interactions to split".into()));
    }
    let ds = InteractionDataset::new(kept_users, item_ids, splits.0, splits.1, splits.2)?;
    Ok((ds, dropped))
}

/// Loads a `user<TAB>item` file, deduplicates, applies k-core filtering
/// and splits per user.
pub fn load_interactions(path: &Path, opts: &LoadOptions) -> Result<(InteractionDataset, LoadReport)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text, path, opts)
}

pub(crate) fn from_text(text: &str, path: &Path, opts: &LoadOptions) -> Result<(InteractionDataset, LoadReport)> {
    let (pairs, mut report) = parse_interactions(text, path)?;
    if report.duplicates > 0 {
        warn!("{}: {} duplicate pairs removed", path.display(), report.duplicates);
    }
    let before = pairs.len();
    let pairs = k_core(pairs, opts.core);
    report.core_removed_pairs = before - pairs.len();
    if pairs.is_empty() {
        return Err(Error::Data(format!(
            "{}: nothing left after {}-core filtering",
            path.display(),
            opts.core
        )));
    }

    let users: BTreeSet<&str> = pairs.iter().map(|(u, _)| u.as_str()).collect();
    let items: BTreeSet<&str> = pairs.iter().map(|(_, i)| i.as_str()).collect();
    let uidx: BTreeMap<&str, usize> = users.iter().enumerate().map(|(k, &u)| (u, k)).collect();
    let iidx: BTreeMap<&str, usize> = items.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let mut per_user = vec![Vec::new(); users.len()];
    for (u, i) in &pairs {
        per_user[uidx[u.as_str()]].push(iidx[i.as_str()]);
    }
    let user_ids = users.iter().map(|s| s.to_string()).collect();
    let item_ids = items.iter().map(|s| s.to_string()).collect();
    let (ds, dropped) = split_per_user(user_ids, item_ids, per_user, opts.split_seed)?;
    if dropped > 0 {
        warn!(
            "{}: {dropped} users with fewer than {MIN_USER_INTERACTIONS} interactions dropped",
            path.display()
        );
    }
    report.dropped_users = dropped;
    Ok((ds, report))
}
