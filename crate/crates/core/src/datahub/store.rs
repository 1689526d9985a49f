//! On-disk layout of a prepared dataset directory.
//!
//! ```text
//! dataset.manifest        key = value summary, including the canonical hash
//! users.txt, items.txt    ids in index order
//! train.tsv val.tsv test.tsv
//! visual.f32 visual.manifest textual.f32 textual.manifest
//! labels.tsv              item<TAB>cluster (synthetic data only)
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::features::{load_features, write_features};
use super::{InteractionDataset, Modality, ModalityFeatures, Pair};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct PreparedData {
    pub dataset: InteractionDataset,
    pub visual: ModalityFeatures,
    pub textual: ModalityFeatures,
    pub labels: Option<Vec<usize>>,
}

impl PreparedData {
    pub fn features(&self, m: Modality) -> &ModalityFeatures {
        match m {
            Modality::Visual => &self.visual,
            Modality::Textual => &self.textual,
        }
    }
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

fn read(path: PathBuf) -> Result<String> {
    std::fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

fn render_split(ds: &InteractionDataset, split: &[Pair]) -> String {
    let mut s = String::new();
    for &(u, i) in split {
        let _ = writeln!(s, "{}\t{}", ds.user_ids()[u], ds.item_ids()[i]);
    }
    s
}

fn render_ids(ids: &[String]) -> String {
    ids.iter().map(|id| format!("{id}\n")).collect()
}

pub fn write_prepared(dir: &Path, data: &PreparedData) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ds = &data.dataset;
    write(dir.join("users.txt"), &render_ids(ds.user_ids()))?;
    write(dir.join("items.txt"), &render_ids(ds.item_ids()))?;
    write(dir.join("train.tsv"), &render_split(ds, ds.train()))?;
    write(dir.join("val.tsv"), &render_split(ds, ds.val()))?;
    write(dir.join("test.tsv"), &render_split(ds, ds.test()))?;
    for m in Modality::ALL {
        write_features(
            &dir.join(format!("{m}.f32")),
            &dir.join(format!("{m}.manifest")),
            data.features(m),
            ds.item_ids(),
        )?;
    }
    if let Some(labels) = &data.labels {
        let mut s = String::new();
        for (id, l) in ds.item_ids().iter().zip(labels) {
            let _ = writeln!(s, "{id}\t{l}");
        }
        write(dir.join("labels.tsv"), &s)?;
    }
    let manifest = format!(
        "num_users = {}\nnum_items = {}\nnum_train = {}\nnum_val = {}\nnum_test = {}\nhash = {}\n",
        ds.num_users(),
        ds.num_items(),
        ds.train().len(),
        ds.val().len(),
        ds.test().len(),
        ds.canonical_hash()
    );
    write(dir.join("dataset.manifest"), &manifest)
}

fn parse_ids(text: &str) -> Vec<String> {
    text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect()
}

fn parse_split(
    path: &Path,
    text: &str,
    users: &HashMap<&str, usize>,
    items: &HashMap<&str, usize>,
) -> Result<Vec<Pair>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let (u, i) = line
            .split_once('\t')
            .ok_or_else(|| perr("expected user<TAB>item".into()))?;
        let u = *users.get(u).ok_or_else(|| perr(format!("unknown user {u:?}")))?;
        let i = *items.get(i).ok_or_else(|| perr(format!("unknown item {i:?}")))?;
        out.push((u, i));
    }
    Ok(out)
}

pub fn read_prepared(dir: &Path) -> Result<PreparedData> {
    let manifest_path = dir.join("dataset.manifest");
    let manifest = read(manifest_path.clone())?;
    let expected_hash = manifest
        .lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == "hash")
        .map(|(_, v)| v.trim().to_string())
        .ok_or_else(|| Error::Data(format!("{}: missing hash", manifest_path.display())))?;

    let user_ids = parse_ids(&read(dir.join("users.txt"))?);
    let item_ids = parse_ids(&read(dir.join("items.txt"))?);
    let uidx: HashMap<&str, usize> = user_ids.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    let iidx: HashMap<&str, usize> = item_ids.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    let mut splits = Vec::new();
    for name in ["train.tsv", "val.tsv", "test.tsv"] {
        let p = dir.join(name);
        splits.push(parse_split(&p, &read(p.clone())?, &uidx, &iidx)?);
    }
    let test = splits.pop().unwrap();
    let val = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    let dataset = InteractionDataset::new(user_ids.clone(), item_ids.clone(), train, val, test)?;
    if dataset.canonical_hash() != expected_hash {
        return Err(Error::ArtifactMismatch(format!(
            "{}: dataset hash {} does not match manifest {}",
            dir.display(),
            dataset.canonical_hash(),
            expected_hash
        )));
    }

    let load = |m: Modality| {
        load_features(
            &dir.join(format!("{m}.f32")),
            &dir.join(format!("{m}.manifest")),
            dataset.item_ids(),
        )
    };
    let visual = load(Modality::Visual)?;
    let textual = load(Modality::Textual)?;

    let labels_path = dir.join("labels.tsv");
    let labels = if labels_path.exists() {
        let text = read(labels_path.clone())?;
        let mut labels = vec![usize::MAX; item_ids.len()];
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let perr = |message: String| Error::Parse {
                path: labels_path.clone(),
                line: n + 1,
                message,
            };
            let (id, l) = line
                .split_once('\t')
                .ok_or_else(|| perr("expected item<TAB>cluster".into()))?;
            let k = *iidx.get(id).ok_or_else(|| perr(format!("unknown item {id:?}")))?;
            labels[k] = l.trim().parse().map_err(|_| perr(format!("bad cluster {l:?}")))?;
        }
        if labels.contains(&usize::MAX) {
            return Err(Error::Data(format!(
                "{}: not every item is labelled",
                labels_path.display()
            )));
        }
        Some(labels)
    } else {
        None
    };

    Ok(PreparedData {
        dataset,
        visual,
        textual,
        labels,
    })
}
