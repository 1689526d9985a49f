//! Raw `f32` modality feature files and their text manifests.
//!
//! Manifest layout:
//!
//! ```text
//! modality = visual
//! num_items = 3
//! dim = 2
//! [items]
//! item-a
//! item-b
//! item-c
//! ```

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Visual,
    Textual,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Visual, Modality::Textual];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Textual => "textual",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "visual" => Ok(Modality::Visual),
            "textual" => Ok(Modality::Textual),
            other => Err(Error::Config(format!("unknown modality {other:?}"))),
        }
    }
}

/// Item feature matrix of one modality, rows aligned to dataset item indices.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityFeatures {
    pub modality: Modality,
    matrix: Matrix,
    missing: Vec<bool>,
}

impl ModalityFeatures {
    /// Zero rows are flagged as missing.
    pub fn new(modality: Modality, matrix: Matrix) -> Result<Self> {
        if !matrix.is_finite() {
            return Err(Error::NonFinite(format!("{modality} features")));
        }
        let missing = (0..matrix.rows())
            .map(|r| matrix.row(r).iter().all(|&v| v == 0.0))
            .collect();
        Ok(ModalityFeatures {
            modality,
            matrix,
            missing,
        })
    }

    pub(crate) fn with_missing(modality: Modality, matrix: Matrix, missing: Vec<bool>) -> Self {
        ModalityFeatures {
            modality,
            matrix,
            missing,
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn num_items(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn missing(&self) -> &[bool] {
        &self.missing
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureManifest {
    pub modality: Modality,
    pub num_items: usize,
    pub dim: usize,
    pub item_ids: Vec<String>,
}

impl FeatureManifest {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut fields: HashMap<&str, (usize, &str)> = HashMap::new();
        let mut ids = Vec::new();
        let mut in_items = false;
        for (n, line) in text.lines().enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if in_items {
                if !line.is_empty() {
                    ids.push(line.to_string());
                }
                continue;
            }
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if trimmed == "[items]" {
                in_items = true;
                continue;
            }
            let (k, v) = trimmed
                .split_once('=')
                .ok_or_else(|| perr(n + 1, "expected key = value".into()))?;
            fields.insert(k.trim(), (n + 1, v.trim()));
        }
        let get = |key: &str| {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| perr(0, format!("manifest is missing `{key}`")))
        };
        let (ln, m) = get("modality")?;
        let modality = m.parse().map_err(|e: Error| perr(ln, e.to_string()))?;
        let (ln, n) = get("num_items")?;
        let num_items = n.parse().map_err(|_| perr(ln, format!("bad num_items {n:?}")))?;
        let (ln, d) = get("dim")?;
        let dim = d.parse().map_err(|_| perr(ln, format!("bad dim {d:?}")))?;
        if ids.len() != num_items {
            return Err(Error::Data(format!(
                "{}: num_items = {num_items} but {} ids listed",
                path.display(),
                ids.len()
            )));
        }
        Ok(FeatureManifest {
            modality,
            num_items,
            dim,
            item_ids: ids,
        })
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "modality = {}\nnum_items = {}\ndim = {}\n[items]\n",
            self.modality, self.num_items, self.dim
        );
        for id in &self.item_ids {
            s.push_str(id);
            s.push('\n');
        }
        s
    }
}

/// Decodes little-endian `f32` bytes and reorders rows to `dataset_items`.
pub fn decode_features(
    bytes: &[u8],
    manifest: &FeatureManifest,
    dataset_items: &[String],
    path: &Path,
) -> Result<ModalityFeatures> {
    let expected = 4 * manifest.num_items * manifest.dim;
    if bytes.len() != expected {
        return Err(Error::Data(format!(
            "{}: expected {expected} bytes ({} items x {} dims x 4), found {}",
            path.display(),
            manifest.num_items,
            manifest.dim,
            bytes.len()
        )));
    }
    let index: HashMap<&str, usize> = manifest
        .item_ids
        .iter()
        .enumerate()
        .map(|(k, id)| (id.as_str(), k))
        .collect();
    let missing: Vec<&str> = dataset_items
        .iter()
        .filter(|id| !index.contains_key(id.as_str()))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "{}: {} dataset items have no features: {}",
            path.display(),
            missing.len(),
            missing.join(", ")
        )));
    }
    let dim = manifest.dim;
    let mut data = Vec::with_capacity(dataset_items.len() * dim);
    for id in dataset_items {
        let row = index[id.as_str()];
        let chunk = &bytes[row * dim * 4..(row + 1) * dim * 4];
        data.extend(
            chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64),
        );
    }
    let matrix = Matrix::from_vec(dataset_items.len(), dim, data)?;
    ModalityFeatures::new(manifest.modality, matrix)
}

/// Reads a feature file plus manifest, aligning rows to `dataset_items`.
pub fn load_features(path: &Path, manifest_path: &Path, dataset_items: &[String]) -> Result<ModalityFeatures> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest = FeatureManifest::parse(&text, manifest_path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, &manifest, dataset_items, path)
}

pub fn encode_features(features: &ModalityFeatures) -> Vec<u8> {
    features
        .matrix()
        .data()
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect()
}

pub fn write_features(
    path: &Path,
    manifest_path: &Path,
    features: &ModalityFeatures,
    item_ids: &[String],
) -> Result<()> {
    let manifest = FeatureManifest {
        modality: features.modality,
        num_items: features.num_items(),
        dim: features.dim(),
        item_ids: item_ids.to_vec(),
    };
    std::fs::write(path, encode_features(features)).map_err(|e| Error::io(path, e))?;
    std::fs::write(manifest_path, manifest.render()).map_err(|e| Error::io(manifest_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes(vals: &[f32]) -> Vec<u8> {
        vals.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    fn manifest(ids: &[&str], dim: usize) -> FeatureManifest {
        FeatureManifest {
            modality: Modality::Textual,
            num_items: ids.len(),
            dim,
            item_ids: ids.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn items(ids: &[&str]) -> Vec<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn three_items_two_dims() {
        let b = bytes(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(b.len(), 24);
        let f = decode_features(
            &b,
            &manifest(&["a", "b", "c"], 2),
            &items(&["a", "b", "c"]),
            Path::new("f"),
        )
        .unwrap();
        assert_eq!(f.matrix().shape(), (3, 2));
        assert_eq!(f.matrix().row(2), &[5.0, 6.0]);
    }

    #[test]
    fn permuted_manifest_rows_follow_dataset_order() {
        let b = bytes(&[30.0, 31.0, 10.0, 11.0, 20.0, 21.0]);
        let f = decode_features(
            &b,
            &manifest(&["c", "a", "b"], 2),
            &items(&["a", "b", "c"]),
            Path::new("f"),
        )
        .unwrap();
        assert_eq!(f.matrix().data(), &[10.0, 11.0, 20.0, 21.0, 30.0, 31.0]);
    }

    #[test]
    fn truncated_file_reports_byte_counts() {
        let b = bytes(&[1.0, 2.0, 3.0]);
        let err = decode_features(&b, &manifest(&["a", "b"], 2), &items(&["a", "b"]), Path::new("f"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("expected 16 bytes") && err.contains("found 12"), "{err}");
    }

    #[test]
    fn missing_ids_are_listed() {
        let b = bytes(&[1.0, 2.0]);
        let err = decode_features(&b, &manifest(&["a"], 2), &items(&["a", "zz", "yy"]), Path::new("f"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("zz") && err.contains("yy"), "{err}");
    }

    #[test]
    fn zero_rows_flagged_missing() {
        let f = ModalityFeatures::new(
            Modality::Visual,
            Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(f.missing(), &[true, false]);
    }

    #[test]
    fn manifest_round_trip() {
        let m = manifest(&["x", "y"], 4);
        assert_eq!(FeatureManifest::parse(&m.render(), Path::new("m")).unwrap(), m);
    }
}
