//! Versioned binary checkpoints.
//!
//! ```text
//! "IGDMCKPT" | u32 version | str config_hash | str dataset_hash | str config
//! u32 section count, then per section: str name | u8 tag | payload
//!   tag 0 dense: u64 rows | u64 cols | f64 * rows*cols
//!   tag 1 csr:   u64 rows | u64 cols | u64 nnz | u64 * (rows+1) | u64 * nnz | f64 * nnz
//! 32-byte SHA-256 of everything above
//! ```
//!
//! Integers and floats are little-endian; `str` is a u64 length and UTF-8.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::bgd::CdNet;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, SparseMatrix};
use crate::recmodel::{EmbeddingTable, ModelState};

pub const MAGIC: &[u8; 8] = b"IGDMCKPT";
pub const VERSION: u32 = 1;

const TAG_DENSE: u8 = 0;
const TAG_CSR: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub dataset_hash: String,
    /// Rendered run config.
    pub config: String,
    pub state: ModelState,
}

enum Section {
    Dense(Matrix),
    Csr(SparseMatrix),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::ArtifactMismatch("checkpoint ends inside a record".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::ArtifactMismatch("length does not fit in memory".into()))
    }
    /// A count of `width`-byte elements that must fit in the remaining bytes.
    fn count(&mut self, width: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(width) > self.buf.len() - self.pos {
            return Err(Error::ArtifactMismatch("checkpoint length field exceeds file".into()));
        }
        Ok(n)
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::ArtifactMismatch("oversized array".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn usizes(&mut self, n: usize) -> Result<Vec<usize>> {
        (0..n).map(|_| self.usize()).collect()
    }
    fn str(&mut self) -> Result<String> {
        let n = self.count(1)?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::ArtifactMismatch("checkpoint string is not UTF-8".into()))
    }
}

impl Checkpoint {
    fn sections(&self) -> Vec<(String, Section)> {
        let s = &self.state;
        let mut v = vec![
            ("embeddings/user".to_string(), Section::Dense(s.embeddings.user.clone())),
            ("embeddings/item".to_string(), Section::Dense(s.embeddings.item.clone())),
        ];
        if let Some(net) = &s.cdnet {
            for (name, m) in net.named_params() {
                v.push((format!("cdnet/{name}"), Section::Dense(m.clone())));
            }
        }
        if let Some(g) = &s.diffusion_graph {
            v.push(("graph/diffusion".to_string(), Section::Csr(SparseMatrix::from_dense(g))));
        }
        v
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.str(&self.config_hash);
        w.str(&self.dataset_hash);
        w.str(&self.config);
        let sections = self.sections();
        w.u32(sections.len() as u32);
        for (name, sec) in &sections {
            w.str(name);
            match sec {
                Section::Dense(m) => {
                    w.u8(TAG_DENSE);
                    w.usize(m.rows());
                    w.usize(m.cols());
                    m.data().iter().for_each(|&x| w.f64(x));
                }
                Section::Csr(s) => {
                    w.u8(TAG_CSR);
                    w.usize(s.rows());
                    w.usize(s.cols());
                    w.usize(s.nnz());
                    let (indptr, indices, values) = s.csr_parts();
                    indptr.iter().chain(indices).for_each(|&x| w.usize(x));
                    values.iter().for_each(|&x| w.f64(x));
                }
            }
        }
        let digest = Sha256::digest(&w.0);
        w.0.extend_from_slice(&digest);
        w.0
    }

    /// Parses and verifies a checkpoint. `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::ArtifactMismatch(format!(
                "{} is not a checkpoint",
                path.display()
            )));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(Error::Checksum(path.to_path_buf()));
        }
        let mut r = Reader {
            buf: body,
            pos: MAGIC.len(),
        };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::ArtifactMismatch(format!(
                "{}: checkpoint version {version}, this build reads {VERSION}",
                path.display()
            )));
        }
        let config_hash = r.str()?;
        let dataset_hash = r.str()?;
        let config = r.str()?;
        if format!("{:x}", Sha256::digest(config.as_bytes())) != config_hash {
            return Err(Error::ArtifactMismatch(format!(
                "{}: embedded config does not match its hash",
                path.display()
            )));
        }
        let count = r.u32()?;
        let mut dense = BTreeMap::new();
        let mut csr = BTreeMap::new();
        for _ in 0..count {
            let name = r.str()?;
            let tag = r.u8()?;
            let (rows, cols) = (r.usize()?, r.usize()?);
            match tag {
                TAG_DENSE => {
                    let n = rows
                        .checked_mul(cols)
                        .ok_or_else(|| Error::ArtifactMismatch(format!("section {name}: oversized shape")))?;
                    dense.insert(name, Matrix::from_vec(rows, cols, r.f64s(n)?)?);
                }
                TAG_CSR => {
                    let nnz = r.count(16)?;
                    let indptr = r.usizes(
                        rows.checked_add(1)
                            .ok_or_else(|| Error::ArtifactMismatch("oversized CSR".into()))?,
                    )?;
                    let indices = r.usizes(nnz)?;
                    let values = r.f64s(nnz)?;
                    let m = SparseMatrix::from_csr(rows, cols, indptr, indices, values)
                        .map_err(|e| Error::ArtifactMismatch(format!("section {name}: {e}")))?;
                    csr.insert(name, m);
                }
                t => return Err(Error::ArtifactMismatch(format!("section {name}: unknown tag {t}"))),
            }
        }
        if r.pos != body.len() {
            return Err(Error::ArtifactMismatch(format!(
                "{}: trailing bytes after sections",
                path.display()
            )));
        }

        let mut take = |name: &str| dense.remove(name);
        let user = take("embeddings/user").ok_or_else(|| Error::ArtifactMismatch("user embeddings missing".into()))?;
        let item = take("embeddings/item").ok_or_else(|| Error::ArtifactMismatch("item embeddings missing".into()))?;
        if user.cols() != item.cols() {
            return Err(Error::ArtifactMismatch("user and item embedding widths differ".into()));
        }
        let num_items = item.rows();
        let cdnet = if dense.keys().any(|k| k.starts_with("cdnet/")) {
            Some(CdNet::from_named(num_items, |n| dense.remove(&format!("cdnet/{n}")))?)
        } else {
            None
        };
        let diffusion_graph = csr.remove("graph/diffusion").map(|s| s.to_dense());
        if let Some(g) = &diffusion_graph {
            if g.shape() != (num_items, num_items) {
                return Err(Error::ArtifactMismatch(
                    "diffusion graph does not match the item count".into(),
                ));
            }
        }
        if let Some(extra) = dense.keys().chain(csr.keys()).next() {
            return Err(Error::ArtifactMismatch(format!(
                "unexpected checkpoint section {extra}"
            )));
        }
        Ok(Checkpoint {
            config_hash,
            dataset_hash,
            config,
            state: ModelState {
                embeddings: EmbeddingTable { user, item },
                cdnet,
                diffusion_graph,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
