//! Item-item graphs: semantic (cosine KNN per modality, fused by weight),
//! behavioral (pruned co-occurrence), the user-item bipartite graph, and
//! their symmetric degree normalisations.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::datahub::{InteractionDataset, Modality, ModalityFeatures};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, SparseMatrix};

/// Pairwise cosine similarity of feature rows. A zero row is similar to
/// nothing, itself included.
pub fn cosine_similarity_matrix(features: &Matrix) -> Matrix {
    let sq: Vec<f64> = (0..features.rows())
        .map(|r| features.row(r).iter().map(|v| v * v).sum())
        .collect();
    let mut dots = features
        .matmul(&features.transpose())
        .expect("G * G^T is always conformable");
    let n = features.rows();
    for i in 0..n {
        for j in 0..n {
            let denom = (sq[i] * sq[j]).sqrt();
            let v = if denom > 0.0 { dots.get(i, j) / denom } else { 0.0 };
            dots.set(i, j, v);
        }
    }
    dots
}

/// Indices of the `k` largest values, largest first; ties go to the
/// smaller index.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let cmp = |a: &usize, b: &usize| match values[*b].total_cmp(&values[*a]) {
        Ordering::Equal => a.cmp(b),
        o => o,
    };
    let k = k.min(values.len());
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Binary adjacency keeping, in each column, the `k` largest entries.
pub fn knn_columns(sim: &Matrix, k: usize) -> Result<Matrix> {
    if k < 1 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if sim.rows() != sim.cols() {
        return Err(Error::dim("knn_columns", sim.shape(), sim.shape()));
    }
    let n = sim.rows();
    let mut out = Matrix::zeros(n, n);
    for j in 0..n {
        for i in top_k_indices(&sim.column(j), k) {
            out.set(i, j, 1.0);
        }
    }
    Ok(out)
}

/// Per-modality importance weights; they must sum to one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModalityWeights {
    pub visual: f64,
    pub textual: f64,
}

impl Default for ModalityWeights {
    fn default() -> Self {
        ModalityWeights {
            visual: 0.1,
            textual: 0.9,
        }
    }
}

impl ModalityWeights {
    pub fn from_visual(visual: f64) -> Self {
        ModalityWeights {
            visual,
            textual: 1.0 - visual,
        }
    }

    pub fn get(&self, m: Modality) -> f64 {
        match m {
            Modality::Visual => self.visual,
            Modality::Textual => self.textual,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.visual < 0.0 || self.textual < 0.0 || ((self.visual + self.textual) - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "modality weights must be non-negative and sum to 1, got visual {} + textual {}",
                self.visual, self.textual
            )));
        }
        Ok(())
    }
}

/// `S = sum_m phi_m S^m`.
pub fn fuse_modalities(graphs: &[(Modality, Matrix)], weights: &ModalityWeights) -> Result<Matrix> {
    weights.validate()?;
    let (first_m, first) = graphs
        .first()
        .ok_or_else(|| Error::Config("no modality graphs to fuse".into()))?;
    let mut fused = first.scale(weights.get(*first_m));
    for (m, g) in &graphs[1..] {
        fused.add_assign(&g.scale(weights.get(*m)))?;
    }
    Ok(fused)
}

/// The frozen semantic item graph.
#[derive(Clone, Debug)]
pub struct SemanticGraph {
    pub per_modality: Vec<(Modality, Matrix)>,
    pub fused: Matrix,
    pub weights: ModalityWeights,
    pub k: usize,
}

impl SemanticGraph {
    pub fn build(features: &[&ModalityFeatures], k: usize, weights: ModalityWeights) -> Result<Self> {
        let mut per_modality = Vec::with_capacity(features.len());
        for f in features {
            let sim = cosine_similarity_matrix(f.matrix());
            per_modality.push((f.modality, knn_columns(&sim, k)?));
        }
        let fused = fuse_modalities(&per_modality, &weights)?;
        Ok(SemanticGraph {
            per_modality,
            fused,
            weights,
            k,
        })
    }

    /// `sum_m phi_m * normalize_sym(S^m)`, the propagation operator.
    pub fn normalized(&self) -> Result<Matrix> {
        let normed: Vec<(Modality, Matrix)> = self.per_modality.iter().map(|(m, g)| (*m, normalize_sym(g))).collect();
        fuse_modalities(&normed, &self.weights)
    }
}

/// Pruned co-occurrence graph with self-loops.
#[derive(Clone, Debug)]
pub struct BehavioralGraph {
    pub adjacency: Matrix,
    pub k: usize,
    pub epsilon: f64,
}

/// `|U_i ∩ U_j|` over train interactions.
pub fn co_occurrence(ds: &InteractionDataset) -> Matrix {
    let n = ds.num_items();
    let mut counts = Matrix::zeros(n, n);
    for u in 0..ds.num_users() {
        let items = ds.train_items(u);
        for &a in items {
            for &b in items {
                counts.set(a, b, counts.get(a, b) + 1.0);
            }
        }
    }
    counts
}

/// Keeps an off-diagonal count iff it is among the column's `k` largest
/// off-diagonal counts and strictly exceeds `epsilon`; the diagonal is 1.
pub fn build_behavioral(ds: &InteractionDataset, k: usize, epsilon: f64) -> Result<BehavioralGraph> {
    if k < 1 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    Ok(BehavioralGraph {
        adjacency: prune_co_occurrence(&co_occurrence(ds), k, epsilon),
        k,
        epsilon,
    })
}

pub fn prune_co_occurrence(counts: &Matrix, k: usize, epsilon: f64) -> Matrix {
    let n = counts.rows();
    let mut out = Matrix::zeros(n, n);
    for j in 0..n {
        let mut col = counts.column(j);
        // The self-count never competes for a neighbour slot.
        col[j] = f64::NEG_INFINITY;
        for i in top_k_indices(&col, k) {
            if i != j && col[i] > epsilon {
                out.set(i, j, col[i]);
            }
        }
        out.set(j, j, 1.0);
    }
    out
}

/// `D^{-1/2} S D^{-1/2}` with `D_ii = sum_j S_ij`; zero-degree nodes map to
/// zero rows and columns.
pub fn normalize_sym(s: &Matrix) -> Matrix {
    let inv_sqrt: Vec<f64> = (0..s.rows())
        .map(|r| {
            let d: f64 = s.row(r).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Matrix::from_fn(s.rows(), s.cols(), |i, j| {
        let v = s.get(i, j);
        if v == 0.0 {
            0.0
        } else {
            // Grouped so that (i, j) and (j, i) round identically.
            v * (inv_sqrt[i] * inv_sqrt[j])
        }
    })
}

/// Normalised `[[0, A], [A^T, 0]]` over `|U| + |I|` nodes, users first.
pub fn build_bipartite(ds: &InteractionDataset) -> Result<SparseMatrix> {
    if ds.train().is_empty() {
        return Err(Error::Data(
            "bipartite graph needs at least one train interaction".into(),
        ));
    }
    let nu = ds.num_users();
    let n = nu + ds.num_items();
    let mut degree = vec![0.0f64; n];
    for &(u, i) in ds.train() {
        degree[u] += 1.0;
        degree[nu + i] += 1.0;
    }
    let mut triplets = Vec::with_capacity(2 * ds.train().len());
    for &(u, i) in ds.train() {
        let w = 1.0 / (degree[u] * degree[nu + i]).sqrt();
        triplets.push((u, nu + i, w));
        triplets.push((nu + i, u, w));
    }
    SparseMatrix::from_triplets(n, n, &triplets)
}

/// `i<TAB>j<TAB>weight` lines for every nonzero entry, preceded by a
/// `#items<TAB>n` header. Weights use the shortest round-trip decimal form.
pub fn to_edge_list(s: &Matrix) -> String {
    let mut out = format!("#items\t{}\n", s.rows());
    for i in 0..s.rows() {
        for j in 0..s.cols() {
            let w = s.get(i, j);
            if w != 0.0 {
                let _ = writeln!(out, "{i}\t{j}\t{w:?}");
            }
        }
    }
    out
}

pub fn from_edge_list(text: &str) -> Result<Matrix> {
    let bad = |line: usize, msg: &str| Error::Data(format!("edge list line {line}: {msg}"));
    let mut lines = text.lines().enumerate();
    let n: usize = match lines.next() {
        Some((_, header)) => header
            .strip_prefix("#items\t")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad(1, "expected #items<TAB>n header"))?,
        None => return Err(bad(1, "empty edge list")),
    };
    let mut m = Matrix::zeros(n, n);
    for (k, line) in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(bad(k + 1, "expected i<TAB>j<TAB>weight"));
        }
        let i: usize = parts[0].parse().map_err(|_| bad(k + 1, "bad row index"))?;
        let j: usize = parts[1].parse().map_err(|_| bad(k + 1, "bad column index"))?;
        let w: f64 = parts[2].parse().map_err(|_| bad(k + 1, "bad weight"))?;
        if i >= n || j >= n || !w.is_finite() {
            return Err(bad(k + 1, "entry out of range"));
        }
        m.set(i, j, w);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let eye = cosine_similarity_matrix(&Matrix::identity(3));
        assert_eq!(eye, Matrix::identity(3));
        let s = cosine_similarity_matrix(&m(&[vec![1.0, 0.0], vec![1.0, 1.0]]));
        assert!((s.get(0, 1) - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        let s = cosine_similarity_matrix(&m(&[vec![0.3, -1.2, 2.0], vec![0.6, -2.4, 4.0]]));
        assert!((s.get(0, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_row_has_no_similarity() {
        let s = cosine_similarity_matrix(&m(&[vec![0.0, 0.0], vec![1.0, 1.0]]));
        assert_eq!(s.row(0), &[0.0, 0.0]);
        assert_eq!(s.get(1, 0), 0.0);
    }

    fn three_item_sims() -> Matrix {
        m(&[vec![1.0, 0.9, 0.1], vec![0.9, 1.0, 0.2], vec![0.1, 0.2, 1.0]])
    }

    #[test]
    fn knn_top_one_is_diagonal() {
        assert_eq!(knn_columns(&three_item_sims(), 1).unwrap(), Matrix::identity(3));
    }

    #[test]
    fn knn_top_two() {
        let g = knn_columns(&three_item_sims(), 2).unwrap();
        assert_eq!(g.column(0), vec![1.0, 1.0, 0.0]);
        assert_eq!(g.column(1), vec![1.0, 1.0, 0.0]);
        assert_eq!(g.column(2), vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn knn_large_k_and_errors() {
        assert_eq!(knn_columns(&three_item_sims(), 7).unwrap(), Matrix::filled(3, 3, 1.0));
        assert!(matches!(knn_columns(&three_item_sims(), 0), Err(Error::Config(_))));
    }

    #[test]
    fn ties_prefer_smaller_index() {
        assert_eq!(top_k_indices(&[0.5, 0.7, 0.5, 0.5], 3), vec![1, 0, 2]);
    }

    #[test]
    fn fusion_cases() {
        let a = m(&[vec![1.0, 0.0], vec![1.0, 1.0]]);
        let b = m(&[vec![1.0, 1.0], vec![0.0, 1.0]]);
        let w = ModalityWeights::default();
        let same = fuse_modalities(&[(Modality::Visual, a.clone()), (Modality::Textual, a.clone())], &w).unwrap();
        assert!(same.max_abs_diff(&a) < 1e-15);
        let f = fuse_modalities(&[(Modality::Visual, b.clone()), (Modality::Textual, a.clone())], &w).unwrap();
        assert_eq!(f.get(0, 1), 0.1);
        let only_visual = ModalityWeights::from_visual(1.0);
        let f = fuse_modalities(&[(Modality::Visual, b.clone()), (Modality::Textual, a)], &only_visual).unwrap();
        assert_eq!(f, b);
        let bad = ModalityWeights {
            visual: 0.5,
            textual: 0.6,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn normalisation_hand_cases() {
        let two = m(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(normalize_sym(&two), two);
        let path = m(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]);
        let p = normalize_sym(&path);
        let r = 1.0 / 2f64.sqrt();
        assert!((p.get(0, 1) - r).abs() < 1e-12 && (p.get(2, 1) - r).abs() < 1e-12);
        assert_eq!(normalize_sym(&Matrix::zeros(3, 3)), Matrix::zeros(3, 3));
    }

    #[test]
    fn behavioral_pruning_is_strict() {
        let mut counts = Matrix::zeros(3, 3);
        counts.set(0, 1, 3.0);
        counts.set(1, 0, 3.0);
        counts.set(0, 2, 2.0);
        counts.set(2, 0, 2.0);
        for i in 0..3 {
            counts.set(i, i, 5.0);
        }
        let g = prune_co_occurrence(&counts, 10, 2.0);
        assert_eq!(g.get(1, 0), 3.0);
        assert_eq!(g.get(2, 0), 0.0);
        assert_eq!((g.get(0, 0), g.get(1, 1), g.get(2, 2)), (1.0, 1.0, 1.0));
    }

    fn ds(train: Vec<(usize, usize)>, nu: usize, ni: usize) -> InteractionDataset {
        InteractionDataset::new(
            (0..nu).map(|u| format!("u{u}")).collect(),
            (0..ni).map(|i| format!("i{i}")).collect(),
            train,
            vec![],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn behavioral_from_dataset() {
        // items 0 and 1 share users 0,1,2; item 2 is isolated from both.
        let d = ds(vec![(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1), (3, 2)], 4, 3);
        let g = build_behavioral(&d, 10, 2.0).unwrap();
        assert_eq!(g.adjacency.get(0, 1), 3.0);
        assert_eq!(g.adjacency.column(2), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn bipartite_weights() {
        let one = build_bipartite(&ds(vec![(0, 0)], 1, 1)).unwrap().to_dense();
        assert_eq!(one, m(&[vec![0.0, 1.0], vec![1.0, 0.0]]));
        // user 0 has four items; item k also has k extra users.
        let mut train = vec![(0, 0), (0, 1), (0, 2), (0, 3)];
        train.extend([(1, 1), (2, 2), (3, 2), (4, 3), (5, 3), (6, 3)]);
        let b = build_bipartite(&ds(train, 7, 4)).unwrap().to_dense();
        for i in 0..4 {
            let deg_item = (i + 1) as f64;
            assert!((b.get(0, 7 + i) - 1.0 / (4.0 * deg_item).sqrt()).abs() < 1e-15);
        }
        assert_eq!(b, b.transpose());
    }

    fn spectral_radius(m: &Matrix) -> f64 {
        let n = m.rows();
        let mut v = Matrix::filled(n, 1, 1.0);
        let mut lambda = 0.0;
        for _ in 0..500 {
            let w = m.matmul(&v).unwrap();
            let norm = w.frobenius_sq().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            lambda = norm / v.frobenius_sq().sqrt();
            v = w.scale(1.0 / norm);
        }
        lambda
    }

    proptest! {
        #[test]
        fn knn_column_degree_is_k(vals in proptest::collection::vec(-1.0f64..1.0, 36), k in 1usize..8) {
            let s = Matrix::from_vec(6, 6, vals).unwrap();
            let g = knn_columns(&s, k).unwrap();
            for j in 0..6 {
                prop_assert_eq!(g.column(j).iter().sum::<f64>(), k.min(6) as f64);
            }
        }

        #[test]
        fn cosine_is_scale_invariant(vals in proptest::collection::vec(-3.0f64..3.0, 20), row in 0usize..5, c in 0.01f64..100.0) {
            let g = Matrix::from_vec(5, 4, vals).unwrap();
            let mut scaled = g.clone();
            scaled.row_mut(row).iter_mut().for_each(|v| *v *= c);
            let a = cosine_similarity_matrix(&g);
            let b = cosine_similarity_matrix(&scaled);
            prop_assert!(a.max_abs_diff(&b) < 1e-12);
        }

        #[test]
        fn normalised_symmetric_graph_is_symmetric_and_contractive(bits in proptest::collection::vec(0u8..3, 28)) {
            let n = 7;
            let mut s = Matrix::zeros(n, n);
            let mut k = 0;
            for i in 0..n {
                for j in (i + 1)..n {
                    let w = bits[k] as f64;
                    s.set(i, j, w);
                    s.set(j, i, w);
                    k += 1;
                }
            }
            let p = normalize_sym(&s);
            prop_assert!(p.max_abs_diff(&p.transpose()) < 1e-15);
            prop_assert!(spectral_radius(&p) <= 1.0 + 1e-9);
        }

        #[test]
        fn edge_list_round_trip_is_bit_exact(vals in proptest::collection::vec(prop_oneof![Just(0.0), -1e3f64..1e3, 1e-300f64..1e-290], 25)) {
            let s = Matrix::from_vec(5, 5, vals).unwrap();
            let back = from_edge_list(&to_edge_list(&s)).unwrap();
            prop_assert_eq!(back.bits(), s.bits());
        }
    }
}
