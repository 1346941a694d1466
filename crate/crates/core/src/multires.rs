//! Coarse-to-fine label signals induced by a label tree.
//!
//! For a tree of depth `D`, level `D` carries the original labels. Moving
//! up, `Y(t) = binarize(Y(t+1) · C(t+1))` and `R(t) = R(t+1) · C(t+1)` with
//! `R(D) = Y(D)`, so `R(t)` counts the positive leaves under each node.
//! Positives are weighted by their ℓ1-normalized relevance and shortlisted
//! negatives by a scalar `alpha`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_tree::HierarchicalLabelTree;
use crate::sparse::SparseMatrix;

/// How loss terms are weighted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// Positives by normalized relevance, negatives by `alpha`.
    #[default]
    CostSensitive,
    /// Every shortlisted term weighs 1.
    Uniform,
}

#[derive(Clone, Debug)]
pub struct MultiResolutionSignals {
    labels: Vec<SparseMatrix>,
    relevance: Vec<SparseMatrix>,
    normalized: Vec<SparseMatrix>,
    alpha: f32,
    mode: WeightMode,
}

impl MultiResolutionSignals {
    pub fn build(
        y_leaf: &SparseMatrix,
        tree: &HierarchicalLabelTree,
        alpha: f32,
        mode: WeightMode,
    ) -> Result<Self> {
        if y_leaf.n_cols() != tree.n_labels() {
            return Err(Error::dim(format!(
                "label matrix has {} columns but the tree has {} labels",
                y_leaf.n_cols(),
                tree.n_labels()
            )));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::invalid("alpha must be finite and non-negative"));
        }
        let depth = tree.depth();
        let mut labels = vec![y_leaf.clone()];
        let mut relevance = vec![y_leaf.clone()];
        for t in (1..depth).rev() {
            let c = tree.indexer(t + 1);
            let y = labels.last().unwrap().matmul(c)?.binarize();
            let r = relevance.last().unwrap().matmul(c)?;
            labels.push(y);
            relevance.push(r);
        }
        labels.reverse();
        relevance.reverse();
        let normalized = relevance.iter().map(l1_normalize_rows).collect();
        Ok(MultiResolutionSignals {
            labels,
            relevance,
            normalized,
            alpha,
            mode,
        })
    }

    pub fn depth(&self) -> usize {
        self.labels.len()
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    /// `Y(level)` for `level` in `1..=depth`.
    pub fn labels(&self, level: usize) -> &SparseMatrix {
        &self.labels[level - 1]
    }

    pub fn relevance(&self, level: usize) -> &SparseMatrix {
        &self.relevance[level - 1]
    }

    /// Positive entries of `R̂(level)`; each nonzero row sums to 1.
    pub fn normalized_relevance(&self, level: usize) -> &SparseMatrix {
        &self.normalized[level - 1]
    }

    /// Weight of the loss term for instance `i` and node `j` at `level`.
    pub fn relevance_weight(&self, level: usize, i: usize, j: usize) -> f32 {
        let pos = self.normalized[level - 1].get(i, j);
        if pos != 0.0 {
            self.positive_weight(pos)
        } else {
            self.negative_weight()
        }
    }

    /// Maps a stored `R̂` value to the weight actually used.
    pub fn positive_weight(&self, normalized: f32) -> f32 {
        match self.mode {
            WeightMode::CostSensitive => normalized,
            WeightMode::Uniform => 1.0,
        }
    }

    pub fn negative_weight(&self) -> f32 {
        match self.mode {
            WeightMode::CostSensitive => self.alpha,
            WeightMode::Uniform => 1.0,
        }
    }

    /// Weighted training targets for one level: `(target, weight)` for every
    /// shortlisted `(i, j)`, organized per instance.
    pub fn targets(&self, level: usize, shortlist: &SparseMatrix) -> Result<LevelTargets> {
        let y = self.normalized_relevance(level);
        if shortlist.shape() != y.shape() {
            return Err(Error::dim(format!(
                "shortlist {:?} does not match level {level} labels {:?}",
                shortlist.shape(),
                y.shape()
            )));
        }
        let mut rows = Vec::with_capacity(y.n_rows());
        for i in 0..y.n_rows() {
            let (pos_cols, pos_vals) = y.row(i);
            let mut row = Vec::with_capacity(shortlist.row_nnz(i));
            for &j in shortlist.row(i).0 {
                match pos_cols.binary_search(&j) {
                    Ok(k) => row.push(Target {
                        node: j,
                        positive: true,
                        weight: self.positive_weight(pos_vals[k]),
                    }),
                    Err(_) => row.push(Target {
                        node: j,
                        positive: false,
                        weight: self.negative_weight(),
                    }),
                }
            }
            rows.push(row);
        }
        Ok(LevelTargets {
            n_nodes: y.n_cols(),
            rows,
        })
    }
}

/// A shortlisted `(instance, node)` loss term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Target {
    pub node: u32,
    pub positive: bool,
    pub weight: f32,
}

impl Target {
    /// ±1 label.
    pub fn sign(&self) -> f64 {
        if self.positive {
            1.0
        } else {
            -1.0
        }
    }
}

/// Per-instance shortlisted targets for one level.
#[derive(Clone, Debug)]
pub struct LevelTargets {
    pub n_nodes: usize,
    pub rows: Vec<Vec<Target>>,
}

impl LevelTargets {
    /// Regroups targets per node: `(instance, target)` lists.
    pub fn by_node(&self) -> Vec<Vec<(u32, Target)>> {
        let mut out = vec![Vec::new(); self.n_nodes];
        for (i, row) in self.rows.iter().enumerate() {
            for t in row {
                out[t.node as usize].push((i as u32, *t));
            }
        }
        out
    }

    /// Targets covering every node for every instance, as when the whole
    /// level is shortlisted.
    pub fn dense(labels: &SparseMatrix, pos_weight: f32, neg_weight: f32) -> Self {
        let rows = (0..labels.n_rows())
            .map(|i| {
                (0..labels.n_cols() as u32)
                    .map(|j| {
                        let positive = labels.get(i, j as usize) != 0.0;
                        Target {
                            node: j,
                            positive,
                            weight: if positive { pos_weight } else { neg_weight },
                        }
                    })
                    .collect()
            })
            .collect();
        LevelTargets {
            n_nodes: labels.n_cols(),
            rows,
        }
    }
}

fn l1_normalize_rows(m: &SparseMatrix) -> SparseMatrix {
    let norms = m.row_l1_norms();
    let rows = (0..m.n_rows())
        .map(|i| {
            let n = norms[i] as f64;
            m.row_entries(i)
                .map(|(c, v)| (c, (v as f64 / n) as f32))
                .collect()
        })
        .collect();
    SparseMatrix::from_rows_unchecked(m.n_cols(), rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::DenseMatrix;

    fn dense(rows: &[&[f32]]) -> SparseMatrix {
        let v: Vec<f32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        SparseMatrix::from_dense(&DenseMatrix::from_vec(rows.len(), rows[0].len(), v).unwrap())
    }

    fn two_level() -> HierarchicalLabelTree {
        let c2 = dense(&[&[1., 0.], &[1., 0.], &[0., 1.], &[0., 1.]]);
        HierarchicalLabelTree::from_indexers(vec![SparseMatrix::ones(2, 1), c2]).unwrap()
    }

    #[test]
    fn split_positives_share_relevance() {
        let y = dense(&[&[1., 0., 1., 0.]]);
        let s = MultiResolutionSignals::build(&y, &two_level(), 1.0, WeightMode::CostSensitive)
            .unwrap();
        assert_eq!(s.labels(1), &dense(&[&[1., 1.]]));
        assert_eq!(s.relevance(1), &dense(&[&[1., 1.]]));
        assert_eq!(s.normalized_relevance(1), &dense(&[&[0.5, 0.5]]));
        assert_eq!(s.labels(2), &y);
    }

    #[test]
    fn sibling_positives_collapse() {
        let y = dense(&[&[1., 1., 0., 0.]]);
        let s = MultiResolutionSignals::build(&y, &two_level(), 1.0, WeightMode::CostSensitive)
            .unwrap();
        assert_eq!(s.labels(1), &dense(&[&[1., 0.]]));
        assert_eq!(s.relevance(1), &dense(&[&[2., 0.]]));
        assert_eq!(s.normalized_relevance(1).get(0, 0), 1.0);
    }

    #[test]
    fn unlabeled_instances_stay_empty() {
        let y = SparseMatrix::zeros(3, 4);
        let s = MultiResolutionSignals::build(&y, &two_level(), 1.0, WeightMode::CostSensitive)
            .unwrap();
        for t in 1..=2 {
            assert_eq!(s.labels(t).nnz(), 0);
            assert_eq!(s.relevance(t).nnz(), 0);
        }
    }

    #[test]
    fn column_mismatch_rejected() {
        let y = SparseMatrix::zeros(1, 5);
        assert!(
            MultiResolutionSignals::build(&y, &two_level(), 1.0, WeightMode::CostSensitive)
                .is_err()
        );
    }

    #[test]
    fn weights_follow_mode() {
        // Four positives under node 0, so each leaf-level positive carries 1/4.
        let c2 = dense(&[&[1., 0.], &[1., 0.], &[1., 0.], &[1., 0.], &[0., 1.]]);
        let tree =
            HierarchicalLabelTree::from_indexers(vec![SparseMatrix::ones(2, 1), c2]).unwrap();
        let y = dense(&[&[1., 1., 1., 1., 0.]]);
        let cs = MultiResolutionSignals::build(&y, &tree, 0.25, WeightMode::CostSensitive).unwrap();
        assert_eq!(cs.relevance_weight(2, 0, 0), 0.25);
        assert_eq!(cs.relevance_weight(2, 0, 4), 0.25);
        assert_eq!(cs.relevance_weight(1, 0, 0), 1.0);
        assert_eq!(cs.relevance_weight(1, 0, 1), 0.25);
        let uni = MultiResolutionSignals::build(&y, &tree, 0.25, WeightMode::Uniform).unwrap();
        assert_eq!(uni.relevance_weight(2, 0, 0), 1.0);
        assert_eq!(uni.relevance_weight(2, 0, 4), 1.0);
    }

    #[test]
    fn targets_follow_shortlist() {
        let y = dense(&[&[1., 0., 1., 0.]]);
        let s =
            MultiResolutionSignals::build(&y, &two_level(), 0.5, WeightMode::CostSensitive).unwrap();
        let shortlist = dense(&[&[1., 1., 0., 0.]]);
        let t = s.targets(2, &shortlist).unwrap();
        assert_eq!(t.rows[0].len(), 2);
        assert!(t.rows[0][0].positive && (t.rows[0][0].weight - 0.5).abs() < 1e-7);
        assert!(!t.rows[0][1].positive && t.rows[0][1].weight == 0.5);
        assert!(s.targets(2, &SparseMatrix::zeros(1, 3)).is_err());
    }
}
