//! Label features, balanced spherical k-means and hierarchical label trees.
//!
//! A tree of depth `D` is stored as indexers `C(1)..C(D)`, where `C(t)` is a
//! binary `K_t × K_{t-1}` matrix with exactly one nonzero per row mapping a
//! node to its parent (`K_0 = 1`, `K_D = L`). Children of the same parent
//! are numbered contiguously.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

pub const DEFAULT_KMEANS_ITERS: usize = 20;

/// PIFA label embeddings: row `ℓ` is the normalized sum of the feature rows
/// of the positive instances of label `ℓ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelFeatures(SparseMatrix);

impl LabelFeatures {
    pub fn matrix(&self) -> &SparseMatrix {
        &self.0
    }

    pub fn n_labels(&self) -> usize {
        self.0.n_rows()
    }

    /// Wraps arbitrary label embeddings, normalizing rows.
    pub fn from_matrix(z: SparseMatrix) -> Self {
        LabelFeatures(z.row_l2_normalize())
    }
}

pub fn pifa(features: &SparseMatrix, labels: &SparseMatrix) -> Result<LabelFeatures> {
    if features.n_rows() != labels.n_rows() {
        return Err(Error::dim(format!(
            "{} feature rows but {} label rows",
            features.n_rows(),
            labels.n_rows()
        )));
    }
    let sums = labels.binarize().transpose().matmul(features)?;
    Ok(LabelFeatures(sums.row_l2_normalize()))
}

/// Requested tree shape: explicit level sizes (`"16-256-3956"`) or a
/// branching factor with a maximum leaf-cluster size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TreeShape {
    Levels(Vec<usize>),
    Branching {
        branching: usize,
        max_leaf_size: usize,
    },
}

impl FromStr for TreeShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.trim().strip_prefix("B=") {
            let bad = || Error::invalid(format!("bad tree shape `{s}`"));
            let (b, leaf) = rest.split_once(",leaf<=").ok_or_else(bad)?;
            return Ok(TreeShape::Branching {
                branching: b.trim().parse().map_err(|_| bad())?,
                max_leaf_size: leaf.trim().parse().map_err(|_| bad())?,
            });
        }
        let levels = s
            .trim()
            .split('-')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::invalid(format!("bad tree shape `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TreeShape::Levels(levels))
    }
}

impl fmt::Display for TreeShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeShape::Levels(l) => {
                let parts: Vec<String> = l.iter().map(usize::to_string).collect();
                write!(f, "{}", parts.join("-"))
            }
            TreeShape::Branching {
                branching,
                max_leaf_size,
            } => write!(f, "B={branching},leaf<={max_leaf_size}"),
        }
    }
}

impl TryFrom<String> for TreeShape {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TreeShape> for String {
    fn from(t: TreeShape) -> String {
        t.to_string()
    }
}

impl TreeShape {
    /// Level sizes `K_1..K_D` for `n_labels` labels.
    pub fn level_sizes(&self, n_labels: usize) -> Result<Vec<usize>> {
        if n_labels == 0 {
            return Err(Error::invalid("tree over zero labels"));
        }
        match self {
            TreeShape::Levels(levels) => {
                if levels.is_empty() {
                    return Err(Error::invalid("empty tree shape"));
                }
                if *levels.last().unwrap() != n_labels {
                    return Err(Error::invalid(format!(
                        "last level size {} does not equal the label count {n_labels}",
                        levels.last().unwrap()
                    )));
                }
                if levels.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::invalid("level sizes must be strictly increasing"));
                }
                if levels.len() > 1 && levels[0] < 2 {
                    return Err(Error::invalid("first level needs at least 2 nodes"));
                }
                Ok(levels.clone())
            }
            &TreeShape::Branching {
                branching,
                max_leaf_size,
            } => {
                if branching < 2 {
                    return Err(Error::invalid("branching factor must be at least 2"));
                }
                if max_leaf_size == 0 {
                    return Err(Error::invalid("max_leaf_size must be at least 1"));
                }
                let mut sizes = Vec::new();
                let mut k = 1usize;
                while k.saturating_mul(max_leaf_size) < n_labels {
                    k = k.saturating_mul(branching);
                    if k >= n_labels {
                        break;
                    }
                    sizes.push(k);
                }
                sizes.push(n_labels);
                Ok(sizes)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchicalLabelTree {
    indexers: Vec<SparseMatrix>,
    /// `children[t-1][p]`: level-`t` nodes whose parent is node `p` of level `t-1`.
    children: Vec<Vec<Vec<u32>>>,
    /// `parents[t-1][c]`: parent of node `c` of level `t`.
    parents: Vec<Vec<u32>>,
}

impl HierarchicalLabelTree {
    /// Validates indexers `C(1)..C(D)` and builds the child/parent lookups.
    pub fn from_indexers(indexers: Vec<SparseMatrix>) -> Result<Self> {
        if indexers.is_empty() {
            return Err(Error::invalid("a tree needs at least one level"));
        }
        let mut prev = 1usize;
        let mut children = Vec::with_capacity(indexers.len());
        let mut parents = Vec::with_capacity(indexers.len());
        for (t, c) in indexers.iter().enumerate() {
            if c.n_cols() != prev {
                return Err(Error::dim(format!(
                    "indexer {} has {} columns, expected {prev}",
                    t + 1,
                    c.n_cols()
                )));
            }
            let mut level_children = vec![Vec::new(); prev];
            let mut level_parents = Vec::with_capacity(c.n_rows());
            for node in 0..c.n_rows() {
                let (cols, vals) = c.row(node);
                if cols.len() != 1 || vals[0] != 1.0 {
                    return Err(Error::Format(format!(
                        "node {node} of level {} must have exactly one parent",
                        t + 1
                    )));
                }
                level_children[cols[0] as usize].push(node as u32);
                level_parents.push(cols[0]);
            }
            if let Some(p) = level_children.iter().position(Vec::is_empty) {
                return Err(Error::Format(format!(
                    "node {p} of level {t} has no children"
                )));
            }
            children.push(level_children);
            parents.push(level_parents);
            prev = c.n_rows();
        }
        Ok(HierarchicalLabelTree {
            indexers,
            children,
            parents,
        })
    }

    /// A single-level tree where every label hangs off the root.
    pub fn flat(n_labels: usize) -> Self {
        Self::from_indexers(vec![SparseMatrix::ones(n_labels, 1)]).expect("flat tree is valid")
    }

    pub fn depth(&self) -> usize {
        self.indexers.len()
    }

    pub fn n_labels(&self) -> usize {
        self.indexers.last().unwrap().n_rows()
    }

    /// `K_t`; level 0 is the root.
    pub fn level_size(&self, level: usize) -> usize {
        if level == 0 {
            1
        } else {
            self.indexers[level - 1].n_rows()
        }
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.indexers.iter().map(SparseMatrix::n_rows).collect()
    }

    /// Indexer `C(level)`, `level` in `1..=depth`.
    pub fn indexer(&self, level: usize) -> &SparseMatrix {
        &self.indexers[level - 1]
    }

    pub fn indexers(&self) -> &[SparseMatrix] {
        &self.indexers
    }

    /// Children at `level` of each node at `level - 1`.
    pub fn children(&self, level: usize) -> &[Vec<u32>] {
        &self.children[level - 1]
    }

    pub fn parents(&self, level: usize) -> &[u32] {
        &self.parents[level - 1]
    }

    /// Largest number of children of any node.
    pub fn max_branching(&self) -> usize {
        self.children
            .iter()
            .flat_map(|l| l.iter().map(Vec::len))
            .max()
            .unwrap_or(0)
    }

    /// Writes `C_{t}.xrsm` for every level into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (t, c) in self.indexers.iter().enumerate() {
            let f = fs::File::create(dir.join(format!("C_{}.xrsm", t + 1)))?;
            c.write_binary(std::io::BufWriter::new(f))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, depth: usize) -> Result<Self> {
        let mut indexers = Vec::with_capacity(depth);
        for t in 1..=depth {
            let path = dir.join(format!("C_{t}.xrsm"));
            if !path.exists() {
                return Err(Error::MissingComponent(path));
            }
            let f = fs::File::open(&path)?;
            indexers.push(SparseMatrix::read_binary(std::io::BufReader::new(f))?);
        }
        Self::from_indexers(indexers)
    }
}

/// Recursive top-down balanced partitioning of the label embeddings.
pub fn build_tree(
    z: &LabelFeatures,
    shape: &TreeShape,
    seed: u64,
    max_iters: usize,
) -> Result<HierarchicalLabelTree> {
    let n_labels = z.n_labels();
    let sizes = shape.level_sizes(n_labels)?;
    let points = z.matrix();
    let mut groups: Vec<Vec<usize>> = vec![(0..n_labels).collect()];
    let mut indexers = Vec::with_capacity(sizes.len());

    for (t, &k_t) in sizes[..sizes.len() - 1].iter().enumerate() {
        let counts = distribute_children(&groups, k_t)?;
        let splits: Vec<Vec<Vec<usize>>> = groups
            .par_iter()
            .zip(counts.par_iter())
            .enumerate()
            .map(|(node, (members, &n_children))| {
                split_group(points, members, n_children, mix_seed(seed, t as u64, node as u64), max_iters)
            })
            .collect::<Result<_>>()?;
        let mut next = Vec::with_capacity(k_t);
        let mut rows = Vec::with_capacity(k_t);
        for (parent, children) in splits.into_iter().enumerate() {
            for child in children {
                rows.push(vec![(parent as u32, 1.0)]);
                next.push(child);
            }
        }
        indexers.push(SparseMatrix::from_rows_unchecked(groups.len(), rows));
        groups = next;
    }

    let mut leaf_parent = vec![0u32; n_labels];
    for (g, members) in groups.iter().enumerate() {
        for &l in members {
            leaf_parent[l] = g as u32;
        }
    }
    let rows = leaf_parent.iter().map(|&p| vec![(p, 1.0)]).collect();
    indexers.push(SparseMatrix::from_rows_unchecked(groups.len(), rows));
    HierarchicalLabelTree::from_indexers(indexers)
}

/// Splits `k` children across parent groups as evenly as possible; larger
/// groups receive the remainder.
fn distribute_children(groups: &[Vec<usize>], k: usize) -> Result<Vec<usize>> {
    let n = groups.len();
    if k < n {
        return Err(Error::invalid(format!(
            "level with {k} nodes cannot sit below {n} parents"
        )));
    }
    let mut counts = vec![k / n; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| groups[b].len().cmp(&groups[a].len()).then(a.cmp(&b)));
    for &g in order.iter().take(k % n) {
        counts[g] += 1;
    }
    for (g, &c) in counts.iter().enumerate() {
        if groups[g].len() < c {
            return Err(Error::invalid(format!(
                "infeasible tree shape: a node with {} labels cannot have {c} children",
                groups[g].len()
            )));
        }
    }
    Ok(counts)
}

fn split_group(
    points: &SparseMatrix,
    members: &[usize],
    n_children: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Vec<Vec<usize>>> {
    if n_children == 1 {
        return Ok(vec![members.to_vec()]);
    }
    let assignment = kmeans_members(points, members, n_children, seed, max_iters)?;
    let mut out = vec![Vec::new(); n_children];
    for (pos, &c) in assignment.iter().enumerate() {
        out[c].push(members[pos]);
    }
    for g in &mut out {
        g.sort_unstable();
    }
    Ok(out)
}

pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Balanced spherical k-means over all rows of `points` into `k` clusters
/// whose sizes differ by at most one. Returns the cluster of each row.
pub fn balanced_kmeans(
    points: &SparseMatrix,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Vec<usize>> {
    let members: Vec<usize> = (0..points.n_rows()).collect();
    kmeans_members(points, &members, k, seed, max_iters)
}

/// Sum over clusters of the norm of the summed member vectors, i.e. the
/// total cosine similarity of points to their normalized cluster means.
pub fn spherical_objective(points: &SparseMatrix, assignment: &[usize], k: usize) -> f64 {
    let mut sums = vec![vec![0f64; points.n_cols()]; k];
    for (i, &c) in assignment.iter().enumerate() {
        for (j, v) in points.row_entries(i) {
            sums[c][j as usize] += v as f64;
        }
    }
    sums.iter()
        .map(|s| s.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum()
}

fn kmeans_members(
    points: &SparseMatrix,
    members: &[usize],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Vec<usize>> {
    let n = members.len();
    if k < 2 {
        return Err(Error::invalid("balanced k-means needs at least 2 clusters"));
    }
    if k > n {
        return Err(Error::invalid(format!(
            "cannot split {n} points into {k} clusters"
        )));
    }
    let dim = points.n_cols();

    // Work in an order determined by point content so the result does not
    // depend on how the caller numbered the points.
    let mut canon: Vec<usize> = (0..n).collect();
    let hashes: Vec<u64> = members.iter().map(|&m| row_hash(points, m)).collect();
    canon.sort_by_key(|&p| (hashes[p], p));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, members, &canon, k, dim, &mut rng);
    let mut assignment = vec![usize::MAX; n];
    let mut scores = vec![0f32; n * k];

    for _ in 0..max_iters.max(1) {
        for (p, row) in scores.chunks_mut(k).enumerate() {
            for (c, s) in row.iter_mut().enumerate() {
                *s = points.row_dot_dense(members[p], &centroids[c]);
            }
        }
        let next = balanced_assign(&scores, k, &canon);
        let changed = next != assignment;
        assignment = next;
        if !changed {
            break;
        }
        centroids = normalized_means(points, members, &canon, &assignment, k, dim);
    }
    Ok(assignment)
}

/// Spherical k-means++ seeding: each new centroid is drawn with weight
/// `1 - max similarity` to the centroids chosen so far.
fn seed_centroids(
    points: &SparseMatrix,
    members: &[usize],
    canon: &[usize],
    k: usize,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f32>> {
    let n = canon.len();
    let dense_row = |p: usize| {
        let mut v = vec![0f32; dim];
        for (j, x) in points.row_entries(members[p]) {
            v[j as usize] = x;
        }
        v
    };
    let mut chosen = vec![false; n];
    let first = canon[rng.gen_range(0..n)];
    chosen[first] = true;
    let mut centroids = vec![dense_row(first)];
    let mut best_sim = vec![f32::NEG_INFINITY; n];
    while centroids.len() < k {
        let last = centroids.last().unwrap();
        for p in 0..n {
            best_sim[p] = best_sim[p].max(points.row_dot_dense(members[p], last));
        }
        let weights: Vec<f64> = canon
            .iter()
            .map(|&p| {
                if chosen[p] {
                    0.0
                } else {
                    (1.0 - best_sim[p] as f64).max(0.0)
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut idx = weights.len() - 1;
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 && r < w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            while weights[idx] == 0.0 {
                idx -= 1;
            }
            canon[idx]
        } else {
            *canon.iter().find(|&&p| !chosen[p]).unwrap()
        };
        chosen[pick] = true;
        centroids.push(dense_row(pick));
    }
    centroids
}

/// Greedy capacity-constrained assignment. Points are visited by descending
/// margin between their best and second-best centroid and take the best
/// cluster with room left. Exactly `n mod k` clusters get `⌈n/k⌉` points,
/// the rest `⌊n/k⌋`.
fn balanced_assign(scores: &[f32], k: usize, canon: &[usize]) -> Vec<usize> {
    let n = scores.len() / k;
    let small = n / k;
    let n_large = n % k;
    let rank: Vec<usize> = {
        let mut r = vec![0; n];
        for (i, &p) in canon.iter().enumerate() {
            r[p] = i;
        }
        r
    };
    let margins: Vec<f32> = scores
        .chunks(k)
        .map(|row| {
            let (mut a, mut b) = (f32::NEG_INFINITY, f32::NEG_INFINITY);
            for &s in row {
                if s > a {
                    b = a;
                    a = s;
                } else if s > b {
                    b = s;
                }
            }
            a - b
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| margins[y].total_cmp(&margins[x]).then(rank[x].cmp(&rank[y])));

    let mut sizes = vec![0usize; k];
    let mut large_used = 0;
    let mut assignment = vec![0usize; n];
    let mut prefs: Vec<usize> = (0..k).collect();
    for p in order {
        let row = &scores[p * k..(p + 1) * k];
        prefs.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        let c = *prefs
            .iter()
            .find(|&&c| sizes[c] < small || (sizes[c] == small && large_used < n_large))
            .expect("capacities always cover all points");
        if sizes[c] == small {
            large_used += 1;
        }
        sizes[c] += 1;
        assignment[p] = c;
    }
    assignment
}

fn normalized_means(
    points: &SparseMatrix,
    members: &[usize],
    canon: &[usize],
    assignment: &[usize],
    k: usize,
    dim: usize,
) -> Vec<Vec<f32>> {
    let mut sums = vec![vec![0f64; dim]; k];
    for &p in canon {
        let s = &mut sums[assignment[p]];
        for (j, v) in points.row_entries(members[p]) {
            s[j as usize] += v as f64;
        }
    }
    sums.into_iter()
        .map(|s| {
            let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
            s.into_iter().map(|v| (v * scale) as f32).collect()
        })
        .collect()
}

/// FNV-1a over the row's column indices and value bits.
fn row_hash(points: &SparseMatrix, row: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (c, v) in points.row_entries(row) {
        for b in c.to_le_bytes().into_iter().chain(v.to_bits().to_le_bytes()) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}
