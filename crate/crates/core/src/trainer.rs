//! End-to-end training and beam-search inference.
//!
//! `fit` runs in two phases. A preliminary tree built from TF-IDF label
//! embeddings drives a coarse-to-fine curriculum for the encoder, each level
//! warm-started from the previous one and trained only on shortlisted
//! clusters. The refined tree is then built on the concatenated features of
//! the final encoder and one sparse linear ranker is trained per level.
//!
//! Node scores along a tree path accumulate as `Σ ln σ(wᵀφ)`.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::encoder::{bootstrap_head, EncoderModel};
use crate::error::{Error, Result, StageExt};
use crate::label_tree::{build_tree, mix_seed, pifa, HierarchicalLabelTree};
use crate::linear::{self, SolverConfig};
use crate::multires::{LevelTargets, MultiResolutionSignals};
use crate::sparse::{log_sigmoid, SparseMatrix};
use crate::vectorizer::{concat_features, TfidfModel};

/// Model input: raw documents or precomputed sparse features.
#[derive(Clone, Copy, Debug)]
pub enum Inputs<'a> {
    Text(&'a [String]),
    Features(&'a SparseMatrix),
}

impl Inputs<'_> {
    pub fn len(&self) -> usize {
        match self {
            Inputs::Text(d) => d.len(),
            Inputs::Features(x) => x.n_rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Source of the statistical feature block.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureSource {
    Tfidf(TfidfModel),
    /// Externally computed features with this many columns.
    Precomputed { dim: usize },
}

impl FeatureSource {
    pub fn dim(&self) -> usize {
        match self {
            FeatureSource::Tfidf(m) => m.dim(),
            FeatureSource::Precomputed { dim } => *dim,
        }
    }

    /// Row-normalized statistical features.
    pub fn transform(&self, input: Inputs) -> Result<SparseMatrix> {
        match (self, input) {
            (FeatureSource::Tfidf(m), Inputs::Text(docs)) => Ok(m.transform(docs)),
            (FeatureSource::Precomputed { dim }, Inputs::Features(x)) => {
                let x = if x.n_cols() == *dim {
                    x.clone()
                } else {
                    let rows = (0..x.n_rows())
                        .map(|i| x.row_entries(i).filter(|&(c, _)| (c as usize) < *dim).collect())
                        .collect();
                    SparseMatrix::from_rows_unchecked(*dim, rows)
                };
                Ok(x.row_l2_normalize())
            }
            (FeatureSource::Tfidf(_), Inputs::Features(_)) => {
                Err(Error::invalid("model was trained on text; pass documents"))
            }
            (FeatureSource::Precomputed { .. }, Inputs::Text(_)) => {
                Err(Error::invalid("model was trained on feature vectors; pass features"))
            }
        }
    }
}

/// Binary shortlist for level `t`: children of the predicted parents in
/// `p_prev` together with children of the true parents in `y_prev`. With a
/// single parent (the root) every level-`t` node is shortlisted.
pub fn make_shortlist(
    p_prev: &SparseMatrix,
    y_prev: &SparseMatrix,
    c_t: &SparseMatrix,
) -> Result<SparseMatrix> {
    if p_prev.shape() != y_prev.shape() {
        return Err(Error::dim(format!(
            "predictions {:?} and labels {:?} differ in shape",
            p_prev.shape(),
            y_prev.shape()
        )));
    }
    if p_prev.n_cols() != c_t.n_cols() {
        return Err(Error::dim(format!(
            "previous level has {} nodes but the indexer has {} parents",
            p_prev.n_cols(),
            c_t.n_cols()
        )));
    }
    if c_t.n_cols() == 1 {
        return Ok(SparseMatrix::ones(p_prev.n_rows(), c_t.n_rows()));
    }
    let from_pred = p_prev.binarize().matmul_transpose(c_t)?;
    let from_true = y_prev.binarize().matmul_transpose(c_t)?;
    Ok(from_pred.add(&from_true)?.binarize())
}

/// Scores the children of every beam node and keeps the `k` best per row.
///
/// `ranker` is `K_t × d` (row `j` holds node `j`'s weights) and
/// `children[p]` lists the level-`t` children of parent `p`. `beam_prev`
/// holds accumulated path scores of the kept parents; `None` stands for the
/// root with score 0. Returned values are path scores.
pub fn predict_level(
    ranker: &SparseMatrix,
    features: &SparseMatrix,
    beam_prev: Option<&SparseMatrix>,
    children: &[Vec<u32>],
    k: usize,
) -> Result<SparseMatrix> {
    if k == 0 {
        return Err(Error::invalid("beam width must be at least 1"));
    }
    if ranker.n_cols() != features.n_cols() {
        return Err(Error::dim(format!(
            "ranker expects {} features, got {}",
            ranker.n_cols(),
            features.n_cols()
        )));
    }
    if let Some(b) = beam_prev {
        if b.n_rows() != features.n_rows() || b.n_cols() != children.len() {
            return Err(Error::dim("beam does not match features or tree level"));
        }
    }
    let rows = (0..features.n_rows())
        .into_par_iter()
        .map_init(
            || vec![0f32; features.n_cols()],
            |x, i| {
                let parents: Vec<(u32, f64)> = match beam_prev {
                    Some(b) => b.row_entries(i).map(|(p, s)| (p, s as f64)).collect(),
                    None => vec![(0, 0.0)],
                };
                let (cols, vals) = features.row(i);
                scatter(x, cols, vals);
                let (kept, _) = expand(ranker, x, &parents, children, k);
                clear(x, cols);
                kept.into_iter().map(|(c, s)| (c, store(s))).collect()
            },
        )
        .collect();
    Ok(SparseMatrix::from_rows_unchecked(ranker.n_rows(), rows))
}

/// Independent weighted ℓ2-regularized solves, one per node, over the
/// shortlisted instances of each node. Returns `K_t × d`.
pub fn train_ranker_level(
    features: &SparseMatrix,
    targets: &LevelTargets,
    solver: &SolverConfig,
) -> Result<SparseMatrix> {
    if targets.rows.len() != features.n_rows() {
        return Err(Error::dim("targets and features disagree on instance count"));
    }
    linear::train_columns(features, &targets.by_node(), solver)
}

fn scatter(x: &mut [f32], cols: &[u32], vals: &[f32]) {
    for (&c, &v) in cols.iter().zip(vals) {
        x[c as usize] = v;
    }
}

fn clear(x: &mut [f32], cols: &[u32]) {
    for &c in cols {
        x[c as usize] = 0.0;
    }
}

fn node_score(ranker: &SparseMatrix, node: u32, x: &[f32]) -> f64 {
    let (cols, vals) = ranker.row(node as usize);
    cols.iter()
        .zip(vals)
        .map(|(&c, &w)| w as f64 * x[c as usize] as f64)
        .sum()
}

/// Children of `parents` ranked by path score, truncated to `k`, plus the
/// number of ranker rows evaluated.
fn expand(
    ranker: &SparseMatrix,
    x: &[f32],
    parents: &[(u32, f64)],
    children: &[Vec<u32>],
    k: usize,
) -> (Vec<(u32, f64)>, usize) {
    let mut cand = Vec::new();
    for &(p, ps) in parents {
        for &c in &children[p as usize] {
            cand.push((c, ps + log_sigmoid(node_score(ranker, c, x))));
        }
    }
    let evaluated = cand.len();
    cand.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    cand.truncate(k);
    (cand, evaluated)
}

/// Path scores are strictly negative; keep them nonzero once rounded so
/// they survive in sparse storage.
fn store(s: f64) -> f32 {
    (s as f32).min(-f32::MIN_POSITIVE)
}

/// Ranked predictions with per-instance evaluation counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    /// `(label, path score)` sorted by score descending then label.
    pub rows: Vec<Vec<(u32, f32)>>,
    /// Ranker rows evaluated for each instance.
    pub evaluations: Vec<usize>,
}

impl Predictions {
    pub fn to_matrix(&self, n_labels: usize) -> SparseMatrix {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.sort_unstable_by_key(|e| e.0);
                r
            })
            .collect();
        SparseMatrix::from_rows_unchecked(n_labels, rows)
    }

    /// Label indices only, in rank order.
    pub fn ranked_labels(&self) -> Vec<Vec<u32>> {
        self.rows.iter().map(|r| r.iter().map(|e| e.0).collect()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct XrModel {
    source: FeatureSource,
    encoder: Option<EncoderModel>,
    tree: HierarchicalLabelTree,
    /// `K_t × d_cat` per level.
    rankers: Vec<SparseMatrix>,
    config: RunConfig,
}

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    crate_version: String,
    feature_source: String,
    feature_dim: usize,
    d_dnn: Option<usize>,
    level_sizes: Vec<usize>,
    config: RunConfig,
}

impl XrModel {
    /// Trains a model on `input` with labels `y` (`N × L`).
    pub fn fit(input: Inputs, y: &SparseMatrix, cfg: &RunConfig) -> Result<XrModel> {
        cfg.validate()?;
        if input.is_empty() {
            return Err(Error::invalid("empty training set"));
        }
        if input.len() != y.n_rows() {
            return Err(Error::dim(format!(
                "{} training inputs but {} label rows",
                input.len(),
                y.n_rows()
            )));
        }
        let y = &y.binarize();
        let source = match input {
            Inputs::Text(docs) => {
                FeatureSource::Tfidf(TfidfModel::fit(docs, &cfg.vectorizer).stage("vectorizer")?)
            }
            Inputs::Features(x) => FeatureSource::Precomputed { dim: x.n_cols() },
        };
        let x = source.transform(input)?;
        let solver = cfg.solver();

        let encoder = if cfg.encoder.enabled {
            Some(curriculum(&x, y, cfg, &solver)?)
        } else {
            None
        };
        let phi = concat_features(&x, encoder.as_ref().map(|e| e.embed(&x)).as_ref())?;

        let z = pifa(&phi, y).stage("refined tree")?;
        let tree = build_tree(
            &z,
            &cfg.label_tree.hlt_refine,
            mix_seed(cfg.seed, 2, 0),
            cfg.label_tree.kmeans_iters,
        )
        .stage("refined tree")?;
        info!("refined tree levels {:?}", tree.level_sizes());
        let signals =
            MultiResolutionSignals::build(y, &tree, cfg.multires.alpha, cfg.multires.weight_mode())
                .stage("signals")?;
        let mut rankers = Vec::with_capacity(tree.depth());
        let mut beam: Option<SparseMatrix> = None;
        for t in 1..=tree.depth() {
            let m = level_shortlist(t, beam.as_ref(), &signals, &tree, y.n_rows())?;
            let targets = signals.targets(t, &m).stage("rankers")?;
            let w = train_ranker_level(&phi, &targets, &solver).stage("rankers")?;
            info!("level {t}: ranker nnz {}", w.nnz());
            if t < tree.depth() {
                beam = Some(
                    predict_level(&w, &phi, beam.as_ref(), tree.children(t), cfg.trainer.beam)
                        .stage("rankers")?,
                );
            }
            rankers.push(w);
        }
        Ok(XrModel {
            source,
            encoder,
            tree,
            rankers,
            config: cfg.clone(),
        })
    }

    pub fn tree(&self) -> &HierarchicalLabelTree {
        &self.tree
    }

    pub fn encoder(&self) -> Option<&EncoderModel> {
        self.encoder.as_ref()
    }

    pub fn feature_source(&self) -> &FeatureSource {
        &self.source
    }

    /// Level rankers, each `K_t × d_cat`.
    pub fn rankers(&self) -> &[SparseMatrix] {
        &self.rankers
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn n_labels(&self) -> usize {
        self.tree.n_labels()
    }

    /// Concatenated features `Φ_cat` of `input`.
    pub fn featurize(&self, input: Inputs) -> Result<SparseMatrix> {
        let x = self.source.transform(input)?;
        concat_features(&x, self.encoder.as_ref().map(|e| e.embed(&x)).as_ref())
    }

    pub fn predict(&self, input: Inputs, beam: usize, topk: usize) -> Result<Predictions> {
        self.predict_features(&self.featurize(input)?, beam, topk)
    }

    /// Beam search over the tree from precomputed `Φ_cat`. Keeps `beam`
    /// nodes per level and `max(beam, topk)` at the leaves.
    pub fn predict_features(&self, phi: &SparseMatrix, beam: usize, topk: usize) -> Result<Predictions> {
        if beam == 0 || topk == 0 {
            return Err(Error::invalid("beam and topk must be at least 1"));
        }
        let d = self.rankers[0].n_cols();
        if phi.n_cols() != d {
            return Err(Error::dim(format!("expected {d} feature columns, got {}", phi.n_cols())));
        }
        let depth = self.tree.depth();
        let out: Vec<(Vec<(u32, f32)>, usize)> = (0..phi.n_rows())
            .into_par_iter()
            .map_init(
                || vec![0f32; d],
                |x, i| {
                    let (cols, vals) = phi.row(i);
                    scatter(x, cols, vals);
                    let mut nodes = vec![(0u32, 0f64)];
                    let mut evaluated = 0;
                    for t in 1..=depth {
                        let width = if t == depth { beam.max(topk) } else { beam };
                        let (kept, n) = expand(&self.rankers[t - 1], x, &nodes, self.tree.children(t), width);
                        nodes = kept;
                        evaluated += n;
                    }
                    clear(x, cols);
                    nodes.truncate(topk);
                    (nodes.into_iter().map(|(c, s)| (c, store(s))).collect(), evaluated)
                },
            )
            .collect();
        let (rows, evaluations) = out.into_iter().unzip();
        Ok(Predictions { rows, evaluations })
    }

    /// Writes the model directory: `manifest.json`, `tfidf/`, `encoder/`,
    /// `tree/C_{t}.xrsm` and `ranker/W_{t}.xrsm` (`d_cat × K_t`).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").into(),
            feature_source: match self.source {
                FeatureSource::Tfidf(_) => "tfidf".into(),
                FeatureSource::Precomputed { .. } => "precomputed".into(),
            },
            feature_dim: self.source.dim(),
            d_dnn: self.encoder.as_ref().map(EncoderModel::d_dnn),
            level_sizes: self.tree.level_sizes(),
            config: self.config.clone(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        if let FeatureSource::Tfidf(m) = &self.source {
            m.save(&dir.join("tfidf"))?;
        }
        if let Some(e) = &self.encoder {
            e.save(&dir.join("encoder"))?;
        }
        self.tree.save(&dir.join("tree"))?;
        let rdir = dir.join("ranker");
        fs::create_dir_all(&rdir)?;
        for (t, w) in self.rankers.iter().enumerate() {
            let f = fs::File::create(rdir.join(format!("W_{}.xrsm", t + 1)))?;
            w.transpose().write_binary(BufWriter::new(f))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<XrModel> {
        let mpath = dir.join("manifest.json");
        if !mpath.exists() {
            return Err(Error::MissingComponent(mpath));
        }
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&mpath)?)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format version {}",
                manifest.format_version
            )));
        }
        let source = match manifest.feature_source.as_str() {
            "tfidf" => FeatureSource::Tfidf(TfidfModel::load(
                &dir.join("tfidf"),
                manifest.config.vectorizer.clone(),
            )?),
            "precomputed" => FeatureSource::Precomputed {
                dim: manifest.feature_dim,
            },
            other => return Err(Error::Format(format!("unknown feature source `{other}`"))),
        };
        let encoder = match manifest.d_dnn {
            Some(_) => Some(EncoderModel::load(&dir.join("encoder"))?),
            None => None,
        };
        let depth = manifest.level_sizes.len();
        let tree = HierarchicalLabelTree::load(&dir.join("tree"), depth)?;
        if tree.level_sizes() != manifest.level_sizes {
            return Err(Error::Format("tree does not match the manifest".into()));
        }
        let d_cat = source.dim() + manifest.d_dnn.unwrap_or(0);
        let mut rankers = Vec::with_capacity(depth);
        for t in 1..=depth {
            let path = dir.join("ranker").join(format!("W_{t}.xrsm"));
            if !path.exists() {
                return Err(Error::MissingComponent(path));
            }
            let w = SparseMatrix::read_binary(BufReader::new(fs::File::open(&path)?))?;
            if w.shape() != (d_cat, tree.level_size(t)) {
                return Err(Error::Format(format!(
                    "W_{t} is {:?}, expected {:?}",
                    w.shape(),
                    (d_cat, tree.level_size(t))
                )));
            }
            rankers.push(w.transpose());
        }
        Ok(XrModel {
            source,
            encoder,
            tree,
            rankers,
            config: manifest.config,
        })
    }
}

fn level_shortlist(
    t: usize,
    beam: Option<&SparseMatrix>,
    signals: &MultiResolutionSignals,
    tree: &HierarchicalLabelTree,
    n: usize,
) -> Result<SparseMatrix> {
    match beam {
        None => Ok(SparseMatrix::ones(n, tree.level_size(t))),
        Some(p) => make_shortlist(p, signals.labels(t - 1), tree.indexer(t)),
    }
}

/// Encoder curriculum over the preliminary tree. Returns the final encoder.
fn curriculum(
    x: &SparseMatrix,
    y: &SparseMatrix,
    cfg: &RunConfig,
    solver: &SolverConfig,
) -> Result<EncoderModel> {
    let z = pifa(x, y).stage("preliminary tree")?;
    let tree = build_tree(
        &z,
        &cfg.label_tree.hlt_prelim,
        mix_seed(cfg.seed, 1, 0),
        cfg.label_tree.kmeans_iters,
    )
    .stage("preliminary tree")?;
    info!("preliminary tree levels {:?}", tree.level_sizes());
    let signals =
        MultiResolutionSignals::build(y, &tree, cfg.multires.alpha, cfg.multires.weight_mode())
            .stage("preliminary signals")?;
    let mut encoder = EncoderModel::new(&cfg.encoder_config()).stage("encoder")?;
    let depth = tree.depth();
    let mut beam: Option<SparseMatrix> = None;
    for t in 1..=depth {
        let steps = (cfg.encoder.n_step / depth + usize::from(t - 1 < cfg.encoder.n_step % depth)).max(1);
        let m = level_shortlist(t, beam.as_ref(), &signals, &tree, y.n_rows())?;
        let targets = signals.targets(t, &m).stage("curriculum")?;
        let head = if t == 1 {
            encoder.init_head(tree.level_size(t), mix_seed(cfg.seed, 3, t as u64))
        } else {
            bootstrap_head(&encoder.embed(x), &targets, solver).stage("bootstrap")?
        };
        let mut train = cfg.encoder_train(steps);
        train.seed = mix_seed(cfg.seed, 4, t as u64);
        let fit = encoder.train_level(x, &targets, &head, &train).stage("encoder training")?;
        if let (Some(first), Some(last)) = (fit.losses.first(), fit.losses.last()) {
            info!("curriculum level {t}: {steps} steps, batch loss {first:.4} -> {last:.4}");
        }
        encoder = fit.encoder;
        if t < depth {
            let phi = concat_features(x, Some(&encoder.embed(x)))?;
            let w = train_ranker_level(&phi, &targets, solver).stage("curriculum")?;
            beam = Some(
                predict_level(&w, &phi, beam.as_ref(), tree.children(t), cfg.trainer.beam)
                    .stage("curriculum")?,
            );
        }
    }
    Ok(encoder)
}
