//! Datasets: SVMLight-style feature files, raw text with label files, and a
//! planted-cluster synthetic generator.
//!
//! Feature file lines look like `l1,l2 idx:val idx:val` with 0-based
//! indices. A line whose first field contains `:` or is empty has no labels.
//! An optional first line `N D L` gives the row, feature and label counts.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{SparseMatrix, SparseRow};
use crate::trainer::Inputs;

#[derive(Clone, Debug, PartialEq)]
pub enum Features {
    Sparse(SparseMatrix),
    Text(Vec<String>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Features,
    /// Binary `N × L`.
    pub labels: SparseMatrix,
    pub split: String,
}

impl Dataset {
    pub fn new(features: Features, labels: SparseMatrix, split: impl Into<String>) -> Result<Self> {
        let n = match &features {
            Features::Sparse(x) => x.n_rows(),
            Features::Text(d) => d.len(),
        };
        if n != labels.n_rows() {
            return Err(Error::dim(format!("{n} inputs but {} label rows", labels.n_rows())));
        }
        if labels.values().iter().any(|&v| v != 1.0) {
            return Err(Error::invalid("label values must be 1"));
        }
        Ok(Dataset {
            features,
            labels,
            split: split.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_labels(&self) -> usize {
        self.labels.n_cols()
    }

    pub fn inputs(&self) -> Inputs<'_> {
        match &self.features {
            Features::Sparse(x) => Inputs::Features(x),
            Features::Text(d) => Inputs::Text(d),
        }
    }

    /// Rows `[0, n)` and `[n, N)` as two datasets.
    pub fn split_at(&self, n: usize, names: (&str, &str)) -> Result<(Dataset, Dataset)> {
        if n > self.len() {
            return Err(Error::invalid("split point beyond the dataset"));
        }
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        let part = |rows: &[usize], name: &str| Dataset {
            features: match &self.features {
                Features::Sparse(x) => Features::Sparse(x.select_rows(rows)),
                Features::Text(d) => Features::Text(rows.iter().map(|&i| d[i].clone()).collect()),
            },
            labels: self.labels.select_rows(rows),
            split: name.into(),
        };
        Ok((part(&head, names.0), part(&tail, names.1)))
    }

    /// Renders sparse count features as documents of `t{index}` tokens.
    pub fn to_text(&self) -> Dataset {
        let docs = match &self.features {
            Features::Text(d) => d.clone(),
            Features::Sparse(x) => (0..x.n_rows())
                .map(|i| {
                    let mut words = Vec::new();
                    for (c, v) in x.row_entries(i) {
                        for _ in 0..(v.round().max(1.0) as usize) {
                            words.push(format!("t{c}"));
                        }
                    }
                    words.join(" ")
                })
                .collect(),
        };
        Dataset {
            features: Features::Text(docs),
            labels: self.labels.clone(),
            split: self.split.clone(),
        }
    }
}

fn parse_labels(field: &str, line: usize, n_labels: Option<usize>) -> Result<Vec<(u32, f32)>> {
    let mut out = Vec::new();
    for tok in field.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let l: u32 = tok.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad label `{tok}`"),
        })?;
        if let Some(n) = n_labels {
            if l as usize >= n {
                return Err(Error::Parse {
                    line,
                    msg: format!("label {l} out of range for {n} labels"),
                });
            }
        }
        out.push((l, 1.0));
    }
    out.sort_unstable_by_key(|e| e.0);
    out.dedup_by_key(|e| e.0);
    Ok(out)
}

fn parse_header(line: &str) -> Option<(usize, usize, usize)> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 3 || line.contains(':') || line.contains(',') {
        return None;
    }
    Some((f[0].parse().ok()?, f[1].parse().ok()?, f[2].parse().ok()?))
}

/// Reads a feature file. `n_features` / `n_labels` fix the dimensions
/// (otherwise taken from the header or the largest index seen).
pub fn read_svmlight<R: Read>(
    reader: R,
    n_features: Option<usize>,
    n_labels: Option<usize>,
) -> Result<Dataset> {
    let mut lines = BufReader::new(reader).lines().enumerate().peekable();
    let mut header = None;
    if let Some((_, Ok(first))) = lines.peek() {
        header = parse_header(first);
        if header.is_some() {
            lines.next();
        }
    }
    let d_fix = n_features.or(header.map(|h| h.1));
    let l_fix = n_labels.or(header.map(|h| h.2));
    let mut feats: Vec<SparseRow> = Vec::new();
    let mut labs: Vec<SparseRow> = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (label_field, rest) = match line.find(|c: char| c.is_whitespace()) {
            Some(p) if !line[..p].contains(':') => (&line[..p], &line[p..]),
            None if !line.contains(':') => (line.as_str(), ""),
            _ => ("", line.as_str()),
        };
        labs.push(parse_labels(label_field, lineno, l_fix)?);
        let mut row = Vec::new();
        for tok in rest.split_whitespace() {
            let bad = || Error::Parse {
                line: lineno,
                msg: format!("bad feature `{tok}`"),
            };
            let (i, v) = tok.split_once(':').ok_or_else(bad)?;
            let i: u32 = i.parse().map_err(|_| bad())?;
            let v: f32 = v.parse().map_err(|_| bad())?;
            if !v.is_finite() {
                return Err(bad());
            }
            if let Some(d) = d_fix {
                if i as usize >= d {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("feature {i} out of range for {d} features"),
                    });
                }
            }
            row.push((i, v));
        }
        feats.push(row);
    }
    if let Some((n, _, _)) = header {
        if n != feats.len() {
            return Err(Error::Format(format!("header declares {n} rows, found {}", feats.len())));
        }
    }
    let max_plus_one = |rows: &[SparseRow]| {
        rows.iter()
            .flat_map(|r| r.iter().map(|e| e.0 as usize + 1))
            .max()
            .unwrap_or(0)
    };
    let d = d_fix.unwrap_or_else(|| max_plus_one(&feats));
    let l = l_fix.unwrap_or_else(|| max_plus_one(&labs));
    Dataset::new(
        Features::Sparse(SparseMatrix::from_rows(d, feats)?),
        SparseMatrix::from_rows(l, labs)?,
        "",
    )
}

pub fn load_svmlight(path: &Path, n_features: Option<usize>, n_labels: Option<usize>) -> Result<Dataset> {
    let mut ds = read_svmlight(fs::File::open(path)?, n_features, n_labels)?;
    ds.split = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(ds)
}

/// Writes `features` and `labels` in feature-file format, with the
/// `N D L` header when `header` is set.
pub fn write_svmlight<W: Write>(
    mut w: W,
    features: &SparseMatrix,
    labels: &SparseMatrix,
    header: bool,
) -> Result<()> {
    if features.n_rows() != labels.n_rows() {
        return Err(Error::dim("features and labels disagree on row count"));
    }
    if header {
        writeln!(w, "{} {} {}", features.n_rows(), features.n_cols(), labels.n_cols())?;
    }
    for i in 0..features.n_rows() {
        let ls: Vec<String> = labels.row(i).0.iter().map(u32::to_string).collect();
        write!(w, "{}", ls.join(","))?;
        for (c, v) in features.row_entries(i) {
            write!(w, " {c}:{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Raw documents (one per line) with a parallel label file of
/// comma-separated indices.
pub fn load_text(docs: &Path, labels: &Path, n_labels: Option<usize>) -> Result<Dataset> {
    let docs: Vec<String> = fs::read_to_string(docs)?.lines().map(str::to_string).collect();
    let labels = read_label_file(fs::File::open(labels)?, n_labels)?;
    Dataset::new(Features::Text(docs), labels, "")
}

pub fn read_label_file<R: Read>(reader: R, n_labels: Option<usize>) -> Result<SparseMatrix> {
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        rows.push(parse_labels(&line?, i + 1, n_labels)?);
    }
    let l = n_labels.unwrap_or_else(|| {
        rows.iter()
            .flat_map(|r| r.iter().map(|e| e.0 as usize + 1))
            .max()
            .unwrap_or(0)
    });
    SparseMatrix::from_rows(l, rows)
}

pub fn write_label_file<W: Write>(mut w: W, labels: &SparseMatrix) -> Result<()> {
    for i in 0..labels.n_rows() {
        let ls: Vec<String> = labels.row(i).0.iter().map(u32::to_string).collect();
        writeln!(w, "{}", ls.join(","))?;
    }
    Ok(())
}

/// Planted hierarchical generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n: usize,
    pub n_labels: usize,
    /// Labels per planted cluster.
    pub cluster_size: usize,
    /// Probability that a token is replaced by a uniformly random feature.
    pub noise: f64,
    pub seed: u64,
    /// Inclusive range of positives per instance.
    pub min_labels: usize,
    pub max_labels: usize,
    /// Probability that an extra positive comes from outside the cluster.
    pub spread: f64,
    pub features_per_label: usize,
    pub features_per_cluster: usize,
    /// Tokens emitted per positive label, plus the same again for its cluster.
    pub tokens_per_label: usize,
    /// Extra vocabulary used only by noise.
    pub noise_features: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n: 2000,
            n_labels: 200,
            cluster_size: 8,
            noise: 0.05,
            seed: 0,
            min_labels: 1,
            max_labels: 1,
            spread: 0.0,
            features_per_label: 3,
            features_per_cluster: 4,
            tokens_per_label: 6,
            noise_features: 500,
        }
    }
}

impl SyntheticConfig {
    pub fn n_features(&self) -> usize {
        let clusters = self.n_labels.div_ceil(self.cluster_size);
        self.n_labels * self.features_per_label
            + clusters * self.features_per_cluster
            + self.noise_features
    }
}

/// Labels are grouped into contiguous clusters. Each instance picks a
/// cluster, draws its positives mostly from it, and emits token counts from
/// label- and cluster-specific features, each token corrupted with
/// probability `noise`.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.n_labels == 0 || cfg.cluster_size == 0 || cfg.min_labels == 0 {
        return Err(Error::invalid("labels, cluster size and min_labels must be positive"));
    }
    if cfg.min_labels > cfg.max_labels || cfg.max_labels > cfg.n_labels {
        return Err(Error::invalid("bad labels-per-instance range"));
    }
    if !(0.0..=1.0).contains(&cfg.noise) || !(0.0..=1.0).contains(&cfg.spread) {
        return Err(Error::invalid("noise and spread must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let l = cfg.n_labels;
    let n_clusters = l.div_ceil(cfg.cluster_size);
    let d = cfg.n_features();
    let label_base = 0;
    let cluster_base = l * cfg.features_per_label;
    let cluster_of = |lab: usize| lab / cfg.cluster_size;
    let members = |c: usize| (c * cfg.cluster_size)..((c + 1) * cfg.cluster_size).min(l);

    let mut feats = Vec::with_capacity(cfg.n);
    let mut labs = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let c = rng.gen_range(0..n_clusters);
        let m = rng.gen_range(cfg.min_labels..=cfg.max_labels);
        let mut pos: Vec<usize> = Vec::with_capacity(m);
        let mut pool: Vec<usize> = members(c).collect();
        pool.shuffle(&mut rng);
        while pos.len() < m {
            let next = if !pool.is_empty() && !rng.gen_bool(cfg.spread) {
                pool.pop().unwrap()
            } else {
                rng.gen_range(0..l)
            };
            if !pos.contains(&next) {
                pos.push(next);
            }
        }
        let mut row: Vec<(u32, f32)> = Vec::new();
        let mut emit = |rng: &mut ChaCha8Rng, base: usize, width: usize| {
            for _ in 0..cfg.tokens_per_label {
                let f = if rng.gen_bool(cfg.noise) {
                    rng.gen_range(0..d)
                } else {
                    base + rng.gen_range(0..width)
                };
                row.push((f as u32, 1.0));
            }
        };
        for &p in &pos {
            emit(&mut rng, label_base + p * cfg.features_per_label, cfg.features_per_label);
            emit(
                &mut rng,
                cluster_base + cluster_of(p) * cfg.features_per_cluster,
                cfg.features_per_cluster,
            );
        }
        feats.push(row);
        labs.push(pos.into_iter().map(|p| (p as u32, 1.0)).collect());
    }
    Dataset::new(
        Features::Sparse(SparseMatrix::from_rows(d, feats)?),
        SparseMatrix::from_rows(l, labs)?,
        "synthetic",
    )
}
