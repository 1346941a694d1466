//! Statistical text features (TF-IDF) and the block-normalized concatenation
//! of sparse statistical and dense learned features.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{l2_norm, DenseMatrix, SparseMatrix, SparseRow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TfidfConfig {
    pub lowercase: bool,
    /// Largest n-gram order; 1 = unigrams, 2 adds bigrams.
    pub max_ngram: usize,
    pub min_df: usize,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        TfidfConfig {
            lowercase: true,
            max_ngram: 1,
            min_df: 2,
        }
    }
}

impl TfidfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.max_ngram) {
            return Err(Error::invalid("max_ngram must be 1 or 2"));
        }
        if self.min_df == 0 {
            return Err(Error::invalid("min_df must be at least 1"));
        }
        Ok(())
    }

    /// Splits on anything that is not alphanumeric, then appends bigrams
    /// (space-joined) when enabled.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let unigrams: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| {
                if self.lowercase {
                    t.to_lowercase()
                } else {
                    t.to_string()
                }
            })
            .collect();
        let mut tokens = unigrams.clone();
        if self.max_ngram >= 2 {
            tokens.extend(unigrams.windows(2).map(|w| format!("{} {}", w[0], w[1])));
        }
        tokens
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TfidfModel {
    config: TfidfConfig,
    vocabulary: HashMap<String, u32>,
    /// Tokens in column order.
    tokens: Vec<String>,
    idf: Vec<f32>,
}

impl TfidfModel {
    /// Builds the vocabulary from tokens with document frequency ≥ `min_df`
    /// and sets `idf = ln((1 + N) / (1 + df)) + 1`. Columns follow
    /// lexicographic token order.
    pub fn fit<S: AsRef<str> + Sync>(corpus: &[S], config: &TfidfConfig) -> Result<Self> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(Error::invalid("cannot fit TF-IDF on an empty corpus"));
        }
        let df: BTreeMap<String, usize> = corpus
            .par_iter()
            .map(|doc| {
                let mut toks = config.tokenize(doc.as_ref());
                toks.sort_unstable();
                toks.dedup();
                toks
            })
            .fold(BTreeMap::new, |mut acc, toks| {
                for t in toks {
                    *acc.entry(t).or_insert(0usize) += 1;
                }
                acc
            })
            .reduce(BTreeMap::new, |mut a, b| {
                for (t, n) in b {
                    *a.entry(t).or_insert(0) += n;
                }
                a
            });
        let n = corpus.len() as f64;
        let mut tokens = Vec::new();
        let mut idf = Vec::new();
        for (tok, count) in df {
            if count >= config.min_df {
                idf.push(((1.0 + n) / (1.0 + count as f64)).ln() as f32 + 1.0);
                tokens.push(tok);
            }
        }
        Ok(Self::from_parts(config.clone(), tokens, idf))
    }

    fn from_parts(config: TfidfConfig, tokens: Vec<String>, idf: Vec<f32>) -> Self {
        let vocabulary = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        TfidfModel {
            config,
            vocabulary,
            tokens,
            idf,
        }
    }

    pub fn dim(&self) -> usize {
        self.tokens.len()
    }

    pub fn config(&self) -> &TfidfConfig {
        &self.config
    }

    pub fn idf(&self) -> &[f32] {
        &self.idf
    }

    pub fn column_of(&self, token: &str) -> Option<u32> {
        self.vocabulary.get(token).copied()
    }

    pub fn token(&self, column: u32) -> &str {
        &self.tokens[column as usize]
    }

    /// Raw term frequency × idf, ℓ2-normalized per row. Unknown tokens are ignored.
    pub fn transform<S: AsRef<str> + Sync>(&self, documents: &[S]) -> SparseMatrix {
        let rows: Vec<SparseRow> = documents
            .par_iter()
            .map(|doc| {
                let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
                for tok in self.config.tokenize(doc.as_ref()) {
                    if let Some(&c) = self.vocabulary.get(&tok) {
                        *counts.entry(c).or_insert(0) += 1;
                    }
                }
                counts
                    .into_iter()
                    .map(|(c, tf)| (c, tf as f32 * self.idf[c as usize]))
                    .collect()
            })
            .collect();
        SparseMatrix::from_rows(self.dim(), rows)
            .expect("vocabulary columns are in range")
            .row_l2_normalize()
    }

    /// Writes `vocab.tsv` (token, column) and `idf.bin` (u64 count, then f32 LE).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut vocab = BufWriter::new(fs::File::create(dir.join("vocab.tsv"))?);
        for (i, tok) in self.tokens.iter().enumerate() {
            writeln!(vocab, "{tok}\t{i}")?;
        }
        vocab.flush()?;
        let mut idf = BufWriter::new(fs::File::create(dir.join("idf.bin"))?);
        idf.write_all(&(self.idf.len() as u64).to_le_bytes())?;
        for v in &self.idf {
            idf.write_all(&v.to_le_bytes())?;
        }
        idf.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path, config: TfidfConfig) -> Result<Self> {
        let vocab_path = dir.join("vocab.tsv");
        let idf_path = dir.join("idf.bin");
        for p in [&vocab_path, &idf_path] {
            if !p.exists() {
                return Err(Error::MissingComponent(p.to_path_buf()));
            }
        }
        let mut tokens = Vec::new();
        for (n, line) in BufReader::new(fs::File::open(&vocab_path)?).lines().enumerate() {
            let line = line?;
            let (tok, idx) = line.rsplit_once('\t').ok_or(Error::Parse {
                line: n + 1,
                msg: "expected `token<TAB>index`".into(),
            })?;
            if idx.parse::<usize>().ok() != Some(n) {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: format!("vocabulary index {idx} out of order"),
                });
            }
            tokens.push(tok.to_string());
        }
        let bytes = fs::read(&idf_path)?;
        if bytes.len() < 8 {
            return Err(Error::Format("idf.bin truncated".into()));
        }
        let count = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        if bytes.len() != 8 + 4 * count || count != tokens.len() {
            return Err(Error::Format(format!(
                "idf.bin holds {count} values for {} tokens",
                tokens.len()
            )));
        }
        let idf = bytes[8..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Self::from_parts(config, tokens, idf))
    }
}

/// Concatenates a statistical row and a dense embedding row, each block scaled
/// to unit ℓ2 norm. Zero blocks stay zero.
pub fn embed_cat(tfidf_row: &[(u32, f32)], d_tfidf: usize, dnn_row: &[f32]) -> SparseRow {
    let sparse_norm = l2_norm(&tfidf_row.iter().map(|e| e.1).collect::<Vec<_>>());
    let dense_norm = l2_norm(dnn_row);
    let mut out = Vec::with_capacity(tfidf_row.len() + dnn_row.len());
    if sparse_norm > 0.0 {
        out.extend(
            tfidf_row
                .iter()
                .map(|&(c, v)| (c, (v as f64 / sparse_norm) as f32)),
        );
    }
    if dense_norm > 0.0 {
        out.extend(
            dnn_row
                .iter()
                .enumerate()
                .map(|(j, &v)| ((d_tfidf + j) as u32, (v as f64 / dense_norm) as f32)),
        );
    }
    out.retain(|e| e.1 != 0.0);
    out
}

/// Row-wise [`embed_cat`] over a whole matrix. With no dense block the
/// result is simply the row-normalized statistical features.
pub fn concat_features(tfidf: &SparseMatrix, dnn: Option<&DenseMatrix>) -> Result<SparseMatrix> {
    let Some(dnn) = dnn else {
        return Ok(tfidf.row_l2_normalize());
    };
    if dnn.n_rows() != tfidf.n_rows() {
        return Err(Error::dim(format!(
            "{} statistical rows but {} embedding rows",
            tfidf.n_rows(),
            dnn.n_rows()
        )));
    }
    let d = tfidf.n_cols();
    let rows = (0..tfidf.n_rows())
        .into_par_iter()
        .map(|i| {
            let row: Vec<(u32, f32)> = tfidf.row_entries(i).collect();
            embed_cat(&row, d, dnn.row(i))
        })
        .collect();
    SparseMatrix::from_rows(d + dnn.n_cols(), rows)
}
