//! Trainable dense text embedder.
//!
//! The reference encoder folds sparse statistical features into `d_in`
//! hashed buckets and applies one tanh hidden layer followed by a linear
//! output layer of width `d_dnn`. Any encoder with the same embed / train
//! contract can stand in for it.
//!
//! Training jointly updates the encoder and a per-level linear head `W`
//! (`d_dnn × K`, stored node-major) on the shortlisted, weighted loss
//!
//! ```text
//! Σ_i Σ_{j ∈ M_i} c_ij · loss(y_ij, W_jᵀ Φ(x_i)) + λ‖W‖²
//! ```
//!
//! with Adam and a learning rate decaying linearly to zero. Hidden-layer
//! rows are updated lazily: only buckets touched by the batch move.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::{self, Loss, SolverConfig};
use crate::multires::LevelTargets;
use crate::sparse::{DenseMatrix, SparseMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub d_in: usize,
    pub hidden: usize,
    pub d_dnn: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_in: 1 << 16,
            hidden: 256,
            d_dnn: 128,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_max: f32,
    /// Optimization steps for one call to [`EncoderModel::train_level`].
    pub n_step: usize,
    pub batch_size: usize,
    pub loss: Loss,
    pub lambda: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub adam_eps: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_max: 1e-3,
            n_step: 600,
            batch_size: 32,
            loss: Loss::SquaredHinge,
            lambda: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_max.is_finite() && self.lr_max > 0.0) {
            return Err(Error::invalid("lr_max must be positive"));
        }
        if self.n_step == 0 || self.batch_size == 0 {
            return Err(Error::invalid("n_step and batch_size must be at least 1"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        Ok(())
    }
}

/// Layer sizes shared by parameters and gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub d_in: usize,
    pub hidden: usize,
    pub d_dnn: usize,
}

/// Encoder parameters plus a level head, generic over the float type so the
/// same kernels serve training (`f32`) and gradient verification (`f64`).
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T> {
    /// `d_in × hidden`, row-major.
    pub hidden_weight: Vec<T>,
    pub hidden_bias: Vec<T>,
    /// `hidden × d_dnn`, row-major.
    pub output_weight: Vec<T>,
    pub output_bias: Vec<T>,
    /// Level head, node-major: node `j` occupies `[j·d_dnn, (j+1)·d_dnn)`.
    pub head: Vec<T>,
}

impl<T: Float> Parameters<T> {
    pub fn zeros(shape: Shape, n_nodes: usize) -> Self {
        Parameters {
            hidden_weight: vec![T::zero(); shape.d_in * shape.hidden],
            hidden_bias: vec![T::zero(); shape.hidden],
            output_weight: vec![T::zero(); shape.hidden * shape.d_dnn],
            output_bias: vec![T::zero(); shape.d_dnn],
            head: vec![T::zero(); n_nodes * shape.d_dnn],
        }
    }

    pub fn tensors(&self) -> [&Vec<T>; 5] {
        [
            &self.hidden_weight,
            &self.hidden_bias,
            &self.output_weight,
            &self.output_bias,
            &self.head,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 5] {
        [
            &mut self.hidden_weight,
            &mut self.hidden_bias,
            &mut self.output_weight,
            &mut self.output_bias,
            &mut self.head,
        ]
    }

    pub fn cast<U: Float>(&self) -> Parameters<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::from(*x).unwrap()).collect();
        Parameters {
            hidden_weight: c(&self.hidden_weight),
            hidden_bias: c(&self.hidden_bias),
            output_weight: c(&self.output_weight),
            output_bias: c(&self.output_bias),
            head: c(&self.head),
        }
    }
}

/// Gradient of the batch objective. Hidden-weight rows are kept sparse,
/// keyed by bucket.
#[derive(Clone, Debug)]
pub struct Gradient<T> {
    pub hidden_weight: BTreeMap<u32, Vec<T>>,
    pub hidden_bias: Vec<T>,
    pub output_weight: Vec<T>,
    pub output_bias: Vec<T>,
    pub head: Vec<T>,
}

impl<T: Float> Gradient<T> {
    fn zeros(shape: Shape, n_nodes: usize) -> Self {
        Gradient {
            hidden_weight: BTreeMap::new(),
            hidden_bias: vec![T::zero(); shape.hidden],
            output_weight: vec![T::zero(); shape.hidden * shape.d_dnn],
            output_bias: vec![T::zero(); shape.d_dnn],
            head: vec![T::zero(); n_nodes * shape.d_dnn],
        }
    }

    /// Dense view laid out like [`Parameters`].
    pub fn to_dense(&self, shape: Shape) -> Parameters<T> {
        let mut hidden_weight = vec![T::zero(); shape.d_in * shape.hidden];
        for (&b, row) in &self.hidden_weight {
            let base = b as usize * shape.hidden;
            hidden_weight[base..base + shape.hidden].copy_from_slice(row);
        }
        Parameters {
            hidden_weight,
            hidden_bias: self.hidden_bias.clone(),
            output_weight: self.output_weight.clone(),
            output_bias: self.output_bias.clone(),
            head: self.head.clone(),
        }
    }
}

fn forward<T: Float>(shape: Shape, p: &Parameters<T>, cols: &[u32], vals: &[f32]) -> (Vec<T>, Vec<T>) {
    let h = shape.hidden;
    let mut pre = p.hidden_bias.clone();
    for (&j, &v) in cols.iter().zip(vals) {
        let v = T::from(v).unwrap();
        let w = &p.hidden_weight[j as usize * h..(j as usize + 1) * h];
        for (a, &wk) in pre.iter_mut().zip(w) {
            *a = *a + v * wk;
        }
    }
    let act: Vec<T> = pre.into_iter().map(Float::tanh).collect();
    let d = shape.d_dnn;
    let mut out = p.output_bias.clone();
    for (k, &a) in act.iter().enumerate() {
        let w = &p.output_weight[k * d..(k + 1) * d];
        for (o, &wm) in out.iter_mut().zip(w) {
            *o = *o + a * wm;
        }
    }
    (act, out)
}

/// Objective over `rows` of the hashed inputs:
/// `row_scale · Σ_i Σ_j c_ij loss(y_ij, head_jᵀ Φ(x_i)) + reg · ‖head‖²`,
/// with the gradient when requested.
#[allow(clippy::too_many_arguments)]
pub fn objective_and_gradient<T: Float>(
    shape: Shape,
    params: &Parameters<T>,
    folded: &SparseMatrix,
    rows: &[usize],
    targets: &LevelTargets,
    loss: Loss,
    row_scale: T,
    reg: T,
    want_gradient: bool,
) -> (T, Option<Gradient<T>>) {
    let (h, d) = (shape.hidden, shape.d_dnn);
    let mut grad = want_gradient.then(|| Gradient::zeros(shape, targets.n_nodes));
    let mut total = T::zero();
    let two = T::from(2.0).unwrap();
    for &i in rows {
        let (cols, vals) = folded.row(i);
        let (act, out) = forward(shape, params, cols, vals);
        let mut d_out = vec![T::zero(); d];
        for t in &targets.rows[i] {
            let w = &params.head[t.node as usize * d..(t.node as usize + 1) * d];
            let s = w.iter().zip(&out).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            let s64 = s.to_f64().unwrap();
            let c = T::from(t.weight).unwrap() * row_scale;
            total = total + c * T::from(loss.value(t.sign(), s64)).unwrap();
            if let Some(g) = grad.as_mut() {
                let gs = c * T::from(loss.derivative(t.sign(), s64)).unwrap();
                if gs != T::zero() {
                    let gw = &mut g.head[t.node as usize * d..(t.node as usize + 1) * d];
                    for m in 0..d {
                        gw[m] = gw[m] + gs * out[m];
                        d_out[m] = d_out[m] + gs * w[m];
                    }
                }
            }
        }
        let Some(g) = grad.as_mut() else { continue };
        for m in 0..d {
            g.output_bias[m] = g.output_bias[m] + d_out[m];
        }
        let mut d_pre = vec![T::zero(); h];
        for k in 0..h {
            let w = &params.output_weight[k * d..(k + 1) * d];
            let gw = &mut g.output_weight[k * d..(k + 1) * d];
            let mut acc = T::zero();
            for m in 0..d {
                gw[m] = gw[m] + act[k] * d_out[m];
                acc = acc + w[m] * d_out[m];
            }
            d_pre[k] = acc * (T::one() - act[k] * act[k]);
            g.hidden_bias[k] = g.hidden_bias[k] + d_pre[k];
        }
        for (&j, &v) in cols.iter().zip(vals) {
            let v = T::from(v).unwrap();
            let row = g
                .hidden_weight
                .entry(j)
                .or_insert_with(|| vec![T::zero(); h]);
            for k in 0..h {
                row[k] = row[k] + v * d_pre[k];
            }
        }
    }
    if reg != T::zero() {
        total = total + reg * params.head.iter().fold(T::zero(), |a, &w| a + w * w);
        if let Some(g) = grad.as_mut() {
            for (gw, &w) in g.head.iter_mut().zip(&params.head) {
                *gw = *gw + two * reg * w;
            }
        }
    }
    (total, grad)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    shape: Shape,
    hash_seed: u64,
    params: Parameters<f32>,
}

impl EncoderModel {
    /// Xavier-uniform initialization from a fixed seed; biases start at zero.
    pub fn new(cfg: &EncoderConfig) -> Result<Self> {
        if cfg.d_in == 0 || cfg.hidden == 0 || cfg.d_dnn == 0 {
            return Err(Error::invalid("encoder dimensions must be positive"));
        }
        let shape = Shape {
            d_in: cfg.d_in,
            hidden: cfg.hidden,
            d_dnn: cfg.d_dnn,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = Parameters::zeros(shape, 0);
        xavier(&mut params.hidden_weight, cfg.d_in, cfg.hidden, &mut rng);
        xavier(&mut params.output_weight, cfg.hidden, cfg.d_dnn, &mut rng);
        Ok(EncoderModel {
            shape,
            hash_seed: cfg.seed,
            params,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn d_dnn(&self) -> usize {
        self.shape.d_dnn
    }

    pub fn hash_seed(&self) -> u64 {
        self.hash_seed
    }

    /// Encoder parameters; the head is empty.
    pub fn parameters(&self) -> &Parameters<f32> {
        &self.params
    }

    pub fn from_parameters(shape: Shape, hash_seed: u64, mut params: Parameters<f32>) -> Result<Self> {
        params.head.clear();
        let expect = Parameters::<f32>::zeros(shape, 0);
        for (a, b) in params.tensors().iter().zip(expect.tensors()) {
            if a.len() != b.len() {
                return Err(Error::dim("encoder tensor sizes do not match the shape"));
            }
        }
        Ok(EncoderModel {
            shape,
            hash_seed,
            params,
        })
    }

    /// Folds feature columns into `d_in` hashed buckets, summing collisions.
    pub fn fold(&self, features: &SparseMatrix) -> SparseMatrix {
        let d_in = self.shape.d_in as u64;
        let rows = (0..features.n_rows())
            .into_par_iter()
            .map(|i| {
                features
                    .row_entries(i)
                    .map(|(c, v)| ((bucket_hash(c, self.hash_seed) % d_in) as u32, v))
                    .collect()
            })
            .collect();
        SparseMatrix::from_rows_unchecked(self.shape.d_in, rows)
    }

    /// Embeds every row of `features`.
    pub fn embed(&self, features: &SparseMatrix) -> DenseMatrix {
        self.embed_folded(&self.fold(features))
    }

    pub fn embed_folded(&self, folded: &SparseMatrix) -> DenseMatrix {
        let d = self.shape.d_dnn;
        let values: Vec<f32> = (0..folded.n_rows())
            .into_par_iter()
            .flat_map_iter(|i| {
                let (c, v) = folded.row(i);
                forward(self.shape, &self.params, c, v).1
            })
            .collect();
        DenseMatrix::from_vec(folded.n_rows(), d, values).expect("row-major embedding")
    }

    /// Random head for levels without a bootstrapped start (`d_dnn × K`).
    pub fn init_head(&self, n_nodes: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = vec![0f32; self.shape.d_dnn * n_nodes];
        xavier(&mut v, self.shape.d_dnn, n_nodes, &mut rng);
        DenseMatrix::from_vec(self.shape.d_dnn, n_nodes, v).unwrap()
    }

    /// Joint training of the encoder and a level head starting from
    /// `head_init` (`d_dnn × K`). `targets` holds the shortlisted weighted
    /// terms of every instance. Returns the trained encoder, head and the
    /// per-step batch losses.
    pub fn train_level(
        &self,
        features: &SparseMatrix,
        targets: &LevelTargets,
        head_init: &DenseMatrix,
        cfg: &TrainConfig,
    ) -> Result<LevelFit> {
        cfg.validate()?;
        let (d, k) = (self.shape.d_dnn, targets.n_nodes);
        if head_init.n_rows() != d || head_init.n_cols() != k {
            return Err(Error::dim(format!(
                "head is {}x{}, expected {d}x{k}",
                head_init.n_rows(),
                head_init.n_cols()
            )));
        }
        if targets.rows.len() != features.n_rows() {
            return Err(Error::dim("targets and features disagree on instance count"));
        }
        let folded = self.fold(features);
        let rows: Vec<usize> = (0..features.n_rows())
            .filter(|&i| !targets.rows[i].is_empty())
            .collect();
        let mut params = self.params.clone();
        params.head = head_init.transpose().into_values();
        if rows.is_empty() {
            return Ok(self.finish(params, Vec::new()));
        }

        let mut adam = Adam::new(&params, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order = rows.clone();
        order.shuffle(&mut rng);
        let mut cursor = 0;
        let batch = cfg.batch_size.min(rows.len());
        let reg = cfg.lambda / rows.len() as f32;
        let mut losses = Vec::with_capacity(cfg.n_step);
        for step in 0..cfg.n_step {
            if cursor + batch > order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let idx = &order[cursor..cursor + batch];
            cursor += batch;
            let (loss, grad) = objective_and_gradient(
                self.shape,
                &params,
                &folded,
                idx,
                targets,
                cfg.loss,
                1.0 / batch as f32,
                reg,
                true,
            );
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at step {step} of {}",
                    cfg.n_step
                )));
            }
            losses.push(loss);
            let lr = cfg.lr_max * (1.0 - step as f32 / cfg.n_step as f32);
            adam.step(&mut params, &grad.unwrap(), lr, self.shape.hidden);
            if params.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFinite(format!("parameters after step {step}")));
            }
        }
        Ok(self.finish(params, losses))
    }

    fn finish(&self, mut params: Parameters<f32>, losses: Vec<f32>) -> LevelFit {
        let head = std::mem::take(&mut params.head);
        let k = head.len() / self.shape.d_dnn;
        let head = DenseMatrix::from_vec(k, self.shape.d_dnn, head)
            .unwrap()
            .transpose();
        LevelFit {
            encoder: EncoderModel {
                shape: self.shape,
                hash_seed: self.hash_seed,
                params,
            },
            head,
            losses,
        }
    }

    /// Writes each tensor as raw little-endian `f32` plus `manifest.json`
    /// with names and shapes.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let names = tensor_names();
        let shapes = self.tensor_shapes();
        for ((name, shape), t) in names.iter().zip(&shapes).zip(self.params.tensors()) {
            let mut buf = Vec::with_capacity(4 * t.len());
            for v in t.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            debug_assert_eq!(shape.iter().product::<usize>(), t.len());
            fs::write(dir.join(format!("{name}.f32")), buf)?;
        }
        let manifest = EncoderManifest {
            architecture: "hashed-tanh-mlp".into(),
            shape: self.shape,
            hash_seed: self.hash_seed,
            tensors: names
                .iter()
                .zip(shapes)
                .map(|(n, s)| TensorEntry {
                    name: n.to_string(),
                    file: format!("{n}.f32"),
                    shape: s,
                })
                .collect(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.json");
        if !mpath.exists() {
            return Err(Error::MissingComponent(mpath));
        }
        let manifest: EncoderManifest = serde_json::from_str(&fs::read_to_string(&mpath)?)?;
        let mut params = Parameters::<f32>::zeros(manifest.shape, 0);
        for (entry, t) in manifest.tensors.iter().zip(params.tensors_mut()) {
            let path = dir.join(&entry.file);
            if !path.exists() {
                return Err(Error::MissingComponent(path));
            }
            let bytes = fs::read(&path)?;
            if bytes.len() != 4 * t.len() {
                return Err(Error::Format(format!("{} has the wrong size", entry.file)));
            }
            for (dst, b) in t.iter_mut().zip(bytes.chunks_exact(4)) {
                *dst = f32::from_le_bytes(b.try_into().unwrap());
            }
        }
        Self::from_parameters(manifest.shape, manifest.hash_seed, params)
    }

    fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let s = self.shape;
        vec![
            vec![s.d_in, s.hidden],
            vec![s.hidden],
            vec![s.hidden, s.d_dnn],
            vec![s.d_dnn],
        ]
    }
}

fn tensor_names() -> [&'static str; 4] {
    ["hidden_weight", "hidden_bias", "output_weight", "output_bias"]
}

#[derive(Serialize, Deserialize)]
struct EncoderManifest {
    architecture: String,
    shape: Shape,
    hash_seed: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    file: String,
    shape: Vec<usize>,
}

/// Result of one level of joint training.
#[derive(Clone, Debug)]
pub struct LevelFit {
    pub encoder: EncoderModel,
    /// `d_dnn × K`.
    pub head: DenseMatrix,
    pub losses: Vec<f32>,
}

/// Warm start for a level head: independent weighted convex solves per node
/// on frozen embeddings. Returns `d_dnn × K`.
pub fn bootstrap_head(
    embeddings: &DenseMatrix,
    targets: &LevelTargets,
    solver: &SolverConfig,
) -> Result<DenseMatrix> {
    let x = SparseMatrix::from_dense(embeddings);
    let cfg = SolverConfig {
        prune_threshold: 0.0,
        ..solver.clone()
    };
    let w = linear::train_columns(&x, &targets.by_node(), &cfg)?;
    Ok(w.to_dense().transpose())
}

fn xavier(dst: &mut [f32], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    for v in dst {
        *v = rng.gen_range(-bound..bound);
    }
}

fn bucket_hash(col: u32, seed: u64) -> u64 {
    let mut x = (col as u64) ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

struct Adam {
    m: Parameters<f32>,
    v: Parameters<f32>,
    beta1: f32,
    beta2: f32,
    eps: f32,
    t: i32,
}

impl Adam {
    fn new(p: &Parameters<f32>, cfg: &TrainConfig) -> Self {
        let zero = |v: &Vec<f32>| vec![0f32; v.len()];
        let z = Parameters {
            hidden_weight: zero(&p.hidden_weight),
            hidden_bias: zero(&p.hidden_bias),
            output_weight: zero(&p.output_weight),
            output_bias: zero(&p.output_bias),
            head: zero(&p.head),
        };
        Adam {
            m: z.clone(),
            v: z,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            t: 0,
        }
    }

    fn step(&mut self, p: &mut Parameters<f32>, g: &Gradient<f32>, lr: f32, hidden: usize) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let update = |w: &mut [f32], m: &mut [f32], v: &mut [f32], g: &[f32]| {
            for i in 0..w.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        };
        update(&mut p.hidden_bias, &mut self.m.hidden_bias, &mut self.v.hidden_bias, &g.hidden_bias);
        update(&mut p.output_weight, &mut self.m.output_weight, &mut self.v.output_weight, &g.output_weight);
        update(&mut p.output_bias, &mut self.m.output_bias, &mut self.v.output_bias, &g.output_bias);
        update(&mut p.head, &mut self.m.head, &mut self.v.head, &g.head);
        for (&b, row) in &g.hidden_weight {
            let r = b as usize * hidden..(b as usize + 1) * hidden;
            update(
                &mut p.hidden_weight[r.clone()],
                &mut self.m.hidden_weight[r.clone()],
                &mut self.v.hidden_weight[r],
                row,
            );
        }
    }
}
