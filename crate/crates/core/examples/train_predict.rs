//! Full pipeline on a planted synthetic dataset: encoder curriculum,
//! refined tree, rankers, beam search, and evaluation against a flat
//! one-vs-all baseline.
//!
//!     cargo run --release --example train_predict

use std::time::Instant;

use xrtree::data::{gen_synthetic, Features, SyntheticConfig};
use xrtree::linear::{train_columns, SolverConfig};
use xrtree::metrics::precision_at_k;
use xrtree::multires::LevelTargets;
use xrtree::sparse::desc_score_then_index;
use xrtree::{Inputs, RunConfig, XrModel};

fn main() -> xrtree::Result<()> {
    let data = gen_synthetic(&SyntheticConfig {
        n: 2500,
        seed: 11,
        ..Default::default()
    })?;
    let (train, test) = data.split_at(2000, ("train", "test"))?;
    let (Features::Sparse(xtr), Features::Sparse(xte)) = (&train.features, &test.features) else {
        unreachable!()
    };

    let t = Instant::now();
    let solver = SolverConfig::default();
    let w = train_columns(
        &xtr.row_l2_normalize(),
        &LevelTargets::dense(&train.labels, 1.0, 1.0).by_node(),
        &solver,
    )?;
    let scores = xte.row_l2_normalize().matmul_transpose(&w)?;
    let flat: Vec<Vec<u32>> = (0..scores.n_rows())
        .map(|i| {
            let mut r: Vec<(u32, f32)> = scores.row_entries(i).collect();
            r.sort_by(desc_score_then_index);
            r.into_iter().take(5).map(|e| e.0).collect()
        })
        .collect();
    let bar = precision_at_k(&flat, &test.labels, 1)?;
    println!("flat one-vs-all  P@1 {:.4}  ({:.1?})", bar, t.elapsed());

    let mut cfg = RunConfig::default();
    cfg.label_tree.hlt_prelim = "8-200".parse()?;
    cfg.label_tree.hlt_refine = "8-64-200".parse()?;
    cfg.encoder.d_in = 1 << 12;
    cfg.encoder.hidden = 64;
    cfg.encoder.d_dnn = 32;
    cfg.encoder.n_step = 400;
    cfg.encoder.lr_max = 5e-3;
    for (name, enabled) in [("tf-idf only", false), ("full curriculum", true)] {
        cfg.encoder.enabled = enabled;
        let t = Instant::now();
        let model = XrModel::fit(Inputs::Features(xtr), &train.labels, &cfg)?;
        let fit_time = t.elapsed();
        let pred = model.predict(Inputs::Features(xte), cfg.trainer.beam, 5)?;
        let p1 = precision_at_k(&pred.ranked_labels(), &test.labels, 1)?;
        let p5 = precision_at_k(&pred.ranked_labels(), &test.labels, 5)?;
        println!("{name:16} P@1 {p1:.4}  P@5 {p5:.4}  (fit {fit_time:.1?})");
    }
    Ok(())
}
