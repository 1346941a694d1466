//! Cost-sensitive against uniform weighting on data with many positives
//! per instance. Each instance carries 8 to 12 labels spread over nearby
//! clusters, and the regularizer is light so that the smaller total loss
//! mass of cost-sensitive weighting is not swamped by it.
//!
//!     cargo run --release --example cost_sensitive

use xrtree::data::{gen_synthetic, Features, SyntheticConfig};
use xrtree::metrics::precision_at_k;
use xrtree::{Inputs, RunConfig, XrModel};

fn main() -> xrtree::Result<()> {
    for seed in 0..3 {
        let ds = gen_synthetic(&SyntheticConfig {
            n: 1500,
            n_labels: 256,
            cluster_size: 16,
            min_labels: 8,
            max_labels: 12,
            spread: 0.3,
            noise: 0.5,
            tokens_per_label: 2,
            seed,
            ..Default::default()
        })?;
        let (train, test) = ds.split_at(1200, ("train", "test"))?;
        let (Features::Sparse(xtr), Features::Sparse(xte)) = (&train.features, &test.features) else { unreachable!() };
        let mut row = format!("seed {seed}:");
        for cs in [true, false] {
            let mut cfg = RunConfig::default();
            cfg.seed = seed;
            cfg.encoder.enabled = false;
            cfg.label_tree.hlt_refine = "16-256".parse()?;
            cfg.trainer.lambda = 0.05;
            cfg.multires.cost_sensitive = cs;
            let model = XrModel::fit(Inputs::Features(xtr), &train.labels, &cfg)?;
            let pred = model.predict(Inputs::Features(xte), 10, 5)?;
            let p1 = precision_at_k(&pred.ranked_labels(), &test.labels, 1)?;
            row.push_str(&format!("  {} P@1 {p1:.4}", if cs { "cost-sensitive" } else { "uniform" }));
        }
        println!("{row}");
    }
    Ok(())
}
