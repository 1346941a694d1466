//! Beam-search inference cost: ranker rows evaluated per instance against
//! beam width, compared with exhaustive scoring.
//!
//!     cargo run --release --example beam_search

use xrtree::data::{gen_synthetic, Features, SyntheticConfig};
use xrtree::metrics::precision_at_k;
use xrtree::{Inputs, RunConfig, XrModel};

fn main() -> xrtree::Result<()> {
    let ds = gen_synthetic(&SyntheticConfig { n: 5000, n_labels: 512, cluster_size: 8, seed: 4, ..Default::default() })?;
    let (train, test) = ds.split_at(4500, ("train", "test"))?;
    let (Features::Sparse(xtr), Features::Sparse(xte)) = (&train.features, &test.features) else { unreachable!() };

    let mut cfg = RunConfig::default();
    cfg.encoder.enabled = false;
    cfg.label_tree.hlt_refine = "8-64-512".parse()?;
    let model = XrModel::fit(Inputs::Features(xtr), &train.labels, &cfg)?;
    println!("tree {:?}; exhaustive scoring would touch {} rows", model.tree().level_sizes(), 8 + 64 + 512);
    for beam in [1, 2, 5, 10, 20, 64] {
        let pred = model.predict(Inputs::Features(xte), beam, 5)?;
        let max_eval = pred.evaluations.iter().max().unwrap();
        let p1 = precision_at_k(&pred.ranked_labels(), &test.labels, 1)?;
        println!("beam {beam:>2}: at most {max_eval:>3} rows per instance, P@1 {p1:.4}");
    }
    Ok(())
}
