//! Joint training of the hashed encoder and a level head, starting from a
//! convex warm start on frozen embeddings.
//!
//!     cargo run --release --example encoder_training

use xrtree::data::{gen_synthetic, Features, SyntheticConfig};
use xrtree::encoder::{bootstrap_head, EncoderConfig, EncoderModel, TrainConfig};
use xrtree::linear::SolverConfig;
use xrtree::multires::LevelTargets;
use xrtree::sparse::SparseMatrix;

fn main() -> xrtree::Result<()> {
    let ds = gen_synthetic(&SyntheticConfig { n: 1000, n_labels: 64, cluster_size: 8, seed: 2, ..Default::default() })?;
    let Features::Sparse(x) = &ds.features else { unreachable!() };
    let x = x.row_l2_normalize();
    // Train on the 8 planted clusters as one coarse level.
    let c = SparseMatrix::from_rows(8, (0..64).map(|l| vec![(l / 8, 1.0)]).collect())?;
    let y = ds.labels.matmul(&c)?.binarize();
    let targets = LevelTargets::dense(&y, 1.0, 1.0);

    let enc = EncoderModel::new(&EncoderConfig { d_in: 1 << 12, hidden: 64, d_dnn: 16, seed: 0 })?;
    let head = bootstrap_head(&enc.embed(&x), &targets, &SolverConfig::default())?;
    let cfg = TrainConfig { lr_max: 5e-3, n_step: 300, batch_size: 32, ..Default::default() };
    let fit = enc.train_level(&x, &targets, &head, &cfg)?;
    for (i, w) in fit.losses.chunks(50).enumerate() {
        println!("steps {:>3}-{:>3}: mean batch loss {:.4}", i * 50, i * 50 + w.len() - 1, w.iter().sum::<f32>() / w.len() as f32);
    }

    let e = fit.encoder.embed(&x);
    let mut correct = 0;
    for i in 0..x.n_rows() {
        let best = (0..8)
            .map(|j| (j, (0..16).map(|m| fit.head.get(m, j) * e.get(i, m)).sum::<f32>()))
            .fold((0, f32::MIN), |a, b| if b.1 > a.1 { b } else { a });
        correct += usize::from(y.get(i, best.0) != 0.0);
    }
    println!("training cluster accuracy {:.3}", correct as f64 / x.n_rows() as f64);
    Ok(())
}
