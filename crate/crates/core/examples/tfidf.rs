//! TF-IDF vectorization and block-normalized concatenation with dense
//! embeddings.
//!
//!     cargo run --example tfidf

use xrtree::sparse::DenseMatrix;
use xrtree::vectorizer::{concat_features, TfidfConfig, TfidfModel};

fn main() -> xrtree::Result<()> {
    let corpus = [
        "sparse matrix products on the cpu",
        "label trees speed up extreme classification",
        "beam search over label trees",
        "sparse linear rankers per tree level",
    ];
    let cfg = TfidfConfig { max_ngram: 2, ..Default::default() };
    let model = TfidfModel::fit(&corpus, &cfg)?;
    println!("vocabulary ({} terms):", model.dim());
    for c in 0..model.dim() as u32 {
        println!("  {:<12} idf {:.3}", model.token(c), model.idf()[c as usize]);
    }
    let x = model.transform(&["label trees and sparse rankers"]);
    for (c, v) in x.row_entries(0) {
        println!("  {} -> {v:.3}", model.token(c));
    }
    let emb = DenseMatrix::from_vec(1, 3, vec![0.3, -1.2, 0.4])?;
    let cat = concat_features(&x, Some(&emb))?;
    println!("concatenated width {} with norm {:.3}", cat.n_cols(), cat.row_l2_norms()[0]);
    Ok(())
}
