//! Label embeddings from positive instances and a balanced hierarchical
//! label tree over them.
//!
//!     cargo run --release --example build_tree

use xrtree::data::{gen_synthetic, Features, SyntheticConfig};
use xrtree::label_tree::{balanced_kmeans, build_tree, pifa, spherical_objective, TreeShape};

fn main() -> xrtree::Result<()> {
    let ds = gen_synthetic(&SyntheticConfig { n: 3000, n_labels: 256, cluster_size: 16, noise: 0.05, seed: 3, ..Default::default() })?;
    let Features::Sparse(x) = &ds.features else { unreachable!() };
    let z = pifa(&x.row_l2_normalize(), &ds.labels)?;

    for shape in ["16-256", "4-16-64-256"] {
        let tree = build_tree(&z, &shape.parse()?, 0, 20)?;
        println!("{shape}: levels {:?}, max branching {}", tree.level_sizes(), tree.max_branching());
    }
    let auto = TreeShape::Branching { branching: 8, max_leaf_size: 4 };
    let tree = build_tree(&z, &auto, 0, 20)?;
    println!("{auto}: levels {:?}", tree.level_sizes());

    // Planted clusters hold 16 consecutive labels; count how many first-level
    // nodes keep each planted cluster together.
    let two = build_tree(&z, &"16-256".parse()?, 0, 20)?;
    let parents = two.parents(2);
    let pure = (0..16).filter(|c| (c * 16..(c + 1) * 16).all(|l| parents[l] == parents[c * 16])).count();
    println!("planted clusters recovered intact: {pure}/16");

    let assign = balanced_kmeans(z.matrix(), 16, 0, 20)?;
    println!("spherical objective of one 16-way split: {:.2}", spherical_objective(z.matrix(), &assign, 16));
    Ok(())
}
