//! Multi-resolution labels and relevance up a tree, cost-sensitive weights,
//! and training shortlists built from a beam.
//!
//!     cargo run --example signals

use xrtree::label_tree::HierarchicalLabelTree;
use xrtree::multires::{MultiResolutionSignals, WeightMode};
use xrtree::sparse::SparseMatrix;
use xrtree::trainer::make_shortlist;

fn main() -> xrtree::Result<()> {
    // Eight labels, two per node at level 2, two level-2 nodes per root child.
    let c1 = SparseMatrix::ones(2, 1);
    let c2 = SparseMatrix::from_rows(2, (0..4).map(|n| vec![(n / 2, 1.0)]).collect())?;
    let c3 = SparseMatrix::from_rows(4, (0..8).map(|l| vec![(l / 2, 1.0)]).collect())?;
    let tree = HierarchicalLabelTree::from_indexers(vec![c1, c2, c3])?;

    let y = SparseMatrix::from_rows(8, vec![vec![(0, 1.0), (1, 1.0), (6, 1.0)], vec![(5, 1.0)]])?;
    let s = MultiResolutionSignals::build(&y, &tree, 0.5, WeightMode::CostSensitive)?;
    for t in 1..=tree.depth() {
        println!("level {t}");
        for i in 0..y.n_rows() {
            let r: Vec<_> = s.relevance(t).row_entries(i).collect();
            let w: Vec<_> = s.normalized_relevance(t).row_entries(i).collect();
            println!("  instance {i}: relevance {r:?} normalized {w:?}");
        }
    }

    // A beam that only kept node 3 at level 2 still gets the true parents' children.
    let beam = SparseMatrix::from_rows(4, vec![vec![(3, -0.2)], vec![(3, -0.1)]])?;
    let m = make_shortlist(&beam, s.labels(2), tree.indexer(3))?;
    for i in 0..2 {
        println!("shortlist {i}: {:?}", m.row(i).0);
    }
    let targets = s.targets(3, &m)?;
    for t in &targets.rows[0] {
        println!("  node {} positive {} weight {}", t.node, t.positive, t.weight);
    }
    Ok(())
}
