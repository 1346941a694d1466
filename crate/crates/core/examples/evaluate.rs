//! Precision, recall and propensity-scored precision for a ranking.
//!
//!     cargo run --example evaluate

use xrtree::metrics::{label_counts, PropensityModel, Report};
use xrtree::sparse::SparseMatrix;

fn main() -> xrtree::Result<()> {
    let train = SparseMatrix::from_rows(4, vec![vec![(0, 1.0)], vec![(0, 1.0), (1, 1.0)], vec![(0, 1.0)], vec![(2, 1.0)], vec![(0, 1.0), (3, 1.0)]])?;
    let test = SparseMatrix::from_rows(4, vec![vec![(0, 1.0), (3, 1.0)], vec![(2, 1.0)]])?;
    let pred = vec![vec![3, 0, 1], vec![0, 1, 2]];
    let prop = PropensityModel::fit(&label_counts(&train), train.n_rows(), 0.55, 1.5)?;
    println!("propensities {:?}", prop.propensities());
    print!("{}", Report::compute(&pred, &test, Some(&prop))?.table());
    Ok(())
}
