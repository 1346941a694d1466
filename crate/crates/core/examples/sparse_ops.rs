//! CSR basics: products, binarization, per-row top-k and normalization,
//! plus the binary on-disk format.
//!
//!     cargo run --example sparse_ops

use xrtree::sparse::SparseMatrix;

fn main() -> xrtree::Result<()> {
    let a = SparseMatrix::from_rows(4, vec![vec![(0, 1.0), (3, 2.0)], vec![(1, -0.5), (2, 4.0)]])?;
    let b = SparseMatrix::from_rows(2, vec![vec![(0, 1.0)], vec![(1, 1.0)], vec![(0, 1.0)], vec![(1, 3.0)]])?;
    let c = a.matmul(&b)?;
    println!("A·B = {:?}", c.to_dense().values());
    println!("binarize(A·B) nnz = {}", c.binarize().nnz());
    println!("top-1 per row of A: {:?}", a.top_k_per_row(1)?.col_idx());
    println!("row norms after l2 normalization: {:?}", a.row_l2_normalize().row_l2_norms());

    let mut buf = Vec::new();
    a.write_binary(&mut buf)?;
    let back = SparseMatrix::read_binary(&buf[..])?;
    println!("binary round trip: {} bytes, equal = {}", buf.len(), back == a);
    Ok(())
}
