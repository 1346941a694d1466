//! Ranking metrics: precision, recall and propensity-scored precision at k.
//!
//! Predictions are ranked label lists; rows shorter than `k` count the
//! missing slots as misses.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Per-label propensities `p_ℓ = 1 / (1 + C (n_ℓ + B)^{-A})` with
/// `C = (ln N − 1)(B + 1)^A`.
#[derive(Clone, Debug, PartialEq)]
pub struct PropensityModel {
    pub a: f64,
    pub b: f64,
    propensities: Vec<f64>,
}

impl PropensityModel {
    /// `counts[ℓ]` is the number of training instances tagged with `ℓ`.
    pub fn fit(counts: &[usize], n_train: usize, a: f64, b: f64) -> Result<Self> {
        if n_train <= 1 {
            return Err(Error::invalid("propensities need more than one training instance"));
        }
        let c = ((n_train as f64).ln() - 1.0) * (b + 1.0).powf(a);
        let propensities = counts
            .iter()
            .map(|&n| 1.0 / (1.0 + c * (-a * (n as f64 + b).ln()).exp()))
            .collect();
        Self::from_propensities(a, b, propensities)
    }

    pub fn from_propensities(a: f64, b: f64, propensities: Vec<f64>) -> Result<Self> {
        if let Some(l) = propensities.iter().position(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::invalid(format!(
                "propensity of label {l} is {}, outside (0, 1]",
                propensities[l]
            )));
        }
        Ok(PropensityModel { a, b, propensities })
    }

    pub fn propensities(&self) -> &[f64] {
        &self.propensities
    }

    pub fn get(&self, label: u32) -> f64 {
        self.propensities[label as usize]
    }
}

/// Number of positive instances per label.
pub fn label_counts(y: &SparseMatrix) -> Vec<usize> {
    let mut counts = vec![0usize; y.n_cols()];
    for &c in y.col_idx() {
        counts[c as usize] += 1;
    }
    counts
}

fn check(pred: &[Vec<u32>], y: &SparseMatrix, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if pred.len() != y.n_rows() {
        return Err(Error::dim(format!(
            "{} prediction rows but {} label rows",
            pred.len(),
            y.n_rows()
        )));
    }
    Ok(())
}

fn is_positive(y: &SparseMatrix, i: usize, label: u32) -> bool {
    y.row(i).0.binary_search(&label).is_ok()
}

fn hits(pred: &[u32], y: &SparseMatrix, i: usize, k: usize) -> usize {
    pred.iter().take(k).filter(|&&l| is_positive(y, i, l)).count()
}

pub fn precision_at_k(pred: &[Vec<u32>], y: &SparseMatrix, k: usize) -> Result<f64> {
    check(pred, y, k)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = pred
        .iter()
        .enumerate()
        .map(|(i, p)| hits(p, y, i, k) as f64 / k as f64)
        .sum();
    Ok(total / pred.len() as f64)
}

/// Mean over instances with at least one true label.
pub fn recall_at_k(pred: &[Vec<u32>], y: &SparseMatrix, k: usize) -> Result<f64> {
    check(pred, y, k)?;
    let (mut total, mut counted) = (0.0, 0usize);
    for (i, p) in pred.iter().enumerate() {
        let n_true = y.row_nnz(i);
        if n_true > 0 {
            total += hits(p, y, i, k) as f64 / n_true as f64;
            counted += 1;
        }
    }
    Ok(if counted == 0 { 0.0 } else { total / counted as f64 })
}

pub fn psp_at_k(
    pred: &[Vec<u32>],
    y: &SparseMatrix,
    propensity: &PropensityModel,
    k: usize,
) -> Result<f64> {
    check(pred, y, k)?;
    if propensity.propensities.len() < y.n_cols() {
        return Err(Error::dim("fewer propensities than labels"));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = pred
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.iter()
                .take(k)
                .filter(|&&l| is_positive(y, i, l))
                .map(|&l| 1.0 / propensity.get(l))
                .sum::<f64>()
                / k as f64
        })
        .sum();
    Ok(total / pred.len() as f64)
}

/// Fixed-order evaluation table at k = 1, 3, 5.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub precision: [f64; 3],
    pub recall: [f64; 3],
    pub psp: Option<[f64; 3]>,
}

pub const REPORT_KS: [usize; 3] = [1, 3, 5];

impl Report {
    pub fn compute(
        pred: &[Vec<u32>],
        y: &SparseMatrix,
        propensity: Option<&PropensityModel>,
    ) -> Result<Report> {
        let mut r = Report {
            precision: [0.0; 3],
            recall: [0.0; 3],
            psp: propensity.map(|_| [0.0; 3]),
        };
        for (j, &k) in REPORT_KS.iter().enumerate() {
            r.precision[j] = precision_at_k(pred, y, k)?;
            r.recall[j] = recall_at_k(pred, y, k)?;
            if let (Some(p), Some(psp)) = (propensity, r.psp.as_mut()) {
                psp[j] = psp_at_k(pred, y, p, k)?;
            }
        }
        Ok(r)
    }

    /// Plain-text table, percentages with two decimals.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let mut line = |name: &str, v: &[f64; 3]| {
            for (k, x) in REPORT_KS.iter().zip(v) {
                out.push_str(&format!("{name}@{k}\t{:.2}\n", 100.0 * x));
            }
        };
        line("P", &self.precision);
        line("R", &self.recall);
        if let Some(psp) = &self.psp {
            line("PSP", psp);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn labels(rows: &[&[u32]], l: usize) -> SparseMatrix {
        SparseMatrix::from_rows(l, rows.iter().map(|r| r.iter().map(|&c| (c, 1.0)).collect()).collect()).unwrap()
    }

    #[test]
    fn trivial_precision() {
        let y = labels(&[&[0], &[2]], 3);
        assert_eq!(precision_at_k(&[vec![0], vec![2]], &y, 1).unwrap(), 1.0);
        assert_eq!(precision_at_k(&[vec![1], vec![0]], &y, 1).unwrap(), 0.0);
        assert!(precision_at_k(&[vec![0], vec![2]], &y, 0).is_err());
        // Short rows count missing slots as misses.
        assert_eq!(precision_at_k(&[vec![0], vec![2]], &y, 2).unwrap(), 0.5);
    }

    #[test]
    fn trivial_recall() {
        let y = labels(&[&[0, 3], &[0, 1, 2, 3], &[]], 5);
        let pred = vec![vec![4, 3, 2, 1, 0], vec![2, 4], vec![1]];
        assert_eq!(recall_at_k(&pred[..1], &y.select_rows(&[0]), 5).unwrap(), 1.0);
        assert_eq!(recall_at_k(&pred[1..2], &y.select_rows(&[1]), 1).unwrap(), 0.25);
        // The empty third row is skipped.
        assert_eq!(recall_at_k(&pred, &y, 1).unwrap(), (0.0 + 0.25) / 2.0);
    }

    #[test]
    fn trivial_psp() {
        let y = labels(&[&[0]], 2);
        let p = PropensityModel::from_propensities(0.55, 1.5, vec![0.5, 1.0]).unwrap();
        assert_eq!(psp_at_k(&[vec![0]], &y, &p, 1).unwrap(), 2.0);
        assert!(PropensityModel::from_propensities(0.55, 1.5, vec![0.0, 1.0]).is_err());
        assert!(PropensityModel::from_propensities(0.55, 1.5, vec![1.5]).is_err());
    }

    #[test]
    fn propensity_closed_form() {
        let p = PropensityModel::fit(&[10], 10_000, 0.55, 1.5).unwrap();
        let c = (10_000f64.ln() - 1.0) * 2.5f64.powf(0.55);
        let want = 1.0 / (1.0 + c * 11.5f64.powf(-0.55));
        assert!((p.get(0) - want).abs() < 1e-12);
        assert!((p.get(0) - 0.219_931_875).abs() < 1e-8);
    }

    #[test]
    fn propensity_limits() {
        let p = PropensityModel::fit(&[3, 3, 1_000_000_000], 50_000, 0.55, 1.5).unwrap();
        assert_eq!(p.get(0), p.get(1));
        assert!(p.get(2) > 0.99);
        assert!(PropensityModel::fit(&[1], 1, 0.55, 1.5).is_err());
    }

    #[test]
    fn report_table_order() {
        let y = labels(&[&[0]], 2);
        let p = PropensityModel::from_propensities(0.55, 1.5, vec![1.0, 1.0]).unwrap();
        let r = Report::compute(&[vec![0, 1]], &y, Some(&p)).unwrap();
        let table = r.table();
        let names: Vec<&str> = table.lines().map(|l| l.split('\t').next().unwrap()).collect();
        assert_eq!(names, ["P@1", "P@3", "P@5", "R@1", "R@3", "R@5", "PSP@1", "PSP@3", "PSP@5"]);
        assert_eq!(r.precision[0], 1.0);
    }

    fn random_case(seed: u64) -> (Vec<Vec<u32>>, SparseMatrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = 20;
        let rows: Vec<Vec<(u32, f32)>> = (0..50)
            .map(|_| (0..l as u32).filter_map(|c| rng.gen_bool(0.15).then_some((c, 1.0))).collect())
            .collect();
        let y = SparseMatrix::from_rows(l, rows).unwrap();
        let pred = (0..50)
            .map(|_| {
                let mut p: Vec<u32> = (0..l as u32).collect();
                rand::seq::SliceRandom::shuffle(&mut p[..], &mut rng);
                p.truncate(rng.gen_range(0..8));
                p
            })
            .collect();
        let props = (0..l).map(|_| rng.gen_range(0.01..=1.0)).collect();
        (pred, y, props)
    }

    proptest! {
        #[test]
        fn metrics_match_set_oracles(seed in 0u64..200, k in 1usize..7) {
            let (pred, y, props) = random_case(seed);
            let truth: Vec<BTreeSet<u32>> = (0..y.n_rows()).map(|i| y.row(i).0.iter().copied().collect()).collect();
            let mut p_sum = 0.0;
            let mut r_sum = 0.0;
            let mut r_n = 0;
            let mut psp_sum = 0.0;
            for (row, t) in pred.iter().zip(&truth) {
                let top: BTreeSet<u32> = row.iter().take(k).copied().collect();
                let inter: Vec<u32> = top.intersection(t).copied().collect();
                p_sum += inter.len() as f64 / k as f64;
                psp_sum += inter.iter().map(|&l| 1.0 / props[l as usize]).sum::<f64>() / k as f64;
                if !t.is_empty() {
                    r_sum += inter.len() as f64 / t.len() as f64;
                    r_n += 1;
                }
            }
            let n = pred.len() as f64;
            let prop = PropensityModel::from_propensities(0.55, 1.5, props.clone()).unwrap();
            prop_assert!((precision_at_k(&pred, &y, k).unwrap() - p_sum / n).abs() < 1e-12);
            prop_assert!((recall_at_k(&pred, &y, k).unwrap() - r_sum / r_n.max(1) as f64).abs() < 1e-12);
            let psp = psp_at_k(&pred, &y, &prop, k).unwrap();
            prop_assert!((psp - psp_sum / n).abs() < 1e-9);
            prop_assert!(psp >= precision_at_k(&pred, &y, k).unwrap() - 1e-12);
            let r = recall_at_k(&pred, &y, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
        }

        #[test]
        fn unit_propensities_give_precision_exactly(seed in 0u64..200, k in 1usize..7) {
            let (pred, y, _) = random_case(seed);
            let ones = PropensityModel::from_propensities(0.55, 1.5, vec![1.0; y.n_cols()]).unwrap();
            prop_assert_eq!(psp_at_k(&pred, &y, &ones, k).unwrap().to_bits(), precision_at_k(&pred, &y, k).unwrap().to_bits());
        }

        #[test]
        fn prefix_hits_never_decrease(seed in 0u64..200) {
            let (pred, y, _) = random_case(seed);
            let mut last = 0.0;
            for k in 1..8 {
                let hits_k = precision_at_k(&pred, &y, k).unwrap() * k as f64;
                prop_assert!(hits_k + 1e-9 >= last);
                last = hits_k;
            }
        }
    }
}
