//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fail.
//!
//! Criterion 6 reads Eurlex-4K in bag-of-words format (`train.txt`,
//! `test.txt`, each with an `N D L` header) from `XRTREE_EURLEX_DIR`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xrtree::data::{gen_synthetic, load_svmlight, Features, SyntheticConfig};
use xrtree::encoder::{objective_and_gradient, Parameters, Shape};
use xrtree::label_tree::HierarchicalLabelTree;
use xrtree::linear::{train_columns, Loss, SolverConfig};
use xrtree::metrics::precision_at_k;
use xrtree::multires::{LevelTargets, MultiResolutionSignals, Target, WeightMode};
use xrtree::sparse::{desc_score_then_index, SparseMatrix};
use xrtree::trainer::make_shortlist;
use xrtree::{Inputs, RunConfig, XrModel};

type Outcome = Result<String, String>;

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, Duration); 8] = [
        ("1 flat equivalence", flat_equivalence, Duration::from_secs(60)),
        ("2 full-beam equivalence", full_beam_equivalence, Duration::from_secs(60)),
        ("3 multi-resolution invariants", multires_invariants, Duration::MAX),
        ("4 encoder gradient checks", gradient_checks, Duration::MAX),
        ("5 synthetic pipeline vs flat bar", synthetic_pipeline, Duration::from_secs(300)),
        ("6 Eurlex-4K reproduction", eurlex, Duration::from_secs(1800)),
        ("7 cost-sensitive ablation direction", cost_sensitive_direction, Duration::MAX),
        ("8 inference node budget", node_budget, Duration::MAX),
    ];
    let mut failed = 0;
    for (name, run, limit) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > limit => Err(format!("{msg}; took {elapsed:.1?}, limit {limit:.0?}")),
            o => o,
        };
        match outcome {
            Ok(msg) => println!("PASS [{name}] {msg} ({elapsed:.1?})"),
            Err(msg) => {
                failed += 1;
                println!("FAIL [{name}] {msg} ({elapsed:.1?})");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sparse_features(ds: &xrtree::data::Dataset) -> &SparseMatrix {
    match &ds.features {
        Features::Sparse(x) => x,
        Features::Text(_) => unreachable!(),
    }
}

fn ln_sigmoid(s: f64) -> f64 {
    -(1.0 + (-s).exp()).ln()
}

/// Squared-hinge one-vs-all weights by generalized Newton with backtracking,
/// solving `λ‖w‖² + Σ max(0, 1 − y wᵀx)²` per label to a tight gradient.
fn newton_ova(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mut w_all = DMatrix::zeros(y.ncols(), d);
    for j in 0..y.ncols() {
        let sign: Vec<f64> = (0..n).map(|i| if y[(i, j)] > 0.0 { 1.0 } else { -1.0 }).collect();
        let f = |w: &DVector<f64>| {
            let s = x * w;
            lambda * w.norm_squared()
                + (0..n).map(|i| (1.0 - sign[i] * s[i]).max(0.0).powi(2)).sum::<f64>()
        };
        let mut w = DVector::zeros(d);
        for _ in 0..100 {
            let s = x * &w;
            let active: Vec<usize> = (0..n).filter(|&i| sign[i] * s[i] < 1.0).collect();
            let mut g = 2.0 * lambda * &w;
            let mut h = DMatrix::identity(d, d) * (2.0 * lambda);
            let xa = x.select_rows(&active);
            let r = DVector::from_iterator(active.len(), active.iter().map(|&i| sign[i] * (1.0 - sign[i] * s[i])));
            g -= 2.0 * xa.transpose() * r;
            h += 2.0 * xa.transpose() * &xa;
            if g.amax() < 1e-11 {
                break;
            }
            let step = h.cholesky().expect("positive definite").solve(&g);
            let (f0, slope) = (f(&w), g.dot(&step));
            let mut t = 1.0;
            while f(&(&w - t * &step)) > f0 - 1e-4 * t * slope && t > 1e-12 {
                t *= 0.5;
            }
            w -= t * step;
        }
        w_all.set_row(j, &w.transpose());
    }
    w_all
}

fn flat_equivalence() -> Outcome {
    let ds = gen_synthetic(&SyntheticConfig {
        n: 500,
        n_labels: 100,
        cluster_size: 10,
        noise: 0.3,
        seed: 21,
        features_per_label: 1,
        features_per_cluster: 2,
        noise_features: 30,
        tokens_per_label: 4,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?
    .to_text();
    let Features::Text(docs) = &ds.features else { unreachable!() };

    let mut cfg = RunConfig::default();
    cfg.encoder.enabled = false;
    cfg.multires.cost_sensitive = false;
    cfg.label_tree.hlt_refine = "100".parse().unwrap();
    cfg.trainer.prune_threshold = 0.0;
    cfg.trainer.eps = 1e-7;
    cfg.trainer.max_iter = 20_000;
    let model = XrModel::fit(Inputs::Text(docs), &ds.labels, &cfg).map_err(|e| e.to_string())?;
    let pred = model.predict(Inputs::Text(docs), 10, 10).map_err(|e| e.to_string())?;

    let phi = model.featurize(Inputs::Text(docs)).map_err(|e| e.to_string())?;
    let xd = phi.to_dense();
    let x = DMatrix::from_row_slice(xd.n_rows(), xd.n_cols(), xd.values()).map(f64::from);
    let yd = ds.labels.to_dense();
    let y = DMatrix::from_row_slice(yd.n_rows(), yd.n_cols(), yd.values()).map(f64::from);
    let w = newton_ova(&x, &y, cfg.trainer.lambda as f64);
    let scores = &x * w.transpose();

    let mut worst = 0f64;
    for i in 0..x.nrows() {
        let mut oracle: Vec<(u32, f64)> = (0..100).map(|j| (j as u32, ln_sigmoid(scores[(i, j)]))).collect();
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let ours = &pred.rows[i];
        let same = ours.iter().map(|e| e.0).eq(oracle.iter().take(10).map(|e| e.0));
        ensure(same, || format!("row {i}: ranking {:?} vs oracle {:?}", ours, &oracle[..10]))?;
        for (a, b) in ours.iter().zip(&oracle) {
            worst = worst.max((a.1 as f64 - b.1).abs());
        }
    }
    ensure(worst < 1e-4, || format!("score gap {worst:.2e}"))?;
    Ok(format!("500 rows identical top-10, max score gap {worst:.1e}"))
}

fn full_beam_equivalence() -> Outcome {
    let ds = gen_synthetic(&SyntheticConfig {
        n: 2700,
        n_labels: 512,
        cluster_size: 8,
        noise: 0.3,
        seed: 5,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let (train, test) = ds.split_at(2500, ("train", "test")).map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::default();
    cfg.encoder.enabled = false;
    cfg.label_tree.hlt_refine = "8-64-512".parse().unwrap();
    let model = XrModel::fit(train.inputs(), &train.labels, &cfg).map_err(|e| e.to_string())?;
    let phi = model.featurize(test.inputs()).map_err(|e| e.to_string())?;
    let pred = model.predict_features(&phi, 512, 512).map_err(|e| e.to_string())?;

    let tree = model.tree();
    let dense: Vec<_> = model.rankers().iter().map(SparseMatrix::to_dense).collect();
    let xd = phi.to_dense();
    for i in 0..phi.n_rows() {
        let x = xd.row(i);
        let node_score = |t: usize, node: usize| -> f64 {
            let w = dense[t - 1].row(node);
            let s: f64 = (0..x.len()).filter(|&f| w[f] != 0.0 && x[f] != 0.0).map(|f| w[f] as f64 * x[f] as f64).sum();
            ln_sigmoid(s)
        };
        let mut oracle: Vec<(u32, f64)> = (0..512)
            .map(|leaf| {
                let mut path = vec![leaf];
                for t in (2..=3).rev() {
                    path.push(tree.parents(t)[*path.last().unwrap()] as usize);
                }
                path.reverse();
                let s = path.iter().enumerate().fold(0.0, |acc, (t, &n)| acc + node_score(t + 1, n));
                (leaf as u32, s)
            })
            .collect();
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let ours = &pred.rows[i];
        ensure(ours.len() == 512, || format!("row {i} has {} labels", ours.len()))?;
        for (r, (a, b)) in ours.iter().zip(&oracle).enumerate() {
            ensure(a.0 == b.0, || format!("row {i} rank {r}: {} vs oracle {}", a.0, b.0))?;
            ensure((a.1 as f64 - b.1).abs() <= 1e-5 * b.1.abs().max(1.0), || {
                format!("row {i} label {}: {} vs {}", a.0, a.1, b.1)
            })?;
        }
    }
    Ok("200 rows, full 512-label ranking identical".into())
}

fn random_tree(rng: &mut ChaCha8Rng) -> HierarchicalLabelTree {
    let l = rng.gen_range(2..=256usize);
    let depth = rng.gen_range(1..=4usize).min(l - 1).max(1);
    let mut sizes: Vec<usize> = (2..l).collect::<Vec<_>>().choose_multiple(rng, depth - 1).copied().collect();
    sizes.sort_unstable();
    sizes.push(l);
    let mut prev = 1;
    let mut indexers = Vec::new();
    for &k in &sizes {
        let mut parent: Vec<u32> = (0..prev as u32).collect();
        parent.extend((prev..k).map(|_| rng.gen_range(0..prev as u32)));
        parent.shuffle(rng);
        let rows = parent.into_iter().map(|p| vec![(p, 1.0)]).collect();
        indexers.push(SparseMatrix::from_rows(prev, rows).unwrap());
        prev = k;
    }
    HierarchicalLabelTree::from_indexers(indexers).unwrap()
}

fn multires_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checks = 0usize;
    for case in 0..1000 {
        let tree = random_tree(&mut rng);
        let (l, depth) = (tree.n_labels(), tree.depth());
        let n = rng.gen_range(1..=24);
        let density = rng.gen_range(0.0..0.3);
        let rows: Vec<Vec<(u32, f32)>> = (0..n)
            .map(|_| (0..l as u32).filter_map(|c| rng.gen_bool(density).then_some((c, 1.0))).collect())
            .collect();
        let y = SparseMatrix::from_rows(l, rows).unwrap();
        let alpha = rng.gen_range(0.0..2.0);
        let s = MultiResolutionSignals::build(&y, &tree, alpha, WeightMode::CostSensitive).map_err(|e| e.to_string())?;
        ensure(s.labels(depth) == &y, || format!("case {case}: leaf labels changed"))?;
        for t in 1..=depth {
            let (yt, rt) = (s.labels(t), s.relevance(t));
            for i in 0..n {
                let mass: f32 = rt.row(i).1.iter().sum();
                ensure(mass == y.row_nnz(i) as f32, || format!("case {case} level {t} row {i}: mass {mass}"))?;
                ensure(yt.row(i).0 == rt.row(i).0, || format!("case {case} level {t} row {i}: supports differ"))?;
                ensure(rt.row(i).1.iter().all(|v| v.fract() == 0.0 && *v > 0.0), || format!("case {case}: non-integer relevance"))?;
                checks += 3;
            }
            let m = if t == 1 {
                SparseMatrix::ones(n, tree.level_size(1))
            } else {
                let k_prev = tree.level_size(t - 1);
                let beam: Vec<Vec<(u32, f32)>> = (0..n)
                    .map(|_| (0..k_prev as u32).filter_map(|c| rng.gen_bool(0.2).then(|| (c, -rng.gen_range(0.01f32..5.0)))).collect())
                    .collect();
                let p = SparseMatrix::from_rows(k_prev, beam).unwrap();
                make_shortlist(&p, s.labels(t - 1), tree.indexer(t)).map_err(|e| e.to_string())?
            };
            let targets = s.targets(t, &m).map_err(|e| e.to_string())?;
            for i in 0..n {
                for &j in yt.row(i).0 {
                    ensure(m.row(i).0.binary_search(&j).is_ok(), || format!("case {case} level {t} row {i}: positive {j} not shortlisted"))?;
                    ensure(targets.rows[i].iter().any(|tg| tg.node == j && tg.positive), || format!("case {case}: positive {j} missing from targets"))?;
                    checks += 2;
                }
            }
        }
    }
    Ok(format!("1000 cases, {checks} checks, zero violations"))
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0f64;
    let mut compared = 0usize;
    for case in 0..25 {
        let shape = Shape {
            d_in: rng.gen_range(4..=24),
            hidden: rng.gen_range(2..=8),
            d_dnn: rng.gen_range(2..=5),
        };
        let k = rng.gen_range(2..=5);
        let n = rng.gen_range(1..=5);
        let loss = if case % 2 == 0 { Loss::SquaredHinge } else { Loss::Logistic };
        let mut p = Parameters::<f64>::zeros(shape, k);
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let rows: Vec<Vec<(u32, f32)>> = (0..n)
            .map(|_| (0..shape.d_in as u32).filter_map(|c| rng.gen_bool(0.4).then(|| (c, rng.gen_range(-1.0f32..1.0)))).collect())
            .collect();
        let folded = SparseMatrix::from_rows(shape.d_in, rows).unwrap();
        let targets = LevelTargets {
            n_nodes: k,
            rows: (0..n)
                .map(|_| {
                    let mut row = Vec::new();
                    for node in 0..k as u32 {
                        if rng.gen_bool(0.7) {
                            row.push(Target { node, positive: rng.gen_bool(0.4), weight: rng.gen_range(0.05f32..1.5) });
                        }
                    }
                    row
                })
                .collect(),
        };
        let idx: Vec<usize> = (0..n).collect();
        let reg = rng.gen_range(0.0..0.5);
        let scale = 1.0 / n as f64;
        let f = |q: &Parameters<f64>| objective_and_gradient(shape, q, &folded, &idx, &targets, loss, scale, reg, false).0;
        let g = objective_and_gradient(shape, &p, &folded, &idx, &targets, loss, scale, reg, true)
            .1
            .unwrap()
            .to_dense(shape);
        let h = 1e-6;
        for ti in 0..5 {
            for e in 0..p.tensors()[ti].len() {
                let mut plus = p.clone();
                plus.tensors_mut()[ti][e] += h;
                let mut minus = p.clone();
                minus.tensors_mut()[ti][e] -= h;
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                let an = g.tensors()[ti][e];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                worst = worst.max(rel);
                compared += 1;
                ensure(rel < 1e-4, || format!("case {case} tensor {ti}[{e}]: analytic {an} vs numeric {fd}"))?;
            }
        }
    }
    Ok(format!("25 configurations, {compared} partials, worst relative error {worst:.1e}"))
}

fn flat_ova_p1(train_x: &SparseMatrix, train_y: &SparseMatrix, test_x: &SparseMatrix, test_y: &SparseMatrix) -> f64 {
    let w = train_columns(
        &train_x.row_l2_normalize(),
        &LevelTargets::dense(train_y, 1.0, 1.0).by_node(),
        &SolverConfig::default(),
    )
    .unwrap();
    let scores = test_x.row_l2_normalize().matmul_transpose(&w).unwrap();
    let top: Vec<Vec<u32>> = (0..scores.n_rows())
        .map(|i| {
            let mut r: Vec<(u32, f32)> = scores.row_entries(i).collect();
            r.sort_by(desc_score_then_index);
            r.into_iter().take(1).map(|e| e.0).collect()
        })
        .collect();
    precision_at_k(&top, test_y, 1).unwrap()
}

fn synthetic_pipeline() -> Outcome {
    let ds = gen_synthetic(&SyntheticConfig { n: 2500, seed: 11, ..Default::default() }).map_err(|e| e.to_string())?;
    let (train, test) = ds.split_at(2000, ("train", "test")).map_err(|e| e.to_string())?;
    let bar = flat_ova_p1(sparse_features(&train), &train.labels, sparse_features(&test), &test.labels);
    ensure(bar >= 0.97, || format!("flat bar {bar:.4} below 0.97"))?;

    let mut cfg = RunConfig::default();
    cfg.label_tree.hlt_prelim = "8-200".parse().unwrap();
    cfg.label_tree.hlt_refine = "8-64-200".parse().unwrap();
    cfg.encoder.d_in = 1 << 12;
    cfg.encoder.hidden = 64;
    cfg.encoder.d_dnn = 32;
    cfg.encoder.n_step = 400;
    cfg.encoder.lr_max = 5e-3;
    let model = XrModel::fit(train.inputs(), &train.labels, &cfg).map_err(|e| e.to_string())?;
    let pred = model.predict(test.inputs(), cfg.trainer.beam, 5).map_err(|e| e.to_string())?;
    let p1 = precision_at_k(&pred.ranked_labels(), &test.labels, 1).map_err(|e| e.to_string())?;
    ensure(p1 >= bar - 0.02, || format!("pipeline P@1 {p1:.4} vs flat bar {bar:.4}"))?;
    Ok(format!("pipeline P@1 {p1:.4}, flat bar {bar:.4}"))
}

fn eurlex() -> Outcome {
    let Some(dir) = std::env::var_os("XRTREE_EURLEX_DIR").map(PathBuf::from) else {
        return Err("dataset not available: set XRTREE_EURLEX_DIR to a directory with train.txt and test.txt".into());
    };
    let train = load_svmlight(&dir.join("train.txt"), None, None).map_err(|e| e.to_string())?;
    let test = load_svmlight(&dir.join("test.txt"), Some(sparse_features(&train).n_cols()), Some(train.n_labels()))
        .map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::default();
    cfg.label_tree.hlt_prelim = "16-256-3956".parse().unwrap();
    cfg.label_tree.hlt_refine = "4-32-256-3956".parse().unwrap();
    cfg.multires.alpha = 1.0;
    cfg.trainer.lambda = 0.5;
    cfg.encoder.lr_max = 5e-5;
    cfg.encoder.n_step = 2400;
    let run = |enabled: bool| -> Result<f64, String> {
        let mut cfg = cfg.clone();
        cfg.encoder.enabled = enabled;
        let model = XrModel::fit(train.inputs(), &train.labels, &cfg).map_err(|e| e.to_string())?;
        let pred = model.predict(test.inputs(), cfg.trainer.beam, 5).map_err(|e| e.to_string())?;
        precision_at_k(&pred.ranked_labels(), &test.labels, 1).map_err(|e| e.to_string())
    };
    let linear = 100.0 * run(false)?;
    let full = 100.0 * run(true)?;
    ensure((linear - 84.14).abs() <= 3.0, || format!("tf-idf only P@1 {linear:.2}, target 84.14 ± 3"))?;
    ensure(full >= linear, || format!("full curriculum P@1 {full:.2} below tf-idf only {linear:.2}"))?;
    Ok(format!("tf-idf only P@1 {linear:.2}, full curriculum {full:.2}"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn cost_sensitive_direction() -> Outcome {
    let (mut with, mut without) = (Vec::new(), Vec::new());
    let mut mean_labels = 0.0;
    for seed in 0..5 {
        let ds = gen_synthetic(&SyntheticConfig {
            n: 2000,
            n_labels: 256,
            cluster_size: 16,
            min_labels: 8,
            max_labels: 12,
            spread: 0.3,
            noise: 0.5,
            tokens_per_label: 2,
            seed,
            ..Default::default()
        })
        .map_err(|e| e.to_string())?;
        mean_labels += ds.labels.nnz() as f64 / ds.len() as f64 / 5.0;
        let (train, test) = ds.split_at(1500, ("train", "test")).map_err(|e| e.to_string())?;
        for cs in [true, false] {
            let mut cfg = RunConfig::default();
            cfg.seed = seed;
            cfg.label_tree.hlt_prelim = "16-256".parse().unwrap();
            cfg.label_tree.hlt_refine = "16-256".parse().unwrap();
            cfg.encoder.d_in = 1 << 12;
            cfg.encoder.hidden = 64;
            cfg.encoder.d_dnn = 32;
            cfg.encoder.n_step = 300;
            cfg.encoder.lr_max = 5e-3;
            cfg.trainer.lambda = 0.05;
            cfg.multires.cost_sensitive = cs;
            let model = XrModel::fit(train.inputs(), &train.labels, &cfg).map_err(|e| e.to_string())?;
            let pred = model.predict(test.inputs(), cfg.trainer.beam, 5).map_err(|e| e.to_string())?;
            let p1 = precision_at_k(&pred.ranked_labels(), &test.labels, 1).map_err(|e| e.to_string())?;
            if cs { with.push(p1) } else { without.push(p1) }
        }
    }
    ensure(mean_labels >= 8.0, || format!("mean labels per instance {mean_labels:.2}"))?;
    let (a, b) = (median(with.clone()), median(without.clone()));
    ensure(a >= b, || format!("median P@1 with {a:.4} < without {b:.4} ({with:?} vs {without:?})"))?;
    Ok(format!("median P@1 {a:.4} with vs {b:.4} without, {mean_labels:.1} labels per instance"))
}

fn node_budget() -> Outcome {
    let ds = gen_synthetic(&SyntheticConfig {
        n: 8700,
        n_labels: 4096,
        cluster_size: 8,
        min_labels: 1,
        max_labels: 2,
        noise_features: 1000,
        seed: 8,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let (train, test) = ds.split_at(8192, ("train", "test")).map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::default();
    cfg.encoder.enabled = false;
    cfg.label_tree.hlt_refine = "8-64-512-4096".parse().unwrap();
    let model = XrModel::fit(train.inputs(), &train.labels, &cfg).map_err(|e| e.to_string())?;
    ensure(model.tree().max_branching() == 8, || format!("branching {}", model.tree().max_branching()))?;
    let pred = model.predict(test.inputs(), 10, 10).map_err(|e| e.to_string())?;
    let budget = 10 * 8 * model.tree().depth();
    let worst = *pred.evaluations.iter().max().unwrap();
    ensure(worst <= budget, || format!("{worst} ranker rows evaluated, budget {budget}"))?;
    let p1 = precision_at_k(&pred.ranked_labels(), &test.labels, 1).unwrap();
    Ok(format!("at most {worst} of {budget} allowed rows per instance (P@1 {p1:.3})"))
}
