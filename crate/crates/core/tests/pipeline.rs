use std::fs;
use std::path::Path;

use xrtree::data::{gen_synthetic, SyntheticConfig};
use xrtree::metrics::precision_at_k;
use xrtree::{RunConfig, XrModel};

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.label_tree.hlt_prelim = "4-48".parse().unwrap();
    cfg.label_tree.hlt_refine = "4-16-48".parse().unwrap();
    cfg.encoder.d_in = 1 << 10;
    cfg.encoder.hidden = 16;
    cfg.encoder.d_dnn = 8;
    cfg.encoder.n_step = 60;
    cfg.encoder.lr_max = 5e-3;
    cfg
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_seed_gives_identical_model_directories() {
    let ds = gen_synthetic(&SyntheticConfig { n: 400, n_labels: 48, cluster_size: 4, seed: 1, ..Default::default() }).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config();
    for name in ["a", "b"] {
        XrModel::fit(ds.inputs(), &ds.labels, &cfg).unwrap().save(&tmp.path().join(name)).unwrap();
    }
    let (a, b) = (dir_bytes(&tmp.path().join("a")), dir_bytes(&tmp.path().join("b")));
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn reloaded_model_predicts_identically() {
    let ds = gen_synthetic(&SyntheticConfig { n: 500, n_labels: 48, cluster_size: 4, seed: 2, ..Default::default() }).unwrap();
    let (train, test) = ds.split_at(400, ("train", "test")).unwrap();
    let model = XrModel::fit(train.inputs(), &train.labels, &small_config()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    model.save(tmp.path()).unwrap();
    let back = XrModel::load(tmp.path()).unwrap();
    let (p, q) = (model.predict(test.inputs(), 10, 5).unwrap(), back.predict(test.inputs(), 10, 5).unwrap());
    assert_eq!(p.rows, q.rows);
    assert!(precision_at_k(&p.ranked_labels(), &test.labels, 1).unwrap() > 0.9);
}

#[test]
fn config_file_round_trips() {
    let mut cfg = small_config();
    cfg.trainer.lambda = 0.125;
    cfg.multires.alpha = 0.25;
    let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(back.to_toml().unwrap(), cfg.to_toml().unwrap());
}
