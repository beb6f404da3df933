//! Batch driver, persistence, resume and reporting on synthetic digits.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cfbench::data::synthetic::prototype_digits;
use cfbench::data::Mnist;
use cfbench::protocols::{RunRecord, Stage};
use cfbench::report::{
    load_summaries, read_json, render_svg, run_batch, ConfigLayer, ExperimentConfig, ExperimentSummary, ResultTable,
};

fn toy_mnist() -> Mnist {
    Mnist {
        train: prototype_digits(10, 30, 8, 0.25, 1),
        test: prototype_digits(10, 10, 8, 0.25, 2),
    }
}

fn config(out: &Path, model: &str, task: &str, paradigm: &str) -> ExperimentConfig {
    ConfigLayer {
        model: Some(model.into()),
        task: Some(task.into()),
        paradigm: Some(paradigm.into()),
        out_dir: Some(out.to_path_buf()),
        tmax: Some(20),
        batch_size: Some(10),
        eval_every: Some(10),
        fisher_samples: Some(20),
        ..Default::default()
    }
    .resolve()
    .unwrap()
}

fn quiet(_: cfbench::report::Progress<'_>) {}

fn run_records(dir: &Path) -> Vec<RunRecord> {
    let mut out: Vec<RunRecord> = fs::read_dir(dir.join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(".json"))
        .map(|p| read_json(&p).unwrap())
        .collect();
    out.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    out
}

/// Relative path → bytes for every file below `dir`.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

#[test]
fn fc_realistic_grid_persists_twelve_initial_and_three_retraining_runs() {
    let dir = tempfile::tempdir().unwrap();
    let res = run_batch(&config(dir.path(), "fc", "D9-1a", "realistic"), &toy_mnist(), &quiet).unwrap();
    assert_eq!(res.executed_runs, 15);
    let runs = run_records(dir.path());
    assert_eq!(runs.iter().filter(|r| r.key.stage == Stage::Initial).count(), 12);
    assert_eq!(runs.iter().filter(|r| r.key.stage == Stage::Retrain).count(), 3);
    let (s, path) = &res.summaries[0];
    assert!(path.exists());
    assert!((0.0..=1.0).contains(&s.q_star));
    assert_eq!(s.chance_level, 0.1);
}

#[test]
fn conv_grid_varies_only_learning_rates() {
    let dir = tempfile::tempdir().unwrap();
    run_batch(&config(dir.path(), "conv", "D5-5a", "realistic"), &toy_mnist(), &quiet).unwrap();
    let runs = run_records(dir.path());
    assert_eq!(runs.iter().filter(|r| r.key.stage == Stage::Initial).count(), 2);
    assert_eq!(runs.iter().filter(|r| r.key.stage == Stage::Retrain).count(), 3);
}

#[test]
fn resume_executes_only_missing_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mnist = toy_mnist();
    for paradigm in ["realistic", "prescient"] {
        let cfg = ConfigLayer { sizes: Some(vec![200]), layers: Some(vec![2]), ..Default::default() }
            .over(ConfigLayer {
                model: Some("EWC".into()),
                task: Some("D9-1b".into()),
                paradigm: Some(paradigm.into()),
                out_dir: Some(dir.path().to_path_buf()),
                tmax: Some(20),
                batch_size: Some(10),
                eval_every: Some(10),
                fisher_samples: Some(20),
                ..Default::default()
            })
            .resolve()
            .unwrap();
        let first = run_batch(&cfg, &mnist, &quiet).unwrap();
        let summary_bytes = fs::read(&first.summaries[0].1).unwrap();
        assert!(first.executed_runs > 0);

        let again = run_batch(&cfg, &mnist, &quiet).unwrap();
        assert_eq!(again.executed_runs, 0, "{paradigm}");

        let victim = first.summaries[0].0.runs.iter().find(|r| r.stage != Stage::Initial).unwrap();
        fs::remove_file(dir.path().join("runs").join(format!("{}.json", victim.run_id))).unwrap();
        let resumed = run_batch(&cfg, &mnist, &quiet).unwrap();
        assert_eq!(resumed.executed_runs, 1, "{paradigm}");
        assert_eq!(fs::read(&resumed.summaries[0].1).unwrap(), summary_bytes, "{paradigm}");
    }
}

#[test]
fn identical_configs_write_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mnist = toy_mnist();
    for dir in [&a, &b] {
        let cfg = ConfigLayer { sizes: Some(vec![200]), lr_d1: Some(vec![0.01]), ..Default::default() }
            .over(ConfigLayer {
                model: Some("EWC,LWTA".into()),
                task: Some("D5-5b,DP10-10".into()),
                paradigm: Some("both".into()),
                ..Default::default()
            })
            .resolve()
            .unwrap();
        let cfg = ExperimentConfig {
            out_dir: dir.path().to_path_buf(),
            settings: config(dir.path(), "fc", "D5-5a", "realistic").settings,
            ..cfg
        };
        run_batch(&cfg, &mnist, &quiet).unwrap();
    }
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(ta.keys().any(|k| k.starts_with("tensors")));
    assert_eq!(ta.len(), tb.len());
    for (k, v) in &ta {
        assert!(tb.get(k) == Some(v), "{} differs", k.display());
    }
}

#[test]
fn reports_survive_a_persistence_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mnist = toy_mnist();
    let mut cfg = config(dir.path(), "fc,D-fc", "D9-1a,D9-1c", "both");
    cfg.layers = vec![2];
    cfg.sizes = vec![200];
    let res = run_batch(&cfg, &mnist, &quiet).unwrap();
    let in_memory: Vec<ExperimentSummary> = res.summaries.iter().map(|(s, _)| s.clone()).collect();
    fs::write(dir.path().join("summaries").join("broken.json"), "{ not json").unwrap();

    let (loaded, bad) = load_summaries(dir.path()).unwrap();
    assert_eq!(bad.len(), 1);
    assert!(bad[0].0.ends_with("broken.json"));
    assert_eq!(loaded.len(), in_memory.len());

    let before = ResultTable::build(&in_memory);
    let after = ResultTable::build(&loaded);
    assert_eq!(before.len(), 2);
    for (x, y) in before.iter().zip(&after) {
        assert_eq!(x, y);
        assert_eq!(x.render_text(), y.render_text());
        assert_eq!(&ResultTable::parse_csv(&x.render_csv()).unwrap(), x);
    }
}

#[test]
fn stored_runs_can_be_plotted() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), "D-fc", "D9-1b", "realistic");
    cfg.layers = vec![2];
    cfg.sizes = vec![200];
    cfg.lr_d1 = vec![0.01];
    run_batch(&cfg, &toy_mnist(), &quiet).unwrap();
    let retrain = run_records(dir.path()).into_iter().find(|r| r.key.stage == Stage::Retrain).unwrap();
    let svg = render_svg(&retrain).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
    assert_eq!(svg.matches(r#"class="legend""#).count(), 3);
}
