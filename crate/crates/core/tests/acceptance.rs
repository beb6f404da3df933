//! End-to-end acceptance checks on the real MNIST files.
//!
//! Each test prints one `PASS`/`FAIL` line for its criterion to stderr
//! (bypassing output capture) before asserting.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use cfbench::data::{write_idx_images, write_idx_labels, Mnist, TaskKind, TaskPreset, TaskSpec, MNIST_FILES};
use cfbench::ewc::{ewc_penalty, estimate_fisher, estimate_fisher_traced, lambda_from_retrain_rate, AnchorParams, FisherDiag};
use cfbench::nn::{accuracy, NetworkState};
use cfbench::protocols::{
    chance_level, prescient_eval, prescient_quality, realistic_eval, stopping_index, train_phase, CurveKind, Experiment,
    ExperimentSettings, Grid, MemoryStore, ModelFamily, Outcome, Paradigm, Stage, Topology,
};

fn data_dir() -> PathBuf {
    std::env::var_os("CFBENCH_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn mnist() -> &'static Mnist {
    static MNIST: OnceLock<Mnist> = OnceLock::new();
    MNIST.get_or_init(|| {
        Mnist::load_dir(&data_dir()).unwrap_or_else(|e| panic!("MNIST files are required ({e}); run scripts/fetch_mnist.sh"))
    })
}

/// Serializes the long-running criteria so their time budgets are measured
/// without competing for the CPU.
fn heavy() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn task(name: &str) -> TaskSpec {
    name.parse::<TaskPreset>().unwrap().build(mnist(), 1, false).unwrap()
}

const SEED: u64 = 1;

/// L=2, S=400, ε_D1=0.01, ε_D2=0.001.
fn singleton_grid(model: ModelFamily) -> Grid {
    Grid::new(model, &[2], &[400], &[0.01], &[0.001]).unwrap()
}

/// L=2, S ∈ {200, 400}, ε_D1=0.01, all three retraining rates.
fn reduced_grid(model: ModelFamily) -> Grid {
    Grid::new(model, &[2], &[200, 400], &[0.01], &[0.001, 0.0001, 0.00001]).unwrap()
}

fn evaluate(model: ModelFamily, task: &TaskSpec, grid: Grid, paradigm: Paradigm) -> (Outcome, f64) {
    let exp = Experiment {
        model,
        task,
        grid,
        settings: ExperimentSettings::default(),
        seed: SEED,
        progress: None,
    };
    let store = MemoryStore::new();
    let started = Instant::now();
    let out = match paradigm {
        Paradigm::Prescient => prescient_eval(&exp, &store),
        Paradigm::Realistic => realistic_eval(&exp, &store),
    }
    .unwrap();
    (out, started.elapsed().as_secs_f64())
}

type Cached = OnceLock<(Outcome, f64)>;

fn cached(cell: &'static Cached, model: ModelFamily, task_name: &str, grid: fn(ModelFamily) -> Grid, paradigm: Paradigm) -> &'static (Outcome, f64) {
    cell.get_or_init(|| {
        let _lock = heavy();
        evaluate(model, &task(task_name), grid(model), paradigm)
    })
}

fn fc_permuted() -> &'static (Outcome, f64) {
    static C: Cached = OnceLock::new();
    cached(&C, ModelFamily::Fc, "DP10-10", singleton_grid, Paradigm::Realistic)
}

fn fc_d91b() -> &'static (Outcome, f64) {
    static C: Cached = OnceLock::new();
    cached(&C, ModelFamily::Fc, "D9-1b", singleton_grid, Paradigm::Realistic)
}

fn ewc_d91c() -> &'static (Outcome, f64) {
    static C: Cached = OnceLock::new();
    cached(&C, ModelFamily::Ewc, "D9-1c", reduced_grid, Paradigm::Realistic)
}

fn ewc_d55a() -> &'static (Outcome, f64) {
    static C: Cached = OnceLock::new();
    cached(&C, ModelFamily::Ewc, "D5-5a", reduced_grid, Paradigm::Realistic)
}

fn fc_d91a(paradigm: Paradigm) -> &'static (Outcome, f64) {
    static P: Cached = OnceLock::new();
    static R: Cached = OnceLock::new();
    let cell = if paradigm == Paradigm::Prescient { &P } else { &R };
    cached(cell, ModelFamily::Fc, "D9-1a", reduced_grid, paradigm)
}

fn verdict(id: u32, pass: bool, detail: &str) {
    let line = format!("[criterion {id:>2}] {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let line = line.replace(" \n", "\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
}

#[test]
fn c02_sanity_training() {
    let _lock = heavy();
    let m = mnist();
    let started = Instant::now();
    let spec = ModelFamily::Fc
        .network_spec(Topology::Dense { layers: 2, size: 200 }, &[28, 28])
        .unwrap();
    let state = NetworkState::init(&spec, 1).unwrap();
    let settings = ExperimentSettings::default();
    let out = train_phase(state, &m.train, &[], 0.01, &settings, 1, None, false).unwrap();
    let acc = accuracy(&out.state, &m.test).unwrap();
    let secs = started.elapsed().as_secs_f64();
    verdict(2, acc >= 0.95 && secs <= 120.0, &format!("fc L=2 S=200 ε=0.01: test accuracy {acc:.4} in {secs:.1} s"));
}

#[test]
fn c03_permuted_mnist_is_retained() {
    let (out, secs) = fc_permuted();
    verdict(
        3,
        out.q_star >= 0.90 && *secs <= 300.0,
        &format!("fc realistic DP10-10: q* = {:.4} (need ≥ 0.90) in {secs:.0} s", out.q_star),
    );
}

#[test]
fn c04_class_split_is_forgotten() {
    let (out, secs) = fc_d91b();
    verdict(
        4,
        out.q_star <= 0.30 && *secs <= 300.0,
        &format!("fc realistic D9-1b: q* = {:.4} (need ≤ 0.30) in {secs:.0} s", out.q_star),
    );
}

#[test]
fn c05_ewc_is_only_partly_effective() {
    let (c, secs_c) = ewc_d91c();
    let (a, secs_a) = ewc_d55a();
    let secs = secs_c + secs_a;
    verdict(
        5,
        c.q_star >= 0.80 && a.q_star <= 0.70 && secs <= 1800.0,
        &format!(
            "EWC realistic: D9-1c q* = {:.4} (need ≥ 0.80), D5-5a q* = {:.4} (need ≤ 0.70) in {secs:.0} s",
            c.q_star, a.q_star
        ),
    );
}

#[test]
fn c06_prescient_overstates_retention() {
    let (p, secs_p) = fc_d91a(Paradigm::Prescient);
    let (r, secs_r) = fc_d91a(Paradigm::Realistic);
    let gap = p.q_star - r.q_star;
    let secs = secs_p + secs_r;
    verdict(
        6,
        gap >= 0.3 && secs <= 900.0,
        &format!(
            "fc D9-1a: prescient q* = {:.4}, realistic q* = {:.4}, gap {gap:.4} (need ≥ 0.3) in {secs:.0} s",
            p.q_star, r.q_star
        ),
    );
}

#[test]
fn c07_protocol_invariants() {
    let mut problems = Vec::new();
    let realistic = [fc_d91b(), ewc_d91c(), ewc_d55a(), fc_d91a(Paradigm::Realistic)];
    for (out, _) in realistic {
        if out.d1_guard_trips != 0 {
            problems.push(format!("D1 guard tripped {} times", out.d1_guard_trips));
        }
        let mut best_prescient_view = f64::NEG_INFINITY;
        for r in out.records.iter().filter(|r| r.key.stage == Stage::Retrain && r.is_completed()) {
            let d2 = r.curve(CurveKind::D2OnD2).unwrap();
            let union = r.curve(CurveKind::D2OnUnion).unwrap();
            let (i, _) = stopping_index(&d2.accuracy).unwrap();
            if r.t_e != Some(d2.iterations[i]) {
                problems.push(format!("t_E {:?} is not the minimal qualifying point {}", r.t_e, d2.iterations[i]));
            }
            if r.t_e.unwrap() > 2 * ExperimentSettings::default().t_max {
                problems.push("t_E beyond the retraining window".into());
            }
            best_prescient_view = best_prescient_view.max(prescient_quality(union).unwrap());
        }
        if best_prescient_view < out.q_star {
            problems.push(format!("prescient {best_prescient_view} < realistic {} on shared runs", out.q_star));
        }
    }
    let expected = [("D5-5a", 0.5), ("D5-5h", 0.5), ("D9-1a", 0.1), ("D9-1b", 0.1), ("D9-1c", 0.1), ("DP10-10", 0.1)];
    for (name, level) in expected {
        let got = chance_level(&task(name));
        if got != level {
            problems.push(format!("chance level of {name} is {got}, expected {level}"));
        }
    }
    verdict(
        7,
        problems.is_empty(),
        &if problems.is_empty() {
            "guard never tripped, t_E minimal, prescient ≥ realistic on shared runs, chance levels 0.5/0.1".to_string()
        } else {
            problems.join("; ")
        },
    );
}

#[test]
fn c01_gradient_oracle() {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failing = Vec::new();
    for case in common::gradient_cases() {
        let (err, seed) = common::probe(&case);
        worst = worst.max(err);
        if err >= 1e-3 {
            failing.push(format!("{} (seed {seed}): {err:.2e}", case.name));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        1,
        failing.is_empty() && secs < 1.0,
        &format!("worst relative error {worst:.2e} over all layer kinds in {secs:.3} s {}", failing.join("; ")),
    );
}

#[test]
fn c08_ewc_unit_suite() {
    let mut problems = Vec::new();
    let state = common::mini_state();
    let d1 = common::mini_d1();

    for seed in 0..20 {
        let f = estimate_fisher(&state, &d1, 1 + seed as usize, seed).unwrap();
        if f.tensors().iter().flat_map(|t| t.data()).any(|v| v.is_nan() || *v < 0.0) {
            problems.push(format!("negative Fisher entry (seed {seed})"));
        }
    }

    let fisher = FisherDiag::from_tensors(state.params().iter().map(|p| p.map(|v| v.abs() + 0.5)).collect()).unwrap();
    let (p0, g0) = ewc_penalty(&state, &AnchorParams::capture(&state), &fisher, 1000.0).unwrap();
    if p0 != 0.0 || g0.max_abs() != 0.0 {
        problems.push(format!("penalty at anchor is {p0}"));
    }

    let lambda = lambda_from_retrain_rate(0.001).unwrap();
    if (lambda - 1000.0).abs() > 1e-9 {
        problems.push(format!("λ(0.001) = {lambda}"));
    }

    let (f, draws) = estimate_fisher_traced(&state, &d1, 500, 3).unwrap();
    let (w, b) = (state.params()[0].data(), state.params()[1].data());
    let mut oracle = [0.0; 6];
    for d in &draws {
        let (gw, gb) = common::hand_grads(w, b, d1.images().row(d.index), d.sampled_label);
        for (o, g) in oracle.iter_mut().zip(gw.iter().chain(&gb)) {
            *o += g * g / draws.len() as f64;
        }
    }
    let got: Vec<f64> = f.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
    let worst = got.iter().zip(&oracle).map(|(g, o)| common::rel_err(*g, *o)).fold(0.0, f64::max);
    if worst > 1e-12 {
        problems.push(format!("mini-model Fisher differs from the brute-force oracle by {worst:.2e}"));
    }
    verdict(
        8,
        problems.is_empty(),
        &if problems.is_empty() {
            format!("Fisher ≥ 0, zero penalty at anchor, λ(0.001) = {lambda}, mini-model Fisher within {worst:.1e} of brute force")
        } else {
            problems.join("; ")
        },
    );
}

/// Expected class partitions of each preset, written out independently of the library.
const TABLE_CLASSES: [(&str, &[usize], &[usize]); 12] = [
    ("D5-5a", &[0, 1, 2, 3, 4], &[5, 6, 7, 8, 9]),
    ("D5-5b", &[0, 2, 4, 6, 8], &[1, 3, 5, 7, 9]),
    ("D5-5c", &[3, 4, 6, 8, 9], &[0, 1, 2, 5, 7]),
    ("D5-5d", &[0, 2, 5, 6, 7], &[1, 3, 4, 8, 9]),
    ("D5-5e", &[0, 1, 3, 4, 5], &[2, 6, 7, 8, 9]),
    ("D5-5f", &[0, 3, 4, 8, 9], &[1, 2, 5, 6, 7]),
    ("D5-5g", &[0, 5, 6, 7, 8], &[1, 2, 3, 4, 9]),
    ("D5-5h", &[0, 2, 3, 6, 8], &[1, 4, 5, 7, 9]),
    ("D9-1a", &[0, 1, 2, 3, 4, 5, 6, 7, 8], &[9]),
    ("D9-1b", &[1, 2, 3, 4, 5, 6, 7, 8, 9], &[0]),
    ("D9-1c", &[0, 2, 3, 4, 5, 6, 7, 8, 9], &[1]),
    ("DP10-10", &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9], &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]),
];

fn present_classes(labels: &[usize]) -> Vec<usize> {
    let mut c: Vec<usize> = labels.to_vec();
    c.sort_unstable();
    c.dedup();
    c
}

fn sorted_row(row: &[f64]) -> Vec<f64> {
    let mut r = row.to_vec();
    r.sort_by(f64::total_cmp);
    r
}

fn original_file(name: &str) -> PathBuf {
    let dashed = data_dir().join(name);
    if dashed.exists() {
        dashed
    } else {
        data_dir().join(name.replacen("-idx", ".idx", 1))
    }
}

#[test]
fn c09_dataset_fixtures() {
    let m = mnist();
    let mut problems = Vec::new();
    if (m.train.len(), m.test.len()) != (60_000, 10_000) {
        problems.push(format!("split sizes {} / {}", m.train.len(), m.test.len()));
    }
    if m.train.images().data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        problems.push("pixel outside [0,1]".into());
    }
    let names: Vec<&str> = TaskPreset::all().map(|p| p.name()).collect();
    if names != TABLE_CLASSES.iter().map(|r| r.0).collect::<Vec<_>>() {
        problems.push(format!("preset list {names:?}"));
    }

    for (name, d1, d2) in TABLE_CLASSES {
        let t = task(name);
        for (what, set, want) in [
            ("D1 train", &t.d1_train, d1),
            ("D1 test", &t.d1_test, d1),
            ("D2 train", &t.d2_train, d2),
            ("D2 test", &t.d2_test, d2),
        ] {
            if present_classes(set.labels()) != want {
                problems.push(format!("{name} {what} classes {:?}", present_classes(set.labels())));
            }
        }
        match &t.kind {
            TaskKind::ClassSplit { .. } => {
                let in_split = |c: &usize| d1.contains(c) || d2.contains(c);
                let want = m.train.labels().iter().filter(|c| in_split(c)).count();
                if t.d1_train.len() + t.d2_train.len() != want {
                    problems.push(format!("{name} drops or duplicates samples"));
                }
            }
            TaskKind::Permutation { d1_perm, d2_perm } => {
                let moved = d2_perm.iter().enumerate().filter(|(i, p)| *i != **p).count();
                if moved < 700 || d1_perm.iter().enumerate().any(|(i, p)| i != *p) {
                    problems.push(format!("{name}: D2 permutation moves only {moved} pixels"));
                }
                for (orig, perm) in [(&m.train, &t.d2_train), (&m.test, &t.d2_test)] {
                    if orig.labels() != perm.labels() {
                        problems.push(format!("{name}: labels changed"));
                    }
                    let same = (0..orig.len()).all(|i| sorted_row(orig.images().row(i)) == sorted_row(perm.images().row(i)));
                    if !same {
                        problems.push(format!("{name}: pixel multiset changed"));
                    }
                }
            }
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let written = [
        (MNIST_FILES[2], write_idx_images(&m.test, &dir.path().join(MNIST_FILES[2]))),
        (MNIST_FILES[3], write_idx_labels(&m.test, &dir.path().join(MNIST_FILES[3]))),
    ];
    for (name, res) in written {
        res.unwrap();
        if std::fs::read(dir.path().join(name)).unwrap() != std::fs::read(original_file(name)).unwrap() {
            problems.push(format!("{name} does not round-trip byte for byte"));
        }
    }
    verdict(
        9,
        problems.is_empty(),
        &if problems.is_empty() {
            "12 presets match the expected partitions, DP10-10 preserves pixel multisets, IDX round-trip byte-identical".to_string()
        } else {
            problems.join("; ")
        },
    );
}

fn files_below(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

#[test]
fn c10_determinism() {
    let _lock = heavy();
    let outs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for out in &outs {
        let o = Command::new(env!("CARGO_BIN_EXE_cfbench"))
            .args(["run", "--model", "EWC", "--task", "D9-1b", "--paradigm", "realistic", "--seed", "7"])
            .args(["--layers", "2", "--sizes", "200", "--lr-d1", "0.01", "--lr-d2", "0.001,0.0001", "--tmax", "300"])
            .arg("--data-dir")
            .arg(data_dir())
            .arg("--out-dir")
            .arg(out.path())
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (a, b) = (files_below(outs[0].path()), files_below(outs[1].path()));
    let differing: Vec<String> = a
        .iter()
        .filter(|(k, v)| b.get(*k) != Some(*v))
        .map(|(k, _)| k.display().to_string())
        .chain(b.keys().filter(|k| !a.contains_key(*k)).map(|k| k.display().to_string()))
        .collect();
    let records = a.keys().filter(|k| k.starts_with("runs")).count();
    verdict(
        10,
        differing.is_empty() && records > 0,
        &format!("two identical EWC runs: {} files ({records} under runs/), {} differ {}", a.len(), differing.len(), differing.join(", ")),
    );
}
