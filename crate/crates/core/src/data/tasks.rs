use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{DataError, LabeledSet, Mnist};

struct PresetRow {
    name: &'static str,
    d1: &'static [usize],
    d2: &'static [usize],
}

const PERMUTATION_NAME: &str = "DP10-10";

// Class partitions of the two-step incremental tasks.
const SPLITS: [PresetRow; 11] = [
    PresetRow { name: "D5-5a", d1: &[0, 1, 2, 3, 4], d2: &[5, 6, 7, 8, 9] },
    PresetRow { name: "D5-5b", d1: &[0, 2, 4, 6, 8], d2: &[1, 3, 5, 7, 9] },
    PresetRow { name: "D5-5c", d1: &[3, 4, 6, 8, 9], d2: &[0, 1, 2, 5, 7] },
    PresetRow { name: "D5-5d", d1: &[0, 2, 5, 6, 7], d2: &[1, 3, 4, 8, 9] },
    PresetRow { name: "D5-5e", d1: &[0, 1, 3, 4, 5], d2: &[2, 6, 7, 8, 9] },
    PresetRow { name: "D5-5f", d1: &[0, 3, 4, 8, 9], d2: &[1, 2, 5, 6, 7] },
    PresetRow { name: "D5-5g", d1: &[0, 5, 6, 7, 8], d2: &[1, 2, 3, 4, 9] },
    PresetRow { name: "D5-5h", d1: &[0, 2, 3, 6, 8], d2: &[1, 4, 5, 7, 9] },
    PresetRow { name: "D9-1a", d1: &[0, 1, 2, 3, 4, 5, 6, 7, 8], d2: &[9] },
    PresetRow { name: "D9-1b", d1: &[1, 2, 3, 4, 5, 6, 7, 8, 9], d2: &[0] },
    PresetRow { name: "D9-1c", d1: &[0, 2, 3, 4, 5, 6, 7, 8, 9], d2: &[1] },
];

/// One of the twelve named tasks: eight 5+5 splits, three 9+1 splits and the
/// permuted-pixel pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskPreset(usize);

impl TaskPreset {
    pub const COUNT: usize = SPLITS.len() + 1;

    /// All presets in table order (D5-5a..h, D9-1a..c, DP10-10).
    pub fn all() -> impl Iterator<Item = TaskPreset> {
        (0..Self::COUNT).map(TaskPreset)
    }

    pub fn name(self) -> &'static str {
        SPLITS.get(self.0).map_or(PERMUTATION_NAME, |r| r.name)
    }

    pub fn is_permutation(self) -> bool {
        self.0 == SPLITS.len()
    }

    /// `(d1_classes, d2_classes)`; both are all ten classes for DP10-10.
    pub fn classes(self) -> (Vec<usize>, Vec<usize>) {
        match SPLITS.get(self.0) {
            Some(r) => (r.d1.to_vec(), r.d2.to_vec()),
            None => ((0..10).collect(), (0..10).collect()),
        }
    }

    pub fn valid_names() -> String {
        Self::all().map(|p| p.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for TaskPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskPreset {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::all()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| DataError::UnknownPreset {
                name: s.to_string(),
                valid: Self::valid_names(),
            })
    }
}

impl Serialize for TaskPreset {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for TaskPreset {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskKind {
    ClassSplit { d1_classes: Vec<usize>, d2_classes: Vec<usize> },
    /// Pixel permutations applied to every image of each sub-task.
    Permutation { d1_perm: Vec<usize>, d2_perm: Vec<usize> },
}

/// A two-step incremental task: train/test sets for D1 and D2.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    pub d1_train: LabeledSet,
    pub d1_test: LabeledSet,
    pub d2_train: LabeledSet,
    pub d2_test: LabeledSet,
}

impl TaskSpec {
    /// Builds a class-split task from arbitrary train/test sets.
    pub fn class_split(
        name: impl Into<String>,
        train: &LabeledSet,
        test: &LabeledSet,
        d1_classes: &[usize],
        d2_classes: &[usize],
    ) -> Result<Self, DataError> {
        if let Some(c) = d1_classes.iter().find(|c| d2_classes.contains(c)) {
            return Err(DataError::Invalid(format!("class {c} appears in both sub-tasks")));
        }
        let task = Self {
            name: name.into(),
            kind: TaskKind::ClassSplit {
                d1_classes: d1_classes.to_vec(),
                d2_classes: d2_classes.to_vec(),
            },
            d1_train: train.filter_classes(d1_classes),
            d1_test: test.filter_classes(d1_classes),
            d2_train: train.filter_classes(d2_classes),
            d2_test: test.filter_classes(d2_classes),
        };
        task.check_non_empty()?;
        Ok(task)
    }

    /// Builds a permutation task: D1 and D2 hold the full sets with their
    /// respective pixel permutations applied.
    pub fn permutation(
        name: impl Into<String>,
        train: &LabeledSet,
        test: &LabeledSet,
        d1_perm: Vec<usize>,
        d2_perm: Vec<usize>,
    ) -> Result<Self, DataError> {
        let pixels: usize = train.sample_shape().iter().product();
        for perm in [&d1_perm, &d2_perm] {
            if !is_bijection(perm, pixels) {
                return Err(DataError::Invalid(format!("not a permutation of 0..{pixels}")));
            }
        }
        let apply = |set: &LabeledSet, perm: &[usize]| {
            if perm.iter().enumerate().all(|(i, &p)| i == p) {
                set.clone()
            } else {
                set.permute_pixels(perm)
            }
        };
        let task = Self {
            name: name.into(),
            d1_train: apply(train, &d1_perm),
            d1_test: apply(test, &d1_perm),
            d2_train: apply(train, &d2_perm),
            d2_test: apply(test, &d2_perm),
            kind: TaskKind::Permutation { d1_perm, d2_perm },
        };
        task.check_non_empty()?;
        Ok(task)
    }

    fn check_non_empty(&self) -> Result<(), DataError> {
        if [&self.d1_train, &self.d1_test, &self.d2_train, &self.d2_test]
            .iter()
            .any(|s| s.is_empty())
        {
            return Err(DataError::EmptySet);
        }
        Ok(())
    }

    /// D1-test followed by D2-test.
    pub fn union_test(&self) -> LabeledSet {
        LabeledSet::concat(&[&self.d1_test, &self.d2_test])
    }

    pub fn union_test_len(&self) -> usize {
        self.d1_test.len() + self.d2_test.len()
    }

    pub fn sample_shape(&self) -> &[usize] {
        self.d1_train.sample_shape()
    }
}

fn is_bijection(perm: &[usize], n: usize) -> bool {
    if perm.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return false;
        }
    }
    true
}

/// Uniformly random permutation of `0..n`, deterministic in `seed`.
pub fn random_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm
}

/// Builds one of the eleven class-split presets.
pub fn make_split_task(preset: TaskPreset, mnist: &Mnist) -> Result<TaskSpec, DataError> {
    if preset.is_permutation() {
        return Err(DataError::Invalid(format!("{preset} is a permutation task")));
    }
    let (d1, d2) = preset.classes();
    TaskSpec::class_split(preset.name(), &mnist.train, &mnist.test, &d1, &d2)
}

/// Builds DP10-10. D1 keeps the original pixel order unless `permute_d1`, in
/// which case it gets its own random permutation.
pub fn make_permutation_task(seed: u64, mnist: &Mnist, permute_d1: bool) -> Result<TaskSpec, DataError> {
    let pixels: usize = mnist.train.sample_shape().iter().product();
    let d2_perm = random_permutation(pixels, seed);
    let d1_perm = if permute_d1 {
        random_permutation(pixels, seed ^ 0x9E37_79B9_7F4A_7C15)
    } else {
        (0..pixels).collect()
    };
    TaskSpec::permutation(PERMUTATION_NAME, &mnist.train, &mnist.test, d1_perm, d2_perm)
}

impl TaskPreset {
    /// Builds the task for this preset; `perm_seed` and `permute_d1` only
    /// matter for DP10-10.
    pub fn build(self, mnist: &Mnist, perm_seed: u64, permute_d1: bool) -> Result<TaskSpec, DataError> {
        if self.is_permutation() {
            make_permutation_task(perm_seed, mnist, permute_d1)
        } else {
            make_split_task(self, mnist)
        }
    }
}
