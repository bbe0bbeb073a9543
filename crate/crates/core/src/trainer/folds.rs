//! Stratified k-fold cross-validation plans.
//!
//! Folds hold subject ids rather than row indices so a persisted plan can be
//! audited against the manifest and the latent store independently of any
//! in-memory ordering.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::Manifest;

use super::tasks::Task;

/// One train/test partition. Both sides are sorted by subject id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// A complete cross-validation plan for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub task: Task,
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    /// Checks that the test sides partition the eligible subjects exactly and
    /// that no fold leaks a test subject into its own train side.
    pub fn audit(&self, manifest: &Manifest) -> Result<()> {
        if self.folds.len() != self.k {
            return Err(Error::InvalidInput(format!(
                "fold plan declares k={} but holds {} folds",
                self.k,
                self.folds.len()
            )));
        }
        let eligible: HashSet<&str> = manifest
            .records
            .iter()
            .filter(|r| self.task.label_for(r).is_some())
            .map(|r| r.subject_id.as_str())
            .collect();
        let mut seen_test: HashSet<&str> = HashSet::new();
        for (i, fold) in self.folds.iter().enumerate() {
            for id in &fold.test {
                if !eligible.contains(id.as_str()) {
                    return Err(Error::InvalidInput(format!(
                        "fold {i}: test subject {id} is not eligible for task {}",
                        self.task
                    )));
                }
                if !seen_test.insert(id.as_str()) {
                    return Err(Error::InvalidInput(format!(
                        "subject {id} appears in more than one test fold"
                    )));
                }
            }
            let test: HashSet<&str> = fold.test.iter().map(String::as_str).collect();
            let mut train: HashSet<&str> = HashSet::new();
            for id in &fold.train {
                if test.contains(id.as_str()) {
                    return Err(Error::InvalidInput(format!(
                        "fold {i}: subject {id} appears in both train and test"
                    )));
                }
                if !eligible.contains(id.as_str()) {
                    return Err(Error::InvalidInput(format!(
                        "fold {i}: train subject {id} is not eligible for task {}",
                        self.task
                    )));
                }
                if !train.insert(id.as_str()) {
                    return Err(Error::InvalidInput(format!(
                        "fold {i}: duplicate train subject {id}"
                    )));
                }
            }
            if train.len() + test.len() != eligible.len() {
                return Err(Error::InvalidInput(format!(
                    "fold {i}: train+test covers {} subjects, expected {}",
                    train.len() + test.len(),
                    eligible.len()
                )));
            }
        }
        if seen_test.len() != eligible.len() {
            return Err(Error::InvalidInput(format!(
                "test folds cover {} subjects, expected {}",
                seen_test.len(),
                eligible.len()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }
}

/// Builds a stratified k-fold plan over the subjects eligible for `task`.
///
/// Subjects are grouped by class, shuffled within each class, and dealt
/// round-robin across folds, so per-fold class counts differ by at most one.
/// Errors if `k < 2` or any class has fewer than `k` members.
pub fn kfold_split(manifest: &Manifest, task: Task, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("k-fold needs k >= 2, got {k}")));
    }
    let mut by_class: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let mut eligible: Vec<(String, usize)> = manifest
        .records
        .iter()
        .filter_map(|r| task.label_for(r).map(|c| (r.subject_id.clone(), c)))
        .collect();
    // Manifest order must not influence the plan.
    eligible.sort();
    for (id, class) in eligible {
        by_class.entry(class).or_default().push(id);
    }
    if by_class.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no subjects eligible for task {task}"
        )));
    }
    for (class, ids) in &by_class {
        if ids.len() < k {
            return Err(Error::InvalidInput(format!(
                "task {task}: class {class} has {} subjects, fewer than k={k}",
                ids.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tests: Vec<Vec<String>> = vec![Vec::new(); k];
    for ids in by_class.values() {
        let mut ids = ids.clone();
        ids.shuffle(&mut rng);
        for (i, id) in ids.into_iter().enumerate() {
            tests[i % k].push(id);
        }
    }

    let all: Vec<String> = tests.iter().flatten().cloned().collect();
    let folds = tests
        .into_iter()
        .map(|mut test| {
            test.sort();
            let held: HashSet<&str> = test.iter().map(String::as_str).collect();
            let mut train: Vec<String> = all
                .iter()
                .filter(|id| !held.contains(id.as_str()))
                .cloned()
                .collect();
            train.sort();
            Fold { train, test }
        })
        .collect();

    Ok(FoldPlan { task, k, seed, folds })
}
