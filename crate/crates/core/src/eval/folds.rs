use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{aggregate_labels, Corpus, InstanceId, Level};
use crate::error::{Error, Result};
use crate::seed;

/// User-grouped fold assignment; every instance follows its user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
    pub stratify_outcome: String,
    /// doc_id → user_id for resolving document instances.
    pub doc_users: BTreeMap<String, String>,
}

impl FoldPlan {
    pub fn user_of<'a>(&'a self, id: &'a InstanceId) -> Option<&'a str> {
        match id {
            InstanceId::Document(d) => self.doc_users.get(d).map(String::as_str),
            InstanceId::Wave { user_id, .. } | InstanceId::User(user_id) => self
                .assignments
                .contains_key(user_id)
                .then_some(user_id.as_str()),
        }
    }

    pub fn fold_of(&self, id: &InstanceId) -> Option<usize> {
        self.user_of(id)
            .and_then(|u| self.assignments.get(u))
            .copied()
    }

    pub fn test_users(&self, fold: usize) -> impl Iterator<Item = &str> {
        self.assignments
            .iter()
            .filter(move |(_, &f)| f == fold)
            .map(|(u, _)| u.as_str())
    }

    pub fn train_users(&self, fold: usize) -> impl Iterator<Item = &str> {
        self.assignments
            .iter()
            .filter(move |(_, &f)| f != fold)
            .map(|(u, _)| u.as_str())
    }
}

/// Deals `(key, value)` pairs sorted by value round-robin into `k` groups.
/// The sort is stable, so the incoming order breaks ties.
pub fn stratified_round_robin<K: Ord + Clone>(
    mut items: Vec<(K, f64)>,
    k: usize,
) -> BTreeMap<K, usize> {
    items.sort_by(|a, b| a.1.total_cmp(&b.1));
    items
        .into_iter()
        .enumerate()
        .map(|(i, (key, _))| (key, i % k))
        .collect()
}

/// Users sorted by their user-level `stratify_outcome` and dealt
/// round-robin into `k` folds. `seed` shuffles users first, which decides
/// the order among tied values.
pub fn make_folds(
    corpus: &Corpus,
    k: usize,
    stratify_outcome: &str,
    seed: u64,
) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if !corpus.outcome_names().contains(stratify_outcome) {
        return Err(Error::Config(format!(
            "corpus has no outcome `{stratify_outcome}`"
        )));
    }
    if corpus.n_users() < k {
        return Err(Error::Data(format!(
            "{} users cannot fill {k} folds",
            corpus.n_users()
        )));
    }
    let labels = aggregate_labels(corpus, Level::User)?;
    let mut users: Vec<(String, f64)> = labels
        .entries
        .iter()
        .map(|(id, m)| (id.to_string(), m[stratify_outcome]))
        .collect();
    users.shuffle(&mut seed::rng(seed, "folds"));
    Ok(FoldPlan {
        k,
        assignments: stratified_round_robin(users, k),
        stratify_outcome: stratify_outcome.to_string(),
        doc_users: corpus
            .documents()
            .iter()
            .map(|d| (d.doc_id.clone(), d.user_id.clone()))
            .collect(),
    })
}
