use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::{InstanceId, LabelTable};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::repr::EmbeddingTable;

use super::folds::{stratified_round_robin, FoldPlan};
use super::ridge::{ridge_fit, RidgeConfig};
use super::stats::pearson_r;

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    /// Pearson r per outer fold; `None` where undefined.
    pub fold_rs: Vec<Option<f64>>,
    pub predictions: BTreeMap<InstanceId, f64>,
    /// Alpha chosen in each outer fold.
    pub alphas: Vec<f64>,
}

impl CvResult {
    pub fn n_defined(&self) -> usize {
        self.fold_rs.iter().flatten().count()
    }

    /// Mean over defined folds.
    pub fn mean_r(&self) -> Option<f64> {
        mean_defined(&self.fold_rs)
    }
}

pub(crate) fn mean_defined(rs: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = rs.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

struct Instance<'a> {
    x: &'a [f64],
    y: f64,
    user: &'a str,
    fold: usize,
}

fn fit_predict(
    cfg: &RidgeConfig,
    train: &[&Instance],
    test: &[&Instance],
    alpha: f64,
) -> Result<Vec<f64>> {
    let x: Vec<&[f64]> = train.iter().map(|i| i.x).collect();
    let y: Vec<f64> = train.iter().map(|i| i.y).collect();
    let fit = ridge_fit(&x, &y, alpha, cfg.standardize, cfg.fit_intercept)?;
    Ok(test.iter().map(|i| fit.predict(i.x)).collect())
}

fn fold_r(pred: &[f64], test: &[&Instance]) -> Option<f64> {
    let y: Vec<f64> = test.iter().map(|i| i.y).collect();
    pearson_r(pred, &y).ok()
}

/// Highest mean inner-fold r over the grid; ties and all-undefined grids
/// go to the larger alpha.
fn select_alpha(cfg: &RidgeConfig, train: &[&Instance]) -> Result<f64> {
    let mut by_user: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for i in train {
        let e = by_user.entry(i.user).or_default();
        e.0 += i.y;
        e.1 += 1;
    }
    if by_user.len() < cfg.inner_folds {
        return Err(Error::Data(format!(
            "{} training users cannot fill {} inner folds",
            by_user.len(),
            cfg.inner_folds
        )));
    }
    let means: Vec<(&str, f64)> = by_user
        .into_iter()
        .map(|(u, (s, n))| (u, s / n as f64))
        .collect();
    let inner = stratified_round_robin(means, cfg.inner_folds);
    let mut best: Option<(f64, f64)> = None;
    for &alpha in &cfg.alpha_grid {
        let mut rs = Vec::with_capacity(cfg.inner_folds);
        for f in 0..cfg.inner_folds {
            let (te, tr): (Vec<&Instance>, Vec<&Instance>) =
                train.iter().copied().partition(|i| inner[i.user] == f);
            if tr.len() < 2 || te.len() < 2 {
                rs.push(None);
                continue;
            }
            let pred = fit_predict(cfg, &tr, &te, alpha)?;
            rs.push(fold_r(&pred, &te));
        }
        if let Some(score) = mean_defined(&rs) {
            if best.is_none_or(|(s, _)| score >= s) {
                best = Some((score, alpha));
            }
        }
    }
    Ok(best.map_or(*cfg.alpha_grid.last().expect("validated grid"), |(_, a)| a))
}

/// Fold r, chosen alpha and `(instance, prediction)` pairs.
type FoldOutcome = (Option<f64>, f64, Vec<(usize, f64)>);

/// Grouped outer CV with inner alpha selection on the training users.
pub fn cross_validate(
    table: &EmbeddingTable,
    labels: &LabelTable,
    outcome: &str,
    plan: &FoldPlan,
    cfg: &RidgeConfig,
) -> Result<CvResult> {
    cross_validate_with(Exec::default(), table, labels, outcome, plan, cfg)
}

pub fn cross_validate_with(
    exec: Exec,
    table: &EmbeddingTable,
    labels: &LabelTable,
    outcome: &str,
    plan: &FoldPlan,
    cfg: &RidgeConfig,
) -> Result<CvResult> {
    cfg.validate()?;
    if table.level().is_some_and(|l| l != labels.level) {
        return Err(Error::InvalidSpec(format!(
            "embeddings are {:?}-level but labels are {}-level",
            table.level(),
            labels.level
        )));
    }
    let mut instances = Vec::new();
    let mut missing = 0usize;
    for (id, m) in &labels.entries {
        let y = *m
            .get(outcome)
            .ok_or_else(|| Error::Config(format!("labels have no outcome `{outcome}`")))?;
        let Some(x) = table.get(id) else {
            missing += 1;
            continue;
        };
        let user = plan
            .user_of(id)
            .ok_or_else(|| Error::Data(format!("instance `{id}` has no fold")))?;
        instances.push(Instance {
            x,
            y,
            user,
            fold: plan.assignments[user],
        });
    }
    if missing > 0 {
        log::warn!("{missing} labeled instance(s) have no embedding and are skipped");
    }
    if instances.is_empty() {
        return Err(Error::Data(
            "no instance has both an embedding and a label".into(),
        ));
    }
    let folds: Vec<usize> = (0..plan.k).collect();
    let outcomes = par::map_with(exec, &folds, |&f| -> Result<FoldOutcome> {
        let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
            (0..instances.len()).partition(|&i| instances[i].fold == f);
        let train: Vec<&Instance> = train_idx.iter().map(|&i| &instances[i]).collect();
        let test: Vec<&Instance> = test_idx.iter().map(|&i| &instances[i]).collect();
        let alpha = select_alpha(cfg, &train)?;
        if test.is_empty() {
            log::warn!("fold {f} has no test instances");
            return Ok((None, alpha, Vec::new()));
        }
        let pred = fit_predict(cfg, &train, &test, alpha)?;
        let r = if test.len() < 2 {
            None
        } else {
            fold_r(&pred, &test)
        };
        if r.is_none() {
            log::warn!("fold {f}: correlation undefined; fold is excluded from the mean");
        }
        Ok((r, alpha, test_idx.into_iter().zip(pred).collect()))
    });
    let mut fold_rs = Vec::with_capacity(plan.k);
    let mut alphas = Vec::with_capacity(plan.k);
    let mut predictions = BTreeMap::new();
    let ids: Vec<&InstanceId> = labels
        .entries
        .keys()
        .filter(|id| table.get(id).is_some())
        .collect();
    for res in outcomes {
        let (r, alpha, preds) = res?;
        fold_rs.push(r);
        alphas.push(alpha);
        for (i, p) in preds {
            predictions.insert(ids[i].clone(), p);
        }
    }
    Ok(CvResult {
        fold_rs,
        predictions,
        alphas,
    })
}

/// Users in the train and test sides of every outer fold of `plan`,
/// restricted to `ids`.
pub fn split_users<'a>(
    plan: &'a FoldPlan,
    ids: impl IntoIterator<Item = &'a InstanceId>,
) -> Vec<(BTreeSet<&'a str>, BTreeSet<&'a str>)> {
    let ids: Vec<&InstanceId> = ids.into_iter().collect();
    (0..plan.k)
        .map(|f| {
            let mut train = BTreeSet::new();
            let mut test = BTreeSet::new();
            for id in &ids {
                if let (Some(u), Some(g)) = (plan.user_of(id), plan.fold_of(id)) {
                    if g == f {
                        test.insert(u);
                    } else {
                        train.insert(u);
                    }
                }
            }
            (train, test)
        })
        .collect()
}
