use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{annotation, paired_ttest, Cell};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub cell_a: String,
    pub cell_b: String,
    pub t: f64,
    pub df: usize,
    pub p: f64,
    pub annotation: String,
}

impl std::fmt::Display for Comparison {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} vs {}: t = {:.4}, df = {}, p = {:.4}{}",
            self.cell_a,
            self.cell_b,
            self.t,
            self.df,
            self.p,
            if self.annotation.is_empty() {
                String::new()
            } else {
                format!(" {}", self.annotation)
            }
        )
    }
}

/// Paired t-test of two cells over their folds.
pub fn compare_fold_rs(
    name_a: &str,
    a: &[Option<f64>],
    name_b: &str,
    b: &[Option<f64>],
) -> Result<Comparison> {
    if a.len() != b.len() {
        return Err(Error::Data(format!(
            "cells have {} and {} folds",
            a.len(),
            b.len()
        )));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = a
        .iter()
        .zip(b)
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .unzip();
    let t = paired_ttest(&xs, &ys)?;
    Ok(Comparison {
        cell_a: name_a.into(),
        cell_b: name_b.into(),
        t: t.t,
        df: t.df,
        p: t.p,
        annotation: annotation(t.p).into(),
    })
}

pub fn cmd_compare(name_a: &str, a: &Cell, name_b: &str, b: &Cell) -> Result<Comparison> {
    compare_fold_rs(name_a, &a.fold_rs, name_b, &b.fold_rs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(rs: &[f64]) -> Cell {
        Cell::from_fold_rs(rs.iter().map(|&r| Some(r)).collect())
    }

    #[test]
    fn self_comparison() {
        let a = cell(&[0.3, 0.4, 0.2, 0.5]);
        let c = cmd_compare("a", &a, "a", &a).unwrap();
        assert_eq!((c.t, c.p), (0.0, 1.0));
        assert_eq!(c.annotation, "");
    }

    #[test]
    fn constant_shift_is_starred() {
        let base = [0.3, 0.35, 0.2, 0.5, 0.41, 0.28, 0.33, 0.47, 0.25, 0.39];
        let a = cell(&base.map(|r| r + 0.1));
        let c = cmd_compare("a", &a, "b", &cell(&base)).unwrap();
        assert_eq!(c.p, 0.0);
        assert_eq!(c.annotation, "*");
    }

    #[test]
    fn small_differences_are_not_significant() {
        let d = [0.01, -0.02, 0.03, 0.00, 0.02, 0.01, -0.01, 0.02, 0.00, 0.01];
        let base = [0.3, 0.35, 0.2, 0.5, 0.41, 0.28, 0.33, 0.47, 0.25, 0.39];
        let a: Vec<f64> = base.iter().zip(&d).map(|(b, d)| b + d).collect();
        let c = cmd_compare("a", &cell(&a), "b", &cell(&base)).unwrap();
        // reference values from an independent paired t-test implementation
        assert!((c.t - 1.4812257933030561).abs() < 1e-9, "{}", c.t);
        assert_eq!(c.df, 9);
        assert!((c.p - 0.17268508962953896).abs() < 1e-6, "{}", c.p);
        assert_eq!(c.annotation, "");
    }

    #[test]
    fn unequal_fold_counts() {
        assert!(cmd_compare("a", &cell(&[0.1, 0.2]), "b", &cell(&[0.1, 0.2, 0.3])).is_err());
    }
}
