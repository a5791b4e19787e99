use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Level;
use crate::error::{Error, Result};

use super::cv::mean_defined;
use super::stats::{annotation, paired_ttest};

/// Outcome name used for per-level average columns.
pub const AVG: &str = "avg";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub model: String,
    pub pooler: String,
    pub level: Level,
    pub outcome: String,
}

impl CellKey {
    pub fn name(&self) -> String {
        format!(
            "{}/{}/{}/{}",
            self.model, self.pooler, self.level, self.outcome
        )
    }

    pub fn parse(name: &str) -> Result<CellKey> {
        let parts: Vec<&str> = name.split('/').collect();
        let [model, pooler, level, outcome] = parts[..] else {
            return Err(Error::Config(format!(
                "cell `{name}` is not model/pooler/level/outcome"
            )));
        };
        Ok(CellKey {
            model: model.into(),
            pooler: pooler.into(),
            level: Level::parse(level).map_err(|e| Error::Config(e.to_string()))?,
            outcome: outcome.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean_r: Option<f64>,
    pub fold_rs: Vec<Option<f64>>,
    /// Folds with a defined r.
    pub n: usize,
}

impl Cell {
    pub fn from_fold_rs(fold_rs: Vec<Option<f64>>) -> Cell {
        Cell {
            mean_r: mean_defined(&fold_rs),
            n: fold_rs.iter().flatten().count(),
            fold_rs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigRecord {
    pub cell_a: String,
    pub cell_b: String,
    pub t: f64,
    pub df: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    #[serde(with = "cells_as_list")]
    pub cells: BTreeMap<CellKey, Cell>,
    pub significance: Vec<SigRecord>,
}

mod cells_as_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Entry {
        #[serde(flatten)]
        key: CellKey,
        #[serde(flatten)]
        cell: Cell,
    }

    pub fn serialize<S: Serializer>(
        cells: &BTreeMap<CellKey, Cell>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let list: Vec<Entry> = cells
            .iter()
            .map(|(k, c)| Entry {
                key: k.clone(),
                cell: c.clone(),
            })
            .collect();
        list.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<BTreeMap<CellKey, Cell>, D::Error> {
        let list = Vec::<Entry>::deserialize(d)?;
        Ok(list.into_iter().map(|e| (e.key, e.cell)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl EvalReport {
    pub fn new(k: usize) -> EvalReport {
        EvalReport {
            k,
            cells: BTreeMap::new(),
            significance: Vec::new(),
        }
    }

    pub fn insert(&mut self, key: CellKey, fold_rs: Vec<Option<f64>>) {
        self.cells.insert(key, Cell::from_fold_rs(fold_rs));
    }

    pub fn cell_by_name(&self, name: &str) -> Result<&Cell> {
        let key = CellKey::parse(name)?;
        self.cells
            .get(&key)
            .ok_or_else(|| Error::Config(format!("report has no cell `{name}`")))
    }

    fn levels(&self) -> BTreeSet<Level> {
        self.cells.keys().map(|k| k.level).collect()
    }

    fn outcomes(&self, level: Level) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .cells
            .keys()
            .filter(|k| k.level == level)
            .map(|k| k.outcome.as_str())
            .collect();
        set.into_iter().map(String::from).collect()
    }

    /// Columns in display order: each level's outcomes, then its average
    /// when the level has more than one outcome.
    pub fn columns(&self) -> Vec<(Level, String)> {
        let mut cols = Vec::new();
        for level in self.levels() {
            let outcomes = self.outcomes(level);
            let avg = outcomes.len() > 1;
            cols.extend(outcomes.into_iter().map(|o| (level, o)));
            if avg {
                cols.push((level, AVG.to_string()));
            }
        }
        cols
    }

    pub fn rows(&self) -> Vec<(String, String)> {
        let set: BTreeSet<(String, String)> = self
            .cells
            .keys()
            .map(|k| (k.model.clone(), k.pooler.clone()))
            .collect();
        set.into_iter().collect()
    }

    /// Fold rs behind one display column; averages concatenate the
    /// outcomes' folds.
    fn column_folds(
        &self,
        model: &str,
        pooler: &str,
        level: Level,
        outcome: &str,
    ) -> Option<Vec<Option<f64>>> {
        let key = |o: &str| CellKey {
            model: model.into(),
            pooler: pooler.into(),
            level,
            outcome: o.into(),
        };
        if outcome != AVG {
            return self.cells.get(&key(outcome)).map(|c| c.fold_rs.clone());
        }
        let mut all = Vec::new();
        for o in self.outcomes(level) {
            all.extend(self.cells.get(&key(&o))?.fold_rs.iter().copied());
        }
        Some(all)
    }

    /// Compares each model's best pooler with its second best in every
    /// column, pairing fold rs defined in both.
    pub fn compute_significance(&mut self) {
        let mut records = Vec::new();
        let rows = self.rows();
        let models: BTreeSet<&str> = rows.iter().map(|(m, _)| m.as_str()).collect();
        for (level, outcome) in self.columns() {
            for model in &models {
                let mut ranked: Vec<(f64, &str, Vec<Option<f64>>)> = rows
                    .iter()
                    .filter(|(m, _)| m == model)
                    .filter_map(|(_, p)| {
                        let folds = self.column_folds(model, p, level, &outcome)?;
                        Some((mean_defined(&folds)?, p.as_str(), folds))
                    })
                    .collect();
                if ranked.len() < 2 {
                    continue;
                }
                ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
                let (a, b): (Vec<f64>, Vec<f64>) = ranked[0]
                    .2
                    .iter()
                    .zip(&ranked[1].2)
                    .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
                    .unzip();
                let Ok(t) = paired_ttest(&a, &b) else {
                    continue;
                };
                let name = |p: &str| {
                    CellKey {
                        model: model.to_string(),
                        pooler: p.into(),
                        level,
                        outcome: outcome.clone(),
                    }
                    .name()
                };
                records.push(SigRecord {
                    cell_a: name(ranked[0].1),
                    cell_b: name(ranked[1].1),
                    t: t.t,
                    df: t.df,
                    p: t.p,
                });
            }
        }
        self.significance = records;
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "model",
            "pooler",
            "level",
            "outcome",
            "mean_r",
            "n_folds",
            "fold_rs_json",
        ])
        .expect("in-memory write");
        for (k, c) in &self.cells {
            w.write_record([
                k.model.clone(),
                k.pooler.clone(),
                k.level.to_string(),
                k.outcome.clone(),
                c.mean_r.map_or_else(String::new, |r| r.to_string()),
                c.n.to_string(),
                serde_json::to_string(&c.fold_rs).expect("serializable"),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flushed")).expect("utf-8")
    }

    pub fn significance_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["cell_a", "cell_b", "t", "df", "p"])
            .expect("in-memory write");
        for s in &self.significance {
            w.write_record([
                s.cell_a.clone(),
                s.cell_b.clone(),
                s.t.to_string(),
                s.df.to_string(),
                s.p.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flushed")).expect("utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<EvalReport> {
        serde_json::from_str(s).map_err(|e| Error::Data(format!("report json: {e}")))
    }

    /// Fixed-width table. `[x]` marks the column best; `*`/`**` mark a
    /// model's best pooler when it beats its second best at p < 0.001 /
    /// p < 0.05; `(n=…)` reports folds left after undefined ones.
    pub fn to_text(&self) -> String {
        let cols = self.columns();
        let rows = self.rows();
        let mut best: BTreeMap<usize, f64> = BTreeMap::new();
        let mut grid: Vec<Vec<Option<(f64, usize)>>> = Vec::new();
        for (m, p) in &rows {
            let mut line = Vec::new();
            for (ci, (level, outcome)) in cols.iter().enumerate() {
                let v = self.column_folds(m, p, *level, outcome).map(|folds| {
                    let n = folds.iter().flatten().count();
                    (mean_defined(&folds).unwrap_or(f64::NAN), n)
                });
                if let Some((mean, _)) = v {
                    if !mean.is_nan() && best.get(&ci).is_none_or(|b| mean > *b) {
                        best.insert(ci, mean);
                    }
                }
                line.push(v);
            }
            grid.push(line);
        }
        let stars: BTreeMap<&str, &str> = self
            .significance
            .iter()
            .map(|s| (s.cell_a.as_str(), annotation(s.p)))
            .collect();
        let mut table: Vec<Vec<String>> = vec![["model", "pooler"]
            .iter()
            .map(|s| s.to_string())
            .chain(cols.iter().map(|(l, o)| format!("{l}:{o}")))
            .collect()];
        for ((m, p), line) in rows.iter().zip(&grid) {
            let mut out = vec![m.clone(), p.clone()];
            for (ci, v) in line.iter().enumerate() {
                let Some((mean, n)) = *v else {
                    out.push("-".into());
                    continue;
                };
                let (level, outcome) = &cols[ci];
                let total = if outcome == AVG {
                    self.k * self.outcomes(*level).len()
                } else {
                    self.k
                };
                let mut s = if mean.is_nan() {
                    "NA".to_string()
                } else {
                    format!("{mean:.3}")
                };
                if best.get(&ci) == Some(&mean) {
                    s = format!("[{s}]");
                }
                let name = CellKey {
                    model: m.clone(),
                    pooler: p.clone(),
                    level: *level,
                    outcome: outcome.clone(),
                }
                .name();
                s.push_str(stars.get(name.as_str()).copied().unwrap_or(""));
                if n < total {
                    s.push_str(&format!(" (n={n})"));
                }
                out.push(s);
            }
            table.push(out);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut text = String::new();
        for row in &table {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (s, w))| {
                    if i < 2 {
                        format!("{s:<w$}")
                    } else {
                        format!("{s:>w$}")
                    }
                })
                .collect();
            text.push_str(cells.join("  ").trim_end());
            text.push('\n');
        }
        text
    }
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => report.to_text(),
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => report.to_json(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(model: &str, pooler: &str, level: Level, outcome: &str) -> CellKey {
        CellKey {
            model: model.into(),
            pooler: pooler.into(),
            level,
            outcome: outcome.into(),
        }
    }

    fn folds(base: f64, k: usize) -> Vec<Option<f64>> {
        (0..k)
            .map(|i| Some(base + 0.01 * ((i * 7) % 5) as f64))
            .collect()
    }

    #[test]
    fn single_cell_table() {
        let mut r = EvalReport::new(10);
        r.insert(key("ar", "AT", Level::User, "valence"), folds(0.5, 10));
        let text = r.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split_whitespace().count(), 3);
        assert!(lines[1].contains('['));
        assert_eq!(r.to_csv().lines().count(), 2);
    }

    #[test]
    fn missing_folds_are_annotated() {
        let mut r = EvalReport::new(10);
        let mut f = folds(0.4, 10);
        f[3] = None;
        r.insert(key("ar", "AT", Level::User, "valence"), f);
        let cell = &r.cells[&key("ar", "AT", Level::User, "valence")];
        assert_eq!(cell.n, 9);
        let defined: Vec<f64> = cell.fold_rs.iter().flatten().copied().collect();
        assert_eq!(cell.mean_r, Some(defined.iter().sum::<f64>() / 9.0));
        assert!(r.to_text().contains("(n=9)"));
        assert!(r.to_csv().contains("null"));
    }

    #[test]
    fn table_shape_counts_rows_and_columns() {
        let mut r = EvalReport::new(5);
        for m in ["ar", "hu"] {
            for p in ["AT", "LT"] {
                for level in [Level::Document, Level::User] {
                    for o in ["valence", "arousal"] {
                        r.insert(key(m, p, level, o), folds(0.3, 5));
                    }
                }
            }
        }
        r.compute_significance();
        let text = r.to_text();
        let lines: Vec<&str> = text.lines().collect();
        // 2×2 rows; 2 levels × (2 outcomes + avg) columns
        assert_eq!(lines.len(), 1 + 4);
        assert_eq!(lines[0].split_whitespace().count(), 2 + 6);
        assert_eq!(r.columns().len(), 6);
    }

    #[test]
    fn significance_pairs_best_with_second_best() {
        let mut r = EvalReport::new(10);
        r.insert(key("ar", "AT", Level::User, "valence"), folds(0.6, 10));
        r.insert(key("ar", "LT", Level::User, "valence"), folds(0.4, 10));
        r.insert(key("ar", "CLS", Level::User, "valence"), folds(0.1, 10));
        r.compute_significance();
        assert_eq!(r.significance.len(), 1);
        let s = &r.significance[0];
        assert_eq!(s.cell_a, "ar/AT/user/valence");
        assert_eq!(s.cell_b, "ar/LT/user/valence");
        // constant 0.2 shift: zero-variance branch
        assert_eq!(s.p, 0.0);
        assert!(r.to_text().contains("[0.620]*"));
        assert!(r.significance_csv().starts_with("cell_a,cell_b,t,df,p\n"));
    }

    #[test]
    fn json_round_trip() {
        let mut r = EvalReport::new(3);
        r.insert(
            key("ar", "AT", Level::Wave, "valence"),
            vec![Some(0.1), None, Some(0.3)],
        );
        r.insert(
            key("ar", "LT", Level::Wave, "valence"),
            vec![Some(0.2), Some(0.0), Some(0.1)],
        );
        r.compute_significance();
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
        assert!(r.cell_by_name("ar/AT/wave/valence").is_ok());
        assert!(r.cell_by_name("ar/XX/wave/valence").is_err());
        assert!(r.cell_by_name("nonsense").is_err());
    }
}
