use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Sample Pearson correlation.
pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Undefined(
            "correlation needs at least two pairs".into(),
        ));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Undefined(
            "correlation with a constant variable".into(),
        ));
    }
    let r = sab / (saa.sqrt() * sbb.sqrt());
    if !r.is_finite() {
        return Err(Error::Numeric(format!("correlation evaluated to {r}")));
    }
    Ok(r.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p: f64,
}

/// Two-sided paired t-test on `a − b`.
///
/// Differences that are all zero give `t = 0, p = 1`. Differences with
/// (numerically) zero spread and a nonzero mean give `t = ±∞, p = 0`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "paired lists have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Undefined(
            "paired t-test needs at least two pairs".into(),
        ));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite score difference".into()));
    }
    let df = n - 1;
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / df as f64;
    let sd = var.sqrt();
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(TTest { t: 0.0, df, p: 1.0 });
    }
    // spread at the rounding level of the differences counts as none
    if sd <= 64.0 * f64::EPSILON * scale {
        return Ok(TTest {
            t: f64::INFINITY.copysign(mean),
            df,
            p: 0.0,
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, df, p })
}

/// `*` for p < 0.001, `**` for p < 0.05, else empty.
pub fn annotation(p: f64) -> &'static str {
    if p < 0.001 {
        "*"
    } else if p < 0.05 {
        "**"
    } else {
        ""
    }
}
