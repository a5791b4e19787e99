//! Ridge regression over embedding tables under user-grouped,
//! outcome-stratified cross-validation, with Pearson r, paired t-tests and
//! table rendering.

pub mod cv;
pub mod folds;
pub mod report;
pub mod ridge;
pub mod stats;

pub use cv::{cross_validate, cross_validate_with, CvResult};
pub use folds::{make_folds, FoldPlan};
pub use report::{render_report, Cell, CellKey, EvalReport, ReportFormat, SigRecord};
pub use ridge::{ridge_fit, RidgeConfig, RidgeFit};
pub use stats::{annotation, paired_ttest, pearson_r, TTest};
