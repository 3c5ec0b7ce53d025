//! Train/test splitting, precision-recall evaluation and embedding scatter
//! export.

mod pr;
mod scatter;
mod split;

pub use pr::{pr_curve, PrCurve, PrPoint};
pub use scatter::{scatter_export, ScatterEpoch, ScatterPoint};
pub use split::{split_users, test_count, ClusterSplit, Split};
