//! Automatic metrics, significance testing and human evaluation sheets.

pub mod human;
pub mod metrics;
pub mod stats;

pub use human::{
    aggregate_human, make_annotation_sheets, read_sheet, AnnotationSheets, AspectScores, BlindKey,
    HumanMeans, HumanScore, HumanScoreSheet, SheetItem, SheetMapping, sheet_file_name,
};
pub use metrics::{
    confusion, label_metrics, rouge_l, rouge_l_max, skeleton_coverage, Confusion, LabelMetrics, RougeL,
};
pub use stats::{paired_t_test, TTest};
