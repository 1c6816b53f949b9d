//! Recognition metrics, confidence maps and the convolution cost model.

pub mod accuracy;
pub mod confidence;
pub mod cost;

pub use accuracy::{
    character_recognition_accuracy, decode_logits, evaluate, evaluate_with, levenshtein, predict, quick_accuracy,
    recognition_accuracy, topn_accuracy, EvalReport, PlateRecord, TOP_NS,
};
pub use confidence::{column_sum_error, confidence_csv, confidence_map, write_confidence_pgm};
pub use cost::{
    conv_cost_separable, conv_cost_standard, cost_ratio, count_macs, count_recognizer_macs, ConvKind, CostBreakdown,
    LayerCost,
};
