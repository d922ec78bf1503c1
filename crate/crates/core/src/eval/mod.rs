//! Slice PSNR and size-binned defect detection scores.

mod matching;
mod plot;
mod psnr;
mod segment;

pub use matching::{default_bin_edges, match_and_score, BinScore, BinnedDetectionReport, DetectionMatch};
pub use plot::{plot_detection, plot_psnr_bars, write_detection_csv, write_psnr_csv, PsnrBar};
pub use psnr::{psnr, slice_psnr_stats, SlicePsnrStats};
pub use segment::{otsu_threshold, segment_defects, Segmentation, Threshold};
