//! One-pass-evaluation metrics, sequence and result file I/O, SVG curve
//! plots, the gradient-check battery and the ablation harness.

mod ablation;
mod battery;
mod io;
mod metrics;
mod plot;

pub use ablation::{run_ablation, run_sequence, AblationReport, AblationRow, GateLog, VARIANTS};
pub use battery::{run_battery, BatteryCheck, BATTERY_EPS, BATTERY_TOL};
pub use io::{
    curves_csv, load_result, load_sequence, read_pgm, result_curves, save_result, save_sequence,
    write_pgm, TrackResult,
};
pub use metrics::{
    center_error, error_track, failure_rate, overlap_track, precision_curve, robustness,
    success_curve, Curve, PRECISION_AT_PX, ROBUSTNESS_S,
};
pub use plot::curves_svg;
