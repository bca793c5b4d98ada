//! Metrics, statistical reports, and figure emitters.

pub mod lpips;
pub mod metrics;
pub mod pathlines;
pub mod viz;

pub use lpips::LpipsPlugin;
pub use metrics::{aggregate, epe, evaluate_run, psnr, EvalReport, Metric, MetricsReport, PerTimestep, ReportMeta};
pub use pathlines::{pathlines, render_pathlines, Polyline};
pub use viz::{diff_map, flow_to_glyphs, flow_to_hsv, glyphs_to_svg, mid_slice, render_density, render_glyphs, turbo, RgbImage};
