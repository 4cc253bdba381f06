//! File formats: checkpoints, instance dumps, CSV tables and heatmaps.

pub mod checkpoint;
pub mod dump;
pub mod render;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dump::{format_instance, parse_instance};
pub use render::{render_trace, Colormap, Heatmap, LOG_FLOOR};

use crate::train::CurvePoint;

pub const CURVE_HEADER: &str = "instances_seen,loss_bits";

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for p in curve {
        out.push_str(&format!("{},{:.6}\n", p.instances_seen, p.loss_bits));
    }
    out
}
