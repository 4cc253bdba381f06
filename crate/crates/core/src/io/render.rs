//! Grayscale heatmaps written as binary portable graymaps (P5, 8-bit) with
//! full-precision CSV twins.
//!
//! Linear maps clamp values to `[0, 1]`. Logarithmic maps use
//! `log10(max(v, LOG_FLOOR))` rescaled so `LOG_FLOOR` is black and 1 is
//! white. Pixels are `round(255 * normalized)`.

use std::path::{Path, PathBuf};

use crate::diff::Tensor;
use crate::error::{NtmError, Result};
use crate::ntm::StepTrace;
use crate::task::TaskInstance;

pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Colormap {
    Linear,
    Logarithmic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub colormap: Colormap,
}

impl Heatmap {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, colormap: Colormap) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(NtmError::dim(
                "heatmap",
                format!("{rows}x{cols} with {} values", values.len()),
            ));
        }
        Ok(Heatmap {
            rows,
            cols,
            values,
            colormap,
        })
    }

    /// Heatmap with one column per entry of `columns`.
    pub fn from_columns(columns: &[&[f64]], colormap: Colormap) -> Result<Self> {
        let rows = columns.first().map(|c| c.len()).unwrap_or(0);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(NtmError::dim("heatmap", "ragged columns"));
        }
        let cols = columns.len();
        let mut values = vec![0.0; rows * cols];
        for (c, col) in columns.iter().enumerate() {
            for (r, &v) in col.iter().enumerate() {
                values[r * cols + c] = v;
            }
        }
        Heatmap::new(rows, cols, values, colormap)
    }

    pub fn normalized(&self, v: f64) -> f64 {
        match self.colormap {
            Colormap::Linear => v.clamp(0.0, 1.0),
            Colormap::Logarithmic => {
                let lo = LOG_FLOOR.log10();
                ((v.max(LOG_FLOOR).log10() - lo) / -lo).clamp(0.0, 1.0)
            }
        }
    }

    pub fn pixels(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|&v| (255.0 * self.normalized(v)).round() as u8)
            .collect()
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        out.extend(self.pixels());
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            let row: Vec<String> = self.values[r * self.cols..(r + 1) * self.cols]
                .iter()
                .map(|v| v.to_string())
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Writes `<stem>.pgm` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        let pgm = dir.join(format!("{stem}.pgm"));
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&pgm, self.to_pgm()).map_err(|e| NtmError::io(&pgm, e))?;
        std::fs::write(&csv, self.to_csv()).map_err(|e| NtmError::io(&csv, e))?;
        Ok(vec![pgm, csv])
    }
}

/// Channel-by-time map of the scored steps of `m`.
fn recall_map(
    m: &Tensor,
    mask: &[bool],
    colormap: Colormap,
    f: impl Fn(usize, usize) -> f64,
) -> Result<Heatmap> {
    let steps: Vec<usize> = (0..mask.len()).filter(|&t| mask[t]).collect();
    let cols: Vec<Vec<f64>> = steps
        .iter()
        .map(|&t| (0..m.cols()).map(|c| f(t, c)).collect())
        .collect();
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    Heatmap::from_columns(&refs, colormap)
}

/// Renders target, output and `|output - target|` (log scale) over the
/// recall steps, plus read and write weightings (location by time) over all
/// steps.
pub fn render_trace(
    inst: &TaskInstance,
    outputs: &Tensor,
    trace: &[StepTrace],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if outputs.shape() != inst.target.shape() || trace.len() != inst.steps() {
        return Err(NtmError::dim(
            "render_trace",
            "outputs, target and trace disagree",
        ));
    }
    if inst.scored_steps() == 0 {
        return Err(NtmError::Contract("instance has no recall steps".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| NtmError::io(out_dir, e))?;
    let target = &inst.target;
    let mut written = Vec::new();
    let maps = [
        (
            "target",
            recall_map(target, &inst.mask, Colormap::Linear, |t, c| target.at(t, c))?,
        ),
        (
            "output",
            recall_map(outputs, &inst.mask, Colormap::Linear, |t, c| {
                outputs.at(t, c)
            })?,
        ),
        (
            "difference",
            recall_map(outputs, &inst.mask, Colormap::Logarithmic, |t, c| {
                (outputs.at(t, c) - target.at(t, c)).abs()
            })?,
        ),
    ];
    for (stem, map) in &maps {
        written.extend(map.write(out_dir, stem)?);
    }
    let reads: Vec<&[f64]> = trace.iter().map(|s| s.read_weighting.as_slice()).collect();
    let writes: Vec<&[f64]> = trace.iter().map(|s| s.write_weighting.as_slice()).collect();
    written
        .extend(Heatmap::from_columns(&reads, Colormap::Linear)?.write(out_dir, "read_weights")?);
    written
        .extend(Heatmap::from_columns(&writes, Colormap::Linear)?.write(out_dir, "write_weights")?);
    Ok(written)
}
