//! `NTMTASK v1` plain-text instance dumps.
//!
//! ```text
//! NTMTASK v1 <task> <T_in> <input_ch> <target_ch>
//! <T_in input rows>
//! <T_in target rows>
//! <mask row of 0/1>
//! ```
//!
//! Values are whitespace-separated decimals in Rust's shortest round-trip
//! formatting.

use std::fmt::Write;

use crate::diff::Tensor;
use crate::error::{NtmError, Result};
use crate::task::TaskInstance;

fn write_row(out: &mut String, values: impl Iterator<Item = String>) {
    let row: Vec<String> = values.collect();
    out.push_str(&row.join(" "));
    out.push('\n');
}

pub fn format_instance(task: &str, inst: &TaskInstance) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "NTMTASK v1 {task} {} {} {}",
        inst.steps(),
        inst.input.cols(),
        inst.target.cols()
    )
    .unwrap();
    for t in 0..inst.steps() {
        write_row(&mut out, inst.input.row(t).iter().map(|v| v.to_string()));
    }
    for t in 0..inst.steps() {
        write_row(&mut out, inst.target.row(t).iter().map(|v| v.to_string()));
    }
    write_row(&mut out, inst.mask.iter().map(|&m| u8::from(m).to_string()));
    out
}

/// Parses a dump back into its task name and instance.
pub fn parse_instance(text: &str) -> Result<(String, TaskInstance)> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| NtmError::Parse("empty dump".into()))?
        .split_whitespace()
        .collect();
    let [magic, version, task, steps, in_ch, out_ch] = header[..] else {
        return Err(NtmError::Parse("malformed header".into()));
    };
    if magic != "NTMTASK" || version != "v1" {
        return Err(NtmError::Parse(format!(
            "unsupported header `{magic} {version}`"
        )));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| NtmError::Parse(format!("bad count `{s}`")))
    };
    let (steps, in_ch, out_ch) = (num(steps)?, num(in_ch)?, num(out_ch)?);

    let mut read_rows = |n: usize, width: usize| -> Result<Vec<f64>> {
        let mut data = Vec::with_capacity(n * width);
        for _ in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| NtmError::Parse("truncated dump".into()))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| NtmError::Parse(format!("bad value `{v}`")))
                })
                .collect::<Result<_>>()?;
            if row.len() != width {
                return Err(NtmError::Parse(format!(
                    "row has {} values, expected {width}",
                    row.len()
                )));
            }
            data.extend(row);
        }
        Ok(data)
    };
    let input = Tensor::matrix(steps, in_ch, read_rows(steps, in_ch)?)?;
    let target = Tensor::matrix(steps, out_ch, read_rows(steps, out_ch)?)?;
    let mask = read_rows(1, steps)?.into_iter().map(|v| v != 0.0).collect();
    Ok((
        task.to_string(),
        TaskInstance {
            input,
            target,
            mask,
        },
    ))
}
