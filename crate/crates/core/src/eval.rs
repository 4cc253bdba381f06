//! Bit-error statistics over batches of generated test sequences.
//!
//! Per-sequence error counts are folded into an [`ErrorAggregate`] of
//! integer sums, so partial aggregates from parallel workers merge exactly
//! and the final statistics do not depend on how the work was split.

use crate::diff::Tensor;
use crate::error::{NtmError, Result};
use crate::ntm::NtmModel;
use crate::rng::instance_rng;
use crate::task::{Split, TaskConfig};

/// Probabilities at or above this count as a 1 bit.
pub const BIT_THRESHOLD: f64 = 0.5;

/// Number of masked positions where the thresholded output and target differ.
pub fn bit_errors(outputs: &Tensor, target: &Tensor, mask: &[bool]) -> Result<u64> {
    if outputs.shape() != target.shape() || mask.len() != outputs.rows() {
        return Err(NtmError::dim(
            "bit_errors",
            format!(
                "outputs {:?}, target {:?}, mask {}",
                outputs.shape(),
                target.shape(),
                mask.len()
            ),
        ));
    }
    let mut errors = 0;
    for (r, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        errors += outputs
            .row(r)
            .iter()
            .zip(target.row(r))
            .filter(|(y, t)| (**y >= BIT_THRESHOLD) != (**t >= BIT_THRESHOLD))
            .count() as u64;
    }
    Ok(errors)
}

/// Sequences whose error count exceeds one vector's worth of bits.
pub fn global_errors(per_sequence: &[u64], bits_per_vector: u64) -> u64 {
    per_sequence
        .iter()
        .filter(|&&e| e > bits_per_vector)
        .count() as u64
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct EvalStats {
    pub n_sequences: u64,
    pub n_with_errors: u64,
    pub max_bit_error: u64,
    pub total_bit_errors: u64,
    pub mean_bit_errors: f64,
    /// Population standard deviation.
    pub std_bit_errors: f64,
    pub n_global_errors: u64,
}

/// Mergeable running totals of per-sequence bit errors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ErrorAggregate {
    pub count: u64,
    pub sum: u64,
    pub sum_sq: u128,
    pub max: u64,
    pub with_errors: u64,
    pub global: u64,
    pub global_threshold: u64,
}

impl ErrorAggregate {
    pub fn new(global_threshold: u64) -> Self {
        ErrorAggregate {
            global_threshold,
            ..Default::default()
        }
    }

    pub fn from_errors(errors: &[u64], global_threshold: u64) -> Self {
        let mut agg = ErrorAggregate::new(global_threshold);
        errors.iter().for_each(|&e| agg.push(e));
        agg
    }

    pub fn push(&mut self, errors: u64) {
        self.count += 1;
        self.sum += errors;
        self.sum_sq += (errors as u128) * (errors as u128);
        self.max = self.max.max(errors);
        if errors > 0 {
            self.with_errors += 1;
        }
        if errors > self.global_threshold {
            self.global += 1;
        }
    }

    /// Combines aggregates over disjoint sets of sequences.
    pub fn merge(&self, other: &ErrorAggregate) -> ErrorAggregate {
        debug_assert_eq!(self.global_threshold, other.global_threshold);
        ErrorAggregate {
            count: self.count + other.count,
            sum: self.sum + other.sum,
            sum_sq: self.sum_sq + other.sum_sq,
            max: self.max.max(other.max),
            with_errors: self.with_errors + other.with_errors,
            global: self.global + other.global,
            global_threshold: self.global_threshold,
        }
    }

    pub fn finish(&self) -> EvalStats {
        let (mean, std) = if self.count == 0 {
            (0.0, 0.0)
        } else {
            let n = self.count as f64;
            // n^2 var = n sum_sq - sum^2, exact in integers.
            let scaled_var =
                self.count as u128 * self.sum_sq - (self.sum as u128) * (self.sum as u128);
            (self.sum as f64 / n, (scaled_var as f64).sqrt() / n)
        };
        EvalStats {
            n_sequences: self.count,
            n_with_errors: self.with_errors,
            max_bit_error: self.max,
            total_bit_errors: self.sum,
            mean_bit_errors: mean,
            std_bit_errors: std,
            n_global_errors: self.global,
        }
    }
}

/// A fixed-shape test configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSpec {
    pub task: TaskConfig,
    pub len: usize,
    /// Ignored for copy.
    pub reps: usize,
    pub split: Split,
    pub global_threshold: u64,
}

impl EvalSpec {
    /// Copy tests on the held-out split; repeat-copy on all vectors. The
    /// global-error threshold defaults to one vector's worth of bits.
    pub fn new(task: TaskConfig, len: usize, reps: usize) -> Self {
        let split = match task {
            TaskConfig::Copy(_) => Split::Test,
            TaskConfig::RepeatCopy(_) => Split::All,
        };
        EvalSpec {
            task,
            len,
            reps,
            split,
            global_threshold: task.bits() as u64,
        }
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn reps_label(&self) -> usize {
        match self.task {
            TaskConfig::Copy(_) => 0,
            TaskConfig::RepeatCopy(_) => self.reps,
        }
    }
}

/// Bit errors of the model on instance `index` of the stream seeded by `seed`.
pub fn instance_errors(model: &NtmModel, spec: &EvalSpec, seed: u64, index: u64) -> Result<u64> {
    let task = spec.task.with_split(spec.split);
    let inst = task.generate(&mut instance_rng(seed, index), spec.len, spec.reps)?;
    let out = model.predict(&inst.input)?;
    bit_errors(&out, &inst.target, &inst.mask)
}

fn aggregate_range(
    model: &NtmModel,
    spec: &EvalSpec,
    seed: u64,
    range: std::ops::Range<u64>,
) -> Result<ErrorAggregate> {
    let mut agg = ErrorAggregate::new(spec.global_threshold);
    for i in range {
        agg.push(instance_errors(model, spec, seed, i)?);
    }
    Ok(agg)
}

/// Evaluates `n` instances split across `workers` threads. Instance `i`
/// always comes from stream `(seed, i)`, so the result is independent of
/// the worker count.
pub fn evaluate(
    model: &NtmModel,
    spec: &EvalSpec,
    n: u64,
    seed: u64,
    workers: usize,
) -> Result<EvalStats> {
    if n == 0 {
        return Err(NtmError::Config(
            "evaluation needs at least one instance".into(),
        ));
    }
    if spec.len == 0 || (matches!(spec.task, TaskConfig::RepeatCopy(_)) && spec.reps == 0) {
        return Err(NtmError::Config(
            "length and repetitions must be at least 1".into(),
        ));
    }
    let workers = workers.clamp(1, n as usize) as u64;
    let chunk = n.div_ceil(workers);
    let parts: Vec<Result<ErrorAggregate>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let range = (w * chunk).min(n)..((w + 1) * chunk).min(n);
                scope.spawn(move || aggregate_range(model, spec, seed, range))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut total = ErrorAggregate::new(spec.global_threshold);
    for part in parts {
        total = total.merge(&part?);
    }
    Ok(total.finish())
}

pub const STATS_HEADER: &str = "task,length,reps,n,n_err,max_err,mean,std,n_global";

/// One stats CSV row matching [`STATS_HEADER`].
pub fn stats_row(task: &str, len: usize, reps: usize, s: &EvalStats) -> String {
    format!(
        "{task},{len},{reps},{},{},{},{:.6},{:.6},{}",
        s.n_sequences,
        s.n_with_errors,
        s.max_bit_error,
        s.mean_bit_errors,
        s.std_bit_errors,
        s.n_global_errors
    )
}
