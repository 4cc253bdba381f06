//! Copy and repeat-copy task generators.
//!
//! Copy layout (`bits` data channels plus one delimiter channel, which is the
//! last input channel):
//!
//! ```text
//! step      0..L        L          L+1..2L
//! input     data        delimiter  silent
//! target    0           0          data (scored)
//! ```
//!
//! Repeat-copy adds a count channel after the delimiter carrying
//! `reps / rep_normalizer` on the delimiter step, and an end-marker target
//! channel after the data channels that fires on the final recall step.
//!
//! Data vectors are drawn uniformly from the vectors allowed by the
//! configured [`Split`]: `Test` holds exactly the vectors whose popcount is
//! half the width, `Train` holds every other vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{NtmError, Result};
use crate::rng::TaskRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    All,
}

impl std::str::FromStr for Split {
    type Err = NtmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            other => Err(NtmError::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Which half of the bit-sum partition a vector belongs to.
pub fn vector_split(v: &[bool]) -> Result<Split> {
    if !v.len().is_multiple_of(2) {
        return Err(NtmError::Config(format!(
            "bit-sum split needs an even vector width, got {}",
            v.len()
        )));
    }
    let ones = v.iter().filter(|&&b| b).count();
    Ok(if ones == v.len() / 2 {
        Split::Test
    } else {
        Split::Train
    })
}

fn allowed(v: &[bool], split: Split) -> bool {
    match split {
        Split::All => true,
        s => vector_split(v).map(|got| got == s).unwrap_or(false),
    }
}

/// Uniform draw from the vectors of width `bits` admitted by `split`,
/// by rejection.
pub fn sample_vector(rng: &mut TaskRng, bits: usize, split: Split) -> Vec<bool> {
    loop {
        let v: Vec<bool> = (0..bits).map(|_| rng.random::<bool>()).collect();
        if allowed(&v, split) {
            return v;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CopyConfig {
    pub bits: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub split: Split,
}

impl Default for CopyConfig {
    fn default() -> Self {
        CopyConfig {
            bits: 8,
            min_len: 1,
            max_len: 20,
            split: Split::Train,
        }
    }
}

impl CopyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 {
            return Err(NtmError::Config("copy task needs at least one bit".into()));
        }
        if self.split != Split::All && !self.bits.is_multiple_of(2) {
            return Err(NtmError::Config(format!(
                "split {:?} needs an even bit width, got {}",
                self.split, self.bits
            )));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(NtmError::Config(format!(
                "invalid length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepeatCopyConfig {
    pub bits: usize,
    pub max_len: usize,
    pub max_reps: usize,
    pub rep_normalizer: f64,
    pub split: Split,
}

impl Default for RepeatCopyConfig {
    fn default() -> Self {
        RepeatCopyConfig {
            bits: 6,
            max_len: 10,
            max_reps: 10,
            rep_normalizer: 10.0,
            split: Split::All,
        }
    }
}

impl RepeatCopyConfig {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 || self.max_len == 0 || self.max_reps == 0 {
            return Err(NtmError::Config(
                "repeat-copy needs positive bits, max_len and max_reps".into(),
            ));
        }
        if !(self.rep_normalizer > 0.0) {
            return Err(NtmError::Config("rep_normalizer must be positive".into()));
        }
        if self.split != Split::All && !self.bits.is_multiple_of(2) {
            return Err(NtmError::Config(format!(
                "split {:?} needs an even bit width, got {}",
                self.split, self.bits
            )));
        }
        Ok(())
    }
}

/// One generated sequence. `mask[t]` marks the recall steps on which the
/// loss and bit errors are scored.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskInstance {
    pub input: Tensor,
    pub target: Tensor,
    pub mask: Vec<bool>,
}

impl TaskInstance {
    pub fn steps(&self) -> usize {
        self.mask.len()
    }

    pub fn scored_steps(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn to_bits(v: &[bool]) -> impl Iterator<Item = f64> + '_ {
    v.iter().map(|&b| if b { 1.0 } else { 0.0 })
}

/// Copy instance of `len` vectors.
pub fn gen_copy(rng: &mut TaskRng, len: usize, cfg: &CopyConfig) -> Result<TaskInstance> {
    if len == 0 {
        return Err(NtmError::Config(
            "sequence length must be at least 1".into(),
        ));
    }
    if cfg.split != Split::All && !cfg.bits.is_multiple_of(2) {
        return Err(NtmError::Config(format!(
            "split needs an even bit width, got {}",
            cfg.bits
        )));
    }
    let bits = cfg.bits;
    let in_ch = bits + 1;
    let steps = 2 * len + 1;
    let mut input = vec![0.0; steps * in_ch];
    let mut target = vec![0.0; steps * bits];
    let mut mask = vec![false; steps];
    for t in 0..len {
        let v = sample_vector(rng, bits, cfg.split);
        for (c, b) in to_bits(&v).enumerate() {
            input[t * in_ch + c] = b;
            target[(len + 1 + t) * bits + c] = b;
        }
        mask[len + 1 + t] = true;
    }
    input[len * in_ch + bits] = 1.0;
    Ok(TaskInstance {
        input: Tensor::matrix(steps, in_ch, input)?,
        target: Tensor::matrix(steps, bits, target)?,
        mask,
    })
}

/// Repeat-copy instance of `len` vectors to be reproduced `reps` times.
pub fn gen_repeat_copy(
    rng: &mut TaskRng,
    len: usize,
    reps: usize,
    cfg: &RepeatCopyConfig,
) -> Result<TaskInstance> {
    if len == 0 || reps == 0 {
        return Err(NtmError::Config(
            "length and repetitions must be at least 1".into(),
        ));
    }
    cfg.validate()?;
    let bits = cfg.bits;
    let in_ch = bits + 2;
    let out_ch = bits + 1;
    let recall = reps * len + 1;
    let steps = len + 1 + recall;
    let mut input = vec![0.0; steps * in_ch];
    let mut target = vec![0.0; steps * out_ch];
    let mut mask = vec![false; steps];

    let seq: Vec<Vec<bool>> = (0..len)
        .map(|_| sample_vector(rng, bits, cfg.split))
        .collect();
    for (t, v) in seq.iter().enumerate() {
        for (c, b) in to_bits(v).enumerate() {
            input[t * in_ch + c] = b;
        }
    }
    input[len * in_ch + bits] = 1.0;
    input[len * in_ch + bits + 1] = reps as f64 / cfg.rep_normalizer;

    let first = len + 1;
    for r in 0..reps {
        for (t, v) in seq.iter().enumerate() {
            let row = first + r * len + t;
            for (c, b) in to_bits(v).enumerate() {
                target[row * out_ch + c] = b;
            }
        }
    }
    target[(steps - 1) * out_ch + bits] = 1.0;
    mask[first..].iter_mut().for_each(|m| *m = true);

    Ok(TaskInstance {
        input: Tensor::matrix(steps, in_ch, input)?,
        target: Tensor::matrix(steps, out_ch, target)?,
        mask,
    })
}

/// A task family together with its training distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskConfig {
    Copy(CopyConfig),
    #[serde(rename = "repeat")]
    RepeatCopy(RepeatCopyConfig),
}

impl TaskConfig {
    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::Copy(_) => "copy",
            TaskConfig::RepeatCopy(_) => "repeat",
        }
    }

    pub fn bits(&self) -> usize {
        match self {
            TaskConfig::Copy(c) => c.bits,
            TaskConfig::RepeatCopy(c) => c.bits,
        }
    }

    pub fn input_channels(&self) -> usize {
        match self {
            TaskConfig::Copy(c) => c.bits + 1,
            TaskConfig::RepeatCopy(c) => c.bits + 2,
        }
    }

    pub fn target_channels(&self) -> usize {
        match self {
            TaskConfig::Copy(c) => c.bits,
            TaskConfig::RepeatCopy(c) => c.bits + 1,
        }
    }

    pub fn split(&self) -> Split {
        match self {
            TaskConfig::Copy(c) => c.split,
            TaskConfig::RepeatCopy(c) => c.split,
        }
    }

    pub fn with_split(mut self, split: Split) -> Self {
        match &mut self {
            TaskConfig::Copy(c) => c.split = split,
            TaskConfig::RepeatCopy(c) => c.split = split,
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TaskConfig::Copy(c) => c.validate(),
            TaskConfig::RepeatCopy(c) => c.validate(),
        }
    }

    /// Instance with a fixed length (and repetition count for repeat-copy;
    /// ignored for copy).
    pub fn generate(&self, rng: &mut TaskRng, len: usize, reps: usize) -> Result<TaskInstance> {
        match self {
            TaskConfig::Copy(c) => gen_copy(rng, len, c),
            TaskConfig::RepeatCopy(c) => gen_repeat_copy(rng, len, reps, c),
        }
    }

    /// Draws length (and repetitions) uniformly from the configured ranges.
    pub fn sample_training_instance(&self, rng: &mut TaskRng) -> Result<TaskInstance> {
        match self {
            TaskConfig::Copy(c) => {
                let len = rng.random_range(c.min_len..=c.max_len);
                gen_copy(rng, len, c)
            }
            TaskConfig::RepeatCopy(c) => {
                let len = rng.random_range(1..=c.max_len);
                let reps = rng.random_range(1..=c.max_reps);
                gen_repeat_copy(rng, len, reps, c)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::instance_rng;

    fn bools(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&b| b == 1).collect()
    }

    #[test]
    fn split_examples() {
        assert_eq!(
            vector_split(&bools(&[1, 1, 1, 1, 0, 0, 0, 0])).unwrap(),
            Split::Test
        );
        assert_eq!(
            vector_split(&bools(&[1, 0, 0, 0, 0, 0, 0, 0])).unwrap(),
            Split::Train
        );
        assert!(matches!(
            vector_split(&bools(&[1, 0, 0])),
            Err(NtmError::Config(_))
        ));
    }

    #[test]
    fn exhaustive_eight_bit_split() {
        let mut test = 0;
        for x in 0u32..256 {
            let v: Vec<bool> = (0..8).map(|i| x >> i & 1 == 1).collect();
            if vector_split(&v).unwrap() == Split::Test {
                test += 1;
            }
        }
        assert_eq!(test, 70);
    }

    #[test]
    fn copy_smallest_case() {
        let cfg = CopyConfig {
            split: Split::All,
            ..CopyConfig::default()
        };
        let inst = gen_copy(&mut instance_rng(1, 0), 1, &cfg).unwrap();
        assert_eq!(inst.input.shape(), &[3, 9]);
        assert_eq!(inst.target.shape(), &[3, 8]);
        assert_eq!(inst.mask, vec![false, false, true]);
        assert_eq!(&inst.input.row(0)[..8], inst.target.row(2));
        assert_eq!(inst.input.row(0)[8], 0.0);
        assert_eq!(inst.input.row(1), &[0., 0., 0., 0., 0., 0., 0., 0., 1.]);
        assert!(inst.input.row(2).iter().all(|&v| v == 0.0));
        assert!(inst
            .target
            .row(0)
            .iter()
            .chain(inst.target.row(1))
            .all(|&v| v == 0.0));
    }

    #[test]
    fn copy_test_split_has_half_popcount() {
        let cfg = CopyConfig {
            split: Split::Test,
            ..CopyConfig::default()
        };
        for i in 0..50 {
            let inst = gen_copy(&mut instance_rng(3, i), 12, &cfg).unwrap();
            for t in 0..12 {
                let ones = inst.input.row(t)[..8].iter().filter(|&&b| b == 1.0).count();
                assert_eq!(ones, 4);
            }
        }
    }

    #[test]
    fn copy_is_reproducible() {
        let cfg = CopyConfig::default();
        let a = gen_copy(&mut instance_rng(9, 5), 7, &cfg).unwrap();
        let b = gen_copy(&mut instance_rng(9, 5), 7, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn repeat_copy_smallest_case() {
        let cfg = RepeatCopyConfig::default();
        let inst = gen_repeat_copy(&mut instance_rng(2, 0), 1, 1, &cfg).unwrap();
        // 1 data step, 1 count step, 1 recall step, 1 end-marker step.
        assert_eq!(inst.steps(), 4);
        assert_eq!(inst.input.cols(), 8);
        assert_eq!(inst.target.cols(), 7);
        assert_eq!(&inst.input.row(0)[..6], &inst.target.row(2)[..6]);
        assert_eq!(inst.target.row(2)[6], 0.0);
        assert_eq!(inst.target.row(3), &[0., 0., 0., 0., 0., 0., 1.]);
        assert_eq!(inst.input.row(1)[6], 1.0);
        assert_eq!(inst.input.row(1)[7], 0.1);
        assert_eq!(inst.mask, vec![false, false, true, true]);
    }

    #[test]
    fn repeat_copy_extrapolated_count() {
        let cfg = RepeatCopyConfig::default();
        let inst = gen_repeat_copy(&mut instance_rng(2, 1), 10, 20, &cfg).unwrap();
        assert_eq!(inst.input.row(10)[7], 2.0);
        assert_eq!(inst.scored_steps(), 20 * 10 + 1);
        for r in 0..20 {
            for t in 0..10 {
                assert_eq!(
                    &inst.target.row(11 + r * 10 + t)[..6],
                    &inst.input.row(t)[..6]
                );
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let odd = CopyConfig {
            bits: 7,
            ..CopyConfig::default()
        };
        assert!(odd.validate().is_err());
        assert!(CopyConfig {
            bits: 7,
            split: Split::All,
            ..CopyConfig::default()
        }
        .validate()
        .is_ok());
        let rc = RepeatCopyConfig {
            rep_normalizer: 0.0,
            ..RepeatCopyConfig::default()
        };
        assert!(rc.validate().is_err());
        assert!(gen_copy(&mut instance_rng(0, 0), 0, &CopyConfig::default()).is_err());
    }

    #[test]
    fn training_lengths_cover_range() {
        let task = TaskConfig::Copy(CopyConfig::default());
        let mut seen = [0usize; 21];
        for i in 0..10_000 {
            let inst = task
                .sample_training_instance(&mut instance_rng(11, i))
                .unwrap();
            seen[(inst.steps() - 1) / 2] += 1;
        }
        assert_eq!(seen[0], 0);
        assert!(seen[1..].iter().all(|&c| c > 300), "{seen:?}");
    }

    #[test]
    fn repeat_training_support_covers_grid() {
        let task = TaskConfig::RepeatCopy(RepeatCopyConfig::default());
        let mut seen = [[false; 11]; 11];
        for i in 0..10_000 {
            let inst = task
                .sample_training_instance(&mut instance_rng(12, i))
                .unwrap();
            let len = inst
                .input
                .data()
                .chunks(8)
                .position(|r| r[6] == 1.0)
                .unwrap();
            let reps = (inst.scored_steps() - 1) / len;
            seen[len][reps] = true;
        }
        for (len, row) in seen.iter().enumerate().skip(1) {
            for (reps, hit) in row.iter().enumerate().skip(1) {
                assert!(hit, "missing ({len}, {reps})");
            }
        }
    }

    #[test]
    fn config_toml_round_trip() {
        let task = TaskConfig::RepeatCopy(RepeatCopyConfig::default());
        let text = toml::to_string(&task).unwrap();
        let back: TaskConfig = toml::from_str(&text).unwrap();
        assert_eq!(task, back);
    }
}
