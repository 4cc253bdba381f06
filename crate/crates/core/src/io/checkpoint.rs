//! `NTMCKPT1` binary checkpoints.
//!
//! All integers and floats are little-endian; strings are a `u32` byte
//! length followed by UTF-8.
//!
//! ```text
//! magic            8 bytes  "NTMCKPT1"
//! version          u32      1
//! task kind        string   "copy" | "repeat"
//! task params      u32 bits, u32 min_len, u32 max_len, u32 max_reps,
//!                  f64 rep_normalizer, u8 split (0 train, 1 test, 2 all)
//! model config     u32 input_ch, output_ch, memory_rows, memory_width,
//!                  hidden, shift_width
//! arrays           u32 count, then per array:
//!                  string name, u32 rank, u32 dims[rank], f64 data[prod(dims)]
//! optimizer        u8 present; if 1: string kind, u32 n, f64 hyper[n],
//!                  u64 steps, arrays (same layout as above)
//! progress         u8 present; if 1: u64 seed, u64 instances_seen,
//!                  f64 window_bits, u64 window_count,
//!                  u32 points, (u64 instances_seen, f64 loss_bits)[points]
//! ```

use std::path::Path;

use crate::diff::Tensor;
use crate::error::{NtmError, Result};
use crate::ntm::{NtmConfig, NtmModel, PARAM_NAMES};
use crate::task::{CopyConfig, RepeatCopyConfig, Split, TaskConfig};
use crate::train::{CurvePoint, OptimizerKind, OptimizerState, Progress, TrainConfig, Trainer};

pub const MAGIC: &[u8; 8] = b"NTMCKPT1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSnapshot {
    pub kind: OptimizerKind,
    pub steps: u64,
    pub buffers: Vec<NamedArray>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProgressSnapshot {
    pub seed: u64,
    pub progress: Progress,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub task: TaskConfig,
    pub model_config: NtmConfig,
    pub arrays: Vec<NamedArray>,
    pub optimizer: Option<OptimizerSnapshot>,
    pub progress: Option<ProgressSnapshot>,
}

fn named(tensors: &[Tensor]) -> Vec<NamedArray> {
    PARAM_NAMES
        .iter()
        .zip(tensors)
        .map(|(n, t)| NamedArray {
            name: n.to_string(),
            tensor: t.clone(),
        })
        .collect()
}

fn ordered(arrays: &[NamedArray], section: &str) -> Result<Vec<Tensor>> {
    if arrays.len() != PARAM_NAMES.len() {
        return Err(NtmError::checkpoint(
            format!("{section}.count"),
            format!(
                "expected {} arrays, found {}",
                PARAM_NAMES.len(),
                arrays.len()
            ),
        ));
    }
    PARAM_NAMES
        .iter()
        .map(|&want| {
            arrays
                .iter()
                .find(|a| a.name == want)
                .map(|a| a.tensor.clone())
                .ok_or_else(|| NtmError::checkpoint(format!("{section}.{want}"), "missing array"))
        })
        .collect()
}

impl Checkpoint {
    pub fn from_model(model: &NtmModel, task: TaskConfig) -> Self {
        Checkpoint {
            task,
            model_config: *model.config(),
            arrays: named(model.params()),
            optimizer: None,
            progress: None,
        }
    }

    pub fn from_trainer(trainer: &Trainer) -> Self {
        let mut ck = Checkpoint::from_model(&trainer.model, trainer.task);
        ck.optimizer = Some(OptimizerSnapshot {
            kind: trainer.optimizer.kind,
            steps: trainer.optimizer.steps,
            buffers: named(&trainer.optimizer.buffers),
        });
        ck.progress = Some(ProgressSnapshot {
            seed: trainer.config.seed,
            progress: trainer.progress.clone(),
        });
        ck
    }

    pub fn model(&self) -> Result<NtmModel> {
        let params = ordered(&self.arrays, "arrays")?;
        NtmModel::from_params(self.model_config, params)
            .map_err(|e| NtmError::checkpoint("arrays", e.to_string()))
    }

    /// Rebuilds a trainer. The stored optimizer state and progress are used
    /// when present; the optimizer kind and seed must agree with `config`.
    pub fn trainer(&self, config: TrainConfig) -> Result<Trainer> {
        let model = self.model()?;
        let optimizer = match &self.optimizer {
            Some(snap) => {
                if snap.kind != config.optimizer {
                    return Err(NtmError::checkpoint(
                        "optimizer.kind",
                        format!(
                            "checkpoint has {:?}, config asks for {:?}",
                            snap.kind, config.optimizer
                        ),
                    ));
                }
                let buffers = ordered(&snap.buffers, "optimizer")?;
                for ((b, p), name) in buffers.iter().zip(model.params()).zip(PARAM_NAMES) {
                    if b.shape() != p.shape() {
                        return Err(NtmError::checkpoint(
                            format!("optimizer.{name}"),
                            "shape mismatch",
                        ));
                    }
                }
                OptimizerState {
                    kind: snap.kind,
                    buffers,
                    steps: snap.steps,
                }
            }
            None => OptimizerState::new(config.optimizer, &model),
        };
        let progress = match &self.progress {
            Some(p) if p.seed != config.seed => {
                return Err(NtmError::checkpoint(
                    "progress.seed",
                    format!(
                        "checkpoint seed {} differs from config seed {}",
                        p.seed, config.seed
                    ),
                ))
            }
            Some(p) => p.progress.clone(),
            None => Progress::default(),
        };
        Trainer::resume(model, self.task, config, optimizer, progress)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        write_task(&mut w, &self.task);
        let c = &self.model_config;
        for v in [
            c.input_channels,
            c.output_channels,
            c.memory_rows,
            c.memory_width,
            c.hidden,
            c.shift_width,
        ] {
            w.u32(v as u32);
        }
        w.arrays(&self.arrays);
        match &self.optimizer {
            None => w.u8(0),
            Some(o) => {
                w.u8(1);
                w.string(o.kind.name());
                let hyper = o.kind.hyperparameters();
                w.u32(hyper.len() as u32);
                hyper.iter().for_each(|&h| w.f64(h));
                w.u64(o.steps);
                w.arrays(&o.buffers);
            }
        }
        match &self.progress {
            None => w.u8(0),
            Some(p) => {
                w.u8(1);
                w.u64(p.seed);
                w.u64(p.progress.instances_seen);
                w.f64(p.progress.window_bits);
                w.u64(p.progress.window_count);
                w.u32(p.progress.curve.len() as u32);
                for pt in &p.progress.curve {
                    w.u64(pt.instances_seen);
                    w.f64(pt.loss_bits);
                }
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != MAGIC {
            return Err(NtmError::checkpoint("magic", "not an NTMCKPT1 file"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(NtmError::checkpoint(
                "version",
                format!("unsupported version {version}, expected {VERSION}"),
            ));
        }
        let task = read_task(&mut r)?;
        let model_config = NtmConfig {
            input_channels: r.dim("config.input_channels")?,
            output_channels: r.dim("config.output_channels")?,
            memory_rows: r.dim("config.memory_rows")?,
            memory_width: r.dim("config.memory_width")?,
            hidden: r.dim("config.hidden")?,
            shift_width: r.dim("config.shift_width")?,
        };
        model_config
            .validate()
            .map_err(|e| NtmError::checkpoint("config", e.to_string()))?;
        let arrays = r.arrays("arrays")?;

        let optimizer = match r.u8("optimizer.present")? {
            0 => None,
            1 => {
                let name = r.string("optimizer.kind")?;
                let n = r.u32("optimizer.hyper_count")? as usize;
                let hyper = (0..n)
                    .map(|_| r.f64("optimizer.hyper"))
                    .collect::<Result<Vec<_>>>()?;
                let kind = OptimizerKind::from_parts(&name, &hyper)
                    .map_err(|e| NtmError::checkpoint("optimizer.kind", e.to_string()))?;
                let steps = r.u64("optimizer.steps")?;
                let buffers = r.arrays("optimizer.buffers")?;
                Some(OptimizerSnapshot {
                    kind,
                    steps,
                    buffers,
                })
            }
            other => {
                return Err(NtmError::checkpoint(
                    "optimizer.present",
                    format!("bad flag {other}"),
                ))
            }
        };

        let progress = match r.u8("progress.present")? {
            0 => None,
            1 => {
                let seed = r.u64("progress.seed")?;
                let instances_seen = r.u64("progress.instances_seen")?;
                let window_bits = r.f64("progress.window_bits")?;
                let window_count = r.u64("progress.window_count")?;
                let n = r.u32("progress.points")? as usize;
                let mut curve = Vec::with_capacity(n.min(1 << 20));
                for _ in 0..n {
                    curve.push(CurvePoint {
                        instances_seen: r.u64("progress.curve")?,
                        loss_bits: r.f64("progress.curve")?,
                    });
                }
                Some(ProgressSnapshot {
                    seed,
                    progress: Progress {
                        instances_seen,
                        window_bits,
                        window_count,
                        curve,
                    },
                })
            }
            other => {
                return Err(NtmError::checkpoint(
                    "progress.present",
                    format!("bad flag {other}"),
                ))
            }
        };

        if r.pos != bytes.len() {
            return Err(NtmError::checkpoint(
                "trailer",
                format!("{} unexpected trailing bytes", bytes.len() - r.pos),
            ));
        }
        Ok(Checkpoint {
            task,
            model_config,
            arrays,
            optimizer,
            progress,
        })
    }

    /// Writes to a sibling temporary file first so a crash never leaves a
    /// truncated checkpoint at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| NtmError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| NtmError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| NtmError::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(model: &NtmModel, task: TaskConfig, path: &Path) -> Result<()> {
    Checkpoint::from_model(model, task).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<(NtmModel, TaskConfig)> {
    let ck = Checkpoint::load(path)?;
    Ok((ck.model()?, ck.task))
}

fn split_code(s: Split) -> u8 {
    match s {
        Split::Train => 0,
        Split::Test => 1,
        Split::All => 2,
    }
}

fn write_task(w: &mut Writer, task: &TaskConfig) {
    w.string(task.name());
    let (bits, min_len, max_len, max_reps, norm, split) = match task {
        TaskConfig::Copy(c) => (c.bits, c.min_len, c.max_len, 0, 1.0, c.split),
        TaskConfig::RepeatCopy(c) => (c.bits, 1, c.max_len, c.max_reps, c.rep_normalizer, c.split),
    };
    for v in [bits, min_len, max_len, max_reps] {
        w.u32(v as u32);
    }
    w.f64(norm);
    w.u8(split_code(split));
}

fn read_task(r: &mut Reader) -> Result<TaskConfig> {
    let kind = r.string("task.kind")?;
    let bits = r.u32("task.bits")? as usize;
    let min_len = r.u32("task.min_len")? as usize;
    let max_len = r.u32("task.max_len")? as usize;
    let max_reps = r.u32("task.max_reps")? as usize;
    let rep_normalizer = r.f64("task.rep_normalizer")?;
    let split = match r.u8("task.split")? {
        0 => Split::Train,
        1 => Split::Test,
        2 => Split::All,
        other => {
            return Err(NtmError::checkpoint(
                "task.split",
                format!("bad split code {other}"),
            ))
        }
    };
    let task = match kind.as_str() {
        "copy" => TaskConfig::Copy(CopyConfig {
            bits,
            min_len,
            max_len,
            split,
        }),
        "repeat" => TaskConfig::RepeatCopy(RepeatCopyConfig {
            bits,
            max_len,
            max_reps,
            rep_normalizer,
            split,
        }),
        other => {
            return Err(NtmError::checkpoint(
                "task.kind",
                format!("unknown task `{other}`"),
            ))
        }
    };
    task.validate()
        .map_err(|e| NtmError::checkpoint("task", e.to_string()))?;
    Ok(task)
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }
    fn arrays(&mut self, arrays: &[NamedArray]) {
        self.u32(arrays.len() as u32);
        for a in arrays {
            self.string(&a.name);
            self.u32(a.tensor.rank() as u32);
            for &d in a.tensor.shape() {
                self.u32(d as u32);
            }
            for &v in a.tensor.data() {
                self.f64(v);
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                NtmError::checkpoint(
                    field,
                    format!("truncated: needed {n} bytes at offset {}", self.pos),
                )
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }
    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
    fn f64(&mut self, field: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
    fn dim(&mut self, field: &str) -> Result<usize> {
        Ok(self.u32(field)? as usize)
    }
    fn string(&mut self, field: &str) -> Result<String> {
        let n = self.u32(field)? as usize;
        let raw = self.take(n, field)?;
        String::from_utf8(raw.to_vec()).map_err(|_| NtmError::checkpoint(field, "invalid UTF-8"))
    }
    fn arrays(&mut self, section: &str) -> Result<Vec<NamedArray>> {
        let count = self.u32(&format!("{section}.count"))? as usize;
        let mut out = Vec::with_capacity(count.min(1024));
        for i in 0..count {
            let name = self.string(&format!("{section}[{i}].name"))?;
            let field = format!("{section}.{name}");
            let rank = self.u32(&format!("{field}.rank"))? as usize;
            let shape = (0..rank)
                .map(|_| self.dim(&format!("{field}.dims")))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| NtmError::checkpoint(&field, "dimension overflow"))?;
            let raw = self.take(n.saturating_mul(8), &format!("{field}.data"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor = Tensor::new(shape, data)
                .map_err(|e| NtmError::checkpoint(&field, e.to_string()))?;
            out.push(NamedArray { name, tensor });
        }
        Ok(out)
    }
}
