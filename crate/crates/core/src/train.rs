//! Backpropagation through time with global-norm clipping and RMSProp or
//! momentum updates.

use serde::{Deserialize, Serialize};

use crate::diff::{binary_cross_entropy, Tape, Tensor};
use crate::error::{NtmError, Result};
use crate::ntm::{unroll_on_tape, NtmModel};
use crate::rng::instance_rng;
use crate::task::{TaskConfig, TaskInstance};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerKind {
    /// `c = decay c + (1 - decay) g^2`, `p -= lr g / (sqrt(c) + epsilon)`
    RmsProp { decay: f64, epsilon: f64 },
    /// `v = momentum v - lr g`, `p += v`
    Momentum { momentum: f64 },
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::RmsProp { .. } => "rmsprop",
            OptimizerKind::Momentum { .. } => "momentum",
        }
    }

    pub fn hyperparameters(&self) -> Vec<f64> {
        match *self {
            OptimizerKind::RmsProp { decay, epsilon } => vec![decay, epsilon],
            OptimizerKind::Momentum { momentum } => vec![momentum],
        }
    }

    pub fn from_parts(name: &str, hyper: &[f64]) -> Result<Self> {
        match (name, hyper) {
            ("rmsprop", [decay, epsilon]) => Ok(OptimizerKind::RmsProp {
                decay: *decay,
                epsilon: *epsilon,
            }),
            ("momentum", [momentum]) => Ok(OptimizerKind::Momentum {
                momentum: *momentum,
            }),
            _ => Err(NtmError::Config(format!(
                "unknown optimizer `{name}` with {} hyperparameters",
                hyper.len()
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Global L2 gradient-norm threshold.
    pub clip_threshold: f64,
    pub batch_size: usize,
    pub total_instances: u64,
    pub report_every: u64,
    pub seed: u64,
    pub checkpoint_every: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            optimizer: OptimizerKind::RmsProp {
                decay: 0.95,
                epsilon: 1e-4,
            },
            clip_threshold: 10.0,
            batch_size: 1,
            total_instances: 100_000,
            report_every: 1000,
            seed: 0,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) {
            return Err(NtmError::Config(
                "learning_rate must be non-negative".into(),
            ));
        }
        if !(self.clip_threshold > 0.0) {
            return Err(NtmError::Config("clip_threshold must be positive".into()));
        }
        if self.batch_size == 0 || self.report_every == 0 {
            return Err(NtmError::Config(
                "batch_size and report_every must be positive".into(),
            ));
        }
        if self.checkpoint_every == Some(0) {
            return Err(NtmError::Config("checkpoint_every must be positive".into()));
        }
        Ok(())
    }
}

/// Summed binary cross-entropy over the masked steps, in nats.
pub fn sequence_loss(outputs: &Tensor, target: &Tensor, mask: &[bool]) -> Result<f64> {
    binary_cross_entropy(outputs, target, mask)
}

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

/// Scales every gradient by `threshold / norm` when the global L2 norm
/// exceeds `threshold`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], threshold: f64) -> f64 {
    let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > threshold {
        let scale = threshold / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub buffers: Vec<Tensor>,
    pub steps: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, model: &NtmModel) -> Self {
        OptimizerState {
            kind,
            buffers: model.params().iter().map(Tensor::zeros_like).collect(),
            steps: 0,
        }
    }

    pub fn apply(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        for ((p, g), buf) in params.iter_mut().zip(grads).zip(self.buffers.iter_mut()) {
            let it = p.data_mut().iter_mut().zip(g.data()).zip(buf.data_mut());
            match self.kind {
                OptimizerKind::RmsProp { decay, epsilon } => {
                    for ((p, &g), c) in it {
                        *c = decay * *c + (1.0 - decay) * g * g;
                        *p -= lr * g / (c.sqrt() + epsilon);
                    }
                }
                OptimizerKind::Momentum { momentum } => {
                    for ((p, &g), v) in it {
                        *v = momentum * *v - lr * g;
                        *p += *v;
                    }
                }
            }
        }
        self.steps += 1;
    }
}

/// Loss and gradient of one instance through a full unroll.
pub fn instance_gradient(model: &NtmModel, inst: &TaskInstance) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::with_capacity(64 * (inst.steps() + 1));
    let vars = model.attach(&mut tape);
    let unrolled = unroll_on_tape(&mut tape, &vars, model.config(), &inst.input)?;
    let loss = tape.binary_cross_entropy(unrolled.outputs, &inst.target, &inst.mask)?;
    let value = tape.scalar_value(loss);
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    let grads = tape.backward(loss)?;
    Ok((value, vars.all().iter().map(|&v| grads.wrt(v)).collect()))
}

/// Forward-only mean loss (nats) over a batch.
pub fn batch_loss(model: &NtmModel, batch: &[TaskInstance]) -> Result<f64> {
    let mut total = 0.0;
    for inst in batch {
        let out = model.predict(&inst.input)?;
        total += sequence_loss(&out, &inst.target, &inst.mask)?;
    }
    Ok(total / batch.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Mean loss over the batch, nats.
    pub loss: f64,
    /// Per-instance loss in bits.
    pub instance_bits: Vec<f64>,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// One optimizer update on the mean loss of `batch`.
pub fn train_step(
    model: &mut NtmModel,
    batch: &[TaskInstance],
    cfg: &TrainConfig,
    opt: &mut OptimizerState,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(NtmError::Contract(
            "train_step needs a non-empty batch".into(),
        ));
    }
    let mut sum: Vec<Tensor> = model.params().iter().map(Tensor::zeros_like).collect();
    let mut instance_bits = Vec::with_capacity(batch.len());
    let mut total = 0.0;
    for (i, inst) in batch.iter().enumerate() {
        let (loss, grads) = instance_gradient(model, inst)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(NtmError::NonFiniteLoss {
                step: opt.steps,
                instance: i as u64,
            });
        }
        total += loss;
        instance_bits.push(nats_to_bits(loss));
        for (s, g) in sum.iter_mut().zip(&grads) {
            s.data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, b)| *a += b);
        }
    }
    let inv = 1.0 / batch.len() as f64;
    sum.iter_mut()
        .for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= inv));
    let grad_norm = clip_gradients(&mut sum, cfg.clip_threshold);
    opt.apply(model.params_mut(), &sum, cfg.learning_rate);
    let loss = total / batch.len() as f64;
    Ok(StepReport {
        loss,
        instance_bits,
        grad_norm,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub instances_seen: u64,
    /// Mean loss per sequence over the reporting window, in bits.
    pub loss_bits: f64,
}

/// Position in a training run; enough to resume it exactly.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Progress {
    pub instances_seen: u64,
    pub window_bits: f64,
    pub window_count: u64,
    pub curve: Vec<CurvePoint>,
}

/// Owns a model and its optimizer for the length of a training run.
/// Instance `i` of the run is drawn from stream `(seed, i)`.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: NtmModel,
    pub task: TaskConfig,
    pub config: TrainConfig,
    pub optimizer: OptimizerState,
    pub progress: Progress,
}

impl Trainer {
    pub fn new(model: NtmModel, task: TaskConfig, config: TrainConfig) -> Result<Self> {
        let optimizer = OptimizerState::new(config.optimizer, &model);
        Trainer::resume(model, task, config, optimizer, Progress::default())
    }

    pub fn resume(
        model: NtmModel,
        task: TaskConfig,
        config: TrainConfig,
        optimizer: OptimizerState,
        progress: Progress,
    ) -> Result<Self> {
        config.validate()?;
        task.validate()?;
        let mc = model.config();
        if mc.input_channels != task.input_channels()
            || mc.output_channels != task.target_channels()
        {
            return Err(NtmError::Config(format!(
                "model has {}/{} channels, task `{}` needs {}/{}",
                mc.input_channels,
                mc.output_channels,
                task.name(),
                task.input_channels(),
                task.target_channels()
            )));
        }
        if optimizer.buffers.len() != model.params().len() {
            return Err(NtmError::Config(
                "optimizer state does not match model".into(),
            ));
        }
        Ok(Trainer {
            model,
            task,
            config,
            optimizer,
            progress,
        })
    }

    /// The next batch of training instances, without consuming it.
    pub fn next_batch(&self) -> Result<Vec<TaskInstance>> {
        let start = self.progress.instances_seen;
        (0..self.config.batch_size as u64)
            .map(|j| {
                let mut rng = instance_rng(self.config.seed, start + j);
                self.task.sample_training_instance(&mut rng)
            })
            .collect()
    }

    pub fn step(&mut self) -> Result<StepReport> {
        let batch = self.next_batch()?;
        let first = self.progress.instances_seen;
        let report = train_step(&mut self.model, &batch, &self.config, &mut self.optimizer)
            .map_err(|e| match e {
                NtmError::NonFiniteLoss { step, instance } => NtmError::NonFiniteLoss {
                    step,
                    instance: first + instance,
                },
                other => other,
            })?;

        let p = &mut self.progress;
        let before = p.instances_seen;
        p.instances_seen += batch.len() as u64;
        p.window_bits += report.instance_bits.iter().sum::<f64>();
        p.window_count += batch.len() as u64;
        let every = self.config.report_every;
        if p.instances_seen / every > before / every {
            p.curve.push(CurvePoint {
                instances_seen: p.instances_seen,
                loss_bits: p.window_bits / p.window_count as f64,
            });
            p.window_bits = 0.0;
            p.window_count = 0;
        }
        Ok(report)
    }

    pub fn finished(&self) -> bool {
        self.progress.instances_seen >= self.config.total_instances
    }

    /// Trains until `total_instances` have been seen, calling `checkpoint`
    /// whenever `checkpoint_every` instances have passed.
    pub fn run<F>(&mut self, mut checkpoint: F) -> Result<()>
    where
        F: FnMut(&Trainer) -> Result<()>,
    {
        while !self.finished() {
            let before = self.progress.instances_seen;
            self.step()?;
            if let Some(every) = self.config.checkpoint_every {
                if self.progress.instances_seen / every > before / every {
                    checkpoint(self)?;
                }
            }
        }
        Ok(())
    }

    pub fn curve(&self) -> &[CurvePoint] {
        &self.progress.curve
    }
}

/// Builds a fresh model and trains it to completion.
pub fn train_loop(
    model_config: crate::ntm::NtmConfig,
    model_seed: u64,
    task: TaskConfig,
    config: TrainConfig,
) -> Result<(NtmModel, Vec<CurvePoint>)> {
    let model = NtmModel::new(model_config, model_seed)?;
    let mut trainer = Trainer::new(model, task, config)?;
    trainer.run(|_| Ok(()))?;
    Ok((trainer.model, trainer.progress.curve))
}
