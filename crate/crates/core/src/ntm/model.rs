use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor, Var};
use crate::error::{NtmError, Result};
use crate::rng;

/// Shape of an NTM: channel counts, memory geometry and controller width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NtmConfig {
    pub input_channels: usize,
    pub output_channels: usize,
    pub memory_rows: usize,
    pub memory_width: usize,
    pub hidden: usize,
    #[serde(default = "default_shift_width")]
    pub shift_width: usize,
}

fn default_shift_width() -> usize {
    3
}

impl NtmConfig {
    pub fn new(
        input_channels: usize,
        output_channels: usize,
        memory_rows: usize,
        memory_width: usize,
        hidden: usize,
    ) -> Self {
        NtmConfig {
            input_channels,
            output_channels,
            memory_rows,
            memory_width,
            hidden,
            shift_width: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_channels", self.input_channels),
            ("output_channels", self.output_channels),
            ("memory_rows", self.memory_rows),
            ("memory_width", self.memory_width),
            ("hidden", self.hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(NtmError::Config(format!("{name} must be positive")));
        }
        if self.shift_width.is_multiple_of(2) {
            return Err(NtmError::Config(format!(
                "shift_width must be odd, got {}",
                self.shift_width
            )));
        }
        Ok(())
    }

    /// Controls emitted for the read head: key, strength, gate, shift, sharpening.
    pub fn read_head_size(&self) -> usize {
        self.memory_width + 3 + self.shift_width
    }

    /// Read-head controls plus erase and add vectors.
    pub fn write_head_size(&self) -> usize {
        self.read_head_size() + 2 * self.memory_width
    }

    /// Shapes of every parameter tensor, in [`PARAM_NAMES`] order.
    pub fn param_shapes(&self) -> [Vec<usize>; PARAM_COUNT] {
        let (h, m, n) = (self.hidden, self.memory_width, self.memory_rows);
        [
            vec![h, self.input_channels + m],
            vec![h],
            vec![self.read_head_size(), h],
            vec![self.read_head_size()],
            vec![self.write_head_size(), h],
            vec![self.write_head_size()],
            vec![self.output_channels, h],
            vec![self.output_channels],
            vec![n, m],
            vec![n],
            vec![n],
            vec![m],
        ]
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }
}

pub const PARAM_COUNT: usize = 12;

pub const PARAM_NAMES: [&str; PARAM_COUNT] = [
    "controller.weight",
    "controller.bias",
    "read_head.weight",
    "read_head.bias",
    "write_head.weight",
    "write_head.bias",
    "output.weight",
    "output.bias",
    "init.memory",
    "init.read_logits",
    "init.write_logits",
    "init.read_vector",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(usize)]
pub(crate) enum Param {
    ControllerWeight,
    ControllerBias,
    ReadHeadWeight,
    ReadHeadBias,
    WriteHeadWeight,
    WriteHeadBias,
    OutputWeight,
    OutputBias,
    InitMemory,
    InitReadLogits,
    InitWriteLogits,
    InitReadVector,
}

/// All learnable parameters of an NTM.
#[derive(Clone, Debug, PartialEq)]
pub struct NtmModel {
    config: NtmConfig,
    params: Vec<Tensor>,
}

/// Parameters pushed onto a tape as leaves.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub(crate) vars: Vec<Var>,
}

impl ModelVars {
    pub(crate) fn get(&self, p: Param) -> Var {
        self.vars[p as usize]
    }

    pub fn all(&self) -> &[Var] {
        &self.vars
    }
}

/// Logit given to location 0 of the initial weightings so both heads start
/// focused near one end of memory.
const INITIAL_FOCUS_LOGIT: f64 = 4.0;

impl NtmModel {
    /// Fresh model with Glorot-uniform weights, zero biases, a small random
    /// initial memory and initial weightings focused on location 0.
    pub fn new(config: NtmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(seed);
        let shapes = config.param_shapes();
        let mut params = Vec::with_capacity(PARAM_COUNT);
        for (i, shape) in shapes.iter().enumerate() {
            let mut t = Tensor::zeros(shape);
            match i {
                i if i == Param::ControllerWeight as usize
                    || i == Param::ReadHeadWeight as usize
                    || i == Param::WriteHeadWeight as usize
                    || i == Param::OutputWeight as usize =>
                {
                    let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    t.data_mut()
                        .iter_mut()
                        .for_each(|v| *v = rng.random_range(-bound..bound));
                }
                i if i == Param::InitMemory as usize => {
                    let bound = 1.0 / ((shape[0] + shape[1]) as f64).sqrt();
                    t.data_mut()
                        .iter_mut()
                        .for_each(|v| *v = rng.random_range(-bound..bound));
                }
                i if i == Param::InitReadLogits as usize
                    || i == Param::InitWriteLogits as usize =>
                {
                    t.data_mut()[0] = INITIAL_FOCUS_LOGIT;
                }
                _ => {}
            }
            params.push(t);
        }
        Ok(NtmModel { config, params })
    }

    /// Builds a model from tensors in [`PARAM_NAMES`] order, checking shapes.
    pub fn from_params(config: NtmConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if params.len() != PARAM_COUNT {
            return Err(NtmError::Config(format!(
                "expected {PARAM_COUNT} parameter tensors, got {}",
                params.len()
            )));
        }
        for ((p, want), name) in params.iter().zip(&shapes).zip(PARAM_NAMES) {
            if p.shape() != want.as_slice() {
                return Err(NtmError::dim(
                    "from_params",
                    format!("{name}: expected {want:?}, got {:?}", p.shape()),
                ));
            }
        }
        Ok(NtmModel { config, params })
    }

    pub fn config(&self) -> &NtmConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        PARAM_NAMES.iter().copied().zip(&self.params)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Pushes every parameter onto `tape` as a differentiable leaf.
    pub fn attach(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            vars: self.params.iter().map(|p| tape.leaf(p.clone())).collect(),
        }
    }

    /// Pushes parameters as constants, for forward-only evaluation.
    pub fn attach_frozen(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            vars: self
                .params
                .iter()
                .map(|p| tape.constant(p.clone()))
                .collect(),
        }
    }
}
