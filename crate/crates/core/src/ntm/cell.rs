use super::addressing::{self, HeadControls};
use super::model::{ModelVars, NtmConfig, NtmModel, Param};
use crate::diff::{Tape, Tensor, Var};
use crate::error::{NtmError, Result};

/// Recurrent state carried between steps.
#[derive(Clone, Copy, Debug)]
pub struct NtmState {
    pub memory: Var,
    pub read_weighting: Var,
    pub write_weighting: Var,
    pub read_vector: Var,
}

/// Everything the controller emits on one step.
#[derive(Clone, Copy, Debug)]
pub struct ControllerOutput {
    pub hidden: Var,
    pub read_head: HeadControls,
    pub write_head: HeadControls,
    pub logits: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    pub state: NtmState,
    pub output: Var,
}

/// Values recorded for one unrolled step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub read_weighting: Vec<f64>,
    pub write_weighting: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Unrolled {
    /// `[T x output_channels]` output probabilities.
    pub outputs: Var,
    pub steps: Vec<StepOutput>,
}

/// The learned starting state: memory as stored, weightings as the softmax
/// of their logits.
pub fn initial_state(tape: &mut Tape, vars: &ModelVars) -> NtmState {
    let read_weighting = tape.softmax(vars.get(Param::InitReadLogits));
    let write_weighting = tape.softmax(vars.get(Param::InitWriteLogits));
    NtmState {
        memory: vars.get(Param::InitMemory),
        read_weighting,
        write_weighting,
        read_vector: vars.get(Param::InitReadVector),
    }
}

fn head_controls(tape: &mut Tape, raw: Var, cfg: &NtmConfig, writes: bool) -> Result<HeadControls> {
    let m = cfg.memory_width;
    let s = cfg.shift_width;
    let key = tape.slice(raw, 0, m)?;
    let strength = tape.slice(raw, m, 1)?;
    let strength = tape.softplus(strength);
    let gate = tape.slice(raw, m + 1, 1)?;
    let gate = tape.sigmoid(gate);
    let shift = tape.slice(raw, m + 2, s)?;
    let shift = tape.softmax(shift);
    let sharpen = tape.slice(raw, m + 2 + s, 1)?;
    let sharpen = tape.oneplus(sharpen);
    let (erase, add) = if writes {
        let base = cfg.read_head_size();
        let erase = tape.slice(raw, base, m)?;
        let erase = tape.sigmoid(erase);
        let add = tape.slice(raw, base + m, m)?;
        (Some(erase), Some(add))
    } else {
        (None, None)
    };
    Ok(HeadControls {
        key,
        strength,
        gate,
        shift,
        sharpen,
        erase,
        add,
    })
}

/// `hidden = tanh(W [x ; r_prev] + b)`, then linear projections to head
/// controls (range-limited by their activations) and output logits.
pub fn controller_forward(
    tape: &mut Tape,
    vars: &ModelVars,
    cfg: &NtmConfig,
    x: Var,
    prev_read: Var,
) -> Result<ControllerOutput> {
    let joined = tape.concat(&[x, prev_read])?;
    let pre = tape.matmul(vars.get(Param::ControllerWeight), joined)?;
    let pre = tape.add(pre, vars.get(Param::ControllerBias))?;
    let hidden = tape.tanh(pre);

    let project = |tape: &mut Tape, w: Param, b: Param| -> Result<Var> {
        let lin = tape.matmul(vars.get(w), hidden)?;
        tape.add(lin, vars.get(b))
    };
    let read_raw = project(tape, Param::ReadHeadWeight, Param::ReadHeadBias)?;
    let write_raw = project(tape, Param::WriteHeadWeight, Param::WriteHeadBias)?;
    let logits = project(tape, Param::OutputWeight, Param::OutputBias)?;

    Ok(ControllerOutput {
        hidden,
        read_head: head_controls(tape, read_raw, cfg, false)?,
        write_head: head_controls(tape, write_raw, cfg, true)?,
        logits,
    })
}

/// One step: controller, then write, then read from the updated memory.
/// The output is `sigmoid(logits)` from this step's controller pass.
pub fn ntm_step(
    tape: &mut Tape,
    vars: &ModelVars,
    cfg: &NtmConfig,
    state: &NtmState,
    x: Var,
) -> Result<StepOutput> {
    let ctrl = controller_forward(tape, vars, cfg, x, state.read_vector)?;

    let w_write = addressing::address(tape, state.memory, state.write_weighting, &ctrl.write_head)?;
    let erase = ctrl.write_head.erase.expect("write head has erase");
    let add = ctrl.write_head.add.expect("write head has add");
    let memory = addressing::write(tape, state.memory, w_write, erase, add)?;

    let w_read = addressing::address(tape, memory, state.read_weighting, &ctrl.read_head)?;
    let read_vector = addressing::read(tape, memory, w_read)?;

    let output = tape.sigmoid(ctrl.logits);
    Ok(StepOutput {
        state: NtmState {
            memory,
            read_weighting: w_read,
            write_weighting: w_write,
            read_vector,
        },
        output,
    })
}

/// Runs the machine over every row of `input` from the learned initial state.
pub fn unroll_on_tape(
    tape: &mut Tape,
    vars: &ModelVars,
    cfg: &NtmConfig,
    input: &Tensor,
) -> Result<Unrolled> {
    if input.rank() != 2 || input.cols() != cfg.input_channels {
        return Err(NtmError::dim(
            "unroll",
            format!(
                "input {:?} for {} input channels",
                input.shape(),
                cfg.input_channels
            ),
        ));
    }
    let mut state = initial_state(tape, vars);
    let mut steps = Vec::with_capacity(input.rows());
    for t in 0..input.rows() {
        let x = tape.constant(Tensor::vector(input.row(t).to_vec()));
        let step = ntm_step(tape, vars, cfg, &state, x)?;
        state = step.state;
        steps.push(step);
    }
    let rows: Vec<Var> = steps.iter().map(|s| s.output).collect();
    let outputs = tape.stack(&rows)?;
    Ok(Unrolled { outputs, steps })
}

/// Trace of an unrolled run, read back from the tape.
pub fn collect_trace(tape: &Tape, unrolled: &Unrolled) -> Vec<StepTrace> {
    unrolled
        .steps
        .iter()
        .map(|s| StepTrace {
            read_weighting: tape.value(s.state.read_weighting).data().to_vec(),
            write_weighting: tape.value(s.state.write_weighting).data().to_vec(),
            output: tape.value(s.output).data().to_vec(),
        })
        .collect()
}

/// Nodes recorded per step, used to size tapes up front.
pub(crate) const NODES_PER_STEP: usize = 64;

impl NtmModel {
    /// Forward-only unroll returning `[T x output_channels]` probabilities
    /// and the per-step trace.
    pub fn unroll(&self, input: &Tensor) -> Result<(Tensor, Vec<StepTrace>)> {
        let mut tape = Tape::with_capacity(NODES_PER_STEP * (input.rows() + 1));
        let vars = self.attach_frozen(&mut tape);
        let unrolled = unroll_on_tape(&mut tape, &vars, self.config(), input)?;
        let trace = collect_trace(&tape, &unrolled);
        Ok((tape.value(unrolled.outputs).clone(), trace))
    }

    /// Forward-only unroll returning just the output probabilities.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        self.unroll(input).map(|(out, _)| out)
    }
}
