//! The NTM cell: a feedforward controller with one read head and one write
//! head over an `N x M` memory.

pub mod addressing;
mod cell;
mod model;

pub use addressing::{HeadControls, COSINE_EPS};
pub use cell::{
    collect_trace, controller_forward, initial_state, ntm_step, unroll_on_tape, ControllerOutput,
    NtmState, StepOutput, StepTrace, Unrolled,
};
pub use model::{ModelVars, NtmConfig, NtmModel, PARAM_COUNT, PARAM_NAMES};

impl ModelVars {
    /// Wraps leaves already on a tape, in [`PARAM_NAMES`] order.
    pub fn from_vars(vars: Vec<crate::diff::Var>) -> crate::Result<Self> {
        if vars.len() != PARAM_COUNT {
            return Err(crate::NtmError::Config(format!(
                "expected {PARAM_COUNT} parameter vars, got {}",
                vars.len()
            )));
        }
        Ok(ModelVars { vars })
    }
}
