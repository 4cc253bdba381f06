//! Python bindings for `ntm`. Tensors cross the boundary as nested lists
//! of floats.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ntm::eval::{self, EvalSpec};
use ntm::io::Checkpoint;
use ntm::rng::instance_rng;
use ntm::task::{CopyConfig, RepeatCopyConfig};
use ntm::{NtmConfig, Split, TaskConfig, Tensor, TrainConfig, Trainer};

create_exception!(ntm_py, NtmError, PyException);

fn err(e: ntm::NtmError) -> PyErr {
    match e {
        ntm::NtmError::Io { .. } => PyIOError::new_err(e.to_string()),
        other => NtmError::new_err(other.to_string()),
    }
}

fn parse_split(s: &str) -> PyResult<Split> {
    s.parse().map_err(err)
}

fn to_matrix(rows: Vec<Vec<f64>>) -> Result<Tensor, ntm::NtmError> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(ntm::NtmError::Dimension {
            op: "to_matrix",
            detail: "ragged rows".into(),
        });
    }
    Tensor::matrix(rows.len(), cols, rows.concat())
}

fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// A copy or repeat-copy task configuration.
#[pyclass(module = "ntm_py", frozen, from_py_object)]
#[derive(Clone)]
struct Task {
    inner: TaskConfig,
}

#[pymethods]
impl Task {
    #[staticmethod]
    #[pyo3(signature = (bits=8, min_len=1, max_len=20, split="train"))]
    fn copy(bits: usize, min_len: usize, max_len: usize, split: &str) -> PyResult<Self> {
        let inner = TaskConfig::Copy(CopyConfig {
            bits,
            min_len,
            max_len,
            split: parse_split(split)?,
        });
        inner.validate().map_err(err)?;
        Ok(Task { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (bits=6, max_len=10, max_reps=10, rep_normalizer=10.0, split="all"))]
    fn repeat(
        bits: usize,
        max_len: usize,
        max_reps: usize,
        rep_normalizer: f64,
        split: &str,
    ) -> PyResult<Self> {
        let inner = TaskConfig::RepeatCopy(RepeatCopyConfig {
            bits,
            max_len,
            max_reps,
            rep_normalizer,
            split: parse_split(split)?,
        });
        inner.validate().map_err(err)?;
        Ok(Task { inner })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    #[getter]
    fn bits(&self) -> usize {
        self.inner.bits()
    }

    #[getter]
    fn input_channels(&self) -> usize {
        self.inner.input_channels()
    }

    #[getter]
    fn target_channels(&self) -> usize {
        self.inner.target_channels()
    }

    /// Instance `index` of stream `seed`.
    #[pyo3(signature = (length, reps=1, seed=0, index=0, split=None))]
    fn generate(
        &self,
        length: usize,
        reps: usize,
        seed: u64,
        index: u64,
        split: Option<&str>,
    ) -> PyResult<Instance> {
        let task = match split {
            Some(s) => self.inner.with_split(parse_split(s)?),
            None => self.inner,
        };
        let inst = task
            .generate(&mut instance_rng(seed, index), length, reps)
            .map_err(err)?;
        Ok(Instance { inner: inst })
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// One task sequence: inputs, targets and the recall mask.
#[pyclass(module = "ntm_py", frozen)]
struct Instance {
    inner: ntm::TaskInstance,
}

#[pymethods]
impl Instance {
    #[getter]
    fn input(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.input)
    }

    #[getter]
    fn target(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.target)
    }

    #[getter]
    fn mask(&self) -> Vec<bool> {
        self.inner.mask.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.steps()
    }
}

#[pyclass(module = "ntm_py")]
struct Model {
    inner: ntm::NtmModel,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (input_channels, output_channels, memory_rows, memory_width, hidden, seed=0))]
    fn new(
        input_channels: usize,
        output_channels: usize,
        memory_rows: usize,
        memory_width: usize,
        hidden: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = NtmConfig::new(
            input_channels,
            output_channels,
            memory_rows,
            memory_width,
            hidden,
        );
        Ok(Model {
            inner: ntm::NtmModel::new(cfg, seed).map_err(err)?,
        })
    }

    /// Fresh model sized for `task`.
    #[staticmethod]
    #[pyo3(signature = (task, memory_rows, memory_width, hidden, seed=0))]
    fn for_task(
        task: &Task,
        memory_rows: usize,
        memory_width: usize,
        hidden: usize,
        seed: u64,
    ) -> PyResult<Self> {
        Model::new(
            task.inner.input_channels(),
            task.inner.target_channels(),
            memory_rows,
            memory_width,
            hidden,
            seed,
        )
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// `{name: (shape, flat values)}`
    fn params<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (name, t) in self.inner.named_params() {
            d.set_item(name, (t.shape().to_vec(), t.data().to_vec()))?;
        }
        Ok(d)
    }

    fn predict(&self, input: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = to_matrix(input).map_err(err)?;
        Ok(to_rows(&self.inner.predict(&x).map_err(err)?))
    }

    /// Returns `(outputs, read_weightings, write_weightings)`, one row per step.
    #[allow(clippy::type_complexity)]
    fn unroll(
        &self,
        input: Vec<Vec<f64>>,
    ) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let x = to_matrix(input).map_err(err)?;
        let (out, trace) = self.inner.unroll(&x).map_err(err)?;
        let reads = trace.iter().map(|s| s.read_weighting.clone()).collect();
        let writes = trace.iter().map(|s| s.write_weighting.clone()).collect();
        Ok((to_rows(&out), reads, writes))
    }

    /// Trains in place and returns the learning curve as
    /// `[(instances_seen, loss_bits)]`.
    #[pyo3(signature = (task, total_instances, learning_rate=1e-4, batch_size=1, clip_threshold=10.0, seed=0, report_every=1000))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        py: Python<'_>,
        task: &Task,
        total_instances: u64,
        learning_rate: f64,
        batch_size: usize,
        clip_threshold: f64,
        seed: u64,
        report_every: u64,
    ) -> PyResult<Vec<(u64, f64)>> {
        let cfg = TrainConfig {
            learning_rate,
            batch_size,
            clip_threshold,
            total_instances,
            report_every,
            seed,
            ..TrainConfig::default()
        };
        let model = self.inner.clone();
        let trainer = py
            .detach(move || -> ntm::Result<Trainer> {
                let mut t = Trainer::new(model, task.inner, cfg)?;
                t.run(|_| Ok(()))?;
                Ok(t)
            })
            .map_err(err)?;
        let curve = trainer
            .curve()
            .iter()
            .map(|p| (p.instances_seen, p.loss_bits))
            .collect();
        self.inner = trainer.model;
        Ok(curve)
    }

    fn save(&self, path: PathBuf, task: &Task) -> PyResult<()> {
        Checkpoint::from_model(&self.inner, task.inner)
            .save(&path)
            .map_err(err)
    }

    /// Loads a checkpoint, returning `(model, task)`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<(Model, Task)> {
        let ck = Checkpoint::load(&path).map_err(err)?;
        Ok((
            Model {
                inner: ck.model().map_err(err)?,
            },
            Task { inner: ck.task },
        ))
    }
}

/// Bit errors of `outputs` against `target` over the masked steps.
#[pyfunction]
fn bit_errors(outputs: Vec<Vec<f64>>, target: Vec<Vec<f64>>, mask: Vec<bool>) -> PyResult<u64> {
    let o = to_matrix(outputs).map_err(err)?;
    let t = to_matrix(target).map_err(err)?;
    eval::bit_errors(&o, &t, &mask).map_err(err)
}

#[pyfunction]
fn global_errors(per_sequence: Vec<u64>, bits_per_vector: u64) -> u64 {
    eval::global_errors(&per_sequence, bits_per_vector)
}

/// Bit-error statistics over `count` instances, as a dict.
#[pyfunction]
#[pyo3(signature = (model, task, length, count, seed=0, reps=1, split=None, workers=1))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    model: &Model,
    task: &Task,
    length: usize,
    count: u64,
    seed: u64,
    reps: usize,
    split: Option<&str>,
    workers: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let mut spec = EvalSpec::new(task.inner, length, reps);
    if let Some(s) = split {
        spec = spec.with_split(parse_split(s)?);
    }
    let net = &model.inner;
    let s = py
        .detach(|| eval::evaluate(net, &spec, count, seed, workers))
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("n_sequences", s.n_sequences)?;
    d.set_item("n_with_errors", s.n_with_errors)?;
    d.set_item("max_bit_error", s.max_bit_error)?;
    d.set_item("mean_bit_errors", s.mean_bit_errors)?;
    d.set_item("std_bit_errors", s.std_bit_errors)?;
    d.set_item("n_global_errors", s.n_global_errors)?;
    Ok(d)
}

#[pymodule]
fn ntm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NtmError", m.py().get_type::<NtmError>())?;
    m.add_class::<Task>()?;
    m.add_class::<Instance>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(bit_errors, m)?)?;
    m.add_function(wrap_pyfunction!(global_errors, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
