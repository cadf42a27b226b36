//! Python bindings: synthetic data, the model and checkpoints, gated
//! pooling, text metrics, cost estimates, and the command-line pipeline.

use std::collections::BTreeMap;
use std::path::PathBuf;

use mvfuse_core::cost::{self, GbUnit, SeqLens};
use mvfuse_core::data::{gen_synthetic as synth, load_image};
use mvfuse_core::fusion::{fuse as fuse_views, GatedPoolParams};
use mvfuse_core::lm::{quantize_int8 as quantize, ModelSpec, Tokenizer as CoreTokenizer};
use mvfuse_core::metrics::{self, EvalPair, MetricOptions, TextRecord};
use mvfuse_core::model::Model as CoreModel;
use mvfuse_core::rng::SeededRng;
use mvfuse_core::tensor::Tensor;
use mvfuse_core::train::Checkpoint as CoreCheckpoint;
use mvfuse_core::Error;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;

create_exception!(mvfuse, MvfuseError, PyException);

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Io { .. } => PyOSError::new_err(msg),
        Error::Config(_) | Error::Dimension { .. } | Error::Empty(_) => PyValueError::new_err(msg),
        _ => MvfuseError::new_err(msg),
    }
}

fn ok<T>(r: mvfuse_core::Result<T>) -> PyResult<T> {
    r.map_err(py_err)
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    ok(Tensor::from_rows(rows))
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

#[pyclass(name = "Tokenizer", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTokenizer(CoreTokenizer);

#[pymethods]
impl PyTokenizer {
    /// Vocabulary of every word in `corpus`.
    #[staticmethod]
    fn build(corpus: Vec<String>) -> Self {
        Self(CoreTokenizer::build(corpus.iter().map(String::as_str)))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ok(CoreTokenizer::load(&path)).map(Self)
    }

    fn tokenize(&self, text: &str) -> Vec<usize> {
        self.0.tokenize(text)
    }

    fn detokenize(&self, ids: Vec<usize>) -> String {
        self.0.detokenize(&ids)
    }

    fn words(&self) -> Vec<String> {
        self.0.words().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "Model")]
struct PyModel(CoreModel);

#[pymethods]
impl PyModel {
    /// Desk-scale model. `spec_json` overrides any architecture field.
    #[new]
    #[pyo3(signature = (vocab_size, seed = 7, spec_json = None))]
    fn new(vocab_size: usize, seed: u64, spec_json: Option<&str>) -> PyResult<Self> {
        let mut spec = match spec_json {
            Some(s) => serde_json::from_str::<ModelSpec>(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => ModelSpec::desk(vocab_size),
        };
        spec.vocab_size = vocab_size;
        ok(CoreModel::new(&spec, seed)).map(Self)
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.0.num_params()
    }

    fn spec_json(&self) -> String {
        serde_json::to_string(&self.0.spec).expect("spec serializes")
    }

    fn param_names(&self) -> Vec<String> {
        self.0.named_params().into_iter().map(|(n, ..)| n).collect()
    }

    /// `N × M` view embeddings for one image per camera.
    fn view_embeddings(&self, image_paths: Vec<PathBuf>) -> PyResult<Vec<Vec<f64>>> {
        let images = image_paths
            .iter()
            .map(|p| load_image(p))
            .collect::<mvfuse_core::Result<Vec<_>>>();
        Ok(rows(&ok(self.0.view_embeddings(&ok(images)?))?))
    }

    fn view_weights(&self, views: Vec<Vec<f64>>, question: Vec<usize>) -> PyResult<Vec<f64>> {
        ok(self.0.view_weights(&matrix(&views)?, &question))
    }

    #[pyo3(signature = (views, question, max_len = 32))]
    fn generate(
        &self,
        py: Python<'_>,
        views: Vec<Vec<f64>>,
        question: Vec<usize>,
        max_len: usize,
    ) -> PyResult<Vec<usize>> {
        let views = matrix(&views)?;
        py.detach(|| ok(self.0.generate(&views, &question, max_len)))
    }

    /// Adapters on every attention query and value projection.
    #[pyo3(signature = (rank, alpha, seed = 0))]
    fn attach_lora(&mut self, rank: usize, alpha: f64, seed: u64) -> PyResult<()> {
        let targets = self.0.lm.default_lora_targets();
        ok(self.0.lm.attach_lora(&targets, rank, alpha, &mut SeededRng::new(seed)))
    }

    fn merge_lora(&mut self) -> PyResult<()> {
        ok(self.0.lm.merge_lora())
    }

    fn quantize(&mut self) -> PyResult<()> {
        ok(self.0.lm.quantize())
    }
}

#[pyclass(name = "Checkpoint")]
struct PyCheckpoint(CoreCheckpoint);

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ok(CoreCheckpoint::load(&path)).map(Self)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        ok(self.0.save(&path))
    }

    #[getter]
    fn stage(&self) -> u8 {
        self.0.state.stage
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.0.state.epoch
    }

    /// `(stage, epoch, mean_loss, lr)` per finished epoch.
    #[getter]
    fn losses(&self) -> Vec<(u8, usize, f64, f64)> {
        self.0
            .state
            .losses
            .iter()
            .map(|r| (r.stage, r.epoch, r.mean_loss, r.lr))
            .collect()
    }

    fn tokenizer(&self) -> PyTokenizer {
        PyTokenizer(self.0.vocab.clone())
    }

    fn model(&self) -> PyModel {
        PyModel(self.0.model.clone())
    }

    /// Greedy answer to `question` about one image per camera, in canonical order.
    #[pyo3(signature = (image_paths, question, max_len = None))]
    fn answer(
        &self,
        py: Python<'_>,
        image_paths: Vec<PathBuf>,
        question: &str,
        max_len: Option<usize>,
    ) -> PyResult<String> {
        let ck = &self.0;
        py.detach(|| {
            let images = image_paths
                .iter()
                .map(|p| load_image(p))
                .collect::<mvfuse_core::Result<Vec<_>>>();
            let views = ok(ck.model.view_embeddings(&ok(images)?))?;
            let ex = ck.model.example(&ck.vocab, String::new(), views, question, "");
            let ids = ok(ck
                .model
                .generate(&ex.views, &ex.question, max_len.unwrap_or(ck.train.max_answer_len)))?;
            Ok(ck.vocab.detokenize(&ids))
        })
    }
}

/// Writes a synthetic multi-camera dataset under `out`.
#[pyfunction]
#[pyo3(signature = (out, scenes, frames = 1, seed = 7))]
fn gen_synthetic(out: PathBuf, scenes: usize, frames: usize, seed: u64) -> PyResult<BTreeMap<&'static str, usize>> {
    let s = ok(synth(&out, scenes, frames, seed))?;
    Ok(BTreeMap::from([
        ("scenes", s.scenes),
        ("frames", s.frames),
        ("samples", s.samples),
        ("images", s.images),
    ]))
}

/// Gated attention pooling. Returns the view weights and the pooled view.
#[pyfunction]
fn fuse(views: Vec<Vec<f64>>, w: Vec<f64>, z: Vec<Vec<f64>>, g: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let p = ok(GatedPoolParams::from_parts(
        ok(Tensor::vector(w))?,
        matrix(&z)?,
        matrix(&g)?,
    ))?;
    let views = views
        .into_iter()
        .map(Tensor::vector)
        .collect::<mvfuse_core::Result<Vec<_>>>();
    let out = ok(fuse_views(&ok(views)?, &p))?;
    Ok((out.alpha, out.fused.into_data()))
}

/// Symmetric int8 codes and the per-tensor scale.
#[pyfunction]
fn quantize_int8(weight: Vec<Vec<f64>>) -> PyResult<(Vec<i8>, f64)> {
    let q = ok(quantize(&matrix(&weight)?, None))?;
    Ok((q.values, q.scale))
}

fn corpus(candidates: &[String], references: &[Vec<String>]) -> PyResult<Vec<EvalPair>> {
    if candidates.len() != references.len() {
        return Err(PyValueError::new_err(format!(
            "{} candidates but {} reference lists",
            candidates.len(),
            references.len()
        )));
    }
    Ok(candidates
        .iter()
        .zip(references)
        .enumerate()
        .map(|(i, (c, r))| {
            let refs: Vec<&str> = r.iter().map(String::as_str).collect();
            EvalPair::from_text(i.to_string(), c, &refs)
        })
        .collect())
}

#[pyfunction]
#[pyo3(signature = (candidates, references, smoothing = false))]
fn bleu4(candidates: Vec<String>, references: Vec<Vec<String>>, smoothing: bool) -> PyResult<f64> {
    Ok(metrics::bleu4(&corpus(&candidates, &references)?, smoothing))
}

#[pyfunction]
fn rouge_l(candidates: Vec<String>, references: Vec<Vec<String>>) -> PyResult<f64> {
    Ok(metrics::rouge_l(&corpus(&candidates, &references)?))
}

#[pyfunction]
#[pyo3(signature = (candidates, references, stem = false))]
fn meteor(candidates: Vec<String>, references: Vec<Vec<String>>, stem: bool) -> PyResult<f64> {
    Ok(metrics::meteor(&corpus(&candidates, &references)?, stem))
}

#[pyfunction]
fn cider(candidates: Vec<String>, references: Vec<Vec<String>>) -> PyResult<f64> {
    ok(metrics::cider(&corpus(&candidates, &references)?))
}

/// Corpus scores for predictions keyed by id against references keyed by id.
#[pyfunction]
#[pyo3(signature = (predictions, references, smoothing = false, stem = false))]
fn evaluate(
    predictions: BTreeMap<String, String>,
    references: BTreeMap<String, Vec<String>>,
    smoothing: bool,
    stem: bool,
) -> PyResult<BTreeMap<&'static str, f64>> {
    let preds: Vec<TextRecord> = predictions
        .into_iter()
        .map(|(id, t)| TextRecord::single(id, t))
        .collect();
    let refs: Vec<TextRecord> = references
        .into_iter()
        .map(|(id, texts)| TextRecord {
            id,
            text: None,
            texts: Some(texts),
        })
        .collect();
    let opts = MetricOptions {
        bleu_smoothing: smoothing,
        meteor_stem: stem,
    };
    let r = ok(metrics::evaluate(&preds, &refs, opts))?;
    Ok(BTreeMap::from([
        ("n_pairs", r.n_pairs as f64),
        ("bleu4", r.bleu4),
        ("rouge_l", r.rouge_l),
        ("meteor", r.meteor),
        ("cider", r.cider),
    ]))
}

/// Parameter, FLOP, and memory estimates for a named architecture preset.
#[pyfunction]
#[pyo3(signature = (preset, s_enc = 109, s_dec = 40, gib = false))]
fn cost_estimate(preset: &str, s_enc: usize, s_dec: usize, gib: bool) -> PyResult<BTreeMap<&'static str, f64>> {
    let arch = match preset {
        "base" => cost::em_base(),
        "q-large" => cost::q_large(),
        "t5-base" => cost::t5_base(),
        "t5-large" => cost::t5_large(),
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown preset `{other}` (base, q-large, t5-base, t5-large)"
            )))
        }
    };
    let unit = if gib { GbUnit::Binary } else { GbUnit::Decimal };
    let r = ok(cost::cost_report(&arch, SeqLens { s_enc, s_dec }, unit))?;
    Ok(BTreeMap::from([
        ("params", r.params.total as f64),
        ("flops", r.flops.total as f64),
        ("memory_bytes", r.memory.bytes as f64),
        ("memory_gb", r.memory.gb),
    ]))
}

/// Runs a command-line invocation in-process, e.g. `["train", "--config", "run.json"]`.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> PyResult<()> {
    py.detach(|| {
        ok(mvfuse_core::cli::run_args(
            std::iter::once("mvfuse".to_string()).chain(args),
        ))
    })
}

#[pymodule]
fn mvfuse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MvfuseError", m.py().get_type::<MvfuseError>())?;
    m.add_class::<PyTokenizer>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(gen_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(quantize_int8, m)?)?;
    m.add_function(wrap_pyfunction!(bleu4, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l, m)?)?;
    m.add_function(wrap_pyfunction!(meteor, m)?)?;
    m.add_function(wrap_pyfunction!(cider, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(cost_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
