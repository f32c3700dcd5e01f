//! Python bindings for the recommender: dataset generation and IO, training,
//! evaluation, and per-user recommendation, mirroring the CLI workflows.
//!
//! Build with `cargo build -p mmgnn-py`; the resulting `libmmgnn_py.so`
//! imports as module `mmgnn_py` once renamed onto the Python path (see
//! `python/smoke_test.py`).

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mmgnn::dataset::{generate_synthetic, load_dataset, save_dataset, Modality, SyntheticSpec};
use mmgnn::error::Error;
use mmgnn::graph::{build_graphs, Graphs};
use mmgnn::model::{
    forward, load_checkpoint, save_checkpoint, score, score_all, ForwardState, ModelInputs,
    ModelParams,
};
use mmgnn::training::LossRecord;

fn pyerr(e: Error) -> PyErr {
    match &e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::TrainingDiverged(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// An interaction dataset plus its derived propagation graphs.
#[pyclass]
struct Dataset {
    ds: mmgnn::Dataset,
    graphs: Graphs,
}

impl Dataset {
    fn wrap(ds: mmgnn::Dataset) -> PyResult<Self> {
        let graphs = build_graphs(&ds).map_err(pyerr)?;
        Ok(Dataset { ds, graphs })
    }

    fn user(&self, raw: &str) -> PyResult<usize> {
        self.ds
            .user_index(raw)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown user '{raw}'")))
    }

    fn song(&self, raw: &str) -> PyResult<usize> {
        self.ds
            .song_ids
            .iter()
            .position(|s| s == raw)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown song '{raw}'")))
    }
}

#[pymethods]
impl Dataset {
    /// Sample a planted-community dataset; mirrors `mmgnn generate`.
    #[staticmethod]
    #[pyo3(signature = (users=200, songs=500, groups=5, p_in=0.5, p_out=0.05,
        q_in=0.3, q_out=0.01, noise=0.1, cold_fraction=0.1, test_fraction=0.2,
        seed=42, dim_lyr=16, dim_fre=12, dim_vis=10))]
    #[allow(clippy::too_many_arguments)]
    fn generate(
        users: usize,
        songs: usize,
        groups: usize,
        p_in: f64,
        p_out: f64,
        q_in: f64,
        q_out: f64,
        noise: f64,
        cold_fraction: f64,
        test_fraction: f64,
        seed: u64,
        dim_lyr: usize,
        dim_fre: usize,
        dim_vis: usize,
    ) -> PyResult<Dataset> {
        let mut feature_dims = BTreeMap::new();
        feature_dims.insert(Modality::Lyrics, dim_lyr);
        feature_dims.insert(Modality::Audio, dim_fre);
        feature_dims.insert(Modality::Visual, dim_vis);
        let spec = SyntheticSpec {
            n_users: users,
            n_songs: songs,
            n_groups: groups,
            p_in,
            p_out,
            q_in,
            q_out,
            feature_dims,
            noise_sigma: noise,
            cold_fraction,
            test_fraction,
            seed,
        };
        Dataset::wrap(generate_synthetic(&spec).map_err(pyerr)?)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Dataset> {
        Dataset::wrap(load_dataset(&path).map_err(pyerr)?)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_dataset(&self.ds, &path).map_err(pyerr)
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.ds.n_users()
    }

    #[getter]
    fn n_songs(&self) -> usize {
        self.ds.n_songs()
    }

    #[getter]
    fn n_train(&self) -> usize {
        self.ds.train.len()
    }

    #[getter]
    fn n_test(&self) -> usize {
        self.ds.test.len()
    }

    #[getter]
    fn n_social_edges(&self) -> usize {
        self.ds.social_edges.len()
    }

    #[getter]
    fn user_ids(&self) -> Vec<String> {
        self.ds.user_ids.clone()
    }

    #[getter]
    fn song_ids(&self) -> Vec<String> {
        self.ds.song_ids.clone()
    }

    /// Raw ids of songs held out of training (feature-only items).
    #[getter]
    fn cold_songs(&self) -> Vec<String> {
        self.ds.cold_songs.iter().map(|&s| self.ds.song_ids[s].clone()).collect()
    }

    /// Non-fatal issues observed while loading or generating.
    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.ds.warnings.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset({} users, {} songs, {} train + {} test interactions, {} social edges)",
            self.ds.n_users(),
            self.ds.n_songs(),
            self.ds.train.len(),
            self.ds.test.len(),
            self.ds.social_edges.len(),
        )
    }
}

/// Training hyper-parameters; unset arguments keep the reference defaults.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct TrainConfig {
    inner: mmgnn::TrainConfig,
}

#[pymethods]
impl TrainConfig {
    #[new]
    #[pyo3(signature = (embedding_dim=None, learning_rate=None, batch_size=None,
        epochs=None, layers=None, social_layers=None, lambda_mutual=None,
        lambda_reg=None, lambda_emotion=None, temperature=None,
        negatives_per_positive=None, candidate_negatives=None, seed=None,
        no_social=None, no_mutual=None, no_emotion=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        embedding_dim: Option<usize>,
        learning_rate: Option<f64>,
        batch_size: Option<usize>,
        epochs: Option<usize>,
        layers: Option<usize>,
        social_layers: Option<usize>,
        lambda_mutual: Option<f64>,
        lambda_reg: Option<f64>,
        lambda_emotion: Option<f64>,
        temperature: Option<f64>,
        negatives_per_positive: Option<usize>,
        candidate_negatives: Option<usize>,
        seed: Option<u64>,
        no_social: Option<bool>,
        no_mutual: Option<bool>,
        no_emotion: Option<bool>,
    ) -> PyResult<TrainConfig> {
        let mut c = mmgnn::TrainConfig::default();
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = $field { c.$field = v; })*
            };
        }
        take!(
            embedding_dim,
            learning_rate,
            batch_size,
            epochs,
            layers,
            social_layers,
            lambda_mutual,
            lambda_reg,
            lambda_emotion,
            temperature,
            negatives_per_positive,
            candidate_negatives,
            seed,
            no_social,
            no_mutual,
            no_emotion
        );
        c.validate().map_err(pyerr)?;
        Ok(TrainConfig { inner: c })
    }

    /// Read a `key = value` config file, as `mmgnn train --config` does.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<TrainConfig> {
        Ok(TrainConfig { inner: mmgnn::TrainConfig::from_file(&path).map_err(pyerr)? })
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.inner.embedding_dim
    }

    #[getter]
    fn learning_rate(&self) -> f64 {
        self.inner.learning_rate
    }

    #[getter]
    fn batch_size(&self) -> usize {
        self.inner.batch_size
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    #[getter]
    fn layers(&self) -> usize {
        self.inner.layers
    }

    #[getter]
    fn social_layers(&self) -> usize {
        self.inner.social_layers
    }

    #[getter]
    fn lambda_mutual(&self) -> f64 {
        self.inner.lambda_mutual
    }

    #[getter]
    fn lambda_reg(&self) -> f64 {
        self.inner.lambda_reg
    }

    #[getter]
    fn lambda_emotion(&self) -> f64 {
        self.inner.lambda_emotion
    }

    #[getter]
    fn temperature(&self) -> f64 {
        self.inner.temperature
    }

    #[getter]
    fn negatives_per_positive(&self) -> usize {
        self.inner.negatives_per_positive
    }

    #[getter]
    fn candidate_negatives(&self) -> usize {
        self.inner.candidate_negatives
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn no_social(&self) -> bool {
        self.inner.no_social
    }

    #[getter]
    fn no_mutual(&self) -> bool {
        self.inner.no_mutual
    }

    #[getter]
    fn no_emotion(&self) -> bool {
        self.inner.no_emotion
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Per-cutoff ranking quality averaged over evaluated users.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct KMetrics {
    inner: mmgnn::eval::KMetrics,
}

#[pymethods]
impl KMetrics {
    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn precision(&self) -> f64 {
        self.inner.precision
    }

    #[getter]
    fn recall(&self) -> f64 {
        self.inner.recall
    }

    #[getter]
    fn ndcg(&self) -> f64 {
        self.inner.ndcg
    }

    fn __repr__(&self) -> String {
        format!(
            "KMetrics(k={}, precision={}, recall={}, ndcg={})",
            self.inner.k, self.inner.precision, self.inner.recall, self.inner.ndcg
        )
    }
}

/// One evaluation block: either all held-out items or the cold-song subset.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct BlockMetrics {
    inner: mmgnn::eval::BlockMetrics,
}

#[pymethods]
impl BlockMetrics {
    #[getter]
    fn rows(&self) -> Vec<KMetrics> {
        self.inner.rows.iter().map(|r| KMetrics { inner: r.clone() }).collect()
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.inner.n_users
    }

    #[getter]
    fn n_skipped(&self) -> usize {
        self.inner.n_skipped
    }

    fn __repr__(&self) -> String {
        format!("BlockMetrics(n_users={}, rows={:?})", self.inner.n_users, self.inner.rows)
    }
}

#[pyclass]
struct MetricsReport {
    inner: mmgnn::eval::MetricsReport,
}

#[pymethods]
impl MetricsReport {
    #[getter]
    fn all(&self) -> BlockMetrics {
        BlockMetrics { inner: self.inner.all.clone() }
    }

    #[getter]
    fn cold(&self) -> BlockMetrics {
        BlockMetrics { inner: self.inner.cold.clone() }
    }

    /// The same CSV text `mmgnn evaluate` writes.
    fn to_csv(&self) -> String {
        mmgnn::eval::metrics_csv(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("MetricsReport(all={:?}, cold={:?})", self.inner.all, self.inner.cold)
    }
}

/// A trained model: learned parameters plus the loss trajectory.
#[pyclass]
struct Model {
    params: ModelParams,
    log: Vec<LossRecord>,
}

impl Model {
    fn state(&self, data: &Dataset) -> PyResult<ForwardState> {
        let inputs = ModelInputs {
            bipartite: &data.graphs.bipartite,
            social: &data.graphs.social,
            features: &data.ds.features,
            emotion: data.ds.emotion.as_ref(),
        };
        forward(&self.params, &inputs).map_err(pyerr)
    }
}

#[pymethods]
impl Model {
    /// Train on a dataset; mirrors `mmgnn train`.
    #[staticmethod]
    fn train(dataset: &Dataset, config: &TrainConfig) -> PyResult<Model> {
        let result = mmgnn::fit(&dataset.ds, &dataset.graphs, &config.inner).map_err(pyerr)?;
        Ok(Model { params: result.params, log: result.log })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Model> {
        Ok(Model { params: load_checkpoint(&path).map_err(pyerr)?, log: Vec::new() })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.params, &path).map_err(pyerr)
    }

    /// `(epoch, step, loss, bpr, mutual, l2)` per optimizer step; empty for
    /// loaded checkpoints.
    fn loss_log(&self) -> Vec<(usize, usize, f64, f64, f64, f64)> {
        self.log.iter().map(|r| (r.epoch, r.step, r.loss, r.bpr, r.mutual, r.l2)).collect()
    }

    #[pyo3(signature = (dataset, k=vec![5, 10, 20, 50]))]
    fn evaluate(&self, dataset: &Dataset, k: Vec<usize>) -> PyResult<MetricsReport> {
        let state = self.state(dataset)?;
        let report = mmgnn::evaluate(&state, &dataset.ds, &k, self.params.lambda_emotion)
            .map_err(pyerr)?;
        Ok(MetricsReport { inner: report })
    }

    /// Top-`top` `(song_id, score)` pairs for a user, excluding their
    /// training items.
    #[pyo3(signature = (dataset, user, top=10))]
    fn recommend(&self, dataset: &Dataset, user: &str, top: usize) -> PyResult<Vec<(String, f64)>> {
        let u = dataset.user(user)?;
        let state = self.state(dataset)?;
        let exclude: HashSet<usize> = dataset.ds.train_by_user()[u].iter().copied().collect();
        Ok(score_all(&state, u, &exclude, self.params.lambda_emotion)
            .into_iter()
            .take(top)
            .map(|(song, s)| (dataset.ds.song_ids[song].clone(), s))
            .collect())
    }

    /// Raw preference score for one `(user, song)` pair.
    fn score(&self, dataset: &Dataset, user: &str, song: &str) -> PyResult<f64> {
        let u = dataset.user(user)?;
        let i = dataset.song(song)?;
        let state = self.state(dataset)?;
        Ok(score(&state, u, i, self.params.lambda_emotion))
    }

    /// Fused user embeddings, one row per user.
    fn user_embeddings(&self, dataset: &Dataset) -> PyResult<Vec<Vec<f64>>> {
        let state = self.state(dataset)?;
        Ok(state.user_final.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    /// Fused item embeddings, one row per song.
    fn item_embeddings(&self, dataset: &Dataset) -> PyResult<Vec<Vec<f64>>> {
        let state = self.state(dataset)?;
        Ok(state.item_final.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.params.dim
    }

    #[getter]
    fn lambda_emotion(&self) -> f64 {
        self.params.lambda_emotion
    }

    fn __repr__(&self) -> String {
        format!(
            "Model({} users × {} songs, d={}, {} modalities)",
            self.params.n_users,
            self.params.n_songs,
            self.params.dim,
            self.params.modalities.len(),
        )
    }
}

/// Expected metrics of a uniformly random ranker on the same protocol.
#[pyfunction]
#[pyo3(signature = (dataset, k=vec![5, 10, 20, 50], seed=0, trials=20))]
fn random_baseline(
    dataset: &Dataset,
    k: Vec<usize>,
    seed: u64,
    trials: usize,
) -> PyResult<MetricsReport> {
    let report = mmgnn::random_baseline(&dataset.ds, &k, seed, trials).map_err(pyerr)?;
    Ok(MetricsReport { inner: report })
}

#[pymodule]
fn mmgnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<TrainConfig>()?;
    m.add_class::<Model>()?;
    m.add_class::<MetricsReport>()?;
    m.add_class::<BlockMetrics>()?;
    m.add_class::<KMetrics>()?;
    m.add_function(wrap_pyfunction!(random_baseline, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
