use pyo3::exceptions::{PyIndexError, PyValueError};
use pyo3::prelude::*;

use fs2net::classifier::{self, DefaultSet};
use fs2net::eval::compute_metrics;
use fs2net::trainer::{self, TrainConfig, Trainer};
use fs2net::{
    FiberDataset, FineLabel, GenConfig, Level, Point3, ProcessedFiber, SiameseModel, TaggedRotation,
};

type Xyz = (f64, f64, f64);

fn err(e: fs2net::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_level(s: &str) -> PyResult<Level> {
    s.parse().map_err(PyValueError::new_err)
}

fn points(xs: &[Xyz]) -> Vec<Point3> {
    xs.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect()
}

fn parse_rotations(specs: &[String]) -> PyResult<Vec<TaggedRotation>> {
    specs
        .iter()
        .map(|s| s.parse().map_err(PyValueError::new_err))
        .collect()
}

fn fiber(points_in: &[Xyz]) -> PyResult<fs2net::Fiber> {
    fs2net::Fiber::new("py", points(points_in), None).map_err(err)
}

fn process(points_in: &[Xyz]) -> PyResult<ProcessedFiber> {
    fs2net::prune_and_pad(&fiber(points_in)?).map_err(err)
}

/// A labeled fiber corpus.
#[pyclass(name = "Dataset", module = "pyfs2net")]
struct PyDataset {
    inner: FiberDataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyDataset {
            inner: fs2net::load_dataset(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        fs2net::save_dataset(&self.inner, path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset({} fibers)", self.inner.len())
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.fibers.iter().map(|f| f.id.clone()).collect()
    }

    /// Fine label names; `None` for unlabeled fibers.
    #[getter]
    fn labels(&self) -> Vec<Option<&'static str>> {
        self.inner.fibers.iter().map(|f| f.label.map(FineLabel::name)).collect()
    }

    fn points(&self, index: usize) -> PyResult<Vec<Xyz>> {
        let f = self
            .inner
            .fibers
            .get(index)
            .ok_or_else(|| PyIndexError::new_err(format!("fiber index {index} out of range")))?;
        Ok(f.points.iter().map(|p| (p.x, p.y, p.z)).collect())
    }

    /// Seeded `(train, test)` split, stratified by label.
    #[pyo3(signature = (fraction = 0.8, seed = 0))]
    fn split(&self, fraction: f64, seed: u64) -> PyResult<(Self, Self)> {
        let (a, b) = fs2net::split_dataset(&self.inner, fraction, seed).map_err(err)?;
        Ok((PyDataset { inner: a }, PyDataset { inner: b }))
    }

    /// Copy with every fiber rotated, e.g. `rotate("z:30")`.
    fn rotate(&self, spec: &str) -> PyResult<Self> {
        let r: TaggedRotation = spec.parse().map_err(PyValueError::new_err)?;
        let fibers = self
            .inner
            .fibers
            .iter()
            .map(|f| fs2net::rotate_fiber(f, &r.rotation))
            .collect::<fs2net::Result<Vec<_>>>()
            .map_err(err)?;
        Ok(PyDataset {
            inner: FiberDataset::new(fibers, self.inner.provenance.clone()).map_err(err)?,
        })
    }
}

#[pyfunction]
#[pyo3(signature = (per_class = 200, grey_fraction = 0.9, noise = 0.3, seed = 0, min_len = 36, max_len = 120))]
fn generate_corpus(
    per_class: usize,
    grey_fraction: f64,
    noise: f64,
    seed: u64,
    min_len: usize,
    max_len: usize,
) -> PyResult<PyDataset> {
    let cfg = GenConfig {
        per_white_class: per_class,
        grey_fraction,
        noise_sigma: noise,
        seed,
        length_range: (min_len, max_len),
    };
    Ok(PyDataset {
        inner: fs2net::generate_corpus(&cfg).map_err(err)?,
    })
}

#[pyfunction]
fn curvature_scores(points_in: Vec<Xyz>) -> Vec<f64> {
    fs2net::curvature_scores(&points(&points_in))
}

/// Curvature-pruned, centered, zero-padded 100×3 rows and the valid length.
#[pyfunction]
fn preprocess(points_in: Vec<Xyz>) -> PyResult<(Vec<Xyz>, usize)> {
    let p = process(&points_in)?;
    let rows = p.features().iter_rows().map(|r| (r[0], r[1], r[2])).collect();
    Ok((rows, p.valid_len()))
}

/// Trained Siamese comparator.
#[pyclass(name = "Model", module = "pyfs2net")]
struct PyModel {
    inner: SiameseModel,
}

#[pymethods]
impl PyModel {
    /// Untrained model with the default tower.
    #[new]
    #[pyo3(signature = (level = "coarse", seed = 0))]
    fn new(level: &str, seed: u64) -> PyResult<Self> {
        let inner = SiameseModel::new(Default::default(), parse_level(level)?, seed).map_err(err)?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: trainer::load_checkpoint(path).map_err(err)?.model,
        })
    }

    #[getter]
    fn level(&self) -> &'static str {
        self.inner.level.name()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    fn embed(&self, points_in: Vec<Xyz>) -> PyResult<Vec<f64>> {
        Ok(self.inner.embed(&process(&points_in)?))
    }

    /// Similarity in (0, 1) of two raw fibers.
    fn score(&self, a: Vec<Xyz>, b: Vec<Xyz>) -> PyResult<f64> {
        Ok(self.inner.score_pair(&process(&a)?, &process(&b)?))
    }
}

/// Trains a model on a raw dataset; returns the model and per-iteration losses.
#[pyfunction]
#[pyo3(signature = (dataset, level = "coarse", iterations = 1000, seed = 0, checkpoint = None))]
fn train(
    py: Python<'_>,
    dataset: &PyDataset,
    level: &str,
    iterations: usize,
    seed: u64,
    checkpoint: Option<&str>,
) -> PyResult<(PyModel, Vec<f64>)> {
    let mut cfg = TrainConfig::new(parse_level(level)?, seed);
    cfg.iterations = iterations;
    let ds = dataset.inner.clone();
    let (model, log, ckpt) = py
        .detach(move || -> fs2net::Result<_> {
            let fibers = fs2net::preprocess::preprocess_dataset(&ds)?;
            let mut t = Trainer::new(cfg)?;
            let log = t.run(&fibers, |_| {})?;
            let ckpt = t.checkpoint();
            Ok((t.into_model(), log, ckpt))
        })
        .map_err(err)?;
    if let Some(path) = checkpoint {
        trainer::save_checkpoint(&ckpt, path).map_err(err)?;
    }
    Ok((PyModel { inner: model }, log.iter().map(|e| e.loss).collect()))
}

/// Labeled reference fibers, optionally rotation-augmented.
#[pyclass(name = "DefaultSet", module = "pyfs2net")]
struct PyDefaultSet {
    inner: DefaultSet,
}

#[pymethods]
impl PyDefaultSet {
    #[new]
    #[pyo3(signature = (dataset, level = "coarse", per_class = 5, rotations = Vec::new(), seed = 0))]
    fn new(dataset: &PyDataset, level: &str, per_class: usize, rotations: Vec<String>, seed: u64) -> PyResult<Self> {
        let inner = classifier::build_default_set(
            &dataset.inner,
            parse_level(level)?,
            per_class,
            &parse_rotations(&rotations)?,
            seed,
        )
        .map_err(err)?;
        Ok(PyDefaultSet { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn tags(&self) -> Vec<String> {
        self.inner.entries.iter().map(|e| e.tag.clone()).collect()
    }
}

/// Classifies one raw fiber; returns `(class name, best score)`.
#[pyfunction]
fn classify(model: &PyModel, defaults: &PyDefaultSet, points_in: Vec<Xyz>) -> PyResult<(&'static str, f64)> {
    let d = classifier::classify_fiber(&model.inner, &defaults.inner, &process(&points_in)?).map_err(err)?;
    Ok((model.inner.level.class_name(d.class), d.best_score))
}

/// Classifies every fiber of a labeled dataset and returns
/// `{"accuracy", "recall", "total", "confusion"}`. Fibers without a class at
/// the model's level are skipped.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    model: &PyModel,
    defaults: &PyDefaultSet,
    dataset: &PyDataset,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let lvl = model.inner.level;
    let mut ds = dataset.inner.clone();
    ds.fibers.retain(|f| f.label.and_then(|l| lvl.class_of(l)).is_some());
    let fibers = fs2net::preprocess::preprocess_dataset(&ds).map_err(err)?;
    let table = classifier::classify_all(&model.inner, &defaults.inner, &fibers).map_err(err)?;
    let report = compute_metrics(&table).map_err(err)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("accuracy", report.accuracy)?;
    out.set_item("recall", report.recall)?;
    out.set_item("total", report.total)?;
    out.set_item("confusion", report.confusion)?;
    Ok(out)
}

/// Max relative error of the finite-difference check on one tiny model.
#[pyfunction]
#[pyo3(signature = (seed, eps = 1e-5))]
fn gradcheck(seed: u64, eps: f64) -> PyResult<f64> {
    fs2net::siamese::tiny_gradcheck(seed, eps).map_err(err)
}

#[pymodule]
fn pyfs2net(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyDefaultSet>()?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(curvature_scores, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
