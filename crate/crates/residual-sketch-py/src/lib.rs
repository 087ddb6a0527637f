//! Python bindings: the hierarchy, the residual sketch, the exact oracle,
//! metric helpers and the trace generators, exposed as `residual_sketch_py`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use residual_sketch::config::{LevelConfig, SketchConfig};
use residual_sketch::hierarchy;
use residual_sketch::metrics;
use residual_sketch::oracle;
use residual_sketch::sketch;
use residual_sketch::trace;
use residual_sketch::Error;

fn to_py_err(err: Error) -> PyErr {
    PyValueError::new_err(err.to_string())
}

/// A full or prefix-generalized key: raw bits plus the generalization layer.
#[pyclass(name = "FlowKey", frozen, eq, hash, from_py_object)]
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct PyFlowKey {
    inner: hierarchy::FlowKey,
}

#[pymethods]
impl PyFlowKey {
    #[getter]
    fn bits(&self) -> u32 {
        self.inner.bits()
    }

    #[getter]
    fn layer(&self) -> u8 {
        self.inner.layer()
    }

    fn __repr__(&self) -> String {
        format!("FlowKey(bits={:#010x}, layer={})", self.inner.bits(), self.inner.layer())
    }
}

/// The prefix hierarchy: bit or byte aggregation over keys of up to 32 bits.
#[pyclass(name = "Granularity", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGranularity {
    inner: hierarchy::Granularity,
}

fn parse_kind(kind: &str) -> PyResult<hierarchy::GranularityKind> {
    match kind {
        "bit" => Ok(hierarchy::GranularityKind::Bit),
        "byte" => Ok(hierarchy::GranularityKind::Byte),
        other => Err(PyValueError::new_err(format!(
            "granularity must be 'bit' or 'byte', got {other:?}"
        ))),
    }
}

#[pymethods]
impl PyGranularity {
    #[new]
    #[pyo3(signature = (kind = "bit", width_bits = 32))]
    fn new(kind: &str, width_bits: u8) -> PyResult<Self> {
        Ok(PyGranularity {
            inner: hierarchy::Granularity::new(parse_kind(kind)?, width_bits).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn depth(&self) -> u8 {
        self.inner.depth()
    }

    #[getter]
    fn width_bits(&self) -> u8 {
        self.inner.width_bits()
    }

    fn full_key(&self, bits: u32) -> PyFlowKey {
        PyFlowKey {
            inner: self.inner.full_key(bits),
        }
    }

    fn key(&self, bits: u32, layer: u8) -> PyResult<PyFlowKey> {
        Ok(PyFlowKey {
            inner: self.inner.key(bits, layer).map_err(to_py_err)?,
        })
    }

    fn generalize(&self, key: PyFlowKey, target_layer: u8) -> PyResult<PyFlowKey> {
        Ok(PyFlowKey {
            inner: self
                .inner
                .generalize(key.inner, target_layer)
                .map_err(to_py_err)?,
        })
    }

    fn is_ancestor(&self, q: PyFlowKey, p: PyFlowKey) -> bool {
        self.inner.is_ancestor(q.inner, p.inner)
    }

    fn prefix_len(&self, key: PyFlowKey) -> u8 {
        self.inner.prefix_len(key.inner)
    }

    fn render(&self, key: PyFlowKey) -> String {
        self.inner.render(key.inner)
    }

    fn parse(&self, text: &str) -> PyResult<PyFlowKey> {
        Ok(PyFlowKey {
            inner: self.inner.parse(text).map_err(to_py_err)?,
        })
    }
}

fn entry_tuple(py: Python<'_>, gran: &hierarchy::Granularity, e: &sketch::HHHEntry) -> Py<PyAny> {
    (
        gran.render(e.key),
        e.key.bits(),
        e.layer,
        e.estimated_count,
    )
        .into_pyobject(py)
        .expect("tuple converts")
        .into_any()
        .unbind()
}

fn entries_from_py(items: Vec<(u32, u8, u64)>, gran: &hierarchy::Granularity) -> PyResult<Vec<sketch::HHHEntry>> {
    items
        .into_iter()
        .map(|(bits, layer, count)| {
            Ok(sketch::HHHEntry {
                key: gran.key(bits, layer).map_err(to_py_err)?,
                estimated_count: count,
                layer,
            })
        })
        .collect()
}

/// The multi-level sketch with residual connections.
#[pyclass(name = "ResidualSketch")]
struct PyResidualSketch {
    inner: sketch::ResidualSketch,
}

#[pymethods]
impl PyResidualSketch {
    /// Build a sketch. `levels` lists retained prefix lengths in bits; the
    /// report threshold `theta` sizes the per-level residual thresholds as
    /// `beta * theta * expected_window`.
    #[new]
    #[pyo3(signature = (
        memory_kb,
        levels,
        theta,
        expected_window,
        seed = 0,
        kind = "coco",
        g = 2,
        beta = 0.8,
        granularity = "bit",
        width_bits = 32,
        connection = true,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        memory_kb: f64,
        levels: Vec<u8>,
        theta: f64,
        expected_window: u64,
        seed: u64,
        kind: &str,
        g: usize,
        beta: f64,
        granularity: &str,
        width_bits: u8,
        connection: bool,
    ) -> PyResult<Self> {
        let kind = match kind {
            "coco" => residual_sketch::BlockKind::Coco,
            "uss" => residual_sketch::BlockKind::Uss,
            other => {
                return Err(PyValueError::new_err(format!(
                    "kind must be 'coco' or 'uss', got {other:?}"
                )))
            }
        };
        let cfg = SketchConfig {
            granularity: parse_kind(granularity)?,
            width_bits,
            memory_kb,
            levels: levels
                .into_iter()
                .map(|prefix_len| LevelConfig {
                    prefix_len,
                    theta_abs: None,
                })
                .collect(),
            kind,
            g: match kind {
                residual_sketch::BlockKind::Uss => 1,
                residual_sketch::BlockKind::Coco => g,
            },
            beta,
            expected_window,
            seed,
            connection,
        };
        Ok(PyResidualSketch {
            inner: cfg.build(theta).map_err(to_py_err)?,
        })
    }

    /// Build from the JSON sketch-config format used by the CLI.
    #[staticmethod]
    fn from_config(json: &str, theta: f64) -> PyResult<Self> {
        let cfg: SketchConfig =
            serde_json::from_str(json).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyResidualSketch {
            inner: cfg.build(theta).map_err(to_py_err)?,
        })
    }

    #[pyo3(signature = (ip, value = 1))]
    fn insert(&mut self, ip: u32, value: u64) -> PyResult<()> {
        self.inner.insert_ip(ip, value).map_err(to_py_err)
    }

    #[getter]
    fn n(&self) -> u64 {
        self.inner.n()
    }

    #[getter]
    fn value_seen(&self) -> u64 {
        self.inner.value_seen()
    }

    fn estimate(&self, key: PyFlowKey) -> u64 {
        self.inner.estimate(key.inner)
    }

    /// Extract the HHH set as `(key_str, bits, layer, conditional_count)`
    /// tuples, ordered bottom-up.
    fn extract_hhh(&self, py: Python<'_>, theta: f64) -> PyResult<Vec<Py<PyAny>>> {
        let entries = self.inner.extract_hhh(theta).map_err(to_py_err)?;
        let gran = self.inner.granularity();
        Ok(entries.iter().map(|e| entry_tuple(py, gran, e)).collect())
    }

    fn reset_window(&mut self) {
        self.inner.reset_window()
    }

    fn level_update_counts(&self) -> Vec<u64> {
        self.inner.level_update_counts().to_vec()
    }
}

/// Exact ground truth over one window.
#[pyclass(name = "ExactOracle")]
struct PyExactOracle {
    inner: oracle::ExactCounts,
}

#[pymethods]
impl PyExactOracle {
    #[new]
    #[pyo3(signature = (granularity = "bit", width_bits = 32))]
    fn new(granularity: &str, width_bits: u8) -> PyResult<Self> {
        let gran =
            hierarchy::Granularity::new(parse_kind(granularity)?, width_bits).map_err(to_py_err)?;
        Ok(PyExactOracle {
            inner: oracle::ExactCounts::new(gran),
        })
    }

    #[pyo3(signature = (ip, value = 1))]
    fn observe(&mut self, ip: u32, value: u64) -> PyResult<()> {
        self.inner.observe(ip, value).map_err(to_py_err)
    }

    #[getter]
    fn n(&self) -> u64 {
        self.inner.n()
    }

    #[getter]
    fn value_total(&self) -> u64 {
        self.inner.value_total()
    }

    fn exact_hhh(&self, py: Python<'_>, theta: f64) -> PyResult<Vec<Py<PyAny>>> {
        let entries = self.inner.exact_hhh(theta).map_err(to_py_err)?;
        let gran = self.inner.granularity();
        Ok(entries.iter().map(|e| entry_tuple(py, gran, e)).collect())
    }

    fn exact_layer_hh(&self, theta: f64, layer: u8) -> PyResult<Vec<PyFlowKey>> {
        Ok(self
            .inner
            .exact_layer_hh(theta, layer)
            .map_err(to_py_err)?
            .into_iter()
            .map(|inner| PyFlowKey { inner })
            .collect())
    }
}

/// Precision, recall, F1 and ARE of a reported set against the truth.
/// Both sets are `(bits, layer, count)` tuples.
#[pyfunction]
#[pyo3(signature = (reported, truth, granularity = "bit", width_bits = 32))]
fn evaluate<'py>(
    py: Python<'py>,
    reported: Vec<(u32, u8, u64)>,
    truth: Vec<(u32, u8, u64)>,
    granularity: &str,
    width_bits: u8,
) -> PyResult<Bound<'py, PyDict>> {
    let gran =
        hierarchy::Granularity::new(parse_kind(granularity)?, width_bits).map_err(to_py_err)?;
    let reported = entries_from_py(reported, &gran)?;
    let truth = entries_from_py(truth, &gran)?;
    let (precision, recall) = metrics::precision_recall(&reported, &truth);
    let out = PyDict::new(py);
    out.set_item("precision", precision)?;
    out.set_item("recall", recall)?;
    out.set_item("f1", metrics::f1(precision, recall))?;
    out.set_item(
        "are",
        if truth.is_empty() {
            None
        } else {
            metrics::are_default(&reported, &truth).ok()
        },
    )?;
    out.set_item(
        "per_layer_f1",
        metrics::per_layer_f1(&reported, &truth, gran.depth()),
    )?;
    Ok(out)
}

/// Deterministic Zipf stream as `(src_ip, value)` pairs.
#[pyfunction]
fn gen_zipf(skew: f64, keys: u64, length: u64, seed: u64) -> PyResult<Vec<(u32, u32)>> {
    let records = trace::gen_zipf(&trace::ZipfSpec {
        skew,
        keys,
        length,
        seed,
    })
    .map_err(to_py_err)?;
    Ok(records.into_iter().map(|r| (r.src_ip, r.value)).collect())
}

/// Top-k skew modification: remap the heaviest keys onto fresh prefixes in
/// `[agg_prefix_min, agg_prefix_max]` carrying `mass_fraction` of traffic.
#[pyfunction]
#[pyo3(signature = (
    records,
    top_k = 1000,
    mass_fraction = 0.3,
    agg_prefix_min = 20,
    agg_prefix_max = 24,
    fan_out = 64,
    shed_targets = 256,
    seed = 0,
))]
#[allow(clippy::too_many_arguments)]
fn skew_modify(
    records: Vec<(u32, u32)>,
    top_k: usize,
    mass_fraction: f64,
    agg_prefix_min: u8,
    agg_prefix_max: u8,
    fan_out: u32,
    shed_targets: usize,
    seed: u64,
) -> PyResult<Vec<(u32, u32)>> {
    let records = records
        .into_iter()
        .map(|(src_ip, value)| trace::PacketRecord { src_ip, value })
        .collect();
    let out = trace::skew_modify(
        records,
        &trace::SynthSpec {
            top_k,
            mass_fraction,
            agg_prefix_min,
            agg_prefix_max,
            fan_out,
            shed_targets,
            seed,
        },
    )
    .map_err(to_py_err)?;
    Ok(out.into_iter().map(|r| (r.src_ip, r.value)).collect())
}

#[pymodule]
fn residual_sketch_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGranularity>()?;
    m.add_class::<PyFlowKey>()?;
    m.add_class::<PyResidualSketch>()?;
    m.add_class::<PyExactOracle>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gen_zipf, m)?)?;
    m.add_function(wrap_pyfunction!(skew_modify, m)?)?;
    Ok(())
}
