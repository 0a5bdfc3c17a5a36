//! Python bindings for `niouc-core`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList};
use serde_json::Value;

use niouc_core::el::{self, AmbiguitySpec, ElRatio, SourceSizes};
use niouc_core::harness::{Experiment, ExperimentConfig};
use niouc_core::model::{
    self, AnalyticModel, InputDataset, QuadraticCase, QuadraticModelParams, ServiceScenario, SimModel,
    TandemQueueParams,
};
use niouc_core::procedure::{self, NioucSettings, Variant};
use niouc_core::stats::{self, StreamKey};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py(py: Python<'_>, v: &Value) -> PyResult<Py<PyAny>> {
    Ok(match v {
        Value::Null => py.None(),
        Value::Bool(b) => PyBool::new(py, *b).to_owned().into_any().unbind(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any().unbind(),
            (None, Some(u)) => u.into_pyobject(py)?.into_any().unbind(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any().unbind(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any().unbind(),
        Value::Array(a) => {
            let list = PyList::empty(py);
            for x in a {
                list.append(to_py(py, x)?)?;
            }
            list.into_any().unbind()
        }
        Value::Object(o) => {
            let dict = PyDict::new(py);
            for (k, x) in o {
                dict.set_item(k, to_py(py, x)?)?;
            }
            dict.into_any().unbind()
        }
    })
}

fn parse_case(name: &str) -> PyResult<QuadraticCase> {
    match name {
        "case1" | "1" => Ok(QuadraticCase::Case1),
        "case2" | "2" => Ok(QuadraticCase::Case2),
        "case3" | "3" => Ok(QuadraticCase::Case3),
        _ => Err(PyValueError::new_err(format!("unknown case {name:?}"))),
    }
}

fn parse_scenario(name: &str) -> PyResult<ServiceScenario> {
    match name {
        "exponential" => Ok(ServiceScenario::Exponential),
        "bimodal" => Ok(ServiceScenario::Bimodal),
        _ => Err(PyValueError::new_err(format!("unknown scenario {name:?}"))),
    }
}

/// `χ²_dof` quantile at probability `prob`.
#[pyfunction]
fn chi2_quantile(dof: u32, prob: f64) -> PyResult<f64> {
    stats::chi2_quantile(dof, prob).map_err(err)
}

/// Bounds `(l, u)` with `l/n_p <= w_pj <= u/n_p` on the ambiguity set.
#[pyfunction]
fn weight_bounds(radius: f64) -> (f64, f64) {
    el::weight_bounds_for_radius(radius)
}

/// Maximize `Σ c_pj w_pj` over the ambiguity set of the given radius.
#[pyfunction]
fn max_linear(py: Python<'_>, coeffs: Vec<Vec<f64>>, radius: f64) -> PyResult<Py<PyAny>> {
    let sizes = SourceSizes::new(coeffs.iter().map(Vec::len).collect()).map_err(err)?;
    let spec = AmbiguitySpec::new(sizes, radius).map_err(err)?;
    let r = el::max_linear(&spec, &coeffs).map_err(err)?;
    to_py(py, &serde_json::to_value(&r).map_err(err)?)
}

/// `-2 ln R(mu)`, or `None` when `mu` is outside the attainable region.
#[pyfunction]
fn el_log_ratio(observations: Vec<Vec<Vec<f64>>>, mu: Vec<f64>) -> PyResult<Option<f64>> {
    Ok(match el::el_log_ratio(&observations, &mu).map_err(err)? {
        ElRatio::Finite { statistic, .. } => Some(statistic),
        ElRatio::Infeasible => None,
    })
}

/// MCB intervals and confidence set from a `k × k` bound table.
#[pyfunction]
fn mcb_from_bounds(py: Python<'_>, bounds: Vec<Vec<f64>>) -> PyResult<Py<PyAny>> {
    let o = procedure::mcb_from_bounds(&bounds).map_err(err)?;
    to_py(py, &serde_json::to_value(&o).map_err(err)?)
}

#[pyclass(name = "QuadraticModel", frozen)]
struct PyQuadraticModel {
    inner: model::QuadraticModel,
}

#[pymethods]
impl PyQuadraticModel {
    #[new]
    #[pyo3(signature = (a, c, tau2, t = 10))]
    fn new(a: Vec<f64>, c: Vec<f64>, tau2: Vec<f64>, t: usize) -> PyResult<Self> {
        let inner = model::QuadraticModel::new(QuadraticModelParams { a, c, tau2, t }).map_err(err)?;
        Ok(Self { inner })
    }

    /// One of the preset cases: `"case1"`, `"case2"`, `"case3"`.
    #[staticmethod]
    fn case(name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: model::QuadraticModel::case(parse_case(name)?),
        })
    }

    #[getter]
    fn num_solutions(&self) -> usize {
        self.inner.num_solutions()
    }

    fn true_etas(&self) -> Vec<f64> {
        (0..self.inner.num_solutions()).map(|i| self.inner.true_eta(i)).collect()
    }

    fn true_influence(&self, i: usize, p: usize, x: f64) -> PyResult<f64> {
        if i >= self.inner.num_solutions() || p >= self.inner.num_sources() {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.inner.true_influence(i, p, x))
    }

    fn output(&self, i: usize, z: Vec<Vec<f64>>) -> PyResult<f64> {
        let view: Vec<&[f64]> = z.iter().map(Vec::as_slice).collect();
        self.inner.output(i, &view).map_err(err)
    }
}

#[pyclass(name = "TandemQueueModel", frozen)]
struct PyTandemQueueModel {
    inner: model::TandemQueueModel,
}

#[pymethods]
impl PyTandemQueueModel {
    #[new]
    #[pyo3(signature = (scenario = "exponential", budget = 9, customers = 100))]
    fn new(scenario: &str, budget: u32, customers: usize) -> PyResult<Self> {
        let params = TandemQueueParams {
            scenario: parse_scenario(scenario)?,
            budget,
            customers,
            ..Default::default()
        };
        Ok(Self {
            inner: model::TandemQueueModel::new(params).map_err(err)?,
        })
    }

    #[getter]
    fn num_solutions(&self) -> usize {
        self.inner.num_solutions()
    }

    fn solutions(&self) -> Vec<Vec<u32>> {
        self.inner.solutions().to_vec()
    }

    /// Published means (negated waits) when the parameters are the defaults.
    fn reference_etas(&self) -> Option<Vec<f64>> {
        self.inner.reference_etas()
    }
}

/// Feasible capacity additions of the default queue under `budget`.
#[pyfunction]
#[pyo3(signature = (budget = 9))]
fn enumerate_solutions(budget: u32) -> Vec<Vec<u32>> {
    model::enumerate_solutions(&TandemQueueParams {
        budget,
        ..Default::default()
    })
}

/// Mean waiting time of the default queue with capacity addition `added`.
#[pyfunction]
fn tandem_queue_output(added: Vec<u32>, interarrivals: Vec<f64>, services: Vec<Vec<f64>>) -> PyResult<f64> {
    let params = TandemQueueParams {
        customers: interarrivals.len(),
        ..Default::default()
    };
    let view: Vec<&[f64]> = services.iter().map(Vec::as_slice).collect();
    model::tandem_queue_output(&params, &added, &interarrivals, &view).map_err(err)
}

/// Runs the procedure once on `data` (one list of observations per source).
#[pyfunction]
#[pyo3(signature = (model, data, alpha = 0.1, r1 = 400, r2 = 100, variant = "niouc", crn = true, seed = 1, quantile_draws = 20000))]
#[allow(clippy::too_many_arguments)]
fn run_niouc(
    py: Python<'_>,
    model: &Bound<'_, PyAny>,
    data: Vec<Vec<f64>>,
    alpha: f64,
    r1: usize,
    r2: usize,
    variant: &str,
    crn: bool,
    seed: u64,
    quantile_draws: usize,
) -> PyResult<Py<PyAny>> {
    let variant = Variant::parse(variant).ok_or_else(|| PyValueError::new_err(format!("unknown variant {variant:?}")))?;
    let settings = NioucSettings {
        alpha,
        r1,
        r2,
        variant,
        crn,
        quantile_draws,
        radius_override: None,
    };
    let data = InputDataset::new(data).map_err(err)?;
    let run = |m: &(dyn SimModel + Send)| py.detach(|| procedure::run_niouc(m, &data, &settings, StreamKey::new(seed)));
    let result = if let Ok(q) = model.cast::<PyQuadraticModel>() {
        run(&q.get().inner)
    } else if let Ok(q) = model.cast::<PyTandemQueueModel>() {
        run(&q.get().inner)
    } else {
        return Err(PyValueError::new_err("model must be a QuadraticModel or TandemQueueModel"));
    }
    .map_err(err)?;
    let value = serde_json::json!({
        "selected": result.outcome.selected,
        "lower": result.outcome.lower,
        "upper": result.outcome.upper,
        "degenerate": result.outcome.degenerate,
        "bounds": result.bounds.table().iter().map(|r| r.iter().map(|v| if v.is_nan() { Value::Null } else { (*v).into() }).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "diagnostics": result.diagnostics,
    });
    to_py(py, &value)
}

/// Runs a TOML experiment configuration and returns its metrics.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &str) -> PyResult<Py<PyAny>> {
    let cfg = ExperimentConfig::from_toml_str(config).map_err(err)?;
    let out = py.detach(|| Experiment::new(cfg).and_then(|e| e.run())).map_err(err)?;
    to_py(py, &serde_json::to_value(&out.metrics).map_err(err)?)
}

#[pymodule]
fn niouc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(chi2_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(weight_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(max_linear, m)?)?;
    m.add_function(wrap_pyfunction!(el_log_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(mcb_from_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_solutions, m)?)?;
    m.add_function(wrap_pyfunction!(tandem_queue_output, m)?)?;
    m.add_function(wrap_pyfunction!(run_niouc, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<PyQuadraticModel>()?;
    m.add_class::<PyTandemQueueModel>()?;
    Ok(())
}
