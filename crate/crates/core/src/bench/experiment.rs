use std::fmt;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::{baseline_complete_rows, baseline_knn_impute, ColGp};
use super::functions::{MnarKind, TestFunction};
use super::metrics::{metrics, Metrics};
use super::missingness::{apply_missingness, mask_values, Mechanism, MissingnessSpec, MnarScheme};
use crate::data::{latin_hypercube, SimulationDataset};
use crate::error::{Error, Result};
use crate::gp::{fit_surrogate, PlainPcgp, Surrogate, SurrogateConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "pcgpwm")]
    Pcgpwm,
    #[serde(rename = "pcgp-knn")]
    Knn,
    #[serde(rename = "pcgp-complete")]
    CompleteRows,
    #[serde(rename = "colgp")]
    ColGp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pcgpwm => "pcgpwm",
            Method::Knn => "pcgp-knn",
            Method::CompleteRows => "pcgp-complete",
            Method::ColGp => "colgp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub mechanism: Mechanism,
    pub rate: f64,
}

/// The nine mechanism x rate combinations.
pub fn scenario_grid() -> Vec<Scenario> {
    let mut out = Vec::new();
    for mechanism in [Mechanism::Mcar, Mechanism::Mnar, Mechanism::Mar] {
        for rate in [0.01, 0.05, 0.25] {
            out.push(Scenario { mechanism, rate });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub functions: Vec<TestFunction>,
    pub n_values: Vec<usize>,
    pub scenarios: Vec<Scenario>,
    pub replications: usize,
    pub methods: Vec<Method>,
    /// Number of output locations.
    pub m: usize,
    pub holdout: usize,
    pub knn_k: usize,
    pub level: f64,
    /// Wall-clock allowance per replication cell, in seconds.
    pub budget_seconds: f64,
    pub seed: u64,
    pub surrogate: SurrogateConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            functions: TestFunction::ALL.to_vec(),
            n_values: vec![50, 100, 250],
            scenarios: scenario_grid(),
            replications: 5,
            methods: vec![Method::Pcgpwm, Method::Knn, Method::CompleteRows, Method::ColGp],
            m: 15,
            holdout: 500,
            knn_k: 5,
            level: 0.9,
            budget_seconds: 3600.0,
            seed: 20240101,
            surrogate: SurrogateConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::InvalidInput(s));
        if self.functions.is_empty() || self.n_values.is_empty() || self.scenarios.is_empty() {
            return bad("functions, n_values and scenarios must be non-empty".into());
        }
        if self.methods.is_empty() {
            return bad("methods must be non-empty".into());
        }
        if let Some(n) = self.n_values.iter().find(|n| **n < 2) {
            return bad(format!("n_values entry {n} is below 2"));
        }
        if self.m == 0 || self.holdout == 0 || self.replications == 0 {
            return bad("m, holdout and replications must be positive".into());
        }
        if let Some(s) = self.scenarios.iter().find(|s| !(s.rate >= 0.0 && s.rate < 1.0)) {
            return bad(format!("scenario rate {} not in [0, 1)", s.rate));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level {} not in (0, 1)", self.level));
        }
        if !(self.budget_seconds > 0.0) {
            return bad("budget_seconds must be positive".into());
        }
        self.surrogate.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub function: TestFunction,
    pub method: Method,
    pub n: usize,
    pub mechanism: Mechanism,
    pub rate: f64,
    pub rep: usize,
    pub rmse: f64,
    pub coverage90: f64,
    pub width90: f64,
    pub fit_seconds: f64,
    pub status: String,
}

/// Training data and holdout for one replication cell.
pub struct CellData {
    pub train: SimulationDataset,
    /// Unit-cube parameters of the holdout runs.
    pub holdout_theta: DMatrix<f64>,
    /// Holdout responses with the same missingness applied.
    pub holdout_truth: DMatrix<f64>,
    /// Training responses before masking.
    pub train_full: DMatrix<f64>,
}

fn label(tf: TestFunction, parts: &[&dyn fmt::Display]) -> String {
    let mut s = tf.name().to_string();
    for p in parts {
        s.push('/');
        s.push_str(&p.to_string());
    }
    s
}

/// Locations drawn uniformly from the location ranges; shared by every
/// design size and scenario of a replication.
pub fn sample_locations(tf: TestFunction, m: usize, seed: u64, rep: usize) -> DMatrix<f64> {
    let mut r = rng::stream(seed, &label(tf, &[&"locations", &rep]), 0);
    let ranges = tf.x_ranges();
    DMatrix::from_fn(m, ranges.len(), |_, l| {
        let (lo, hi) = ranges[l];
        lo + r.random::<f64>() * (hi - lo)
    })
}

fn evaluate(tf: TestFunction, theta: &DMatrix<f64>, locs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(theta.nrows(), locs.nrows());
    for i in 0..theta.nrows() {
        let t: Vec<f64> = theta.row(i).iter().copied().collect();
        let t = tf.scale_theta(&t);
        for j in 0..locs.nrows() {
            let x: Vec<f64> = locs.row(j).iter().copied().collect();
            out[(i, j)] = tf.eval(&t, &x)?;
        }
    }
    Ok(out)
}

/// Build the seeded training set and holdout of one cell. Training and
/// holdout are masked together so a threshold or intercept is shared.
pub fn generate_cell(
    tf: TestFunction,
    n: usize,
    scenario: Scenario,
    rep: usize,
    cfg: &ExperimentConfig,
) -> Result<CellData> {
    let locs = sample_locations(tf, cfg.m, cfg.seed, rep);
    let design_seed = rng::child_seed(cfg.seed, &label(tf, &[&"design", &n, &rep]), 0);
    let theta = latin_hypercube(n, tf.d(), design_seed);
    let mut hr = rng::stream(cfg.seed, &label(tf, &[&"holdout", &rep]), 0);
    let holdout_theta = DMatrix::from_fn(cfg.holdout, tf.d(), |_, _| hr.random::<f64>());

    let train_full = evaluate(tf, &theta, &locs)?;
    let hold_full = evaluate(tf, &holdout_theta, &locs)?;
    let mut stacked = DMatrix::zeros(n + cfg.holdout, cfg.m);
    stacked.rows_mut(0, n).copy_from(&train_full);
    stacked.rows_mut(n, cfg.holdout).copy_from(&hold_full);

    let scheme = match tf.mnar_kind() {
        MnarKind::Logistic => MnarScheme::Logistic,
        MnarKind::Threshold => {
            let center = vec![0.5; tf.d()];
            let reference = evaluate(tf, &DMatrix::from_row_slice(1, tf.d(), &center), &locs)?;
            MnarScheme::Threshold {
                reference: reference.iter().copied().collect(),
            }
        }
    };
    let spec = MissingnessSpec {
        mechanism: scenario.mechanism,
        rate: scenario.rate,
        seed: rng::child_seed(
            cfg.seed,
            &label(tf, &[&"mask", &n, &scenario.mechanism, &scenario.rate, &rep]),
            0,
        ),
    };
    let mask = apply_missingness(&stacked, &spec, &scheme)?;
    let masked = mask_values(&stacked, &mask);
    let train = SimulationDataset::new(theta, locs, masked.rows(0, n).into_owned())?;
    Ok(CellData {
        train,
        holdout_theta,
        holdout_truth: masked.rows(n, cfg.holdout).into_owned(),
        train_full,
    })
}

/// Anything that predicts marginal means and variances on the response scale.
pub trait DiagPredictor: Sync {
    fn predict_diag(&self, theta_star: &[f64]) -> Result<(DVector<f64>, DVector<f64>)>;
}

impl DiagPredictor for Surrogate {
    fn predict_diag(&self, theta_star: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        Surrogate::predict_diag(self, theta_star)
    }
}

impl DiagPredictor for PlainPcgp {
    fn predict_diag(&self, theta_star: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        PlainPcgp::predict_diag(self, theta_star)
    }
}

impl DiagPredictor for ColGp {
    fn predict_diag(&self, theta_star: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        ColGp::predict_diag(self, theta_star)
    }
}

/// Predict every holdout row; returns (means, variances), each `n_h x m`.
pub fn predict_holdout(
    model: &dyn DiagPredictor,
    theta: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let rows: Vec<(DVector<f64>, DVector<f64>)> = (0..theta.nrows())
        .into_par_iter()
        .map(|i| {
            let t: Vec<f64> = theta.row(i).iter().copied().collect();
            model.predict_diag(&t)
        })
        .collect::<Result<_>>()?;
    let m = rows.first().map_or(0, |r| r.0.len());
    let mut mean = DMatrix::zeros(rows.len(), m);
    let mut var = DMatrix::zeros(rows.len(), m);
    for (i, (mu, v)) in rows.iter().enumerate() {
        mean.set_row(i, &mu.transpose());
        var.set_row(i, &v.transpose());
    }
    Ok((mean, var))
}

/// Fit one method on a cell and score it on the holdout.
pub fn evaluate_method(method: Method, cell: &CellData, cfg: &ExperimentConfig) -> Result<Metrics> {
    let sc = &cfg.surrogate;
    let model: Box<dyn DiagPredictor> = match method {
        Method::Pcgpwm => Box::new(fit_surrogate(&cell.train, sc)?),
        Method::Knn => Box::new(baseline_knn_impute(&cell.train, cfg.knn_k, sc)?),
        Method::CompleteRows => Box::new(baseline_complete_rows(&cell.train, sc)?),
        Method::ColGp => Box::new(ColGp::fit(&cell.train, sc)?),
    };
    let (mean, var) = predict_holdout(model.as_ref(), &cell.holdout_theta)?;
    metrics(&mean, &var, &cell.holdout_truth, cfg.level)
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    function: TestFunction,
    n: usize,
    scenario: Scenario,
    rep: usize,
}

fn run_cell(cell: Cell, cfg: &ExperimentConfig) -> Vec<ResultRow> {
    let row = |method: Method, m: Option<Metrics>, secs: f64, status: String| ResultRow {
        function: cell.function,
        method,
        n: cell.n,
        mechanism: cell.scenario.mechanism,
        rate: cell.scenario.rate,
        rep: cell.rep,
        rmse: m.map_or(f64::NAN, |m| m.rmse),
        coverage90: m.map_or(f64::NAN, |m| m.coverage),
        width90: m.map_or(f64::NAN, |m| m.width),
        fit_seconds: secs,
        status,
    };
    let start = Instant::now();
    let data = match generate_cell(cell.function, cell.n, cell.scenario, cell.rep, cfg) {
        Ok(d) => d,
        Err(e) => {
            return cfg
                .methods
                .iter()
                .map(|&m| row(m, None, 0.0, format!("data generation failed: {e}")))
                .collect()
        }
    };
    let mut out = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        if start.elapsed().as_secs_f64() > cfg.budget_seconds {
            out.push(row(method, None, 0.0, "budget exceeded".into()));
            continue;
        }
        let t0 = Instant::now();
        let res = evaluate_method(method, &data, cfg);
        let secs = t0.elapsed().as_secs_f64();
        out.push(match res {
            _ if start.elapsed().as_secs_f64() > cfg.budget_seconds => {
                row(method, None, secs, "budget exceeded".into())
            }
            Ok(m) => row(method, Some(m), secs, "ok".into()),
            Err(e) => {
                log::warn!(
                    "{} n={} {} {} rep {}: {method} failed: {e}",
                    cell.function,
                    cell.n,
                    cell.scenario.mechanism,
                    cell.scenario.rate,
                    cell.rep
                );
                row(method, None, secs, e.to_string())
            }
        });
    }
    out
}

/// Run every (function, n, scenario, replication) cell. Rows come back in
/// cell order regardless of scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &function in &cfg.functions {
        for &n in &cfg.n_values {
            for &scenario in &cfg.scenarios {
                for rep in 0..cfg.replications {
                    cells.push(Cell {
                        function,
                        n,
                        scenario,
                        rep,
                    });
                }
            }
        }
    }
    let rows: Vec<Vec<ResultRow>> = cells.par_iter().map(|&c| run_cell(c, cfg)).collect();
    Ok(rows.into_iter().flatten().collect())
}

pub fn write_results_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "function",
        "method",
        "n",
        "mechanism",
        "rate",
        "rep",
        "rmse",
        "coverage90",
        "width90",
        "fit_seconds",
        "status",
    ])
    .map_err(|e| Error::InvalidInput(format!("writing {}: {e}", path.display())))?;
    for r in rows {
        w.write_record([
            r.function.name().to_string(),
            r.method.name().to_string(),
            r.n.to_string(),
            r.mechanism.name().to_string(),
            r.rate.to_string(),
            r.rep.to_string(),
            r.rmse.to_string(),
            r.coverage90.to_string(),
            r.width90.to_string(),
            format!("{:.3}", r.fit_seconds),
            r.status.clone(),
        ])
        .map_err(|e| Error::InvalidInput(format!("writing {}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_nine_scenarios() {
        let g = scenario_grid();
        assert_eq!(g.len(), 9);
        for mech in [Mechanism::Mcar, Mechanism::Mnar, Mechanism::Mar] {
            let rates: Vec<f64> = g.iter().filter(|s| s.mechanism == mech).map(|s| s.rate).collect();
            assert_eq!(rates, vec![0.01, 0.05, 0.25]);
        }
    }

    #[test]
    fn default_m_is_fifteen_and_locations_in_range() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.m, 15);
        for tf in TestFunction::ALL {
            let locs = sample_locations(tf, cfg.m, 1, 0);
            for j in 0..cfg.m {
                for (l, (lo, hi)) in tf.x_ranges().iter().enumerate() {
                    assert!(locs[(j, l)] >= *lo && locs[(j, l)] <= *hi);
                }
            }
        }
    }

    #[test]
    fn cell_generation_is_deterministic() {
        let cfg = ExperimentConfig {
            holdout: 20,
            ..Default::default()
        };
        let s = Scenario {
            mechanism: Mechanism::Mnar,
            rate: 0.05,
        };
        let a = generate_cell(TestFunction::Borehole, 30, s, 1, &cfg).unwrap();
        let b = generate_cell(TestFunction::Borehole, 30, s, 1, &cfg).unwrap();
        assert_eq!(a.train.responses().map(|v| v.to_bits()), b.train.responses().map(|v| v.to_bits()));
        assert_eq!(a.holdout_truth.map(|v| v.to_bits()), b.holdout_truth.map(|v| v.to_bits()));
    }

    #[test]
    fn config_rejects_unknown_fields() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"replicates": 3}"#);
        assert!(err.is_err());
        let ok: ExperimentConfig = serde_json::from_str(r#"{"replications": 3}"#).unwrap();
        assert_eq!(ok.replications, 3);
        assert_eq!(ok.m, 15);
    }
}
