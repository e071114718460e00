use std::path::Path;

use nalgebra::{DMatrix, DVector};
use pcgpwm::bench::{knn_impute, run_experiment, write_results_csv, ExperimentConfig, DESK_CONFIG};
use pcgpwm::calibration::{
    posterior_summary, prior_interval_width, ptlmc_sample, CalibrationProblem, PtlmcConfig,
};
use pcgpwm::data::{load_dataset, read_matrix_csv, standardize, SimulationDataset};
use pcgpwm::gp::{fit_surrogate, Surrogate, SurrogateConfig};
use pcgpwm::pca::{em_subspace, EmConfig};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::io::{ensure_dir, parse_json, read_json, require_file, write_json, write_matrix_csv};
use crate::{input, BenchmarkArgs, CalibrateArgs, Cli, CliError, Command, DataArgs, FitArgs, Global, ImputeArgs, ImputeMethod, PredictArgs};

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    library_version: &'static str,
    command: &'a str,
    seed: Option<u64>,
    threads: usize,
    inputs: Value,
    config: Value,
    outputs: Vec<String>,
}

fn write_manifest(
    g: &Global,
    command: &str,
    inputs: Value,
    config: Value,
    outputs: &[&str],
) -> Result<(), CliError> {
    let m = Manifest {
        tool: "pcgpwm",
        version: env!("CARGO_PKG_VERSION"),
        library_version: pcgpwm::VERSION,
        command,
        seed: g.seed,
        threads: rayon::current_num_threads(),
        inputs,
        config,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    write_json(&g.out_dir.join("manifest.json"), &m)
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    ensure_dir(&cli.global.out_dir)?;
    match &cli.command {
        Command::Fit(a) => fit(&cli.global, a),
        Command::Predict(a) => predict(&cli.global, a),
        Command::Calibrate(a) => calibrate(&cli.global, a),
        Command::Benchmark(a) => benchmark(&cli.global, a),
        Command::Impute(a) => impute(&cli.global, a),
    }
}

fn load_data(d: &DataArgs) -> Result<SimulationDataset, CliError> {
    for p in [&d.theta, &d.locations, &d.responses] {
        require_file(p)?;
    }
    Ok(load_dataset(&d.theta, &d.locations, &d.responses)?)
}

fn data_inputs(d: &DataArgs) -> Value {
    json!({ "theta": d.theta, "locations": d.locations, "responses": d.responses })
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Internal(e.into()))
}

fn load_model(path: &Path) -> Result<Surrogate, CliError> {
    require_file(path)?;
    Ok(Surrogate::load(path)?)
}

fn fit(g: &Global, a: &FitArgs) -> Result<(), CliError> {
    let mut cfg: SurrogateConfig = match &a.config {
        Some(p) => {
            require_file(p)?;
            read_json(p)?
        }
        None => SurrogateConfig::default(),
    };
    if let Some(v) = a.variance_fraction {
        cfg.variance_fraction = v;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.eta {
        cfg.eta = v;
    }
    if let Some(v) = a.restarts {
        cfg.restarts = v;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let ds = load_data(&a.data)?;
    log::info!(
        "{} runs x {} outputs, {:.1}% missing",
        ds.n_runs(),
        ds.n_outputs(),
        100.0 * ds.missing_fraction()
    );
    let sur = fit_surrogate(&ds, &cfg)?;
    log::info!("kappa = {}", sur.kappa());
    sur.save(&g.out_dir.join("model.json"))?;
    write_json(&g.out_dir.join("fit_report.json"), &sur.report)?;
    let mut inputs = data_inputs(&a.data);
    inputs["config"] = json!(a.config);
    write_manifest(g, "fit", inputs, to_value(&cfg)?, &["model.json", "fit_report.json"])
}

fn predict(g: &Global, a: &PredictArgs) -> Result<(), CliError> {
    let sur = load_model(&a.model)?;
    require_file(&a.theta)?;
    let theta = read_matrix_csv(&a.theta)?;
    let m = sur.n_outputs;
    if theta.nrows() > 0 && theta.ncols() != sur.param_dim() {
        return Err(input(format!(
            "{} has {} columns, model expects {} parameters",
            a.theta.display(),
            theta.ncols(),
            sur.param_dim()
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(input(format!("{} contains missing or non-finite values", a.theta.display())));
    }
    let rows: Vec<(DVector<f64>, DVector<f64>)> = (0..theta.nrows())
        .into_par_iter()
        .map(|i| {
            let t: Vec<f64> = theta.row(i).iter().copied().collect();
            sur.predict_diag(&t)
        })
        .collect::<pcgpwm::Result<_>>()?;
    let mut out = DMatrix::zeros(rows.len(), 2 * m);
    for (i, (mu, var)) in rows.iter().enumerate() {
        for j in 0..m {
            out[(i, j)] = mu[j];
            out[(i, m + j)] = var[j].max(0.0).sqrt();
        }
    }
    let header: Vec<String> = (0..m)
        .map(|j| format!("mean_{j}"))
        .chain((0..m).map(|j| format!("std_{j}")))
        .collect();
    write_matrix_csv(&g.out_dir.join("predictions.csv"), &header, &out)?;
    write_manifest(
        g,
        "predict",
        json!({ "model": a.model, "theta": a.theta }),
        Value::Null,
        &["predictions.csv"],
    )
}

fn read_observations(a: &CalibrateArgs, m: usize) -> Result<(DVector<f64>, DVector<f64>), CliError> {
    require_file(&a.observations)?;
    let obs = read_matrix_csv(&a.observations)?;
    if obs.nrows() != m {
        return Err(input(format!(
            "{} has {} rows, model has {m} outputs",
            a.observations.display(),
            obs.nrows()
        )));
    }
    let y = obs.column(0).into_owned();
    let w = match (obs.ncols(), a.noise_var) {
        (1, Some(v)) => DVector::from_element(m, v),
        (1, None) => return Err(input("observations have no variance column; pass --noise-var")),
        (2, None) => obs.column(1).into_owned(),
        (2, Some(_)) => return Err(input("--noise-var conflicts with the variance column")),
        (c, _) => {
            return Err(input(format!(
                "{} has {c} columns, expected observation and optional variance",
                a.observations.display()
            )))
        }
    };
    Ok((y, w))
}

fn calibrate(g: &Global, a: &CalibrateArgs) -> Result<(), CliError> {
    let sur = load_model(&a.model)?;
    let design = sur.design();
    if design.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(input("calibration needs a model whose parameters were scaled to [0, 1]"));
    }
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(input(format!("--level {} not in (0, 1)", a.level)));
    }
    let (y, w) = read_observations(a, sur.n_outputs)?;
    let prob = CalibrationProblem::new(y, w, &sur)?;
    let cfg = PtlmcConfig {
        n_samples: a.samples,
        n_temps: a.temps,
        burn_in: a.burnin,
        t_max: a.t_max,
        seed: g.seed.unwrap_or(0),
        ..Default::default()
    };
    let chain = ptlmc_sample(&prob, &cfg)?;
    let d = sur.param_dim();
    let mut table = DMatrix::zeros(chain.samples.nrows(), d + 1);
    table.columns_mut(0, d).copy_from(&chain.samples);
    for (i, lp) in chain.log_post.iter().enumerate() {
        table[(i, d)] = *lp;
    }
    let header: Vec<String> = (0..d)
        .map(|l| format!("theta_{l}"))
        .chain(std::iter::once("log_post".to_string()))
        .collect();
    write_matrix_csv(&g.out_dir.join("chain.csv"), &header, &table)?;

    let prior_width = prior_interval_width(a.level);
    let params: Vec<Value> = posterior_summary(&chain.samples, a.level)?
        .iter()
        .enumerate()
        .map(|(l, s)| {
            json!({
                "index": l,
                "mean": s.mean,
                "lower": s.lo,
                "upper": s.hi,
                "width": s.width,
                "relative_width": s.width / prior_width,
            })
        })
        .collect();
    let summary = json!({
        "level": a.level,
        "prior_width": prior_width,
        "parameters": params,
        "temperatures": chain.temperatures,
        "step_sizes": chain.step_sizes,
        "acceptance_rates": chain.acceptance_rates,
        "swap_rates": chain.swap_rates,
    });
    write_json(&g.out_dir.join("summary.json"), &summary)?;
    let mut config = to_value(&cfg)?;
    config["level"] = json!(a.level);
    config["noise_var"] = json!(a.noise_var);
    write_manifest(
        g,
        "calibrate",
        json!({ "model": a.model, "observations": a.observations }),
        config,
        &["chain.csv", "summary.json"],
    )
}

fn benchmark(g: &Global, a: &BenchmarkArgs) -> Result<(), CliError> {
    let (mut cfg, source): (ExperimentConfig, Value) = match &a.config {
        Some(p) => {
            require_file(p)?;
            (read_json(p)?, json!(p))
        }
        None => (
            parse_json(DESK_CONFIG).map_err(|e| CliError::Internal(anyhow::anyhow!("bundled config: {e}")))?,
            json!("<bundled desk config>"),
        ),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let rows = run_experiment(&cfg)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    if failed > 0 {
        log::warn!("{failed} of {} fits did not finish; see the status column", rows.len());
    }
    write_results_csv(&rows, &g.out_dir.join("results.csv"))?;
    write_manifest(g, "benchmark", json!({ "config": source }), to_value(&cfg)?, &["results.csv"])
}

fn impute(g: &Global, a: &ImputeArgs) -> Result<(), CliError> {
    let ds = load_data(&a.data)?;
    let completed = match a.method {
        ImputeMethod::Knn => knn_impute(&ds, a.k)?.responses().clone(),
        ImputeMethod::Em => em_fill(&ds, a.variance_fraction)?,
    };
    let header: Vec<String> = (0..ds.n_outputs()).map(|j| format!("output_{j}")).collect();
    write_matrix_csv(&g.out_dir.join("completed.csv"), &header, &completed)?;
    let config = json!({
        "method": format!("{:?}", a.method).to_lowercase(),
        "variance_fraction": a.variance_fraction,
        "k": a.k,
    });
    write_manifest(g, "impute", data_inputs(&a.data), config, &["completed.csv"])
}

/// Conditional-mean fill from the missing-data principal components.
/// All-missing columns and rows stay missing.
fn em_fill(ds: &SimulationDataset, variance_fraction: f64) -> Result<DMatrix<f64>, CliError> {
    let empty = ds.empty_columns();
    let kept: Vec<usize> = (0..ds.n_outputs()).filter(|j| !empty.contains(j)).collect();
    let sub = ds.select_columns(&kept)?;
    let (std_ds, stats) = standardize(&sub)?;
    let cfg = EmConfig {
        variance_fraction,
        ..Default::default()
    };
    let em = em_subspace(std_ds.responses(), &cfg)?;
    let filled = stats.destandardize_matrix(&em.completed);
    let mut out = ds.responses().clone();
    for i in 0..ds.n_runs() {
        let empty_row = (0..kept.len()).all(|a| std_ds.is_missing(i, a));
        for (a, &j) in kept.iter().enumerate() {
            if out[(i, j)].is_nan() && !empty_row {
                out[(i, j)] = filled[(i, a)];
            }
        }
    }
    Ok(out)
}
