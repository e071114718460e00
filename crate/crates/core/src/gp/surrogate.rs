use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::component::{fit_component, ComponentGP, FitOptions};
use super::kernel::{variance_inflation, KernelHyper};
use crate::data::{standardize, SimulationDataset, StandardizationStats};
use crate::error::{Error, Result};
use crate::imputation::impute_all;
use crate::linalg::{matrix_serde, symmetrize};
use crate::pca::{em_subspace, EmConfig, PrincipalSubspace};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub variance_fraction: f64,
    pub alpha: f64,
    pub eta: f64,
    pub restarts: usize,
    pub eps_m: f64,
    pub em_max_iter: usize,
    pub em_tol: f64,
    pub opt_max_iter: usize,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            variance_fraction: 0.995,
            alpha: 0.3,
            eta: 10.0,
            restarts: 4,
            eps_m: 1e-5,
            em_max_iter: 200,
            em_tol: 1e-6,
            opt_max_iter: 200,
            seed: 0,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(what.to_string()));
        if !(self.variance_fraction > 0.0 && self.variance_fraction <= 1.0) {
            return bad("variance_fraction must lie in (0, 1]");
        }
        if !(self.alpha > 0.0) || !(self.eta > 0.0) {
            return bad("alpha and eta must be positive");
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        if !(self.eps_m > 0.0) {
            return bad("eps_m must be positive");
        }
        Ok(())
    }
}

/// Hyperparameters of one component, as fitted or as supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentHyper {
    pub hyper: KernelHyper,
    pub beta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentReport {
    pub lambda: f64,
    pub lengthscales: Vec<f64>,
    pub nugget: f64,
    pub beta: f64,
    pub log_lik: f64,
    pub max_w: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub n_runs: usize,
    pub n_outputs: usize,
    pub dropped_columns: Vec<usize>,
    pub missing_fraction: f64,
    pub kappa: usize,
    pub lambda: Vec<f64>,
    pub epsilon: f64,
    pub em_iterations: usize,
    pub em_converged: bool,
    pub components: Vec<ComponentReport>,
}

/// Mean vector and full covariance on the original response scale.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Fitted multivariate surrogate.
#[derive(Debug, Clone)]
pub struct Surrogate {
    pub subspace: PrincipalSubspace,
    pub stats: StandardizationStats,
    pub components: Vec<ComponentGP>,
    pub alpha_infl: f64,
    pub eta_cap: f64,
    /// Original indices of the modeled response columns.
    pub kept_columns: Vec<usize>,
    pub n_outputs: usize,
    pub report: FitReport,
}

struct Prepared {
    theta: Arc<DMatrix<f64>>,
    kept: Vec<usize>,
    stats: StandardizationStats,
    subspace: PrincipalSubspace,
    g: DMatrix<f64>,
    v: DMatrix<f64>,
    w: DMatrix<f64>,
    em_iterations: usize,
    em_converged: bool,
}

fn prepare(ds: &SimulationDataset, cfg: &SurrogateConfig) -> Result<Prepared> {
    cfg.validate()?;
    let m = ds.n_outputs();
    let empty = ds.empty_columns();
    let kept: Vec<usize> = (0..m).filter(|j| !empty.contains(j)).collect();
    if kept.is_empty() {
        return Err(Error::InvalidInput("every response column is missing".into()));
    }
    let ds_kept = if empty.is_empty() {
        ds.clone()
    } else {
        log::warn!("dropping {} response columns with no available entries", empty.len());
        ds.select_columns(&kept)?
    };
    let (std_ds, stats) = standardize(&ds_kept)?;
    let em = em_subspace(
        std_ds.responses(),
        &EmConfig {
            variance_fraction: cfg.variance_fraction,
            eps_m: cfg.eps_m,
            max_iter: cfg.em_max_iter,
            tol: cfg.em_tol,
        },
    )?;
    let subspace = em.subspace;
    let imputed = impute_all(&std_ds, &subspace)?;
    let v = imputed.w.map(|w| variance_inflation(w, cfg.alpha, cfg.eta));
    Ok(Prepared {
        theta: Arc::new(ds.theta().clone()),
        kept,
        stats,
        subspace,
        g: imputed.g_tilde,
        v,
        w: imputed.w,
        em_iterations: em.iterations,
        em_converged: em.converged,
    })
}

fn assemble(
    ds: &SimulationDataset,
    cfg: &SurrogateConfig,
    p: Prepared,
    components: Vec<ComponentGP>,
) -> Surrogate {
    let m = ds.n_outputs();
    let report = FitReport {
        n_runs: ds.n_runs(),
        n_outputs: m,
        dropped_columns: (0..m).filter(|j| !p.kept.contains(j)).collect(),
        missing_fraction: ds.missing_fraction(),
        kappa: p.subspace.kappa(),
        lambda: p.subspace.lambda.clone(),
        epsilon: p.subspace.epsilon,
        em_iterations: p.em_iterations,
        em_converged: p.em_converged,
        components: components
            .iter()
            .enumerate()
            .map(|(k, c)| ComponentReport {
                lambda: c.lambda,
                lengthscales: c.hyper.lengthscales(),
                nugget: c.hyper.nugget(),
                beta: c.beta,
                log_lik: -c.nll,
                max_w: p.w.column(k).max(),
            })
            .collect(),
    };
    Surrogate {
        subspace: p.subspace,
        stats: p.stats,
        components,
        alpha_infl: cfg.alpha,
        eta_cap: cfg.eta,
        kept_columns: p.kept,
        n_outputs: m,
        report,
    }
}

/// Standardize, estimate the subspace, impute the projections and fit the
/// component GPs.
pub fn fit_surrogate(ds: &SimulationDataset, cfg: &SurrogateConfig) -> Result<Surrogate> {
    let p = prepare(ds, cfg)?;
    let components = (0..p.subspace.kappa())
        .into_par_iter()
        .map(|k| {
            let opts = FitOptions {
                alpha: cfg.alpha,
                eta: cfg.eta,
                restarts: cfg.restarts,
                seed: rng::child_seed(cfg.seed, "component", k as u64),
                max_iter: cfg.opt_max_iter,
            };
            let w = p.w.column(k).into_owned();
            fit_component(
                &p.g.column(k).into_owned(),
                &w,
                p.subspace.lambda[k],
                p.theta.clone(),
                &opts,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(ds, cfg, p, components))
}

/// Same pipeline with the component hyperparameters supplied instead of
/// optimized. `hypers` must have one entry per retained component.
pub fn fit_surrogate_with_hypers(
    ds: &SimulationDataset,
    cfg: &SurrogateConfig,
    hypers: &[ComponentHyper],
) -> Result<Surrogate> {
    let p = prepare(ds, cfg)?;
    if hypers.len() != p.subspace.kappa() {
        return Err(Error::Dimension(format!(
            "{} hyperparameter sets for {} components",
            hypers.len(),
            p.subspace.kappa()
        )));
    }
    let components = hypers
        .par_iter()
        .enumerate()
        .map(|(k, h)| {
            ComponentGP::from_hypers(
                p.theta.clone(),
                p.g.column(k).into_owned(),
                p.v.column(k).into_owned(),
                p.subspace.lambda[k],
                h.hyper.clone(),
                h.beta,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(ds, cfg, p, components))
}

impl Surrogate {
    pub fn kappa(&self) -> usize {
        self.components.len()
    }

    /// Training parameters, one run per row.
    pub fn design(&self) -> &DMatrix<f64> {
        self.components[0].theta()
    }

    pub fn param_dim(&self) -> usize {
        self.components[0].theta().ncols()
    }

    pub fn hypers(&self) -> Vec<ComponentHyper> {
        self.components
            .iter()
            .map(|c| ComponentHyper {
                hyper: c.hyper.clone(),
                beta: c.beta,
            })
            .collect()
    }

    fn check_dim(&self, theta_star: &[f64]) -> Result<()> {
        if theta_star.len() != self.param_dim() {
            return Err(Error::Dimension(format!(
                "parameter vector has {} entries, model expects {}",
                theta_star.len(),
                self.param_dim()
            )));
        }
        Ok(())
    }

    /// Component means and variances at `theta_star`.
    pub fn predict_components(&self, theta_star: &[f64]) -> Result<Vec<(f64, f64)>> {
        self.check_dim(theta_star)?;
        Ok(self.components.iter().map(|c| c.predict(theta_star)).collect())
    }

    /// Mean and covariance on the standardized scale over the kept columns.
    pub fn predict_standardized(&self, theta_star: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let comps = self.predict_components(theta_star)?;
        let mu = DVector::from_iterator(comps.len(), comps.iter().map(|c| c.0));
        let var = DVector::from_iterator(comps.len(), comps.iter().map(|c| c.1));
        let phi = &self.subspace.phi;
        let mean = phi * mu;
        let scaled = phi * DMatrix::from_diagonal(&var);
        let mut cov = scaled * phi.transpose();
        symmetrize(&mut cov);
        Ok((mean, cov))
    }

    /// Mean and covariance on the response scale. Columns dropped at fit
    /// time carry `NaN`.
    pub fn predict(&self, theta_star: &[f64]) -> Result<Prediction> {
        let (mean_s, cov_s) = self.predict_standardized(theta_star)?;
        let m = self.n_outputs;
        let mut mean = DVector::from_element(m, f64::NAN);
        let mut cov = DMatrix::from_element(m, m, f64::NAN);
        let s = &self.stats;
        for (a, &ja) in self.kept_columns.iter().enumerate() {
            mean[ja] = s.col_center[a] + s.col_scale[a] * mean_s[a];
            for (b, &jb) in self.kept_columns.iter().enumerate() {
                cov[(ja, jb)] = s.col_scale[a] * s.col_scale[b] * cov_s[(a, b)];
            }
        }
        Ok(Prediction { mean, cov })
    }

    /// Mean and marginal variances on the response scale.
    pub fn predict_diag(&self, theta_star: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        let low = self.predict_low_rank(theta_star)?;
        let var = DVector::from_fn(self.n_outputs, |j, _| {
            if low.mean[j].is_nan() {
                f64::NAN
            } else {
                (0..low.var.len()).map(|k| low.basis[(j, k)].powi(2) * low.var[k]).sum()
            }
        });
        Ok((low.mean, var))
    }

    /// Mean with the covariance kept in factored form `basis diag(var) basis^T`.
    pub fn predict_low_rank(&self, theta_star: &[f64]) -> Result<LowRankPrediction> {
        let comps = self.predict_components(theta_star)?;
        let k = comps.len();
        let m = self.n_outputs;
        let mut mean = DVector::from_element(m, f64::NAN);
        let mut basis = DMatrix::zeros(m, k);
        let s = &self.stats;
        for (a, &j) in self.kept_columns.iter().enumerate() {
            let mut mu = 0.0;
            for (c, comp) in comps.iter().enumerate() {
                let phi = self.subspace.phi[(a, c)];
                mu += phi * comp.0;
                basis[(j, c)] = s.col_scale[a] * phi;
            }
            mean[j] = s.col_center[a] + s.col_scale[a] * mu;
        }
        let var = DVector::from_iterator(k, comps.iter().map(|c| c.1));
        Ok(LowRankPrediction { mean, basis, var })
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = SurrogateDoc {
            format: FORMAT.into(),
            n_outputs: self.n_outputs,
            kept_columns: self.kept_columns.clone(),
            alpha: self.alpha_infl,
            eta: self.eta_cap,
            theta: self.components[0].theta().clone(),
            subspace: self.subspace.clone(),
            stats: self.stats.clone(),
            components: self
                .components
                .iter()
                .map(|c| ComponentDoc {
                    hyper: c.hyper.clone(),
                    beta: c.beta,
                    lambda: c.lambda,
                    g: c.g.iter().copied().collect(),
                    v: c.v.iter().copied().collect(),
                })
                .collect(),
            report: self.report.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SurrogateDoc = serde_json::from_str(text)?;
        if doc.format != FORMAT {
            return Err(Error::InvalidInput(format!("unknown model format {:?}", doc.format)));
        }
        doc.subspace.validate()?;
        if doc.components.len() != doc.subspace.kappa() || doc.components.is_empty() {
            return Err(Error::InvalidInput(format!(
                "model has {} components for a rank-{} basis",
                doc.components.len(),
                doc.subspace.kappa()
            )));
        }
        if doc.kept_columns.len() != doc.subspace.n_outputs()
            || doc.stats.n_outputs() != doc.kept_columns.len()
            || doc.kept_columns.iter().any(|&j| j >= doc.n_outputs)
        {
            return Err(Error::InvalidInput("model column bookkeeping is inconsistent".into()));
        }
        let theta = Arc::new(doc.theta);
        let components = doc
            .components
            .into_iter()
            .map(|c| {
                ComponentGP::from_hypers(
                    theta.clone(),
                    DVector::from_vec(c.g),
                    DVector::from_vec(c.v),
                    c.lambda,
                    c.hyper,
                    c.beta,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Surrogate {
            subspace: doc.subspace,
            stats: doc.stats,
            components,
            alpha_infl: doc.alpha,
            eta_cap: doc.eta,
            kept_columns: doc.kept_columns,
            n_outputs: doc.n_outputs,
            report: doc.report,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Mean with covariance `basis diag(var) basis^T` on the response scale.
#[derive(Debug, Clone)]
pub struct LowRankPrediction {
    pub mean: DVector<f64>,
    pub basis: DMatrix<f64>,
    pub var: DVector<f64>,
}

const FORMAT: &str = "pcgpwm-surrogate/1";

#[derive(Serialize, Deserialize)]
struct ComponentDoc {
    hyper: KernelHyper,
    beta: f64,
    lambda: f64,
    g: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SurrogateDoc {
    format: String,
    n_outputs: usize,
    kept_columns: Vec<usize>,
    alpha: f64,
    eta: f64,
    #[serde(with = "matrix_serde")]
    theta: DMatrix<f64>,
    subspace: PrincipalSubspace,
    stats: StandardizationStats,
    components: Vec<ComponentDoc>,
    report: FitReport,
}
