//! The `fit.json` record and the plain-text estimate table. JSON has no
//! infinities or NaN, so non-finite numbers are written as `null`.

use fusesdm::estimation::{FitResult, FitStatus, Termination};
use fusesdm::likelihoods::Scenario;
use serde::{Deserialize, Serialize};

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterRow {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl ParameterRow {
    pub fn width(&self) -> Option<f64> {
        Some(self.upper? - self.lower?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub scenario: Scenario,
    pub status: FitStatus,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub evaluations: usize,
    pub loglik: f64,
    /// Covariate layer names, in the order of `beta[1..]`.
    pub covariates: Vec<String>,
    pub beta: Vec<f64>,
    pub phi: Option<f64>,
    pub theta: Option<f64>,
    /// Working-scale estimates with Wald intervals.
    pub parameters: Vec<ParameterRow>,
    /// `λ̄` and `log λ̄` with delta-method intervals.
    pub lambda_bar: ParameterRow,
    pub log_lambda_bar: ParameterRow,
    pub boundary: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitFile {
    /// `[xmin, ymin, xmax, ymax]` of the region `λ̄` integrates over.
    pub region: [f64; 4],
    pub n_ds: usize,
    pub n_cr: usize,
    pub fits: Vec<FitReport>,
}

impl FitReport {
    pub fn new(fit: &FitResult, covariates: &[String], uses_ds: bool, uses_cr: bool) -> Self {
        let working = &fit.working;
        let parameters = fit
            .names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let estimate = match name.as_str() {
                    "log_phi" => working.log_phi,
                    "logit_theta" => working.logit_theta,
                    _ => working.beta[name.trim_start_matches("beta").parse::<usize>().unwrap_or(0)],
                };
                let ci = fit.has_covariance().then(|| fit.ci[i]);
                ParameterRow {
                    name: name.clone(),
                    estimate,
                    se: finite(fit.se[i]),
                    lower: ci.and_then(|c| finite(c.lower)),
                    upper: ci.and_then(|c| finite(c.upper)),
                }
            })
            .collect();
        let lb = fit.lambda_bar.as_ref();
        FitReport {
            scenario: fit.scenario,
            status: fit.status,
            converged: fit.converged,
            termination: fit.termination,
            iterations: fit.iterations,
            evaluations: fit.evaluations,
            loglik: fit.loglik,
            covariates: covariates.to_vec(),
            beta: working.beta.clone(),
            phi: uses_ds.then_some(fit.params.phi),
            theta: uses_cr.then_some(fit.params.theta),
            parameters,
            lambda_bar: ParameterRow {
                name: "lambda_bar".into(),
                estimate: fit.lambda_bar_estimate,
                se: lb.and_then(|d| finite(d.se)),
                lower: lb.and_then(|d| finite(d.interval.lower)),
                upper: lb.and_then(|d| finite(d.interval.upper)),
            },
            log_lambda_bar: ParameterRow {
                name: "log_lambda_bar".into(),
                estimate: fit.lambda_bar_estimate.ln(),
                se: lb.and_then(|d| finite(d.log_se)),
                lower: lb.and_then(|d| finite(d.log_interval.lower)),
                upper: lb.and_then(|d| finite(d.log_interval.upper)),
            },
            boundary: fit.boundary.clone(),
        }
    }

    pub fn parameter(&self, name: &str) -> Option<&ParameterRow> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

/// Estimates and interval widths of `β0`, `β1` and `log λ̄`, one row per model.
pub fn estimate_table(fits: &[FitReport]) -> String {
    let mut out = format!(
        "{:<18}{:>12}{:>10}{:>12}{:>10}{:>14}{:>10}  {}\n",
        "model", "beta0", "width", "beta1", "width", "log_lambda", "width", "status"
    );
    for f in fits {
        let b0 = f.parameter("beta0");
        let b1 = f.parameter("beta1");
        out.push_str(&format!(
            "{:<18}{:>12}{:>10}{:>12}{:>10}{:>14}{:>10}  {}\n",
            f.scenario.as_str(),
            cell(b0.map(|p| p.estimate)),
            cell(b0.and_then(ParameterRow::width)),
            cell(b1.map(|p| p.estimate)),
            cell(b1.and_then(ParameterRow::width)),
            cell(Some(f.log_lambda_bar.estimate)),
            cell(f.log_lambda_bar.width()),
            status_name(f.status),
        ));
    }
    out
}

pub fn status_name(s: FitStatus) -> &'static str {
    match s {
        FitStatus::Ok => "ok",
        FitStatus::Boundary => "boundary",
        FitStatus::Singular => "singular",
        FitStatus::NotConverged => "not-converged",
    }
}
