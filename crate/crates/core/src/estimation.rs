//! Maximum-likelihood fitting: a Nelder–Mead simplex minimiser, a
//! central-difference Hessian, Wald intervals and delta-method inference on
//! the expected abundance `λ̄ = ∫ exp(x(s)'β) ds`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::covariates::CovariateField;
use crate::error::{Error, Result};
use crate::geometry::StudyRegion;
use crate::likelihoods::{LikelihoodSpec, ParamLayout, PreparedLikelihood, Scenario, WorkingParams};
use crate::par::Execution;
use crate::pointprocess::ModelParams;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NelderMeadOptions {
    /// Stop when `f_worst − f_best ≤ ftol (|f_best| + ftol)`.
    pub ftol: f64,
    /// Stop when every vertex is within `xtol (1 + |x_best|_∞)` of the best
    /// one in every coordinate.
    pub xtol: f64,
    pub max_iter: usize,
    /// Initial simplex edge as a fraction of the largest start coordinate
    /// (or absolute when the start is all zeros).
    pub step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { ftol: 1.490_116_119_384_765_6e-8, xtol: 1e-10, max_iter: 5000, step: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    FunctionSpread,
    SimplexSize,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub argmin: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Best value after each iteration.
    pub trace: Vec<f64>,
}

impl NelderMeadResult {
    pub fn converged(&self) -> bool {
        self.termination != Termination::MaxIterations
    }
}

/// Minimises `f` with the reflect/expand/contract/shrink simplex method
/// (coefficients 1, 2, ½, ½). Non-finite values count as `+∞`.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    start: &[f64],
    opts: &NelderMeadOptions,
) -> Result<NelderMeadResult> {
    let n = start.len();
    let mut evaluations = 0;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let f0 = eval(start);
    if !f0.is_finite() {
        return Err(Error::NonFiniteStart);
    }
    let scale = start.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let step = if scale > 0.0 { opts.step * scale } else { opts.step };
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(start.to_vec(), f0)];
    for i in 0..n {
        let mut x = start.to_vec();
        x[i] += step;
        let v = eval(&x);
        simplex.push((x, v));
    }

    let mut trace = Vec::new();
    let mut iterations = 0;
    let termination = loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = worst - best;
        if spread > 0.0 && spread <= opts.ftol * (best.abs() + opts.ftol) {
            break Termination::FunctionSpread;
        }
        let x0 = &simplex[0].0;
        let tol = opts.xtol * (1.0 + x0.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let size =
            simplex[1..].iter().flat_map(|(x, _)| x.iter().zip(x0).map(|(a, b)| (a - b).abs())).fold(0.0f64, f64::max);
        if size <= tol {
            break Termination::SimplexSize;
        }
        if iterations >= opts.max_iter {
            break Termination::MaxIterations;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64, towards: &[f64]| -> Vec<f64> {
            centroid.iter().zip(towards).map(|(c, w)| c + t * (w - c)).collect()
        };
        let xr = along(-1.0, &simplex[n].0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0, &simplex[n].0);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(-0.5, &simplex[n].0);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5, &simplex[n].0);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x0 = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = x0.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    let v = eval(&x);
                    *vertex = (x, v);
                }
            }
        }
        trace.push(simplex.iter().map(|v| v.1).fold(f64::INFINITY, f64::min));
    };
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (argmin, value) = simplex.swap_remove(0);
    Ok(NelderMeadResult { argmin, value, iterations, evaluations, termination, trace })
}

/// Default per-coordinate Hessian steps, `1e-4 · max(1, |x_i|)`.
pub fn default_steps(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect()
}

/// Central second differences, symmetrised.
pub fn numerical_hessian(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], steps: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let f0 = f(x);
    let mut h = DMatrix::zeros(n, n);
    let mut at = |di: (usize, f64), dj: Option<(usize, f64)>| {
        let mut y = x.to_vec();
        y[di.0] += di.1;
        if let Some((j, d)) = dj {
            y[j] += d;
        }
        f(&y)
    };
    for i in 0..n {
        let hi = steps[i];
        let up = at((i, hi), None);
        let dn = at((i, -hi), None);
        h[(i, i)] = (up - 2.0 * f0 + dn) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let pp = at((i, hi), Some((j, hj)));
            let pm = at((i, hi), Some((j, -hj)));
            let mp = at((i, -hi), Some((j, hj)));
            let mm = at((i, -hi), Some((j, -hj)));
            let v = (pp - pm - mp + mm) / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    (&h + h.transpose()) * 0.5
}

/// Closed interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    fn unbounded() -> Self {
        Interval { lower: f64::NEG_INFINITY, upper: f64::INFINITY }
    }
}

/// Standard normal quantile for a two-sided interval at `level`.
pub fn z_value(level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + level / 2.0)
}

pub fn wald_ci(estimate: f64, se: f64, level: f64) -> Result<Interval> {
    if !(se >= 0.0) {
        return Err(Error::Data(format!("standard error must be non-negative, got {se}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level must lie in (0, 1), got {level}")));
    }
    if se.is_infinite() {
        return Ok(Interval::unbounded());
    }
    let half = z_value(level) * se;
    Ok(Interval { lower: estimate - half, upper: estimate + half })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abundance {
    pub value: f64,
    /// `∂λ̄/∂β_j = ∫ x_j exp(x'β)`, with `x_0 = 1`.
    pub gradient: Vec<f64>,
}

/// `λ̄` by exact summation over the field's cells inside the region.
pub fn abundance(beta: &[f64], field: &CovariateField, region: &StudyRegion) -> Result<Abundance> {
    if beta.len() != field.n_covariates() + 1 {
        return Err(Error::Config(format!(
            "beta has {} entries but the field has {} covariates plus an intercept",
            beta.len(),
            field.n_covariates()
        )));
    }
    let weights = field.cell_weights(region);
    let mut value = 0.0;
    let mut gradient = vec![0.0; beta.len()];
    for (c, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let term = w * field.linear_predictor(c, beta).exp();
        value += term;
        gradient[0] += term;
        for (g, x) in gradient[1..].iter_mut().zip(field.cell_covariates(c)) {
            *g += x * term;
        }
    }
    Ok(Abundance { value, gradient })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaInterval {
    pub value: f64,
    pub se: f64,
    pub interval: Interval,
    pub log_value: f64,
    pub log_se: f64,
    pub log_interval: Interval,
}

/// First-order propagation of `covariance` (over β) to `λ̄` and `log λ̄`.
pub fn delta_method_ci(
    lambda_bar: f64,
    gradient: &[f64],
    covariance: &DMatrix<f64>,
    level: f64,
) -> Result<DeltaInterval> {
    if covariance.nrows() != gradient.len() || covariance.ncols() != gradient.len() {
        return Err(Error::Config(format!(
            "gradient has {} entries but the covariance is {}x{}",
            gradient.len(),
            covariance.nrows(),
            covariance.ncols()
        )));
    }
    let g = DVector::from_column_slice(gradient);
    let var = (g.transpose() * covariance * &g)[(0, 0)];
    let se = var.max(0.0).sqrt();
    let log_se = se / lambda_bar;
    Ok(DeltaInterval {
        value: lambda_bar,
        se,
        interval: wald_ci(lambda_bar, se, level)?,
        log_value: lambda_bar.ln(),
        log_se,
        log_interval: wald_ci(lambda_bar.ln(), log_se, level)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSettings {
    pub nelder_mead: NelderMeadOptions,
    /// Extra simplex runs restarted from the best point.
    pub restarts: usize,
    /// Number of starts; every start after the first is jittered by
    /// `U(-jitter, jitter)` in each optimised coordinate.
    pub starts: usize,
    pub jitter: f64,
    pub seed: u64,
    pub level: f64,
    pub hessian_step: f64,
    /// Hold `φ` or `θ` at a known value instead of estimating it.
    pub fix_phi: Option<f64>,
    pub fix_theta: Option<f64>,
    pub execution: Execution,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            nelder_mead: NelderMeadOptions::default(),
            restarts: 2,
            starts: 1,
            jitter: 1.0,
            seed: 0,
            level: 0.95,
            hessian_step: 1e-4,
            fix_phi: None,
            fix_theta: None,
            execution: Execution::Sequential,
        }
    }
}

impl FitSettings {
    pub fn validate(&self) -> Result<()> {
        if self.starts == 0 {
            return Err(Error::Config("at least one start is required".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("confidence level must lie in (0, 1), got {}", self.level)));
        }
        if !(self.hessian_step > 0.0) {
            return Err(Error::Config("Hessian step must be positive".into()));
        }
        if !(self.nelder_mead.ftol >= 0.0 && self.nelder_mead.xtol >= 0.0 && self.nelder_mead.step > 0.0) {
            return Err(Error::Config("Nelder-Mead tolerances must be non-negative and the step positive".into()));
        }
        if let Some(phi) = self.fix_phi {
            if !(phi > 0.0 && phi.is_finite()) {
                return Err(Error::Config(format!("fixed phi must be positive, got {phi}")));
            }
        }
        if let Some(theta) = self.fix_theta {
            if !(theta > 0.0 && theta < 1.0) {
                return Err(Error::Config(format!("fixed theta must lie in (0, 1), got {theta}")));
            }
        }
        Ok(())
    }
}

/// Default start: `β = 0`, `φ = w_ds²/4`, `θ = ½`.
pub fn default_start(n_beta: usize, max_ds_radius: Option<f64>) -> WorkingParams {
    let w = max_ds_radius.unwrap_or(1.0);
    WorkingParams { beta: vec![0.0; n_beta], log_phi: (w * w / 4.0).ln(), logit_theta: 0.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitStatus {
    Ok,
    /// Converged, but a nuisance coordinate sits on a boundary and was left
    /// out of the covariance: `1/φ` held at zero (constant detection), `φ`
    /// so small that the half-normal falls between quadrature nodes, or `θ`
    /// saturated at 0 or 1. The remaining intervals are conditional on it.
    Boundary,
    /// Converged with a Hessian that is not positive definite.
    Singular,
    NotConverged,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub scenario: Scenario,
    /// Names of the optimised working coordinates.
    pub names: Vec<String>,
    pub working: WorkingParams,
    pub params: ModelParams,
    pub loglik: f64,
    pub status: FitStatus,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Inverse Hessian of the negative log-likelihood over the optimised
    /// coordinates. Coordinates left out at a boundary carry infinite
    /// variance and zero covariance.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub se: Vec<f64>,
    /// Wald intervals on the working scale. For `log φ` the interval is the
    /// Wald interval of `1/φ` mapped over, unbounded above when it reaches
    /// zero.
    pub ci: Vec<Interval>,
    pub boundary: Vec<String>,
    pub lambda_bar: Option<DeltaInterval>,
    pub lambda_bar_estimate: f64,
}

impl FitResult {
    pub fn has_covariance(&self) -> bool {
        self.covariance.is_some()
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn se_of(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.se[i])
    }

    pub fn ci_of(&self, name: &str) -> Option<Interval> {
        self.index(name).map(|i| self.ci[i])
    }

    pub fn covariance_matrix(&self) -> Option<DMatrix<f64>> {
        self.covariance.as_ref().map(|rows| {
            let n = rows.len();
            DMatrix::from_fn(n, n, |i, j| rows[i][j])
        })
    }
}

/// Compiles `spec` and fits it.
pub fn fit(
    spec: &LikelihoodSpec,
    region: &StudyRegion,
    start: &WorkingParams,
    settings: &FitSettings,
) -> Result<FitResult> {
    let prepared = PreparedLikelihood::new(spec)?;
    fit_prepared(&prepared, spec.field, region, start, settings)
}

fn layout_for(prepared: &PreparedLikelihood, settings: &FitSettings) -> ParamLayout {
    let mut layout = prepared.layout();
    layout.phi &= settings.fix_phi.is_none();
    layout.theta &= settings.fix_theta.is_none();
    layout
}

struct Run {
    x: Vec<f64>,
    value: f64,
    iterations: usize,
    evaluations: usize,
    termination: Termination,
}

/// `|logit θ|` beyond which `θ` counts as saturated during optimisation.
const SATURATED_LOGIT: f64 = 10.0;

/// Simplex runs from `start`. When the logistic coordinate ends saturated,
/// where its gradient vanishes and the simplex cannot find its way back, the
/// search is repeated with that coordinate reset to its start value and the
/// better result is kept.
fn minimise(
    objective: &dyn Fn(&[f64]) -> f64,
    start: &[f64],
    settings: &FitSettings,
    logistic: Option<usize>,
) -> Result<Run> {
    let mut run = polish(objective, start, settings)?;
    if let Some(i) = logistic {
        if run.x[i].abs() > SATURATED_LOGIT {
            let mut x = run.x.clone();
            x[i] = start[i];
            if objective(&x).is_finite() {
                let other = polish(objective, &x, settings)?;
                let (iterations, evaluations) =
                    (run.iterations + other.iterations, run.evaluations + other.evaluations);
                if other.value < run.value {
                    run = other;
                }
                run.iterations = iterations;
                run.evaluations = evaluations;
            }
        }
    }
    Ok(run)
}

fn polish(objective: &dyn Fn(&[f64]) -> f64, start: &[f64], settings: &FitSettings) -> Result<Run> {
    let mut nm = nelder_mead(objective, start, &settings.nelder_mead)?;
    let mut run = Run {
        iterations: nm.iterations,
        evaluations: nm.evaluations,
        termination: nm.termination,
        x: nm.argmin.clone(),
        value: nm.value,
    };
    for _ in 0..settings.restarts {
        nm = nelder_mead(objective, &run.x, &settings.nelder_mead)?;
        run.iterations += nm.iterations;
        run.evaluations += nm.evaluations;
        let improved = run.value - nm.value > settings.nelder_mead.ftol * (run.value.abs() + settings.nelder_mead.ftol);
        if nm.value < run.value {
            run.x = nm.argmin;
            run.value = nm.value;
        }
        run.termination = nm.termination;
        if !improved {
            break;
        }
    }
    Ok(run)
}

/// Fits a compiled likelihood. `field` and `region` define `λ̄`.
pub fn fit_prepared(
    prepared: &PreparedLikelihood,
    field: &CovariateField,
    region: &StudyRegion,
    start: &WorkingParams,
    settings: &FitSettings,
) -> Result<FitResult> {
    settings.validate()?;
    let layout = layout_for(prepared, settings);
    if start.beta.len() != layout.n_beta {
        return Err(Error::Config(format!(
            "start has {} regression coefficients, the model needs {}",
            start.beta.len(),
            layout.n_beta
        )));
    }
    let mut base = start.clone();
    if let Some(phi) = settings.fix_phi {
        base.log_phi = phi.ln();
    }
    if let Some(theta) = settings.fix_theta {
        base.logit_theta = crate::likelihoods::logit(theta);
    }
    let objective = prepared.objective_in(layout, &base);
    let x0 = layout.pack(&base);

    let mut rng = stream_rng(settings.seed, Stream::Multistart);
    let starts: Vec<Vec<f64>> = (0..settings.starts)
        .map(|k| {
            x0.iter()
                .map(|v| if k == 0 { *v } else { v + rng.random_range(-settings.jitter..=settings.jitter) })
                .collect()
        })
        .collect();
    let runs: Vec<Result<Run>> =
        settings.execution.map(starts.len(), |k| minimise(&objective, &starts[k], settings, layout.theta_index()));
    let mut best: Option<Run> = None;
    let mut first_error = None;
    for run in runs {
        match run {
            Ok(run) => {
                let better = match &best {
                    None => true,
                    Some(b) => {
                        let (rc, bc) = (
                            run.termination != Termination::MaxIterations,
                            b.termination != Termination::MaxIterations,
                        );
                        (rc && !bc) || (rc == bc && run.value < b.value)
                    }
                };
                if better {
                    best = Some(run);
                }
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let run = match (best, first_error) {
        (Some(run), _) => run,
        (None, Some(e)) => return Err(e),
        (None, None) => unreachable!("at least one start"),
    };

    let working = layout.unpack(&run.x, &base);
    let params = ModelParams { beta: working.beta.clone(), phi: working.phi(), theta: working.theta() };
    let converged = run.termination != Termination::MaxIterations;
    let names = layout.names();
    let k = layout.len();

    // Derivatives are taken with the detection rate `α = 1/φ` in place of
    // `log φ`, where the objective stays smooth as detection flattens, then
    // carried to the working scale by the chain rule.
    let phi_slot = layout.phi_index();
    let mut z = run.x.clone();
    if let Some(i) = phi_slot {
        z[i] = 1.0 / params.phi;
    }
    let rate_objective = prepared.objective_rate_in(layout, &base);
    // `α` is measured in units of `1 / max d²`, where `α d²` is of order one.
    let alpha_unit = 1.0 / prepared.max_dist2().max(f64::MIN_POSITIVE);
    let steps: Vec<f64> = z
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let unit = if Some(i) == phi_slot { alpha_unit } else { 1.0 };
            settings.hessian_step * unit * (v.abs() / unit).max(1.0)
        })
        .collect();
    let rate_hessian = numerical_hessian(&rate_objective, &z, &steps);
    let mut hessian = rate_hessian.clone();
    let mut pinned = false;
    if let Some(p) = phi_slot {
        let gradient = DVector::from_iterator(
            k,
            (0..k).map(|j| {
                let mut up = z.clone();
                let mut dn = z.clone();
                up[j] += steps[j];
                dn[j] -= steps[j];
                (rate_objective(&up) - rate_objective(&dn)) / (2.0 * steps[j])
            }),
        );
        // `α ≥ 0` binds when a Newton step from the estimate crosses zero.
        pinned = rate_hessian.clone().cholesky().is_some_and(|c| z[p] - c.solve(&gradient)[p] <= 0.0);
        // log φ = -log α: d²f/du² = α² f_αα + α f_α, d²f/du dx = -α f_αx.
        let a = z[p];
        for j in 0..k {
            if j != p {
                hessian[(p, j)] *= -a;
                hessian[(j, p)] *= -a;
            }
        }
        hessian[(p, p)] = a * a * hessian[(p, p)] + a * gradient[p];
    }
    // A half-normal narrower than the nodes resolve.
    let collapsed = prepared.ds_spacing().is_some_and(|h| params.phi < 2.0 * h * h);
    let at_boundary = |i: usize| -> bool {
        if Some(i) == phi_slot {
            pinned || collapsed
        } else if Some(i) == layout.theta_index() {
            working.logit_theta.abs() > 25.0
        } else {
            false
        }
    };
    let mut dropped: Vec<usize> = (0..k).filter(|&i| at_boundary(i)).collect();
    let mut covariance = invert(&hessian, &dropped);
    if let Some(p) = phi_slot.filter(|p| covariance.is_none() && !dropped.contains(p)) {
        // No curvature left in `log φ`: detection is flat and `φ` sits at
        // its upper end.
        let mut flat = dropped.clone();
        flat.push(p);
        flat.sort_unstable();
        if let Some(c) = invert(&hessian, &flat) {
            covariance = Some(c);
            dropped = flat;
        }
    }
    let boundary: Vec<String> = dropped.iter().map(|&i| names[i].clone()).collect();

    let status = if !converged {
        FitStatus::NotConverged
    } else if covariance.is_none() {
        FitStatus::Singular
    } else if !boundary.is_empty() {
        FitStatus::Boundary
    } else {
        FitStatus::Ok
    };

    // `φ` gets the Wald interval of `α`, truncated at zero; the curvature in
    // `α` stays regular where `log φ` has none.
    let phi_interval = phi_slot.filter(|_| !collapsed).and_then(|p| {
        let others: Vec<usize> = dropped.iter().copied().filter(|&i| i != p).collect();
        let rc = invert(&rate_hessian, &others)?;
        let half = z_value(settings.level) * rc[(p, p)].max(0.0).sqrt();
        let (lo, hi) = (z[p] - half, z[p] + half);
        Some(Interval { lower: -hi.ln(), upper: if lo > 0.0 { -lo.ln() } else { f64::INFINITY } })
    });
    let (se, ci): (Vec<f64>, Vec<Interval>) = match &covariance {
        Some(cov) => (0..k)
            .map(|i| {
                let se = cov[(i, i)].max(0.0).sqrt();
                let ci = if Some(i) == phi_slot {
                    phi_interval.unwrap_or_else(Interval::unbounded)
                } else {
                    wald_ci(run.x[i], se, settings.level).expect("valid se")
                };
                (se, ci)
            })
            .unzip(),
        None => (0..k).map(|_| (f64::NAN, Interval { lower: f64::NAN, upper: f64::NAN })).unzip(),
    };

    let ab = abundance(&working.beta, field, region)?;
    let lambda_bar = match &covariance {
        Some(cov) => {
            let nb = layout.n_beta;
            let block = cov.view((0, 0), (nb, nb)).into_owned();
            Some(delta_method_ci(ab.value, &ab.gradient, &block, settings.level)?)
        }
        None => None,
    };

    Ok(FitResult {
        scenario: prepared.scenario(),
        names,
        working,
        params,
        loglik: -run.value,
        status,
        converged,
        iterations: run.iterations,
        evaluations: run.evaluations,
        termination: run.termination,
        covariance: covariance.map(|m: DMatrix<f64>| (0..k).map(|i| (0..k).map(|j| m[(i, j)]).collect()).collect()),
        se,
        ci,
        boundary,
        lambda_bar,
        lambda_bar_estimate: ab.value,
    })
}

/// Inverts a Hessian by Cholesky, conditioning on the `boundary`
/// coordinates: they are left out of the inversion and get infinite
/// variance.
fn invert(hessian: &DMatrix<f64>, boundary: &[usize]) -> Option<DMatrix<f64>> {
    let n = hessian.nrows();
    let keep: Vec<usize> = (0..n).filter(|i| !boundary.contains(i)).collect();
    let sub = DMatrix::from_fn(keep.len(), keep.len(), |a, b| hessian[(keep[a], keep[b])]);
    if !sub.iter().all(|v| v.is_finite()) {
        return None;
    }
    let inv = sub.cholesky()?.inverse();
    let mut full = DMatrix::zeros(n, n);
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            full[(i, j)] = inv[(a, b)];
        }
    }
    for &i in boundary {
        full[(i, i)] = f64::INFINITY;
    }
    Some(full)
}
