//! The simulation study: a fixed covariate field and survey design, many
//! replicate point patterns, all five likelihoods fitted to each, and
//! coverage / relative-efficiency summaries over the replicates.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariates::{simulate_grf, CovariateField, GpConfig};
use crate::error::{Error, Result};
use crate::estimation::{abundance, default_start, fit_prepared, FitResult, FitSettings, FitStatus, Interval};
use crate::geometry::{
    build_partitions, check_nonoverlap, PartitionGrid, Point, SampledRegion, StudyRegion, SurveyDesign, SurveyUnit,
};
use crate::likelihoods::{logit, DesignQuadrature, PreparedLikelihood, QuadratureSettings, Scenario, ScenarioData};
use crate::par::Execution;
use crate::pointprocess::{aggregate_counts, degrade_to_partial, simulate_ippp, simulate_observation, ModelParams};
use crate::rng::{replicate_seed, stream_rng, Stream};

/// Placement of point-count stations and traps on jittered lattices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutConfig {
    /// Columns and rows of the point-station lattice.
    pub points: [usize; 2],
    pub traps: [usize; 2],
    pub point_radius: f64,
    pub trap_radius: f64,
    /// Uniform jitter as a fraction of the lattice spacing.
    pub jitter: f64,
    /// Gap kept between neighbouring regions by the repair pass.
    pub separation: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            points: [5, 3],
            traps: [13, 5],
            point_radius: 0.04,
            trap_radius: 0.02,
            jitter: 0.25,
            separation: 0.002,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub truth: ModelParams,
    pub layout: LayoutConfig,
    /// Partition cells per axis for the aggregated models.
    pub partitions: [usize; 2],
    pub replicates: usize,
    pub seed: u64,
    pub gp: GpConfig,
    /// Cell size of the simulated covariate grid.
    pub grid_resolution: f64,
    /// Shift the covariate so that `log λ̄` at the truth equals this value.
    pub calibrate_log_abundance: Option<f64>,
    pub quadrature: QuadratureSettings,
    pub fit: FitSettings,
    pub scenarios: Vec<Scenario>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            truth: ModelParams { beta: vec![9.0, 1.0], phi: 0.025, theta: 0.2 },
            layout: LayoutConfig::default(),
            partitions: [10, 10],
            replicates: 200,
            seed: 2024,
            gp: GpConfig::default(),
            grid_resolution: 0.01,
            calibrate_log_abundance: Some(9.5),
            quadrature: QuadratureSettings::default(),
            fit: FitSettings::default(),
            scenarios: Scenario::ALL.to_vec(),
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.truth.validate()?;
        if self.truth.beta.len() != 2 {
            return Err(Error::Config("the study simulates one covariate, so beta needs two entries".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.partitions.contains(&0) {
            return Err(Error::Config("partition grid needs at least one cell per axis".into()));
        }
        if self.scenarios.is_empty() {
            return Err(Error::Config("no scenarios selected".into()));
        }
        if !(self.grid_resolution > 0.0 && self.grid_resolution <= 0.5) {
            return Err(Error::Config(format!("grid resolution must lie in (0, 0.5], got {}", self.grid_resolution)));
        }
        let l = &self.layout;
        if l.points.contains(&0) && l.traps.contains(&0) {
            return Err(Error::Config("layout has no survey units".into()));
        }
        for (name, v) in [("point radius", l.point_radius), ("trap radius", l.trap_radius)] {
            if !(v > 0.0 && v < 0.5) {
                return Err(Error::Config(format!("{name} must lie in (0, 0.5), got {v}")));
            }
        }
        if !(0.0..=0.5).contains(&l.jitter) || !(l.separation >= 0.0) {
            return Err(Error::Config("layout jitter must lie in [0, 0.5] and separation be non-negative".into()));
        }
        if let Some(t) = self.calibrate_log_abundance {
            if !t.is_finite() {
                return Err(Error::Config("calibration target must be finite".into()));
            }
            if self.truth.beta[1] == 0.0 {
                return Err(Error::Config("cannot calibrate abundance with a zero slope".into()));
            }
        }
        self.gp.validate()?;
        self.quadrature.validate()?;
        self.fit.validate()
    }
}

/// Jittered-lattice design on the unit square, with every region kept inside
/// the square and clear of the others.
pub fn lattice_design(layout: &LayoutConfig, seed: u64) -> Result<SurveyDesign> {
    let mut rng = stream_rng(seed, Stream::Layout);
    let mut placed: Vec<(Point, f64)> = Vec::new();
    let mut regions = Vec::new();
    let groups = [("p", layout.points, layout.point_radius), ("k", layout.traps, layout.trap_radius)];
    for (prefix, [nx, ny], radius) in groups {
        let (dx, dy) = (1.0 / nx as f64, 1.0 / ny as f64);
        for j in 0..ny {
            for i in 0..nx {
                let p = Point::new(
                    (i as f64 + 0.5 + layout.jitter * rng.random_range(-1.0..=1.0)) * dx,
                    (j as f64 + 0.5 + layout.jitter * rng.random_range(-1.0..=1.0)) * dy,
                );
                let at = repair(p, radius, &placed, layout.separation)
                    .ok_or_else(|| Error::Config(format!("no room for {prefix}-unit ({i}, {j}) of radius {radius}")))?;
                placed.push((at, radius));
                let id = format!("{prefix}{:02}", regions.len() + 1);
                let unit = if prefix == "p" { SurveyUnit::point(id, at)? } else { SurveyUnit::trap(id, at)? };
                regions.push(SampledRegion::new(unit, radius)?);
            }
        }
    }
    let design = SurveyDesign::new(regions)?;
    check_nonoverlap(&design).into_result()?;
    design.validate_within(&StudyRegion::unit_square())?;
    Ok(design)
}

/// Nearest free position to `p` on a spiral of candidates.
fn repair(p: Point, radius: f64, placed: &[(Point, f64)], gap: f64) -> Option<Point> {
    let lo = radius + gap;
    let hi = 1.0 - radius - gap;
    let clamp = |q: Point| Point::new(q.x.clamp(lo, hi), q.y.clamp(lo, hi));
    let free = |q: &Point| placed.iter().all(|(c, r)| c.distance(q) >= r + radius + gap);
    let start = clamp(p);
    if free(&start) {
        return Some(start);
    }
    const DIRECTIONS: usize = 16;
    let step = radius / 4.0;
    for k in 1..=400 {
        for d in 0..DIRECTIONS {
            let a = std::f64::consts::TAU * d as f64 / DIRECTIONS as f64;
            let rho = step * k as f64;
            let q = clamp(Point::new(start.x + rho * a.cos(), start.y + rho * a.sin()));
            if free(&q) {
                return Some(q);
            }
        }
    }
    None
}

/// The study's covariate field, shifted so `log λ̄` hits the calibration
/// target when one is set.
pub fn study_field(config: &StudyConfig) -> Result<CovariateField> {
    calibrated_field(config, &StudyRegion::unit_square())
}

/// [`study_field`] over an arbitrary region.
pub fn calibrated_field(config: &StudyConfig, region: &StudyRegion) -> Result<CovariateField> {
    let field = simulate_grf(region, &config.gp, config.grid_resolution)?;
    let Some(target) = config.calibrate_log_abundance else {
        return Ok(field);
    };
    let now = abundance(&config.truth.beta, &field, region)?.value.ln();
    let shift = (target - now) / config.truth.beta[1];
    let values: Vec<f64> = field.layer(0).iter().map(|v| v + shift).collect();
    CovariateField::from_layers(field.grid, vec![(field.names[0].clone(), values)])
}

/// `λ̄` at the true parameters over the study region.
pub fn true_abundance(truth: &ModelParams, field: &CovariateField, region: &StudyRegion) -> Result<f64> {
    Ok(abundance(&truth.beta, field, region)?.value)
}

/// Everything shared by the replicates.
pub struct StudySetup {
    pub region: StudyRegion,
    pub field: CovariateField,
    pub design: SurveyDesign,
    pub partitions: PartitionGrid,
    pub quadrature: DesignQuadrature,
    pub true_lambda_bar: f64,
}

impl StudySetup {
    pub fn new(config: &StudyConfig) -> Result<Self> {
        config.validate()?;
        let region = StudyRegion::unit_square();
        let field = study_field(config)?;
        let design = lattice_design(&config.layout, config.seed)?;
        let partitions = build_partitions(&region, config.partitions[0], config.partitions[1], &design)?;
        let quadrature = DesignQuadrature::new(&design, &field, config.quadrature)?;
        let true_lambda_bar = true_abundance(&config.truth, &field, &region)?;
        Ok(StudySetup { region, field, design, partitions, quadrature, true_lambda_bar })
    }
}

/// Quantities tracked per fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Beta0,
    Beta1,
    LogPhi,
    LogitTheta,
    LambdaBar,
    LogLambdaBar,
}

impl Target {
    pub const ALL: [Target; 6] =
        [Target::Beta0, Target::Beta1, Target::LogPhi, Target::LogitTheta, Target::LambdaBar, Target::LogLambdaBar];
    /// Targets summarised in the coverage / efficiency table.
    pub const SUMMARY: [Target; 4] = [Target::Beta0, Target::Beta1, Target::LambdaBar, Target::LogLambdaBar];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Beta0 => "beta0",
            Target::Beta1 => "beta1",
            Target::LogPhi => "log_phi",
            Target::LogitTheta => "logit_theta",
            Target::LambdaBar => "lambda_bar",
            Target::LogLambdaBar => "log_lambda_bar",
        }
    }

    fn truth(self, truth: &ModelParams, lambda_bar: f64) -> f64 {
        match self {
            Target::Beta0 => truth.beta[0],
            Target::Beta1 => truth.beta[1],
            Target::LogPhi => truth.phi.ln(),
            Target::LogitTheta => logit(truth.theta),
            Target::LambdaBar => lambda_bar,
            Target::LogLambdaBar => lambda_bar.ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetEstimate {
    pub target: Target,
    pub estimate: f64,
    pub se: f64,
    /// Absent when the fit has no covariance.
    pub interval: Option<Interval>,
    pub truth: f64,
}

impl TargetEstimate {
    pub fn covered(&self) -> Option<bool> {
        self.interval.map(|ci| ci.contains(self.truth))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateFit {
    pub replicate: usize,
    pub scenario: Scenario,
    pub status: FitStatus,
    pub loglik: f64,
    pub iterations: usize,
    pub n_ds: usize,
    pub n_cr: usize,
    pub estimates: Vec<TargetEstimate>,
    /// Set when the fit itself errored.
    pub error: Option<String>,
}

impl ReplicateFit {
    pub fn converged(&self) -> bool {
        self.status != FitStatus::NotConverged
    }

    pub fn has_covariance(&self) -> bool {
        matches!(self.status, FitStatus::Ok | FitStatus::Boundary)
    }

    pub fn get(&self, target: Target) -> Option<&TargetEstimate> {
        self.estimates.iter().find(|e| e.target == target)
    }
}

fn estimates_of(fit: &FitResult, truth: &ModelParams, lambda_bar: f64) -> Vec<TargetEstimate> {
    let mut out = Vec::new();
    for target in Target::ALL {
        let name = match target {
            Target::Beta0 => "beta0",
            Target::Beta1 => "beta1",
            Target::LogPhi => "log_phi",
            Target::LogitTheta => "logit_theta",
            _ => "",
        };
        let (estimate, se, interval) = match target {
            Target::LambdaBar => match &fit.lambda_bar {
                Some(d) => (d.value, d.se, Some(d.interval)),
                None => (fit.lambda_bar_estimate, f64::NAN, None),
            },
            Target::LogLambdaBar => match &fit.lambda_bar {
                Some(d) => (d.log_value, d.log_se, Some(d.log_interval)),
                None => (fit.lambda_bar_estimate.ln(), f64::NAN, None),
            },
            _ => {
                let Some(i) = fit.names.iter().position(|n| n == name) else {
                    continue;
                };
                let value = match target {
                    Target::Beta0 => fit.working.beta[0],
                    Target::Beta1 => fit.working.beta[1],
                    Target::LogPhi => fit.working.log_phi,
                    _ => fit.working.logit_theta,
                };
                let interval = fit.has_covariance().then(|| fit.ci[i]);
                (value, fit.se[i], interval)
            }
        };
        out.push(TargetEstimate { target, estimate, se, interval, truth: target.truth(truth, lambda_bar) });
    }
    out
}

/// Simulates replicate `r` and fits every configured scenario to it.
pub fn run_replicate(config: &StudyConfig, setup: &StudySetup, r: usize) -> Result<Vec<ReplicateFit>> {
    let seed = replicate_seed(config.seed, r);
    let pattern = simulate_ippp(&config.truth, &setup.field, &setup.region, seed)?;
    let complete = simulate_observation(&pattern, &setup.design, &config.truth, seed)?;
    let partial = degrade_to_partial(&complete);
    let counts = aggregate_counts(&partial, &setup.design, &setup.partitions)?;
    let start = default_start(config.truth.beta.len(), setup.design.max_ds_radius());
    let settings = FitSettings { seed, execution: Execution::Sequential, ..config.fit.clone() };
    let mut out = Vec::with_capacity(config.scenarios.len());
    for &scenario in &config.scenarios {
        let data = match scenario {
            Scenario::Complete => ScenarioData::Observations(&complete),
            Scenario::AggregatedFarr | Scenario::AggregatedCos => ScenarioData::Counts(&counts),
            Scenario::FusedRegion | Scenario::FusedDistance => ScenarioData::Observations(&partial),
        };
        let fitted = PreparedLikelihood::compile(&setup.quadrature, scenario, data)
            .and_then(|p| fit_prepared(&p, &setup.field, &setup.region, &start, &settings));
        let record = match fitted {
            Ok(fit) => ReplicateFit {
                replicate: r,
                scenario,
                status: fit.status,
                loglik: fit.loglik,
                iterations: fit.iterations,
                n_ds: complete.n_ds(),
                n_cr: complete.n_cr(),
                estimates: estimates_of(&fit, &config.truth, setup.true_lambda_bar),
                error: None,
            },
            Err(e) => ReplicateFit {
                replicate: r,
                scenario,
                status: FitStatus::NotConverged,
                loglik: f64::NAN,
                iterations: 0,
                n_ds: complete.n_ds(),
                n_cr: complete.n_cr(),
                estimates: Vec::new(),
                error: Some(e.to_string()),
            },
        };
        out.push(record);
    }
    Ok(out)
}

/// How a study is executed. Batches run concurrently; between batches the
/// driver hands finished rows to the sink in replicate order and checks for
/// cancellation.
pub struct RunControl<'a> {
    pub execution: Execution,
    /// Worker threads (0 = all cores).
    pub workers: usize,
    pub batch: usize,
    pub cancel: Option<&'a AtomicBool>,
    /// Stop with [`Error::Interrupted`] after this many replicates.
    pub stop_after: Option<usize>,
}

impl Default for RunControl<'_> {
    fn default() -> Self {
        RunControl { execution: Execution::default(), workers: 0, batch: 32, cancel: None, stop_after: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetSummary {
    pub target: Target,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub covered: usize,
    pub n_intervals: usize,
    pub coverage: Option<f64>,
    /// Relative to the complete-data scenario; absent for that scenario.
    pub relative_efficiency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub scenario: Scenario,
    pub fits: usize,
    pub not_converged: usize,
    pub no_covariance: usize,
    pub targets: Vec<TargetSummary>,
}

impl ScenarioSummary {
    pub fn target(&self, t: Target) -> Option<&TargetSummary> {
        self.targets.iter().find(|s| s.target == t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub true_lambda_bar: f64,
    /// Sorted by replicate, then scenario order of the config.
    pub fits: Vec<ReplicateFit>,
    pub summary: Vec<ScenarioSummary>,
}

impl StudyReport {
    pub fn scenario(&self, s: Scenario) -> Option<&ScenarioSummary> {
        self.summary.iter().find(|x| x.scenario == s)
    }
}

/// Runs the study with default execution.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    run_study_with(config, &RunControl::default(), |_| Ok(()))
}

pub fn run_study_with(
    config: &StudyConfig,
    control: &RunControl,
    mut sink: impl FnMut(&[ReplicateFit]) -> Result<()>,
) -> Result<StudyReport> {
    let setup = StudySetup::new(config)?;
    let limit = control.stop_after.map_or(config.replicates, |s| s.min(config.replicates));
    let batch = control.batch.max(1);
    let mut fits = Vec::with_capacity(config.replicates * config.scenarios.len());
    let mut done = 0;
    while done < config.replicates {
        if done >= limit || control.cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            return Err(Error::Interrupted { completed: done });
        }
        let n = batch.min(limit - done);
        let results = control
            .execution
            .with_workers(control.workers, || control.execution.map(n, |k| run_replicate(config, &setup, done + k)));
        for rows in results {
            let rows = rows?;
            sink(&rows)?;
            fits.extend(rows);
        }
        done += n;
    }
    let summary = summarise(&config.scenarios, &fits);
    Ok(StudyReport { config: config.clone(), true_lambda_bar: setup.true_lambda_bar, fits, summary })
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Coverage and efficiency per scenario. Non-converged fits are excluded
/// from everything; fits without a covariance are excluded from coverage.
pub fn summarise(scenarios: &[Scenario], fits: &[ReplicateFit]) -> Vec<ScenarioSummary> {
    let mut out: Vec<ScenarioSummary> = scenarios
        .iter()
        .map(|&scenario| {
            let rows: Vec<&ReplicateFit> = fits.iter().filter(|f| f.scenario == scenario).collect();
            let used: Vec<&ReplicateFit> = rows.iter().copied().filter(|f| f.converged()).collect();
            let targets = Target::SUMMARY
                .iter()
                .map(|&target| {
                    let values: Vec<f64> = used
                        .iter()
                        .filter_map(|f| f.get(target))
                        .map(|e| e.estimate)
                        .filter(|v| v.is_finite())
                        .collect();
                    let intervals: Vec<Interval> =
                        used.iter().filter_map(|f| f.get(target)).filter_map(|e| e.interval).collect();
                    let truth = used.iter().find_map(|f| f.get(target)).map(|e| e.truth);
                    let covered = match truth {
                        Some(t) => intervals.iter().filter(|ci| ci.contains(t)).count(),
                        None => 0,
                    };
                    let (mean, sd) = mean_sd(&values);
                    TargetSummary {
                        target,
                        n: values.len(),
                        mean,
                        sd,
                        covered,
                        n_intervals: intervals.len(),
                        coverage: truth.and_then(|t| coverage(&intervals, t).ok()),
                        relative_efficiency: None,
                    }
                })
                .collect();
            ScenarioSummary {
                scenario,
                fits: rows.len(),
                not_converged: rows.len() - used.len(),
                no_covariance: used.iter().filter(|f| !f.has_covariance()).count(),
                targets,
            }
        })
        .collect();
    let benchmark: Option<Vec<f64>> =
        out.iter().find(|s| s.scenario == Scenario::Complete).map(|s| s.targets.iter().map(|t| t.sd).collect());
    if let Some(bench) = benchmark {
        for s in out.iter_mut().filter(|s| s.scenario != Scenario::Complete) {
            for (t, b) in s.targets.iter_mut().zip(&bench) {
                t.relative_efficiency = relative_efficiency(t.sd, *b).ok();
            }
        }
    }
    out
}

/// Fraction of closed intervals containing `truth`.
pub fn coverage(intervals: &[Interval], truth: f64) -> Result<f64> {
    if intervals.is_empty() {
        return Err(Error::Data("coverage of an empty set of intervals".into()));
    }
    let hits = intervals.iter().filter(|ci| ci.contains(truth)).count();
    Ok(hits as f64 / intervals.len() as f64)
}

pub fn relative_efficiency(sd: f64, sd_benchmark: f64) -> Result<f64> {
    if !(sd_benchmark > 0.0 && sd_benchmark.is_finite()) {
        return Err(Error::Data(format!("benchmark sd must be positive, got {sd_benchmark}")));
    }
    if !(sd >= 0.0) {
        return Err(Error::Data(format!("sd must be non-negative, got {sd}")));
    }
    Ok(sd / sd_benchmark)
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub const ESTIMATES_HEADER: &str =
    "replicate,scenario,parameter,estimate,se,lower,upper,truth,covered,status,n_ds,n_cr";

/// Estimate-table rows for one fit (used for both the streamed partial table
/// and the final one).
pub fn estimate_rows(fit: &ReplicateFit) -> Vec<String> {
    let status = serde_variant(fit.status);
    if fit.estimates.is_empty() {
        return vec![format!("{},{},,,,,,,,{},{},{}", fit.replicate, fit.scenario, status, fit.n_ds, fit.n_cr)];
    }
    fit.estimates
        .iter()
        .map(|e| {
            format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                fit.replicate,
                fit.scenario,
                e.target.as_str(),
                e.estimate,
                e.se,
                opt(e.interval.map(|i| i.lower)),
                opt(e.interval.map(|i| i.upper)),
                e.truth,
                e.covered().map(|c| u8::from(c).to_string()).unwrap_or_default(),
                status,
                fit.n_ds,
                fit.n_cr
            )
        })
        .collect()
}

fn serde_variant(s: FitStatus) -> &'static str {
    match s {
        FitStatus::Ok => "ok",
        FitStatus::Boundary => "boundary",
        FitStatus::Singular => "singular",
        FitStatus::NotConverged => "not-converged",
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Writes `estimates.csv`, `summary.csv` and `boxplot_data.csv`.
pub fn emit_reports(report: &StudyReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut est = String::from(ESTIMATES_HEADER);
    est.push('\n');
    for fit in &report.fits {
        for row in estimate_rows(fit) {
            est.push_str(&row);
            est.push('\n');
        }
    }
    write_file(&out_dir.join("estimates.csv"), &est)?;

    let mut sum = String::from("scenario,name,fits,not_converged,no_covariance");
    for t in Target::SUMMARY {
        let n = t.as_str();
        sum.push_str(&format!(",mean_{n},sd_{n},cp_{n},re_{n}"));
    }
    sum.push('\n');
    for s in &report.summary {
        sum.push_str(&format!(
            "{},{},{},{},{}",
            s.scenario.number(),
            s.scenario,
            s.fits,
            s.not_converged,
            s.no_covariance
        ));
        for t in &s.targets {
            sum.push_str(&format!(",{},{},{},{}", t.mean, t.sd, opt(t.coverage), opt(t.relative_efficiency)));
        }
        sum.push('\n');
    }
    write_file(&out_dir.join("summary.csv"), &sum)?;

    let mut bx = String::from("replicate,scenario,status");
    for t in Target::SUMMARY {
        bx.push(',');
        bx.push_str(t.as_str());
    }
    bx.push('\n');
    for fit in report.fits.iter().filter(|f| f.converged()) {
        bx.push_str(&format!("{},{},{}", fit.replicate, fit.scenario, serde_variant(fit.status)));
        for t in Target::SUMMARY {
            bx.push_str(&format!(",{}", opt(fit.get(t).map(|e| e.estimate))));
        }
        bx.push('\n');
    }
    write_file(&out_dir.join("boxplot_data.csv"), &bx)
}
