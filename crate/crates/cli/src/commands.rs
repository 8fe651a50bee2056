use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use fusesdm::covariates::{ingest_rasters, write_raster};
use fusesdm::estimation::{default_start, fit_prepared};
use fusesdm::experiment::{
    calibrated_field, emit_reports, estimate_rows, lattice_design, run_study_with, true_abundance, RunControl,
    StudyReport, Target, ESTIMATES_HEADER,
};
use fusesdm::geometry::{build_partitions, check_nonoverlap, read_design, write_design, StudyRegion};
use fusesdm::likelihoods::{DesignQuadrature, PreparedLikelihood, Scenario, ScenarioData};
use fusesdm::pointprocess::{
    aggregate_counts, degrade_to_partial, read_observations, simulate_ippp, simulate_observation, write_observations,
    write_pattern,
};
use fusesdm::{replicate_seed, Error};

use crate::config::{region_of, to_toml, ExperimentConfig, FitConfig, PredictConfig, RunInfo, SimulateConfig};
use crate::error::CliError;
use crate::report::{estimate_table, FitFile, FitReport};

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Failed(format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, body: &str) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| CliError::Failed(format!("cannot write {}: {e}", path.display())))
}

fn bounds_of(region: &StudyRegion) -> [f64; 4] {
    let b = region.bounds;
    [b.min.x, b.min.y, b.max.x, b.max.y]
}

pub fn simulate(mut cfg: SimulateConfig, out: &Path) -> Result<(), CliError> {
    let study = &cfg.study;
    study.validate()?;
    let region = cfg.region.map(region_of).transpose()?.unwrap_or_else(StudyRegion::unit_square);
    let design = match &cfg.design {
        Some(path) => read_design(path)?,
        None => lattice_design(&study.layout, study.seed)?,
    };
    check_nonoverlap(&design).into_result()?;
    design.validate_within(&region)?;
    let field = match &cfg.covariates {
        Some(paths) => ingest_rasters(paths)?,
        None => calibrated_field(study, &region)?,
    };
    if field.n_covariates() + 1 != study.truth.beta.len() {
        return Err(CliError::Config(format!(
            "truth has {} coefficients but the field has {} covariates",
            study.truth.beta.len(),
            field.n_covariates()
        )));
    }
    if !field.covers(&region) {
        return Err(CliError::Config("covariate rasters do not cover the study region".into()));
    }
    let seed = replicate_seed(study.seed, cfg.replicate);
    let pattern = simulate_ippp(&study.truth, &field, &region, seed)?;
    let complete = simulate_observation(&pattern, &design, &study.truth, seed)?;
    let partial = degrade_to_partial(&complete);
    let lambda_bar = true_abundance(&study.truth, &field, &region)?;

    create_dir(out)?;
    write_design(&design, out.join("design.csv"))?;
    write_pattern(&pattern, out.join("pattern.csv"))?;
    write_observations(&complete, out.join("observations.csv"))?;
    write_observations(&partial, out.join("observations_partial.csv"))?;
    let mut rasters = Vec::new();
    for (j, name) in field.names.iter().enumerate() {
        let file = format!("{name}.asc");
        write_raster(out.join(&file), &field.grid, &field.layer(j))?;
        rasters.push(PathBuf::from(file));
    }
    let fit = FitConfig {
        design: "design.csv".into(),
        observations: "observations_partial.csv".into(),
        covariates: rasters,
        scenarios: Scenario::PARTIAL.to_vec(),
        partitions: study.partitions,
        region: Some(bounds_of(&region)),
        quadrature: study.quadrature,
        fit: study.fit.clone(),
        run: None,
    };
    write(&out.join("fit.toml"), &to_toml(&fit)?)?;
    cfg.run = Some(RunInfo::new("simulate", "complete"));
    write(&out.join("manifest.toml"), &to_toml(&cfg)?)?;

    println!("individuals        {}", pattern.n());
    println!("lambda_bar         {lambda_bar}");
    println!("ds detections      {}", complete.n_ds());
    println!("cr captures        {}", complete.n_cr());
    Ok(())
}

pub fn fit(mut cfg: FitConfig, out: &Path) -> Result<(), CliError> {
    if cfg.scenarios.is_empty() {
        return Err(CliError::Config("no scenarios selected".into()));
    }
    if cfg.partitions.contains(&0) {
        return Err(CliError::Config("partition grid needs at least one cell per axis".into()));
    }
    cfg.quadrature.validate()?;
    cfg.fit.validate()?;
    let design = read_design(&cfg.design)?;
    check_nonoverlap(&design).into_result()?;
    let field = ingest_rasters(&cfg.covariates)?;
    let region = match cfg.region {
        Some(b) => region_of(b)?,
        None => StudyRegion::rect(field.grid.bounds()),
    };
    if !field.covers(&region) {
        return Err(CliError::Config("covariate rasters do not cover the study region".into()));
    }
    design.validate_within(&region)?;
    let obs = read_observations(&cfg.observations)?;
    obs.validate(&design)?;

    let partitions = build_partitions(&region, cfg.partitions[0], cfg.partitions[1], &design)?;
    let quadrature = DesignQuadrature::new(&design, &field, cfg.quadrature)?;
    let counts = if cfg.scenarios.iter().any(|s| s.uses_counts()) {
        Some(aggregate_counts(&obs, &design, &partitions)?)
    } else {
        None
    };
    let start = default_start(field.n_covariates() + 1, design.max_ds_radius());
    let mut fits = Vec::new();
    for &scenario in &cfg.scenarios {
        let data = match &counts {
            Some(c) if scenario.uses_counts() => ScenarioData::Counts(c),
            _ => ScenarioData::Observations(&obs),
        };
        let prepared = PreparedLikelihood::compile(&quadrature, scenario, data)?;
        let result = fit_prepared(&prepared, &field, &region, &start, &cfg.fit)?;
        fits.push(FitReport::new(&result, &field.names, design.has_distance_sampling(), design.has_traps()));
    }

    let table = estimate_table(&fits);
    let file = FitFile { region: bounds_of(&region), n_ds: obs.n_ds(), n_cr: obs.n_cr(), fits };
    create_dir(out)?;
    let json = serde_json::to_string_pretty(&file).map_err(|e| CliError::Failed(e.to_string()))?;
    write(&out.join("fit.json"), &json)?;
    write(&out.join("estimates.txt"), &table)?;
    let failed: Vec<&str> = file.fits.iter().filter(|f| !f.converged).map(|f| f.scenario.as_str()).collect();
    cfg.run = Some(RunInfo::new("fit", if failed.is_empty() { "complete" } else { "not-converged" }));
    write(&out.join("manifest.toml"), &to_toml(&cfg)?)?;
    print!("{table}");
    if !failed.is_empty() {
        return Err(CliError::NotConverged(format!("optimiser did not converge for {}", failed.join(", "))));
    }
    Ok(())
}

fn summary_table(report: &StudyReport) -> String {
    let mut out = format!(
        "{:<18}{:>6}{:>9}{:>9}{:>9}{:>10}{:>10}\n",
        "model", "fits", "cp_b0", "cp_b1", "cp_lb", "re_b0", "re_lb"
    );
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".into(), |v| format!("{v:.3}"));
    for s in &report.summary {
        let t = |target| s.target(target);
        out.push_str(&format!(
            "{:<18}{:>6}{:>9}{:>9}{:>9}{:>10}{:>10}\n",
            s.scenario.as_str(),
            s.fits,
            fmt(t(Target::Beta0).and_then(|t| t.coverage)),
            fmt(t(Target::Beta1).and_then(|t| t.coverage)),
            fmt(t(Target::LambdaBar).and_then(|t| t.coverage)),
            fmt(t(Target::Beta0).and_then(|t| t.relative_efficiency)),
            fmt(t(Target::LambdaBar).and_then(|t| t.relative_efficiency)),
        ));
    }
    out
}

pub fn experiment(
    mut cfg: ExperimentConfig,
    out: &Path,
    cancel: &AtomicBool,
    stop_after: Option<usize>,
) -> Result<(), CliError> {
    cfg.study.validate()?;
    create_dir(out)?;
    cfg.run = Some(RunInfo::new("experiment", "running"));
    let manifest = out.join("manifest.toml");
    write(&manifest, &to_toml(&cfg)?)?;

    let partial_path = out.join("estimates.partial.csv");
    let io = |e: std::io::Error| Error::Io { path: partial_path.clone(), source: e };
    let mut partial = BufWriter::new(File::create(&partial_path).map_err(io)?);
    writeln!(partial, "{ESTIMATES_HEADER}").map_err(io)?;
    let control = RunControl {
        execution: cfg.execution,
        workers: cfg.workers,
        cancel: Some(cancel),
        stop_after,
        ..RunControl::default()
    };
    let result = run_study_with(&cfg.study, &control, |rows| {
        for fit in rows {
            for line in estimate_rows(fit) {
                writeln!(partial, "{line}").map_err(io)?;
            }
        }
        partial.flush().map_err(io)
    });
    drop(partial);
    let run = cfg.run.as_mut().unwrap();
    match result {
        Ok(report) => {
            emit_reports(&report, out)?;
            fs::remove_file(&partial_path).map_err(io)?;
            run.status = "complete".into();
            run.completed = Some(cfg.study.replicates);
            write(&manifest, &to_toml(&cfg)?)?;
            print!("{}", summary_table(&report));
            Ok(())
        }
        Err(Error::Interrupted { completed }) => {
            run.status = "interrupted".into();
            run.completed = Some(completed);
            write(&manifest, &to_toml(&cfg)?)?;
            Err(CliError::Failed(format!(
                "interrupted after {completed} replicates; finished rows are in {}",
                partial_path.display()
            )))
        }
        Err(e) => {
            run.status = "failed".into();
            write(&manifest, &to_toml(&cfg)?)?;
            Err(e.into())
        }
    }
}

pub fn predict_map(mut cfg: PredictConfig, out: &Path) -> Result<(), CliError> {
    let text =
        fs::read_to_string(&cfg.fit).map_err(|e| CliError::Data(format!("cannot read {}: {e}", cfg.fit.display())))?;
    let file: FitFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{} is not a fit report: {e}", cfg.fit.display())))?;
    let fit = match cfg.scenario {
        Some(s) => file.fits.iter().find(|f| f.scenario == s),
        None => file.fits.first(),
    }
    .ok_or_else(|| CliError::Config("the fit report has no such model".into()))?;
    let field = ingest_rasters(&cfg.covariates)?;
    if field.names != fit.covariates {
        return Err(CliError::Data(format!(
            "rasters provide covariates {:?} but the model was fitted to {:?}",
            field.names, fit.covariates
        )));
    }
    let region = region_of(file.region)?;
    if !field.covers(&region) {
        return Err(CliError::Config("covariate rasters do not cover the fitted region".into()));
    }
    let intensity: Vec<f64> = (0..field.grid.ncells()).map(|c| field.linear_predictor(c, &fit.beta).exp()).collect();
    let total: f64 = intensity.iter().zip(field.cell_weights(&region)).map(|(v, w)| v * w).sum();

    create_dir(out)?;
    write_raster(out.join("intensity.asc"), &field.grid, &intensity)?;
    cfg.run = Some(RunInfo::new("predict-map", "complete"));
    write(&out.join("manifest.toml"), &to_toml(&cfg)?)?;
    println!("model              {}", fit.scenario);
    println!("integrated         {total}");
    println!("lambda_bar         {}", fit.lambda_bar.estimate);
    Ok(())
}
