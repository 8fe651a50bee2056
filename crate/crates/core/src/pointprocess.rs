//! The latent point process and the two observation processes.
//!
//! Individuals follow an inhomogeneous Poisson process with intensity
//! `λ(s) = exp(x(s)'β)`. An individual inside a distance-sampling region is
//! detected with probability `exp(-d²/φ)`, one inside a trap's capture region
//! is captured with probability `θ`, and anyone outside every region is never
//! observed.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::covariates::CovariateField;
use crate::error::{Error, Result};
use crate::geometry::{check_nonoverlap, PartitionGrid, Point, StudyRegion, SurveyDesign};
use crate::rng::{stream_rng, Stream};

/// Natural-scale parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Intercept first, then one slope per covariate.
    pub beta: Vec<f64>,
    /// Half-normal scale, in squared map units.
    pub phi: f64,
    /// Per-individual capture probability inside a capture region.
    pub theta: f64,
}

impl ModelParams {
    pub fn new(beta: Vec<f64>, phi: f64, theta: f64) -> Result<Self> {
        let p = ModelParams { beta, phi, theta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.is_empty() || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("beta must be a non-empty vector of finite values".into()));
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::Config(format!("phi must be positive, got {}", self.phi)));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::Config(format!("theta must lie in (0, 1), got {}", self.theta)));
        }
        Ok(())
    }

    fn check_field(&self, field: &CovariateField) -> Result<()> {
        if self.beta.len() != field.n_covariates() + 1 {
            return Err(Error::Config(format!(
                "beta has {} entries but the field has {} covariates plus an intercept",
                self.beta.len(),
                field.n_covariates()
            )));
        }
        Ok(())
    }

    /// Detection probability at distance `d` from a distance-sampling unit.
    pub fn detection(&self, d: f64) -> f64 {
        (-d * d / self.phi).exp()
    }
}

/// `λ(s) = exp(x(s)'β)`.
pub fn intensity(params: &ModelParams, field: &CovariateField, s: &Point) -> Result<f64> {
    params.check_field(field)?;
    Ok(field.linear_predictor(field.cell_of(s)?, &params.beta).exp())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IndividualPattern {
    pub locations: Vec<Point>,
}

impl IndividualPattern {
    pub fn n(&self) -> usize {
        self.locations.len()
    }
}

/// Draws a realisation by thinning a homogeneous process at the largest
/// cell intensity inside the region. Exact for a piecewise-constant field.
pub fn simulate_ippp(
    params: &ModelParams,
    field: &CovariateField,
    region: &StudyRegion,
    seed: u64,
) -> Result<IndividualPattern> {
    params.validate()?;
    params.check_field(field)?;
    if !field.covers(region) {
        return Err(Error::Data("covariate grid does not cover the study region".into()));
    }
    let weights = field.cell_weights(region);
    let log_max = (0..field.grid.ncells())
        .filter(|&c| weights[c] > 0.0)
        .map(|c| field.linear_predictor(c, &params.beta))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut rng = stream_rng(seed, Stream::Pattern);
    let b = region.bounds;
    let expected = log_max.exp() * b.area();
    if !(expected > 0.0) || !expected.is_finite() {
        return Ok(IndividualPattern::default());
    }
    let candidates = Poisson::new(expected)
        .map_err(|e| Error::Config(format!("cannot draw a Poisson count of mean {expected}: {e}")))?
        .sample(&mut rng) as u64;
    let mut locations = Vec::new();
    for _ in 0..candidates {
        let s = Point::new(b.min.x + rng.random::<f64>() * b.width(), b.min.y + rng.random::<f64>() * b.height());
        let u: f64 = rng.random();
        if !region.contains(&s) {
            continue;
        }
        let eta = field.linear_predictor(field.cell_of(&s)?, &params.beta);
        if u < (eta - log_max).exp() {
            locations.push(s);
        }
    }
    Ok(IndividualPattern { locations })
}

/// One distance-sampling detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsRecord {
    pub unit_id: String,
    pub distance: f64,
    pub location: Option<Point>,
}

/// One capture at a trap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrRecord {
    pub unit_id: String,
    pub location: Option<Point>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObservationSet {
    pub ds: Vec<DsRecord>,
    pub cr: Vec<CrRecord>,
    /// Whether each simulated individual was observed, in pattern order.
    /// Empty for field data.
    pub observed: Vec<bool>,
}

impl ObservationSet {
    pub fn n_ds(&self) -> usize {
        self.ds.len()
    }

    pub fn n_cr(&self) -> usize {
        self.cr.len()
    }

    pub fn len(&self) -> usize {
        self.ds.len() + self.cr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn has_locations(&self) -> bool {
        self.ds.iter().all(|r| r.location.is_some()) && self.cr.iter().all(|r| r.location.is_some())
    }

    /// Checks every record against the design: known unit of the right
    /// kind, distance within the truncation radius, and any true location
    /// inside the unit's region.
    pub fn validate(&self, design: &SurveyDesign) -> Result<()> {
        let lookup =
            |id: &str| design.get(id).ok_or_else(|| Error::Data(format!("observation references unknown unit '{id}'")));
        for r in &self.ds {
            let region = lookup(&r.unit_id)?;
            if !region.is_distance_sampling() {
                return Err(Error::Data(format!("distance record at unit '{}', which is a trap", r.unit_id)));
            }
            if !(r.distance.is_finite() && (0.0..=region.radius).contains(&r.distance)) {
                return Err(Error::Data(format!(
                    "unit '{}': distance {} outside [0, {}]",
                    r.unit_id, r.distance, region.radius
                )));
            }
            if let Some(p) = &r.location {
                if !region.contains(p) {
                    return Err(Error::Data(format!(
                        "unit '{}': location ({}, {}) is outside its detection region",
                        r.unit_id, p.x, p.y
                    )));
                }
            }
        }
        for r in &self.cr {
            let region = lookup(&r.unit_id)?;
            if region.is_distance_sampling() {
                return Err(Error::Data(format!("capture record at unit '{}', which is not a trap", r.unit_id)));
            }
            if let Some(p) = &r.location {
                if !region.contains(p) {
                    return Err(Error::Data(format!(
                        "trap '{}': location ({}, {}) is outside its capture region",
                        r.unit_id, p.x, p.y
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Runs both observation processes over a pattern.
pub fn simulate_observation(
    pattern: &IndividualPattern,
    design: &SurveyDesign,
    params: &ModelParams,
    seed: u64,
) -> Result<ObservationSet> {
    params.validate()?;
    check_nonoverlap(design).into_result()?;
    let boxes: Vec<_> = design.regions.iter().map(|r| r.bbox()).collect();
    let mut rng = stream_rng(seed, Stream::Observation);
    let mut obs = ObservationSet { observed: Vec::with_capacity(pattern.n()), ..Default::default() };
    for s in &pattern.locations {
        let owner = design.regions.iter().zip(&boxes).find(|(r, b)| b.contains(s) && r.contains(s)).map(|(r, _)| r);
        let seen = match owner {
            None => false,
            Some(region) if region.is_distance_sampling() => {
                let d = region.distance(s);
                let hit = rng.random::<f64>() < params.detection(d);
                if hit {
                    obs.ds.push(DsRecord { unit_id: region.id().to_string(), distance: d, location: Some(*s) });
                }
                hit
            }
            Some(region) => {
                let hit = rng.random::<f64>() < params.theta;
                if hit {
                    obs.cr.push(CrRecord { unit_id: region.id().to_string(), location: Some(*s) });
                }
                hit
            }
        };
        obs.observed.push(seen);
    }
    Ok(obs)
}

/// Drops everything a field survey would not record: true locations and the
/// per-individual observed flags.
pub fn degrade_to_partial(obs: &ObservationSet) -> ObservationSet {
    ObservationSet {
        ds: obs.ds.iter().map(|r| DsRecord { location: None, ..r.clone() }).collect(),
        cr: obs.cr.iter().map(|r| CrRecord { location: None, ..r.clone() }).collect(),
        observed: Vec::new(),
    }
}

/// Observation counts on the sampled cells of a partition grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCounts {
    pub partitions: PartitionGrid,
    /// Indices of the sampled cells, ascending.
    pub cells: Vec<usize>,
    pub counts: Vec<u64>,
}

impl CellCounts {
    /// Counts for every sampled cell of `partitions`, in ascending cell
    /// order.
    pub fn new(partitions: PartitionGrid, counts: &[i64]) -> Result<Self> {
        let cells = partitions.sampled_cells();
        if counts.len() != cells.len() {
            return Err(Error::Data(format!("{} counts for {} sampled cells", counts.len(), cells.len())));
        }
        if let Some(i) = counts.iter().position(|&c| c < 0) {
            return Err(Error::Data(format!("negative count {} in cell {}", counts[i], cells[i])));
        }
        Ok(CellCounts { partitions, cells, counts: counts.iter().map(|&c| c as u64).collect() })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn count_of(&self, cell: usize) -> Option<u64> {
        self.cells.binary_search(&cell).ok().map(|i| self.counts[i])
    }
}

/// Counts observations per sampled cell. Each record goes to the cell that
/// holds its unit's reference point (the transect midpoint for transects).
pub fn aggregate_counts(obs: &ObservationSet, design: &SurveyDesign, partitions: &PartitionGrid) -> Result<CellCounts> {
    let cells = partitions.sampled_cells();
    let mut counts = vec![0i64; cells.len()];
    let ids = obs.ds.iter().map(|r| &r.unit_id).chain(obs.cr.iter().map(|r| &r.unit_id));
    for id in ids {
        let region =
            design.get(id).ok_or_else(|| Error::Data(format!("observation references unknown unit '{id}'")))?;
        let reference = region.unit.reference_point();
        let slot = partitions
            .cell_of(&reference)
            .and_then(|c| cells.binary_search(&c).ok())
            .ok_or_else(|| Error::Data(format!("unit '{id}' does not lie in a sampled cell of the partition grid")))?;
        counts[slot] += 1;
    }
    CellCounts::new(partitions.clone(), &counts)
}

const OBS_HEADER: [&str; 3] = ["source", "unit_id", "distance"];

/// Reads `source,unit_id,distance[,x,y]` where `source` is `ds` or `cr`
/// and the distance is empty on capture rows.
pub fn read_observations(path: impl AsRef<Path>) -> Result<ObservationSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_observations(&text, path)
}

pub(crate) fn parse_observations(text: &str, path: &Path) -> Result<ObservationSet> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let with_xy = match headers.len() {
        3 => false,
        5 if headers[3] == "x" && headers[4] == "y" => true,
        _ => false,
    };
    if headers[..3.min(headers.len())] != OBS_HEADER || (headers.len() != 3 && !with_xy) {
        return Err(Error::parse(
            path,
            1,
            format!("expected header 'source,unit_id,distance' with optional 'x,y', found '{}'", headers.join(",")),
        ));
    }
    let mut obs = ObservationSet::default();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let fail = |msg: String| Error::parse(path, line, msg);
        let location = if with_xy && !(record[3].is_empty() && record[4].is_empty()) {
            let x: f64 = record[3].parse().map_err(|_| fail(format!("bad x '{}'", &record[3])))?;
            let y: f64 = record[4].parse().map_err(|_| fail(format!("bad y '{}'", &record[4])))?;
            Some(Point::new(x, y))
        } else {
            None
        };
        let unit_id = record[1].to_string();
        if unit_id.is_empty() {
            return Err(fail("empty unit_id".into()));
        }
        match record[0].to_ascii_lowercase().as_str() {
            "ds" => {
                let distance: f64 = record[2].parse().map_err(|_| fail(format!("bad distance '{}'", &record[2])))?;
                obs.ds.push(DsRecord { unit_id, distance, location });
            }
            "cr" => {
                if !record[2].is_empty() {
                    return Err(fail("capture rows must leave the distance empty".into()));
                }
                obs.cr.push(CrRecord { unit_id, location });
            }
            other => return Err(fail(format!("unknown source '{other}' (expected ds or cr)"))),
        }
    }
    Ok(obs)
}

/// Writes the observation file. `x,y` columns are included when any record
/// carries a location.
pub fn write_observations(obs: &ObservationSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let with_xy = obs.ds.iter().any(|r| r.location.is_some()) || obs.cr.iter().any(|r| r.location.is_some());
    let xy = |p: &Option<Point>| match p {
        Some(p) => format!(",{},{}", p.x, p.y),
        None => ",,".to_string(),
    };
    let mut out = Vec::new();
    writeln!(out, "{}{}", OBS_HEADER.join(","), if with_xy { ",x,y" } else { "" }).unwrap();
    for r in &obs.ds {
        let tail = if with_xy { xy(&r.location) } else { String::new() };
        writeln!(out, "ds,{},{}{}", r.unit_id, r.distance, tail).unwrap();
    }
    for r in &obs.cr {
        let tail = if with_xy { xy(&r.location) } else { String::new() };
        writeln!(out, "cr,{},{}", r.unit_id, tail).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes the true pattern as `x,y` rows.
pub fn write_pattern(pattern: &IndividualPattern, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("x,y\n");
    for p in &pattern.locations {
        out.push_str(&format!("{},{}\n", p.x, p.y));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
