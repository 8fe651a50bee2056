//! Log-likelihoods of the five competing models.
//!
//! | scenario          | data                   | observation term                      |
//! |-------------------|------------------------|---------------------------------------|
//! | `complete`        | true locations         | `x(u)'β − d²/φ` or `x(u)'β + log θ`   |
//! | `aggregated-farr` | counts on sampled cells| Poisson, centroid covariate           |
//! | `aggregated-cos`  | counts on sampled cells| Poisson, mean integrated over the cell|
//! | `fused-region`    | unit ids               | `log ∫_A λq / |A|`                    |
//! | `fused-distance`  | unit ids + distances   | `−d²/φ + log mean_L λ` for DS         |
//!
//! The complete and fused models subtract the exposure `∫ λ q_ds + θ ∫ λ`
//! over all detection and capture regions.
//!
//! Every model is compiled once into integrals over "slots" (the covariate
//! cells the quadrature touches) and "rings" (the distinct squared distances
//! among detection nodes), so one evaluation costs one `exp` per slot and per
//! ring plus linear passes over the compiled terms.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::covariates::{CovariateField, Grid};
use crate::error::{Error, Result};
use crate::geometry::{
    area_nodes, line_rule, AreaNode, ObservedLocationSupport, Point, SurveyDesign, DEFAULT_LINE_NODES,
    DEFAULT_SPACING_DIVISOR,
};
use crate::pointprocess::{CellCounts, ModelParams, ObservationSet};

/// Observation-term integrals are clamped here before taking logs.
pub const INTEGRAL_FLOOR: f64 = 1e-300;

/// Unconstrained parameters: `φ = exp(log_phi)`, `θ = 1/(1 + exp(-logit_theta))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingParams {
    pub beta: Vec<f64>,
    pub log_phi: f64,
    pub logit_theta: f64,
}

pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl WorkingParams {
    pub fn from_model(p: &ModelParams) -> Self {
        WorkingParams { beta: p.beta.clone(), log_phi: p.phi.ln(), logit_theta: logit(p.theta) }
    }

    /// Back-transform. Fails only when `θ` saturates to exactly 0 or 1.
    pub fn to_model(&self) -> Result<ModelParams> {
        ModelParams::new(self.beta.clone(), self.phi(), self.theta())
    }

    pub fn phi(&self) -> f64 {
        self.log_phi.exp()
    }

    pub fn theta(&self) -> f64 {
        expit(self.logit_theta)
    }

    /// `log θ`, accurate far into the lower tail.
    fn log_theta(&self) -> f64 {
        -(-self.logit_theta).exp().ln_1p()
    }

    pub fn is_finite(&self) -> bool {
        self.beta.iter().all(|b| b.is_finite()) && self.log_phi.is_finite() && self.logit_theta.is_finite()
    }
}

/// Which working coordinates are optimised, in the order
/// `β_0..β_q, log φ, logit θ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub n_beta: usize,
    pub phi: bool,
    pub theta: bool,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.n_beta + self.phi as usize + self.theta as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.n_beta).map(|j| format!("beta{j}")).collect();
        if self.phi {
            names.push("log_phi".into());
        }
        if self.theta {
            names.push("logit_theta".into());
        }
        names
    }

    pub fn phi_index(&self) -> Option<usize> {
        self.phi.then_some(self.n_beta)
    }

    pub fn theta_index(&self) -> Option<usize> {
        self.theta.then_some(self.n_beta + self.phi as usize)
    }

    pub fn pack(&self, wp: &WorkingParams) -> Vec<f64> {
        let mut x = wp.beta[..self.n_beta].to_vec();
        if self.phi {
            x.push(wp.log_phi);
        }
        if self.theta {
            x.push(wp.logit_theta);
        }
        x
    }

    /// Fills the optimised coordinates from `x`; the rest come from `base`.
    pub fn unpack(&self, x: &[f64], base: &WorkingParams) -> WorkingParams {
        let mut wp = base.clone();
        wp.beta[..self.n_beta].copy_from_slice(&x[..self.n_beta]);
        if let Some(i) = self.phi_index() {
            wp.log_phi = x[i];
        }
        if let Some(i) = self.theta_index() {
            wp.logit_theta = x[i];
        }
        wp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Complete,
    AggregatedFarr,
    AggregatedCos,
    FusedRegion,
    FusedDistance,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Complete,
        Scenario::AggregatedFarr,
        Scenario::AggregatedCos,
        Scenario::FusedRegion,
        Scenario::FusedDistance,
    ];

    /// The four models that need no true locations.
    pub const PARTIAL: [Scenario; 4] =
        [Scenario::AggregatedFarr, Scenario::AggregatedCos, Scenario::FusedRegion, Scenario::FusedDistance];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Complete => "complete",
            Scenario::AggregatedFarr => "aggregated-farr",
            Scenario::AggregatedCos => "aggregated-cos",
            Scenario::FusedRegion => "fused-region",
            Scenario::FusedDistance => "fused-distance",
        }
    }

    /// 1-based scenario number.
    pub fn number(self) -> usize {
        Scenario::ALL.iter().position(|&s| s == self).unwrap() + 1
    }

    pub fn uses_counts(self) -> bool {
        matches!(self, Scenario::AggregatedFarr | Scenario::AggregatedCos)
    }

    pub fn is_fused(self) -> bool {
        matches!(self, Scenario::FusedRegion | Scenario::FusedDistance)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    /// Accepts the kebab-case name or the scenario number.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Scenario::ALL
            .iter()
            .copied()
            .find(|sc| sc.as_str() == s || sc.number().to_string() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown scenario '{s}' (expected one of complete, aggregated-farr, aggregated-cos, fused-region, fused-distance or 1-5)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSettings {
    /// Area-rule node spacing in map units. When absent, each region uses
    /// its radius divided by `divisor`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<f64>,
    #[serde(default = "default_divisor")]
    pub divisor: f64,
    /// Nodes per circle or pair of parallel lines.
    #[serde(default = "default_line_nodes")]
    pub line_nodes: usize,
}

fn default_divisor() -> f64 {
    DEFAULT_SPACING_DIVISOR
}

fn default_line_nodes() -> usize {
    DEFAULT_LINE_NODES
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        QuadratureSettings { spacing: None, divisor: DEFAULT_SPACING_DIVISOR, line_nodes: DEFAULT_LINE_NODES }
    }
}

impl QuadratureSettings {
    pub fn validate(&self) -> Result<()> {
        if let Some(h) = self.spacing {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::Config(format!("quadrature spacing must be positive, got {h}")));
            }
        }
        if !(self.divisor.is_finite() && self.divisor > 0.0) {
            return Err(Error::Config(format!("quadrature divisor must be positive, got {}", self.divisor)));
        }
        if self.line_nodes < 8 {
            return Err(Error::Config(format!("line rules need at least 8 nodes, got {}", self.line_nodes)));
        }
        Ok(())
    }

    pub fn spacing_for(&self, radius: f64) -> f64 {
        self.spacing.unwrap_or(radius / self.divisor)
    }

    /// The same settings with every area spacing divided by `factor`.
    pub fn refined(&self, factor: f64) -> Self {
        QuadratureSettings {
            spacing: self.spacing.map(|h| h / factor),
            divisor: self.divisor * factor,
            line_nodes: self.line_nodes,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum ScenarioData<'a> {
    Observations(&'a ObservationSet),
    Counts(&'a CellCounts),
}

/// Everything a log-likelihood depends on besides the parameters.
#[derive(Debug, Clone, Copy)]
pub struct LikelihoodSpec<'a> {
    pub scenario: Scenario,
    pub data: ScenarioData<'a>,
    pub design: &'a SurveyDesign,
    pub field: &'a CovariateField,
    pub quadrature: QuadratureSettings,
}

/// Area-rule nodes of every sampled region, with the covariate cell of each
/// node. Independent of the data, so a study builds it once and reuses it for
/// every replicate.
#[derive(Debug, Clone)]
pub struct DesignQuadrature {
    design: SurveyDesign,
    field: CovariateField,
    quadrature: QuadratureSettings,
    nodes: Vec<Vec<(AreaNode, usize)>>,
}

impl DesignQuadrature {
    pub fn new(design: &SurveyDesign, field: &CovariateField, quadrature: QuadratureSettings) -> Result<Self> {
        quadrature.validate()?;
        let nodes = design
            .regions
            .iter()
            .map(|r| {
                let mut out = Vec::new();
                for n in area_nodes(r, quadrature.spacing_for(r.radius))? {
                    if field.grid.cell_of(&n.point).is_none() {
                        return Err(Error::Data(format!(
                            "unit {}: part of its region lies outside the covariate grid",
                            r.id()
                        )));
                    }
                    split_node(&n, &field.grid, &mut out);
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DesignQuadrature { design: design.clone(), field: field.clone(), quadrature, nodes })
    }

    pub fn design(&self) -> &SurveyDesign {
        &self.design
    }

    pub fn field(&self) -> &CovariateField {
        &self.field
    }

    pub fn quadrature(&self) -> QuadratureSettings {
        self.quadrature
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.iter().map(Vec::len).sum()
    }
}

/// Spreads a node's weight over the covariate cells its lattice square
/// overlaps, so a piecewise-constant field is integrated exactly over the
/// square. Each piece keeps the node's distance.
fn split_node(node: &AreaNode, grid: &Grid, out: &mut Vec<(AreaNode, usize)>) {
    let whole = |out: &mut Vec<(AreaNode, usize)>| {
        out.push((*node, grid.cell_of(&node.point).expect("checked by the caller")));
    };
    let Some(sq) = node.square else {
        return whole(out);
    };
    let h = grid.cell_size;
    let range = |lo: f64, hi: f64, origin: f64, n: usize| {
        let a = ((lo - origin) / h).floor().max(0.0) as usize;
        let b = (((hi - origin) / h).ceil().max(0.0) as usize).min(n);
        a..b
    };
    let area = sq.area();
    let mut pieces = Vec::new();
    for row in range(sq.min.y, sq.max.y, grid.origin.y, grid.nrows) {
        for col in range(sq.min.x, sq.max.x, grid.origin.x, grid.ncols) {
            let cell = row * grid.ncols + col;
            let c = grid.cell_rect(cell);
            let (x0, x1) = (sq.min.x.max(c.min.x), sq.max.x.min(c.max.x));
            let (y0, y1) = (sq.min.y.max(c.min.y), sq.max.y.min(c.max.y));
            let share = (x1 - x0).max(0.0) * (y1 - y0).max(0.0) / area;
            // Slivers from rounding at shared edges.
            if share > 1e-9 {
                pieces.push((cell, share, Point::new(0.5 * (x0 + x1), 0.5 * (y0 + y1))));
            }
        }
    }
    let total: f64 = pieces.iter().map(|p| p.1).sum();
    if pieces.len() < 2 {
        return whole(out);
    }
    for (cell, share, point) in pieces {
        out.push((AreaNode { point, weight: node.weight * share / total, ..*node }, cell));
    }
}

/// `Σ w λ_s q_r` over detection nodes + `θ Σ w λ_s` over capture nodes
/// + `Σ w λ_s` over plain nodes.
#[derive(Debug, Clone, Default)]
struct Integral {
    ds: Vec<(u32, u32, f64)>,
    cr: Vec<(u32, f64)>,
    plain: Vec<(u32, f64)>,
}

impl Integral {
    fn is_empty(&self) -> bool {
        self.ds.is_empty() && self.cr.is_empty() && self.plain.is_empty()
    }

    fn eval(&self, lam: &[f64], q: &[f64], theta: f64) -> f64 {
        let ds: f64 = self.ds.iter().map(|&(s, r, w)| w * lam[s as usize] * q[r as usize]).sum();
        let cr: f64 = self.cr.iter().map(|&(s, w)| w * lam[s as usize]).sum();
        let plain: f64 = self.plain.iter().map(|&(s, w)| w * lam[s as usize]).sum();
        ds + theta * cr + plain
    }

    /// Merges entries that share a slot (and ring).
    fn compact(mut self) -> Self {
        fn merge<K: Ord + Copy>(mut v: Vec<(K, f64)>) -> Vec<(K, f64)> {
            v.sort_by_key(|a| a.0);
            let mut out: Vec<(K, f64)> = Vec::with_capacity(v.len());
            for (k, w) in v {
                match out.last_mut() {
                    Some(last) if last.0 == k => last.1 += w,
                    _ => out.push((k, w)),
                }
            }
            out
        }
        self.ds = merge(self.ds.into_iter().map(|(s, r, w)| ((s, r), w)).collect())
            .into_iter()
            .map(|((s, r), w)| (s, r, w))
            .collect();
        self.cr = merge(self.cr);
        self.plain = merge(self.plain);
        self
    }
}

#[derive(Debug, Default)]
struct Builder {
    slot_of: HashMap<usize, u32>,
    slots: Vec<usize>,
    ring_of: HashMap<u64, u32>,
    rings: Vec<f64>,
}

impl Builder {
    fn slot(&mut self, cell: usize) -> u32 {
        let next = self.slots.len() as u32;
        *self.slot_of.entry(cell).or_insert_with(|| {
            self.slots.push(cell);
            next
        })
    }

    fn ring(&mut self, dist2: f64) -> u32 {
        let next = self.rings.len() as u32;
        *self.ring_of.entry(dist2.to_bits()).or_insert_with(|| {
            self.rings.push(dist2);
            next
        })
    }

    /// Adds one area node of a region, keyed by its covariate cell.
    fn push_node(&mut self, into: &mut Integral, node: &AreaNode, cell: usize, ds: bool) {
        let s = self.slot(cell);
        if ds {
            let r = self.ring(node.dist2);
            into.ds.push((s, r, node.weight));
        } else {
            into.cr.push((s, node.weight));
        }
    }
}

/// A model compiled against one data set.
#[derive(Debug, Clone)]
pub struct PreparedLikelihood {
    scenario: Scenario,
    layout: ParamLayout,
    /// Covariates of each slot's cell, `q` per slot.
    slot_x: Vec<f64>,
    n_slots: usize,
    rings: Vec<f64>,
    ds_spacing: Option<f64>,
    integrals: Vec<Integral>,
    exposure: Vec<usize>,
    /// `(integral, multiplicity, log scale)`: adds `m (log I + scale)`.
    log_terms: Vec<(usize, f64, f64)>,
    /// `(integral, count, log count!)`.
    poisson: Vec<(usize, f64, f64)>,
    /// `Σ a_s η_s`.
    linear: Vec<(u32, f64)>,
    /// Coefficient of `-1/φ`.
    sum_d2: f64,
    /// Coefficient of `log θ`.
    n_log_theta: f64,
}

impl PreparedLikelihood {
    pub fn new(spec: &LikelihoodSpec) -> Result<Self> {
        let quad = DesignQuadrature::new(spec.design, spec.field, spec.quadrature)?;
        Self::compile(&quad, spec.scenario, spec.data)
    }

    /// Compiles `scenario` for `data` against precomputed design nodes.
    pub fn compile(quad: &DesignQuadrature, scenario: Scenario, data: ScenarioData) -> Result<Self> {
        let design = &quad.design;
        let field = &quad.field;
        let mut b = Builder::default();
        let mut integrals = Vec::new();
        let mut exposure = Vec::new();
        let mut log_terms = Vec::new();
        let mut poisson = Vec::new();
        let mut linear: HashMap<u32, f64> = HashMap::new();
        let mut sum_d2 = 0.0;
        let mut n_log_theta = 0.0;

        let unit_integrals = |b: &mut Builder, integrals: &mut Vec<Integral>| -> Vec<usize> {
            design
                .regions
                .iter()
                .zip(&quad.nodes)
                .map(|(r, nodes)| {
                    let mut integral = Integral::default();
                    for (n, cell) in nodes {
                        b.push_node(&mut integral, n, *cell, r.is_distance_sampling());
                    }
                    integrals.push(integral.compact());
                    integrals.len() - 1
                })
                .collect()
        };

        match (scenario, data) {
            (Scenario::AggregatedFarr | Scenario::AggregatedCos, ScenarioData::Counts(counts)) => {
                let grid = &counts.partitions;
                let first = integrals.len();
                integrals.extend(counts.cells.iter().map(|_| Integral::default()));
                let centroid_slots: Vec<u32> = counts
                    .cells
                    .iter()
                    .map(|&c| {
                        let center = grid.cells[c].center();
                        field.cell_of(&center).map(|cell| b.slot(cell))
                    })
                    .collect::<Result<_>>()?;
                for (r, nodes) in design.regions.iter().zip(&quad.nodes) {
                    for (n, cell) in nodes {
                        let Some(k) = grid.cell_of(&n.point).and_then(|c| counts.cells.binary_search(&c).ok()) else {
                            continue;
                        };
                        let target = &mut integrals[first + k];
                        if scenario == Scenario::AggregatedFarr {
                            let s = centroid_slots[k];
                            if r.is_distance_sampling() {
                                let ring = b.ring(n.dist2);
                                target.ds.push((s, ring, n.weight));
                            } else {
                                target.cr.push((s, n.weight));
                            }
                        } else {
                            b.push_node(target, n, *cell, r.is_distance_sampling());
                        }
                    }
                }
                for (k, &n) in counts.counts.iter().enumerate() {
                    let idx = first + k;
                    integrals[idx] = std::mem::take(&mut integrals[idx]).compact();
                    let n = n as f64;
                    poisson.push((idx, n, ln_gamma(n + 1.0)));
                }
            }
            (Scenario::AggregatedFarr | Scenario::AggregatedCos, ScenarioData::Observations(_)) => {
                return Err(Error::Config(format!(
                    "scenario {scenario} needs per-cell counts, not individual observations"
                )));
            }
            (_, ScenarioData::Counts(_)) => {
                return Err(Error::Config(format!(
                    "scenario {scenario} needs individual observations, not per-cell counts"
                )));
            }
            (_, ScenarioData::Observations(obs)) => {
                obs.validate(design)?;
                // Canonical record order, so every sum is reduced the same way
                // however the input was ordered.
                let obs = &canonical(obs, design);
                let units = unit_integrals(&mut b, &mut integrals);
                exposure.extend(&units);
                match scenario {
                    Scenario::Complete => {
                        if !obs.has_locations() {
                            return Err(Error::Data(
                                "the complete-location model needs x,y for every record; the data carry distances or trap ids only"
                                    .into(),
                            ));
                        }
                        let locations = obs.ds.iter().map(|r| r.location).chain(obs.cr.iter().map(|r| r.location));
                        for loc in locations {
                            let s = b.slot(field.cell_of(&loc.expect("checked above"))?);
                            *linear.entry(s).or_insert(0.0) += 1.0;
                        }
                        sum_d2 = obs.ds.iter().map(|r| r.distance * r.distance).sum();
                        n_log_theta = obs.n_cr() as f64;
                    }
                    Scenario::FusedRegion | Scenario::FusedDistance => {
                        let mut per_unit = vec![0usize; design.len()];
                        let records = obs
                            .cr
                            .iter()
                            .map(|r| &r.unit_id)
                            .chain(obs.ds.iter().filter(|_| scenario == Scenario::FusedRegion).map(|r| &r.unit_id));
                        for id in records {
                            per_unit[design.index_of(id).expect("validated")] += 1;
                        }
                        for (u, &n) in per_unit.iter().enumerate() {
                            if n > 0 {
                                let measure = design.regions[u].measure();
                                log_terms.push((units[u], n as f64, -measure.ln()));
                            }
                        }
                        if scenario == Scenario::FusedDistance {
                            for r in &obs.ds {
                                let region = design.get(&r.unit_id).expect("validated");
                                let support = ObservedLocationSupport::lines(region, r.distance)?;
                                let rule = line_rule(&support, quad.quadrature.line_nodes)?;
                                let total = rule.total_weight();
                                let mut integral = Integral::default();
                                for (p, w) in rule.nodes.iter().zip(&rule.weights) {
                                    let cell = field.cell_of(p).map_err(|_| {
                                        Error::Data(format!(
                                            "unit {}: the lines at distance {} leave the covariate grid",
                                            r.unit_id, r.distance
                                        ))
                                    })?;
                                    let w = if total > 0.0 { w / total } else { 1.0 / rule.len() as f64 };
                                    integral.plain.push((b.slot(cell), w));
                                }
                                integrals.push(integral.compact());
                                log_terms.push((integrals.len() - 1, 1.0, 0.0));
                            }
                            sum_d2 = obs.ds.iter().map(|r| r.distance * r.distance).sum();
                        }
                    }
                    _ => unreachable!(),
                }
            }
        }

        let q = field.n_covariates();
        let mut slot_x = Vec::with_capacity(b.slots.len() * q);
        for &cell in &b.slots {
            slot_x.extend_from_slice(field.cell_covariates(cell));
        }
        let mut linear: Vec<(u32, f64)> = linear.into_iter().collect();
        linear.sort_by_key(|&(s, _)| s);
        let layout = ParamLayout { n_beta: q + 1, phi: design.has_distance_sampling(), theta: design.has_traps() };
        Ok(PreparedLikelihood {
            scenario,
            layout,
            n_slots: b.slots.len(),
            slot_x,
            rings: b.rings,
            ds_spacing: design
                .regions
                .iter()
                .filter(|r| r.is_distance_sampling())
                .map(|r| quad.quadrature.spacing_for(r.radius))
                .reduce(f64::max),
            integrals,
            exposure,
            log_terms,
            poisson,
            linear,
            sum_d2,
            n_log_theta,
        })
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    /// Largest squared distance reached by a distance-sampling node.
    pub fn max_dist2(&self) -> f64 {
        self.rings.iter().copied().fold(0.0, f64::max)
    }

    /// Coarsest node spacing over the distance-sampling regions.
    pub fn ds_spacing(&self) -> Option<f64> {
        self.ds_spacing
    }

    /// The working coordinates the likelihood depends on.
    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn loglik(&self, wp: &WorkingParams) -> Result<f64> {
        if wp.beta.len() != self.layout.n_beta {
            return Err(Error::Config(format!(
                "expected {} regression coefficients, got {}",
                self.layout.n_beta,
                wp.beta.len()
            )));
        }
        Ok(self.eval(wp))
    }

    /// Negative log-likelihood at packed working coordinates.
    pub fn objective<'a>(&'a self, base: &'a WorkingParams) -> impl Fn(&[f64]) -> f64 + 'a {
        self.objective_in(self.layout, base)
    }

    /// Like [`objective`](Self::objective) over a sub-layout; coordinates it
    /// leaves out are held at their `base` values.
    pub fn objective_in<'a>(&'a self, layout: ParamLayout, base: &'a WorkingParams) -> impl Fn(&[f64]) -> f64 + 'a {
        move |x| -self.eval(&layout.unpack(x, base))
    }

    /// Like [`objective_in`](Self::objective_in), except that the `φ` slot
    /// holds the detection rate `α = 1/φ`. The likelihood is smooth in `α`
    /// through zero, which keeps curvature measurable when detection is
    /// nearly flat.
    pub fn objective_rate_in<'a>(
        &'a self,
        layout: ParamLayout,
        base: &'a WorkingParams,
    ) -> impl Fn(&[f64]) -> f64 + 'a {
        move |x| {
            let wp = layout.unpack(x, base);
            let inv_phi = match layout.phi_index() {
                Some(i) => x[i],
                None => (-base.log_phi).exp(),
            };
            -self.eval_at(&wp.beta, inv_phi, &wp)
        }
    }

    fn eval(&self, wp: &WorkingParams) -> f64 {
        self.eval_at(&wp.beta, (-wp.log_phi).exp(), wp)
    }

    /// `θ` terms come from `wp`; `inv_phi` replaces its `φ`.
    fn eval_at(&self, beta: &[f64], inv_phi: f64, wp: &WorkingParams) -> f64 {
        let q = self.layout.n_beta - 1;
        let mut eta = Vec::with_capacity(self.n_slots);
        for s in 0..self.n_slots {
            let x = &self.slot_x[s * q..(s + 1) * q];
            eta.push(beta[0] + x.iter().zip(&beta[1..]).map(|(x, b)| x * b).sum::<f64>());
        }
        let lam: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
        let qr: Vec<f64> = self.rings.iter().map(|d2| (-d2 * inv_phi).exp()).collect();
        let theta = wp.theta();
        let values: Vec<f64> = self.integrals.iter().map(|i| i.eval(&lam, &qr, theta)).collect();

        let mut ll = 0.0;
        for &(s, a) in &self.linear {
            ll += a * eta[s as usize];
        }
        if self.sum_d2 != 0.0 {
            ll -= self.sum_d2 * inv_phi;
        }
        if self.n_log_theta != 0.0 {
            ll += self.n_log_theta * wp.log_theta();
        }
        for &(k, m, scale) in &self.log_terms {
            ll += m * (values[k].max(INTEGRAL_FLOOR).ln() + scale);
        }
        for &(k, n, ln_fact) in &self.poisson {
            let mu = values[k];
            if n > 0.0 {
                if self.integrals[k].is_empty() {
                    return f64::NEG_INFINITY;
                }
                ll += n * mu.max(INTEGRAL_FLOOR).ln();
            }
            ll -= mu + ln_fact;
        }
        for &k in &self.exposure {
            ll -= values[k];
        }
        ll
    }

    /// The exposure term `∫ λ q_ds + θ ∫ λ` over all regions (zero for the
    /// aggregated models, which have none).
    pub fn exposure(&self, wp: &WorkingParams) -> f64 {
        let mut copy = self.clone();
        copy.linear.clear();
        copy.log_terms.clear();
        copy.poisson.clear();
        copy.sum_d2 = 0.0;
        copy.n_log_theta = 0.0;
        -copy.eval(wp)
    }

    /// Poisson means of the sampled cells, in cell order (aggregated models).
    pub fn cell_means(&self, wp: &WorkingParams) -> Vec<f64> {
        let q = self.layout.n_beta - 1;
        let lam: Vec<f64> = (0..self.n_slots)
            .map(|s| {
                let x = &self.slot_x[s * q..(s + 1) * q];
                (wp.beta[0] + x.iter().zip(&wp.beta[1..]).map(|(x, b)| x * b).sum::<f64>()).exp()
            })
            .collect();
        let inv_phi = (-wp.log_phi).exp();
        let qr: Vec<f64> = self.rings.iter().map(|d2| (-d2 * inv_phi).exp()).collect();
        self.poisson.iter().map(|&(k, _, _)| self.integrals[k].eval(&lam, &qr, wp.theta())).collect()
    }
}

fn loglik_as(scenario: Scenario, wp: &WorkingParams, spec: &LikelihoodSpec) -> Result<f64> {
    let spec = LikelihoodSpec { scenario, ..*spec };
    PreparedLikelihood::new(&spec)?.loglik(wp)
}

/// Log-likelihood of `spec.scenario`.
fn canonical(obs: &ObservationSet, design: &SurveyDesign) -> ObservationSet {
    let unit = |id: &str| design.index_of(id).expect("validated");
    let at = |p: &Option<Point>| p.map_or((f64::NAN, f64::NAN), |p| (p.x, p.y));
    let mut out = obs.clone();
    out.ds.sort_by(|a, b| {
        (unit(&a.unit_id), a.distance, at(&a.location).0, at(&a.location).1)
            .partial_cmp(&(unit(&b.unit_id), b.distance, at(&b.location).0, at(&b.location).1))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    out.cr.sort_by(|a, b| {
        (unit(&a.unit_id), at(&a.location).0, at(&a.location).1)
            .partial_cmp(&(unit(&b.unit_id), at(&b.location).0, at(&b.location).1))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    out
}

pub fn loglik(wp: &WorkingParams, spec: &LikelihoodSpec) -> Result<f64> {
    loglik_as(spec.scenario, wp, spec)
}

pub fn loglik_complete(wp: &WorkingParams, spec: &LikelihoodSpec) -> Result<f64> {
    loglik_as(Scenario::Complete, wp, spec)
}

pub fn loglik_aggregated_farr(wp: &WorkingParams, spec: &LikelihoodSpec) -> Result<f64> {
    loglik_as(Scenario::AggregatedFarr, wp, spec)
}

pub fn loglik_aggregated_cos(wp: &WorkingParams, spec: &LikelihoodSpec) -> Result<f64> {
    loglik_as(Scenario::AggregatedCos, wp, spec)
}

pub fn loglik_fused_region(wp: &WorkingParams, spec: &LikelihoodSpec) -> Result<f64> {
    loglik_as(Scenario::FusedRegion, wp, spec)
}

pub fn loglik_fused_distance(wp: &WorkingParams, spec: &LikelihoodSpec) -> Result<f64> {
    loglik_as(Scenario::FusedDistance, wp, spec)
}
