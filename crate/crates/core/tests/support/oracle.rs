//! A 25-cell toy survey and a brute-force evaluator of all five
//! log-likelihoods on it.
//!
//! The oracle evaluates every quadrature node directly: covariates through
//! `CovariateField::evaluate`, distances through `distance_to_unit`, cell
//! membership by its own floor arithmetic. Nothing from the compiled
//! likelihood path is reused.

use fusesdm::covariates::{CovariateField, Grid};
use fusesdm::geometry::{
    area_rule, build_partitions, distance_to_unit, line_rule, ObservedLocationSupport, Point, SampledRegion,
    StudyRegion, SurveyDesign, SurveyUnit,
};
use fusesdm::likelihoods::{LikelihoodSpec, QuadratureSettings, Scenario, ScenarioData, WorkingParams};
use fusesdm::pointprocess::{
    aggregate_counts, degrade_to_partial, simulate_ippp, simulate_observation, CellCounts, ModelParams, ObservationSet,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SPACING: f64 = 0.01;
pub const LINE_NODES: usize = 64;

pub struct Toy {
    pub field: CovariateField,
    pub design: SurveyDesign,
    pub complete: ObservationSet,
    pub partial: ObservationSet,
    pub counts: CellCounts,
}

pub fn toy() -> Toy {
    let grid = Grid::new(Point::new(0.0, 0.0), 0.2, 5, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let values: Vec<f64> = (0..25).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let field = CovariateField::from_layers(grid, vec![("x1".into(), values)]).unwrap();
    let design = SurveyDesign::new(vec![
        SampledRegion::new(SurveyUnit::point("p1", Point::new(0.3, 0.3)).unwrap(), 0.08).unwrap(),
        SampledRegion::new(SurveyUnit::transect("t1", vec![Point::new(0.5, 0.7), Point::new(0.9, 0.7)]).unwrap(), 0.06)
            .unwrap(),
        SampledRegion::new(SurveyUnit::trap("k1", Point::new(0.75, 0.25)).unwrap(), 0.05).unwrap(),
        SampledRegion::new(SurveyUnit::trap("k2", Point::new(0.2, 0.75)).unwrap(), 0.05).unwrap(),
    ])
    .unwrap();
    let truth = ModelParams::new(vec![7.5, 0.8], 0.004, 0.3).unwrap();
    let region = StudyRegion::unit_square();
    let pattern = simulate_ippp(&truth, &field, &region, 5).unwrap();
    let complete = simulate_observation(&pattern, &design, &truth, 5).unwrap();
    assert!(complete.n_ds() >= 10 && complete.n_cr() >= 5, "toy too sparse");
    let partial = degrade_to_partial(&complete);
    let partitions = build_partitions(&region, 5, 5, &design).unwrap();
    let counts = aggregate_counts(&partial, &design, &partitions).unwrap();
    Toy { field, design, complete, partial, counts }
}

pub fn settings() -> QuadratureSettings {
    QuadratureSettings { spacing: Some(SPACING), line_nodes: LINE_NODES, ..Default::default() }
}

pub fn spec<'a>(toy: &'a Toy, scenario: Scenario) -> LikelihoodSpec<'a> {
    let data = match scenario {
        Scenario::Complete => ScenarioData::Observations(&toy.complete),
        Scenario::AggregatedFarr | Scenario::AggregatedCos => ScenarioData::Counts(&toy.counts),
        _ => ScenarioData::Observations(&toy.partial),
    };
    LikelihoodSpec { scenario, data, design: &toy.design, field: &toy.field, quadrature: settings() }
}

pub struct Oracle<'a> {
    toy: &'a Toy,
    beta: [f64; 2],
    phi: f64,
    theta: f64,
}

impl Oracle<'_> {
    pub fn new<'t>(toy: &'t Toy, wp: &WorkingParams) -> Oracle<'t> {
        Oracle {
            toy,
            beta: [wp.beta[0], wp.beta[1]],
            phi: wp.log_phi.exp(),
            theta: 1.0 / (1.0 + (-wp.logit_theta).exp()),
        }
    }

    fn eta(&self, s: &Point) -> f64 {
        let x = self.toy.field.evaluate(s).unwrap();
        self.beta[0] * x[0] + self.beta[1] * x[1]
    }

    fn lambda(&self, s: &Point) -> f64 {
        self.eta(s).exp()
    }

    fn q(&self, region: &SampledRegion, s: &Point) -> f64 {
        if region.is_distance_sampling() {
            let d = distance_to_unit(s, &region.unit);
            (-d * d / self.phi).exp()
        } else {
            self.theta
        }
    }

    /// Nodes of a region with their weights.
    fn nodes(region: &SampledRegion) -> Vec<(Point, f64)> {
        let rule = area_rule(&region.shape(), SPACING).unwrap();
        rule.nodes.into_iter().zip(rule.weights).collect()
    }

    fn region_integral(&self, region: &SampledRegion) -> f64 {
        let mut total = 0.0;
        for (p, w) in Self::nodes(region) {
            total += w * self.lambda(&p) * self.q(region, &p);
        }
        total
    }

    fn exposure(&self) -> f64 {
        self.toy.design.regions.iter().map(|r| self.region_integral(r)).sum()
    }

    fn region_measure(region: &SampledRegion) -> f64 {
        if region.is_distance_sampling() && region.unit.vertices.len() == 2 {
            2.0 * region.radius * region.unit.length()
        } else {
            std::f64::consts::PI * region.radius * region.radius
        }
    }

    fn region(&self, id: &str) -> &SampledRegion {
        self.toy.design.regions.iter().find(|r| r.unit.id == id).unwrap()
    }

    fn complete(&self) -> f64 {
        let mut ll = 0.0;
        for r in &self.toy.complete.ds {
            ll += self.eta(&r.location.unwrap()) - r.distance * r.distance / self.phi;
        }
        for r in &self.toy.complete.cr {
            ll += self.eta(&r.location.unwrap()) + self.theta.ln();
        }
        ll - self.exposure()
    }

    fn cell_index(p: &Point) -> usize {
        let i = ((p.x / 0.2).floor() as usize).min(4);
        let j = ((p.y / 0.2).floor() as usize).min(4);
        j * 5 + i
    }

    fn aggregated(&self, centroid: bool) -> f64 {
        let mut means = [0.0f64; 25];
        for region in &self.toy.design.regions {
            for (p, w) in Self::nodes(region) {
                let c = Self::cell_index(&p);
                let lam = if centroid {
                    let (ci, cj) = (c % 5, c / 5);
                    self.lambda(&Point::new(0.2 * ci as f64 + 0.1, 0.2 * cj as f64 + 0.1))
                } else {
                    self.lambda(&p)
                };
                means[c] += w * lam * self.q(region, &p);
            }
        }
        let mut ll = 0.0;
        for (&cell, &n) in self.toy.counts.cells.iter().zip(&self.toy.counts.counts) {
            let mu = means[cell];
            let log_fact: f64 = (1..=n).map(|k| (k as f64).ln()).sum();
            ll += n as f64 * mu.ln() - mu - log_fact;
        }
        ll
    }

    fn fused_region(&self) -> f64 {
        let obs = &self.toy.partial;
        let ids = obs.ds.iter().map(|r| &r.unit_id).chain(obs.cr.iter().map(|r| &r.unit_id));
        let mut ll = 0.0;
        for id in ids {
            let region = self.region(id);
            ll += (self.region_integral(region) / Self::region_measure(region)).ln();
        }
        ll - self.exposure()
    }

    fn fused_distance(&self) -> f64 {
        let obs = &self.toy.partial;
        let mut ll = 0.0;
        for r in &obs.ds {
            let region = self.region(&r.unit_id);
            let rule = line_rule(&ObservedLocationSupport::lines(region, r.distance).unwrap(), LINE_NODES).unwrap();
            let mut num = 0.0;
            let mut den = 0.0;
            for (p, w) in rule.nodes.iter().zip(&rule.weights) {
                num += w * self.lambda(p);
                den += w;
            }
            ll += -r.distance * r.distance / self.phi + (num / den).ln();
        }
        for r in &obs.cr {
            let region = self.region(&r.unit_id);
            ll += (self.region_integral(region) / Self::region_measure(region)).ln();
        }
        ll - self.exposure()
    }

    pub fn eval(&self, scenario: Scenario) -> f64 {
        match scenario {
            Scenario::Complete => self.complete(),
            Scenario::AggregatedFarr => self.aggregated(true),
            Scenario::AggregatedCos => self.aggregated(false),
            Scenario::FusedRegion => self.fused_region(),
            Scenario::FusedDistance => self.fused_distance(),
        }
    }
}

pub fn random_points(n: usize, seed: u64) -> Vec<WorkingParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| WorkingParams {
            beta: vec![rng.random_range(3.0..8.0), rng.random_range(-1.0..2.0)],
            log_phi: rng.random_range(0.001f64.ln()..0.05f64.ln()),
            logit_theta: rng.random_range(-3.0..3.0),
        })
        .collect()
}
