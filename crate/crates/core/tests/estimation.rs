use fusesdm::covariates::{CovariateField, Grid};
use fusesdm::estimation::{
    abundance, default_start, delta_method_ci, fit, fit_prepared, numerical_hessian, FitSettings, FitStatus,
};
use fusesdm::experiment::{StudyConfig, StudySetup};
use fusesdm::geometry::{Point, StudyRegion};
use fusesdm::likelihoods::{expit, logit, LikelihoodSpec, PreparedLikelihood, Scenario, ScenarioData, WorkingParams};
use fusesdm::pointprocess::{degrade_to_partial, simulate_ippp, simulate_observation, ObservationSet};
use fusesdm::replicate_seed;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn ramp_field(n: usize) -> CovariateField {
    let grid = Grid::new(Point::new(0.0, 0.0), 1.0 / n as f64, n, n).unwrap();
    let values = (0..grid.ncells()).map(|c| grid.cell_center(c).x * 2.0 - 1.0).collect();
    CovariateField::from_layers(grid, vec![("x1".into(), values)]).unwrap()
}

#[test]
fn abundance_examples() {
    let region = StudyRegion::unit_square();
    let grid = Grid::new(Point::new(0.0, 0.0), 0.1, 10, 10).unwrap();
    let ones = abundance(&[0.0], &CovariateField::intercept_only(grid), &region).unwrap();
    assert!((ones.value - 1.0).abs() < 1e-12);
    assert!((ones.gradient[0] - 1.0).abs() < 1e-12);

    let flat = CovariateField::constant(grid, 0.0).unwrap();
    let a = abundance(&[9.0, 1.0], &flat, &region).unwrap();
    assert!((a.value / 9f64.exp() - 1.0).abs() < 1e-12);

    let field = ramp_field(20);
    let beta = [3.0, 0.7];
    let a = abundance(&beta, &field, &region).unwrap();
    let h = 1e-5;
    for j in 0..2 {
        let mut up = beta;
        let mut dn = beta;
        up[j] += h;
        dn[j] -= h;
        let fd = (abundance(&up, &field, &region).unwrap().value - abundance(&dn, &field, &region).unwrap().value)
            / (2.0 * h);
        assert!((fd - a.gradient[j]).abs() <= 1e-6 * fd.abs(), "{j}: {fd} vs {}", a.gradient[j]);
    }
}

#[test]
fn delta_method_matches_parametric_resampling() {
    let field = ramp_field(20);
    let region = StudyRegion::unit_square();
    let beta = [4.0, 0.8];
    let cov = DMatrix::from_row_slice(2, 2, &[0.010, -0.003, -0.003, 0.006]);
    let a = abundance(&beta, &field, &region).unwrap();
    let delta = delta_method_ci(a.value, &a.gradient, &cov, 0.95).unwrap();

    let chol = cov.clone().cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let draws: Vec<f64> = (0..20_000)
        .map(|_| {
            let z = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
            let b = DVector::from_row_slice(&beta) + &chol * z;
            abundance(b.as_slice(), &field, &region).unwrap().value
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let sd = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64).sqrt();
    assert!((delta.se / sd - 1.0).abs() < 0.10, "delta {} vs Monte Carlo {sd}", delta.se);
    assert!((delta.log_se - delta.se / a.value).abs() < 1e-12);
}

#[test]
fn zero_covariance_gives_a_point_interval() {
    let field = ramp_field(10);
    let a = abundance(&[1.0, 1.0], &field, &StudyRegion::unit_square()).unwrap();
    let d = delta_method_ci(a.value, &a.gradient, &DMatrix::zeros(2, 2), 0.95).unwrap();
    assert_eq!(d.se, 0.0);
    assert_eq!(d.interval.lower, d.interval.upper);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hessian_recovers_quadratic_forms(
        entries in prop::collection::vec(-3.0f64..3.0, 10),
        at in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        let mut a = DMatrix::zeros(4, 4);
        let mut k = 0;
        for i in 0..4 {
            for j in i..4 {
                a[(i, j)] = entries[k];
                a[(j, i)] = entries[k];
                k += 1;
            }
        }
        let f = |p: &[f64]| {
            let v = DVector::from_row_slice(p);
            0.5 * (v.transpose() * &a * &v)[(0, 0)]
        };
        let h = numerical_hessian(f, &at, &[1e-3; 4]);
        for i in 0..4 {
            for j in 0..4 {
                prop_assert!((h[(i, j)] - a[(i, j)]).abs() < 1e-6, "{i},{j}: {} vs {}", h[(i, j)], a[(i, j)]);
            }
        }
    }

    #[test]
    fn working_round_trip(b0 in -5.0f64..12.0, b1 in -3.0f64..3.0, log_phi in -9.0f64..2.0, logit_theta in -8.0f64..8.0) {
        let wp = WorkingParams { beta: vec![b0, b1], log_phi, logit_theta };
        let back = WorkingParams::from_model(&wp.to_model().unwrap());
        prop_assert_eq!(&back.beta, &wp.beta);
        prop_assert!((back.log_phi - log_phi).abs() < 1e-12);
        prop_assert!((back.logit_theta - logit_theta).abs() < 1e-12);
        prop_assert!((logit(expit(logit_theta)) - logit_theta).abs() < 1e-12);
    }
}

struct Replicate {
    setup: StudySetup,
    complete: ObservationSet,
    partial: ObservationSet,
}

fn replicate(config: &StudyConfig, setup: StudySetup, r: usize) -> Replicate {
    let seed = replicate_seed(config.seed, r);
    let pattern = simulate_ippp(&config.truth, &setup.field, &setup.region, seed).unwrap();
    let complete = simulate_observation(&pattern, &setup.design, &config.truth, seed).unwrap();
    let partial = degrade_to_partial(&complete);
    Replicate { setup, complete, partial }
}

fn settings() -> FitSettings {
    FitSettings { execution: fusesdm::par::Execution::Sequential, ..FitSettings::default() }
}

fn start(setup: &StudySetup) -> WorkingParams {
    default_start(2, setup.design.max_ds_radius())
}

fn spec<'a>(rep: &'a Replicate, scenario: Scenario, obs: &'a ObservationSet) -> LikelihoodSpec<'a> {
    LikelihoodSpec {
        scenario,
        data: ScenarioData::Observations(obs),
        design: &rep.setup.design,
        field: &rep.setup.field,
        quadrature: rep.setup.quadrature.quadrature(),
    }
}

#[test]
fn benchmark_and_fused_fits_recover_the_truth() {
    let config = StudyConfig::default();
    let rep = replicate(&config, StudySetup::new(&config).unwrap(), 3);
    for (scenario, obs) in [(Scenario::Complete, &rep.complete), (Scenario::FusedDistance, &rep.partial)] {
        let s = spec(&rep, scenario, obs);
        let st = start(&rep.setup);
        let result = fit(&s, &rep.setup.region, &st, &settings()).unwrap();
        assert!(result.converged && result.has_covariance(), "{scenario}: {:?}", result.status);
        for (j, truth) in [9.0, 1.0].into_iter().enumerate() {
            let se = result.se[j];
            assert!(
                (result.working.beta[j] - truth).abs() < 3.0 * se,
                "{scenario} beta{j}: {} ± {se}",
                result.working.beta[j]
            );
        }
        let at_start = -PreparedLikelihood::new(&s).unwrap().loglik(&st).unwrap();
        assert!(-result.loglik <= at_start);
        assert_eq!(result.names.len(), result.ci.len());
        assert!(result.ci.iter().all(|ci| ci.lower <= ci.upper));
        let cov = result.covariance_matrix().unwrap();
        for i in 0..cov.nrows() {
            for j in 0..cov.ncols() {
                assert!(cov[(i, j)] == cov[(j, i)] || (cov[(i, j)] - cov[(j, i)]).abs() < 1e-12 * cov[(i, i)].abs());
            }
        }
        let lb = result.lambda_bar.unwrap();
        assert!(lb.interval.lower <= lb.value && lb.value <= lb.interval.upper);
        assert!(lb.log_interval.lower <= lb.log_value && lb.log_value <= lb.log_interval.upper);
    }
}

#[test]
fn standard_errors_ignore_observation_order() {
    let config = StudyConfig::default();
    let rep = replicate(&config, StudySetup::new(&config).unwrap(), 5);
    let mut shuffled = rep.partial.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    shuffled.ds.shuffle(&mut rng);
    shuffled.cr.shuffle(&mut rng);
    let st = start(&rep.setup);
    let a = fit(&spec(&rep, Scenario::FusedDistance, &rep.partial), &rep.setup.region, &st, &settings()).unwrap();
    let b = fit(&spec(&rep, Scenario::FusedDistance, &shuffled), &rep.setup.region, &st, &settings()).unwrap();
    for (x, y) in a.se.iter().zip(&b.se) {
        assert!((x - y).abs() <= 1e-6 * x.abs(), "{:?} vs {:?}", a.se, b.se);
    }
}

#[test]
fn fused_distance_profile_in_log_phi_is_unimodal() {
    let config = StudyConfig::default();
    let rep = replicate(&config, StudySetup::new(&config).unwrap(), 7);
    let prepared = PreparedLikelihood::new(&spec(&rep, Scenario::FusedDistance, &rep.partial)).unwrap();
    let values: Vec<f64> = (0..241)
        .map(|i| {
            let log_phi = -10.0 + i as f64 * 0.05;
            prepared.loglik(&WorkingParams { beta: vec![9.0, 1.0], log_phi, logit_theta: logit(0.2) }).unwrap()
        })
        .collect();
    let peak = values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert!(values[..=peak].windows(2).all(|w| w[1] >= w[0] - 1e-9));
    assert!(values[peak..].windows(2).all(|w| w[1] <= w[0] + 1e-9));
}

#[test]
fn estimated_phi_interval_covers_the_truth() {
    let config = StudyConfig::default();
    let mut setup = Some(StudySetup::new(&config).unwrap());
    let phi_true = config.truth.phi;
    let mut covered = 0;
    for r in 0..100 {
        let rep = replicate(&config, setup.take().unwrap(), r);
        let st = start(&rep.setup);
        let s = spec(&rep, Scenario::FusedDistance, &rep.partial);
        let prepared = PreparedLikelihood::new(&s).unwrap();
        let free = fit_prepared(&prepared, &rep.setup.field, &rep.setup.region, &st, &settings()).unwrap();
        assert_ne!(free.status, FitStatus::NotConverged);
        if free.ci_of("log_phi").unwrap().contains(phi_true.ln()) {
            covered += 1;
        }
        if r == 0 {
            let fixed = FitSettings { fix_phi: Some(phi_true), ..settings() };
            let held = fit_prepared(&prepared, &rep.setup.field, &rep.setup.region, &st, &fixed).unwrap();
            assert_eq!(held.working.log_phi, phi_true.ln());
            assert!(held.se_of("log_phi").is_none());
            assert!(held.loglik <= free.loglik + 1e-6);
        }
        setup = Some(rep.setup);
    }
    assert!(covered >= 90, "phi interval covered the truth in {covered} of 100 replicates");
}
