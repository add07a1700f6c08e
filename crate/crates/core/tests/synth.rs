mod common;

use common::*;
use ikp_core::rng::rng_from;
use ikp_core::synth::{
    load_trajectory_csv, respiratory_surrogate, write_trajectory_csv, SurrogateConfig,
};
use ikp_core::{inject_noise, simulate_mass_spring, simulate_model, MassSpringConfig, Traj};
use nalgebra::{DMatrix, DVector};

#[test]
fn first_output_covariance_matches_propagated_prior() {
    let mut rng = rng_from(41);
    let model = random_model(&mut rng, 3, 2);
    let runs = 20_000;
    let samples: Vec<DVector<f64>> = (0..runs)
        .map(|seed| simulate_model(&model, 2, seed as u64).unwrap().truth[1].clone())
        .collect();
    let mean = samples.iter().fold(DVector::zeros(2), |acc, y| acc + y) / runs as f64;
    let cov = samples
        .iter()
        .fold(DMatrix::zeros(2, 2), |acc, y| acc + (y - &mean) * (y - &mean).transpose())
        / (runs - 1) as f64;

    let a = model.a();
    let state_cov = a * model.x0_cov() * a.transpose() + model.g() * model.q() * model.g().transpose();
    let expected_cov = model.c() * state_cov * model.c().transpose();
    let expected_mean = model.c() * (a * model.x0_mean() + model.b()) + model.d();
    // Each entry's sampling error is about sqrt(2/runs) of the scale.
    let scale = expected_cov.diagonal().max();
    assert!((&cov - &expected_cov).amax() < 0.05 * scale, "{cov} vs {expected_cov}");
    assert!((&mean - &expected_mean).amax() < 0.05 * scale.sqrt());
}

#[test]
fn injected_noise_has_the_requested_variance() {
    let truth = Traj::new(1.0 / 30.0, vec![DVector::from_vec(vec![1.0, -2.0, 0.5]); 5000]).unwrap();
    for (i, sigma2) in [1.0, 4.0, 25.0, 100.0].into_iter().enumerate() {
        let noisy = inject_noise(&truth, sigma2, 100 + i as u64).unwrap();
        for axis in 0..3 {
            let residuals: Vec<f64> = noisy
                .noisy()
                .unwrap()
                .iter()
                .zip(&truth.truth)
                .map(|(z, y)| z[axis] - y[axis])
                .collect();
            let var = residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64;
            assert!((var / sigma2 - 1.0).abs() < 0.05, "sigma2={sigma2} axis={axis}: {var}");
        }
    }
}

#[test]
fn mass_spring_defaults() {
    let (traj, model): (Traj, _) = simulate_mass_spring(&MassSpringConfig::default()).unwrap();
    assert_eq!(traj.len(), 6000);
    assert_eq!(traj.dt, 0.01);
    assert_eq!(traj.truth[0][0], 1.0);
    assert_eq!(model.state_dim(), 2);
    assert_eq!(model.output_dim(), 1);
    assert!(MassSpringConfig::default().resolution_warning().is_none());
}

#[test]
fn mass_spring_is_reproducible_and_seed_sensitive() {
    let config = MassSpringConfig {
        steps_t: 500,
        ..MassSpringConfig::default()
    };
    let (a, _): (Traj, _) = simulate_mass_spring(&config).unwrap();
    let (b, _): (Traj, _) = simulate_mass_spring(&config).unwrap();
    assert_eq!(a, b);
    let (c, _): (Traj, _) = simulate_mass_spring(&MassSpringConfig {
        rng_seed: 1,
        ..config
    })
    .unwrap();
    assert_ne!(a.truth, c.truth);
}

#[test]
fn surrogate_looks_like_breathing() {
    let config = SurrogateConfig::default();
    let traj: Traj = respiratory_surrogate(&config).unwrap();
    assert_eq!(traj.len(), config.steps);
    assert_eq!(traj.dim(), 3);
    let peak = traj.truth.iter().map(|y| y.amax()).fold(0.0, f64::max);
    assert!(peak > 5.0 && peak <= 12.0, "{peak}");
    let again: Traj = respiratory_surrogate(&config).unwrap();
    assert_eq!(traj, again);
}

#[test]
fn csv_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.csv");
    let truth: Traj = respiratory_surrogate(&SurrogateConfig {
        steps: 50,
        ..SurrogateConfig::default()
    })
    .unwrap();
    write_trajectory_csv(&truth, &path).unwrap();
    let back: Traj = load_trajectory_csv(&path).unwrap();
    assert_eq!(back, truth);
}

#[test]
fn malformed_csv_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "dt=0.1\n1.0,2.0\n3.0\n").unwrap();
    let err = load_trajectory_csv::<f64>(&path).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
}
