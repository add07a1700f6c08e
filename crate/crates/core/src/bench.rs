//! Benchmark of four predictors over a grid of measurement-noise levels and
//! budgets:
//!
//! * RMWP: regular schedule, hold the last measurement
//! * IMWP: optimized schedule, hold the last measurement
//! * RKP: regular schedule, Kalman predictor
//! * IKP: optimized schedule, Kalman predictor
//!
//! Each replication injects fresh noise, identifies a model on the training
//! window, then predicts over the following treatment fraction of `T` steps.
//! Errors are one-step-ahead RMS against the ground truth over `t0+1 ..= T`.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ikp::{measurements_at, run_predictor};
use crate::model::{regular_schedule, Schedule, StateSpaceModel, WarmupConfig};
use crate::optimizer::{genetic_search, GaConfig};
use crate::rng::derive_seed;
use crate::scalar::{from_usize, lit, to_f64, Real};
use crate::synth::{inject_noise, Trajectory};
use crate::sysid::{e_step, fit, select_order, EmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Rmwp,
    Imwp,
    Rkp,
    Ikp,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Rmwp, Method::Imwp, Method::Rkp, Method::Ikp];

    pub fn label(self) -> &'static str {
        match self {
            Method::Rmwp => "RMWP",
            Method::Imwp => "IMWP",
            Method::Rkp => "RKP",
            Method::Ikp => "IKP",
        }
    }
}

/// Benchmark protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Measurement-noise variances σ² (mm²).
    pub sigma2_grid: Vec<f64>,
    /// Budgets as fractions `N/T`.
    pub budget_fraction_grid: Vec<f64>,
    pub horizon_t: usize,
    pub train_steps: usize,
    pub warmup_t0: usize,
    pub replications: usize,
    pub rng_seed: u64,
    /// Fixed state dimension, or `None` to select it per noise level.
    pub state_dim: Option<usize>,
    /// Orders tried when `state_dim` is `None`.
    pub order_candidates: Vec<usize>,
    pub em: EmConfig,
    pub ga: GaConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sigma2_grid: vec![1.0, 4.0, 25.0, 100.0],
            budget_fraction_grid: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            horizon_t: 800,
            train_steps: 600,
            warmup_t0: 300,
            replications: 20,
            rng_seed: 0,
            state_dim: None,
            order_candidates: vec![2, 3, 4, 5, 6],
            em: EmConfig {
                max_iters: 150,
                loglik_rel_tol: 1e-6,
                ..EmConfig::default()
            },
            ga: GaConfig {
                population_size: 60,
                generations: 150,
                stall_generations: Some(30),
                ..GaConfig::default()
            },
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("bench config: {m}")));
        if self.sigma2_grid.is_empty() || self.budget_fraction_grid.is_empty() {
            return bad("grids must be non-empty");
        }
        if self.sigma2_grid.iter().any(|&s| !(s.is_finite() && s >= 0.0)) {
            return bad("sigma2 values must be finite and non-negative");
        }
        if self
            .budget_fraction_grid
            .iter()
            .any(|&f| !(f > 0.0 && f <= 1.0))
        {
            return bad("budget fractions must lie in (0, 1]");
        }
        if self.horizon_t == 0 || self.warmup_t0 >= self.horizon_t {
            return bad("need 0 <= warmup_t0 < horizon_t");
        }
        if self.replications == 0 {
            return bad("replications must be positive");
        }
        if self.state_dim.is_none() && self.order_candidates.is_empty() {
            return bad("order_candidates must be non-empty when state_dim is unset");
        }
        self.ga.validate()
    }

    /// `N = round(f·T)`, at least 1.
    pub fn budget_for(&self, fraction: f64) -> usize {
        ((fraction * self.horizon_t as f64).round() as usize).clamp(1, self.horizon_t)
    }

    /// Samples needed: training window plus `T + 1` fraction steps.
    pub fn required_len(&self) -> usize {
        self.train_steps + self.horizon_t + 1
    }
}

/// One RMS value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: Method,
    pub sigma2: f64,
    pub budget_fraction: f64,
    pub replication: usize,
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub sigma2_grid: Vec<f64>,
    pub budget_fraction_grid: Vec<f64>,
    pub records: Vec<BenchRecord>,
    /// State dimension used per noise level.
    pub state_dims: Vec<usize>,
}

/// `sqrt(mean_{t ≥ from} ‖predicted(t) − truth(t)‖²)`.
pub fn rms_error<T: Real>(predicted: &[DVector<T>], truth: &[DVector<T>], from_t: usize) -> Result<T> {
    if predicted.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "prediction length {} differs from truth length {}",
            predicted.len(),
            truth.len()
        )));
    }
    if from_t >= truth.len() {
        return Err(Error::InvalidInput("empty RMS window".into()));
    }
    let sum = predicted[from_t..]
        .iter()
        .zip(&truth[from_t..])
        .fold(T::zero(), |acc, (p, y)| acc + (p - y).norm_squared());
    Ok((sum / from_usize::<T>(truth.len() - from_t)).sqrt())
}

/// Hold-last-measurement predictor over `t = 0..=T`.
///
/// `ŷ(t)` is `z(m)` for the latest scheduled `m < t`; before the first
/// measurement it is `before_first`.
pub fn run_baseline_hold<T: Real>(
    noisy: &[DVector<T>],
    schedule: &Schedule,
    before_first: &DVector<T>,
) -> Result<Vec<DVector<T>>> {
    if let Some(&last) = schedule.times().last() {
        if last >= noisy.len() {
            return Err(Error::InvalidInput(format!("no measurement at t={last}")));
        }
    }
    let mask = schedule.mask();
    let mut held = before_first.clone();
    let mut out = Vec::with_capacity(schedule.horizon() + 1);
    for t in 0..=schedule.horizon() {
        out.push(held.clone());
        if t < schedule.horizon() && mask[t] {
            held = noisy[t].clone();
        }
    }
    Ok(out)
}

fn mean_vector<T: Real>(rows: &[DVector<T>]) -> DVector<T> {
    let m = rows[0].len();
    rows.iter().fold(DVector::zeros(m), |acc, r| acc + r) / from_usize::<T>(rows.len())
}

/// The identified model with its initial belief moved to the first step of
/// the fraction: the filtered belief at the end of training, propagated once.
pub fn fraction_model<T: Real>(
    model: &StateSpaceModel<T>,
    training: &[DVector<T>],
) -> Result<StateSpaceModel<T>> {
    let e = e_step(model, training)?;
    let xf = e.filtered_mean.last().expect("non-empty training window");
    let pf = e.filtered_cov.last().expect("non-empty training window");
    let mean = model.a() * xf + model.b();
    let cov = crate::ikp::time_update_cov(model, pf);
    model.with_initial_belief(mean, cov)
}

struct ReplicationJob {
    sigma_index: usize,
    replication: usize,
}

fn run_replication<T: Real>(
    config: &BenchConfig,
    traj: &Trajectory<T>,
    job: &ReplicationJob,
    state_dim: usize,
) -> Result<Vec<BenchRecord>> {
    let sigma2 = config.sigma2_grid[job.sigma_index];
    let seed = derive_seed(config.rng_seed, &[job.sigma_index as u64, job.replication as u64]);
    let noisy_traj = inject_noise(traj, lit(sigma2), seed)?;
    let noisy = noisy_traj.noisy()?;
    let train = &noisy[..config.train_steps];
    let fitted = fit(
        train,
        &EmConfig {
            state_dim_n: state_dim,
            rng_seed: derive_seed(seed, &[1]),
            ..config.em.clone()
        },
    )?;
    let model = fraction_model(&fitted.model, train)?;
    let start = config.train_steps;
    let end = start + config.horizon_t + 1;
    let truth = &traj.truth[start..end];
    let frac_noisy = &noisy[start..end];
    let fallback = mean_vector(train);
    let warmup = WarmupConfig {
        t0: config.warmup_t0,
    };
    let from_t = config.warmup_t0 + 1;

    let mut records = Vec::new();
    for (bi, &fraction) in config.budget_fraction_grid.iter().enumerate() {
        let budget = config.budget_for(fraction);
        let regular = regular_schedule(config.horizon_t, budget)?;
        let ga_config = GaConfig {
            rng_seed: derive_seed(seed, &[2, bi as u64]),
            ..config.ga.clone()
        };
        let optimized = genetic_search(&model, config.horizon_t, budget, warmup, &ga_config)?.best_schedule;
        for method in Method::ALL {
            let schedule = match method {
                Method::Rmwp | Method::Rkp => &regular,
                Method::Imwp | Method::Ikp => &optimized,
            };
            let predicted = match method {
                Method::Rmwp | Method::Imwp => run_baseline_hold(frac_noisy, schedule, &fallback)?,
                Method::Rkp | Method::Ikp => {
                    let z = measurements_at(schedule, frac_noisy)?;
                    run_predictor(&model, schedule, &z)?.pred_pos
                }
            };
            let rms = to_f64(rms_error(&predicted, truth, from_t)?);
            if !rms.is_finite() {
                return Err(Error::Numerical(format!(
                    "{} produced a non-finite RMS at sigma2={sigma2}, N/T={fraction}",
                    method.label()
                )));
            }
            records.push(BenchRecord {
                method,
                sigma2,
                budget_fraction: fraction,
                replication: job.replication,
                rms,
            });
        }
    }
    Ok(records)
}

/// Runs every grid cell and replication. Deterministic given `rng_seed`.
pub fn run_benchmark<T: Real>(config: &BenchConfig, traj: &Trajectory<T>) -> Result<BenchReport> {
    config.validate()?;
    if traj.len() < config.required_len() {
        return Err(Error::InvalidInput(format!(
            "trajectory has {} steps, the protocol needs train_steps + T + 1 = {}",
            traj.len(),
            config.required_len()
        )));
    }

    // State dimension per noise level: fixed, or selected once on the first
    // replication's training window.
    let state_dims: Vec<usize> = match config.state_dim {
        Some(n) => vec![n; config.sigma2_grid.len()],
        None => (0..config.sigma2_grid.len())
            .into_par_iter()
            .map(|si| {
                let seed = derive_seed(config.rng_seed, &[si as u64, 0]);
                let noisy = inject_noise(traj, lit(config.sigma2_grid[si]), seed)?;
                let train = &noisy.noisy()?[..config.train_steps];
                let selected = select_order(
                    train,
                    &config.order_candidates,
                    &EmConfig {
                        rng_seed: derive_seed(seed, &[1]),
                        ..config.em.clone()
                    },
                )?;
                Ok(selected.diagnostics.state_dim_n)
            })
            .collect::<Result<Vec<_>>>()?,
    };

    let jobs: Vec<ReplicationJob> = (0..config.sigma2_grid.len())
        .flat_map(|sigma_index| {
            (0..config.replications).map(move |replication| ReplicationJob {
                sigma_index,
                replication,
            })
        })
        .collect();
    let per_job = jobs
        .par_iter()
        .map(|job| run_replication(config, traj, job, state_dims[job.sigma_index]))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport {
        sigma2_grid: config.sigma2_grid.clone(),
        budget_fraction_grid: config.budget_fraction_grid.clone(),
        records: per_job.into_iter().flatten().collect(),
        state_dims,
    })
}

/// Mean and standard error of a sample.
fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl BenchReport {
    pub fn rms_values(&self, method: Method, sigma2: f64, fraction: f64) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.method == method && r.sigma2 == sigma2 && r.budget_fraction == fraction)
            .map(|r| r.rms)
            .collect()
    }

    /// Mean RMS over replications for one cell.
    pub fn mean_rms(&self, method: Method, sigma2: f64, fraction: f64) -> f64 {
        mean_se(&self.rms_values(method, sigma2, fraction)).0
    }

    pub fn mean_and_se(&self, method: Method, sigma2: f64, fraction: f64) -> (f64, f64) {
        mean_se(&self.rms_values(method, sigma2, fraction))
    }

    fn cells(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.budget_fraction_grid
            .iter()
            .flat_map(move |&f| self.sigma2_grid.iter().map(move |&s| (s, f)))
    }

    /// `(RMS_RKP − RMS_IKP) / RMS_RKP`, averaged over all cells using the
    /// per-cell mean RMS.
    pub fn mean_relative_improvement(&self) -> f64 {
        let values: Vec<f64> = self
            .cells()
            .map(|(s, f)| {
                let rkp = self.mean_rms(Method::Rkp, s, f);
                let ikp = self.mean_rms(Method::Ikp, s, f);
                if rkp > 0.0 {
                    (rkp - ikp) / rkp
                } else {
                    0.0
                }
            })
            .collect();
        values.iter().sum::<f64>() / values.len() as f64
    }

    /// Long-format CSV: `method,sigma2,budget_fraction,replication,rms`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "method,sigma2,budget_fraction,replication,rms")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.method.label(),
                r.sigma2,
                r.budget_fraction,
                r.replication,
                crate::ikp::fmt_f64(r.rms)
            )?;
        }
        Ok(())
    }

    /// Aligned text table of mean RMS (mm): one block per budget, one column
    /// per σ², best Kalman-or-hold method marked with `*`.
    pub fn table(&self, dt: Option<f64>) -> String {
        let mut out = String::new();
        let width = 10;
        let _ = write!(out, "{:>16} | {:>6} |", "sigma2 [mm^2]", "");
        for s in &self.sigma2_grid {
            let _ = write!(out, " {:>width$}", format_num(*s));
        }
        out.push('\n');
        let rule = "-".repeat(28 + (width + 1) * self.sigma2_grid.len());
        let _ = writeln!(out, "{rule}");
        for &f in &self.budget_fraction_grid {
            let best: Vec<Method> = self
                .sigma2_grid
                .iter()
                .map(|&s| {
                    *Method::ALL
                        .iter()
                        .min_by(|a, b| {
                            self.mean_rms(**a, s, f)
                                .partial_cmp(&self.mean_rms(**b, s, f))
                                .unwrap_or(std::cmp::Ordering::Equal)
                        })
                        .unwrap()
                })
                .collect();
            for (row, method) in Method::ALL.iter().enumerate() {
                let label = match (row, dt) {
                    (0, _) => format!("N/T={}", format_num(f)),
                    (1, Some(dt)) => format!("({:.1} Hz)", f / dt),
                    _ => String::new(),
                };
                let _ = write!(out, "{label:>16} | {:>6} |", method.label());
                for (si, &s) in self.sigma2_grid.iter().enumerate() {
                    let mark = if best[si] == *method { "*" } else { " " };
                    let _ = write!(out, " {:>w$.2}{mark}", self.mean_rms(*method, s, f), w = width - 1);
                }
                out.push('\n');
            }
            let _ = writeln!(out, "{rule}");
        }
        let _ = writeln!(
            out,
            "mean relative improvement of IKP over RKP: {:.1}%",
            100.0 * self.mean_relative_improvement()
        );
        out
    }
}

fn format_num(v: f64) -> String {
    format!("{v}")
}
