//! Trajectory generation and I/O: the mass-spring toy process, sampling from
//! an arbitrary model, additive measurement noise, a respiratory-motion
//! surrogate, and the trajectory CSV format.
//!
//! CSV format: a header line `dt=<seconds>`, then one row per step with the
//! comma-separated axis values (mm). Values are written with 17 significant
//! digits, so writing and reading back is bit-exact.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ikp::fmt_f64;
use crate::linalg::psd_factor;
use crate::model::{ModelParams, StateSpaceModel};
use crate::rng::{derive_seed, rng_from};
use crate::scalar::{lit, to_f64, Real};

/// Ground-truth positions `y(t)` and, once noise is injected, measurements
/// `z(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    pub dt: T,
    pub truth: Vec<DVector<T>>,
    pub noisy: Option<Vec<DVector<T>>>,
}

impl<T: Real> Trajectory<T> {
    pub fn new(dt: T, truth: Vec<DVector<T>>) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::InvalidInput("dt must be positive".into()));
        }
        check_series("truth", &truth)?;
        Ok(Self {
            dt,
            truth,
            noisy: None,
        })
    }

    pub fn with_noisy(mut self, noisy: Vec<DVector<T>>) -> Result<Self> {
        check_series("noisy", &noisy)?;
        if noisy.len() != self.truth.len() || noisy[0].len() != self.dim() {
            return Err(Error::InvalidInput(
                "noisy series must match truth in length and dimension".into(),
            ));
        }
        self.noisy = Some(noisy);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    /// Output dimension `m`.
    pub fn dim(&self) -> usize {
        self.truth.first().map_or(0, DVector::len)
    }

    pub fn noisy(&self) -> Result<&[DVector<T>]> {
        self.noisy
            .as_deref()
            .ok_or_else(|| Error::InvalidInput("trajectory has no noisy measurements".into()))
    }

    /// Steps `start..end` of both series.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidInput(format!(
                "window {start}..{end} outside trajectory of length {}",
                self.len()
            )));
        }
        Ok(Self {
            dt: self.dt,
            truth: self.truth[start..end].to_vec(),
            noisy: self.noisy.as_ref().map(|z| z[start..end].to_vec()),
        })
    }

    /// Writes the truth series in the trajectory CSV format.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_series_csv(self.dt, &self.truth, w)
    }

    /// Writes the noisy series in the trajectory CSV format.
    pub fn write_noisy_csv<W: Write>(&self, w: W) -> Result<()> {
        write_series_csv(self.dt, self.noisy()?, w)
    }
}

fn check_series<T: Real>(name: &str, series: &[DVector<T>]) -> Result<()> {
    let Some(first) = series.first() else {
        return Err(Error::InvalidInput(format!("{name} series is empty")));
    };
    let m = first.len();
    if m == 0 || series.iter().any(|v| v.len() != m) {
        return Err(Error::InvalidInput(format!(
            "{name} series has inconsistent dimensions"
        )));
    }
    Ok(())
}

pub fn write_series_csv<T: Real, W: Write>(dt: T, rows: &[DVector<T>], mut w: W) -> Result<()> {
    writeln!(w, "dt={}", fmt_f64(to_f64(dt)))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(to_f64(v))).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a trajectory's truth series; the inverse of [`load_trajectory_csv`].
pub fn write_trajectory_csv<T: Real>(traj: &Trajectory<T>, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    traj.write_csv(std::io::BufWriter::new(file))
}

pub fn load_trajectory_csv<T: Real>(path: impl AsRef<Path>) -> Result<Trajectory<T>> {
    parse_trajectory_csv(std::fs::File::open(path)?)
}

/// Parses the trajectory CSV format. Supports 1 to 3 axes.
pub fn parse_trajectory_csv<T: Real, R: Read>(reader: R) -> Result<Trajectory<T>> {
    let reader = BufReader::new(reader);
    let mut lines = reader.lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse { line, message };

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, expected header `dt=<seconds>`".into()))?;
    let header = header?;
    let dt: f64 = header
        .trim()
        .strip_prefix("dt=")
        .ok_or_else(|| parse_err(1, format!("expected header `dt=<seconds>`, found `{header}`")))?
        .trim()
        .parse()
        .map_err(|e| parse_err(1, format!("bad dt value: {e}")))?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(parse_err(1, "dt must be positive and finite".into()));
    }

    let mut rows: Vec<DVector<T>> = Vec::new();
    let mut width = None;
    let mut trailing_blank = None;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            trailing_blank.get_or_insert(line_no);
            continue;
        }
        if let Some(blank) = trailing_blank {
            return Err(parse_err(blank, "blank line inside data".into()));
        }
        let values = text
            .split(',')
            .map(|cell| {
                let v: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("cannot parse `{}`", cell.trim())))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(line_no, format!("non-finite value `{}`", cell.trim())))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => {
                if !(1..=3).contains(&values.len()) {
                    return Err(parse_err(
                        line_no,
                        format!("expected 1 to 3 columns, found {}", values.len()),
                    ));
                }
                width = Some(values.len());
            }
            Some(w) if w != values.len() => {
                return Err(parse_err(
                    line_no,
                    format!("expected {w} columns, found {}", values.len()),
                ));
            }
            Some(_) => {}
        }
        rows.push(DVector::from_iterator(values.len(), values.into_iter().map(lit)));
    }
    if rows.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }
    Trajectory::new(lit(dt), rows)
}

fn standard_normal<T: Real, R: Rng>(rng: &mut R, len: usize) -> DVector<T> {
    DVector::from_fn(len, |_, _| lit(rng.sample::<f64, _>(StandardNormal)))
}

/// Samples `x(0) ~ N(x̄₀, P̄₀)`, iterates `x(t+1) = A x(t) + b + G w(t)` and
/// emits `y(t) = C x(t) + d` for `t = 0..steps`. `dt` is set to 1.
pub fn simulate_model<T: Real>(
    model: &StateSpaceModel<T>,
    steps: usize,
    rng_seed: u64,
) -> Result<Trajectory<T>> {
    if steps == 0 {
        return Err(Error::InvalidInput("steps_T must be positive".into()));
    }
    let mut rng = rng_from(rng_seed);
    let init_factor = psd_factor(model.x0_cov());
    let noise_factor = model.g() * psd_factor(model.q());
    let n = model.state_dim();
    let p = noise_factor.ncols();
    let mut x = model.x0_mean() + &init_factor * standard_normal::<T, _>(&mut rng, n);
    let mut truth = Vec::with_capacity(steps);
    for t in 0..steps {
        truth.push(model.output(&x));
        if t + 1 < steps {
            x = model.a() * &x + model.b() + &noise_factor * standard_normal::<T, _>(&mut rng, p);
        }
    }
    Trajectory::new(T::one(), truth)
}

/// `z(t) = y(t) + v(t)`, `v ~ N(0, σ² I)`; the truth is left untouched.
pub fn inject_noise<T: Real>(traj: &Trajectory<T>, sigma2: T, rng_seed: u64) -> Result<Trajectory<T>> {
    if !(sigma2 >= T::zero()) {
        return Err(Error::InvalidInput("noise variance must be non-negative".into()));
    }
    let sigma = sigma2.sqrt();
    let mut rng = rng_from(rng_seed);
    let m = traj.dim();
    let noisy = traj
        .truth
        .iter()
        .map(|y| y + standard_normal::<T, _>(&mut rng, m) * sigma)
        .collect();
    traj.clone().with_noisy(noisy)
}

/// Mass-spring process driven by a white random force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MassSpringConfig {
    pub mass_kg: f64,
    pub stiffness_n_per_m: f64,
    pub delta_s: f64,
    pub steps_t: usize,
    /// Power spectral density of the random force.
    pub q_psd: f64,
    /// Measurement-noise variance (mm²).
    pub r_var: f64,
    pub rng_seed: u64,
    /// Initial (elongation mm, velocity mm/s).
    pub x0: [f64; 2],
    /// Initial covariance, as a multiple of the identity.
    pub x0_var: f64,
}

impl Default for MassSpringConfig {
    fn default() -> Self {
        Self {
            mass_kg: 0.0015,
            stiffness_n_per_m: 0.000825,
            delta_s: 0.01,
            steps_t: 6000,
            q_psd: 0.05,
            r_var: 0.05,
            rng_seed: 0,
            x0: [1.0, 0.0],
            x0_var: 0.0,
        }
    }
}

/// `k = 4π² m / T̄²` for an oscillation period `T̄`.
pub fn stiffness_for_period(mass_kg: f64, period_s: f64) -> f64 {
    4.0 * PI * PI * mass_kg / (period_s * period_s)
}

impl MassSpringConfig {
    /// `2π √(m/k)`.
    pub fn period_s(&self) -> f64 {
        2.0 * PI * (self.mass_kg / self.stiffness_n_per_m).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass_kg", self.mass_kg),
            ("stiffness_n_per_m", self.stiffness_n_per_m),
            ("delta_s", self.delta_s),
            ("r_var", self.r_var),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive")));
            }
        }
        if !(self.q_psd.is_finite() && self.q_psd >= 0.0) {
            return Err(Error::InvalidInput("q_psd must be non-negative".into()));
        }
        if !(self.x0_var.is_finite() && self.x0_var >= 0.0) {
            return Err(Error::InvalidInput("x0_var must be non-negative".into()));
        }
        if self.steps_t == 0 {
            return Err(Error::InvalidInput("steps_t must be positive".into()));
        }
        Ok(())
    }

    /// Warning text when the step is coarse relative to the period.
    pub fn resolution_warning(&self) -> Option<String> {
        let period = self.period_s();
        (self.delta_s > period / 100.0).then(|| {
            format!(
                "delta_s={} exceeds period/100={:.4}; the explicit Euler model will drift",
                self.delta_s,
                period / 100.0
            )
        })
    }

    /// Explicit-Euler discretization: `A = I + A_c δ`, `G = (0, 1/m)ᵀ`,
    /// `w ~ N(0, Q δ)`, `C = (1, 0)`.
    ///
    /// The recurrence is slightly unstable (`|λ| = √(1 + ω²δ²)`); the exact
    /// zero-order-hold discretization is intentionally not used.
    pub fn model<T: Real>(&self) -> Result<StateSpaceModel<T>> {
        self.validate()?;
        let delta = self.delta_s;
        let omega2 = self.stiffness_n_per_m / self.mass_kg;
        let m = |r: usize, c: usize, v: &[f64]| DMatrix::from_row_slice(r, c, &v.iter().map(|&x| lit::<T>(x)).collect::<Vec<_>>());
        StateSpaceModel::new(ModelParams {
            a: m(2, 2, &[1.0, delta, -omega2 * delta, 1.0]),
            b: DVector::zeros(2),
            g: m(2, 1, &[0.0, 1.0 / self.mass_kg]),
            q: m(1, 1, &[self.q_psd * delta]),
            c: m(1, 2, &[1.0, 0.0]),
            d: DVector::zeros(1),
            r: m(1, 1, &[self.r_var]),
            x0_mean: DVector::from_vec(vec![lit(self.x0[0]), lit(self.x0[1])]),
            x0_cov: DMatrix::identity(2, 2) * lit::<T>(self.x0_var),
        })
    }
}

/// Samples the mass-spring elongation and returns it with the exact discrete
/// model used. The noisy series carries measurement noise of variance `r_var`.
pub fn simulate_mass_spring<T: Real>(
    config: &MassSpringConfig,
) -> Result<(Trajectory<T>, StateSpaceModel<T>)> {
    let model = config.model::<T>()?;
    let mut traj = simulate_model(&model, config.steps_t, config.rng_seed)?;
    traj.dt = lit(config.delta_s);
    let traj = inject_noise(&traj, lit(config.r_var), derive_seed(config.rng_seed, &[1]))?;
    Ok((traj, model))
}

/// Synthetic respiratory motion: per axis a fundamental and a first harmonic
/// of a shared breathing phase, with slowly wandering rate and depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub dt: f64,
    pub steps: usize,
    pub base_hz: f64,
    /// `[fundamental, harmonic]` amplitudes (mm) for each axis.
    pub amplitudes: Vec<[f64; 2]>,
    /// `[fundamental, harmonic]` phases (rad) for each axis.
    pub phases: Vec<[f64; 2]>,
    /// Stationary std of the relative breathing-rate deviation.
    pub rate_jitter: f64,
    /// Stationary std of the relative depth deviation.
    pub depth_jitter: f64,
    /// Correlation time (s) of both deviations.
    pub jitter_time_s: f64,
    pub rng_seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            dt: 1.0 / 30.0,
            steps: 1500,
            base_hz: 0.25,
            amplitudes: vec![[1.5, 0.5], [8.0, 2.0], [3.0, 1.0]],
            phases: vec![[0.3, 1.1], [0.0, 0.7], [1.2, 2.0]],
            rate_jitter: 0.08,
            depth_jitter: 0.1,
            jitter_time_s: 4.0,
            rng_seed: 2024,
        }
    }
}

/// Generates a ground-truth trajectory from a [`SurrogateConfig`].
pub fn respiratory_surrogate<T: Real>(config: &SurrogateConfig) -> Result<Trajectory<T>> {
    if config.amplitudes.is_empty() || config.amplitudes.len() > 3 {
        return Err(Error::InvalidInput("surrogate needs 1 to 3 axes".into()));
    }
    if config.phases.len() != config.amplitudes.len() {
        return Err(Error::InvalidInput("one phase pair per axis required".into()));
    }
    if config.steps == 0 || !(config.dt > 0.0) || !(config.jitter_time_s > 0.0) {
        return Err(Error::InvalidInput("steps, dt and jitter_time_s must be positive".into()));
    }
    let mut rng = rng_from(config.rng_seed);
    let rho = (-config.dt / config.jitter_time_s).exp();
    let innovation = (1.0 - rho * rho).sqrt();
    let (mut rate_dev, mut depth_dev) = (0.0f64, 0.0f64);
    let mut phase = 0.0f64;
    let truth = (0..config.steps)
        .map(|_| {
            let depth = 1.0 + depth_dev;
            let y = DVector::from_iterator(
                config.amplitudes.len(),
                config.amplitudes.iter().zip(&config.phases).map(|(amp, ph)| {
                    lit(depth * (amp[0] * (phase + ph[0]).sin() + amp[1] * (2.0 * phase + ph[1]).sin()))
                }),
            );
            phase += 2.0 * PI * config.base_hz * config.dt * (1.0 + rate_dev);
            rate_dev = rho * rate_dev + innovation * config.rate_jitter * rng.sample::<f64, _>(StandardNormal);
            depth_dev = rho * depth_dev + innovation * config.depth_jitter * rng.sample::<f64, _>(StandardNormal);
            y
        })
        .collect();
    Trajectory::new(lit(config.dt), truth)
}
