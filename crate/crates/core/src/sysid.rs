//! Maximum-likelihood identification of a state-space model from regularly
//! sampled measurements, by expectation maximization.
//!
//! E-step: Kalman filter on every sample followed by a Rauch–Tung–Striebel
//! smoother, giving smoothed moments and lag-one covariances. M-step: closed
//! form updates, with the constant offsets estimated jointly with `A` and `C`
//! by regressing on the state augmented with a constant 1.
//!
//! `G` is fixed to the identity; only `G Q Gᵀ` is identifiable, so `Q` is
//! estimated in full. All three covariances are kept above a small eigenvalue
//! floor. Clipping eigenvalues is the exact constrained maximizer, so the
//! likelihood stays monotone.

use nalgebra::{DMatrix, DVector};
use rand_distr::StandardNormal;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, clip_eigenvalues, symmetrize};
use crate::model::{ModelParams, StateSpaceModel};
use crate::rng::rng_from;
use crate::scalar::{from_usize, lit, to_f64, Real};

/// Relative tolerance on a likelihood decrease before EM is declared broken.
pub const MONOTONE_TOL: f64 = 1e-9;
/// Innovation covariances above this condition number are regularized.
pub const MAX_INNOVATION_COND: f64 = 1e12;
/// Ridge added to singular normal equations, relative to their mean diagonal.
pub const RIDGE: f64 = 1e-8;
/// Covariance eigenvalue floor, relative to the per-axis data scale.
pub const COV_FLOOR: f64 = 1e-10;

/// Smoothed sufficient statistics, indexed by sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedBelief<T: Real> {
    pub smooth_mean: Vec<DVector<T>>,
    pub smooth_cov: Vec<DMatrix<T>>,
    /// `Cov(x(t), x(t−1) | all data)`; entry 0 is zero.
    pub lag_one_cov: Vec<DMatrix<T>>,
}

/// E-step result.
#[derive(Debug, Clone)]
pub struct EStepOutput<T: Real> {
    pub belief: SmoothedBelief<T>,
    pub loglik: T,
    pub filtered_mean: Vec<DVector<T>>,
    pub filtered_cov: Vec<DMatrix<T>>,
    /// `ŷ(t|t−1)` from the forward pass.
    pub predicted_output: Vec<DVector<T>>,
    /// Steps whose innovation covariance had to be regularized.
    pub regularized_steps: usize,
}

/// M-step result.
#[derive(Debug, Clone)]
pub struct MStepOutput<T: Real> {
    pub model: StateSpaceModel<T>,
    /// True when a ridge was needed on a normal equation.
    pub regularized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub state_dim_n: usize,
    pub max_iters: usize,
    pub loglik_rel_tol: f64,
    pub rng_seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            state_dim_n: 4,
            max_iters: 300,
            loglik_rel_tol: 1e-7,
            rng_seed: 0,
        }
    }
}

/// Fitted model with its per-iteration log-likelihoods.
#[derive(Debug, Clone)]
pub struct FitResult<T: Real> {
    pub model: StateSpaceModel<T>,
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub loglik_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub state_dim_n: usize,
    pub regularized_steps: usize,
    pub ridge_used: bool,
    /// Held-out one-step RMS per candidate order, when the order was selected.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub order_scores: Vec<(usize, f64)>,
}

fn check_observations<T: Real>(observations: &[DVector<T>], min_len: usize) -> Result<usize> {
    if observations.len() < min_len {
        return Err(Error::InvalidInput(format!(
            "need at least {min_len} observations, got {}",
            observations.len()
        )));
    }
    let m = observations[0].len();
    if m == 0 || observations.iter().any(|z| z.len() != m) {
        return Err(Error::InvalidInput("observations have inconsistent dimensions".into()));
    }
    if observations.iter().any(|z| z.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput("observations contain non-finite values".into()));
    }
    Ok(m)
}

/// Forward filter plus RTS smoother over a fully measured window.
pub fn e_step<T: Real>(
    model: &StateSpaceModel<T>,
    observations: &[DVector<T>],
) -> Result<EStepOutput<T>> {
    let m = check_observations(observations, 2)?;
    if m != model.output_dim() {
        return Err(Error::InvalidInput(format!(
            "observations have dimension {m}, model expects {}",
            model.output_dim()
        )));
    }
    let len = observations.len();
    let (a, c) = (model.a(), model.c());
    let ln_2pi: T = lit((2.0 * std::f64::consts::PI).ln());

    let mut pred_mean = Vec::with_capacity(len);
    let mut pred_cov = Vec::with_capacity(len);
    let mut filt_mean = Vec::with_capacity(len);
    let mut filt_cov: Vec<DMatrix<T>> = Vec::with_capacity(len);
    let mut predicted_output = Vec::with_capacity(len);
    let mut loglik = T::zero();
    let mut regularized_steps = 0;

    let mut x = model.x0_mean().clone();
    let mut p = model.x0_cov().clone();
    for z in observations {
        predicted_output.push(model.output(&x));
        let innovation = z - model.d() - c * &x;
        let pct = &p * c.transpose();
        let mut s = symmetrize(&(c * &pct + model.r()));
        if linalg::condition_number(&s) > lit(MAX_INNOVATION_COND) {
            let bump = s.trace() / from_usize::<T>(m) * lit::<T>(1e-10);
            s += DMatrix::identity(m, m) * bump;
            regularized_steps += 1;
        }
        let chol = s
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("innovation covariance not positive definite".into()))?;
        let s_inv_e = chol.solve(&innovation);
        let log_det = chol.l().diagonal().iter().fold(T::zero(), |acc, &d| acc + d.ln()) * lit::<T>(2.0);
        loglik -= (from_usize::<T>(m) * ln_2pi + log_det + innovation.dot(&s_inv_e)) * lit::<T>(0.5);

        let gain_t = chol.solve(&pct.transpose());
        let xf = &x + gain_t.transpose() * &innovation;
        let pf = symmetrize(&(&p - &pct * &gain_t));

        pred_mean.push(x);
        pred_cov.push(p);
        x = a * &xf + model.b();
        p = symmetrize(&(a * &pf * a.transpose() + model.process_cov()));
        filt_mean.push(xf);
        filt_cov.push(pf);
    }

    // RTS backward pass.
    let n = model.state_dim();
    let mut smooth_mean = filt_mean.clone();
    let mut smooth_cov = filt_cov.clone();
    let mut lag_one_cov = vec![DMatrix::zeros(n, n); len];
    for t in (0..len - 1).rev() {
        // J = P(t|t) Aᵀ P(t+1|t)⁻¹, via P(t+1|t) X = A P(t|t), J = Xᵀ.
        let gain = linalg::sym_solve(&pred_cov[t + 1], &(a * &filt_cov[t])).transpose();
        smooth_mean[t] = &filt_mean[t] + &gain * (&smooth_mean[t + 1] - &pred_mean[t + 1]);
        smooth_cov[t] = symmetrize(
            &(&filt_cov[t] + &gain * (&smooth_cov[t + 1] - &pred_cov[t + 1]) * gain.transpose()),
        );
        lag_one_cov[t + 1] = &smooth_cov[t + 1] * gain.transpose();
    }

    Ok(EStepOutput {
        belief: SmoothedBelief {
            smooth_mean,
            smooth_cov,
            lag_one_cov,
        },
        loglik,
        filtered_mean: filt_mean,
        filtered_cov: filt_cov,
        predicted_output,
        regularized_steps,
    })
}

/// Mean per-axis variance of the observations, with a unit fallback.
fn data_scale<T: Real>(observations: &[DVector<T>]) -> T {
    let len = from_usize::<T>(observations.len());
    let m = from_usize::<T>(observations[0].len());
    let mean = observations
        .iter()
        .fold(DVector::zeros(observations[0].len()), |acc, z| acc + z)
        / len;
    let var = observations
        .iter()
        .fold(T::zero(), |acc, z| acc + (z - &mean).norm_squared())
        / (len * m);
    // A (near) constant signal has rounding-level variance; fall back on its
    // magnitude so the floors stay meaningful.
    let scale = var.max(mean.norm_squared() / m * lit::<T>(1e-2));
    if scale > T::zero() {
        scale
    } else {
        T::one()
    }
}

/// Solves `X · gram = cross` for `X`, adding a ridge if `gram` is singular.
fn regress<T: Real>(cross: &DMatrix<T>, gram: &DMatrix<T>) -> (DMatrix<T>, bool) {
    let gram = symmetrize(gram);
    if let Some(chol) = gram.clone().cholesky() {
        return (chol.solve(&cross.transpose()).transpose(), false);
    }
    let k = gram.nrows();
    let bump = (gram.trace() / from_usize::<T>(k)).max(T::one()) * lit::<T>(RIDGE);
    let ridged = &gram + DMatrix::identity(k, k) * bump;
    let solved = linalg::sym_solve(&ridged, &cross.transpose()).transpose();
    (solved, true)
}

/// `[[V + x xᵀ, x], [xᵀ, 1]]`
fn augmented_second_moment<T: Real>(mean: &DVector<T>, cov: &DMatrix<T>) -> DMatrix<T> {
    let n = mean.len();
    let mut out = DMatrix::zeros(n + 1, n + 1);
    out.view_mut((0, 0), (n, n)).copy_from(&(cov + mean * mean.transpose()));
    out.view_mut((0, n), (n, 1)).copy_from(mean);
    out.view_mut((n, 0), (1, n)).copy_from(&mean.transpose());
    out[(n, n)] = T::one();
    out
}

fn augmented<T: Real>(mean: &DVector<T>) -> DVector<T> {
    let n = mean.len();
    let mut out = DVector::zeros(n + 1);
    out.rows_mut(0, n).copy_from(mean);
    out[n] = T::one();
    out
}

/// Closed-form maximizers of the expected complete-data log-likelihood.
pub fn m_step<T: Real>(
    stats: &SmoothedBelief<T>,
    observations: &[DVector<T>],
    prev: &StateSpaceModel<T>,
) -> Result<MStepOutput<T>> {
    let m = check_observations(observations, 2)?;
    let len = observations.len();
    let n = prev.state_dim();
    if stats.smooth_mean.len() != len {
        return Err(Error::InvalidInput("statistics and observations differ in length".into()));
    }
    let floor = data_scale(observations) * lit::<T>(COV_FLOOR);
    let (xs, vs, lag) = (&stats.smooth_mean, &stats.smooth_cov, &stats.lag_one_cov);

    // Output map (C, d) and R.
    let mut zu = DMatrix::zeros(m, n + 1);
    let mut uu = DMatrix::zeros(n + 1, n + 1);
    let mut zz = DMatrix::zeros(m, m);
    for t in 0..len {
        let z = &observations[t];
        zu += z * augmented(&xs[t]).transpose();
        uu += augmented_second_moment(&xs[t], &vs[t]);
        zz += z * z.transpose();
    }
    let (h, ridge_out) = regress(&zu, &uu);
    let c = h.columns(0, n).into_owned();
    let d = h.column(n).into_owned();
    let r = clip_eigenvalues(&((zz - &zu * h.transpose()) / from_usize::<T>(len)), floor);

    // Dynamics (A, b) and Q.
    let mut xu = DMatrix::zeros(n, n + 1);
    let mut uu_prev = DMatrix::zeros(n + 1, n + 1);
    let mut xx_next = DMatrix::zeros(n, n);
    for t in 1..len {
        let mut cross = DMatrix::zeros(n, n + 1);
        cross
            .view_mut((0, 0), (n, n))
            .copy_from(&(&lag[t] + &xs[t] * xs[t - 1].transpose()));
        cross.view_mut((0, n), (n, 1)).copy_from(&xs[t]);
        xu += cross;
        uu_prev += augmented_second_moment(&xs[t - 1], &vs[t - 1]);
        xx_next += &vs[t] + &xs[t] * xs[t].transpose();
    }
    let (f, ridge_dyn) = regress(&xu, &uu_prev);
    let a = f.columns(0, n).into_owned();
    let b = f.column(n).into_owned();
    let q = clip_eigenvalues(&((xx_next - &xu * f.transpose()) / from_usize::<T>(len - 1)), floor);

    let model = StateSpaceModel::new(ModelParams {
        a,
        b,
        g: DMatrix::identity(n, n),
        q,
        c,
        d,
        r,
        x0_mean: xs[0].clone(),
        x0_cov: clip_eigenvalues(&vs[0], floor),
    })
    .map_err(|e| Error::Numerical(format!("M-step produced an invalid model: {e}")))?;
    Ok(MStepOutput {
        model,
        regularized: ridge_out || ridge_dyn,
    })
}

/// Starting point for EM.
///
/// A subspace estimate is tried first: the cross-covariance of stacked future
/// and past samples factors as (observability matrix) × (controllability
/// matrix); its leading singular vectors give `C` and, by shift invariance,
/// `A`. States projected from the future stack then give `Q`, `R` and the
/// initial belief by regression. When the data carry no usable structure
/// (for example a constant signal) the fallback is a seeded random start:
/// `d` is the sample mean, `C` has orthonormal rows (or columns when
/// `n < m`), `A = 0.95 I`, `b = 0`, `R = ½ Cov(Δz)`,
/// `Q = ½ tr(Cov(Δz))/m · I`, `x̄₀ = C⁺ (z₀ − d)`, `P̄₀ = I`.
pub fn initial_model<T: Real>(
    observations: &[DVector<T>],
    state_dim: usize,
    rng_seed: u64,
) -> Result<StateSpaceModel<T>> {
    check_observations(observations, 2)?;
    if state_dim == 0 {
        return Err(Error::InvalidInput("state dimension must be positive".into()));
    }
    match subspace_model(observations, state_dim) {
        Some(model) => Ok(model),
        None => random_model(observations, state_dim, rng_seed),
    }
}

fn sample_mean<T: Real>(observations: &[DVector<T>]) -> DVector<T> {
    let m = observations[0].len();
    observations.iter().fold(DVector::zeros(m), |acc, z| acc + z) / from_usize::<T>(observations.len())
}

fn sample_cov<T: Real>(rows: &[DVector<T>]) -> DMatrix<T> {
    let mean = sample_mean(rows);
    let k = mean.len();
    rows.iter()
        .fold(DMatrix::zeros(k, k), |acc, v| acc + (v - &mean) * (v - &mean).transpose())
        / from_usize::<T>(rows.len())
}

fn subspace_model<T: Real>(observations: &[DVector<T>], n: usize) -> Option<StateSpaceModel<T>> {
    let m = observations[0].len();
    let len = observations.len();
    let k = n.div_ceil(m) + 2;
    if len < 4 * k {
        return None;
    }
    let d = sample_mean(observations);
    let y: Vec<DVector<T>> = observations.iter().map(|z| z - &d).collect();
    let stack = |from: usize, step_back: bool| -> DVector<T> {
        let mut v = DVector::zeros(k * m);
        for i in 0..k {
            let t = if step_back { from - 1 - i } else { from + i };
            v.rows_mut(i * m, m).copy_from(&y[t]);
        }
        v
    };
    let columns = k..len - k + 1;
    let count = from_usize::<T>(columns.len());
    let mut h = DMatrix::zeros(k * m, k * m);
    for t in columns.clone() {
        h += stack(t, false) * stack(t, true).transpose();
    }
    h /= count;

    let svd = h.svd(true, false);
    let u = svd.u?;
    let sv = &svd.singular_values;
    let top = sv[0];
    if !(top > T::zero()) || !(sv[n - 1] > top * lit::<T>(1e-10)) {
        return None;
    }
    let roots = DVector::from_fn(n, |i, _| sv[i].sqrt());
    let gamma = u.columns(0, n) * DMatrix::from_diagonal(&roots);
    let c = gamma.rows(0, m).into_owned();
    let up = gamma.rows(0, (k - 1) * m).into_owned();
    let down = gamma.rows(m, (k - 1) * m).into_owned();
    let mut a = linalg::pseudo_inverse(&up) * down;
    let radius = a
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re * z.re + z.im * z.im).sqrt())
        .fold(T::zero(), |acc, r| acc.max(r));
    let max_radius: T = lit(0.999);
    if !radius.is_finite() {
        return None;
    }
    if radius > max_radius {
        a *= max_radius / radius;
    }

    let gamma_pinv = linalg::pseudo_inverse(&gamma);
    let states: Vec<DVector<T>> = (0..=len - k).map(|t| &gamma_pinv * stack(t, false)).collect();
    let state_resid: Vec<DVector<T>> = states.windows(2).map(|w| &w[1] - &a * &w[0]).collect();
    let out_resid: Vec<DVector<T>> = states.iter().zip(&y).map(|(x, yt)| yt - &c * x).collect();
    let floor = data_scale(observations) * lit::<T>(1e-3);
    let q = clip_eigenvalues(&sample_cov(&state_resid), floor);
    let r = clip_eigenvalues(&sample_cov(&out_resid), floor);
    let x0_cov = clip_eigenvalues(&sample_cov(&states), floor);
    let model = StateSpaceModel::new(ModelParams {
        a,
        b: DVector::zeros(n),
        g: DMatrix::identity(n, n),
        q,
        c,
        d,
        r,
        x0_mean: states[0].clone(),
        x0_cov,
    })
    .ok()?;
    let finite = |m: &DMatrix<T>| m.iter().all(|v| v.is_finite());
    (finite(model.a()) && finite(model.q()) && finite(model.r()) && finite(model.c())).then_some(model)
}

fn random_model<T: Real>(
    observations: &[DVector<T>],
    n: usize,
    rng_seed: u64,
) -> Result<StateSpaceModel<T>> {
    let m = observations[0].len();
    let d = sample_mean(observations);

    let mut rng = rng_from(rng_seed);
    let raw = DMatrix::from_fn(m, n, |_, _| lit::<T>(rng.sample::<f64, _>(StandardNormal)));
    let c = if m <= n {
        raw.transpose().qr().q().transpose()
    } else {
        raw.qr().q()
    };

    let diffs: Vec<DVector<T>> = observations.windows(2).map(|w| &w[1] - &w[0]).collect();
    let dcov = sample_cov(&diffs);
    let floor = data_scale(observations) * lit::<T>(1e-6);
    let half: T = lit(0.5);
    let r = clip_eigenvalues(&(&dcov * half), floor);
    let q_scale = (dcov.trace() / from_usize::<T>(m) * half).max(floor);

    let x0_mean = linalg::pseudo_inverse(&c) * (&observations[0] - &d);
    StateSpaceModel::new(ModelParams {
        a: DMatrix::identity(n, n) * lit::<T>(0.95),
        b: DVector::zeros(n),
        g: DMatrix::identity(n, n),
        q: DMatrix::identity(n, n) * q_scale,
        c,
        d,
        r,
        x0_mean,
        x0_cov: DMatrix::identity(n, n),
    })
}

/// Alternates E and M steps until the relative log-likelihood gain drops
/// below the tolerance or `max_iters` is reached.
pub fn fit<T: Real>(observations: &[DVector<T>], config: &EmConfig) -> Result<FitResult<T>> {
    let n = config.state_dim_n;
    if n == 0 || config.max_iters == 0 || !(config.loglik_rel_tol > 0.0) {
        return Err(Error::InvalidInput(
            "EM config needs state_dim_n > 0, max_iters > 0, loglik_rel_tol > 0".into(),
        ));
    }
    let min_len = (10 * n).max(2);
    if observations.len() < min_len {
        return Err(Error::InvalidInput(format!(
            "need at least 10·n = {min_len} observations for n = {n}, got {}",
            observations.len()
        )));
    }
    let mut model = initial_model(observations, n, config.rng_seed)?;
    let mut history: Vec<f64> = Vec::new();
    let mut regularized_steps = 0;
    let mut ridge_used = false;
    let mut converged = false;
    for iteration in 0..config.max_iters {
        let e = e_step(&model, observations)?;
        regularized_steps += e.regularized_steps;
        let ll = to_f64(e.loglik);
        if !ll.is_finite() {
            return Err(Error::Numerical(format!(
                "log-likelihood not finite at EM iteration {iteration}"
            )));
        }
        if let Some(&prev) = history.last() {
            if ll < prev - MONOTONE_TOL * prev.abs() {
                return Err(Error::NonMonotoneLikelihood {
                    iteration,
                    previous: prev,
                    current: ll,
                });
            }
            if (ll - prev) <= config.loglik_rel_tol * prev.abs() {
                history.push(ll);
                converged = true;
                break;
            }
        }
        history.push(ll);
        if iteration + 1 == config.max_iters {
            break;
        }
        let step = m_step(&e.belief, observations, &model)?;
        ridge_used |= step.regularized;
        model = step.model;
    }
    Ok(FitResult {
        model,
        diagnostics: FitDiagnostics {
            iterations: history.len(),
            loglik_history: history,
            converged,
            state_dim_n: n,
            regularized_steps,
            ridge_used,
            order_scores: Vec::new(),
        },
    })
}

/// RMS of `z(t) − ŷ(t|t−1)` over `t ≥ from`, filtering every sample.
pub fn one_step_rms<T: Real>(
    model: &StateSpaceModel<T>,
    observations: &[DVector<T>],
    from: usize,
) -> Result<T> {
    if from >= observations.len() {
        return Err(Error::InvalidInput("empty scoring window".into()));
    }
    let e = e_step(model, observations)?;
    let sum = observations[from..]
        .iter()
        .zip(&e.predicted_output[from..])
        .fold(T::zero(), |acc, (z, y)| acc + (z - y).norm_squared());
    Ok((sum / from_usize::<T>(observations.len() - from)).sqrt())
}

/// Picks `n` from `candidates` by held-out one-step RMS on the last 20% of
/// the window (fitting on the first 80%), then refits on the whole window.
pub fn select_order<T: Real>(
    observations: &[DVector<T>],
    candidates: &[usize],
    config: &EmConfig,
) -> Result<FitResult<T>> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidate state dimensions".into()));
    }
    let split = observations.len() * 4 / 5;
    let scores: Vec<(usize, T)> = candidates
        .par_iter()
        .map(|&n| {
            let cfg = EmConfig {
                state_dim_n: n,
                ..config.clone()
            };
            let fitted = fit(&observations[..split], &cfg)?;
            Ok((n, one_step_rms(&fitted.model, observations, split)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = scores[0];
    for &s in &scores[1..] {
        if s.1 < best.1 {
            best = s;
        }
    }
    let mut result = fit(
        observations,
        &EmConfig {
            state_dim_n: best.0,
            ..config.clone()
        },
    )?;
    result.diagnostics.order_scores = scores.iter().map(|&(n, v)| (n, to_f64(v))).collect();
    Ok(result)
}
