//! Intermittent Kalman predictor.
//!
//! Two layers: a covariance-only recursion that never looks at measurement
//! values (this is what the schedule optimizer scores), and the full state
//! recursion that produces one-step-ahead position predictions.
//!
//! At a measurement time the a-posteriori covariance is
//! `[P⁻¹ + Cᵀ R⁻¹ C]⁻¹`; elsewhere the posterior is the prior, unchanged.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Schedule, StateSpaceModel, WarmupConfig};
use crate::scalar::{lit, to_f64, Real};

/// Above this condition number of the prior covariance the information form
/// is abandoned for the covariance form.
pub const INFO_FORM_MAX_COND: f64 = 1e12;

/// Full output of [`run_predictor`], indexed by `t = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefTrajectory<T: Real> {
    pub prior_mean: Vec<DVector<T>>,
    pub prior_cov: Vec<DMatrix<T>>,
    pub post_mean: Vec<DVector<T>>,
    pub post_cov: Vec<DMatrix<T>>,
    /// `ŷ(t|t−1) = C x̂(t|t−1) + d`
    pub pred_pos: Vec<DVector<T>>,
    pub measured: Vec<bool>,
}

/// A-priori covariances `P(t|t−1)` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceTrace<T: Real> {
    pub prior_cov: Vec<DMatrix<T>>,
}

impl<T: Real> CovarianceTrace<T> {
    /// `Tr[C P(t|t−1) Cᵀ]` per step.
    pub fn output_variances(&self, model: &StateSpaceModel<T>) -> Vec<T> {
        self.prior_cov
            .iter()
            .map(|p| output_variance(model, p))
            .collect()
    }
}

/// `Tr[C P Cᵀ]`.
pub fn output_variance<T: Real>(model: &StateSpaceModel<T>, cov: &DMatrix<T>) -> T {
    (model.c() * cov * model.c().transpose()).trace()
}

/// `A P Aᵀ + G Q Gᵀ`, symmetrized.
pub fn time_update_cov<T: Real>(model: &StateSpaceModel<T>, post_cov: &DMatrix<T>) -> DMatrix<T> {
    let a = model.a();
    linalg::symmetrize(&(a * post_cov * a.transpose() + model.process_cov()))
}

/// Covariance-form update `P − P Cᵀ (C P Cᵀ + R)⁻¹ C P`.
pub fn covariance_form_update<T: Real>(
    model: &StateSpaceModel<T>,
    prior_cov: &DMatrix<T>,
) -> DMatrix<T> {
    let c = model.c();
    let pct = prior_cov * c.transpose();
    let s = linalg::symmetrize(&(c * &pct + model.r()));
    // S ⪰ R ≻ 0, so the solve is well-posed.
    let gain_t = linalg::sym_solve(&s, &pct.transpose());
    linalg::symmetrize(&(prior_cov - &pct * gain_t))
}

/// Information-form update `[P⁻¹ + Cᵀ R⁻¹ C]⁻¹`; `None` when `P` is not
/// safely invertible.
pub fn information_form_update<T: Real>(
    model: &StateSpaceModel<T>,
    prior_cov: &DMatrix<T>,
) -> Option<DMatrix<T>> {
    if linalg::condition_number(prior_cov) > lit(INFO_FORM_MAX_COND) {
        return None;
    }
    let info = linalg::spd_inverse(prior_cov)? + model.info_gain();
    linalg::spd_inverse(&info)
}

/// Measurement update of the covariance; identity when `measured` is false.
pub fn measure_update_cov<T: Real>(
    model: &StateSpaceModel<T>,
    prior_cov: &DMatrix<T>,
    measured: bool,
) -> DMatrix<T> {
    if !measured {
        return prior_cov.clone();
    }
    information_form_update(model, prior_cov)
        .unwrap_or_else(|| covariance_form_update(model, prior_cov))
}

/// Measurement-free covariance recursion from `P(0|−1) = P̄₀` to `P(T|T−1)`.
pub fn run_covariance<T: Real>(
    model: &StateSpaceModel<T>,
    schedule: &Schedule,
) -> Result<CovarianceTrace<T>> {
    let horizon = schedule.horizon();
    let mask = schedule.mask();
    let mut prior_cov = Vec::with_capacity(horizon + 1);
    prior_cov.push(model.x0_cov().clone());
    for &measured in &mask {
        let post = measure_update_cov(model, prior_cov.last().unwrap(), measured);
        prior_cov.push(time_update_cov(model, &post));
    }
    Ok(CovarianceTrace { prior_cov })
}

/// Summed predicted-position variance `Σ_{t=t0+1}^{T} Tr[C P(t|t−1) Cᵀ]`.
pub fn objective<T: Real>(
    model: &StateSpaceModel<T>,
    schedule: &Schedule,
    warmup: WarmupConfig,
) -> Result<T> {
    warmup.check(schedule.horizon())?;
    let trace = run_covariance(model, schedule)?;
    Ok(trace.prior_cov[warmup.t0 + 1..]
        .iter()
        .fold(T::zero(), |acc, p| acc + output_variance(model, p)))
}

/// Runs the intermittent predictor over `t = 0..=T`.
///
/// `measurements` must carry exactly the schedule's times (any order).
pub fn run_predictor<T: Real>(
    model: &StateSpaceModel<T>,
    schedule: &Schedule,
    measurements: &[(usize, DVector<T>)],
) -> Result<BeliefTrajectory<T>> {
    let horizon = schedule.horizon();
    let m = model.output_dim();

    let mut by_time: Vec<Option<&DVector<T>>> = vec![None; horizon];
    for (t, z) in measurements {
        if *t >= horizon || !schedule.contains(*t) {
            return Err(Error::InvalidInput(format!(
                "measurement at t={t} is not in the schedule"
            )));
        }
        if by_time[*t].is_some() {
            return Err(Error::InvalidInput(format!("duplicate measurement at t={t}")));
        }
        if z.len() != m {
            return Err(Error::InvalidInput(format!(
                "measurement at t={t} has dimension {}, expected {m}",
                z.len()
            )));
        }
        by_time[*t] = Some(z);
    }
    if let Some(&t) = schedule.times().iter().find(|&&t| by_time[t].is_none()) {
        return Err(Error::InvalidInput(format!(
            "scheduled time t={t} has no measurement"
        )));
    }

    let cap = horizon + 1;
    let mut out = BeliefTrajectory {
        prior_mean: Vec::with_capacity(cap),
        prior_cov: Vec::with_capacity(cap),
        post_mean: Vec::with_capacity(cap),
        post_cov: Vec::with_capacity(cap),
        pred_pos: Vec::with_capacity(cap),
        measured: Vec::with_capacity(cap),
    };

    let mut x_prior = model.x0_mean().clone();
    let mut p_prior = model.x0_cov().clone();
    let gain_factor = model.c().transpose() * model.r_inv();
    for t in 0..=horizon {
        out.pred_pos.push(model.output(&x_prior));
        let z = by_time.get(t).copied().flatten();
        let (x_post, p_post) = match z {
            Some(z) => {
                let p_post = measure_update_cov(model, &p_prior, true);
                let innovation = z - model.d() - model.c() * &x_prior;
                let x_post = &x_prior + &p_post * &gain_factor * innovation;
                (x_post, p_post)
            }
            None => (x_prior.clone(), p_prior.clone()),
        };
        out.measured.push(z.is_some());
        out.prior_mean.push(x_prior);
        out.prior_cov.push(p_prior);
        if t < horizon {
            x_prior = model.a() * &x_post + model.b();
            p_prior = time_update_cov(model, &p_post);
        } else {
            // Placeholders, never read after the last step.
            x_prior = DVector::zeros(0);
            p_prior = DMatrix::zeros(0, 0);
        }
        out.post_mean.push(x_post);
        out.post_cov.push(p_post);
    }
    Ok(out)
}

/// Measurements `(t, z(t))` for every time in `schedule`, read from a series.
pub fn measurements_at<T: Real>(
    schedule: &Schedule,
    series: &[DVector<T>],
) -> Result<Vec<(usize, DVector<T>)>> {
    schedule
        .times()
        .iter()
        .map(|&t| {
            series
                .get(t)
                .map(|z| (t, z.clone()))
                .ok_or_else(|| Error::InvalidInput(format!("no observation at t={t}")))
        })
        .collect()
}

impl<T: Real> BeliefTrajectory<T> {
    pub fn len(&self) -> usize {
        self.pred_pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pred_pos.is_empty()
    }

    /// `ŷ(t|t) = C x̂(t|t) + d`.
    pub fn post_pos(&self, model: &StateSpaceModel<T>) -> Vec<DVector<T>> {
        self.post_mean.iter().map(|x| model.output(x)).collect()
    }

    /// CSV with columns `t, pred_pos_1..m, post_pos_1..m, trace_prior, measured`.
    ///
    /// `trace_prior` is `Tr[C P(t|t−1) Cᵀ]`.
    pub fn write_csv<W: Write>(&self, model: &StateSpaceModel<T>, mut w: W) -> Result<()> {
        let m = model.output_dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|i| format!("pred_pos_{i}")));
        header.extend((1..=m).map(|i| format!("post_pos_{i}")));
        header.push("trace_prior".into());
        header.push("measured".into());
        writeln!(w, "{}", header.join(","))?;
        let post_pos = self.post_pos(model);
        for t in 0..self.len() {
            let mut row = vec![t.to_string()];
            row.extend(self.pred_pos[t].iter().map(|&v| fmt_f64(to_f64(v))));
            row.extend(post_pos[t].iter().map(|&v| fmt_f64(to_f64(v))));
            row.push(fmt_f64(to_f64(output_variance(model, &self.prior_cov[t]))));
            row.push(if self.measured[t] { "1" } else { "0" }.into());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// 17 significant digits; parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
