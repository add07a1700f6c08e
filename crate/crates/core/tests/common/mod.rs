//! Oracles shared by the integration tests. Everything here is written
//! against nalgebra directly and does not call into the library's filter or
//! optimizer code.

#![allow(dead_code)]

use ikp_core::{Model, Params};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

/// `B Bᵀ + floor·I`, well away from singular.
pub fn random_spd(rng: &mut ChaCha8Rng, dim: usize, floor: f64) -> DMatrix<f64> {
    let b = gaussian_matrix(rng, dim, dim);
    &b * b.transpose() + DMatrix::identity(dim, dim) * floor
}

/// `A` rescaled to the given spectral radius.
pub fn scaled_dynamics(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> DMatrix<f64> {
    let a = gaussian_matrix(rng, n, n);
    let rho = a
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if rho > 0.0 {
        a * (radius / rho)
    } else {
        DMatrix::identity(n, n) * radius
    }
}

/// Random model with `n` states, `m` outputs and a full-rank noise input.
pub fn random_model(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Model {
    let radius = rng.random_range(0.3..1.05);
    let noise_dim = rng.random_range(1..=n);
    Model::new(Params {
        a: scaled_dynamics(rng, n, radius),
        b: gaussian_vector(rng, n) * 0.1,
        g: gaussian_matrix(rng, n, noise_dim),
        q: random_spd(rng, noise_dim, 0.1) * 0.1,
        c: gaussian_matrix(rng, m, n),
        d: gaussian_vector(rng, m),
        r: random_spd(rng, m, 0.1) * 0.5,
        x0_mean: gaussian_vector(rng, n),
        x0_cov: random_spd(rng, n, 0.2),
    })
    .expect("random model is valid")
}

/// Scalar model `x' = a x + w`, `z = x + v`.
pub fn scalar_model(a: f64, q: f64, r: f64, p0: f64) -> Model {
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    Model::new(Params {
        a: one(a),
        b: DVector::zeros(1),
        g: one(1.0),
        q: one(q),
        c: one(1.0),
        d: DVector::zeros(1),
        r: one(r),
        x0_mean: DVector::zeros(1),
        x0_cov: one(p0),
    })
    .unwrap()
}

/// Samples `x ~ N(mean, cov)` through an eigen-decomposition, so a singular
/// `cov` is fine.
pub fn sample_gaussian(rng: &mut ChaCha8Rng, mean: &DVector<f64>, cov: &DMatrix<f64>) -> DVector<f64> {
    let e = cov.clone().symmetric_eigen();
    let root = &e.eigenvectors * DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    mean + root * gaussian_vector(rng, mean.len())
}

/// Ground truth and measurements sampled from the model, `t = 0..=horizon`.
pub struct Sample {
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub measurements: Vec<DVector<f64>>,
}

pub fn sample_model(rng: &mut ChaCha8Rng, model: &Model, horizon: usize) -> Sample {
    let gqg = model.g() * model.q() * model.g().transpose();
    let zero_n = DVector::zeros(model.state_dim());
    let zero_m = DVector::zeros(model.output_dim());
    let mut x = sample_gaussian(rng, model.x0_mean(), model.x0_cov());
    let mut s = Sample {
        states: Vec::new(),
        outputs: Vec::new(),
        measurements: Vec::new(),
    };
    for _ in 0..=horizon {
        let y = model.c() * &x + model.d();
        s.measurements.push(&y + sample_gaussian(rng, &zero_m, model.r()));
        s.outputs.push(y);
        s.states.push(x.clone());
        x = model.a() * &x + model.b() + sample_gaussian(rng, &zero_n, &gqg);
    }
    s
}

/// Textbook gain-form filter with a Joseph-form covariance update.
pub struct GainFilter {
    pub prior_mean: Vec<DVector<f64>>,
    pub prior_cov: Vec<DMatrix<f64>>,
    pub post_mean: Vec<DVector<f64>>,
    pub post_cov: Vec<DMatrix<f64>>,
    pub pred_pos: Vec<DVector<f64>>,
}

/// Runs over `t = 0..=horizon`; `z[t]` is used where `measured[t]` holds.
pub fn gain_filter(model: &Model, measured: &[bool], z: &[DVector<f64>], horizon: usize) -> GainFilter {
    let (a, c, r) = (model.a(), model.c(), model.r());
    let gqg = model.g() * model.q() * model.g().transpose();
    let eye = DMatrix::<f64>::identity(model.state_dim(), model.state_dim());
    let mut out = GainFilter {
        prior_mean: vec![],
        prior_cov: vec![],
        post_mean: vec![],
        post_cov: vec![],
        pred_pos: vec![],
    };
    let mut x = model.x0_mean().clone();
    let mut p = model.x0_cov().clone();
    for t in 0..=horizon {
        out.pred_pos.push(c * &x + model.d());
        let (xp, pp) = if t < measured.len() && measured[t] {
            let s = c * &p * c.transpose() + r;
            let k = &p * c.transpose() * s.try_inverse().expect("innovation covariance invertible");
            let innovation = &z[t] - c * &x - model.d();
            let ikc = &eye - &k * c;
            let pp = &ikc * &p * ikc.transpose() + &k * r * k.transpose();
            (&x + &k * innovation, pp)
        } else {
            (x.clone(), p.clone())
        };
        out.prior_mean.push(x.clone());
        out.prior_cov.push(p.clone());
        x = a * &xp + model.b();
        p = a * &pp * a.transpose() + &gqg;
        out.post_mean.push(xp);
        out.post_cov.push(pp);
    }
    out
}

/// `Σ_{t=t0+1}^{T} Tr[C P(t|t−1) Cᵀ]` from the gain-form recursion.
pub fn oracle_objective(model: &Model, times: &[usize], horizon: usize, t0: usize) -> f64 {
    let mut measured = vec![false; horizon];
    for &t in times {
        measured[t] = true;
    }
    let z = vec![DVector::zeros(model.output_dim()); horizon + 1];
    let f = gain_filter(model, &measured, &z, horizon);
    let c = model.c();
    (t0 + 1..=horizon)
        .map(|t| (c * &f.prior_cov[t] * c.transpose()).trace())
        .sum()
}

/// Relative Frobenius distance between two stacked sequences.
pub fn seq_rel_diff<'a, I>(pairs: I) -> f64
where
    I: IntoIterator<Item = (&'a DMatrix<f64>, &'a DMatrix<f64>)>,
{
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in pairs {
        num += (a - b).norm_squared();
        den += b.norm_squared();
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

pub fn seq_rel_diff_vec(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        num += (x - y).norm_squared();
        den += y.norm_squared();
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Stable model for identification experiments: spectral radius in
/// `[0.6, 0.95]`, process noise comparable to measurement noise.
pub fn identifiable_model(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Model {
    let radius = rng.random_range(0.6..0.95);
    Model::new(Params {
        a: scaled_dynamics(rng, n, radius),
        b: gaussian_vector(rng, n) * 0.2,
        g: DMatrix::identity(n, n),
        q: random_spd(rng, n, 0.2) * 0.3,
        c: gaussian_matrix(rng, m, n),
        d: gaussian_vector(rng, m),
        r: random_spd(rng, m, 0.2) * 0.2,
        x0_mean: gaussian_vector(rng, n),
        x0_cov: DMatrix::identity(n, n),
    })
    .expect("identifiable model is valid")
}

/// Gaussian log-likelihood of fully measured data from the innovations of
/// the gain-form filter.
pub fn oracle_loglik(model: &Model, z: &[DVector<f64>]) -> f64 {
    let horizon = z.len() - 1;
    let f = gain_filter(model, &vec![true; z.len()], z, horizon);
    let m = model.output_dim() as f64;
    let mut ll = 0.0;
    for (t, zt) in z.iter().enumerate() {
        let s = model.c() * &f.prior_cov[t] * model.c().transpose() + model.r();
        let e = zt - &f.pred_pos[t];
        let det = s.determinant();
        let quad = (e.transpose() * s.try_inverse().unwrap() * &e)[(0, 0)];
        ll -= 0.5 * (m * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad);
    }
    ll
}
