//! Linear Gaussian state-space model, measurement schedules and their
//! validation.
//!
//! The model is
//!
//! ```text
//! x(t+1) = A x(t) + b + G w(t),   w ~ N(0, Q)
//! z(t)   = C x(t) + d + v(t),     v ~ N(0, R),   t ∈ M
//! x(0)   ~ N(x̄₀, P̄₀)
//! ```

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::{lit, to_f64, Real};

/// Relative Frobenius tolerance for symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Relative eigenvalue floor for PSD checks.
pub const PSD_TOL: f64 = 1e-9;

/// Raw, unchecked parameter set. Use [`validate_model`] to diagnose it and
/// [`StateSpaceModel::new`] to turn it into a usable model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Real> {
    pub a: DMatrix<T>,
    pub b: DVector<T>,
    pub g: DMatrix<T>,
    pub q: DMatrix<T>,
    pub c: DMatrix<T>,
    pub d: DVector<T>,
    pub r: DMatrix<T>,
    pub x0_mean: DVector<T>,
    pub x0_cov: DMatrix<T>,
}

/// One reason a parameter set is unusable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NotSquare(&'static str),
    Shape {
        name: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    Empty(&'static str),
    NonFinite(&'static str),
    Asymmetric(&'static str),
    NotPsd(&'static str),
    NotPositiveDefinite(&'static str),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotSquare(name) => write!(f, "{name} not square"),
            Violation::Shape {
                name,
                expected,
                found,
            } => write!(
                f,
                "{name} has shape {}x{}, expected {}x{}",
                found.0, found.1, expected.0, expected.1
            ),
            Violation::Empty(name) => write!(f, "{name} is empty"),
            Violation::NonFinite(name) => write!(f, "{name} has non-finite entries"),
            Violation::Asymmetric(name) => write!(f, "{name} not symmetric"),
            Violation::NotPsd(name) => write!(f, "{name} not positive semi-definite"),
            Violation::NotPositiveDefinite(name) => write!(f, "{name} not positive definite"),
        }
    }
}

/// Outcome of [`validate_model`]: empty means the parameters are usable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }
}

fn check_shape<T: Real>(
    out: &mut Vec<Violation>,
    name: &'static str,
    m: &DMatrix<T>,
    rows: usize,
    cols: usize,
) -> bool {
    if m.shape() != (rows, cols) {
        out.push(Violation::Shape {
            name,
            expected: (rows, cols),
            found: m.shape(),
        });
        return false;
    }
    true
}

fn check_vec<T: Real>(out: &mut Vec<Violation>, name: &'static str, v: &DVector<T>, len: usize) {
    if v.len() != len {
        out.push(Violation::Shape {
            name,
            expected: (len, 1),
            found: (v.len(), 1),
        });
    }
}

/// Checks dimensions, finiteness, symmetry and definiteness of a parameter
/// set. Never fails: problems come back as data.
pub fn validate_model<T: Real>(params: &ModelParams<T>) -> ValidationReport {
    let mut v = Vec::new();
    let matrices: [(&'static str, &DMatrix<T>); 6] = [
        ("A", &params.a),
        ("G", &params.g),
        ("Q", &params.q),
        ("C", &params.c),
        ("R", &params.r),
        ("x0_cov", &params.x0_cov),
    ];
    for (name, m) in matrices {
        if m.iter().any(|x| !x.is_finite()) {
            v.push(Violation::NonFinite(name));
        }
    }
    let vectors: [(&'static str, &DVector<T>); 3] =
        [("b", &params.b), ("d", &params.d), ("x0_mean", &params.x0_mean)];
    for (name, x) in vectors {
        if x.iter().any(|x| !x.is_finite()) {
            v.push(Violation::NonFinite(name));
        }
    }

    if params.a.nrows() != params.a.ncols() {
        v.push(Violation::NotSquare("A"));
        return ValidationReport { violations: v };
    }
    let n = params.a.nrows();
    if n == 0 {
        v.push(Violation::Empty("A"));
        return ValidationReport { violations: v };
    }
    let m = params.c.nrows();
    if m == 0 {
        v.push(Violation::Empty("C"));
    }
    let p = params.g.ncols();

    check_vec(&mut v, "b", &params.b, n);
    check_shape(&mut v, "G", &params.g, n, p);
    let q_ok = check_shape(&mut v, "Q", &params.q, p, p);
    check_shape(&mut v, "C", &params.c, m, n);
    check_vec(&mut v, "d", &params.d, m);
    let r_ok = check_shape(&mut v, "R", &params.r, m, m);
    check_vec(&mut v, "x0_mean", &params.x0_mean, n);
    let p0_ok = check_shape(&mut v, "x0_cov", &params.x0_cov, n, n);

    let sym_tol = lit::<T>(SYMMETRY_TOL);
    let psd_tol = lit::<T>(PSD_TOL);
    let finite = v.iter().all(|x| !matches!(x, Violation::NonFinite(_)));
    if !finite {
        return ValidationReport { violations: v };
    }
    let mut covariance = |name: &'static str, mat: &DMatrix<T>, ok: bool, strict: bool| {
        if !ok || mat.nrows() == 0 {
            return;
        }
        if linalg::asymmetry(mat) > sym_tol {
            v.push(Violation::Asymmetric(name));
        }
        if strict {
            if !linalg::is_pd(mat) {
                v.push(Violation::NotPositiveDefinite(name));
            }
        } else if !linalg::is_psd(mat, psd_tol) {
            v.push(Violation::NotPsd(name));
        }
    };
    covariance("Q", &params.q, q_ok, false);
    covariance("R", &params.r, r_ok, true);
    covariance("x0_cov", &params.x0_cov, p0_ok, false);

    ValidationReport { violations: v }
}

/// Validated state-space model with a few derived matrices cached.
///
/// Covariances are symmetrized on construction. Immutable afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel<T: Real> {
    params: ModelParams<T>,
    /// `G Q Gᵀ`
    process_cov: DMatrix<T>,
    r_inv: DMatrix<T>,
    /// `Cᵀ R⁻¹ C`
    info_gain: DMatrix<T>,
}

impl<T: Real> StateSpaceModel<T> {
    pub fn new(mut params: ModelParams<T>) -> Result<Self> {
        // Symmetrize before validation; only shapes that allow it.
        for m in [&mut params.q, &mut params.r, &mut params.x0_cov] {
            if m.is_square() {
                *m = linalg::symmetrize(m);
            }
        }
        let report = validate_model(&params);
        if !report.is_ok() {
            return Err(Error::InvalidModel(report.messages().join("; ")));
        }
        let process_cov = linalg::symmetrize(&(&params.g * &params.q * params.g.transpose()));
        let r_inv = linalg::spd_inverse(&params.r)
            .ok_or_else(|| Error::InvalidModel("R not positive definite".into()))?;
        let info_gain = linalg::symmetrize(&(params.c.transpose() * &r_inv * &params.c));
        Ok(Self {
            params,
            process_cov,
            r_inv,
            info_gain,
        })
    }

    /// State dimension `n`.
    pub fn state_dim(&self) -> usize {
        self.params.a.nrows()
    }

    /// Output dimension `m`.
    pub fn output_dim(&self) -> usize {
        self.params.c.nrows()
    }

    /// Noise input dimension `p`.
    pub fn noise_dim(&self) -> usize {
        self.params.g.ncols()
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.params.a
    }
    pub fn b(&self) -> &DVector<T> {
        &self.params.b
    }
    pub fn g(&self) -> &DMatrix<T> {
        &self.params.g
    }
    pub fn q(&self) -> &DMatrix<T> {
        &self.params.q
    }
    pub fn c(&self) -> &DMatrix<T> {
        &self.params.c
    }
    pub fn d(&self) -> &DVector<T> {
        &self.params.d
    }
    pub fn r(&self) -> &DMatrix<T> {
        &self.params.r
    }
    pub fn x0_mean(&self) -> &DVector<T> {
        &self.params.x0_mean
    }
    pub fn x0_cov(&self) -> &DMatrix<T> {
        &self.params.x0_cov
    }

    pub fn process_cov(&self) -> &DMatrix<T> {
        &self.process_cov
    }
    pub fn r_inv(&self) -> &DMatrix<T> {
        &self.r_inv
    }
    pub fn info_gain(&self) -> &DMatrix<T> {
        &self.info_gain
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn into_params(self) -> ModelParams<T> {
        self.params
    }

    /// Same model with a different initial belief.
    pub fn with_initial_belief(&self, mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        let mut params = self.params.clone();
        params.x0_mean = mean;
        params.x0_cov = cov;
        Self::new(params)
    }

    /// Predicted position `C x + d`.
    pub fn output(&self, x: &DVector<T>) -> DVector<T> {
        &self.params.c * x + &self.params.d
    }

    pub fn to_doc(&self) -> ModelDoc {
        ModelDoc::from_params(&self.params)
    }

    pub fn from_doc(doc: &ModelDoc) -> Result<Self> {
        Self::new(doc.to_params()?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        Self::from_doc(&doc)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

/// JSON document for a model: row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    pub d: Vec<f64>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    pub x0_mean: Vec<f64>,
    pub x0_cov: Vec<Vec<f64>>,
}

fn rows_of<T: Real>(m: &DMatrix<T>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| to_f64(m[(i, j)])).collect())
        .collect()
}

fn matrix_from_rows<T: Real>(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<T>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidModel(format!("{name} has ragged rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| lit(rows[i][j])))
}

impl ModelDoc {
    pub fn from_params<T: Real>(p: &ModelParams<T>) -> Self {
        let vec = |v: &DVector<T>| v.iter().map(|&x| to_f64(x)).collect();
        Self {
            a: rows_of(&p.a),
            b: vec(&p.b),
            g: rows_of(&p.g),
            q: rows_of(&p.q),
            c: rows_of(&p.c),
            d: vec(&p.d),
            r: rows_of(&p.r),
            x0_mean: vec(&p.x0_mean),
            x0_cov: rows_of(&p.x0_cov),
        }
    }

    pub fn to_params<T: Real>(&self) -> Result<ModelParams<T>> {
        let vec = |v: &[f64]| DVector::from_iterator(v.len(), v.iter().map(|&x| lit(x)));
        Ok(ModelParams {
            a: matrix_from_rows("A", &self.a)?,
            b: vec(&self.b),
            g: matrix_from_rows("G", &self.g)?,
            q: matrix_from_rows("Q", &self.q)?,
            c: matrix_from_rows("C", &self.c)?,
            d: vec(&self.d),
            r: matrix_from_rows("R", &self.r)?,
            x0_mean: vec(&self.x0_mean),
            x0_cov: matrix_from_rows("x0_cov", &self.x0_cov)?,
        })
    }
}

/// A strictly increasing set of measurement times inside `[0, T-1]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Schedule {
    times: Vec<usize>,
    horizon: usize,
}

impl Schedule {
    /// Accepts only strictly increasing, in-range times.
    pub fn new(times: Vec<usize>, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidSchedule("horizon T must be positive".into()));
        }
        if let Some(&t) = times.iter().find(|&&t| t >= horizon) {
            return Err(Error::InvalidSchedule(format!(
                "time {t} outside [0, {}]",
                horizon - 1
            )));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSchedule(
                "times must be strictly increasing".into(),
            ));
        }
        Ok(Self { times, horizon })
    }

    /// Sorts `times` first; still rejects duplicates.
    pub fn from_unsorted(mut times: Vec<usize>, horizon: usize) -> Result<Self> {
        times.sort_unstable();
        Self::new(times, horizon)
    }

    /// The schedule with no measurements.
    pub fn empty(horizon: usize) -> Result<Self> {
        Self::new(Vec::new(), horizon)
    }

    /// Every step measured.
    pub fn full(horizon: usize) -> Result<Self> {
        Self::new((0..horizon).collect(), horizon)
    }

    pub fn times(&self) -> &[usize] {
        &self.times
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// The budget `N`.
    pub fn budget(&self) -> usize {
        self.times.len()
    }

    pub fn contains(&self, t: usize) -> bool {
        self.times.binary_search(&t).is_ok()
    }

    /// `mask[t]` is true when `t` is a measurement time, for `t` in `0..T`.
    pub fn mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.horizon];
        for &t in &self.times {
            mask[t] = true;
        }
        mask
    }

    /// Same set with one more time.
    pub fn with_time(&self, t: usize) -> Result<Self> {
        let mut times = self.times.clone();
        match times.binary_search(&t) {
            Ok(_) => Err(Error::InvalidSchedule(format!("time {t} already present"))),
            Err(pos) => {
                times.insert(pos, t);
                Self::new(times, self.horizon)
            }
        }
    }

    pub fn to_doc(&self) -> ScheduleDoc {
        ScheduleDoc {
            horizon: self.horizon,
            times: self.times.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_doc())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ScheduleDoc = serde_json::from_str(text)?;
        doc.to_schedule()
    }
}

/// JSON form of a schedule: `{"T": 10, "times": [0, 2, 4]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleDoc {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub times: Vec<usize>,
}

impl ScheduleDoc {
    pub fn to_schedule(&self) -> Result<Schedule> {
        Schedule::new(self.times.clone(), self.horizon)
    }
}

/// End of the warm-up: the objective counts steps `t0+1 ..= T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WarmupConfig {
    pub t0: usize,
}

impl WarmupConfig {
    pub fn new(t0: usize, horizon: usize) -> Result<Self> {
        let w = Self { t0 };
        w.check(horizon)?;
        Ok(w)
    }

    pub fn check(&self, horizon: usize) -> Result<()> {
        if self.t0 >= horizon {
            return Err(Error::InvalidInput(format!(
                "warm-up end t0={} must be below T={horizon}",
                self.t0
            )));
        }
        Ok(())
    }
}

/// `N` evenly spread times over `[0, T-1]`: `floor(i·T/N)`.
pub fn regular_schedule(horizon: usize, budget: usize) -> Result<Schedule> {
    if budget == 0 || budget > horizon {
        return Err(Error::InvalidBudget { budget, horizon });
    }
    let times = (0..budget)
        .map(|i| ((i as u128 * horizon as u128) / budget as u128) as usize)
        .collect();
    Schedule::new(times, horizon)
}
