//! Schedule objective in `O(N · n³)` instead of `O(T · n³)`.
//!
//! Between two measurements the prior covariance evolves without data, so
//! `j` steps after an anchor covariance `X` it equals `Aʲ X Aʲᵀ + Σⱼ` with
//! `Σⱼ = Σ_{i<j} Aⁱ G Q Gᵀ Aⁱᵀ`. The trace terms of a whole gap are then
//! linear in `X`:
//!
//! ```text
//! Σ_{j=lo}^{hi} Tr[C (Aʲ X Aʲᵀ + Σⱼ) Cᵀ] = ⟨X, W_hi − W_{lo−1}⟩ + c_hi − c_{lo−1}
//! W_k = Σ_{j≤k} Aʲᵀ Cᵀ C Aʲ,   c_k = Σ_{j≤k} Tr[C Σⱼ Cᵀ]
//! ```
//!
//! The tables are built once per (model, horizon) and shared read-only by
//! every fitness evaluation. Matrices are stored flat, column-major.

use crate::error::{Error, Result};
use crate::model::{StateSpaceModel, WarmupConfig};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone)]
pub struct ScheduleEvaluator<T: Real> {
    n: usize,
    m: usize,
    horizon: usize,
    t0: usize,
    x0_cov: Vec<T>,
    c: Vec<T>,
    r: Vec<T>,
    /// `Aʲ`, `j = 0..=T`
    powers: Vec<T>,
    /// `Σⱼ`, `j = 0..=T`
    noise: Vec<T>,
    /// cumulative `W_k`
    weights: Vec<T>,
    /// cumulative `c_k`
    offsets: Vec<T>,
}

/// Per-worker buffers so evaluation never allocates.
#[derive(Debug, Clone)]
pub struct Scratch<T: Real> {
    x: Vec<T>,
    tmp: Vec<T>,
    p: Vec<T>,
    pct: Vec<T>,
    s: Vec<T>,
    y: Vec<T>,
}

fn matmul<T: Real>(a: &[T], b: &[T], out: &mut [T], rows: usize, inner: usize, cols: usize) {
    for c in 0..cols {
        for r in 0..rows {
            let mut acc = T::zero();
            for k in 0..inner {
                acc += a[r + k * rows] * b[k + c * inner];
            }
            out[r + c * rows] = acc;
        }
    }
}

impl<T: Real> ScheduleEvaluator<T> {
    pub fn new(model: &StateSpaceModel<T>, horizon: usize, warmup: WarmupConfig) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidInput("horizon T must be positive".into()));
        }
        warmup.check(horizon)?;
        let n = model.state_dim();
        let m = model.output_dim();
        let nn = n * n;
        let a: Vec<T> = model.a().as_slice().to_vec();
        let gqg: Vec<T> = model.process_cov().as_slice().to_vec();
        let c: Vec<T> = model.c().as_slice().to_vec();
        let ctc = (model.c().transpose() * model.c()).as_slice().to_vec();

        let steps = horizon + 1;
        let mut powers = vec![T::zero(); steps * nn];
        let mut noise = vec![T::zero(); steps * nn];
        let mut weights = vec![T::zero(); steps * nn];
        let mut offsets = vec![T::zero(); steps];
        for i in 0..n {
            powers[i + i * n] = T::one();
        }
        let mut tmp = vec![T::zero(); nn];
        let mut tmp2 = vec![T::zero(); nn];
        let mut at = vec![T::zero(); nn];
        let half: T = lit(0.5);
        for j in 0..steps {
            let (head, tail) = powers.split_at_mut(j * nn);
            let pj = &mut tail[..nn];
            if j > 0 {
                matmul(&a, &head[(j - 1) * nn..], pj, n, n, n);
                // Σⱼ = A Σⱼ₋₁ Aᵀ + GQGᵀ
                let prev = &noise[(j - 1) * nn..j * nn];
                matmul(&a, prev, &mut tmp, n, n, n);
                transpose_into(&a, &mut at, n);
                matmul(&tmp, &at, &mut tmp2, n, n, n);
                for idx in 0..nn {
                    tmp2[idx] += gqg[idx];
                }
                symmetrize_in_place(&mut tmp2, n, half);
                noise[j * nn..(j + 1) * nn].copy_from_slice(&tmp2);
            }
            let pj = &powers[j * nn..(j + 1) * nn];
            // Aʲᵀ CᵀC Aʲ
            transpose_into(pj, &mut at, n);
            matmul(&at, &ctc, &mut tmp, n, n, n);
            matmul(&tmp, pj, &mut tmp2, n, n, n);
            symmetrize_in_place(&mut tmp2, n, half);
            let sig = &noise[j * nn..(j + 1) * nn];
            let mut tr = T::zero();
            for idx in 0..nn {
                tr += ctc[idx] * sig[idx];
            }
            for idx in 0..nn {
                let prev = if j > 0 { weights[(j - 1) * nn + idx] } else { T::zero() };
                weights[j * nn + idx] = prev + tmp2[idx];
            }
            offsets[j] = if j > 0 { offsets[j - 1] } else { T::zero() } + tr;
        }

        Ok(Self {
            n,
            m,
            horizon,
            t0: warmup.t0,
            x0_cov: model.x0_cov().as_slice().to_vec(),
            c,
            r: model.r().as_slice().to_vec(),
            powers,
            noise,
            weights,
            offsets,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn scratch(&self) -> Scratch<T> {
        let (n, m) = (self.n, self.m);
        Scratch {
            x: vec![T::zero(); n * n],
            tmp: vec![T::zero(); n * n],
            p: vec![T::zero(); n * n],
            pct: vec![T::zero(); n * m],
            s: vec![T::zero(); m * m],
            y: vec![T::zero(); m * n],
        }
    }

    /// Trace sum for priors `anchor + j`, `j ∈ [lo, hi]`, clipped to the
    /// counted window `t ≥ t0 + 1`.
    fn gap_sum(&self, x: &[T], anchor: usize, lo: usize, hi: usize) -> T {
        let lo = lo.max((self.t0 + 1).saturating_sub(anchor));
        if lo > hi {
            return T::zero();
        }
        let nn = self.n * self.n;
        let w_hi = &self.weights[hi * nn..(hi + 1) * nn];
        let mut acc = self.offsets[hi];
        for idx in 0..nn {
            acc += x[idx] * w_hi[idx];
        }
        if lo > 0 {
            let w_lo = &self.weights[(lo - 1) * nn..lo * nn];
            acc -= self.offsets[lo - 1];
            for idx in 0..nn {
                acc -= x[idx] * w_lo[idx];
            }
        }
        acc
    }

    /// `out = Aʲ X Aʲᵀ + Σⱼ`.
    fn propagate(&self, j: usize, x: &[T], tmp: &mut [T], out: &mut [T]) {
        let n = self.n;
        let nn = n * n;
        let pj = &self.powers[j * nn..(j + 1) * nn];
        matmul(pj, x, tmp, n, n, n);
        let sig = &self.noise[j * nn..(j + 1) * nn];
        for c in 0..n {
            for r in 0..n {
                let mut acc = sig[r + c * n];
                for k in 0..n {
                    acc += tmp[r + k * n] * pj[c + k * n];
                }
                out[r + c * n] = acc;
            }
        }
    }

    /// Covariance-form measurement update of `p` into `x`.
    fn update(&self, s: &mut Scratch<T>) {
        let (n, m) = (self.n, self.m);
        let c = &self.c;
        // pct = P Cᵀ   (n×m)
        for a in 0..m {
            for i in 0..n {
                let mut acc = T::zero();
                for k in 0..n {
                    acc += s.p[i + k * n] * c[a + k * m];
                }
                s.pct[i + a * n] = acc;
            }
        }
        // S = C pct + R   (m×m), then in-place lower Cholesky
        for b in 0..m {
            for a in 0..m {
                let mut acc = self.r[a + b * m];
                for k in 0..n {
                    acc += c[a + k * m] * s.pct[k + b * n];
                }
                s.s[a + b * m] = acc;
            }
        }
        for j in 0..m {
            let mut d = s.s[j + j * m];
            for k in 0..j {
                d -= s.s[j + k * m] * s.s[j + k * m];
            }
            let d = d.max(T::default_epsilon() * T::default_epsilon()).sqrt();
            s.s[j + j * m] = d;
            for i in j + 1..m {
                let mut v = s.s[i + j * m];
                for k in 0..j {
                    v -= s.s[i + k * m] * s.s[j + k * m];
                }
                s.s[i + j * m] = v / d;
            }
        }
        // Y = S⁻¹ pctᵀ   (m×n), column by column
        for i in 0..n {
            for a in 0..m {
                let mut v = s.pct[i + a * n];
                for k in 0..a {
                    v -= s.s[a + k * m] * s.y[k + i * m];
                }
                s.y[a + i * m] = v / s.s[a + a * m];
            }
            for a in (0..m).rev() {
                let mut v = s.y[a + i * m];
                for k in a + 1..m {
                    v -= s.s[k + a * m] * s.y[k + i * m];
                }
                s.y[a + i * m] = v / s.s[a + a * m];
            }
        }
        // X = P − pct Y, symmetrized
        for col in 0..n {
            for row in 0..n {
                let mut acc = s.p[row + col * n];
                for a in 0..m {
                    acc -= s.pct[row + a * n] * s.y[a + col * m];
                }
                s.x[row + col * n] = acc;
            }
        }
        symmetrize_in_place(&mut s.x, n, lit(0.5));
    }

    /// Objective of a strictly increasing list of measurement times.
    pub fn evaluate_with(&self, scratch: &mut Scratch<T>, times: &[usize]) -> T {
        let n = self.n;
        let nn = n * n;
        scratch.x[..nn].copy_from_slice(&self.x0_cov);
        let mut anchor = 0usize;
        let mut first_j = 0usize;
        let mut total = T::zero();
        for &t in times {
            debug_assert!(t >= anchor && t < self.horizon);
            let gap = t - anchor;
            total += self.gap_sum(&scratch.x, anchor, first_j, gap);
            let Scratch { x, tmp, p, .. } = scratch;
            self.propagate(gap, x, tmp, p);
            self.update(scratch);
            anchor = t;
            first_j = 1;
        }
        total + self.gap_sum(&scratch.x, anchor, first_j, self.horizon - anchor)
    }

    pub fn evaluate(&self, times: &[usize]) -> T {
        self.evaluate_with(&mut self.scratch(), times)
    }
}

fn transpose_into<T: Real>(a: &[T], out: &mut [T], n: usize) {
    for c in 0..n {
        for r in 0..n {
            out[c + r * n] = a[r + c * n];
        }
    }
}

fn symmetrize_in_place<T: Real>(a: &mut [T], n: usize, half: T) {
    for c in 0..n {
        for r in c + 1..n {
            let v = (a[r + c * n] + a[c + r * n]) * half;
            a[r + c * n] = v;
            a[c + r * n] = v;
        }
    }
}
