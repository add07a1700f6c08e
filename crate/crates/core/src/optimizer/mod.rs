//! Measurement-schedule selection under a budget: pick `N` of the `T` steps
//! to minimize the summed predicted-position variance.
//!
//! [`genetic_search`] is the practical solver; [`exhaustive_search`] is exact
//! and only usable for small `C(T, N)`.

mod evaluator;

use std::collections::HashMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ikp::objective;
use crate::model::{regular_schedule, Schedule, StateSpaceModel, WarmupConfig};
use crate::scalar::{to_f64, Real};

pub use evaluator::{Scratch, ScheduleEvaluator};

/// Default cap on `C(T, N)` for [`exhaustive_search`].
pub const EXHAUSTIVE_CAP: u128 = 2_000_000;

const TOURNAMENT_SIZE: usize = 3;
/// Fitness cache entries kept before the cache is flushed.
const CACHE_LIMIT: usize = 250_000;

/// Genetic algorithm hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-gene probability; `None` means `1/N`.
    pub mutation_rate: Option<f64>,
    pub elitism_count: usize,
    pub rng_seed: u64,
    /// Seed the population with the regular schedule (and, with a warm-up,
    /// the regular schedule of the scored window).
    pub seed_with_regular: bool,
    /// Stop early after this many generations without improvement.
    pub stall_generations: Option<usize>,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 200,
            generations: 500,
            crossover_rate: 0.9,
            mutation_rate: None,
            elitism_count: 2,
            rng_seed: 0,
            seed_with_regular: true,
            stall_generations: None,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("GA config: {msg}")));
        if self.population_size == 0 {
            return bad("population_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return bad("crossover_rate must lie in [0, 1]");
        }
        if let Some(rate) = self.mutation_rate {
            if !(0.0..=1.0).contains(&rate) {
                return bad("mutation_rate must lie in [0, 1]");
            }
        }
        if self.elitism_count >= self.population_size {
            return bad("elitism_count must be below population_size");
        }
        Ok(())
    }

    fn mutation_rate_for(&self, budget: usize) -> f64 {
        self.mutation_rate.unwrap_or(1.0 / budget as f64)
    }
}

/// Best schedule found and its objective.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult<T: Real> {
    pub best_schedule: Schedule,
    /// Recomputed with [`objective`] on return.
    pub best_objective: T,
    /// Best-so-far objective after each generation (index 0: initial population).
    pub history: Vec<T>,
    pub evaluations: usize,
}

impl<T: Real> OptimizationResult<T> {
    pub fn to_doc(&self) -> OptimizationDoc {
        OptimizationDoc {
            horizon: self.best_schedule.horizon(),
            times: self.best_schedule.times().to_vec(),
            objective: to_f64(self.best_objective),
            history: self.history.iter().map(|&v| to_f64(v)).collect(),
            evaluations: self.evaluations,
        }
    }
}

/// JSON form of an optimization result. `T` and `times` match the schedule
/// document so the file doubles as a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationDoc {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub times: Vec<usize>,
    pub objective: f64,
    pub history: Vec<f64>,
    pub evaluations: usize,
}

fn check_budget(horizon: usize, budget: usize) -> Result<()> {
    if budget == 0 || budget > horizon {
        return Err(Error::InvalidBudget { budget, horizon });
    }
    Ok(())
}

/// Makes a candidate time vector duplicate-free.
///
/// The first occurrence of each time is kept; every later repeat is replaced
/// by a uniform draw from the times not yet present.
pub fn repair_duplicates<R: Rng + ?Sized>(
    candidate: &[usize],
    horizon: usize,
    rng: &mut R,
) -> Result<Schedule> {
    let budget = candidate.len();
    if budget > horizon {
        return Err(Error::Infeasible(format!(
            "cannot place {budget} distinct times in a horizon of {horizon}"
        )));
    }
    if let Some(&t) = candidate.iter().find(|&&t| t >= horizon) {
        return Err(Error::InvalidInput(format!(
            "time {t} outside [0, {}]",
            horizon.saturating_sub(1)
        )));
    }
    let mut present = vec![false; horizon];
    let mut out = Vec::with_capacity(budget);
    let mut repeats = 0usize;
    for &t in candidate {
        if present[t] {
            repeats += 1;
        } else {
            present[t] = true;
            out.push(t);
        }
    }
    let mut used = out.len();
    for _ in 0..repeats {
        let free = horizon - used;
        let t = if free * 2 >= horizon {
            loop {
                let t = rng.random_range(0..horizon);
                if !present[t] {
                    break t;
                }
            }
        } else {
            let k = rng.random_range(0..free);
            present
                .iter()
                .enumerate()
                .filter(|(_, &p)| !p)
                .nth(k)
                .map(|(t, _)| t)
                .expect("free slot exists")
        };
        present[t] = true;
        out.push(t);
        used += 1;
    }
    Schedule::from_unsorted(out, horizon)
}

/// `C(T, N)`, saturating.
pub fn binomial(horizon: usize, budget: usize) -> u128 {
    if budget > horizon {
        return 0;
    }
    let k = budget.min(horizon - budget) as u128;
    let n = horizon as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Exact minimizer by enumeration, with the default cap.
pub fn exhaustive_search<T: Real>(
    model: &StateSpaceModel<T>,
    horizon: usize,
    budget: usize,
    warmup: WarmupConfig,
) -> Result<OptimizationResult<T>> {
    exhaustive_search_capped(model, horizon, budget, warmup, EXHAUSTIVE_CAP)
}

/// Enumerates all `C(T, N)` schedules in lexicographic order; the first
/// minimum wins ties.
pub fn exhaustive_search_capped<T: Real>(
    model: &StateSpaceModel<T>,
    horizon: usize,
    budget: usize,
    warmup: WarmupConfig,
    cap: u128,
) -> Result<OptimizationResult<T>> {
    check_budget(horizon, budget)?;
    let count = binomial(horizon, budget);
    if count > cap {
        return Err(Error::SearchSpaceTooLarge { count, cap });
    }
    let evaluator = ScheduleEvaluator::new(model, horizon, warmup)?;
    let mut scratch = evaluator.scratch();
    let mut current: Vec<usize> = (0..budget).collect();
    let mut best = current.clone();
    let mut best_value = evaluator.evaluate_with(&mut scratch, &current);
    let mut evaluations = 1usize;
    while next_combination(&mut current, horizon) {
        let value = evaluator.evaluate_with(&mut scratch, &current);
        evaluations += 1;
        if value < best_value {
            best_value = value;
            best.clone_from(&current);
        }
    }
    let best_schedule = Schedule::new(best, horizon)?;
    let best_objective = objective(model, &best_schedule, warmup)?;
    Ok(OptimizationResult {
        best_schedule,
        best_objective,
        history: vec![best_value],
        evaluations,
    })
}

/// Advances a sorted combination of `0..n` to its lexicographic successor.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Genetic search for a low-objective schedule.
///
/// Tournament selection, uniform crossover on the sorted time vectors,
/// per-gene uniform-replacement mutation, duplicate repair after every
/// variation, and elitism. Fitness values are memoized within a run and
/// evaluated in parallel; all random draws happen in the sequential loop, so
/// the result depends only on the inputs and `rng_seed`.
///
/// With `generations == 0` nothing is evolved: the result is the regular
/// schedule when `seed_with_regular` is set, otherwise the best member of the
/// random initial population.
pub fn genetic_search<T: Real>(
    model: &StateSpaceModel<T>,
    horizon: usize,
    budget: usize,
    warmup: WarmupConfig,
    config: &GaConfig,
) -> Result<OptimizationResult<T>> {
    check_budget(horizon, budget)?;
    config.validate()?;
    let evaluator = ScheduleEvaluator::new(model, horizon, warmup)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mutation_rate = config.mutation_rate_for(budget);

    let mut population: Vec<Vec<usize>> = Vec::with_capacity(config.population_size);
    if config.seed_with_regular {
        population.push(regular_schedule(horizon, budget)?.times().to_vec());
        // Steps up to t0 are not scored, so also start from the regular
        // schedule of the scored window.
        let scored = horizon - warmup.t0;
        if warmup.t0 > 0 && budget <= scored && population.len() < config.population_size {
            let shifted = regular_schedule(scored, budget)?.times().iter().map(|t| t + warmup.t0).collect();
            population.push(shifted);
        }
    }
    while population.len() < config.population_size {
        let mut times = index::sample(&mut rng, horizon, budget).into_vec();
        times.sort_unstable();
        population.push(times);
    }

    let mut cache: HashMap<Vec<usize>, T> = HashMap::new();
    let mut evaluations = 0usize;
    let mut fitness = evaluate_population(&evaluator, &population, &mut cache, &mut evaluations);

    let (mut best, mut best_value) = if config.seed_with_regular && config.generations == 0 {
        (population[0].clone(), fitness[0])
    } else {
        let i = argmin(&fitness);
        (population[i].clone(), fitness[i])
    };
    let mut history = vec![best_value];
    let mut stall = 0usize;

    for _ in 0..config.generations {
        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&a, &b| fitness[a].partial_cmp(&fitness[b]).unwrap_or(std::cmp::Ordering::Equal));

        let mut next: Vec<Vec<usize>> = Vec::with_capacity(config.population_size);
        next.extend(order.iter().take(config.elitism_count).map(|&i| population[i].clone()));
        while next.len() < config.population_size {
            let first = tournament(&fitness, &mut rng);
            let second = tournament(&fitness, &mut rng);
            let mut child = if rng.random_bool(config.crossover_rate) {
                population[first]
                    .iter()
                    .zip(&population[second])
                    .map(|(&a, &b)| if rng.random_bool(0.5) { a } else { b })
                    .collect::<Vec<_>>()
            } else {
                population[first].clone()
            };
            for gene in child.iter_mut() {
                if rng.random_bool(mutation_rate) {
                    *gene = rng.random_range(0..horizon);
                }
            }
            next.push(repair_duplicates(&child, horizon, &mut rng)?.times().to_vec());
        }
        population = next;
        if cache.len() > CACHE_LIMIT {
            cache.clear();
        }
        fitness = evaluate_population(&evaluator, &population, &mut cache, &mut evaluations);

        let i = argmin(&fitness);
        if fitness[i] < best_value {
            best_value = fitness[i];
            best.clone_from(&population[i]);
            stall = 0;
        } else {
            stall += 1;
        }
        history.push(best_value);
        if config.stall_generations.is_some_and(|limit| stall >= limit) {
            break;
        }
    }

    let best_schedule = Schedule::new(best, horizon)?;
    let best_objective = objective(model, &best_schedule, warmup)?;
    Ok(OptimizationResult {
        best_schedule,
        best_objective,
        history,
        evaluations,
    })
}

fn argmin<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

fn tournament<T: Real, R: Rng>(fitness: &[T], rng: &mut R) -> usize {
    let mut winner = rng.random_range(0..fitness.len());
    for _ in 1..TOURNAMENT_SIZE {
        let c = rng.random_range(0..fitness.len());
        if fitness[c] < fitness[winner] {
            winner = c;
        }
    }
    winner
}

fn evaluate_population<T: Real>(
    evaluator: &ScheduleEvaluator<T>,
    population: &[Vec<usize>],
    cache: &mut HashMap<Vec<usize>, T>,
    evaluations: &mut usize,
) -> Vec<T> {
    let mut missing: Vec<&Vec<usize>> = Vec::new();
    for ind in population {
        if !cache.contains_key(ind) && !missing.contains(&ind) {
            missing.push(ind);
        }
    }
    let values: Vec<T> = missing
        .par_iter()
        .map_init(|| evaluator.scratch(), |scratch, ind| evaluator.evaluate_with(scratch, ind))
        .collect();
    *evaluations += values.len();
    for (ind, v) in missing.into_iter().zip(values) {
        cache.insert(ind.clone(), v);
    }
    population.iter().map(|ind| cache[ind]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use nalgebra::{DMatrix, DVector};

    fn random_walk() -> StateSpaceModel<f64> {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        StateSpaceModel::new(ModelParams {
            a: s(1.0),
            b: DVector::zeros(1),
            g: s(1.0),
            q: s(1.0),
            c: s(1.0),
            d: DVector::zeros(1),
            r: s(1.0),
            x0_mean: DVector::zeros(1),
            x0_cov: s(0.0),
        })
        .unwrap()
    }

    #[test]
    fn repair_keeps_unique_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(repair_duplicates(&[0, 1, 2], 5, &mut rng).unwrap().times(), &[0, 1, 2]);
        assert_eq!(repair_duplicates(&[2, 0, 1], 5, &mut rng).unwrap().times(), &[0, 1, 2]);
    }

    #[test]
    fn repair_forced_completion() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(repair_duplicates(&[2, 2, 2, 2], 4, &mut rng).unwrap().times(), &[0, 1, 2, 3]);
    }

    #[test]
    fn repair_outcomes_of_one_duplicate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let s = repair_duplicates(&[1, 3, 3], 5, &mut rng).unwrap();
            let t = s.times();
            assert!(t.contains(&1) && t.contains(&3));
            assert!(matches!(t, [0, 1, 3] | [1, 2, 3] | [1, 3, 4]));
        }
    }

    #[test]
    fn repair_rejects_infeasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(matches!(
            repair_duplicates(&[0, 0, 0], 2, &mut rng),
            Err(Error::Infeasible(_))
        ));
        assert!(repair_duplicates(&[7], 5, &mut rng).is_err());
    }

    #[test]
    fn combinations_enumerate_binomial_count() {
        let mut c = vec![0, 1, 2];
        let mut count = 1;
        while next_combination(&mut c, 8) {
            count += 1;
        }
        assert_eq!(count, 56);
        assert_eq!(binomial(8, 3), 56);
        assert!(binomial(6000, 20) > EXHAUSTIVE_CAP);
    }

    #[test]
    fn exhaustive_single_candidate() {
        let r = exhaustive_search(&random_walk(), 3, 3, WarmupConfig { t0: 0 }).unwrap();
        assert_eq!(r.best_schedule.times(), &[0, 1, 2]);
        assert_eq!(r.evaluations, 1);
    }

    #[test]
    fn exhaustive_refuses_large_spaces() {
        let err = exhaustive_search(&random_walk(), 6000, 20, WarmupConfig { t0: 0 }).unwrap_err();
        assert!(matches!(err, Error::SearchSpaceTooLarge { .. }));
    }

    #[test]
    fn zero_generations_returns_regular_schedule() {
        let model = random_walk();
        let cfg = GaConfig {
            generations: 0,
            ..GaConfig::default()
        };
        let warmup = WarmupConfig { t0: 0 };
        let r = genetic_search(&model, 30, 4, warmup, &cfg).unwrap();
        let regular = regular_schedule(30, 4).unwrap();
        assert_eq!(r.best_schedule, regular);
        assert_eq!(r.best_objective, objective(&model, &regular, warmup).unwrap());
    }

    #[test]
    fn ga_is_reproducible_and_monotone() {
        let model = random_walk();
        let cfg = GaConfig {
            population_size: 30,
            generations: 40,
            rng_seed: 9,
            ..GaConfig::default()
        };
        let warmup = WarmupConfig { t0: 2 };
        let a = genetic_search(&model, 40, 5, warmup, &cfg).unwrap();
        let b = genetic_search(&model, 40, 5, warmup, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.history.windows(2).all(|w| w[1] <= w[0]));
        let regular = objective(&model, &regular_schedule(40, 5).unwrap(), warmup).unwrap();
        assert!(a.best_objective <= regular);
    }

    #[test]
    fn config_validation() {
        let bad = GaConfig {
            elitism_count: 200,
            ..GaConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = GaConfig {
            crossover_rate: 1.5,
            ..GaConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
