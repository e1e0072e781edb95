//! Genetic search over antenna layouts with a penalty for spacing violations.
//!
//! Each individual is a full layout; antennas are the genes. The fitness is
//! the worst user's rate bound minus `omega` per antenna pair closer than
//! `D_min`. The region constraint is never violated: every operator clamps
//! coordinates back into the box.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::channel::AntennaLayout;
use crate::error::{Error, Result};
use crate::rate::{min_rate, random_layout};
use crate::scenario::{derive_seed, seeded_rng, Scenario};

/// Operator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaSettings {
    pub tournament: usize,
    pub crossover_prob: f64,
    /// Per-coordinate mutation probability.
    pub mutation_prob: f64,
    /// Mutation standard deviation as a fraction of the wavelength.
    pub mutation_std_over_lambda: f64,
    pub elites: usize,
    /// Fraction of the initial population seeded with the lambda/2 UPA.
    pub upa_fraction: f64,
    /// Stop when the best fitness gained less than `stall_tol` over
    /// `stall_window` generations.
    pub stall_window: usize,
    pub stall_tol: f64,
}

impl Default for GaSettings {
    fn default() -> Self {
        Self {
            tournament: 3,
            crossover_prob: 0.9,
            mutation_prob: 0.1,
            mutation_std_over_lambda: 0.1,
            elites: 1,
            upa_fraction: 0.1,
            stall_window: 20,
            stall_tol: 1e-3,
        }
    }
}

/// Antenna pairs `(m, m')`, `m < m'`, strictly closer than `d_min`.
pub fn violation_set(layout: &AntennaLayout, d_min: f64) -> Vec<(usize, usize)> {
    let m = layout.len();
    let mut out = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            if layout.distance(a, b) < d_min {
                out.push((a, b));
            }
        }
    }
    out
}

pub fn violation_count(layout: &AntennaLayout, d_min: f64) -> usize {
    violation_set(layout, d_min).len()
}

/// `min_k R_k - omega |V|`.
pub fn fitness(layout: &AntennaLayout, scenario: &Scenario) -> f64 {
    let violations = violation_count(layout, scenario.d_min);
    min_rate(layout, scenario) - scenario.hyper.omega * violations as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub layout: AntennaLayout,
    pub fitness: Option<f64>,
    pub violations: usize,
}

impl Individual {
    pub fn new(layout: AntennaLayout) -> Self {
        Self {
            layout,
            fitness: None,
            violations: 0,
        }
    }

    fn evaluate(&mut self, scenario: &Scenario) {
        if self.fitness.is_none() {
            self.violations = violation_count(&self.layout, scenario.d_min);
            self.fitness = Some(min_rate(&self.layout, scenario) - scenario.hyper.omega * self.violations as f64);
        }
    }

    fn score(&self) -> f64 {
        self.fitness.unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone)]
pub struct GaState {
    pub population: Vec<Individual>,
    pub generation: usize,
    pub best: Individual,
    pub rng: ChaCha8Rng,
    /// Best fitness after each generation, starting with the initial one.
    pub history: Vec<f64>,
    pub settings: GaSettings,
}

fn evaluate_all(population: &mut [Individual], scenario: &Scenario) {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        population.par_iter_mut().for_each(|ind| ind.evaluate(scenario));
    }
    #[cfg(not(feature = "parallel"))]
    population.iter_mut().for_each(|ind| ind.evaluate(scenario));
}

fn best_of(population: &[Individual]) -> &Individual {
    // first maximum wins ties, keeping the choice deterministic
    population
        .iter()
        .fold(&population[0], |best, ind| if ind.score() > best.score() { ind } else { best })
}

/// Random initial population with a share of lambda/2-UPA seeds, evaluated.
pub fn init_population(scenario: &Scenario, seed: u64, settings: GaSettings) -> Result<GaState> {
    let upa = scenario
        .upa()
        .map_err(|e| Error::LayoutDoesNotFit(format!("region too small for UPA seed: {e}")))?;
    let n = scenario.hyper.ga_pop;
    let n_upa = ((n as f64 * settings.upa_fraction).round() as usize).clamp(1, n);
    let mut rng = seeded_rng(seed);
    let mut population: Vec<Individual> = (0..n)
        .map(|i| {
            if i < n_upa {
                Individual::new(upa.clone())
            } else {
                Individual::new(random_layout(scenario.m_antennas, scenario.region_size, &mut rng))
            }
        })
        .collect();
    evaluate_all(&mut population, scenario);
    let best = best_of(&population).clone();
    Ok(GaState {
        history: vec![best.score()],
        population,
        generation: 0,
        best,
        rng,
        settings,
    })
}

fn tournament<'a>(population: &'a [Individual], size: usize, rng: &mut ChaCha8Rng) -> &'a Individual {
    let mut winner = &population[rng.gen_range(0..population.len())];
    for _ in 1..size {
        let challenger = &population[rng.gen_range(0..population.len())];
        if challenger.score() > winner.score() {
            winner = challenger;
        }
    }
    winner
}

/// Each antenna column comes from either parent with probability 1/2.
fn uniform_crossover(a: &AntennaLayout, b: &AntennaLayout, rng: &mut ChaCha8Rng) -> (AntennaLayout, AntennaLayout) {
    let (mut c1, mut c2) = (a.clone(), b.clone());
    for m in 0..a.len() {
        if rng.gen_bool(0.5) {
            c1.set_point(m, b.point(m));
            c2.set_point(m, a.point(m));
        }
    }
    (c1, c2)
}

fn mutate(layout: &mut AntennaLayout, prob: f64, noise: &Normal<f64>, half: f64, rng: &mut ChaCha8Rng) {
    for v in layout.as_matrix_mut().iter_mut() {
        if rng.gen_bool(prob) {
            *v = (*v + noise.sample(rng)).clamp(-half, half);
        }
    }
}

/// Produces the next generation: elites copied unchanged, the rest bred by
/// tournament selection, uniform antenna crossover and Gaussian mutation.
pub fn evolve(mut state: GaState, scenario: &Scenario) -> GaState {
    let settings = state.settings;
    let n = state.population.len();
    let half = scenario.half_region();
    let noise = Normal::new(0.0, settings.mutation_std_over_lambda * scenario.wavelength)
        .expect("positive mutation std");

    let mut ranked: Vec<&Individual> = state.population.iter().collect();
    ranked.sort_by(|a, b| b.score().total_cmp(&a.score()));
    let mut next: Vec<Individual> = ranked.iter().take(settings.elites.min(n)).map(|ind| (*ind).clone()).collect();

    let rng = &mut state.rng;
    while next.len() < n {
        let pa = tournament(&state.population, settings.tournament, rng);
        let pb = tournament(&state.population, settings.tournament, rng);
        let (mut c1, mut c2) = if rng.gen_bool(settings.crossover_prob) {
            uniform_crossover(&pa.layout, &pb.layout, rng)
        } else {
            (pa.layout.clone(), pb.layout.clone())
        };
        mutate(&mut c1, settings.mutation_prob, &noise, half, rng);
        mutate(&mut c2, settings.mutation_prob, &noise, half, rng);
        next.push(Individual::new(c1));
        if next.len() < n {
            next.push(Individual::new(c2));
        }
    }
    evaluate_all(&mut next, scenario);

    let gen_best = best_of(&next);
    if gen_best.score() > state.best.score() {
        state.best = gen_best.clone();
    }
    state.population = next;
    state.generation += 1;
    state.history.push(state.best.score());
    state
}

#[derive(Debug, Clone)]
pub struct GaOutcome {
    pub layout: AntennaLayout,
    pub min_rate: f64,
    pub history: Vec<f64>,
    pub generations: usize,
}

/// Runs the GA until the best fitness stalls or `ga_max_iter` generations.
pub fn run_ga(scenario: &Scenario) -> Result<GaOutcome> {
    run_ga_with(scenario, derive_seed(scenario.hyper.seed, 0x4741), GaSettings::default())
}

pub fn run_ga_with(scenario: &Scenario, seed: u64, settings: GaSettings) -> Result<GaOutcome> {
    let mut state = init_population(scenario, seed, settings)?;
    while state.generation < scenario.hyper.ga_max_iter {
        state = evolve(state, scenario);
        let h = &state.history;
        if h.len() > settings.stall_window && h[h.len() - 1] - h[h.len() - 1 - settings.stall_window] < settings.stall_tol {
            break;
        }
    }
    if state.best.violations > 0 || !state.best.layout.in_box(scenario.half_region()) {
        return Err(Error::NoFeasibleIndividual);
    }
    Ok(GaOutcome {
        min_rate: min_rate(&state.best.layout, scenario),
        layout: state.best.layout,
        history: state.history,
        generations: state.generation,
    })
}
