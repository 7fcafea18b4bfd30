//! Steady-state genetic algorithm over four-locus recipe genomes.
//!
//! Each generation keeps `carry_overs` individuals and births
//! `population_size - carry_overs` children. A child is always a single-point
//! crossover of two distinct fitness-proportionally selected parents, followed
//! by per-locus Gaussian mutation. Death is drawn with weight inversely
//! proportional to fitness.

use std::collections::BTreeMap;
use std::error::Error as StdError;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formulation::{Formulation, FormulationError, Genome, N_OILS};
use crate::rng::{derive_seed, rng_from_seed, DropRng};

/// Added to fitness before exponentiation so zero-fitness individuals have a
/// finite weight in both selection and culling.
pub const FITNESS_EPSILON: f64 = 1e-9;

/// Droplets injected per experiment.
pub const DROPLETS_PER_EXPERIMENT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenerationOrder {
    /// Cull to `carry_overs`, then birth children up to `population_size`.
    #[default]
    CullThenBirth,
    /// Birth and evaluate children from the full population, then cull back
    /// to `population_size`.
    BirthThenCull,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub generations: usize,
    pub genome_length: usize,
    pub population_size: usize,
    pub carry_overs: usize,
    pub per_locus_mutation_rate: f64,
    pub mutation_sd: f64,
    pub selective_pressure: f64,
    pub replicates_per_recipe: usize,
    pub runs: usize,
    pub rng_seed: u64,
    pub order: GenerationOrder,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            generations: 21,
            genome_length: N_OILS,
            population_size: 25,
            carry_overs: 15,
            per_locus_mutation_rate: 0.3,
            mutation_sd: 0.1,
            selective_pressure: 1.0,
            replicates_per_recipe: 3,
            runs: 3,
            rng_seed: 0,
            order: GenerationOrder::CullThenBirth,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), GaError> {
        let bad = |field: &'static str, reason: &str| {
            Err(GaError::InvalidConfig {
                field,
                reason: reason.to_string(),
            })
        };
        if self.genome_length != N_OILS {
            return bad("genome_length", "must be 4");
        }
        for (field, v) in [
            ("generations", self.generations),
            ("population_size", self.population_size),
            ("carry_overs", self.carry_overs),
            ("replicates_per_recipe", self.replicates_per_recipe),
            ("runs", self.runs),
        ] {
            if v < 1 {
                return bad(field, "must be at least 1");
            }
        }
        if self.carry_overs >= self.population_size {
            return bad("carry_overs", "must be smaller than population_size");
        }
        if self.carry_overs < 2 && self.order == GenerationOrder::CullThenBirth && self.generations > 1 {
            return bad("carry_overs", "at least two survivors are needed to pick distinct parents");
        }
        if !(0.0..=1.0).contains(&self.per_locus_mutation_rate) {
            return bad("per_locus_mutation_rate", "must lie in [0, 1]");
        }
        if !(self.mutation_sd > 0.0 && self.mutation_sd.is_finite()) {
            return bad("mutation_sd", "must be positive");
        }
        if !(self.selective_pressure >= 0.0 && self.selective_pressure.is_finite()) {
            return bad("selective_pressure", "must be nonnegative");
        }
        Ok(())
    }

    /// Children born per generation after the first.
    pub fn births_per_generation(&self) -> usize {
        self.population_size - self.carry_overs
    }

    /// Distinct recipes evaluated by one run.
    pub fn recipes_per_run(&self) -> usize {
        self.population_size + (self.generations - 1) * self.births_per_generation()
    }

    pub fn bookkeeping(&self) -> Bookkeeping {
        let recipes_per_run = self.recipes_per_run();
        let total_recipes = recipes_per_run * self.runs;
        let experiments = total_recipes * self.replicates_per_recipe;
        Bookkeeping {
            recipes_per_run,
            total_recipes,
            experiments,
            droplets: experiments * DROPLETS_PER_EXPERIMENT,
        }
    }
}

/// Experiment counts implied by a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bookkeeping {
    pub recipes_per_run: usize,
    pub total_recipes: usize,
    pub experiments: usize,
    pub droplets: usize,
}

#[derive(Debug, Error)]
pub enum GaError {
    #[error("invalid GA config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("population has {0} individuals; at least two are needed to select parents")]
    PopulationTooSmall(usize),
    #[error("expected {expected} replicate scores, got {got}")]
    WrongReplicateCount { expected: usize, got: usize },
    #[error("replicate score {value} is negative or not finite")]
    InvalidScore { value: f64 },
    #[error("individual {id} has not been evaluated")]
    Unevaluated { id: u64 },
    #[error("individual {id} already has a fitness")]
    AlreadyEvaluated { id: u64 },
    #[error("evaluating recipe {recipe} (run {run}, generation {generation}, individual {id}) failed: {source}")]
    Evaluator {
        run: usize,
        generation: usize,
        id: u64,
        recipe: String,
        #[source]
        source: Box<dyn StdError + Send + Sync>,
    },
}

/// One recipe in the population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: u64,
    pub genome: Genome,
    pub parents: Option<(u64, u64)>,
    pub generation_born: usize,
    replicates: Vec<f64>,
    fitness: Option<f64>,
}

impl Individual {
    pub fn new(id: u64, genome: Genome, parents: Option<(u64, u64)>, generation_born: usize) -> Self {
        Individual {
            id,
            genome,
            parents,
            generation_born,
            replicates: Vec::new(),
            fitness: None,
        }
    }

    pub fn fitness(&self) -> Option<f64> {
        self.fitness
    }

    pub fn replicates(&self) -> &[f64] {
        &self.replicates
    }

    /// Records the evaluation result. A fitness, once set, cannot change.
    pub fn set_evaluation(&mut self, replicates: Vec<f64>, fitness: f64) -> Result<(), GaError> {
        if self.fitness.is_some() {
            return Err(GaError::AlreadyEvaluated { id: self.id });
        }
        if !(fitness >= 0.0 && fitness.is_finite()) {
            return Err(GaError::InvalidScore { value: fitness });
        }
        self.replicates = replicates;
        self.fitness = Some(fitness);
        Ok(())
    }

    fn fitness_or_err(&self) -> Result<f64, GaError> {
        self.fitness.ok_or(GaError::Unevaluated { id: self.id })
    }
}

/// Draws a population with loci uniform on `[0, 1]`.
pub fn init_population(cfg: &GaConfig, rng: &mut impl Rng, next_id: &mut u64) -> Vec<Individual> {
    (0..cfg.population_size)
        .map(|_| {
            let loci: [f64; N_OILS] = std::array::from_fn(|_| rng.random::<f64>());
            let id = *next_id;
            *next_id += 1;
            Individual::new(id, Genome::new(loci), None, 1)
        })
        .collect()
}

/// Adds N(0, sd²) noise to each locus with probability `rate`, then clamps.
pub fn mutate(g: &Genome, rate: f64, sd: f64, rng: &mut impl Rng) -> Genome {
    let noise = Normal::new(0.0, sd).expect("mutation sd is finite and positive");
    let mut out = *g;
    for locus in &mut out.loci {
        if rng.random_bool(rate) {
            *locus += noise.sample(rng);
        }
    }
    out.clamp();
    out
}

/// Single-point crossover at `cut`: loci `[0, cut)` from `p1`, the rest from `p2`.
pub fn crossover_at(p1: &Genome, p2: &Genome, cut: usize) -> Genome {
    let mut child = *p2;
    child.loci[..cut].copy_from_slice(&p1.loci[..cut]);
    child
}

/// Single-point crossover with the cut drawn uniformly from `1..=3`.
pub fn crossover(p1: &Genome, p2: &Genome, rng: &mut impl Rng) -> Genome {
    let cut = rng.random_range(1..N_OILS);
    crossover_at(p1, p2, cut)
}

fn selection_weight(fitness: f64, pressure: f64) -> f64 {
    (fitness + FITNESS_EPSILON).powf(pressure)
}

/// Picks two distinct parents, each with weight `(fitness + ε)^pressure`,
/// the second draw excluding the first. Returns their indices in `pop`.
pub fn select_parent_indices(
    pop: &[Individual],
    pressure: f64,
    rng: &mut impl Rng,
) -> Result<(usize, usize), GaError> {
    if pop.len() < 2 {
        return Err(GaError::PopulationTooSmall(pop.len()));
    }
    let mut weights = pop
        .iter()
        .map(|i| i.fitness_or_err().map(|f| selection_weight(f, pressure)))
        .collect::<Result<Vec<_>, _>>()?;
    let first = WeightedIndex::new(&weights).expect("selection weights are positive").sample(rng);
    weights[first] = 0.0;
    let second = WeightedIndex::new(&weights).expect("selection weights are positive").sample(rng);
    Ok((first, second))
}

pub fn select_parents<'a>(
    pop: &'a [Individual],
    pressure: f64,
    rng: &mut impl Rng,
) -> Result<(&'a Individual, &'a Individual), GaError> {
    let (a, b) = select_parent_indices(pop, pressure, rng)?;
    Ok((&pop[a], &pop[b]))
}

/// Removes individuals one at a time, each with weight `(fitness + ε)^-pressure`,
/// until `survivors` remain. Survivor order is preserved.
pub fn cull(
    mut pop: Vec<Individual>,
    survivors: usize,
    pressure: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Individual>, GaError> {
    let mut weights = pop
        .iter()
        .map(|i| i.fitness_or_err().map(|f| selection_weight(f, -pressure)))
        .collect::<Result<Vec<_>, _>>()?;
    while pop.len() > survivors {
        let victim = WeightedIndex::new(&weights).expect("death weights are positive").sample(rng);
        pop.remove(victim);
        weights.remove(victim);
    }
    Ok(pop)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Recipe fitness from replicate scores: the smaller of their mean and median.
pub fn aggregate_fitness(replicates: &[f64], expected: usize) -> Result<f64, GaError> {
    if replicates.len() != expected || expected == 0 {
        return Err(GaError::WrongReplicateCount {
            expected,
            got: replicates.len(),
        });
    }
    if let Some(&value) = replicates.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(GaError::InvalidScore { value });
    }
    let mean = replicates.iter().sum::<f64>() / replicates.len() as f64;
    let mut sorted = replicates.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(mean.min(median(&sorted)))
}

/// Scores one recipe. `seed` is derived from the master seed, the run and the
/// individual id, so results do not depend on evaluation order.
pub trait Evaluator: Sync {
    type Error: StdError + Send + Sync + 'static;

    fn evaluate(&self, recipe: &Formulation<f64>, seed: u64) -> Result<Vec<f64>, Self::Error>;
}

impl<F, E> Evaluator for F
where
    F: Fn(&Formulation<f64>, u64) -> Result<Vec<f64>, E> + Sync,
    E: StdError + Send + Sync + 'static,
{
    type Error = E;

    fn evaluate(&self, recipe: &Formulation<f64>, seed: u64) -> Result<Vec<f64>, E> {
        self(recipe, seed)
    }
}

/// One GA run: every individual ever born, plus population membership per generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaRun {
    pub run: usize,
    pub individuals: BTreeMap<u64, Individual>,
    /// `generations[g - 1]` lists the ids alive in generation `g`.
    pub generations: Vec<Vec<u64>>,
}

impl GaRun {
    pub fn individual(&self, id: u64) -> &Individual {
        &self.individuals[&id]
    }

    pub fn population(&self, generation: usize) -> impl Iterator<Item = &Individual> {
        self.generations[generation - 1].iter().map(|id| &self.individuals[id])
    }

    pub fn recipe_count(&self) -> usize {
        self.individuals.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaHistory {
    pub config: GaConfig,
    pub runs: Vec<GaRun>,
}

impl GaHistory {
    pub fn generations(&self) -> usize {
        self.runs.iter().map(|r| r.generations.len()).max().unwrap_or(0)
    }

    /// Fitness of every population member of generation `g`, amalgamated over runs.
    pub fn generation_fitnesses(&self, g: usize) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| g >= 1 && g <= r.generations.len())
            .flat_map(|r| r.population(g).filter_map(|i| i.fitness()))
            .collect()
    }

    pub fn total_recipes(&self) -> usize {
        self.runs.iter().map(GaRun::recipe_count).sum()
    }

    /// Distinct evaluated recipes with their aggregated fitness.
    pub fn recipes(&self) -> Vec<(Genome, f64)> {
        self.runs
            .iter()
            .flat_map(|r| r.individuals.values())
            .filter_map(|i| i.fitness().map(|f| (i.genome, f)))
            .collect()
    }
}

fn evaluate_batch<E: Evaluator>(
    cfg: &GaConfig,
    run: usize,
    generation: usize,
    batch: &mut [Individual],
    evaluator: &E,
) -> Result<(), GaError> {
    let results: Vec<Result<(Vec<f64>, f64), GaError>> = batch
        .par_iter()
        .map(|ind| {
            let seed = derive_seed(cfg.rng_seed, &[run as u64, ind.id]);
            let scores = match ind.genome.phenotype() {
                Ok(recipe) => evaluator.evaluate(&recipe, seed).map_err(|e| GaError::Evaluator {
                    run,
                    generation,
                    id: ind.id,
                    recipe: recipe.to_string(),
                    source: Box::new(e),
                })?,
                // an all-zero genome carries no oil: no droplets, zero score
                Err(FormulationError::AllZero) => vec![0.0; cfg.replicates_per_recipe],
                Err(e) => {
                    return Err(GaError::Evaluator {
                        run,
                        generation,
                        id: ind.id,
                        recipe: format!("{:?}", ind.genome.loci),
                        source: Box::new(e),
                    })
                }
            };
            let fitness = aggregate_fitness(&scores, cfg.replicates_per_recipe)?;
            Ok((scores, fitness))
        })
        .collect();
    for (ind, res) in batch.iter_mut().zip(results) {
        let (scores, fitness) = res?;
        ind.set_evaluation(scores, fitness)?;
    }
    Ok(())
}

fn breed(
    cfg: &GaConfig,
    parents: &[Individual],
    count: usize,
    generation: usize,
    rng: &mut DropRng,
    next_id: &mut u64,
) -> Result<Vec<Individual>, GaError> {
    let mut children = Vec::with_capacity(count);
    for _ in 0..count {
        let (a, b) = select_parents(parents, cfg.selective_pressure, rng)?;
        let child = crossover(&a.genome, &b.genome, rng);
        let child = mutate(&child, cfg.per_locus_mutation_rate, cfg.mutation_sd, rng);
        children.push(Individual::new(*next_id, child, Some((a.id, b.id)), generation));
        *next_id += 1;
    }
    Ok(children)
}

/// Executes run number `run` of the configured GA.
pub fn run_single<E: Evaluator>(cfg: &GaConfig, run: usize, evaluator: &E) -> Result<GaRun, GaError> {
    cfg.validate()?;
    let mut rng = rng_from_seed(derive_seed(cfg.rng_seed, &[run as u64]));
    let mut next_id = 1u64;
    let mut individuals = BTreeMap::new();
    let mut generations = Vec::with_capacity(cfg.generations);

    let mut pop = init_population(cfg, &mut rng, &mut next_id);
    evaluate_batch(cfg, run, 1, &mut pop, evaluator)?;
    generations.push(pop.iter().map(|i| i.id).collect::<Vec<_>>());
    for i in &pop {
        individuals.insert(i.id, i.clone());
    }

    for generation in 2..=cfg.generations {
        let births = cfg.births_per_generation();
        pop = match cfg.order {
            GenerationOrder::CullThenBirth => {
                let mut survivors = cull(pop, cfg.carry_overs, cfg.selective_pressure, &mut rng)?;
                let mut children = breed(cfg, &survivors, births, generation, &mut rng, &mut next_id)?;
                evaluate_batch(cfg, run, generation, &mut children, evaluator)?;
                for c in &children {
                    individuals.insert(c.id, c.clone());
                }
                survivors.append(&mut children);
                survivors
            }
            GenerationOrder::BirthThenCull => {
                let mut children = breed(cfg, &pop, births, generation, &mut rng, &mut next_id)?;
                evaluate_batch(cfg, run, generation, &mut children, evaluator)?;
                for c in &children {
                    individuals.insert(c.id, c.clone());
                }
                pop.append(&mut children);
                cull(pop, cfg.population_size, cfg.selective_pressure, &mut rng)?
            }
        };
        generations.push(pop.iter().map(|i| i.id).collect());
    }

    Ok(GaRun {
        run,
        individuals,
        generations,
    })
}

/// Executes all `cfg.runs` runs.
pub fn run_ga<E: Evaluator>(cfg: &GaConfig, evaluator: &E) -> Result<GaHistory, GaError> {
    cfg.validate()?;
    let runs = (0..cfg.runs)
        .map(|r| run_single(cfg, r, evaluator))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GaHistory {
        config: cfg.clone(),
        runs,
    })
}
