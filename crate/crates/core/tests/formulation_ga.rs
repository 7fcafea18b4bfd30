use dropevo_core::formulation::{normalize, well_volumes, Formulation, FormulationError, Genome};
use dropevo_core::ga::{
    crossover, cull, mutate, run_ga, select_parent_indices, GaConfig, GaHistory, GenerationOrder, Individual,
};
use dropevo_core::rng::rng_from_seed;
use proptest::prelude::*;
use std::collections::HashSet;
use std::convert::Infallible;

fn raw_amounts() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(0.0f64..10.0).prop_filter("some oil", |a| a.iter().sum::<f64>() > 1e-6)
}

proptest! {
    #[test]
    fn normalize_is_idempotent(raw in raw_amounts()) {
        let once = normalize(raw).unwrap();
        let twice = normalize(once.into_array()).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn normalize_is_scale_invariant(raw in raw_amounts(), k in 1e-3f64..1e3) {
        let a = normalize(raw).unwrap();
        let b = normalize(raw.map(|v| v * k)).unwrap();
        for (x, y) in a.proportions().iter().zip(b.proportions()) {
            prop_assert!((x - y).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn well_volumes_conserve_total(raw in raw_amounts(), total in 1.0f64..1000.0) {
        let v = well_volumes(&normalize(raw).unwrap(), total);
        prop_assert!((v.iter().sum::<f64>() - total).abs() <= 1e-9);
        prop_assert!(v.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn negative_amounts_are_rejected(raw in raw_amounts(), idx in 0usize..4) {
        let mut bad = raw;
        bad[idx] = -0.5;
        prop_assert!(
            matches!(normalize(bad), Err(FormulationError::Negative { index, .. }) if index == idx),
            "expected a negative-amount error at index {idx}"
        );
    }

    #[test]
    fn mutation_keeps_loci_in_range(loci in prop::array::uniform4(0.0f64..=1.0), seed: u64, sd in 0.01f64..5.0) {
        let mut rng = rng_from_seed(seed);
        let g = mutate(&Genome::new(loci), 1.0, sd, &mut rng);
        prop_assert!(g.loci.iter().all(|l| (0.0..=1.0).contains(l)));
    }
}

fn with_fitness(values: &[f64]) -> Vec<Individual> {
    values
        .iter()
        .enumerate()
        .map(|(k, &f)| {
            let mut ind = Individual::new(k as u64 + 1, Genome::new([0.5; 4]), None, 1);
            ind.set_evaluation(vec![f], f).unwrap();
            ind
        })
        .collect()
}

#[test]
fn mutated_locus_count_is_binomial() {
    let mut rng = rng_from_seed(11);
    let g = Genome::new([0.5; 4]);
    let n = 100_000;
    let changed: usize = (0..n)
        .map(|_| {
            let m = mutate(&g, 0.3, 0.1, &mut rng);
            m.loci.iter().zip(&g.loci).filter(|(a, b)| a != b).count()
        })
        .sum();
    let mean = changed as f64 / n as f64;
    assert!((mean - 1.2).abs() <= 0.02, "mean mutated loci {mean}");
}

#[test]
fn crossover_cut_points_are_uniform() {
    let mut rng = rng_from_seed(12);
    let a = Genome::new([0.0; 4]);
    let b = Genome::new([1.0; 4]);
    let n = 30_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        let c = crossover(&a, &b, &mut rng);
        let cut = c.loci.iter().take_while(|&&v| v == 0.0).count();
        assert!((1..=3).contains(&cut), "cut {cut}");
        assert!(c.loci[cut..].iter().all(|&v| v == 1.0));
        counts[cut - 1] += 1;
    }
    for c in counts {
        let freq = c as f64 / n as f64;
        assert!((freq - 1.0 / 3.0).abs() <= 0.01, "cut frequency {freq}");
    }
}

#[test]
fn equal_fitness_selection_is_uniform() {
    let pop = with_fitness(&[0.7; 10]);
    let mut rng = rng_from_seed(13);
    let n = 100_000;
    let mut counts = [0usize; 10];
    for _ in 0..n {
        let (a, b) = select_parent_indices(&pop, 1.0, &mut rng).unwrap();
        assert_ne!(a, b);
        counts[a] += 1;
    }
    let expected = n as f64 / 10.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 9 degrees of freedom, upper 0.1% point
    assert!(chi2 < 27.88, "chi² = {chi2}, counts {counts:?}");
}

#[test]
fn equal_fitness_cull_is_uniform() {
    let n = 100_000;
    let mut rng = rng_from_seed(14);
    let mut deaths = [0usize; 10];
    for _ in 0..n {
        let survivors = cull(with_fitness(&[2.0; 10]), 9, 1.0, &mut rng).unwrap();
        let alive: HashSet<u64> = survivors.iter().map(|i| i.id).collect();
        let dead = (1..=10u64).find(|id| !alive.contains(id)).unwrap();
        deaths[dead as usize - 1] += 1;
    }
    for d in deaths {
        let freq = d as f64 / n as f64;
        assert!((freq - 0.1).abs() <= 0.01, "death frequency {freq}");
    }
}

fn smooth(recipe: &Formulation<f64>, seed: u64) -> Result<Vec<f64>, Infallible> {
    let p = recipe.proportions();
    let jitter = (seed % 1000) as f64 * 1e-4;
    let base = p[0] + 0.5 * p[2];
    Ok(vec![base + jitter, base, base + 2.0 * jitter])
}

fn small_config(seed: u64, order: GenerationOrder) -> GaConfig {
    GaConfig {
        generations: 6,
        runs: 2,
        rng_seed: seed,
        order,
        ..GaConfig::default()
    }
}

fn check_history(h: &GaHistory) {
    let cfg = &h.config;
    for run in &h.runs {
        assert_eq!(run.generations.len(), cfg.generations);
        for ind in run.individuals.values() {
            assert!(ind.genome.loci.iter().all(|l| (0.0..=1.0).contains(l)));
            assert!(ind.fitness().is_some());
        }
        for g in 1..run.generations.len() {
            assert_eq!(run.generations[g].len(), cfg.population_size);
            let prev: HashSet<_> = run.generations[g - 1].iter().collect();
            let kept = run.generations[g].iter().filter(|id| prev.contains(id)).count();
            if cfg.order == GenerationOrder::CullThenBirth {
                assert_eq!(kept, cfg.carry_overs);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn ga_runs_are_deterministic_and_bounded(seed: u64, birth_first: bool) {
        let order = if birth_first { GenerationOrder::BirthThenCull } else { GenerationOrder::CullThenBirth };
        let cfg = small_config(seed, order);
        let a = run_ga(&cfg, &smooth).unwrap();
        let b = run_ga(&cfg, &smooth).unwrap();
        prop_assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        check_history(&a);
        if order == GenerationOrder::CullThenBirth {
            prop_assert_eq!(a.runs[0].recipe_count(), 25 + 5 * 10);
        }
    }
}

#[test]
fn stored_fitness_is_fixed_once_evaluated() {
    let mut ind = with_fitness(&[0.3]).remove(0);
    assert!(ind.set_evaluation(vec![0.9], 0.9).is_err());
    assert_eq!(ind.fitness(), Some(0.3));

    // every appearance of an id across generations refers to one record
    let h = run_ga(&small_config(5, GenerationOrder::CullThenBirth), &smooth).unwrap();
    for run in &h.runs {
        for g in 1..=run.generations.len() {
            for ind in run.population(g) {
                assert_eq!(ind.fitness(), run.individual(ind.id).fitness());
                assert!(ind.generation_born <= g);
            }
        }
    }
}
