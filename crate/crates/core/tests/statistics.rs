use dropevo_core::analysis::{
    anova_oneway, holm_bonferroni, kendall_tau, train_som, trajectory_report, SomParams,
};
use dropevo_core::formulation::Genome;
use dropevo_core::ga::{GaConfig, GaHistory, GaRun, Individual};
use dropevo_core::rng::rng_from_seed;
use proptest::prelude::*;
use std::collections::BTreeMap;

fn history(generations: usize, per_gen: usize, fitness: impl Fn(usize, usize) -> f64) -> GaHistory {
    let mut individuals = BTreeMap::new();
    let mut gens = Vec::new();
    let mut id = 1;
    for g in 1..=generations {
        let mut members = Vec::new();
        for k in 0..per_gen {
            let mut ind = Individual::new(id, Genome::new([0.25; 4]), None, g);
            let f = fitness(g, k);
            ind.set_evaluation(vec![f; 3], f).unwrap();
            individuals.insert(id, ind);
            members.push(id);
            id += 1;
        }
        gens.push(members);
    }
    GaHistory {
        config: GaConfig {
            generations,
            population_size: per_gen,
            runs: 1,
            ..GaConfig::default()
        },
        runs: vec![GaRun {
            run: 0,
            individuals,
            generations: gens,
        }],
    }
}

fn close(got: f64, want: f64, tol: f64) {
    assert!((got - want).abs() <= tol * want.abs().max(1.0), "got {got}, want {want}");
}

#[test]
fn injected_trend_matches_reference_values() {
    // reference values from an independent implementation (scipy f_oneway,
    // kendalltau with the asymptotic method, numpy linear percentiles)
    let h = history(5, 8, |g, k| 0.4 * g as f64 + ((5 * k + 3 * g) % 8) as f64 / 8.0);
    let r = trajectory_report(&h).unwrap();

    assert_eq!((r.first_vs_last.early_n, r.first_vs_last.late_n), (4, 4));
    close(r.first_vs_last.anova.f, 196.60800000000003, 1e-9);
    close(r.first_vs_last.anova.p, 8.207613007448652e-06, 1e-6);
    assert_eq!(r.middle_vs_last.early_generation, 3);
    close(r.middle_vs_last.anova.f, 49.15199999999997, 1e-9);
    close(r.middle_vs_last.anova.p, 0.0004199394580967775, 1e-6);
    close(r.all_generations.f, 34.13333333333336, 1e-9);
    close(r.all_generations.p, 1.2420240087311056e-11, 1e-6);
    let k = r.kendall.unwrap();
    close(k.tau, 0.7841018461451326, 1e-9);
    close(k.p, 4.036585951569154e-11, 1e-6);

    let b = &r.bands[0];
    for (got, want) in [b.median, b.p25, b.p75, b.p10, b.p90].into_iter().zip([0.8375, 0.61875, 1.05625, 0.4875, 1.1875]) {
        close(got, want, 1e-12);
    }
    close(r.bands[4].p90, 2.7875, 1e-12);
}

#[test]
fn flat_history_has_no_trend() {
    let r = trajectory_report(&history(4, 6, |_, _| 1.5)).unwrap();
    assert!(r.kendall.is_none());
    assert_eq!(r.all_generations.f, 0.0);
    assert_eq!(r.all_generations.p, 1.0);
    assert!(r.first_vs_last.top_half_degenerate);
}

fn groups() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 2..12), 2..6)
}

fn f_of(gs: &[Vec<f64>]) -> (f64, f64) {
    let refs: Vec<&[f64]> = gs.iter().map(Vec::as_slice).collect();
    let r = anova_oneway(&refs).unwrap();
    (r.f, r.p)
}

proptest! {
    #[test]
    fn statistics_stay_in_range(gs in groups(), y in prop::collection::vec(-10.0f64..10.0, 2..40)) {
        let (f, p) = f_of(&gs);
        prop_assert!(f >= 0.0 && (0.0..=1.0).contains(&p));
        let x: Vec<f64> = (0..y.len()).map(|i| (i / 3) as f64).collect();
        if let Ok(k) = kendall_tau(&x, &y) {
            prop_assert!((-1.0..=1.0).contains(&k.tau));
            prop_assert!((0.0..=1.0).contains(&k.p));
        }
    }

    #[test]
    fn anova_ignores_shift_and_scale(gs in groups(), shift in -1e3f64..1e3, scale in 1e-3f64..1e3) {
        let (f0, _) = f_of(&gs);
        let moved: Vec<Vec<f64>> = gs.iter().map(|g| g.iter().map(|v| v * scale + shift).collect()).collect();
        let (f1, _) = f_of(&moved);
        prop_assert!((f0 - f1).abs() <= 1e-6 * f0.max(1.0), "{f0} vs {f1}");
    }

    #[test]
    fn anova_ignores_order_within_groups(gs in groups()) {
        let (f0, _) = f_of(&gs);
        let reversed: Vec<Vec<f64>> = gs.iter().map(|g| g.iter().rev().copied().collect()).collect();
        let (f1, _) = f_of(&reversed);
        prop_assert!((f0 - f1).abs() <= 1e-9 * f0.max(1.0));
    }

    #[test]
    fn kendall_ignores_monotone_transforms(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..30)) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let a = kendall_tau(&x, &y).unwrap();
        let tx: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let ty: Vec<f64> = y.iter().map(|v| v * v * v + 2.0 * v).collect();
        let b = kendall_tau(&tx, &ty).unwrap();
        prop_assert_eq!((a.concordant, a.discordant), (b.concordant, b.discordant));
        prop_assert!((a.tau - b.tau).abs() <= 1e-12);
    }

    #[test]
    fn holm_is_monotone(ps in prop::collection::vec(0.0f64..=1.0, 1..12), idx in 0usize..12, factor in 0.0f64..1.0, alpha in 0.01f64..0.2) {
        let before = holm_bonferroni(&ps, alpha).unwrap();
        let mut lowered = ps.clone();
        let i = idx % ps.len();
        lowered[i] *= factor;
        let after = holm_bonferroni(&lowered, alpha).unwrap();
        for (b, a) in before.iter().zip(&after) {
            prop_assert!(!b || *a);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn som_is_seeded_and_stays_in_the_data_box(seed: u64, data in prop::collection::vec(prop::array::uniform4(0.0f64..1.0), 1..60)) {
        let params = SomParams { width: 5, height: 4, ..SomParams::default() };
        let a = train_som(&data, &params, &mut rng_from_seed(seed)).unwrap();
        let b = train_som(&data, &params, &mut rng_from_seed(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        for c in 0..4 {
            let lo = data.iter().map(|d| d[c]).fold(f64::INFINITY, f64::min);
            let hi = data.iter().map(|d| d[c]).fold(f64::NEG_INFINITY, f64::max);
            for w in &a.weights {
                prop_assert!(w[c] >= lo - 1e-12 && w[c] <= hi + 1e-12);
            }
        }
    }
}

#[test]
fn som_unfolds_a_line_segment() {
    let data: Vec<[f64; 4]> = (0..200)
        .map(|k| {
            let t = k as f64 / 199.0;
            [t, 1.0 - t, 0.0, 0.0]
        })
        .collect();
    let params = SomParams {
        width: 10,
        height: 1,
        iterations: 5000,
        ..SomParams::default()
    };
    let som = train_som(&data, &params, &mut rng_from_seed(3)).unwrap();
    let start = som.node_xy(som.best_matching_unit(&data[0])).0;
    let end = som.node_xy(som.best_matching_unit(&data[199])).0;
    assert!(start.abs_diff(end) >= 8, "endpoints map to nodes {start} and {end}");
    // node weights are ordered along the chain
    let xs: Vec<f64> = som.weights.iter().map(|w| w[0]).collect();
    let increasing = xs.windows(2).all(|w| w[0] < w[1]);
    let decreasing = xs.windows(2).all(|w| w[0] > w[1]);
    assert!(increasing || decreasing, "{xs:?}");
}
