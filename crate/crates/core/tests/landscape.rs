use dropevo_core::landscape::{
    catchment_map, cell_composition, composition_point, face_grid, face_grids, kernel_matrix, Cell, FaceLattice,
    KernelModel, Point,
};
use dropevo_core::rng::rng_from_seed;
use proptest::prelude::*;
use rand::Rng;
use std::collections::HashMap;

fn simplex_point() -> impl Strategy<Value = Point<f64>> {
    prop::array::uniform4(0.0f64..1.0)
        .prop_filter("some oil", |a| a.iter().sum::<f64>() > 1e-3)
        .prop_map(|a| {
            let s: f64 = a.iter().sum();
            a.map(|v| v / s)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kernel_matrix_is_symmetric_with_unit_diagonal(points in prop::collection::vec(simplex_point(), 1..40), sigma in 0.01f64..2.0) {
        let k = kernel_matrix(&points, sigma);
        for i in 0..k.n {
            prop_assert_eq!(k.get(i, i), 1.0);
            for j in 0..i {
                prop_assert_eq!(k.get(i, j).to_bits(), k.get(j, i).to_bits());
                prop_assert!(k.get(i, j) > 0.0 && k.get(i, j) <= 1.0);
            }
        }
    }

    #[test]
    fn fit_residual_is_small(
        data in prop::collection::vec((simplex_point(), -5.0f64..5.0), 1..120),
        log_lambda in -6.0f64..0.0,
        sigma in 0.05f64..0.5,
    ) {
        let (x, y): (Vec<_>, Vec<_>) = data.into_iter().unzip();
        let y_inf = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let m = KernelModel::fit(x, y, 10f64.powf(log_lambda), sigma).unwrap();
        prop_assert!(m.residual_inf() < 1e-8 * (1.0 + y_inf), "residual {}", m.residual_inf());
    }
}

#[test]
fn duplicate_points_share_the_pooled_target() {
    let p: Point<f64> = [0.1, 0.2, 0.3, 0.4];
    let lambda = 1e-6f64;
    let m = KernelModel::<f64>::fit(vec![p, p], vec![1.0, 3.0], lambda, 0.15).unwrap();
    // K = [[1, 1], [1, 1]], so θ₁ + θ₂ = (y₁ + y₂)/(2 + λ) and λ(θ₂ − θ₁) = y₂ − y₁
    let expected = 4.0 / (2.0 + lambda);
    assert!((m.predict(&p) - expected).abs() < 1e-9);
    assert!((lambda * (m.weights[1] - m.weights[0]) - 2.0).abs() < 1e-6);
    // the pseudo-inverse solve K⁺y predicts the mean target; ridge is off by O(λ)
    assert!((m.predict(&p) - 2.0).abs() < 10.0 * lambda);
}

#[test]
fn tiny_ridge_interpolates_separated_points() {
    let mut x: Vec<Point<f64>> = (0..4).map(|k| std::array::from_fn(|c| if c == k { 1.0 } else { 0.0 })).collect();
    for a in 0..4 {
        for b in (a + 1)..4 {
            x.push(std::array::from_fn(|c| if c == a || c == b { 0.5 } else { 0.0 }));
        }
    }
    let y: Vec<f64> = (0..x.len()).map(|k| (k as f64 * 0.7).sin()).collect();
    let m = KernelModel::fit(x.clone(), y.clone(), 1e-12, 0.15).unwrap();
    for (xi, yi) in x.iter().zip(&y) {
        assert!((m.predict(xi) - yi).abs() < 1e-6);
    }
}

#[test]
fn constant_targets_reproduce_on_the_training_lattice() {
    // training on every cell of a coarse lattice, queried on that lattice
    let res = 6;
    let mut points: Vec<Point<f64>> = Vec::new();
    for face in 0..4 {
        for i in 0..res {
            for j in 0..res {
                if let Some(c) = cell_composition(face, res, i, j) {
                    let p = composition_point(&c, res);
                    if !points.contains(&p) {
                        points.push(p);
                    }
                }
            }
        }
    }
    assert_eq!(points.len(), 4 * 21 - 6 * 6 + 4);
    let m = KernelModel::fit(points.clone(), vec![2.5; points.len()], 1e-10, 0.15).unwrap();
    for face in 0..4 {
        let lat = face_grid(&m, face, res).unwrap();
        for v in lat.values.iter().filter(|v| !v.is_nan()) {
            assert!((v - 2.5).abs() < 1e-6, "{v}");
        }
    }
}

fn bumpy_lattices(seed: u64, res: usize) -> Vec<FaceLattice<f64>> {
    let mut rng = rng_from_seed(seed);
    let bumps: Vec<(Point<f64>, f64)> = (0..rng.random_range(1..6))
        .map(|_| {
            let raw: [f64; 4] = std::array::from_fn(|_| rng.random::<f64>());
            let s: f64 = raw.iter().sum();
            (raw.map(|v| v / s), rng.random_range(0.5..2.0))
        })
        .collect();
    (0..4)
        .map(|face| {
            FaceLattice::from_fn(face, res, |p: &Point<f64>| {
                bumps
                    .iter()
                    .map(|(c, h)| {
                        let d2: f64 = p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                        h * (-d2 / 0.02).exp()
                    })
                    .sum()
            })
            .unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_valid_cell_gets_one_island(seed: u64, res in 3usize..32) {
        let lats = bumpy_lattices(seed, res);
        let map = catchment_map(&lats).unwrap();
        let valid: usize = lats.iter().map(|l| l.valid_cell_count()).sum();
        prop_assert_eq!(map.islands.iter().map(|i| i.cell_count).sum::<usize>(), valid);

        // the same recipe on two faces carries one label
        let mut by_recipe: HashMap<[u32; 4], usize> = HashMap::new();
        for face in 0..4 {
            for i in 0..res {
                for j in 0..res {
                    let label = map.label(Cell { face, i, j });
                    match cell_composition(face, res, i, j) {
                        None => prop_assert!(label.is_none()),
                        Some(c) => {
                            let label = label.expect("valid cell is labelled");
                            prop_assert!(label < map.islands.len());
                            prop_assert_eq!(*by_recipe.entry(c).or_insert(label), label);
                        }
                    }
                }
            }
        }
        let points: usize = map.islands.iter().map(|i| i.point_count).sum();
        prop_assert_eq!(points, by_recipe.len());
        for w in map.islands.windows(2) {
            prop_assert!(w[0].max_value >= w[1].max_value);
        }
    }
}

#[test]
fn model_grids_are_deterministic() {
    let x: Vec<Point<f64>> = vec![[0.7, 0.1, 0.1, 0.1], [0.1, 0.1, 0.1, 0.7], [0.25; 4]];
    let m = KernelModel::fit(x, vec![1.0, 0.5, 0.2], 1e-3, 0.15).unwrap();
    let a = face_grids(&m, 41).unwrap();
    let b = face_grids(&m, 41).unwrap();
    let bits = |g: &[FaceLattice<f64>]| g.iter().flat_map(|l| l.values.iter().map(|v| v.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(catchment_map(&a).unwrap(), catchment_map(&b).unwrap());
}
