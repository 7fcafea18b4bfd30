//! Statistics over evolutionary trajectories, and a Kohonen map for
//! projecting recipe space onto a 2-D grid.
//!
//! F-test p-values come from the regularized incomplete beta function
//! (the F distribution survival function in `statrs`). Kendall's τ-b uses the
//! tie-corrected normal approximation with a two-sided p-value.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::formulation::N_OILS;
use crate::ga::GaHistory;
use crate::scalar::{squared_distance, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("need at least two groups, got {0}")]
    TooFewGroups(usize),
    #[error("x has {x} values but y has {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("{0} is constant; Kendall's tau is undefined")]
    AllTied(&'static str),
    #[error("p-value {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("non-finite value in input")]
    NonFinite,
}

/// Fitness values of one generation, pooled over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSample<T: Scalar = f64> {
    pub generation: usize,
    pub fitnesses: Vec<T>,
}

fn sorted<T: Scalar>(v: &[T]) -> Vec<T> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    s
}

/// Median of a nonempty sample.
pub fn median<T: Scalar>(v: &[T]) -> T {
    percentile(&sorted(v), T::lit(50.0))
}

/// Linear-interpolation percentile (`q` in `[0, 100]`) of an ascending, nonempty sample.
pub fn percentile<T: Scalar>(ascending: &[T], q: T) -> T {
    let n = ascending.len();
    assert!(n > 0, "percentile of empty sample");
    let pos = q / T::lit(100.0) * T::from_usize_lossy(n - 1);
    let lo = pos.floor().to_usize().unwrap_or(0).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    let frac = pos - T::from_usize_lossy(lo);
    ascending[lo] + (ascending[hi] - ascending[lo]) * frac
}

/// Values strictly greater than the sample median.
pub fn top_half<T: Scalar>(g: &GenerationSample<T>) -> Result<GenerationSample<T>, StatsError> {
    if g.fitnesses.len() < 2 {
        return Err(StatsError::TooFew {
            needed: 2,
            got: g.fitnesses.len(),
        });
    }
    if g.fitnesses.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let m = median(&g.fitnesses);
    Ok(GenerationSample {
        generation: g.generation,
        fitnesses: g.fitnesses.iter().copied().filter(|&v| v > m).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult<T: Scalar = f64> {
    pub f: T,
    pub p: T,
    pub df_between: usize,
    pub df_within: usize,
    pub ss_between: T,
    pub ss_within: T,
    /// Within-group variance is zero: `f` is +∞ (p = 0) when the group means
    /// differ and 0 (p = 1) when they do not.
    pub degenerate: bool,
}

/// One-way analysis of variance across `groups`.
pub fn anova_oneway<T: Scalar>(groups: &[&[T]]) -> Result<AnovaResult<T>, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups(groups.len()));
    }
    for g in groups {
        if g.len() < 2 {
            return Err(StatsError::TooFew { needed: 2, got: g.len() });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
    }
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let k = groups.len();
    let grand = groups.iter().flat_map(|g| g.iter().copied()).sum::<T>() / T::from_usize_lossy(n);
    let mut ss_between = T::zero();
    let mut ss_within = T::zero();
    for g in groups {
        let mean = g.iter().copied().sum::<T>() / T::from_usize_lossy(g.len());
        ss_between = ss_between + T::from_usize_lossy(g.len()) * (mean - grand) * (mean - grand);
        ss_within = ss_within + g.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
    }
    let df_between = k - 1;
    let df_within = n - k;
    let ms_between = ss_between / T::from_usize_lossy(df_between);
    let ms_within = ss_within / T::from_usize_lossy(df_within);
    // relative scale below which sums of squares are rounding noise
    let scale = groups
        .iter()
        .flat_map(|g| g.iter())
        .fold(T::zero(), |m, v| m.max((*v - grand).abs()));
    let noise = T::epsilon() * T::lit(64.0) * scale * scale * T::from_usize_lossy(n);
    if ss_within <= noise {
        let differ = ss_between > noise;
        return Ok(AnovaResult {
            f: if differ { T::infinity() } else { T::zero() },
            p: if differ { T::zero() } else { T::one() },
            df_between,
            df_within,
            ss_between,
            ss_within,
            degenerate: true,
        });
    }
    let f = ms_between / ms_within;
    let dist = FisherSnedecor::new(df_between as f64, df_within as f64).expect("positive degrees of freedom");
    let p = dist.sf(f.as_f64()).clamp(0.0, 1.0);
    Ok(AnovaResult {
        f,
        p: T::lit(p),
        df_between,
        df_within,
        ss_between,
        ss_within,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KendallResult<T: Scalar = f64> {
    pub tau: T,
    pub z: T,
    pub p: T,
    pub concordant: u64,
    pub discordant: u64,
}

fn tie_sums<T: Scalar>(v: &[T]) -> (f64, f64, f64) {
    // Σ t(t−1), Σ t(t−1)(t−2), Σ t(t−1)(2t+5) over tie groups of size t
    let s = sorted(v);
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < s.len() {
        let mut j = i + 1;
        while j < s.len() && s[j] == s[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        a += t * (t - 1.0);
        b += t * (t - 1.0) * (t - 2.0);
        c += t * (t - 1.0) * (2.0 * t + 5.0);
        i = j;
    }
    (a, b, c)
}

/// Kendall's τ-b with the tie-corrected normal approximation.
pub fn kendall_tau<T: Scalar>(x: &[T], y: &[T]) -> Result<KendallResult<T>, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { x: x.len(), y: y.len() });
    }
    let n = x.len();
    if n < 2 {
        return Err(StatsError::TooFew { needed: 2, got: n });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (mut concordant, mut discordant) = (0u64, 0u64);
    for i in 0..n {
        for j in (i + 1)..n {
            let s = (x[i] - x[j]) * (y[i] - y[j]);
            if s > T::zero() {
                concordant += 1;
            } else if s < T::zero() {
                discordant += 1;
            }
        }
    }
    let (xt, x0, x1) = tie_sums(x);
    let (yt, y0, y1) = tie_sums(y);
    let n0 = (n * (n - 1)) as f64 / 2.0;
    if xt / 2.0 >= n0 {
        return Err(StatsError::AllTied("x"));
    }
    if yt / 2.0 >= n0 {
        return Err(StatsError::AllTied("y"));
    }
    let s = concordant as f64 - discordant as f64;
    let tau = s / ((n0 - xt / 2.0) * (n0 - yt / 2.0)).sqrt();

    let nf = n as f64;
    let m = nf * (nf - 1.0);
    let mut var = (m * (2.0 * nf + 5.0) - x1 - y1) / 18.0 + 2.0 * (xt / 2.0) * (yt / 2.0) / m;
    if n > 2 {
        var += x0 * y0 / (9.0 * m * (nf - 2.0));
    }
    let z = s / var.sqrt();
    let p = erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0);
    Ok(KendallResult {
        tau: T::lit(tau.clamp(-1.0, 1.0)),
        z: T::lit(z),
        p: T::lit(p),
        concordant,
        discordant,
    })
}

/// Holm's step-down procedure. `result[i]` is true when hypothesis `i` is rejected.
pub fn holm_bonferroni<T: Scalar>(pvals: &[T], alpha: T) -> Result<Vec<bool>, StatsError> {
    if let Some(p) = pvals.iter().find(|p| !(**p >= T::zero() && **p <= T::one())) {
        return Err(StatsError::InvalidProbability(p.as_f64()));
    }
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].partial_cmp(&pvals[b]).expect("checked finite").then(a.cmp(&b)));
    let mut reject = vec![false; m];
    for (rank, &idx) in order.iter().enumerate() {
        if pvals[idx] < alpha / T::from_usize_lossy(m - rank) {
            reject[idx] = true;
        } else {
            break;
        }
    }
    Ok(reject)
}

/// Kohonen self-organizing map over 4-component recipes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomGrid<T: Scalar = f64> {
    pub width: usize,
    pub height: usize,
    /// Row-major, `weights[y * width + x]`.
    pub weights: Vec<[T; N_OILS]>,
    pub initial_learning_rate: T,
    pub initial_radius: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SomParams {
    pub width: usize,
    pub height: usize,
    /// 0 means `10 × data.len()`.
    pub iterations: usize,
    pub initial_learning_rate: f64,
    /// 0 means half the larger grid dimension.
    pub initial_radius: f64,
}

impl Default for SomParams {
    fn default() -> Self {
        SomParams {
            width: 10,
            height: 10,
            iterations: 0,
            initial_learning_rate: 0.5,
            initial_radius: 0.0,
        }
    }
}

impl<T: Scalar> SomGrid<T> {
    /// Nodes initialized uniformly inside the bounding box of `data`.
    pub fn init(data: &[[T; N_OILS]], params: &SomParams, rng: &mut impl Rng) -> Result<Self, StatsError> {
        if data.is_empty() {
            return Err(StatsError::TooFew { needed: 1, got: 0 });
        }
        let mut lo = data[0];
        let mut hi = data[0];
        for d in data {
            for c in 0..N_OILS {
                lo[c] = lo[c].min(d[c]);
                hi[c] = hi[c].max(d[c]);
            }
        }
        let weights = (0..params.width * params.height)
            .map(|_| std::array::from_fn(|c| lo[c] + (hi[c] - lo[c]) * T::lit(rng.random::<f64>())))
            .collect();
        let radius = if params.initial_radius > 0.0 {
            params.initial_radius
        } else {
            (params.width.max(params.height) as f64 / 2.0).max(1.0)
        };
        Ok(SomGrid {
            width: params.width,
            height: params.height,
            weights,
            initial_learning_rate: T::lit(params.initial_learning_rate),
            initial_radius: T::lit(radius),
        })
    }

    /// Index of the node nearest to `x`; ties go to the lower index.
    pub fn best_matching_unit(&self, x: &[T; N_OILS]) -> usize {
        let mut best = 0;
        let mut best_d = T::infinity();
        for (k, w) in self.weights.iter().enumerate() {
            let d = squared_distance(w, x);
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        best
    }

    pub fn node_xy(&self, k: usize) -> (usize, usize) {
        (k % self.width, k / self.width)
    }
}

/// Online Kohonen training. Each step draws a random sample, finds its best
/// matching unit and pulls every node toward the sample by
/// `lr(t) · exp(−d²/2r(t)²)`, where `d` is the grid distance to the BMU,
/// `lr(t) = lr₀·exp(−t/T)` and `r(t) = r₀·exp(−t·ln r₀ / T)` shrinks to one node.
pub fn train_som<T: Scalar>(
    data: &[[T; N_OILS]],
    params: &SomParams,
    rng: &mut impl Rng,
) -> Result<SomGrid<T>, StatsError> {
    let mut som = SomGrid::init(data, params, rng)?;
    let iterations = if params.iterations == 0 {
        10 * data.len()
    } else {
        params.iterations
    };
    continue_training(&mut som, data, iterations, rng);
    Ok(som)
}

fn continue_training<T: Scalar>(som: &mut SomGrid<T>, data: &[[T; N_OILS]], iterations: usize, rng: &mut impl Rng) {
    if iterations == 0 {
        return;
    }
    let total = T::from_usize_lossy(iterations);
    let r0 = som.initial_radius;
    let radius_decay = r0.max(T::one()).ln() / total;
    for t in 0..iterations {
        let tf = T::from_usize_lossy(t);
        let lr = som.initial_learning_rate * (-tf / total).exp();
        let r = r0 * (-tf * radius_decay).exp();
        let two_r2 = T::lit(2.0) * r * r;
        let x = data[rng.random_range(0..data.len())];
        let bmu = som.best_matching_unit(&x);
        let (bx, by) = som.node_xy(bmu);
        for k in 0..som.weights.len() {
            let (nx, ny) = som.node_xy(k);
            let dx = T::from_usize_lossy(nx.abs_diff(bx));
            let dy = T::from_usize_lossy(ny.abs_diff(by));
            let h = (-(dx * dx + dy * dy) / two_r2).exp();
            let step = (lr * h).min(T::one());
            let w = &mut som.weights[k];
            for c in 0..N_OILS {
                w[c] = w[c] + step * (x[c] - w[c]);
            }
        }
    }
}

/// Hit count of each node and the majority label among its hits (ties go to
/// the lexicographically smaller label).
pub fn label_nodes<T: Scalar>(som: &SomGrid<T>, data: &[[T; N_OILS]], labels: &[String]) -> Vec<(usize, Option<String>)> {
    use std::collections::BTreeMap;
    let mut tallies: Vec<BTreeMap<&str, usize>> = vec![BTreeMap::new(); som.weights.len()];
    for (x, l) in data.iter().zip(labels) {
        *tallies[som.best_matching_unit(x)].entry(l.as_str()).or_default() += 1;
    }
    tallies
        .into_iter()
        .map(|t| {
            let hits = t.values().sum();
            let best = t
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(l, _)| l.to_string());
            (hits, best)
        })
        .collect()
}

/// One-way ANOVA between two generations' top halves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationComparison {
    pub early_generation: usize,
    pub late_generation: usize,
    pub early_n: usize,
    pub late_n: usize,
    pub anova: AnovaResult<f64>,
    /// A top half had fewer than two values (ties at the median), so the
    /// whole generation was used for it.
    pub top_half_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileBand {
    pub generation: usize,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
    pub p10: f64,
    pub p90: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    /// First against last generation, top halves.
    pub first_vs_last: GenerationComparison,
    /// Middle against last generation, top halves.
    pub middle_vs_last: GenerationComparison,
    /// All generations as categories, all values.
    pub all_generations: AnovaResult<f64>,
    /// Fitness against generation number; `None` when either is constant.
    pub kendall: Option<KendallResult<f64>>,
    pub bands: Vec<PercentileBand>,
}

fn compare(history: &GaHistory, early: usize, late: usize) -> Result<GenerationComparison, StatsError> {
    let mut degenerate = false;
    let mut half = |g: usize| -> Result<Vec<f64>, StatsError> {
        let sample = GenerationSample {
            generation: g,
            fitnesses: history.generation_fitnesses(g),
        };
        let top = top_half(&sample)?;
        if top.fitnesses.len() < 2 {
            degenerate = true;
            Ok(sample.fitnesses)
        } else {
            Ok(top.fitnesses)
        }
    };
    let a = half(early)?;
    let b = half(late)?;
    let anova = anova_oneway(&[&a, &b])?;
    Ok(GenerationComparison {
        early_generation: early,
        late_generation: late,
        early_n: a.len(),
        late_n: b.len(),
        anova,
        top_half_degenerate: degenerate,
    })
}

/// Generation compared against the last one in the mid-run test: 11 of 21.
pub fn middle_generation(generations: usize) -> usize {
    generations / 2 + 1
}

/// Runs the standard set of analyses over a completed history.
pub fn trajectory_report(history: &GaHistory) -> Result<TrajectoryReport, StatsError> {
    let g = history.generations();
    if g < 2 {
        return Err(StatsError::TooFew { needed: 2, got: g });
    }
    let first_vs_last = compare(history, 1, g)?;
    let middle_vs_last = compare(history, middle_generation(g), g)?;

    let samples: Vec<Vec<f64>> = (1..=g).map(|k| history.generation_fitnesses(k)).collect();
    let refs: Vec<&[f64]> = samples.iter().map(Vec::as_slice).collect();
    let all_generations = anova_oneway(&refs)?;

    let (xs, ys): (Vec<f64>, Vec<f64>) = samples
        .iter()
        .enumerate()
        .flat_map(|(k, s)| s.iter().map(move |&v| ((k + 1) as f64, v)))
        .unzip();
    let kendall = match kendall_tau(&xs, &ys) {
        Ok(k) => Some(k),
        Err(StatsError::AllTied(_)) => None,
        Err(e) => return Err(e),
    };

    let bands = samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let s = sorted(s);
            PercentileBand {
                generation: k + 1,
                median: percentile(&s, 50.0),
                p25: percentile(&s, 25.0),
                p75: percentile(&s, 75.0),
                p10: percentile(&s, 10.0),
                p90: percentile(&s, 90.0),
            }
        })
        .collect();

    Ok(TrajectoryReport {
        first_vs_last,
        middle_vs_last,
        all_generations,
        kendall,
        bands,
    })
}
