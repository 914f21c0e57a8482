//! Seeded synthetic scorecards, sample data and applicants for benchmarks
//! and randomized tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::formulation::{CfQuery, Outcome};
use crate::scorecard::{Bin, BinSpec, DataPoint, Feature, Scorecard, TargetType};
use crate::stats::{compute_gaussian_stats, compute_weights, Dataset, WeightMethod};

fn interval_bins(values: &[f64], step: f64) -> Vec<Bin> {
    let b = values.len();
    values
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let lower = if j == 0 { f64::NEG_INFINITY } else { step * j as f64 };
            let upper = if j + 1 == b {
                f64::INFINITY
            } else {
                step * (j + 1) as f64
            };
            Bin {
                label: format!("b{j}"),
                spec: BinSpec::Interval { lower, upper },
                transform_value: v,
                points: None,
            }
        })
        .collect()
}

/// A credit-style scorecard: positive coefficients and increasing WoE per
/// feature, so higher bins always raise the score.
pub fn credit_scorecard(p: usize, bins: usize, seed: u64) -> Scorecard {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = (0..p)
        .map(|i| {
            let mut woe: Vec<f64> = (0..bins)
                .map(|j| {
                    let base = -1.2 + 2.4 * j as f64 / (bins.max(2) - 1) as f64;
                    let v: f64 = base + rng.random_range(-0.15..0.15);
                    (v * 1000.0).round() / 1000.0
                })
                .collect();
            woe.sort_by(f64::total_cmp);
            woe.dedup();
            Feature {
                name: format!("F{:02}", i + 1),
                coefficient: (rng.random_range(0.4..1.2f64) * 100.0).round() / 100.0,
                actionable: true,
                bins: interval_bins(&woe, 10.0),
            }
        })
        .collect();
    Scorecard {
        features,
        intercept: 0.0,
        target_type: TargetType::Binary,
    }
}

/// Samples whose bins follow an equicorrelated Gaussian latent variable,
/// reported in transform space.
pub fn credit_samples(sc: &Scorecard, n: usize, rho: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = sc.num_features();
    let rows = (0..n)
        .map(|_| {
            let common: f64 = StandardNormal.sample(&mut rng);
            (0..p)
                .map(|i| {
                    let own: f64 = StandardNormal.sample(&mut rng);
                    let z = rho.sqrt() * common + (1.0 - rho).sqrt() * own;
                    let bins = &sc.features[i].bins;
                    // equal-probability buckets of a standard normal
                    let u = 0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2));
                    let j = ((u * bins.len() as f64) as usize).min(bins.len() - 1);
                    bins[j].transform_value
                })
                .collect()
        })
        .collect();
    Dataset {
        names: sc.features.iter().map(|f| f.name.clone()).collect(),
        rows,
    }
}

/// Abramowitz–Stegun 7.1.26 (|error| < 1.5e-7), sufficient for bucketing.
fn erf(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.3275911 * x.abs());
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t + 0.254829592)
            * t
            * (-x * x).exp();
    y.copysign(x)
}

/// The first rejected (negative score) applicant drawn from the sample
/// distribution.
pub fn rejected_applicant(sc: &Scorecard, seed: u64) -> DataPoint {
    let pool = credit_samples(sc, 1000, 0.3, seed);
    let values = pool
        .rows
        .into_iter()
        .find(|r| sc.features.iter().zip(r).map(|(f, v)| f.coefficient * v).sum::<f64>() + sc.intercept < 0.0)
        .expect("a rejected sample among 1000 draws");
    DataPoint::new(sc, values).expect("matching dimension")
}

/// Random scorecard with mixed-sign coefficients for property tests: up to
/// `max_p` features with up to `max_bins` bins each, some non-actionable.
pub fn random_scorecard<R: Rng>(rng: &mut R, max_p: usize, max_bins: usize, target: TargetType) -> Scorecard {
    let p = rng.random_range(1..=max_p);
    let features = (0..p)
        .map(|i| {
            let b = rng.random_range(1..=max_bins);
            let mut v: Vec<f64> = (0..b)
                .map(|_| (rng.random_range(-2.0..2.0f64) * 100.0).round() / 100.0)
                .collect();
            v.sort_by(f64::total_cmp);
            Feature {
                name: format!("x{i}"),
                coefficient: (rng.random_range(-2.0..2.0f64) * 100.0).round() / 100.0,
                actionable: rng.random_bool(0.85),
                bins: interval_bins(&v, 1.0),
            }
        })
        .collect();
    Scorecard {
        features,
        intercept: (rng.random_range(-1.0..1.0f64) * 100.0).round() / 100.0,
        target_type: target,
    }
}

/// Input point: mostly an existing bin value, sometimes an off-bin value.
pub fn random_point<R: Rng>(rng: &mut R, sc: &Scorecard) -> DataPoint {
    let values = sc
        .features
        .iter()
        .map(|f| {
            if rng.random_bool(0.8) {
                f.bins[rng.random_range(0..f.bins.len())].transform_value
            } else {
                (rng.random_range(-2.0..2.0f64) * 100.0).round() / 100.0
            }
        })
        .collect();
    DataPoint::new(sc, values).expect("matching dimension")
}

/// Random rows in transform space drawn from the bins of each feature.
pub fn random_samples<R: Rng>(rng: &mut R, sc: &Scorecard, n: usize) -> Dataset {
    let rows = (0..n)
        .map(|_| {
            let shared = rng.random_range(0.0..1.0f64);
            sc.features
                .iter()
                .map(|f| {
                    let u = if rng.random_bool(0.5) {
                        shared
                    } else {
                        rng.random_range(0.0..1.0)
                    };
                    f.bins[((u * f.bins.len() as f64) as usize).min(f.bins.len() - 1)].transform_value
                        + rng.random_range(-0.05..0.05)
                })
                .collect()
        })
        .collect();
    Dataset {
        names: sc.features.iter().map(|f| f.name.clone()).collect(),
        rows,
    }
}

/// Random query on `sc` with the given outcome: Θ in 1..=4, random weights
/// on the proximity term, on the closeness term (half the time, with
/// statistics from random samples) and on the gap term when the outcome has
/// one.
pub fn random_query<R: Rng>(rng: &mut R, sc: &Scorecard, outcome: Outcome) -> CfQuery {
    let x = random_point(rng, sc);
    let weights = compute_weights(sc, &x, None, WeightMethod::InverseRange).expect("range weights need no data");
    let mut q = CfQuery::new(x, outcome, weights);
    q.theta = rng.random_range(1..=4);
    let draw = |rng: &mut R| (rng.random_range(0.1..2.0f64) * 100.0).round() / 100.0;
    q.lambdas[0] = draw(rng);
    if rng.random_bool(0.5) {
        let data = random_samples(rng, sc, 40);
        q.stats = Some(compute_gaussian_stats(&data, None).expect("ridge escalation handles random samples"));
        q.lambdas[1] = draw(rng) / 2.0;
    }
    if q.outcome.has_gap_term() {
        q.lambdas[2] = draw(rng);
    }
    q
}
