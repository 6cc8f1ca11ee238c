//! Closed-form values the Monte Carlo estimators are compared with.

use statrs::distribution::{ContinuousCDF, Discrete, DiscreteCDF, Normal, Poisson};

use crate::model::MotionModel;
use crate::numeric::CompensatedSum;

/// `P(|N/t − target| < ε)` for `N ~ Poisson(mean)`, with the same strict
/// inequality as the birth-rate indicator.
pub fn poisson_window(mean: f64, t: f64, target: f64, epsilon: f64) -> f64 {
    if mean <= 0.0 {
        return f64::from(u8::from(target.abs() < epsilon));
    }
    let pois = Poisson::new(mean).expect("positive mean");
    let hi = ((target + epsilon) * t).ceil().max(0.0) as u64;
    (0..=hi)
        .filter(|&k| (k as f64 / t - target).abs() < epsilon)
        .map(|k| pois.pmf(k))
        .sum()
}

/// `P(N ≤ k)` for `N ~ Poisson(mean)`.
pub fn poisson_cdf(mean: f64, k: u32) -> f64 {
    if mean <= 0.0 {
        return 1.0;
    }
    Poisson::new(mean).expect("positive mean").cdf(u64::from(k))
}

/// `P(|X/t − speed| < ε)` for `X ~ N(x0 + drift·t, σ²t)`.
pub fn gaussian_window(x0: f64, drift: f64, sigma: f64, t: f64, speed: f64, epsilon: f64) -> f64 {
    let sd = sigma * t.sqrt();
    let centre = x0 + drift * t;
    let normal = Normal::new(centre, sd).expect("positive sd");
    normal.cdf((speed + epsilon) * t) - normal.cdf((speed - epsilon) * t)
}

/// Expected (★) for the birth-rate indicator under the original measure, for
/// binary branching at constant rate `beta` with `f` the birth-rate indicator:
/// `E[#{u ∈ N(t) : |n_u/t − target| < ε} / |N(t)|]`.
///
/// `|N(t)|` is geometric with mean `e^{βt}`, and given `|N(t)| = n` the
/// generation of a uniformly chosen particle is `Σ_{k=2}^{n} Bernoulli(2/k)`
/// (the tree shape is the Yule shape regardless of the branch times).
pub fn yule_uniform_window(beta: f64, t: f64, target: f64, epsilon: f64) -> f64 {
    let in_window = |d: usize| (d as f64 / t - target).abs() < epsilon;
    let p = (-beta * t).exp();
    if p >= 1.0 {
        return f64::from(u8::from(in_window(0)));
    }
    let q = 1.0 - p;
    // depth law of a uniform particle; dist[i] = P(D = lo + i)
    let mut dist = vec![1.0];
    let mut lo = 0usize;
    // q^{n-1} = P(N > n - 1)
    let mut q_pow = 1.0;
    let mut total = CompensatedSum::default();
    let mut n = 1u64;
    while q_pow > 1e-16 {
        if n >= 2 {
            let s = 2.0 / n as f64;
            dist.push(0.0);
            for i in (1..dist.len()).rev() {
                dist[i] = dist[i] * (1.0 - s) + dist[i - 1] * s;
            }
            dist[0] *= 1.0 - s;
            while dist.len() > 1 && dist[0] < 1e-30 {
                dist.remove(0);
                lo += 1;
            }
            while dist.len() > 1 && *dist.last().unwrap() < 1e-30 {
                dist.pop();
            }
        }
        let hit: f64 = dist
            .iter()
            .enumerate()
            .filter(|(i, _)| in_window(lo + i))
            .map(|(_, v)| v)
            .sum();
        total.add(p * q_pow * hit);
        q_pow *= q;
        n += 1;
    }
    total.value()
}

/// `Σ_x h(x) π(x)` for the stationary law `π` of a two-state chain.
pub fn stationary_mean(motion: &MotionModel, h: &[f64]) -> Option<f64> {
    let pi = motion.stationary_law()?;
    Some(pi.iter().zip(h).map(|(p, v)| p * v).sum())
}
