//! One-dimensional Gaussian mixtures: EM fitting, two-component decision
//! boundaries, and responsibility-based assignment.
//!
//! The E-step runs in log space with a log-sum-exp reduction, so widely
//! separated components cannot underflow. Components whose responsibility
//! mass collapses below 1e-12 are frozen in place (their weight keeps being
//! re-estimated and decays toward zero); that keeps the M-step a proper
//! partial maximization, so the log-likelihood stays non-decreasing, which
//! is asserted on every iteration of every fit.
//!
//! Models are immutable after fitting and always sorted by mean ascending.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GmmError {
    #[error("component count must be 2 or 3, got {0}")]
    BadComponentCount(usize),
    #[error("need at least {needed} samples for k = {k}, got {got}")]
    InsufficientSamples { k: usize, needed: usize, got: usize },
    #[error("degenerate input: all {0} samples are equal")]
    DegenerateInput(usize),
    #[error("sample {index} is not finite")]
    NonFiniteSample { index: usize },
    #[error("no decision boundary: {0}")]
    NoBoundary(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl Component {
    fn log_weighted_density(&self, x: f64) -> f64 {
        if self.weight <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let d = x - self.mean;
        self.weight.ln()
            - 0.5 * (2.0 * std::f64::consts::PI * self.variance).ln()
            - d * d / (2.0 * self.variance)
    }
}

#[derive(Debug, Clone)]
pub struct GmmModel {
    pub components: Vec<Component>,
    /// Log-likelihood after each E-step, in iteration order.
    pub log_likelihood_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct EmOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub variance_floor: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tolerance: 1e-7,
            max_iterations: 500,
            variance_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Init {
    /// Means at evenly spread percentiles (25/75 for k = 2). Falls back to
    /// min/max when the percentiles coincide (heavy class imbalance).
    Auto,
    Means(Vec<f64>),
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[idx]
}

fn initial_means(samples: &[f64], k: usize, init: &Init) -> Result<Vec<f64>, GmmError> {
    match init {
        Init::Means(means) => {
            if means.len() != k {
                return Err(GmmError::BadComponentCount(means.len()));
            }
            Ok(means.clone())
        }
        Init::Auto => {
            let mut sorted = samples.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut means: Vec<f64> = (0..k)
                .map(|i| percentile(&sorted, (2 * i + 1) as f64 / (2 * k) as f64))
                .collect();
            let distinct = means.windows(2).all(|w| w[0] < w[1]);
            if !distinct {
                // Percentile collapse: spread over the observed range instead.
                let lo = sorted[0];
                let hi = sorted[sorted.len() - 1];
                means = (0..k)
                    .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
                    .collect();
            }
            Ok(means)
        }
    }
}

/// Fits a k-component mixture by EM.
pub fn fit_em(
    samples: &[f64],
    k: usize,
    init: Init,
    opts: &EmOptions,
) -> Result<GmmModel, GmmError> {
    if !(2..=3).contains(&k) {
        return Err(GmmError::BadComponentCount(k));
    }
    if samples.len() < 2 * k {
        return Err(GmmError::InsufficientSamples {
            k,
            needed: 2 * k,
            got: samples.len(),
        });
    }
    if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
        return Err(GmmError::NonFiniteSample { index });
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(GmmError::DegenerateInput(samples.len()));
    }

    let n = samples.len() as f64;
    let mean_all = samples.iter().sum::<f64>() / n;
    let var_all = (samples.iter().map(|x| (x - mean_all).powi(2)).sum::<f64>() / n)
        .max(opts.variance_floor);
    let mut components: Vec<Component> = initial_means(samples, k, &init)?
        .into_iter()
        .map(|mean| Component {
            weight: 1.0 / k as f64,
            mean,
            variance: var_all,
        })
        .collect();

    let mut trace: Vec<f64> = Vec::new();
    let mut log_resp = vec![0.0f64; k];
    for _ in 0..opts.max_iterations {
        let mut resp_sum = vec![0.0f64; k];
        let mut resp_x = vec![0.0f64; k];
        let mut resp_xx = vec![0.0f64; k];
        let mut ll = 0.0;
        for &x in samples {
            for (c, comp) in components.iter().enumerate() {
                log_resp[c] = comp.log_weighted_density(x);
            }
            let norm = log_sum_exp(&log_resp);
            ll += norm;
            for c in 0..k {
                let r = (log_resp[c] - norm).exp();
                resp_sum[c] += r;
                resp_x[c] += r * x;
                resp_xx[c] += r * x * x;
            }
        }

        if let Some(&prev) = trace.last() {
            let slack = 1e-9 * ll.abs().max(1.0);
            assert!(
                ll >= prev - slack,
                "EM log-likelihood decreased: {prev} -> {ll}"
            );
            trace.push(ll);
            if ll - prev < opts.tolerance {
                break;
            }
        } else {
            trace.push(ll);
        }

        for c in 0..k {
            components[c].weight = resp_sum[c] / n;
            if resp_sum[c] < 1e-12 {
                continue; // starved: freeze mean and variance in place
            }
            let mean = resp_x[c] / resp_sum[c];
            let variance = (resp_xx[c] / resp_sum[c] - mean * mean).max(opts.variance_floor);
            components[c].mean = mean;
            components[c].variance = variance;
        }
    }

    components.sort_by(|a, b| a.mean.partial_cmp(&b.mean).unwrap());
    let total: f64 = components.iter().map(|c| c.weight).sum();
    for c in &mut components {
        c.weight /= total;
    }
    Ok(GmmModel {
        components,
        log_likelihood_trace: trace,
    })
}

impl GmmModel {
    /// Posterior membership probabilities at x; sums to 1.
    pub fn responsibilities(&self, x: f64) -> Vec<f64> {
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.log_weighted_density(x))
            .collect();
        let norm = log_sum_exp(&logs);
        logs.iter().map(|l| (l - norm).exp()).collect()
    }

    /// Component with the largest weighted density at x; ties go to the
    /// lower-mean component.
    pub fn assign(&self, x: f64) -> usize {
        let mut best = 0;
        let mut best_score = self.components[0].log_weighted_density(x);
        for (c, comp) in self.components.iter().enumerate().skip(1) {
            let score = comp.log_weighted_density(x);
            if score > best_score {
                best = c;
                best_score = score;
            }
        }
        best
    }

    /// Index of the component whose mean is nearest the target.
    pub fn component_nearest(&self, target: f64) -> usize {
        let mut best = 0;
        let mut best_d = (self.components[0].mean - target).abs();
        for (c, comp) in self.components.iter().enumerate().skip(1) {
            let d = (comp.mean - target).abs();
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        best
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.components.iter().enumerate() {
            out.push_str(&format!(
                "component {i}: weight={:.6} mean={:.6} variance={:.6}\n",
                c.weight, c.mean, c.variance
            ));
        }
        out
    }
}

/// The point between the two component means where the weighted densities
/// cross. Solves the quadratic from equating log densities; degenerate
/// quadratics become linear; if no closed-form root lies between the means,
/// falls back to bisection on the log-density difference.
pub fn decision_boundary(model: &GmmModel) -> Result<f64, GmmError> {
    if model.components.len() != 2 {
        return Err(GmmError::NoBoundary(format!(
            "expected 2 components, got {}",
            model.components.len()
        )));
    }
    let (c1, c2) = (&model.components[0], &model.components[1]);
    if c1.mean == c2.mean {
        return Err(GmmError::NoBoundary("components share a mean".into()));
    }
    if c1.weight <= 0.0 || c2.weight <= 0.0 {
        return Err(GmmError::NoBoundary("zero-weight component".into()));
    }
    let (m1, v1, m2, v2) = (c1.mean, c1.variance, c2.mean, c2.variance);
    let a = 1.0 / (2.0 * v2) - 1.0 / (2.0 * v1);
    let b = m1 / v1 - m2 / v2;
    let c = m2 * m2 / (2.0 * v2) - m1 * m1 / (2.0 * v1)
        + (c1.weight / c2.weight).ln()
        + 0.5 * (v2 / v1).ln();

    let inside = |x: f64| x > m1 && x < m2;
    if a.abs() < 1e-12 {
        if b.abs() > 0.0 {
            let x = -c / b;
            if inside(x) {
                return Ok(x);
            }
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let q = -0.5 * (b + b.signum() * sq);
            let roots = if q == 0.0 {
                vec![0.0]
            } else {
                vec![q / a, c / q]
            };
            for x in roots {
                if inside(x) {
                    return Ok(x);
                }
            }
        }
    }

    // Bisection on the signed log-density difference.
    let diff = |x: f64| c1.log_weighted_density(x) - c2.log_weighted_density(x);
    let (mut lo, mut hi) = (m1, m2);
    let (flo, fhi) = (diff(lo), diff(hi));
    if flo.signum() == fhi.signum() {
        return Err(GmmError::NoBoundary(
            "densities do not cross between the means".into(),
        ));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fmid = diff(mid);
        if fmid == 0.0 {
            return Ok(mid);
        }
        if fmid.signum() == flo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
