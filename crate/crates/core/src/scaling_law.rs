//! Loss contraction under parallel streams.
//!
//! A single stream that sees a frame subset follows a biased Chinchilla law
//! `E + A/N^α + B_j`. Averaging `J` streams whose residuals have pairwise
//! correlation `ρ` contracts the capacity term:
//!
//! ```text
//! L(N, J) = E + A/N^α · (1 + (J−1)ρ)/J + B̄(J)
//! ```
//!
//! [`simulate_ce`] checks the closed forms by Monte Carlo and [`fit_params`]
//! recovers the law's parameters from measured losses.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalingError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("need biases for {needed} streams, have {have}")]
    MissingBias { needed: usize, have: usize },
    #[error("infeasible scale: {violations} of {attempts} draws put negative mass on some token")]
    Scale { violations: u64, attempts: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    /// `E`, in nats.
    pub irreducible_entropy: f64,
    /// `A`.
    pub capacity_coeff: f64,
    /// `α`.
    pub capacity_exponent: f64,
    /// `N`.
    pub params: f64,
    /// `ρ` in `[0, 1]`.
    pub correlation: f64,
    /// `B_j` per stream. Empty means no bias.
    #[serde(default)]
    pub biases: Vec<f64>,
}

impl ScalingParams {
    pub fn validate(&self) -> Result<(), ScalingError> {
        let bad = |m: String| Err(ScalingError::InvalidParams(m));
        if !(self.irreducible_entropy.is_finite() && self.irreducible_entropy >= 0.0) {
            return bad(format!("E = {} must be non-negative", self.irreducible_entropy));
        }
        if !(self.capacity_coeff.is_finite() && self.capacity_coeff > 0.0) {
            return bad(format!("A = {} must be positive", self.capacity_coeff));
        }
        if !(self.capacity_exponent.is_finite() && self.capacity_exponent > 0.0) {
            return bad(format!("alpha = {} must be positive", self.capacity_exponent));
        }
        if !(self.params.is_finite() && self.params > 0.0) {
            return bad(format!("N = {} must be positive", self.params));
        }
        if !(0.0..=1.0).contains(&self.correlation) {
            return bad(format!("rho = {} outside [0, 1]", self.correlation));
        }
        if let Some(b) = self.biases.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return bad(format!("bias {b} must be non-negative"));
        }
        Ok(())
    }

    /// `A/N^α`.
    pub fn capacity_term(&self) -> f64 {
        self.capacity_coeff / self.params.powf(self.capacity_exponent)
    }

    /// `B_j`; zero when no biases are given.
    pub fn bias(&self, stream: usize) -> Result<f64, ScalingError> {
        if self.biases.is_empty() {
            return Ok(0.0);
        }
        self.biases.get(stream).copied().ok_or(ScalingError::MissingBias {
            needed: stream + 1,
            have: self.biases.len(),
        })
    }

    /// `B̄(J)`, the mean of the first `J` biases.
    pub fn mean_bias(&self, streams: usize) -> Result<f64, ScalingError> {
        if self.biases.is_empty() {
            return Ok(0.0);
        }
        if self.biases.len() < streams || streams == 0 {
            return Err(ScalingError::MissingBias {
                needed: streams,
                have: self.biases.len(),
            });
        }
        Ok(self.biases[..streams].iter().sum::<f64>() / streams as f64)
    }
}

/// `E + A/N^α + B_j`.
pub fn stream_loss(params: &ScalingParams, stream: usize) -> Result<f64, ScalingError> {
    params.validate()?;
    Ok(params.irreducible_entropy + params.capacity_term() + params.bias(stream)?)
}

/// `(1 + (J−1)ρ)/J`.
pub fn contraction(streams: usize, correlation: f64) -> f64 {
    let j = streams as f64;
    (1.0 + (j - 1.0) * correlation) / j
}

/// `E + A/(N·J^{1/α})^α · (1 + (J−1)ρ) + B̄(J)`.
pub fn vps_loss(params: &ScalingParams, streams: usize) -> Result<f64, ScalingError> {
    params.validate()?;
    if streams == 0 {
        return Err(ScalingError::InvalidParams("J must be at least 1".into()));
    }
    Ok(params.irreducible_entropy
        + params.capacity_term() * contraction(streams, params.correlation)
        + params.mean_bias(streams)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub vocab_size: usize,
    pub samples: u64,
    pub seed: u64,
    pub params: ScalingParams,
}

/// Mean and standard error of one Monte Carlo quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

/// One `(ρ, J)` cell of a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub correlation: f64,
    pub streams: usize,
    /// Closed-form mixture loss.
    pub predicted: f64,
    /// `E` plus the measured excess cross-entropy of the uniform mixture.
    pub empirical: Estimate,
    pub per_stream_predicted: Vec<f64>,
    pub per_stream: Vec<Estimate>,
    /// `E[Δ_j²]` averaged over the `J` streams.
    pub delta_second_moment: Estimate,
    /// Pairwise residual correlation between streams 0 and 1 (absent for `J = 1`).
    pub residual_correlation: Option<Estimate>,
    pub samples: u64,
    pub violations: u64,
}

/// Running mean and sum of squared deviations, mergeable across shards.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, o: &Moments) {
        if o.n == 0.0 {
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n / n;
        self.m2 += o.m2 + d * d * self.n * o.n / n;
        self.n = n;
    }

    fn estimate(&self) -> Estimate {
        let var = if self.n > 1.0 { self.m2 / (self.n - 1.0) } else { 0.0 };
        Estimate {
            mean: self.mean,
            stderr: (var / self.n).sqrt(),
        }
    }
}

const SHARDS: u64 = 64;
const MAX_VIOLATION_RATE: f64 = 0.01;

#[derive(Clone)]
struct CellAcc {
    mixture: Moments,
    per_stream: Vec<Moments>,
    second: Moments,
    corr: Moments,
}

#[derive(Clone)]
struct ShardAcc {
    // indexed [rho][j_index]
    cells: Vec<Vec<CellAcc>>,
    violations: u64,
    attempts: u64,
}

/// Monte Carlo cross-entropy of one `J`-stream mixture at `params.correlation`.
pub fn simulate_ce(spec: &SimSpec, streams: usize) -> Result<SimReport, ScalingError> {
    let mut out = simulate_grid(spec, &[spec.params.correlation], &[streams])?;
    Ok(out.remove(0))
}

/// Simulates every `(ρ, J)` cell from one set of draws.
///
/// Per sample: a true distribution `p ~ Dirichlet(1)` over the vocabulary,
/// equicorrelated Gaussian residuals `ε_j = σ(√ρ g + √(1−ρ) h_j)` centered so
/// that `Σ_v p_v ε_j[v] = 0`, with `σ` chosen so `E[Δ_j²] = 2A/N^α`, stream
/// predictions `p_j = p(1 + Δ_j)` with `Δ_j = −B_j + ε_j`, and a label
/// `y ~ p`. The excess loss `−log(1 + Δ̄_y)` is measured with the zero-mean
/// control variate `ε̄_y` added, which removes its first-order noise.
/// Draws that would put non-positive mass on any token are redrawn and
/// counted; more than 1% of such draws is a scale error.
pub fn simulate_grid(spec: &SimSpec, correlations: &[f64], streams: &[usize]) -> Result<Vec<SimReport>, ScalingError> {
    let p = &spec.params;
    p.validate()?;
    if spec.vocab_size < 2 {
        return Err(ScalingError::InvalidParams("vocabulary needs at least 2 tokens".into()));
    }
    if spec.samples == 0 {
        return Err(ScalingError::InvalidParams("samples must be at least 1".into()));
    }
    if streams.is_empty() || streams.contains(&0) {
        return Err(ScalingError::InvalidParams("stream counts must be at least 1".into()));
    }
    if let Some(r) = correlations.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(ScalingError::InvalidParams(format!("rho = {r} outside [0, 1]")));
    }
    let j_max = *streams.iter().max().expect("non-empty");
    let biases: Vec<f64> = (0..j_max).map(|j| p.bias(j)).collect::<Result<_, _>>()?;
    let capacity = p.capacity_term();
    let vocab = spec.vocab_size;
    let need_shared = correlations.iter().any(|&r| r > 0.0);
    let need_private = correlations.iter().any(|&r| r < 1.0);

    let empty_cell = |j: usize| CellAcc {
        mixture: Moments::default(),
        per_stream: vec![Moments::default(); j],
        second: Moments::default(),
        corr: Moments::default(),
    };
    let empty_shard = ShardAcc {
        cells: correlations
            .iter()
            .map(|_| streams.iter().map(|&j| empty_cell(j)).collect())
            .collect(),
        violations: 0,
        attempts: 0,
    };

    let per_shard = spec.samples / SHARDS;
    let extra = spec.samples % SHARDS;
    let max_violations = ((spec.samples as f64) * MAX_VIOLATION_RATE).ceil() as u64;

    let shards: Vec<ShardAcc> = (0..SHARDS)
        .into_par_iter()
        .map(|shard| {
            let n = per_shard + u64::from(shard < extra);
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(shard);
            let mut acc = empty_shard.clone();
            let mut probs = vec![0.0; vocab];
            let mut g = vec![0.0; vocab];
            let mut h = vec![vec![0.0; vocab]; j_max];
            // centered residual at the label and p-weighted second moment, per rho and stream
            let mut eps_y = vec![vec![0.0; j_max]; correlations.len()];
            let mut eps_sq = vec![vec![0.0; j_max]; correlations.len()];
            let mut cross01 = vec![0.0; correlations.len()];
            let mut done = 0;
            while done < n {
                acc.attempts += 1;
                let mut total = 0.0;
                for x in probs.iter_mut() {
                    *x = rng.sample::<f64, _>(Exp1);
                    total += *x;
                }
                let mut sum_sq = 0.0;
                for x in probs.iter_mut() {
                    *x /= total;
                    sum_sq += *x * *x;
                }
                if need_shared {
                    for x in g.iter_mut() {
                        *x = rng.sample(StandardNormal);
                    }
                }
                if need_private {
                    for row in h.iter_mut() {
                        for x in row.iter_mut() {
                            *x = rng.sample(StandardNormal);
                        }
                    }
                }
                let u: f64 = rng.random();
                let mut y = vocab - 1;
                let mut cum = 0.0;
                for (v, &pv) in probs.iter().enumerate() {
                    cum += pv;
                    if u < cum {
                        y = v;
                        break;
                    }
                }
                // residual scale that makes E[Σ_v p_v ε̃_v²] = 2A/N^α after centering
                let sigma = (2.0 * capacity / (1.0 - sum_sq)).sqrt();

                let mut violated = false;
                for (ri, &rho) in correlations.iter().enumerate() {
                    let a = rho.sqrt();
                    let b = (1.0 - rho).sqrt();
                    for j in 0..j_max {
                        let hj = &h[j];
                        let (mut m, mut s2, mut lo) = (0.0, 0.0, f64::INFINITY);
                        for v in 0..vocab {
                            let e = sigma * (a * g[v] + b * hj[v]);
                            m += probs[v] * e;
                            s2 += probs[v] * e * e;
                            lo = lo.min(e);
                        }
                        if 1.0 - biases[j] + (lo - m) <= 0.0 {
                            violated = true;
                        }
                        eps_y[ri][j] = sigma * (a * g[y] + b * hj[y]) - m;
                        eps_sq[ri][j] = s2 - m * m;
                    }
                    if j_max >= 2 {
                        let (mut m0, mut m1, mut c) = (0.0, 0.0, 0.0);
                        for v in 0..vocab {
                            let e0 = sigma * (a * g[v] + b * h[0][v]);
                            let e1 = sigma * (a * g[v] + b * h[1][v]);
                            m0 += probs[v] * e0;
                            m1 += probs[v] * e1;
                            c += probs[v] * e0 * e1;
                        }
                        cross01[ri] = c - m0 * m1;
                    }
                }
                if violated {
                    acc.violations += 1;
                    if acc.violations > max_violations {
                        break;
                    }
                    continue;
                }
                done += 1;
                for ri in 0..correlations.len() {
                    for (ci, &jn) in streams.iter().enumerate() {
                        let cell = &mut acc.cells[ri][ci];
                        let mut eps_bar = 0.0;
                        let mut delta_bar = 0.0;
                        let mut second = 0.0;
                        for j in 0..jn {
                            let e = eps_y[ri][j];
                            let d = -biases[j] + e;
                            cell.per_stream[j].push(-(1.0 + d).ln() + e);
                            eps_bar += e;
                            delta_bar += d;
                            second += biases[j] * biases[j] + eps_sq[ri][j];
                        }
                        let jf = jn as f64;
                        eps_bar /= jf;
                        delta_bar /= jf;
                        cell.mixture.push(-(1.0 + delta_bar).ln() + eps_bar);
                        cell.second.push(second / jf);
                        if jn >= 2 {
                            cell.corr.push(cross01[ri] / (2.0 * capacity));
                        }
                    }
                }
            }
            acc
        })
        .collect();

    let mut total = empty_shard;
    for s in &shards {
        total.violations += s.violations;
        total.attempts += s.attempts;
        for (tr, sr) in total.cells.iter_mut().zip(&s.cells) {
            for (tc, sc) in tr.iter_mut().zip(sr) {
                tc.mixture.merge(&sc.mixture);
                tc.second.merge(&sc.second);
                tc.corr.merge(&sc.corr);
                for (a, b) in tc.per_stream.iter_mut().zip(&sc.per_stream) {
                    a.merge(b);
                }
            }
        }
    }
    if total.violations as f64 > MAX_VIOLATION_RATE * total.attempts as f64 {
        return Err(ScalingError::Scale {
            violations: total.violations,
            attempts: total.attempts,
        });
    }

    let e = p.irreducible_entropy;
    let shift = |m: &Moments| {
        let est = m.estimate();
        Estimate {
            mean: e + est.mean,
            stderr: est.stderr,
        }
    };
    let mut reports = Vec::with_capacity(correlations.len() * streams.len());
    for (ri, &rho) in correlations.iter().enumerate() {
        let cell_params = ScalingParams {
            correlation: rho,
            biases: biases.clone(),
            ..p.clone()
        };
        for (ci, &jn) in streams.iter().enumerate() {
            let cell = &total.cells[ri][ci];
            reports.push(SimReport {
                correlation: rho,
                streams: jn,
                predicted: vps_loss(&cell_params, jn)?,
                empirical: shift(&cell.mixture),
                per_stream_predicted: (0..jn).map(|j| stream_loss(&cell_params, j)).collect::<Result<_, _>>()?,
                per_stream: cell.per_stream.iter().map(shift).collect(),
                delta_second_moment: cell.second.estimate(),
                residual_correlation: (jn >= 2).then(|| cell.corr.estimate()),
                samples: spec.samples,
                violations: total.violations,
            });
        }
    }
    Ok(reports)
}

/// One measured loss at parameter count `N` with `J` streams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub params: f64,
    pub streams: usize,
    pub loss: f64,
}

/// The five quantities the closed form depends on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawParams {
    pub irreducible_entropy: f64,
    pub capacity_coeff: f64,
    pub capacity_exponent: f64,
    pub correlation: f64,
    pub mean_bias: f64,
}

impl LawParams {
    pub fn predict(&self, params: f64, streams: usize) -> f64 {
        self.irreducible_entropy
            + self.capacity_coeff / params.powf(self.capacity_exponent) * contraction(streams, self.correlation)
            + self.mean_bias
    }

    /// Law parameters of a [`ScalingParams`] at its first `J` biases.
    pub fn from_scaling(p: &ScalingParams, streams: usize) -> Result<Self, ScalingError> {
        Ok(Self {
            irreducible_entropy: p.irreducible_entropy,
            capacity_coeff: p.capacity_coeff,
            capacity_exponent: p.capacity_exponent,
            correlation: p.correlation,
            mean_bias: p.mean_bias(streams)?,
        })
    }
}

/// Which parameters are held at their template value during a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FixedFields {
    #[serde(default)]
    pub irreducible_entropy: bool,
    #[serde(default)]
    pub capacity_coeff: bool,
    #[serde(default)]
    pub capacity_exponent: bool,
    #[serde(default)]
    pub correlation: bool,
    #[serde(default)]
    pub mean_bias: bool,
}

impl FixedFields {
    fn mask(&self) -> [bool; 5] {
        [
            self.irreducible_entropy,
            self.capacity_coeff,
            self.capacity_exponent,
            self.correlation,
            self.mean_bias,
        ]
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("{points} data points cannot determine {free} free parameters")]
    TooFewPoints { points: usize, free: usize },
    #[error("degenerate fit: normal-matrix condition number {condition:.3e}; fix more parameters or add points that vary N and J")]
    Degenerate { condition: f64 },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("fit did not converge to a finite optimum")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub params: LawParams,
    /// Measured minus predicted, in input order.
    pub residuals: Vec<f64>,
    pub rss: f64,
    /// Condition number of the normal matrix at the optimum.
    pub condition: f64,
    pub iterations: usize,
}

const MAX_CONDITION: f64 = 1e12;
const MAX_ITERATIONS: usize = 1000;
const RHO_STARTS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

// internal coordinates: [E, ln A, alpha, rho, B̄]
fn to_law(theta: &[f64; 5]) -> LawParams {
    LawParams {
        irreducible_entropy: theta[0],
        capacity_coeff: theta[1].exp(),
        capacity_exponent: theta[2],
        correlation: theta[3],
        mean_bias: theta[4],
    }
}

fn project(theta: &mut [f64; 5]) {
    theta[0] = theta[0].max(0.0);
    theta[2] = theta[2].max(1e-9);
    theta[3] = theta[3].clamp(0.0, 1.0);
    theta[4] = theta[4].max(0.0);
}

fn residuals(points: &[LossPoint], theta: &[f64; 5]) -> Vec<f64> {
    let law = to_law(theta);
    points.iter().map(|pt| pt.loss - law.predict(pt.params, pt.streams)).collect()
}

fn jacobian(points: &[LossPoint], theta: &[f64; 5], free: &[usize]) -> DMatrix<f64> {
    let a = theta[1].exp();
    DMatrix::from_fn(points.len(), free.len(), |i, c| {
        let pt = &points[i];
        let cap = a / pt.params.powf(theta[2]);
        let d = contraction(pt.streams, theta[3]);
        let j = pt.streams as f64;
        match free[c] {
            0 | 4 => 1.0,
            1 => cap * d,
            2 => -pt.params.ln() * cap * d,
            _ => cap * (j - 1.0) / j,
        }
    })
}

fn condition_number(jac: &DMatrix<f64>) -> f64 {
    // column scaling keeps the diagnostic about collinearity, not units
    let mut scaled = jac.clone();
    for mut col in scaled.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
    }
    let sv = scaled.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        (max / min).powi(2)
    }
}

fn levenberg_marquardt(points: &[LossPoint], start: [f64; 5], free: &[usize]) -> ([f64; 5], f64, usize) {
    let mut theta = start;
    project(&mut theta);
    let mut r = residuals(points, &theta);
    let mut rss: f64 = r.iter().map(|x| x * x).sum();
    let mut lambda = 1e-3;
    let mut iters = 0;
    while iters < MAX_ITERATIONS {
        iters += 1;
        let jac = jacobian(points, &theta, free);
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for d in 0..free.len() {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&g) else {
                lambda *= 10.0;
                continue;
            };
            let mut cand = theta;
            for (c, &k) in free.iter().enumerate() {
                cand[k] += step[c];
            }
            project(&mut cand);
            let cr = residuals(points, &cand);
            let crss: f64 = cr.iter().map(|x| x * x).sum();
            if crss.is_finite() && crss <= rss {
                let shrink = rss - crss;
                let moved = free.iter().map(|&k| (cand[k] - theta[k]).abs()).fold(0.0, f64::max);
                theta = cand;
                r = cr;
                rss = crss;
                lambda = (lambda / 10.0).max(1e-12);
                improved = shrink > 1e-30 * rss.max(1e-300) || moved > 1e-15;
                break;
            }
            lambda *= 10.0;
        }
        if !improved || rss == 0.0 {
            break;
        }
    }
    (theta, rss, iters)
}

/// Least-squares fit of the closed form to measured losses.
///
/// Fixed fields keep their `template` values. The optimizer is a projected
/// Levenberg-Marquardt run from deterministic starts (`E = 0.9·min(loss)`,
/// `α = 1`, `ρ` on a grid, `A` by linear least squares), keeping the best.
pub fn fit_params(points: &[LossPoint], template: &LawParams, fixed: &FixedFields) -> Result<Fit, FitError> {
    if let Some(pt) = points
        .iter()
        .find(|pt| !(pt.params.is_finite() && pt.params > 0.0 && pt.streams > 0 && pt.loss.is_finite()))
    {
        return Err(FitError::InvalidData(format!("{pt:?}")));
    }
    let mask = fixed.mask();
    let free: Vec<usize> = (0..5).filter(|&k| !mask[k]).collect();
    if points.len() < free.len() {
        return Err(FitError::TooFewPoints {
            points: points.len(),
            free: free.len(),
        });
    }
    let base = [
        template.irreducible_entropy,
        template.capacity_coeff.max(f64::MIN_POSITIVE).ln(),
        template.capacity_exponent,
        template.correlation,
        template.mean_bias,
    ];
    if free.is_empty() {
        let r = residuals(points, &base);
        return Ok(Fit {
            params: to_law(&base),
            rss: r.iter().map(|x| x * x).sum(),
            residuals: r,
            condition: 1.0,
            iterations: 0,
        });
    }

    let min_loss = points.iter().map(|p| p.loss).fold(f64::INFINITY, f64::min);
    let rho_starts: &[f64] = if mask[3] { &[f64::NAN] } else { &RHO_STARTS };
    let mut best: Option<([f64; 5], f64, usize)> = None;
    for &rho0 in rho_starts {
        let mut start = base;
        if !mask[0] {
            start[0] = 0.9 * min_loss;
        }
        if !mask[2] {
            start[2] = 1.0;
        }
        if !mask[3] {
            start[3] = rho0;
        }
        if !mask[1] {
            // A by linear least squares given the other starting values
            let (mut num, mut den) = (0.0, 0.0);
            for pt in points {
                let f = pt.params.powf(-start[2]) * contraction(pt.streams, start[3]);
                num += f * (pt.loss - start[0] - start[4]);
                den += f * f;
            }
            let a0 = if den > 0.0 && num > 0.0 { num / den } else { 1.0 };
            start[1] = a0.ln();
        }
        let (theta, rss, iters) = levenberg_marquardt(points, start, &free);
        if rss.is_finite() && best.as_ref().is_none_or(|b| rss < b.1) {
            best = Some((theta, rss, iters));
        }
    }
    let (theta, rss, iterations) = best.ok_or(FitError::NonFinite)?;
    let condition = condition_number(&jacobian(points, &theta, &free));
    if !(condition.is_finite() && condition < MAX_CONDITION) {
        return Err(FitError::Degenerate { condition });
    }
    Ok(Fit {
        params: to_law(&theta),
        residuals: residuals(points, &theta),
        rss,
        condition,
        iterations,
    })
}
