//! Exact stochastic simulation of the lattice process and of the drifted
//! telegrapher process, with mergeable replica statistics.
//!
//! Replica `i` draws from the ChaCha8 stream `i` of the run seed, and
//! replicas are grouped into fixed batches, so every result depends only on
//! `(model, horizon, replicas, seed)` and not on how batches are scheduled.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{ContinuumModel, LatticeModel, Model};
use crate::stats::{self, LogSumExp};
use crate::transforms;

/// Random stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Law of the initial velocity.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialVelocity {
    #[default]
    Uniform,
    Stationary,
    /// Always start with the velocity at this index.
    Index(usize),
}

/// Position and velocity index at the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Endpoint {
    pub position: Vec<f64>,
    pub velocity: usize,
}

/// A recorded trajectory; entry `k` holds the state right after event `k`
/// (entry 0 is the initial state).
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub times: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<usize>,
    pub horizon: f64,
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn pick(cum: &[f64], u: f64) -> usize {
    let x = u * cum[cum.len() - 1];
    cum.iter().position(|&c| x < c).unwrap_or(cum.len() - 1)
}

fn initial_table(init: &InitialVelocity, n: usize, stationary: impl FnOnce() -> Result<Vec<f64>>) -> Result<Vec<f64>> {
    match init {
        InitialVelocity::Uniform => Ok(cumulative((0..n).map(|_| 1.0))),
        InitialVelocity::Stationary => Ok(cumulative(stationary()?.into_iter())),
        InitialVelocity::Index(i) if *i < n => {
            Ok(cumulative((0..n).map(|k| if k == *i { 1.0 } else { 0.0 })))
        }
        InitialVelocity::Index(i) => Err(Error::Domain(format!(
            "initial velocity index {i} out of range for {n} velocities"
        ))),
    }
}

fn check_horizon(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("horizon must be nonnegative, got {t}")));
    }
    Ok(())
}

/// Gillespie sampler for the lattice model: one exponential clock at the
/// total rate `lambda + passive + gamma * exit(v)`, then a categorical
/// choice between transport, passive jump and flip.
#[derive(Debug, Clone)]
pub struct LatticeSampler {
    lambda: f64,
    passive: f64,
    velocities: Vec<Vec<i64>>,
    flip_exit: Vec<f64>,
    flips: Vec<Vec<f64>>,
    jumps: Vec<Vec<i64>>,
    jump_cum: Vec<f64>,
    initial: Vec<f64>,
}

impl LatticeSampler {
    pub fn new(model: &LatticeModel, initial: &InitialVelocity) -> Result<Self> {
        let chain = model.velocities();
        let n = chain.len();
        Ok(LatticeSampler {
            lambda: model.lambda(),
            passive: model.passive_rate(),
            velocities: chain.velocities().to_vec(),
            flip_exit: (0..n).map(|i| model.gamma() * chain.exit_rate(i)).collect(),
            flips: (0..n).map(|i| cumulative(chain.rates().row(i).iter().copied())).collect(),
            jumps: model.kernel().support().iter().map(|(z, _)| z.clone()).collect(),
            jump_cum: cumulative(model.kernel().support().iter().map(|(_, p)| *p)),
            initial: initial_table(initial, n, || {
                Ok(chain.stationary_measure()?.weights().to_vec())
            })?,
        })
    }

    pub fn dimension(&self) -> usize {
        self.velocities[0].len()
    }

    fn step<R: Rng>(&self, x: &mut [i64], v: &mut usize, rng: &mut R) {
        let total = self.lambda + self.passive + self.flip_exit[*v];
        let u = rng.random::<f64>() * total;
        if u < self.lambda {
            for (xi, vi) in x.iter_mut().zip(&self.velocities[*v]) {
                *xi += vi;
            }
        } else if u < self.lambda + self.passive {
            let z = &self.jumps[pick(&self.jump_cum, rng.random())];
            for (xi, zi) in x.iter_mut().zip(z) {
                *xi += zi;
            }
        } else {
            *v = pick(&self.flips[*v], rng.random());
        }
    }

    fn run<R: Rng>(&self, t: f64, rng: &mut R, mut record: impl FnMut(f64, &[i64], usize)) -> (Vec<i64>, usize) {
        let mut x = vec![0i64; self.dimension()];
        let mut v = pick(&self.initial, rng.random());
        record(0.0, &x, v);
        let mut now = 0.0;
        loop {
            let total = self.lambda + self.passive + self.flip_exit[v];
            if total <= 0.0 {
                break;
            }
            let wait: f64 = Exp1.sample(rng);
            now += wait / total;
            if now > t {
                break;
            }
            self.step(&mut x, &mut v, rng);
            record(now, &x, v);
        }
        (x, v)
    }

    pub fn endpoint<R: Rng>(&self, t: f64, rng: &mut R) -> Endpoint {
        let (x, v) = self.run(t, rng, |_, _, _| {});
        Endpoint {
            position: x.into_iter().map(|c| c as f64).collect(),
            velocity: v,
        }
    }

    /// Lattice endpoint with integer coordinates.
    pub fn lattice_endpoint<R: Rng>(&self, t: f64, rng: &mut R) -> (Vec<i64>, usize) {
        self.run(t, rng, |_, _, _| {})
    }

    pub fn path<R: Rng>(&self, t: f64, rng: &mut R) -> Path {
        let mut path = Path {
            times: Vec::new(),
            positions: Vec::new(),
            velocities: Vec::new(),
            horizon: t,
        };
        self.run(t, rng, |s, x, v| {
            path.times.push(s);
            path.positions.push(x.iter().map(|&c| c as f64).collect());
            path.velocities.push(v);
        });
        path
    }
}

/// Exact sampler for the telegrapher process: flips form a rate-`gamma`
/// Poisson stream and between flips the position moves by
/// `lambda v dt + 2 kappa E dt + sqrt(2 kappa dt) G`.
///
/// Velocity index 0 is `+1`, index 1 is `-1`.
#[derive(Debug, Clone)]
pub struct TelegrapherSampler {
    model: ContinuumModel,
    initial: Vec<f64>,
}

impl TelegrapherSampler {
    pub fn new(model: &ContinuumModel, initial: &InitialVelocity) -> Result<Self> {
        Ok(TelegrapherSampler {
            model: *model,
            initial: initial_table(initial, 2, || Ok(vec![0.5, 0.5]))?,
        })
    }

    fn sign(v: usize) -> f64 {
        if v == 0 { 1.0 } else { -1.0 }
    }

    /// Flip times up to `t` and the time integral of the velocity.
    fn run<R: Rng>(&self, t: f64, rng: &mut R, mut segment: impl FnMut(f64, f64, usize)) -> (f64, usize) {
        let mut v = pick(&self.initial, rng.random());
        let mut now = 0.0;
        let mut integral = 0.0;
        loop {
            let wait: f64 = Exp1.sample(rng);
            let wait = wait / self.model.gamma();
            let dt = wait.min(t - now);
            segment(now, dt, v);
            integral += Self::sign(v) * dt;
            now += wait;
            if now >= t {
                return (integral, v);
            }
            v = 1 - v;
        }
    }

    pub fn endpoint<R: Rng>(&self, t: f64, rng: &mut R) -> Endpoint {
        let (integral, v) = self.run(t, rng, |_, _, _| {});
        // the Gaussian increments of all flip intervals add up to one
        // Gaussian of variance 2 kappa t
        let g: f64 = StandardNormal.sample(rng);
        let m = &self.model;
        let x = m.lambda() * integral + m.drift() * t + (2.0 * m.kappa() * t).sqrt() * g;
        Endpoint {
            position: vec![x],
            velocity: v,
        }
    }

    pub fn path<R: Rng>(&self, t: f64, rng: &mut R) -> Path {
        let m = self.model;
        let mut segments = Vec::new();
        let (_, last) = self.run(t, rng, |s, dt, v| segments.push((s, dt, v)));
        let mut path = Path {
            times: Vec::with_capacity(segments.len() + 1),
            positions: Vec::with_capacity(segments.len() + 1),
            velocities: Vec::with_capacity(segments.len() + 1),
            horizon: t,
        };
        let mut x = 0.0;
        for &(s, dt, v) in &segments {
            path.times.push(s);
            path.positions.push(vec![x]);
            path.velocities.push(v);
            let g: f64 = StandardNormal.sample(rng);
            x += m.lambda() * Self::sign(v) * dt + m.drift() * dt + (2.0 * m.kappa() * dt).sqrt() * g;
        }
        path.times.push(t);
        path.positions.push(vec![x]);
        path.velocities.push(last);
        path
    }
}

/// Sampler for either model.
#[derive(Debug, Clone)]
pub enum Sampler {
    Lattice(LatticeSampler),
    Telegrapher(TelegrapherSampler),
}

impl Sampler {
    pub fn new(model: &Model, initial: &InitialVelocity) -> Result<Self> {
        Ok(match model {
            Model::Lattice(m) => Sampler::Lattice(LatticeSampler::new(m, initial)?),
            Model::Continuum(m) => Sampler::Telegrapher(TelegrapherSampler::new(m, initial)?),
        })
    }

    pub fn dimension(&self) -> usize {
        match self {
            Sampler::Lattice(s) => s.dimension(),
            Sampler::Telegrapher(_) => 1,
        }
    }

    pub fn endpoint<R: Rng>(&self, t: f64, rng: &mut R) -> Endpoint {
        match self {
            Sampler::Lattice(s) => s.endpoint(t, rng),
            Sampler::Telegrapher(s) => s.endpoint(t, rng),
        }
    }

    pub fn path<R: Rng>(&self, t: f64, rng: &mut R) -> Path {
        match self {
            Sampler::Lattice(s) => s.path(t, rng),
            Sampler::Telegrapher(s) => s.path(t, rng),
        }
    }
}

/// One endpoint of the lattice model, drawn from stream 0 of `seed`.
pub fn simulate_lattice(model: &LatticeModel, t: f64, seed: u64) -> Result<(Vec<i64>, usize)> {
    check_horizon(t)?;
    let s = LatticeSampler::new(model, &InitialVelocity::Uniform)?;
    Ok(s.lattice_endpoint(t, &mut stream_rng(seed, 0)))
}

/// One endpoint of the telegrapher process, drawn from stream 0 of `seed`.
pub fn simulate_telegrapher(model: &ContinuumModel, t: f64, seed: u64) -> Result<(f64, i8)> {
    check_horizon(t)?;
    let s = TelegrapherSampler::new(model, &InitialVelocity::Uniform)?;
    let e = s.endpoint(t, &mut stream_rng(seed, 0));
    Ok((e.position[0], if e.velocity == 0 { 1 } else { -1 }))
}

/// What a simulation run computes.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub horizon: f64,
    pub replicas: usize,
    pub seed: u64,
    /// Tilts for which `log mean exp <alpha, X_t>` is accumulated.
    pub alphas: Vec<Vec<f64>>,
    pub initial: InitialVelocity,
    /// Replica `i` uses stream `stream_offset + i`.
    pub stream_offset: u64,
}

impl SimulationConfig {
    pub fn new(horizon: f64, replicas: usize, seed: u64) -> Self {
        SimulationConfig {
            horizon,
            replicas,
            seed,
            alphas: Vec::new(),
            initial: InitialVelocity::Uniform,
            stream_offset: 0,
        }
    }

    /// `floor(sqrt(N))` batches of equal size (the last may be shorter).
    pub fn batch_size(&self) -> usize {
        let k = ((self.replicas as f64).sqrt().floor() as usize).max(1);
        self.replicas.div_ceil(k).max(1)
    }

    pub fn batches(&self) -> usize {
        self.replicas.div_ceil(self.batch_size())
    }

    pub fn batch_range(&self, k: usize) -> core::ops::Range<usize> {
        let b = self.batch_size();
        (k * b).min(self.replicas)..((k + 1) * b).min(self.replicas)
    }

    /// Checks the horizon, the replica count and the tilt dimensions.
    pub fn validate(&self, dimension: usize) -> Result<()> {
        check_horizon(self.horizon)?;
        if self.replicas == 0 {
            return Err(Error::Domain("at least one replica is needed".into()));
        }
        if let Some(a) = self.alphas.iter().find(|a| a.len() != dimension) {
            return Err(Error::DimensionMismatch {
                expected: dimension,
                found: a.len(),
            });
        }
        Ok(())
    }
}

/// Sums over one batch of replicas.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub index: usize,
    pub count: u64,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
    pub tilts: Vec<LogSumExp>,
}

/// Mergeable per-batch statistics of endpoints.
///
/// Totals are always formed by folding batches in index order, so merging
/// is associative and commutative and the result does not depend on how
/// batches were grouped.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaStats {
    dimension: usize,
    alphas: Vec<Vec<f64>>,
    batches: Vec<BatchStats>,
}

impl ReplicaStats {
    pub fn empty(dimension: usize, alphas: &[Vec<f64>]) -> Self {
        ReplicaStats {
            dimension,
            alphas: alphas.to_vec(),
            batches: Vec::new(),
        }
    }

    /// Statistics of a single batch from raw endpoints.
    pub fn from_endpoints(index: usize, alphas: &[Vec<f64>], endpoints: &[Endpoint]) -> Self {
        let dimension = endpoints.first().map_or(alphas.first().map_or(1, Vec::len), |e| e.position.len());
        let mut b = BatchStats {
            index,
            count: 0,
            sum: vec![0.0; dimension],
            sum_sq: vec![0.0; dimension],
            tilts: vec![LogSumExp::new(); alphas.len()],
        };
        for e in endpoints {
            b.count += 1;
            for (k, &x) in e.position.iter().enumerate() {
                b.sum[k] += x;
                b.sum_sq[k] += x * x;
            }
            for (acc, a) in b.tilts.iter_mut().zip(alphas) {
                acc.push(a.iter().zip(&e.position).map(|(a, x)| a * x).sum());
            }
        }
        ReplicaStats {
            dimension,
            alphas: alphas.to_vec(),
            batches: vec![b],
        }
    }

    pub fn merge(&mut self, other: ReplicaStats) {
        for b in other.batches {
            let pos = self.batches.partition_point(|x| x.index < b.index);
            self.batches.insert(pos, b);
        }
    }

    pub fn batches(&self) -> &[BatchStats] {
        &self.batches
    }

    pub fn alphas(&self) -> &[Vec<f64>] {
        &self.alphas
    }

    pub fn count(&self) -> u64 {
        self.batches.iter().map(|b| b.count).sum()
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.count() as f64;
        (0..self.dimension)
            .map(|k| self.batches.iter().map(|b| b.sum[k]).sum::<f64>() / n)
            .collect()
    }

    /// Per-coordinate sample variance (`N - 1` normalisation).
    pub fn variance(&self) -> Vec<f64> {
        let n = self.count() as f64;
        let mean = self.mean();
        (0..self.dimension)
            .map(|k| {
                let ss: f64 = self.batches.iter().map(|b| b.sum_sq[k]).sum();
                (ss - n * mean[k] * mean[k]) / (n - 1.0)
            })
            .collect()
    }

    /// Batch-means standard errors of the mean and of the variance per
    /// coordinate, both about the pooled mean.
    #[allow(clippy::needless_range_loop)]
    pub fn batch_errors(&self) -> (Vec<f64>, Vec<f64>) {
        let mean = self.mean();
        let mut mean_se = Vec::with_capacity(self.dimension);
        let mut var_se = Vec::with_capacity(self.dimension);
        for k in 0..self.dimension {
            let means: Vec<f64> = self
                .batches
                .iter()
                .map(|b| b.sum[k] / b.count as f64)
                .collect();
            let vars: Vec<f64> = self
                .batches
                .iter()
                .map(|b| {
                    let c = b.count as f64;
                    (b.sum_sq[k] - 2.0 * mean[k] * b.sum[k] + c * mean[k] * mean[k]) / c
                })
                .collect();
            mean_se.push(batch_stderr(&self.batches, &means));
            var_se.push(batch_stderr(&self.batches, &vars));
        }
        (mean_se, var_se)
    }

    /// `(log mean exp <alpha, X>, jackknife stderr over batches, ESS)` per tilt.
    pub fn tilt_estimates(&self) -> Vec<(f64, f64, f64)> {
        (0..self.alphas.len())
            .map(|j| {
                let accs: Vec<LogSumExp> = self.batches.iter().map(|b| b.tilts[j]).collect();
                let (est, se) = stats::jackknife_log_mean(&accs);
                let mut all = LogSumExp::new();
                accs.iter().for_each(|a| all.merge(a));
                (est, se, all.effective_sample_size())
            })
            .collect()
    }
}

/// Count-weighted standard error of batch values.
fn batch_stderr(batches: &[BatchStats], values: &[f64]) -> f64 {
    let k = values.len();
    if k < 2 {
        return f64::INFINITY;
    }
    let total: f64 = batches.iter().map(|b| b.count as f64).sum();
    let mean: f64 = batches.iter().zip(values).map(|(b, v)| b.count as f64 * v).sum::<f64>() / total;
    let ss: f64 = batches
        .iter()
        .zip(values)
        .map(|(b, v)| b.count as f64 * (v - mean) * (v - mean))
        .sum();
    (ss / total / (k as f64 - 1.0)).sqrt()
}

/// Endpoints of batch `k`.
pub fn batch_endpoints(sampler: &Sampler, config: &SimulationConfig, k: usize) -> Vec<Endpoint> {
    config
        .batch_range(k)
        .map(|i| {
            let mut rng = stream_rng(config.seed, config.stream_offset + i as u64);
            sampler.endpoint(config.horizon, &mut rng)
        })
        .collect()
}

/// Statistics of batch `k`; batches may be run in any order and merged.
pub fn run_batch(sampler: &Sampler, config: &SimulationConfig, k: usize) -> ReplicaStats {
    ReplicaStats::from_endpoints(k, &config.alphas, &batch_endpoints(sampler, config, k))
}

/// Sequential driver over all batches.
pub fn run_replicas(model: &Model, config: &SimulationConfig) -> Result<ReplicaStats> {
    let sampler = Sampler::new(model, &config.initial)?;
    config.validate(sampler.dimension())?;
    let mut stats = ReplicaStats::empty(sampler.dimension(), &config.alphas);
    for k in 0..config.batches() {
        stats.merge(run_batch(&sampler, config, k));
    }
    Ok(stats)
}

/// All endpoints in replica order.
pub fn endpoints(model: &Model, config: &SimulationConfig) -> Result<Vec<Endpoint>> {
    let sampler = Sampler::new(model, &config.initial)?;
    config.validate(sampler.dimension())?;
    Ok((0..config.batches())
        .flat_map(|k| batch_endpoints(&sampler, config, k))
        .collect())
}

/// Smallest replica count accepted by the estimators.
pub const MIN_REPLICAS: usize = 100;

/// Empirical diffusion constants and velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionEstimate {
    /// Per-coordinate `Var(X_t) / t`.
    pub sigma2: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Per-coordinate `mean(X_t) / t`.
    pub velocity: Vec<f64>,
    pub velocity_stderr: Vec<f64>,
    pub replicas: usize,
}

/// Reads a diffusion estimate off accumulated statistics.
pub fn diffusion_from_stats(stats: &ReplicaStats, t: f64) -> Result<DiffusionEstimate> {
    let n = stats.count() as usize;
    if n < MIN_REPLICAS {
        return Err(Error::Statistical(format!(
            "{n} replicas; at least {MIN_REPLICAS} are needed"
        )));
    }
    if !(t > 0.0) {
        return Err(Error::Domain("diffusion estimate needs a positive horizon".into()));
    }
    let (mean_se, var_se) = stats.batch_errors();
    Ok(DiffusionEstimate {
        sigma2: stats.variance().iter().map(|v| v / t).collect(),
        stderr: var_se.iter().map(|v| v / t).collect(),
        velocity: stats.mean().iter().map(|m| m / t).collect(),
        velocity_stderr: mean_se.iter().map(|m| m / t).collect(),
        replicas: n,
    })
}

pub fn estimate_diffusion(model: &Model, t: f64, n: usize, seed: u64) -> Result<DiffusionEstimate> {
    if n < MIN_REPLICAS {
        return Err(Error::Statistical(format!(
            "{n} replicas; at least {MIN_REPLICAS} are needed"
        )));
    }
    let stats = run_replicas(model, &SimulationConfig::new(t, n, seed))?;
    diffusion_from_stats(&stats, t)
}

/// Empirical scaled cumulant generating function at one tilt.
#[derive(Debug, Clone, PartialEq)]
pub struct ScgfPoint {
    pub alpha: Vec<f64>,
    /// `(1/t) log mean exp <alpha, X_t>`.
    pub estimate: f64,
    pub stderr: f64,
    /// Same quantity at horizon `2t` from independent replicas.
    pub estimate_2t: f64,
    pub stderr_2t: f64,
    /// `2 |F(t) - F(2t)|`, a bound on the `O(1/t)` bias at horizon `t`.
    pub bias_bound: f64,
    /// Smaller of the two effective sample sizes.
    pub effective_sample_size: f64,
    /// False when the effective sample size falls below
    /// [`SCGF_MIN_ESS_FRACTION`] of the replicas.
    pub reliable: bool,
}

/// Effective-sample-size threshold as a fraction of the replica count.
pub const SCGF_MIN_ESS_FRACTION: f64 = 0.01;

/// Combines runs at `t` and `2t` into SCGF points.
pub fn scgf_from_stats(at_t: &ReplicaStats, at_2t: &ReplicaStats, t: f64) -> Result<Vec<ScgfPoint>> {
    let n = at_t.count().min(at_2t.count()) as f64;
    if !(t > 0.0) {
        return Err(Error::Domain("SCGF estimate needs a positive horizon".into()));
    }
    let a = at_t.tilt_estimates();
    let b = at_2t.tilt_estimates();
    Ok(at_t
        .alphas()
        .iter()
        .zip(a.iter().zip(&b))
        .map(|(alpha, (&(e1, s1, ess1), &(e2, s2, ess2)))| {
            let (f1, f2) = (e1 / t, e2 / (2.0 * t));
            let ess = ess1.min(ess2);
            ScgfPoint {
                alpha: alpha.clone(),
                estimate: f1,
                stderr: s1 / t,
                estimate_2t: f2,
                stderr_2t: s2 / (2.0 * t),
                bias_bound: 2.0 * (f1 - f2).abs(),
                effective_sample_size: ess,
                reliable: ess >= SCGF_MIN_ESS_FRACTION * n,
            }
        })
        .collect())
}

/// Configurations of the two horizons used by [`estimate_scgf`]; the `2t`
/// run uses replica streams `N..2N`.
pub fn scgf_configs(alphas: &[Vec<f64>], t: f64, n: usize, seed: u64) -> (SimulationConfig, SimulationConfig) {
    let mut first = SimulationConfig::new(t, n, seed);
    first.alphas = alphas.to_vec();
    let mut second = first.clone();
    second.horizon = 2.0 * t;
    second.stream_offset = n as u64;
    (first, second)
}

pub fn estimate_scgf(model: &Model, alphas: &[Vec<f64>], t: f64, n: usize, seed: u64) -> Result<Vec<ScgfPoint>> {
    if n < MIN_REPLICAS {
        return Err(Error::Statistical(format!(
            "{n} replicas; at least {MIN_REPLICAS} are needed"
        )));
    }
    let (c1, c2) = scgf_configs(alphas, t, n, seed);
    let s1 = run_replicas(model, &c1)?;
    let s2 = run_replicas(model, &c2)?;
    scgf_from_stats(&s1, &s2, t)
}

/// Outcome of a Kolmogorov–Smirnov normality test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CltCheck {
    pub ks_statistic: f64,
    pub critical_value: f64,
    pub pass: bool,
    pub replicas: usize,
}

/// Centre and scale `(v t, sqrt(D t))` of the first coordinate.
pub fn clt_scaling(model: &Model, t: f64) -> Result<(f64, f64)> {
    let drift = transforms::asymptotic_velocity(model)?[0];
    let d = match model {
        Model::Lattice(m) => transforms::diffusion_matrix(m)?[(0, 0)],
        Model::Continuum(_) => transforms::diffusion_constant(model)?,
    };
    Ok((drift * t, (d * t).sqrt()))
}

/// KS test of the first coordinate of `X_t`, standardised by the analytic
/// drift and diffusion constant, at the 1% level.
pub fn clt_from_positions(first_coordinates: &mut [f64], centre: f64, scale: f64) -> CltCheck {
    for x in first_coordinates.iter_mut() {
        *x = (*x - centre) / scale;
    }
    let n = first_coordinates.len();
    let ks = stats::ks_statistic(first_coordinates, stats::normal_cdf);
    let critical = stats::ks_critical_1pct(n);
    CltCheck {
        ks_statistic: ks,
        critical_value: critical,
        pass: ks < critical,
        replicas: n,
    }
}

pub fn clt_check(model: &Model, t: f64, n: usize, seed: u64) -> Result<CltCheck> {
    if !(t > 0.0) {
        return Err(Error::Domain("CLT check needs a positive horizon".into()));
    }
    let (centre, scale) = clt_scaling(model, t)?;
    let mut xs: Vec<f64> = endpoints(model, &SimulationConfig::new(t, n, seed))?
        .into_iter()
        .map(|e| e.position[0])
        .collect();
    Ok(clt_from_positions(&mut xs, centre, scale))
}
