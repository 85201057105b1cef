//! Rayon drivers over simulation batches and Feynman–Kac groups.
//!
//! Work items carry their own random streams and results are combined in
//! item order, so every output is independent of the number of threads.

use rand::RngCore;
use rayon::prelude::*;
use tumble_core::simulator::{
    batch_endpoints, clt_from_positions, clt_scaling, diffusion_from_stats, run_batch,
    scgf_configs, scgf_from_stats, stream_rng, CltCheck, DiffusionEstimate, Endpoint,
    ReplicaStats, Sampler, ScgfPoint, SimulationConfig, MIN_REPLICAS,
};
use tumble_core::spectral::{
    combine_feynman_kac, feynman_kac_group, FeynmanKacConfig, FeynmanKacEstimate,
    FeynmanKacSystem,
};
use tumble_core::{Error, LatticeModel, Model, Result};

use crate::verify::{free_energy_record, FreeEnergyRecord};

/// Seed of an independent stage derived from the top-level seed.
pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    stream_rng(seed, u64::MAX - stage).next_u64()
}

fn check_replicas(n: usize) -> Result<()> {
    if n < MIN_REPLICAS {
        return Err(Error::Statistical(format!(
            "{n} replicas; at least {MIN_REPLICAS} are needed"
        )));
    }
    Ok(())
}

pub fn replica_stats(model: &Model, config: &SimulationConfig) -> Result<ReplicaStats> {
    let sampler = Sampler::new(model, &config.initial)?;
    config.validate(sampler.dimension())?;
    let parts: Vec<ReplicaStats> = (0..config.batches())
        .into_par_iter()
        .map(|k| run_batch(&sampler, config, k))
        .collect();
    let mut stats = ReplicaStats::empty(sampler.dimension(), &config.alphas);
    for p in parts {
        stats.merge(p);
    }
    Ok(stats)
}

/// Endpoints in replica order together with their statistics.
pub fn endpoints_and_stats(
    model: &Model,
    config: &SimulationConfig,
) -> Result<(Vec<Endpoint>, ReplicaStats)> {
    let sampler = Sampler::new(model, &config.initial)?;
    config.validate(sampler.dimension())?;
    let parts: Vec<(Vec<Endpoint>, ReplicaStats)> = (0..config.batches())
        .into_par_iter()
        .map(|k| {
            let e = batch_endpoints(&sampler, config, k);
            let s = ReplicaStats::from_endpoints(k, &config.alphas, &e);
            (e, s)
        })
        .collect();
    let mut stats = ReplicaStats::empty(sampler.dimension(), &config.alphas);
    let mut all = Vec::with_capacity(config.replicas);
    for (e, s) in parts {
        all.extend(e);
        stats.merge(s);
    }
    Ok((all, stats))
}

pub fn diffusion(model: &Model, t: f64, n: usize, seed: u64) -> Result<DiffusionEstimate> {
    check_replicas(n)?;
    let stats = replica_stats(model, &SimulationConfig::new(t, n, seed))?;
    diffusion_from_stats(&stats, t)
}

pub fn scgf(model: &Model, alphas: &[Vec<f64>], t: f64, n: usize, seed: u64) -> Result<Vec<ScgfPoint>> {
    check_replicas(n)?;
    let (c1, c2) = scgf_configs(alphas, t, n, seed);
    scgf_from_stats(&replica_stats(model, &c1)?, &replica_stats(model, &c2)?, t)
}

/// KS normality test of the first coordinate of endpoints.
pub fn clt_of(model: &Model, endpoints: &[Endpoint], t: f64) -> Result<CltCheck> {
    let (centre, scale) = clt_scaling(model, t)?;
    let mut xs: Vec<f64> = endpoints.iter().map(|e| e.position[0]).collect();
    Ok(clt_from_positions(&mut xs, centre, scale))
}

pub fn clt(model: &Model, t: f64, n: usize, seed: u64) -> Result<CltCheck> {
    let (endpoints, _) = endpoints_and_stats(model, &SimulationConfig::new(t, n, seed))?;
    clt_of(model, &endpoints, t)
}

pub fn feynman_kac(
    model: &LatticeModel,
    alpha: &[f64],
    config: &FeynmanKacConfig,
) -> Result<FeynmanKacEstimate> {
    let system = FeynmanKacSystem::new(model, alpha)?;
    let groups = (0..config.groups())
        .into_par_iter()
        .map(|g| feynman_kac_group(&system, config, g))
        .collect::<Result<Vec<_>>>()?;
    combine_feynman_kac(config, &groups)
}

/// Free-energy records at every tilt, in tilt order. Tilt `k` runs its
/// Feynman–Kac estimate with seed `stage_seed(fk.seed, k)`.
pub fn free_energy_records(
    model: &Model,
    tilts: &[Vec<f64>],
    fk: Option<&FeynmanKacConfig>,
) -> Result<Vec<FreeEnergyRecord>> {
    tilts
        .par_iter()
        .enumerate()
        .map(|(k, a)| {
            let config = fk.map(|c| FeynmanKacConfig {
                seed: stage_seed(c.seed, k as u64),
                ..*c
            });
            free_energy_record(model, a, config.as_ref())
        })
        .collect()
}

/// Drivers agree with the sequential library versions.
#[cfg(test)]
mod tests {
    use super::*;
    use tumble_core::simulator;
    use tumble_core::{build_1d_two_state, ContinuumModel};

    #[test]
    fn parallel_matches_sequential() {
        let m = Model::from(build_1d_two_state(2.0, 1.0, 4.0).unwrap());
        let mut c = SimulationConfig::new(3.0, 500, 11);
        c.alphas = vec![vec![0.3]];
        let seq = simulator::run_replicas(&m, &c).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let par = pool.install(|| replica_stats(&m, &c)).unwrap();
        assert_eq!(seq, par);
        let (e, s) = endpoints_and_stats(&m, &c).unwrap();
        assert_eq!(e, simulator::endpoints(&m, &c).unwrap());
        assert_eq!(s, seq);
    }

    #[test]
    fn clt_matches_sequential() {
        let m = Model::from(ContinuumModel::new(2.0, 1.0, 4.0, 0.0).unwrap());
        assert_eq!(clt(&m, 5.0, 300, 2).unwrap(), simulator::clt_check(&m, 5.0, 300, 2).unwrap());
    }

    #[test]
    fn feynman_kac_matches_sequential() {
        let m = build_1d_two_state(1.0, 0.0, 1.0).unwrap();
        let c = FeynmanKacConfig::new(5.0, 4000, 3);
        let a = feynman_kac(&m, &[0.5], &c).unwrap();
        let b = tumble_core::spectral::feynman_kac_estimate(&m, &[0.5], &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stage_seeds_differ() {
        assert_ne!(stage_seed(1, 0), stage_seed(1, 1));
        assert_eq!(stage_seed(5, 2), stage_seed(5, 2));
    }
}
