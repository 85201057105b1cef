//! The four commands. Each reads a validated configuration, calls library
//! operations and writes their results under the output directory.

use std::path::PathBuf;

use serde::Serialize;
use tumble_core::free_energy::{
    curvature_at_zero, rate_function_curve, ContinuumFreeEnergy, FreeEnergy, LatticeFreeEnergy,
};
use tumble_core::simulator::{diffusion_from_stats, scgf_configs, scgf_from_stats, Endpoint};
use tumble_core::spectral::{FeynmanKacConfig, SpectralFreeEnergy};
use tumble_core::transforms::{
    asymptotic_velocity, diffusion_constant, diffusion_matrix, fourier_laplace_continuum,
    fourier_laplace_lattice, scaling_diagnostic, FourierLaplaceValue,
};
use tumble_core::{Complex, Model};

use crate::config::{ConfigError, Grid, RunConfig};
use crate::output::{cell, cell_opt, header, OutputDir};
use crate::verify::{self, axis_tilts, Budgets, CriterionReport, FreeEnergyRecord, Tolerances};
use crate::{parallel, Error, Result};

/// Initial probability of velocity `+1` in the lattice transform.
const UNIFORM_START: f64 = 0.5;
const DEFAULT_EPSILONS: [f64; 4] = [0.2, 0.1, 0.05, 0.025];
const DEFAULT_ALPHA: Grid = Grid::Range {
    start: -2.0,
    end: 2.0,
    points: 9,
};

fn missing(what: &str) -> Error {
    Error::Config(ConfigError {
        path: None,
        line: None,
        message: what.to_string(),
    })
}

/// Free energy along the first axis: the closed form where one exists,
/// otherwise the Perron root.
enum AxisFreeEnergy {
    Lattice(LatticeFreeEnergy),
    Continuum(ContinuumFreeEnergy),
    Spectral(SpectralFreeEnergy),
}

impl AxisFreeEnergy {
    fn of(model: &Model) -> Self {
        match model {
            Model::Continuum(c) => AxisFreeEnergy::Continuum(ContinuumFreeEnergy(*c)),
            Model::Lattice(l) => match LatticeFreeEnergy::new(l) {
                Ok(f) => AxisFreeEnergy::Lattice(f),
                Err(_) => AxisFreeEnergy::Spectral(SpectralFreeEnergy {
                    model: model.clone(),
                    axis: 0,
                }),
            },
        }
    }

    fn inner(&self) -> &dyn FreeEnergy {
        match self {
            AxisFreeEnergy::Lattice(f) => f,
            AxisFreeEnergy::Continuum(f) => f,
            AxisFreeEnergy::Spectral(f) => f,
        }
    }
}

impl FreeEnergy for AxisFreeEnergy {
    fn value(&self, alpha: f64) -> f64 {
        self.inner().value(alpha)
    }

    fn derivative(&self, alpha: f64) -> Option<f64> {
        self.inner().derivative(alpha)
    }

    fn second_derivative(&self, alpha: f64) -> Option<f64> {
        self.inner().second_derivative(alpha)
    }
}

fn transform(model: &Model, q: f64, z: Complex) -> tumble_core::Result<FourierLaplaceValue> {
    match model {
        Model::Lattice(m) => fourier_laplace_lattice(m, q, z, UNIFORM_START),
        Model::Continuum(m) => fourier_laplace_continuum(m, q, z),
    }
}

#[derive(Debug, Serialize)]
struct DiffusionSummary {
    /// `lim Var(X_1) / t`.
    sigma2: f64,
    /// `F''(0)` along the first axis by central differences.
    sigma2_curvature: f64,
    velocity: Vec<f64>,
    diffusion_matrix: Option<Vec<Vec<f64>>>,
}

fn diffusion_summary(model: &Model) -> Result<DiffusionSummary> {
    let matrix = match model {
        Model::Lattice(m) => Some(diffusion_matrix(m)?),
        Model::Continuum(_) => None,
    };
    let sigma2 = match (diffusion_constant(model), &matrix) {
        (Ok(s), _) => s,
        (Err(_), Some(d)) => d[(0, 0)],
        (Err(e), None) => return Err(e.into()),
    };
    Ok(DiffusionSummary {
        sigma2,
        sigma2_curvature: curvature_at_zero(&AxisFreeEnergy::of(model)),
        velocity: asymptotic_velocity(model)?,
        diffusion_matrix: matrix.map(|d| (0..d.rows()).map(|i| d.row(i).to_vec()).collect()),
    })
}

fn supports_transforms(model: &Model) -> bool {
    match model {
        Model::Lattice(m) => m.two_state_form().is_ok(),
        Model::Continuum(_) => true,
    }
}

/// Writes `fourier_laplace.csv`, `diffusion.json` and
/// `scaling_diagnostic.csv`. Models without a transform (more than two
/// velocities or more than one dimension) get `diffusion.json` only.
pub fn analyze(config: &RunConfig, out: &OutputDir) -> Result<Vec<PathBuf>> {
    let model = config.build_model()?;
    let mut written = vec![out.write_json("diffusion.json", &diffusion_summary(&model)?)?];
    if !supports_transforms(&model) {
        return Ok(written);
    }
    let qs = config.grids.q.as_ref().ok_or_else(|| missing("analyze needs a `q` grid in [grids]"))?.values();
    let zs = config.grids.z.as_ref().ok_or_else(|| missing("analyze needs a `z` grid in [grids]"))?;

    let mut rows = Vec::with_capacity(qs.len() * zs.len());
    for &q in &qs {
        for &z in zs {
            let s = transform(&model, q, z)?;
            rows.push(vec![cell(s.q), cell(s.z.re), cell(s.z.im), cell(s.value.re), cell(s.value.im), cell(s.closed_form_residual)]);
        }
    }
    let names = header(&["q", "z_re", "z_im", "S_re", "S_im", "closed_form_residual"]);
    written.push(out.write_csv("fourier_laplace.csv", &names, rows)?);

    let field_free = !matches!(&model, Model::Continuum(c) if c.field() != 0.0);
    let epsilons = config.grids.epsilon.as_ref().map_or(DEFAULT_EPSILONS.to_vec(), Grid::values);
    let mut rows = Vec::new();
    if field_free {
        for &q in qs.iter().filter(|&&q| q != 0.0) {
            for z in zs.iter().filter(|z| z.im == 0.0) {
                let d = scaling_diagnostic(&model, q, z.re, &epsilons, UNIFORM_START)?;
                for (eps, dev) in &d.points {
                    rows.push(vec![cell(q), cell(z.re), cell(*eps), cell(*dev), cell(d.order), cell(d.sigma2)]);
                }
            }
        }
    }
    let names = header(&["q", "z", "epsilon", "deviation", "order", "sigma2"]);
    written.push(out.write_csv("scaling_diagnostic.csv", &names, rows)?);
    Ok(written)
}

#[derive(Debug, Serialize)]
struct LdpSummary {
    points: usize,
    max_closed_spectral: Option<f64>,
    max_spectral_variational: Option<f64>,
    max_young_residual: Option<f64>,
}

fn max_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    xs.fold(None, |m, x| Some(m.map_or(x, |m: f64| m.max(x))))
}

fn alpha_columns(d: usize) -> Vec<String> {
    if d == 1 {
        vec!["alpha".to_string()]
    } else {
        (1..=d).map(|k| format!("alpha_{k}")).collect()
    }
}

/// Writes `free_energy.csv`, `rate_function.csv` and `verify.json`.
pub fn ldp(config: &RunConfig, out: &OutputDir) -> Result<Vec<PathBuf>> {
    let model = config.build_model()?;
    let (alpha, x) = (&config.grids.alpha, &config.grids.x);
    if alpha.is_none() && x.is_none() {
        return Err(missing("ldp needs an `alpha` or `x` grid in [grids]"));
    }
    let mut written = Vec::new();
    let mut records: Vec<FreeEnergyRecord> = Vec::new();
    if let Some(grid) = alpha {
        let tilts = axis_tilts(model.dimension(), &grid.values());
        records = parallel::free_energy_records(&model, &tilts, None)?;
        let mut names = alpha_columns(model.dimension());
        names.extend(header(&["F_closed", "F_spectral", "F_variational"]));
        let rows = records.iter().map(|r| {
            let mut row: Vec<String> = r.alpha.iter().map(|a| cell(*a)).collect();
            row.extend([cell_opt(r.f_closed), cell(r.f_spectral), cell(r.f_variational)]);
            row
        });
        written.push(out.write_csv("free_energy.csv", &names, rows)?);
    }
    let mut young = None;
    if let Some(grid) = x {
        let curve = rate_function_curve(&AxisFreeEnergy::of(&model), &grid.values())?;
        young = Some(curve.max_young_residual());
        let rows = curve.points.iter().map(|p| vec![cell(p.x), cell(p.rate), cell(p.alpha_star)]);
        written.push(out.write_csv("rate_function.csv", &header(&["x", "I", "alpha_star"]), rows)?);
    }
    let summary = LdpSummary {
        points: records.len(),
        max_closed_spectral: max_of(records.iter().filter_map(|r| r.f_closed.map(|c| (c - r.f_spectral).abs()))),
        max_spectral_variational: max_of(records.iter().map(|r| (r.f_spectral - r.f_variational).abs())),
        max_young_residual: young,
    };
    written.push(out.write_json("verify.json", &summary)?);
    Ok(written)
}

#[derive(Debug, Serialize)]
struct CltSummary {
    ks_statistic: f64,
    critical_value: f64,
    pass: bool,
}

#[derive(Debug, Serialize)]
struct ScgfRecord {
    alpha: Vec<f64>,
    estimate: f64,
    stderr: f64,
    estimate_2t: f64,
    stderr_2t: f64,
    bias_bound: f64,
    effective_sample_size: f64,
    reliable: bool,
    analytic: f64,
}

#[derive(Debug, Serialize)]
struct SimulationSummary {
    horizon: f64,
    replicas: usize,
    seed: u64,
    sigma2: Vec<f64>,
    sigma2_stderr: Vec<f64>,
    velocity: Vec<f64>,
    velocity_stderr: Vec<f64>,
    analytic: DiffusionSummary,
    clt: CltSummary,
    scgf: Vec<ScgfRecord>,
}

/// Writes `sim_stats.json` and, when enabled, `endpoints.csv`.
pub fn simulate(config: &RunConfig, out: &OutputDir) -> Result<Vec<PathBuf>> {
    let model = config.build_model()?;
    let sim = &config.simulation;
    let t = sim.horizon.ok_or_else(|| missing("simulate needs `horizon` in [simulation]"))?;
    let n = sim.replicas.ok_or_else(|| missing("simulate needs `replicas` in [simulation]"))?;
    let d = model.dimension();
    let tilts = sim.scgf_alpha.as_ref().map_or(Vec::new(), |g| axis_tilts(1, &g.values()));
    let tilts: Vec<Vec<f64>> = tilts
        .into_iter()
        .map(|a| {
            let mut v = vec![0.0; d];
            v[0] = a[0];
            v
        })
        .collect();
    let (mut first, mut second) = scgf_configs(&tilts, t, n, config.seed());
    first.initial = sim.initial.clone();
    second.initial = sim.initial.clone();

    let (endpoints, stats) = parallel::endpoints_and_stats(&model, &first)?;
    let est = diffusion_from_stats(&stats, t)?;
    let clt = parallel::clt_of(&model, &endpoints, t)?;
    let scgf = if tilts.is_empty() {
        Vec::new()
    } else {
        let later = parallel::replica_stats(&model, &second)?;
        let f = SpectralFreeEnergy {
            model: model.clone(),
            axis: 0,
        };
        scgf_from_stats(&stats, &later, t)?
            .into_iter()
            .map(|p| ScgfRecord {
                analytic: f.value(p.alpha[0]),
                alpha: p.alpha,
                estimate: p.estimate,
                stderr: p.stderr,
                estimate_2t: p.estimate_2t,
                stderr_2t: p.stderr_2t,
                bias_bound: p.bias_bound,
                effective_sample_size: p.effective_sample_size,
                reliable: p.reliable,
            })
            .collect()
    };
    let summary = SimulationSummary {
        horizon: t,
        replicas: est.replicas,
        seed: config.seed(),
        sigma2: est.sigma2,
        sigma2_stderr: est.stderr,
        velocity: est.velocity,
        velocity_stderr: est.velocity_stderr,
        analytic: diffusion_summary(&model)?,
        clt: CltSummary {
            ks_statistic: clt.ks_statistic,
            critical_value: clt.critical_value,
            pass: clt.pass,
        },
        scgf,
    };
    let mut written = vec![out.write_json("sim_stats.json", &summary)?];
    if sim.endpoints {
        written.push(write_endpoints(out, &endpoints, d)?);
    }
    Ok(written)
}

fn write_endpoints(out: &OutputDir, endpoints: &[Endpoint], d: usize) -> Result<PathBuf> {
    let mut names = vec!["replica".to_string()];
    names.extend((1..=d).map(|k| format!("x_{k}")));
    names.push("v_index".to_string());
    let rows = endpoints.iter().enumerate().map(|(i, e)| {
        let mut row = vec![i.to_string()];
        row.extend(e.position.iter().map(|x| cell(*x)));
        row.push(e.velocity.to_string());
        row
    });
    out.write_csv("endpoints.csv", &names, rows)
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    seed: u64,
    pass: bool,
    failures: Vec<String>,
    tolerances: Tolerances,
    budgets: Budgets,
    criteria: Vec<CriterionReport>,
    records: Vec<FreeEnergyRecord>,
}

/// Runs the acceptance criteria and the cross-method records of the
/// configured model, writes `report.json`, and fails with exit code 4 when
/// any criterion fails. `log` receives one line per criterion.
pub fn verify(config: &RunConfig, out: &OutputDir, log: &mut dyn FnMut(&str)) -> Result<Vec<PathBuf>> {
    let model = config.build_model()?;
    let tol = Tolerances::default().with_overrides(&config.verify.tolerances);
    let budgets = Budgets::default().with_overrides(&config.verify.budgets);
    let seed = config.seed();
    let ids: Vec<u8> = config.verify.criteria.clone().unwrap_or_else(|| (1..=10).collect());

    let mut criteria = Vec::with_capacity(ids.len());
    for id in ids {
        let r = verify::run_criterion(id, &tol, &budgets, seed);
        log(&r.summary_line());
        criteria.push(r);
    }

    let grid = config.grids.alpha.as_ref().unwrap_or(&DEFAULT_ALPHA).values();
    let fk = FeynmanKacConfig::new(
        budgets.record_feynman_kac_horizon,
        budgets.record_feynman_kac_replicas.round() as usize,
        parallel::stage_seed(seed, 0),
    );
    let records = parallel::free_energy_records(&model, &axis_tilts(model.dimension(), &grid), Some(&fk))?;

    let failures: Vec<String> = criteria.iter().flat_map(CriterionReport::failures).collect();
    let report = VerifyReport {
        seed,
        pass: failures.is_empty(),
        failures: failures.clone(),
        tolerances: tol,
        budgets,
        criteria,
        records,
    };
    let path = out.write_json("report.json", &report)?;
    if failures.is_empty() {
        Ok(vec![path])
    } else {
        Err(Error::Acceptance(failures))
    }
}
