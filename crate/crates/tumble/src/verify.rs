//! The acceptance matrix: ten criteria, each a list of numeric checks
//! against pinned tolerances.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;
use tumble_core::free_energy::{
    continuum_limit_check, curvature_at_zero, free_energy_lattice, legendre_transform,
    matrix_exponential_closed, rate_function_curve, transport_matrix_complex,
    ContinuumFreeEnergy, FreeEnergy, LatticeFreeEnergy, Quadratic,
};
use tumble_core::linalg::{expm, Matrix};
use tumble_core::simulator::stream_rng;
use tumble_core::spectral::{
    dirichlet_form, donsker_varadhan, gamma_monotonicity, principal_eigenvalue,
    closed_free_energy, slow_fast_limit, tilted_matrix, tilted_system, variational_for,
    variational_free_energy, variational_free_energy_iterative, FeynmanKacConfig,
    SpectralFreeEnergy,
};
use tumble_core::transforms::{diffusion_constant, diffusion_matrix};
use tumble_core::{
    build_1d_two_state, Complex, ContinuumModel, JumpKernel, LatticeModel, Model,
    OccupationMeasure, VelocityChain,
};

use crate::parallel;

macro_rules! keyed {
    ($(#[$meta:meta])* $name:ident { $($field:ident = $default:expr,)* }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Serialize)]
        pub struct $name {
            $(pub $field: f64,)*
        }

        impl Default for $name {
            fn default() -> Self {
                $name { $($field: $default,)* }
            }
        }

        impl $name {
            /// Configuration keys, one per field.
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field),)*];

            pub fn with_overrides(mut self, overrides: &BTreeMap<String, f64>) -> Self {
                $(if let Some(v) = overrides.get(stringify!($field)) {
                    self.$field = *v;
                })*
                self
            }
        }
    };
}

keyed! {
    /// Pass thresholds of the acceptance criteria.
    Tolerances {
        closed_spectral = 1e-12,
        theorem = 1e-8,
        sigma2 = 1e-6,
        monte_carlo_sigmas = 4.0,
        matrix_exponential = 1e-10,
        dirichlet = 1e-12,
        dv_minimizer = 1e-8,
        dv_stationary = 1e-10,
        feynman_kac_sigmas = 3.0,
        monotonicity = 1e-12,
        limit_order = 1.0,
        young = 1e-10,
        convexity = 0.0,
        rate_at_mean = 1e-12,
        quadratic = 1e-10,
    }
}

keyed! {
    /// Problem sizes, simulation budgets and runtime limits.
    Budgets {
        random_triples = 25.0,
        alpha_points = 41.0,
        random_models = 10.0,
        theorem_alpha_points = 9.0,
        monte_carlo_horizon = 100.0,
        monte_carlo_replicas = 100_000.0,
        feynman_kac_horizon = 200.0,
        feynman_kac_replicas = 100_000.0,
        clt_horizon = 1000.0,
        clt_replicas = 10_000.0,
        clt_control_horizon = 0.1,
        record_feynman_kac_horizon = 50.0,
        record_feynman_kac_replicas = 10_000.0,
        runtime_scale = 1.0,
    }
}

/// Titles of criteria 1 to 10.
pub const TITLES: [&str; 10] = [
    "closed form vs spectral",
    "spectral vs variational",
    "diffusion constants",
    "Monte Carlo vs analytic",
    "matrix exponential",
    "Donsker-Varadhan",
    "Feynman-Kac",
    "limits and monotonicity",
    "Legendre and rate function",
    "central limit theorem",
];

/// Runtime limits in seconds, before `runtime_scale`.
const RUNTIME_LIMITS: [Option<f64>; 10] = [
    Some(1.0),
    Some(30.0),
    None,
    Some(60.0),
    Some(1.0),
    None,
    Some(30.0),
    None,
    None,
    None,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "<")]
    Below,
    #[serde(rename = ">")]
    Above,
}

/// One measured quantity against its bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionReport {
    pub id: u8,
    pub title: &'static str,
    pub pass: bool,
    pub elapsed_seconds: f64,
    pub checks: Vec<Check>,
    pub error: Option<String>,
}

impl CriterionReport {
    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("criterion {}: {} = {:e} not {} {:e}", self.id, c.name, c.value, rel(c.relation), c.bound))
            .collect();
        if let Some(e) = &self.error {
            out.push(format!("criterion {}: {e}", self.id));
        }
        out
    }

    /// `PASS` or `FAIL` line for logs.
    pub fn summary_line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let mut line = format!("criterion {:>2} {verdict} {} ({:.2} s)", self.id, self.title, self.elapsed_seconds);
        let failed: Vec<&str> = self.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        if !failed.is_empty() {
            line.push_str(&format!(" failed: {}", failed.join(", ")));
        }
        if let Some(e) = &self.error {
            line.push_str(&format!(" error: {e}"));
        }
        line
    }
}

fn rel(r: Relation) -> &'static str {
    match r {
        Relation::AtMost => "<=",
        Relation::AtLeast => ">=",
        Relation::Below => "<",
        Relation::Above => ">",
    }
}

#[derive(Default)]
struct Checks(Vec<Check>);

impl Checks {
    fn push(&mut self, name: impl Into<String>, value: f64, relation: Relation, bound: f64) {
        let pass = match relation {
            Relation::AtMost => value <= bound,
            Relation::AtLeast => value >= bound,
            Relation::Below => value < bound,
            Relation::Above => value > bound,
        };
        self.0.push(Check {
            name: name.into(),
            value,
            relation,
            bound,
            pass,
        });
    }

    fn at_most(&mut self, name: impl Into<String>, value: f64, bound: f64) {
        self.push(name, value, Relation::AtMost, bound);
    }

    fn at_least(&mut self, name: impl Into<String>, value: f64, bound: f64) {
        self.push(name, value, Relation::AtLeast, bound);
    }
}

type Outcome = tumble_core::Result<Checks>;

/// Runs criterion `id` (1 to 10).
pub fn run_criterion(id: u8, tol: &Tolerances, budgets: &Budgets, seed: u64) -> CriterionReport {
    assert!((1..=10).contains(&id), "criteria are numbered 1 to 10");
    let seed = parallel::stage_seed(seed, id as u64);
    let start = Instant::now();
    let outcome = match id {
        1 => closed_vs_spectral(tol, budgets, seed),
        2 => spectral_vs_variational(tol, budgets, seed),
        3 => diffusion_constants(tol),
        4 => monte_carlo(tol, budgets, seed),
        5 => matrix_exponential(tol),
        6 => dv_checks(tol, seed),
        7 => feynman_kac(tol, budgets, seed),
        8 => limits(tol),
        9 => legendre(tol),
        _ => central_limit(budgets, seed),
    };
    let elapsed = start.elapsed().as_secs_f64();
    let (mut checks, error) = match outcome {
        Ok(c) => (c, None),
        Err(e) => (Checks::default(), Some(e.to_string())),
    };
    if let Some(limit) = RUNTIME_LIMITS[id as usize - 1] {
        checks.push("runtime_seconds", elapsed, Relation::Below, limit * budgets.runtime_scale);
    }
    CriterionReport {
        id,
        title: TITLES[id as usize - 1],
        pass: error.is_none() && checks.0.iter().all(|c| c.pass),
        elapsed_seconds: elapsed,
        checks: checks.0,
        error,
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|k| if k + 1 == n { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
        .collect()
}

fn count(x: f64) -> usize {
    x.round().max(0.0) as usize
}

fn perron(model: &LatticeModel, alpha: &[f64]) -> tumble_core::Result<f64> {
    Ok(principal_eigenvalue(&tilted_matrix(model, alpha)?)?.eigenvalue)
}

fn closed_vs_spectral(tol: &Tolerances, b: &Budgets, seed: u64) -> Outcome {
    let mut rng = stream_rng(seed, 0);
    let alphas = linspace(-3.0, 3.0, count(b.alpha_points));
    let mut worst: f64 = 0.0;
    for _ in 0..count(b.random_triples) {
        // uniform on (0, 5]
        let mut draw = || 5.0 * (1.0 - rng.random::<f64>());
        let (l, k, g) = (draw(), draw(), draw());
        let m = build_1d_two_state(l, k, g)?;
        for &a in &alphas {
            worst = worst.max((free_energy_lattice(&m, a)? - perron(&m, &[a])?).abs());
        }
    }
    let mut c = Checks::default();
    c.at_most("max_abs_difference", worst, tol.closed_spectral);
    Ok(c)
}

/// Random lattice model for the theorem cross-check: `d <= 3`,
/// `2 <= |V| <= 8` distinct velocities in `{-1, 0, 1}^d`, nearest-neighbour
/// passive jumps and a strongly connected flip chain.
pub fn random_model<R: Rng>(rng: &mut R, dimension: usize, symmetric: bool) -> tumble_core::Result<LatticeModel> {
    let max_states = 3usize.pow(dimension as u32).min(8);
    let n = rng.random_range(2..=max_states);
    let mut velocities: Vec<Vec<i64>> = Vec::with_capacity(n);
    while velocities.len() < n {
        let v: Vec<i64> = (0..dimension).map(|_| rng.random_range(-1..=1)).collect();
        if !velocities.contains(&v) {
            velocities.push(v);
        }
    }
    let mut rates = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && (j == (i + 1) % n || rng.random::<f64>() < 0.6) {
                rates[(i, j)] = 0.1 + rng.random::<f64>();
            }
        }
    }
    if symmetric {
        for i in 0..n {
            for j in 0..i {
                let r = rates[(i, j)].max(rates[(j, i)]);
                rates[(i, j)] = r;
                rates[(j, i)] = r;
            }
        }
    }
    let chain = VelocityChain::new(dimension, velocities, rates)?;
    let lambda = 0.2 + 2.0 * rng.random::<f64>();
    let kappa = 1.5 * rng.random::<f64>();
    let gamma = 0.2 + 3.0 * rng.random::<f64>();
    LatticeModel::new(lambda, kappa, gamma, JumpKernel::nearest_neighbor(dimension), chain)
}

/// Tilts `s e_k` for every coordinate direction `k` and grid value `s`.
pub fn axis_tilts(dimension: usize, grid: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(dimension * grid.len());
    for k in 0..dimension {
        for &s in grid {
            let mut a = vec![0.0; dimension];
            a[k] = s;
            out.push(a);
        }
    }
    out
}

fn spectral_vs_variational(tol: &Tolerances, b: &Budgets, seed: u64) -> Outcome {
    let mut rng = stream_rng(seed, 0);
    let mut models = vec![build_1d_two_state(2.0, 1.0, 4.0)?];
    for k in 0..count(b.random_models) {
        models.push(random_model(&mut rng, 1 + k % 3, k % 2 == 0)?);
    }
    let grid = linspace(-2.0, 2.0, count(b.theorem_alpha_points));
    let (mut official, mut iterative): (f64, f64) = (0.0, 0.0);
    for m in &models {
        for a in axis_tilts(m.dimension(), &grid) {
            let f = perron(m, &a)?;
            official = official.max((f - variational_free_energy(m, &a)?.value).abs());
            iterative = iterative.max((f - variational_free_energy_iterative(m, &a)?.value).abs());
        }
    }
    let mut c = Checks::default();
    c.at_most("max_abs_difference_variational", official, tol.theorem);
    c.at_most("max_abs_difference_mirror_ascent", iterative, tol.theorem);
    Ok(c)
}

fn relative(value: f64, expected: f64) -> f64 {
    ((value - expected) / expected).abs()
}

fn diffusion_constants(tol: &Tolerances) -> Outcome {
    let (l, k, g) = (2.0, 1.0, 4.0);
    let mut c = Checks::default();

    let walk = build_1d_two_state(l, k, g)?;
    let expected = 2.0 * k + l + l * l / g;
    c.at_most("lattice_curvature", relative(curvature_at_zero(&LatticeFreeEnergy::new(&walk)?), expected), tol.sigma2);

    let kernel = JumpKernel::new(1, vec![(vec![1], 0.3), (vec![-1], 0.3), (vec![2], 0.2), (vec![-2], 0.2)])?;
    let general = LatticeModel::one_dimensional(l, k, g, kernel)?;
    let expected = k * (0.3 + 0.3 + 4.0 * 0.2 + 4.0 * 0.2) + l + l * l / g;
    c.at_most("general_kernel_curvature", relative(curvature_at_zero(&LatticeFreeEnergy::new(&general)?), expected), tol.sigma2);
    let spectral = SpectralFreeEnergy { model: Model::from(general.clone()), axis: 0 };
    c.at_most("general_kernel_spectral_curvature", relative(curvature_at_zero(&spectral), expected), tol.sigma2);
    c.at_most("general_kernel_closed_form", relative(diffusion_constant(&Model::from(general))?, expected), tol.sigma2);

    let tele = ContinuumModel::new(l, k, g, 0.0)?;
    let expected = 2.0 * k + l * l / g;
    c.at_most("continuum_curvature", relative(curvature_at_zero(&ContinuumFreeEnergy(tele)), expected), tol.sigma2);

    let chain = VelocityChain::new(
        2,
        vec![vec![1, 0], vec![-1, 0], vec![0, 1], vec![0, -1]],
        Matrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 / 3.0 }),
    )?;
    let planar = LatticeModel::new(1.5, 0.7, 2.0, JumpKernel::nearest_neighbor(2), chain)?;
    let d = diffusion_matrix(&planar)?;
    for axis in 0..2 {
        let f = SpectralFreeEnergy { model: Model::from(planar.clone()), axis };
        c.at_most(format!("planar_curvature_axis_{}", axis + 1), relative(curvature_at_zero(&f), d[(axis, axis)]), tol.sigma2);
    }

    c.at_most("sigma2_lattice_exact", (diffusion_constant(&Model::from(walk))? - 5.0).abs(), 0.0);
    c.at_most("sigma2_continuum_exact", (diffusion_constant(&Model::from(tele))? - 3.0).abs(), 0.0);
    Ok(c)
}

fn monte_carlo(tol: &Tolerances, b: &Budgets, seed: u64) -> Outcome {
    let (t, n) = (b.monte_carlo_horizon, count(b.monte_carlo_replicas));
    let mut c = Checks::default();
    let cases: [(&str, Model, f64); 2] = [
        ("lattice_sigma2", Model::from(build_1d_two_state(2.0, 1.0, 4.0)?), 5.0),
        ("telegrapher_sigma2", Model::from(ContinuumModel::new(2.0, 1.0, 4.0, 0.0)?), 3.0),
    ];
    for (stream, (name, model, expected)) in cases.iter().enumerate() {
        let est = parallel::diffusion(model, t, n, parallel::stage_seed(seed, stream as u64))?;
        c.at_most(format!("{name}_sigmas"), (est.sigma2[0] - expected).abs() / est.stderr[0], tol.monte_carlo_sigmas);
    }
    let drifted = Model::from(ContinuumModel::new(2.0, 1.0, 4.0, 0.5)?);
    let est = parallel::diffusion(&drifted, t, n, parallel::stage_seed(seed, 2))?;
    c.at_most("drift_velocity_sigmas", (est.velocity[0] - 1.0).abs() / est.velocity_stderr[0], tol.monte_carlo_sigmas);
    Ok(c)
}

fn matrix_exponential(tol: &Tolerances) -> Outcome {
    let models = [
        ("real", build_1d_two_state(2.0, 1.0, 4.0)?),
        ("complex", build_1d_two_state(2.0, 1.0, 1.5)?),
        ("degenerate", build_1d_two_state(2.0, 1.0, 2.0)?),
    ];
    let mut c = Checks::default();
    for (name, m) in &models {
        let mut worst: f64 = 0.0;
        for q in [0.0, 0.5, std::f64::consts::FRAC_PI_2, 2.8] {
            let q = Complex::new(q, 0.0);
            let generator = transport_matrix_complex(m, q)?;
            for t in [0.1, 1.3, 10.0] {
                let closed = matrix_exponential_closed(m, q, t)?;
                let oracle = expm(&generator.scale(Complex::new(t, 0.0)));
                worst = worst.max(closed.max_abs_diff(&oracle));
            }
        }
        c.at_most(format!("{name}_max_entry_difference"), worst, tol.matrix_exponential);
    }
    Ok(c)
}

fn random_chain<R: Rng>(rng: &mut R, n: usize, symmetric: bool) -> tumble_core::Result<VelocityChain> {
    let mut rates = Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 0.1 + rng.random::<f64>() });
    if symmetric {
        for i in 0..n {
            for j in 0..i {
                rates[(j, i)] = rates[(i, j)];
            }
        }
    }
    let velocities = (0..n as i64).map(|v| vec![v]).collect();
    VelocityChain::new(1, velocities, rates)
}

fn random_measure<R: Rng>(rng: &mut R, n: usize) -> tumble_core::Result<OccupationMeasure> {
    OccupationMeasure::normalized((0..n).map(|_| 0.05 + rng.random::<f64>()).collect())
}

fn dv_checks(tol: &Tolerances, seed: u64) -> Outcome {
    let mut c = Checks::default();
    let flip = VelocityChain::two_state();
    let corner = dirichlet_form(&flip, &OccupationMeasure::new(vec![1.0, 0.0])?)?;
    c.at_most("dirichlet_corner", (corner - 1.0).abs(), tol.dirichlet);
    let quarter = dirichlet_form(&flip, &OccupationMeasure::new(vec![0.75, 0.25])?)?;
    c.at_most("dirichlet_quarter", (quarter - (1.0 - 3f64.sqrt() / 2.0)).abs(), tol.dirichlet);

    let mut rng = stream_rng(seed, 0);
    let (mut minimizer, mut stationary): (f64, f64) = (0.0, 0.0);
    for k in 0..20 {
        let n = rng.random_range(2..=6);
        let chain = random_chain(&mut rng, n, true)?;
        let mu = random_measure(&mut rng, n)?;
        let dv = donsker_varadhan(&chain, &mu)?;
        minimizer = minimizer.max((dv.rate - dirichlet_form(&chain, &mu)?).abs());
        let general = random_chain(&mut rng, n, k % 2 == 1)?;
        let nu = general.stationary_measure()?;
        stationary = stationary.max(donsker_varadhan(&general, &nu)?.rate.abs());
    }
    c.at_most("minimizer_vs_dirichlet", minimizer, tol.dv_minimizer);
    c.at_most("rate_at_stationary", stationary, tol.dv_stationary);
    Ok(c)
}

fn feynman_kac(tol: &Tolerances, b: &Budgets, seed: u64) -> Outcome {
    let m = build_1d_two_state(1.0, 0.0, 1.0)?;
    let config = FeynmanKacConfig::new(b.feynman_kac_horizon, count(b.feynman_kac_replicas), seed);
    let est = parallel::feynman_kac(&m, &[std::f64::consts::LN_2], &config)?;
    let mut c = Checks::default();
    c.at_most("deviation_sigmas", (est.estimate - 0.5).abs() / est.stderr, tol.feynman_kac_sigmas);
    Ok(c)
}

fn limits(tol: &Tolerances) -> Outcome {
    let gammas = [1.0, 10.0, 100.0, 1000.0];
    let walk = build_1d_two_state(2.0, 1.0, 1.0)?;
    let alphas: Vec<Vec<f64>> = linspace(-3.0, 3.0, 13).into_iter().map(|a| vec![a]).collect();
    let mut c = Checks::default();
    let mono = gamma_monotonicity(&walk, &alphas, &gammas)?;
    c.at_most("gamma_max_relative_increase", mono.max_increase / scale_of(&mono.values), tol.monotonicity);

    let chain = VelocityChain::new(
        2,
        vec![vec![1, 0], vec![-1, 0], vec![0, 1], vec![0, -1]],
        Matrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 / 3.0 }),
    )?;
    let planar = LatticeModel::new(1.5, 0.7, 1.0, JumpKernel::nearest_neighbor(2), chain)?;
    let tilts = axis_tilts(2, &linspace(-2.0, 2.0, 9));
    let mono = gamma_monotonicity(&planar, &tilts, &gammas)?;
    c.at_most("planar_gamma_max_relative_increase", mono.max_increase / scale_of(&mono.values), tol.monotonicity);

    let slow_fast = slow_fast_limit(&walk, &[1.0], &gammas)?;
    c.at_least("slow_fast_order", slow_fast.order, tol.limit_order);
    let continuum = continuum_limit_check(&build_1d_two_state(2.0, 1.0, 4.0)?, 1.0, &[0.2, 0.1, 0.05, 0.025])?;
    c.at_least("continuum_limit_order", continuum.order, tol.limit_order);
    Ok(c)
}

fn scale_of(values: &[Vec<f64>]) -> f64 {
    values.iter().flatten().fold(1.0f64, |a, v| a.max(v.abs()))
}

fn legendre(tol: &Tolerances) -> Outcome {
    let f = LatticeFreeEnergy::new(&build_1d_two_state(2.0, 1.0, 4.0)?)?;
    let curve = rate_function_curve(&f, &linspace(-4.0, 4.0, 33))?;
    let mut c = Checks::default();
    c.at_most("max_young_residual", curve.max_young_residual(), tol.young);
    c.at_least("min_second_difference", curve.min_second_difference(), -tol.convexity);
    let mean = f.derivative(0.0).unwrap_or(0.0);
    c.at_most("rate_at_mean", legendre_transform(&f, mean)?.rate.abs(), tol.rate_at_mean);
    let q = legendre_transform(&Quadratic { d: 5.0 }, 1.0)?;
    c.at_most("quadratic_rate_error", (q.rate - 0.1).abs(), tol.quadratic);
    Ok(c)
}

fn central_limit(b: &Budgets, seed: u64) -> Outcome {
    let (t, n) = (b.clt_horizon, count(b.clt_replicas));
    let walk = Model::from(build_1d_two_state(2.0, 1.0, 4.0)?);
    let tele = Model::from(ContinuumModel::new(2.0, 1.0, 4.0, 0.0)?);
    let mut c = Checks::default();
    for (stream, (name, model)) in [("lattice", &walk), ("telegrapher", &tele)].into_iter().enumerate() {
        let ks = parallel::clt(model, t, n, parallel::stage_seed(seed, stream as u64))?;
        c.push(format!("{name}_ks"), ks.ks_statistic, Relation::Below, ks.critical_value);
    }
    let control = parallel::clt(&walk, b.clt_control_horizon, n, parallel::stage_seed(seed, 2))?;
    c.push("short_time_control_ks", control.ks_statistic, Relation::Above, control.critical_value);
    Ok(c)
}

/// Cross-method free energies of a configured model at one tilt.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreeEnergyRecord {
    pub alpha: Vec<f64>,
    pub f_closed: Option<f64>,
    pub f_spectral: f64,
    pub f_variational: f64,
    pub f_feynman_kac: Option<f64>,
    pub stderr: Option<f64>,
    /// Largest difference among the deterministic values.
    pub max_discrepancy: f64,
}

/// Closed form where available, Perron root, variational value and, for
/// lattice models with `fk` set, a Feynman–Kac estimate.
pub fn free_energy_record(
    model: &Model,
    alpha: &[f64],
    fk: Option<&FeynmanKacConfig>,
) -> tumble_core::Result<FreeEnergyRecord> {
    let f_closed = closed_free_energy(model, alpha).transpose()?;
    let (m, chain) = tilted_system(model, alpha)?;
    let f_spectral = principal_eigenvalue(&m)?.eigenvalue;
    let f_variational = variational_for(&m, &chain)?.value;
    let (f_feynman_kac, stderr) = match (model, fk) {
        (Model::Lattice(l), Some(config)) => {
            let e = parallel::feynman_kac(l, alpha, config)?;
            (Some(e.estimate), Some(e.stderr))
        }
        _ => (None, None),
    };
    let values: Vec<f64> = f_closed.into_iter().chain([f_spectral, f_variational]).collect();
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(FreeEnergyRecord {
        alpha: alpha.to_vec(),
        f_closed,
        f_spectral,
        f_variational,
        f_feynman_kac,
        stderr,
        max_discrepancy: hi - lo,
    })
}

/// Reports of the selected criteria, in order.
pub fn run_all(ids: &[u8], tol: &Tolerances, budgets: &Budgets, seed: u64) -> Vec<CriterionReport> {
    ids.iter().map(|&id| run_criterion(id, tol, budgets, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_match_fields() {
        assert_eq!(Tolerances::KEYS.len(), 15);
        let mut o = BTreeMap::new();
        o.insert("sigma2".to_string(), 0.0);
        assert_eq!(Tolerances::default().with_overrides(&o).sigma2, 0.0);
        assert_eq!(Budgets::default().with_overrides(&BTreeMap::new()), Budgets::default());
    }

    #[test]
    fn zero_sigma2_tolerance_fails() {
        let tol = Tolerances {
            sigma2: 0.0,
            ..Tolerances::default()
        };
        let r = run_criterion(3, &tol, &Budgets::default(), 1);
        assert!(!r.pass);
        assert!(r.summary_line().contains("FAIL"));
        assert!(!r.failures().is_empty());
    }

    #[test]
    fn random_models_are_valid() {
        let mut rng = stream_rng(3, 0);
        for d in 1..=3 {
            for s in [true, false] {
                let m = random_model(&mut rng, d, s).unwrap();
                assert!(m.velocities().len() <= 8);
                assert_eq!(m.velocities().is_symmetric(), s || m.velocities().is_symmetric());
            }
        }
    }
}
