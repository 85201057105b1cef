//! Tilted generators on `Z^d`, their Perron roots, the Donsker–Varadhan
//! occupation rate, the variational formula for the free energy and a
//! Feynman–Kac Monte Carlo estimator.
//!
//! Conventions: `A` is the generator of the unit-rate flip chain, the flip
//! rate `gamma` multiplies it, and the tilted matrix acts on distributions,
//! `M(alpha) = gamma A^T + diag(psi_alpha)` with
//! `psi_alpha(v) = passive Gamma(alpha) + lambda (e^{<alpha, v>} - 1)`.
//! The rate `I_A` is always that of the unit-rate chain; `gamma` enters only
//! through `gamma I_A(mu)` in the variational formula.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::free_energy::{FreeEnergy, LimitDiagnostic};
use crate::linalg::{self, Lu, Matrix};
use crate::model::{dot, ContinuumModel, LatticeModel, Model, OccupationMeasure, VelocityChain};
use crate::simulator::stream_rng;
use crate::stats::{self, LogSumExp};

/// `M(alpha) = gamma A^T + diag(psi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedMatrix {
    alpha: Vec<f64>,
    gamma: f64,
    psi: Vec<f64>,
    generator: Matrix,
    entries: Matrix,
    symmetric: bool,
}

impl TiltedMatrix {
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Tilt potential `psi_alpha(v)` per velocity.
    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    /// Unit-rate generator `A` of the flip chain.
    pub fn generator(&self) -> &Matrix {
        &self.generator
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    /// Largest entrywise gap between the stored matrix and
    /// `gamma A^T + diag(psi)` rebuilt from its parts.
    pub fn reconstruction_error(&self) -> f64 {
        let n = self.len();
        let rebuilt = Matrix::from_fn(n, n, |i, j| {
            self.gamma * self.generator[(j, i)] + if i == j { self.psi[i] } else { 0.0 }
        });
        self.entries.max_abs_diff(&rebuilt)
    }
}

/// Tilt potential `psi_alpha(v)` for every velocity of the model.
pub fn tilt_potential(model: &LatticeModel, alpha: &[f64]) -> Result<Vec<f64>> {
    if alpha.len() != model.dimension() {
        return Err(Error::DimensionMismatch {
            expected: model.dimension(),
            found: alpha.len(),
        });
    }
    let passive = model.passive_cumulant(alpha)?;
    Ok(model
        .velocities()
        .velocities()
        .iter()
        .map(|v| passive + model.lambda() * dot(alpha, v).exp_m1())
        .collect())
}

pub fn tilted_matrix(model: &LatticeModel, alpha: &[f64]) -> Result<TiltedMatrix> {
    let psi = tilt_potential(model, alpha)?;
    let chain = model.velocities();
    let generator = chain.generator().clone();
    let gamma = model.gamma();
    let n = psi.len();
    let entries = Matrix::from_fn(n, n, |i, j| {
        gamma * generator[(j, i)] + if i == j { psi[i] } else { 0.0 }
    });
    Ok(TiltedMatrix {
        alpha: alpha.to_vec(),
        gamma,
        psi,
        generator,
        entries,
        symmetric: chain.is_symmetric(),
    })
}

/// Tilted matrix of the telegrapher process,
/// `psi(v) = kappa alpha^2 + 2 kappa E alpha + lambda v alpha` with `v = +1, -1`.
pub fn continuum_tilted_matrix(model: &ContinuumModel, alpha: f64) -> TiltedMatrix {
    let chain = VelocityChain::two_state();
    let common = model.kappa() * alpha * alpha + model.drift() * alpha;
    let psi = vec![common + model.lambda() * alpha, common - model.lambda() * alpha];
    let generator = chain.generator().clone();
    let gamma = model.gamma();
    let entries = Matrix::from_fn(2, 2, |i, j| {
        gamma * generator[(j, i)] + if i == j { psi[i] } else { 0.0 }
    });
    TiltedMatrix {
        alpha: vec![alpha],
        gamma,
        psi,
        generator,
        entries,
        symmetric: true,
    }
}

/// Tilted matrix and flip chain of either model.
pub fn tilted_system(model: &Model, alpha: &[f64]) -> Result<(TiltedMatrix, VelocityChain)> {
    match model {
        Model::Lattice(m) => Ok((tilted_matrix(m, alpha)?, m.velocities().clone())),
        Model::Continuum(m) => {
            if alpha.len() != 1 {
                return Err(Error::DimensionMismatch {
                    expected: 1,
                    found: alpha.len(),
                });
            }
            Ok((continuum_tilted_matrix(m, alpha[0]), VelocityChain::two_state()))
        }
    }
}

/// Perron root of the tilted matrix of either model.
pub fn spectral_free_energy(model: &Model, alpha: &[f64]) -> Result<f64> {
    Ok(principal_eigenvalue(&tilted_system(model, alpha)?.0)?.eigenvalue)
}

/// Closed-form free energy where one exists: the one-dimensional
/// two-velocity lattice model and the telegrapher process.
pub fn closed_free_energy(model: &Model, alpha: &[f64]) -> Option<Result<f64>> {
    match model {
        Model::Lattice(m) => {
            m.two_state_form().ok()?;
            Some(crate::free_energy::free_energy_lattice(m, alpha[0]))
        }
        Model::Continuum(m) => Some(Ok(crate::free_energy::free_energy_continuum_drift(m, alpha[0]))),
    }
}

/// Free energy along coordinate axis `axis`, `s -> F(s e_axis)`, from the
/// Perron root. Failures evaluate to NaN.
#[derive(Debug, Clone)]
pub struct SpectralFreeEnergy {
    pub model: Model,
    pub axis: usize,
}

impl FreeEnergy for SpectralFreeEnergy {
    fn value(&self, s: f64) -> f64 {
        let mut alpha = vec![0.0; self.model.dimension()];
        alpha[self.axis] = s;
        spectral_free_energy(&self.model, &alpha).unwrap_or(f64::NAN)
    }

    fn derivative(&self, s: f64) -> Option<f64> {
        let mut alpha = vec![0.0; self.model.dimension()];
        alpha[self.axis] = s;
        spectral_gradient(&self.model, &alpha).ok().map(|g| g[self.axis])
    }
}

/// Gradient of the Perron root by first-order perturbation,
/// `sum_v l(v) r(v) grad psi(v) / sum_v l(v) r(v)`.
pub fn spectral_gradient(model: &Model, alpha: &[f64]) -> Result<Vec<f64>> {
    let (m, _) = tilted_system(model, alpha)?;
    let pair = principal_eigenvalue(&m)?;
    let grads: Vec<Vec<f64>> = match model {
        Model::Lattice(l) => {
            let passive = l.kernel().cumulant_gradient(alpha)?;
            l.velocities()
                .velocities()
                .iter()
                .map(|v| {
                    let e = l.lambda() * dot(alpha, v).exp();
                    passive
                        .iter()
                        .zip(v)
                        .map(|(p, &vk)| l.passive_rate() * p + e * vk as f64)
                        .collect()
                })
                .collect()
        }
        Model::Continuum(c) => {
            let common = 2.0 * c.kappa() * alpha[0] + c.drift();
            vec![vec![common + c.lambda()], vec![common - c.lambda()]]
        }
    };
    let weights: Vec<f64> = pair.left.iter().zip(&pair.right).map(|(l, r)| l * r).collect();
    let total: f64 = weights.iter().sum();
    Ok((0..alpha.len())
        .map(|k| weights.iter().zip(&grads).map(|(w, g)| w * g[k]).sum::<f64>() / total)
        .collect())
}

/// Perron root of a tilted matrix with its positive eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PerronPair {
    pub eigenvalue: f64,
    /// Right eigenvector (a distribution over velocities), unit sum.
    pub right: Vec<f64>,
    /// Left eigenvector, unit sum.
    pub left: Vec<f64>,
    /// Perron root of the transpose, computed independently.
    pub transpose_eigenvalue: f64,
    /// Collatz–Wielandt bracket `[min (My)_i / y_i, max (My)_i / y_i]`.
    pub bracket: (f64, f64),
    pub iterations: usize,
}

const PERRON_MAX_ITER: usize = 200;

/// Perron root by the symmetric eigensolver when the chain is symmetric and
/// by shifted inverse iteration otherwise.
pub fn principal_eigenvalue(m: &TiltedMatrix) -> Result<PerronPair> {
    if m.symmetric {
        return symmetric_perron(m.entries());
    }
    let (eigenvalue, right, bracket, iterations) = perron_iteration(m.entries())?;
    let (transpose_eigenvalue, left, _, _) = perron_iteration(&m.entries().transpose())?;
    let scale = m.entries().max_abs().max(1.0);
    if (eigenvalue - transpose_eigenvalue).abs() > 1e-11 * scale {
        return Err(Error::numerical(
            "perron root",
            format!("M gives {eigenvalue}, M^T gives {transpose_eigenvalue}"),
        ));
    }
    Ok(PerronPair {
        eigenvalue,
        right,
        left,
        transpose_eigenvalue,
        bracket,
        iterations,
    })
}

fn symmetric_perron(a: &Matrix) -> Result<PerronPair> {
    let (values, vectors) = linalg::symmetric_eigen(a);
    let n = a.rows();
    let mut v: Vec<f64> = (0..n).map(|i| vectors[(i, 0)]).collect();
    let sum: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= sum);
    let floor = -1e-12;
    if v.iter().any(|&x| !(x > floor)) {
        return Err(Error::numerical(
            "perron root",
            format!("top eigenvector is not positive: {v:?}"),
        ));
    }
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    let (lo, hi) = collatz_wielandt(a, &v);
    Ok(PerronPair {
        eigenvalue: values[0],
        left: v.clone(),
        right: v,
        transpose_eigenvalue: values[0],
        bracket: (lo, hi),
        iterations: 0,
    })
}

fn collatz_wielandt(a: &Matrix, y: &[f64]) -> (f64, f64) {
    let ay = a.mul_vec(y);
    ay.iter()
        .zip(y)
        .filter(|(_, &yi)| yi > 0.0)
        .map(|(&v, &yi)| v / yi)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)))
}

/// Eigenvalue, eigenvector, Collatz–Wielandt bracket and iteration count.
type PerronRun = (f64, Vec<f64>, (f64, f64), usize);

/// Inverse iteration with the shift placed just above the current upper
/// Collatz–Wielandt bound. For an irreducible Metzler matrix `sigma I - M`
/// is then a nonsingular M-matrix, so iterates stay strictly positive and
/// the bracket shrinks monotonically onto the Perron root.
fn perron_iteration(a: &Matrix) -> Result<PerronRun> {
    let n = a.rows();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    let mut y = vec![1.0 / n as f64; n];
    let (mut lo, mut hi) = collatz_wielandt(a, &y);
    let mut best = hi - lo;
    let mut stalled = 0;
    for it in 0..PERRON_MAX_ITER {
        if hi - lo <= 1e-14 * scale {
            return Ok((0.5 * (lo + hi), y, (lo, hi), it));
        }
        let sigma = hi + (hi - lo).max(1e-13 * scale);
        let shifted = Matrix::from_fn(n, n, |i, j| {
            if i == j { sigma - a[(i, j)] } else { -a[(i, j)] }
        });
        let lu = Lu::new(&shifted)
            .ok_or_else(|| Error::numerical("perron root", "singular shifted system"))?;
        let mut x = lu.solve(&y);
        let total: f64 = x.iter().sum();
        x.iter_mut().for_each(|v| *v /= total);
        if x.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::numerical(
                "perron root",
                format!("iterate lost positivity at step {it}: {x:?}"),
            ));
        }
        y = x;
        (lo, hi) = collatz_wielandt(a, &y);
        if hi - lo < 0.5 * best {
            best = hi - lo;
            stalled = 0;
        } else {
            stalled += 1;
            // rounding floor reached
            if stalled >= 3 && hi - lo <= 1e-11 * scale {
                return Ok((0.5 * (lo + hi), y, (lo, hi), it + 1));
            }
        }
    }
    Err(Error::numerical(
        "perron root",
        format!("no convergence after {PERRON_MAX_ITER} steps, bracket [{lo}, {hi}]"),
    ))
}

fn check_measure(chain: &VelocityChain, mu: &OccupationMeasure) -> Result<()> {
    if mu.len() != chain.len() {
        return Err(Error::DimensionMismatch {
            expected: chain.len(),
            found: mu.len(),
        });
    }
    Ok(())
}

/// `-sum sqrt(mu) sqrt(mu') A = 1/2 sum pi(v, v') (sqrt mu(v) - sqrt mu(v'))^2`
/// for a symmetric chain.
pub fn dirichlet_form(chain: &VelocityChain, mu: &OccupationMeasure) -> Result<f64> {
    check_measure(chain, mu)?;
    if !chain.is_symmetric() {
        return Err(Error::Domain(
            "the Dirichlet form needs symmetric flip rates".into(),
        ));
    }
    let r: Vec<f64> = mu.weights().iter().map(|m| m.sqrt()).collect();
    let n = chain.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = r[i] - r[j];
            total += chain.rates()[(i, j)] * d * d;
        }
    }
    Ok(0.5 * total)
}

/// Minimiser of `Phi(u) = sum_v mu(v) sum_v' pi(v, v') (e^{u(v') - u(v)} - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DonskerVaradhan {
    /// `I_A(mu) = -inf Phi`.
    pub rate: f64,
    /// Optimal `u = log f` on the support of `mu`, `-inf` off it, gauge
    /// `sum u = 0` over the support.
    pub potential: Vec<f64>,
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// Convergence threshold on the gradient sup-norm.
pub const DV_GRADIENT_TOL: f64 = 1e-10;
const DV_MAX_ITER: usize = 500;

/// State of the convex problem restricted to the support of `mu`. States of
/// zero mass are sent to `u = -inf`, which turns the flips into them into a
/// constant loss.
struct DvProblem<'a> {
    rates: &'a Matrix,
    mu: Vec<f64>,
    support: Vec<usize>,
    leak: f64,
}

impl<'a> DvProblem<'a> {
    fn new(chain: &'a VelocityChain, mu: &OccupationMeasure) -> Self {
        let support: Vec<usize> = (0..mu.len()).filter(|&i| mu.weights()[i] > 0.0).collect();
        let rates = chain.rates();
        let leak = support
            .iter()
            .map(|&v| {
                let out: f64 = (0..mu.len())
                    .filter(|w| !support.contains(w))
                    .map(|w| rates[(v, w)])
                    .sum();
                mu.weights()[v] * out
            })
            .sum();
        DvProblem {
            rates,
            mu: support.iter().map(|&i| mu.weights()[i]).collect(),
            support,
            leak,
        }
    }

    fn rate(&self, a: usize, b: usize) -> f64 {
        self.rates[(self.support[a], self.support[b])]
    }

    fn objective(&self, u: &[f64]) -> f64 {
        let m = u.len();
        let mut total = -self.leak;
        for a in 0..m {
            let mut row = 0.0;
            for b in 0..m {
                if a != b {
                    row += self.rate(a, b) * (u[b] - u[a]).exp_m1();
                }
            }
            total += self.mu[a] * row;
        }
        total
    }

    /// Flow weights `W(a, b) = mu(a) pi(a, b) e^{u(b) - u(a)}`.
    fn flows(&self, u: &[f64]) -> Matrix {
        let m = u.len();
        Matrix::from_fn(m, m, |a, b| {
            if a == b { 0.0 } else { self.mu[a] * self.rate(a, b) * (u[b] - u[a]).exp() }
        })
    }

    fn gradient(&self, w: &Matrix) -> Vec<f64> {
        let m = w.rows();
        (0..m)
            .map(|k| (0..m).map(|v| w[(v, k)] - w[(k, v)]).sum())
            .collect()
    }

    fn hessian(&self, w: &Matrix) -> Matrix {
        let m = w.rows();
        Matrix::from_fn(m, m, |k, j| {
            if k == j {
                (0..m).map(|v| w[(v, k)] + w[(k, v)]).sum()
            } else {
                -w[(j, k)] - w[(k, j)]
            }
        })
    }
}

/// Convex minimisation of `Phi` by Newton's method with an Armijo line
/// search, starting at `u = 0` (or at `start` when given).
pub fn donsker_varadhan(chain: &VelocityChain, mu: &OccupationMeasure) -> Result<DonskerVaradhan> {
    donsker_varadhan_from(chain, mu, None)
}

fn donsker_varadhan_from(
    chain: &VelocityChain,
    mu: &OccupationMeasure,
    start: Option<&[f64]>,
) -> Result<DonskerVaradhan> {
    check_measure(chain, mu)?;
    let problem = DvProblem::new(chain, mu);
    let m = problem.support.len();
    let mut u: Vec<f64> = match start {
        Some(s) => problem.support.iter().map(|&i| s[i]).collect(),
        None => vec![0.0; m],
    };
    if u.iter().any(|x| !x.is_finite()) {
        u = vec![0.0; m];
    }
    recentre(&mut u);

    let mut value = problem.objective(&u);
    let mut iterations = 0;
    let mut gnorm;
    loop {
        let w = problem.flows(&u);
        let g = problem.gradient(&w);
        gnorm = g.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        if gnorm <= DV_GRADIENT_TOL || m == 1 {
            break;
        }
        if iterations >= DV_MAX_ITER {
            return Err(Error::numerical(
                "Donsker-Varadhan minimisation",
                format!("gradient {gnorm:e} after {iterations} Newton steps"),
            ));
        }
        iterations += 1;

        // gauge term 11^T/m removes the constant null direction
        let mut h = problem.hessian(&w);
        let damping = 1e-14 * h.max_abs().max(1.0);
        for a in 0..m {
            for b in 0..m {
                h[(a, b)] += 1.0 / m as f64 + if a == b { damping } else { 0.0 };
            }
        }
        let neg_g: Vec<f64> = g.iter().map(|x| -x).collect();
        let mut step = linalg::solve(&h, &neg_g)
            .ok_or_else(|| Error::numerical("Donsker-Varadhan minimisation", "singular Hessian"))?;
        recentre(&mut step);
        let slope: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
        let slope = if slope < 0.0 {
            slope
        } else {
            // fall back to steepest descent
            step = neg_g;
            recentre(&mut step);
            -step.iter().map(|x| x * x).sum::<f64>()
        };

        // once the predicted decrease is below the rounding level of the
        // objective, Armijo cannot discriminate; fall back to the gradient
        let flat = -slope <= 1e-13 * (1.0 + value.abs());
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = u.iter().zip(&step).map(|(a, b)| a + t * b).collect();
            let trial_value = problem.objective(&trial);
            let ok = if flat {
                let tg = problem.gradient(&problem.flows(&trial));
                tg.iter().fold(0.0f64, |acc, x| acc.max(x.abs())) < gnorm
            } else {
                trial_value <= value + 1e-4 * t * slope
            };
            if ok {
                u = trial;
                value = trial_value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // rounding floor of the objective; the gradient is what we report
            let w = problem.flows(&u);
            gnorm = problem.gradient(&w).iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
            if gnorm <= 1e3 * DV_GRADIENT_TOL {
                break;
            }
            return Err(Error::numerical(
                "Donsker-Varadhan minimisation",
                format!("line search failed with gradient {gnorm:e}"),
            ));
        }
    }

    let mut potential = vec![f64::NEG_INFINITY; mu.len()];
    for (k, &i) in problem.support.iter().enumerate() {
        potential[i] = u[k];
    }
    Ok(DonskerVaradhan {
        rate: (-value).max(0.0),
        potential,
        gradient_norm: gnorm,
        iterations,
    })
}

fn recentre(u: &mut [f64]) {
    if u.is_empty() {
        return;
    }
    let mean = u.iter().sum::<f64>() / u.len() as f64;
    u.iter_mut().for_each(|x| *x -= mean);
}

/// `I_A(mu)`: the Dirichlet form for symmetric chains, the convex
/// minimisation otherwise.
pub fn donsker_varadhan_rate(chain: &VelocityChain, mu: &OccupationMeasure) -> Result<f64> {
    if chain.is_symmetric() {
        dirichlet_form(chain, mu)
    } else {
        Ok(donsker_varadhan(chain, mu)?.rate)
    }
}

/// How a variational value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariationalMethod {
    /// `mu = r^2` from the unit-norm Perron vector of the symmetric matrix.
    EigenvectorSquare,
    MirrorAscent,
}

/// `sup_mu (sum psi mu - gamma I_A(mu))` with its maximiser.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalSolution {
    pub value: f64,
    pub maximizer: OccupationMeasure,
    /// Certified upper bound on the supremum (equal to `value` for the
    /// eigenvector construction).
    pub upper_bound: f64,
    pub iterations: usize,
    pub method: VariationalMethod,
}

/// Variational free energy. Symmetric chains use the eigenvector-square
/// construction; general chains use [`variational_free_energy_iterative`].
pub fn variational_free_energy(model: &LatticeModel, alpha: &[f64]) -> Result<VariationalSolution> {
    variational_for(&tilted_matrix(model, alpha)?, model.velocities())
}

/// Mirror-ascent solution of the variational problem, for any chain.
pub fn variational_free_energy_iterative(
    model: &LatticeModel,
    alpha: &[f64],
) -> Result<VariationalSolution> {
    variational_iterative_for(&tilted_matrix(model, alpha)?, model.velocities())
}

/// Variational problem of a tilted matrix whose flip part is `gamma` times
/// the generator of `chain`.
pub fn variational_for(m: &TiltedMatrix, chain: &VelocityChain) -> Result<VariationalSolution> {
    if !chain.is_symmetric() {
        return variational_iterative_for(m, chain);
    }
    let pair = principal_eigenvalue(m)?;
    // unit 2-norm Perron vector r, mu = r^2
    let norm2: f64 = pair.right.iter().map(|x| x * x).sum();
    let mu = OccupationMeasure::normalized(pair.right.iter().map(|x| x * x / norm2).collect())?;
    let linear: f64 = m.psi().iter().zip(mu.weights()).map(|(p, w)| p * w).sum();
    let value = linear - m.gamma() * dirichlet_form(chain, &mu)?;
    Ok(VariationalSolution {
        value,
        maximizer: mu,
        upper_bound: value,
        iterations: 0,
        method: VariationalMethod::EigenvectorSquare,
    })
}

/// Gap target of the mirror ascent, relative to the scale of the problem.
pub const VARIATIONAL_GAP_TOL: f64 = 1e-10;
const MIRROR_MAX_ITER: usize = 20_000;

/// Entropic mirror ascent on the simplex. The gradient of the concave
/// objective is `psi + gamma h_u` with `h_u(v) = sum pi(v, v')(e^{u(v') - u(v)} - 1)`
/// at the optimal potential `u`, and `max_v (psi + gamma h_u)(v)` bounds the
/// supremum from above, so the iteration stops on a certified gap.
pub fn variational_iterative_for(m: &TiltedMatrix, chain: &VelocityChain) -> Result<VariationalSolution> {
    if chain.len() != m.len() || chain.generator() != m.generator() {
        return Err(Error::Domain("tilted matrix does not belong to this chain".into()));
    }
    let psi = m.psi().to_vec();
    let gamma = m.gamma();
    let n = psi.len();
    let rates = chain.rates();
    let max_exit = (0..n).map(|i| chain.exit_rate(i)).fold(0.0, f64::max);
    let scale = 1.0 + psi.iter().fold(0.0f64, |a, p| a.max(p.abs())) + gamma * max_exit;

    let evaluate = |mu: &OccupationMeasure, start: Option<&[f64]>| -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let dv = donsker_varadhan_from(chain, mu, start)?;
        let linear: f64 = psi.iter().zip(mu.weights()).map(|(p, w)| p * w).sum();
        let u = &dv.potential;
        let grad: Vec<f64> = (0..n)
            .map(|v| {
                let h: f64 = (0..n)
                    .filter(|&w| w != v)
                    .map(|w| rates[(v, w)] * (u[w] - u[v]).exp_m1())
                    .sum();
                psi[v] + gamma * h
            })
            .collect();
        Ok((linear - gamma * dv.rate, grad, dv.potential))
    };

    let mut mu = chain.stationary_measure()?;
    let (mut value, mut grad, mut u) = evaluate(&mu, None)?;
    let mut eta = 1.0 / scale;
    let mut upper = grad.iter().fold(f64::NEG_INFINITY, |a, &g| a.max(g));
    let mut iterations = 0;
    let mut polished = false;
    while upper - value > VARIATIONAL_GAP_TOL * scale {
        if !polished && upper - value <= POLISH_GAP * scale {
            polished = true;
            if let Some((pm, pu)) = saddle_newton(&psi, rates, gamma, mu.weights(), &u) {
                let candidate = OccupationMeasure::normalized(pm)?;
                let (pv, pg, pu) = evaluate(&candidate, Some(&pu))?;
                let bound = pg.iter().fold(f64::NEG_INFINITY, |a, &g| a.max(g));
                if pv >= value {
                    mu = candidate;
                    value = pv;
                    grad = pg;
                    u = pu;
                }
                upper = upper.min(bound);
                continue;
            }
        }
        if iterations >= MIRROR_MAX_ITER {
            return Err(Error::numerical(
                "variational free energy",
                format!("gap {:e} after {iterations} steps; lower {value}, upper {upper}", upper - value),
            ));
        }
        iterations += 1;
        let top = upper;
        let mut improved = false;
        for _ in 0..60 {
            let trial: Vec<f64> = mu
                .weights()
                .iter()
                .zip(&grad)
                .map(|(m, g)| m * (eta * (g - top)).exp())
                .collect();
            let trial = OccupationMeasure::normalized(trial)?;
            let (tv, tg, tu) = evaluate(&trial, Some(&u))?;
            if tv >= value {
                mu = trial;
                value = tv;
                grad = tg;
                u = tu;
                eta *= 1.5;
                improved = true;
                break;
            }
            eta *= 0.5;
        }
        let bound = grad.iter().fold(f64::NEG_INFINITY, |a, &g| a.max(g));
        upper = upper.min(bound);
        if !improved {
            // no ascent direction left at working precision
            if upper - value <= 1e2 * VARIATIONAL_GAP_TOL * scale {
                break;
            }
            return Err(Error::numerical(
                "variational free energy",
                format!("stagnated with gap {:e}", upper - value),
            ));
        }
    }
    Ok(VariationalSolution {
        value,
        maximizer: mu,
        upper_bound: upper,
        iterations,
        method: VariationalMethod::MirrorAscent,
    })
}

/// Gap at which the ascent hands over to Newton's method on the saddle
/// conditions.
const POLISH_GAP: f64 = 1e-5;

/// Newton's method on the first-order conditions of
/// `sup_mu inf_u sum_v mu(v) (psi(v) + gamma h_u(v))`:
/// `psi + gamma h_u = F` on every velocity, zero net flow
/// `sum_v W(v, k) = sum_w W(k, w)` with `W(a, b) = mu(a) pi(a, b) e^{u(b) - u(a)}`,
/// `sum mu = 1` and the gauge `sum u = 0`. Returns `None` if the iteration
/// leaves the interior of the simplex or fails to converge.
fn saddle_newton(
    psi: &[f64],
    rates: &Matrix,
    gamma: f64,
    mu0: &[f64],
    u0: &[f64],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = psi.len();
    if n < 2 || u0.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let mut mu = mu0.to_vec();
    let mut u = u0.to_vec();
    recentre(&mut u);
    let h = |u: &[f64], v: usize| -> f64 {
        (0..n).filter(|&w| w != v).map(|w| rates[(v, w)] * (u[w] - u[v]).exp_m1()).sum()
    };
    let mut f = (0..n).map(|v| mu[v] * (psi[v] + gamma * h(&u, v))).sum::<f64>();
    let dim = 2 * n + 1;
    for _ in 0..30 {
        let e = |a: usize, b: usize, u: &[f64]| rates[(a, b)] * (u[b] - u[a]).exp();
        let mut res = vec![0.0; dim];
        let mut jac = Matrix::zeros(dim, dim);
        // rows 0..n: value equalisation; unknowns mu = 0..n, u = n..2n, F = 2n
        for v in 0..n {
            res[v] = psi[v] + gamma * h(&u, v) - f;
            let mut diag = 0.0;
            for w in 0..n {
                if w != v {
                    let x = gamma * e(v, w, &u);
                    jac[(v, n + w)] = x;
                    diag += x;
                }
            }
            jac[(v, n + v)] = -diag;
            jac[(v, 2 * n)] = -1.0;
        }
        // rows n..2n-1: flow balance (the last one is redundant and replaced
        // by the gauge)
        for k in 0..n - 1 {
            let row = n + k;
            let mut inflow = 0.0;
            let mut outflow = 0.0;
            for j in 0..n {
                if j == k {
                    continue;
                }
                let wjk = mu[j] * e(j, k, &u);
                let wkj = mu[k] * e(k, j, &u);
                inflow += wjk;
                outflow += wkj;
                jac[(row, j)] = e(j, k, &u);
                jac[(row, n + j)] = -wjk - wkj;
            }
            res[row] = inflow - outflow;
            jac[(row, k)] = -(0..n).filter(|&j| j != k).map(|j| e(k, j, &u)).sum::<f64>();
            jac[(row, n + k)] = inflow + outflow;
        }
        for j in 0..n {
            jac[(2 * n - 1, n + j)] = 1.0;
            jac[(2 * n, j)] = 1.0;
        }
        res[2 * n - 1] = u.iter().sum();
        res[2 * n] = mu.iter().sum::<f64>() - 1.0;

        let norm = res.iter().fold(0.0f64, |a, r| a.max(r.abs()));
        if norm <= 1e-15 * (1.0 + f.abs()) {
            break;
        }
        let neg: Vec<f64> = res.iter().map(|r| -r).collect();
        let step = linalg::solve(&jac, &neg)?;
        for v in 0..n {
            mu[v] += step[v];
            u[v] += step[n + v];
        }
        f += step[2 * n];
        if mu.iter().any(|&m| !(m > 0.0)) {
            return None;
        }
        if step.iter().fold(0.0f64, |a, s| a.max(s.abs())) <= 1e-15 {
            break;
        }
    }
    Some((mu, u))
}

/// Monte Carlo scheme for the Feynman–Kac estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeynmanKacScheme {
    /// Independent replicas, `(1/T) log mean exp(int psi)`.
    Direct,
    /// Interacting particles with systematic resampling; the growth rate is
    /// read off after a burn-in.
    Resampled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeynmanKacConfig {
    pub horizon: f64,
    pub replicas: usize,
    pub seed: u64,
    pub scheme: FeynmanKacScheme,
    /// Fraction of the horizon discarded before measuring growth
    /// (resampled scheme only).
    pub burn_in: f64,
}

impl FeynmanKacConfig {
    pub fn new(horizon: f64, replicas: usize, seed: u64) -> Self {
        FeynmanKacConfig {
            horizon,
            replicas,
            seed,
            scheme: FeynmanKacScheme::Resampled,
            burn_in: 0.1,
        }
    }

    /// Number of independent groups the replicas are split into.
    pub fn groups(&self) -> usize {
        match self.scheme {
            FeynmanKacScheme::Resampled => (self.replicas / 2000).clamp(2, 64).min(self.replicas),
            FeynmanKacScheme::Direct => {
                (libm::sqrt(self.replicas as f64) as usize).clamp(1, self.replicas)
            }
        }
    }

    /// Replica index range of group `g`.
    pub fn group_range(&self, g: usize) -> core::ops::Range<usize> {
        let k = self.groups();
        let base = self.replicas / k;
        let extra = self.replicas % k;
        let start = g * base + g.min(extra);
        start..start + base + usize::from(g < extra)
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Domain(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.replicas == 0 {
            return Err(Error::Domain("at least one replica is needed".into()));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::Domain(format!("burn-in fraction {} not in [0, 1)", self.burn_in)));
        }
        Ok(())
    }
}

/// Jump structure of the velocity chain at rate `gamma` with the tilt.
#[derive(Debug, Clone)]
pub struct FeynmanKacSystem {
    psi: Vec<f64>,
    exit: Vec<f64>,
    /// Cumulative jump probabilities per state.
    jumps: Vec<Vec<(usize, f64)>>,
}

impl FeynmanKacSystem {
    pub fn new(model: &LatticeModel, alpha: &[f64]) -> Result<Self> {
        let psi = tilt_potential(model, alpha)?;
        let chain = model.velocities();
        let n = chain.len();
        let exit: Vec<f64> = (0..n).map(|i| model.gamma() * chain.exit_rate(i)).collect();
        let jumps = (0..n)
            .map(|i| {
                let total = chain.exit_rate(i);
                let mut acc = 0.0;
                (0..n)
                    .filter(|&j| chain.rates()[(i, j)] > 0.0)
                    .map(|j| {
                        acc += chain.rates()[(i, j)] / total;
                        (j, acc)
                    })
                    .collect()
            })
            .collect();
        Ok(FeynmanKacSystem { psi, exit, jumps })
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    fn jump<R: Rng>(&self, v: usize, rng: &mut R) -> usize {
        let table = &self.jumps[v];
        let x: f64 = rng.random::<f64>() * table.last().map_or(1.0, |l| l.1);
        table.iter().find(|(_, c)| x < *c).unwrap_or(&table[table.len() - 1]).0
    }

    /// Advances a velocity over `[0, duration]`, returning the new velocity
    /// and `int psi`.
    fn advance<R: Rng>(&self, mut v: usize, duration: f64, rng: &mut R) -> (usize, f64) {
        let mut left = duration;
        let mut integral = 0.0;
        loop {
            let rate = self.exit[v];
            let wait = if rate > 0.0 {
                <Exp1 as Distribution<f64>>::sample(&Exp1, rng) / rate
            } else {
                f64::INFINITY
            };
            if wait >= left {
                integral += self.psi[v] * left;
                return (v, integral);
            }
            integral += self.psi[v] * wait;
            left -= wait;
            v = self.jump(v, rng);
        }
    }

    fn initial<R: Rng>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.psi.len())
    }

    /// Epoch length between resampling steps.
    fn epoch(&self) -> f64 {
        let max_exit = self.exit.iter().fold(0.0f64, |a, &b| a.max(b));
        let lo = self.psi.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = self.psi.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut tau = f64::INFINITY;
        if max_exit > 0.0 {
            tau = tau.min(1.0 / max_exit);
        }
        if hi > lo {
            tau = tau.min(1.0 / (hi - lo));
        }
        if tau.is_finite() { tau } else { 1.0 }
    }
}

/// Output of one group of the Feynman–Kac estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeynmanKacGroup {
    /// Direct: log-sum-exp of the replica weights. Resampled: a single entry
    /// holding the log growth over the measured window.
    pub weights: LogSumExp,
    /// Length of the measured window.
    pub window: f64,
    /// Smallest effective sample size seen before a resampling step (the
    /// final weights for the direct scheme).
    pub min_ess: f64,
}

/// Runs group `g` of the configured estimator. Groups are independent and
/// can be evaluated in any order or in parallel.
pub fn feynman_kac_group(
    system: &FeynmanKacSystem,
    config: &FeynmanKacConfig,
    g: usize,
) -> Result<FeynmanKacGroup> {
    config.validate()?;
    let range = config.group_range(g);
    match config.scheme {
        FeynmanKacScheme::Direct => {
            let mut weights = LogSumExp::new();
            for replica in range {
                let mut rng = stream_rng(config.seed, replica as u64);
                let v = system.initial(&mut rng);
                let (_, w) = system.advance(v, config.horizon, &mut rng);
                weights.push(w);
            }
            Ok(FeynmanKacGroup {
                min_ess: weights.effective_sample_size(),
                weights,
                window: config.horizon,
            })
        }
        FeynmanKacScheme::Resampled => {
            let mut rng = stream_rng(config.seed, g as u64);
            let particles = range.len();
            let burn = config.burn_in * config.horizon;
            let tau = system.epoch();
            let mut states: Vec<usize> = (0..particles).map(|_| system.initial(&mut rng)).collect();
            let mut logw = vec![0.0; particles];
            let mut next = vec![0usize; particles];
            let (mut log_z, mut log_z_burn) = (0.0, 0.0);
            let mut min_ess = particles as f64;
            let mut t = 0.0;
            let mut burned = burn == 0.0;
            while t < config.horizon {
                let mut end = (t + tau).min(config.horizon);
                if !burned && end > burn {
                    end = burn;
                }
                let dt = end - t;
                let mut acc = LogSumExp::new();
                for (s, w) in states.iter_mut().zip(logw.iter_mut()) {
                    let (v, integral) = system.advance(*s, dt, &mut rng);
                    *s = v;
                    *w = integral;
                    acc.push(integral);
                }
                log_z += acc.log_mean();
                min_ess = min_ess.min(acc.effective_sample_size());
                systematic_resample(&logw, acc.log_sum(), &mut rng, &mut next);
                let old = states.clone();
                for (s, &k) in states.iter_mut().zip(&next) {
                    *s = old[k];
                }
                t = end;
                if !burned && t >= burn {
                    burned = true;
                    log_z_burn = log_z;
                }
            }
            let mut weights = LogSumExp::new();
            weights.push(log_z - log_z_burn);
            Ok(FeynmanKacGroup {
                weights,
                window: config.horizon - burn,
                min_ess,
            })
        }
    }
}

fn systematic_resample<R: Rng>(logw: &[f64], log_sum: f64, rng: &mut R, out: &mut [usize]) {
    let n = logw.len();
    let u0: f64 = rng.random::<f64>();
    let mut k = 0;
    let mut cum = (logw[0] - log_sum).exp() * n as f64;
    for (i, slot) in out.iter_mut().enumerate() {
        let target = u0 + i as f64;
        while cum <= target && k + 1 < n {
            k += 1;
            cum += (logw[k] - log_sum).exp() * n as f64;
        }
        *slot = k;
    }
}

/// Feynman–Kac estimate of `F(alpha)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeynmanKacEstimate {
    pub estimate: f64,
    /// Delete-one-group jackknife standard error.
    pub stderr: f64,
    pub groups: usize,
    pub replicas: usize,
    pub scheme: FeynmanKacScheme,
    pub min_ess: f64,
}

/// Combines group outputs in group order.
pub fn combine_feynman_kac(config: &FeynmanKacConfig, groups: &[FeynmanKacGroup]) -> Result<FeynmanKacEstimate> {
    let first = groups
        .first()
        .ok_or_else(|| Error::Statistical("no Feynman-Kac groups".into()))?;
    let window = first.window;
    let accs: Vec<LogSumExp> = groups.iter().map(|g| g.weights).collect();
    let (log_mean, se) = stats::jackknife_log_mean(&accs);
    Ok(FeynmanKacEstimate {
        estimate: log_mean / window,
        stderr: se / window,
        groups: groups.len(),
        replicas: config.replicas,
        scheme: config.scheme,
        min_ess: groups.iter().map(|g| g.min_ess).fold(f64::INFINITY, f64::min),
    })
}

/// Sequential driver over all groups.
pub fn feynman_kac_estimate(
    model: &LatticeModel,
    alpha: &[f64],
    config: &FeynmanKacConfig,
) -> Result<FeynmanKacEstimate> {
    config.validate()?;
    let system = FeynmanKacSystem::new(model, alpha)?;
    let groups = (0..config.groups())
        .map(|g| feynman_kac_group(&system, config, g))
        .collect::<Result<Vec<_>>>()?;
    combine_feynman_kac(config, &groups)
}

/// `F_inf(alpha) = passive Gamma(alpha) + lambda sum_v nu(v)(e^{<alpha, v>} - 1)`.
pub fn slow_fast_free_energy(model: &LatticeModel, alpha: &[f64]) -> Result<f64> {
    let psi = tilt_potential(model, alpha)?;
    let nu = model.velocities().stationary_measure()?;
    Ok(psi.iter().zip(nu.weights()).map(|(p, w)| p * w).sum())
}

/// `|F_gamma(alpha) - F_inf(alpha)|` over increasing `gammas`; the fitted
/// order is the log-log slope against `1 / gamma`.
pub fn slow_fast_limit(model: &LatticeModel, alpha: &[f64], gammas: &[f64]) -> Result<LimitDiagnostic> {
    if gammas.iter().any(|&g| !(g > 0.0)) || gammas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("gammas must be positive and increasing".into()));
    }
    let limit = slow_fast_free_energy(model, alpha)?;
    let mut points = Vec::with_capacity(gammas.len());
    for &g in gammas {
        let f = principal_eigenvalue(&tilted_matrix(&model.with_gamma(g)?, alpha)?)?.eigenvalue;
        points.push((g, (f - limit).abs()));
    }
    let inv: Vec<f64> = gammas.iter().map(|g| 1.0 / g).collect();
    let devs: Vec<f64> = points.iter().map(|p| p.1).collect();
    Ok(LimitDiagnostic {
        order: stats::convergence_order(&inv, &devs),
        points,
    })
}

/// Free energies on a `gamma x alpha` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaMonotonicity {
    pub gammas: Vec<f64>,
    /// `values[k][j] = F_{gamma_k}(alphas[j])`.
    pub values: Vec<Vec<f64>>,
    /// Largest increase `F_{gamma_{k+1}} - F_{gamma_k}` seen (`<= 0` when
    /// monotone).
    pub max_increase: f64,
}

impl GammaMonotonicity {
    /// Non-increasing up to `tol` relative to the magnitude of the values.
    pub fn holds(&self, tol: f64) -> bool {
        let scale = self
            .values
            .iter()
            .flatten()
            .fold(1.0f64, |a, v| a.max(v.abs()));
        self.max_increase <= tol * scale
    }
}

pub fn gamma_monotonicity(
    model: &LatticeModel,
    alphas: &[Vec<f64>],
    gammas: &[f64],
) -> Result<GammaMonotonicity> {
    if gammas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("gammas must be increasing".into()));
    }
    let values = gammas
        .iter()
        .map(|&g| {
            let m = model.with_gamma(g)?;
            alphas
                .iter()
                .map(|a| Ok(principal_eigenvalue(&tilted_matrix(&m, a)?)?.eigenvalue))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let max_increase = values
        .windows(2)
        .flat_map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| b - a))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(GammaMonotonicity {
        gammas: gammas.to_vec(),
        values,
        max_increase,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::free_energy::free_energy_lattice;
    use crate::model::{build_1d_two_state, JumpKernel};
    use core::f64::consts::LN_2;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn four_velocity(gamma: f64, rates: Option<Matrix>) -> LatticeModel {
        let v = vec![vec![1, 0], vec![-1, 0], vec![0, 1], vec![0, -1]];
        let rates = rates.unwrap_or_else(|| Matrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 / 3.0 }));
        let chain = VelocityChain::new(2, v, rates).unwrap();
        LatticeModel::new(1.5, 0.7, gamma, JumpKernel::nearest_neighbor(2), chain).unwrap()
    }

    fn random_chain(rng: &mut ChaCha8Rng, n: usize, symmetric: bool) -> VelocityChain {
        let mut rates = Matrix::from_fn(n, n, |i, j| {
            if i == j { 0.0 } else { 0.1 + rng.random::<f64>() }
        });
        if symmetric {
            for i in 0..n {
                for j in 0..i {
                    rates[(i, j)] = rates[(j, i)];
                }
            }
        }
        let velocities = (0..n).map(|i| vec![i as i64 - 2]).collect();
        VelocityChain::new(1, velocities, rates).unwrap()
    }

    fn random_measure(rng: &mut ChaCha8Rng, n: usize) -> OccupationMeasure {
        OccupationMeasure::normalized((0..n).map(|_| 0.05 + rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn untilted_matrix_is_the_flip_generator() {
        let m = build_1d_two_state(2.0, 1.0, 4.0).unwrap();
        let t = tilted_matrix(&m, &[0.0]).unwrap();
        assert!(t.psi().iter().all(|&p| p == 0.0));
        let expected = Matrix::from_rows(&[vec![-4.0, 4.0], vec![4.0, -4.0]]);
        assert_eq!(t.entries(), &expected);
        assert_eq!(t.reconstruction_error(), 0.0);
    }

    #[test]
    fn one_dimensional_tilted_matrix() {
        let m = build_1d_two_state(2.0, 1.0, 4.0).unwrap();
        let a: f64 = 0.6;
        let t = tilted_matrix(&m, &[a]).unwrap();
        let base = 2.0 * (a.cosh() - 1.0) - 4.0;
        assert!((t.entries()[(0, 0)] - (base + 2.0 * a.exp_m1())).abs() < 1e-14);
        assert!((t.entries()[(1, 1)] - (base + 2.0 * (-a).exp_m1())).abs() < 1e-14);
        assert!(t.is_symmetric());
    }

    #[test]
    fn planar_tilted_matrix_diagonal() {
        let m = four_velocity(2.0, None);
        let t = tilted_matrix(&m, &[1.0, 0.0]).unwrap();
        let passive = 0.7 * 0.5 * (1f64.cosh() - 1.0);
        let expected = [
            1.5 * 1f64.exp_m1() + passive - 2.0,
            1.5 * (-1f64).exp_m1() + passive - 2.0,
            passive - 2.0,
            passive - 2.0,
        ];
        for (i, e) in expected.iter().enumerate() {
            assert!((t.entries()[(i, i)] - e).abs() < 1e-14);
        }
        assert!(t.reconstruction_error() <= 1e-14);
        assert!(matches!(tilted_matrix(&m, &[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn perron_root_examples() {
        let m = build_1d_two_state(1.0, 0.0, 1.0).unwrap();
        let p = principal_eigenvalue(&tilted_matrix(&m, &[LN_2]).unwrap()).unwrap();
        assert!((p.eigenvalue - 0.5).abs() < 1e-14);
        let p = principal_eigenvalue(&tilted_matrix(&m, &[0.0]).unwrap()).unwrap();
        assert!(p.eigenvalue.abs() < 1e-15);
        assert!((p.right[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn general_perron_at_zero_tilt_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chain = random_chain(&mut rng, 5, false);
        let nu = chain.stationary_measure().unwrap();
        let m = LatticeModel::new(1.0, 0.5, 2.0, JumpKernel::nearest_neighbor(1), chain).unwrap();
        let p = principal_eigenvalue(&tilted_matrix(&m, &[0.0]).unwrap()).unwrap();
        assert!(p.eigenvalue.abs() < 1e-13);
        for (a, b) in p.right.iter().zip(nu.weights()) {
            assert!((a - b).abs() < 1e-12);
        }
        for l in &p.left {
            assert!((l - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_perron_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let chain = random_chain(&mut rng, 5, true);
            let m = LatticeModel::new(1.3, 0.4, 1.7, JumpKernel::nearest_neighbor(1), chain).unwrap();
            let a = rng.random::<f64>() * 2.0 - 1.0;
            let t = tilted_matrix(&m, &[a]).unwrap();
            let ours = principal_eigenvalue(&t).unwrap().eigenvalue;
            let e = t.entries();
            let na = nalgebra::DMatrix::from_fn(5, 5, |i, j| e[(i, j)]);
            let oracle = na.symmetric_eigen().eigenvalues.max();
            assert!((ours - oracle).abs() <= 1e-10, "{ours} vs {oracle}");
        }
    }

    #[test]
    fn general_perron_matches_nalgebra_and_is_orientation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [2, 3, 5, 8] {
            let chain = random_chain(&mut rng, n, false);
            let m = LatticeModel::new(1.3, 0.4, 1.7, JumpKernel::nearest_neighbor(1), chain).unwrap();
            let t = tilted_matrix(&m, &[0.4]).unwrap();
            let p = principal_eigenvalue(&t).unwrap();
            let e = t.entries();
            let na = nalgebra::DMatrix::from_fn(n, n, |i, j| e[(i, j)]);
            let oracle = na
                .complex_eigenvalues()
                .iter()
                .map(|z| z.re)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((p.eigenvalue - oracle).abs() <= 1e-10, "{} vs {oracle}", p.eigenvalue);
            assert!((p.eigenvalue - p.transpose_eigenvalue).abs() <= 1e-11);
            assert!(p.bracket.1 - p.bracket.0 <= 1e-11);
            let r = e.mul_vec(&p.right);
            for (x, y) in r.iter().zip(&p.right) {
                assert!((x - p.eigenvalue * y).abs() <= 1e-11);
            }
        }
    }

    #[test]
    fn dirichlet_form_examples() {
        let chain = VelocityChain::two_state();
        let mu = OccupationMeasure::new(vec![1.0, 0.0]).unwrap();
        assert!((dirichlet_form(&chain, &mu).unwrap() - 1.0).abs() <= 1e-12);
        let mu = OccupationMeasure::new(vec![0.75, 0.25]).unwrap();
        let expected = 1.0 - 3f64.sqrt() / 2.0;
        assert!((dirichlet_form(&chain, &mu).unwrap() - expected).abs() <= 1e-12);
        assert_eq!(dirichlet_form(&chain, &chain.uniform_measure()).unwrap(), 0.0);
    }

    #[test]
    fn convex_minimiser_on_two_state_examples() {
        let chain = VelocityChain::two_state();
        let mu = OccupationMeasure::new(vec![0.75, 0.25]).unwrap();
        let dv = donsker_varadhan(&chain, &mu).unwrap();
        assert!((dv.rate - (1.0 - 3f64.sqrt() / 2.0)).abs() <= 1e-12);
        assert!(dv.gradient_norm <= DV_GRADIENT_TOL);
        // the optimal f is sqrt(mu)
        let du = dv.potential[0] - dv.potential[1];
        assert!((du - 0.5 * 3f64.ln()).abs() < 1e-9);

        let mu = OccupationMeasure::new(vec![1.0, 0.0]).unwrap();
        assert!((donsker_varadhan(&chain, &mu).unwrap().rate - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn rate_vanishes_at_stationarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in [3, 6] {
            let chain = random_chain(&mut rng, n, false);
            let nu = chain.stationary_measure().unwrap();
            let dv = donsker_varadhan(&chain, &nu).unwrap();
            assert!(dv.rate <= 1e-10, "{}", dv.rate);
        }
    }

    #[test]
    fn dirichlet_form_matches_minimiser_on_random_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let n = 2 + (rng.random::<u32>() % 6) as usize;
            let chain = random_chain(&mut rng, n, true);
            let mu = random_measure(&mut rng, n);
            let a = dirichlet_form(&chain, &mu).unwrap();
            let b = donsker_varadhan(&chain, &mu).unwrap().rate;
            assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn minimiser_handles_boundary_measures() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let chain = random_chain(&mut rng, 4, true);
        let mu = OccupationMeasure::new(vec![0.5, 0.0, 0.5, 0.0]).unwrap();
        let a = dirichlet_form(&chain, &mu).unwrap();
        let b = donsker_varadhan(&chain, &mu).unwrap();
        assert!((a - b.rate).abs() <= 1e-8, "{a} vs {}", b.rate);
        assert_eq!(b.potential[1], f64::NEG_INFINITY);
    }

    #[test]
    fn variational_examples() {
        let m = build_1d_two_state(1.0, 0.0, 1.0).unwrap();
        let s = variational_free_energy(&m, &[LN_2]).unwrap();
        assert!((s.value - 0.5).abs() < 1e-12);
        assert!((free_energy_lattice(&m, LN_2).unwrap() - s.value).abs() < 1e-12);
        let it = variational_free_energy_iterative(&m, &[LN_2]).unwrap();
        assert!((it.value - 0.5).abs() <= 1e-8, "{it:?}");

        let s = variational_free_energy(&m, &[0.0]).unwrap();
        assert!(s.value.abs() < 1e-15);
        assert!((s.maximizer.weights()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn planar_variational_matches_spectral() {
        let m = four_velocity(2.0, None);
        let alpha = [0.7, -0.3];
        let spectral = principal_eigenvalue(&tilted_matrix(&m, &alpha).unwrap()).unwrap();
        let eig = variational_free_energy(&m, &alpha).unwrap();
        let iter = variational_free_energy_iterative(&m, &alpha).unwrap();
        assert!((eig.value - spectral.eigenvalue).abs() <= 1e-8);
        assert!((iter.value - spectral.eigenvalue).abs() <= 1e-8);
        assert!(iter.value <= spectral.eigenvalue + 1e-12 && iter.upper_bound >= spectral.eigenvalue - 1e-12);
    }

    #[test]
    fn nonsymmetric_variational_matches_spectral() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in [3, 5, 8] {
            let chain = random_chain(&mut rng, n, false);
            let m = LatticeModel::new(1.1, 0.3, 1.4, JumpKernel::nearest_neighbor(1), chain).unwrap();
            for a in [-0.5, 0.2, 0.6] {
                let spectral = principal_eigenvalue(&tilted_matrix(&m, &[a]).unwrap()).unwrap();
                let v = variational_free_energy(&m, &[a]).unwrap();
                assert_eq!(v.method, VariationalMethod::MirrorAscent);
                assert!((v.value - spectral.eigenvalue).abs() <= 1e-8, "n={n} a={a}: {} vs {}", v.value, spectral.eigenvalue);
                // maximiser is the product of left and right Perron vectors
                let prod: Vec<f64> = spectral.left.iter().zip(&spectral.right).map(|(l, r)| l * r).collect();
                let s: f64 = prod.iter().sum();
                for (x, y) in v.maximizer.weights().iter().zip(&prod) {
                    assert!((x - y / s).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn continuum_spectral_and_variational_agree_with_closed_form() {
        let c = ContinuumModel::new(2.0, 1.0, 4.0, 0.5).unwrap();
        let model = Model::from(c);
        for a in [-1.2, 0.0, 0.3, 2.0] {
            let closed = closed_free_energy(&model, &[a]).unwrap().unwrap();
            let spectral = spectral_free_energy(&model, &[a]).unwrap();
            assert!((closed - spectral).abs() <= 1e-12 * closed.abs().max(1.0));
            let (m, chain) = tilted_system(&model, &[a]).unwrap();
            let v = variational_iterative_for(&m, &chain).unwrap();
            assert!((v.value - closed).abs() <= 1e-8);
        }
    }

    #[test]
    fn spectral_gradient_matches_closed_derivative() {
        let lattice = build_1d_two_state(2.0, 1.0, 4.0).unwrap();
        let closed = crate::free_energy::LatticeFreeEnergy::new(&lattice).unwrap();
        let c = ContinuumModel::new(2.0, 1.0, 4.0, 0.5).unwrap();
        for a in [-2.0, -0.3, 0.0, 1.1] {
            let g = spectral_gradient(&Model::from(lattice.clone()), &[a]).unwrap()[0];
            let d = closed.derivative(a).unwrap();
            assert!((g - d).abs() <= 1e-12 * d.abs().max(1.0), "{g} {d}");
            let g = spectral_gradient(&Model::from(c), &[a]).unwrap()[0];
            let d = crate::free_energy::ContinuumFreeEnergy(c).derivative(a).unwrap();
            assert!((g - d).abs() <= 1e-12 * d.abs().max(1.0), "{g} {d}");
        }
        let planar = four_velocity(2.0, Some(Matrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { (1 + i + 2 * j) as f64 / 4.0 })));
        let model = Model::from(planar);
        let a = [0.4, -0.7];
        let g = spectral_gradient(&model, &a).unwrap();
        for k in 0..2 {
            let h = 1e-5;
            let (mut up, mut down) = (a, a);
            up[k] += h;
            down[k] -= h;
            let fd = (spectral_free_energy(&model, &up).unwrap() - spectral_free_energy(&model, &down).unwrap()) / (2.0 * h);
            assert!((g[k] - fd).abs() < 1e-7, "{} {fd}", g[k]);
        }
    }

    #[test]
    fn spectral_free_energy_along_an_axis() {
        let m = four_velocity(2.0, None);
        let f = SpectralFreeEnergy { model: Model::from(m.clone()), axis: 1 };
        let direct = principal_eigenvalue(&tilted_matrix(&m, &[0.0, 0.7]).unwrap()).unwrap().eigenvalue;
        assert_eq!(f.value(0.7), direct);
        assert!(closed_free_energy(&Model::from(m), &[0.1, 0.0]).is_none());
    }

    #[test]
    fn feynman_kac_at_zero_is_exact() {
        let m = four_velocity(2.0, None);
        for scheme in [FeynmanKacScheme::Direct, FeynmanKacScheme::Resampled] {
            let mut cfg = FeynmanKacConfig::new(5.0, 500, 1);
            cfg.scheme = scheme;
            let e = feynman_kac_estimate(&m, &[0.0, 0.0], &cfg).unwrap();
            assert_eq!(e.estimate, 0.0);
        }
    }

    #[test]
    fn feynman_kac_groups_partition_replicas() {
        let cfg = FeynmanKacConfig::new(1.0, 10_001, 0);
        let total: usize = (0..cfg.groups()).map(|g| cfg.group_range(g).len()).sum();
        assert_eq!(total, 10_001);
        assert_eq!(cfg.group_range(cfg.groups() - 1).end, 10_001);
    }

    #[test]
    fn resampled_feynman_kac_tracks_spectral_value() {
        let m = four_velocity(2.0, None);
        let alpha = [0.4, 0.2];
        let exact = principal_eigenvalue(&tilted_matrix(&m, &alpha).unwrap()).unwrap().eigenvalue;
        let cfg = FeynmanKacConfig::new(50.0, 8000, 7);
        let e = feynman_kac_estimate(&m, &alpha, &cfg).unwrap();
        assert!((e.estimate - exact).abs() <= 4.0 * e.stderr, "{e:?} vs {exact}");
        assert!(e.stderr < 0.01);
    }

    #[test]
    fn direct_feynman_kac_is_biased_low_at_long_horizons() {
        // log of a heavy-tailed mean: the direct estimator underestimates
        let m = build_1d_two_state(1.0, 0.0, 1.0).unwrap();
        let mut cfg = FeynmanKacConfig::new(200.0, 2000, 3);
        cfg.scheme = FeynmanKacScheme::Direct;
        let e = feynman_kac_estimate(&m, &[LN_2], &cfg).unwrap();
        assert!(e.estimate < 0.49, "{e:?}");
    }

    #[test]
    fn slow_fast_deviations() {
        let m = build_1d_two_state(2.0, 1.0, 1.0).unwrap();
        let d = slow_fast_limit(&m, &[0.0], &[10.0, 100.0, 1000.0]).unwrap();
        assert!(d.points.iter().all(|p| p.1 < 1e-15));
        let a: f64 = 0.5;
        let limit = slow_fast_free_energy(&m, &[a]).unwrap();
        assert!((limit - (a.cosh() - 1.0) * 4.0).abs() < 1e-14);
        let d = slow_fast_limit(&m, &[a], &[10.0, 100.0, 1000.0]).unwrap();
        for w in d.points.windows(2) {
            let ratio = w[1].1 / w[0].1;
            assert!((ratio - 0.1).abs() < 2e-3, "{ratio}");
        }
    }

    #[test]
    fn gamma_monotone_on_grid() {
        let m = four_velocity(1.0, None);
        let alphas: Vec<Vec<f64>> = (-4..=4).map(|k| vec![0.25 * k as f64, 0.1]).collect();
        let g = gamma_monotonicity(&m, &alphas, &[1.0, 10.0, 100.0, 1000.0]).unwrap();
        assert!(g.holds(1e-12), "{}", g.max_increase);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn one_dimensional_eigenvalue_matches_closed_form(
            lambda in 0.0f64..4.0, kappa in 0.0f64..4.0, gamma in 0.05f64..4.0, a in -2.0f64..2.0,
        ) {
            let m = build_1d_two_state(lambda, kappa, gamma).unwrap();
            let e = principal_eigenvalue(&tilted_matrix(&m, &[a]).unwrap()).unwrap().eigenvalue;
            let f = free_energy_lattice(&m, a).unwrap();
            prop_assert!((e - f).abs() <= 1e-12 * f.abs().max(1.0));
        }

        #[test]
        fn rate_is_nonnegative(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let chain = random_chain(&mut rng, 4, seed % 2 == 0);
            let mu = random_measure(&mut rng, 4);
            let r = donsker_varadhan_rate(&chain, &mu).unwrap();
            prop_assert!(r >= 0.0);
            prop_assert!(r > 1e-12);
        }

        #[test]
        fn free_energy_is_midpoint_convex(seed in 0u64..1000, t in -1.5f64..1.5, s in -1.5f64..1.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let chain = random_chain(&mut rng, 4, false);
            let m = LatticeModel::new(1.0, 0.5, 1.0, JumpKernel::nearest_neighbor(1), chain).unwrap();
            let f = |a: f64| principal_eigenvalue(&tilted_matrix(&m, &[a]).unwrap()).unwrap().eigenvalue;
            let mid = f(0.5 * (t + s));
            prop_assert!(mid <= 0.5 * (f(t) + f(s)) + 1e-10);
        }
    }
}
