//! Model parameter objects shared by the analytic and stochastic routes.
//!
//! A [`LatticeModel`] is a particle on `Z^d` that jumps by its current
//! velocity at rate `lambda`, makes passive kernel jumps at total rate
//! `passive_rate`, and changes velocity through the flip chain scaled by
//! `gamma`. The one-dimensional nearest-neighbour model stores its passive
//! part as the kernel `{+1: 1/2, -1: 1/2}` with total rate `2 kappa`, so the
//! same code path serves both the two-velocity and the general model.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

const PROBABILITY_TOL: f64 = 1e-12;

/// Finite symmetric probability distribution on `Z^d \ {0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpKernel {
    dimension: usize,
    support: Vec<(Vec<i64>, f64)>,
}

impl JumpKernel {
    pub fn new(dimension: usize, support: Vec<(Vec<i64>, f64)>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::parameter("dimension", "must be at least 1"));
        }
        if support.is_empty() {
            return Err(Error::parameter("kernel", "support is empty"));
        }
        let mut total = 0.0;
        for (i, (z, p)) in support.iter().enumerate() {
            if z.len() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    found: z.len(),
                });
            }
            if z.iter().all(|&c| c == 0) {
                return Err(Error::parameter("kernel", "the zero vector is not a jump"));
            }
            if !(p.is_finite() && *p > 0.0 && *p <= 1.0) {
                return Err(Error::parameter(
                    "kernel",
                    format!("probability {p} of {z:?} is outside (0, 1]"),
                ));
            }
            if support[..i].iter().any(|(w, _)| w == z) {
                return Err(Error::parameter("kernel", format!("{z:?} listed twice")));
            }
            total += p;
        }
        if (total - 1.0).abs() > PROBABILITY_TOL {
            return Err(Error::parameter(
                "kernel",
                format!("probabilities sum to {total}"),
            ));
        }
        for (z, p) in &support {
            let neg: Vec<i64> = z.iter().map(|c| -c).collect();
            match support.iter().find(|(w, _)| *w == neg) {
                Some((_, q)) if q == p => {}
                Some((_, q)) => {
                    return Err(Error::parameter(
                        "kernel",
                        format!("p({z:?}) = {p} but p(-z) = {q}"),
                    ))
                }
                None => {
                    return Err(Error::parameter(
                        "kernel",
                        format!("{z:?} has no mirror jump"),
                    ))
                }
            }
        }
        Ok(JumpKernel { dimension, support })
    }

    /// `p(+e_k) = p(-e_k) = 1 / (2d)` for every coordinate direction.
    pub fn nearest_neighbor(dimension: usize) -> Self {
        let w = 0.5 / dimension as f64;
        let mut support = Vec::with_capacity(2 * dimension);
        for k in 0..dimension {
            for sign in [1, -1] {
                let mut z = vec![0; dimension];
                z[k] = sign;
                support.push((z, w));
            }
        }
        JumpKernel { dimension, support }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn support(&self) -> &[(Vec<i64>, f64)] {
        &self.support
    }

    /// `sum_z p(z) (cosh<alpha, z> - 1)`, which equals
    /// `sum_z p(z) (exp<alpha, z> - 1)` by symmetry.
    pub fn cumulant(&self, alpha: &[f64]) -> Result<f64> {
        self.check_dimension(alpha.len())?;
        Ok(self
            .support
            .iter()
            .map(|(z, p)| p * cosh_m1(dot(alpha, z)))
            .sum())
    }

    /// Gradient of [`cumulant`](Self::cumulant).
    pub fn cumulant_gradient(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        self.check_dimension(alpha.len())?;
        let mut g = vec![0.0; self.dimension];
        for (z, p) in &self.support {
            let s = dot(alpha, z).sinh();
            for (gk, &zk) in g.iter_mut().zip(z) {
                *gk += p * zk as f64 * s;
            }
        }
        Ok(g)
    }

    /// Second moment matrix `sum_z p(z) z z^T`.
    pub fn second_moment(&self) -> Matrix {
        let d = self.dimension;
        let mut m = Matrix::zeros(d, d);
        for (z, p) in &self.support {
            for i in 0..d {
                for j in 0..d {
                    m[(i, j)] += p * (z[i] * z[j]) as f64;
                }
            }
        }
        m
    }

    fn check_dimension(&self, found: usize) -> Result<()> {
        if found != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found,
            });
        }
        Ok(())
    }
}

/// Free-standing form of [`JumpKernel::cumulant`].
pub fn kernel_cumulant(kernel: &JumpKernel, alpha: &[f64]) -> Result<f64> {
    kernel.cumulant(alpha)
}

/// `cosh(x) - 1` without cancellation near zero.
pub(crate) fn cosh_m1(x: f64) -> f64 {
    let s = (0.5 * x).sinh();
    2.0 * s * s
}

pub(crate) fn dot(alpha: &[f64], z: &[i64]) -> f64 {
    alpha.iter().zip(z).map(|(a, &b)| a * b as f64).sum()
}

/// Finite velocity set with an irreducible flip-rate matrix.
///
/// Self transitions are not allowed: the diagonal of `rates` must be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityChain {
    dimension: usize,
    velocities: Vec<Vec<i64>>,
    rates: Matrix,
    generator: Matrix,
    symmetric: bool,
}

impl VelocityChain {
    pub fn new(dimension: usize, velocities: Vec<Vec<i64>>, rates: Matrix) -> Result<Self> {
        let n = velocities.len();
        if n == 0 {
            return Err(Error::parameter("velocities", "velocity set is empty"));
        }
        if rates.rows() != n || rates.cols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: rates.rows().max(rates.cols()),
            });
        }
        for (i, v) in velocities.iter().enumerate() {
            if v.len() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    found: v.len(),
                });
            }
            if velocities[..i].contains(v) {
                return Err(Error::parameter(
                    "velocities",
                    format!("{v:?} listed twice"),
                ));
            }
        }
        for i in 0..n {
            for j in 0..n {
                let r = rates[(i, j)];
                if !r.is_finite() || r < 0.0 {
                    return Err(Error::parameter(
                        "flip_rates",
                        format!("rate {r} at ({i}, {j})"),
                    ));
                }
                if i == j && r != 0.0 {
                    return Err(Error::parameter(
                        "flip_rates",
                        "self transitions are not allowed",
                    ));
                }
            }
        }
        if !strongly_connected(&rates) {
            return Err(Error::Reducible);
        }

        let mut generator = rates.clone();
        for i in 0..n {
            let out: f64 = rates.row(i).iter().sum();
            generator[(i, i)] = -out;
        }
        for i in 0..n {
            let row_sum: f64 = generator.row(i).iter().sum();
            if row_sum.abs() > 1e-14 * (1.0 + generator[(i, i)].abs()) {
                return Err(Error::numerical(
                    "flip generator",
                    format!("row {i} sums to {row_sum}"),
                ));
            }
        }
        let symmetric = (0..n).all(|i| (0..n).all(|j| rates[(i, j)] == rates[(j, i)]));
        Ok(VelocityChain {
            dimension,
            velocities,
            rates,
            generator,
            symmetric,
        })
    }

    /// Two velocities `{+1, -1}` flipping into each other at unit rate.
    pub fn two_state() -> Self {
        VelocityChain::new(
            1,
            vec![vec![1], vec![-1]],
            Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]),
        )
        .expect("two-state chain is valid")
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    pub fn velocities(&self) -> &[Vec<i64>] {
        &self.velocities
    }

    /// Flip rates `pi(v, v')`.
    pub fn rates(&self) -> &Matrix {
        &self.rates
    }

    /// Generator `A` of the unit-rate flip chain.
    pub fn generator(&self) -> &Matrix {
        &self.generator
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Total flip rate out of velocity `i`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.generator[(i, i)]
    }

    pub fn uniform_measure(&self) -> OccupationMeasure {
        let n = self.len();
        OccupationMeasure {
            weights: vec![1.0 / n as f64; n],
        }
    }

    /// Invariant measure `nu` with `nu A = 0`.
    ///
    /// Symmetric chains return the uniform measure directly; otherwise the
    /// transposed generator is solved with its last equation replaced by the
    /// normalisation.
    pub fn stationary_measure(&self) -> Result<OccupationMeasure> {
        let n = self.len();
        if self.symmetric {
            return Ok(self.uniform_measure());
        }
        let mut system = self.generator.transpose();
        for j in 0..n {
            system[(n - 1, j)] = 1.0;
        }
        let mut rhs = vec![0.0; n];
        rhs[n - 1] = 1.0;
        let nu = linalg::solve(&system, &rhs)
            .ok_or_else(|| Error::numerical("stationary measure", "singular system"))?;
        if nu.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
            return Err(Error::numerical(
                "stationary measure",
                format!("non-positive solution {nu:?}"),
            ));
        }
        let scale = self.generator.max_abs().max(1.0);
        let residual = (0..n)
            .map(|j| (0..n).map(|i| nu[i] * self.generator[(i, j)]).sum::<f64>().abs())
            .fold(0.0, f64::max);
        if residual > 1e-12 * scale {
            return Err(Error::numerical(
                "stationary measure",
                format!("residual {residual:e}"),
            ));
        }
        Ok(OccupationMeasure { weights: nu })
    }
}

/// Free-standing form of [`VelocityChain::stationary_measure`].
pub fn stationary_measure(chain: &VelocityChain) -> Result<OccupationMeasure> {
    chain.stationary_measure()
}

/// Tarjan's algorithm on the positive-rate graph; true iff it has a single
/// strongly connected component.
fn strongly_connected(rates: &Matrix) -> bool {
    struct Tarjan<'a> {
        rates: &'a Matrix,
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on_stack: Vec<bool>,
        stack: Vec<usize>,
        next: usize,
        components: usize,
    }

    impl Tarjan<'_> {
        fn visit(&mut self, v: usize) {
            self.index[v] = Some(self.next);
            self.low[v] = self.next;
            self.next += 1;
            self.stack.push(v);
            self.on_stack[v] = true;
            for w in 0..self.rates.cols() {
                if w == v || self.rates[(v, w)] <= 0.0 {
                    continue;
                }
                match self.index[w] {
                    None => {
                        self.visit(w);
                        self.low[v] = self.low[v].min(self.low[w]);
                    }
                    Some(iw) if self.on_stack[w] => self.low[v] = self.low[v].min(iw),
                    Some(_) => {}
                }
            }
            if Some(self.low[v]) == self.index[v] {
                while let Some(w) = self.stack.pop() {
                    self.on_stack[w] = false;
                    if w == v {
                        break;
                    }
                }
                self.components += 1;
            }
        }
    }

    let n = rates.rows();
    let mut t = Tarjan {
        rates,
        index: vec![None; n],
        low: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::with_capacity(n),
        next: 0,
        components: 0,
    };
    for v in 0..n {
        if t.index[v].is_none() {
            t.visit(v);
        }
    }
    t.components == 1
}

/// Probability vector indexed by the velocity set.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationMeasure {
    weights: Vec<f64>,
}

impl OccupationMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::parameter("measure", "empty"));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::parameter("measure", "negative or non-finite entry"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > PROBABILITY_TOL {
            return Err(Error::parameter(
                "measure",
                format!("weights sum to {total}"),
            ));
        }
        Ok(OccupationMeasure { weights })
    }

    /// Normalises nonnegative weights to unit sum.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::parameter("measure", "weights do not normalise"));
        }
        OccupationMeasure::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn check_rate(name: &'static str, value: f64) -> Result<()> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::parameter(name, format!("{value} is not a finite nonnegative rate")));
    }
    Ok(())
}

/// Run-and-tumble particle on `Z^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeModel {
    lambda: f64,
    kappa: f64,
    gamma: f64,
    passive_rate: f64,
    kernel: JumpKernel,
    velocities: VelocityChain,
}

impl LatticeModel {
    /// General model: passive jumps at total rate `kappa` drawn from `kernel`.
    pub fn new(
        lambda: f64,
        kappa: f64,
        gamma: f64,
        kernel: JumpKernel,
        velocities: VelocityChain,
    ) -> Result<Self> {
        Self::with_passive_rate(lambda, kappa, gamma, kappa, kernel, velocities)
    }

    fn with_passive_rate(
        lambda: f64,
        kappa: f64,
        gamma: f64,
        passive_rate: f64,
        kernel: JumpKernel,
        velocities: VelocityChain,
    ) -> Result<Self> {
        check_rate("lambda", lambda)?;
        check_rate("kappa", kappa)?;
        check_rate("gamma", gamma)?;
        if gamma == 0.0 && velocities.len() > 1 {
            return Err(Error::Reducible);
        }
        if kernel.dimension() != velocities.dimension() {
            return Err(Error::DimensionMismatch {
                expected: kernel.dimension(),
                found: velocities.dimension(),
            });
        }
        Ok(LatticeModel {
            lambda,
            kappa,
            gamma,
            passive_rate,
            kernel,
            velocities,
        })
    }

    /// One-dimensional two-velocity model with a general symmetric kernel
    /// used at total rate `kappa`.
    pub fn one_dimensional(lambda: f64, kappa: f64, gamma: f64, kernel: JumpKernel) -> Result<Self> {
        if kernel.dimension() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: kernel.dimension(),
            });
        }
        Self::new(lambda, kappa, gamma, kernel, VelocityChain::two_state())
    }

    pub fn dimension(&self) -> usize {
        self.kernel.dimension()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Total rate of passive kernel jumps: `2 kappa` for the nearest-neighbour
    /// two-velocity model, `kappa` otherwise.
    pub fn passive_rate(&self) -> f64 {
        self.passive_rate
    }

    pub fn kernel(&self) -> &JumpKernel {
        &self.kernel
    }

    pub fn velocities(&self) -> &VelocityChain {
        &self.velocities
    }

    /// Same model with `lambda` and `gamma` replaced.
    pub fn with_rates(&self, lambda: f64, gamma: f64) -> Result<Self> {
        Self::with_passive_rate(
            lambda,
            self.kappa,
            gamma,
            self.passive_rate,
            self.kernel.clone(),
            self.velocities.clone(),
        )
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        self.with_rates(self.lambda, gamma)
    }

    /// `passive_rate * Gamma(alpha)`.
    pub fn passive_cumulant(&self, alpha: &[f64]) -> Result<f64> {
        Ok(self.passive_rate * self.kernel.cumulant(alpha)?)
    }

    /// Indices of `+1` and `-1` plus the common flip rate `gamma * pi`, when
    /// the model is one-dimensional with velocities `{+1, -1}` and symmetric
    /// flips.
    pub fn two_state_form(&self) -> Result<TwoStateForm> {
        let chain = &self.velocities;
        if self.dimension() != 1 || chain.len() != 2 || !chain.is_symmetric() {
            return Err(Error::NotTwoState);
        }
        let v = chain.velocities();
        let (plus, minus) = match (v[0][0], v[1][0]) {
            (1, -1) => (0, 1),
            (-1, 1) => (1, 0),
            _ => return Err(Error::NotTwoState),
        };
        Ok(TwoStateForm {
            plus,
            minus,
            flip_rate: self.gamma * chain.rates()[(0, 1)],
        })
    }
}

/// Index layout of a one-dimensional two-velocity model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoStateForm {
    pub plus: usize,
    pub minus: usize,
    /// Effective flip rate `gamma * pi(+1, -1)`.
    pub flip_rate: f64,
}

/// Nearest-neighbour run-and-tumble particle on `Z` with velocities `{+1, -1}`.
///
/// The passive part `kappa (f(x+1) + f(x-1) - 2 f(x))` is stored as the
/// kernel `{+1: 1/2, -1: 1/2}` with total rate `2 kappa`.
pub fn build_1d_two_state(lambda: f64, kappa: f64, gamma: f64) -> Result<LatticeModel> {
    check_rate("kappa", kappa)?;
    LatticeModel::with_passive_rate(
        lambda,
        kappa,
        gamma,
        2.0 * kappa,
        JumpKernel::nearest_neighbor(1),
        VelocityChain::two_state(),
    )
}

/// Telegrapher process on `R` with optional external field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuumModel {
    lambda: f64,
    kappa: f64,
    gamma: f64,
    field: f64,
}

impl ContinuumModel {
    pub fn new(lambda: f64, kappa: f64, gamma: f64, field: f64) -> Result<Self> {
        check_rate("lambda", lambda)?;
        check_rate("kappa", kappa)?;
        check_rate("gamma", gamma)?;
        if gamma == 0.0 {
            return Err(Error::Reducible);
        }
        if !field.is_finite() {
            return Err(Error::parameter("field", "not finite"));
        }
        if field != 0.0 && kappa == 0.0 {
            return Err(Error::parameter(
                "field",
                "a nonzero field needs kappa > 0 to act",
            ));
        }
        Ok(ContinuumModel {
            lambda,
            kappa,
            gamma,
            field,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn field(&self) -> f64 {
        self.field
    }

    /// Deterministic drift `2 kappa E`.
    pub fn drift(&self) -> f64 {
        2.0 * self.kappa * self.field
    }
}

/// Either kind of model, as read from a configuration file.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Lattice(LatticeModel),
    Continuum(ContinuumModel),
}

impl Model {
    pub fn dimension(&self) -> usize {
        match self {
            Model::Lattice(m) => m.dimension(),
            Model::Continuum(_) => 1,
        }
    }
}

impl From<LatticeModel> for Model {
    fn from(m: LatticeModel) -> Self {
        Model::Lattice(m)
    }
}

impl From<ContinuumModel> for Model {
    fn from(m: ContinuumModel) -> Self {
        Model::Continuum(m)
    }
}
