//! Fourier–Laplace transforms of the particle position, diffusion constants
//! and diffusive-scaling diagnostics.
//!
//! Each transform is evaluated twice: once from the closed form and once by
//! solving the resolvent system `(z I - M(q)) x = mu0` with an LU
//! factorisation. A disagreement above `1e-12` relative to the value, widened
//! by the condition number of the system when that is larger, is an error.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::model::{ContinuumModel, LatticeModel, Model};
use crate::stats;
use crate::Complex;

const CLOSED_FORM_TOL: f64 = 1e-12;

/// `M(q) = [[a, b], [b, conj(a)]]` for the one-dimensional lattice model,
/// rows ordered `(+1, -1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportMatrix1D {
    pub q: f64,
    pub a: Complex,
    pub b: f64,
}

impl TransportMatrix1D {
    pub fn matrix(&self) -> CMatrix {
        let b = Complex::new(self.b, 0.0);
        CMatrix::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => self.a,
            (1, 1) => self.a.conj(),
            _ => b,
        })
    }
}

/// Real part of the diagonal of `M(q)` without the flip term, for complex
/// wave numbers: `passive * sum_z p(z)(cos(qz) - 1) + lambda (cos q - 1)`.
pub(crate) fn spreading_symbol(model: &LatticeModel, q: Complex) -> Complex {
    let passive: Complex = model
        .kernel()
        .support()
        .iter()
        .map(|(z, p)| cos_m1(q * z[0] as f64).scale(*p))
        .sum();
    passive * model.passive_rate() + cos_m1(q) * model.lambda()
}

/// `cos x - 1 = -2 sin^2(x/2)`, accurate near zero.
fn cos_m1(x: Complex) -> Complex {
    let s = (x * 0.5).sin();
    s * s * -2.0
}

pub fn transport_matrix(model: &LatticeModel, q: f64) -> Result<TransportMatrix1D> {
    let form = model.two_state_form()?;
    let c = spreading_symbol(model, Complex::new(q, 0.0)).re;
    let a = Complex::new(c - form.flip_rate, model.lambda() * q.sin());
    Ok(TransportMatrix1D {
        q,
        a,
        b: form.flip_rate,
    })
}

/// Value of a Fourier–Laplace transform at `(q, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierLaplaceValue {
    pub q: f64,
    pub z: Complex,
    /// Closed-form value, equal to `(1,1) (z I - M(q))^{-1} mu0`.
    pub value: Complex,
    /// `|closed form - resolvent|`.
    pub closed_form_residual: f64,
}

fn check_z(z: Complex) -> Result<()> {
    if !(z.re > 0.0) || !z.im.is_finite() || !z.re.is_finite() {
        return Err(Error::Domain(format!("Re z must be positive, got {z}")));
    }
    Ok(())
}

fn resolvent_sum(system: &CMatrix, mu0: [f64; 2]) -> Result<Complex> {
    let rhs = [Complex::new(mu0[0], 0.0), Complex::new(mu0[1], 0.0)];
    let x = linalg::solve(system, &rhs)
        .ok_or_else(|| Error::numerical("resolvent", "z I - M(q) is singular"))?;
    Ok(x[0] + x[1])
}

/// One-norm condition number of a 2x2 system.
fn condition_2x2(a: &CMatrix) -> f64 {
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    let inv = CMatrix::from_fn(2, 2, |i, j| match (i, j) {
        (0, 0) => a[(1, 1)],
        (1, 1) => a[(0, 0)],
        _ => -a[(i, j)],
    });
    a.norm_one() * inv.norm_one() / det.norm()
}

fn paired(
    q: f64,
    z: Complex,
    resolvent: Complex,
    closed: Complex,
    system: &CMatrix,
) -> Result<FourierLaplaceValue> {
    let residual = (resolvent - closed).norm();
    let tol = CLOSED_FORM_TOL.max(64.0 * f64::EPSILON * condition_2x2(system));
    if !(residual <= tol * closed.norm().max(1.0)) {
        return Err(Error::numerical(
            "Fourier-Laplace transform",
            format!("closed form {closed} disagrees with resolvent {resolvent} at q={q}, z={z}"),
        ));
    }
    Ok(FourierLaplaceValue {
        q,
        z,
        value: closed,
        closed_form_residual: residual,
    })
}

/// `S(q, z)` for the lattice model started at the origin with velocity `+1`
/// with probability `alpha0`.
pub fn fourier_laplace_lattice(
    model: &LatticeModel,
    q: f64,
    z: Complex,
    alpha0: f64,
) -> Result<FourierLaplaceValue> {
    check_z(z)?;
    if !(0.0..=1.0).contains(&alpha0) {
        return Err(Error::Domain(format!("alpha0 = {alpha0} is not a probability")));
    }
    let m = transport_matrix(model, q)?;
    let system = CMatrix::identity(2).scale(z).sub(&m.matrix());
    let resolvent = resolvent_sum(&system, [alpha0, 1.0 - alpha0])?;

    let b = m.b;
    let c = m.a.re + b;
    let s = model.lambda() * q.sin();
    let numerator = Complex::new(0.0, s * (2.0 * alpha0 - 1.0)) + 2.0 * b + z - c;
    // (z + b - c)^2 - b^2 + s^2, factored to avoid cancellation
    let shifted = z - c;
    let denominator = shifted * (shifted + 2.0 * b) + s * s;
    paired(q, z, resolvent, numerator / denominator, &system)
}

/// `S(q, z)` for the telegrapher process with uniform initial velocity.
///
/// A field `E` enters as the shift `z -> z - 2 i kappa E q`.
pub fn fourier_laplace_continuum(
    model: &ContinuumModel,
    q: f64,
    z: Complex,
) -> Result<FourierLaplaceValue> {
    check_z(z)?;
    let (lambda, kappa, gamma) = (model.lambda(), model.kappa(), model.gamma());
    let zs = z - Complex::new(0.0, model.drift() * q);
    let base = zs + kappa * q * q + gamma;
    let system = CMatrix::from_rows(&[
        alloc::vec![base - Complex::new(0.0, lambda * q), Complex::new(-gamma, 0.0)],
        alloc::vec![Complex::new(-gamma, 0.0), base + Complex::new(0.0, lambda * q)],
    ]);
    let resolvent = resolvent_sum(&system, [0.5, 0.5])?;

    let numerator = zs + 2.0 * gamma + kappa * q * q;
    let reduced = zs + kappa * q * q;
    let denominator = reduced * (reduced + 2.0 * gamma) + lambda * lambda * q * q;
    paired(q, z, resolvent, numerator / denominator, &system)
}

/// Limiting diffusion constant `lim Var(X_t) / t`.
///
/// Lattice: `passive * sum_z z^2 p(z) + lambda + lambda^2 / gamma_flip`,
/// which is `2 kappa + lambda + lambda^2 / gamma` for the nearest-neighbour
/// model. Continuum: `2 kappa + lambda^2 / gamma`, independent of the field.
pub fn diffusion_constant(model: &Model) -> Result<f64> {
    match model {
        Model::Lattice(m) => {
            let form = m.two_state_form()?;
            let second = m.kernel().second_moment()[(0, 0)];
            let lambda = m.lambda();
            Ok(m.passive_rate() * second + lambda + lambda * lambda / form.flip_rate)
        }
        Model::Continuum(m) => Ok(2.0 * m.kappa() + m.lambda() * m.lambda() / m.gamma()),
    }
}

/// Asymptotic velocity `lim E X_t / t`: `lambda sum_v nu(v) v` on the
/// lattice (zero for the two-velocity model), `2 kappa E` in the continuum.
pub fn asymptotic_velocity(model: &Model) -> Result<Vec<f64>> {
    match model {
        Model::Lattice(m) => {
            let nu = m.velocities().stationary_measure()?;
            Ok((0..m.dimension())
                .map(|k| {
                    m.lambda()
                        * m.velocities()
                            .velocities()
                            .iter()
                            .zip(nu.weights())
                            .map(|(v, w)| w * v[k] as f64)
                            .sum::<f64>()
                })
                .collect())
        }
        Model::Continuum(m) => Ok(alloc::vec![m.drift()]),
    }
}

/// Limiting covariance `lim Cov(X_t) / t` of a general lattice model.
///
/// Passive jumps give `passive sum_z p(z) z z^T`, transport jumps give
/// `lambda sum_v nu(v) v v^T`, and velocity correlations give
/// `lambda^2 (<v_i, g_j>_nu + <v_j, g_i>_nu)` where `g_j` solves the Poisson
/// equation `-gamma A g_j = v_j - nu(v_j)` with `nu(g_j) = 0`.
pub fn diffusion_matrix(model: &LatticeModel) -> Result<linalg::Matrix> {
    let chain = model.velocities();
    let d = model.dimension();
    let n = chain.len();
    let nu = chain.stationary_measure()?;
    let nu = nu.weights();
    let vel = chain.velocities();
    let (lambda, gamma) = (model.lambda(), model.gamma());

    let centred: Vec<Vec<f64>> = (0..d)
        .map(|k| {
            let mean: f64 = vel.iter().zip(nu).map(|(v, w)| w * v[k] as f64).sum();
            vel.iter().map(|v| v[k] as f64 - mean).collect()
        })
        .collect();
    let poisson: Vec<Vec<f64>> = if n == 1 {
        alloc::vec![alloc::vec![0.0]; d]
    } else {
        // -gamma A + 1 nu^T is nonsingular and fixes nu(g) = 0
        let system = linalg::Matrix::from_fn(n, n, |i, j| -gamma * chain.generator()[(i, j)] + nu[j]);
        let lu = linalg::Lu::new(&system)
            .ok_or_else(|| Error::numerical("diffusion matrix", "singular Poisson system"))?;
        centred.iter().map(|f| lu.solve(f)).collect()
    };

    let second = model.kernel().second_moment();
    Ok(linalg::Matrix::from_fn(d, d, |i, j| {
        let jumps: f64 = vel.iter().zip(nu).map(|(v, w)| w * (v[i] * v[j]) as f64).sum();
        let corr: f64 = (0..n)
            .map(|v| nu[v] * (centred[i][v] * poisson[j][v] + centred[j][v] * poisson[i][v]))
            .sum();
        model.passive_rate() * second[(i, j)] + lambda * jumps + lambda * lambda * corr
    }))
}

/// Deviation of the rescaled transform from its diffusive limit.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingDiagnostic {
    /// `(epsilon, |eps^2 S(eps q, eps^2 z) - 1 / (z + sigma^2 q^2 / 2)|)`.
    pub points: Vec<(f64, f64)>,
    /// Log-log least-squares slope of deviation against epsilon.
    pub order: f64,
    pub sigma2: f64,
}

pub fn scaling_diagnostic(
    model: &Model,
    q: f64,
    z: f64,
    epsilons: &[f64],
    alpha0: f64,
) -> Result<ScalingDiagnostic> {
    if !(z > 0.0) {
        return Err(Error::Domain(format!("z must be positive, got {z}")));
    }
    if q == 0.0 || !q.is_finite() {
        return Err(Error::Domain("q must be nonzero".into()));
    }
    if epsilons.is_empty()
        || epsilons.iter().any(|&e| !(e > 0.0))
        || epsilons.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(Error::Domain(
            "epsilons must be positive and strictly decreasing".into(),
        ));
    }
    if let Model::Continuum(m) = model {
        if m.field() != 0.0 {
            return Err(Error::Domain(
                "diffusive scaling needs a zero field".into(),
            ));
        }
    }
    let sigma2 = diffusion_constant(model)?;
    let limit = 1.0 / (z + 0.5 * sigma2 * q * q);
    let mut points = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let zz = Complex::new(eps * eps * z, 0.0);
        let s = match model {
            Model::Lattice(m) => fourier_laplace_lattice(m, eps * q, zz, alpha0)?,
            Model::Continuum(m) => fourier_laplace_continuum(m, eps * q, zz)?,
        };
        points.push((eps, (s.value * eps * eps - limit).norm()));
    }
    let (eps, dev): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    Ok(ScalingDiagnostic {
        order: stats::convergence_order(&eps, &dev),
        points,
        sigma2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_1d_two_state, JumpKernel};
    use core::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex {
        Complex::new(re, im)
    }

    #[test]
    fn transport_matrix_at_zero_is_flip_generator() {
        let m = build_1d_two_state(2.0, 1.0, 4.0).unwrap();
        let t = transport_matrix(&m, 0.0).unwrap();
        assert_eq!(t.a, c(-4.0, 0.0));
        assert_eq!(t.b, 4.0);
    }

    #[test]
    fn transport_matrix_worked_value() {
        let m = build_1d_two_state(2.0, 1.0, 4.0).unwrap();
        let t = transport_matrix(&m, PI / 2.0).unwrap();
        assert!((t.a - c(-8.0, 2.0)).norm() < 1e-15);
        assert_eq!(t.b, 4.0);
    }

    #[test]
    fn general_kernel_replaces_passive_term() {
        let k = JumpKernel::new(1, vec![(vec![2], 0.5), (vec![-2], 0.5)]).unwrap();
        let m = LatticeModel::one_dimensional(2.0, 1.0, 4.0, k).unwrap();
        let q = 0.7;
        let t = transport_matrix(&m, q).unwrap();
        let expected = 1.0 * ((2.0 * q).cos() - 1.0) + 2.0 * (q.cos() - 1.0) - 4.0;
        assert!((t.a.re - expected).abs() < 1e-15);
        assert!((t.a.im - 2.0 * q.sin()).abs() < 1e-15);
    }

    #[test]
    fn transport_matrix_needs_two_state() {
        let chain = crate::model::VelocityChain::new(
            2,
            alloc::vec![alloc::vec![1, 0], alloc::vec![-1, 0]],
            crate::linalg::Matrix::from_rows(&[alloc::vec![0.0, 1.0], alloc::vec![1.0, 0.0]]),
        )
        .unwrap();
        let m = LatticeModel::new(1.0, 1.0, 1.0, JumpKernel::nearest_neighbor(2), chain).unwrap();
        assert_eq!(transport_matrix(&m, 0.3), Err(Error::NotTwoState));
    }

    #[test]
    fn conjugate_symmetry_in_q() {
        let m = build_1d_two_state(1.3, 0.4, 2.2).unwrap();
        for q in [0.3, 1.1, 2.8] {
            let p = transport_matrix(&m, q).unwrap();
            let n = transport_matrix(&m, -q).unwrap();
            assert_eq!(n.a, p.a.conj());
        }
    }

    #[test]
    fn lattice_normalisation_at_q_zero() {
        let m = build_1d_two_state(2.0, 1.0, 4.0).unwrap();
        for z in [c(0.1, 0.0), c(1.0, 0.0), c(10.0, 3.0)] {
            let s = fourier_laplace_lattice(&m, 0.0, z, 0.5).unwrap();
            assert!((s.value - z.inv()).norm() <= 1e-15 * z.inv().norm());
        }
    }

    #[test]
    fn lattice_closed_form_vs_inverse() {
        let m = build_1d_two_state(2.0, 1.0, 4.0).unwrap();
        let s = fourier_laplace_lattice(&m, 0.7, c(0.3, 0.0), 0.5).unwrap();
        assert!(s.closed_form_residual <= 1e-12);
        // hand-evaluated printed formula
        let cq = 0.7f64.cos() - 1.0;
        let num = 8.0 + 0.3 - 4.0 * cq;
        let den = (4.0 + 0.3 - 4.0 * cq).powi(2) - 16.0 + 4.0 * 0.7f64.sin().powi(2);
        assert!((s.value.re - num / den).abs() < 1e-13);
        assert!(s.value.im.abs() < 1e-15);
    }

    #[test]
    fn biased_start_reduces_to_symmetric() {
        let m = build_1d_two_state(2.0, 1.0, 4.0).unwrap();
        let a = fourier_laplace_lattice(&m, 1.1, c(0.5, 0.2), 0.5).unwrap();
        let b = fourier_laplace_lattice(&m, 1.1, c(0.5, 0.2), 0.8).unwrap();
        assert!(b.closed_form_residual <= 1e-12);
        assert!((a.value - b.value).norm() > 1e-3);
    }

    #[test]
    fn domain_errors() {
        let m = build_1d_two_state(2.0, 1.0, 4.0).unwrap();
        assert!(matches!(
            fourier_laplace_lattice(&m, 0.1, c(0.0, 1.0), 0.5),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            fourier_laplace_lattice(&m, 0.1, c(1.0, 0.0), 1.5),
            Err(Error::Domain(_))
        ));
        let cm = ContinuumModel::new(2.0, 1.0, 4.0, 0.0).unwrap();
        assert!(matches!(
            fourier_laplace_continuum(&cm, 0.1, c(-1.0, 0.0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn continuum_examples() {
        let m = ContinuumModel::new(2.0, 1.0, 4.0, 0.0).unwrap();
        let s0 = fourier_laplace_continuum(&m, 0.0, c(0.7, 0.0)).unwrap();
        assert!((s0.value - c(1.0 / 0.7, 0.0)).norm() < 1e-15);
        let s = fourier_laplace_continuum(&m, 1.0, c(1.0, 0.0)).unwrap();
        assert!(s.closed_form_residual <= 1e-12);
        // (2*4 + 1 + 1) / ((1 + 1 + 4)^2 + 4 - 16)
        assert!((s.value.re - 10.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn continuum_slow_fast_limit() {
        let (q, z) = (0.8, 0.5);
        let brownian = 1.0 / (1.0 * q * q + z);
        let mut prev = f64::INFINITY;
        for gamma in [1e2, 1e3, 1e4, 1e5] {
            let m = ContinuumModel::new(2.0, 1.0, gamma, 0.0).unwrap();
            let s = fourier_laplace_continuum(&m, q, c(z, 0.0)).unwrap();
            let dev = (s.value.re - brownian).abs();
            assert!(dev < 10.0 / gamma, "gamma={gamma} dev={dev}");
            assert!(dev < prev);
            prev = dev;
        }
    }

    #[test]
    fn drifted_continuum_still_pairs() {
        let m = ContinuumModel::new(2.0, 1.0, 4.0, 0.5).unwrap();
        let s = fourier_laplace_continuum(&m, 0.9, c(0.4, 0.1)).unwrap();
        assert!(s.closed_form_residual <= 1e-12);
    }

    #[test]
    fn diffusion_constants() {
        let l = Model::from(build_1d_two_state(2.0, 1.0, 4.0).unwrap());
        assert_eq!(diffusion_constant(&l).unwrap(), 5.0);
        let rw = Model::from(build_1d_two_state(0.0, 1.0, 4.0).unwrap());
        assert_eq!(diffusion_constant(&rw).unwrap(), 2.0);
        let cm = Model::from(ContinuumModel::new(2.0, 1.0, 4.0, 0.0).unwrap());
        assert_eq!(diffusion_constant(&cm).unwrap(), 3.0);
        let k = JumpKernel::new(1, alloc::vec![(alloc::vec![2], 0.5), (alloc::vec![-2], 0.5)]).unwrap();
        let g = Model::from(LatticeModel::one_dimensional(2.0, 1.0, 4.0, k).unwrap());
        assert_eq!(diffusion_constant(&g).unwrap(), 4.0 + 2.0 + 1.0);
    }

    #[test]
    fn diffusion_matrix_reduces_to_closed_form() {
        for (l, k, g) in [(2.0, 1.0, 4.0), (0.0, 1.0, 4.0), (1.3, 0.2, 0.7)] {
            let m = build_1d_two_state(l, k, g).unwrap();
            let closed = diffusion_constant(&Model::from(m.clone())).unwrap();
            let general = diffusion_matrix(&m).unwrap()[(0, 0)];
            assert!((closed - general).abs() < 1e-13 * closed.max(1.0));
            assert_eq!(asymptotic_velocity(&Model::from(m)).unwrap(), alloc::vec![0.0]);
        }
    }

    #[test]
    fn planar_diffusion_matrix() {
        // uniform flips among four unit velocities: isotropic, each velocity
        // correlation decays at rate 4 gamma / 3
        let v = alloc::vec![alloc::vec![1, 0], alloc::vec![-1, 0], alloc::vec![0, 1], alloc::vec![0, -1]];
        let rates = linalg::Matrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 / 3.0 });
        let chain = crate::model::VelocityChain::new(2, v, rates).unwrap();
        let m = LatticeModel::new(1.5, 0.7, 2.0, JumpKernel::nearest_neighbor(2), chain).unwrap();
        let d = diffusion_matrix(&m).unwrap();
        let expected = 0.7 * 0.5 + 1.5 * 0.5 + 2.25 * 2.0 * 0.5 / (4.0 * 2.0 / 3.0);
        assert!((d[(0, 0)] - expected).abs() < 1e-13);
        assert!((d[(1, 1)] - expected).abs() < 1e-13);
        assert!(d[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn biased_chain_has_a_velocity() {
        let chain = crate::model::VelocityChain::new(
            1,
            alloc::vec![alloc::vec![1], alloc::vec![-1]],
            linalg::Matrix::from_rows(&[alloc::vec![0.0, 1.0], alloc::vec![3.0, 0.0]]),
        )
        .unwrap();
        let m = LatticeModel::new(2.0, 0.0, 1.0, JumpKernel::nearest_neighbor(1), chain).unwrap();
        let v = asymptotic_velocity(&Model::from(m)).unwrap();
        assert!((v[0] - 2.0 * (0.75 - 0.25)).abs() < 1e-14);
    }

    #[test]
    fn scaling_deviations_decrease() {
        let eps = [0.1, 0.05, 0.025];
        for model in [
            Model::from(build_1d_two_state(2.0, 1.0, 4.0).unwrap()),
            Model::from(build_1d_two_state(0.7, 0.2, 0.5).unwrap()),
            Model::from(ContinuumModel::new(2.0, 1.0, 4.0, 0.0).unwrap()),
        ] {
            let d = scaling_diagnostic(&model, 1.3, 0.6, &eps, 0.5).unwrap();
            assert!(d.points.windows(2).all(|w| w[1].1 < w[0].1), "{d:?}");
            assert!(d.order >= 1.0, "{d:?}");
        }
    }

    #[test]
    fn pure_walk_scaling_is_second_order() {
        let m = Model::from(build_1d_two_state(0.0, 1.0, 1.0).unwrap());
        let d = scaling_diagnostic(&m, 1.0, 1.0, &[0.1, 0.05, 0.025], 0.5).unwrap();
        assert!((d.order - 2.0).abs() < 0.05, "{d:?}");
    }

    #[test]
    fn biased_start_has_the_same_limit() {
        let m = Model::from(build_1d_two_state(2.0, 1.0, 4.0).unwrap());
        let eps = [0.02, 0.01, 0.005, 0.0025];
        let a = scaling_diagnostic(&m, 1.0, 1.0, &eps, 0.5).unwrap();
        let b = scaling_diagnostic(&m, 1.0, 1.0, &eps, 0.9).unwrap();
        assert!(b.points.windows(2).all(|w| w[1].1 < w[0].1), "{b:?}");
        assert!(b.points.last().unwrap().1 < 1e-2);
        assert!(a.points.last().unwrap().1 < 1e-4);
    }

    #[test]
    fn scaling_rejects_bad_grids() {
        let m = Model::from(build_1d_two_state(2.0, 1.0, 4.0).unwrap());
        assert!(scaling_diagnostic(&m, 1.0, 1.0, &[0.05, 0.1], 0.5).is_err());
        assert!(scaling_diagnostic(&m, 0.0, 1.0, &[0.1], 0.5).is_err());
        assert!(scaling_diagnostic(&m, 1.0, 0.0, &[0.1], 0.5).is_err());
    }
}
