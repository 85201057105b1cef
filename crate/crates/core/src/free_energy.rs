//! Characteristic functions, moment generating functions and large-deviation
//! free energies of the one-dimensional models, plus the Legendre transform
//! to rate functions.
//!
//! All free energies are `F(alpha) = lim (1/t) log E exp(alpha X_t)`.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::model::{cosh_m1, ContinuumModel, LatticeModel};
use crate::stats;
use crate::transforms::spreading_symbol;
use crate::Complex;

/// Closed-form pieces of `exp(t M(q)) = exp(t A) / (2 gamma B) * G(t, q)`.
///
/// `q` may be complex; the tilt `alpha` corresponds to `q = -i alpha`.
/// `B` is taken on the principal branch. The assembled exponential only
/// depends on `B^2`, so the branch does not matter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixExponential1D {
    pub q: Complex,
    pub t: f64,
    /// Effective flip rate `gamma * pi(+1, -1)`.
    pub flip_rate: f64,
    /// `A = passive sum_z p(z)(cos qz - 1) + lambda (cos q - 1) - gamma`.
    pub exponent: Complex,
    /// `B = sqrt(gamma^2 - lambda^2 sin^2 q)`.
    pub b: Complex,
    /// `lambda sin q`.
    pub drift_symbol: Complex,
    /// Entries of `G(t, q)`, rows `(+1, -1)`.
    pub g: [[Complex; 2]; 2],
}

/// Below this `|t B|` the assembly switches to the `sinh(tB)/B -> t` series.
const SMALL_TB: f64 = 1e-6;

impl MatrixExponential1D {
    pub fn new(model: &LatticeModel, q: Complex, t: f64) -> Result<Self> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("time must be nonnegative, got {t}")));
        }
        let form = model.two_state_form()?;
        let gamma = form.flip_rate;
        let s = q.sin() * model.lambda();
        let exponent = spreading_symbol(model, q) - gamma;
        let b = (Complex::new(gamma * gamma, 0.0) - s * s).sqrt();
        let (sh, ch) = ((b * t).sinh(), (b * t).cosh());
        let i_s = Complex::new(0.0, 1.0) * s;
        let a11 = b * ch * (2.0 * gamma) + i_s * sh * (2.0 * gamma);
        let a22 = b * ch * (2.0 * gamma) - i_s * sh * (2.0 * gamma);
        let a12 = sh * (2.0 * gamma * gamma);
        Ok(MatrixExponential1D {
            q,
            t,
            flip_rate: gamma,
            exponent,
            b,
            drift_symbol: s,
            g: [[a11, a12], [a12, a22]],
        })
    }

    /// Assembled `exp(t M(q))`.
    pub fn matrix(&self) -> CMatrix {
        let scale = (self.exponent * self.t).exp();
        let tb = self.b * self.t;
        let i_s = Complex::new(0.0, 1.0) * self.drift_symbol;
        if tb.norm() >= SMALL_TB {
            // exp(tA) cosh(tB) and exp(tA) sinh(tB) from exp(t(A +- B)), so
            // that neither factor over- or underflows on its own
            let up = ((self.exponent + self.b) * self.t).exp();
            let down = ((self.exponent - self.b) * self.t).exp();
            let (ch, sh) = ((up + down) * 0.5, (up - down) * 0.5);
            let sh_b = sh / self.b;
            let entries = [
                [ch + i_s * sh_b, sh_b * self.flip_rate],
                [sh_b * self.flip_rate, ch - i_s * sh_b],
            ];
            return CMatrix::from_fn(2, 2, |i, j| entries[i][j]);
        }
        // sinh(tB)/B = t (1 + (tB)^2/6 + (tB)^4/120), cosh(tB) = 1 + (tB)^2/2 + (tB)^4/24
        let x2 = tb * tb;
        let sinhc = (Complex::new(1.0, 0.0) + x2 / 6.0 + x2 * x2 / 120.0) * self.t;
        let cosh = Complex::new(1.0, 0.0) + x2 / 2.0 + x2 * x2 / 24.0;
        let entries = [
            [cosh + i_s * sinhc, sinhc * self.flip_rate],
            [sinhc * self.flip_rate, cosh - i_s * sinhc],
        ];
        CMatrix::from_fn(2, 2, |i, j| entries[i][j] * scale)
    }
}

/// `M(q)` for complex `q`, rows `(+1, -1)`.
pub fn transport_matrix_complex(model: &LatticeModel, q: Complex) -> Result<CMatrix> {
    let form = model.two_state_form()?;
    let c = spreading_symbol(model, q) - form.flip_rate;
    let i_s = Complex::new(0.0, 1.0) * q.sin() * model.lambda();
    let b = Complex::new(form.flip_rate, 0.0);
    Ok(CMatrix::from_rows(&[
        alloc::vec![c + i_s, b],
        alloc::vec![b, c - i_s],
    ]))
}

/// `exp(t M(q))` from the diagonalised closed form.
pub fn matrix_exponential_closed(model: &LatticeModel, q: Complex, t: f64) -> Result<CMatrix> {
    Ok(MatrixExponential1D::new(model, q, t)?.matrix())
}

/// `E exp(alpha X_t) = (1,1) exp(t M(-i alpha)) mu0`, with `mu0` the initial
/// velocity distribution over `(+1, -1)`.
pub fn moment_generating(model: &LatticeModel, alpha: f64, t: f64, mu0: [f64; 2]) -> Result<f64> {
    if mu0.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (mu0[0] + mu0[1] - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!("{mu0:?} is not a distribution")));
    }
    let e = matrix_exponential_closed(model, Complex::new(0.0, -alpha), t)?;
    let v = e.mul_vec(&[Complex::new(mu0[0], 0.0), Complex::new(mu0[1], 0.0)]);
    let total = v[0] + v[1];
    if total.im.abs() > 1e-10 * total.re.abs().max(1.0) {
        return Err(Error::numerical(
            "moment generating function",
            format!("imaginary part {}", total.im),
        ));
    }
    Ok(total.re)
}

/// `sqrt(g^2 + y) - g` without cancellation for small `y`.
fn sqrt_shift(g: f64, y: f64) -> f64 {
    y / ((g * g + y).sqrt() + g)
}

/// Lattice free energy from the closed form,
/// `passive Gamma(alpha) + lambda (cosh alpha - 1) + sqrt(gamma^2 + lambda^2 sinh^2 alpha) - gamma`.
///
/// The value is checked against the largest root of the characteristic
/// polynomial of the symmetric matrix `M(-i alpha)`.
pub fn free_energy_lattice(model: &LatticeModel, alpha: f64) -> Result<f64> {
    let f = LatticeFreeEnergy::new(model)?;
    let closed = f.value(alpha);

    let gamma = f.flip_rate;
    let sh = model.lambda() * alpha.sinh();
    let base = model.passive_cumulant(&[alpha])? + model.lambda() * (alpha.cosh() - 1.0) - gamma;
    let (d_plus, d_minus) = (base + sh, base - sh);
    let half_trace = 0.5 * (d_plus + d_minus);
    let half_gap = 0.5 * (d_plus - d_minus);
    let root = half_trace + (half_gap * half_gap + gamma * gamma).sqrt();
    if !((closed - root).abs() <= 1e-12 * closed.abs().max(1.0)) {
        return Err(Error::numerical(
            "lattice free energy",
            format!("closed form {closed} vs eigenvalue {root} at alpha={alpha}"),
        ));
    }
    Ok(closed)
}

/// Drifted continuum free energy
/// `kappa alpha^2 + 2 alpha kappa E + sqrt(lambda^2 alpha^2 + gamma^2) - gamma`.
pub fn free_energy_continuum_drift(model: &ContinuumModel, alpha: f64) -> f64 {
    ContinuumFreeEnergy(*model).value(alpha)
}

/// A convex, differentiable free energy in one variable.
pub trait FreeEnergy {
    fn value(&self, alpha: f64) -> f64;

    /// Analytic derivative when available.
    fn derivative(&self, _alpha: f64) -> Option<f64> {
        None
    }

    /// Analytic second derivative when available.
    fn second_derivative(&self, _alpha: f64) -> Option<f64> {
        None
    }
}

const FD_STEP: f64 = 1e-5;

fn derivative_of(f: &impl FreeEnergy, alpha: f64) -> f64 {
    f.derivative(alpha).unwrap_or_else(|| {
        // fourth-order central difference
        let h = FD_STEP * alpha.abs().max(1.0);
        (f.value(alpha - 2.0 * h) - 8.0 * f.value(alpha - h) + 8.0 * f.value(alpha + h)
            - f.value(alpha + 2.0 * h))
            / (12.0 * h)
    })
}

fn second_derivative_of(f: &impl FreeEnergy, alpha: f64) -> f64 {
    f.second_derivative(alpha).unwrap_or_else(|| {
        let h = 1e-4 * alpha.abs().max(1.0);
        (derivative_of(f, alpha + h) - derivative_of(f, alpha - h)) / (2.0 * h)
    })
}

/// Closed-form free energy of a one-dimensional two-velocity lattice model.
#[derive(Debug, Clone)]
pub struct LatticeFreeEnergy {
    lambda: f64,
    flip_rate: f64,
    passive_rate: f64,
    kernel: Vec<(i64, f64)>,
}

impl LatticeFreeEnergy {
    pub fn new(model: &LatticeModel) -> Result<Self> {
        let form = model.two_state_form()?;
        Ok(LatticeFreeEnergy {
            lambda: model.lambda(),
            flip_rate: form.flip_rate,
            passive_rate: model.passive_rate(),
            kernel: model
                .kernel()
                .support()
                .iter()
                .map(|(z, p)| (z[0], *p))
                .collect(),
        })
    }

    fn passive(&self, alpha: f64) -> f64 {
        self.passive_rate
            * self
                .kernel
                .iter()
                .map(|&(z, p)| p * cosh_m1(alpha * z as f64))
                .sum::<f64>()
    }
}

impl FreeEnergy for LatticeFreeEnergy {
    fn value(&self, alpha: f64) -> f64 {
        let sh = self.lambda * alpha.sinh();
        self.passive(alpha) + self.lambda * cosh_m1(alpha) + sqrt_shift(self.flip_rate, sh * sh)
    }

    fn derivative(&self, alpha: f64) -> Option<f64> {
        let passive: f64 = self
            .kernel
            .iter()
            .map(|&(z, p)| p * z as f64 * (alpha * z as f64).sinh())
            .sum();
        let (s, c) = (alpha.sinh(), alpha.cosh());
        let l2 = self.lambda * self.lambda;
        let root = (self.flip_rate * self.flip_rate + l2 * s * s).sqrt();
        Some(self.passive_rate * passive + self.lambda * s + l2 * s * c / root)
    }

    fn second_derivative(&self, alpha: f64) -> Option<f64> {
        let passive: f64 = self
            .kernel
            .iter()
            .map(|&(z, p)| p * (z * z) as f64 * (alpha * z as f64).cosh())
            .sum();
        let (s, c) = (alpha.sinh(), alpha.cosh());
        let l2 = self.lambda * self.lambda;
        let g2 = self.flip_rate * self.flip_rate;
        let r2 = g2 + l2 * s * s;
        let root = r2.sqrt();
        // d/da [l2 s c / root] = l2 (c^2 + s^2) / root - l2^2 s^2 c^2 / root^3
        let sqrt_part = l2 * (c * c + s * s) / root - l2 * l2 * s * s * c * c / (r2 * root);
        Some(self.passive_rate * passive + self.lambda * c + sqrt_part)
    }
}

/// Free energy of the drifted telegrapher process.
#[derive(Debug, Clone, Copy)]
pub struct ContinuumFreeEnergy(pub ContinuumModel);

impl FreeEnergy for ContinuumFreeEnergy {
    fn value(&self, alpha: f64) -> f64 {
        let m = &self.0;
        let la = m.lambda() * alpha;
        m.kappa() * alpha * alpha + alpha * m.drift() + sqrt_shift(m.gamma(), la * la)
    }

    fn derivative(&self, alpha: f64) -> Option<f64> {
        let m = &self.0;
        let l2 = m.lambda() * m.lambda();
        let root = (l2 * alpha * alpha + m.gamma() * m.gamma()).sqrt();
        Some(2.0 * m.kappa() * alpha + m.drift() + l2 * alpha / root)
    }

    fn second_derivative(&self, alpha: f64) -> Option<f64> {
        let m = &self.0;
        let l2 = m.lambda() * m.lambda();
        let g2 = m.gamma() * m.gamma();
        let r2 = l2 * alpha * alpha + g2;
        Some(2.0 * m.kappa() + l2 * g2 / (r2 * r2.sqrt()))
    }
}

/// `F(alpha) = D alpha^2 / 2`.
#[derive(Debug, Clone, Copy)]
pub struct Quadratic {
    pub d: f64,
}

impl FreeEnergy for Quadratic {
    fn value(&self, alpha: f64) -> f64 {
        0.5 * self.d * alpha * alpha
    }

    fn derivative(&self, alpha: f64) -> Option<f64> {
        Some(self.d * alpha)
    }

    fn second_derivative(&self, _alpha: f64) -> Option<f64> {
        Some(self.d)
    }
}

/// Adapter for a plain closure; derivatives come from finite differences.
#[derive(Debug, Clone, Copy)]
pub struct FnFreeEnergy<F>(pub F);

impl<F: Fn(f64) -> f64> FreeEnergy for FnFreeEnergy<F> {
    fn value(&self, alpha: f64) -> f64 {
        (self.0)(alpha)
    }
}

/// One point of a rate function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegendrePoint {
    pub x: f64,
    pub rate: f64,
    pub alpha_star: f64,
    /// `|I(x) + F(alpha*) - alpha* x|` with `F` re-evaluated.
    pub young_residual: f64,
}

/// Tolerance on `|F'(alpha*) - x|`.
pub const LEGENDRE_TOL: f64 = 1e-10;

/// `I(x) = sup_alpha (alpha x - F(alpha))`, by safeguarded Newton on
/// `F'(alpha) = x` inside a bracket found by doubling.
pub fn legendre_transform(f: &impl FreeEnergy, x: f64) -> Result<LegendrePoint> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("x = {x}")));
    }
    let g = |a: f64| derivative_of(f, a) - x;
    let tol = 1e-13 * x.abs().max(1.0);

    let g0 = g(0.0);
    let (mut lo, mut hi) = (0.0, 0.0);
    if g0 < 0.0 {
        hi = 1.0;
        while g(hi) < 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > 1e6 {
                return Err(Error::numerical("legendre transform", "no upper bracket"));
            }
        }
    } else if g0 > 0.0 {
        lo = -1.0;
        while g(lo) > 0.0 {
            hi = lo;
            lo *= 2.0;
            if lo < -1e6 {
                return Err(Error::numerical("legendre transform", "no lower bracket"));
            }
        }
    }

    let mut alpha = if g0 == 0.0 { 0.0 } else { 0.5 * (lo + hi) };
    let mut residual = g(alpha);
    for _ in 0..200 {
        if residual.abs() <= tol || hi - lo <= 4.0 * f64::EPSILON * alpha.abs().max(1.0) {
            break;
        }
        if residual < 0.0 {
            lo = alpha;
        } else {
            hi = alpha;
        }
        let slope = second_derivative_of(f, alpha);
        let newton = alpha - residual / slope;
        alpha = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        residual = g(alpha);
    }
    if !(residual.abs() <= LEGENDRE_TOL) {
        return Err(Error::numerical(
            "legendre transform",
            format!("|F'(alpha*) - x| = {:e} at x = {x}", residual.abs()),
        ));
    }
    let value = f.value(alpha);
    let rate = alpha * x - value;
    Ok(LegendrePoint {
        x,
        rate,
        alpha_star: alpha,
        young_residual: (rate + f.value(alpha) - alpha * x).abs(),
    })
}

/// Free energy sampled on a grid, with `D = F''(0)` from a central
/// difference of step `1e-4`.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeEnergyCurve {
    pub alphas: Vec<f64>,
    pub values: Vec<f64>,
    pub derivatives: Vec<f64>,
    pub diffusion: f64,
}

/// Step of the central difference used for `F''(0)`.
pub const CURVATURE_STEP: f64 = 1e-4;

/// Central second difference `(F(h) - 2F(0) + F(-h)) / h^2` at `h = 1e-4`.
pub fn curvature_at_zero(f: &impl FreeEnergy) -> f64 {
    let h = CURVATURE_STEP;
    (f.value(h) - 2.0 * f.value(0.0) + f.value(-h)) / (h * h)
}

/// Central first difference `(F(h) - F(-h)) / 2h` at `h = 1e-4`.
pub fn slope_at_zero(f: &impl FreeEnergy) -> f64 {
    let h = CURVATURE_STEP;
    (f.value(h) - f.value(-h)) / (2.0 * h)
}

pub fn free_energy_curve(f: &impl FreeEnergy, alphas: &[f64]) -> FreeEnergyCurve {
    FreeEnergyCurve {
        alphas: alphas.to_vec(),
        values: alphas.iter().map(|&a| f.value(a)).collect(),
        derivatives: alphas.iter().map(|&a| derivative_of(f, a)).collect(),
        diffusion: curvature_at_zero(f),
    }
}

/// Rate function sampled on an `x` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFunctionCurve {
    pub points: Vec<LegendrePoint>,
}

impl RateFunctionCurve {
    /// Most negative second difference `I(x_{k-1}) - 2 I(x_k) + I(x_{k+1})`
    /// on a uniform grid (zero or positive for a convex curve).
    pub fn min_second_difference(&self) -> f64 {
        self.points
            .windows(3)
            .map(|w| w[0].rate - 2.0 * w[1].rate + w[2].rate)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_young_residual(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.young_residual)
            .fold(0.0, f64::max)
    }
}

pub fn rate_function_curve(f: &impl FreeEnergy, xs: &[f64]) -> Result<RateFunctionCurve> {
    Ok(RateFunctionCurve {
        points: xs
            .iter()
            .map(|&x| legendre_transform(f, x))
            .collect::<Result<_>>()?,
    })
}

/// Deviations of a family of approximations from their limit.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitDiagnostic {
    /// `(control parameter, |deviation|)`.
    pub points: Vec<(f64, f64)>,
    /// Fitted log-log order of the deviation in the small parameter.
    pub order: f64,
}

impl LimitDiagnostic {
    pub fn strictly_decreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].1 < w[0].1)
    }
}

/// Compares `eps^-2 F(eps alpha)` of the lattice model with rates
/// `lambda -> eps lambda`, `gamma -> eps^2 gamma` to the continuum free
/// energy `D_p alpha^2 / 2 + sqrt(gamma^2 + lambda^2 alpha^2) - gamma`, where
/// `D_p` is the passive diffusion constant (`2 kappa` for nearest neighbours).
pub fn continuum_limit_check(
    model: &LatticeModel,
    alpha: f64,
    epsilons: &[f64],
) -> Result<LimitDiagnostic> {
    if epsilons.iter().any(|&e| !(e > 0.0)) || epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Domain(
            "epsilons must be positive and strictly decreasing".into(),
        ));
    }
    let form = model.two_state_form()?;
    let gamma = form.flip_rate;
    let lambda = model.lambda();
    let passive_diffusion = model.passive_rate() * model.kernel().second_moment()[(0, 0)];
    let la = lambda * alpha;
    let target = 0.5 * passive_diffusion * alpha * alpha + sqrt_shift(gamma, la * la);

    let mut points = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let scaled = model.with_rates(eps * lambda, eps * eps * model.gamma())?;
        let value = LatticeFreeEnergy::new(&scaled)?.value(eps * alpha) / (eps * eps);
        points.push((eps, (value - target).abs()));
    }
    let (e, d): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    Ok(LimitDiagnostic {
        order: stats::convergence_order(&e, &d),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::expm;
    use crate::model::{build_1d_two_state, JumpKernel};
    use core::f64::consts::{LN_2, PI};
    use proptest::prelude::*;

    fn rw() -> LatticeModel {
        build_1d_two_state(2.0, 1.0, 4.0).unwrap()
    }

    #[test]
    fn exponential_at_time_zero_is_identity() {
        let e = matrix_exponential_closed(&rw(), Complex::new(0.5, 0.0), 0.0).unwrap();
        assert!(e.max_abs_diff(&CMatrix::identity(2)) < 1e-15);
    }

    #[test]
    fn exponential_at_q_zero_conserves_probability() {
        let e = matrix_exponential_closed(&rw(), Complex::new(0.0, 0.0), 2.7).unwrap();
        let v = e.mul_vec(&[Complex::new(1.0, 0.0), Complex::new(1.0, 0.0)]);
        for x in v {
            assert!((x - 1.0).norm() < 1e-14);
        }
    }

    #[test]
    fn exponential_matches_pade_oracle() {
        let m = rw();
        let q = Complex::new(0.5, 0.0);
        let closed = matrix_exponential_closed(&m, q, 1.3).unwrap();
        let oracle = expm(&transport_matrix_complex(&m, q).unwrap().scale(Complex::new(1.3, 0.0)));
        assert!(closed.max_abs_diff(&oracle) <= 1e-10);
    }

    #[test]
    fn exponential_handles_imaginary_and_vanishing_b() {
        // lambda |sin q| > gamma
        let m = build_1d_two_state(2.0, 1.0, 1.5).unwrap();
        let q = Complex::new(PI / 2.0, 0.0);
        let e = MatrixExponential1D::new(&m, q, 1.3).unwrap();
        assert!(e.b.re.abs() < 1e-15 && e.b.im.abs() > 0.1);
        let oracle = expm(&transport_matrix_complex(&m, q).unwrap().scale(Complex::new(1.3, 0.0)));
        assert!(e.matrix().max_abs_diff(&oracle) <= 1e-10);

        // gamma = lambda, q = pi/2 gives B = 0 exactly
        let m = build_1d_two_state(2.0, 1.0, 2.0).unwrap();
        let e = MatrixExponential1D::new(&m, q, 1.3).unwrap();
        assert_eq!(e.b, Complex::new(0.0, 0.0));
        let oracle = expm(&transport_matrix_complex(&m, q).unwrap().scale(Complex::new(1.3, 0.0)));
        assert!(e.matrix().max_abs_diff(&oracle) <= 1e-10);
    }

    #[test]
    fn moment_generating_at_zero_tilt() {
        for t in [0.0, 0.3, 7.0] {
            let v = moment_generating(&rw(), 0.0, t, [0.5, 0.5]).unwrap();
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn moment_generating_short_time_series() {
        // E exp(a X_t) ~ 1 + (2 kappa + lambda) a^2 t / 2 for small t: the
        // lambda^2/gamma term only builds up over times of order 1/gamma.
        let (a, t) = (0.1, 0.01);
        let v = moment_generating(&rw(), a, t, [0.5, 0.5]).unwrap();
        let lead = 0.5 * 4.0 * a * a * t;
        assert!(((v - 1.0) - lead).abs() < 0.05 * lead, "{v}");
    }

    #[test]
    fn moment_generating_growth_rate() {
        let m = build_1d_two_state(1.0, 0.0, 1.0).unwrap();
        let mut prev = f64::INFINITY;
        for t in [10.0, 100.0, 1000.0] {
            let v = moment_generating(&m, LN_2, t, [0.5, 0.5]).unwrap();
            let dev = (v.ln() / t - 0.5).abs();
            assert!(dev < 2.0 / t, "t={t} dev={dev}");
            assert!(dev < prev);
            prev = dev;
        }
    }

    #[test]
    fn free_energy_worked_values() {
        assert_eq!(free_energy_lattice(&rw(), 0.0).unwrap(), 0.0);
        let m = build_1d_two_state(1.0, 0.0, 1.0).unwrap();
        let f = free_energy_lattice(&m, LN_2).unwrap();
        assert!((f - 0.5).abs() < 1e-15, "{f}");
    }

    #[test]
    fn general_kernel_free_energy() {
        let k = JumpKernel::new(1, alloc::vec![(alloc::vec![2], 0.5), (alloc::vec![-2], 0.5)]).unwrap();
        let m = LatticeModel::one_dimensional(1.5, 0.8, 2.0, k).unwrap();
        let a: f64 = 0.7;
        let expected = 0.8 * ((2.0 * a).cosh() - 1.0)
            + 1.5 * (a.cosh() - 1.0)
            + (4.0 + 2.25 * a.sinh().powi(2)).sqrt()
            - 2.0;
        assert!((free_energy_lattice(&m, a).unwrap() - expected).abs() < 1e-14);
        let d = curvature_at_zero(&LatticeFreeEnergy::new(&m).unwrap());
        let sigma2 = 0.8 * 4.0 + 1.5 + 2.25 / 2.0;
        assert!((d - sigma2).abs() < 1e-6 * sigma2);
    }

    #[test]
    fn continuum_free_energy_examples() {
        let m = ContinuumModel::new(2.0, 1.0, 4.0, 0.5).unwrap();
        assert_eq!(free_energy_continuum_drift(&m, 0.0), 0.0);
        let bm = ContinuumModel::new(0.0, 1.3, 4.0, 0.0).unwrap();
        assert!((free_energy_continuum_drift(&bm, 0.7) - 1.3 * 0.49).abs() < 1e-15);
        let f = ContinuumFreeEnergy(m);
        assert!((slope_at_zero(&f) - 1.0).abs() < 1e-8);
        assert!((curvature_at_zero(&f) - 3.0).abs() < 3e-6);
        assert!((f.derivative(0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((f.second_derivative(0.0).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let f = LatticeFreeEnergy::new(&build_1d_two_state(1.7, 0.3, 0.9).unwrap()).unwrap();
        let fd = FnFreeEnergy(|a| f.value(a));
        for a in [-2.0, -0.4, 0.0, 0.9, 2.5] {
            let d = f.derivative(a).unwrap();
            assert!((d - derivative_of(&fd, a)).abs() < 1e-7 * d.abs().max(1.0));
            let dd = f.second_derivative(a).unwrap();
            assert!((dd - second_derivative_of(&fd, a)).abs() < 1e-5 * dd.abs().max(1.0));
        }
    }

    #[test]
    fn quadratic_legendre_pair() {
        let p = legendre_transform(&Quadratic { d: 5.0 }, 1.0).unwrap();
        assert!((p.rate - 0.1).abs() < 1e-12);
        assert!((p.alpha_star - 0.2).abs() < 1e-12);
    }

    #[test]
    fn legendre_minimum_at_zero() {
        let f = LatticeFreeEnergy::new(&rw()).unwrap();
        let p = legendre_transform(&f, 0.0).unwrap();
        assert_eq!((p.rate, p.alpha_star), (0.0, 0.0));
        let c = ContinuumFreeEnergy(ContinuumModel::new(2.0, 1.0, 4.0, 0.0).unwrap());
        let p = legendre_transform(&c, 0.0).unwrap();
        assert_eq!(p.rate, 0.0);
    }

    #[test]
    fn legendre_recovers_known_tilt() {
        let f = LatticeFreeEnergy::new(&build_1d_two_state(1.0, 0.0, 1.0).unwrap()).unwrap();
        let x = f.derivative(LN_2).unwrap();
        let p = legendre_transform(&f, x).unwrap();
        assert!((p.alpha_star - LN_2).abs() < 1e-10);
        assert!((p.rate - (LN_2 * x - 0.5)).abs() < 1e-10);
    }

    #[test]
    fn legendre_with_finite_differences() {
        let p = legendre_transform(&FnFreeEnergy(|a: f64| a.cosh() - 1.0), 1.2).unwrap();
        let a = 1.2f64.asinh();
        assert!((p.alpha_star - a).abs() < 1e-9);
    }

    #[test]
    fn drifted_rate_vanishes_at_velocity() {
        let f = ContinuumFreeEnergy(ContinuumModel::new(2.0, 1.0, 4.0, 0.5).unwrap());
        let p = legendre_transform(&f, 1.0).unwrap();
        assert!(p.rate.abs() <= 1e-12);
        assert!(legendre_transform(&f, 0.0).unwrap().rate > 0.0);
    }

    #[test]
    fn continuum_limit_examples() {
        let m = rw();
        let d = continuum_limit_check(&m, 0.0, &[0.1, 0.05]).unwrap();
        assert!(d.points.iter().all(|p| p.1 == 0.0));

        let d = continuum_limit_check(&m, 1.0, &[0.1, 0.05]).unwrap();
        assert!(d.strictly_decreasing());
        let target = 1.0 + 20f64.sqrt() - 4.0;
        let eps = 0.05;
        let scaled = m.with_rates(2.0 * eps, 4.0 * eps * eps).unwrap();
        let v = free_energy_lattice(&scaled, eps).unwrap() / (eps * eps);
        assert!(((v - target).abs() - d.points[1].1).abs() < 1e-12);
    }

    #[test]
    fn continuum_limit_without_activity_is_second_order() {
        let m = build_1d_two_state(0.0, 1.0, 4.0).unwrap();
        let eps = [0.2, 0.1, 0.05, 0.025];
        let d = continuum_limit_check(&m, 1.3, &eps).unwrap();
        for &(e, dev) in &d.points {
            let expected = 2.0 * ((e * 1.3f64).cosh() - 1.0) / (e * e) - 1.69;
            assert!((dev - expected.abs()).abs() < 1e-9);
        }
        assert!((d.order - 2.0).abs() < 0.02, "{d:?}");
    }

    #[test]
    fn slow_fast_expansion() {
        let (lambda, kappa, a) = (2.0, 1.0, 0.8f64);
        let mut scaled = alloc::vec::Vec::new();
        for gamma in [50.0, 100.0, 200.0, 400.0] {
            let m = build_1d_two_state(lambda, kappa, gamma).unwrap();
            let f = free_energy_lattice(&m, a).unwrap();
            let approx = (a.cosh() - 1.0) * (2.0 * kappa + lambda)
                + lambda * lambda / (2.0 * gamma) * a.sinh().powi(2);
            scaled.push((f - approx).abs() * gamma * gamma);
        }
        // |F - expansion| * gamma^2 stays bounded
        assert!(scaled.iter().all(|&c| c < 5.0), "{scaled:?}");
    }

    proptest! {
        #[test]
        fn lattice_free_energy_is_even_and_gamma_monotone(
            lambda in 0.01f64..5.0, kappa in 0.0f64..5.0, gamma in 0.01f64..5.0,
            a in -3.0f64..3.0, bump in 0.0f64..10.0,
        ) {
            let m = build_1d_two_state(lambda, kappa, gamma).unwrap();
            let f = free_energy_lattice(&m, a).unwrap();
            let g = free_energy_lattice(&m, -a).unwrap();
            prop_assert!((f - g).abs() <= 1e-12 * f.abs().max(1.0));
            let slower = free_energy_lattice(&m.with_gamma(gamma + bump).unwrap(), a).unwrap();
            prop_assert!(slower <= f + 1e-12 * f.abs().max(1.0));
        }

        #[test]
        fn drift_antisymmetry(field in -2.0f64..2.0, a in -3.0f64..3.0) {
            let m = ContinuumModel::new(1.2, 0.7, 2.0, field).unwrap();
            let diff = free_energy_continuum_drift(&m, a) - free_energy_continuum_drift(&m, -a);
            prop_assert!((diff - 4.0 * a * 0.7 * field).abs() < 1e-12);
        }

        #[test]
        fn young_equality_and_nonnegativity(
            lambda in 0.1f64..5.0, kappa in 0.0f64..5.0, gamma in 0.1f64..5.0, x in -20.0f64..20.0,
        ) {
            let f = LatticeFreeEnergy::new(&build_1d_two_state(lambda, kappa, gamma).unwrap()).unwrap();
            let p = legendre_transform(&f, x).unwrap();
            prop_assert!(p.young_residual <= 1e-10);
            prop_assert!(p.rate >= -1e-12);
            prop_assert!((f.derivative(p.alpha_star).unwrap() - x).abs() <= LEGENDRE_TOL);
        }
    }
}
