//! Closed-form field moments for a coherent field and arbitrary mirror
//! state, and the phase-space curve on which they sample the mirror's
//! characteristic function.
//!
//! With `Theta(t) = eps t - eta^2 sin(W t)` and `lambda(t) = eta (e^{iWt} - 1)`,
//!
//! ```text
//! <a(t)> = P(t) chi(lambda(t)),
//! P(t)   = alpha e^{-i w' t} e^{i Theta} exp(-|alpha|^2 (1 - e^{2i Theta})),
//! ```
//!
//! where `w'` is the field frequency in the working frame.

use std::f64::consts::SQRT_2;

use crate::dynamics::{Frame, QuadratureRecord, SystemParams};
use crate::error::{Error, Result};
use crate::C64;

/// Evaluates the protocol's time-dependent factors for one parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolKernel {
    params: SystemParams,
    sign: f64,
}

impl ProtocolKernel {
    pub fn new(params: SystemParams) -> Self {
        Self { params, sign: 1.0 }
    }

    /// A kernel whose prefactor has the wrong sign, for exercising failure
    /// paths of the self-test.
    #[doc(hidden)]
    pub fn corrupted(self) -> Self {
        Self { sign: -1.0, ..self }
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn frame(&self) -> Frame {
        self.params.frame()
    }

    /// `Theta(t) = eps t - eta^2 sin(W t) = eta^2 (W t - sin(W t))`
    pub fn theta(&self, t: f64) -> f64 {
        let p = &self.params;
        p.epsilon() * t - p.eta() * p.eta() * (p.omega_mirror() * t).sin()
    }

    /// `lambda(t) = eta (e^{iWt} - 1)`
    pub fn lambda(&self, t: f64) -> C64 {
        let p = &self.params;
        (C64::from_polar(1.0, p.omega_mirror() * t) - 1.0) * p.eta()
    }

    fn moment_factor(&self, k: i32, t: f64) -> C64 {
        let p = &self.params;
        let alpha = p.alpha();
        let kf = f64::from(k);
        let theta = self.theta(t);
        let collapse = (-alpha.norm_sqr() * (1.0 - C64::from_polar(1.0, 2.0 * kf * theta))).exp();
        alpha.powi(k) * C64::from_polar(1.0, -kf * p.omega_effective() * t + kf * kf * theta) * collapse
    }

    fn check_signal(&self) -> Result<()> {
        if self.params.alpha() == C64::new(0.0, 0.0) {
            return Err(Error::ProtocolDegenerate);
        }
        Ok(())
    }

    /// `P(t)`; never zero for `alpha != 0`.
    pub fn prefactor(&self, t: f64) -> Result<C64> {
        self.check_signal()?;
        Ok(self.moment_factor(1, t) * self.sign)
    }

    /// `<a(t)> = P(t) chi(lambda(t))`
    pub fn expect_a<F: Fn(C64) -> C64>(&self, chi: F, t: f64) -> Result<C64> {
        Ok(self.prefactor(t)? * chi(self.lambda(t)))
    }

    /// `<a(t)^2> = alpha^2 e^{-2i w' t} e^{4i Theta} exp(-|alpha|^2 (1 - e^{4i Theta})) chi(2 lambda(t))`
    pub fn expect_a2<F: Fn(C64) -> C64>(&self, chi: F, t: f64) -> C64 {
        self.moment_factor(2, t) * chi(self.lambda(t) * 2.0)
    }

    /// Noiseless quadrature record predicted for a mirror with
    /// characteristic function `chi`.
    pub fn record<F: Fn(C64) -> C64>(&self, chi: F, t: f64) -> Result<QuadratureRecord> {
        let a = self.expect_a(&chi, t)?;
        let a2 = self.expect_a2(&chi, t);
        let n = self.params.alpha().norm_sqr();
        let x_mean = SQRT_2 * a.re;
        let y_mean = SQRT_2 * a.im;
        Ok(QuadratureRecord {
            t,
            x_mean,
            y_mean,
            x_var: (2.0 * a2.re + 2.0 * n + 1.0) / 2.0 - x_mean * x_mean,
            y_var: (-2.0 * a2.re + 2.0 * n + 1.0) / 2.0 - y_mean * y_mean,
            a_mean: a,
            shots: None,
            noisy: false,
        })
    }

    /// Lower bound `|alpha| e^{-2|alpha|^2}` on `|P(t)|`.
    pub fn prefactor_floor(&self) -> f64 {
        let r = self.params.alpha().norm();
        r * (-2.0 * r * r).exp()
    }
}

/// `P(t) chi(lambda(t))`
pub fn expect_a_analytic<F: Fn(C64) -> C64>(kernel: &ProtocolKernel, chi: F, t: f64) -> Result<C64> {
    kernel.expect_a(chi, t)
}

/// Analytic records on a time grid.
pub fn analytic_records<F: Fn(C64) -> C64>(kernel: &ProtocolKernel, chi: F, times: &[f64]) -> Result<Vec<QuadratureRecord>> {
    times.iter().map(|&t| kernel.record(&chi, t)).collect()
}

pub fn lambda_curve(kernel: &ProtocolKernel, t: f64) -> C64 {
    kernel.lambda(t)
}

/// All points `eta_k (e^{iW t_j} - 1)` together with their mirror images
/// `-lambda`.
pub fn curve_coverage(eta_list: &[f64], times: &[f64], omega_mirror: f64) -> Result<Vec<C64>> {
    if eta_list.is_empty() {
        return Err(Error::EmptyInput("eta list"));
    }
    if let Some(&bad) = eta_list.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidParameter {
            name: "eta",
            reason: format!("must be positive, got {bad}"),
        });
    }
    let mut points = Vec::with_capacity(2 * eta_list.len() * times.len());
    for &eta in eta_list {
        for &t in times {
            let lambda = (C64::from_polar(1.0, omega_mirror * t) - 1.0) * eta;
            points.push(lambda);
            points.push(-lambda);
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn kernel(eta: f64, alpha: C64, frame: Frame) -> ProtocolKernel {
        ProtocolKernel::new(SystemParams::new(5.0, 1.0, eta, alpha, frame).unwrap())
    }

    #[test]
    fn curve_geometry() {
        let k = kernel(0.3, C64::new(1.0, 0.0), Frame::RotatingAtOmega);
        assert_eq!(k.theta(0.0), 0.0);
        assert_eq!(k.lambda(0.0), C64::new(0.0, 0.0));
        assert!(k.lambda(2.0 * PI).norm() < 1e-15);
        assert!((k.lambda(PI) - C64::new(-0.6, 0.0)).norm() < 1e-15);
        for j in 0..50 {
            let t = 0.13 * j as f64;
            assert!(((k.lambda(t) + 0.3).norm() - 0.3).abs() < 1e-15);
            assert!((k.theta(t) - 0.09 * (t - t.sin())).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_coupling_prefactor() {
        let alpha = C64::new(0.7, -0.2);
        let k = kernel(0.0, alpha, Frame::Lab);
        for &t in &[0.0, 0.5, 3.0] {
            assert!((k.prefactor(t).unwrap() - alpha * C64::from_polar(1.0, -5.0 * t)).norm() < 1e-15);
        }
    }

    #[test]
    fn prefactor_bounds() {
        let alpha = C64::new(1.3, 0.4);
        let k = kernel(0.5, alpha, Frame::RotatingAtOmega);
        let floor = k.prefactor_floor();
        for j in 0..2000 {
            let t = 0.01 * j as f64;
            let p = k.prefactor(t).unwrap();
            let expected = alpha.norm() * (-alpha.norm_sqr() * (1.0 - (2.0 * k.theta(t)).cos())).exp();
            assert!((p.norm() - expected).abs() < 1e-14);
            assert!(p.norm() >= floor);
            assert_eq!(k.expect_a(|_| C64::new(1.0, 0.0), t).unwrap(), p);
        }
    }

    #[test]
    fn degenerate_without_signal() {
        let k = kernel(0.3, C64::new(0.0, 0.0), Frame::RotatingAtOmega);
        assert!(matches!(k.prefactor(1.0), Err(Error::ProtocolDegenerate)));
    }

    #[test]
    fn coverage_counts() {
        let times: Vec<f64> = (0..16).map(|j| 2.0 * PI * j as f64 / 16.0).collect();
        let pts = curve_coverage(&[0.1, 0.4, 0.25], &times, 1.0).unwrap();
        assert_eq!(pts.len(), 2 * 3 * 16);
        let max = pts.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!((max - 0.8).abs() < 1e-15);
        assert!(curve_coverage(&[], &times, 1.0).is_err());
        assert!(curve_coverage(&[0.1, -0.1], &times, 1.0).is_err());
    }
}
