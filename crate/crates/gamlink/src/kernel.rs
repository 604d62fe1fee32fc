//! Second-stage kernels supported on `[-1, 1]` and their moment constants.
//!
//! The kernel convention throughout the crate is `K_h(v) = K(v / h)` with no
//! `1/h` normalization; the ratio structure of the one-step estimators makes
//! any constant factor cancel.

use std::fmt;
use std::sync::Arc;

use crate::quad::GaussLegendre;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A bounded symmetric probability density on `[-1, 1]` with its first two
/// derivatives and the moment constants `A_K = ∫ v²K` and `B_K = ∫ K²`.
#[derive(Clone)]
pub struct Kernel {
    name: String,
    k: ScalarFn,
    d1: ScalarFn,
    d2: ScalarFn,
    a_k: f64,
    b_k: f64,
    k0: f64,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("name", &self.name)
            .field("a_k", &self.a_k)
            .field("b_k", &self.b_k)
            .field("k0", &self.k0)
            .finish()
    }
}

impl Kernel {
    /// The quartic (biweight) kernel `K(v) = (15/16)(1 - v²)² 1{|v| <= 1}`.
    ///
    /// `A_K = 1/7`, `B_K = 5/7`, `K(0) = 15/16`, all in closed form.
    pub fn quartic() -> Self {
        Self {
            name: "quartic".into(),
            k: Arc::new(|v: f64| {
                if v.abs() > 1.0 {
                    0.0
                } else {
                    let u = 1.0 - v * v;
                    15.0 / 16.0 * u * u
                }
            }),
            d1: Arc::new(|v: f64| {
                if v.abs() > 1.0 {
                    0.0
                } else {
                    -15.0 / 4.0 * v * (1.0 - v * v)
                }
            }),
            d2: Arc::new(|v: f64| {
                if v.abs() > 1.0 {
                    0.0
                } else {
                    -15.0 / 4.0 * (1.0 - 3.0 * v * v)
                }
            }),
            a_k: 1.0 / 7.0,
            b_k: 5.0 / 7.0,
            k0: 15.0 / 16.0,
        }
    }

    /// Builds a custom kernel; `a_k` and `b_k` must match quadrature of `k`
    /// (checked by [`Kernel::check_constants`], not enforced here).
    pub fn new(
        name: impl Into<String>,
        k: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2: impl Fn(f64) -> f64 + Send + Sync + 'static,
        a_k: f64,
        b_k: f64,
    ) -> Self {
        let k0 = k(0.0);
        Self {
            name: name.into(),
            k: Arc::new(k),
            d1: Arc::new(d1),
            d2: Arc::new(d2),
            a_k,
            b_k,
            k0,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `K(v)`.
    #[inline]
    pub fn eval(&self, v: f64) -> f64 {
        (self.k)(v)
    }

    /// `K_h(v) = K(v / h)`, the unnormalized scaled kernel.
    #[inline]
    pub fn eval_scaled(&self, v: f64, h: f64) -> f64 {
        (self.k)(v / h)
    }

    /// `K'(v)`.
    #[inline]
    pub fn deriv1(&self, v: f64) -> f64 {
        (self.d1)(v)
    }

    /// `K''(v)`.
    #[inline]
    pub fn deriv2(&self, v: f64) -> f64 {
        (self.d2)(v)
    }

    /// `A_K = ∫ v² K(v) dv`.
    pub fn a_k(&self) -> f64 {
        self.a_k
    }

    /// `B_K = ∫ K(v)² dv`.
    pub fn b_k(&self) -> f64 {
        self.b_k
    }

    /// `K(0)`.
    pub fn k0(&self) -> f64 {
        self.k0
    }

    /// Maximum absolute deviation between the stored constants (unit mass,
    /// `A_K`, `B_K`) and quadrature of `k` at the given order.
    pub fn check_constants(&self, order: usize) -> f64 {
        let q = GaussLegendre::new(order);
        let mass = q.integrate(|v| self.eval(v));
        let a = q.integrate(|v| v * v * self.eval(v));
        let b = q.integrate(|v| self.eval(v) * self.eval(v));
        (mass - 1.0)
            .abs()
            .max((a - self.a_k).abs())
            .max((b - self.b_k).abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quartic_constants_match_quadrature() {
        let k = Kernel::quartic();
        assert!(k.check_constants(64) < 1e-10);
        assert_eq!(k.k0(), 15.0 / 16.0);
    }

    #[test]
    fn quartic_is_symmetric_and_supported() {
        let k = Kernel::quartic();
        assert_eq!(k.eval(1.2), 0.0);
        assert_abs_diff_eq!(k.eval(0.3), k.eval(-0.3), epsilon = 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let k = Kernel::quartic();
        let h = 1e-5;
        // K is quartic, so the fourth derivative is constant: the central
        // difference errors are O(h^2) truncation plus O(eps/h^2) rounding.
        for &v in &[-0.8, -0.3, 0.1, 0.6] {
            let fd1 = (k.eval(v + h) - k.eval(v - h)) / (2.0 * h);
            let fd2 = (k.eval(v + h) - 2.0 * k.eval(v) + k.eval(v - h)) / (h * h);
            assert_abs_diff_eq!(fd1, k.deriv1(v), epsilon = 1e-8);
            assert_abs_diff_eq!(fd2, k.deriv2(v), epsilon = 1e-5);
        }
    }

    #[test]
    fn scaled_kernel_has_no_height_normalization() {
        let k = Kernel::quartic();
        assert_eq!(k.eval_scaled(0.0, 0.25), k.eval(0.0));
        assert_eq!(k.eval_scaled(0.5, 0.25), 0.0);
    }
}
