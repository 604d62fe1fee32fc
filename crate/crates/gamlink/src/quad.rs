//! Gauss-Legendre quadrature on `[-1, 1]` and on general intervals.

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Computes an `order`-point rule by Newton iteration on the Legendre
    /// polynomial `P_order`, seeded with the Chebyshev-angle approximation.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "quadrature order must be positive");
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        // Roots come in +/- pairs; solve for the nonnegative half.
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Integrates `f` over `[-1, 1]`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate_on<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        half * self.integrate(|t| f(mid + half * t))
    }
}

/// Value and derivative of the Legendre polynomial `P_n` at `x`.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Legendre polynomial `P_n(x)` by the three-term recurrence.
pub fn legendre(n: usize, x: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        _ => {
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn low_order_rules_match_known_values() {
        let q2 = GaussLegendre::new(2);
        let r = 1.0 / 3f64.sqrt();
        assert_abs_diff_eq!(q2.nodes[0], -r, epsilon = 1e-14);
        assert_abs_diff_eq!(q2.nodes[1], r, epsilon = 1e-14);
        assert_abs_diff_eq!(q2.weights[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn integrates_polynomials_exactly() {
        let q = GaussLegendre::new(8);
        // Exact for degree <= 15.
        assert_abs_diff_eq!(q.integrate(|x| x.powi(14)), 2.0 / 15.0, epsilon = 1e-13);
        assert_abs_diff_eq!(q.integrate(|x| x.powi(13)), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn interval_mapping() {
        let q = GaussLegendre::new(16);
        assert_abs_diff_eq!(q.integrate_on(0.0, 2.0, |x| x), 2.0, epsilon = 1e-13);
    }

    #[test]
    fn order_64_weights_sum_to_two() {
        let q = GaussLegendre::new(64);
        let s: f64 = q.weights.iter().sum();
        assert_abs_diff_eq!(s, 2.0, epsilon = 1e-13);
    }
}
