//! Plug-in estimation of the asymptotic bias and variance of the one-step
//! component estimators, conditional-variance and derivative estimation,
//! and pointwise confidence intervals.
//!
//! With `h = C_h n^{-1/5}` the scaled error `n^{2/5}[m̂_1(x^1) - m_1(x^1)]`
//! is asymptotically `N[β_1(x^1), V_1(x^1)]`, where
//!
//! ```text
//! β_1(x^1) = 2 C_h² A_K D_0(x^1)^{-1} ∫ g(x^1, x̃) F'[η] f_X(x^1, x̃) dx̃
//! V_1(x^1) = B_K C_h^{-1} D_0(x^1)^{-2} ∫ Var(U|x^1, x̃) F'[η]² f_X(x^1, x̃) dx̃
//! D_0(x^1) = 2 ∫ F'[η]² f_X(x^1, x̃) dx̃
//! ```
//!
//! with `η = μ + m_1(x^1) + m_{-1}(x̃)`. Every `∫ (·) f_X(x^1, x̃) dx̃`
//! integral is estimated by the kernel-localized sample average
//! `(nh)^{-1} Σ_i K_h(x^1 - X_i^1) · (integrand at (x^1, X̃_i))`, and
//! integrals against `∂f_X/∂x^1` by differentiating the kernel.

use statrs::distribution::ContinuousCDF;
use thiserror::Error;

use crate::basis::ModelBasis;
use crate::data::Dataset;
use crate::first_stage::FirstStageFit;
use crate::kernel::Kernel;
use crate::link::Link;
use crate::second_stage::{SmoothContext, Smoother};

/// Floor applied to conditional-variance estimates.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum AsymptoticsError {
    #[error("bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),
    #[error("derivative order must be 1 or 2, got {0}")]
    InvalidOrder(usize),
    #[error("grid must be strictly increasing with at least {min} points, got {got}")]
    BadGrid { min: usize, got: usize },
    #[error("fewer than 8 grid points fall in the smoothing window at x = {0}")]
    SparseGrid(f64),
    #[error("empty kernel window at x = {0}")]
    EmptyWindow(f64),
    #[error("denominator estimate {value:e} too small at x = {x}")]
    SmallDenominator { x: f64, value: f64 },
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("nonpositive variance estimate {value} at grid point {x}")]
    NegativeVariance { x: f64, value: f64 },
}

/// A derivative `m̂_1^{(ℓ)}` obtained by convolving a grid estimate of
/// `m̂_1` with the `ℓ`-th derivative of a smooth compactly supported
/// density `L`:
///
/// ```text
/// m̂_1^{(ℓ)}(x) = g^{-1-ℓ} ∫ L^{(ℓ)}[(x - v)/g] m̂_1(v) dv.
/// ```
///
/// The integral runs over the window `[x - g, x + g]` intersected with the
/// grid's range. Between consecutive grid points the estimate is linearly
/// interpolated, making the integrand a polynomial of degree at most five
/// there, which a three-point Gauss rule integrates exactly; in particular
/// a constant input yields an exactly zero derivative since
/// `∫ L^{(ℓ)} = 0`.
#[derive(Debug, Clone)]
pub struct DerivativeEstimator {
    grid: Vec<f64>,
    values: Vec<f64>,
    order: usize,
    g: f64,
    kernel: Kernel,
}

impl DerivativeEstimator {
    /// Validates the inputs; `grid` must be strictly increasing with at
    /// least 512 points and `values` aligned with it.
    pub fn new(
        grid: &[f64],
        values: &[f64],
        order: usize,
        g: f64,
        kernel: Kernel,
    ) -> Result<Self, AsymptoticsError> {
        if !(order == 1 || order == 2) {
            return Err(AsymptoticsError::InvalidOrder(order));
        }
        if !(g > 0.0) {
            return Err(AsymptoticsError::InvalidBandwidth(g));
        }
        if grid.len() < 512 || grid.len() != values.len() {
            return Err(AsymptoticsError::BadGrid {
                min: 512,
                got: grid.len(),
            });
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(AsymptoticsError::BadGrid {
                min: 512,
                got: grid.len(),
            });
        }
        Ok(Self {
            grid: grid.to_vec(),
            values: values.to_vec(),
            order,
            g,
            kernel,
        })
    }

    /// Linear interpolation of the grid estimate.
    fn interp(&self, v: f64) -> f64 {
        let grid = &self.grid;
        match grid.binary_search_by(|p| p.partial_cmp(&v).unwrap()) {
            Ok(i) => self.values[i],
            Err(0) => self.values[0],
            Err(i) if i == grid.len() => self.values[grid.len() - 1],
            Err(i) => {
                let t = (v - grid[i - 1]) / (grid[i] - grid[i - 1]);
                self.values[i - 1] + t * (self.values[i] - self.values[i - 1])
            }
        }
    }

    /// Evaluates the derivative estimate at `x`.
    pub fn eval(&self, x: f64) -> Result<f64, AsymptoticsError> {
        let (lo, hi) = (x - self.g, x + self.g);
        let a = lo.max(self.grid[0]);
        let b = hi.min(*self.grid.last().unwrap());
        // Integration nodes: window endpoints plus interior grid points.
        let mut nodes = vec![a];
        nodes.extend(self.grid.iter().copied().filter(|&v| v > a && v < b));
        nodes.push(b);
        if nodes.len() < 8 {
            return Err(AsymptoticsError::SparseGrid(x));
        }
        let l_deriv = |u: f64| match self.order {
            1 => self.kernel.deriv1(u),
            _ => self.kernel.deriv2(u),
        };
        let f = |v: f64| l_deriv((x - v) / self.g) * self.interp(v);
        let rule = crate::quad::GaussLegendre::new(3);
        let mut acc = 0.0;
        for w in nodes.windows(2) {
            acc += rule.integrate_on(w[0], w[1], f);
        }
        Ok(acc / self.g.powi(1 + self.order as i32))
    }
}

/// A Nadaraya-Watson product-kernel regression of squared residuals,
/// evaluable at arbitrary points of the cube.
///
/// Estimates below [`VARIANCE_FLOOR`] are clamped; an empty product-kernel
/// window falls back to the global mean squared residual and is flagged.
#[derive(Debug, Clone)]
pub struct ConditionalVariance {
    /// Covariate rows, row-major `n x d`.
    x: Vec<f64>,
    d: usize,
    squared_residuals: Vec<f64>,
    bandwidths: Vec<f64>,
    kernel: Kernel,
    global_mean: f64,
}

impl ConditionalVariance {
    /// Per-coordinate bandwidths must be positive and match the dimension.
    pub fn new(
        data: &Dataset,
        fit: &FirstStageFit,
        basis: &ModelBasis,
        link: &Link,
        bandwidths: &[f64],
        kernel: Kernel,
    ) -> Result<Self, AsymptoticsError> {
        assert_eq!(bandwidths.len(), data.d(), "one bandwidth per coordinate");
        if let Some(&bad) = bandwidths.iter().find(|&&h| !(h > 0.0)) {
            return Err(AsymptoticsError::InvalidBandwidth(bad));
        }
        let squared_residuals: Vec<f64> = (0..data.n())
            .map(|i| {
                let eta = fit.mu_tilde() + fit.eval_mtilde(basis, data.row(i));
                let r = data.y()[i] - link.f(eta);
                r * r
            })
            .collect();
        let global_mean =
            squared_residuals.iter().sum::<f64>() / squared_residuals.len() as f64;
        let x = (0..data.n()).flat_map(|i| data.row(i).to_vec()).collect();
        Ok(Self {
            x,
            d: data.d(),
            squared_residuals,
            bandwidths: bandwidths.to_vec(),
            kernel,
            global_mean,
        })
    }

    /// The variance estimate at `x`, with a flag marking the global-mean
    /// fallback for empty windows.
    pub fn eval_flagged(&self, x: &[f64]) -> (f64, bool) {
        assert_eq!(x.len(), self.d);
        let n = self.squared_residuals.len();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            let mut k = 1.0;
            for (j, (&xj, &hj)) in x.iter().zip(&self.bandwidths).enumerate() {
                k *= self.kernel.eval_scaled(self.x[i * self.d + j] - xj, hj);
                if k == 0.0 {
                    break;
                }
            }
            num += k * self.squared_residuals[i];
            den += k;
        }
        if den > 0.0 {
            ((num / den).max(VARIANCE_FLOOR), false)
        } else {
            (self.global_mean.max(VARIANCE_FLOOR), true)
        }
    }

    /// The variance estimate at `x`, fallback applied silently.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_flagged(x).0
    }

    /// Mean squared residual over the whole sample.
    pub fn global_mean(&self) -> f64 {
        self.global_mean
    }
}

/// The density-weighted denominators of the bias and variance formulas at a
/// single point, estimated by kernel-localized sample averages:
///
/// ```text
/// D̂_0 = 2 (nh)^{-1}  Σ_i K((x^1 - X_i^1)/h)  F'[η_i]²
/// D̂_1 = 2 (nh²)^{-1} Σ_i K'((x^1 - X_i^1)/h) F'[η_i]²
/// D̂_2 =   (nh)^{-1}  Σ_i K((x^1 - X_i^1)/h)  Var̂(U|x^1, X̃_i)^{-1} F'[η_i]²
/// ```
///
/// `D̂_1` differentiates the kernel density estimate in `x^1`, which is why
/// `K'` replaces `K` with an extra `1/h`. `var_at(i)` supplies the
/// conditional variance at `(x^1, X̃_i)` for `D̂_2`.
pub fn estimate_d0_d1_d2(
    ctx: &SmoothContext<'_>,
    x1: f64,
    m1_x1: f64,
    var_at: &dyn Fn(usize) -> f64,
) -> Result<(f64, f64, f64), AsymptoticsError> {
    let data = ctx.data;
    let n = data.n();
    let nh = n as f64 * ctx.h;
    let (mut d0, mut d1, mut d2) = (0.0, 0.0, 0.0);
    let mut mass = 0.0;
    for i in 0..n {
        let u = (x1 - data.x(i, ctx.target)) / ctx.h;
        let k = ctx.kernel.eval(u);
        let kp = ctx.kernel.deriv1(u);
        if k == 0.0 && kp == 0.0 {
            continue;
        }
        let fp = ctx.link.fp(ctx.mu + m1_x1 + ctx.m_rest[i]);
        let fp2 = fp * fp;
        mass += k;
        d0 += 2.0 * k * fp2 / nh;
        d1 += 2.0 * kp * fp2 / (nh * ctx.h);
        d2 += k * fp2 / (var_at(i).max(VARIANCE_FLOOR) * nh);
    }
    if mass == 0.0 {
        return Err(AsymptoticsError::EmptyWindow(x1));
    }
    Ok((d0, d1, d2))
}

/// Plug-in estimate of the asymptotic bias `β_1(x^1)` of the scaled error.
///
/// For the local-linear smoother the bias integrand is
/// `g = F''[η] m_1'(x^1) + F'[η] m_1''(x^1)`; for the local-constant
/// smoother it is the second `ζ`-derivative of
/// `{F[μ + m_1(ζ + x^1) + m_{-1}(x̃)] - F[μ + m_1(x^1) + m_{-1}(x̃)]} f_X(ζ + x^1, x̃)`
/// at `ζ = 0`, which expands to
/// `(F''[η] m_1'² + F'[η] m_1'') f_X + 2 F'[η] m_1' ∂f_X/∂x^1`.
/// The `∂f_X/∂x^1` term is estimated by differentiating the kernel, as in
/// `D̂_1`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_beta1(
    ctx: &SmoothContext<'_>,
    x1: f64,
    m1_x1: f64,
    m1_d1: f64,
    m1_d2: f64,
    d0: f64,
    c_h: f64,
    smoother: Smoother,
) -> Result<f64, AsymptoticsError> {
    if d0.abs() < 1e-12 {
        return Err(AsymptoticsError::SmallDenominator { x: x1, value: d0 });
    }
    let data = ctx.data;
    let n = data.n();
    let nh = n as f64 * ctx.h;
    let mut integral = 0.0;
    let mut mass = 0.0;
    for i in 0..n {
        let u = (x1 - data.x(i, ctx.target)) / ctx.h;
        let k = ctx.kernel.eval(u);
        let kp = ctx.kernel.deriv1(u);
        if k == 0.0 && kp == 0.0 {
            continue;
        }
        let eta = ctx.mu + m1_x1 + ctx.m_rest[i];
        let fp = ctx.link.fp(eta);
        let fpp = ctx.link.fpp(eta);
        mass += k;
        match smoother {
            Smoother::LocalLinear => {
                let g = fpp * m1_d1 + fp * m1_d2;
                integral += k * g * fp / nh;
            }
            Smoother::LocalConstant => {
                let g_density = fpp * m1_d1 * m1_d1 + fp * m1_d2;
                integral += k * g_density * fp / nh;
                integral += 2.0 * kp * fp * m1_d1 * fp / (nh * ctx.h);
            }
        }
    }
    if mass == 0.0 {
        return Err(AsymptoticsError::EmptyWindow(x1));
    }
    Ok(2.0 * c_h * c_h * ctx.kernel.a_k() * integral / d0)
}

/// Plug-in estimate of the asymptotic variance
/// `V_1(x^1) = 4 B_K C_h^{-1} D_0^{-2} ∫ Var(U|x^1, x̃) F'[η]² f_X dx̃`
/// of the unweighted estimator.
///
/// The factor 4 comes from the score `S'` carrying a prefactor −2 while
/// `D_0` carries a prefactor 2: `Var(S') = 4 n h B_K ∫ Var F'² f` and the
/// linearization divides by `(n h D_0)²`, so only one of the two 4s
/// cancels. Dropping it halves every interval width and empirically drops
/// nominal-95% coverage to ≈ 0.7.
pub fn estimate_v1(
    ctx: &SmoothContext<'_>,
    x1: f64,
    m1_x1: f64,
    d0: f64,
    var_at: &dyn Fn(usize) -> f64,
    c_h: f64,
) -> Result<f64, AsymptoticsError> {
    if d0.abs() < 1e-12 {
        return Err(AsymptoticsError::SmallDenominator { x: x1, value: d0 });
    }
    let data = ctx.data;
    let n = data.n();
    let nh = n as f64 * ctx.h;
    let mut integral = 0.0;
    let mut mass = 0.0;
    for i in 0..n {
        let k = ctx
            .kernel
            .eval_scaled(x1 - data.x(i, ctx.target), ctx.h);
        if k == 0.0 {
            continue;
        }
        let fp = ctx.link.fp(ctx.mu + m1_x1 + ctx.m_rest[i]);
        mass += k;
        integral += k * var_at(i) * fp * fp / nh;
    }
    if mass == 0.0 {
        return Err(AsymptoticsError::EmptyWindow(x1));
    }
    Ok(4.0 * ctx.kernel.b_k() * integral / (c_h * d0 * d0))
}

/// Asymptotic variance of the estimator run with the variance-minimizing
/// weight `w ∝ Var(U|x^1, x̃)^{-1}`:
/// `V_1(x^1, w*) = B_K C_h^{-1} D_2(x^1)^{-1}`.
///
/// Substituting `w = c/Var` with the normalization `∫ w F'² f = 1` into the
/// general weighted variance `4 B_K C_h^{-1} ∫ w² Var F'² f / 4` collapses
/// every integral into `D_2`; no extra density factor survives. Matches the
/// unweighted `V_1` exactly under homoskedasticity.
pub fn estimate_v1_optimal_weight(
    ctx: &SmoothContext<'_>,
    x1: f64,
    _m1_x1: f64,
    d2: f64,
    c_h: f64,
) -> Result<f64, AsymptoticsError> {
    if d2.abs() < 1e-12 {
        return Err(AsymptoticsError::SmallDenominator { x: x1, value: d2 });
    }
    Ok(ctx.kernel.b_k() / (c_h * d2))
}

/// How pointwise confidence intervals account for the asymptotic bias.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum CiMode {
    /// Center at `m̂ - n^{-2/5} β̂` with half-width `z n^{-2/5} √V̂`.
    BiasCorrected,
    /// With `h = C_h n^{-γ}` for `γ > 1/5` the scaled error is centered
    /// normal, so the interval is `m̂ ± z n^{-(1-γ)/2} √V̂` and the bias
    /// estimate is unused. This is the default: precise bias estimation
    /// is possible only under assumptions that amount to undersmoothing.
    Undersmoothed { gamma: f64 },
}

/// Pointwise asymptotic summaries on a grid.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AsymptoticSummary {
    pub grid: Vec<f64>,
    pub estimate: Vec<f64>,
    /// Bias of the scaled error (zero in undersmoothed mode).
    pub beta_hat: Vec<f64>,
    /// Variance of the scaled error.
    pub v_hat: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub alpha: f64,
    pub c_h: f64,
}

/// Builds pointwise confidence intervals at level `1 - alpha` from grid
/// estimates and their plug-in bias and variance.
#[allow(clippy::too_many_arguments)]
pub fn confidence_interval(
    grid: &[f64],
    estimate: &[f64],
    beta_hat: &[f64],
    v_hat: &[f64],
    n: usize,
    alpha: f64,
    mode: CiMode,
    c_h: f64,
) -> Result<AsymptoticSummary, AsymptoticsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(AsymptoticsError::InvalidLevel(alpha));
    }
    assert_eq!(grid.len(), estimate.len());
    assert_eq!(grid.len(), beta_hat.len());
    assert_eq!(grid.len(), v_hat.len());
    if let Some(i) = v_hat.iter().position(|&v| v < 0.0) {
        return Err(AsymptoticsError::NegativeVariance {
            x: grid[i],
            value: v_hat[i],
        });
    }
    let z = statrs::distribution::Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    let nf = n as f64;
    let (rate, center_shift): (f64, bool) = match mode {
        CiMode::BiasCorrected => (nf.powf(-0.4), true),
        CiMode::Undersmoothed { gamma } => (nf.powf(-0.5 * (1.0 - gamma)), false),
    };
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    let mut beta_out = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let beta = if center_shift { beta_hat[i] } else { 0.0 };
        let center = estimate[i] - rate * beta;
        let half = z * rate * v_hat[i].sqrt();
        lower.push(center - half);
        upper.push(center + half);
        beta_out.push(beta);
    }
    Ok(AsymptoticSummary {
        grid: grid.to_vec(),
        estimate: estimate.to_vec(),
        beta_hat: beta_out,
        v_hat: v_hat.to_vec(),
        lower,
        upper,
        alpha,
        c_h,
    })
}
