//! Kernel-weighted score and Hessian sums and the one-Newton-step
//! local-linear and local-constant refinements of a single additive
//! component.
//!
//! With first-stage values `μ̃`, `m̃_1(x^1)` and `m̃_{-1}(X̃_i)` in hand, the
//! score sums are
//!
//! ```text
//! S'_j(x^1)  = -2 Σ_i w_i {Y_i - F[η_i]} F'[η_i] (X_i^1 - x^1)^j K_h(x^1 - X_i^1)
//! S''_j(x^1) =  2 Σ_i w_i F'[η_i]^2 (X_i^1 - x^1)^j K_h(x^1 - X_i^1)
//!             - 2 Σ_i w_i {Y_i - F[η_i]} F''[η_i] (X_i^1 - x^1)^j K_h(x^1 - X_i^1)
//! ```
//!
//! with `η_i = μ̃ + m̃_1(x^1) + m̃_{-1}(X̃_i)` and `K_h(v) = K(v/h)` carrying
//! no `1/h` factor. The local-linear refinement takes one Newton step of the
//! kernel-weighted least-squares objective from `(b_0, b_1) = (m̃_1(x^1), 0)`;
//! the local-constant refinement uses only the `j = 0` sums.

use thiserror::Error;

use crate::basis::ModelBasis;
use crate::data::Dataset;
use crate::first_stage::FirstStageFit;
use crate::kernel::Kernel;
use crate::link::Link;

/// Relative threshold deciding when a Newton denominator is degenerate.
const DEGENERATE_REL_TOL: f64 = 1e-12;

/// Minimum ratio of the full Newton curvature to its always-nonnegative
/// squared-derivative (Gauss-Newton) part for the full Newton step to be
/// trusted. The residual-curvature term of `S''` averages to zero at the
/// truth, so this ratio tends to one; a small or negative ratio means the
/// local quadratic model is unreliable (it produces arbitrarily large steps
/// near a sign change of the denominator) and the refinement is skipped in
/// favor of the first-stage value.
const CURVATURE_GUARD: f64 = 0.5;

/// Minimum ratio of the Gauss-Newton curvature to the raw kernel mass scale
/// for the window to carry usable curvature at all. The ratio is a kernel-
/// weighted average of `F'[η]²`; identification requires the link slope to be
/// bounded away from zero on the support of the index, so a window average
/// below this floor means the first-stage index is saturated there and the
/// score carries no information about the component value. The refinement is
/// skipped in favor of the first-stage value.
const SLOPE_FLOOR: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum SecondStageError {
    #[error(
        "degenerate kernel window at x = {x}: denominator {denominator:e} below scale \
         (h too small locally or fewer than 2 distinct covariate values in window)"
    )]
    DegenerateWindow { x: f64, denominator: f64 },
    #[error("bandwidth must satisfy 0 < h <= 2, got {0}")]
    InvalidBandwidth(f64),
    #[error("target coordinate {target} out of range for d = {d}")]
    InvalidTarget { target: usize, d: usize },
}

/// Which local smoother the one-step refinement targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoother {
    LocalLinear,
    LocalConstant,
}

impl std::str::FromStr for Smoother {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "local-linear" | "ll" => Ok(Self::LocalLinear),
            "local-constant" | "lc" => Ok(Self::LocalConstant),
            other => Err(format!("unknown smoother '{other}'")),
        }
    }
}

/// Settings for refining one component.
#[derive(Debug, Clone)]
pub struct SecondStageConfig {
    /// Target coordinate, 0-based.
    pub target: usize,
    /// Bandwidth on the cube scale, `0 < h <= 2`.
    pub h: f64,
    pub smoother: Smoother,
    pub kernel: Kernel,
}

impl SecondStageConfig {
    pub fn new(target: usize, h: f64, smoother: Smoother) -> Result<Self, SecondStageError> {
        if !(h > 0.0 && h <= 2.0) {
            return Err(SecondStageError::InvalidBandwidth(h));
        }
        Ok(Self {
            target,
            h,
            smoother,
            kernel: Kernel::quartic(),
        })
    }
}

/// A refined component on a grid, with per-point boundary flags and missing
/// values where the kernel window degenerated.
#[derive(Debug, Clone)]
pub struct ComponentEstimate {
    pub coordinate: usize,
    pub grid: Vec<f64>,
    pub values: Vec<Option<f64>>,
    /// True where `|x| > 1 - h`, the zone with the weaker uniform error bound.
    pub boundary: Vec<bool>,
    pub h: f64,
    pub smoother: Smoother,
}

/// Everything the score sums need that does not depend on the evaluation
/// point: the sample, link, kernel, bandwidth, intercept and the per-
/// observation sum of the *other* fitted components.
pub struct SmoothContext<'a> {
    pub data: &'a Dataset,
    pub link: &'a Link,
    pub kernel: &'a Kernel,
    /// Target coordinate (0-based).
    pub target: usize,
    pub h: f64,
    /// Fitted intercept.
    pub mu: f64,
    /// `m̃_{-target}(X̃_i)` for each observation.
    pub m_rest: Vec<f64>,
}

impl<'a> SmoothContext<'a> {
    /// Builds the context from a first-stage fit.
    pub fn from_fit(
        fit: &FirstStageFit,
        data: &'a Dataset,
        basis: &ModelBasis,
        link: &'a Link,
        kernel: &'a Kernel,
        target: usize,
        h: f64,
    ) -> Result<Self, SecondStageError> {
        if target >= data.d() {
            return Err(SecondStageError::InvalidTarget {
                target,
                d: data.d(),
            });
        }
        if !(h > 0.0 && h <= 2.0) {
            return Err(SecondStageError::InvalidBandwidth(h));
        }
        let m_rest = (0..data.n())
            .map(|i| {
                (0..data.d())
                    .filter(|&j| j != target)
                    .map(|j| fit.eval_mtilde_j(basis, j, data.x(i, j)))
                    .sum()
            })
            .collect();
        Ok(Self {
            data,
            link,
            kernel,
            target,
            h,
            mu: fit.mu_tilde(),
            m_rest,
        })
    }

    /// Builds the context from known component functions (oracle use).
    pub fn from_functions(
        data: &'a Dataset,
        link: &'a Link,
        kernel: &'a Kernel,
        target: usize,
        h: f64,
        mu: f64,
        m_rest_fn: impl Fn(usize) -> f64,
    ) -> Self {
        let m_rest = (0..data.n()).map(m_rest_fn).collect();
        Self {
            data,
            link,
            kernel,
            target,
            h,
            mu,
            m_rest,
        }
    }

    #[inline]
    fn index_at(&self, i: usize, m1_x1: f64) -> f64 {
        self.mu + m1_x1 + self.m_rest[i]
    }

    /// `Σ_i K_h(x - X_i^t)`, the unweighted kernel mass in the window.
    pub fn kernel_mass(&self, x1: f64) -> f64 {
        (0..self.data.n())
            .map(|i| self.kernel.eval_scaled(x1 - self.data.x(i, self.target), self.h))
            .sum()
    }

    /// `S'_j(x^1)` for `j ∈ {0, 1}`; `weight[i]` multiplies summand `i` when
    /// supplied. An empty kernel window yields 0.
    pub fn s_prime(&self, j_power: u8, x1: f64, m1_x1: f64, weight: Option<&[f64]>) -> f64 {
        debug_assert!(j_power <= 1);
        let mut acc = 0.0;
        for i in 0..self.data.n() {
            let k = self.kernel.eval_scaled(x1 - self.data.x(i, self.target), self.h);
            if k == 0.0 {
                continue;
            }
            let eta = self.index_at(i, m1_x1);
            let resid = self.data.y()[i] - self.link.f(eta);
            let dx = self.data.x(i, self.target) - x1;
            let w = weight.map_or(1.0, |w| w[i]);
            acc += w * resid * self.link.fp(eta) * dx.powi(j_power as i32) * k;
        }
        -2.0 * acc
    }

    /// `S''_j(x^1)` for `j ∈ {0, 1, 2}`: the squared-derivative term minus
    /// the residual-curvature term.
    pub fn s_double_prime(&self, j_power: u8, x1: f64, m1_x1: f64, weight: Option<&[f64]>) -> f64 {
        debug_assert!(j_power <= 2);
        let mut acc = 0.0;
        for i in 0..self.data.n() {
            let k = self.kernel.eval_scaled(x1 - self.data.x(i, self.target), self.h);
            if k == 0.0 {
                continue;
            }
            let eta = self.index_at(i, m1_x1);
            let fp = self.link.fp(eta);
            let resid = self.data.y()[i] - self.link.f(eta);
            let dx = self.data.x(i, self.target) - x1;
            let w = weight.map_or(1.0, |w| w[i]);
            acc += w * (fp * fp - resid * self.link.fpp(eta)) * dx.powi(j_power as i32) * k;
        }
        2.0 * acc
    }

    /// The squared-derivative (Gauss-Newton) part of `S''_j`:
    /// `2 Σ_i w_i F'[η_i]² (X_i^1 - x^1)^j K_h(x^1 - X_i^1)`, nonnegative for
    /// even `j_power`.
    fn gauss_newton_curvature(
        &self,
        j_power: u8,
        x1: f64,
        m1_x1: f64,
        weight: Option<&[f64]>,
    ) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.data.n() {
            let k = self.kernel.eval_scaled(x1 - self.data.x(i, self.target), self.h);
            if k == 0.0 {
                continue;
            }
            let fp = self.link.fp(self.index_at(i, m1_x1));
            let dx = self.data.x(i, self.target) - x1;
            let w = weight.map_or(1.0, |w| w[i]);
            acc += w * fp * fp * dx.powi(j_power as i32) * k;
        }
        2.0 * acc
    }

    /// Number of distinct target-coordinate values with positive kernel weight.
    fn distinct_in_window(&self, x1: f64) -> usize {
        let mut vals: Vec<f64> = (0..self.data.n())
            .filter_map(|i| {
                let v = self.data.x(i, self.target);
                (self.kernel.eval_scaled(x1 - v, self.h) > 0.0).then_some(v)
            })
            .collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        vals.len()
    }

    /// One Newton step of the local-linear objective from `(m̃_1(x^1), 0)`.
    /// Falls back to `m̃_1(x^1)` when the sample curvature fails the
    /// positivity margin of [`CURVATURE_GUARD`].
    pub fn local_linear_step(
        &self,
        x1: f64,
        m1_x1: f64,
        weight: Option<&[f64]>,
    ) -> Result<f64, SecondStageError> {
        let s2_0 = self.s_double_prime(0, x1, m1_x1, weight);
        let s2_1 = self.s_double_prime(1, x1, m1_x1, weight);
        let s2_2 = self.s_double_prime(2, x1, m1_x1, weight);
        let denominator = s2_0 * s2_2 - s2_1 * s2_1;
        let scale = 2.0 * self.kernel_mass(x1);
        if denominator.abs() < DEGENERATE_REL_TOL * scale * scale
            || self.distinct_in_window(x1) < 2
        {
            return Err(SecondStageError::DegenerateWindow { x: x1, denominator });
        }
        let g0 = self.gauss_newton_curvature(0, x1, m1_x1, weight);
        let g1 = self.gauss_newton_curvature(1, x1, m1_x1, weight);
        let g2 = self.gauss_newton_curvature(2, x1, m1_x1, weight);
        let gn_det = g0 * g2 - g1 * g1;
        if g0 <= SLOPE_FLOOR * scale
            || s2_0 <= CURVATURE_GUARD * g0
            || denominator <= CURVATURE_GUARD.powi(2) * gn_det
        {
            return Ok(m1_x1);
        }
        let s1_0 = self.s_prime(0, x1, m1_x1, weight);
        let s1_1 = self.s_prime(1, x1, m1_x1, weight);
        Ok(m1_x1 - (s2_2 * s1_0 - s2_1 * s1_1) / denominator)
    }

    /// The local-constant one-step refinement `m̃_1(x^1) - S'_0 / S''_0`.
    /// Falls back to `m̃_1(x^1)` when the sample curvature fails the
    /// positivity margin of [`CURVATURE_GUARD`].
    pub fn local_constant_step(
        &self,
        x1: f64,
        m1_x1: f64,
        weight: Option<&[f64]>,
    ) -> Result<f64, SecondStageError> {
        let s2_0 = self.s_double_prime(0, x1, m1_x1, weight);
        let scale = 2.0 * self.kernel_mass(x1);
        if s2_0.abs() < DEGENERATE_REL_TOL * scale || scale == 0.0 {
            return Err(SecondStageError::DegenerateWindow {
                x: x1,
                denominator: s2_0,
            });
        }
        let g0 = self.gauss_newton_curvature(0, x1, m1_x1, weight);
        if g0 <= SLOPE_FLOOR * scale || s2_0 <= CURVATURE_GUARD * g0 {
            return Ok(m1_x1);
        }
        Ok(m1_x1 - self.s_prime(0, x1, m1_x1, weight) / s2_0)
    }

    /// Applies the configured smoother at one point.
    pub fn step(
        &self,
        smoother: Smoother,
        x1: f64,
        m1_x1: f64,
        weight: Option<&[f64]>,
    ) -> Result<f64, SecondStageError> {
        match smoother {
            Smoother::LocalLinear => self.local_linear_step(x1, m1_x1, weight),
            Smoother::LocalConstant => self.local_constant_step(x1, m1_x1, weight),
        }
    }
}

/// Refines one component on a grid. Degenerate windows become missing values
/// rather than aborting the grid; `|x| > 1 - h` is flagged as boundary.
pub fn estimate_component(
    fit: &FirstStageFit,
    data: &Dataset,
    basis: &ModelBasis,
    link: &Link,
    config: &SecondStageConfig,
    grid: &[f64],
) -> Result<ComponentEstimate, SecondStageError> {
    estimate_component_weighted(fit, data, basis, link, config, grid, None)
}

/// As [`estimate_component`], with an optional per-point weight provider:
/// `weights_at(x1)` returns the per-observation weights `w(x1, X̃_i)`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_component_weighted(
    fit: &FirstStageFit,
    data: &Dataset,
    basis: &ModelBasis,
    link: &Link,
    config: &SecondStageConfig,
    grid: &[f64],
    weights_at: Option<&dyn Fn(f64) -> Vec<f64>>,
) -> Result<ComponentEstimate, SecondStageError> {
    let ctx = SmoothContext::from_fit(
        fit,
        data,
        basis,
        link,
        &config.kernel,
        config.target,
        config.h,
    )?;
    let mut values = Vec::with_capacity(grid.len());
    let mut boundary = Vec::with_capacity(grid.len());
    for &x in grid {
        let m1 = fit.eval_mtilde_j(basis, config.target, x);
        let w = weights_at.map(|f| f(x));
        let v = ctx.step(config.smoother, x, m1, w.as_deref()).ok();
        values.push(v);
        boundary.push(x.abs() > 1.0 - config.h);
    }
    Ok(ComponentEstimate {
        coordinate: config.target,
        grid: grid.to_vec(),
        values,
        boundary,
        h: config.h,
        smoother: config.smoother,
    })
}

/// Variance-minimizing weights `w(x^1, X̃_i) = c(x^1) · Var(U|x^1, X̃_i)^{-1}`
/// for one evaluation point.
///
/// Inverse-variance weighting is the first-order condition of minimizing
/// the asymptotic variance `∝ ∫ w² Var F'² f` subject to the normalization
/// below (the constraint's integrand is linear in `w`, the objective's is
/// quadratic, so the ratio of densities must be constant).
///
/// `var_at(i)` supplies the (estimated or exact) conditional variance at
/// `(x^1, X̃_i)`; values below `1e-6` are clamped to the floor. The scale
/// `c(x^1)` is chosen so that the kernel-sample analogue of the population
/// constraint `∫ w F'[·]^2 f_X dx̃ = 1`, namely
/// `(nh)^{-1} Σ_i K_h(x^1 - X_i^1) w_i F'[η_i]^2 = 1`, holds exactly.
///
/// Returns the per-observation weights together with `c(x^1)` and a flag
/// marking whether any variance hit the floor.
pub fn variance_min_weight(
    ctx: &SmoothContext<'_>,
    x1: f64,
    m1_x1: f64,
    var_at: &dyn Fn(usize) -> f64,
) -> Result<(Vec<f64>, f64, bool), SecondStageError> {
    let n = ctx.data.n();
    let mut clamped = false;
    let base: Vec<f64> = (0..n)
        .map(|i| {
            let mut v = var_at(i);
            if v < 1e-6 {
                v = 1e-6;
                clamped = true;
            }
            1.0 / v
        })
        .collect();
    let nh = n as f64 * ctx.h;
    let mut functional = 0.0;
    for i in 0..n {
        let k = ctx
            .kernel
            .eval_scaled(x1 - ctx.data.x(i, ctx.target), ctx.h);
        if k == 0.0 {
            continue;
        }
        let fp = ctx.link.fp(ctx.index_at(i, m1_x1));
        functional += k * base[i] * fp * fp / nh;
    }
    if functional <= 0.0 || !functional.is_finite() {
        return Err(SecondStageError::DegenerateWindow {
            x: x1,
            denominator: functional,
        });
    }
    let c = 1.0 / functional;
    Ok((base.into_iter().map(|b| c * b).collect(), c, clamped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisFamily, ModelBasis};
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// A five-observation dataset with fixed values for transcription tests.
    fn hand_dataset() -> Dataset {
        Dataset::from_cube(
            vec![1.0, 0.0, 1.0, 1.0, 0.0],
            vec![
                vec![-0.8, 0.3],
                vec![-0.2, -0.6],
                vec![0.1, 0.9],
                vec![0.4, -0.1],
                vec![0.9, 0.5],
            ],
        )
        .unwrap()
    }

    fn hand_context<'a>(
        data: &'a Dataset,
        link: &'a Link,
        kernel: &'a Kernel,
        h: f64,
    ) -> SmoothContext<'a> {
        // Fixed "fitted" pieces: mu = 0.2, m_rest = 0.3 * sin of the other coord.
        SmoothContext::from_functions(data, link, kernel, 0, h, 0.2, |i| {
            0.3 * data.x(i, 1).sin()
        })
    }

    /// Literal transcription of the score-sum formulas, written independently.
    #[allow(clippy::too_many_arguments)]
    fn s_prime_oracle(
        data: &Dataset,
        link: &Link,
        kernel: &Kernel,
        h: f64,
        mu: f64,
        m1x1: f64,
        m_rest: &[f64],
        j: i32,
        x1: f64,
        w: Option<&[f64]>,
    ) -> f64 {
        let mut total = 0.0;
        for i in 0..data.n() {
            let eta = mu + m1x1 + m_rest[i];
            let wi = w.map_or(1.0, |w| w[i]);
            total += wi
                * (data.y()[i] - link.f(eta))
                * link.fp(eta)
                * (data.x(i, 0) - x1).powi(j)
                * kernel.eval((x1 - data.x(i, 0)) / h);
        }
        -2.0 * total
    }

    #[allow(clippy::too_many_arguments)]
    fn s_double_prime_oracle(
        data: &Dataset,
        link: &Link,
        kernel: &Kernel,
        h: f64,
        mu: f64,
        m1x1: f64,
        m_rest: &[f64],
        j: i32,
        x1: f64,
        w: Option<&[f64]>,
    ) -> f64 {
        let mut t1 = 0.0;
        let mut t2 = 0.0;
        for i in 0..data.n() {
            let eta = mu + m1x1 + m_rest[i];
            let k = kernel.eval((x1 - data.x(i, 0)) / h);
            let dxj = (data.x(i, 0) - x1).powi(j);
            let wi = w.map_or(1.0, |w| w[i]);
            t1 += wi * link.fp(eta) * link.fp(eta) * dxj * k;
            t2 += wi * (data.y()[i] - link.f(eta)) * link.fpp(eta) * dxj * k;
        }
        2.0 * t1 - 2.0 * t2
    }

    #[test]
    fn score_sums_match_transcription_oracle() {
        let data = hand_dataset();
        let link = Link::logit();
        let kernel = Kernel::quartic();
        let h = 0.7;
        let ctx = hand_context(&data, &link, &kernel, h);
        let m_rest = ctx.m_rest.clone();
        let x1 = 0.15;
        let m1 = -0.4;
        for j in 0..=1u8 {
            let got = ctx.s_prime(j, x1, m1, None);
            let want =
                s_prime_oracle(&data, &link, &kernel, h, 0.2, m1, &m_rest, j as i32, x1, None);
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
        for j in 0..=2u8 {
            let got = ctx.s_double_prime(j, x1, m1, None);
            let want = s_double_prime_oracle(
                &data, &link, &kernel, h, 0.2, m1, &m_rest, j as i32, x1, None,
            );
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn empty_window_yields_zero() {
        let data = hand_dataset();
        let link = Link::logit();
        let kernel = Kernel::quartic();
        // h so small that no observation is within h of x1 = -0.5.
        let ctx = hand_context(&data, &link, &kernel, 0.05);
        assert_eq!(ctx.s_prime(0, -0.5, 0.0, None), 0.0);
        assert_eq!(ctx.s_double_prime(0, -0.5, 0.0, None), 0.0);
        assert!(matches!(
            ctx.local_linear_step(-0.5, 0.0, None),
            Err(SecondStageError::DegenerateWindow { .. })
        ));
    }

    #[test]
    fn identity_link_s_double_prime_reduces() {
        let data = hand_dataset();
        let link = Link::identity();
        let kernel = Kernel::quartic();
        let ctx = hand_context(&data, &link, &kernel, 0.8);
        let x1 = 0.1;
        // F' = 1 and F'' = 0, so S''_0 = 2 Σ K_h.
        assert_abs_diff_eq!(
            ctx.s_double_prime(0, x1, 0.0, None),
            2.0 * ctx.kernel_mass(x1),
            epsilon = 1e-12
        );
    }

    #[test]
    fn one_step_estimators_match_composed_oracles() {
        let data = hand_dataset();
        let link = Link::logit();
        let kernel = Kernel::quartic();
        let h = 0.9;
        let ctx = hand_context(&data, &link, &kernel, h);
        let m_rest = ctx.m_rest.clone();
        let x1 = 0.0;
        let m1 = 0.25;
        let sp = |j| s_prime_oracle(&data, &link, &kernel, h, 0.2, m1, &m_rest, j, x1, None);
        let spp = |j| s_double_prime_oracle(&data, &link, &kernel, h, 0.2, m1, &m_rest, j, x1, None);
        let ll_want = m1 - (spp(2) * sp(0) - spp(1) * sp(1)) / (spp(0) * spp(2) - spp(1) * spp(1));
        let lc_want = m1 - sp(0) / spp(0);
        assert_abs_diff_eq!(
            ctx.local_linear_step(x1, m1, None).unwrap(),
            ll_want,
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(
            ctx.local_constant_step(x1, m1, None).unwrap(),
            lc_want,
            epsilon = 1e-12
        );
    }

    /// Zero-score fixed point: when every windowed residual vanishes (the
    /// target component is constant and absorbed by the intercept), both
    /// smoothers return the first-stage value exactly.
    #[test]
    fn zero_score_is_a_fixed_point() {
        let link = Link::identity();
        let kernel = Kernel::quartic();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let m2 = |v: f64| 0.5 * v;
        let y: Vec<f64> = x.iter().map(|r| 0.1 + m2(r[1])).collect();
        let data = Dataset::from_cube(y, x).unwrap();
        let ctx =
            SmoothContext::from_functions(&data, &link, &kernel, 0, 0.5, 0.1, |i| m2(data.x(i, 1)));
        for &x1 in &[-0.4, 0.0, 0.3] {
            assert_abs_diff_eq!(
                ctx.local_linear_step(x1, 0.0, None).unwrap(),
                0.0,
                epsilon = 1e-13
            );
            assert_abs_diff_eq!(
                ctx.local_constant_step(x1, 0.0, None).unwrap(),
                0.0,
                epsilon = 1e-13
            );
        }
    }

    /// With the identity link the objective is quadratic, so one Newton step
    /// lands at the exact local-linear fit, which reproduces a linear truth.
    #[test]
    fn local_linear_reproduces_linear_truth_exactly() {
        let link = Link::identity();
        let kernel = Kernel::quartic();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let m1 = |v: f64| 0.7 * v;
        let m2 = |v: f64| v * v - 1.0 / 3.0;
        let y: Vec<f64> = x.iter().map(|r| 0.1 + m1(r[0]) + m2(r[1])).collect();
        let data = Dataset::from_cube(y, x).unwrap();
        let ctx =
            SmoothContext::from_functions(&data, &link, &kernel, 0, 0.5, 0.1, |i| m2(data.x(i, 1)));
        for &x1 in &[-0.4, 0.0, 0.3] {
            let v = m1(x1);
            assert_abs_diff_eq!(ctx.local_linear_step(x1, v, None).unwrap(), v, epsilon = 1e-12);
        }
    }

    /// Multiplying the kernel by a positive constant leaves both one-step
    /// estimators unchanged.
    #[test]
    fn kernel_scale_invariance() {
        let data = hand_dataset();
        let link = Link::logit();
        let kernel = Kernel::quartic();
        let scaled = Kernel::new(
            "scaled-quartic",
            |v: f64| {
                if v.abs() > 1.0 {
                    0.0
                } else {
                    let u = 1.0 - v * v;
                    3.0 * 15.0 / 16.0 * u * u
                }
            },
            |_| 0.0,
            |_| 0.0,
            1.0 / 7.0,
            5.0 / 7.0,
        );
        let ctx_a = hand_context(&data, &link, &kernel, 0.9);
        let ctx_b = hand_context(&data, &link, &scaled, 0.9);
        let ll_a = ctx_a.local_linear_step(0.1, 0.2, None).unwrap();
        let ll_b = ctx_b.local_linear_step(0.1, 0.2, None).unwrap();
        assert_abs_diff_eq!(ll_a, ll_b, epsilon = 1e-12);
        let lc_a = ctx_a.local_constant_step(0.1, 0.2, None).unwrap();
        let lc_b = ctx_b.local_constant_step(0.1, 0.2, None).unwrap();
        assert_abs_diff_eq!(lc_a, lc_b, epsilon = 1e-12);
    }

    #[test]
    fn grid_estimate_flags_boundary_and_propagates_missing() {
        let link = Link::identity();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x: Vec<Vec<f64>> = (0..80)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] + r[1]).collect();
        let data = Dataset::from_cube(y, x).unwrap();
        let basis = ModelBasis::uniform(BasisFamily::LegendreShifted, 2, 2).unwrap();
        let fit = crate::first_stage::fit_first_stage(
            &data,
            &basis,
            &link,
            &crate::first_stage::FirstStageConfig::default(),
        )
        .unwrap();
        let config = SecondStageConfig::new(0, 0.5, Smoother::LocalLinear).unwrap();
        let grid: Vec<f64> = (0..21).map(|i| -1.0 + 0.1 * i as f64).collect();
        let est = estimate_component(&fit, &data, &basis, &link, &config, &grid).unwrap();
        for (i, &g) in grid.iter().enumerate() {
            assert_eq!(est.boundary[i], g.abs() > 0.5);
        }
        // Singleton grid agrees with the pointwise op.
        let idx = grid.iter().position(|&g| (g - 0.2).abs() < 1e-12).unwrap();
        let single =
            estimate_component(&fit, &data, &basis, &link, &config, &[grid[idx]]).unwrap();
        assert_eq!(single.values[0], est.values[idx]);
    }

    #[test]
    fn variance_min_weight_normalizes_and_is_constant_when_homoskedastic() {
        let data = hand_dataset();
        let link = Link::logit();
        let kernel = Kernel::quartic();
        let ctx = hand_context(&data, &link, &kernel, 0.9);
        let x1 = 0.1;
        let m1 = 0.2;
        // Exact homoskedastic variance: weights constant across observations.
        let (w, _c, clamped) = variance_min_weight(&ctx, x1, m1, &|_| 0.25).unwrap();
        assert!(!clamped);
        for wi in &w {
            assert_abs_diff_eq!(*wi, w[0], epsilon = 1e-12);
        }
        // The empirical normalization functional equals 1 by construction.
        let nh = data.n() as f64 * 0.9;
        let mut functional = 0.0;
        for i in 0..data.n() {
            let k = kernel.eval((x1 - data.x(i, 0)) / 0.9);
            let fp = link.fp(0.2 + m1 + ctx.m_rest[i]);
            functional += k * w[i] * fp * fp / nh;
        }
        assert_abs_diff_eq!(functional, 1.0, epsilon = 1e-8);

        // Heteroskedastic toy with exact variance keeps the normalization.
        let (w2, _, _) =
            variance_min_weight(&ctx, x1, m1, &|i| 0.1 + 0.2 * data.x(i, 1).abs()).unwrap();
        let mut functional2 = 0.0;
        for i in 0..data.n() {
            let k = kernel.eval((x1 - data.x(i, 0)) / 0.9);
            let fp = link.fp(0.2 + m1 + ctx.m_rest[i]);
            functional2 += k * w2[i] * fp * fp / nh;
        }
        assert_abs_diff_eq!(functional2, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn config_rejects_bad_bandwidth() {
        assert!(SecondStageConfig::new(0, 0.0, Smoother::LocalLinear).is_err());
        assert!(SecondStageConfig::new(0, 2.5, Smoother::LocalLinear).is_err());
    }
}
