//! Second-stage bandwidth selection: a plug-in rule for the constant
//! `C_{h1}` and a penalized least squares (PLS) criterion over all
//! components.
//!
//! With `h = C_h n^{-1/5}`, the asymptotically optimal constant minimizes
//! weighted integrated mean squared error and equals
//!
//! ```text
//! C_{h1} = [ (1/4) ∫ w(x) Ṽ_1(x) dx / ∫ w(x) β̃_1(x)² dx ]^{1/5}
//! ```
//!
//! where `β̃_1 = β_1 / C_h²` and `Ṽ_1 = C_h V_1` strip the tuning constant
//! out of the asymptotic bias and variance. The PLS criterion refits all
//! components at a candidate bandwidth vector and scores
//!
//! ```text
//! PLS(h̄) = n^{-1} Σ_i {Y_i - F[μ̃ + m̂(X_i)]}²
//!         + 2 K(0) n^{-1} Σ_i F'[μ̃ + m̂(X_i)]² V̂(X_i)
//!           × Σ_j [n^{4/5} C_{hj} D̂_j(X_i^j)]^{-1}.
//! ```

use thiserror::Error;

use crate::basis::ModelBasis;
use crate::data::Dataset;
use crate::first_stage::FirstStageFit;
use crate::kernel::Kernel;
use crate::link::Link;
use crate::second_stage::{SmoothContext, Smoother};

#[derive(Debug, Error)]
pub enum BandwidthError {
    #[error(
        "bias integral is negligible: the component is effectively linear, so the plug-in \
         rule is undefined; choose a bandwidth manually or use an undersmoothed one"
    )]
    ZeroBiasIntegral,
    #[error("weight must be nonnegative with positive integral")]
    InvalidWeight,
    #[error("grid, weight, bias and variance slices must share a length of at least 2")]
    MismatchedLengths,
    #[error("search box must satisfy 0 < lo < hi, got [{lo}, {hi}]")]
    InvalidBox { lo: f64, hi: f64 },
    #[error("every candidate in the search box evaluated to an infinite objective")]
    AllInfinite,
}

/// Trapezoid rule over a strictly increasing grid.
fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(g, v)| 0.5 * (g[1] - g[0]) * (v[0] + v[1]))
        .sum()
}

/// The plug-in constant `C_{h1}`: the fifth root of the ratio of the
/// weighted variance integral to four times the weighted squared-bias
/// integral, all integrals by the trapezoid rule on the supplied grid.
///
/// The weight must be nonnegative; its scale cancels in the ratio.
pub fn plugin_ch1(
    grid: &[f64],
    weight: &[f64],
    beta_tilde: &[f64],
    v_tilde: &[f64],
) -> Result<f64, BandwidthError> {
    let n = grid.len();
    if n < 2 || weight.len() != n || beta_tilde.len() != n || v_tilde.len() != n {
        return Err(BandwidthError::MismatchedLengths);
    }
    if weight.iter().any(|&w| w < 0.0) {
        return Err(BandwidthError::InvalidWeight);
    }
    let num: Vec<f64> = weight.iter().zip(v_tilde).map(|(w, v)| w * v).collect();
    let den: Vec<f64> = weight
        .iter()
        .zip(beta_tilde)
        .map(|(w, b)| w * b * b)
        .collect();
    let wv = trapezoid(grid, &num);
    let wb2 = trapezoid(grid, &den);
    if !(trapezoid(grid, weight) > 0.0) {
        return Err(BandwidthError::InvalidWeight);
    }
    // A squared-bias integral that is zero, or negligible next to the
    // variance integral, means the component has no usable curvature: the
    // implied constant would be at least (0.25e12)^{1/5} ≈ 240, putting the
    // kernel window far past the covariate cube for any realistic sample
    // size. This also absorbs the rounding noise a numerically differenced
    // linear component leaves in `beta_tilde`.
    if !(wb2 > 1e-12 * wv) {
        return Err(BandwidthError::ZeroBiasIntegral);
    }
    Ok((0.25 * wv / wb2).powf(0.2))
}

/// The two pieces of the PLS criterion.
#[derive(Debug, Clone, Copy)]
pub struct PlsObjectiveParts {
    /// `n^{-1} Σ_i {Y_i - F[μ̃ + m̂(X_i)]}²`.
    pub rss: f64,
    /// The degrees-of-freedom penalty; always nonnegative.
    pub penalty: f64,
}

impl PlsObjectiveParts {
    pub fn total(&self) -> f64 {
        self.rss + self.penalty
    }
}

/// Evaluates the PLS criterion at a candidate constant vector.
///
/// Every component is refit by the one-step smoother at `h_j =
/// C_{hj} n^{-1/5}` on its own sample coordinates; the conditional
/// variance `V̂` is a product-kernel regression of the squared first-stage
/// residuals at per-coordinate bandwidths `variance_bandwidth_factor · h_j`
/// (V̂ is a full-dimensional regression, so it tolerates — and benefits
/// from — a wider window than the component refits). A degenerate kernel
/// window anywhere makes the candidate infeasible.
#[allow(clippy::too_many_arguments)]
pub fn pls_objective_parts(
    data: &Dataset,
    basis: &ModelBasis,
    link: &Link,
    fit: &FirstStageFit,
    kernel: &Kernel,
    smoother: Smoother,
    c_h: &[f64],
    variance_bandwidth_factor: f64,
) -> Result<PlsObjectiveParts, BandwidthError> {
    let n = data.n();
    let d = data.d();
    assert_eq!(c_h.len(), d, "one constant per coordinate");
    let n_f = n as f64;
    let h: Vec<f64> = c_h.iter().map(|c| c * n_f.powf(-0.2)).collect();
    if h.iter().any(|&hj| !(hj > 0.0 && hj <= 2.0)) {
        return Err(BandwidthError::AllInfinite);
    }

    // Refit every component at its own sample coordinates.
    let mut m_hat = vec![0.0; n]; // Σ_j m̂_j(X_i^j)
    for j in 0..d {
        let ctx = SmoothContext::from_fit(fit, data, basis, link, kernel, j, h[j])
            .map_err(|_| BandwidthError::AllInfinite)?;
        for i in 0..n {
            let xij = data.x(i, j);
            let m_tilde = fit.eval_mtilde_j(basis, j, xij);
            let refined = ctx
                .step(smoother, xij, m_tilde, None)
                .map_err(|_| BandwidthError::AllInfinite)?;
            m_hat[i] += refined;
        }
    }

    let eta: Vec<f64> = m_hat.iter().map(|m| fit.mu_tilde() + m).collect();
    let residuals: Vec<f64> = (0..n).map(|i| data.y()[i] - link.f(eta[i])).collect();
    let rss = residuals.iter().map(|r| r * r).sum::<f64>() / n_f;
    let fp2: Vec<f64> = eta.iter().map(|&e| link.fp(e) * link.fp(e)).collect();

    // Product-kernel variance estimate from the first-stage residuals.
    // Using the candidate's own refit residuals here would deflate V̂ — and
    // with it the penalty — exactly when the refit overfits at small
    // bandwidths; the first-stage residuals estimate the same conditional
    // variance without that feedback.
    let var_h: Vec<f64> = h.iter().map(|hj| hj * variance_bandwidth_factor).collect();
    let stage1_residuals: Vec<f64> = (0..n)
        .map(|i| {
            let m_tilde: f64 = (0..d)
                .map(|j| fit.eval_mtilde_j(basis, j, data.x(i, j)))
                .sum();
            data.y()[i] - link.f(fit.mu_tilde() + m_tilde)
        })
        .collect();
    let v_hat = conditional_variance_from_residuals(data, &stage1_residuals, &var_h, kernel);

    // D̂_j at the sample points; the self term keeps every window occupied.
    let mut penalty = 0.0;
    let k0 = kernel.k0();
    for i in 0..n {
        let mut inverse_sum = 0.0;
        for j in 0..d {
            let mut dj = 0.0;
            for k in 0..n {
                dj += kernel.eval_scaled(data.x(k, j) - data.x(i, j), h[j]) * fp2[k];
            }
            dj /= n_f * h[j];
            inverse_sum += 1.0 / (n_f.powf(0.8) * c_h[j] * dj);
        }
        penalty += fp2[i] * v_hat[i] * inverse_sum;
    }
    penalty *= 2.0 * k0 / n_f;
    Ok(PlsObjectiveParts { rss, penalty })
}

/// Nadaraya-Watson product-kernel regression of given squared residuals,
/// evaluated at every sample point (floor and fallback as in
/// [`ConditionalVariance`]).
fn conditional_variance_from_residuals(
    data: &Dataset,
    residuals: &[f64],
    bandwidths: &[f64],
    kernel: &Kernel,
) -> Vec<f64> {
    let n = data.n();
    let sq: Vec<f64> = residuals.iter().map(|r| r * r).collect();
    let global = sq.iter().sum::<f64>() / n as f64;
    (0..n)
        .map(|i| {
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..n {
                let mut kk = 1.0;
                for j in 0..data.d() {
                    kk *= kernel.eval_scaled(data.x(k, j) - data.x(i, j), bandwidths[j]);
                    if kk == 0.0 {
                        break;
                    }
                }
                num += kk * sq[k];
                den += kk;
            }
            let v = if den > 0.0 { num / den } else { global };
            v.max(crate::asymptotics::VARIANCE_FLOOR)
        })
        .collect()
}

/// The PLS value, `+∞` for infeasible candidates; convenient for searches.
#[allow(clippy::too_many_arguments)]
pub fn pls_objective(
    data: &Dataset,
    basis: &ModelBasis,
    link: &Link,
    fit: &FirstStageFit,
    kernel: &Kernel,
    smoother: Smoother,
    c_h: &[f64],
    variance_bandwidth_factor: f64,
) -> f64 {
    pls_objective_parts(
        data,
        basis,
        link,
        fit,
        kernel,
        smoother,
        c_h,
        variance_bandwidth_factor,
    )
    .map_or(f64::INFINITY, |p| p.total())
}

/// Settings for the PLS search.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PlsConfig {
    /// Search box for every coordinate, `0 < lo < hi`.
    pub c_lo: f64,
    pub c_hi: f64,
    /// Log-spaced candidates per coordinate; the grid is the full product.
    pub grid_points: usize,
    /// Run a Nelder-Mead polish from the grid argmin.
    pub polish: bool,
    /// Multiplier on the component bandwidths for the variance estimate's
    /// own (wider) bandwidths.
    pub variance_bandwidth_factor: f64,
}

impl Default for PlsConfig {
    fn default() -> Self {
        Self {
            c_lo: 0.2,
            c_hi: 3.0,
            grid_points: 10,
            polish: true,
            variance_bandwidth_factor: 1.5,
        }
    }
}

/// One objective evaluation in the search.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PlsTraceEntry {
    pub c_h: Vec<f64>,
    pub objective: f64,
}

/// The selected constants with the full search trace.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PlsSelection {
    pub c_h: Vec<f64>,
    pub objective: f64,
    pub trace: Vec<PlsTraceEntry>,
}

/// Minimizes the PLS criterion over the box `[c_lo, c_hi]^d`.
///
/// The search evaluates the full product grid of log-spaced candidates in
/// lexicographic order (ties therefore resolve toward the smallest
/// `C_{h1}`, then lexicographically) and optionally polishes the argmin
/// with a box-clamped Nelder-Mead. Every evaluation lands in the trace.
pub fn minimize_pls(
    config: &PlsConfig,
    data: &Dataset,
    basis: &ModelBasis,
    link: &Link,
    fit: &FirstStageFit,
    kernel: &Kernel,
    smoother: Smoother,
) -> Result<PlsSelection, BandwidthError> {
    if !(config.c_lo > 0.0 && config.c_lo < config.c_hi) {
        return Err(BandwidthError::InvalidBox {
            lo: config.c_lo,
            hi: config.c_hi,
        });
    }
    let d = data.d();
    let m = config.grid_points.max(1);
    let candidates: Vec<f64> = (0..m)
        .map(|i| {
            if m == 1 {
                config.c_lo
            } else {
                let t = i as f64 / (m - 1) as f64;
                (config.c_lo.ln() + t * (config.c_hi.ln() - config.c_lo.ln())).exp()
            }
        })
        .collect();

    let eval = |c: &[f64]| {
        pls_objective(
            data,
            basis,
            link,
            fit,
            kernel,
            smoother,
            c,
            config.variance_bandwidth_factor,
        )
    };

    let mut trace = Vec::new();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut index = vec![0usize; d];
    loop {
        let c: Vec<f64> = index.iter().map(|&i| candidates[i]).collect();
        let value = eval(&c);
        trace.push(PlsTraceEntry {
            c_h: c.clone(),
            objective: value,
        });
        if value.is_finite() && best.as_ref().map_or(true, |(_, b)| value < *b) {
            best = Some((c, value));
        }
        // Lexicographic advance with the last coordinate fastest.
        let mut exhausted = true;
        for pos in (0..d).rev() {
            index[pos] += 1;
            if index[pos] < m {
                exhausted = false;
                break;
            }
            index[pos] = 0;
        }
        if exhausted {
            break;
        }
    }
    let (mut best_c, mut best_v) = best.ok_or(BandwidthError::AllInfinite)?;

    if config.polish {
        let clamp = |c: &[f64]| -> Vec<f64> {
            c.iter()
                .map(|v| v.clamp(config.c_lo, config.c_hi))
                .collect()
        };
        let mut eval_traced = |c: &[f64]| -> f64 {
            let c = clamp(c);
            let value = eval(&c);
            trace.push(PlsTraceEntry {
                c_h: c,
                objective: value,
            });
            value
        };
        let (c, v) = nelder_mead(&best_c, 0.15, 60, &mut eval_traced);
        if v < best_v {
            best_c = clamp(&c);
            best_v = v;
        }
    }
    Ok(PlsSelection {
        c_h: best_c,
        objective: best_v,
        trace,
    })
}

/// A compact Nelder-Mead simplex search; returns the best vertex seen.
fn nelder_mead(
    start: &[f64],
    step: f64,
    max_iterations: usize,
    f: &mut dyn FnMut(&[f64]) -> f64,
) -> (Vec<f64>, f64) {
    let d = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((start.to_vec(), f(start)));
    for j in 0..d {
        let mut v = start.to_vec();
        v[j] *= 1.0 + step;
        let fv = f(&v);
        simplex.push((v, fv));
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    for _ in 0..max_iterations {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|(v, _)| v[j]).sum::<f64>() / d as f64)
            .collect();
        let worst = simplex[d].clone();
        let reflect: Vec<f64> = (0..d)
            .map(|j| centroid[j] + alpha * (centroid[j] - worst.0[j]))
            .collect();
        let f_r = f(&reflect);
        if f_r < simplex[0].1 {
            let expand: Vec<f64> = (0..d)
                .map(|j| centroid[j] + gamma * (reflect[j] - centroid[j]))
                .collect();
            let f_e = f(&expand);
            simplex[d] = if f_e < f_r {
                (expand, f_e)
            } else {
                (reflect, f_r)
            };
        } else if f_r < simplex[d - 1].1 {
            simplex[d] = (reflect, f_r);
        } else {
            let contract: Vec<f64> = (0..d)
                .map(|j| centroid[j] + rho * (worst.0[j] - centroid[j]))
                .collect();
            let f_c = f(&contract);
            if f_c < worst.1 {
                simplex[d] = (contract, f_c);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let shrunk: Vec<f64> = (0..d)
                        .map(|j| best[j] + sigma * (vertex.0[j] - best[j]))
                        .collect();
                    let fs = f(&shrunk);
                    *vertex = (shrunk, fs);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    simplex[0].clone()
}
