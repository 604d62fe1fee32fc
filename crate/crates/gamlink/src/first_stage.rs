//! First-stage series fit: box-constrained nonlinear least squares for the
//! stacked coefficient vector.
//!
//! The objective is the mean squared residual
//! `S(θ) = n^{-1} Σ_i {Y_i - F[P(X_i)'θ]}^2` minimized over the box
//! `[-C_θ, C_θ]^p` by Gauss-Newton with Armijo backtracking, projection onto
//! the box after each trial step, and Levenberg damping when the normal
//! matrix is near singular.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::basis::ModelBasis;
use crate::data::Dataset;
use crate::link::Link;

#[derive(Debug, Error)]
pub enum FirstStageError {
    #[error("need n > d(kappa) for identifiability: n = {n}, d(kappa) = {dim}")]
    TooFewObservations { n: usize, dim: usize },
    #[error("non-finite objective encountered (link overflow or bad data)")]
    NonFiniteObjective,
    #[error("normal equations are singular even under damping (collinear basis evaluations)")]
    SingularNormalEquations,
    #[error(transparent)]
    Basis(#[from] crate::basis::BasisError),
}

/// Solver settings for the first stage.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FirstStageConfig {
    /// Box half-width `C_θ` for every coefficient.
    pub c_theta: f64,
    pub max_iterations: usize,
    /// Stop when the projected-gradient max-norm falls below this.
    pub gradient_tolerance: f64,
    /// Stop (flagging non-convergence) when the relative step falls below this.
    pub step_tolerance: f64,
}

impl Default for FirstStageConfig {
    fn default() -> Self {
        Self {
            c_theta: 100.0,
            max_iterations: 200,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-12,
        }
    }
}

/// The fitted coefficient vector and solver diagnostics.
///
/// Layout: `theta[0]` is the intercept `μ̃`; coordinate `j`'s block follows
/// [`ModelBasis::block_range`].
#[derive(Debug, Clone)]
pub struct FirstStageFit {
    pub theta: Vec<f64>,
    pub converged: bool,
    pub objective: f64,
    pub iterations: usize,
}

impl FirstStageFit {
    /// The fitted intercept `μ̃`.
    pub fn mu_tilde(&self) -> f64 {
        self.theta[0]
    }

    /// The series estimate of one component, `m̃_j(v) = Σ_k θ̂_{jk} p_k(v)`.
    pub fn eval_mtilde_j(&self, basis: &ModelBasis, j: usize, v: f64) -> f64 {
        basis.eval_component(j, &self.theta, v)
    }

    /// `m̃(x) = Σ_j m̃_j(x^j)`.
    pub fn eval_mtilde(&self, basis: &ModelBasis, x: &[f64]) -> f64 {
        (0..basis.d())
            .map(|j| self.eval_mtilde_j(basis, j, x[j]))
            .sum()
    }

    /// Per-component series values at every observation, row `i` holding
    /// `[m̃_1(X_i^1), ..., m̃_d(X_i^d)]`. Shared by the second stage.
    pub fn component_values(&self, basis: &ModelBasis, data: &Dataset) -> Vec<Vec<f64>> {
        (0..data.n())
            .map(|i| {
                (0..basis.d())
                    .map(|j| self.eval_mtilde_j(basis, j, data.x(i, j)))
                    .collect()
            })
            .collect()
    }
}

/// Exact mean of squared residuals at `theta`.
pub fn objective(theta: &[f64], data: &Dataset, basis: &ModelBasis, link: &Link) -> f64 {
    let n = data.n();
    let mut acc = 0.0;
    for i in 0..n {
        let p = basis.regressor(data.row(i)).expect("data on the cube");
        let eta: f64 = p.iter().zip(theta).map(|(a, b)| a * b).sum();
        let r = data.y()[i] - link.f(eta);
        acc += r * r;
    }
    acc / n as f64
}

/// Solves the box-constrained series least-squares problem.
pub fn fit_first_stage(
    data: &Dataset,
    basis: &ModelBasis,
    link: &Link,
    config: &FirstStageConfig,
) -> Result<FirstStageFit, FirstStageError> {
    let n = data.n();
    let dim = basis.dim();
    if n <= dim {
        return Err(FirstStageError::TooFewObservations { n, dim });
    }
    let c = config.c_theta;

    // Precompute the design matrix once; it is reused every iteration.
    let mut design = DMatrix::zeros(n, dim);
    for i in 0..n {
        let p = basis.regressor(data.row(i))?;
        for (jj, &v) in p.iter().enumerate() {
            design[(i, jj)] = v;
        }
    }
    let y = DVector::from_column_slice(data.y());

    let mut theta = DVector::zeros(dim);
    theta[0] = intercept_init(link, data.y()).clamp(-c, c);

    let eval_obj = |theta: &DVector<f64>| -> f64 {
        let eta = &design * theta;
        let mut acc = 0.0;
        for i in 0..n {
            let r = y[i] - link.f(eta[i]);
            acc += r * r;
        }
        acc / n as f64
    };

    let mut obj = eval_obj(&theta);
    if !obj.is_finite() {
        return Err(FirstStageError::NonFiniteObjective);
    }

    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..config.max_iterations {
        iterations += 1;
        let eta = &design * &theta;

        // Gradient of S and the Gauss-Newton normal matrix.
        let mut grad = DVector::zeros(dim);
        let mut normal = DMatrix::zeros(dim, dim);
        for i in 0..n {
            let fp = link.fp(eta[i]);
            let r = y[i] - link.f(eta[i]);
            let row = design.row(i);
            for a in 0..dim {
                grad[a] += -2.0 * r * fp * row[a] / n as f64;
                for b in a..dim {
                    normal[(a, b)] += 2.0 * fp * fp * row[a] * row[b] / n as f64;
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                normal[(a, b)] = normal[(b, a)];
            }
        }

        if projected_gradient_norm(&theta, &grad, c) <= config.gradient_tolerance {
            converged = true;
            break;
        }

        let delta = solve_damped(&normal, &grad)?;

        // Armijo backtracking with projection onto the box.
        let descent = grad.dot(&delta); // negative along -delta
        let mut accepted = false;
        let mut alpha = 1.0;
        let mut new_theta = theta.clone();
        let mut new_obj = obj;
        for _ in 0..60 {
            let mut cand = &theta - alpha * &delta;
            for v in cand.iter_mut() {
                *v = v.clamp(-c, c);
            }
            let cand_obj = eval_obj(&cand);
            if !cand_obj.is_finite() {
                return Err(FirstStageError::NonFiniteObjective);
            }
            if cand_obj <= obj + 1e-4 * alpha * descent || cand_obj < obj {
                new_theta = cand;
                new_obj = cand_obj;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }

        let step = (&new_theta - &theta).norm();
        let rel_step = step / theta.norm().max(1.0);
        theta = new_theta;
        obj = new_obj;
        if rel_step <= config.step_tolerance {
            break;
        }
    }

    // Final convergence check so a last full step still counts.
    if !converged {
        let eta = &design * &theta;
        let mut grad = DVector::zeros(dim);
        for i in 0..n {
            let fp = link.fp(eta[i]);
            let r = y[i] - link.f(eta[i]);
            for a in 0..dim {
                grad[a] += -2.0 * r * fp * design[(i, a)] / n as f64;
            }
        }
        converged = projected_gradient_norm(&theta, &grad, c) <= config.gradient_tolerance;
    }

    Ok(FirstStageFit {
        theta: theta.iter().cloned().collect(),
        converged,
        objective: obj,
        iterations,
    })
}

/// Conditioning diagnostic: `Q̂ = n^{-1} Σ_i Z_i Z_i'` with
/// `Z_i = F'[P(X_i)'θ̂] P(X_i)`, plus its smallest eigenvalue.
pub fn q_hat_diagnostic(
    fit: &FirstStageFit,
    data: &Dataset,
    basis: &ModelBasis,
    link: &Link,
) -> (DMatrix<f64>, f64) {
    let n = data.n();
    let dim = basis.dim();
    let mut q = DMatrix::zeros(dim, dim);
    for i in 0..n {
        let p = basis.regressor(data.row(i)).expect("data on the cube");
        let eta: f64 = p.iter().zip(&fit.theta).map(|(a, b)| a * b).sum();
        let fp = link.fp(eta);
        for a in 0..dim {
            for b in a..dim {
                q[(a, b)] += fp * fp * p[a] * p[b] / n as f64;
            }
        }
    }
    for a in 0..dim {
        for b in 0..a {
            q[(a, b)] = q[(b, a)];
        }
    }
    let eig = q.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    (q, min_eig)
}

/// Initial intercept: solves `F(μ) = Ȳ` by bisection when `F` is increasing
/// and `Ȳ` is attained on `[-30, 30]`, otherwise 0.
fn intercept_init(link: &Link, y: &[f64]) -> f64 {
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let (mut lo, mut hi) = (-30.0, 30.0);
    let (flo, fhi) = (link.f(lo), link.f(hi));
    if !(fhi > flo) || ybar <= flo || ybar >= fhi {
        return 0.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if link.f(mid) < ybar {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Max-norm of the gradient with components pointing out of the active box
/// faces zeroed.
fn projected_gradient_norm(theta: &DVector<f64>, grad: &DVector<f64>, c: f64) -> f64 {
    theta
        .iter()
        .zip(grad.iter())
        .map(|(&t, &g)| {
            let blocked = (t >= c && g < 0.0) || (t <= -c && g > 0.0);
            if blocked {
                0.0
            } else {
                g.abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Solves `A δ = g`, adding Levenberg damping when `A` is near singular.
fn solve_damped(a: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>, FirstStageError> {
    let dim = a.nrows();
    let eig = a.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut lambda = if min_eig < 1e-10 {
        (1e-10 - min_eig).max(1e-8 * a.trace() / dim as f64)
    } else {
        0.0
    };
    for _ in 0..40 {
        let mut damped = a.clone();
        for i in 0..dim {
            damped[(i, i)] += lambda;
        }
        if let Some(chol) = damped.cholesky() {
            return Ok(chol.solve(g));
        }
        lambda = (lambda * 10.0).max(1e-10);
    }
    Err(FirstStageError::SingularNormalEquations)
}
