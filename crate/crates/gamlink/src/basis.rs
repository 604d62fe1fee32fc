//! Zero-mean orthonormal bases on `[-1, 1]` and the stacked regressor vector.
//!
//! Every basis family satisfies, under the configured quadrature rule,
//!
//! - `∫ p_k(v) dv = 0` and
//! - `∫ p_j(v) p_k(v) dv = δ_jk`,
//!
//! so any fitted component `Σ_k θ_k p_k` automatically integrates to zero,
//! which pins down the location normalization of the additive components.
//!
//! Two families are provided: cubic B-splines on a uniform knot grid with the
//! constant projected out and the remainder Gram-Schmidt orthonormalized, and
//! shifted-Legendre polynomials (degree-k orthonormal polynomials with the
//! constant excluded) which admit closed-form test oracles.

use thiserror::Error;

use crate::quad::{legendre, GaussLegendre};

/// Residual-norm floor below which a candidate direction is treated as
/// linearly dependent during Gram-Schmidt.
const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("series length kappa must be at least 1")]
    InvalidKappa,
    #[error("quadrature order must be at least 1")]
    InvalidQuadratureOrder,
    #[error(
        "orthonormalization is rank deficient: extracted {extracted} of {requested} functions \
         (kappa too large for {knots} knots)"
    )]
    RankDeficient {
        requested: usize,
        extracted: usize,
        knots: usize,
    },
    #[error("basis index {k} out of range 1..={kappa}")]
    IndexOutOfRange { k: usize, kappa: usize },
    #[error("evaluation point {v} outside [-1, 1]")]
    PointOutOfRange { v: f64 },
}

/// Available basis families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisFamily {
    /// Cubic B-splines, centered and orthonormalized.
    OrthonormalizedBspline,
    /// Orthonormal Legendre polynomials of degree 1..=kappa.
    LegendreShifted,
}

impl std::str::FromStr for BasisFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "orthonormalized-bspline" | "bspline" => Ok(Self::OrthonormalizedBspline),
            "legendre-shifted" | "legendre" => Ok(Self::LegendreShifted),
            other => Err(format!("unknown basis family '{other}'")),
        }
    }
}

/// Specification of a per-coordinate basis.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BasisSpec {
    pub family: BasisFamily,
    /// Per-coordinate series length.
    pub kappa: usize,
    /// Order of the Gauss-Legendre rule used for construction and checks.
    pub quadrature_order: usize,
}

impl BasisSpec {
    pub fn new(family: BasisFamily, kappa: usize) -> Self {
        Self {
            family,
            kappa,
            quadrature_order: 64,
        }
    }
}

#[derive(Debug, Clone)]
enum Repr {
    Legendre,
    Bspline {
        /// Uniform breakpoints over [-1, 1] (clamped cubic knot grid).
        breaks: Vec<f64>,
        /// Row k: coefficients of p_{k+1} over the raw B-splines.
        coeffs: Vec<Vec<f64>>,
        /// Constant offset of p_{k+1} (from projecting out the constant).
        offsets: Vec<f64>,
    },
}

/// An orthonormal zero-mean basis on `[-1, 1]`.
///
/// Immutable after construction; shared freely across threads.
#[derive(Debug, Clone)]
pub struct Basis {
    spec: BasisSpec,
    repr: Repr,
}

impl Basis {
    /// Builds the basis for `spec`. Deterministic: the same spec always
    /// yields bit-identical coefficient tables.
    pub fn build(spec: BasisSpec) -> Result<Self, BasisError> {
        if spec.kappa == 0 {
            return Err(BasisError::InvalidKappa);
        }
        if spec.quadrature_order == 0 {
            return Err(BasisError::InvalidQuadratureOrder);
        }
        let repr = match spec.family {
            BasisFamily::LegendreShifted => Repr::Legendre,
            BasisFamily::OrthonormalizedBspline => build_bspline_repr(&spec)?,
        };
        Ok(Self { spec, repr })
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn kappa(&self) -> usize {
        self.spec.kappa
    }

    /// Evaluates `p_k(v)` for `1 <= k <= kappa`, `|v| <= 1`.
    pub fn eval_pk(&self, k: usize, v: f64) -> Result<f64, BasisError> {
        if k == 0 || k > self.spec.kappa {
            return Err(BasisError::IndexOutOfRange {
                k,
                kappa: self.spec.kappa,
            });
        }
        if !(-1.0..=1.0).contains(&v) {
            return Err(BasisError::PointOutOfRange { v });
        }
        Ok(self.eval_unchecked(k, v))
    }

    /// Evaluates `[p_1(v), ..., p_kappa(v)]`.
    pub fn eval_all(&self, v: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.spec.kappa];
        self.eval_all_into(v, &mut out);
        out
    }

    fn eval_all_into(&self, v: f64, out: &mut [f64]) {
        match &self.repr {
            Repr::Legendre => {
                // p_k = sqrt((2k+1)/2) P_k, via the three-term recurrence.
                let mut p0 = 1.0;
                let mut p1 = v;
                for (k, slot) in out.iter_mut().enumerate().take(self.spec.kappa) {
                    let deg = k + 1;
                    if deg >= 2 {
                        let kf = deg as f64;
                        let p2 = ((2.0 * kf - 1.0) * v * p1 - (kf - 1.0) * p0) / kf;
                        p0 = p1;
                        p1 = p2;
                    }
                    *slot = ((2.0 * deg as f64 + 1.0) / 2.0).sqrt() * p1;
                }
            }
            Repr::Bspline {
                breaks,
                coeffs,
                offsets,
            } => {
                let b = eval_cubic_bsplines(breaks, v);
                for (k, slot) in out.iter_mut().enumerate().take(self.spec.kappa) {
                    let mut s = offsets[k];
                    for (c, bv) in coeffs[k].iter().zip(&b) {
                        s += c * bv;
                    }
                    *slot = s;
                }
            }
        }
    }

    fn eval_unchecked(&self, k: usize, v: f64) -> f64 {
        match &self.repr {
            Repr::Legendre => ((2.0 * k as f64 + 1.0) / 2.0).sqrt() * legendre(k, v),
            Repr::Bspline {
                breaks,
                coeffs,
                offsets,
            } => {
                let b = eval_cubic_bsplines(breaks, v);
                let mut s = offsets[k - 1];
                for (c, bv) in coeffs[k - 1].iter().zip(&b) {
                    s += c * bv;
                }
                s
            }
        }
    }

    /// Max-abs deviation of the Gram matrix from the identity and of the
    /// means from zero, under the configured quadrature rule.
    pub fn gram_defect(&self) -> f64 {
        let q = GaussLegendre::new(self.spec.quadrature_order);
        let kappa = self.spec.kappa;
        let evals: Vec<Vec<f64>> = q.nodes.iter().map(|&v| self.eval_all(v)).collect();
        let mut defect: f64 = 0.0;
        for j in 0..kappa {
            let mean: f64 = q
                .weights
                .iter()
                .zip(&evals)
                .map(|(&w, e)| w * e[j])
                .sum();
            defect = defect.max(mean.abs());
            for k in j..kappa {
                let ip: f64 = q
                    .weights
                    .iter()
                    .zip(&evals)
                    .map(|(&w, e)| w * e[j] * e[k])
                    .sum();
                let target = if j == k { 1.0 } else { 0.0 };
                defect = defect.max((ip - target).abs());
            }
        }
        defect
    }
}

/// Number of uniform breakpoints used for the cubic B-spline family.
fn bspline_break_count(kappa: usize) -> usize {
    (kappa + 4).max(8)
}

fn build_bspline_repr(spec: &BasisSpec) -> Result<Repr, BasisError> {
    let n_breaks = bspline_break_count(spec.kappa);
    let breaks: Vec<f64> = (0..n_breaks)
        .map(|i| -1.0 + 2.0 * i as f64 / (n_breaks - 1) as f64)
        .collect();
    let m = n_breaks + 2; // clamped cubic spline dimension

    let q = GaussLegendre::new(spec.quadrature_order);
    let nq = q.nodes.len();

    // Raw B-spline values at the quadrature nodes, rows indexed by spline.
    let mut raw = vec![vec![0.0; nq]; m];
    for (qi, &v) in q.nodes.iter().enumerate() {
        let b = eval_cubic_bsplines(&breaks, v);
        for (row, &bv) in raw.iter_mut().zip(&b) {
            row[qi] = bv;
        }
    }

    let dot = |a: &[f64], b: &[f64]| -> f64 {
        q.weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(&w, (&x, &y))| w * x * y)
            .sum()
    };

    // Seed candidates are global splines: the j-th seed has coefficient
    // `P_j(greville_i)` on the i-th raw B-spline, where the Greville
    // abscissae are the knot averages. This gives a hierarchy of
    // increasingly oscillating functions spanning the whole spline space
    // (the degree-one seed reproduces `v` exactly), unlike the raw
    // B-splines themselves, which are supported on a few subintervals.
    let knots = clamped_knots(&breaks);
    let greville: Vec<f64> = (0..m)
        .map(|i| (knots[i + 1] + knots[i + 2] + knots[i + 3]) / 3.0)
        .collect();

    // Center each candidate (project out the constant), then modified
    // Gram-Schmidt with one reorthogonalization pass, tracking coefficients
    // over the raw splines plus a scalar offset.
    let mut coeffs: Vec<Vec<f64>> = Vec::with_capacity(spec.kappa);
    let mut offsets: Vec<f64> = Vec::with_capacity(spec.kappa);
    let mut basis_vals: Vec<Vec<f64>> = Vec::with_capacity(spec.kappa);

    for j in 0..m {
        if coeffs.len() == spec.kappa {
            break;
        }
        let mut coef: Vec<f64> = greville.iter().map(|&g| legendre(j, g)).collect();
        let mut vals: Vec<f64> = (0..nq)
            .map(|qi| coef.iter().zip(&raw).map(|(&c, row)| c * row[qi]).sum())
            .collect();
        let mean: f64 = q.weights.iter().zip(&vals).map(|(&w, &x)| w * x).sum();
        let mut offset = -mean / 2.0;
        for x in vals.iter_mut() {
            *x += offset;
        }
        let initial_norm = dot(&vals, &vals).sqrt();

        for _pass in 0..2 {
            for (pk_vals, (pk_coef, pk_off)) in basis_vals
                .iter()
                .zip(coeffs.iter().zip(&offsets))
            {
                let proj = dot(&vals, pk_vals);
                for (v, pv) in vals.iter_mut().zip(pk_vals) {
                    *v -= proj * pv;
                }
                for (c, pc) in coef.iter_mut().zip(pk_coef) {
                    *c -= proj * pc;
                }
                offset -= proj * pk_off;
            }
        }

        let norm = dot(&vals, &vals).sqrt();
        if norm < RANK_TOL * initial_norm.max(1.0) {
            continue;
        }
        for v in vals.iter_mut() {
            *v /= norm;
        }
        for c in coef.iter_mut() {
            *c /= norm;
        }
        offset /= norm;

        basis_vals.push(vals);
        coeffs.push(coef);
        offsets.push(offset);
    }

    if coeffs.len() < spec.kappa {
        return Err(BasisError::RankDeficient {
            requested: spec.kappa,
            extracted: coeffs.len(),
            knots: n_breaks,
        });
    }

    Ok(Repr::Bspline {
        breaks,
        coeffs,
        offsets,
    })
}

/// Clamped cubic knot vector: breakpoints with each endpoint repeated
/// three extra times.
fn clamped_knots(breaks: &[f64]) -> Vec<f64> {
    const DEG: usize = 3;
    let nb = breaks.len();
    let mut knots = Vec::with_capacity(nb + 2 * DEG);
    for _ in 0..DEG {
        knots.push(breaks[0]);
    }
    knots.extend_from_slice(breaks);
    for _ in 0..DEG {
        knots.push(breaks[nb - 1]);
    }
    knots
}

/// Values of all clamped cubic B-splines on the given breakpoints at `v`.
///
/// Cox-de Boor over the knot vector with both endpoints repeated four times;
/// dimension is `breaks.len() + 2`.
fn eval_cubic_bsplines(breaks: &[f64], v: f64) -> Vec<f64> {
    const DEG: usize = 3;
    let nb = breaks.len();
    let m = nb + 2;
    let knots = clamped_knots(breaks);

    let v = v.clamp(breaks[0], breaks[nb - 1]);
    // Knot span index: largest i with knots[i] <= v < knots[i+1].
    let last = knots.len() - DEG - 2;
    let mut span = DEG;
    while span < last && v >= knots[span + 1] {
        span += 1;
    }

    // de Boor triangle for the DEG+1 nonzero splines on this span.
    let mut nvals = [0.0; DEG + 1];
    nvals[0] = 1.0;
    let mut left = [0.0; DEG + 1];
    let mut right = [0.0; DEG + 1];
    for j in 1..=DEG {
        left[j] = v - knots[span + 1 - j];
        right[j] = knots[span + j] - v;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom != 0.0 { nvals[r] / denom } else { 0.0 };
            nvals[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        nvals[j] = saved;
    }

    let mut out = vec![0.0; m];
    for (r, &nv) in nvals.iter().enumerate() {
        let idx = span - DEG + r;
        if idx < m {
            out[idx] = nv;
        }
    }
    out
}

/// Per-coordinate bases plus the stacked-regressor layout
/// `[1, p_1(x^1), ..., p_{κ_1}(x^1), ..., p_1(x^d), ..., p_{κ_d}(x^d)]`.
///
/// Series lengths may differ across coordinates; the total design dimension
/// is `1 + Σ_j κ_j`.
#[derive(Debug, Clone)]
pub struct ModelBasis {
    coords: Vec<Basis>,
}

impl ModelBasis {
    /// One basis per coordinate, with possibly different series lengths.
    pub fn new(
        family: BasisFamily,
        kappas: &[usize],
        quadrature_order: usize,
    ) -> Result<Self, BasisError> {
        let coords = kappas
            .iter()
            .map(|&k| {
                Basis::build(BasisSpec {
                    family,
                    kappa: k,
                    quadrature_order,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { coords })
    }

    /// Uniform series length across all `d` coordinates.
    pub fn uniform(family: BasisFamily, kappa: usize, d: usize) -> Result<Self, BasisError> {
        Self::new(family, &vec![kappa; d], 64)
    }

    pub fn from_bases(coords: Vec<Basis>) -> Self {
        Self { coords }
    }

    /// Number of coordinates.
    pub fn d(&self) -> usize {
        self.coords.len()
    }

    /// Total design dimension `1 + Σ_j κ_j`.
    pub fn dim(&self) -> usize {
        1 + self.coords.iter().map(|b| b.kappa()).sum::<usize>()
    }

    pub fn coord(&self, j: usize) -> &Basis {
        &self.coords[j]
    }

    pub fn kappas(&self) -> Vec<usize> {
        self.coords.iter().map(|b| b.kappa()).collect()
    }

    /// Index range of coordinate `j`'s coefficient block within the stacked
    /// coefficient vector (index 0 is the intercept).
    pub fn block_range(&self, j: usize) -> std::ops::Range<usize> {
        let start = 1 + self.coords[..j].iter().map(|b| b.kappa()).sum::<usize>();
        start..start + self.coords[j].kappa()
    }

    /// The stacked regressor vector at `x`; first element is exactly 1.
    pub fn regressor(&self, x: &[f64]) -> Result<Vec<f64>, BasisError> {
        assert_eq!(x.len(), self.d(), "point dimension mismatch");
        for &v in x {
            if !(-1.0..=1.0).contains(&v) {
                return Err(BasisError::PointOutOfRange { v });
            }
        }
        let mut out = Vec::with_capacity(self.dim());
        out.push(1.0);
        for (basis, &v) in self.coords.iter().zip(x) {
            let start = out.len();
            out.resize(start + basis.kappa(), 0.0);
            basis.eval_all_into(v, &mut out[start..]);
        }
        Ok(out)
    }

    /// Evaluates the `j`-th fitted component `Σ_k θ_{jk} p_k(v)` for the
    /// coefficient block belonging to coordinate `j`.
    pub fn eval_component(&self, j: usize, theta: &[f64], v: f64) -> f64 {
        let block = &theta[self.block_range(j)];
        let vals = self.coords[j].eval_all(v);
        block.iter().zip(&vals).map(|(&t, &p)| t * p).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand::Rng as _;
    use rand_chacha::ChaCha8Rng;

    fn legendre_basis(kappa: usize) -> Basis {
        Basis::build(BasisSpec::new(BasisFamily::LegendreShifted, kappa)).unwrap()
    }

    #[test]
    fn legendre_k1_is_scaled_identity() {
        let b = legendre_basis(1);
        assert_abs_diff_eq!(b.eval_pk(1, 0.0).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            b.eval_pk(1, 1.0).unwrap(),
            (1.5f64).sqrt(),
            epsilon = 1e-12
        );
        // Odd symmetry of the degree-1 function.
        assert_abs_diff_eq!(
            b.eval_pk(1, -1.0).unwrap(),
            -b.eval_pk(1, 1.0).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn legendre_k2_orthogonality() {
        let b = legendre_basis(2);
        let q = GaussLegendre::new(64);
        let int_p2 = q.integrate(|v| b.eval_pk(2, v).unwrap());
        let int_p1p2 = q.integrate(|v| b.eval_pk(1, v).unwrap() * b.eval_pk(2, v).unwrap());
        assert!(int_p2.abs() < 1e-10);
        assert!(int_p1p2.abs() < 1e-10);
    }

    #[test]
    fn bspline_gram_matrix_is_identity() {
        let b = Basis::build(BasisSpec::new(BasisFamily::OrthonormalizedBspline, 4)).unwrap();
        assert!(b.gram_defect() < 1e-8);
    }

    #[test]
    fn bspline_rank_deficiency_is_reported() {
        // A coarse 8-node rule cannot resolve 12 independent zero-mean
        // directions; the construction must fail cleanly instead of
        // returning a numerically dependent basis.
        let err = Basis::build(BasisSpec {
            family: BasisFamily::OrthonormalizedBspline,
            kappa: 12,
            quadrature_order: 8,
        });
        match err {
            Err(BasisError::RankDeficient { .. }) => {}
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn eval_pk_rejects_bad_inputs() {
        let b = legendre_basis(2);
        assert!(b.eval_pk(0, 0.0).is_err());
        assert!(b.eval_pk(3, 0.0).is_err());
        assert!(b.eval_pk(1, 1.5).is_err());
    }

    #[test]
    fn regressor_layout() {
        let mb = ModelBasis::uniform(BasisFamily::LegendreShifted, 1, 2).unwrap();
        let r = mb.regressor(&[0.0, 0.0]).unwrap();
        assert_eq!(r, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn regressor_matches_componentwise_eval() {
        let mb = ModelBasis::uniform(BasisFamily::LegendreShifted, 2, 1).unwrap();
        let v = 0.37;
        let r = mb.regressor(&[v]).unwrap();
        let b = mb.coord(0);
        assert_eq!(r.len(), 3);
        assert_abs_diff_eq!(r[1], b.eval_pk(1, v).unwrap(), epsilon = 1e-15);
        assert_abs_diff_eq!(r[2], b.eval_pk(2, v).unwrap(), epsilon = 1e-15);
    }

    /// Reconstruction oracle: `P(x)'θ` equals the direct double sum
    /// `θ_0 + Σ_j Σ_k θ_{jk} p_k(x^j)` at random points.
    #[test]
    fn regressor_dot_matches_double_sum_oracle() {
        let mb = ModelBasis::uniform(BasisFamily::OrthonormalizedBspline, 4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let theta: Vec<f64> = (0..mb.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        for _ in 0..100 {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let r = mb.regressor(&x).unwrap();
            let via_dot: f64 = r.iter().zip(&theta).map(|(a, b)| a * b).sum();
            let mut via_sum = theta[0];
            for j in 0..2 {
                for k in 1..=4 {
                    let idx = mb.block_range(j).start + k - 1;
                    via_sum += theta[idx] * mb.coord(j).eval_pk(k, x[j]).unwrap();
                }
            }
            assert_abs_diff_eq!(via_dot, via_sum, epsilon = 1e-12);
        }
    }

    #[test]
    fn per_coordinate_kappas() {
        let mb = ModelBasis::new(BasisFamily::OrthonormalizedBspline, &[4, 2], 64).unwrap();
        assert_eq!(mb.dim(), 7);
        assert_eq!(mb.block_range(0), 1..5);
        assert_eq!(mb.block_range(1), 5..7);
    }

    #[test]
    fn build_is_deterministic() {
        let spec = BasisSpec::new(BasisFamily::OrthonormalizedBspline, 4);
        let a = Basis::build(spec).unwrap();
        let b = Basis::build(spec).unwrap();
        for i in 0..200 {
            let v = -1.0 + 2.0 * i as f64 / 199.0;
            assert_eq!(a.eval_all(v), b.eval_all(v));
        }
    }

    proptest! {
        /// Any linear combination of basis functions integrates to zero
        /// under the configured quadrature.
        #[test]
        fn linear_combinations_have_zero_mean(
            c in proptest::collection::vec(-5.0f64..5.0, 4),
            family in prop_oneof![
                Just(BasisFamily::LegendreShifted),
                Just(BasisFamily::OrthonormalizedBspline)
            ],
        ) {
            let b = Basis::build(BasisSpec::new(family, 4)).unwrap();
            let q = GaussLegendre::new(64);
            let integral = q.integrate(|v| {
                b.eval_all(v).iter().zip(&c).map(|(&p, &ck)| ck * p).sum()
            });
            prop_assert!(integral.abs() < 1e-8);
        }
    }
}
