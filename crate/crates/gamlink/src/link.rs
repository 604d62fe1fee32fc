//! The known link function `F` together with its first two derivatives.

use std::fmt;
use std::sync::Arc;

/// Arguments are clamped to this half-width before evaluating the logistic
/// link so that `exp` cannot overflow. Irrelevant in the working range where
/// `F'` is bounded away from zero.
const LOGIT_CLAMP: f64 = 700.0;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A known link `F` with first derivative `fp` and second derivative `fpp`.
///
/// Immutable and cheaply cloneable; safe to share across worker threads.
#[derive(Clone)]
pub struct Link {
    name: String,
    f: ScalarFn,
    fp: ScalarFn,
    fpp: ScalarFn,
}

impl fmt::Debug for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Link").field("name", &self.name).finish()
    }
}

impl Link {
    /// Builds a link from user-supplied `(F, F', F'')`.
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        fp: impl Fn(f64) -> f64 + Send + Sync + 'static,
        fpp: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
            fp: Arc::new(fp),
            fpp: Arc::new(fpp),
        }
    }

    /// The logistic CDF link `F(v) = e^v / (1 + e^v)`.
    pub fn logit() -> Self {
        fn l(v: f64) -> f64 {
            let v = v.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
            1.0 / (1.0 + (-v).exp())
        }
        Self::new(
            "logit",
            l,
            |v| {
                let p = l(v);
                p * (1.0 - p)
            },
            |v| {
                let p = l(v);
                p * (1.0 - p) * (1.0 - 2.0 * p)
            },
        )
    }

    /// The identity link, reducing the model to the classical additive model.
    pub fn identity() -> Self {
        Self::new("identity", |v| v, |_| 1.0, |_| 0.0)
    }

    /// Looks a shipped link up by name.
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "logit" => Some(Self::logit()),
            "identity" => Some(Self::identity()),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `F(v)`.
    #[inline]
    pub fn f(&self, v: f64) -> f64 {
        (self.f)(v)
    }

    /// `F'(v)`.
    #[inline]
    pub fn fp(&self, v: f64) -> f64 {
        (self.fp)(v)
    }

    /// `F''(v)`.
    #[inline]
    pub fn fpp(&self, v: f64) -> f64 {
        (self.fpp)(v)
    }
}
