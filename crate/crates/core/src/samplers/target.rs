use crate::scalar::Scalar;

/// Per-coordinate support of a target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound<S> {
    Free,
    /// Open interval `(lo, hi)`.
    Interval(S, S),
}

/// Unnormalized log-density with gradient.
///
/// Implementations return `-inf` (or any non-finite value) outside their support.
pub trait UnnormalizedTarget<S: Scalar>: Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &[S]) -> S;

    /// Log-density at `x`, gradient written into `grad`.
    fn log_density_and_grad(&self, x: &[S], grad: &mut [S]) -> S;

    /// Box support, if any coordinate is constrained.
    fn support(&self) -> Option<&[Bound<S>]> {
        None
    }
}

impl<S: Scalar, T: UnnormalizedTarget<S> + ?Sized> UnnormalizedTarget<S> for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn log_density(&self, x: &[S]) -> S {
        (**self).log_density(x)
    }

    fn log_density_and_grad(&self, x: &[S], grad: &mut [S]) -> S {
        (**self).log_density_and_grad(x, grad)
    }

    fn support(&self) -> Option<&[Bound<S>]> {
        (**self).support()
    }
}

/// Target given by a closure returning the log-density and filling the gradient.
pub struct FnTarget<F> {
    dim: usize,
    f: F,
}

impl<F> FnTarget<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnTarget { dim, f }
    }
}

impl<S: Scalar, F: Fn(&[S], &mut [S]) -> S + Sync> UnnormalizedTarget<S> for FnTarget<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[S]) -> S {
        let mut g = vec![S::zero(); self.dim];
        (self.f)(x, &mut g)
    }

    fn log_density_and_grad(&self, x: &[S], grad: &mut [S]) -> S {
        (self.f)(x, grad)
    }
}

/// Wraps a target with its support so that it reports [`UnnormalizedTarget::support`].
pub struct Supported<T, S> {
    inner: T,
    bounds: Vec<Bound<S>>,
}

impl<T, S> Supported<T, S> {
    pub fn new(inner: T, bounds: Vec<Bound<S>>) -> Self {
        Supported { inner, bounds }
    }
}

impl<S: Scalar, T: UnnormalizedTarget<S>> UnnormalizedTarget<S> for Supported<T, S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_density(&self, x: &[S]) -> S {
        self.inner.log_density(x)
    }

    fn log_density_and_grad(&self, x: &[S], grad: &mut [S]) -> S {
        self.inner.log_density_and_grad(x, grad)
    }

    fn support(&self) -> Option<&[Bound<S>]> {
        Some(&self.bounds)
    }
}

/// Logit reparameterization of box-constrained coordinates.
///
/// Coordinate `x = lo + (hi - lo) * sigmoid(u)`; the density in `u` space
/// includes the log-Jacobian `log((hi - lo) s (1 - s))`.
#[derive(Debug, Clone)]
pub struct BoxTransform<S> {
    bounds: Vec<Bound<S>>,
}

impl<S: Scalar> BoxTransform<S> {
    pub fn new(bounds: &[Bound<S>]) -> Self {
        BoxTransform { bounds: bounds.to_vec() }
    }

    /// Identity transform of dimension `dim`.
    pub fn identity(dim: usize) -> Self {
        BoxTransform { bounds: vec![Bound::Free; dim] }
    }

    pub fn for_target<T: UnnormalizedTarget<S> + ?Sized>(target: &T) -> Self {
        match target.support() {
            Some(b) => Self::new(b),
            None => Self::identity(target.dim()),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.bounds.iter().all(|b| matches!(b, Bound::Free))
    }

    /// Maps a point of the support to unconstrained space. Points on or
    /// beyond the boundary are pulled just inside.
    pub fn to_unconstrained(&self, x: &[S]) -> Vec<S> {
        let eps = S::of(1e-12);
        x.iter()
            .zip(&self.bounds)
            .map(|(&xi, b)| match *b {
                Bound::Free => xi,
                Bound::Interval(lo, hi) => {
                    let p = ((xi - lo) / (hi - lo)).max(eps).min(S::one() - eps);
                    (p / (S::one() - p)).ln()
                }
            })
            .collect()
    }

    pub fn to_constrained(&self, u: &[S]) -> Vec<S> {
        u.iter()
            .zip(&self.bounds)
            .map(|(&ui, b)| match *b {
                Bound::Free => ui,
                Bound::Interval(lo, hi) => lo + (hi - lo) * ui.sigmoid(),
            })
            .collect()
    }

    /// Log-Jacobian of `u -> x`, and its gradient in `u` written into `grad`.
    fn log_jacobian(&self, u: &[S], grad: &mut [S]) -> S {
        let mut total = S::zero();
        for ((&ui, b), g) in u.iter().zip(&self.bounds).zip(grad.iter_mut()) {
            match *b {
                Bound::Free => *g = S::zero(),
                Bound::Interval(lo, hi) => {
                    let s = ui.sigmoid();
                    // log s (1 - s) = -softplus(-u) - softplus(u), stable for large |u|
                    let a = ui.abs();
                    let log_s1s = -a - S::two() * (S::one() + (-a).exp()).ln();
                    total += (hi - lo).ln() + log_s1s;
                    *g = S::one() - S::two() * s;
                }
            }
        }
        total
    }

    /// Scaling `dx/du` per coordinate.
    fn dx_du(&self, u: &[S], out: &mut [S]) {
        for ((&ui, b), o) in u.iter().zip(&self.bounds).zip(out.iter_mut()) {
            *o = match *b {
                Bound::Free => S::one(),
                Bound::Interval(lo, hi) => {
                    let s = ui.sigmoid();
                    (hi - lo) * s * (S::one() - s)
                }
            };
        }
    }
}

/// A target viewed in unconstrained coordinates.
pub struct Unconstrained<'a, S, T: ?Sized> {
    target: &'a T,
    transform: BoxTransform<S>,
}

impl<'a, S: Scalar, T: UnnormalizedTarget<S> + ?Sized> Unconstrained<'a, S, T> {
    pub fn new(target: &'a T) -> Self {
        Unconstrained { target, transform: BoxTransform::for_target(target) }
    }

    pub fn transform(&self) -> &BoxTransform<S> {
        &self.transform
    }
}

impl<S: Scalar, T: UnnormalizedTarget<S> + ?Sized> UnnormalizedTarget<S> for Unconstrained<'_, S, T> {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn log_density(&self, u: &[S]) -> S {
        if self.transform.is_identity() {
            return self.target.log_density(u);
        }
        let x = self.transform.to_constrained(u);
        let mut scratch = vec![S::zero(); u.len()];
        self.target.log_density(&x) + self.transform.log_jacobian(u, &mut scratch)
    }

    fn log_density_and_grad(&self, u: &[S], grad: &mut [S]) -> S {
        if self.transform.is_identity() {
            return self.target.log_density_and_grad(u, grad);
        }
        let x = self.transform.to_constrained(u);
        let lp = self.target.log_density_and_grad(&x, grad);
        let mut scale = vec![S::zero(); u.len()];
        self.transform.dx_du(u, &mut scale);
        let mut jac_grad = vec![S::zero(); u.len()];
        let lj = self.transform.log_jacobian(u, &mut jac_grad);
        for i in 0..u.len() {
            grad[i] = grad[i] * scale[i] + jac_grad[i];
        }
        lp + lj
    }
}

/// Central finite-difference check of a target's gradient at `x`.
/// Returns the maximum relative error over coordinates.
pub fn gradient_check<S: Scalar, T: UnnormalizedTarget<S> + ?Sized>(target: &T, x: &[S], h: S) -> S {
    let mut g = vec![S::zero(); x.len()];
    target.log_density_and_grad(x, &mut g);
    let mut worst = S::zero();
    for i in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        let fd = (target.log_density(&xp) - target.log_density(&xm)) / (S::two() * h);
        let err = (g[i] - fd).abs() / fd.abs().max(S::one());
        worst = worst.max(err);
    }
    worst
}
