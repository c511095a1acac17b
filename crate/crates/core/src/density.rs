/// Anything that can be evaluated as a density on `R^d`.
///
/// Callers are responsible for passing points of length [`Density::dim`];
/// implementations only check this in debug builds.
pub trait Density: Sync {
    fn dim(&self) -> usize;
    fn density(&self, x: &[f64]) -> f64;
}

impl<D: Density + ?Sized> Density for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn density(&self, x: &[f64]) -> f64 {
        (**self).density(x)
    }
}

/// Adapts a closure into a [`Density`].
pub struct FnDensity<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnDensity<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Density for FnDensity<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn density(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}
