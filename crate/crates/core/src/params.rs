use crate::Real;

/// Uniform access to the learnable tensors of a layer or model.
///
/// Gradient accumulators are values of the same type, so optimisers and
/// finite-difference checks walk parameters and gradients in lock step.
pub trait Parameters<T: Real> {
    fn slices(&self) -> Vec<&[T]>;
    fn slices_mut(&mut self) -> Vec<&mut [T]>;

    fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Same shape, every entry zero.
    fn zeroed(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        for s in z.slices_mut() {
            s.fill(T::zero());
        }
        z
    }

    /// `self -= lr * grad`, entry by entry.
    fn sgd_step(&mut self, grad: &Self, lr: T) {
        for (p, g) in self.slices_mut().into_iter().zip(grad.slices()) {
            for (pv, gv) in p.iter_mut().zip(g) {
                *pv -= lr * *gv;
            }
        }
    }

    /// `self += other`, entry by entry.
    fn accumulate(&mut self, other: &Self) {
        for (p, g) in self.slices_mut().into_iter().zip(other.slices()) {
            for (pv, gv) in p.iter_mut().zip(g) {
                *pv += *gv;
            }
        }
    }
}
