use crate::scalar::Scalar;

/// A bundle of trainable arrays visited in a fixed declared order.
///
/// Gradients use the same type as the parameters they belong to, so
/// optimizers and checkpoints only need this view.
pub trait Parameters<T: Scalar>: Clone + Send + Sync {
    fn slices(&self) -> Vec<&[T]>;

    fn slices_mut(&mut self) -> Vec<&mut [T]>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.slices_mut() {
            s.fill(T::zero());
        }
        z
    }

    fn n_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    fn add_assign(&mut self, other: &Self) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + s;
            }
        }
    }

    fn scale(&mut self, alpha: T) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v = *v * alpha);
        }
    }

    fn flatten(&self) -> Vec<T> {
        self.slices().concat()
    }

    /// Overwrites every entry from `values` in declared order.
    fn assign_flat(&mut self, values: &[T]) -> bool {
        if values.len() != self.n_params() {
            return false;
        }
        let mut k = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&values[k..k + s.len()]);
            k += s.len();
        }
        true
    }

    fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}
