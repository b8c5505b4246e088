use crate::numeric::Tensor2;
use crate::scalar::Scalar;

/// Central-difference gradient of a scalar function of a tensor.
pub fn finite_difference_gradient<T, F>(mut f: F, x: &Tensor2<T>, h: T) -> Tensor2<T>
where
    T: Scalar,
    F: FnMut(&Tensor2<T>) -> T,
{
    let mut probe = x.clone();
    let mut grad = Tensor2::zeros(x.rows(), x.cols());
    let two_h = h + h;
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / two_h;
    }
    grad
}

/// `||a - b|| / max(||a||, ||b||, floor)`; the floor keeps all-zero gradients comparable.
pub fn relative_error<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt();
    let na = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    let nb = b.iter().map(|&x| x * x).sum::<T>().sqrt();
    diff / na.max(nb).max(T::lit(1e-8))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = Tensor2::row_vector(vec![3.0f64]);
        let g = finite_difference_gradient(|t| t.data()[0] * t.data()[0], &x, 1e-5);
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor2::row_vector(vec![1.0f64, -2.0, 7.5]);
        let g = finite_difference_gradient(|_| 4.2, &x, 1e-5);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor2::from_vec(2, 2, vec![0.1f64, -3.0, 9.0, 2.5]).unwrap();
        let g = finite_difference_gradient(|t| t.data().iter().sum(), &x, 1e-5);
        for &v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn relative_error_of_identical_is_zero() {
        assert_eq!(relative_error(&[1.0f64, 2.0], &[1.0, 2.0]), 0.0);
        assert!(relative_error(&[1.0f64, 0.0], &[0.0, 1.0]) > 1.0);
    }
}
