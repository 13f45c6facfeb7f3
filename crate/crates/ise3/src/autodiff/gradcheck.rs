//! Finite-difference utilities shared by tests and the verification CLI.

use crate::tensor::Tensor;

/// Central-difference gradient of a scalar function of several tensors,
/// perturbing one input at a time.
pub fn central_diff_gradient(
    f: &mut dyn FnMut(&[Tensor]) -> f64,
    inputs: &[Tensor],
    which: usize,
    h: f64,
) -> Tensor {
    let mut grad = Tensor::zeros(inputs[which].shape());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for i in 0..inputs[which].len() {
        let orig = inputs[which].data()[i];
        work[which].data_mut()[i] = orig + h;
        let fp = f(&work);
        work[which].data_mut()[i] = orig - h;
        let fm = f(&work);
        work[which].data_mut()[i] = orig;
        grad.data_mut()[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Normalized worst-case deviation between two gradients:
/// max|a - b| / max(max|a|, max|b|, floor).
pub fn max_rel_err(analytic: &Tensor, fd: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), fd.shape());
    let num = analytic
        .data()
        .iter()
        .zip(fd.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let den = analytic
        .data()
        .iter()
        .chain(fd.data())
        .map(|x| x.abs())
        .fold(1e-4f64, f64::max);
    num / den
}
