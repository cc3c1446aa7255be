//! Minimal 1D convolutional network engine in `f64` with explicit backward
//! passes. Layers cache what their backward pass needs during `forward`;
//! gradients accumulate into [`Param::grad`] until [`Module::zero_grad`].

mod adam;
mod conv;
mod layers;
mod tensor;

use rand::Rng;
use rand_distr::StandardNormal;

pub use adam::{Adam, AdamConfig};
pub use conv::Conv1d;
pub use layers::{Activation, ActivationKind, Affine, AvgPool1d, Gate, GlobalAvgPool, Linear, MaxPool1d};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(n: usize) -> Self {
        Self { value: vec![0.0; n], grad: vec![0.0; n] }
    }

    pub fn filled(n: usize, v: f64) -> Self {
        Self { value: vec![v; n], grad: vec![0.0; n] }
    }

    /// He-normal initialization, scaled by `gain`.
    pub fn kaiming<R: Rng + ?Sized>(n: usize, fan_in: usize, gain: f64, rng: &mut R) -> Self {
        let std = gain * (2.0 / fan_in as f64).sqrt();
        let value = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
        Self { value, grad: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Parameter traversal in a fixed order; optimizers and checkpoints rely on it.
pub trait Module {
    fn visit(&mut self, f: &mut dyn FnMut(&mut Param));

    fn zero_grad(&mut self) {
        self.visit(&mut |p| p.grad.fill(0.0));
    }

    fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.len());
        n
    }

    fn export_params(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.extend_from_slice(&p.value));
        out
    }

    fn import_params(&mut self, flat: &[f64]) -> Result<(), String> {
        let need = self.num_params();
        if flat.len() != need {
            return Err(format!("expected {need} parameters, found {}", flat.len()));
        }
        let mut at = 0;
        self.visit(&mut |p| {
            let n = p.len();
            p.value.copy_from_slice(&flat[at..at + n]);
            at += n;
        });
        Ok(())
    }
}

/// Row-major-by-strides `C = alpha A B + beta C`, `A: [m, k]`, `B: [k, n]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k > 0 {
        let last = |rs: isize, cs: isize, r: usize, cc: usize| (rs * (r as isize - 1) + cs * (cc as isize - 1)) as usize;
        assert!(a.len() > last(rsa, csa, m, k) && b.len() > last(rsb, csb, k, n));
    }
    // SAFETY: bounds of A, B and C checked above for the given strides.
    unsafe {
        matrixmultiply::dgemm(m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}
