//! Dense kernels, seeded randomness, Adam and the finite-difference checker.

mod adam;
mod gradcheck;
mod ops;
mod rng;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{finite_difference_gradient, relative_error};
pub use ops::{dense_affine, layer_norm, softmax, softmax_cross_entropy, Activation, LnCache};
pub(crate) use ops::{layer_norm_bwd, layer_norm_fwd};
pub use rng::{derive_seed, splitmix64, Rng};
pub use tensor::{add_assign, affine_row, outer_acc, vec_mat_acc, vec_mat_t, Tensor2};

/// Logistic sigmoid.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
