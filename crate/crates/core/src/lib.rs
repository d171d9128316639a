//! Multi-factor Schatten-p norm surrogates for low-rank matrix recovery.
//!
//! For any `p, p_1, ..., p_I > 0` with `1/p = sum 1/p_i`, the scaled Schatten
//! quasi-norm `(1/p) ||X||_{S_p}^p` equals the minimum of
//! `sum (1/p_i) ||X_i||_{S_{p_i}}^{p_i}` over all factorizations `X = X_1 ... X_I`.
//! Choosing every `p_i >= 1` makes each factor penalty convex; choosing every
//! `p_i > 1` makes each one smooth.
//!
//! The crate provides:
//!
//! - [`spectra`]: thin SVD, Schatten norms, the smooth-norm gradient and spectral norms.
//! - [`prox`]: scalar and matrix proximal maps of `(lambda/p) ||.||_{S_p}^p` for every `p > 0`.
//! - [`surrogate`]: exponent partitions, optimal factor chains and bound checks.
//! - [`completion`]: the masked completion objective, block gradients and Lipschitz bounds.
//! - [`palm`]: the accelerated proximal alternating linearized minimization solver.
//! - [`data`]: synthetic instances, triplet rating files and train/test splits.
//! - [`experiment`]: the `synthetic`, `complete` and `verify` drivers behind the CLI.
//!
//! ```
//! use multischatten::prelude::*;
//!
//! let instance = generate_synthetic(40, 40, 2, 0.0, 0.5, 7).unwrap();
//! let spec = make_partition(Rational::new(1, 2), PartitionMode::AllConvex).unwrap();
//! let config = SolverConfig { lambda: 1.0, d: 4, ..SolverConfig::default() };
//! let (chain, _trace) = solve(&instance.observed, &spec, &config).unwrap();
//! assert!(rsre(&chain.product(), &instance.truth).unwrap() < 0.1);
//! ```

pub mod completion;
pub mod data;
pub mod error;
pub mod experiment;
pub mod palm;
pub mod prox;
pub mod spectra;
pub mod surrogate;

pub use error::{Error, Result};

/// Exact rational exponents.
pub type Rational = num_rational::Ratio<i64>;

pub mod prelude {
    pub use crate::completion::{
        block_gradient, block_lipschitz, objective, rmse, rsre, MaskedMatrix, Observation,
        PrefixSuffixCache,
    };
    pub use crate::data::{generate_synthetic, load_triplets, split_train_test, SyntheticInstance};
    pub use crate::palm::{solve, Continuation, ShuffleMode, SolveTrace, SolverConfig};
    pub use crate::prox::{matrix_prox, scalar_prox};
    pub use crate::spectra::{schatten_grad, schatten_norm_pow, spectral_norm, thin_svd, DenseMatrix};
    pub use crate::surrogate::{
        check_surrogate_bound, make_partition, optimal_factors, surrogate_value, FactorChain,
        PartitionMode, PartitionSpec,
    };
    pub use crate::{Error, Rational, Result};
}
