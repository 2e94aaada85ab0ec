//! Rank-k modification of Cholesky factors.
//!
//! Given the upper-triangular factor L of a symmetric positive-definite
//! matrix A = LᵀL and an n×k matrix V, this crate computes the factor of
//! A + VVᵀ (update) or A − VVᵀ (downdate) in O(kn²) work via scaled
//! plane rotations, without refactorizing.
//!
//! Layers, bottom to top:
//!
//! * [`scalar`] — the `f32`/`f64` abstraction plus bit-level utilities
//!   (ulp distances, little-endian coding, CSV formatting).
//! * [`matrix`] — dense, packed-upper-triangular, and update-matrix
//!   containers.
//! * [`io`] — the CWM1 binary container and its CSV twin.
//! * [`kernel`] — the rotation primitives and the serial reference
//!   implementations (column-oriented, row-oriented, and rank-k), plus a
//!   plain Cholesky factorization for building inputs.
//! * [`panel`] — the panelled parallel executor: diagonal chunks run
//!   sequentially, off-diagonal panels fan out as rectangle tasks on a
//!   worker pool; produces bitwise-identical factors to the serial code
//!   together with byte-traffic and scratch accounting.
//! * [`harness`] — seeded instance generation, timed trials, and CSV
//!   sweeps for verification and benchmarking.
//! * [`cli`] — the `cholup` command-line front end.
//!
//! Everything except wall-clock timings is deterministic: a fixed seed
//! produces bitwise-identical factors, error figures, and counters for
//! every implementation and any worker count.
//!
//! ```
//! use cholup::{modify_rank_k, Sigma};
//! use cholup::kernel::OpCounts;
//! use cholup::matrix::{TriFactor, UpdateMat};
//!
//! // L = [[3,2],[.,3]] factors A = [[9,6],[6,13]]; update by V = (4,2)ᵀ.
//! let mut l = TriFactor::from_data(2, vec![3.0, 2.0, 3.0]).unwrap();
//! let mut v = UpdateMat::from_column(vec![4.0, 2.0]).unwrap();
//! let mut counts = OpCounts::default();
//! modify_rank_k(&mut l, &mut v, Sigma::Update, &mut counts).unwrap();
//! assert_eq!(l[(0, 0)], 5.0);
//! assert_eq!(l[(1, 1)], 9.16f64.sqrt());
//! assert_eq!(counts.computes, 2);
//! ```

pub mod cli;
pub mod harness;
pub mod io;
pub mod kernel;
pub mod matrix;
pub mod panel;
pub mod scalar;

pub use kernel::{modify_a, modify_b, modify_rank_k, Sigma};
pub use matrix::{DenseMat, TriFactor, UpdateMat};
pub use panel::{run_panelled, PanelParams};
