//! Optical-response descriptors from discrete electronic-excitation spectra,
//! and a benchmark harness that trains classical and quantum-kernel
//! classifiers on those descriptors.
//!
//! The crate is organised around a data pipeline:
//!
//! * [`spectra`] — Gaussian broadening of excitation lines and the closure
//!   relations between the complex dielectric function, the refractive
//!   index, and the absorption coefficient.
//! * [`corpus`] — surrogate two-system corpus generation (a pristine and a
//!   doped variant of a wide-gap host), CSV ingestion/export, and
//!   deterministic stratified splits.
//! * [`features`] — Box-Cox power transforms fitted by maximum likelihood,
//!   standardisation, and linear-SVM feature ranking.
//! * [`svm`] — a sequential-minimal-optimisation solver for the soft-margin
//!   kernel SVM dual, with RBF, linear, and precomputed kernels.
//! * [`qsim`] — a dense statevector / density-matrix simulator for up to
//!   eight qubits with a per-gate depolarizing noise channel and seeded
//!   shot sampling.
//! * [`qkernel`] — fidelity quantum kernels built from a ZZ feature map,
//!   evaluated exactly or from sampled shots.
//! * [`qnn`] — a hybrid quantum neural network (feature map, two-local
//!   ansatz, parity readout, linear head) trained with parameter-shift
//!   gradients and AMSGrad-flavoured Adam.
//! * [`metrics`] — accuracy, confusion matrices, ROC/AUC, bootstrap
//!   confidence intervals, and permutation feature importance.
//! * [`pipeline`] — run configuration, the run manifest, and the stage
//!   implementations behind the `qspectra` command-line interface.

pub mod corpus;
pub mod features;
pub mod metrics;
pub mod pipeline;
pub mod qkernel;
pub mod qnn;
pub mod qsim;
pub mod seeds;
pub mod spectra;
pub mod svm;
