//! Monte Carlo estimators and the statistics shared by them.

pub mod chain;
pub mod clt;
pub mod cycles;
pub mod perturbation;
pub mod renewal;
pub mod scans;
pub mod stats;

pub use chain::{estimate_h, estimate_q, green_function, GreenParams, HParams, QKernelEstimate, QParams};
pub use clt::{clt_test, CltParams, CltReport};
pub use cycles::{
    estimate_diffusion, estimate_equilibrium, estimate_velocity, level_increment_counts, lln_velocity, sigma_tail,
    CycleParams, DiffusionEstimate, EquilibriumParams, SigmaTail, SigmaTailParams, SiteFunctional, VelocityEstimate,
};
pub use perturbation::{perturbation_grid, perturbation_influence, PerturbationGridResult, PerturbationParams};
pub use renewal::{renewal_common_level, renewal_moments, IncrementLaw, RenewalMoments, RenewalParams};
pub use scans::{intersection_scan, variance_scan, IntersectionScanParams, VarianceScanParams};
pub use stats::{fit_exponent, EstimateWithError, ScanPoint, ScanResult};
