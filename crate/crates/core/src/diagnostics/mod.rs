//! Monte Carlo estimation of the diagnostic field `Ψ_s` and its uncertainty.

mod hutchinson;
mod psi;
mod rays;
mod stats;

pub use hutchinson::{hutchinson_trace, ProbeConfig, ProbeDistribution, TraceEstimate};
pub use psi::{psi_estimate, DiagnosticRecord};
pub use rays::{
    radial_ray_probe, random_unit_directions, ray_probe_seed, RayCsvRow, RayRow, RayTable, RAY_CSV_COLUMNS,
};
pub use stats::{linear_fit, shapiro_wilk, variance_report, LinearFit, VarianceReport, MIN_VARIANCE_SAMPLES};
