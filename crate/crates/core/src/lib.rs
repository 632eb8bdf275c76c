//! Spectral Galerkin simulation of the stochastic Lagrangian-averaged
//! Navier-Stokes-alpha equations on the periodic box `[0, L]^2`, with
//! Monte-Carlo diagnostics for their energy structure.

pub mod basis;
pub mod diagnostics;
pub mod error;
pub mod integrator;
pub mod noise;
pub mod operators;
pub mod stats;

pub use basis::{
    leray_project, read_snapshot, write_snapshot, Basis, GridField, Mode, Parity, QuadratureGrid,
    SobolevNorms, SpectralField, WaveVector,
};
pub use diagnostics::{
    BEEstimate, ConvergenceReport, EnsembleReport, ExpMomentReport, InvariantReport,
    ItoBalanceReport, ItoBalanceStudy, MomentReport, Observable, OuComparison, VariationCheck,
};
pub use error::{Error, Result};
pub use integrator::{Integrator, IntegratorConfig, Observer, Scheme, TrajectoryRecord};
pub use noise::{make_noise, substream, Admissibility, NoiseRng, NoiseSpec, QPower};
pub use operators::{Helmholtz, PhysicalParams};
pub use stats::Summary;
