pub mod amp;
pub mod coupling;
pub mod error;
pub mod instance;
pub mod potential;
pub mod prior;
pub mod quadrature;
pub mod rng;
pub mod state_evolution;
pub mod stats;

pub use amp::{run_amp, AmpConfig, AmpState, TauMode};
pub use coupling::{apply_seed, BlockLayout, SeededInstance};
pub use error::{Error, Result};
pub use instance::{exact_posterior, generate_instance, CheckReport, CsInstance, ExactPosterior};
pub use potential::{ChannelParams, StationarySet, ThresholdConfig, Thresholds};
pub use prior::{DiscretePrior, ScalarChannel};
pub use quadrature::{Quadrature, QuadratureSpec};
pub use rng::SeedStream;
pub use stats::Estimate;
pub use state_evolution::{CouplingKind, CouplingSpec, SeOptions, SeTrajectory};
