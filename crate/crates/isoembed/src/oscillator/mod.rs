//! Oscillatory corrector chain for a single primitive metric `a²(dx¹)²` on a chart.

pub mod chain;
pub mod frames;
pub mod immersion;
pub mod profiles;
pub mod substitute;

pub use chain::{
    build_u1, corrector_u2, evaluate_level, residual_ratio, step_f2, step_fk, Expansion, ResidualSummary, SampleSet, StepReport, StepState,
};
pub use frames::{build_frames, FrameCertificate, FrameFields};
pub use immersion::{periodic_immersion, PeriodicImmersion};
pub use profiles::{build_profiles, ProfilePack};
pub use substitute::{injectivity_margin, substitute, InjectivityMargin, Substituted, SubstitutedMap};
