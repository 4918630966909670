//! IMDS domain model: declarations, the ground system, and elaboration.

pub mod decl;
mod elaborate;
pub mod system;

pub use decl::*;
pub use elaborate::{
    elaborate, elaborate_with, ground_decl, validate, validate_with, ElaborateOptions, Elaboration, ElaborationError,
};
pub use system::*;

/// The initial configuration assembled from the init block.
pub fn initial_configuration(sys: &ElaboratedSystem) -> Configuration {
    sys.initial.clone()
}
