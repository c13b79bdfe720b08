//! Risk-aware navigation over terrain with uncertain traction.
//!
//! Traversability is modelled as per-cell categorical distributions over the
//! linear and angular traction factors of a unicycle. Planning runs MPPI on
//! one of several cost modes:
//!
//! * `Nominal`: no-slip rollouts (traction 1 on every known cell).
//! * `Expected` / `CvarDyn`: a single rollout on the per-cell left-tail CVaR
//!   of traction (`alpha = 1` gives the per-cell mean).
//! * `CvarCost`: right-tail CVaR of the mission cost over `M` sampled
//!   traction maps.
//!
//! Unfamiliar terrain is detected with a PCA + GMM density model over
//! per-cell feature vectors, and the [`sim`] module runs closed-loop
//! benchmarks against ground-truth traction realizations.

pub mod dynamics;
pub mod error;
pub mod grid;
pub mod mppi;
pub mod objective;
pub mod ood;
pub mod seed;
pub mod sim;
pub mod traction;

pub use error::{Error, Result};

/// Version tag written into every JSON document this crate produces.
pub const SCHEMA_VERSION: u32 = 1;

pub(crate) fn check_version(found: u32, what: &str) -> Result<()> {
    if found == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(Error::UnsupportedVersion {
            what: what.to_string(),
            found,
        })
    }
}
