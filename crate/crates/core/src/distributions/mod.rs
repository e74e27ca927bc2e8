//! Probability laws used by both inference engines.

mod al;
mod gig;
mod lognormal;
mod ngal;
mod quantile;

pub use al::{al_cdf, al_cdf_at_location, al_density, al_ln_density, al_quantile, al_sample_via_mixture, AlParams};
pub use gig::{gig_posterior_update, gig_sample, GigParams};
pub use lognormal::{gamma_to_lognormal, lognormal_to_gamma, GammaMoments, LognormalMoments};
pub use ngal::{DensityMethod, GalParams, NgalCanonical, NgalMoments, NgalParams};
pub use quantile::QuantileSpec;

use crate::quadrature::QuadConfig;
use crate::error::Result;

/// Free-function form of [`NgalParams::density`].
pub fn ngal_density(y: f64, p: &NgalParams, method: DensityMethod, cfg: &QuadConfig) -> Result<f64> {
    p.density(y, method, cfg)
}

/// Free-function form of [`NgalParams::moments`].
pub fn ngal_moments(p: &NgalParams) -> NgalMoments {
    p.moments()
}
