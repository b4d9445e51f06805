//! Numerical kernel shared by every other module: normal and gamma
//! distribution functions, small dense linear algebra, root finding and
//! reproducible random streams.

mod linalg;
mod optimize;
mod rng;
mod special;

pub use linalg::{cholesky_factor, nearest_correlation_repair, Matrix, MIN_EIGENVALUE};
pub use optimize::{bisect_increasing, brent_minimize};
pub use rng::{label_hash, stream_id, RngStream};
pub use special::{
    gamma_cdf, gamma_quantile, ln_gamma, regularized_gamma_p, std_normal_cdf, std_normal_pdf, std_normal_quantile,
    GammaDist, NormalDist,
};

pub(crate) use special::{phi, phi_inv};
