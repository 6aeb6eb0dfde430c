//! Clustered count regression with generalized log-gamma random intercepts.
//!
//! Two related models are fitted by maximum likelihood:
//!
//! * the random-intercept Poisson model with a GLG(0, σ, λ) intercept
//!   ([`pglg`]), whose marginal likelihood needs adaptive Gauss–Hermite
//!   quadrature ([`quadrature`]);
//! * its σ = λ special case, the multivariate negative binomial model
//!   ([`mnb`]), which has a closed form, analytic score and Fisher information.
//!
//! [`simulate`] draws datasets from either model and [`diagnostics`] builds
//! normal probability plots with simulated envelopes.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod fit;
pub mod glg;
pub mod linalg;
pub mod mnb;
pub mod pglg;
pub mod quadrature;
pub mod simulate;
pub mod special;

pub use data::{ClusterData, DataError, Dataset, ModelSpec};
pub use error::{Error, Result};
pub use fit::{FitResult, TraceRecord};
pub use glg::GlgParams;
pub use mnb::MnbParams;
pub use pglg::PglgParams;
pub use quadrature::QuadratureRule;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/glg.md")]
    mod glg {}
    #[doc = include_str!("../../../book/src/quadrature.md")]
    mod quadrature {}
    #[doc = include_str!("../../../book/src/mnb.md")]
    mod mnb {}
    #[doc = include_str!("../../../book/src/pglg.md")]
    mod pglg {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
