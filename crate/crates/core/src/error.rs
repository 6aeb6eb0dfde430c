use thiserror::Error;

use crate::data::DataError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Parameters or arguments outside the domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A requested exponential moment of the random effect is infinite.
    #[error("E[exp({k}·b)] does not exist for sigma = {sigma}, lambda = {lambda} (need k·sigma·|lambda| < 1)")]
    MomentDoesNotExist { k: u32, sigma: f64, lambda: f64 },

    /// Mode search inside the adaptive quadrature did not settle.
    #[error("mode search did not converge after {iterations} iterations (last iterate {last})")]
    ModeSearch { iterations: usize, last: f64 },

    /// Quadrature failure tagged with the cluster it happened in.
    #[error("cluster {cluster}: {source}")]
    Cluster {
        cluster: String,
        #[source]
        source: Box<Error>,
    },

    #[error("quadrature order {0} out of range (1..=200)")]
    QuadratureOrder(usize),

    /// Design matrix columns are linearly dependent.
    #[error("rank-deficient design: column '{column}' is collinear with {others:?}")]
    RankDeficient { column: String, others: Vec<String> },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Data(#[from] DataError),
}

impl Error {
    pub(crate) fn in_cluster(self, id: &str) -> Self {
        Error::Cluster {
            cluster: id.to_string(),
            source: Box::new(self),
        }
    }
}
