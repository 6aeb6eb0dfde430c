//! Simulation of clustered counts from either model.
//!
//! A [`SimDesign`] describes cluster sizes and how the design matrix is
//! generated. Covariates are drawn from one random stream; counts for
//! cluster i come from their own ChaCha stream derived from (seed, i), so a
//! dataset is a pure function of design, parameters and seed, independent of
//! thread count.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{interaction_name, ClusterData, Dataset, INTERCEPT};
use crate::error::{Error, Result};
use crate::glg::GlgSampler;
use crate::mnb::MnbParams;
use crate::pglg::PglgParams;

/// Whether a random covariate varies by observation or is shared within a cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    #[default]
    Observation,
    Cluster,
}

/// How one covariate column is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Recipe {
    /// Observation j of every cluster takes `values[j mod len]`.
    Within { values: Vec<f64> },
    /// Cluster i takes `values[i mod len]` for all its observations.
    ClusterLevels { values: Vec<f64> },
    Normal {
        mean: f64,
        sd: f64,
        #[serde(default)]
        level: Level,
    },
    Uniform {
        low: f64,
        high: f64,
        #[serde(default)]
        level: Level,
    },
    Bernoulli {
        p: f64,
        #[serde(default)]
        level: Level,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    #[serde(flatten)]
    pub recipe: Recipe,
}

/// Cluster sizes: one size for all clusters, or one per cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sizes {
    Common(usize),
    PerCluster(Vec<usize>),
}

/// A fixed stacked design: `rows[k]` is the covariate row of observation k,
/// clusters taken consecutively in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedDesign {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub n_clusters: usize,
    pub cluster_sizes: Sizes,
    #[serde(default)]
    pub covariates: Vec<Covariate>,
    #[serde(default)]
    pub interactions: Vec<(String, String)>,
    #[serde(default)]
    pub fixed: Option<FixedDesign>,
    #[serde(default = "default_true")]
    pub intercept: bool,
    /// Name of a generated covariate used as the offset instead of a column.
    #[serde(default)]
    pub offset: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

impl SimDesign {
    /// `n` clusters of size `m`, intercept only.
    pub fn new(n_clusters: usize, m: usize, seed: u64) -> Self {
        SimDesign {
            n_clusters,
            cluster_sizes: Sizes::Common(m),
            covariates: Vec::new(),
            interactions: Vec::new(),
            fixed: None,
            intercept: true,
            offset: None,
            seed,
        }
    }

    pub fn covariate(mut self, name: impl Into<String>, recipe: Recipe) -> Self {
        self.covariates.push(Covariate {
            name: name.into(),
            recipe,
        });
        self
    }

    pub fn interaction(mut self, a: impl Into<String>, b: impl Into<String>) -> Self {
        self.interactions.push((a.into(), b.into()));
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("design JSON: {e}")))
    }

    fn sizes(&self) -> Result<Vec<usize>> {
        let sizes = match &self.cluster_sizes {
            Sizes::Common(m) => vec![*m; self.n_clusters],
            Sizes::PerCluster(v) => {
                if v.len() != self.n_clusters {
                    return Err(Error::Invalid(format!(
                        "{} cluster sizes given for {} clusters",
                        v.len(),
                        self.n_clusters
                    )));
                }
                v.clone()
            }
        };
        if self.n_clusters == 0 || sizes.contains(&0) {
            return Err(Error::Invalid("cluster count and sizes must be positive".into()));
        }
        Ok(sizes)
    }

    /// The design with all counts zero; covariates depend only on the seed.
    pub fn build(&self) -> Result<Dataset> {
        let sizes = self.sizes()?;
        let n_obs: usize = sizes.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(0);

        // raw columns, one value per stacked observation
        let mut raw: Vec<(String, Vec<f64>)> = Vec::new();
        if let Some(fixed) = &self.fixed {
            if fixed.rows.len() != n_obs || fixed.rows.iter().any(|r| r.len() != fixed.columns.len()) {
                return Err(Error::Invalid(format!(
                    "fixed design needs {n_obs} rows of {} values",
                    fixed.columns.len()
                )));
            }
            for (k, name) in fixed.columns.iter().enumerate() {
                raw.push((name.clone(), fixed.rows.iter().map(|r| r[k]).collect()));
            }
        }
        for cov in &self.covariates {
            let mut col = Vec::with_capacity(n_obs);
            for (i, &m) in sizes.iter().enumerate() {
                let mut shared = None;
                for j in 0..m {
                    let v = match &cov.recipe {
                        Recipe::Within { values } => pick(values, j, &cov.name)?,
                        Recipe::ClusterLevels { values } => pick(values, i, &cov.name)?,
                        Recipe::Normal { mean, sd, level } => draw(*level, &mut shared, &mut rng, |r| {
                            mean + sd * r.sample::<f64, _>(StandardNormal)
                        }),
                        Recipe::Uniform { low, high, level } => {
                            draw(*level, &mut shared, &mut rng, |r| low + (high - low) * r.random::<f64>())
                        }
                        Recipe::Bernoulli { p, level } => {
                            draw(*level, &mut shared, &mut rng, |r| f64::from(u8::from(r.random::<f64>() < *p)))
                        }
                    };
                    col.push(v);
                }
            }
            raw.push((cov.name.clone(), col));
        }

        let find = |name: &str| -> Result<&Vec<f64>> {
            raw.iter()
                .find(|(n, _)| n == name)
                .map(|(_, c)| c)
                .ok_or_else(|| Error::Invalid(format!("unknown covariate '{name}' in design")))
        };
        let offset = match &self.offset {
            Some(name) => find(name)?.clone(),
            None => vec![0.0; n_obs],
        };
        let mut names = Vec::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        if self.intercept {
            names.push(INTERCEPT.to_string());
            cols.push(vec![1.0; n_obs]);
        }
        for (name, col) in &raw {
            if Some(name) != self.offset.as_ref() {
                names.push(name.clone());
                cols.push(col.clone());
            }
        }
        for (a, b) in &self.interactions {
            let (ca, cb) = (find(a)?, find(b)?);
            names.push(interaction_name(a, b));
            cols.push(ca.iter().zip(cb).map(|(x, y)| x * y).collect());
        }

        let mut clusters = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for (i, &m) in sizes.iter().enumerate() {
            let x = DMatrix::from_fn(m, names.len(), |j, k| cols[k][start + j]);
            clusters.push(ClusterData::new((i + 1).to_string(), vec![0; m], x, offset[start..start + m].to_vec())?);
            start += m;
        }
        Ok(Dataset::new(clusters, names)?)
    }
}

fn pick(values: &[f64], k: usize, name: &str) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Invalid(format!("covariate '{name}' has no values")));
    }
    Ok(values[k % values.len()])
}

fn draw<F: FnOnce(&mut ChaCha8Rng) -> f64>(level: Level, shared: &mut Option<f64>, rng: &mut ChaCha8Rng, f: F) -> f64 {
    match level {
        Level::Observation => f(rng),
        Level::Cluster => *shared.get_or_insert_with(|| f(rng)),
    }
}

fn cluster_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn poisson_draw<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    // rand_distr's Poisson returns whole-number floats
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(u64::MAX)
}

/// Replaces the counts of `data` with draws from the Poisson-GLG model.
pub fn resample_pglg(data: &Dataset, p: &PglgParams, seed: u64) -> Result<Dataset> {
    p.validate()?;
    if p.beta.len() != data.n_params() {
        return Err(Error::Domain("beta length does not match the design".into()));
    }
    let sampler = GlgSampler::new(p.random_effect()?)?;
    let clusters = data
        .clusters
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let mut rng = cluster_rng(seed, i);
            let b = sampler.draw(&mut rng);
            let y = c.means(&p.beta).iter().map(|m| poisson_draw(m * b.exp(), &mut rng)).collect();
            ClusterData { y, ..c.clone() }
        })
        .collect();
    Ok(Dataset {
        clusters,
        column_names: data.column_names.clone(),
    })
}

/// Replaces the counts of `data` with draws from the MNB model:
/// wᵢ ~ Gamma(shape φ, rate φ), yᵢⱼ ~ Poisson(μᵢⱼwᵢ).
pub fn resample_mnb(data: &Dataset, p: &MnbParams, seed: u64) -> Result<Dataset> {
    p.validate()?;
    if p.beta.len() != data.n_params() {
        return Err(Error::Domain("beta length does not match the design".into()));
    }
    let frailty = Gamma::new(p.phi, 1.0 / p.phi).map_err(|e| Error::Domain(e.to_string()))?;
    let clusters = data
        .clusters
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let mut rng = cluster_rng(seed, i);
            let w = frailty.sample(&mut rng);
            let y = c.means(&p.beta).iter().map(|m| poisson_draw(m * w, &mut rng)).collect();
            ClusterData { y, ..c.clone() }
        })
        .collect();
    Ok(Dataset {
        clusters,
        column_names: data.column_names.clone(),
    })
}

pub fn simulate_pglg(design: &SimDesign, p: &PglgParams) -> Result<Dataset> {
    resample_pglg(&design.build()?, p, design.seed)
}

pub fn simulate_mnb(design: &SimDesign, p: &MnbParams) -> Result<Dataset> {
    resample_mnb(&design.build()?, p, design.seed)
}
