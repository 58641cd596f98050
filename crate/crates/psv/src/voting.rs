//! Vote combination. The posterior over the latent is a product of the
//! per-set diagonal Gaussians; its argmax has the closed form of a
//! precision-weighted mean per dimension. Also: training-time vote dropping,
//! pooling baselines, endpoint interpolation for diverse outputs and direct
//! sampling of the product Gaussian.

use rand::Rng;

use crate::encoder::VoteDistribution;
use crate::{Error, Result};

/// A non-empty collection of votes over the same latent space.
#[derive(Debug, Clone)]
pub struct LatentPosterior {
    votes: Vec<VoteDistribution>,
}

impl LatentPosterior {
    pub fn new(votes: Vec<VoteDistribution>) -> Result<Self> {
        if votes.is_empty() {
            return Err(Error::InvalidArgument(
                "posterior needs at least one vote".into(),
            ));
        }
        let dim = votes[0].latent_dim();
        for v in &votes {
            v.validate()?;
            if v.latent_dim() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "vote dims disagree: {} vs {dim}",
                    v.latent_dim()
                )));
            }
        }
        Ok(LatentPosterior { votes })
    }

    pub fn votes(&self) -> &[VoteDistribution] {
        &self.votes
    }

    pub fn latent_dim(&self) -> usize {
        self.votes[0].latent_dim()
    }
}

/// The argmax of the product of the vote Gaussians: per dimension the
/// precision-weighted mean of the vote means.
pub fn optimal_latent(posterior: &LatentPosterior) -> Vec<f64> {
    let d = posterior.latent_dim();
    let mut out = vec![0.0; d];
    for k in 0..d {
        let mut weighted = 0.0;
        let mut precision = 0.0;
        for v in posterior.votes() {
            let p = 1.0 / v.variance[k];
            weighted += v.mean[k] * p;
            precision += p;
        }
        out[k] = weighted / precision;
    }
    out
}

/// Log density of the (unnormalized-as-a-distribution) product of votes at z.
pub fn log_product_density(posterior: &LatentPosterior, z: &[f64]) -> Result<f64> {
    let d = posterior.latent_dim();
    if z.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "z has dim {}, votes have dim {d}",
            z.len()
        )));
    }
    let mut acc = 0.0;
    for v in posterior.votes() {
        for k in 0..d {
            let var = v.variance[k];
            let diff = z[k] - v.mean[k];
            acc += -0.5 * (std::f64::consts::TAU * var).ln() - diff * diff / (2.0 * var);
        }
    }
    Ok(acc)
}

/// Training-time vote dropping: draw k uniformly from 1..=min(max_votes, n),
/// then pick k vote indices uniformly without replacement. Bypassed at test,
/// where every vote contributes.
pub fn select_training_votes(
    n_votes: usize,
    max_votes: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    if n_votes == 0 {
        return Err(Error::InvalidArgument("empty vote list".into()));
    }
    if max_votes == 0 {
        return Err(Error::InvalidArgument("max_votes must be >= 1".into()));
    }
    let upper = max_votes.min(n_votes);
    let k = rng.gen_range(1..=upper);
    // partial Fisher-Yates over the index range
    let mut indices: Vec<usize> = (0..n_votes).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n_votes);
        indices.swap(i, j);
    }
    indices.truncate(k);
    Ok(indices)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Mean,
}

/// Symmetric-function baseline: pool deterministic per-set features (the
/// vote means, variance head disabled) instead of precision weighting.
pub fn aggregate_baseline(features: &[Vec<f64>], mode: PoolMode) -> Result<Vec<f64>> {
    if features.is_empty() {
        return Err(Error::InvalidArgument("no features to aggregate".into()));
    }
    let d = features[0].len();
    for f in features {
        if f.len() != d {
            return Err(Error::ShapeMismatch("feature dims disagree".into()));
        }
    }
    let mut out = vec![0.0; d];
    match mode {
        PoolMode::Max => {
            out.copy_from_slice(&features[0]);
            for f in &features[1..] {
                for k in 0..d {
                    out[k] = out[k].max(f[k]);
                }
            }
        }
        PoolMode::Mean => {
            for f in features {
                for k in 0..d {
                    out[k] += f[k] / features.len() as f64;
                }
            }
        }
    }
    Ok(out)
}

/// Evenly spaced latents between the all-vote optimum (t=0) and the optimum
/// of a single chosen vote (t=1).
pub fn interpolated_latents(
    posterior: &LatentPosterior,
    vote_index: usize,
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    if vote_index >= posterior.votes().len() {
        return Err(Error::InvalidArgument(format!(
            "vote index {vote_index} out of range"
        )));
    }
    if steps < 2 {
        return Err(Error::InvalidArgument("interpolation needs >= 2 steps".into()));
    }
    let all = optimal_latent(posterior);
    let single = posterior.votes()[vote_index].mean.clone();
    let mut out = Vec::with_capacity(steps);
    for s in 0..steps {
        let t = s as f64 / (steps - 1) as f64;
        out.push(
            all.iter()
                .zip(&single)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect(),
        );
    }
    Ok(out)
}

/// Draw from the product Gaussian directly: mean z_opt, per-dimension
/// variance 1 / (sum of precisions).
pub fn sample_product_latent(posterior: &LatentPosterior, rng: &mut impl Rng) -> Vec<f64> {
    let d = posterior.latent_dim();
    let z_opt = optimal_latent(posterior);
    (0..d)
        .map(|k| {
            let precision: f64 = posterior.votes().iter().map(|v| 1.0 / v.variance[k]).sum();
            let std = (1.0 / precision).sqrt();
            z_opt[k] + std * sample_standard_normal(rng)
        })
        .collect()
}

fn sample_standard_normal(rng: &mut impl Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}
