//! Shared-weight local-set encoder: each local point set becomes one
//! diagonal-Gaussian vote in latent space. Centroid-relative member points go
//! through a per-point MLP and a set max-pool; the pooled feature
//! concatenated with the centroid feeds the vote head, which emits a mean
//! and softplus-floored variances.

use rand::Rng;
use rand::SeedableRng;

use crate::geometry::{build_partition, LocalPointSet, PointCloud};
use crate::nn::tensor::NodeId;
use crate::nn::{dropout, BatchNorm, Dense, Matrix, ParamStore, Tape};
use crate::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;

/// One vote: a diagonal Gaussian in latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteDistribution {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl VoteDistribution {
    pub fn latent_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.variance.len() {
            return Err(Error::ShapeMismatch(format!(
                "vote mean dim {} != variance dim {}",
                self.mean.len(),
                self.variance.len()
            )));
        }
        if self.mean.iter().chain(&self.variance).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite vote entry".into()));
        }
        if self.variance.iter().any(|v| *v <= 0.0) {
            return Err(Error::InvalidArgument("vote variance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// Latent (bottleneck) dimensionality D.
    pub latent_dim: usize,
    /// Per-point MLP widths applied before pooling.
    pub point_mlp: Vec<usize>,
    /// Hidden widths of the vote head after centroid concatenation.
    pub vote_mlp: Vec<usize>,
    pub radius: f64,
    pub n_sets: usize,
    pub max_points_per_set: usize,
    pub use_batchnorm: bool,
    pub use_dropout: bool,
    pub dropout_p: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            latent_dim: 1024,
            point_mlp: vec![64, 128, 256],
            vote_mlp: vec![512],
            radius: 0.2,
            n_sets: 64,
            max_points_per_set: 64,
            use_batchnorm: true,
            use_dropout: true,
            dropout_p: 0.5,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be >= 1".into()));
        }
        if self.point_mlp.is_empty() {
            return Err(Error::Config("point_mlp widths must be non-empty".into()));
        }
        if self.radius <= 0.0 {
            return Err(Error::Config("radius must be positive".into()));
        }
        if self.n_sets == 0 || self.max_points_per_set == 0 {
            return Err(Error::Config("n_sets and max_points_per_set must be positive".into()));
        }
        Ok(())
    }
}

struct Layer {
    dense: Dense,
    bn: Option<BatchNorm>,
}

/// Encoder weights: shared across every local set.
pub struct Encoder {
    pub cfg: EncoderConfig,
    point_layers: Vec<Layer>,
    vote_layers: Vec<Layer>,
    vote_out: Dense,
}

/// Tape nodes for a batch of encoded clouds.
pub struct EncoderOutput {
    /// [total sets, D] vote means.
    pub mu: NodeId,
    /// [total sets, D] vote variances (softplus + floor, strictly positive).
    pub var: NodeId,
    /// Per cloud, its row range in `mu`/`var`, in FPS centroid order.
    pub vote_ranges: Vec<(usize, usize)>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, cfg: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut point_layers = Vec::new();
        let mut fan_in = 3;
        for (i, &w) in cfg.point_mlp.iter().enumerate() {
            let dense = Dense::new(store, &format!("enc.point{i}"), fan_in, w, rng);
            let bn = cfg
                .use_batchnorm
                .then(|| BatchNorm::new(store, &format!("enc.point{i}.bn"), w));
            point_layers.push(Layer { dense, bn });
            fan_in = w;
        }
        // pooled feature plus the 3-vector centroid
        let mut vote_in = fan_in + 3;
        let mut vote_layers = Vec::new();
        for (i, &w) in cfg.vote_mlp.iter().enumerate() {
            let dense = Dense::new(store, &format!("enc.vote{i}"), vote_in, w, rng);
            let bn = cfg
                .use_batchnorm
                .then(|| BatchNorm::new(store, &format!("enc.vote{i}.bn"), w));
            vote_layers.push(Layer { dense, bn });
            vote_in = w;
        }
        let vote_out = Dense::new(store, "enc.vote_out", vote_in, 2 * cfg.latent_dim, rng);
        Ok(Encoder {
            cfg,
            point_layers,
            vote_layers,
            vote_out,
        })
    }

    /// Encode every set of every cloud in one pass. Batchnorm statistics in
    /// train mode couple all points (per-point layers) and all sets (vote
    /// head) of the batch.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParamStore,
        partitions: &[&[LocalPointSet]],
        train: bool,
        rng: &mut impl Rng,
    ) -> Result<EncoderOutput> {
        let total_sets: usize = partitions.iter().map(|p| p.len()).sum();
        if total_sets == 0 {
            return Err(Error::InvalidArgument("no local point sets to encode".into()));
        }
        let total_points: usize = partitions
            .iter()
            .flat_map(|p| p.iter())
            .map(|s| s.relative_points.len())
            .sum();
        let mut points = Matrix::zeros((total_points, 3));
        let mut centroids = Matrix::zeros((total_sets, 3));
        let mut point_segments = Vec::with_capacity(total_sets);
        let mut vote_ranges = Vec::with_capacity(partitions.len());
        let mut prow = 0;
        let mut srow = 0;
        for sets in partitions {
            let start = srow;
            for set in sets.iter() {
                let seg_start = prow;
                for p in &set.relative_points {
                    for k in 0..3 {
                        points[[prow, k]] = p[k];
                    }
                    prow += 1;
                }
                point_segments.push((seg_start, prow));
                for k in 0..3 {
                    centroids[[srow, k]] = set.centroid[k];
                }
                srow += 1;
            }
            vote_ranges.push((start, srow));
        }

        let mut x = tape.constant(points);
        for layer in &self.point_layers {
            x = layer.dense.forward(tape, store, x)?;
            if let Some(bn) = &layer.bn {
                x = bn.forward(tape, store, x, train)?;
            }
            x = tape.relu(x);
        }
        let pooled = tape.segment_max(x, &point_segments);
        let centroid_node = tape.constant(centroids);
        let mut feat = tape.concat_cols(pooled, centroid_node);
        for layer in &self.vote_layers {
            feat = layer.dense.forward(tape, store, feat)?;
            if let Some(bn) = &layer.bn {
                feat = bn.forward(tape, store, feat, train)?;
            }
            feat = tape.relu(feat);
            if self.cfg.use_dropout {
                feat = dropout(tape, feat, self.cfg.dropout_p, train, rng);
            }
        }
        let out = self.vote_out.forward(tape, store, feat)?;
        let d = self.cfg.latent_dim;
        let mu = tape.slice_cols(out, 0, d);
        let raw_var = tape.slice_cols(out, d, 2 * d);
        let sp = tape.softplus(raw_var);
        let var = tape.add_const(sp, VARIANCE_FLOOR);
        Ok(EncoderOutput {
            mu,
            var,
            vote_ranges,
        })
    }

    /// Pooled per-set feature of a single set, eval mode.
    pub fn encode_set(&self, store: &ParamStore, set: &LocalPointSet) -> Result<Vec<f64>> {
        let mut store = store.clone();
        let mut tape = Tape::new();
        let n = set.relative_points.len();
        let mut points = Matrix::zeros((n, 3));
        for (r, p) in set.relative_points.iter().enumerate() {
            for k in 0..3 {
                points[[r, k]] = p[k];
            }
        }
        let mut x = tape.constant(points);
        for layer in &self.point_layers {
            x = layer.dense.forward(&mut tape, &store, x)?;
            if let Some(bn) = &layer.bn {
                x = bn.forward(&mut tape, &mut store, x, false)?;
            }
            x = tape.relu(x);
        }
        let pooled = tape.segment_max(x, &[(0, n)]);
        Ok(tape.value(pooled).row(0).to_vec())
    }

    /// Full vote of a single set, eval mode.
    pub fn vote_from_set(&self, store: &ParamStore, set: &LocalPointSet) -> Result<VoteDistribution> {
        let mut store = store.clone();
        let mut tape = Tape::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let sets: [&[LocalPointSet]; 1] = [std::slice::from_ref(set)];
        let out = self.forward(&mut tape, &mut store, &sets, false, &mut rng)?;
        Ok(VoteDistribution {
            mean: tape.value(out.mu).row(0).to_vec(),
            variance: tape.value(out.var).row(0).to_vec(),
        })
    }

    /// Partition a cloud and emit one vote per local set, eval mode.
    pub fn encode_cloud(
        &self,
        store: &ParamStore,
        cloud: &PointCloud,
        seed: u64,
    ) -> Result<Vec<VoteDistribution>> {
        let partition = build_partition(
            cloud,
            self.cfg.n_sets.min(cloud.len()),
            self.cfg.radius,
            self.cfg.max_points_per_set,
            seed,
        )?;
        let mut store = store.clone();
        let mut tape = Tape::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let parts: [&[LocalPointSet]; 1] = [partition.as_slice()];
        let out = self.forward(&mut tape, &mut store, &parts, false, &mut rng)?;
        let mu = tape.value(out.mu);
        let var = tape.value(out.var);
        Ok((0..partition.len())
            .map(|i| VoteDistribution {
                mean: mu.row(i).to_vec(),
                variance: var.row(i).to_vec(),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            latent_dim: 8,
            point_mlp: vec![16, 32],
            vote_mlp: vec![32],
            radius: 0.3,
            n_sets: 4,
            max_points_per_set: 16,
            use_batchnorm: true,
            use_dropout: true,
            dropout_p: 0.5,
        }
    }

    fn make_encoder(seed: u64) -> (ParamStore, Encoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = Encoder::new(&mut store, small_config(), &mut rng).unwrap();
        (store, enc)
    }

    fn sample_set(seed: u64, centroid: [f64; 3]) -> LocalPointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let relative_points = (0..10)
            .map(|_| {
                [
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.2..0.2),
                ]
            })
            .collect();
        LocalPointSet {
            centroid,
            radius: 0.3,
            relative_points,
            source_indices: (0..10).collect(),
        }
    }

    #[test]
    fn encode_set_is_permutation_invariant() {
        let (store, enc) = make_encoder(0);
        let set = sample_set(1, [0.1, 0.2, 0.3]);
        let mut shuffled = set.clone();
        shuffled.relative_points.reverse();
        let a = enc.encode_set(&store, &set).unwrap();
        let b = enc.encode_set(&store, &shuffled).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encode_set_ignores_duplicated_points() {
        let (store, enc) = make_encoder(0);
        let set = sample_set(2, [0.0, 0.0, 0.0]);
        let mut doubled = set.clone();
        let extra = doubled.relative_points.clone();
        doubled.relative_points.extend(extra);
        let a = enc.encode_set(&store, &set).unwrap();
        let b = enc.encode_set(&store, &doubled).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn congruent_sets_at_different_centroids_share_features() {
        let (store, enc) = make_encoder(0);
        let a = sample_set(3, [0.0, 0.0, 0.0]);
        let mut b = a.clone();
        b.centroid = [0.5, -0.5, 0.2];
        assert_eq!(
            enc.encode_set(&store, &a).unwrap(),
            enc.encode_set(&store, &b).unwrap()
        );
    }

    #[test]
    fn vote_variances_are_strictly_positive() {
        let (store, enc) = make_encoder(4);
        let vote = enc.vote_from_set(&store, &sample_set(5, [0.1, 0.0, 0.0])).unwrap();
        assert!(vote.variance.iter().all(|v| *v >= VARIANCE_FLOOR));
        vote.validate().unwrap();
    }

    #[test]
    fn votes_are_deterministic_in_eval_mode() {
        let (store, enc) = make_encoder(4);
        let set = sample_set(6, [0.1, 0.0, 0.0]);
        let a = enc.vote_from_set(&store, &set).unwrap();
        let b = enc.vote_from_set(&store, &set).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn vote_depends_on_centroid() {
        let (store, enc) = make_encoder(4);
        let a = sample_set(7, [0.0, 0.0, 0.0]);
        let mut b = a.clone();
        b.centroid = [0.4, 0.1, -0.2];
        let va = enc.vote_from_set(&store, &a).unwrap();
        let vb = enc.vote_from_set(&store, &b).unwrap();
        assert_ne!(va.mean, vb.mean);
    }

    #[test]
    fn encode_cloud_emits_one_vote_per_set() {
        let (store, enc) = make_encoder(1);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cloud = PointCloud::new(
            (0..200)
                .map(|_| {
                    [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ]
                })
                .collect(),
        );
        let votes = enc.encode_cloud(&store, &cloud, 3).unwrap();
        assert_eq!(votes.len(), 4);
        for v in &votes {
            v.validate().unwrap();
        }
    }
}
