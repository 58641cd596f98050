//! Task decoders from the latent: classification logits, per-point part
//! segmentation and folding-based completion.

use rand::Rng;

use crate::geometry::PointCloud;
use crate::nn::tensor::NodeId;
use crate::nn::{dropout, Dense, Matrix, ParamStore, Tape};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classify,
    Segment,
    Complete,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Classify => "classify",
            Task::Segment => "segment",
            Task::Complete => "complete",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "classify" => Ok(Task::Classify),
            "segment" => Ok(Task::Segment),
            "complete" => Ok(Task::Complete),
            other => Err(Error::Config(format!(
                "unknown task '{other}' (expected classify|segment|complete)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub task: Task,
    pub n_classes: usize,
    pub n_parts: usize,
    /// Completion output point count M.
    pub output_points: usize,
    /// Hidden widths for the classify/segment MLPs.
    pub hidden: Vec<usize>,
    /// Hidden widths for each folding stage.
    pub fold_hidden: Vec<usize>,
    pub include_category: bool,
    pub use_dropout: bool,
    pub dropout_p: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            task: Task::Classify,
            n_classes: 40,
            n_parts: 50,
            output_points: 2048,
            hidden: vec![512, 256],
            fold_hidden: vec![512, 512],
            include_category: true,
            use_dropout: true,
            dropout_p: 0.5,
        }
    }
}

/// The 2-D grid a folding decoder deforms: side^2 nodes uniformly spanning
/// [-0.5, 0.5]^2, truncated to the configured output count by dropping the
/// final nodes.
#[derive(Debug, Clone)]
pub struct FoldingGrid {
    pub side: usize,
    pub coords: Vec<[f64; 2]>,
}

impl FoldingGrid {
    pub fn new(side: usize) -> Self {
        assert!(side >= 1);
        let mut coords = Vec::with_capacity(side * side);
        for i in 0..side {
            for j in 0..side {
                let step = |k: usize| {
                    if side == 1 {
                        0.0
                    } else {
                        k as f64 / (side - 1) as f64 - 0.5
                    }
                };
                coords.push([step(i), step(j)]);
            }
        }
        FoldingGrid { side, coords }
    }

    /// Smallest grid whose node count covers `m` output points.
    pub fn for_output_points(m: usize) -> Self {
        let side = (m as f64).sqrt().ceil() as usize;
        FoldingGrid::new(side.max(1))
    }
}

/// Classification head: MLP D -> hidden -> K with relu and dropout on the
/// hidden layers.
pub struct ClassifyHead {
    layers: Vec<Dense>,
    cfg: HeadConfig,
}

impl ClassifyHead {
    pub fn new(store: &mut ParamStore, cfg: HeadConfig, latent_dim: usize, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::new();
        let mut fan_in = latent_dim;
        for (i, &w) in cfg.hidden.iter().enumerate() {
            layers.push(Dense::new(store, &format!("head.cls{i}"), fan_in, w, rng));
            fan_in = w;
        }
        layers.push(Dense::new(store, "head.cls_out", fan_in, cfg.n_classes, rng));
        ClassifyHead { layers, cfg }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: NodeId,
        train: bool,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        let mut x = z;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, store, x)?;
            if i < last {
                x = tape.relu(x);
                if self.cfg.use_dropout {
                    x = dropout(tape, x, self.cfg.dropout_p, train, rng);
                }
            }
        }
        Ok(x)
    }

    /// Logits for one latent, eval mode.
    pub fn eval(&self, store: &ParamStore, z: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let zn = tape.constant(row_matrix(z));
        let mut rng = no_rng();
        let out = self.forward(&mut tape, store, zn, false, &mut rng)?;
        Ok(tape.value(out).row(0).to_vec())
    }
}

/// Per-point segmentation head: shared MLP on concat(z, point, category
/// one-hot) per point.
pub struct SegmentHead {
    layers: Vec<Dense>,
    cfg: HeadConfig,
}

impl SegmentHead {
    pub fn new(store: &mut ParamStore, cfg: HeadConfig, latent_dim: usize, rng: &mut impl Rng) -> Self {
        let category_dim = if cfg.include_category { cfg.n_classes } else { 0 };
        let mut fan_in = latent_dim + 3 + category_dim;
        let mut layers = Vec::new();
        for (i, &w) in cfg.hidden.iter().enumerate() {
            layers.push(Dense::new(store, &format!("head.seg{i}"), fan_in, w, rng));
            fan_in = w;
        }
        layers.push(Dense::new(store, "head.seg_out", fan_in, cfg.n_parts, rng));
        SegmentHead { layers, cfg }
    }

    /// Per-point part logits [N, P] for one example whose latent is row
    /// `row` of the [B, D] node `z`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_example(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: NodeId,
        row: usize,
        points: &PointCloud,
        category: Option<usize>,
        train: bool,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        let n = points.len();
        let zi = tape.gather_rows(z, &[row]);
        let zrep = tape.repeat_row(zi, n);
        let mut pts = Matrix::zeros((n, 3));
        for (r, p) in points.points.iter().enumerate() {
            for k in 0..3 {
                pts[[r, k]] = p[k];
            }
        }
        let pts_node = tape.constant(pts);
        let mut x = tape.concat_cols(zrep, pts_node);
        if self.cfg.include_category {
            let c = category.ok_or_else(|| {
                Error::InvalidArgument("segmentation head configured with category one-hot but none given".into())
            })?;
            if c >= self.cfg.n_classes {
                return Err(Error::InvalidArgument(format!(
                    "category {c} out of range [0,{})",
                    self.cfg.n_classes
                )));
            }
            let mut onehot = Matrix::zeros((n, self.cfg.n_classes));
            for r in 0..n {
                onehot[[r, c]] = 1.0;
            }
            let oh = tape.constant(onehot);
            x = tape.concat_cols(x, oh);
        }
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, store, x)?;
            if i < last {
                x = tape.relu(x);
                if self.cfg.use_dropout {
                    x = dropout(tape, x, self.cfg.dropout_p, train, rng);
                }
            }
        }
        Ok(x)
    }

    /// Per-point part predictions for one latent, eval mode.
    pub fn eval(
        &self,
        store: &ParamStore,
        z: &[f64],
        points: &PointCloud,
        category: Option<usize>,
    ) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let zn = tape.constant(row_matrix(z));
        let mut rng = no_rng();
        let logits =
            self.forward_example(&mut tape, store, zn, 0, points, category, false, &mut rng)?;
        let m = tape.value(logits);
        Ok((0..m.nrows())
            .map(|r| {
                let row = m.row(r);
                let mut best = 0;
                for c in 1..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }
}

/// Two-stage folding decoder: deform a fixed 2-D grid into a 3-D surface
/// conditioned on the latent.
pub struct FoldHead {
    stage1: Vec<Dense>,
    stage2: Vec<Dense>,
    pub grid: FoldingGrid,
    cfg: HeadConfig,
}

impl FoldHead {
    pub fn new(store: &mut ParamStore, cfg: HeadConfig, latent_dim: usize, rng: &mut impl Rng) -> Self {
        let grid = FoldingGrid::for_output_points(cfg.output_points);
        let mut stage1 = Vec::new();
        let mut fan_in = latent_dim + 2;
        for (i, &w) in cfg.fold_hidden.iter().enumerate() {
            stage1.push(Dense::new(store, &format!("head.fold1_{i}"), fan_in, w, rng));
            fan_in = w;
        }
        stage1.push(Dense::new(store, "head.fold1_out", fan_in, 3, rng));
        let mut stage2 = Vec::new();
        let mut fan_in = latent_dim + 3;
        for (i, &w) in cfg.fold_hidden.iter().enumerate() {
            stage2.push(Dense::new(store, &format!("head.fold2_{i}"), fan_in, w, rng));
            fan_in = w;
        }
        stage2.push(Dense::new(store, "head.fold2_out", fan_in, 3, rng));
        FoldHead {
            stage1,
            stage2,
            grid,
            cfg,
        }
    }

    fn run_stage(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        layers: &[Dense],
        mut x: NodeId,
    ) -> Result<NodeId> {
        let last = layers.len() - 1;
        for (i, layer) in layers.iter().enumerate() {
            x = layer.forward(tape, store, x)?;
            if i < last {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    /// Folded M x 3 point matrix for the example at `row` of the [B, D]
    /// latent node.
    pub fn forward_example(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: NodeId,
        row: usize,
    ) -> Result<NodeId> {
        let g = self.grid.coords.len();
        let zi = tape.gather_rows(z, &[row]);
        let zrep = tape.repeat_row(zi, g);
        let mut grid = Matrix::zeros((g, 2));
        for (r, c) in self.grid.coords.iter().enumerate() {
            grid[[r, 0]] = c[0];
            grid[[r, 1]] = c[1];
        }
        let grid_node = tape.constant(grid);
        let in1 = tape.concat_cols(zrep, grid_node);
        let folded1 = self.run_stage(tape, store, &self.stage1, in1)?;
        let in2 = tape.concat_cols(zrep, folded1);
        let folded2 = self.run_stage(tape, store, &self.stage2, in2)?;
        let m = self.cfg.output_points;
        if m < g {
            let keep: Vec<usize> = (0..m).collect();
            Ok(tape.gather_rows(folded2, &keep))
        } else {
            Ok(folded2)
        }
    }

    /// Completion for one latent, eval mode.
    pub fn eval(&self, store: &ParamStore, z: &[f64]) -> Result<PointCloud> {
        let mut tape = Tape::new();
        let zn = tape.constant(row_matrix(z));
        let out = self.forward_example(&mut tape, store, zn, 0)?;
        let m = tape.value(out);
        Ok(PointCloud::new(
            (0..m.nrows()).map(|r| [m[[r, 0]], m[[r, 1]], m[[r, 2]]]).collect(),
        ))
    }
}

fn row_matrix(z: &[f64]) -> Matrix {
    Matrix::from_shape_vec((1, z.len()), z.to_vec()).unwrap()
}

fn no_rng() -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(0)
}
