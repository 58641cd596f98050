//! Command-line surface: train, eval, complete, simulate-partial, sweep and
//! report.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::data::{
    self, generate_procedural, load_completion_pairs, load_xyz_dir, make_completion_pairs,
    ProceduralShapeSpec, Sample, ShapeFamily,
};
use crate::geometry::simulate_plane_cut;
use crate::heads::Task;
use crate::io::{read_xyz, write_xyz};
use crate::pipeline::{
    self, complete_cloud, complete_diverse, evaluate_classification, evaluate_completion,
    evaluate_segmentation, loss_curve_csv, sweep_csv, Aggregation, Metrics, Model, TrainConfig,
};
use crate::{Error, Result};

const TOY_POINTS: usize = 256;
const TOY_JITTER: f64 = 0.01;
const TOY_TRAIN_PER_CLASS: usize = 100;
const TOY_TEST_PER_CLASS: usize = 30;

#[derive(Parser)]
#[command(name = "psv", version, about = "Point-set voting for partial point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus the loss curve.
    Train {
        /// classify | segment | complete (may also come from the config file)
        #[arg(long)]
        task: Option<String>,
        /// Dataset directory or a toy:// URI
        #[arg(long)]
        data: String,
        /// key=value config file overriding the defaults
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for model.ckpt and loss.csv
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint and emit a metrics CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: String,
        /// Plane-cut each cloud before evaluation (classification)
        #[arg(long)]
        partial: bool,
        /// Number of votes at inference (default: all)
        #[arg(long)]
        votes_test: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the CSV here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Complete a partial cloud with a trained completion model.
    Complete {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input XYZ file
        #[arg(long)]
        input: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Write this many interpolated completions instead of one
        #[arg(long)]
        diverse: Option<usize>,
        /// Vote whose single-vote optimum anchors t=1
        #[arg(long, default_value_t = 0)]
        vote_index: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Plane-cut XYZ files into simulated partial clouds.
    SimulatePartial {
        /// Input XYZ file or directory of XYZ files
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        min_points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Accuracy over a (vote count x aggregation) grid.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: String,
        /// Comma-separated vote counts, e.g. 1,2,4,8,16
        #[arg(long)]
        votes: String,
        /// Comma-separated aggregations from voting|max|mean
        #[arg(long, default_value = "voting,max,mean")]
        aggregations: String,
        #[arg(long)]
        partial: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a metrics or sweep CSV into plot-ready two-column files.
    Report {
        /// Input CSV (metrics or sweep format)
        #[arg(long)]
        input: PathBuf,
        /// Output directory for the curve files
        #[arg(long)]
        out: PathBuf,
    },
}

/// Run the CLI; returns the process exit code (0 success, 2 validation,
/// 3 task mismatch, 4 numerical failure).
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::TaskMismatch(_) => 3,
                Error::Numerical(_) => 4,
                _ => 2,
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train {
            task,
            data,
            config,
            out,
            seed,
        } => cmd_train(task.as_deref(), &data, config.as_deref(), &out, seed),
        Command::Eval {
            checkpoint,
            data,
            partial,
            votes_test,
            seed,
            out,
        } => cmd_eval(&checkpoint, &data, partial, votes_test, seed, out.as_deref()),
        Command::Complete {
            checkpoint,
            input,
            out,
            diverse,
            vote_index,
            seed,
        } => cmd_complete(&checkpoint, &input, &out, diverse, vote_index, seed),
        Command::SimulatePartial {
            input,
            out,
            min_points,
            seed,
        } => cmd_simulate_partial(&input, &out, min_points, seed),
        Command::Sweep {
            checkpoint,
            data,
            votes,
            aggregations,
            partial,
            seed,
            out,
        } => cmd_sweep(&checkpoint, &data, &votes, &aggregations, partial, seed, &out),
        Command::Report { input, out } => cmd_report(&input, &out),
    }
}

/// Which split of a dataset URI to materialize.
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

fn toy_split_seed(split: Split, seed: u64) -> u64 {
    match split {
        Split::Train => seed.wrapping_mul(2).wrapping_add(1),
        Split::Test => seed.wrapping_mul(2).wrapping_add(0x5eed),
    }
}

/// Resolve a dataset argument: `toy://shapes5`, `toy://shapes2`,
/// `toy://cylinder` (procedural, split by `split` and `seed`) or a
/// directory-per-class tree of XYZ files.
pub fn load_dataset(uri: &str, split: Split, seed: u64) -> Result<(Vec<Sample>, Vec<String>)> {
    if let Some(name) = uri.strip_prefix("toy://") {
        let families: Vec<ShapeFamily> = match name {
            "shapes5" => data::toy_families(),
            "shapes2" => {
                let all = data::toy_families();
                vec![all[0], all[3]] // box and sphere
            }
            "cylinder" => vec![data::toy_families()[2]],
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown toy dataset '{other}' (expected shapes5, shapes2 or cylinder)"
                )))
            }
        };
        let n = match split {
            Split::Train => TOY_TRAIN_PER_CLASS,
            Split::Test => TOY_TEST_PER_CLASS,
        };
        let gen_seed = toy_split_seed(split, seed);
        let mut samples = Vec::new();
        for (label, family) in families.iter().enumerate() {
            let spec = ProceduralShapeSpec {
                family: *family,
                points: TOY_POINTS,
                jitter_sigma: TOY_JITTER,
            };
            samples.extend(generate_procedural(&spec, n, label as u32, gen_seed)?);
        }
        let names = families.iter().map(|f| f.name().to_string()).collect();
        Ok((samples, names))
    } else {
        let root = Path::new(uri);
        if !root.is_dir() {
            return Err(Error::InvalidArgument(format!(
                "dataset directory '{uri}' does not exist"
            )));
        }
        load_xyz_dir(root)
    }
}

fn cmd_train(
    task_flag: Option<&str>,
    data: &str,
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let config_text = match config {
        Some(path) => std::fs::read_to_string(path)?,
        None => String::new(),
    };
    let config_has_task = config_text.lines().any(|l| {
        l.split_once('=')
            .map_or(false, |(k, _)| k.trim() == "task")
    });
    let task = match task_flag {
        Some(t) => Task::parse(t)?,
        None if config_has_task => Task::Classify, // overwritten by apply_text
        None => {
            return Err(Error::Config(
                "missing config key 'task' (pass --task or set task= in the config file)".into(),
            ))
        }
    };
    let mut cfg = TrainConfig::toy(task);
    cfg.apply_text(&config_text)?;
    if let Some(t) = task_flag {
        cfg.task = Task::parse(t)?;
        cfg.head.task = cfg.task;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if cfg.task == Task::Segment && cfg.head.n_parts < 2 {
        return Err(Error::Config("segmentation needs n_parts >= 2".into()));
    }

    let (samples, class_names) = load_dataset(data, Split::Train, cfg.seed)?;
    let outcome = pipeline::train(&cfg, &samples)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("loss.csv"), loss_curve_csv(&outcome.loss_curve))?;
    let metrics_text = format!(
        "final_loss,{:.6}\nclasses,{}\n",
        outcome.loss_curve.last().copied().unwrap_or(f64::NAN),
        class_names.join(";")
    );
    outcome.model.save(
        &out.join("model.ckpt"),
        cfg.epochs as u32,
        &metrics_text,
        Some(&outcome.optimizer),
    )?;
    println!(
        "trained {} epochs, final loss {:.6}, checkpoint at {}",
        cfg.epochs,
        outcome.loss_curve.last().copied().unwrap_or(f64::NAN),
        out.join("model.ckpt").display()
    );
    Ok(())
}

fn eval_metrics(
    model: &Model,
    data: &str,
    partial: bool,
    votes_test: Option<usize>,
    seed: u64,
) -> Result<Metrics> {
    match model.cfg.task {
        Task::Classify => {
            let (samples, names) = load_dataset(data, Split::Test, seed)?;
            evaluate_classification(model, &samples, &names, votes_test, partial, seed)
        }
        Task::Segment => {
            let (samples, names) = load_dataset(data, Split::Test, seed)?;
            evaluate_segmentation(model, &samples, &names, votes_test, seed)
        }
        Task::Complete => {
            let (pairs, names) = load_completion_dataset(data, Split::Test, seed)?;
            evaluate_completion(model, &pairs, &names, votes_test, seed)
        }
    }
}

/// Completion datasets: toy URIs get plane-cut pairs generated; directories
/// must hold `<stem>_partial.xyz` / `<stem>_complete.xyz` files.
pub fn load_completion_dataset(
    uri: &str,
    split: Split,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<String>)> {
    if uri.starts_with("toy://") {
        let (samples, names) = load_dataset(uri, split, seed)?;
        let pairs = make_completion_pairs(&samples, 32, toy_split_seed(split, seed))?;
        Ok((pairs, names))
    } else {
        let root = Path::new(uri);
        if !root.is_dir() {
            return Err(Error::InvalidArgument(format!(
                "dataset directory '{uri}' does not exist"
            )));
        }
        Ok((load_completion_pairs(root)?, vec!["all".to_string()]))
    }
}

fn cmd_eval(
    checkpoint: &Path,
    data: &str,
    partial: bool,
    votes_test: Option<usize>,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let (model, _) = Model::load(checkpoint)?;
    let metrics = eval_metrics(&model, data, partial, votes_test, seed)?;
    let csv = metrics.to_csv();
    print!("{csv}");
    if let Some(path) = out {
        std::fs::write(path, &csv)?;
    }
    Ok(())
}

fn cmd_complete(
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    diverse: Option<usize>,
    vote_index: usize,
    seed: u64,
) -> Result<()> {
    let (model, _) = Model::load(checkpoint)?;
    let cloud = read_xyz(input)?;
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cloud".into());
    std::fs::create_dir_all(out)?;
    match diverse {
        None => {
            let completed = complete_cloud(&model, &cloud, seed)?;
            let path = out.join(format!("{stem}_completed.xyz"));
            write_xyz(&path, &completed)?;
            println!("wrote {}", path.display());
        }
        Some(k) => {
            let clouds = complete_diverse(&model, &cloud, vote_index, k, seed)?;
            for (i, c) in clouds.iter().enumerate() {
                let t = i as f64 / (k - 1).max(1) as f64;
                let path = out.join(format!("{stem}_t{t:.2}.xyz"));
                write_xyz(&path, c)?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn cmd_simulate_partial(input: &Path, out: &Path, min_points: usize, seed: u64) -> Result<()> {
    let files: Vec<PathBuf> = if input.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(input)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map_or(false, |e| e == "xyz"))
            .collect();
        v.sort();
        v
    } else {
        vec![input.to_path_buf()]
    };
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no .xyz files under {}",
            input.display()
        )));
    }
    std::fs::create_dir_all(out)?;
    let mut sidecar = String::from("file,nx,ny,nz\n");
    for (i, path) in files.iter().enumerate() {
        let cloud = read_xyz(path)?;
        let (partial, plane) = simulate_plane_cut(&cloud, min_points, seed.wrapping_add(i as u64))?;
        let stem = path.file_stem().unwrap().to_string_lossy();
        let name = format!("{stem}_partial.xyz");
        write_xyz(&out.join(&name), &partial)?;
        sidecar.push_str(&format!(
            "{name},{:.6},{:.6},{:.6}\n",
            plane.normal[0], plane.normal[1], plane.normal[2]
        ));
    }
    std::fs::write(out.join("planes.csv"), sidecar)?;
    println!("wrote {} partial clouds to {}", files.len(), out.display());
    Ok(())
}

fn cmd_sweep(
    checkpoint: &Path,
    data: &str,
    votes: &str,
    aggregations: &str,
    partial: bool,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let (model, _) = Model::load(checkpoint)?;
    let vote_counts: Vec<usize> = votes
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("invalid vote count '{v}'")))
        })
        .collect::<Result<_>>()?;
    let aggs: Vec<Aggregation> = aggregations
        .split(',')
        .map(|a| Aggregation::parse(a.trim()))
        .collect::<Result<_>>()?;
    let (samples, _) = load_dataset(data, Split::Test, seed)?;
    let rows = pipeline::sweep_votes(&model, &samples, &vote_counts, &aggs, partial, seed)?;
    let csv = sweep_csv(&rows);
    print!("{csv}");
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(out, csv)?;
    Ok(())
}

fn cmd_report(input: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(input)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: input.to_path_buf(),
        line: 1,
        message: "empty CSV".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    std::fs::create_dir_all(out)?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: input.to_path_buf(),
        line,
        message,
    };
    if cols.len() == 3 && cols[0] == "votes" {
        // sweep format: one curve per aggregation
        let metric = cols[2];
        let mut curves: Vec<(String, String)> = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(parse_err(i + 1, format!("expected 3 fields, got {}", parts.len())));
            }
            let votes: usize = parts[0]
                .parse()
                .map_err(|_| parse_err(i + 1, format!("invalid vote count '{}'", parts[0])))?;
            let value: f64 = parts[2]
                .parse()
                .map_err(|_| parse_err(i + 1, format!("invalid value '{}'", parts[2])))?;
            let curve = match curves.iter_mut().find(|(name, _)| name == parts[1]) {
                Some((_, body)) => body,
                None => {
                    curves.push((parts[1].to_string(), format!("votes,{metric}\n")));
                    &mut curves.last_mut().unwrap().1
                }
            };
            curve.push_str(&format!("{votes},{value:.6}\n"));
        }
        for (name, body) in &curves {
            std::fs::write(out.join(format!("{name}.csv")), body)?;
        }
        println!("wrote {} curve files to {}", curves.len(), out.display());
        Ok(())
    } else if cols.len() == 2 {
        // metrics format: one indexed curve
        let metric = cols[1];
        let mut body = format!("index,{metric}\n");
        let mut rows = 0usize;
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 2 {
                return Err(parse_err(i + 1, format!("expected 2 fields, got {}", parts.len())));
            }
            let value: f64 = parts[1]
                .parse()
                .map_err(|_| parse_err(i + 1, format!("invalid value '{}'", parts[1])))?;
            body.push_str(&format!("{rows},{value:.6}\n"));
            rows += 1;
        }
        std::fs::write(out.join(format!("{metric}.csv")), body)?;
        println!("wrote 1 curve file to {}", out.display());
        Ok(())
    } else {
        Err(parse_err(1, format!("unrecognized header '{header}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_uris_resolve() {
        let (s5, n5) = load_dataset("toy://shapes5", Split::Test, 0).unwrap();
        assert_eq!(s5.len(), 5 * TOY_TEST_PER_CLASS);
        assert_eq!(n5.len(), 5);
        let (s2, n2) = load_dataset("toy://shapes2", Split::Test, 0).unwrap();
        assert_eq!(s2.len(), 2 * TOY_TEST_PER_CLASS);
        assert_eq!(n2, vec!["box", "sphere"]);
        let (sc, _) = load_dataset("toy://cylinder", Split::Train, 0).unwrap();
        assert_eq!(sc.len(), TOY_TRAIN_PER_CLASS);
        assert!(load_dataset("toy://nope", Split::Test, 0).is_err());
    }

    #[test]
    fn toy_splits_are_disjoint_and_deterministic() {
        let (a, _) = load_dataset("toy://shapes2", Split::Train, 3).unwrap();
        let (b, _) = load_dataset("toy://shapes2", Split::Train, 3).unwrap();
        let (t, _) = load_dataset("toy://shapes2", Split::Test, 3).unwrap();
        assert_eq!(a[0].cloud.points, b[0].cloud.points);
        assert_ne!(a[0].cloud.points, t[0].cloud.points);
    }

    #[test]
    fn completion_toy_dataset_is_paired() {
        let (pairs, _) = load_completion_dataset("toy://shapes2", Split::Test, 1).unwrap();
        assert!(!pairs.is_empty());
        for p in &pairs {
            assert!(p.complete.is_some());
            assert!(p.cloud.len() < p.complete.as_ref().unwrap().len());
        }
    }
}
