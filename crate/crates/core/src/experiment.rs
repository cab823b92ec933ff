//! Experiment runner: configuration files, multi-seed dispatch and the
//! artifacts written by the `run`, `sweep-topology` and `sweep-quantization`
//! commands.
//!
//! Configuration files hold one `key = value` per line. `#` starts a
//! comment and lists are comma-separated. Every violation found in a file is
//! reported, and nothing is written unless the whole file is valid.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::baselines::BaselineSpec;
use crate::data::{self, Dataset, Partition};
use crate::graph::{Topology, TopologyKind};
use crate::plot::{line_chart, Series};
use crate::protocol::{
    run_simulation, Execution, GammaChoice, MetricsLog, ProtocolError, QuantizerChoice, SimulationConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("{}", .0.join("\n"))]
    Config(Vec<String>),
    #[error("{0}")]
    Runtime(String),
}

impl ExperimentError {
    /// 1 for configuration errors, 2 for faults during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 1,
            ExperimentError::Runtime(_) => 2,
        }
    }

    fn config(msg: impl Into<String>) -> Self {
        ExperimentError::Config(vec![msg.into()])
    }

    fn runtime(msg: impl std::fmt::Display) -> Self {
        ExperimentError::Runtime(msg.to_string())
    }
}

impl From<ProtocolError> for ExperimentError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Config(m) => ExperimentError::Config(vec![m]),
            other => ExperimentError::runtime(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Banana { path: PathBuf },
    CreditCard { path: PathBuf },
    Mnist { images: PathBuf, labels: PathBuf },
    /// Generated two half-moons.
    BananaSynthetic { samples: usize, noise: f64, seed: u64 },
    /// Generated pair of Gaussian clusters.
    Synthetic {
        samples: usize,
        dim: usize,
        separation: f64,
        seed: u64,
    },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset, data::DataError> {
        match self {
            DatasetSource::Banana { path } => data::load_banana(path),
            DatasetSource::CreditCard { path } => data::load_credit_card(path),
            DatasetSource::Mnist { images, labels } => data::load_mnist(images, labels),
            DatasetSource::BananaSynthetic { samples, noise, seed } => data::make_banana(*samples, *noise, *seed),
            DatasetSource::Synthetic {
                samples,
                dim,
                separation,
                seed,
            } => data::make_synthetic(*samples, *dim, *separation, *seed),
        }
    }

    fn paths(&self) -> Vec<&Path> {
        match self {
            DatasetSource::Banana { path } | DatasetSource::CreditCard { path } => vec![path],
            DatasetSource::Mnist { images, labels } => vec![images, labels],
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub simulation: SimulationConfig,
    pub dataset: DatasetSource,
    pub standardize: bool,
    pub baselines: Vec<BaselineSpec>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Quantization levels compared by the quantization sweep (identity is
    /// always added).
    pub levels: Vec<u32>,
    /// Keys that were set explicitly in the file.
    pub explicit: BTreeSet<String>,
}

const KEYS: &[&str] = &[
    "dataset",
    "data_path",
    "images_path",
    "labels_path",
    "samples",
    "noise",
    "input_dim",
    "separation",
    "data_seed",
    "standardize",
    "nodes",
    "rounds",
    "features",
    "eta",
    "gamma",
    "lambda",
    "sigmas",
    "quantizer",
    "topology",
    "topology_file",
    "execution",
    "seeds",
    "baselines",
    "levels",
    "out",
];

fn list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("bad list element `{s}`")))
        .collect()
}

fn parse_quantizer(v: &str) -> Result<QuantizerChoice, String> {
    match v.trim() {
        "identity" | "none" => Ok(QuantizerChoice::Identity),
        m => m
            .parse()
            .map(QuantizerChoice::Levels)
            .map_err(|_| format!("quantizer must be `identity` or a level count, got `{m}`")),
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses a configuration; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ExperimentError> {
        let mut errors = Vec::new();
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        let mut explicit = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                errors.push(format!("line {}: expected `key = value`", n + 1));
                continue;
            };
            let (k, v) = (k.trim().to_ascii_lowercase(), v.trim().to_string());
            if !KEYS.contains(&k.as_str()) {
                errors.push(format!("line {}: unknown key `{k}`", n + 1));
            } else if !explicit.insert(k.clone()) {
                errors.push(format!("line {}: duplicate key `{k}`", n + 1));
            } else {
                entries.push((n + 1, k, v));
            }
        }
        let get = |k: &str| entries.iter().find(|e| e.1 == k).map(|e| (e.0, e.2.as_str()));
        macro_rules! field {
            ($key:expr, $default:expr, $parse:expr) => {
                match get($key) {
                    None => $default,
                    Some((line, v)) => match $parse(v) {
                        Ok(x) => x,
                        Err(e) => {
                            errors.push(format!("line {line}: {}: {e}", $key));
                            $default
                        }
                    },
                }
            };
        }
        let num = |v: &str| v.parse::<f64>().map_err(|_| format!("`{v}` is not a number"));
        let int = |v: &str| v.parse::<usize>().map_err(|_| format!("`{v}` is not a nonnegative integer"));
        let uint = |v: &str| v.parse::<u64>().map_err(|_| format!("`{v}` is not a nonnegative integer"));
        let resolve = |v: &str| -> Result<PathBuf, String> {
            let p = PathBuf::from(v);
            Ok(if p.is_absolute() { p } else { base.join(p) })
        };

        let d = SimulationConfig::default();
        let mut sim = SimulationConfig {
            nodes: field!("nodes", d.nodes, int),
            rounds: field!("rounds", d.rounds, |v: &str| int(v).map(Some)),
            features: field!("features", d.features, int),
            eta: field!("eta", d.eta, num),
            gamma: field!("gamma", d.gamma, |v: &str| if v == "lemma" {
                Ok(GammaChoice::Lemma)
            } else {
                num(v).map(GammaChoice::Fixed)
            }),
            lambda: field!("lambda", d.lambda, num),
            sigmas: field!("sigmas", d.sigmas.clone(), list::<f64>),
            quantizer: field!("quantizer", d.quantizer, parse_quantizer),
            topology: field!("topology", d.topology, |v: &str| v.parse::<TopologyKind>()),
            custom_edges: None,
            seed: 0,
            execution: field!("execution", d.execution, |v: &str| match v {
                "sequential" => Ok(Execution::Sequential),
                "parallel" => Ok(Execution::Parallel),
                _ => Err(format!("execution must be `sequential` or `parallel`, got `{v}`")),
            }),
        };
        let topology_file = field!("topology_file", None, |v: &str| resolve(v).map(Some));
        if let Some(path) = &topology_file {
            match Topology::load(path) {
                Ok(t) => {
                    if explicit.contains("nodes") && sim.nodes != t.node_count() {
                        errors.push(format!(
                            "nodes = {} disagrees with the {} nodes of {}",
                            sim.nodes,
                            t.node_count(),
                            path.display()
                        ));
                    }
                    sim.nodes = t.node_count();
                    sim.topology = TopologyKind::Custom;
                    sim.custom_edges = Some(t.edges().to_vec());
                }
                Err(e) => errors.push(format!("topology_file {}: {e}", path.display())),
            }
        } else if sim.topology == TopologyKind::Custom {
            errors.push("topology = custom requires topology_file".into());
        }

        let data_seed = field!("data_seed", 0, uint);
        let dataset = match field!("dataset", "banana_synthetic".to_string(), |v: &str| Ok::<_, String>(v.to_string()))
            .as_str()
        {
            "banana" => DatasetSource::Banana {
                path: field!("data_path", PathBuf::new(), resolve),
            },
            "credit_card" => DatasetSource::CreditCard {
                path: field!("data_path", PathBuf::new(), resolve),
            },
            "mnist" => DatasetSource::Mnist {
                images: field!("images_path", PathBuf::new(), resolve),
                labels: field!("labels_path", PathBuf::new(), resolve),
            },
            "banana_synthetic" => DatasetSource::BananaSynthetic {
                samples: field!("samples", 5300, int),
                noise: field!("noise", 0.2, num),
                seed: data_seed,
            },
            "synthetic" => DatasetSource::Synthetic {
                samples: field!("samples", 2000, int),
                dim: field!("input_dim", 2, int),
                separation: field!("separation", 2.0, num),
                seed: data_seed,
            },
            other => {
                errors.push(format!(
                    "unknown dataset `{other}` (expected banana, credit_card, mnist, banana_synthetic or synthetic)"
                ));
                DatasetSource::BananaSynthetic {
                    samples: 0,
                    noise: 0.0,
                    seed: 0,
                }
            }
        };
        for p in dataset.paths() {
            if p.as_os_str().is_empty() {
                errors.push("dataset requires a file path (data_path, or images_path and labels_path)".into());
            } else if !p.is_file() {
                errors.push(format!("dataset file {} does not exist", p.display()));
            }
        }
        let config = ExperimentConfig {
            standardize: field!("standardize", true, |v: &str| v.parse::<bool>().map_err(|_| format!(
                "expected true or false, got `{v}`"
            ))),
            baselines: field!("baselines", vec![BaselineSpec::SingleKernel { sigma: 1.0 }, BaselineSpec::CompleteUnquantized], |v: &str| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty() && *s != "none")
                    .map(str::parse::<BaselineSpec>)
                    .collect::<Result<Vec<_>, _>>()
            }),
            seeds: field!("seeds", vec![0], list::<u64>),
            out: field!("out", base.join("out"), resolve),
            levels: field!("levels", vec![7, 15, 31], list::<u32>),
            simulation: sim,
            dataset,
            explicit,
        };
        errors.extend(config.violations());
        if errors.is_empty() {
            Ok(config)
        } else {
            Err(ExperimentError::Config(errors))
        }
    }

    /// Cross-field checks not covered by parsing.
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.simulation.violations();
        if self.seeds.is_empty() {
            out.push("seeds must list at least one seed".into());
        }
        let dim = 2 * self.simulation.features;
        if dim > 0 {
            for &m in &self.levels {
                if let Err(e) = QuantizerChoice::Levels(m).build(dim) {
                    out.push(format!("levels: {e}"));
                }
            }
        }
        out
    }

    /// Replaces the seed list.
    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Result<Self, ExperimentError> {
        if seeds.is_empty() {
            return Err(ExperimentError::config("seeds must list at least one seed"));
        }
        self.seeds = seeds;
        Ok(self)
    }

    pub fn with_out(mut self, out: PathBuf) -> Self {
        self.out = out;
        self
    }

    /// Loads the dataset and checks that it supplies enough rounds.
    pub fn prepare(&self) -> Result<Arc<Dataset>, ExperimentError> {
        let mut ds = self.dataset.load().map_err(|e| match e {
            data::DataError::InvalidParameters(m) => ExperimentError::config(m),
            other => ExperimentError::runtime(other),
        })?;
        if self.standardize {
            ds.standardize();
        }
        let available = ds.len() / self.simulation.nodes;
        if available == 0 {
            return Err(ExperimentError::config(format!(
                "dataset has {} samples, fewer than the {} nodes",
                ds.len(),
                self.simulation.nodes
            )));
        }
        if let Some(r) = self.simulation.rounds {
            if r > available {
                return Err(ExperimentError::config(format!(
                    "rounds = {r} exceeds the {available} samples available per node"
                )));
            }
        }
        Ok(Arc::new(ds))
    }
}

/// One named configuration run over every seed.
#[derive(Debug, Clone)]
pub struct Variant {
    pub name: String,
    /// File name stem; metrics go to `<stem>_<seed>.csv`.
    pub stem: String,
    pub config: SimulationConfig,
}

impl Variant {
    pub fn metrics_path(&self, out: &Path, seed: u64) -> PathBuf {
        out.join(format!("{}_{seed}.csv", self.stem))
    }
}

/// Runs every `(variant, seed)` pair, in parallel across pairs, and writes
/// each metrics CSV.
pub fn run_variants(
    variants: &[Variant],
    seeds: &[u64],
    dataset: &Arc<Dataset>,
    out: &Path,
) -> Result<(), ExperimentError> {
    let jobs: Vec<(usize, u64)> = (0..variants.len()).flat_map(|v| seeds.iter().map(move |&s| (v, s))).collect();
    jobs.par_iter().try_for_each(|&(v, seed)| -> Result<(), ExperimentError> {
        let variant = &variants[v];
        let part = Partition::new(dataset.clone(), variant.config.nodes, seed).map_err(ExperimentError::runtime)?;
        let cfg = SimulationConfig {
            seed,
            ..variant.config.clone()
        };
        let output = run_simulation(&cfg, &part)?;
        let path = variant.metrics_path(out, seed);
        let file = fs::File::create(&path).map_err(|e| ExperimentError::runtime(format!("{}: {e}", path.display())))?;
        output.metrics.write_csv(BufWriter::new(file))?;
        Ok(())
    })
}

/// Per-variant statistics re-derived from the emitted metrics files.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub name: String,
    pub final_losses: Vec<f64>,
    /// Average-loss curve averaged over seeds.
    pub mean_curve: Vec<f64>,
    /// Mean over seeds and nodes of the cumulative bits sent.
    pub mean_bits_per_node: f64,
}

impl VariantResult {
    pub fn mean_final_loss(&self) -> f64 {
        self.final_losses.iter().sum::<f64>() / self.final_losses.len() as f64
    }
}

pub fn collect_results(variants: &[Variant], seeds: &[u64], out: &Path) -> Result<Vec<VariantResult>, ExperimentError> {
    variants
        .iter()
        .map(|v| {
            let mut final_losses = Vec::new();
            let mut curve_sum: Vec<f64> = Vec::new();
            let mut bits = 0.0;
            for &seed in seeds {
                let path = v.metrics_path(out, seed);
                let file = fs::File::open(&path).map_err(|e| ExperimentError::runtime(format!("{}: {e}", path.display())))?;
                let log = MetricsLog::read_csv(std::io::BufReader::new(file))?;
                let curve = log.average_loss_curve();
                final_losses.push(*curve.last().ok_or_else(|| ExperimentError::runtime(format!("{} is empty", path.display())))?);
                if curve_sum.is_empty() {
                    curve_sum = vec![0.0; curve.len()];
                }
                for (a, b) in curve_sum.iter_mut().zip(&curve) {
                    *a += b;
                }
                let per_node = log.bits_per_node();
                bits += per_node.iter().sum::<u64>() as f64 / per_node.len().max(1) as f64;
            }
            let k = seeds.len() as f64;
            Ok(VariantResult {
                name: v.name.clone(),
                final_losses,
                mean_curve: curve_sum.into_iter().map(|c| c / k).collect(),
                mean_bits_per_node: bits / k,
            })
        })
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    fs::write(path, contents).map_err(|e| ExperimentError::runtime(format!("{}: {e}", path.display())))
}

fn write_curves(path: &Path, results: &[VariantResult]) -> Result<(), ExperimentError> {
    let mut s = String::from("t");
    for r in results {
        let _ = write!(s, ",{}", r.name);
    }
    s.push('\n');
    let len = results.iter().map(|r| r.mean_curve.len()).max().unwrap_or(0);
    for t in 0..len {
        let _ = write!(s, "{}", t + 1);
        for r in results {
            match r.mean_curve.get(t) {
                Some(v) => {
                    let _ = write!(s, ",{v}");
                }
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    write_file(path, &s)
}

fn plot(path: &Path, title: &str, results: &[VariantResult]) -> Result<(), ExperimentError> {
    let series: Vec<Series> = results.iter().map(|r| Series::new(&r.name, r.mean_curve.clone())).collect();
    write_file(path, &line_chart(title, "t", "average loss", &series))
}

fn seeds_line(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
}

fn create_out(out: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(out).map_err(|e| ExperimentError::runtime(format!("{}: {e}", out.display())))
}

/// Main configuration plus its baselines.
pub fn run_variants_of(config: &ExperimentConfig) -> Vec<Variant> {
    let sim = &config.simulation;
    let mut v = vec![Variant {
        name: format!("multi_kernel_{}", sim.topology),
        stem: "metrics".into(),
        config: sim.clone(),
    }];
    for b in &config.baselines {
        v.push(Variant {
            name: b.label(),
            stem: format!("metrics_{}", b.label()),
            config: b.apply(sim),
        });
    }
    v
}

/// Result of a command: the re-derived statistics and the summary text.
#[derive(Debug, Clone)]
pub struct CommandReport {
    pub results: Vec<VariantResult>,
    pub summary: String,
}

/// Runs the configured protocol and its baselines over all seeds. Writes
/// `metrics_<seed>.csv`, `metrics_<baseline>_<seed>.csv`, `curves.csv`,
/// `summary.txt` and `loss_curve.svg`.
pub fn cmd_run(config: &ExperimentConfig) -> Result<CommandReport, ExperimentError> {
    let dataset = config.prepare()?;
    let variants = run_variants_of(config);
    create_out(&config.out)?;
    run_variants(&variants, &config.seeds, &dataset, &config.out)?;
    let results = collect_results(&variants, &config.seeds, &config.out)?;

    let mut s = String::new();
    let _ = writeln!(s, "dataset: {} ({} samples)", dataset.name, dataset.len());
    let _ = writeln!(s, "seeds: {}", seeds_line(&config.seeds));
    let _ = writeln!(s, "final average loss (mean over seeds):");
    for r in &results {
        let _ = writeln!(s, "  {:<28} {:.6}", r.name, r.mean_final_loss());
    }
    let mut order: Vec<&VariantResult> = results.iter().collect();
    order.sort_by(|a, b| a.mean_final_loss().total_cmp(&b.mean_final_loss()));
    let _ = writeln!(
        s,
        "ordering: {}",
        order.iter().map(|r| r.name.as_str()).collect::<Vec<_>>().join(" < ")
    );
    let main = &results[0];
    for r in &results[1..] {
        let rel = (main.mean_final_loss() - r.mean_final_loss()) / r.mean_final_loss();
        let _ = writeln!(
            s,
            "{} vs {}: {} (relative difference {:+.4})",
            main.name,
            r.name,
            if main.mean_final_loss() < r.mean_final_loss() { "lower" } else { "not lower" },
            rel
        );
    }
    write_file(&config.out.join("summary.txt"), &s)?;
    write_curves(&config.out.join("curves.csv"), &results)?;
    plot(&config.out.join("loss_curve.svg"), "average loss", &results)?;
    Ok(CommandReport { results, summary: s })
}

/// Relative noise allowance used when reporting orderings.
pub const ORDER_GUARD: f64 = 0.01;

/// Runs the configuration on the complete graph, the ring and the path.
/// Unless set explicitly, the quantizer is the identity, `η = 0.1` and
/// `γ = 0.09`.
pub fn cmd_sweep_topology(config: &ExperimentConfig) -> Result<CommandReport, ExperimentError> {
    let mut base = config.simulation.clone();
    if !config.explicit.contains("quantizer") {
        base.quantizer = QuantizerChoice::Identity;
    }
    if !config.explicit.contains("eta") {
        base.eta = 0.1;
    }
    if !config.explicit.contains("gamma") {
        base.gamma = GammaChoice::Fixed(0.09);
    }
    base.custom_edges = None;
    base.validate()?;
    let dataset = config.prepare()?;
    let variants: Vec<Variant> = [TopologyKind::Complete, TopologyKind::Ring, TopologyKind::Path]
        .into_iter()
        .map(|k| Variant {
            name: k.to_string(),
            stem: format!("metrics_{k}"),
            config: SimulationConfig {
                topology: k,
                ..base.clone()
            },
        })
        .collect();
    create_out(&config.out)?;
    run_variants(&variants, &config.seeds, &dataset, &config.out)?;
    let results = collect_results(&variants, &config.seeds, &config.out)?;

    let mut s = String::new();
    let _ = writeln!(s, "dataset: {} ({} samples)", dataset.name, dataset.len());
    let _ = writeln!(s, "seeds: {}", seeds_line(&config.seeds));
    let _ = writeln!(s, "eta = {}, gamma = {:?}, quantizer = {}", base.eta, base.gamma, base.quantizer);
    let _ = writeln!(s, "final average loss (mean over seeds):");
    for r in &results {
        let _ = writeln!(s, "  {:<10} {:.6}", r.name, r.mean_final_loss());
    }
    let m: Vec<f64> = results.iter().map(VariantResult::mean_final_loss).collect();
    let strict = m[0] <= m[1] && m[1] <= m[2];
    let guarded = (m[1] - m[0]) / m[0] >= -ORDER_GUARD && (m[2] - m[1]) / m[1] >= -ORDER_GUARD;
    let _ = writeln!(s, "ordering complete <= ring <= path: {}", if strict { "holds" } else { "violated" });
    let _ = writeln!(
        s,
        "ordering within {}% noise guard: {}",
        ORDER_GUARD * 100.0,
        if guarded { "holds" } else { "violated" }
    );
    write_file(&config.out.join("topology_summary.txt"), &s)?;
    write_curves(&config.out.join("topology_curves.csv"), &results)?;
    plot(&config.out.join("topology_curves.svg"), "average loss by topology", &results)?;
    Ok(CommandReport { results, summary: s })
}

/// Runs the configured quantization levels and the identity quantizer with
/// shared seeds; reports final-loss deviations from the identity run and
/// the bits each node sent.
pub fn cmd_sweep_quantization(config: &ExperimentConfig) -> Result<CommandReport, ExperimentError> {
    let dataset = config.prepare()?;
    let mut choices: Vec<QuantizerChoice> = config.levels.iter().map(|&m| QuantizerChoice::Levels(m)).collect();
    choices.push(QuantizerChoice::Identity);
    let variants: Vec<Variant> = choices
        .iter()
        .map(|&q| {
            let name = match q {
                QuantizerChoice::Identity => "identity".to_string(),
                QuantizerChoice::Levels(m) => format!("m{m}"),
            };
            Variant {
                stem: format!("metrics_{name}"),
                name,
                config: SimulationConfig {
                    quantizer: q,
                    ..config.simulation.clone()
                },
            }
        })
        .collect();
    create_out(&config.out)?;
    run_variants(&variants, &config.seeds, &dataset, &config.out)?;
    let results = collect_results(&variants, &config.seeds, &config.out)?;

    let identity = results.last().expect("identity variant");
    let mut s = String::new();
    let _ = writeln!(s, "dataset: {} ({} samples)", dataset.name, dataset.len());
    let _ = writeln!(s, "seeds: {}", seeds_line(&config.seeds));
    let _ = writeln!(s, "variant,mean_final_loss,max_abs_deviation_from_identity,bits_per_node");
    for r in &results {
        let dev = r
            .final_losses
            .iter()
            .zip(&identity.final_losses)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let _ = writeln!(s, "{},{},{dev:e},{}", r.name, r.mean_final_loss(), r.mean_bits_per_node);
    }
    write_file(&config.out.join("quantization_summary.txt"), &s)?;
    write_curves(&config.out.join("quantization_curves.csv"), &results)?;
    plot(&config.out.join("quantization_curves.svg"), "average loss by quantizer", &results)?;
    Ok(CommandReport { results, summary: s })
}
