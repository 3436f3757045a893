use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gnnkit::bench::{ablation_suite, grid_search, RunReport, SearchSpace, SweepOptions, Trainer, TrialLedger};
use gnnkit::checkpoint::{self, Checkpoint};
use gnnkit::config::{preset, presets, RunConfig};
use gnnkit::data::convert::{from_tsv_dir, read_linqs, to_tsv_dir};
use gnnkit::data::{
    load_dataset, planetoid_split, split_labeled, write_dataset_with, Dataset, FeatureFormat, FeatureNorm,
};
use gnnkit::layers::{LayerKind, NormKind, Propagation};
use gnnkit::model::{model_forward, ModelConfig};
use gnnkit::tensor::{Activation, Mode};
use gnnkit::train::{evaluate, run_seeds, Metric, MultiSeedResult, TrainConfig};
use gnnkit::{gradsuite, Error, Result};

#[derive(Parser)]
#[command(
    name = "gnnkit",
    version,
    about = "Train and benchmark GCN, GraphSAGE and GAT node classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration over one or more seeds.
    Train(TrainArgs),
    /// Grid search over a hyperparameter space.
    Sweep(SweepArgs),
    /// Component ablations and a depth sweep around a base configuration.
    Ablate(AblateArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Convert between NGDF and other layouts.
    Convert(ConvertArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// List or export the shipped presets.
    Presets(PresetsArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// NGDF dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Start from a named preset; other flags override it.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    model: Option<LayerKind>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    norm: Option<NormKind>,
    /// Linear residual connection (`--residual` or `--residual=false`).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    residual: Option<bool>,
    /// Sum all layer outputs before the head.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    jk: Option<bool>,
    /// GAT attention heads.
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Stop after this many epochs without validation improvement.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    feature_norm: Option<FeatureNorm>,
    /// Number of seeds: `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    /// Preset (or built-in defaults) with the explicit flags applied.
    fn resolve(&self, ds: &Dataset, default_epochs: Option<usize>) -> Result<RunConfig> {
        let mut cfg = match &self.preset {
            Some(name) => {
                let p = preset(name)?;
                if p.dataset != ds.name() {
                    eprintln!("note: preset {name} targets {}, dataset is {}", p.dataset, ds.name());
                }
                p.resolve(ds, self.seed, self.seeds)
            }
            None => RunConfig {
                model: ModelConfig {
                    dropout: 0.5,
                    ..ModelConfig::new(LayerKind::Gcn, ds.feature_dim(), 64, ds.head_dim(), 2)
                },
                train: TrainConfig {
                    lr: 0.01,
                    seed: self.seed,
                    ..TrainConfig::default()
                },
                feature_norm: FeatureNorm::None,
                seeds: self.seeds,
            },
        };
        if let Some(e) = default_epochs {
            cfg.train.max_epochs = e;
        }
        let m = &mut cfg.model;
        m.kind = self.model.unwrap_or(m.kind);
        m.num_layers = self.layers.unwrap_or(m.num_layers);
        m.hidden_dim = self.hidden.unwrap_or(m.hidden_dim);
        m.dropout = self.dropout.unwrap_or(m.dropout);
        m.norm = self.norm.unwrap_or(m.norm);
        m.residual = self.residual.unwrap_or(m.residual);
        m.jk = self.jk.unwrap_or(m.jk);
        m.heads = self.heads.unwrap_or(if m.kind == LayerKind::Gat { m.heads } else { 1 });
        m.activation = Activation::Relu;
        let t = &mut cfg.train;
        t.lr = self.lr.unwrap_or(t.lr);
        t.max_epochs = self.epochs.unwrap_or(t.max_epochs);
        t.weight_decay = self.weight_decay.unwrap_or(t.weight_decay);
        t.patience = self.patience.or(t.patience);
        cfg.feature_norm = self.feature_norm.unwrap_or(cfg.feature_norm);
        let cfg = cfg.for_dataset(ds);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Result JSON path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Save the best-validation parameters of the first seed.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Search space as JSON (default: the standard grid).
    #[arg(long)]
    space: Option<PathBuf>,
    /// Standard grid with depths 12, 15 and 20 added.
    #[arg(long)]
    heterophilous: bool,
    /// Train only this many configurations, sampled from the grid.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value_t = 0)]
    sample_seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Trial ledger (default: `<out>.ledger.jsonl`).
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// Result table path; a `.csv` twin is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Depths for the depth sweep.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
    depths: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// Result path; `.components.csv` and `.depth.csv` twins are written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SourceFormat {
    Ngdf,
    Tsv,
    Linqs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TargetFormat {
    Ngdf,
    Tsv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FeatureFile {
    Bin,
    #[value(name = "bin.gz")]
    BinGz,
    Tsv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitKind {
    /// `--per-class` training nodes per class, then validation and test.
    Planetoid,
    /// Random split of the labeled nodes by `--ratios`.
    Random,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long, value_enum)]
    from: SourceFormat,
    #[arg(long, value_enum, default_value = "ngdf")]
    to: TargetFormat,
    /// Source directory. For `linqs` it holds `<name>.content` and `<name>.cites`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value = "accuracy")]
    metric: Metric,
    /// Class count (default: largest label + 1).
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    directed: bool,
    #[arg(long, value_enum, default_value = "bin")]
    features: FeatureFile,
    /// Split generated for `linqs` sources.
    #[arg(long, value_enum, default_value = "planetoid")]
    split: SplitKind,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, default_value_t = 20)]
    per_class: usize,
    #[arg(long, default_value_t = 500)]
    num_val: usize,
    #[arg(long, default_value_t = 1000)]
    num_test: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.6,0.2,0.2")]
    ratios: Vec<f64>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print every case, not only failures.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct PresetsArgs {
    /// Print one preset as JSON.
    #[arg(long)]
    show: Option<String>,
    /// Write every preset to `<dir>/<name>.json`.
    #[arg(long)]
    write: Option<PathBuf>,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn summary(what: &str, r: &MultiSeedResult) {
    eprintln!(
        "{what}: test {:.4} ± {:.4}  val {:.4} ± {:.4}  ({} seeds, {:.1}s)",
        r.test_mean,
        r.test_std,
        r.val_mean,
        r.val_std,
        r.runs.len(),
        r.seconds()
    );
}

fn train(a: TrainArgs) -> Result<()> {
    let ds = load_dataset(&a.model.data)?;
    let cfg = a.model.resolve(&ds, None)?;
    let ds = ds.with_feature_norm(cfg.feature_norm);
    let start = Instant::now();
    let mut outputs = run_seeds(&ds, &cfg.model, &cfg.train, cfg.seeds)?;
    let result = MultiSeedResult::from_runs(outputs.iter().map(|o| o.result.clone()).collect());
    summary(ds.name(), &result);
    let report = RunReport::new(&ds, &cfg, &result, start.elapsed().as_secs_f64());
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(p) => write_file(p, &json)?,
        None => print!("{json}"),
    }
    if let Some(p) = &a.checkpoint {
        checkpoint::save(
            p,
            &Checkpoint {
                model: cfg.model.clone(),
                feature_norm: cfg.feature_norm,
                params: outputs.swap_remove(0).params,
            },
        )?;
    }
    Ok(())
}

fn open_ledger(explicit: &Option<PathBuf>, out: &Path) -> Result<TrialLedger> {
    TrialLedger::open(explicit.clone().unwrap_or_else(|| sibling(out, ".ledger.jsonl")))
}

fn sweep(a: SweepArgs) -> Result<()> {
    let ds = load_dataset(&a.model.data)?;
    // sweeps use the global epoch cap, not the per-dataset preset value
    let base = a.model.resolve(&ds, Some(TrainConfig::default().max_epochs))?;
    let space = match &a.space {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None if a.heterophilous => SearchSpace::heterophilous(),
        None => SearchSpace::default(),
    };
    space.validate()?;
    let size = space.size();
    eprintln!(
        "search space: {size} configurations; running {}",
        a.budget.map_or(size, |b| b.min(size))
    );
    let mut ledger = open_ledger(&a.ledger, &a.out)?;
    if !ledger.is_empty() {
        eprintln!("ledger holds {} finished trials", ledger.len());
    }
    let opts = SweepOptions {
        budget: a.budget,
        sample_seed: a.sample_seed,
        workers: a.workers,
    };
    let out = grid_search(&ds, &base, &space, &opts, &Trainer, &mut ledger)?;
    write_file(&a.out, &(out.table.to_json()? + "\n"))?;
    write_file(&sibling(&a.out, ".csv"), &out.table.to_csv())?;
    let failed = out.table.rows.iter().filter(|r| !r.is_ok()).count();
    eprintln!("{} trials, {failed} failed", out.table.rows.len());
    if let Some(i) = out.best {
        let r = &out.table.rows[i];
        eprintln!(
            "best by validation: {}  val {:.4}  test {:.4} ± {:.4}",
            r.label, r.val_mean, r.test_mean, r.test_std
        );
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let ds = load_dataset(&a.model.data)?;
    let base = a.model.resolve(&ds, None)?;
    let mut ledger = open_ledger(&a.ledger, &a.out)?;
    let out = ablation_suite(&ds, &base, &a.depths, a.workers, &Trainer, &mut ledger)?;
    let doc = serde_json::json!({
        "schema": "gnnkit.ablation/v1",
        "components": out.components,
        "depth": out.depth,
    });
    write_file(&a.out, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    write_file(&sibling(&a.out, ".components.csv"), &out.components.to_csv())?;
    write_file(&sibling(&a.out, ".depth.csv"), &out.depth.to_csv())?;
    for r in out.components.rows.iter().chain(&out.depth.rows) {
        if r.is_ok() {
            eprintln!(
                "{:<12} test {:.4} ± {:.4}  val {:.4}",
                r.label, r.test_mean, r.test_std, r.val_mean
            );
        } else {
            eprintln!("{:<12} {:?}", r.label, r.status);
        }
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ck = checkpoint::load(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?.with_feature_norm(ck.feature_norm);
    if ck.model.input_dim != ds.feature_dim() || ck.model.num_classes != ds.head_dim() {
        return Err(Error::input(format!(
            "checkpoint expects {} features and {} outputs; dataset has {} and {}",
            ck.model.input_dim,
            ck.model.num_classes,
            ds.feature_dim(),
            ds.head_dim()
        )));
    }
    let prop = Propagation::new(ck.model.kind, ds.graph())?;
    let logits = model_forward(
        &ck.params,
        &ck.model,
        &prop,
        ds.features(),
        Mode::Eval,
        &mut rand::thread_rng(),
    )?;
    let s = ds.split();
    let mut doc = serde_json::Map::new();
    doc.insert("metric".into(), serde_json::to_value(ds.metric())?);
    for (name, idx) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
        let v = evaluate(&logits, ds.labels(), idx, ds.metric())?;
        doc.insert(name.into(), v.into());
    }
    let json = serde_json::to_string_pretty(&doc)? + "\n";
    match &a.out {
        Some(p) => write_file(p, &json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn convert(a: ConvertArgs) -> Result<()> {
    let ds = match a.from {
        SourceFormat::Ngdf => load_dataset(&a.input)?,
        SourceFormat::Tsv => {
            let name = a.name.clone().unwrap_or_else(|| dir_name(&a.input));
            from_tsv_dir(&a.input, &name, a.metric, a.classes, a.directed)?
        }
        SourceFormat::Linqs => {
            let name = a.name.clone().unwrap_or_else(|| dir_name(&a.input));
            let raw = read_linqs(
                a.input.join(format!("{name}.content")),
                a.input.join(format!("{name}.cites")),
            )?;
            if raw.dangling_cites > 0 {
                eprintln!("skipped {} citations to nodes without content rows", raw.dangling_cites);
            }
            let classes = raw.class_names.len();
            let split = match a.split {
                SplitKind::Planetoid => {
                    planetoid_split(&raw.labels, classes, a.per_class, a.num_val, a.num_test, a.split_seed)?
                }
                SplitKind::Random => {
                    let [tr, va, te] = a.ratios[..] else {
                        return Err(Error::input("--ratios needs three values"));
                    };
                    split_labeled(&raw.labels, (tr, va, te), a.split_seed)?
                }
            };
            raw.into_dataset(&name, split)?
        }
    };
    match a.to {
        TargetFormat::Ngdf => {
            let format = match a.features {
                FeatureFile::Bin => FeatureFormat::Bin,
                FeatureFile::BinGz => FeatureFormat::BinGz,
                FeatureFile::Tsv => FeatureFormat::Tsv,
            };
            write_dataset_with(&ds, &a.out, format)?
        }
        TargetFormat::Tsv => to_tsv_dir(&ds, &a.out)?,
    }
    eprintln!(
        "{}: {} nodes, {} edges, {} features, {} classes",
        ds.name(),
        ds.num_nodes(),
        ds.edges().len(),
        ds.feature_dim(),
        ds.num_classes()
    );
    Ok(())
}

fn dir_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

/// Returns whether every case passed.
fn gradcheck(a: GradcheckArgs) -> Result<bool> {
    let start = Instant::now();
    let cases = gradsuite::run_suite(a.seed)?;
    let mut failed = 0;
    for c in &cases {
        if !c.passed() {
            failed += 1;
        }
        if a.verbose || !c.passed() {
            println!(
                "{} {:<40} max rel {:.2e}  checked {}  skipped {}",
                if c.passed() { "ok  " } else { "FAIL" },
                c.name,
                c.report.max_rel_error,
                c.report.checked,
                c.report.skipped
            );
        }
    }
    let worst = cases.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max);
    println!(
        "{} cases, {failed} failed, worst relative error {worst:.2e} (tolerance {:.0e}), {:.2}s",
        cases.len(),
        gradsuite::TOLERANCE,
        start.elapsed().as_secs_f64()
    );
    Ok(failed == 0)
}

fn list_presets(a: PresetsArgs) -> Result<()> {
    if let Some(name) = &a.show {
        println!("{}", serde_json::to_string_pretty(&preset(name)?)?);
        return Ok(());
    }
    if let Some(dir) = &a.write {
        for p in presets() {
            write_file(
                &dir.join(format!("{}.json", p.name)),
                &(serde_json::to_string_pretty(&p)? + "\n"),
            )?;
        }
        return Ok(());
    }
    let mut text = format!(
        "{:<22} {:>3} {:>4} {:>5} {:>7} {:>4} {:>6} {:>5} {:>8}\n",
        "name", "L", "dim", "drop", "lr", "norm", "epochs", "heads", "residual"
    );
    for p in presets() {
        text += &format!(
            "{:<22} {:>3} {:>4} {:>5} {:>7} {:>4} {:>6} {:>5} {:>8}\n",
            p.name,
            p.layers,
            p.hidden,
            p.dropout,
            p.lr,
            p.norm.name(),
            p.epochs,
            p.heads,
            p.residual
        );
    }
    // a closed pipe (`| head`) is not an error
    let _ = std::io::stdout().write_all(text.as_bytes());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Ablate(a) => ablate(a),
        Command::Eval(a) => eval(a),
        Command::Convert(a) => convert(a),
        Command::Gradcheck(a) => match gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
        Command::Presets(a) => list_presets(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
