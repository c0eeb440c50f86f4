use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use taskmod_core::eval::{compare_variants_with, evaluate, EvalSet, RetrievalReport, VariantSummary};
use taskmod_core::synthetic::expected_agreement;
use taskmod_core::train::train_model;
use taskmod_core::{build_variant, generate_dataset, Dataset, TaskModel, Variant};

use crate::checkpoint::{load_model, load_shared, save_model};
use crate::config::ExperimentConfig;
use crate::datafile::{read_dataset, write_dataset};
use crate::error::{AppError, AppResult};
use crate::report::{summary_text, write_compare_ucr, write_metrics, write_report, write_ucr};

#[derive(Debug, Parser)]
#[command(
    name = "taskmod",
    version,
    about = "Task-conditioned modulation experiments on synthetic attributes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration file (TOML).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Override a configuration key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset.
    Generate(Common),
    /// Train `train.variant` with the first seed.
    Train(Common),
    /// Evaluate a checkpoint on the held-out triplets.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to the final checkpoint of `train`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every configured variant for every seed.
    Compare(Common),
    /// Print a UCR matrix from a UCR CSV.
    UcrReport {
        #[command(flatten)]
        common: Common,
        /// Defaults to the UCR CSV written by `train`.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Defaults to the last epoch in the file.
        #[arg(long)]
        epoch: Option<usize>,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: &Command) -> AppResult<()> {
    match cmd {
        Command::Generate(c) => cmd_generate(&load(c)?),
        Command::Train(c) => cmd_train(&load(c)?),
        Command::Eval { common, checkpoint } => cmd_eval(&load(common)?, checkpoint.as_deref()),
        Command::Compare(c) => cmd_compare(&load(c)?),
        Command::UcrReport { common, input, epoch } => cmd_ucr_report(&load(common)?, input.as_deref(), *epoch),
    }
}

fn load(c: &Common) -> AppResult<ExperimentConfig> {
    ExperimentConfig::load(&c.config, &c.overrides)
}

fn mkdir(path: &Path) -> AppResult<()> {
    fs::create_dir_all(path).map_err(|e| AppError::io(path, e))
}

pub fn train_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("train")
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("checkpoint_epoch{epoch:04}.bin"))
}

fn eval_set(cfg: &ExperimentConfig, ds: &Dataset) -> AppResult<EvalSet> {
    Ok(EvalSet::held_out(
        ds,
        cfg.tasks(),
        cfg.train.eval_triplets.max(1),
        cfg.train.eval_seed,
    )?)
}

fn write_eval_triplets(path: &Path, hash: &str, eval: &EvalSet) -> AppResult<()> {
    let mut text = format!("# config_hash={hash}\ntask,anchor,positive,negative\n");
    for b in &eval.per_task {
        for t in &b.entries {
            text.push_str(&format!("{},{},{},{}\n", t.task, t.anchor, t.positive, t.negative));
        }
    }
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

fn cmd_generate(cfg: &ExperimentConfig) -> AppResult<()> {
    let spec = cfg.attribute_spec();
    let ds = generate_dataset(&spec)?;
    mkdir(&cfg.output_dir)?;
    let path = cfg.dataset_path();
    write_dataset(&path, &ds)?;
    let eval = eval_set(cfg, &ds)?;
    write_eval_triplets(&cfg.output_dir.join("eval_triplets.csv"), &cfg.hash(), &eval)?;
    println!(
        "wrote {} ({} samples, {} attributes)",
        path.display(),
        ds.len(),
        ds.task_count()
    );
    for t in 0..ds.task_count() {
        let ones = (0..ds.len()).filter(|&s| ds.label(s, t) == 1).count();
        println!("attribute {t}: positive rate {:.4}", ones as f64 / ds.len() as f64);
    }
    for i in 0..ds.task_count() {
        for j in i + 1..ds.task_count() {
            println!(
                "pair ({i},{j}): agreement {:.4}, expected {:.4}",
                ds.agreement_rate(i, j),
                expected_agreement(spec.correlation_at(i, j))
            );
        }
    }
    Ok(())
}

fn load_dataset(cfg: &ExperimentConfig) -> AppResult<Dataset> {
    let path = cfg.dataset_path();
    if !path.exists() {
        return Err(AppError::Config(format!(
            "dataset {} not found; run `generate` first",
            path.display()
        )));
    }
    let ds = read_dataset(&path)?;
    if ds.spec != cfg.attribute_spec() {
        return Err(AppError::Config(format!(
            "dataset {} was generated from a different [data] section",
            path.display()
        )));
    }
    Ok(ds)
}

/// Loads the shared parameters of only-mask models from the configured
/// checkpoint.
fn prepare(cfg: &ExperimentConfig, mut model: TaskModel) -> AppResult<TaskModel> {
    if model.variant() == Variant::OnlyMask {
        if let Some(p) = &cfg.train.init_checkpoint {
            load_shared(p, &mut model)?;
        }
    }
    Ok(model)
}

fn cmd_train(cfg: &ExperimentConfig) -> AppResult<()> {
    let ds = load_dataset(cfg)?;
    let variant = cfg.train_variant()?;
    let tc = cfg.train_config(variant);
    let hash = cfg.hash();
    let dir = train_dir(cfg);
    mkdir(&dir)?;
    let model = build_variant(&tc.arch, &tc.insertion, tc.variant, tc.tasks, tc.seed)?;
    let model = prepare(cfg, model)?;
    let (pool, _) = ds.split(tc.eval_seed);
    let eval = (tc.eval_triplets_per_task > 0)
        .then(|| eval_set(cfg, &ds))
        .transpose()?;
    let every = cfg.train.checkpoint_every;
    let epochs = tc.epochs;
    let mut io_err = None;
    let mut hook = |epoch: usize, m: &TaskModel| -> taskmod_core::Result<()> {
        if epoch == 0 || epoch == epochs || (every > 0 && epoch.is_multiple_of(every)) {
            if let Err(e) = save_model(&checkpoint_path(&dir, epoch), m) {
                io_err = Some(e);
                return Err(taskmod_core::Error::State("checkpoint write failed".to_string()));
            }
        }
        Ok(())
    };
    let result = train_model(model, &tc, &ds, &pool, eval.as_ref(), &mut hook);
    if let Some(e) = io_err {
        return Err(e);
    }
    let out = result?;
    save_model(&dir.join("final.bin"), &out.model)?;
    let label = variant.to_string();
    write_metrics(&dir.join("metrics.csv"), &hash, &label, &out.metrics)?;
    let ucr_path = dir.join("ucr.csv");
    match &out.ledger {
        Some(ledger) => write_ucr(&ucr_path, &hash, ledger, &out.epoch_batches)?,
        None => {
            if ucr_path.exists() {
                fs::remove_file(&ucr_path).map_err(|e| AppError::io(&ucr_path, e))?;
            }
        }
    }
    let counts = out.model.param_counts();
    println!(
        "trained {label} for {} steps ({} shared, {} task-specific parameters)",
        out.epoch_batches.last().map_or(0, |r| r.end),
        counts.shared,
        counts.task_specific
    );
    for m in out.metrics.iter().filter(|m| m.epoch == epochs) {
        let acc = m.accuracy.map_or("-".to_string(), |a| format!("{:.4}", a));
        println!("task {}: loss {:.4}, held-out accuracy {acc}", m.task, m.loss);
    }
    Ok(())
}

fn single_report(label: String, variant: Variant, seed: u64, model: &TaskModel, accuracy: Vec<f64>) -> RetrievalReport {
    RetrievalReport {
        variants: vec![VariantSummary {
            variant,
            label,
            seeds: vec![seed],
            per_seed: vec![accuracy],
            params: model.param_counts(),
            ucr: Vec::new(),
        }],
    }
}

fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> AppResult<()> {
    let ds = load_dataset(cfg)?;
    let variant = cfg.train_variant()?;
    let tc = cfg.train_config(variant);
    let path = checkpoint.map_or_else(|| train_dir(cfg).join("final.bin"), Path::to_path_buf);
    let mut model = build_variant(&tc.arch, &tc.insertion, tc.variant, tc.tasks, tc.seed)?;
    load_model(&path, &mut model)?;
    let accuracy = evaluate(&model, &ds, &eval_set(cfg, &ds)?)?;
    for (t, a) in accuracy.iter().enumerate() {
        println!("task {t}: accuracy {a:.4}");
    }
    let dir = cfg.output_dir.join("eval");
    mkdir(&dir)?;
    let report = single_report(variant.to_string(), variant, tc.seed, &model, accuracy);
    write_report(&dir.join("report.csv"), &cfg.hash(), &report)
}

fn cmd_compare(cfg: &ExperimentConfig) -> AppResult<()> {
    let ds = load_dataset(cfg)?;
    let configs = cfg.compare_configs()?;
    let eval = eval_set(cfg, &ds)?;
    let mut prep_err = None;
    let mut hook = |_: &str, _: &taskmod_core::TrainConfig, m: TaskModel| match prepare(cfg, m) {
        Ok(m) => Ok(m),
        Err(e) => {
            let msg = e.to_string();
            prep_err = Some(e);
            Err(taskmod_core::Error::State(msg))
        }
    };
    let result = compare_variants_with(&configs, &ds, &cfg.seeds, &eval, &mut hook);
    if let Some(e) = prep_err {
        return Err(e);
    }
    let report = result?;
    let hash = cfg.hash();
    let dir = cfg.output_dir.join("compare");
    mkdir(&dir)?;
    write_report(&dir.join("report.csv"), &hash, &report)?;
    write_compare_ucr(&dir.join("ucr.csv"), &hash, &report, cfg.train.epochs)?;
    let summary = summary_text(&hash, &report);
    let path = dir.join("summary.txt");
    fs::write(&path, &summary).map_err(|e| AppError::io(&path, e))?;
    print!("{summary}");
    Ok(())
}

fn cmd_ucr_report(cfg: &ExperimentConfig, input: Option<&Path>, epoch: Option<usize>) -> AppResult<()> {
    let path = input.map_or_else(|| train_dir(cfg).join("ucr.csv"), Path::to_path_buf);
    let file = fs::File::open(&path).map_err(|e| AppError::io(&path, e))?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let mut rows: Vec<(usize, usize, usize, Option<f64>)> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let parse = |k: usize| {
            field(k)
                .parse::<usize>()
                .map_err(|_| AppError::format(&path, format!("bad integer {:?}", field(k))))
        };
        let ucr = match field(3) {
            "" => None,
            s => Some(
                s.parse::<f64>()
                    .map_err(|_| AppError::format(&path, format!("bad ratio {s:?}")))?,
            ),
        };
        rows.push((parse(0)?, parse(1)?, parse(2)?, ucr));
    }
    let last = rows
        .iter()
        .map(|r| r.2)
        .max()
        .ok_or_else(|| AppError::format(&path, "no rows"))?;
    let epoch = epoch.unwrap_or(last);
    let tasks = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    let mut grid = vec![vec![None; tasks]; tasks];
    for &(i, j, _, u) in rows.iter().filter(|r| r.2 == epoch) {
        grid[i][j] = u;
        grid[j][i] = u;
    }
    println!("UCR at epoch {epoch}");
    print!("{:>6}", "");
    for j in 0..tasks {
        print!(" {:>7}", format!("t{j}"));
    }
    println!();
    for (i, row) in grid.iter().enumerate() {
        print!("{:>6}", format!("t{i}"));
        for (j, u) in row.iter().enumerate() {
            let cell = match (i == j, u) {
                (true, _) => "-".to_string(),
                (false, Some(u)) => format!("{:.1}%", 100.0 * u),
                (false, None) => "n/a".to_string(),
            };
            print!(" {cell:>7}");
        }
        println!();
    }
    Ok(())
}
