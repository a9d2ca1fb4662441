//! Batch command-line interface.
//!
//! Exit codes: 0 success, 2 usage, 3 validation, 4 constraint-data,
//! 5 persistence. Failures print one line `error[<category>]: <message>` on
//! stderr.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fs::File;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::gbdt::{load_model_file, save_model_file};
use crate::metrics::{category_adherence, product_metrics, Adherence, ProductMetrics};
use crate::panel::{load_panel_csvs, PanelDataset, PanelSchema, WeekGroup};
use crate::pipeline::{diagnose, predict_stages, run_pipeline, DiagnoseOptions, PipelineConfig, RunManifest};
use crate::scenario::{generate, read_truth, write_scenario, ScenarioConfig};

pub const MODEL_FILES: [&str; 3] = ["stage1.json", "stage2.json", "stage3.json"];
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "cascadeboost", version, about = "Three-stage constraint-aware boosting for cannibalization forecasting")]
struct Cli {
    /// Worker threads for split search (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cannibalization scenario.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides stage1_bias_injection.
        #[arg(long)]
        bias: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train all three stages and write models plus a run manifest.
    Train {
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict every row with all three stages.
    Predict {
        #[arg(long)]
        models: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against withheld truth.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Dataset supplying category totals; weekly truth sums are used otherwise.
        #[arg(long, num_args = 1..)]
        data: Vec<PathBuf>,
        /// Run manifest to attach the metrics to.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute the diagnostics report from persisted models.
    Diagnose {
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long)]
        models: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct TrainFlags {
    /// Flat key = value file; flags below override its unprefixed keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    min_child_weight: Option<f64>,
    #[arg(long)]
    min_gain: Option<f64>,
}

impl TrainFlags {
    fn pipeline_config(&self) -> Result<PipelineConfig<f64>> {
        let mut kv = match &self.config {
            Some(p) => KvConfig::load(existing(p)?)?,
            None => KvConfig::default(),
        };
        let mut set = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.set(k, v);
            }
        };
        set("seed", self.seed.map(|v| v.to_string()));
        set("num_rounds", self.rounds.map(|v| v.to_string()));
        set("max_depth", self.max_depth.map(|v| v.to_string()));
        set("learning_rate", self.learning_rate.map(|v| v.to_string()));
        set("lambda", self.lambda.map(|v| v.to_string()));
        set("min_child_weight", self.min_child_weight.map(|v| v.to_string()));
        set("min_gain", self.min_gain.map(|v| v.to_string()));
        PipelineConfig::from_kv(kv)
    }
}

/// Runs the CLI on `argv` (including the program name) and returns the exit code.
pub fn parse_and_dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error[usage]: --threads must be positive");
            return 2;
        }
        pool = pool.num_threads(t);
    }
    let result = match pool.build() {
        Ok(pool) => pool.install(|| dispatch(cli.command)),
        Err(e) => Err(Error::Usage(format!("cannot start thread pool: {e}"))),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let text = e.to_string();
            let prefix = format!("{}: ", e.category().replace('-', " "));
            let text = text.strip_prefix(&prefix).unwrap_or(&text);
            eprintln!("error[{}]: {text}", e.category());
            e.exit_code()
        }
    }
}

fn existing(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::Usage(format!("no such file: {}", path.display())))
    }
}

fn load_data(paths: &[PathBuf]) -> Result<PanelDataset<f64>> {
    for p in paths {
        existing(p)?;
    }
    load_panel_csvs(paths, &PanelSchema::default())
}

fn write_json<V: serde::Serialize>(value: &V, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Persistence(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(Error::io(path))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate { config, seed, bias, out } => {
            let mut kv = match &config {
                Some(p) => KvConfig::load(existing(p)?)?,
                None => KvConfig::default(),
            };
            if let Some(s) = seed {
                kv.set("seed", s);
            }
            if let Some(b) = bias {
                kv.set("stage1_bias_injection", b);
            }
            let cfg = ScenarioConfig::from_kv(kv)?;
            let scenario = generate::<f64>(&cfg)?;
            write_scenario(&scenario, &out)?;
            let echo = out.join("scenario.cfg");
            std::fs::write(&echo, cfg.to_kv().to_text()).map_err(Error::io(echo))
        }
        Command::Train { data, train, out } => {
            let cfg = train.pipeline_config()?;
            let dataset = load_data(&data)?;
            let run = run_pipeline(&dataset, &cfg)?;
            std::fs::create_dir_all(&out).map_err(Error::io(&out))?;
            for (name, fit) in MODEL_FILES.iter().zip([&run.stage1, &run.stage2, &run.stage3]) {
                save_model_file(&fit.model, &out.join(name))?;
            }
            let manifest = RunManifest::new(&cfg, &run, MODEL_FILES.map(String::from));
            write_json(&manifest, &out.join(MANIFEST_FILE))?;
            let echo = out.join("effective.cfg");
            std::fs::write(&echo, cfg.to_kv().to_text()).map_err(Error::io(echo))
        }
        Command::Predict { models, data, out } => {
            let dataset = load_data(&data)?;
            let [m1, m2, m3] = load_models(&models)?;
            let outputs = predict_stages(&dataset, [&m1, &m2, &m3])?;
            let file = File::create(&out).map_err(Error::io(&out))?;
            let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
            let persist = |e: csv::Error| Error::Persistence(format!("writing predictions: {e}"));
            w.write_record(["product_id", "week", "stage1", "stage2", "stage3"])
                .map_err(persist)?;
            for (i, r) in dataset.records().iter().enumerate() {
                w.write_record([
                    r.product_id.clone(),
                    r.week.to_string(),
                    outputs.stage1[i].to_string(),
                    outputs.stage2[i].to_string(),
                    outputs.stage3[i].to_string(),
                ])
                .map_err(persist)?;
            }
            w.flush().map_err(|e| Error::Persistence(format!("writing predictions: {e}")))
        }
        Command::Evaluate {
            predictions,
            truth,
            data,
            manifest,
            out,
        } => {
            let dataset = if data.is_empty() { None } else { Some(load_data(&data)?) };
            let report = evaluate(existing(&predictions)?, existing(&truth)?, dataset.as_ref())?;
            let value = serde_json::to_value(&report).map_err(|e| Error::Persistence(e.to_string()))?;
            write_json(&value, &out)?;
            if let Some(path) = manifest {
                let text = std::fs::read_to_string(existing(&path)?).map_err(Error::io(&path))?;
                let mut m: RunManifest = serde_json::from_str(&text)
                    .map_err(|e| Error::Persistence(format!("{}: {e}", path.display())))?;
                m.metrics = Some(value);
                write_json(&m, &path)?;
            }
            Ok(())
        }
        Command::Diagnose {
            data,
            models,
            train,
            out,
        } => {
            let cfg = train.pipeline_config()?;
            let dataset = load_data(&data)?;
            let [m1, m2, m3] = load_models(&models)?;
            let outputs = predict_stages(&dataset, [&m1, &m2, &m3])?;
            let report = diagnose(&dataset, &outputs, &DiagnoseOptions::from_pipeline(&cfg))?;
            write_json(&report, &out)
        }
    }
}

fn load_models(dir: &Path) -> Result<[crate::gbdt::GbdtModel<f64>; 3]> {
    let load = |name: &str| {
        let path = dir.join(name);
        load_model_file::<f64>(existing(&path)?)
    };
    Ok([load(MODEL_FILES[0])?, load(MODEL_FILES[1])?, load(MODEL_FILES[2])?])
}

#[derive(Debug, serde::Serialize)]
struct StageScore {
    product: ProductMetrics,
    adherence: Adherence,
}

#[derive(Debug, serde::Serialize)]
struct EvaluationReport {
    rows: usize,
    weeks: usize,
    stages: BTreeMap<String, StageScore>,
}

fn evaluate(predictions: &Path, truth: &Path, dataset: Option<&PanelDataset<f64>>) -> Result<EvaluationReport> {
    let truth = read_truth::<f64>(truth)?;
    if truth.is_empty() {
        return Err(Error::Validation("truth file has no rows".into()));
    }
    let preds = read_predictions(predictions)?;
    let truth_weeks: std::collections::BTreeSet<u32> = truth.iter().map(|t| t.week).collect();
    let in_scope = preds.keys().filter(|(_, w)| truth_weeks.contains(w)).count();
    if in_scope != truth.len() {
        return Err(Error::Validation(format!(
            "predictions have {in_scope} rows in the truth weeks, truth has {}",
            truth.len()
        )));
    }

    // Week groups over truth row positions.
    let mut by_week: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, t) in truth.iter().enumerate() {
        by_week.entry(t.week).or_default().push(i);
    }
    let totals = dataset.map(|d| d.future_totals());
    let mut groups = Vec::new();
    for (week, members) in by_week {
        let category_total = match &totals {
            Some(t) => *t.get(&week).ok_or_else(|| {
                Error::ConstraintData(format!("dataset has no category total for week {week}"))
            })?,
            None => members.iter().map(|&i| truth[i].true_sales).sum(),
        };
        groups.push(WeekGroup {
            week,
            count: members.len(),
            members,
            category_total,
            is_future: true,
        });
    }

    let truth_values: Vec<f64> = truth.iter().map(|t| t.true_sales).collect();
    let mut stages = BTreeMap::new();
    for (s, name) in ["stage1", "stage2", "stage3"].iter().enumerate() {
        let aligned = truth
            .iter()
            .map(|t| {
                preds
                    .get(&(t.product_id.clone(), t.week))
                    .map(|v| v[s])
                    .ok_or_else(|| {
                        Error::Validation(format!("no prediction for {} in week {}", t.product_id, t.week))
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        stages.insert(
            name.to_string(),
            StageScore {
                product: product_metrics(&aligned, &truth_values)?,
                adherence: category_adherence(&aligned, &groups)?,
            },
        );
    }
    Ok(EvaluationReport {
        rows: truth.len(),
        weeks: groups.len(),
        stages,
    })
}

fn read_predictions(path: &Path) -> Result<HashMap<(String, u32), [f64; 3]>> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{}: missing column '{name}'", path.display())))
    };
    let cols = [col("product_id")?, col("week")?, col("stage1")?, col("stage2")?, col("stage3")?];
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        let field = |i: usize| rec.get(cols[i]).unwrap_or("").trim();
        let bad = || Error::Validation(format!("{}: bad row '{}'", path.display(), rec.as_slice()));
        let week: u32 = field(1).parse().map_err(|_| bad())?;
        let mut v = [0.0; 3];
        for (s, slot) in v.iter_mut().enumerate() {
            *slot = field(2 + s).parse().map_err(|_| bad())?;
        }
        if out.insert((field(0).to_string(), week), v).is_some() {
            return Err(Error::Validation(format!(
                "{}: duplicate prediction for {} in week {week}",
                path.display(),
                field(0)
            )));
        }
    }
    Ok(out)
}
