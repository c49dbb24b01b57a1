//! Command-line front end: experiment configs, random-search tuning and run
//! directories with metrics, logs and charts.

mod config;
mod run;
mod search;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::{DataConfig, ExperimentConfig, ModelKind, Task};
pub use run::{out_root, run_name, write_horizon_csv, RunDir, OUT_ENV};
pub use search::{random_search, SearchResult, SearchSpace, Trial, TrialParams};

use crate::backbone::WaveNet;
use crate::checks::{gradient_suite, Target};
use crate::error::{Error, Result};
use crate::rmsg::report::{residual_svg, write_residuals_csv, write_runs_csv, write_sweep_csv};
use crate::rmsg::{
    collect_predictions, evaluate_average, fit_average, residual_analysis, run_seeds, run_stream, size_sweep, sized_config,
    train_rmsg, LabelBin, RmsgConfig, RmsgRunReport, RunRow, Split, Summary, LABEL_BINS,
};
use crate::traffic::synth::generate;
use crate::traffic::{
    copy_last_steps, evaluate_forecaster, evaluate_model, load_dataset, select_adjacency, train_traffic_with, HistoricalAverage,
    Prepared, TrafficData, TrafficReport,
};

#[derive(Debug, Parser)]
#[command(name = "flavornet", version, about = "GNN flavor experiments: RMSG benchmark and traffic forecasting")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand; they override the config file.
#[derive(Debug, Args, Default)]
pub struct Common {
    /// Experiment config (TOML or JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root (default: config `out_dir`, then $FLAVORNET_OUT, then ./runs).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub flavor: Option<ModelKind>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma-separated seeds for multi-seed runs.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Learning rate of the active task.
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Start from the tuned RMSG preset of the flavor.
    #[arg(long, global = true)]
    pub tuned: bool,
    /// Use the original experiment sample counts for RMSG.
    #[arg(long, global = true)]
    pub paper_scale: bool,
    /// Values CSV for traffic runs.
    #[arg(long, global = true)]
    pub values: Option<PathBuf>,
    /// Dense adjacency CSV for traffic runs.
    #[arg(long, global = true)]
    pub adjacency: Option<PathBuf>,
    /// Any config field by dotted path, e.g. `--set rmsg.hidden=32`.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    pub sets: Vec<String>,
    /// Log to run.log only.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic node-interaction benchmark.
    Rmsg {
        #[command(subcommand)]
        action: RmsgAction,
    },
    /// Sensor speed forecasting.
    Traffic {
        #[command(subcommand)]
        action: TrafficAction,
    },
    /// Random hyperparameter search.
    Tune {
        #[arg(long)]
        task: Option<Task>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Finite-difference gradient checks of every layer and the backbone.
    Gradcheck {
        /// Check every registered target.
        #[arg(long)]
        all: bool,
        #[arg(long, value_parser = parse_target)]
        target: Vec<Target>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum RmsgAction {
    /// Train and test one model per seed.
    Run,
    /// Train across the size grid.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Residual histogram and label-binned mean residuals of a trained model.
    Residuals,
}

#[derive(Debug, Subcommand)]
pub enum TrafficAction {
    /// Copy-last and historical-average baselines on the test windows.
    Baselines,
    /// Train a backbone and score it on the test windows.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Re-score a trained run directory.
    Eval {
        /// Directory written by `traffic train`.
        #[arg(long)]
        run: PathBuf,
    },
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rmsg" => Ok(Task::Rmsg),
            "traffic" => Ok(Task::Traffic),
            _ => Err(Error::Config(format!("unknown task {s:?}; expected rmsg or traffic"))),
        }
    }
}

fn parse_target(s: &str) -> std::result::Result<Target, String> {
    Target::ALL
        .into_iter()
        .find(|t| t.name() == s)
        .ok_or_else(|| format!("unknown target {s:?}"))
}

/// File config, then flags, then `--set` overrides.
pub fn resolve_config(common: &Common, task: Option<Task>) -> Result<ExperimentConfig> {
    let mut c = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(t) = task {
        c.task = t;
    }
    if let Some(f) = common.flavor {
        c.flavor = f;
    }
    if common.tuned {
        let f = c
            .flavor
            .flavor()
            .ok_or_else(|| Error::Config(format!("no tuned preset for {}", c.flavor.name())))?;
        c.rmsg = RmsgConfig::tuned(f);
    }
    if common.paper_scale {
        c.rmsg = c.rmsg.paper_scale();
    }
    if let Some(s) = common.seed {
        c.seed = s;
    }
    if let Some(s) = &common.seeds {
        c.seeds = s.clone();
    }
    if let Some(lr) = common.lr {
        match c.task {
            Task::Rmsg => c.rmsg.lr = lr,
            Task::Traffic => c.traffic.lr = lr,
        }
    }
    if let Some(v) = &common.values {
        c.data.values = Some(v.clone());
    }
    if let Some(a) = &common.adjacency {
        c.data.adjacency = Some(a.clone());
    }
    for s in &common.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects PATH=VALUE, got {s:?}")))?;
        c.set(k.trim(), v.trim())?;
    }
    c.sync_flavor();
    Ok(c)
}

/// Sensor series and graph named by `data`, cut to the requested subset.
pub fn load_traffic(data: &DataConfig) -> Result<TrafficData> {
    let (series, adjacency) = match (&data.values, &data.adjacency) {
        (Some(v), Some(a)) => {
            let (s, _, dense) = load_dataset(v, a)?;
            (s, dense)
        }
        (None, None) => {
            let s = generate(&data.synth, data.synth_seed)?;
            (s.series, s.adjacency)
        }
        _ => return Err(Error::Config("give both --values and --adjacency, or neither".into())),
    };
    let (series, adjacency) = match data.nodes {
        Some(k) if k < series.n_nodes() => {
            let keep: Vec<usize> = (0..k).collect();
            (series.select_nodes(&keep)?, select_adjacency(&adjacency, &keep)?)
        }
        _ => (series, adjacency),
    };
    let series = match data.steps {
        Some(l) if l < series.len() => series.slice_time(0, l)?,
        _ => series,
    };
    Ok(TrafficData { series, adjacency })
}

fn model_flavor(c: &ExperimentConfig) -> Result<crate::layers::Flavor> {
    c.flavor
        .flavor()
        .ok_or_else(|| Error::Config(format!("{} is not a trainable flavor", c.flavor.name())))
}

/// Label-binned residual curve and summaries, without the per-node residuals.
#[derive(Serialize)]
struct ResidualSummary<'a> {
    flavor: &'a str,
    seed: u64,
    test: crate::rmsg::Metrics,
    max_abs_binned_mean: f64,
    label_bins: &'a [LabelBin],
    labels: &'a Summary,
    predictions: &'a Summary,
    residual_histogram: &'a crate::rmsg::Histogram,
}

#[derive(Serialize)]
struct TrafficRunMetrics<'a> {
    flavor: &'a str,
    seed: u64,
    param_count: usize,
    best_val_mae: f64,
    test: &'a TrafficReport,
    copylast: &'a TrafficReport,
    stop: &'a crate::traffic::StopReason,
    epochs: usize,
}

fn rmsg_run(c: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    let seeds = c.seed_list();
    let report = if c.flavor == ModelKind::Average {
        let mut rows = Vec::new();
        for &seed in &seeds {
            let avg = fit_average(&c.rmsg, seed)?;
            let m = evaluate_average(&avg, &run_stream(&c.rmsg, seed), c.rmsg.test_samples)?;
            dir.log(format!("seed {seed}: mean label {:.6}, test {m:?}", avg.mean));
            rows.push(RunRow {
                seed,
                metrics: Some(m),
                best_val_rmse: None,
                error: None,
            });
        }
        RmsgRunReport {
            model: "average".into(),
            ..RmsgRunReport::from_rows(&c.rmsg, 1, rows)
        }
    } else {
        model_flavor(c)?;
        let mut lines = Vec::new();
        let report = run_seeds(&c.rmsg, &seeds, |seed, out| {
            lines.push(format!("seed {seed}: best val rmse {:.6}, test {:?}", out.best_val_rmse, out.test));
        })?;
        for l in lines {
            dir.log(l);
        }
        report
    };
    for r in report.rows.iter().filter(|r| r.error.is_some()) {
        dir.log(format!("seed {} failed: {}", r.seed, r.error.as_deref().unwrap_or("")));
    }
    dir.log(format!("{} mean {:?} std {:?} failed {}", report.model, report.mean, report.std, report.failed));
    dir.json("metrics.json", &report)?;
    write_runs_csv(&report, &dir.file("metrics.csv"))
}

fn rmsg_sweep(c: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    let flavor = model_flavor(c)?;
    let rows = size_sweep(&c.rmsg, flavor, &c.sizes, &c.seed_list())?;
    for r in &rows {
        let m = r.report.mean;
        dir.log(format!("size {} ({} params): mean {m:?}", r.size, r.param_count));
    }
    dir.json("metrics.json", &rows)?;
    write_sweep_csv(&rows, &dir.file("metrics.csv"))?;
    // sized_config is the single source of the size -> width mapping
    let configs: Vec<RmsgConfig> = c.sizes.iter().map(|&s| sized_config(&c.rmsg, flavor, s)).collect();
    dir.json("sweep_configs.json", &configs)
}

fn rmsg_residuals(c: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    model_flavor(c)?;
    let out = train_rmsg(&c.rmsg, c.seed)?;
    let (y, h) = collect_predictions(&out.model, &run_stream(&c.rmsg, c.seed), Split::Test, c.rmsg.test_samples)?;
    let rep = residual_analysis(&y, &h, LABEL_BINS)?;
    dir.log(format!("test {:?}; max |binned mean residual| {:.6}", out.test, rep.max_abs_binned_mean()));
    write_residuals_csv(&rep, &dir.file("residual_histogram.csv"), &dir.file("residuals.csv"))?;
    std::fs::write(dir.file("residuals.svg"), residual_svg(&rep, c.flavor.name()))?;
    dir.json(
        "metrics.json",
        &ResidualSummary {
            flavor: c.flavor.name(),
            seed: c.seed,
            test: out.test,
            max_abs_binned_mean: rep.max_abs_binned_mean(),
            label_bins: &rep.label_bins,
            labels: &rep.labels,
            predictions: &rep.predictions,
            residual_histogram: &rep.histogram,
        },
    )
}

fn traffic_baselines(c: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    let data = load_traffic(&c.data)?;
    let prep = Prepared::new(&c.traffic, &data)?;
    let test = &prep.splits.test;
    dir.log(format!(
        "{} sensors, {} steps, {:.2}% missing; test windows {}",
        data.series.n_nodes(),
        data.series.len(),
        100.0 * data.series.missing_rate(),
        test.len()
    ));
    let tod = c.traffic.time_of_day;
    let copy = evaluate_forecaster(test, &prep.scaler, tod, |b| Ok(copy_last_steps(b)))?;
    let ha = HistoricalAverage::fit(&prep.splits.train.series)?;
    let hist = evaluate_forecaster(test, &prep.scaler, tod, |b| ha.predict(b))?;
    dir.log(format!("copylast {copy:?}"));
    dir.log(format!("histavg {hist:?}"));
    dir.json("metrics.json", &serde_json::json!({ "copylast": copy, "histavg": hist }))?;
    write_horizon_csv(&[("copylast", &copy), ("histavg", &hist)], data.series.granularity(), &dir.file("metrics.csv"))
}

fn traffic_train(c: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    model_flavor(c)?;
    let data = load_traffic(&c.data)?;
    let quiet = dir.is_quiet();
    let mut log = Vec::new();
    let out = train_traffic_with(&c.traffic, &data, c.seed, |r| {
        log.push(format!(
            "epoch {} steps {} train mae {:.4} val mae {:.4} ({:.1}s)",
            r.epoch, r.steps, r.train_mae, r.val_mae, r.seconds
        ));
        if !quiet {
            eprintln!("{}", log.last().expect("just pushed"));
        }
    })?;
    for l in &log {
        dir.log(l);
    }
    out.model.save(&dir.file("model"))?;
    dir.json("scaler.json", &out.scaler)?;
    dir.json("history.json", &out.history)?;
    let name = c.flavor.name();
    dir.log(format!("test {:?}", out.test));
    dir.log(format!("copylast {:?}", out.copy_last));
    dir.json(
        "metrics.json",
        &TrafficRunMetrics {
            flavor: name,
            seed: c.seed,
            param_count: out.model.param_count(),
            best_val_mae: out.best_val_mae,
            test: &out.test,
            copylast: &out.copy_last,
            stop: &out.stop,
            epochs: out.history.len(),
        },
    )?;
    write_horizon_csv(&[(name, &out.test), ("copylast", &out.copy_last)], data.series.granularity(), &dir.file("metrics.csv"))
}

fn traffic_eval(run: &Path, dir: &mut RunDir) -> Result<()> {
    let c = ExperimentConfig::load(&run.join("config.json"))?;
    let data = load_traffic(&c.data)?;
    let prep = Prepared::new(&c.traffic, &data)?;
    let model = WaveNet::load(&run.join("model"))?;
    let test = evaluate_model(&model, &prep, &prep.splits.test, c.traffic.time_of_day)?;
    dir.log(format!("{} test {test:?}", run.display()));
    dir.json("metrics.json", &test)?;
    write_horizon_csv(&[(c.flavor.name(), &test)], data.series.granularity(), &dir.file("metrics.csv"))
}

/// `base` with a trial's draws applied.
pub fn apply_trial(base: &ExperimentConfig, p: &TrialParams) -> ExperimentConfig {
    let mut c = base.clone();
    match c.task {
        Task::Rmsg => {
            c.rmsg = sized_config(&c.rmsg, c.rmsg.flavor, p.hidden);
            c.rmsg.lr = p.lr;
            c.rmsg.heads = p.heads;
        }
        Task::Traffic => {
            let m = &mut c.traffic.model;
            m.residual_channels = p.hidden;
            m.skip_channels = 2 * p.hidden;
            m.message_hidden = p.hidden;
            m.heads = p.heads;
            m.diffusion_hops = p.hops;
            c.traffic.lr = p.lr;
        }
    }
    c
}

/// Validation score of one configuration: best validation RMSE (RMSG) or MAE (traffic).
pub fn trial_score(c: &ExperimentConfig, data: Option<&TrafficData>, seed: u64) -> Result<f64> {
    match c.task {
        Task::Rmsg => Ok(train_rmsg(&c.rmsg, seed)?.best_val_rmse),
        Task::Traffic => {
            let data = data.ok_or_else(|| Error::Contract("traffic trials need data".into()))?;
            Ok(train_traffic_with(&c.traffic, data, seed, |_| {})?.best_val_mae)
        }
    }
}

fn tune(c: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    model_flavor(c)?;
    let data = match c.task {
        Task::Traffic => Some(load_traffic(&c.data)?),
        Task::Rmsg => None,
    };
    let quiet = dir.is_quiet();
    let mut lines = Vec::new();
    let result = random_search(
        &c.search,
        c.seed,
        c.workers,
        |p, seed| trial_score(&apply_trial(c, p), data.as_ref(), seed),
        |t| {
            let line = format!("trial {} {:?}: score {:?} {}", t.index, t.params, t.score, t.error.as_deref().unwrap_or(""));
            if !quiet {
                eprintln!("{line}");
            }
            lines.push(line);
        },
    );
    for l in &lines {
        dir.log(l);
    }
    let result = result?;
    write_trials_csv(&result.trials, &dir.file("trials.csv"))?;
    dir.json("metrics.json", &result)?;
    let best = apply_trial(c, &result.best.params);
    dir.json("best_config.json", &best)?;
    dir.log(format!("best trial {} score {:?}", result.best.index, result.best.score));
    Ok(())
}

fn write_trials_csv(trials: &[Trial], path: &Path) -> Result<()> {
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(to_io)?;
    w.write_record(["index", "seed", "lr", "hidden", "heads", "hops", "score", "error"])
        .map_err(to_io)?;
    for t in trials {
        w.write_record([
            t.index.to_string(),
            t.seed.to_string(),
            format!("{:.6e}", t.params.lr),
            t.params.hidden.to_string(),
            t.params.heads.to_string(),
            t.params.hops.to_string(),
            t.score.map(|s| format!("{s:.17e}")).unwrap_or_default(),
            t.error.clone().unwrap_or_default(),
        ])
        .map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct GradcheckRow {
    target: &'static str,
    trials: usize,
    max_rel_error: f64,
    max_rel_error_beyond_roundoff: f64,
    trials_over_1e4: usize,
    resampled: usize,
    pass: bool,
}

fn gradcheck(targets: &[Target], trials: usize, eps: f64, seed: u64, dir: &mut RunDir) -> Result<()> {
    let mut rows = Vec::new();
    for &t in targets {
        let s = gradient_suite(t, trials, seed, eps)?;
        let pass = s.max_rel_error_beyond_roundoff <= 1e-4;
        dir.log(format!(
            "{:<10} max rel {:.3e}  beyond roundoff {:.3e}  trials > 1e-4: {}  {}",
            t.name(),
            s.max_rel_error,
            s.max_rel_error_beyond_roundoff,
            s.trials_over_1e4,
            if pass { "ok" } else { "FAIL" }
        ));
        rows.push(GradcheckRow {
            target: t.name(),
            trials,
            max_rel_error: s.max_rel_error,
            max_rel_error_beyond_roundoff: s.max_rel_error_beyond_roundoff,
            trials_over_1e4: s.trials_over_1e4,
            resampled: s.resampled,
            pass,
        });
    }
    dir.json("metrics.json", &rows)?;
    let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.target).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Contract(format!("gradient check failed for {}", failed.join(", "))))
    }
}

/// Parses `args` and runs the command. Returns the run directory.
pub fn run(cli: Cli) -> Result<PathBuf> {
    let common = &cli.common;
    let task = match &cli.command {
        Command::Rmsg { .. } => Some(Task::Rmsg),
        Command::Traffic { .. } => Some(Task::Traffic),
        Command::Tune { task, .. } => *task,
        Command::Gradcheck { .. } => None,
    };
    let mut c = resolve_config(common, task)?;
    let name = match &cli.command {
        Command::Rmsg { action } => {
            let a = match action {
                RmsgAction::Run => "rmsg-run",
                RmsgAction::Sweep { sizes } => {
                    if let Some(s) = sizes {
                        c.sizes = s.clone();
                    }
                    "rmsg-sweep"
                }
                RmsgAction::Residuals => "rmsg-residuals",
            };
            run_name(a, c.flavor.name(), c.seed)
        }
        Command::Traffic { action } => {
            let a = match action {
                TrafficAction::Baselines => "traffic-baselines",
                TrafficAction::Train { epochs } => {
                    if let Some(e) = epochs {
                        c.traffic.max_epochs = *e;
                    }
                    "traffic-train"
                }
                TrafficAction::Eval { .. } => "traffic-eval",
            };
            run_name(a, c.flavor.name(), c.seed)
        }
        Command::Tune { budget, workers, .. } => {
            if let Some(b) = budget {
                c.search.budget = *b;
            }
            if let Some(w) = workers {
                c.workers = *w;
            }
            let task = match c.task {
                Task::Rmsg => "rmsg",
                Task::Traffic => "traffic",
            };
            run_name(&format!("tune-{task}"), c.flavor.name(), c.seed)
        }
        Command::Gradcheck { .. } => format!("gradcheck-seed{}", c.seed),
    };
    let root = out_root(common.out.as_deref(), &c);
    let mut dir = RunDir::create(&root, &name, &c, common.config.as_deref())?.quiet(common.quiet);
    let result = match &cli.command {
        Command::Rmsg { action } => match action {
            RmsgAction::Run => rmsg_run(&c, &mut dir),
            RmsgAction::Sweep { .. } => rmsg_sweep(&c, &mut dir),
            RmsgAction::Residuals => rmsg_residuals(&c, &mut dir),
        },
        Command::Traffic { action } => match action {
            TrafficAction::Baselines => traffic_baselines(&c, &mut dir),
            TrafficAction::Train { .. } => traffic_train(&c, &mut dir),
            TrafficAction::Eval { run } => traffic_eval(run, &mut dir),
        },
        Command::Tune { .. } => tune(&c, &mut dir),
        Command::Gradcheck {
            all,
            target,
            trials,
            eps,
        } => {
            let targets: Vec<Target> = if *all || target.is_empty() {
                Target::ALL.to_vec()
            } else {
                target.clone()
            };
            gradcheck(&targets, *trials, *eps, c.seed, &mut dir)
        }
    };
    if let Err(e) = &result {
        dir.log(format!("error: {e}"));
        dir.json("error.json", &error_report(e))?;
    }
    result.map(|_| dir.path)
}

/// `{"error": kind, "message": text}`.
pub fn error_report(e: &Error) -> serde_json::Value {
    serde_json::json!({ "error": e.kind(), "message": e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("flavornet").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_file_then_sets_override_flags() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("c.toml");
        std::fs::write(&p, "seed = 9\nflavor = \"gat\"\n[rmsg]\nlr = 0.1\nhidden = 5\n").unwrap();
        let cli = parse(&["rmsg", "run", "--config", p.to_str().unwrap(), "--lr", "0.2", "--set", "rmsg.lr=0.3", "--seed", "4"]);
        let c = resolve_config(&cli.common, Some(Task::Rmsg)).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.rmsg.lr, 0.3);
        assert_eq!(c.rmsg.hidden, 5);
        assert_eq!(c.rmsg.flavor, crate::layers::Flavor::Gat);
    }

    #[test]
    fn unknown_flavor_is_a_usage_error() {
        let r = Cli::try_parse_from(["flavornet", "rmsg", "run", "--flavor", "lstm"]);
        assert!(r.is_err());
    }

    #[test]
    fn trial_application() {
        let p = TrialParams {
            lr: 0.004,
            hidden: 24,
            heads: 8,
            hops: 3,
        };
        let c = apply_trial(&ExperimentConfig::default(), &p);
        assert_eq!((c.rmsg.hidden, c.rmsg.width, c.rmsg.heads, c.rmsg.lr), (24, 12, 8, 0.004));
        let t = apply_trial(
            &ExperimentConfig {
                task: Task::Traffic,
                ..ExperimentConfig::default()
            },
            &p,
        );
        assert_eq!((t.traffic.model.residual_channels, t.traffic.model.skip_channels, t.traffic.model.diffusion_hops), (24, 48, 3));
    }

    #[test]
    fn partial_data_paths_rejected() {
        let d = DataConfig {
            values: Some("v.csv".into()),
            ..DataConfig::default()
        };
        assert!(matches!(load_traffic(&d), Err(Error::Config(_))));
    }

    #[test]
    fn traffic_subset() {
        let d = DataConfig {
            nodes: Some(5),
            steps: Some(600),
            ..DataConfig::default()
        };
        let t = load_traffic(&d).unwrap();
        assert_eq!(t.series.dims(), [1, 5, 600]);
        assert_eq!(t.adjacency.shape(), &[5, 5]);
    }

    #[test]
    fn error_reports_are_json() {
        let v = error_report(&Error::Config("bad".into()));
        assert_eq!(v["error"], "config");
        assert_eq!(v["message"], "config error: bad");
    }
}
