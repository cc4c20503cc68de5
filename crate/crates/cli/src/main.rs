//! `polygnosis` — run the market-insight pipeline stage by stage or end to
//! end, evaluate tracks against ground truth, and diff runs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use polygnosis_core::eval::{gt, run_experiment, ExperimentPlan, Track};
use polygnosis_core::ingest::{monitor, polymarket, replay_window, AlertJournal, MonitorOptions};
use polygnosis_core::model::Alert;
use polygnosis_core::pipeline::{self, diff_runs, run_label, RunConfig, Stage};
use polygnosis_core::time::{DayWindow, TimeWindow, UtcTimestamp};

#[derive(Parser)]
#[command(
    name = "polygnosis",
    version,
    about = "Polymarket anomaly + media signal pipeline"
)]
struct Cli {
    /// Declarative run configuration (TOML).
    #[arg(long, global = true, default_value = "polygnosis.toml")]
    config: PathBuf,
    /// Hard temporal bound for all external data (default: window end).
    #[arg(long, global = true)]
    as_of: Option<String>,
    /// Scripted trace file, overriding the conventional path.
    #[arg(long, global = true)]
    trace: Option<PathBuf>,
    /// Free-form note recorded in the run manifest.
    #[arg(long, global = true)]
    seed_note: Option<String>,
    /// Allow reflection bounds other than the supported (3, 1).
    #[arg(long, global = true)]
    unsafe_bounds: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunDirArgs {
    /// Run directory holding the stage artifacts.
    #[arg(long)]
    run_dir: PathBuf,
    /// Evaluation day window (YYYY-MM-DD).
    #[arg(long)]
    window: String,
}

#[derive(Subcommand)]
enum Command {
    /// Collect alerts: replay a journal fixture into a run directory, or
    /// monitor the live market feed.
    Ingest {
        /// Monitor the live WebSocket feed (appends to the configured journal).
        #[arg(long, conflicts_with = "fixture")]
        live: bool,
        /// Journal fixture to replay (defaults to the configured journal).
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// Day window `YYYY-MM-DD` or explicit `start..end` (RFC 3339).
        #[arg(long)]
        window: String,
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Cluster the run's alerts (with the configured reflection track).
    Cluster(RunDirArgs),
    /// Fill in GDELT keyword bundles for clusters that lack them.
    Keywords(RunDirArgs),
    /// Fetch GDELT windows and derive per-cluster media signals.
    Gdelt(RunDirArgs),
    /// Produce insight records under the configured analysis track.
    Analyze(RunDirArgs),
    /// Recompute alignment labels with the deterministic rubric.
    Validate {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Run a full experiment: N runs per window, scored against ground truth.
    Evaluate {
        /// One of: direct, reflect, reflect_tool, global, dnc, dnc_cot,
        /// dnc_cot_reflect.
        #[arg(long)]
        track: String,
        /// Comma-separated day windows (YYYY-MM-DD,...).
        #[arg(long)]
        windows: String,
        /// Independent runs per window.
        #[arg(long, default_value_t = 1)]
        runs: u32,
        /// Ground-truth directory (overrides the configured path).
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Output directory for runs.jsonl and summary.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Deterministic full pipeline run from fixtures and a scripted trace.
    Replay {
        #[arg(long)]
        window: String,
        /// Defaults to out/<window>/<label>/run_0.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Run ordinal used in the default run directory.
        #[arg(long, default_value_t = 0)]
        run: u32,
    },
    /// Field-level comparison of two run directories.
    Diff {
        run_a: PathBuf,
        run_b: PathBuf,
        /// Ground-truth directory for break/fix counting.
        #[arg(long)]
        gt: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = RunConfig::load(&cli.config, cli.unsafe_bounds)
        .with_context(|| format!("loading {}", cli.config.display()))?;
    if let Some(as_of) = &cli.as_of {
        config.run.as_of = Some(UtcTimestamp::parse(as_of)?);
    }
    if let Some(note) = &cli.seed_note {
        config.run.seed_note = note.clone();
    }
    Ok(config)
}

fn parse_day(window: &str) -> Result<DayWindow> {
    Ok(DayWindow::parse(window)?)
}

fn effective_as_of(config: &RunConfig, window: &DayWindow) -> UtcTimestamp {
    config.run.as_of.unwrap_or_else(|| window.end())
}

fn handles_for(
    cli: &Cli,
    config: &RunConfig,
    window: &DayWindow,
    until: Stage,
) -> Result<pipeline::PipelineHandles> {
    Ok(pipeline::build_handles(
        config,
        window,
        until,
        cli.trace.as_deref(),
    )?)
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Ingest {
            live,
            fixture,
            window,
            run_dir,
        } => ingest(
            &cli,
            &config,
            *live,
            fixture.as_deref(),
            window,
            run_dir.as_deref(),
        ),
        Command::Cluster(args) => {
            let window = parse_day(&args.window)?;
            let alerts = pipeline::load_alerts(&args.run_dir)?;
            let handles = handles_for(&cli, &config, &window, Stage::Validate)?;
            let (set, reflection, _) = pipeline::stage_cluster(
                &config,
                &window,
                &args.run_dir,
                &alerts,
                &handles,
                effective_as_of(&config, &window),
                true,
            )?;
            println!(
                "clustered {} alerts into {} clusters",
                alerts.len(),
                set.clusters.len()
            );
            if let Some(outcome) = reflection {
                println!(
                    "reflection: {} iterations, satisfied={}, {} actions logged",
                    outcome.iterations_used,
                    outcome.satisfied,
                    outcome.action_log.len()
                );
            }
            Ok(())
        }
        Command::Keywords(args) => {
            let window = parse_day(&args.window)?;
            let alerts = pipeline::load_alerts(&args.run_dir)?;
            let mut set = pipeline::load_clusters(&args.run_dir)?;
            let handles = handles_for(&cli, &config, &window, Stage::Validate)?;
            let bundles =
                pipeline::stage_keywords(&args.run_dir, &mut set, &alerts, &handles.gateway)?;
            println!("keyword bundles for {} clusters", bundles.len());
            Ok(())
        }
        Command::Gdelt(args) => {
            let window = parse_day(&args.window)?;
            let set = pipeline::load_clusters(&args.run_dir)?;
            let bundles = pipeline::load_keywords(&args.run_dir)?;
            let order: Vec<String> = set.clusters.iter().map(|c| c.cluster_id.clone()).collect();
            let handles = handles_for(&cli, &config, &window, Stage::Validate)?;
            let (signals, calls) = pipeline::stage_gdelt(
                &args.run_dir,
                &bundles,
                &order,
                handles.gdelt.as_ref(),
                effective_as_of(&config, &window),
            )?;
            println!(
                "derived signals for {} clusters ({} external calls)",
                signals.len(),
                calls.len()
            );
            Ok(())
        }
        Command::Analyze(args) => {
            let window = parse_day(&args.window)?;
            let alerts = pipeline::load_alerts(&args.run_dir)?;
            let set = pipeline::load_clusters(&args.run_dir)?;
            let signals = pipeline::load_signals(&args.run_dir)?;
            let handles = handles_for(&cli, &config, &window, Stage::Validate)?;
            let outcome = pipeline::stage_analyze(
                &config,
                &args.run_dir,
                &set,
                &alerts,
                &signals,
                &handles.gateway,
            )?;
            println!(
                "analyzed {} clusters under {} ({} incomplete, {} audit corrections)",
                outcome.records.len(),
                config.run.analysis_track.as_str(),
                outcome.incomplete.len(),
                outcome.corrections_applied
            );
            Ok(())
        }
        Command::Validate { run_dir } => {
            let insights = pipeline::load_insights(run_dir)?;
            let (validated, flips, version) =
                pipeline::stage_validate(&config, run_dir, &insights)?;
            println!(
                "validated {} records with rubric {version}: {flips} alignment flips",
                validated.len()
            );
            Ok(())
        }
        Command::Evaluate {
            track,
            windows,
            runs,
            gt,
            out,
        } => {
            let mut config = config;
            if let Some(dir) = gt {
                config.paths.gt = dir.clone();
            }
            let track: Track = track.parse()?;
            let windows = windows
                .split(',')
                .map(|w| parse_day(w.trim()))
                .collect::<Result<Vec<_>>>()?;
            if windows.is_empty() {
                bail!("at least one window is required");
            }
            let plan = ExperimentPlan {
                track,
                windows,
                runs_per_window: *runs,
            };
            let outcome = run_experiment(&plan, &config, out)?;
            println!(
                "evaluated track {track}: {} runs ({} failed); summary at {}",
                outcome.runs.len(),
                outcome.failures.len(),
                out.join("summary.csv").display()
            );
            for row in &outcome.summary {
                match (row.mean, row.std) {
                    (Some(mean), Some(std)) => {
                        println!("  {:<36} {mean:.6} ± {std:.6}", row.metric)
                    }
                    (Some(mean), None) => println!("  {:<36} {mean:.6}", row.metric),
                    _ => println!("  {:<36} -", row.metric),
                }
            }
            Ok(())
        }
        Command::Replay {
            window,
            run_dir,
            run,
        } => {
            let window = parse_day(window)?;
            let label = run_label(&config, Stage::Validate);
            let run_dir = run_dir.clone().unwrap_or_else(|| {
                config
                    .paths
                    .out
                    .join(window.id())
                    .join(&label)
                    .join(format!("run_{run}"))
            });
            let artifacts = pipeline::run_pipeline(
                &config,
                &window,
                &run_dir,
                Stage::Validate,
                cli.trace.as_deref(),
            )?;
            let manifest = &artifacts.manifest;
            println!(
                "replayed window {window} ({label}) into {}",
                run_dir.display()
            );
            for stage in &manifest.stages {
                println!("  {:<9} {:?}", stage.stage.name(), stage.status);
            }
            println!(
                "  ledger: {} calls, {} tokens, ${:.6}",
                manifest.ledger_totals.calls,
                manifest.ledger_totals.total_tokens,
                manifest.ledger_totals.cost_usd
            );
            println!("  validator flips: {}", manifest.validator_flips);
            Ok(())
        }
        Command::Diff {
            run_a,
            run_b,
            gt: gt_dir,
        } => {
            let labels = match gt_dir {
                Some(dir) => {
                    let manifest = pipeline::load_manifest(run_a)?;
                    let window = DayWindow::parse(&manifest.window)?;
                    Some(gt::load_gt_labels(&gt::labels_path(dir, &window))?)
                }
                None => None,
            };
            let report = diff_runs(run_a, run_b, labels.as_deref())?;
            print!("{}", report.render_text());
            Ok(())
        }
    }
}

enum WindowArg {
    /// `YYYY-MM-DD`: the 02:00-anchored day window, half-open.
    Day(DayWindow),
    /// `start..end`: explicit RFC 3339 span, inclusive.
    Span(TimeWindow),
}

impl WindowArg {
    fn contains(&self, ts: UtcTimestamp) -> bool {
        match self {
            WindowArg::Day(day) => day.contains(ts),
            WindowArg::Span(span) => span.contains(ts),
        }
    }
}

impl std::fmt::Display for WindowArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WindowArg::Day(day) => day.fmt(f),
            WindowArg::Span(span) => span.fmt(f),
        }
    }
}

fn parse_window_arg(window: &str) -> Result<WindowArg> {
    if let Some((start, end)) = window.split_once("..") {
        return Ok(WindowArg::Span(TimeWindow::new(
            UtcTimestamp::parse(start)?,
            UtcTimestamp::parse(end)?,
        )?));
    }
    Ok(WindowArg::Day(DayWindow::parse(window)?))
}

fn ingest(
    cli: &Cli,
    config: &RunConfig,
    live: bool,
    fixture: Option<&Path>,
    window: &str,
    run_dir: Option<&Path>,
) -> Result<()> {
    let span = parse_window_arg(window)?;
    if live {
        let mut stream = polymarket::PolymarketWsStream::new(polymarket::PolymarketWsConfig {
            ws_url: config.polymarket.ws_url.clone(),
            metadata_base_url: config.polymarket.metadata_base_url.clone(),
            asset_ids: config.polymarket.asset_ids.clone(),
        });
        let mut journal = AlertJournal::open_append(&config.paths.alerts)?;
        let report = if config.polymarket.profile_base_url.is_empty() {
            struct NoProfiles;
            impl polygnosis_core::ingest::ProfileSource for NoProfiles {
                fn fetch_profile(
                    &self,
                    trader: &str,
                ) -> Result<
                    polygnosis_core::model::WhaleProfile,
                    polygnosis_core::ingest::ProfileFetchFailed,
                > {
                    Err(polygnosis_core::ingest::ProfileFetchFailed {
                        trader: trader.to_string(),
                        message: "no profile endpoint configured".into(),
                    })
                }
            }
            monitor(
                &mut stream,
                &NoProfiles,
                &config.trigger,
                &mut journal,
                &MonitorOptions::default(),
            )?
        } else {
            let profiles =
                polymarket::RestProfileSource::new(config.polymarket.profile_base_url.clone());
            monitor(
                &mut stream,
                &profiles,
                &config.trigger,
                &mut journal,
                &MonitorOptions::default(),
            )?
        };
        println!(
            "monitor finished: {} events, {} alerts ({} price shocks, {} whale buys), {} profile failures",
            report.events_seen,
            report.alerts_emitted,
            report.price_shocks,
            report.whale_buys,
            report.profile_failures
        );
        return Ok(());
    }

    let journal = fixture
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.paths.alerts.clone());
    let alerts = match &span {
        WindowArg::Day(day) => replay_window(&journal, day)?,
        WindowArg::Span(_) => {
            let mut alerts = polygnosis_core::ingest::replay_fixture(&journal)?;
            alerts.retain(|a| span.contains(a.observed_at));
            alerts
        }
    };
    match run_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            write_alert_lines(&dir.join("alerts.jsonl"), &alerts)?;
            println!(
                "replayed {} alerts in {span} into {}",
                alerts.len(),
                dir.display()
            );
        }
        None => {
            for alert in &alerts {
                println!("{}", alert.canonical_json());
            }
        }
    }
    let _ = cli;
    Ok(())
}

fn write_alert_lines(path: &Path, alerts: &[Alert]) -> Result<()> {
    let mut out = String::new();
    for alert in alerts {
        out.push_str(&alert.canonical_json());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
