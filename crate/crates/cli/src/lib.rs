//! The `xal` command: corpus ingestion, synthetic sessions, benchmark grids,
//! the HTTP service and report rendering.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;
use xal_core::bench::{
    load_mean_curves, on_off, render_tables, run_grid, svg_line_chart, write_curve_csv, write_grid_outputs,
    ExperimentGrid, MeanCurve,
};
use xal_core::bundled;
use xal_core::corpus::{ingest, Corpus, IngestConfig};
use xal_core::sampler::Strategy;
use xal_core::session::SessionConfig;
use xal_core::synthuser::{bundled_taxonomy, bundled_templates, generate_profile, load_templates, GroupTaxonomy, UserProfile};
use xal_service::AppState;

#[derive(Debug, Parser)]
#[command(name = "xal", version, about = "Explainable active-learning preference elicitation")]
pub struct Cli {
    /// Suppress the run header.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode a record-per-line corpus into a canonical corpus file.
    Ingest(IngestArgs),
    /// Run one synthetic user and print its learning curve as CSV.
    Simulate(SimulateArgs),
    /// Run a (strategy x feedback x profile) grid and write curve files.
    Bench(BenchArgs),
    /// Serve the human elicitation API.
    Serve(ServeArgs),
    /// Render tables and charts from a bench output directory.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BundledSchema {
    Simulation,
    Human,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Record-per-line JSON input; the bundled recipes when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Ingestion schema (TOML).
    #[arg(long, conflicts_with = "bundled")]
    pub schema: Option<PathBuf>,
    /// Use a bundled schema instead of `--schema`.
    #[arg(long, value_enum, default_value = "simulation")]
    pub bundled: BundledSchema,
    #[arg(long)]
    pub output: PathBuf,
}

/// Options shared by `simulate` and `bench`.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// Canonical corpus file written by `ingest`; the bundled simulation
    /// corpus when omitted.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// TOML file of session settings applied over the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seeds the session and the synthetic profiles; overrides any seed in
    /// the config file.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Total epochs: elicitation epochs first, the rest recommendation.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Profile templates (TOML); the bundled templates when omitted.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Feature group taxonomy (TOML); the bundled one when omitted.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value = "cu")]
    pub strategy: Strategy,
    /// Apply feature-level feedback.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub feedback: bool,
    /// Template name; the first template when omitted.
    #[arg(long)]
    pub template: Option<String>,
    /// Write the curve here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "cu,ub,uc,muc,random")]
    pub strategies: Vec<Strategy>,
    /// Number of profiles, cycling through the templates with increasing
    /// seeds.
    #[arg(long, default_value_t = 10)]
    pub profiles: usize,
    /// Items per profile used for explanation accuracy.
    #[arg(long, default_value_t = 100)]
    pub probe_size: usize,
    /// Epochs listed in the horizontal-gap table.
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,30,40,50")]
    pub gap_epochs: Vec<usize>,
    #[arg(long, env = "XAL_OUTPUT_DIR", default_value = "xal-out")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Canonical corpus file; the bundled human corpus when omitted.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Directory for session logs; sessions found there are restored.
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Bench output directory.
    #[arg(long, env = "XAL_OUTPUT_DIR", default_value = "xal-out")]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,30,40,50")]
    pub gap_epochs: Vec<usize>,
}

pub fn run(cli: Cli) -> Result<()> {
    let quiet = cli.quiet;
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Simulate(a) => cmd_simulate(a, quiet),
        Command::Bench(a) => cmd_bench(a, quiet),
        Command::Serve(a) => cmd_serve(a, quiet),
        Command::Report(a) => cmd_report(a),
    }
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let config = match &a.schema {
        Some(p) => IngestConfig::load(p)?,
        None => IngestConfig::from_toml_str(match a.bundled {
            BundledSchema::Simulation => bundled::SIMULATION_SCHEMA,
            BundledSchema::Human => bundled::HUMAN_SCHEMA,
        })?,
    };
    let corpus = match &a.input {
        Some(p) => ingest(p, &config)?,
        None => xal_core::corpus::ingest_str(bundled::RECIPES_JSONL, &config, "bundled:recipes")?,
    };
    if let Some(parent) = a.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    corpus.save(&a.output)?;
    println!(
        "{} items, {} features, fingerprint {} -> {}",
        corpus.len(),
        corpus.universe.len(),
        corpus.fingerprint(),
        a.output.display()
    );
    Ok(())
}

fn load_corpus(path: Option<&Path>, fallback: fn() -> xal_core::Result<Corpus>) -> Result<Arc<Corpus>> {
    Ok(Arc::new(match path {
        Some(p) => Corpus::load(p)?,
        None => fallback()?,
    }))
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Session defaults, then the config file, then `--seed` and `--epochs`.
pub fn session_config(a: &RunArgs) -> Result<SessionConfig> {
    let mut config = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let mut merged = serde_json::to_value(SessionConfig::default())?;
            merge(&mut merged, serde_json::to_value(table)?);
            serde_json::from_value::<SessionConfig>(merged).with_context(|| format!("invalid settings in {}", path.display()))?
        }
        None => SessionConfig::default(),
    };
    config.seed = a.seed;
    if let Some(n) = a.epochs {
        config.elicitation_epochs = config.elicitation_epochs.min(n);
        config.recommendation_epochs = n - config.elicitation_epochs;
    }
    config.validate()?;
    Ok(config)
}

fn templates_and_taxonomy(a: &RunArgs) -> Result<(Vec<xal_core::synthuser::ProfileTemplate>, GroupTaxonomy)> {
    let templates = match &a.templates {
        Some(p) => load_templates(p)?,
        None => bundled_templates(),
    };
    let taxonomy = match &a.taxonomy {
        Some(p) => GroupTaxonomy::load(p)?,
        None => bundled_taxonomy(),
    };
    if templates.is_empty() {
        bail!("no profile templates");
    }
    Ok((templates, taxonomy))
}

/// `n` profiles cycling through the templates; seeds start at `seed` and
/// advance once per full cycle.
pub fn profiles(corpus: &Corpus, a: &RunArgs, n: usize) -> Result<Vec<UserProfile>> {
    let (templates, taxonomy) = templates_and_taxonomy(a)?;
    (0..n)
        .map(|i| {
            let t = &templates[i % templates.len()];
            Ok(generate_profile(t, &taxonomy, &corpus.universe, a.seed + (i / templates.len()) as u64)?)
        })
        .collect()
}

fn header(command: &str, corpus: &Corpus, config: &SessionConfig, extra: &[(&str, String)]) {
    eprintln!("# xal {command}");
    eprintln!("# corpus {} ({} items, {} features)", corpus.meta.source, corpus.len(), corpus.universe.len());
    for (k, v) in extra {
        eprintln!("# {k} {v}");
    }
    if let Ok(Value::Object(fields)) = serde_json::to_value(config) {
        for (k, v) in fields {
            eprintln!("# {k} = {v}");
        }
    }
}

fn cmd_simulate(a: SimulateArgs, quiet: bool) -> Result<()> {
    let corpus = load_corpus(a.run.corpus.as_deref(), bundled::simulation_corpus)?;
    let config = session_config(&a.run)?;
    let (templates, taxonomy) = templates_and_taxonomy(&a.run)?;
    let template = match &a.template {
        Some(name) => templates
            .iter()
            .find(|t| &t.name == name)
            .with_context(|| format!("unknown template `{name}`"))?,
        None => &templates[0],
    };
    let profile = generate_profile(template, &taxonomy, &corpus.universe, a.run.seed)?;
    if !quiet {
        header(
            "simulate",
            &corpus,
            &config,
            &[
                ("profile", profile.name()),
                ("strategy", a.strategy.to_string()),
                ("feedback", on_off(a.feedback).to_string()),
            ],
        );
    }
    let mut grid = ExperimentGrid::new(vec![a.strategy], vec![profile], config);
    grid.feedback = vec![a.feedback];
    let result = run_grid(corpus, &grid)?;
    let cell = &result.cells[0];
    if let Some(e) = &cell.error {
        bail!("session failed: {e}");
    }
    let csv = write_curve_csv(&cell.curve)?;
    match &a.out {
        Some(p) => std::fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs, quiet: bool) -> Result<()> {
    let corpus = load_corpus(a.run.corpus.as_deref(), bundled::simulation_corpus)?;
    let config = session_config(&a.run)?;
    let profiles = profiles(&corpus, &a.run, a.profiles)?;
    if !quiet {
        let names: Vec<String> = a.strategies.iter().map(|s| s.to_string()).collect();
        header(
            "bench",
            &corpus,
            &config,
            &[
                ("strategies", names.join(",")),
                ("profiles", a.profiles.to_string()),
                ("probe_size", a.probe_size.to_string()),
                ("output", a.output.display().to_string()),
            ],
        );
    }
    let mut grid = ExperimentGrid::new(a.strategies, profiles, config);
    grid.probe_size = a.probe_size;
    let result = run_grid(corpus, &grid)?;
    write_grid_outputs(&a.output, &result, &a.gap_epochs)?;
    let failed = result.cells.iter().filter(|c| c.error.is_some()).count();
    println!("{} cells ({failed} failed) -> {}", result.cells.len(), a.output.display());
    if failed == result.cells.len() {
        bail!("every cell failed; see {}", a.output.join("summary.md").display());
    }
    Ok(())
}

fn cmd_serve(a: ServeArgs, quiet: bool) -> Result<()> {
    let corpus = load_corpus(a.corpus.as_deref(), bundled::human_corpus)?;
    let id = corpus.meta.source.clone();
    if let Some(dir) = &a.log_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let state = AppState::new(corpus.clone(), id, a.log_dir.clone());
    let restored = state.restore()?;
    if !quiet {
        header("serve", &corpus, &SessionConfig::human(), &[("addr", a.addr.clone()), ("restored_sessions", restored.to_string())]);
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(xal_service::serve(Arc::new(state), &a.addr))
        .with_context(|| format!("serving on {}", a.addr))
}

fn chart_series(means: &[MeanCurve], feedback: bool, value: fn(&xal_core::bench::CurvePoint) -> f64) -> Vec<(String, Vec<(f64, f64)>)> {
    means
        .iter()
        .filter(|m| m.feedback == feedback)
        .map(|m| (m.strategy.to_string(), m.points.iter().map(|p| (p.epoch as f64, value(p))).collect()))
        .collect()
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let means = load_mean_curves(&a.input)?;
    if means.is_empty() {
        bail!("no mean curves under {}", a.input.join("means").display());
    }
    let last = means.iter().filter_map(|m| m.points.last().map(|p| p.epoch)).min().unwrap_or(0);
    let gaps: Vec<usize> = a.gap_epochs.iter().copied().filter(|&e| e <= last).collect();
    let tables = render_tables(&means, &gaps);
    let write = |name: &str, body: &str| {
        let p = a.input.join(name);
        std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))
    };
    write("report.md", &tables)?;
    for feedback in [false, true] {
        let mcc = chart_series(&means, feedback, |p| p.mcc);
        if mcc.is_empty() {
            continue;
        }
        let tag = on_off(feedback);
        write(&format!("mcc.{tag}.svg"), &svg_line_chart(&format!("MCC, feedback {tag}"), "MCC", &mcc))?;
        let acc = chart_series(&means, feedback, |p| p.explanation_accuracy);
        write(
            &format!("explanation.{tag}.svg"),
            &svg_line_chart(&format!("Explanation accuracy, feedback {tag}"), "accuracy", &acc),
        )?;
    }
    print!("{tables}");
    let random = means.iter().filter(|m| m.strategy == Strategy::Random).count();
    if random == 0 {
        eprintln!("note: no random baseline among the curves; gap tables omitted");
    }
    Ok(())
}
