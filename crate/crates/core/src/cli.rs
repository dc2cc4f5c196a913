//! Command-line surface. Every artifact is written under `--out`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::batch::{
    evaluate_batch, episodes_jsonl, load_maps, load_scenarios, openloop_batch, scenario_digest, to_pretty_json, unix_now,
    BatchError, Corpus, RunManifest, TOOL_VERSION,
};
use crate::config::EvalConfig;
use crate::forge::{
    canonical_corpus, classify_behavior_with, generate_synthetic, occlusion_filter_report, ClassifierConfig,
    GenerateError, GeneratorSpec, OcclusionConfig, OcclusionMode, RemovalRule,
};
use crate::map::HdMap;
use crate::metrics::{summarize, BenchmarkSummary, GroupStats};
use crate::policy::PolicySpec;
use crate::scenario::{load_scenario, scenario_stats, validate_scenario, Scenario};

#[derive(Debug, Parser)]
#[command(name = "replaybench", version, about = "Closed-loop log-replay evaluation of driving policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Directory of scenario documents (*.json).
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// Directory of map documents (*.json), keyed by map_id.
    #[arg(long)]
    pub maps: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Verb-specific JSON configuration document.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a policy closed-loop over every scenario.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "builtin:expert")]
        policy: String,
    },
    /// Score an open-loop predictor by L2 error at 1 s and 2 s.
    Openloop {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "builtin:constant-velocity")]
        policy: String,
    },
    /// Label every scenario with its behavior.
    Classify {
        #[command(flatten)]
        common: Common,
    },
    /// Remove agents the recorded ego could not see.
    Filter {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<OcclusionMode>,
        #[arg(long)]
        rule: Option<RemovalRule>,
        #[arg(long)]
        sensor_range: Option<f64>,
        #[arg(long)]
        boundary_samples: Option<usize>,
        #[arg(long)]
        min_visible_fraction: Option<f64>,
    },
    /// Generate synthetic scenarios and their map.
    Forge {
        #[command(flatten)]
        common: Common,
        /// Named suite; only "canonical" exists.
        #[arg(long)]
        suite: Option<String>,
        /// Generator spec document; overrides --suite.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Check scenario documents against their maps.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Render a summary as per-behavior and per-condition tables.
    Report {
        #[command(flatten)]
        common: Common,
        /// Summary document; defaults to <out>/summary.json.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing required flag --{0}")]
    MissingFlag(&'static str),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Document { path: PathBuf, reason: String },
}

/// How a successful command ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Clean,
    /// `validate` found at least one violation.
    Violations,
}

fn need<'a>(v: &'a Option<PathBuf>, name: &'static str) -> Result<&'a Path, CliError> {
    v.as_deref().ok_or(CliError::MissingFlag(name))
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.into(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })
}

/// Writes only when the content differs. Returns whether it wrote.
fn write_if_changed(path: &Path, text: &str) -> Result<bool, CliError> {
    if fs::read(path).is_ok_and(|old| old == text.as_bytes()) {
        return Ok(false);
    }
    write(path, text)?;
    Ok(true)
}

fn load_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => serde_json::from_slice(&read(p)?).map_err(|e| CliError::Document {
            path: p.into(),
            reason: e.to_string(),
        }),
    }
}

fn parse_policy(spec: &str) -> Result<PolicySpec, CliError> {
    spec.parse().map_err(|e: crate::policy::PolicySpecError| CliError::Usage(e.to_string()))
}

fn corpus(c: &Common) -> Result<Corpus, CliError> {
    Ok(Corpus::load(need(&c.scenarios, "scenarios")?, need(&c.maps, "maps")?)?)
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Evaluate { common, policy } => cmd_evaluate(&common, &policy),
        Command::Openloop { common, policy } => cmd_openloop(&common, &policy),
        Command::Classify { common } => cmd_classify(&common),
        Command::Filter {
            common,
            mode,
            rule,
            sensor_range,
            boundary_samples,
            min_visible_fraction,
        } => {
            let mut cfg: OcclusionConfig = load_config(common.config.as_deref())?;
            if cfg == OcclusionConfig::default() && mode.is_none() {
                cfg.mode = OcclusionMode::Vehicles;
            }
            cfg.mode = mode.unwrap_or(cfg.mode);
            cfg.removal_rule = rule.unwrap_or(cfg.removal_rule);
            cfg.sensor_range = sensor_range.unwrap_or(cfg.sensor_range);
            cfg.boundary_samples = boundary_samples.unwrap_or(cfg.boundary_samples);
            cfg.visibility_fraction_min = min_visible_fraction.unwrap_or(cfg.visibility_fraction_min);
            cfg.check().map_err(|e| CliError::Usage(e.to_string()))?;
            cmd_filter(&common, &cfg)
        }
        Command::Forge { common, suite, spec } => cmd_forge(&common, suite.as_deref(), spec.as_deref()),
        Command::Validate { common } => cmd_validate(&common),
        Command::Report { common, summary } => cmd_report(&common, summary.as_deref()),
    }
}

pub fn cmd_evaluate(c: &Common, policy: &str) -> Result<Outcome, CliError> {
    let out = need(&c.out, "out")?;
    let spec = parse_policy(policy)?;
    let cfg: EvalConfig = load_config(c.config.as_deref())?;
    cfg.check().map_err(|e| CliError::Usage(e.to_string()))?;
    let corpus = corpus(c)?;
    let started = unix_now();
    let (results, handle) = evaluate_batch(&corpus, &spec, &cfg, c.seed, c.jobs)?;
    let summary = summarize(&results, &corpus.scenarios, &cfg.penalties)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.into(),
        config: cfg,
        scenario_digest: scenario_digest(&corpus.scenarios),
        n_scenarios: corpus.scenarios.len(),
        policy_spec: spec.to_string(),
        policy: handle,
        seed: c.seed,
        jobs: c.jobs,
        started_unix_s: started,
        finished_unix_s: unix_now(),
    };
    write(&out.join("episodes.jsonl"), &episodes_jsonl(&results))?;
    write(&out.join("summary.json"), &to_pretty_json(&summary))?;
    write(&out.join("manifest.json"), &to_pretty_json(&manifest))?;
    println!(
        "{} episodes  DS {:.2}  SR {:.2}  -> {}",
        summary.n_total,
        summary.ds,
        summary.sr,
        out.display()
    );
    Ok(Outcome::Clean)
}

pub fn cmd_openloop(c: &Common, policy: &str) -> Result<Outcome, CliError> {
    let out = need(&c.out, "out")?;
    let spec = parse_policy(policy)?;
    let cfg: EvalConfig = load_config(c.config.as_deref())?;
    cfg.check().map_err(|e| CliError::Usage(e.to_string()))?;
    let corpus = corpus(c)?;
    let report = openloop_batch(&corpus, &spec, cfg.l2_anchor_stride, c.jobs)?;
    write(&out.join("l2.json"), &to_pretty_json(&report))?;
    let mut text = format!("{:<24} {:>8} {:>8} {:>8}\n", "scenario", "1s", "2s", "avg");
    for (id, r) in &report.per_scenario {
        let _ = writeln!(text, "{id:<24} {:>8.3} {:>8.3} {:>8.3}", r.l2_1s, r.l2_2s, r.avg);
    }
    if let Some(a) = report.aggregate {
        let _ = writeln!(text, "{:<24} {:>8.3} {:>8.3} {:>8.3}", "mean", a.l2_1s, a.l2_2s, a.avg);
    }
    for (id, why) in &report.skipped {
        let _ = writeln!(text, "skipped {id}: {why}");
    }
    print!("{text}");
    Ok(Outcome::Clean)
}

pub fn cmd_classify(c: &Common) -> Result<Outcome, CliError> {
    let out = need(&c.out, "out")?;
    let cfg: ClassifierConfig = load_config(c.config.as_deref())?;
    let docs = load_scenarios(need(&c.scenarios, "scenarios")?)?;
    let maps = load_maps(need(&c.maps, "maps")?)?;
    let mut changed = 0usize;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for (path, mut s) in docs {
        let m = map_of(&maps, &s)?;
        let label = classify_behavior_with(&s, m, &cfg);
        *counts.entry(label.sub.to_string()).or_default() += 1;
        s.behavior = Some(label);
        let name = path.file_name().expect("json files have names");
        if write_if_changed(&out.join(name), &s.to_json())? {
            changed += 1;
        }
    }
    for (label, n) in &counts {
        println!("{label:<8} {n}");
    }
    println!("{changed} file(s) written");
    Ok(Outcome::Clean)
}

fn map_of<'a>(maps: &'a BTreeMap<String, HdMap>, s: &Scenario) -> Result<&'a HdMap, CliError> {
    maps.get(&s.intersection_id).ok_or_else(|| {
        CliError::Batch(BatchError::MissingMap {
            scenario: s.scenario_id.clone(),
            map: s.intersection_id.clone(),
        })
    })
}

#[derive(Debug, Serialize)]
struct FilterRow {
    n_before: usize,
    n_after: usize,
    removed: Vec<String>,
    trimmed: Vec<String>,
}

#[derive(Debug, Serialize)]
struct FilterReport {
    config: OcclusionConfig,
    total_removed: usize,
    per_scenario: BTreeMap<String, FilterRow>,
}

pub fn cmd_filter(c: &Common, cfg: &OcclusionConfig) -> Result<Outcome, CliError> {
    let out = need(&c.out, "out")?;
    let docs = load_scenarios(need(&c.scenarios, "scenarios")?)?;
    let filtered = crate::par::map_with_jobs(&docs, c.jobs, |(path, s)| {
        let (f, outcome) = occlusion_filter_report(s, cfg);
        (path.clone(), s.tracks.len(), f, outcome)
    });
    let mut report = FilterReport {
        config: *cfg,
        total_removed: 0,
        per_scenario: BTreeMap::new(),
    };
    for (path, n_before, f, outcome) in filtered {
        report.total_removed += outcome.removed.len();
        report.per_scenario.insert(
            f.scenario_id.clone(),
            FilterRow {
                n_before,
                n_after: f.tracks.len(),
                removed: outcome.removed.into_iter().collect(),
                trimmed: outcome.trimmed.into_iter().collect(),
            },
        );
        let name = path.file_name().expect("json files have names");
        write(&out.join("scenarios").join(name), &f.to_json())?;
    }
    write(&out.join("filter_report.json"), &to_pretty_json(&report))?;
    println!(
        "{} scenario(s), {} agent(s) removed -> {}",
        report.per_scenario.len(),
        report.total_removed,
        out.display()
    );
    Ok(Outcome::Clean)
}

fn write_corpus(out: &Path, scenarios: &[Scenario], map: &HdMap) -> Result<(), CliError> {
    for s in scenarios {
        write(&out.join("scenarios").join(format!("{}.json", s.scenario_id)), &s.to_json())?;
    }
    let mut m = map.to_json();
    if !m.ends_with('\n') {
        m.push('\n');
    }
    write(&out.join("maps").join(format!("{}.json", map.map_id)), &m)
}

pub fn cmd_forge(c: &Common, suite: Option<&str>, spec: Option<&Path>) -> Result<Outcome, CliError> {
    let out = need(&c.out, "out")?;
    let (scenarios, map) = if let Some(p) = spec {
        let spec: GeneratorSpec = serde_json::from_slice(&read(p)?).map_err(|e| CliError::Document {
            path: p.into(),
            reason: e.to_string(),
        })?;
        let (s, m) = generate_synthetic(&spec)?;
        (vec![s], m)
    } else {
        match suite.unwrap_or("canonical") {
            "canonical" => canonical_corpus()?,
            other => return Err(CliError::Usage(format!("unknown suite {other:?}"))),
        }
    };
    write_corpus(out, &scenarios, &map)?;
    println!("{} scenario(s) -> {}", scenarios.len(), out.display());
    Ok(Outcome::Clean)
}

pub fn cmd_validate(c: &Common) -> Result<Outcome, CliError> {
    let dir = need(&c.scenarios, "scenarios")?;
    let maps = load_maps(need(&c.maps, "maps")?)?;
    let mut bad = 0usize;
    let mut lines = String::new();
    for path in crate::batch::json_files(dir)? {
        let name = path.display();
        let s = match load_scenario(&read(&path)?) {
            Ok(s) => s,
            Err(e) => {
                bad += 1;
                let _ = writeln!(lines, "{name}: {e}");
                continue;
            }
        };
        let Some(m) = maps.get(&s.intersection_id) else {
            bad += 1;
            let _ = writeln!(lines, "{name}: unknown map {}", s.intersection_id);
            continue;
        };
        let vs = validate_scenario(&s, m);
        if vs.is_empty() {
            let _ = writeln!(lines, "{name}: ok");
        } else {
            bad += 1;
            for v in vs {
                let _ = writeln!(lines, "{name}: {v}");
            }
        }
    }
    print!("{lines}");
    if let Some(out) = &c.out {
        write(&out.join("validation.txt"), &lines)?;
    }
    Ok(if bad == 0 { Outcome::Clean } else { Outcome::Violations })
}

fn table(title: &str, rows: &BTreeMap<String, GroupStats>) -> String {
    let mut t = format!("{title:<16} {:>5} {:>8} {:>8}\n", "n", "SR", "DS");
    for (k, g) in rows {
        let _ = writeln!(t, "{k:<16} {:>5} {:>8.2} {:>8.2}", g.n, g.sr, g.ds);
    }
    t
}

/// Text rendering of a summary: overall line, then one table per grouping.
pub fn render_summary(s: &BenchmarkSummary) -> String {
    let mut t = format!("overall  n={}  DS {:.2}  SR {:.2}\n", s.n_total, s.ds, s.sr);
    if let Some(l2) = s.l2 {
        let _ = writeln!(t, "L2  1s {:.3}  2s {:.3}  avg {:.3}", l2.l2_1s, l2.l2_2s, l2.avg);
    }
    t.push('\n');
    t.push_str(&table("behavior", &s.per_behavior));
    t.push('\n');
    t.push_str(&table("weather", &s.per_weather));
    t.push('\n');
    t.push_str(&table("time of day", &s.per_time));
    t
}

pub fn cmd_report(c: &Common, summary: Option<&Path>) -> Result<Outcome, CliError> {
    let default = c.out.as_ref().map(|o| o.join("summary.json"));
    let path = summary
        .map(Path::to_path_buf)
        .or(default)
        .ok_or(CliError::MissingFlag("summary"))?;
    let s: BenchmarkSummary = serde_json::from_slice(&read(&path)?).map_err(|e| CliError::Document {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let mut text = render_summary(&s);
    if let Some(dir) = &c.scenarios {
        let docs: Vec<Scenario> = load_scenarios(dir)?.into_iter().map(|(_, s)| s).collect();
        let stats = scenario_stats(&docs).map_err(|e| CliError::Usage(e.to_string()))?;
        let _ = writeln!(text, "\nscenario set: {}", stats.n_scenarios);
        for (title, m) in [
            ("behavior", &stats.behavior),
            ("agents", &stats.agent_category),
            ("weather", &stats.weather),
            ("time of day", &stats.time_of_day),
        ] {
            let _ = writeln!(text, "{title}:");
            for (k, v) in m {
                let _ = writeln!(text, "  {k:<14} {:>6} {:>6.1}%", v.count, 100.0 * v.fraction);
            }
        }
    }
    print!("{text}");
    if let Some(out) = &c.out {
        write(&out.join("report.txt"), &text)?;
    }
    Ok(Outcome::Clean)
}
