//! Corpus loading, batch evaluation and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::EvalConfig;
use crate::map::{HdMap, MapError};
use crate::metrics::{open_loop_l2, EpisodeResult, Infraction, InfractionKind, L2Report, L2Summary};
use crate::policy::{Policy, PolicyHandle, PolicySpec, PolicySpecError};
use crate::replay::{run_episode, EpisodeError};
use crate::scenario::{load_scenario, Scenario, ScenarioError};

#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Scenario {
        path: PathBuf,
        #[source]
        source: ScenarioError,
    },
    #[error("{path}: {source}")]
    Map {
        path: PathBuf,
        #[source]
        source: MapError,
    },
    #[error("duplicate scenario id {0}")]
    DuplicateScenario(String),
    #[error("duplicate map id {0}")]
    DuplicateMap(String),
    #[error("scenario {scenario} references unknown map {map}")]
    MissingMap { scenario: String, map: String },
    #[error("no scenario documents in {0}")]
    EmptyCorpus(PathBuf),
    #[error(transparent)]
    Spec(#[from] PolicySpecError),
    #[error("cannot start policy {spec}: {source}")]
    PolicyStart {
        spec: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BatchError + '_ {
    move |source| BatchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `*.json` files directly inside `dir`, sorted by file name.
pub fn json_files(dir: &Path) -> Result<Vec<PathBuf>, BatchError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads and checks every scenario document in `dir`. Returned in file-name
/// order together with their paths.
pub fn load_scenarios(dir: &Path) -> Result<Vec<(PathBuf, Scenario)>, BatchError> {
    json_files(dir)?
        .into_iter()
        .map(|path| {
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let s = load_scenario(&bytes).map_err(|source| BatchError::Scenario {
                path: path.clone(),
                source,
            })?;
            Ok((path, s))
        })
        .collect()
}

pub fn load_maps(dir: &Path) -> Result<BTreeMap<String, HdMap>, BatchError> {
    let mut out = BTreeMap::new();
    for path in json_files(dir)? {
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let m = HdMap::from_json(&bytes).map_err(|source| BatchError::Map {
            path: path.clone(),
            source,
        })?;
        let id = m.map_id.clone();
        if out.insert(id.clone(), m).is_some() {
            return Err(BatchError::DuplicateMap(id));
        }
    }
    Ok(out)
}

/// Scenarios (sorted by id) with the maps they reference.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub scenarios: Vec<Scenario>,
    pub maps: BTreeMap<String, HdMap>,
}

impl Corpus {
    pub fn new(mut scenarios: Vec<Scenario>, maps: BTreeMap<String, HdMap>) -> Result<Self, BatchError> {
        scenarios.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
        for w in scenarios.windows(2) {
            if w[0].scenario_id == w[1].scenario_id {
                return Err(BatchError::DuplicateScenario(w[0].scenario_id.clone()));
            }
        }
        for s in &scenarios {
            if !maps.contains_key(&s.intersection_id) {
                return Err(BatchError::MissingMap {
                    scenario: s.scenario_id.clone(),
                    map: s.intersection_id.clone(),
                });
            }
        }
        Ok(Corpus { scenarios, maps })
    }

    pub fn load(scenarios: &Path, maps: &Path) -> Result<Self, BatchError> {
        let docs: Vec<Scenario> = load_scenarios(scenarios)?.into_iter().map(|(_, s)| s).collect();
        if docs.is_empty() {
            return Err(BatchError::EmptyCorpus(scenarios.to_path_buf()));
        }
        Corpus::new(docs, load_maps(maps)?)
    }

    pub fn map_for(&self, s: &Scenario) -> &HdMap {
        &self.maps[&s.intersection_id]
    }
}

/// Hex SHA-256 over the serialized scenario documents in id order.
pub fn scenario_digest(scenarios: &[Scenario]) -> String {
    let mut sorted: Vec<&Scenario> = scenarios.iter().collect();
    sorted.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    let mut h = Sha256::new();
    for s in sorted {
        h.update(s.to_json().as_bytes());
    }
    hex::encode(h.finalize())
}

/// Per-episode seed derived from the run seed and the scenario id, so that
/// results do not depend on execution order.
pub fn episode_seed(seed: u64, scenario_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(scenario_id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Result row for an episode aborted by the policy.
pub fn aborted_result(s: &Scenario, err: &EpisodeError, cfg: &EvalConfig) -> EpisodeResult {
    let t0 = s.ego_track().samples[s.source_index()].tick;
    EpisodeResult {
        scenario_id: s.scenario_id.clone(),
        rc: 0.0,
        infractions: vec![Infraction {
            kind: InfractionKind::PolicyFailure,
            tick: err.tick(),
            penalty: cfg.penalties.get(InfractionKind::PolicyFailure),
            terminal: true,
        }],
        success: false,
        termination: err.termination(),
        duration_ticks: err.tick().saturating_sub(t0),
    }
}

fn run_one(policy: &mut dyn Policy, s: &Scenario, m: &HdMap, cfg: &EvalConfig, seed: u64) -> EpisodeResult {
    match run_episode(s, m, policy, cfg, episode_seed(seed, &s.scenario_id)) {
        Ok((r, _)) => r,
        Err(e) => aborted_result(s, &e, cfg),
    }
}

/// Runs every scenario once and returns results sorted by scenario id.
///
/// Builtin policies get a fresh instance per episode and may run on `jobs`
/// threads. A bridge policy is a single listener and runs sequentially.
pub fn evaluate_batch(
    corpus: &Corpus,
    spec: &PolicySpec,
    cfg: &EvalConfig,
    seed: u64,
    jobs: usize,
) -> Result<(Vec<EpisodeResult>, PolicyHandle), BatchError> {
    let start = |spec: &PolicySpec| {
        spec.instantiate().map_err(|source| BatchError::PolicyStart {
            spec: spec.to_string(),
            source,
        })
    };
    if spec.is_bridge() {
        let mut policy = start(spec)?;
        let handle = policy.handle();
        let results = corpus
            .scenarios
            .iter()
            .map(|s| run_one(policy.as_mut(), s, corpus.map_for(s), cfg, seed))
            .collect();
        return Ok((results, handle));
    }
    let rows: Vec<Result<EpisodeResult, BatchError>> = crate::par::map_with_jobs(&corpus.scenarios, jobs, |s| {
        let mut policy = start(spec)?;
        Ok(run_one(policy.as_mut(), s, corpus.map_for(s), cfg, seed))
    });
    let mut results = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    results.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    let handle = start(spec)?.handle();
    Ok((results, handle))
}

/// One JSON object per line, in the given order.
pub fn episodes_jsonl(results: &[EpisodeResult]) -> String {
    results
        .iter()
        .map(|r| serde_json::to_string(r).expect("results serialize") + "\n")
        .collect()
}

pub fn parse_episodes_jsonl(text: &str) -> Result<Vec<EpisodeResult>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Pretty JSON with a trailing newline.
pub fn to_pretty_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopReport {
    pub predictor: String,
    pub per_scenario: BTreeMap<String, L2Report>,
    /// Scenario ids skipped because the ego track is too short, with reason.
    pub skipped: BTreeMap<String, String>,
    /// Mean over scored scenarios; absent when nothing was scored.
    pub aggregate: Option<L2Summary>,
}

/// Open-loop L2 of `spec` over the corpus.
pub fn openloop_batch(corpus: &Corpus, spec: &PolicySpec, stride: u32, jobs: usize) -> Result<OpenLoopReport, BatchError> {
    spec.predictor(corpus.scenarios[0].ego_track())?;
    let rows = crate::par::map_with_jobs(&corpus.scenarios, jobs, |s| {
        let mut p = spec.predictor(s.ego_track()).expect("spec checked above");
        (s.scenario_id.clone(), open_loop_l2(p.as_mut(), s, stride))
    });
    let mut per_scenario = BTreeMap::new();
    let mut skipped = BTreeMap::new();
    for (id, r) in rows {
        match r {
            Ok(rep) => {
                per_scenario.insert(id, rep);
            }
            Err(e) => {
                skipped.insert(id, e.to_string());
            }
        }
    }
    Ok(OpenLoopReport {
        predictor: spec.to_string(),
        aggregate: mean_l2(per_scenario.values()),
        per_scenario,
        skipped,
    })
}

pub fn mean_l2<'a>(reports: impl IntoIterator<Item = &'a L2Report>) -> Option<L2Summary> {
    let (mut a, mut b, mut n) = (0.0, 0.0, 0usize);
    for r in reports {
        a += r.l2_1s;
        b += r.l2_2s;
        n += 1;
    }
    (n > 0).then(|| {
        let (l2_1s, l2_2s) = (a / n as f64, b / n as f64);
        L2Summary {
            l2_1s,
            l2_2s,
            avg: (l2_1s + l2_2s) / 2.0,
        }
    })
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: EvalConfig,
    pub scenario_digest: String,
    pub n_scenarios: usize,
    pub policy_spec: String,
    pub policy: PolicyHandle,
    pub seed: u64,
    pub jobs: usize,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
}

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}
