//! Run directories and the train / eval / demo-quality entry points.
//!
//! Each training seed owns one directory under the output root holding the
//! metrics CSV, checkpoints, the step-level trajectory log, the planner
//! transcript, and a manifest sidecar stamping every artifact with the
//! config digest and seed. A failed run leaves its partial artifacts behind
//! with the failure recorded in the manifest.

use crate::config::{ConfigError, RunConfig};
use crate::policy::{load_bundles, save_bundles, CheckpointError, CheckpointMeta, PolicyBundle};
use crate::roadnet::{NavEnv, NetworkError, RoadNetwork, Scenario, ScenarioError};
use crate::trainer::{
    demo_quality, evaluate, mean_sd, DemoQualityCell, DemoRound, EpochReport, EvalStat, Trainer,
    TrainerError, METRICS_HEADER,
};
use crate::trajectory::Provenance;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint incompatible with the configured world: {0}")]
    Incompatible(String),
}

impl RunError {
    /// Process exit code: configuration problems are usage errors.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.display().to_string(), source }
}

/// Loads and cross-validates the world described by the config.
pub fn load_world(config: &RunConfig) -> Result<(RoadNetwork, Scenario), RunError> {
    let network = RoadNetwork::from_file(&config.paths.network)?;
    let scenario = Scenario::from_file(&config.paths.scenario)?;
    scenario.validate(&network)?;
    Ok((network, scenario))
}

#[derive(Debug, Serialize)]
struct Manifest {
    command: &'static str,
    config_digest: String,
    seed: u64,
    mode: String,
    oracle: String,
    network: String,
    scenario: String,
    agents: usize,
    epochs: u32,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics_sha256: Option<String>,
    files: Vec<String>,
}

impl Manifest {
    fn new(config: &RunConfig, seed: u64, agents: usize, command: &'static str) -> Self {
        Manifest {
            command,
            config_digest: config.digest(),
            seed,
            mode: config.run.mode.to_string(),
            oracle: config.run.oracle.to_string(),
            network: config.paths.network.display().to_string(),
            scenario: config.paths.scenario.display().to_string(),
            agents,
            epochs: config.trainer.epochs,
            status: "running",
            error: None,
            metrics_sha256: None,
            files: Vec::new(),
        }
    }

    fn write(&self, dir: &Path) -> Result<(), RunError> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(io_err(&path))
    }
}

/// One step of one trajectory, tagged for replay.
#[derive(Serialize)]
struct StepRecord<'a> {
    kind: &'static str,
    epoch: u32,
    /// Collection episode index within the epoch; absent for demonstration
    /// rollouts.
    #[serde(skip_serializing_if = "Option::is_none")]
    episode: Option<usize>,
    agent: usize,
    provenance: &'a Provenance,
    round: u64,
    action: usize,
    reward: f64,
    log_prob: f64,
    position: (f64, f64),
}

/// Per-agent warping distance against the stored demonstration.
#[derive(Serialize)]
struct AlignmentRecord {
    kind: &'static str,
    epoch: u32,
    agent: usize,
    dtw: f64,
    dtw_raw: f64,
}

fn append_trajectories(
    w: &mut BufWriter<File>,
    path: &Path,
    report: &EpochReport,
) -> Result<(), RunError> {
    let mut emit = |record: &StepRecord| -> Result<(), RunError> {
        serde_json::to_writer(&mut *w, record)
            .map_err(|e| RunError::Io { path: path.display().to_string(), source: e.into() })?;
        writeln!(w).map_err(io_err(path))
    };
    for (episode, result) in report.episodes.iter().enumerate() {
        for traj in &result.trajectories {
            for step in &traj.steps {
                emit(&StepRecord {
                    kind: "step",
                    epoch: report.epoch,
                    episode: Some(episode),
                    agent: traj.agent_id,
                    provenance: &traj.provenance,
                    round: step.round,
                    action: step.action,
                    reward: step.reward,
                    log_prob: step.log_prob,
                    position: step.position,
                })?;
            }
        }
    }
    for traj in &report.demo_trajectories {
        for step in &traj.steps {
            emit(&StepRecord {
                kind: "step",
                epoch: report.epoch,
                episode: None,
                agent: traj.agent_id,
                provenance: &traj.provenance,
                round: step.round,
                action: step.action,
                reward: step.reward,
                log_prob: step.log_prob,
                position: step.position,
            })?;
        }
    }
    for row in &report.rows {
        if row.dtw.is_finite() {
            let record = AlignmentRecord {
                kind: "alignment",
                epoch: row.epoch,
                agent: row.agent_id,
                dtw: row.dtw,
                dtw_raw: row.dtw_raw,
            };
            serde_json::to_writer(&mut *w, &record)
                .map_err(|e| RunError::Io { path: path.display().to_string(), source: e.into() })?;
            writeln!(w).map_err(io_err(path))?;
        }
    }
    Ok(())
}

/// Trains one run per configured seed. Returns the run directories in seed
/// order. A failing seed stops the sweep; completed directories stay valid
/// and the failing one records its error in the manifest.
pub fn cmd_train(config: &RunConfig) -> Result<Vec<PathBuf>, RunError> {
    let mut dirs = Vec::new();
    for &seed in &config.run.seeds {
        dirs.push(train_one_seed(config, seed)?);
    }
    Ok(dirs)
}

fn train_one_seed(config: &RunConfig, seed: u64) -> Result<PathBuf, RunError> {
    let (network, scenario) = load_world(config)?;
    let dir = config.run.out.join(format!("seed_{seed}"));
    let ckpt_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;

    let mut manifest = Manifest::new(config, seed, scenario.agents.len(), "train");
    manifest.write(&dir)?;

    match train_into(config, seed, network, scenario, &dir, &mut manifest) {
        Ok(()) => {
            manifest.status = "completed";
            manifest.write(&dir)?;
            Ok(dir)
        }
        Err(err) => {
            manifest.status = "failed";
            manifest.error = Some(err.to_string());
            // Best effort: the original error is the one worth reporting.
            let _ = manifest.write(&dir);
            Err(err)
        }
    }
}

fn train_into(
    config: &RunConfig,
    seed: u64,
    network: RoadNetwork,
    scenario: Scenario,
    dir: &Path,
    manifest: &mut Manifest,
) -> Result<(), RunError> {
    let trainer_config = config.trainer.trainer_config(seed);
    let mut trainer = Trainer::new(
        network,
        scenario,
        trainer_config.clone(),
        config.run.mode,
        config.build_oracle(),
    )?;

    let metrics_path = dir.join("metrics.csv");
    let mut metrics = BufWriter::new(File::create(&metrics_path).map_err(io_err(&metrics_path))?);
    writeln!(metrics, "{METRICS_HEADER}").map_err(io_err(&metrics_path))?;
    manifest.files.push("metrics.csv".into());

    let traj_path = dir.join("trajectories.jsonl");
    let mut trajectories = BufWriter::new(File::create(&traj_path).map_err(io_err(&traj_path))?);
    manifest.files.push("trajectories.jsonl".into());

    // Created lazily: a run that never reaches a demonstration round (ippo
    // mode in particular) produces no transcript.
    let transcript_path = dir.join("oracle_transcript.jsonl");
    let mut transcript: Option<BufWriter<File>> = None;

    while trainer.epoch() < trainer_config.epochs {
        let report = trainer.run_epoch()?;
        for row in &report.rows {
            writeln!(metrics, "{}", row.csv()).map_err(io_err(&metrics_path))?;
        }
        append_trajectories(&mut trajectories, &traj_path, &report)?;
        if let Some(demo) = &report.demo {
            let w = match &mut transcript {
                Some(w) => w,
                None => {
                    let file = File::create(&transcript_path).map_err(io_err(&transcript_path))?;
                    manifest.files.push("oracle_transcript.jsonl".into());
                    transcript.insert(BufWriter::new(file))
                }
            };
            serde_json::to_writer(&mut *w, demo).map_err(|e| RunError::Io {
                path: transcript_path.display().to_string(),
                source: e.into(),
            })?;
            writeln!(w).map_err(io_err(&transcript_path))?;
        }
        let k = report.epoch;
        if trainer_config.checkpoint_interval > 0
            && k % trainer_config.checkpoint_interval == 0
            && k < trainer_config.epochs
        {
            let name = format!("checkpoints/epoch_{k:05}.ckpt");
            let path = dir.join(&name);
            save_bundles(&path, trainer.bundles(), CheckpointMeta { epoch: u64::from(k), seed })?;
            manifest.files.push(name);
        }
    }

    let final_path = dir.join("checkpoints/final.ckpt");
    save_bundles(
        &final_path,
        trainer.bundles(),
        CheckpointMeta { epoch: u64::from(trainer_config.epochs), seed },
    )?;
    manifest.files.push("checkpoints/final.ckpt".into());

    metrics.flush().map_err(io_err(&metrics_path))?;
    trajectories.flush().map_err(io_err(&traj_path))?;
    if let Some(w) = &mut transcript {
        w.flush().map_err(io_err(&transcript_path))?;
    }
    manifest.metrics_sha256 = Some(file_sha256(&metrics_path)?);
    Ok(())
}

pub fn file_sha256(path: &Path) -> Result<String, RunError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub config_digest: String,
    pub seed: u64,
    pub checkpoint: String,
    /// Epoch recorded in the checkpoint.
    pub checkpoint_epoch: u64,
    pub episodes: u32,
    pub per_agent: Vec<EvalStat>,
    /// Mean over agents of the per-agent mean episode reward.
    pub fleet_mean_reward: f64,
    pub fleet_mean_travel_time: f64,
    pub fleet_arrival_rate: f64,
}

/// Greedy evaluation of a checkpoint on the configured world, one report
/// per configured seed, written to the output directory.
pub fn cmd_eval(
    config: &RunConfig,
    checkpoint: &Path,
    episodes: u32,
) -> Result<Vec<(PathBuf, EvalReport)>, RunError> {
    let (network, scenario) = load_world(config)?;
    let (bundles, meta) = load_bundles(checkpoint)?;
    check_compatible(&bundles, &network, &scenario)?;
    std::fs::create_dir_all(&config.run.out).map_err(io_err(&config.run.out))?;
    let digest = config.digest();
    let mut reports = Vec::new();
    for &seed in &config.run.seeds {
        let mut env = NavEnv::new(network.clone(), scenario.clone())?;
        let per_agent = evaluate(&mut env, &bundles, episodes, seed)?;
        let n = per_agent.len() as f64;
        let report = EvalReport {
            config_digest: digest.clone(),
            seed,
            checkpoint: checkpoint.display().to_string(),
            checkpoint_epoch: meta.epoch,
            episodes,
            fleet_mean_reward: per_agent.iter().map(|s| s.mean_reward).sum::<f64>() / n,
            fleet_mean_travel_time: per_agent.iter().map(|s| s.mean_travel_time).sum::<f64>() / n,
            fleet_arrival_rate: per_agent.iter().map(|s| s.arrival_rate).sum::<f64>() / n,
            per_agent,
        };
        let path = config.run.out.join(format!("eval_seed_{seed}.json"));
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(&path, text).map_err(io_err(&path))?;
        reports.push((path, report));
    }
    Ok(reports)
}

fn check_compatible(
    bundles: &[PolicyBundle],
    network: &RoadNetwork,
    scenario: &Scenario,
) -> Result<(), RunError> {
    if bundles.len() != scenario.agents.len() {
        return Err(RunError::Incompatible(format!(
            "checkpoint holds {} policies but the scenario has {} agents",
            bundles.len(),
            scenario.agents.len()
        )));
    }
    let m_out = network.max_out_degree();
    for (i, bundle) in bundles.iter().enumerate() {
        if bundle.policy.m_out() != m_out {
            return Err(RunError::Incompatible(format!(
                "policy {i} expects {} action slots but the network has {m_out}",
                bundle.policy.m_out()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    /// Contributing repeats (seeds with an available measurement).
    pub n: usize,
}

fn aggregate(values: &[f64]) -> Option<MeanSd> {
    if values.is_empty() {
        return None;
    }
    let (mean, sd) = mean_sd(values);
    Some(MeanSd { mean, sd, n: values.len() })
}

/// Demonstration quality for one refinement count, aggregated over seeds.
/// `None` cells were unavailable for every repeat (or undefined, as the
/// warping delta is for zero refinements).
#[derive(Debug, Serialize)]
pub struct QualityRow {
    pub refinements: u32,
    pub seeds: usize,
    pub execution_rate: Option<MeanSd>,
    pub mean_reward: Option<MeanSd>,
    pub inference_s: Option<MeanSd>,
    pub dtw_from_initial: Option<MeanSd>,
}

#[derive(Debug, Serialize)]
pub struct QualityReport {
    pub config_digest: String,
    pub oracle: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<QualityRow>,
}

/// Grades planner demonstrations: for each requested refinement count, the
/// full pipeline runs once per seed and the final round's measurements are
/// aggregated as mean and standard deviation over seeds. Writes a JSON
/// summary, a tidy per-seed CSV, and the complete planner transcript.
pub fn cmd_demo_quality(
    config: &RunConfig,
    refinement_counts: &[u32],
) -> Result<(PathBuf, QualityReport), RunError> {
    let (network, scenario) = load_world(config)?;
    std::fs::create_dir_all(&config.run.out).map_err(io_err(&config.run.out))?;

    let csv_path = config.run.out.join("demo_quality.csv");
    let mut csv = BufWriter::new(File::create(&csv_path).map_err(io_err(&csv_path))?);
    // The warping-delta column needs a round-zero baseline; leave it out
    // when only zero-refinement runs were requested.
    let with_dtw = refinement_counts.iter().any(|&r| r > 0);
    let header = if with_dtw {
        "refinements,seed,execution_rate,mean_reward,inference_s,dtw_from_initial"
    } else {
        "refinements,seed,execution_rate,mean_reward,inference_s"
    };
    writeln!(csv, "{header}").map_err(io_err(&csv_path))?;

    let transcript_path = config.run.out.join("demo_quality_transcript.jsonl");
    let mut transcript =
        BufWriter::new(File::create(&transcript_path).map_err(io_err(&transcript_path))?);

    #[derive(Serialize)]
    struct TranscriptRecord<'a> {
        refinements: u32,
        seed: u64,
        round: &'a DemoRound,
    }

    let mut rows = Vec::new();
    for &r in refinement_counts {
        let mut exec = Vec::new();
        let mut reward = Vec::new();
        let mut inference = Vec::new();
        let mut dtw = Vec::new();
        for &seed in &config.run.seeds {
            let trainer_config = config.trainer.trainer_config(seed);
            let mut oracle = config.build_oracle();
            let (cells, transcript_rounds) = demo_quality(
                network.clone(),
                scenario.clone(),
                &trainer_config,
                oracle.as_mut(),
                r,
            )?;
            for round in &transcript_rounds {
                serde_json::to_writer(
                    &mut transcript,
                    &TranscriptRecord { refinements: r, seed, round },
                )
                .map_err(|e| RunError::Io {
                    path: transcript_path.display().to_string(),
                    source: e.into(),
                })?;
                writeln!(transcript).map_err(io_err(&transcript_path))?;
            }
            let last: &DemoQualityCell = cells.last().expect("at least one round");
            if let Some(v) = last.execution_rate {
                exec.push(v);
            }
            if let Some(v) = last.mean_reward {
                reward.push(v);
            }
            if let Some(v) = last.inference_s {
                inference.push(v);
            }
            if r > 0 {
                if let Some(v) = last.dtw_from_initial {
                    dtw.push(v);
                }
            }
            let base = format!(
                "{r},{seed},{},{},{}",
                fmt_cell(last.execution_rate),
                fmt_cell(last.mean_reward),
                fmt_cell(last.inference_s)
            );
            let line = if with_dtw {
                format!("{base},{}", fmt_cell(if r > 0 { last.dtw_from_initial } else { None }))
            } else {
                base
            };
            writeln!(csv, "{line}").map_err(io_err(&csv_path))?;
        }
        rows.push(QualityRow {
            refinements: r,
            seeds: config.run.seeds.len(),
            execution_rate: aggregate(&exec),
            mean_reward: aggregate(&reward),
            inference_s: aggregate(&inference),
            dtw_from_initial: aggregate(&dtw),
        });
    }
    csv.flush().map_err(io_err(&csv_path))?;
    transcript.flush().map_err(io_err(&transcript_path))?;

    let report = QualityReport {
        config_digest: config.digest(),
        oracle: config.run.oracle.to_string(),
        seeds: config.run.seeds.clone(),
        rows,
    };
    let json_path = config.run.out.join("demo_quality.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&json_path, text).map_err(io_err(&json_path))?;
    Ok((json_path, report))
}

fn fmt_cell(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v}"),
        None => "NaN".to_string(),
    }
}
