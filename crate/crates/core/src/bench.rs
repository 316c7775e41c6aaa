//! Experiment harness: scenario configs, seeded runs and sweeps, per-episode
//! metrics, CSV and SVG export, and the statistics used to judge results.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

use crate::baselines::{discretize, QLearningConfig};
use crate::control::{self, EpisodeRecord, LoopConfig, PolicyConfig, PolicyKind, RewardConfig};
use crate::experience::{ExperiencePool, SelectionConfig, DEFAULT_POOL_CAPACITY};
use crate::llm::{ChatModel, LlmConfig, MockLlm, OpenAiClient, RecordingModel, ReplayModel};
use crate::netsim::{Case, NetworkConfig};
use crate::prompting::PromptTemplate;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid scenario:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("model backend: {0}")]
    Backend(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io { path: path.to_path_buf(), source }
}

/// Sweep alias that sets both prompt example caps at once.
pub const EXAMPLES_PARAM: &str = "examples";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// Dotted path into the scenario, e.g. `network.min_rate_bps`, or `examples`.
    pub param: String,
    pub values: Vec<f64>,
}

/// One experiment. Every field may be omitted from the JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub case: Case,
    pub policy: PolicyKind,
    pub network: NetworkConfig,
    pub reward: RewardConfig,
    /// Exploration schedule and run length.
    pub schedule: PolicyConfig,
    pub selection: SelectionConfig,
    pub llm: LlmConfig,
    pub qlearning: QLearningConfig,
    /// `null` keeps every example.
    pub pool_capacity: Option<usize>,
    /// Plain-text template with `{examples}` and `{state}`; built-in when absent.
    pub template_file: Option<PathBuf>,
    /// Recorded transcripts to serve instead of calling an endpoint.
    pub replay_file: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub sweep: Option<SweepAxis>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "scenario".to_string(),
            case: Case::Discrete,
            policy: PolicyKind::Icl,
            network: NetworkConfig::default(),
            reward: RewardConfig::default(),
            schedule: PolicyConfig::default(),
            selection: SelectionConfig::default(),
            llm: LlmConfig::default(),
            qlearning: QLearningConfig::default(),
            pool_capacity: Some(DEFAULT_POOL_CAPACITY),
            template_file: None,
            replay_file: None,
            seeds: (0..30).collect(),
            sweep: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text).map_err(|e| BenchError::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    /// All problems at once, including sweep values that cannot be applied.
    pub fn validate(&self) -> Result<(), BenchError> {
        let mut problems = Vec::new();
        if let Err(crate::netsim::NetsimError::InvalidConfig(p)) = self.network.validate() {
            problems.extend(p.into_iter().map(|m| format!("network: {m}")));
        }
        problems.extend(self.schedule.validate().into_iter().map(|m| format!("schedule: {m}")));
        if let Err(m) = self.selection.validate() {
            problems.push(format!("selection: {m}"));
        }
        problems.extend(self.llm.validate().into_iter().map(|m| format!("llm: {m}")));
        if !(self.reward.penalty >= 0.0) {
            problems.push(format!("reward: penalty must be non-negative, got {}", self.reward.penalty));
        }
        if self.seeds.is_empty() {
            problems.push("seeds must not be empty".to_string());
        }
        if self.pool_capacity == Some(0) {
            problems.push("pool_capacity must be positive or null".to_string());
        }
        if self.policy.uses_llm() && self.network.power_levels_w.len() != 4 {
            problems.push(format!(
                "policy {} prompts for exactly 4 power levels, network has {}",
                self.policy,
                self.network.power_levels_w.len()
            ));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                problems.push(format!("sweep over {} has no values", sweep.param));
            }
            for v in &sweep.values {
                if let Err(m) = self.with_param(&sweep.param, *v) {
                    problems.push(m);
                    break;
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(BenchError::Invalid(problems))
        }
    }

    /// A copy with one parameter replaced. Integer fields accept only whole values.
    pub fn with_param(&self, param: &str, value: f64) -> Result<Self, String> {
        if param == EXAMPLES_PARAM {
            let next = self.with_param("selection.k_recommended", value)?;
            return next.with_param("selection.k_inadvisable", value);
        }
        let mut root = serde_json::to_value(self).map_err(|e| e.to_string())?;
        let mut slot = &mut root;
        for key in param.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|obj| obj.get_mut(key))
                .ok_or_else(|| format!("sweep parameter {param:?} does not exist"))?;
        }
        *slot = match slot {
            Value::Number(n) if n.is_u64() || n.is_i64() => {
                if value.fract() != 0.0 {
                    return Err(format!("sweep parameter {param:?} is an integer, got {value}"));
                }
                Value::from(value as i64)
            }
            Value::Null if value.fract() == 0.0 => Value::from(value as i64),
            Value::Number(_) | Value::Null => Value::from(value),
            _ => return Err(format!("sweep parameter {param:?} is not numeric")),
        };
        serde_json::from_value(root).map_err(|e| format!("sweep parameter {param:?} = {value}: {e}"))
    }

    pub fn loop_config(&self) -> Result<LoopConfig, BenchError> {
        let template = match &self.template_file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(io_err(path))?;
                PromptTemplate::from_text(text)
                    .map_err(|e| BenchError::Parse { path: path.clone(), message: e.to_string() })?
            }
            None => PromptTemplate::default_for(self.case),
        };
        Ok(LoopConfig {
            case: self.case,
            network: self.network.clone(),
            reward: self.reward,
            policy: self.schedule,
            selection: self.selection,
            llm: self.llm.clone(),
            qlearning: self.qlearning,
            pool_capacity: self.pool_capacity,
            template,
        })
    }

    /// `(sweep value, config)` for every point, or the config itself when not sweeping.
    pub fn points(&self) -> Result<Vec<(Option<f64>, ScenarioConfig)>, BenchError> {
        match &self.sweep {
            None => Ok(vec![(None, self.clone())]),
            Some(sweep) => sweep
                .values
                .iter()
                .map(|v| {
                    let mut cfg = self.with_param(&sweep.param, *v).map_err(|m| BenchError::Invalid(vec![m]))?;
                    cfg.sweep = None;
                    Ok((Some(*v), cfg))
                })
                .collect(),
        }
    }
}

/// Where completions come from.
#[derive(Clone)]
pub enum Backend {
    /// A [`MockLlm`] seeded with each run's seed.
    Mock,
    /// One model shared by every run.
    Shared(Arc<dyn ChatModel>),
}

impl Backend {
    /// Mock for the `mock` model name, replay when a replay file is set, the
    /// HTTP client otherwise. Live exchanges are appended to `transcripts`.
    pub fn for_scenario(cfg: &ScenarioConfig, transcripts: Option<&Path>) -> Result<Self, BenchError> {
        if let Some(path) = &cfg.replay_file {
            let file = File::open(path).map_err(io_err(path))?;
            let model = ReplayModel::read_ndjson(BufReader::new(file)).map_err(|e| BenchError::Backend(e.to_string()))?;
            return Ok(Backend::Shared(Arc::new(model)));
        }
        if cfg.llm.model == "mock" || !cfg.policy.uses_llm() {
            return Ok(Backend::Mock);
        }
        let client = OpenAiClient::new(cfg.llm.clone()).map_err(|e| BenchError::Backend(e.to_string()))?;
        Ok(match transcripts {
            Some(path) => {
                let sink = File::create(path).map_err(io_err(path))?;
                Backend::Shared(Arc::new(RecordingModel::new(client, Box::new(BufWriter::new(sink)))))
            }
            None => Backend::Shared(Arc::new(client)),
        })
    }

    fn model(&self, seed: u64) -> Arc<dyn ChatModel> {
        match self {
            Backend::Mock => Arc::new(MockLlm::new(seed)),
            Backend::Shared(m) => Arc::clone(m),
        }
    }
}

/// Per-episode aggregate of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub policy: PolicyKind,
    pub seed: u64,
    pub sweep_value: Option<f64>,
    pub episode: usize,
    pub mean_reward: f64,
    pub mean_power_w: f64,
    /// Fraction of steps where every station met its rate floor.
    pub service_quality: f64,
    pub fallback_rate: f64,
}

/// Output of one (seed, sweep value) run.
pub struct Cell {
    pub seed: u64,
    pub sweep_value: Option<f64>,
    pub records: Vec<EpisodeRecord>,
    pub rows: Vec<MetricsRow>,
    /// Final experience pools, for pool-based policies.
    pub pools: Option<Vec<ExperiencePool>>,
}

/// Collapses a run's records into one row per episode.
pub fn aggregate(scenario: &str, seed: u64, sweep_value: Option<f64>, records: &[EpisodeRecord]) -> Vec<MetricsRow> {
    let mut by_episode: BTreeMap<usize, Vec<&EpisodeRecord>> = BTreeMap::new();
    for r in records {
        by_episode.entry(r.episode).or_default().push(r);
    }
    by_episode
        .into_iter()
        .map(|(episode, recs)| {
            let n = recs.len() as f64;
            // Every station's record repeats the step's total power and joint
            // feasibility, so record means equal step means.
            MetricsRow {
                scenario: scenario.to_string(),
                policy: recs[0].policy,
                seed,
                sweep_value,
                episode,
                mean_reward: recs.iter().map(|r| r.reward).sum::<f64>() / n,
                mean_power_w: recs.iter().map(|r| r.total_power_w).sum::<f64>() / n,
                service_quality: recs.iter().filter(|r| r.all_ok).count() as f64 / n,
                fallback_rate: recs.iter().filter(|r| r.fallback).count() as f64 / n,
            }
        })
        .collect()
}

/// Runs every (seed, sweep value) cell in parallel, each with fresh pools,
/// tables and generators. Cells come back ordered by sweep value, then seed.
pub fn run_cells(cfg: &ScenarioConfig, backend: &Backend) -> Result<Vec<Cell>, BenchError> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for (value, point) in cfg.points()? {
        let loop_cfg = Arc::new(point.loop_config()?);
        for &seed in &cfg.seeds {
            jobs.push((value, seed, Arc::clone(&loop_cfg)));
        }
    }
    let cells = jobs
        .into_par_iter()
        .map(|(sweep_value, seed, loop_cfg)| {
            let out = control::run(&loop_cfg, cfg.policy, seed, backend.model(seed));
            let rows = aggregate(&cfg.name, seed, sweep_value, &out.records);
            let pools = out.controller.pools().map(<[ExperiencePool]>::to_vec);
            Cell { seed, sweep_value, records: out.records, rows, pools }
        })
        .collect();
    Ok(cells)
}

pub fn run_scenario(cfg: &ScenarioConfig, backend: &Backend) -> Result<Vec<MetricsRow>, BenchError> {
    let mut rows: Vec<MetricsRow> = run_cells(cfg, backend)?.into_iter().flat_map(|c| c.rows).collect();
    sort_rows(&mut rows);
    Ok(rows)
}

/// The ICL policy at each prompt example cap; `0` is zero-shot.
pub fn sweep_examples(cfg: &ScenarioConfig, counts: &[usize], backend: &Backend) -> Result<Vec<MetricsRow>, BenchError> {
    let swept = ScenarioConfig {
        policy: PolicyKind::Icl,
        sweep: Some(SweepAxis { param: EXAMPLES_PARAM.to_string(), values: counts.iter().map(|&c| c as f64).collect() }),
        ..cfg.clone()
    };
    run_scenario(&swept, backend)
}

/// The in-context policy next to its ablations.
pub const ABLATION_POLICIES: [PolicyKind; 4] =
    [PolicyKind::Icl, PolicyKind::IclRandomExamples, PolicyKind::IclNopool, PolicyKind::Feedback];

pub fn ablate(cfg: &ScenarioConfig, backend: &Backend) -> Result<Vec<MetricsRow>, BenchError> {
    let mut rows = Vec::new();
    for policy in ABLATION_POLICIES {
        rows.extend(run_scenario(&ScenarioConfig { policy, ..cfg.clone() }, backend)?);
    }
    sort_rows(&mut rows);
    Ok(rows)
}

pub fn sort_rows(rows: &mut [MetricsRow]) {
    rows.sort_by(|a, b| {
        a.scenario
            .cmp(&b.scenario)
            .then(a.policy.tag().cmp(b.policy.tag()))
            .then(a.seed.cmp(&b.seed))
            .then(cmp_sweep(a.sweep_value, b.sweep_value))
            .then(a.episode.cmp(&b.episode))
    });
}

fn cmp_sweep(a: Option<f64>, b: Option<f64>) -> std::cmp::Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        _ => a.is_some().cmp(&b.is_some()),
    }
}

pub fn write_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<(), BenchError> {
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    let mut writer = csv::Writer::from_writer(out);
    if sorted.is_empty() {
        writer.write_record([
            "scenario",
            "policy",
            "seed",
            "sweep_value",
            "episode",
            "mean_reward",
            "mean_power_w",
            "service_quality",
            "fallback_rate",
        ])?;
    }
    for row in &sorted {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| BenchError::Csv(e.into()))?;
    Ok(())
}

pub fn export_csv(rows: &[MetricsRow], path: &Path) -> Result<(), BenchError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_csv(rows, BufWriter::new(file)).map_err(|e| match e {
        BenchError::Csv(c) => BenchError::Parse { path: path.to_path_buf(), message: c.to_string() },
        other => other,
    })
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>, BenchError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| BenchError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    reader
        .deserialize()
        .collect::<Result<Vec<MetricsRow>, _>>()
        .map_err(|e| BenchError::Parse { path: path.to_path_buf(), message: e.to_string() })
}

/// Everything a `run` writes: `metrics.csv`, `effective_config.json`, and the
/// first cell's `pool_<bs>.ndjson` files.
pub fn run_to_dir(cfg: &ScenarioConfig, out: &Path) -> Result<Vec<MetricsRow>, BenchError> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_effective_config(cfg, out)?;
    let transcripts = out.join("transcripts.ndjson");
    let backend = Backend::for_scenario(cfg, Some(&transcripts))?;
    let cells = run_cells(cfg, &backend)?;
    if let Some(pools) = cells.first().and_then(|c| c.pools.as_ref()) {
        for (bs, pool) in pools.iter().enumerate() {
            let path = out.join(format!("pool_{bs}.ndjson"));
            let file = File::create(&path).map_err(io_err(&path))?;
            pool.write_ndjson(BufWriter::new(file))
                .map_err(|e| BenchError::Parse { path: path.clone(), message: e.to_string() })?;
        }
    }
    let mut rows: Vec<MetricsRow> = cells.into_iter().flat_map(|c| c.rows).collect();
    sort_rows(&mut rows);
    export_csv(&rows, &out.join("metrics.csv"))?;
    Ok(rows)
}

pub fn write_effective_config(cfg: &ScenarioConfig, out: &Path) -> Result<(), BenchError> {
    let path = out.join("effective_config.json");
    let text = serde_json::to_string_pretty(cfg).expect("scenario configs serialize");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

/// Column of [`MetricsRow`] to plot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    MeanReward,
    MeanPower,
    ServiceQuality,
    FallbackRate,
}

impl Metric {
    pub fn of(self, row: &MetricsRow) -> f64 {
        match self {
            Metric::MeanReward => row.mean_reward,
            Metric::MeanPower => row.mean_power_w,
            Metric::ServiceQuality => row.service_quality,
            Metric::FallbackRate => row.fallback_rate,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::MeanReward => "mean_reward",
            Metric::MeanPower => "mean_power_w",
            Metric::ServiceQuality => "service_quality",
            Metric::FallbackRate => "fallback_rate",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Metric::MeanReward, Metric::MeanPower, Metric::ServiceQuality, Metric::FallbackRate]
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

/// Seed-averaged metric per episode, one series per (policy, sweep value).
pub fn episode_curves(rows: &[MetricsRow], metric: Metric) -> BTreeMap<String, Vec<(usize, f64)>> {
    let mut acc: BTreeMap<String, BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for row in rows {
        let label = match row.sweep_value {
            Some(v) => format!("{} @ {v}", row.policy),
            None => row.policy.to_string(),
        };
        let slot = acc.entry(label).or_default().entry(row.episode).or_insert((0.0, 0));
        slot.0 += metric.of(row);
        slot.1 += 1;
    }
    acc.into_iter()
        .map(|(label, points)| (label, points.into_iter().map(|(e, (sum, n))| (e, sum / n as f64)).collect()))
        .collect()
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Static line chart of episode versus `metric`.
pub fn write_svg<W: Write>(rows: &[MetricsRow], metric: Metric, mut out: W) -> std::io::Result<()> {
    let (w, h, left, right, top, bottom) = (720.0, 420.0, 70.0, 190.0, 20.0, 50.0);
    let curves = episode_curves(rows, metric);
    let points = curves.values().flatten();
    let x_max = points.clone().map(|p| p.0).max().unwrap_or(1).max(1) as f64;
    let (mut y_min, mut y_max) = points.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    if !y_min.is_finite() {
        (y_min, y_max) = (0.0, 1.0);
    }
    if y_max - y_min < 1e-12 {
        y_max += 0.5;
        y_min -= 0.5;
    }
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let sx = |x: f64| left + x / x_max * plot_w;
    let sy = |y: f64| top + (y_max - y) / (y_max - y_min) * plot_h;

    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#)?;
    writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#)?;
    writeln!(
        out,
        r#"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    )?;
    for i in 0..=4 {
        let frac = i as f64 / 4.0;
        let yv = y_min + frac * (y_max - y_min);
        let xv = frac * x_max;
        writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#, left - 6.0, sy(yv) + 4.0)?;
        writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.0}</text>"#, sx(xv), h - bottom + 18.0)?;
    }
    writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">episode</text>"#, left + plot_w / 2.0, h - 8.0)?;
    writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        metric.label()
    )?;
    for (i, (label, pts)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x as f64), sy(*y))).collect();
        writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "))?;
        let ly = top + 14.0 + 18.0 * i as f64;
        writeln!(
            out,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            w - right + 12.0,
            w - right + 32.0
        )?;
        writeln!(out, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, w - right + 38.0, ly + 4.0, xml_escape(label))?;
    }
    writeln!(out, "</svg>")
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn export_svg(rows: &[MetricsRow], metric: Metric, path: &Path) -> Result<(), BenchError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    write_svg(rows, metric, &mut out).and_then(|_| out.flush()).map_err(io_err(path))
}

// Statistics over runs.

/// Sample mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn pooled_se(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

/// Per-seed mean of `metric` over episodes `from..`, keyed by (policy, sweep value).
pub fn final_window(rows: &[MetricsRow], from: usize, metric: Metric) -> BTreeMap<(PolicyKind, Option<u64>), Vec<f64>> {
    let mut acc: BTreeMap<(PolicyKind, Option<u64>, u64), (f64, usize)> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.episode >= from) {
        let slot = acc.entry((row.policy, row.sweep_value.map(f64::to_bits), row.seed)).or_insert((0.0, 0));
        slot.0 += metric.of(row);
        slot.1 += 1;
    }
    let mut out: BTreeMap<(PolicyKind, Option<u64>), Vec<f64>> = BTreeMap::new();
    for ((policy, sweep, _), (sum, n)) in acc {
        out.entry((policy, sweep)).or_default().push(sum / n as f64);
    }
    out
}

/// Most frequent action per discretized state over episodes `from..`;
/// the lower level wins ties.
pub fn modal_actions<'a, I>(records: I, case: Case, from: usize) -> BTreeMap<i64, u8>
where
    I: IntoIterator<Item = &'a EpisodeRecord>,
{
    let mut counts: BTreeMap<i64, [usize; 256]> = BTreeMap::new();
    for r in records.into_iter().filter(|r| r.episode >= from) {
        counts.entry(discretize(r.state, case)).or_insert([0; 256])[r.action as usize] += 1;
    }
    counts
        .into_iter()
        .map(|(s, c)| {
            let mut best = 0;
            for (level, n) in c.iter().enumerate() {
                if *n > c[best] {
                    best = level;
                }
            }
            (s, best as u8)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannKendall {
    pub s: i64,
    pub z: f64,
    /// One-sided p-value against "no upward trend".
    pub p_increasing: f64,
}

/// Mann-Kendall trend test with the normal approximation and tie correction.
pub fn mann_kendall(series: &[f64]) -> MannKendall {
    let n = series.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            s += match series[j].partial_cmp(&series[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * (t - 1.0) * (2.0 * t + 5.0);
        i = j;
    }
    let nf = n as f64;
    let var = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - tie_term) / 18.0;
    let z = if var <= 0.0 {
        0.0
    } else if s > 0 {
        (s - 1) as f64 / var.sqrt()
    } else if s < 0 {
        (s + 1) as f64 / var.sqrt()
    } else {
        0.0
    };
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    MannKendall { s, z, p_increasing: normal.sf(z) }
}

/// Pearson goodness-of-fit against a uniform distribution: (statistic, p-value).
pub fn chi_square_uniform(counts: &[usize]) -> (f64, f64) {
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum::<f64>();
    let dist = ChiSquared::new((counts.len() - 1) as f64).expect("at least two categories");
    (stat, dist.sf(stat))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(policy: PolicyKind) -> ScenarioConfig {
        ScenarioConfig {
            policy,
            seeds: vec![1],
            schedule: PolicyConfig { episodes: 2, steps_per_episode: 3, ..PolicyConfig::default() },
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn empty_json_takes_every_default() {
        let cfg = ScenarioConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ScenarioConfig::from_json(r#"{"netwrk": {}}"#).is_err());
    }

    #[test]
    fn validation_lists_every_problem() {
        let mut cfg = ScenarioConfig { seeds: vec![], ..ScenarioConfig::default() };
        cfg.schedule.epsilon = 2.0;
        cfg.network.power_levels_w = vec![0.5, 1.0];
        cfg.sweep = Some(SweepAxis { param: "network.nope".into(), values: vec![1.0] });
        let Err(BenchError::Invalid(problems)) = cfg.validate() else { panic!("expected invalid") };
        assert_eq!(problems.len(), 4, "{problems:?}");
    }

    #[test]
    fn with_param_sets_nested_and_integer_fields() {
        let base = ScenarioConfig::default();
        assert_eq!(base.with_param("network.min_rate_bps", 2e6).unwrap().network.min_rate_bps, 2e6);
        let c = base.with_param(EXAMPLES_PARAM, 8.0).unwrap();
        assert_eq!((c.selection.k_recommended, c.selection.k_inadvisable), (8, 8));
        assert!(base.with_param("selection.k_recommended", 1.5).is_err());
        assert!(base.with_param("case", 1.0).is_err());
    }

    #[test]
    fn one_row_per_episode() {
        let rows = run_scenario(&tiny(PolicyKind::Random), &Backend::Mock).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.service_quality)));
    }

    #[test]
    fn empty_export_is_header_only() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "scenario,policy,seed,sweep_value,episode,mean_reward,mean_power_w,service_quality,fallback_rate\n"
        );
    }

    #[test]
    fn modal_action_ties_go_low() {
        let rec = |state: f64, action| EpisodeRecord {
            episode: 5,
            step: 0,
            bs: 0,
            state,
            action,
            reward: 0.0,
            bs_power_w: 0.0,
            total_power_w: 0.0,
            mean_rate_bps: 0.0,
            constraint_ok: true,
            all_ok: true,
            policy: PolicyKind::Icl,
            explored: false,
            fallback: false,
        };
        let recs = [rec(7.0, 3), rec(7.0, 2), rec(9.0, 4)];
        let modes = modal_actions(&recs, Case::Discrete, 0);
        assert_eq!(modes[&7], 2);
        assert_eq!(modes[&9], 4);
        assert!(modal_actions(&recs, Case::Discrete, 6).is_empty());
    }

    #[test]
    fn mann_kendall_detects_monotone_series() {
        let up: Vec<f64> = (0..30).map(f64::from).collect();
        let mk = mann_kendall(&up);
        assert_eq!(mk.s, 435);
        assert!(mk.p_increasing < 1e-6);
        let down: Vec<f64> = up.iter().rev().copied().collect();
        assert!(mann_kendall(&down).p_increasing > 0.99);
        assert_eq!(mann_kendall(&[1.0; 10]).z, 0.0);
    }

    #[test]
    fn chi_square_matches_tabulated_critical_value() {
        // 3 degrees of freedom, upper 1% point 11.345.
        let dist = ChiSquared::new(3.0).unwrap();
        assert!((dist.sf(11.345) - 0.01).abs() < 1e-4);
        let (stat, p) = chi_square_uniform(&[25, 25, 25, 25]);
        assert_eq!(stat, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
    }
}
