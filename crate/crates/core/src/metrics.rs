//! Episode metrics, failure classification and batch aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point3;
use crate::runner::trace::inf_as_null;
use crate::runner::{EpisodeTrace, FinalSummary};
use crate::world::{GeodesicField, TaskFamily, WorldModel, FORWARD_STEP_M};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("VLN trace without a reference path")]
    MissingReference,
    #[error("trace does not match world: {0}")]
    SchemaMismatch(String),
    #[error("nothing to aggregate")]
    NoData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Infinite when no goal is reachable from the final pose.
    #[serde(with = "inf_as_null")]
    pub ne: f64,
    pub sr: bool,
    pub osr: bool,
    pub spl: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ndtw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc: Option<bool>,
    /// Shortest true-map length from start to goal.
    #[serde(with = "inf_as_null")]
    pub shortest_length: f64,
    pub path_length: f64,
}

/// Stopped within `radius` of a goal.
pub fn is_success(stopped: bool, ne: f64, radius: f64) -> bool {
    stopped && ne <= radius
}

pub fn spl(success: bool, shortest: f64, path: f64) -> f64 {
    if !success || !(shortest > 0.0) {
        return if success { 1.0 } else { 0.0 };
    }
    shortest / path.max(shortest)
}

fn collapse(points: &[Point3]) -> Vec<Point3> {
    let mut out: Vec<Point3> = Vec::with_capacity(points.len());
    for p in points {
        if out.last().is_none_or(|q| q.distance_unchecked(p) > 0.0) {
            out.push(*p);
        }
    }
    out
}

/// Dynamic time warping cost with Euclidean point distance.
pub fn dtw(a: &[Point3], b: &[Point3]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for p in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = p.distance_unchecked(&b[j - 1]) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Normalized DTW with threshold distance `d_th`. Consecutive duplicate points
/// are dropped from both paths first.
pub fn ndtw(executed: &[Point3], reference: &[Point3], d_th: f64) -> f64 {
    let q = collapse(executed);
    let r = collapse(reference);
    if r.is_empty() || q.is_empty() {
        return 0.0;
    }
    (-dtw(&q, &r) / (r.len() as f64 * d_th)).exp()
}

/// Straight segments through `points`, sampled every `step` meters.
pub fn resample(points: &[Point3], step: f64) -> Vec<Point3> {
    let pts = collapse(points);
    let Some(first) = pts.first() else {
        return vec![];
    };
    let mut out = vec![*first];
    for w in pts.windows(2) {
        let len = w[0].distance_unchecked(&w[1]);
        let n = (len / step).ceil().max(1.0) as usize;
        for i in 1..=n {
            let t = i as f64 / n as f64;
            out.push(Point3::world(
                w[0].x + t * (w[1].x - w[0].x),
                w[0].y + t * (w[1].y - w[0].y),
                w[0].z + t * (w[1].z - w[0].z),
            ));
        }
    }
    out
}

/// Start position followed by the ordered landmarks, densified to the agent's
/// step length.
pub fn reference_path(world: &WorldModel) -> Result<Vec<Point3>, MetricsError> {
    let t = &world.task;
    if t.ordered_subgoals.is_empty() {
        return Err(MetricsError::MissingReference);
    }
    let mut pts = vec![t.start.position()];
    pts.extend(t.ordered_subgoals.iter().map(|s| s.position));
    Ok(resample(&pts, FORWARD_STEP_M))
}

fn check_pair(trace: &EpisodeTrace, world: &WorldModel) -> Result<(), MetricsError> {
    let h = &trace.header;
    if h.world != world.name {
        return Err(MetricsError::SchemaMismatch(format!("trace of {} against world {}", h.world, world.name)));
    }
    let fp = world.fingerprint();
    if h.world_fingerprint != fp {
        return Err(MetricsError::SchemaMismatch(format!("fingerprint {} != {fp}", h.world_fingerprint)));
    }
    Ok(())
}

fn answer_matches(given: Option<&str>, truth: Option<&str>) -> bool {
    match (given, truth) {
        (Some(a), Some(b)) => a.trim().eq_ignore_ascii_case(b.trim()),
        _ => false,
    }
}

pub fn compute_metrics(trace: &EpisodeTrace, world: &WorldModel) -> Result<EpisodeMetrics, MetricsError> {
    check_pair(trace, world)?;
    let radius = trace.header.success_radius;
    let field = GeodesicField::for_task(world);
    let poses = trace.poses();
    let f = &trace.final_summary;
    let ne = field.pose_distance(&f.final_pose);
    let sr = is_success(f.stopped, ne, radius);
    let osr = poses.iter().any(|p| field.pose_distance(p) <= radius);
    let shortest = field.pose_distance(&trace.header.start);
    let path_length = poses.windows(2).map(|w| w[0].distance(&w[1])).sum();
    let ndtw = match world.task.family {
        TaskFamily::Vln => {
            let reference = reference_path(world)?;
            let executed: Vec<Point3> = poses.iter().map(|p| p.position()).collect();
            Some(ndtw(&executed, &reference, radius))
        }
        _ => None,
    };
    let acc = (world.task.family == TaskFamily::Eqa)
        .then(|| answer_matches(f.eqa_answer.as_deref(), world.task.eqa_answer.as_deref()));
    Ok(EpisodeMetrics {
        ne,
        sr,
        osr,
        spl: spl(sr, shortest, path_length),
        ndtw,
        acc,
        shortest_length: shortest,
        path_length,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailureCategory {
    EarlyStopWrongTarget,
    ReachedMissedStop,
    WrongAnswerEQA,
    ApproachedUndershot,
    WanderedLost,
    NotAFailure,
}

impl FailureCategory {
    pub const ALL: [FailureCategory; 6] = [
        FailureCategory::EarlyStopWrongTarget,
        FailureCategory::ReachedMissedStop,
        FailureCategory::WrongAnswerEQA,
        FailureCategory::ApproachedUndershot,
        FailureCategory::WanderedLost,
        FailureCategory::NotAFailure,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FailureCategory::EarlyStopWrongTarget => "early stop on wrong target",
            FailureCategory::ReachedMissedStop => "reached but missed stop",
            FailureCategory::WrongAnswerEQA => "wrong answer (EQA)",
            FailureCategory::ApproachedUndershot => "approached but undershot",
            FailureCategory::WanderedLost => "wandered and lost",
            FailureCategory::NotAFailure => "not a failure",
        }
    }
}

/// Thresholds of the failure rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    /// Width of the band past the success radius counted as undershooting.
    pub undershoot_band_m: f64,
    /// Path lengths beyond this multiple of the shortest length count as wandering.
    pub wander_factor: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            undershoot_band_m: 2.0,
            wander_factor: 2.5,
        }
    }
}

/// What the classifier looks at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalState {
    pub success: bool,
    pub oracle_success: bool,
    #[serde(with = "inf_as_null")]
    pub distance_to_goal: f64,
    pub path_length: f64,
    #[serde(with = "inf_as_null")]
    pub shortest_length: f64,
    /// EQA only.
    pub answer_correct: Option<bool>,
}

impl FinalState {
    pub fn from_summary(f: &FinalSummary, shortest_length: f64, truth_answer: Option<&str>) -> Self {
        FinalState {
            success: f.success,
            oracle_success: f.oracle_success,
            distance_to_goal: f.distance_to_goal,
            path_length: f.path_length,
            shortest_length,
            answer_correct: truth_answer.map(|t| answer_matches(f.eqa_answer.as_deref(), Some(t))),
        }
    }

    pub fn from_trace(trace: &EpisodeTrace, world: &WorldModel) -> Result<Self, MetricsError> {
        check_pair(trace, world)?;
        let shortest = GeodesicField::for_task(world).pose_distance(&trace.header.start);
        let truth = match world.task.family {
            TaskFamily::Eqa => world.task.eqa_answer.as_deref(),
            _ => None,
        };
        Ok(FinalState::from_summary(&trace.final_summary, shortest, truth))
    }
}

pub fn classify_failure(s: &FinalState, family: TaskFamily, radius: f64, cfg: &ClassifierConfig) -> FailureCategory {
    let ne = s.distance_to_goal;
    if s.success {
        FailureCategory::NotAFailure
    } else if family == TaskFamily::Eqa && s.oracle_success && s.answer_correct == Some(false) {
        FailureCategory::WrongAnswerEQA
    } else if s.oracle_success {
        FailureCategory::ReachedMissedStop
    } else if ne > radius && ne <= radius + cfg.undershoot_band_m {
        FailureCategory::ApproachedUndershot
    } else if s.path_length > cfg.wander_factor * s.shortest_length {
        FailureCategory::WanderedLost
    } else {
        FailureCategory::EarlyStopWrongTarget
    }
}

/// One evaluated episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub world: String,
    pub seed: u64,
    pub metrics: EpisodeMetrics,
    pub failure: FailureCategory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub category: FailureCategory,
    pub count: usize,
    pub pct_trials: f64,
    pub pct_failures: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub seeds: usize,
    pub episodes: usize,
    /// Mean over episodes whose final pose could reach a goal.
    pub ne: Stat,
    pub sr: Stat,
    pub osr: Stat,
    pub spl: Stat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ndtw: Option<Stat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc: Option<Stat>,
    pub failures: Vec<FailureRow>,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> Stat {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Stat { mean, std }
}

fn across_seeds(groups: &[Vec<EpisodeRecord>], f: impl Fn(&EpisodeMetrics) -> Option<f64>) -> Option<Stat> {
    let means: Vec<f64> = groups
        .iter()
        .filter_map(|g| {
            let v: Vec<f64> = g.iter().filter_map(|r| f(&r.metrics)).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    (!means.is_empty()).then(|| mean_std(&means))
}

fn as_unit(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Per-metric mean and sample deviation across the per-seed means, plus the
/// failure histogram over every trial.
pub fn aggregate(groups: &[Vec<EpisodeRecord>]) -> Result<SummaryTable, MetricsError> {
    let groups: Vec<Vec<EpisodeRecord>> = groups.iter().filter(|g| !g.is_empty()).cloned().collect();
    if groups.is_empty() {
        return Err(MetricsError::NoData);
    }
    let nan = Stat {
        mean: f64::NAN,
        std: f64::NAN,
    };
    let episodes: usize = groups.iter().map(Vec::len).sum();
    let mut counts: BTreeMap<FailureCategory, usize> = BTreeMap::new();
    for r in groups.iter().flatten() {
        *counts.entry(r.failure).or_default() += 1;
    }
    let failed = episodes - counts.get(&FailureCategory::NotAFailure).copied().unwrap_or(0);
    let failures = FailureCategory::ALL
        .iter()
        .map(|&category| {
            let count = counts.get(&category).copied().unwrap_or(0);
            FailureRow {
                category,
                count,
                pct_trials: 100.0 * count as f64 / episodes as f64,
                pct_failures: if category == FailureCategory::NotAFailure || failed == 0 {
                    0.0
                } else {
                    100.0 * count as f64 / failed as f64
                },
            }
        })
        .collect();
    Ok(SummaryTable {
        seeds: groups.len(),
        episodes,
        ne: across_seeds(&groups, |m| m.ne.is_finite().then_some(m.ne)).unwrap_or(nan),
        sr: across_seeds(&groups, |m| Some(as_unit(m.sr))).unwrap_or(nan),
        osr: across_seeds(&groups, |m| Some(as_unit(m.osr))).unwrap_or(nan),
        spl: across_seeds(&groups, |m| Some(m.spl)).unwrap_or(nan),
        ndtw: across_seeds(&groups, |m| m.ndtw),
        acc: across_seeds(&groups, |m| m.acc.map(as_unit)),
        failures,
    })
}

/// Groups records by seed, in seed order.
pub fn group_by_seed(records: &[EpisodeRecord]) -> Vec<Vec<EpisodeRecord>> {
    let mut m: BTreeMap<u64, Vec<EpisodeRecord>> = BTreeMap::new();
    for r in records {
        m.entry(r.seed).or_default().push(r.clone());
    }
    m.into_values().collect()
}

/// Aligned text table: one row per configuration, ratios in percent.
pub fn render_table(rows: &[(String, SummaryTable)]) -> String {
    let pct = |s: &Stat| format!("{:.1} ± {:.1}", 100.0 * s.mean, 100.0 * s.std);
    let has_ndtw = rows.iter().any(|r| r.1.ndtw.is_some());
    let has_acc = rows.iter().any(|r| r.1.acc.is_some());
    let mut header = vec!["config".to_string(), "n".into(), "NE (m)".into(), "SR".into(), "OSR".into(), "SPL".into()];
    if has_ndtw {
        header.push("nDTW".into());
    }
    if has_acc {
        header.push("ACC".into());
    }
    let mut body: Vec<Vec<String>> = vec![header];
    for (label, t) in rows {
        let mut r = vec![
            label.clone(),
            t.episodes.to_string(),
            format!("{:.2} ± {:.2}", t.ne.mean, t.ne.std),
            pct(&t.sr),
            pct(&t.osr),
            pct(&t.spl),
        ];
        if has_ndtw {
            r.push(t.ndtw.as_ref().map_or("-".into(), pct));
        }
        if has_acc {
            r.push(t.acc.as_ref().map_or("-".into(), pct));
        }
        body.push(r);
    }
    let widths: Vec<usize> = (0..body[0].len())
        .map(|c| body.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &body {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

/// Failure histogram as aligned text.
pub fn render_failures(t: &SummaryTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<28} {:>6} {:>9} {:>11}", "category", "count", "% trials", "% failures");
    for r in &t.failures {
        let _ = writeln!(
            out,
            "{:<28} {:>6} {:>9.1} {:>11.1}",
            r.category.label(),
            r.count,
            r.pct_trials,
            r.pct_failures
        );
    }
    out
}

#[cfg(test)]
mod tests;
