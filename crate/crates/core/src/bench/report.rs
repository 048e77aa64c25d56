//! Per-scenario metric tables built from a trace directory and an
//! annotation store.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{EpisodeTrace, Policy};
use crate::cognition::SubgoalInfo;
use crate::world::Scenario;

use super::annotation::{case_id, latest_wins, AnnotationRecord};
use super::metrics::{compute_afs, compute_bws, compute_pps, compute_tsr, AfsMode, MetricError, PpsSource};
use super::run::ERRORS_FILE;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no traces to report on")]
    NoTraces,
    #[error("mixed task schemas: {0}")]
    MixedSchemas(String),
    #[error("{path}: {message}")]
    Trace { path: String, message: String },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Every policy's episode on one task and seed.
#[derive(Debug, Clone)]
pub struct Case {
    pub id: String,
    pub task_id: String,
    pub scenario: Scenario,
    pub seed: u64,
    pub intention: String,
    pub subgoals: Vec<SubgoalInfo>,
    pub episodes: BTreeMap<Policy, EpisodeTrace>,
}

/// Reads every `*.jsonl` trace below `dir` in path order.
pub fn load_traces(dir: impl AsRef<Path>) -> Result<Vec<EpisodeTrace>, ReportError> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| ReportError::Io(e.into()))?;
        let path = entry.path();
        let is_trace = entry.file_type().is_file()
            && path.extension().is_some_and(|x| x == "jsonl")
            && path.file_name().is_some_and(|n| n != ERRORS_FILE);
        if is_trace {
            let trace = EpisodeTrace::load(path)
                .map_err(|e| ReportError::Trace { path: path.display().to_string(), message: e.to_string() })?;
            out.push(trace);
        }
    }
    Ok(out)
}

/// Groups traces into cases, ordered by case id. Traces of one task must
/// agree on the task's scenario and subgoals, and every episode of a policy
/// on a case must be unique.
pub fn group_cases(traces: &[EpisodeTrace]) -> Result<Vec<Case>, ReportError> {
    let mut tasks: BTreeMap<&str, (&Scenario, &Vec<SubgoalInfo>)> = BTreeMap::new();
    let mut cases: BTreeMap<String, Case> = BTreeMap::new();
    for t in traces {
        let h = &t.header;
        if h.schema_version != crate::agent::TRACE_SCHEMA_VERSION {
            return Err(ReportError::MixedSchemas(format!(
                "task {} seed {} has trace schema {}",
                h.task_id, h.seed, h.schema_version
            )));
        }
        let known = tasks.entry(&h.task_id).or_insert((&h.scenario, &h.subgoals));
        if known.0 != &h.scenario || known.1 != &h.subgoals {
            return Err(ReportError::MixedSchemas(format!("task {} differs between traces", h.task_id)));
        }
        let id = case_id(&h.task_id, h.seed);
        let case = cases.entry(id.clone()).or_insert_with(|| Case {
            id: id.clone(),
            task_id: h.task_id.clone(),
            scenario: h.scenario,
            seed: h.seed,
            intention: h.intention.clone(),
            subgoals: h.subgoals.clone(),
            episodes: BTreeMap::new(),
        });
        if case.episodes.insert(h.policy, t.clone()).is_some() {
            return Err(ReportError::MixedSchemas(format!("case {id} has two {} episodes", h.policy)));
        }
    }
    Ok(cases.into_values().collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReportOptions {
    /// Fill missing plausibility scores from the simulator surrogate.
    pub pps_surrogate: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub episodes: usize,
    pub annotations: usize,
    pub tsr: Option<f64>,
    pub afs: Option<f64>,
    pub pps: Option<f64>,
    pub bws: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub policy: Policy,
    pub scenarios: BTreeMap<Scenario, CellMetrics>,
    pub average: CellMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub cases: usize,
    pub annotations: usize,
    /// Annotations whose case has no traces.
    pub ignored_annotations: usize,
    pub pps_source: Option<PpsKind>,
    pub rows: Vec<PolicyRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PpsKind {
    Annotations,
    Surrogate,
    /// Human scores where present, surrogate elsewhere.
    Mixed,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Completion ratio of one episode: human checkmarks when any annotator
/// gave them, the simulator oracle otherwise.
fn episode_tsr(trace: &EpisodeTrace, subgoals: &[SubgoalInfo], records: &[&AnnotationRecord]) -> Result<f64, ReportError> {
    let ids: BTreeSet<&str> = subgoals.iter().map(|s| s.id.as_str()).collect();
    let m = subgoals.len();
    let human: Vec<(usize, usize)> = records
        .iter()
        .filter_map(|r| r.checkmarks.get(&trace.header.policy))
        .map(|marks| {
            let k = marks.iter().map(String::as_str).filter(|id| ids.contains(id)).collect::<BTreeSet<_>>().len();
            (k, m)
        })
        .collect();
    let pairs = if human.is_empty() { vec![(trace.summary.completed(), trace.summary.total())] } else { human };
    Ok(compute_tsr(&pairs)?)
}

pub fn write_report(
    traces: &[EpisodeTrace],
    annotations: &[AnnotationRecord],
    opts: ReportOptions,
) -> Result<MetricsReport, ReportError> {
    if traces.is_empty() {
        return Err(ReportError::NoTraces);
    }
    let cases = group_cases(traces)?;
    let annotations = latest_wins(annotations.iter().cloned());
    let by_id: BTreeMap<&str, &Case> = cases.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut records_by_case: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    let mut ignored = 0;
    for r in &annotations {
        match by_id.get(r.case_id.as_str()) {
            Some(c) => records_by_case.entry(c.id.as_str()).or_default().push(r),
            None => ignored += 1,
        }
    }
    let policies: BTreeSet<Policy> = cases.iter().flat_map(|c| c.episodes.keys().copied()).collect();

    let mut any_human_pps = false;
    let mut any_surrogate = false;
    let mut rows = Vec::new();
    for &policy in Policy::ALL.iter().filter(|p| policies.contains(p)) {
        let mut scenarios = BTreeMap::new();
        for scenario in Scenario::ALL {
            let in_scenario: Vec<&Case> = cases.iter().filter(|c| c.scenario == scenario).collect();
            let records: Vec<AnnotationRecord> = in_scenario
                .iter()
                .flat_map(|c| records_by_case.get(c.id.as_str()).into_iter().flatten())
                .map(|r| (*r).clone())
                .collect();
            let mut cell = CellMetrics::default();
            let mut tsr = Vec::new();
            let mut afs = Vec::new();
            let mut episodes = Vec::new();
            for case in &in_scenario {
                let Some(trace) = case.episodes.get(&policy) else { continue };
                let case_records = records_by_case.get(case.id.as_str()).cloned().unwrap_or_default();
                tsr.push(episode_tsr(trace, &case.subgoals, &case_records)?);
                match compute_afs(trace, &AfsMode::Oracle) {
                    Ok(a) => afs.push(a.score),
                    Err(MetricError::NoClips) => {}
                    Err(e) => return Err(e.into()),
                }
                episodes.push(trace.clone());
            }
            if episodes.is_empty() {
                continue;
            }
            cell.episodes = episodes.len();
            cell.annotations = records.len();
            cell.tsr = mean(&tsr);
            cell.afs = mean(&afs);
            let human: Vec<u8> = records.iter().filter_map(|r| r.pps.get(&policy).copied()).collect();
            if !human.is_empty() {
                cell.pps = Some(compute_pps(&PpsSource::Annotations(&human))?);
                any_human_pps = true;
            } else if opts.pps_surrogate {
                cell.pps = Some(compute_pps(&PpsSource::Surrogate(&episodes))?);
                any_surrogate = true;
            }
            if !records.is_empty() {
                cell.bws = compute_bws(&records)?.get(&policy).copied();
            }
            scenarios.insert(scenario, cell);
        }

        let cells: Vec<&CellMetrics> = scenarios.values().collect();
        let pick = |f: fn(&CellMetrics) -> Option<f64>| mean(&cells.iter().filter_map(|c| f(c)).collect::<Vec<_>>());
        let all_records: Vec<AnnotationRecord> =
            records_by_case.values().flatten().map(|r| (*r).clone()).collect();
        let average = CellMetrics {
            episodes: cells.iter().map(|c| c.episodes).sum(),
            annotations: all_records.len(),
            tsr: pick(|c| c.tsr),
            afs: pick(|c| c.afs),
            pps: pick(|c| c.pps),
            bws: if all_records.is_empty() { None } else { compute_bws(&all_records)?.get(&policy).copied() },
        };
        rows.push(PolicyRow { policy, scenarios, average });
    }

    let pps_source = match (any_human_pps, any_surrogate) {
        (true, false) => Some(PpsKind::Annotations),
        (false, true) => Some(PpsKind::Surrogate),
        (false, false) => None,
        (true, true) => Some(PpsKind::Mixed),
    };
    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        cases: cases.len(),
        annotations: annotations.len() - ignored,
        ignored_annotations: ignored,
        pps_source,
        rows,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        // Plain structs, maps with string keys and finite floats.
        serde_json::to_string_pretty(self).unwrap_or_default() + "\n"
    }

    /// Every metric inside its documented range.
    pub fn bounds_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for row in &self.rows {
            let cells = row.scenarios.iter().map(|(s, c)| (s.as_str(), c)).chain([("avg", &row.average)]);
            for (name, c) in cells {
                let mut check = |metric: &str, v: Option<f64>, lo: f64, hi: f64| {
                    if let Some(v) = v {
                        if !(lo..=hi).contains(&v) {
                            out.push(format!("{} {name} {metric}={v} outside [{lo},{hi}]", row.policy));
                        }
                    }
                };
                check("tsr", c.tsr, 0.0, 1.0);
                check("afs", c.afs, 0.0, 1.0);
                check("pps", c.pps, 1.0, 5.0);
                check("bws", c.bws, -100.0, 100.0);
            }
        }
        out
    }

    /// Aligned text table: one block per metric, scenarios as columns.
    pub fn render_table(&self) -> String {
        type Fmt = fn(f64) -> String;
        let blocks: [(&str, fn(&CellMetrics) -> Option<f64>, Fmt); 4] = [
            ("TSR (%)", |c| c.tsr, |v| format!("{:.1}", v * 100.0)),
            ("AFS", |c| c.afs, |v| format!("{v:.2}")),
            ("PPS", |c| c.pps, |v| format!("{v:.2}")),
            ("BWS (%)", |c| c.bws, |v| format!("{v:+.1}")),
        ];
        let mut header = vec!["Policy".to_string()];
        header.extend(Scenario::ALL.iter().map(|s| s.short().to_string()));
        header.push("Avg".into());

        let mut out = String::new();
        for (title, get, fmt) in blocks {
            let mut grid = vec![header.clone()];
            for row in &self.rows {
                let mut line = vec![row.policy.to_string()];
                for s in Scenario::ALL {
                    line.push(row.scenarios.get(&s).and_then(get).map_or_else(|| "-".into(), fmt));
                }
                line.push(get(&row.average).map_or_else(|| "-".into(), fmt));
                grid.push(line);
            }
            let absent = self.rows.iter().all(|r| get(&r.average).is_none());
            let _ = writeln!(out, "{title}{}", if absent { " (absent)" } else { "" });
            let widths: Vec<usize> =
                (0..header.len()).map(|i| grid.iter().map(|l| l[i].len()).max().unwrap_or(0)).collect();
            for line in &grid {
                let cells: Vec<String> = line
                    .iter()
                    .enumerate()
                    .map(|(i, v)| if i == 0 { format!("{v:<w$}", w = widths[i]) } else { format!("{v:>w$}", w = widths[i]) })
                    .collect();
                let _ = writeln!(out, "{}", cells.join("  "));
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "cases: {}  annotations: {}  ignored annotations: {}  pps source: {}",
            self.cases,
            self.annotations,
            self.ignored_annotations,
            match self.pps_source {
                Some(PpsKind::Annotations) => "annotations",
                Some(PpsKind::Surrogate) => "surrogate",
                Some(PpsKind::Mixed) => "mixed",
                None => "absent",
            }
        );
        out
    }
}
