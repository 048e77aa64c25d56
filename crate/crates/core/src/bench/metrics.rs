//! Task success, action fidelity, physical plausibility and best-worst scores.

use std::collections::BTreeMap;

use crate::agent::{EpisodeTrace, Policy};
use crate::cognition::AfsJudge;
use crate::world::AtomSet;

use super::annotation::AnnotationRecord;

pub const PPS_MIN: u8 = 1;
pub const PPS_MAX: u8 = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("no data to aggregate")]
    Empty,
    #[error("episode {index}: {completed} of {total} is not a valid completion count")]
    InvalidEpisode { index: usize, completed: usize, total: usize },
    #[error("invalid annotation: {0}")]
    InvalidRecord(String),
    #[error("trace has no accepted clips")]
    NoClips,
}

/// Mean of per-episode completion ratios `k / M`.
pub fn compute_tsr(episodes: &[(usize, usize)]) -> Result<f64, MetricError> {
    if episodes.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut sum = 0.0;
    for (index, &(completed, total)) in episodes.iter().enumerate() {
        if total == 0 || completed > total {
            return Err(MetricError::InvalidEpisode { index, completed, total });
        }
        sum += completed as f64 / total as f64;
    }
    Ok(sum / episodes.len() as f64)
}

/// How clips are judged for action fidelity.
pub enum AfsMode<'a> {
    /// A clip scores 1 exactly when the simulator applied the intended effect.
    Oracle,
    /// A judge model reads the caption and the sampled frames.
    Remote(&'a dyn AfsJudge),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AfsOutcome {
    pub score: f64,
    pub judged: usize,
    /// Clip indices the judge could not score; they are left out of the mean.
    pub skipped: Vec<usize>,
}

pub fn compute_afs(trace: &EpisodeTrace, mode: &AfsMode<'_>) -> Result<AfsOutcome, MetricError> {
    let clips = &trace.summary.clips;
    if clips.is_empty() {
        return Err(MetricError::NoClips);
    }
    let mut total = 0u32;
    let mut judged = 0;
    let mut skipped = Vec::new();
    for (i, clip) in clips.iter().enumerate() {
        let af = match mode {
            AfsMode::Oracle => Some(u8::from(clip.applied.is_intended())),
            AfsMode::Remote(judge) => {
                let frames: Vec<AtomSet> = clip.sampled.iter().map(|f| f.atoms.clone()).collect();
                judge.judge(&clip.caption, &frames).ok()
            }
        };
        match af {
            Some(af) => {
                total += u32::from(af);
                judged += 1;
            }
            None => skipped.push(i),
        }
    }
    if judged == 0 {
        return Err(MetricError::Empty);
    }
    Ok(AfsOutcome { score: f64::from(total) / judged as f64, judged, skipped })
}

/// Simulator stand-in for a plausibility rating: five minus the number of
/// accepted clips with a disappearance or invented entity, floored at one.
pub fn surrogate_pps(trace: &EpisodeTrace) -> u8 {
    let events = trace.summary.clips.iter().filter(|c| c.applied.is_permanence_violation()).count();
    PPS_MAX - events.min(usize::from(PPS_MAX - PPS_MIN)) as u8
}

pub enum PpsSource<'a> {
    /// Human Likert scores.
    Annotations(&'a [u8]),
    /// Per-episode surrogate scores; meant for smoke tests only.
    Surrogate(&'a [EpisodeTrace]),
}

pub fn compute_pps(source: &PpsSource<'_>) -> Result<f64, MetricError> {
    let scores: Vec<u8> = match source {
        PpsSource::Annotations(s) => s.to_vec(),
        PpsSource::Surrogate(traces) => traces.iter().map(surrogate_pps).collect(),
    };
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(bad) = scores.iter().find(|s| !(PPS_MIN..=PPS_MAX).contains(s)) {
        return Err(MetricError::InvalidRecord(format!("pps {bad} outside {PPS_MIN}..={PPS_MAX}")));
    }
    Ok(scores.iter().map(|&s| f64::from(s)).sum::<f64>() / scores.len() as f64)
}

/// `(#best - #worst) / #records * 100` for every policy. Policies that never
/// appear score zero.
pub fn compute_bws(records: &[AnnotationRecord]) -> Result<BTreeMap<Policy, f64>, MetricError> {
    if records.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut tally: BTreeMap<Policy, i64> = Policy::ALL.iter().map(|&p| (p, 0)).collect();
    for r in records {
        if r.best == r.worst {
            return Err(MetricError::InvalidRecord(format!(
                "case {} by {}: best and worst are both {}",
                r.case_id, r.annotator_id, r.best
            )));
        }
        *tally.entry(r.best).or_default() += 1;
        *tally.entry(r.worst).or_default() -= 1;
    }
    let n = records.len() as f64;
    Ok(tally.into_iter().map(|(p, t)| (p, t as f64 / n * 100.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsr_rejects_bad_input() {
        assert_eq!(compute_tsr(&[]), Err(MetricError::Empty));
        assert!(matches!(compute_tsr(&[(1, 0)]), Err(MetricError::InvalidEpisode { index: 0, .. })));
        assert!(matches!(compute_tsr(&[(1, 1), (4, 3)]), Err(MetricError::InvalidEpisode { index: 1, .. })));
    }

    #[test]
    fn tsr_extremes() {
        assert_eq!(compute_tsr(&[(3, 3), (5, 5)]).unwrap(), 1.0);
        assert_eq!(compute_tsr(&[(0, 3), (0, 5)]).unwrap(), 0.0);
    }

    #[test]
    fn pps_mean_and_bounds() {
        let m = compute_pps(&PpsSource::Annotations(&[4, 4, 3])).unwrap();
        assert!((m - 11.0 / 3.0).abs() < 1e-12);
        assert_eq!(format!("{m:.2}"), "3.67");
        assert!(compute_pps(&PpsSource::Annotations(&[0])).is_err());
        assert_eq!(compute_pps(&PpsSource::Annotations(&[])), Err(MetricError::Empty));
    }
}
