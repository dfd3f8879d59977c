//! Navigation error, success rate, oracle success rate and SPL.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{path_length, Point2};
use crate::scene::{Episode, Pose};
use crate::simulator::EpisodeResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub ne: f64,
    pub success: bool,
    pub oracle_success: bool,
    pub spl: f64,
    pub optimal_length: f64,
    pub actual_length: f64,
}

/// Metrics for a trajectory. `ne` and the success tests are horizontal;
/// `actual_length` is the 3-D flown length.
pub fn evaluate_trajectory(trajectory: &[Pose], start: Point2, target: Point2, epsilon: f64) -> Result<EpisodeMetrics> {
    let last = trajectory.last().ok_or(Error::EmptyTrajectory)?;
    let ne = last.position().distance(&target);
    let success = ne <= epsilon;
    let oracle_success = trajectory.iter().any(|p| p.position().distance(&target) <= epsilon);
    let optimal_length = start.distance(&target);
    let actual_length = path_length(trajectory)?;
    let denom = actual_length.max(optimal_length);
    let spl = match (success, denom > 0.0) {
        (false, _) => 0.0,
        (true, true) => optimal_length / denom,
        (true, false) => 1.0,
    };
    Ok(EpisodeMetrics {
        ne,
        success,
        oracle_success,
        spl,
        optimal_length,
        actual_length,
    })
}

pub fn evaluate(result: &EpisodeResult, episode: &Episode) -> Result<EpisodeMetrics> {
    evaluate_trajectory(
        &result.trajectory,
        episode.start.position(),
        episode.target,
        episode.success_radius,
    )
}

/// Means over a set of episodes; rates are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean_ne: f64,
    pub sr: f64,
    pub osr: f64,
    pub spl: f64,
}

pub fn aggregate(metrics: &[EpisodeMetrics]) -> Result<Summary> {
    if metrics.is_empty() {
        return Err(Error::EmptyMetrics);
    }
    let n = metrics.len() as f64;
    let mean = |f: &dyn Fn(&EpisodeMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    Ok(Summary {
        count: metrics.len(),
        mean_ne: mean(&|m| m.ne),
        sr: 100.0 * mean(&|m| flag(m.success)),
        osr: 100.0 * mean(&|m| flag(m.oracle_success)),
        spl: 100.0 * mean(&|m| m.spl),
    })
}

/// Summaries keyed by group label plus an `all` row.
pub fn aggregate_groups<'a>(
    rows: impl IntoIterator<Item = (&'a str, &'a EpisodeMetrics)>,
) -> Result<Vec<(String, Summary)>> {
    let mut groups: BTreeMap<&str, Vec<EpisodeMetrics>> = BTreeMap::new();
    let mut all = Vec::new();
    for (g, m) in rows {
        groups.entry(g).or_default().push(m.clone());
        all.push(m.clone());
    }
    let mut out = vec![("all".to_string(), aggregate(&all)?)];
    for (g, ms) in groups {
        out.push((g.to_string(), aggregate(&ms)?));
    }
    Ok(out)
}

pub fn summary_csv(rows: &[(String, Summary)]) -> String {
    let mut s = String::from("group,count,mean_ne,sr,osr,spl\n");
    for (g, m) in rows {
        let _ = writeln!(
            s,
            "{g},{},{:.2},{:.2},{:.2},{:.2}",
            m.count, m.mean_ne, m.sr, m.osr, m.spl
        );
    }
    s
}

pub fn summary_table(rows: &[(String, Summary)]) -> String {
    let mut s = format!(
        "{:<12} {:>5} {:>9} {:>7} {:>7} {:>7}\n",
        "group", "n", "NE(m)", "SR%", "OSR%", "SPL%"
    );
    for (g, m) in rows {
        let _ = writeln!(
            s,
            "{g:<12} {:>5} {:>9.2} {:>7.2} {:>7.2} {:>7.2}",
            m.count, m.mean_ne, m.sr, m.osr, m.spl
        );
    }
    s
}
