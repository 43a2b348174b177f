//! Skill metrics over recorded demonstrations, experience curves, dataset
//! roll-ups, and time-contrastive triplet sampling and loss evaluation.

pub mod tcn;

use crate::coordination::{EndReason, Task};
use crate::fleet::SessionEvent;
use crate::protocol::{topics, Decode, PhoneSample};
use crate::recorder::{LogReader, RecorderError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum AnalyticsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// The metric has no value for this input (too few samples).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error(transparent)]
    Recorder(#[from] RecorderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, AnalyticsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
    Timeout,
}

impl Outcome {
    pub fn from_end_reason(r: EndReason) -> Self {
        match r {
            EndReason::UserQuit => Outcome::Success,
            EndReason::TimeLimit => Outcome::Timeout,
            EndReason::SafetyAbort | EndReason::Disconnect => Outcome::Failure,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Failure => "failure",
            Outcome::Timeout => "timeout",
        }
    }
}

/// One session's operator commands plus the metadata the metrics need.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub session_id: String,
    pub user_id: String,
    pub task: Task,
    pub outcome: Outcome,
    /// Ordered as received.
    pub samples: Vec<PhoneSample>,
    /// The session's time limit, reported as the completion time of a timeout.
    pub time_limit_s: f64,
    /// Fleet clock at session start; orders a user's demonstrations.
    pub started_at_ns: u64,
    /// 1 for the user's first demonstration, 2 for the second, ...
    pub experience_index: usize,
}

impl Demonstration {
    /// Reads a session log. `experience_index` is left at 0; see
    /// [`assign_experience`].
    pub fn from_log(log: &LogReader) -> Result<Self> {
        let mut start = None;
        let mut end = None;
        for r in log.topic_records(topics::EVENTS) {
            match serde_json::from_slice::<SessionEvent>(&r.payload) {
                Ok(e @ SessionEvent::SessionStart { .. }) => start = Some(e),
                Ok(SessionEvent::SessionEnd { reason, .. }) => end = Some(reason),
                Err(e) => return Err(AnalyticsError::InvalidArgument(format!("bad events record {}: {e}", r.seq))),
            }
        }
        let Some(SessionEvent::SessionStart { session_id, user_id, task, started_at_ns, time_limit_s, .. }) = start else {
            return Err(AnalyticsError::InvalidArgument(format!("log {} has no session_start event", log.header().session_id)));
        };
        let samples = log
            .topic_records(topics::PHONE)
            .map(|r| PhoneSample::decode(&r.payload))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| AnalyticsError::InvalidArgument(format!("bad phone record: {e}")))?;
        Ok(Demonstration {
            session_id,
            user_id,
            task,
            // a log cut off before its end event did not finish cleanly
            outcome: end.map_or(Outcome::Failure, Outcome::from_end_reason),
            samples,
            time_limit_s,
            started_at_ns,
            experience_index: 0,
        })
    }

    /// Last minus first client timestamp; 0 for fewer than two samples.
    pub fn duration_s(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t_client.secs_since(a.t_client).max(0.0),
            _ => 0.0,
        }
    }

    fn engaged(&self) -> impl Iterator<Item = &PhoneSample> + '_ {
        self.samples.iter().filter(|s| s.clutch)
    }
}

/// Loads every log and numbers each user's demonstrations chronologically.
pub fn load_demonstrations<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<Demonstration>> {
    let mut demos = paths
        .iter()
        .map(|p| LogReader::open(p).map_err(AnalyticsError::from).and_then(|l| Demonstration::from_log(&l)))
        .collect::<Result<Vec<_>>>()?;
    assign_experience(&mut demos);
    Ok(demos)
}

/// Sets `experience_index` from the per-user order of `started_at_ns`
/// (session id breaks ties).
pub fn assign_experience(demos: &mut [Demonstration]) {
    let mut by_user: BTreeMap<String, Vec<(u64, String, usize)>> = BTreeMap::new();
    for (i, d) in demos.iter().enumerate() {
        by_user.entry(d.user_id.clone()).or_default().push((d.started_at_ns, d.session_id.clone(), i));
    }
    for mut list in by_user.into_values() {
        list.sort();
        for (k, (_, _, i)) in list.into_iter().enumerate() {
            demos[i].experience_index = k + 1;
        }
    }
}

pub fn completion_time(demo: &Demonstration) -> Result<f64> {
    if demo.samples.is_empty() {
        return Err(AnalyticsError::InvalidArgument(format!("demonstration {} has no samples", demo.session_id)));
    }
    Ok(match demo.outcome {
        Outcome::Timeout => demo.time_limit_s,
        _ => demo.duration_s(),
    })
}

/// Sum of squared translation norms over clutch-engaged samples, m².
pub fn effort(demo: &Demonstration) -> f64 {
    demo.engaged().fold(0.0, |acc, s| acc + s.delta_pos.norm_squared())
}

/// Mean geodesic angle between consecutive engaged orientations, rad per sample.
pub fn mean_orientation_change(demo: &Demonstration) -> Result<f64> {
    let qs: Vec<_> = demo.engaged().map(|s| s.orientation).collect();
    if qs.len() < 2 {
        return Err(AnalyticsError::UndefinedMetric(format!(
            "demonstration {} has {} engaged samples, need 2",
            demo.session_id,
            qs.len()
        )));
    }
    let total: f64 = qs.windows(2).map(|w| w[0].angle_to(&w[1])).sum();
    Ok(total / (qs.len() - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    CompletionTime,
    Effort,
    OrientationChange,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::CompletionTime => "completion_time",
            Metric::Effort => "effort",
            Metric::OrientationChange => "orientation_change",
        }
    }

    /// The metric's value for `demo`, or `None` where the demo does not
    /// contribute (timeouts for completion time, too few samples).
    pub fn eval(self, demo: &Demonstration) -> Option<f64> {
        match self {
            Metric::CompletionTime if demo.outcome == Outcome::Timeout => None,
            Metric::CompletionTime => completion_time(demo).ok(),
            Metric::Effort => Some(effort(demo)),
            Metric::OrientationChange => mean_orientation_change(demo).ok(),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = AnalyticsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "completion_time" | "time" => Ok(Metric::CompletionTime),
            "effort" => Ok(Metric::Effort),
            "orientation_change" | "orientation" => Ok(Metric::OrientationChange),
            _ => Err(AnalyticsError::InvalidArgument(format!(
                "unknown metric `{s}` (completion_time, effort, orientation_change)"
            ))),
        }
    }
}

/// Linear interpolation between order statistics of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuartilePoint {
    pub k: usize,
    /// Demonstrations contributing at this k.
    pub n: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSeries {
    pub metric: Metric,
    pub points: Vec<QuartilePoint>,
}

/// Quartiles of `metric` across users at each experience index. Indices
/// where no demonstration contributes are left out.
pub fn experience_quartiles(demos: &[Demonstration], metric: Metric) -> MetricSeries {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for d in demos {
        if let Some(v) = metric.eval(d) {
            groups.entry(d.experience_index).or_default().push(v);
        }
    }
    let points = groups
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(f64::total_cmp);
            QuartilePoint { k, n: v.len(), q1: quantile(&v, 0.25), median: quantile(&v, 0.5), q3: quantile(&v, 0.75) }
        })
        .collect();
    MetricSeries { metric, points }
}

/// Total hours for `demos` demonstrations of `mean_secs` each.
pub fn dataset_hours(demos: u64, mean_secs: f64) -> f64 {
    demos as f64 * mean_secs / 3600.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub session_id: String,
    pub user_id: String,
    pub task: Task,
    pub outcome: Outcome,
    pub duration_s: Option<f64>,
    pub effort_m2: f64,
    pub mean_orient_rad: Option<f64>,
}

impl MetricRow {
    pub fn of(d: &Demonstration) -> Self {
        MetricRow {
            session_id: d.session_id.clone(),
            user_id: d.user_id.clone(),
            task: d.task,
            outcome: d.outcome,
            duration_s: completion_time(d).ok(),
            effort_m2: effort(d),
            mean_orient_rad: mean_orientation_change(d).ok(),
        }
    }
}

/// One row per demonstration; undefined metrics are empty cells.
pub fn write_metrics_csv<W: Write>(demos: &[Demonstration], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for d in demos {
        w.serialize(MetricRow::of(d))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_series_csv<W: Write>(series: &MetricSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in &series.points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Timestamp, UnitQuat, Vec3};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn s(t_ms: u64, d: [f64; 3], q: UnitQuat, clutch: bool) -> PhoneSample {
        PhoneSample {
            seq: t_ms as u32,
            t_client: Timestamp(t_ms * 1_000_000),
            delta_pos: Vec3::from_array(d),
            orientation: q,
            clutch,
        }
    }

    fn demo(samples: Vec<PhoneSample>) -> Demonstration {
        Demonstration {
            session_id: "s00001".into(),
            user_id: "u".into(),
            task: Task::ObjectSearch,
            outcome: Outcome::Success,
            samples,
            time_limit_s: 300.0,
            started_at_ns: 0,
            experience_index: 1,
        }
    }

    #[test]
    fn completion_time_cases() {
        let id = UnitQuat::IDENTITY;
        assert!(matches!(completion_time(&demo(vec![])), Err(AnalyticsError::InvalidArgument(_))));
        assert_eq!(completion_time(&demo(vec![s(5, [0.0; 3], id, true)])).unwrap(), 0.0);
        let d = demo(vec![s(1000, [0.0; 3], id, true), s(187_000, [0.0; 3], id, false)]);
        assert_eq!(completion_time(&d).unwrap(), 186.0);
        let timeout = Demonstration { outcome: Outcome::Timeout, ..d };
        assert_eq!(completion_time(&timeout).unwrap(), 300.0);
        assert_eq!(Metric::CompletionTime.eval(&timeout), None);
    }

    #[test]
    fn table_one_roll_up() {
        let hours = dataset_hours(2144, 186.0);
        assert!((hours - 110.773_333).abs() < 1e-5);
        assert!((hours - 111.25).abs() / 111.25 < 0.01);
    }

    #[test]
    fn effort_cases() {
        let id = UnitQuat::IDENTITY;
        assert_eq!(effort(&demo(vec![s(0, [1.0, 0.0, 0.0], id, false)])), 0.0);
        let d = demo(vec![s(0, [0.1, 0.0, 0.0], id, true), s(20, [0.0, 0.2, 0.0], id, true), s(40, [5.0, 0.0, 0.0], id, false)]);
        assert!((effort(&d) - 0.05).abs() < 1e-15);
        let doubled = demo(d.samples.iter().map(|x| PhoneSample { delta_pos: x.delta_pos * 2.0, ..*x }).collect());
        assert!((effort(&doubled) - 4.0 * effort(&d)).abs() < 1e-15);
    }

    #[test]
    fn orientation_cases() {
        let id = UnitQuat::IDENTITY;
        let quarter = UnitQuat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), FRAC_PI_2);
        assert!(matches!(mean_orientation_change(&demo(vec![s(0, [0.0; 3], id, true)])), Err(AnalyticsError::UndefinedMetric(_))));
        let flat = demo((0..5).map(|i| s(i * 20, [0.0; 3], id, true)).collect());
        assert_eq!(mean_orientation_change(&flat).unwrap(), 0.0);
        let alt = demo((0..6).map(|i| s(i * 20, [0.0; 3], if i % 2 == 0 { id } else { quarter }, true)).collect());
        assert!((mean_orientation_change(&alt).unwrap() - FRAC_PI_2).abs() < 1e-12);
        let mut padded = Vec::new();
        for (i, x) in alt.samples.iter().enumerate() {
            padded.push(*x);
            padded.push(s(i as u64 * 20 + 10, [0.0; 3], UnitQuat::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), 1.0), false));
        }
        assert_eq!(mean_orientation_change(&demo(padded)).unwrap(), mean_orientation_change(&alt).unwrap());
    }

    #[test]
    fn quartile_cases() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.25), 1.75);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
        let id = UnitQuat::IDENTITY;
        let mut demos: Vec<_> = (0..3)
            .map(|k| Demonstration {
                experience_index: k + 1,
                ..demo(vec![s(0, [0.1, 0.0, 0.0], id, true)])
            })
            .collect();
        let one_user = experience_quartiles(&demos, Metric::Effort);
        assert_eq!(one_user.points.len(), 3);
        for p in &one_user.points {
            assert!(p.q1 == p.median && p.median == p.q3);
        }
        demos[1].samples.clear();
        // effort of an empty demo is 0 and still counts; completion time does not
        assert_eq!(experience_quartiles(&demos, Metric::Effort).points.len(), 3);
        assert_eq!(experience_quartiles(&demos, Metric::CompletionTime).points.len(), 2);
    }

    #[test]
    fn experience_order_follows_start_time() {
        let id = UnitQuat::IDENTITY;
        let mk = |sid: &str, user: &str, t: u64| Demonstration {
            session_id: sid.into(),
            user_id: user.into(),
            started_at_ns: t,
            experience_index: 0,
            ..demo(vec![s(0, [0.0; 3], id, true)])
        };
        let mut demos = vec![mk("s3", "a", 30), mk("s1", "a", 10), mk("s2", "b", 20), mk("s4", "a", 20)];
        assign_experience(&mut demos);
        let ks: Vec<_> = demos.iter().map(|d| d.experience_index).collect();
        assert_eq!(ks, vec![3, 1, 1, 2]);
    }

    #[test]
    fn csv_tables() {
        let id = UnitQuat::IDENTITY;
        let d = demo(vec![s(0, [0.1, 0.0, 0.0], id, true), s(1000, [0.0, 0.2, 0.0], id, true)]);
        let mut out = Vec::new();
        write_metrics_csv(&[d.clone(), demo(vec![])], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "session_id,user_id,task,outcome,duration_s,effort_m2,mean_orient_rad");
        assert!(lines[1].starts_with("s00001,u,object_search,success,1.0,0.05000000000000001,0.0"), "{}", lines[1]);
        assert_eq!(lines[2], "s00001,u,object_search,success,,0.0,");
        let mut out = Vec::new();
        write_series_csv(&experience_quartiles(&[d], Metric::Effort), &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().next(), Some("k,n,q1,median,q3"));
    }

    proptest! {
        #[test]
        fn quartiles_ignore_input_order(
            vals in proptest::collection::vec((1usize..4, 0.0f64..1.0), 1..30),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let id = UnitQuat::IDENTITY;
            let demos: Vec<_> = vals
                .iter()
                .enumerate()
                .map(|(i, &(k, x))| Demonstration {
                    user_id: format!("u{i}"),
                    experience_index: k,
                    ..demo(vec![s(0, [x, 0.0, 0.0], id, true)])
                })
                .collect();
            let mut shuffled = demos.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = experience_quartiles(&demos, Metric::Effort);
            prop_assert_eq!(&a, &experience_quartiles(&shuffled, Metric::Effort));
            for p in &a.points {
                prop_assert!(p.q1 <= p.median && p.median <= p.q3);
            }
        }
    }
}
