use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::MetricsTable;
use crate::error::{Error, Result};
use crate::tasks::SocialTask;

/// One reported column: the task, its metric name in the metrics JSON and
/// whether larger values are better.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MetricKey {
    pub task: SocialTask,
    pub metric: &'static str,
    pub higher_is_better: bool,
    /// Counted towards the positive-transfer tally (two per task).
    pub counted: bool,
}

const fn key(task: SocialTask, metric: &'static str, higher_is_better: bool, counted: bool) -> MetricKey {
    MetricKey {
        task,
        metric,
        higher_is_better,
        counted,
    }
}

/// Columns of the joint-training results table, in display order.
pub const REPORT_METRICS: [MetricKey; 11] = [
    key(SocialTask::HagridV2, "mAP", true, true),
    key(SocialTask::HagridV2, "Acc", true, true),
    key(SocialTask::Pisc, "Domain mAP", true, true),
    key(SocialTask::Pisc, "Relation mAP", true, true),
    key(SocialTask::Lam, "mAP", true, true),
    key(SocialTask::Lam, "Acc", true, true),
    key(SocialTask::GazeFollow, "Min L2", false, true),
    key(SocialTask::GazeFollow, "Avg L2", false, true),
    key(SocialTask::GazeFollow, "AUC", true, false),
    key(SocialTask::AffectNet, "mAP", true, true),
    key(SocialTask::AffectNet, "Acc", true, true),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub task: String,
    pub metric: String,
    pub higher_is_better: bool,
    pub counted: bool,
    pub single: Option<f64>,
    pub joint: Option<f64>,
    /// `joint - single` for higher-is-better metrics, `single - joint` for
    /// L2 distances; positive always means the joint run improved.
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub sign_convention: String,
    pub rows: Vec<TransferRow>,
    pub improved: usize,
    pub total: usize,
}

pub const SIGN_CONVENTION: &str =
    "delta = joint - single; sign flipped for L2 metrics so a positive delta always means improvement";

impl TransferReport {
    /// Pairs single-task and joint values. Metrics missing from either side
    /// get no delta and are left out of the tally.
    pub fn build(single: &MetricsTable, joint: &MetricsTable) -> Self {
        let rows: Vec<TransferRow> = REPORT_METRICS
            .iter()
            .map(|k| {
                let s = single.get(k.task, k.metric);
                let j = joint.get(k.task, k.metric);
                let delta = s.zip(j).map(|(s, j)| if k.higher_is_better { j - s } else { s - j });
                TransferRow {
                    task: k.task.display_name().to_string(),
                    metric: k.metric.to_string(),
                    higher_is_better: k.higher_is_better,
                    counted: k.counted,
                    single: s,
                    joint: j,
                    delta,
                }
            })
            .collect();
        let counted: Vec<&TransferRow> = rows.iter().filter(|r| r.counted).collect();
        let improved = counted.iter().filter(|r| r.delta.is_some_and(|d| d > 0.0)).count();
        let total = counted.iter().filter(|r| r.delta.is_some()).count();
        Self {
            sign_convention: SIGN_CONVENTION.to_string(),
            rows,
            improved,
            total,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(Error::from)
    }

    /// CSV with a leading comment line stating the sign convention.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut out = format!(
            "# {}\ntask,metric,direction,counted,single,joint,delta\n",
            self.sign_convention
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.task,
                r.metric,
                if r.higher_is_better { "higher" } else { "lower" },
                r.counted,
                cell(r.single),
                cell(r.joint),
                cell(r.delta)
            );
        }
        let _ = writeln!(out, "# improved {}/{}", self.improved, self.total);
        out
    }

    /// Horizontal bar chart of the counted deltas, each bar scaled to the
    /// largest magnitude.
    pub fn to_svg(&self) -> String {
        let rows: Vec<&TransferRow> = self.rows.iter().filter(|r| r.counted).collect();
        let (label_w, bar_w, row_h, top) = (180.0, 300.0, 24.0, 40.0);
        let width = label_w + 2.0 * bar_w + 80.0;
        let height = top + row_h * rows.len() as f64 + 20.0;
        let max = rows
            .iter()
            .filter_map(|r| r.delta)
            .map(f64::abs)
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let zero = label_w + bar_w;
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"12\">\n\
             <text x=\"10\" y=\"20\">Joint vs single delta (positive = improvement), {}/{} improved</text>\n\
             <line x1=\"{zero}\" y1=\"{top}\" x2=\"{zero}\" y2=\"{}\" stroke=\"black\"/>\n",
            self.improved,
            self.total,
            height - 20.0
        );
        for (i, r) in rows.iter().enumerate() {
            let y = top + i as f64 * row_h;
            let _ = writeln!(s, "<text x=\"10\" y=\"{}\">{} {}</text>", y + 16.0, r.task, r.metric);
            match r.delta {
                Some(d) => {
                    let len = d.abs() / max * bar_w;
                    let x = if d >= 0.0 { zero } else { zero - len };
                    let color = if d > 0.0 { "#2a9d8f" } else { "#e76f51" };
                    let _ = writeln!(
                        s,
                        "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{len:.2}\" height=\"{:.2}\" fill=\"{color}\"/>",
                        y + 4.0,
                        row_h - 8.0
                    );
                    let _ = writeln!(
                        s,
                        "<text x=\"{:.2}\" y=\"{}\">{d:+.4}</text>",
                        zero + bar_w + 8.0,
                        y + 16.0
                    );
                }
                None => {
                    let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{}\">n/a</text>", zero + 8.0, y + 16.0);
                }
            }
        }
        s.push_str("</svg>\n");
        s
    }
}
