//! Social task registry: prompts, label sets, bbox arity, output modes,
//! label token codecs and ground-truth heatmap synthesis.

mod heatmap_target;
mod registry;
pub(crate) mod scoring;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use heatmap_target::{quantize_point, synth_heatmap, HeatmapTarget, DEFAULT_SIGMA};
pub use registry::{render_prompt, TaskRegistry, TaskSpec};
pub use scoring::{argmax_lowest, score_labels, ContinuationScorer, LabelCodec};

use crate::error::{Error, Result};

/// One prediction head. PISC contributes two (domain and relation).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskId {
    #[serde(rename = "LAM")]
    Lam,
    #[serde(rename = "AFFECTNET")]
    AffectNet,
    #[serde(rename = "HAGRIDV2")]
    HagridV2,
    #[serde(rename = "PISC_DOMAIN")]
    PiscDomain,
    #[serde(rename = "PISC_RELATION")]
    PiscRelation,
    #[serde(rename = "GAZEFOLLOW")]
    GazeFollow,
}

impl TaskId {
    pub const ALL: [TaskId; 6] = [
        TaskId::Lam,
        TaskId::AffectNet,
        TaskId::HagridV2,
        TaskId::PiscDomain,
        TaskId::PiscRelation,
        TaskId::GazeFollow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Lam => "LAM",
            TaskId::AffectNet => "AFFECTNET",
            TaskId::HagridV2 => "HAGRIDV2",
            TaskId::PiscDomain => "PISC_DOMAIN",
            TaskId::PiscRelation => "PISC_RELATION",
            TaskId::GazeFollow => "GAZEFOLLOW",
        }
    }

    pub fn social_task(self) -> SocialTask {
        match self {
            TaskId::Lam => SocialTask::Lam,
            TaskId::AffectNet => SocialTask::AffectNet,
            TaskId::HagridV2 => SocialTask::HagridV2,
            TaskId::PiscDomain | TaskId::PiscRelation => SocialTask::Pisc,
            TaskId::GazeFollow => SocialTask::GazeFollow,
        }
    }

    pub fn output_mode(self) -> OutputMode {
        match self {
            TaskId::GazeFollow => OutputMode::Heatmap,
            _ => OutputMode::Text,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let valid: Vec<_> = TaskId::ALL.iter().map(|t| t.as_str()).collect();
                Error::Registry(format!("unknown task id {s:?}; valid ids: {}", valid.join(", ")))
            })
    }
}

/// The five social tasks, in the column order used by every report table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SocialTask {
    #[serde(rename = "HAGRIDV2")]
    HagridV2,
    #[serde(rename = "PISC")]
    Pisc,
    #[serde(rename = "LAM")]
    Lam,
    #[serde(rename = "GAZEFOLLOW")]
    GazeFollow,
    #[serde(rename = "AFFECTNET")]
    AffectNet,
}

impl SocialTask {
    /// Report column order.
    pub const ALL: [SocialTask; 5] = [
        SocialTask::HagridV2,
        SocialTask::Pisc,
        SocialTask::Lam,
        SocialTask::GazeFollow,
        SocialTask::AffectNet,
    ];

    /// Order in which pairings are enumerated for the synergy grid.
    pub const PAIR_ORDER: [SocialTask; 5] = [
        SocialTask::AffectNet,
        SocialTask::Lam,
        SocialTask::HagridV2,
        SocialTask::GazeFollow,
        SocialTask::Pisc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SocialTask::HagridV2 => "HAGRIDV2",
            SocialTask::Pisc => "PISC",
            SocialTask::Lam => "LAM",
            SocialTask::GazeFollow => "GAZEFOLLOW",
            SocialTask::AffectNet => "AFFECTNET",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            SocialTask::HagridV2 => "HaGRIDv2",
            SocialTask::Pisc => "PISC",
            SocialTask::Lam => "LAM",
            SocialTask::GazeFollow => "GazeFollow",
            SocialTask::AffectNet => "AffectNet",
        }
    }

    pub fn task_ids(self) -> &'static [TaskId] {
        match self {
            SocialTask::HagridV2 => &[TaskId::HagridV2],
            SocialTask::Pisc => &[TaskId::PiscDomain, TaskId::PiscRelation],
            SocialTask::Lam => &[TaskId::Lam],
            SocialTask::GazeFollow => &[TaskId::GazeFollow],
            SocialTask::AffectNet => &[TaskId::AffectNet],
        }
    }
}

impl fmt::Display for SocialTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SocialTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SocialTask::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s) || t.display_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let valid: Vec<_> = SocialTask::ALL.iter().map(|t| t.as_str()).collect();
                Error::InvalidTask(format!("unknown task {s:?}; valid tasks: {}", valid.join(", ")))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    Text,
    Heatmap,
}

/// Ground truth for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// One entry of the task's label list.
    Label(String),
    /// Normalized `(x, y)` gaze points: one for training, up to ten for test.
    Points(Vec<(f64, f64)>),
}

impl Target {
    pub fn output_mode(&self) -> OutputMode {
        match self {
            Target::Label(_) => OutputMode::Text,
            Target::Points(_) => OutputMode::Heatmap,
        }
    }

    pub fn validate_points(points: &[(f64, f64)]) -> Result<()> {
        if points.is_empty() {
            return Err(Error::InvalidTarget("gaze target has no points".into()));
        }
        for &(x, y) in points {
            if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                return Err(Error::InvalidTarget(format!("gaze point ({x}, {y}) outside [0,1]^2")));
            }
        }
        Ok(())
    }
}
