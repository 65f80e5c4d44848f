use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tasks::{OutputMode, SocialTask, TaskId};

/// Which tasks a run trains on.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Regime {
    Single(SocialTask),
    Pair(SocialTask, SocialTask),
    Joint,
}

impl Regime {
    pub fn tasks(&self) -> Vec<SocialTask> {
        match self {
            Regime::Single(t) => vec![*t],
            Regime::Pair(a, b) => vec![*a, *b],
            Regime::Joint => SocialTask::ALL.to_vec(),
        }
    }

    pub fn task_ids(&self) -> Vec<TaskId> {
        self.tasks().iter().flat_map(|t| t.task_ids().iter().copied()).collect()
    }

    pub fn text_task_count(&self) -> usize {
        self.task_ids()
            .iter()
            .filter(|t| t.output_mode() == OutputMode::Text)
            .count()
    }

    /// Filesystem-friendly name, e.g. `pair-LAM-GAZEFOLLOW`.
    pub fn slug(&self) -> String {
        match self {
            Regime::Single(t) => format!("single-{}", t.as_str()),
            Regime::Pair(a, b) => format!("pair-{}-{}", a.as_str(), b.as_str()),
            Regime::Joint => "joint".into(),
        }
    }

    /// All ten unordered pairs in table order.
    pub fn all_pairs() -> Vec<Regime> {
        let order = SocialTask::PAIR_ORDER;
        let mut out = Vec::new();
        for i in 0..order.len() {
            for j in i + 1..order.len() {
                out.push(Regime::Pair(order[i], order[j]));
            }
        }
        out
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::Single(t) => write!(f, "single:{}", t.as_str()),
            Regime::Pair(a, b) => write!(f, "pair:{},{}", a.as_str(), b.as_str()),
            Regime::Joint => f.write_str("joint"),
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    /// Parses `single:<task>`, `pair:<t1>,<t2>` or `joint`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("joint") {
            return Ok(Regime::Joint);
        }
        let bad = || {
            Error::config(format!(
                "regime {s:?} is not one of single:<task>, pair:<t1>,<t2>, joint"
            ))
        };
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind.to_ascii_lowercase().as_str() {
            "single" => Ok(Regime::Single(rest.parse()?)),
            "pair" => {
                let (a, b) = rest.split_once(',').ok_or_else(bad)?;
                let (a, b): (SocialTask, SocialTask) = (a.trim().parse()?, b.trim().parse()?);
                if a == b {
                    return Err(Error::config(format!(
                        "pair regime needs two different tasks, got {a} twice"
                    )));
                }
                Ok(Regime::Pair(a, b))
            }
            _ => Err(bad()),
        }
    }
}

impl Serialize for Regime {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Regime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
