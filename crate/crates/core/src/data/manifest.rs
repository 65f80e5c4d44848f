use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::bbox::{BBox, BBoxSet};
use crate::tasks::{OutputMode, Target, TaskId, TaskRegistry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::config(format!(
                "unknown split {s:?}; expected train, val or test"
            ))),
        }
    }
}

/// One validated manifest line. `image` is resolved against the manifest's
/// directory; labels are stored in canonical form.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub task: TaskId,
    pub image: PathBuf,
    pub bboxes: BBoxSet,
    pub target: Target,
    pub split: Split,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    task: String,
    image: String,
    #[serde(default)]
    bboxes: Vec<[f64; 4]>,
    target: RawTarget,
    split: Split,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
enum RawTarget {
    Label(String),
    Points(Vec<[f64; 2]>),
}

/// Reads a line-delimited JSON manifest. Blank lines and lines starting
/// with `#` are skipped. Image existence is checked lazily at fetch time.
pub fn load_manifest(path: &Path, registry: &TaskRegistry) -> Result<Vec<ManifestRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fail = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let raw: RawRecord = serde_json::from_str(trimmed).map_err(|e| fail(e.to_string()))?;
        out.push(validate(raw, root, registry).map_err(|e| fail(e.to_string()))?);
    }
    Ok(out)
}

fn validate(raw: RawRecord, root: &Path, registry: &TaskRegistry) -> Result<ManifestRecord> {
    let task: TaskId = raw.task.parse()?;
    let spec = registry.get(task)?;
    let boxes = raw
        .bboxes
        .iter()
        .map(|b| BBox::new(b[0], b[1], b[2], b[3]))
        .collect::<Result<Vec<_>>>()?;
    if boxes.len() != spec.bbox_arity {
        return Err(Error::input(format!(
            "{task} expects {} bounding box(es), record has {}",
            spec.bbox_arity,
            boxes.len()
        )));
    }
    let bboxes = BBoxSet::new(boxes)?;
    let target = match (raw.target, spec.output_mode) {
        (RawTarget::Label(l), OutputMode::Text) => {
            let idx = spec
                .label_index(&l)
                .ok_or_else(|| Error::InvalidTarget(format!("{task}: unknown label {l:?}")))?;
            Target::Label(spec.labels[idx].clone())
        }
        (RawTarget::Points(p), OutputMode::Heatmap) => {
            let pts: Vec<(f64, f64)> = p.iter().map(|q| (q[0], q[1])).collect();
            Target::validate_points(&pts)?;
            Target::Points(pts)
        }
        _ => {
            return Err(Error::InvalidTarget(format!(
                "{task}: target kind does not match the task output"
            )))
        }
    };
    let image = PathBuf::from(&raw.image);
    let image = if image.is_absolute() { image } else { root.join(image) };
    Ok(ManifestRecord {
        task,
        image,
        bboxes,
        target,
        split: raw.split,
    })
}

/// Serializes one record as a manifest line with `image` written as given.
pub fn manifest_line(task: TaskId, image: &str, boxes: &BBoxSet, target: &Target, split: Split) -> String {
    let raw = RawRecord {
        task: task.as_str().to_string(),
        image: image.to_string(),
        bboxes: boxes
            .boxes
            .iter()
            .map(|b| [b.x_min, b.y_min, b.x_max, b.y_max])
            .collect(),
        target: match target {
            Target::Label(l) => RawTarget::Label(l.clone()),
            Target::Points(p) => RawTarget::Points(p.iter().map(|&(x, y)| [x, y]).collect()),
        },
        split,
    };
    serde_json::to_string(&raw).expect("records serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(lines: &[&str]) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut f = fs::File::create(&path).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        (dir, path)
    }

    #[test]
    fn three_lines_three_records() {
        let (dir, path) = write(&[
            r#"{"task":"LAM","image":"a.png","target":{"label":"Yes"},"split":"train"}"#,
            r#"{"task":"AFFECTNET","image":"b.png","target":{"label":"happiness"},"split":"val"}"#,
            r#"{"task":"PISC_DOMAIN","image":"c.png","bboxes":[[0,0,0.5,1],[0.5,0,1,1]],"target":{"label":"b"},"split":"test"}"#,
        ]);
        let r = TaskRegistry::builtin();
        let recs = load_manifest(&path, &r).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].image, dir.path().join("a.png"));
        assert_eq!(recs[1].target, Target::Label("b".into()));
        assert_eq!(recs[2].bboxes.len(), 2);
    }

    #[test]
    fn arity_error_names_line() {
        let (_d, path) = write(&[
            r#"{"task":"LAM","image":"a.png","target":{"label":"No"},"split":"train"}"#,
            r#"{"task":"PISC_RELATION","image":"c.png","bboxes":[[0,0,0.5,1]],"target":{"label":"a"},"split":"train"}"#,
        ]);
        match load_manifest(&path, &TaskRegistry::builtin()) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("bounding box"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ten_point_gaze_record_keeps_all_points() {
        let pts: Vec<String> = (0..10).map(|i| format!("[0.{i},0.5]")).collect();
        let line = format!(
            r#"{{"task":"GAZEFOLLOW","image":"g.png","bboxes":[[0.1,0.1,0.3,0.3]],"target":{{"points":[{}]}},"split":"test"}}"#,
            pts.join(",")
        );
        let (_d, path) = write(&[&line]);
        let recs = load_manifest(&path, &TaskRegistry::builtin()).unwrap();
        match &recs[0].target {
            Target::Points(p) => assert_eq!(p.len(), 10),
            t => panic!("{t:?}"),
        }
    }

    #[test]
    fn malformed_and_mismatched_targets_fail() {
        let (_d, path) = write(&[r#"{"task":"LAM","image":"a.png","target":{"points":[[0.1,0.1]]},"split":"train"}"#]);
        assert!(load_manifest(&path, &TaskRegistry::builtin()).is_err());
        let (_d, path) = write(&["{not json"]);
        assert!(matches!(
            load_manifest(&path, &TaskRegistry::builtin()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn line_round_trips() {
        let boxes = BBoxSet::new(vec![BBox::new(0.1, 0.2, 0.3, 0.4).unwrap()]).unwrap();
        let t = Target::Points(vec![(0.25, 0.75)]);
        let line = manifest_line(TaskId::GazeFollow, "x.png", &boxes, &t, Split::Train);
        let (dir, path) = write(&[&line]);
        let rec = &load_manifest(&path, &TaskRegistry::builtin()).unwrap()[0];
        assert_eq!((rec.bboxes.clone(), rec.target.clone()), (boxes, t));
        assert_eq!(rec.image, dir.path().join("x.png"));
    }
}
