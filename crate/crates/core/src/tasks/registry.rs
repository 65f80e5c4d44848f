use std::collections::BTreeMap;

use serde::Deserialize;

use super::{OutputMode, TaskId};
use crate::error::{Error, Result};
use crate::model::tokenizer::{TokenId, WordTokenizer};

const BUILTIN_REGISTRY: &str = include_str!("../../assets/tasks.toml");

const BUILTIN_PROMPTS: [(&str, &str); 6] = [
    ("prompts/lam.txt", include_str!("../../assets/prompts/lam.txt")),
    (
        "prompts/affectnet.txt",
        include_str!("../../assets/prompts/affectnet.txt"),
    ),
    (
        "prompts/hagridv2.txt",
        include_str!("../../assets/prompts/hagridv2.txt"),
    ),
    (
        "prompts/pisc_domain.txt",
        include_str!("../../assets/prompts/pisc_domain.txt"),
    ),
    (
        "prompts/pisc_relation.txt",
        include_str!("../../assets/prompts/pisc_relation.txt"),
    ),
    (
        "prompts/gazefollow.txt",
        include_str!("../../assets/prompts/gazefollow.txt"),
    ),
];

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub id: TaskId,
    pub prompt_template: String,
    pub output_mode: OutputMode,
    pub labels: Vec<String>,
    pub class_names: Vec<String>,
    pub bbox_arity: usize,
}

impl TaskSpec {
    /// Index of `label`, accepting the label itself or its class name.
    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label).or_else(|| {
            self.class_names
                .iter()
                .position(|c| c.eq_ignore_ascii_case(label.trim()))
        })
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    prompt: String,
    output: OutputMode,
    bbox_arity: usize,
    labels: Vec<String>,
    #[serde(default)]
    class_names: Option<Vec<String>>,
}

#[derive(Clone, Debug)]
pub struct TaskRegistry {
    specs: BTreeMap<TaskId, TaskSpec>,
}

impl TaskRegistry {
    /// The registry shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN_REGISTRY, |path| {
            BUILTIN_PROMPTS
                .iter()
                .find(|(p, _)| *p == path)
                .map(|(_, text)| text.to_string())
        })
        .expect("builtin registry is valid")
    }

    /// Parses a registry file; `load_prompt` resolves each `prompt` path.
    pub fn from_toml(text: &str, load_prompt: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let raw: BTreeMap<String, RawTask> = toml::from_str(text).map_err(|e| Error::Registry(e.to_string()))?;
        let mut specs = BTreeMap::new();
        for (key, task) in raw {
            let id: TaskId = key.parse()?;
            let prompt = load_prompt(&task.prompt)
                .ok_or_else(|| Error::Registry(format!("{id}: prompt file {} not found", task.prompt)))?;
            let prompt_template = prompt.trim_end().to_string();
            if task.output != id.output_mode() {
                return Err(Error::Registry(format!("{id}: wrong output mode")));
            }
            if task.bbox_arity > 2 {
                return Err(Error::Registry(format!("{id}: bbox arity above 2")));
            }
            if task.output == OutputMode::Text && task.labels.is_empty() {
                return Err(Error::Registry(format!("{id}: text task without labels")));
            }
            let class_names = match task.class_names {
                Some(names) => names,
                None => option_names(&prompt_template, &task.labels),
            };
            if class_names.len() != task.labels.len() {
                return Err(Error::Registry(format!(
                    "{id}: {} class names for {} labels",
                    class_names.len(),
                    task.labels.len()
                )));
            }
            specs.insert(
                id,
                TaskSpec {
                    id,
                    prompt_template,
                    output_mode: task.output,
                    labels: task.labels,
                    class_names,
                    bbox_arity: task.bbox_arity,
                },
            );
        }
        Ok(Self { specs })
    }

    pub fn get(&self, id: TaskId) -> Result<&TaskSpec> {
        self.specs
            .get(&id)
            .ok_or_else(|| Error::Registry(format!("task {id} is not registered")))
    }

    pub fn specs(&self) -> impl Iterator<Item = &TaskSpec> {
        self.specs.values()
    }

    /// Every prompt and label, for building a word vocabulary.
    pub fn corpus(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for s in self.specs.values() {
            out.push(s.prompt_template.as_str());
            out.extend(s.labels.iter().map(String::as_str));
        }
        out
    }
}

/// Reads `(label) name` option lines from a prompt.
fn option_names(prompt: &str, labels: &[String]) -> Vec<String> {
    labels
        .iter()
        .filter_map(|label| {
            let marker = format!("({label}) ");
            prompt
                .lines()
                .find_map(|line| line.trim().strip_prefix(marker.as_str()).map(|s| s.trim().to_string()))
        })
        .collect()
}

/// Tokenizes a task's prompt.
pub fn render_prompt(spec: &TaskSpec, tokenizer: &WordTokenizer) -> Vec<TokenId> {
    tokenizer.encode(&spec.prompt_template)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_invariants() {
        let r = TaskRegistry::builtin();
        let lam = r.get(TaskId::Lam).unwrap();
        assert_eq!(
            (lam.bbox_arity, lam.labels.clone()),
            (0, vec!["Yes".to_string(), "No".to_string()])
        );
        let affect = r.get(TaskId::AffectNet).unwrap();
        assert_eq!(affect.labels.len(), 8);
        assert_eq!(affect.class_names[7], "contempt");
        let hagrid = r.get(TaskId::HagridV2).unwrap();
        assert_eq!(hagrid.labels.len(), 33);
        assert_eq!(hagrid.labels[26], "aa");
        assert_eq!(hagrid.labels[32], "ag");
        assert!(hagrid.class_names[32].starts_with("only thumb and index fingers of both hands"));
        let dom = r.get(TaskId::PiscDomain).unwrap();
        assert_eq!(dom.bbox_arity, 2);
        assert_eq!(dom.class_names, vec!["intimate", "not intimate", "no relation"]);
        assert_eq!(r.get(TaskId::PiscRelation).unwrap().labels.len(), 6);
        let gaze = r.get(TaskId::GazeFollow).unwrap();
        assert_eq!((gaze.bbox_arity, gaze.output_mode), (1, OutputMode::Heatmap));
        assert!(gaze.labels.is_empty());
    }

    #[test]
    fn prompts_are_verbatim() {
        let r = TaskRegistry::builtin();
        let affect = &r.get(TaskId::AffectNet).unwrap().prompt_template;
        assert!(affect.ends_with(
            "respond directly with only the expression's lowercase label (e.g. 'a', 'c', 'h') with no additional text or reasoning."
        ));
        for (l, name) in ["(a) neutral", "(h) contempt"].iter().zip(0..) {
            let _ = name;
            assert!(affect.contains(l));
        }
        let lam = &r.get(TaskId::Lam).unwrap().prompt_template;
        assert!(lam.starts_with("You will receive a single image with a cropped face."));
        let dom = &r.get(TaskId::PiscDomain).unwrap().prompt_template;
        assert!(dom.contains("(a) intimate\n(b) not intimate\n(c) no relation"));
    }

    #[test]
    fn render_is_deterministic() {
        let r = TaskRegistry::builtin();
        let tok = WordTokenizer::from_corpus(r.corpus(), &[]);
        let spec = r.get(TaskId::Lam).unwrap();
        let a = render_prompt(spec, &tok);
        assert_eq!(a, render_prompt(spec, &tok));
        assert!(!a.contains(&tok.unk()));
        let affect = render_prompt(r.get(TaskId::AffectNet).unwrap(), &tok);
        let open = tok.id("(").unwrap();
        // eight "(x)" options plus "(e.g."
        assert_eq!(affect.iter().filter(|&&t| t == open).count(), 9);
    }

    #[test]
    fn label_lookup_accepts_class_names() {
        let r = TaskRegistry::builtin();
        let rel = r.get(TaskId::PiscRelation).unwrap();
        assert_eq!(rel.label_index("c"), Some(2));
        assert_eq!(rel.label_index("Professional"), Some(3));
        assert_eq!(rel.label_index("enemies"), None);
    }
}
