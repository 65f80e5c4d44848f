use ndarray::{Array2, ArrayView1};

use super::{OutputMode, TaskSpec};
use crate::error::{Error, Result};
use crate::model::tokenizer::{TokenId, WordTokenizer};

/// Token sequences for each label of a task.
///
/// When every label is one distinct token the score is the raw logit at the
/// final prompt position. Otherwise each label is terminated by EOS and
/// scored by its summed log-probability under teacher forcing, which keeps
/// labels that share a prefix (`a` vs `ag`) apart.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelCodec {
    sequences: Vec<Vec<TokenId>>,
    single_token: bool,
}

impl LabelCodec {
    pub fn new(spec: &TaskSpec, tokenizer: &WordTokenizer) -> Result<Self> {
        if spec.output_mode != OutputMode::Text {
            return Err(Error::InvalidTask(format!("{} has no text labels", spec.id)));
        }
        let mut sequences: Vec<Vec<TokenId>> = spec.labels.iter().map(|l| tokenizer.encode(l)).collect();
        if let Some(i) = sequences
            .iter()
            .position(|s| s.is_empty() || s.contains(&tokenizer.unk()))
        {
            return Err(Error::Registry(format!(
                "{}: label {:?} is not representable by the tokenizer",
                spec.id, spec.labels[i]
            )));
        }
        let mut firsts: Vec<TokenId> = sequences.iter().map(|s| s[0]).collect();
        firsts.sort_unstable();
        firsts.dedup();
        let single_token = sequences.iter().all(|s| s.len() == 1) && firsts.len() == sequences.len();
        if !single_token {
            for s in &mut sequences {
                s.push(tokenizer.eos());
            }
            let mut uniq = sequences.clone();
            uniq.sort();
            uniq.dedup();
            if uniq.len() != sequences.len() {
                return Err(Error::Registry(format!("{}: labels tokenize identically", spec.id)));
            }
        }
        Ok(Self {
            sequences,
            single_token,
        })
    }

    pub fn is_single_token(&self) -> bool {
        self.single_token
    }

    pub fn num_labels(&self) -> usize {
        self.sequences.len()
    }

    /// Training target tokens for label `index`.
    pub fn target(&self, index: usize) -> &[TokenId] {
        &self.sequences[index]
    }

    /// Teacher-forced continuation fed after the prompt; its length plus one
    /// equals the number of target tokens.
    pub fn continuation(&self, index: usize) -> &[TokenId] {
        let s = &self.sequences[index];
        &s[..s.len() - 1]
    }
}

/// Produces next-token logits after a fixed context extended by
/// `continuation`: row `k` predicts the token following
/// `continuation[..k]`, so `continuation.len() + 1` rows are returned.
pub trait ContinuationScorer {
    fn continuation_logits(&mut self, continuations: &[&[TokenId]]) -> Result<Vec<Array2<f64>>>;
}

/// Index of the maximum; ties resolve to the lowest index. NaN never wins.
pub fn argmax_lowest(values: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

fn log_softmax_at(row: ArrayView1<'_, f64>, token: TokenId) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row[token] - lse
}

/// Scores every label of `spec` and returns `(prediction, scores)`.
pub fn score_labels(
    spec: &TaskSpec,
    codec: &LabelCodec,
    scorer: &mut dyn ContinuationScorer,
) -> Result<(usize, Vec<f64>)> {
    if spec.output_mode != OutputMode::Text {
        return Err(Error::InvalidTask(format!("{} is not a text task", spec.id)));
    }
    let scores: Vec<f64> = if codec.single_token {
        let logits = scorer.continuation_logits(&[&[]])?;
        let row = logits[0].row(0);
        codec.sequences.iter().map(|s| row[s[0]]).collect()
    } else {
        let conts: Vec<&[TokenId]> = (0..codec.num_labels()).map(|i| codec.continuation(i)).collect();
        let logits = scorer.continuation_logits(&conts)?;
        codec
            .sequences
            .iter()
            .zip(&logits)
            .map(|(seq, l)| seq.iter().enumerate().map(|(k, &t)| log_softmax_at(l.row(k), t)).sum())
            .collect()
    };
    let pred = argmax_lowest(ArrayView1::from(&scores[..]));
    Ok((pred, scores))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::tasks::{TaskId, TaskRegistry};
    use ndarray::array;

    struct Table(Vec<Array2<f64>>);

    impl ContinuationScorer for Table {
        fn continuation_logits(&mut self, c: &[&[TokenId]]) -> Result<Vec<Array2<f64>>> {
            Ok(c.iter()
                .enumerate()
                .map(|(i, _)| self.0[i.min(self.0.len() - 1)].clone())
                .collect())
        }
    }

    fn setup() -> (TaskRegistry, WordTokenizer) {
        let r = TaskRegistry::builtin();
        let t = WordTokenizer::from_corpus(r.corpus(), &[]);
        (r, t)
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_lowest(array![1.0, 3.0, 3.0].view()), 1);
        assert_eq!(argmax_lowest(array![f64::NAN, 0.0].view()), 1);
    }

    #[test]
    fn single_token_uses_raw_logits() {
        let (r, t) = setup();
        let spec = r.get(TaskId::Lam).unwrap();
        let codec = LabelCodec::new(spec, &t).unwrap();
        assert!(codec.is_single_token());
        let mut logits = Array2::zeros((1, t.vocab_size()));
        logits[[0, t.id("No").unwrap()]] = 2.0;
        logits[[0, t.id("Yes").unwrap()]] = 2.0;
        let (pred, scores) = score_labels(spec, &codec, &mut Table(vec![logits.clone()])).unwrap();
        assert_eq!(pred, 0);
        assert_eq!(scores, vec![2.0, 2.0]);
        logits[[0, t.id("No").unwrap()]] = 2.5;
        assert_eq!(score_labels(spec, &codec, &mut Table(vec![logits])).unwrap().0, 1);
    }

    /// Vocabulary without the two-letter gesture labels, so they split
    /// into characters.
    pub(crate) fn char_label_tokenizer(r: &TaskRegistry) -> WordTokenizer {
        let full = WordTokenizer::from_corpus(r.corpus(), &[]);
        let hagrid = r.get(TaskId::HagridV2).unwrap();
        let words: Vec<String> = full
            .words()
            .filter(|w| !(w.len() == 2 && hagrid.labels.iter().any(|l| l == w)))
            .map(str::to_string)
            .collect();
        WordTokenizer::from_vocab(words)
    }

    #[test]
    fn word_vocab_keeps_every_label_single_token() {
        let (r, t) = setup();
        for spec in r.specs().filter(|s| s.output_mode == OutputMode::Text) {
            assert!(LabelCodec::new(spec, &t).unwrap().is_single_token(), "{}", spec.id);
        }
    }

    #[test]
    fn multi_token_labels_end_with_eos() {
        let r = TaskRegistry::builtin();
        let t = char_label_tokenizer(&r);
        let spec = r.get(TaskId::HagridV2).unwrap();
        let codec = LabelCodec::new(spec, &t).unwrap();
        assert!(!codec.is_single_token());
        assert_eq!(codec.target(0), &[t.id("a").unwrap(), t.eos()]);
        assert_eq!(codec.continuation(0), &[t.id("a").unwrap()]);
        assert_eq!(codec.target(32).len(), 3);
    }

    #[test]
    fn heatmap_task_is_rejected() {
        let (r, t) = setup();
        let spec = r.get(TaskId::GazeFollow).unwrap();
        assert!(matches!(LabelCodec::new(spec, &t), Err(Error::InvalidTask(_))));
        let lam = LabelCodec::new(r.get(TaskId::Lam).unwrap(), &t).unwrap();
        assert!(matches!(
            score_labels(spec, &lam, &mut Table(vec![Array2::zeros((1, 1))])),
            Err(Error::InvalidTask(_))
        ));
    }
}
