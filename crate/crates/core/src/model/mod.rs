//! The fused model: frozen visual encoder, connector, bbox embedding,
//! LoRA-adapted language backbone and gaze heatmap head.

pub mod backbone;
pub mod bbox;
pub mod checkpoint;
pub mod connector;
pub mod encoder;
pub mod heatmap;
pub mod params;
pub mod tokenizer;

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tasks::{render_prompt, score_labels, ContinuationScorer, LabelCodec, OutputMode, TaskId, TaskRegistry};

use backbone::{BackboneConfig, BoundBackbone, LoraConfig, LoraSlots, ToyBackbone};
use bbox::{embed_bboxes, patch_mask, BBoxSet};
use connector::{connect, connector_graph, Connector, ConnectorConfig, ConnectorSlots};
use encoder::{EncoderConfig, PatchEncoder, VisualEncoder, VisualFeatureGrid};
use heatmap::{register_head, BoundHeatmap, HeatmapHeadConfig, HeatmapSlots};
use params::ParamSet;
use tokenizer::{TokenId, WordTokenizer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default = "default_hidden")]
    pub connector_hidden: usize,
    #[serde(default = "default_rank")]
    pub lora_rank: usize,
    #[serde(default = "default_heatmap_size")]
    pub heatmap_size: usize,
    #[serde(default = "default_sigma")]
    pub heatmap_sigma: f64,
    #[serde(default = "default_init_seed")]
    pub init_seed: u64,
}

fn default_hidden() -> usize {
    4096
}
fn default_rank() -> usize {
    32
}
fn default_heatmap_size() -> usize {
    64
}
fn default_sigma() -> f64 {
    crate::tasks::DEFAULT_SIGMA
}
fn default_init_seed() -> u64 {
    7
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            backbone: BackboneConfig::default(),
            connector_hidden: default_hidden(),
            lora_rank: default_rank(),
            heatmap_size: default_heatmap_size(),
            heatmap_sigma: default_sigma(),
            init_seed: default_init_seed(),
        }
    }
}

/// One image's encoder features and its boxes.
#[derive(Clone, Copy, Debug)]
pub struct VisualInput<'a> {
    pub features: &'a VisualFeatureGrid,
    pub boxes: &'a BBoxSet,
}

#[derive(Clone, Copy, Debug)]
pub struct TextExample<'a> {
    pub task: TaskId,
    pub input: VisualInput<'a>,
    /// Index into the task's label list.
    pub label: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct HeatmapExample<'a> {
    pub input: VisualInput<'a>,
    pub target: &'a Array2<f64>,
}

/// `[prompt embeddings; visual embeddings]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedSequence {
    pub rows: Array2<f64>,
    pub prompt_len: usize,
    pub visual_len: usize,
}

impl EmbeddedSequence {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub l_llm: f64,
    pub l_heatmap: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenChecksums {
    pub encoder: String,
    pub backbone: String,
}

/// Identity of the architecture a set of trainable tensors belongs to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFingerprint {
    pub encoder: String,
    pub backbone: String,
    pub d_h: usize,
    pub lora_rank: usize,
    pub heatmap: (usize, usize),
    pub params: String,
}

/// Trainable group name prefixes, in registration order.
pub const TRAINABLE_GROUPS: [&str; 4] = ["connector", "bbox", "lora", "heatmap"];

#[derive(Clone, Debug)]
struct Slots {
    connector: ConnectorSlots,
    bbox: usize,
    lora: LoraSlots,
    heatmap: HeatmapSlots,
}

/// Complete model instance. Frozen components are shared behind `Arc`, so
/// cloning copies only the trainable tensors.
#[derive(Clone)]
pub struct SocialFusion {
    config: ModelConfig,
    encoder: Arc<dyn VisualEncoder>,
    backbone: Arc<ToyBackbone>,
    tokenizer: Arc<WordTokenizer>,
    registry: Arc<TaskRegistry>,
    params: ParamSet,
    slots: Slots,
    connector_config: ConnectorConfig,
    head: HeatmapHeadConfig,
    prompts: BTreeMap<TaskId, Vec<TokenId>>,
    prompt_embeds: BTreeMap<TaskId, Array2<f64>>,
    codecs: BTreeMap<TaskId, LabelCodec>,
}

impl SocialFusion {
    /// Builds the model with the seeded patch encoder named by the config.
    pub fn new(config: &ModelConfig, registry: Arc<TaskRegistry>) -> Result<Self> {
        let encoder = Arc::new(PatchEncoder::new(&config.encoder)?);
        Self::with_encoder(config, registry, encoder)
    }

    /// Builds the model around any frozen encoder.
    pub fn with_encoder(
        config: &ModelConfig,
        registry: Arc<TaskRegistry>,
        encoder: Arc<dyn VisualEncoder>,
    ) -> Result<Self> {
        let tokenizer = WordTokenizer::from_corpus(registry.corpus(), &[]);
        Self::with_parts(config, registry, encoder, tokenizer)
    }

    /// Builds the model around any frozen encoder and tokenizer.
    pub fn with_parts(
        config: &ModelConfig,
        registry: Arc<TaskRegistry>,
        encoder: Arc<dyn VisualEncoder>,
        tokenizer: WordTokenizer,
    ) -> Result<Self> {
        if config.connector_hidden == 0 || config.heatmap_size == 0 {
            return Err(Error::config("connector_hidden and heatmap_size must be positive"));
        }
        if !(config.heatmap_sigma > 0.0) {
            return Err(Error::config("heatmap_sigma must be positive"));
        }
        let tokenizer = Arc::new(tokenizer);
        let backbone = Arc::new(ToyBackbone::new(
            &config.backbone,
            tokenizer.vocab_size(),
            LoraConfig::new(config.lora_rank),
        )?);
        let handle = encoder.handle().clone();
        let d_l = backbone.d_model();
        let connector_config = ConnectorConfig {
            d_v: handle.feature_dim,
            d_h: config.connector_hidden,
            d_l,
        };
        let head = HeatmapHeadConfig::new(handle.grid, (config.heatmap_size, config.heatmap_size))?;

        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamSet::new();
        let connector = Connector::init(connector_config, &mut rng).register(&mut params);
        let bbox = params.push("bbox.p", Array2::zeros((1, d_l)));
        let lora = backbone.register_lora(&mut params, &mut rng);
        let heatmap = register_head(&head, d_l, &mut params, &mut rng);

        let mut prompts = BTreeMap::new();
        let mut prompt_embeds = BTreeMap::new();
        let mut codecs = BTreeMap::new();
        for spec in registry.specs() {
            let tokens = render_prompt(spec, &tokenizer);
            prompt_embeds.insert(spec.id, backbone.embed_tokens(&tokens)?);
            prompts.insert(spec.id, tokens);
            if spec.output_mode == OutputMode::Text {
                codecs.insert(spec.id, LabelCodec::new(spec, &tokenizer)?);
            }
        }
        Ok(Self {
            config: config.clone(),
            encoder,
            backbone,
            tokenizer,
            registry,
            params,
            slots: Slots {
                connector,
                bbox,
                lora,
                heatmap,
            },
            connector_config,
            head,
            prompts,
            prompt_embeds,
            codecs,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &dyn VisualEncoder {
        self.encoder.as_ref()
    }

    pub fn backbone(&self) -> &ToyBackbone {
        &self.backbone
    }

    pub fn tokenizer(&self) -> &WordTokenizer {
        &self.tokenizer
    }

    pub fn registry(&self) -> &TaskRegistry {
        &self.registry
    }

    pub fn registry_arc(&self) -> Arc<TaskRegistry> {
        self.registry.clone()
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn connector_config(&self) -> ConnectorConfig {
        self.connector_config
    }

    pub fn heatmap_config(&self) -> HeatmapHeadConfig {
        self.head
    }

    pub fn heatmap_shape(&self) -> (usize, usize) {
        self.head.output
    }

    pub fn prompt_tokens(&self, task: TaskId) -> Result<&[TokenId]> {
        self.prompts
            .get(&task)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Registry(format!("task {task} is not registered")))
    }

    pub fn codec(&self, task: TaskId) -> Result<&LabelCodec> {
        self.codecs
            .get(&task)
            .ok_or_else(|| Error::InvalidTask(format!("{task} has no text labels")))
    }

    /// Current connector weights.
    pub fn connector(&self) -> Connector {
        let v = self.params.values();
        let s = self.slots.connector.0;
        Connector {
            config: self.connector_config,
            weights: [v[s[0]].clone(), v[s[2]].clone(), v[s[4]].clone()],
            biases: [v[s[1]].clone(), v[s[3]].clone(), v[s[5]].clone()],
        }
    }

    pub fn p_bbox(&self) -> &Array2<f64> {
        &self.params.values()[self.slots.bbox]
    }

    pub fn frozen_checksums(&self) -> FrozenChecksums {
        FrozenChecksums {
            encoder: self.encoder.checksum(),
            backbone: self.backbone.checksum(),
        }
    }

    /// Value digest of each trainable group.
    pub fn group_digests(&self) -> BTreeMap<String, String> {
        TRAINABLE_GROUPS
            .iter()
            .map(|g| (g.to_string(), self.params.group_digest(&format!("{g}."))))
            .collect()
    }

    pub fn fingerprint(&self) -> ModelFingerprint {
        ModelFingerprint {
            encoder: self.encoder.handle().name.clone(),
            backbone: self.backbone.handle().name.clone(),
            d_h: self.connector_config.d_h,
            lora_rank: self.config.lora_rank,
            heatmap: self.head.output,
            params: self.params.fingerprint(),
        }
    }

    /// Connector projection followed by bbox injection, outside any graph.
    pub fn connect_visual(&self, features: &VisualFeatureGrid, boxes: &BBoxSet) -> Result<VisualFeatureGrid> {
        let z = connect(features, &self.connector())?;
        embed_bboxes(&z, boxes, self.p_bbox())
    }

    /// Prompt embeddings followed by the grid in row-major patch order.
    pub fn assemble_sequence(&self, prompt: &[TokenId], z: &VisualFeatureGrid) -> Result<EmbeddedSequence> {
        let d = self.backbone.d_model();
        if z.dim() != d {
            return Err(Error::input(format!(
                "grid dim {} does not match backbone dim {d}",
                z.dim()
            )));
        }
        let p = self.backbone.embed_tokens(prompt)?;
        let v = z.to_rows();
        let rows = ndarray::concatenate(Axis(0), &[p.view(), v.view()]).expect("matching widths");
        Ok(EmbeddedSequence {
            rows,
            prompt_len: prompt.len(),
            visual_len: z.num_patches(),
        })
    }

    /// Next-token logits at the final position of `seq`.
    pub fn forward_text(&self, seq: &EmbeddedSequence) -> Result<Array1<f64>> {
        if seq.is_empty() {
            return Err(Error::input("empty sequence"));
        }
        self.backbone.check_context(seq.len())?;
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let x = g.constant(seq.rows.clone());
        let h = b.backbone.forward(&mut g, &[], x, &[seq.len()]);
        let last = g.slice_rows(h, seq.len() - 1, 1);
        let logits = b.backbone.logits(&mut g, last);
        Ok(g.value(logits).row(0).to_owned())
    }

    /// Pre-sigmoid heatmap scores read from the visual positions of `seq`.
    pub fn forward_heatmap(&self, seq: &EmbeddedSequence) -> Result<Array2<f64>> {
        let (gh, gw) = self.head.grid;
        if seq.visual_len != gh * gw || seq.prompt_len + seq.visual_len != seq.len() {
            return Err(Error::InvalidState(format!(
                "sequence carries {} visual positions, heatmap head needs {}",
                seq.visual_len,
                gh * gw
            )));
        }
        self.backbone.check_context(seq.len())?;
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let x = g.constant(seq.rows.clone());
        let h = b.backbone.forward(&mut g, &[], x, &[seq.len()]);
        let states = g.slice_rows(h, seq.prompt_len, seq.visual_len);
        let map = b.heatmap.forward(&mut g, states);
        Ok(g.value(map).clone())
    }

    /// Loss of a batch and the gradient of `total` for every trainable
    /// tensor, in [`ParamSet`] order.
    pub fn loss_and_grads(
        &self,
        text: &[TextExample<'_>],
        heatmaps: &[HeatmapExample<'_>],
        lambda: f64,
    ) -> Result<(LossValues, Vec<Array2<f64>>)> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, true);
        let loss = self.batch_loss(&mut g, &b, text, heatmaps, lambda, None)?;
        let values = loss.values(&g);
        let mut grads = g.backward(loss.total);
        Ok((values, self.params.collect_grads(&b.vars, &mut grads)))
    }

    /// Computes frozen-for-now prompt keys and values for every task. Valid
    /// only while the trainable tensors stay unchanged.
    pub fn session(&self) -> Result<InferenceSession<'_>> {
        let mut cache = HashMap::new();
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        for (&task, embeds) in &self.prompt_embeds {
            if embeds.nrows() == 0 {
                continue;
            }
            let p = g.constant(embeds.clone());
            let kv = b.backbone.prefix_kv(&mut g, p);
            let kv = kv
                .into_iter()
                .map(|(k, v)| (g.value(k).clone(), g.value(v).clone()))
                .collect();
            cache.insert(task, kv);
        }
        Ok(InferenceSession { model: self, cache })
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self.params.bind(g, trainable);
        let c = self.slots.connector.0;
        let conn = c.map(|i| vars[i]);
        let bbox = vars[self.slots.bbox];
        let backbone = self.backbone.bind(g, &self.slots.lora, &vars);
        let heatmap = BoundHeatmap::new(g, self.head, self.slots.heatmap.0.map(|i| vars[i]));
        Bound {
            vars,
            conn,
            bbox,
            backbone,
            heatmap,
        }
    }

    fn prefix(&self, g: &mut Graph, b: &Bound, task: TaskId, cache: Option<&PrefixCache>) -> Result<Vec<(Var, Var)>> {
        let embeds = self
            .prompt_embeds
            .get(&task)
            .ok_or_else(|| Error::Registry(format!("task {task} is not registered")))?;
        if embeds.nrows() == 0 {
            return Ok(Vec::new());
        }
        if let Some(kv) = cache.and_then(|c| c.get(&task)) {
            return Ok(kv
                .iter()
                .map(|(k, v)| (g.constant(k.clone()), g.constant(v.clone())))
                .collect());
        }
        let p = g.constant(embeds.clone());
        Ok(b.backbone.prefix_kv(g, p))
    }

    fn visual_rows(&self, g: &mut Graph, b: &Bound, input: &VisualInput<'_>) -> Result<Var> {
        let z = input.features;
        if z.dim() != self.connector_config.d_v || z.grid() != self.head.grid {
            return Err(Error::input(format!(
                "feature grid {:?}x{} does not match encoder {:?}x{}",
                z.grid(),
                z.dim(),
                self.head.grid,
                self.connector_config.d_v
            )));
        }
        input.boxes.validate()?;
        let x = g.constant(z.to_rows());
        let h = connector_graph(g, x, b.conn);
        if input.boxes.is_empty() {
            return Ok(h);
        }
        let mask: Rc<[bool]> = patch_mask(input.boxes, z.grid()).into();
        Ok(g.add_masked_row(h, b.bbox, mask))
    }

    /// Runs one task's items through the backbone with a shared prompt
    /// prefix. Each item is `[visual rows; continuation tokens]`; returns,
    /// per item, the hidden rows that predict the continuation's next
    /// tokens (the last visual row onward).
    fn text_hidden(
        &self,
        g: &mut Graph,
        b: &Bound,
        task: TaskId,
        items: &[(VisualInput<'_>, &[TokenId])],
        cache: Option<&PrefixCache>,
    ) -> Result<Vec<Var>> {
        let prompt_len = self.prompt_tokens(task)?.len();
        let prefix = self.prefix(g, b, task, cache)?;
        let mut parts = Vec::new();
        let mut segments = Vec::new();
        for (input, cont) in items {
            let v = self.visual_rows(g, b, input)?;
            parts.push(v);
            if !cont.is_empty() {
                let e = self.backbone.embed_tokens(cont)?;
                parts.push(g.constant(e));
            }
            let len = input.features.num_patches() + cont.len();
            self.backbone.check_context(prompt_len + len)?;
            segments.push(len);
        }
        let suffix = g.concat_rows(&parts);
        let h = b.backbone.forward(g, &prefix, suffix, &segments);
        let mut out = Vec::with_capacity(items.len());
        let mut start = 0;
        for ((input, cont), len) in items.iter().zip(&segments) {
            let p = input.features.num_patches();
            out.push(g.slice_rows(h, start + p - 1, cont.len() + 1));
            start += len;
        }
        Ok(out)
    }

    fn heatmap_scores(
        &self,
        g: &mut Graph,
        b: &Bound,
        inputs: &[VisualInput<'_>],
        cache: Option<&PrefixCache>,
    ) -> Result<Vec<Var>> {
        let task = TaskId::GazeFollow;
        let prompt_len = self.prompt_tokens(task)?.len();
        let prefix = self.prefix(g, b, task, cache)?;
        let mut parts = Vec::with_capacity(inputs.len());
        for input in inputs {
            parts.push(self.visual_rows(g, b, input)?);
        }
        let p = self.head.grid.0 * self.head.grid.1;
        self.backbone.check_context(prompt_len + p)?;
        let suffix = g.concat_rows(&parts);
        let segments = vec![p; inputs.len()];
        let h = b.backbone.forward(g, &prefix, suffix, &segments);
        Ok((0..inputs.len())
            .map(|i| {
                let states = g.slice_rows(h, i * p, p);
                b.heatmap.forward(g, states)
            })
            .collect())
    }

    fn batch_loss(
        &self,
        g: &mut Graph,
        b: &Bound,
        text: &[TextExample<'_>],
        heatmaps: &[HeatmapExample<'_>],
        lambda: f64,
        cache: Option<&PrefixCache>,
    ) -> Result<LossVars> {
        if text.is_empty() && heatmaps.is_empty() {
            return Err(Error::input("empty batch"));
        }
        let mut l_llm = None;
        if !text.is_empty() {
            let mut groups: BTreeMap<TaskId, Vec<&TextExample<'_>>> = BTreeMap::new();
            for ex in text {
                groups.entry(ex.task).or_default().push(ex);
            }
            let mut rows = Vec::new();
            let mut targets = Vec::new();
            for (task, exs) in groups {
                let codec = self.codec(task)?;
                let mut items = Vec::with_capacity(exs.len());
                for ex in &exs {
                    if ex.label >= codec.num_labels() {
                        return Err(Error::InvalidTarget(format!(
                            "{task}: label index {} out of range",
                            ex.label
                        )));
                    }
                    items.push((ex.input, codec.continuation(ex.label)));
                    targets.extend_from_slice(codec.target(ex.label));
                }
                rows.extend(self.text_hidden(g, b, task, &items, cache)?);
            }
            let hidden = if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows) };
            let logits = b.backbone.logits(g, hidden);
            l_llm = Some(g.cross_entropy(logits, &targets));
        }
        let mut l_heatmap = None;
        if !heatmaps.is_empty() {
            let shape = self.head.output;
            let inputs: Vec<_> = heatmaps.iter().map(|h| h.input).collect();
            let mut targets = Vec::with_capacity(heatmaps.len());
            for h in heatmaps {
                if h.target.dim() != shape {
                    return Err(Error::input(format!(
                        "heatmap target is {:?}, head produces {:?}",
                        h.target.dim(),
                        shape
                    )));
                }
                targets.push(h.target.view());
            }
            let maps = self.heatmap_scores(g, b, &inputs, cache)?;
            let scores = if maps.len() == 1 { maps[0] } else { g.concat_rows(&maps) };
            let target = ndarray::concatenate(Axis(0), &targets).expect("equal widths");
            l_heatmap = Some(g.bce_with_logits(scores, Rc::new(target)));
        }
        let total = match (l_llm, l_heatmap) {
            (Some(t), Some(h)) => {
                let h = g.scale(h, lambda);
                g.add(t, h)
            }
            (Some(t), None) => t,
            (None, Some(h)) => g.scale(h, lambda),
            (None, None) => unreachable!(),
        };
        Ok(LossVars {
            total,
            l_llm,
            l_heatmap,
        })
    }
}

type PrefixCache = HashMap<TaskId, Vec<(Array2<f64>, Array2<f64>)>>;

struct Bound {
    vars: Vec<Var>,
    conn: [Var; 6],
    bbox: Var,
    backbone: BoundBackbone,
    heatmap: BoundHeatmap,
}

struct LossVars {
    total: Var,
    l_llm: Option<Var>,
    l_heatmap: Option<Var>,
}

impl LossVars {
    fn values(&self, g: &Graph) -> LossValues {
        LossValues {
            total: g.scalar(self.total),
            l_llm: self.l_llm.map_or(0.0, |v| g.scalar(v)),
            l_heatmap: self.l_heatmap.map_or(0.0, |v| g.scalar(v)),
        }
    }
}

/// Inference over a fixed snapshot of the model, with prompt keys and
/// values computed once per task.
pub struct InferenceSession<'m> {
    model: &'m SocialFusion,
    cache: PrefixCache,
}

impl<'m> InferenceSession<'m> {
    pub fn model(&self) -> &'m SocialFusion {
        self.model
    }

    /// Constrained label scores for one sample; returns `(prediction, scores)`.
    pub fn score_text(&self, task: TaskId, input: VisualInput<'_>) -> Result<(usize, Vec<f64>)> {
        let spec = self.model.registry.get(task)?;
        let codec = self.model.codec(task)?;
        let mut scorer = SampleScorer {
            session: self,
            task,
            input,
        };
        score_labels(spec, codec, &mut scorer)
    }

    /// [`score_text`](Self::score_text) over many samples. Single-token label
    /// sets share one forward pass.
    pub fn score_text_batch(&self, task: TaskId, inputs: &[VisualInput<'_>]) -> Result<Vec<(usize, Vec<f64>)>> {
        let spec = self.model.registry.get(task)?;
        if spec.output_mode != crate::tasks::OutputMode::Text || !self.model.codec(task)?.is_single_token() {
            return inputs.iter().map(|&i| self.score_text(task, i)).collect();
        }
        let codec = self.model.codec(task)?;
        let model = self.model;
        let mut g = Graph::new();
        let b = model.bind(&mut g, false);
        let items: Vec<_> = inputs.iter().map(|&i| (i, &[][..])).collect();
        let hidden = model.text_hidden(&mut g, &b, task, &items, Some(&self.cache))?;
        let rows = g.concat_rows(&hidden);
        let logits = b.backbone.logits(&mut g, rows);
        let logits = g.value(logits);
        Ok(logits
            .rows()
            .into_iter()
            .map(|row| {
                let scores: Vec<f64> = (0..codec.num_labels()).map(|i| row[codec.target(i)[0]]).collect();
                (
                    crate::tasks::argmax_lowest(ndarray::ArrayView1::from(&scores[..])),
                    scores,
                )
            })
            .collect())
    }

    /// Pre-sigmoid gaze heatmap scores for each input.
    pub fn predict_heatmaps(&self, inputs: &[VisualInput<'_>]) -> Result<Vec<Array2<f64>>> {
        let mut g = Graph::new();
        let b = self.model.bind(&mut g, false);
        let maps = self.model.heatmap_scores(&mut g, &b, inputs, Some(&self.cache))?;
        Ok(maps.into_iter().map(|m| g.value(m).clone()).collect())
    }

    /// Batch loss without gradients.
    pub fn loss(&self, text: &[TextExample<'_>], heatmaps: &[HeatmapExample<'_>], lambda: f64) -> Result<LossValues> {
        let mut g = Graph::new();
        let b = self.model.bind(&mut g, false);
        let loss = self
            .model
            .batch_loss(&mut g, &b, text, heatmaps, lambda, Some(&self.cache))?;
        Ok(loss.values(&g))
    }
}

struct SampleScorer<'s, 'm, 'a> {
    session: &'s InferenceSession<'m>,
    task: TaskId,
    input: VisualInput<'a>,
}

impl ContinuationScorer for SampleScorer<'_, '_, '_> {
    fn continuation_logits(&mut self, continuations: &[&[TokenId]]) -> Result<Vec<Array2<f64>>> {
        let model = self.session.model;
        let mut g = Graph::new();
        let b = model.bind(&mut g, false);
        let items: Vec<_> = continuations.iter().map(|c| (self.input, *c)).collect();
        let hidden = model.text_hidden(&mut g, &b, self.task, &items, Some(&self.session.cache))?;
        Ok(hidden
            .into_iter()
            .map(|h| {
                let l = b.backbone.logits(&mut g, h);
                g.value(l).clone()
            })
            .collect())
    }
}
