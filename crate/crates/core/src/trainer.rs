//! End-to-end prompt training: shot sampling, crop views, text-guided
//! normal/pseudo selection and momentum SGD on a cosine schedule.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{select_views, CropConfig, CropSchedule, SelectedPair, ViewSet};
use crate::data_io::{self, EmbeddingDataset, ImageDataset};
use crate::losses::{self, LossConfig, LossSample, LossWeights};
use crate::metrics::{self, Prediction, ScoredPrediction};
use crate::model::{
    fit_name_tokens, Embedding, FrozenTextEncoder, FrozenVisionEncoder, PromptBank, TextEncoderSpec, TokenEmbedding,
    VisionEncoderSpec, Vocabulary,
};
use crate::{seed, MisdError, Result};

pub const DEFAULT_EPOCHS: usize = 30;
pub const DEFAULT_LR: f64 = 2e-3;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_CONTEXT_LEN: usize = 16;
pub const DEFAULT_NEGATIVE_PROMPTS: usize = 4;
pub const DEFAULT_SHOTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub shots: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub loss: LossConfig,
    pub context_len: usize,
    pub negative_prompts: usize,
    pub crop: CropConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            shots: DEFAULT_SHOTS,
            epochs: DEFAULT_EPOCHS,
            lr: DEFAULT_LR,
            momentum: DEFAULT_MOMENTUM,
            loss: LossConfig::default(),
            context_len: DEFAULT_CONTEXT_LEN,
            negative_prompts: DEFAULT_NEGATIVE_PROMPTS,
            crop: CropConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(MisdError::Config("shots must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(MisdError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(MisdError::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.context_len == 0 || self.negative_prompts == 0 {
            return Err(MisdError::Config("context length and negative prompt count must be positive".into()));
        }
        self.loss.validate()?;
        self.crop.validate()
    }
}

/// Radius of the fitted name-token targets inside the tanh range.
pub const DEFAULT_ALIGNMENT_RADIUS: f64 = 0.9;

/// The frozen "pretrained" pair. Both encoders are regenerated from these
/// specs; `tokens` holds name tokens fitted by [`Backbone::pretrain`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    pub text: TextEncoderSpec,
    pub vision: VisionEncoderSpec,
    #[serde(default)]
    pub tokens: BTreeMap<String, TokenEmbedding>,
}

impl Backbone {
    pub fn validate(&self) -> Result<()> {
        self.text.validate()?;
        self.vision.validate()?;
        if self.text.embed_dim != self.vision.embed_dim {
            return Err(MisdError::Config(format!(
                "text ({}) and vision ({}) embedding dimensions differ",
                self.text.embed_dim, self.vision.embed_dim
            )));
        }
        Ok(())
    }

    /// The text spec with its context length set to `context_len`.
    pub fn text_for(&self, context_len: usize) -> TextEncoderSpec {
        TextEncoderSpec { context_len, ..self.text.clone() }
    }

    pub fn vision_encoder(&self) -> Result<FrozenVisionEncoder> {
        FrozenVisionEncoder::new(self.vision.clone())
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::from_spec(&self.text).with_table(self.tokens.clone())
    }

    /// Fits a name token for every class of `dataset` so that the untrained
    /// prompt of each class points at the class's mean image embedding.
    /// Tokens are fitted for `self.text.context_len` context slots.
    pub fn pretrain(mut self, dataset: &ImageDataset, radius: f64) -> Result<Self> {
        self.validate()?;
        let vision = self.vision_encoder()?;
        let d = self.vision.embed_dim;
        let mut sums = vec![vec![0.0; d]; dataset.num_classes()];
        for (image, &label) in dataset.images.iter().zip(&dataset.labels) {
            let e = vision.encode(image)?;
            sums[label].iter_mut().zip(e.as_slice()).for_each(|(s, v)| *s += v);
        }
        let anchors = dataset
            .class_names
            .iter()
            .zip(sums)
            .map(|(name, sum)| Ok((name.clone(), Embedding::new(sum)?)))
            .collect::<Result<Vec<_>>>()?;
        let text = FrozenTextEncoder::new(self.text.clone())?;
        self.tokens.extend(fit_name_tokens(&text, &anchors, radius)?);
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub ce: f64,
    pub neg: f64,
    pub orth: f64,
    pub total: f64,
}

pub fn loss_trace_csv(trace: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,ce,neg,orth,total\n");
    for r in trace {
        out.push_str(&format!("{},{},{},{},{},{}\n", r.epoch, r.lr, r.ce, r.neg, r.orth, r.total));
    }
    out
}

/// `base_lr · ½ · (1 + cos(π · epoch / epochs))`
pub fn cosine_lr(epoch: usize, epochs: usize, base_lr: f64) -> Result<f64> {
    if epoch >= epochs {
        return Err(MisdError::Config(format!("epoch {epoch} outside [0, {epochs})")));
    }
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos()))
}

/// Indices of `shots` samples per class, drawn without replacement.
/// Output is grouped by class index; each class's draw is keyed by its name,
/// so relabeling classes does not change which samples are picked.
pub fn sample_shots(labels: &[usize], class_names: &[String], shots: usize, seed: u64) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(shots * class_names.len());
    for (class, name) in class_names.iter().enumerate() {
        let mut members: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l == class).map(|(i, _)| i).collect();
        if members.len() < shots {
            return Err(MisdError::Data(format!(
                "class `{name}` has {} samples, {shots} shots requested",
                members.len()
            )));
        }
        members.shuffle(&mut seed::rng(seed, &["shots", name]));
        out.extend_from_slice(&members[..shots]);
    }
    Ok(out)
}

/// Trained prompts plus everything needed to score new images.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub bank: PromptBank,
    pub class_features: Vec<Embedding>,
    pub negative_features: Vec<Embedding>,
    pub config: TrainConfig,
    pub backbone: Backbone,
    pub trace: Vec<EpochRecord>,
    text_encoder: FrozenTextEncoder,
}

impl TrainedModel {
    pub fn new(bank: PromptBank, config: TrainConfig, backbone: Backbone, trace: Vec<EpochRecord>) -> Result<Self> {
        backbone.validate()?;
        bank.validate()?;
        if bank.context_len() != config.context_len || bank.num_negatives() != config.negative_prompts {
            return Err(MisdError::Compatibility("prompt bank shape differs from its training config".into()));
        }
        if bank.token_dim() != backbone.text.token_dim {
            return Err(MisdError::Compatibility("prompt token dimension differs from the text encoder".into()));
        }
        let text_encoder = FrozenTextEncoder::new(backbone.text_for(config.context_len))?;
        let (class_features, negative_features) = losses::encode_bank(&bank, &text_encoder)?;
        Ok(Self { bank, class_features, negative_features, config, backbone, trace, text_encoder })
    }

    pub fn text_encoder(&self) -> &FrozenTextEncoder {
        &self.text_encoder
    }

    pub fn embed_dim(&self) -> usize {
        self.backbone.text.embed_dim
    }

    pub fn num_classes(&self) -> usize {
        self.bank.num_classes()
    }

    pub fn predict(&self, q: &Embedding) -> Result<Prediction> {
        if q.dim() != self.embed_dim() {
            return Err(MisdError::Compatibility(format!(
                "image embedding has dimension {}, model expects {}",
                q.dim(),
                self.embed_dim()
            )));
        }
        metrics::predict(q, &self.class_features, self.config.loss.temperature)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            embed_dim: self.embed_dim(),
            token_dim: self.bank.token_dim(),
            context_len: self.bank.context_len(),
            classes: self.bank.num_classes(),
            negative_prompts: self.bank.num_negatives(),
            backbone: self.backbone.clone(),
            config: self.config.clone(),
            bank: self.bank.clone(),
            loss_trace: self.trace.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| MisdError::Format(format!("model file: {e}")))?;
        if file.format != MODEL_FORMAT {
            return Err(MisdError::Format(format!("unsupported model format `{}`", file.format)));
        }
        let model = Self::new(file.bank, file.config, file.backbone, file.loss_trace)?;
        let declared = (file.embed_dim, file.token_dim, file.context_len, file.classes, file.negative_prompts);
        let actual = (
            model.embed_dim(),
            model.bank.token_dim(),
            model.bank.context_len(),
            model.bank.num_classes(),
            model.bank.num_negatives(),
        );
        if declared != actual {
            return Err(MisdError::Format(format!("model header {declared:?} disagrees with its contents {actual:?}")));
        }
        Ok(model)
    }
}

const MODEL_FORMAT: &str = "misd-model-v1";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    embed_dim: usize,
    token_dim: usize,
    context_len: usize,
    classes: usize,
    negative_prompts: usize,
    backbone: Backbone,
    config: TrainConfig,
    bank: PromptBank,
    loss_trace: Vec<EpochRecord>,
}

/// The default backbone with name tokens fitted on the synthetic world's
/// `pretrain` split, which no training or evaluation split shares.
pub fn synthetic_backbone(synth: &data_io::SynthConfig) -> Result<Backbone> {
    Backbone::default().pretrain(&data_io::gen_synth(synth, "pretrain")?, DEFAULT_ALIGNMENT_RADIUS)
}

pub fn write_backbone(path: &Path, backbone: &Backbone) -> Result<()> {
    let mut s = serde_json::to_string_pretty(backbone).expect("backbone serializes");
    s.push('\n');
    data_io::write_file(path, s.as_bytes())
}

pub fn read_backbone(path: &Path) -> Result<Backbone> {
    let bytes = data_io::read_file(path)?;
    let backbone: Backbone =
        serde_json::from_slice(&bytes).map_err(|e| MisdError::Json { path: path.to_path_buf(), source: e })?;
    backbone.validate()?;
    Ok(backbone)
}

pub fn write_model(path: &Path, model: &TrainedModel) -> Result<()> {
    data_io::write_file(path, model.to_json().as_bytes())
}

pub fn read_model(path: &Path) -> Result<TrainedModel> {
    let bytes = data_io::read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| MisdError::Format("model file is not UTF-8".into()))?;
    TrainedModel::from_json(&text)
}

/// The initial bank for `config`, before any update.
pub fn init_bank(class_names: &[String], config: &TrainConfig, backbone: &Backbone) -> Result<PromptBank> {
    PromptBank::init(&backbone.vocabulary(), class_names, config.context_len, config.negative_prompts, seed::derive(config.seed, &["bank"]))
}

/// Samples shots from `dataset`, embeds `config.crop.k` views of each, and trains.
pub fn train(dataset: &ImageDataset, config: &TrainConfig, backbone: &Backbone) -> Result<TrainedModel> {
    config.validate()?;
    backbone.validate()?;
    let shots = sample_shots(&dataset.labels, &dataset.class_names, config.shots, config.seed)?;
    let encoder = backbone.vision_encoder()?;
    let view_seed = seed::derive(config.seed, &["views"]);
    let mut sets = Vec::with_capacity(shots.len());
    for &i in &shots {
        let mut rng = seed::rng_indexed(view_seed, &["sample"], i as u64);
        let views = crate::augment::generate_views(&dataset.images[i], &config.crop, encoder.spec(), &mut rng)?
            .iter()
            .map(|v| encoder.encode(v))
            .collect::<Result<Vec<_>>>()?;
        sets.push(ViewSet::new(i as u64, views, dataset.labels[i])?);
    }
    train_views(&sets, &dataset.class_names, config, backbone)
}

/// Samples shots from precomputed views (k >= 2) and trains.
pub fn train_embeddings(dataset: &EmbeddingDataset, config: &TrainConfig, backbone: &Backbone) -> Result<TrainedModel> {
    config.validate()?;
    if dataset.k() < 2 {
        return Err(MisdError::Config(format!("training needs at least 2 views per sample, file has k = {}", dataset.k())));
    }
    if dataset.dim() != backbone.text.embed_dim {
        return Err(MisdError::Compatibility(format!(
            "embeddings have dimension {}, text encoder produces {}",
            dataset.dim(),
            backbone.text.embed_dim
        )));
    }
    let shots = sample_shots(&dataset.labels, &dataset.class_names, config.shots, config.seed)?;
    let sets = shots
        .iter()
        .map(|&i| ViewSet::new(i as u64, dataset.sample(i).to_vec(), dataset.labels[i]))
        .collect::<Result<Vec<_>>>()?;
    train_views(&sets, &dataset.class_names, config, backbone)
}

/// Runs the optimization on fixed view sets. Gradients are accumulated in
/// class-then-input order.
pub fn train_views(
    view_sets: &[ViewSet],
    class_names: &[String],
    config: &TrainConfig,
    backbone: &Backbone,
) -> Result<TrainedModel> {
    config.validate()?;
    backbone.validate()?;
    if view_sets.is_empty() {
        return Err(MisdError::Data("no training samples".into()));
    }
    if let Some(vs) = view_sets.iter().find(|vs| vs.label >= class_names.len()) {
        return Err(MisdError::Data(format!("sample {} has label {} out of range", vs.id, vs.label)));
    }
    let mut order: Vec<&ViewSet> = view_sets.iter().collect();
    order.sort_by_key(|vs| vs.label);

    let encoder = FrozenTextEncoder::new(backbone.text_for(config.context_len))?;
    let mut bank = init_bank(class_names, config, backbone)?;
    let weights = LossWeights::objective(&config.loss);
    let mut velocity = vec![0.0; losses::trainable_params(&bank).len()];
    let mut selected: Vec<SelectedPair> = Vec::new();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        if epoch == 0 || config.crop.schedule == CropSchedule::Adaptive {
            let (class_features, _) = losses::encode_bank(&bank, &encoder)?;
            selected = order
                .iter()
                .map(|vs| select_views(vs, &class_features[vs.label]))
                .collect::<Result<_>>()?;
        }
        let locals: Vec<Vec<&Embedding>> = order
            .iter()
            .zip(&selected)
            .map(|(vs, pair)| vs.views.iter().enumerate().filter(|(i, _)| *i != pair.normal_index).map(|(_, v)| v).collect())
            .collect();
        let batch: Vec<LossSample<'_>> = order
            .iter()
            .zip(&selected)
            .zip(&locals)
            .map(|((vs, pair), locals)| LossSample {
                normal: &pair.normal,
                pseudo: &pair.pseudo,
                locals: locals.as_slice(),
                label: vs.label,
            })
            .collect();
        let (breakdown, grads) = losses::loss_gradients(&batch, &bank, &encoder, &config.loss, weights)?;
        let lr = cosine_lr(epoch, config.epochs, config.lr)?;
        let mut params = losses::trainable_params(&bank);
        for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads.flatten()) {
            *v = config.momentum * *v + g;
            *p -= lr * *v;
        }
        losses::set_trainable_params(&mut bank, &params);
        trace.push(EpochRecord {
            epoch,
            lr,
            ce: breakdown.ce,
            neg: breakdown.neg,
            orth: breakdown.orth,
            total: breakdown.total,
        });
    }
    TrainedModel::new(bank, config.clone(), backbone.clone(), trace)
}

/// Encodes every image as a single full view (`k = 1`).
pub fn embed_for_eval(dataset: &ImageDataset, backbone: &Backbone) -> Result<EmbeddingDataset> {
    let single = CropConfig { k: 1, ..CropConfig::default() };
    data_io::embed_dataset(dataset, &backbone.vision_encoder()?, &single, 0)
}

/// Maximum-softmax-probability predictions for a `k = 1` embedding set.
pub fn score_embeddings(model: &TrainedModel, dataset: &EmbeddingDataset) -> Result<Vec<ScoredPrediction>> {
    if dataset.k() != 1 {
        return Err(MisdError::Config(format!("evaluation expects one view per sample, file has k = {}", dataset.k())));
    }
    if dataset.dim() != model.embed_dim() {
        return Err(MisdError::Compatibility(format!(
            "embeddings have dimension {}, model expects {}",
            dataset.dim(),
            model.embed_dim()
        )));
    }
    if dataset.class_names != model.bank.class_names {
        return Err(MisdError::Compatibility("data and model class names differ".into()));
    }
    (0..dataset.len())
        .map(|i| {
            let p = model.predict(&dataset.sample(i)[0])?;
            Ok(ScoredPrediction::classified(p.confidence, p.predicted, dataset.labels[i]))
        })
        .collect()
}
