use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BioSentence, DatasetSplit, EntitySchema};
use crate::derm::{augment_epoch, DermConfig, EntityDictionary};
use crate::metrics::{count_matches, precision_recall_f1};
use crate::seed::derive_seed;

use super::model::{EncodedSentence, Params, TaggerModel};
use super::vocab::Vocabulary;
use super::TaggerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Heavy-ball momentum; 0 gives plain gradient descent.
    pub momentum: f64,
    pub hidden: usize,
    pub d_emb: usize,
    pub seed: u64,
    pub derm_enabled: bool,
    /// Global gradient-norm bound.
    pub gradient_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 40,
            epochs: 20,
            learning_rate: 1e-2,
            momentum: 0.9,
            hidden: 128,
            d_emb: 32,
            seed: 0,
            derm_enabled: true,
            gradient_clip: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TaggerError> {
        let bad = |m: &str| Err(TaggerError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 || self.epochs == 0 || self.hidden == 0 || self.d_emb == 0 {
            return bad("sizes must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if matches!(self.gradient_clip, Some(c) if c.is_nan() || c <= 0.0) {
            return bad("gradient_clip must be positive");
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sentence negative log-likelihood over the epoch.
    pub loss: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TaggerModel,
    pub log: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Vocabulary over training tokens plus every dictionary surface, so that
/// characters only reachable through augmentation still get embeddings.
pub fn build_vocabulary(train: &[BioSentence], dict: &EntityDictionary) -> Vocabulary {
    let dict_chars: Vec<String> = dict.by_type.values().flatten().flat_map(|s| s.chars().map(String::from)).collect();
    Vocabulary::build(
        train.iter().flat_map(|s| s.tokens.iter().map(String::as_str)).chain(dict_chars.iter().map(String::as_str)),
    )
}

/// Seed of the augmentation pass run before 1-based `epoch` by a training
/// run with seed `train_seed`.
pub fn augmentation_seed(train_seed: u64, epoch: usize) -> u64 {
    derive_seed(derive_seed(train_seed, epoch as u64), 1)
}

/// Trains a tagger on `split.train`, scoring `split.validation` after every
/// epoch and keeping the parameters of the best-scoring epoch (the earliest
/// on ties). With an empty validation set the final parameters are kept.
pub fn train(
    split: &DatasetSplit,
    dict: &EntityDictionary,
    schema: &EntitySchema,
    config: &TrainConfig,
    derm: &DermConfig,
) -> Result<TrainOutcome, TaggerError> {
    config.validate()?;
    if config.derm_enabled {
        derm.validate().map_err(|e| TaggerError::InvalidConfig(e.to_string()))?;
    }
    if split.train.is_empty() {
        return Err(TaggerError::EmptyTrainSet);
    }
    if let Some(s) = split.train.iter().chain(&split.validation).find(|s| s.is_empty()) {
        let _ = s;
        return Err(TaggerError::EmptySentence);
    }

    let vocab = build_vocabulary(&split.train, dict);
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0));
    let mut model = TaggerModel::initialized(vocab, schema.clone(), config.d_emb, config.hidden, &mut init_rng);

    let pristine: Vec<EncodedSentence> =
        split.train.iter().map(|s| model.encode_sentence(s)).collect::<Result<_, _>>()?;
    let mut velocity = model.params.zeros_like();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Params)> = None;

    for epoch in 1..=config.epochs {
        let epoch_seed = derive_seed(config.seed, epoch as u64);
        let data: Vec<EncodedSentence> = if config.derm_enabled {
            augment_epoch(&split.train, dict, derm, augmentation_seed(config.seed, epoch))
                .iter()
                .map(|o| model.encode_sentence(&o.sentence))
                .collect::<Result<_, _>>()?
        } else {
            pristine.clone()
        };
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(epoch_seed, 2)));

        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<EncodedSentence> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (loss, mut grad) = model.loss_and_gradient(&batch)?;
            if !loss.is_finite() || !grad.all_finite() {
                return Err(TaggerError::DivergedLoss { epoch, batch: b + 1, loss });
            }
            epoch_loss += loss;
            grad.scale(1.0 / batch.len() as f64);
            if let Some(clip) = config.gradient_clip {
                let norm = grad.norm();
                if norm > clip {
                    grad.scale(clip / norm);
                }
            }
            sgd_step(&mut model.params, &mut velocity, &grad, config);
        }
        let mean_loss = epoch_loss / data.len() as f64;

        let (precision, recall, f1) = if split.validation.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            let predicted = predict(&model, &split.validation)?;
            let counts = count_matches(&split.validation, &predicted, schema)
                .map_err(|e| TaggerError::Evaluation(e.to_string()))?;
            let m = precision_recall_f1(&counts).micro;
            (m.precision, m.recall, m.f1)
        };
        log::info!("epoch {epoch}: loss {mean_loss:.4} P {precision:.4} R {recall:.4} F1 {f1:.4}");
        log.push(EpochRecord { epoch, loss: mean_loss, precision, recall, f1 });

        if !split.validation.is_empty() && best.as_ref().is_none_or(|(f, _, _)| f1 > *f) {
            best = Some((f1, epoch, model.params.clone()));
        }
    }

    let best_epoch = match best {
        Some((_, epoch, params)) => {
            model.params = params;
            epoch
        }
        None => config.epochs,
    };
    Ok(TrainOutcome { model, log, best_epoch })
}

fn sgd_step(params: &mut Params, velocity: &mut Params, grad: &Params, config: &TrainConfig) {
    let lr = config.learning_rate;
    let mu = config.momentum;
    for (((_, p), (_, v)), (_, g)) in params.groups_mut().into_iter().zip(velocity.groups_mut()).zip(grad.groups()) {
        for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
    }
}

/// Tags each sentence with constrained Viterbi. Input tags are ignored; the
/// output keeps the input tokens.
pub fn predict(model: &TaggerModel, sentences: &[BioSentence]) -> Result<Vec<BioSentence>, TaggerError> {
    sentences
        .iter()
        .map(|s| {
            let tags = model.decode(&s.tokens)?;
            Ok(BioSentence { tokens: s.tokens.clone(), tags })
        })
        .collect()
}
