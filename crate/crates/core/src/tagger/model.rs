use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BioSentence, EntitySchema, Tag};

use super::crf;
use super::lstm::{self, LstmCache, LstmParams};
use super::tensor::Matrix;
use super::vocab::{TagSet, Vocabulary};
use super::TaggerError;

const MODEL_FORMAT: &str = "emrkg-tagger";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// All trainable parameters. Gradients use the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// `|vocab| × d_emb`
    pub embedding: Matrix,
    pub forward: LstmParams,
    pub backward: LstmParams,
    /// `|tags| × 2h`, applied to `[forward; backward]` hidden states.
    pub projection: Matrix,
    pub projection_bias: Vec<f64>,
    /// Learned `(|tags| + 2)²` transition scores, START and STOP included.
    pub transitions: Matrix,
}

impl Params {
    pub fn zeros(vocab: usize, d_emb: usize, hidden: usize, tags: usize) -> Self {
        Self {
            embedding: Matrix::zeros(vocab, d_emb),
            forward: LstmParams::zeros(d_emb, hidden),
            backward: LstmParams::zeros(d_emb, hidden),
            projection: Matrix::zeros(tags, 2 * hidden),
            projection_bias: vec![0.0; tags],
            transitions: Matrix::zeros(tags + 2, tags + 2),
        }
    }

    pub fn init<R: Rng + ?Sized>(vocab: usize, d_emb: usize, hidden: usize, tags: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(vocab, d_emb, hidden, tags);
        let emb_bound = (3.0 / d_emb as f64).sqrt();
        p.embedding.data.iter_mut().for_each(|w| *w = rng.gen_range(-emb_bound..emb_bound));
        p.forward = LstmParams::init(d_emb, hidden, rng);
        p.backward = LstmParams::init(d_emb, hidden, rng);
        let bound = (6.0 / (2 * hidden + tags) as f64).sqrt();
        p.projection.data.iter_mut().for_each(|w| *w = rng.gen_range(-bound..bound));
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.embedding.rows, self.embedding.cols, self.forward.hidden(), self.projection.rows)
    }

    /// Named parameter groups in a fixed order.
    pub fn groups(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("embedding", &self.embedding.data),
            ("forward.w_input", &self.forward.w_input.data),
            ("forward.w_hidden", &self.forward.w_hidden.data),
            ("forward.bias", &self.forward.bias),
            ("backward.w_input", &self.backward.w_input.data),
            ("backward.w_hidden", &self.backward.w_hidden.data),
            ("backward.bias", &self.backward.bias),
            ("projection", &self.projection.data),
            ("projection_bias", &self.projection_bias),
            ("transitions", &self.transitions.data),
        ]
    }

    pub fn groups_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("embedding", &mut self.embedding.data),
            ("forward.w_input", &mut self.forward.w_input.data),
            ("forward.w_hidden", &mut self.forward.w_hidden.data),
            ("forward.bias", &mut self.forward.bias),
            ("backward.w_input", &mut self.backward.w_input.data),
            ("backward.w_hidden", &mut self.backward.w_hidden.data),
            ("backward.bias", &mut self.backward.bias),
            ("projection", &mut self.projection.data),
            ("projection_bias", &mut self.projection_bias),
            ("transitions", &mut self.transitions.data),
        ]
    }

    pub fn norm(&self) -> f64 {
        self.groups().iter().flat_map(|(_, g)| g.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, g) in self.groups_mut() {
            g.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.groups().iter().all(|(_, g)| g.iter().all(|x| x.is_finite()))
    }
}

/// A sentence converted to vocabulary and tag indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSentence {
    pub ids: Vec<usize>,
    pub gold: Vec<usize>,
}

/// Character embeddings, a bidirectional LSTM, a linear emission layer and
/// a BIO-constrained CRF.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    pub vocab: Vocabulary,
    pub tagset: TagSet,
    pub params: Params,
    constraints: Matrix,
}

struct ForwardPass<'a> {
    inputs: Vec<&'a [f64]>,
    fwd: LstmCache,
    bwd: LstmCache,
    emissions: Matrix,
}

impl TaggerModel {
    pub fn new(vocab: Vocabulary, tagset: TagSet, params: Params) -> Result<Self, TaggerError> {
        let n = tagset.len();
        let (v, d) = (params.embedding.rows, params.embedding.cols);
        let h = params.forward.hidden();
        let shapes_ok = v == vocab.len()
            && params.forward.input() == d
            && params.backward.input() == d
            && params.backward.hidden() == h
            && params.forward.w_input.rows == 4 * h
            && params.backward.w_input.rows == 4 * h
            && params.forward.bias.len() == 4 * h
            && params.backward.bias.len() == 4 * h
            && params.projection.rows == n
            && params.projection.cols == 2 * h
            && params.projection_bias.len() == n
            && params.transitions.rows == n + 2
            && params.transitions.cols == n + 2;
        if !shapes_ok {
            return Err(TaggerError::ShapeMismatch);
        }
        if !params.all_finite() {
            return Err(TaggerError::NonFiniteParameters);
        }
        let constraints = tagset.constraint_mask();
        Ok(Self { vocab, tagset, params, constraints })
    }

    pub fn initialized<R: Rng + ?Sized>(
        vocab: Vocabulary,
        schema: EntitySchema,
        d_emb: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let tagset = TagSet::new(schema);
        let params = Params::init(vocab.len(), d_emb, hidden, tagset.len(), rng);
        Self::new(vocab, tagset, params).expect("shapes are consistent by construction")
    }

    /// Learned transitions plus the BIO constraint mask.
    pub fn effective_transitions(&self) -> Matrix {
        let mut t = self.params.transitions.clone();
        for (x, m) in t.data.iter_mut().zip(&self.constraints.data) {
            *x += m;
        }
        t
    }

    pub fn encode_sentence(&self, sentence: &BioSentence) -> Result<EncodedSentence, TaggerError> {
        let ids = self.vocab.encode(&sentence.tokens);
        let gold = sentence
            .tags
            .iter()
            .map(|t| self.tagset.index(t).ok_or_else(|| TaggerError::InvalidGoldTag(t.to_string())))
            .collect::<Result<_, _>>()?;
        Ok(EncodedSentence { ids, gold })
    }

    fn run(&self, ids: &[usize]) -> ForwardPass<'_> {
        let p = &self.params;
        let inputs: Vec<&[f64]> = ids.iter().map(|&i| p.embedding.row(i)).collect();
        let fwd = lstm::forward(&p.forward, &inputs);
        let reversed: Vec<&[f64]> = inputs.iter().rev().copied().collect();
        let bwd = lstm::forward(&p.backward, &reversed);
        let h = p.forward.hidden();
        let len = ids.len();
        let mut emissions = Matrix::zeros(len, self.tagset.len());
        let mut joint = vec![0.0; 2 * h];
        for t in 0..len {
            joint[..h].copy_from_slice(&fwd.hidden[t]);
            joint[h..].copy_from_slice(&bwd.hidden[len - 1 - t]);
            let row = emissions.row_mut(t);
            row.copy_from_slice(&p.projection_bias);
            p.projection.matvec_acc(&joint, row);
        }
        ForwardPass { inputs, fwd, bwd, emissions }
    }

    /// Emission scores (`len × |tags|`) for vocabulary indices.
    pub fn emissions(&self, ids: &[usize]) -> Result<Matrix, TaggerError> {
        if ids.is_empty() {
            return Err(TaggerError::EmptySentence);
        }
        Ok(self.run(ids).emissions)
    }

    /// Emission scores for raw tokens; unknown tokens map to `<UNK>`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Matrix, TaggerError> {
        self.emissions(&self.vocab.encode(tokens))
    }

    /// CRF negative log-likelihood of one encoded sentence.
    pub fn loss(&self, sentence: &EncodedSentence) -> Result<f64, TaggerError> {
        let e = self.emissions(&sentence.ids)?;
        crf::nll(&e, &self.effective_transitions(), &sentence.gold)
            .ok_or_else(|| TaggerError::InvalidGoldTag(format!("{:?}", sentence.gold)))
    }

    /// Summed loss over `batch` and its gradient with respect to every
    /// parameter.
    pub fn loss_and_gradient(&self, batch: &[EncodedSentence]) -> Result<(f64, Params), TaggerError> {
        let mut grad = self.params.zeros_like();
        let transitions = self.effective_transitions();
        let mut total = 0.0;
        for sentence in batch {
            total += self.accumulate_gradient(sentence, &transitions, &mut grad)?;
        }
        Ok((total, grad))
    }

    fn accumulate_gradient(
        &self,
        sentence: &EncodedSentence,
        transitions: &Matrix,
        grad: &mut Params,
    ) -> Result<f64, TaggerError> {
        if sentence.ids.is_empty() {
            return Err(TaggerError::EmptySentence);
        }
        let p = &self.params;
        let pass = self.run(&sentence.ids);
        let crf_grad = crf::nll_with_gradient(&pass.emissions, transitions, &sentence.gold)
            .ok_or_else(|| TaggerError::InvalidGoldTag(format!("{:?}", sentence.gold)))?;

        for (g, d) in grad.transitions.data.iter_mut().zip(&crf_grad.transitions.data) {
            *g += d;
        }

        let h = p.forward.hidden();
        let len = sentence.ids.len();
        let mut d_fwd = vec![vec![0.0; h]; len];
        let mut d_bwd = vec![vec![0.0; h]; len];
        let mut joint = vec![0.0; 2 * h];
        let mut d_joint = vec![0.0; 2 * h];
        for t in 0..len {
            let de = crf_grad.emissions.row(t);
            joint[..h].copy_from_slice(&pass.fwd.hidden[t]);
            joint[h..].copy_from_slice(&pass.bwd.hidden[len - 1 - t]);
            grad.projection.outer_acc(de, &joint);
            for (b, d) in grad.projection_bias.iter_mut().zip(de) {
                *b += d;
            }
            d_joint.iter_mut().for_each(|v| *v = 0.0);
            p.projection.matvec_t_acc(de, &mut d_joint);
            d_fwd[t].copy_from_slice(&d_joint[..h]);
            d_bwd[len - 1 - t].copy_from_slice(&d_joint[h..]);
        }

        let dx_fwd = lstm::backward(&p.forward, &pass.inputs, &pass.fwd, &d_fwd, &mut grad.forward);
        let reversed: Vec<&[f64]> = pass.inputs.iter().rev().copied().collect();
        let dx_bwd = lstm::backward(&p.backward, &reversed, &pass.bwd, &d_bwd, &mut grad.backward);
        for (t, &id) in sentence.ids.iter().enumerate() {
            let row = grad.embedding.row_mut(id);
            for (r, (a, b)) in row.iter_mut().zip(dx_fwd[t].iter().zip(&dx_bwd[len - 1 - t])) {
                *r += a + b;
            }
        }
        Ok(crf_grad.loss)
    }

    /// Constrained Viterbi decoding of one token sequence.
    pub fn decode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<Tag>, TaggerError> {
        let e = self.encode(tokens)?;
        Ok(crf::viterbi(&e, &self.effective_transitions()).into_iter().map(|i| self.tagset.tag(i)).collect())
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_FORMAT_VERSION,
            schema: self.tagset.schema().types().to_vec(),
            vocabulary: self.vocab.tokens().to_vec(),
            d_emb: self.params.embedding.cols,
            hidden: self.params.forward.hidden(),
            params: self.params.clone(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(content: &str) -> Result<Self, TaggerError> {
        let file: ModelFile = serde_json::from_str(content).map_err(|e| TaggerError::ModelFormat(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(TaggerError::ModelFormat(format!("unexpected format tag {:?}", file.format)));
        }
        if file.version != MODEL_FORMAT_VERSION {
            return Err(TaggerError::ModelVersion { found: file.version, expected: MODEL_FORMAT_VERSION });
        }
        let schema = EntitySchema::new(file.schema).map_err(|e| TaggerError::ModelFormat(e.to_string()))?;
        let vocab = Vocabulary::from_tokens(file.vocabulary)
            .ok_or_else(|| TaggerError::ModelFormat("vocabulary lacks reserved tokens".into()))?;
        if file.d_emb != file.params.embedding.cols || file.hidden != file.params.forward.hidden() {
            return Err(TaggerError::ShapeMismatch);
        }
        Self::new(vocab, TagSet::new(schema), file.params)
    }

    pub fn save(&self, path: &Path) -> Result<(), TaggerError> {
        std::fs::write(path, self.to_json()).map_err(|e| TaggerError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, TaggerError> {
        let content = std::fs::read_to_string(path).map_err(|e| TaggerError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&content)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    schema: Vec<String>,
    vocabulary: Vec<String>,
    d_emb: usize,
    hidden: usize,
    params: Params,
}
