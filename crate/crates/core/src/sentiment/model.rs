//! Attention-pooling classifier with message and target heads.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::text::{AspectSpan, SentimentLabel, TokenSequence, Vocab};
use super::SentimentError;
use crate::imagefeat::{put_f32s, put_string, FeatureError, Reader};

const MAGIC: &[u8; 4] = b"SNT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Message,
    Target,
}

impl std::str::FromStr for Head {
    type Err = SentimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "message" => Ok(Self::Message),
            "target" => Ok(Self::Target),
            _ => Err(SentimentError::Format(format!("unknown head {s:?}, expected message or target"))),
        }
    }
}

impl std::fmt::Display for Head {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Head::Message => "message",
            Head::Target => "target",
        })
    }
}

/// All trainable weights, row-major.
///
/// `w_aspect` is empty for the message head. `v_out` is `3 x E` for the
/// message head and `3 x 2E` for the target head.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub embeddings: Vec<f64>,
    pub w: Vec<f64>,
    pub w_aspect: Vec<f64>,
    pub b: Vec<f64>,
    pub u: Vec<f64>,
    pub v_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl Params {
    pub fn blocks(&self) -> [&[f64]; 7] {
        [&self.embeddings, &self.w, &self.w_aspect, &self.b, &self.u, &self.v_out, &self.b_out]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.embeddings,
            &mut self.w,
            &mut self.w_aspect,
            &mut self.b,
            &mut self.u,
            &mut self.v_out,
            &mut self.b_out,
        ]
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

/// Loss gradient. Embedding rows are stored sparsely by vocabulary index.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub embeddings: BTreeMap<usize, Vec<f64>>,
    pub w: Vec<f64>,
    pub w_aspect: Vec<f64>,
    pub b: Vec<f64>,
    pub u: Vec<f64>,
    pub v_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl Gradient {
    pub fn zeros(model: &SentimentModel) -> Self {
        let p = &model.params;
        Self {
            embeddings: BTreeMap::new(),
            w: vec![0.0; p.w.len()],
            w_aspect: vec![0.0; p.w_aspect.len()],
            b: vec![0.0; p.b.len()],
            u: vec![0.0; p.u.len()],
            v_out: vec![0.0; p.v_out.len()],
            b_out: vec![0.0; p.b_out.len()],
        }
    }

    fn row(&mut self, token: usize, dim: usize) -> &mut Vec<f64> {
        self.embeddings.entry(token).or_insert_with(|| vec![0.0; dim])
    }

    pub fn add(&mut self, other: &Gradient) {
        for (tok, row) in &other.embeddings {
            let dim = row.len();
            axpy(self.row(*tok, dim), 1.0, row);
        }
        axpy(&mut self.w, 1.0, &other.w);
        axpy(&mut self.w_aspect, 1.0, &other.w_aspect);
        axpy(&mut self.b, 1.0, &other.b);
        axpy(&mut self.u, 1.0, &other.u);
        axpy(&mut self.v_out, 1.0, &other.v_out);
        axpy(&mut self.b_out, 1.0, &other.b_out);
    }

    /// Entry of the gradient in the flat parameter layout of [`Params::blocks`].
    pub fn get(&self, block: usize, i: usize, dim: usize) -> f64 {
        match block {
            0 => self.embeddings.get(&(i / dim)).map_or(0.0, |r| r[i % dim]),
            1 => self.w[i],
            2 => self.w_aspect[i],
            3 => self.b[i],
            4 => self.u[i],
            5 => self.v_out[i],
            _ => self.b_out[i],
        }
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matvec(m: &[f64], cols: usize, x: &[f64]) -> Vec<f64> {
    m.chunks_exact(cols).map(|row| dot(row, x)).collect()
}

fn matvec_t(m: &[f64], cols: usize, y: &[f64], out: &mut [f64]) {
    for (row, &yi) in m.chunks_exact(cols).zip(y) {
        axpy(out, yi, row);
    }
}

fn outer_add(m: &mut [f64], cols: usize, y: &[f64], x: &[f64]) {
    for (row, &yi) in m.chunks_exact_mut(cols).zip(y) {
        axpy(row, yi, x);
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// One training or scoring instance in vocabulary indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub aspect: Option<Vec<usize>>,
    pub label: SentimentLabel,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    /// Attention weights over message tokens.
    pub attention: Vec<f64>,
    /// Attention-pooled message vector.
    pub context: Vec<f64>,
    /// Mean aspect embedding (target head only).
    pub aspect: Option<Vec<f64>>,
    pub logits: [f64; 3],
    pub probabilities: [f64; 3],
}

struct Trace {
    encoding: Encoding,
    hidden: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentimentModel {
    pub head: Head,
    pub vocab: Vocab,
    pub dim: usize,
    pub seed: u64,
    pub params: Params,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, limit: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-limit..=limit)).collect()
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    uniform(rng, rows * cols, (6.0 / (rows + cols) as f64).sqrt())
}

impl SentimentModel {
    /// Random initialisation: embeddings uniform in `±init_range`, weight
    /// matrices Xavier-uniform, biases zero.
    pub fn init(head: Head, vocab: Vocab, dim: usize, init_range: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = vocab.len();
        let embeddings = uniform(&mut rng, v * dim, init_range);
        let w = xavier(&mut rng, dim, dim);
        let w_aspect = match head {
            Head::Message => Vec::new(),
            Head::Target => xavier(&mut rng, dim, dim),
        };
        let u = xavier(&mut rng, 1, dim);
        let input = Self::input_dim_for(head, dim);
        let v_out = xavier(&mut rng, 3, input);
        let params = Params { embeddings, w, w_aspect, b: vec![0.0; dim], u, v_out, b_out: vec![0.0; 3] };
        Self { head, vocab, dim, seed, params }
    }

    fn input_dim_for(head: Head, dim: usize) -> usize {
        match head {
            Head::Message => dim,
            Head::Target => 2 * dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        Self::input_dim_for(self.head, self.dim)
    }

    pub fn embedding(&self, token: usize) -> &[f64] {
        &self.params.embeddings[token * self.dim..(token + 1) * self.dim]
    }

    pub fn embedding_mut(&mut self, token: usize) -> &mut [f64] {
        let d = self.dim;
        &mut self.params.embeddings[token * d..(token + 1) * d]
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<(), SentimentError> {
        if tokens.is_empty() {
            return Err(SentimentError::EmptyInput);
        }
        match tokens.iter().find(|&&t| t >= self.vocab.len()) {
            Some(&t) => Err(SentimentError::TokenOutOfRange { token: t, vocab: self.vocab.len() }),
            None => Ok(()),
        }
    }

    fn trace(&self, tokens: &[usize], aspect: Option<&[usize]>) -> Result<Trace, SentimentError> {
        let d = self.dim;
        let p = &self.params;
        match (self.head, aspect) {
            (Head::Message, Some(_)) => return Err(SentimentError::HeadMismatch { expected: Head::Target, found: Head::Message }),
            (Head::Target, None) => return Err(SentimentError::HeadMismatch { expected: Head::Message, found: Head::Target }),
            _ => {}
        }
        self.check_tokens(tokens)?;
        let aspect_vec = match aspect {
            Some(a) if a.is_empty() => return Err(SentimentError::EmptyAspect),
            Some(a) => {
                self.check_tokens(a)?;
                let mut mean = vec![0.0; d];
                for &t in a {
                    axpy(&mut mean, 1.0, self.embedding(t));
                }
                mean.iter_mut().for_each(|x| *x /= a.len() as f64);
                Some(mean)
            }
            None => None,
        };
        let bias: Vec<f64> = match &aspect_vec {
            Some(a) => matvec(&p.w_aspect, d, a).iter().zip(&p.b).map(|(x, b)| x + b).collect(),
            None => p.b.clone(),
        };

        let mut hidden = Vec::with_capacity(tokens.len());
        let mut scores = Vec::with_capacity(tokens.len());
        for &t in tokens {
            let h: Vec<f64> = matvec(&p.w, d, self.embedding(t)).iter().zip(&bias).map(|(x, b)| (x + b).tanh()).collect();
            scores.push(dot(&p.u, &h));
            hidden.push(h);
        }
        let attention = softmax(&scores);
        let mut context = vec![0.0; d];
        for (&t, &a) in tokens.iter().zip(&attention) {
            axpy(&mut context, a, self.embedding(t));
        }
        let mut x = context.clone();
        if let Some(a) = &aspect_vec {
            x.extend_from_slice(a);
        }
        let z = matvec(&p.v_out, x.len(), &x);
        let logits = [z[0] + p.b_out[0], z[1] + p.b_out[1], z[2] + p.b_out[2]];
        let s = softmax(&logits);
        let encoding = Encoding { attention, context, aspect: aspect_vec, logits, probabilities: [s[0], s[1], s[2]] };
        Ok(Trace { encoding, hidden })
    }

    /// Forward pass exposing attention weights and pooled vectors.
    pub fn encode(&self, tokens: &[usize], aspect: Option<&[usize]>) -> Result<Encoding, SentimentError> {
        Ok(self.trace(tokens, aspect)?.encoding)
    }

    /// Cross-entropy loss of one example.
    pub fn loss(&self, example: &Example) -> Result<f64, SentimentError> {
        let enc = self.encode(&example.tokens, example.aspect.as_deref())?;
        Ok(log_sum_exp(&enc.logits) - enc.logits[example.label.index()])
    }

    /// Loss of one example and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, example: &Example) -> Result<(f64, Gradient), SentimentError> {
        let d = self.dim;
        let p = &self.params;
        let tokens = &example.tokens;
        let Trace { encoding: enc, hidden } = self.trace(tokens, example.aspect.as_deref())?;
        let y = example.label.index();
        let loss = log_sum_exp(&enc.logits) - enc.logits[y];
        let mut g = Gradient::zeros(self);

        let mut dz = enc.probabilities;
        dz[y] -= 1.0;
        let mut x = enc.context.clone();
        if let Some(a) = &enc.aspect {
            x.extend_from_slice(a);
        }
        outer_add(&mut g.v_out, x.len(), &dz, &x);
        axpy(&mut g.b_out, 1.0, &dz);
        let mut dx = vec![0.0; x.len()];
        matvec_t(&p.v_out, x.len(), &dz, &mut dx);
        let dc = &dx[..d];
        let mut da = if enc.aspect.is_some() { dx[d..].to_vec() } else { Vec::new() };

        // Through c = sum_i alpha_i e_i and alpha = softmax(s).
        let dalpha: Vec<f64> = tokens.iter().map(|&t| dot(self.embedding(t), dc)).collect();
        let mean_dalpha: f64 = enc.attention.iter().zip(&dalpha).map(|(a, g)| a * g).sum();
        let mut dbias = vec![0.0; d];
        for (i, &t) in tokens.iter().enumerate() {
            let alpha = enc.attention[i];
            let ds = alpha * (dalpha[i] - mean_dalpha);
            let h = &hidden[i];
            axpy(&mut g.u, ds, h);
            let dpre: Vec<f64> = p.u.iter().zip(h).map(|(u, h)| ds * u * (1.0 - h * h)).collect();
            let e = self.embedding(t);
            outer_add(&mut g.w, d, &dpre, e);
            axpy(&mut dbias, 1.0, &dpre);
            let row = g.row(t, d);
            axpy(row, alpha, dc);
            matvec_t(&p.w, d, &dpre, row);
        }
        axpy(&mut g.b, 1.0, &dbias);

        if let (Some(a), Some(aspect_tokens)) = (&enc.aspect, &example.aspect) {
            outer_add(&mut g.w_aspect, d, &dbias, a);
            matvec_t(&p.w_aspect, d, &dbias, &mut da);
            let share = 1.0 / aspect_tokens.len() as f64;
            for &t in aspect_tokens {
                axpy(g.row(t, d), share, &da);
            }
        }
        Ok((loss, g))
    }

    /// Gradient-descent step `params -= lr * grad`.
    pub fn apply(&mut self, grad: &Gradient, lr: f64) {
        for (&t, row) in &grad.embeddings {
            axpy(self.embedding_mut(t), -lr, row);
        }
        let p = &mut self.params;
        axpy(&mut p.w, -lr, &grad.w);
        axpy(&mut p.w_aspect, -lr, &grad.w_aspect);
        axpy(&mut p.b, -lr, &grad.b);
        axpy(&mut p.u, -lr, &grad.u);
        axpy(&mut p.v_out, -lr, &grad.v_out);
        axpy(&mut p.b_out, -lr, &grad.b_out);
    }

    pub fn predict_tokens(&self, tokens: &[usize], aspect: Option<&[usize]>) -> Result<Prediction, SentimentError> {
        let probabilities = self.encode(tokens, aspect)?.probabilities;
        Ok(Prediction::from_probabilities(probabilities))
    }

    /// Classifies raw text, with an aspect phrase for the target head.
    pub fn predict(&self, text: &str, aspect: Option<&str>) -> Result<Prediction, SentimentError> {
        let tokens = super::preprocess(text, &self.vocab);
        match (self.head, aspect) {
            (Head::Target, Some(a)) => {
                let span = AspectSpan::new(a, &self.vocab)?;
                Ok(Prediction::from_probabilities(forward_target(self, &tokens, &span)?))
            }
            (Head::Target, None) => Err(SentimentError::MissingAspect),
            (Head::Message, _) => Ok(Prediction::from_probabilities(forward_message(self, &tokens)?)),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, SentimentError> {
        let mut out = Vec::with_capacity(32 + self.params.len() * 4);
        out.extend_from_slice(MAGIC);
        out.push(match self.head {
            Head::Message => 0,
            Head::Target => 1,
        });
        out.extend_from_slice(&(self.vocab.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for w in self.vocab.words() {
            put_string(&mut out, w).map_err(format_error)?;
        }
        for block in self.params.blocks() {
            let as_f32: Vec<f32> = block.iter().map(|&x| x as f32).collect();
            put_f32s(&mut out, &as_f32);
        }
        Ok(out)
    }

    pub fn from_reader<R: Read>(input: R) -> Result<Self, SentimentError> {
        let mut r = Reader::new(input);
        if &r.bytes::<4>().map_err(format_error)? != MAGIC {
            return Err(SentimentError::Format("missing SNT1 magic".into()));
        }
        let head = match r.bytes::<1>().map_err(format_error)?[0] {
            0 => Head::Message,
            1 => Head::Target,
            other => return Err(SentimentError::Format(format!("unknown head tag {other}"))),
        };
        let v = r.u32().map_err(format_error)? as usize;
        let dim = r.u32().map_err(format_error)? as usize;
        let seed = r.u64().map_err(format_error)?;
        if dim == 0 {
            return Err(SentimentError::Format("zero embedding dimension".into()));
        }
        let words = (0..v).map(|_| r.string()).collect::<Result<Vec<_>, _>>().map_err(format_error)?;
        let vocab = Vocab::from_words(words)?;
        let input = Self::input_dim_for(head, dim);
        let mut read = |n: usize| -> Result<Vec<f64>, SentimentError> {
            Ok(r.f32_vec(n).map_err(format_error)?.into_iter().map(f64::from).collect())
        };
        let params = Params {
            embeddings: read(v * dim)?,
            w: read(dim * dim)?,
            w_aspect: read(if head == Head::Target { dim * dim } else { 0 })?,
            b: read(dim)?,
            u: read(dim)?,
            v_out: read(3 * input)?,
            b_out: read(3)?,
        };
        if !r.at_eof() {
            return Err(SentimentError::Format("trailing bytes after parameters".into()));
        }
        if !params.is_finite() {
            return Err(SentimentError::Format("non-finite parameter".into()));
        }
        Ok(Self { head, vocab, dim, seed, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), SentimentError> {
        std::fs::write(path, self.to_bytes()?).map_err(|source| SentimentError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, SentimentError> {
        let f = File::open(path).map_err(|source| SentimentError::Io { path: path.to_path_buf(), source })?;
        Self::from_reader(BufReader::new(f))
    }
}

fn format_error(e: FeatureError) -> SentimentError {
    SentimentError::Format(e.to_string())
}

/// Class distribution and its argmax (ties go to the lower class index).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: SentimentLabel,
    pub probabilities: [f64; 3],
}

impl Prediction {
    pub fn from_probabilities(probabilities: [f64; 3]) -> Self {
        let mut best = 0;
        for i in 1..3 {
            if probabilities[i] > probabilities[best] {
                best = i;
            }
        }
        Self { label: SentimentLabel::from_index(best).expect("three classes"), probabilities }
    }
}

pub fn forward_message(model: &SentimentModel, tokens: &TokenSequence) -> Result<[f64; 3], SentimentError> {
    if model.head != Head::Message {
        return Err(SentimentError::HeadMismatch { expected: Head::Message, found: model.head });
    }
    Ok(model.encode(&tokens.tokens, None)?.probabilities)
}

pub fn forward_target(
    model: &SentimentModel,
    tokens: &TokenSequence,
    aspect: &AspectSpan,
) -> Result<[f64; 3], SentimentError> {
    if model.head != Head::Target {
        return Err(SentimentError::HeadMismatch { expected: Head::Target, found: model.head });
    }
    Ok(model.encode(&tokens.tokens, Some(&aspect.tokens.tokens))?.probabilities)
}

/// Largest relative difference between the analytic gradient and central
/// finite differences, over every parameter.
pub fn gradient_check(model: &SentimentModel, example: &Example, epsilon: f64) -> Result<f64, SentimentError> {
    let (_, analytic) = model.loss_and_gradient(example)?;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for block in 0..7 {
        let len = model.params.blocks()[block].len();
        for i in 0..len {
            let original = model.params.blocks()[block][i];
            probe.params.blocks_mut()[block][i] = original + epsilon;
            let up = probe.loss(example)?;
            probe.params.blocks_mut()[block][i] = original - epsilon;
            let down = probe.loss(example)?;
            probe.params.blocks_mut()[block][i] = original;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic.get(block, i, model.dim);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sentiment::{preprocess, tokenize};
    use proptest::prelude::*;

    fn vocab(text: &str) -> Vocab {
        Vocab::build([tokenize(text).iter()], 1)
    }

    fn model(head: Head, seed: u64) -> SentimentModel {
        SentimentModel::init(head, vocab("what a beautiful building the hall elbphilharmonie hamburg ugly"), 6, 0.05, seed)
    }

    #[test]
    fn probabilities_are_a_distribution() {
        let m = model(Head::Message, 1);
        let p = forward_message(&m, &preprocess("What a beautiful building.", &m.vocab)).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn single_token_gets_all_attention() {
        let m = model(Head::Message, 1);
        let enc = m.encode(&[3], None).unwrap();
        assert_eq!(enc.attention, [1.0]);
        assert_eq!(enc.context, m.embedding(3));
    }

    #[test]
    fn forward_is_deterministic() {
        let a = model(Head::Target, 9);
        let b = model(Head::Target, 9);
        let t = preprocess("hall", &a.vocab);
        let s = AspectSpan::new("hall", &a.vocab).unwrap();
        assert_eq!(forward_target(&a, &t, &s).unwrap(), forward_target(&b, &t, &s).unwrap());
    }

    #[test]
    fn unknown_aspect_uses_unknown_embedding() {
        let m = model(Head::Target, 2);
        let t = preprocess("a beautiful hall", &m.vocab);
        let s = AspectSpan::new("qqq zzz", &m.vocab).unwrap();
        let enc = m.encode(&t.tokens, Some(&s.tokens.tokens)).unwrap();
        assert_eq!(enc.aspect.as_deref().unwrap(), m.embedding(0));
        let p = forward_target(&m, &t, &s).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn different_aspects_give_different_outputs() {
        let m = model(Head::Target, 3);
        let t = preprocess("what a beautiful building the hall", &m.vocab);
        let a = forward_target(&m, &t, &AspectSpan::new("building", &m.vocab).unwrap()).unwrap();
        let b = forward_target(&m, &t, &AspectSpan::new("hamburg", &m.vocab).unwrap()).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn head_mismatch_and_empty_aspect() {
        let msg = model(Head::Message, 1);
        let tgt = model(Head::Target, 1);
        let t = preprocess("hall", &msg.vocab);
        let s = AspectSpan::new("hall", &msg.vocab).unwrap();
        assert!(matches!(forward_target(&msg, &t, &s), Err(SentimentError::HeadMismatch { .. })));
        assert!(matches!(forward_message(&tgt, &t), Err(SentimentError::HeadMismatch { .. })));
        assert!(matches!(tgt.encode(&[1], Some(&[])), Err(SentimentError::EmptyAspect)));
        assert!(matches!(msg.encode(&[99], None), Err(SentimentError::TokenOutOfRange { token: 99, .. })));
    }

    #[test]
    fn embedding_table_is_shared_by_message_and_aspect() {
        let mut m = model(Head::Target, 4);
        let tok = m.vocab.lookup("hall");
        let before = m.encode(&[tok, 1], Some(&[tok])).unwrap();
        m.embedding_mut(tok)[0] += 0.5;
        let after = m.encode(&[tok, 1], Some(&[tok])).unwrap();
        assert_ne!(before.context, after.context);
        assert_ne!(before.aspect, after.aspect);
        assert_eq!(after.aspect.as_deref().unwrap(), m.embedding(tok));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for head in [Head::Message, Head::Target] {
            let m = model(head, 11);
            let aspect = (head == Head::Target).then(|| vec![m.vocab.lookup("building"), m.vocab.lookup("hall")]);
            let ex = Example { tokens: vec![1, 2, 3, 4, 4, 0], aspect, label: SentimentLabel::Positive };
            let err = gradient_check(&m, &ex, 1e-4).unwrap();
            assert!(err < 1e-3, "{head}: {err}");
        }
    }

    #[test]
    fn aspect_tokens_also_inside_message_get_both_contributions() {
        let m = model(Head::Target, 5);
        let tok = m.vocab.lookup("hall");
        let ex = Example { tokens: vec![tok, 2], aspect: Some(vec![tok]), label: SentimentLabel::Negative };
        assert!(gradient_check(&m, &ex, 1e-4).unwrap() < 1e-3);
    }

    #[test]
    fn saturated_example_has_tiny_gradients() {
        let mut m = model(Head::Message, 6);
        m.params.b_out = vec![-40.0, -40.0, 40.0];
        let ex = Example { tokens: vec![1], aspect: None, label: SentimentLabel::Positive };
        assert!(m.loss(&ex).unwrap() < 1e-30);
        assert!(gradient_check(&m, &ex, 1e-4).unwrap() < 1e-3);
    }

    #[test]
    fn model_file_round_trips_at_f32_precision() {
        for head in [Head::Message, Head::Target] {
            let m = model(head, 8);
            let back = SentimentModel::from_reader(m.to_bytes().unwrap().as_slice()).unwrap();
            assert_eq!(back.head, head);
            assert_eq!(back.vocab, m.vocab);
            assert_eq!(back.seed, 8);
            for (a, b) in m.params.blocks().iter().zip(back.params.blocks()) {
                assert_eq!(a.len(), b.len());
                for (x, y) in a.iter().zip(b) {
                    assert_eq!(*x as f32, *y as f32);
                }
            }
            // A reloaded model round-trips exactly.
            assert_eq!(SentimentModel::from_reader(back.to_bytes().unwrap().as_slice()).unwrap(), back);
        }
    }

    #[test]
    fn corrupt_model_files_are_rejected() {
        let bytes = model(Head::Message, 1).to_bytes().unwrap();
        assert!(SentimentModel::from_reader(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(SentimentModel::from_reader(extra.as_slice()).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(SentimentModel::from_reader(bad.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn softmax_and_attention_are_distributions(
            tokens in prop::collection::vec(0usize..10, 1..12),
            seed in 0u64..1000,
        ) {
            let m = model(Head::Message, seed);
            let enc = m.encode(&tokens, None).unwrap();
            prop_assert!((enc.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(enc.probabilities.iter().all(|&p| p > 0.0));
            prop_assert!((enc.attention.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(enc.attention.iter().all(|&a| a > 0.0));
        }
    }
}
