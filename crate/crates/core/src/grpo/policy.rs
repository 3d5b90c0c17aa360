//! First-order character policy with an explicit logits table.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GrpoError;
use crate::rng::rng_for;
use crate::traj::TokenOrigin;

pub const MAX_VOCAB: usize = 64;

/// Maps characters to token ids: one id per alphabet character plus a shared
/// id for everything else.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharVocab {
    alphabet: Vec<char>,
}

impl CharVocab {
    pub fn new(alphabet: &str) -> Result<Self, GrpoError> {
        let mut chars: Vec<char> = Vec::new();
        for c in alphabet.chars() {
            if !chars.contains(&c) {
                chars.push(c);
            }
        }
        if chars.is_empty() || chars.len() + 1 > MAX_VOCAB {
            return Err(GrpoError::InvalidConfig(format!(
                "alphabet of {} characters",
                chars.len()
            )));
        }
        Ok(CharVocab { alphabet: chars })
    }

    pub fn size(&self) -> usize {
        self.alphabet.len() + 1
    }

    pub fn other_id(&self) -> usize {
        self.alphabet.len()
    }

    pub fn id(&self, c: char) -> usize {
        self.alphabet
            .iter()
            .position(|&a| a == c)
            .unwrap_or(self.alphabet.len())
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        self.alphabet.get(id).copied()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.chars().map(|c| self.id(c)).collect()
    }

    pub fn alphabet(&self) -> String {
        self.alphabet.iter().collect()
    }
}

/// `p(x_t | x_{t-1})` as a softmax over one logits row per context. Row
/// `vocab_size` is the start-of-sequence context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub vocab_size: usize,
    /// Row-major `(vocab_size + 1) x vocab_size`.
    pub logits: Vec<f64>,
    pub temperature: f64,
    pub top_p: f64,
}

pub(crate) fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

impl ToyPolicy {
    pub fn uniform(vocab_size: usize) -> Self {
        ToyPolicy {
            vocab_size,
            logits: vec![0.0; (vocab_size + 1) * vocab_size],
            temperature: 1.0,
            top_p: 1.0,
        }
    }

    /// Logits drawn uniformly from `[-scale, scale]`.
    pub fn random(vocab_size: usize, seed: u64, scale: f64) -> Self {
        let mut rng = rng_for(seed);
        let mut p = Self::uniform(vocab_size);
        for z in &mut p.logits {
            *z = rng.random_range(-scale..=scale);
        }
        p
    }

    pub fn bos(&self) -> usize {
        self.vocab_size
    }

    pub fn rows(&self) -> usize {
        self.vocab_size + 1
    }

    pub fn index(&self, context: usize, token: usize) -> usize {
        context * self.vocab_size + token
    }

    pub fn set_logit(&mut self, context: usize, token: usize, value: f64) {
        let i = self.index(context, token);
        self.logits[i] = value;
    }

    pub fn row(&self, context: usize) -> &[f64] {
        &self.logits[context * self.vocab_size..(context + 1) * self.vocab_size]
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.vocab_size == 0 || self.vocab_size > MAX_VOCAB {
            return Err(GrpoError::InvalidConfig(format!(
                "vocabulary size {}",
                self.vocab_size
            )));
        }
        if self.logits.len() != self.rows() * self.vocab_size {
            return Err(GrpoError::InvalidConfig(
                "logits table has the wrong shape".into(),
            ));
        }
        if self.logits.iter().any(|z| !z.is_finite()) {
            return Err(GrpoError::InvalidConfig("non-finite logits".into()));
        }
        if !(self.temperature > 0.0) || !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GrpoError::InvalidConfig(
                "decoding settings out of range".into(),
            ));
        }
        Ok(())
    }

    /// Training distribution of one context (temperature 1, no truncation).
    pub fn log_probs(&self, context: usize) -> Vec<f64> {
        log_softmax(self.row(context))
    }

    pub fn probs(&self, context: usize) -> Vec<f64> {
        self.log_probs(context).into_iter().map(f64::exp).collect()
    }

    /// Log-softmax of every row, row-major.
    pub fn log_prob_table(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|c| self.log_probs(c)).collect()
    }

    /// Context of each position. A policy token is conditioned on the most
    /// recent policy token, so critic-written text never enters its context;
    /// a critic token is conditioned on whatever precedes it.
    pub fn contexts(&self, tokens: &[usize], origins: &[TokenOrigin]) -> Vec<usize> {
        let mut last_any = self.bos();
        let mut last_policy = self.bos();
        let mut out = Vec::with_capacity(tokens.len());
        for (&t, o) in tokens.iter().zip(origins) {
            match o {
                TokenOrigin::Policy => {
                    out.push(last_policy);
                    last_policy = t;
                }
                TokenOrigin::Critic => out.push(last_any),
            }
            last_any = t;
        }
        out
    }

    /// Sampling distribution with temperature and nucleus truncation applied.
    pub fn sampling_probs(&self, context: usize) -> Vec<f64> {
        let scaled: Vec<f64> = self
            .row(context)
            .iter()
            .map(|z| z / self.temperature)
            .collect();
        let p: Vec<f64> = log_softmax(&scaled).into_iter().map(f64::exp).collect();
        if self.top_p >= 1.0 {
            return p;
        }
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        let mut keep = vec![false; p.len()];
        let mut mass = 0.0;
        for &i in &order {
            keep[i] = true;
            mass += p[i];
            if mass >= self.top_p {
                break;
            }
        }
        p.iter()
            .zip(&keep)
            .map(|(&v, &k)| if k { v / mass } else { 0.0 })
            .collect()
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, context: usize, rng: &mut R) -> usize {
        let p = self.sampling_probs(context);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, v) in p.iter().enumerate() {
            acc += v;
            if u < acc {
                return i;
            }
        }
        p.iter().rposition(|&v| v > 0.0).unwrap_or(0)
    }

    pub fn apply_gradient(&mut self, grad: &[f64], lr: f64) {
        for (z, g) in self.logits.iter_mut().zip(grad) {
            *z -= lr * g;
        }
    }
}
