//! TF-IDF over character trigrams.

use std::collections::{BTreeMap, HashMap};

/// Character trigrams of `text` with counts. A non-empty text shorter than
/// three characters is its own single gram.
pub fn char_trigrams(text: &str) -> BTreeMap<String, usize> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = BTreeMap::new();
    if chars.is_empty() {
        return out;
    }
    if chars.len() < 3 {
        out.insert(text.to_string(), 1);
        return out;
    }
    for w in chars.windows(3) {
        *out.entry(w.iter().collect()).or_insert(0) += 1;
    }
    out
}

/// Document frequencies over the union corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusStats {
    pub documents: usize,
    pub df: HashMap<String, usize>,
}

impl CorpusStats {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut s = CorpusStats::default();
        for t in texts {
            s.documents += 1;
            for g in char_trigrams(t).into_keys() {
                *s.df.entry(g).or_insert(0) += 1;
            }
        }
        s
    }

    /// Smoothed inverse document frequency, `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, gram: &str) -> f64 {
        let df = self.df.get(gram).copied().unwrap_or(0) as f64;
        ((1.0 + self.documents as f64) / (1.0 + df)).ln() + 1.0
    }
}

/// L2-normalized TF-IDF vector, sorted by gram.
#[derive(Debug, Clone, PartialEq)]
pub struct TfidfVector {
    pub weights: Vec<(String, f64)>,
}

impl TfidfVector {
    pub fn new(text: &str, stats: &CorpusStats) -> Self {
        let mut weights: Vec<(String, f64)> = char_trigrams(text)
            .into_iter()
            .map(|(g, c)| {
                let w = c as f64 * stats.idf(&g);
                (g, w)
            })
            .collect();
        let norm = weights.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, w) in &mut weights {
                *w /= norm;
            }
        }
        TfidfVector { weights }
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn cosine(&self, other: &TfidfVector) -> f64 {
        match (self.is_empty(), other.is_empty()) {
            (true, true) => return 1.0,
            (true, false) | (false, true) => return 0.0,
            _ => {}
        }
        let (mut i, mut j, mut dot) = (0, 0, 0.0);
        let (a, b) = (&self.weights, &other.weights);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    dot += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        dot.clamp(0.0, 1.0)
    }
}

pub fn tfidf_char3_cosine(a: &str, b: &str, stats: &CorpusStats) -> f64 {
    TfidfVector::new(a, stats).cosine(&TfidfVector::new(b, stats))
}
