//! Train/test de-duplication over lexical, structural and code views.

pub mod code;
pub mod corpus;
pub mod lexical;
pub mod tree;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use code::{code_token_jaccard, normalize_code, NormalizedCode};
pub use corpus::{dedup_corpus, load_instances, DedupOutcome, PairRecord, Removal};
pub use lexical::{char_trigrams, tfidf_char3_cosine, CorpusStats, TfidfVector};
pub use tree::{
    brute_force_ted, dom_tag_bigram_jaccard, jaccard, tag_bigrams, tree_edit_distance,
    tree_edit_distance_norm, BigramMode, LabeledTree,
};

use crate::html;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSource {
    pub id: String,
    pub prompt: String,
    #[serde(default)]
    pub markup: String,
    #[serde(default)]
    pub code: String,
}

/// An instance with its comparison views precomputed.
#[derive(Debug, Clone)]
pub struct Instance {
    pub id: String,
    pub prompt_text: String,
    pub code_text: String,
    /// `None` when the markup holds no elements.
    pub dom: Option<LabeledTree>,
    pub code_tokens: NormalizedCode,
    /// Parser complaints and skipped views.
    pub notes: Vec<String>,
}

impl Instance {
    pub fn new(
        id: impl Into<String>,
        prompt: impl Into<String>,
        markup: &str,
        code: impl Into<String>,
    ) -> Self {
        let mut notes = Vec::new();
        let parsed = html::parse(markup);
        notes.extend(parsed.errors.iter().map(|e| format!("markup: {e}")));
        let dom = if parsed.element_count() == 0 {
            notes.push("dom view skipped: no elements".into());
            None
        } else {
            Some(LabeledTree::from_dom(&parsed))
        };
        let code_text: String = code.into();
        let code_tokens = normalize_code(&code_text);
        if let Some(f) = &code_tokens.fallback {
            notes.push(format!("code normalization fell back to raw tokens: {f}"));
        }
        if code_tokens.tokens.is_empty() {
            notes.push("code view skipped: empty".into());
        }
        Instance {
            id: id.into(),
            prompt_text: prompt.into(),
            code_text,
            dom,
            code_tokens,
            notes,
        }
    }

    pub fn from_source(s: &InstanceSource) -> Self {
        Self::new(s.id.clone(), s.prompt.clone(), &s.markup, s.code.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilarityReport {
    pub lexical_cosine: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dom_jaccard: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree_edit_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_jaccard: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Lexical,
    Dom,
    TreeEdit,
    Code,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Keep,
    Remove,
    Review,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Verdict {
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triggering_view: Option<View>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Remove when the lexical cosine is above this.
    pub lexical: f64,
    pub dom: f64,
    pub code: f64,
    /// Tree edit distance is computed for dom Jaccard in `[fallback_low, dom]`.
    pub fallback_low: f64,
    /// Normalized edit distance below which the fallback removes.
    pub tree_edit: f64,
    /// Review band for the lexical cosine, `[review_low, lexical]`.
    pub review_low: f64,
    /// Structural overlap for review: dom Jaccard in `(review_dom_low, dom]`.
    pub review_dom_low: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            lexical: 0.85,
            dom: 0.90,
            code: 0.90,
            fallback_low: 0.85,
            tree_edit: 0.10,
            review_low: 0.80,
            review_dom_low: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DedupConfig {
    pub thresholds: Thresholds,
    pub bigram_mode: BigramMode,
    pub ted_node_cap: usize,
    /// Skip candidate pruning and compare every pair.
    #[serde(default)]
    pub exhaustive: bool,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig {
            thresholds: Thresholds::default(),
            bigram_mode: BigramMode::Structural,
            ted_node_cap: 400,
            exhaustive: false,
        }
    }
}

/// First matching rule wins: lexical, dom, tree-edit fallback, code; then the
/// review band; otherwise keep.
pub fn adjudicate(r: &SimilarityReport, t: &Thresholds) -> Verdict {
    let remove = |v| Verdict {
        decision: Decision::Remove,
        triggering_view: Some(v),
    };
    if r.lexical_cosine > t.lexical {
        return remove(View::Lexical);
    }
    if let Some(d) = r.dom_jaccard {
        if d > t.dom {
            return remove(View::Dom);
        }
        if (t.fallback_low..=t.dom).contains(&d)
            && r.tree_edit_norm.is_some_and(|e| e < t.tree_edit)
        {
            return remove(View::TreeEdit);
        }
    }
    if r.code_jaccard.is_some_and(|c| c > t.code) {
        return remove(View::Code);
    }
    let structural = r
        .dom_jaccard
        .is_some_and(|d| d > t.review_dom_low && d <= t.dom);
    if (t.review_low..=t.lexical).contains(&r.lexical_cosine) && structural {
        return Verdict {
            decision: Decision::Review,
            triggering_view: Some(View::Lexical),
        };
    }
    Verdict {
        decision: Decision::Keep,
        triggering_view: None,
    }
}

/// Per-instance material reused across comparisons.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub tfidf: TfidfVector,
    pub bigrams: Option<BTreeSet<(String, String)>>,
    pub code_set: Option<BTreeSet<String>>,
}

impl Prepared {
    pub fn new(inst: &Instance, stats: &CorpusStats, mode: BigramMode) -> Self {
        Prepared {
            tfidf: TfidfVector::new(&inst.prompt_text, stats),
            bigrams: inst.dom.as_ref().map(|t| tag_bigrams(t, mode)),
            code_set: (!inst.code_tokens.tokens.is_empty()).then(|| inst.code_tokens.token_set()),
        }
    }
}

pub fn compare(
    a: (&Instance, &Prepared),
    b: (&Instance, &Prepared),
    cfg: &DedupConfig,
) -> SimilarityReport {
    let t = &cfg.thresholds;
    let dom_jaccard = match (&a.1.bigrams, &b.1.bigrams) {
        (Some(x), Some(y)) => Some(jaccard(x, y)),
        _ => None,
    };
    let tree_edit_norm = match (dom_jaccard, &a.0.dom, &b.0.dom) {
        (Some(d), Some(x), Some(y)) if (t.fallback_low..=t.dom).contains(&d) => {
            tree_edit_distance_norm(x, y, cfg.ted_node_cap)
        }
        _ => None,
    };
    let code_jaccard = match (&a.1.code_set, &b.1.code_set) {
        (Some(x), Some(y)) => Some(jaccard(x, y)),
        _ => None,
    };
    SimilarityReport {
        lexical_cosine: a.1.tfidf.cosine(&b.1.tfidf),
        dom_jaccard,
        tree_edit_norm,
        code_jaccard,
    }
}
