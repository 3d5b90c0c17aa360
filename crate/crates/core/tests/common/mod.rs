//! Shared fixtures and measurements for the integration tests and the
//! acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::Value;

use relook_core::dedup::{dedup_corpus, DedupConfig, Instance};
use relook_core::rng::{derive_seed, rng_for};
use relook_core::traj::Query;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

pub fn oracle(name: &str) -> Value {
    let path = fixture(&format!("oracles/{name}"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

pub fn queries() -> Vec<Query> {
    let text = std::fs::read_to_string(fixture("queries.jsonl")).unwrap();
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            Query::new(v["id"].as_str().unwrap(), v["text"].as_str().unwrap()).unwrap()
        })
        .collect()
}

const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

/// Random word text of `len` characters drawn from `words`.
pub fn word_text<R: Rng>(rng: &mut R, words: &[String], len: usize) -> String {
    let mut s = String::new();
    while s.len() < len {
        if !s.is_empty() {
            s.push(' ');
        }
        s.push_str(words.choose(rng).unwrap());
    }
    s.truncate(len);
    s
}

/// `round(rate * len)` random substitutions, insertions and deletions.
pub fn mutate<R: Rng>(rng: &mut R, text: &str, rate: f64) -> String {
    let mut chars: Vec<u8> = text.bytes().collect();
    let edits = (rate * text.len() as f64).round() as usize;
    for _ in 0..edits {
        let c = ALPHABET[rng.random_range(0..ALPHABET.len())];
        match rng.random_range(0..3) {
            0 if !chars.is_empty() => {
                let i = rng.random_range(0..chars.len());
                chars[i] = c;
            }
            1 => {
                let i = rng.random_range(0..=chars.len());
                chars.insert(i, c);
            }
            _ if !chars.is_empty() => {
                chars.remove(rng.random_range(0..chars.len()));
            }
            _ => {}
        }
    }
    String::from_utf8(chars).unwrap()
}

pub fn oracle_words(o: &Value) -> Vec<String> {
    o["words"]
        .as_array()
        .unwrap()
        .iter()
        .map(|w| w.as_str().unwrap().to_string())
        .collect()
}

pub fn prompt_only(id: &str, prompt: &str) -> Instance {
    Instance::new(id, prompt, "", "")
}

/// Planted corpus: test originals; exact copies, mutated copies and
/// unrelated filler in train.
pub struct PlantedCorpus {
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
    pub exact: BTreeSet<String>,
    pub near: BTreeSet<String>,
    pub filler: BTreeSet<String>,
}

pub fn planted_corpus(seed: u64, words: &[String], rate: f64) -> PlantedCorpus {
    let mut rng = rng_for(seed);
    let (n_test, n_exact, n_near, n_filler) = (400, 50, 300, 100);
    let originals: Vec<String> = (0..n_test)
        .map(|_| word_text(&mut rng, words, 500))
        .collect();
    let test = originals
        .iter()
        .enumerate()
        .map(|(i, t)| prompt_only(&format!("test-{i:04}"), t))
        .collect();
    let mut c = PlantedCorpus {
        train: Vec::new(),
        test,
        exact: BTreeSet::new(),
        near: BTreeSet::new(),
        filler: BTreeSet::new(),
    };
    for (i, original) in originals.iter().enumerate().take(n_exact) {
        let id = format!("train-exact-{i:04}");
        c.train.push(prompt_only(&id, original));
        c.exact.insert(id);
    }
    for i in 0..n_near {
        let id = format!("train-near-{i:04}");
        let text = mutate(&mut rng, &originals[n_exact + i], rate);
        c.train.push(prompt_only(&id, &text));
        c.near.insert(id);
    }
    for i in 0..n_filler {
        let id = format!("train-fill-{i:04}");
        c.train
            .push(prompt_only(&id, &word_text(&mut rng, words, 500)));
        c.filler.insert(id);
    }
    c
}

#[derive(Debug, Clone, Copy)]
pub struct PlantedRates {
    pub exact_recall: f64,
    pub near_rate: f64,
    pub filler_removed: usize,
}

pub fn planted_rates(c: &PlantedCorpus) -> PlantedRates {
    let out = dedup_corpus(&c.train, &c.test, &DedupConfig::default());
    let removed: BTreeSet<&str> = out.removed.iter().map(|r| r.id.as_str()).collect();
    let frac = |s: &BTreeSet<String>| {
        s.iter().filter(|id| removed.contains(id.as_str())).count() as f64 / s.len() as f64
    };
    PlantedRates {
        exact_recall: frac(&c.exact),
        near_rate: frac(&c.near),
        filler_removed: c
            .filler
            .iter()
            .filter(|id| removed.contains(id.as_str()))
            .count(),
    }
}

/// Mean near-duplicate detection rate over `reps` freshly generated corpora.
pub fn mc_near_rate(base: u64, reps: u64, words: &[String], rate: f64) -> (f64, f64) {
    let mut near = 0.0;
    let mut exact = 1.0f64;
    for r in 0..reps {
        let c = planted_corpus(derive_seed(base, &[r]), words, rate);
        let m = planted_rates(&c);
        near += m.near_rate;
        exact = exact.min(m.exact_recall);
    }
    (near / reps as f64, exact)
}

/// Fraction of 5%-mutated pairs whose two-document cosine is above the
/// lexical threshold.
pub fn mc_pair_rate(seed: u64, trials: usize, words: &[String], rate: f64, threshold: f64) -> f64 {
    use relook_core::dedup::{tfidf_char3_cosine, CorpusStats};
    let mut rng = rng_for(seed);
    let mut hits = 0;
    for _ in 0..trials {
        let a = word_text(&mut rng, words, 500);
        let b = mutate(&mut rng, &a, rate);
        let stats = CorpusStats::from_texts([a.as_str(), b.as_str()]);
        if tfidf_char3_cosine(&a, &b, &stats) > threshold {
            hits += 1;
        }
    }
    hits as f64 / trials as f64
}

/// Two disjoint random corpora; true when nothing is removed.
pub fn disjoint_run_is_clean(seed: u64, words: &[String]) -> bool {
    let mut rng = rng_for(seed);
    let mk = |p: &str, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Instance> {
        (0..50)
            .map(|i| prompt_only(&format!("{p}{i:03}"), &word_text(rng, words, 500)))
            .collect()
    };
    let train = mk("a", &mut rng);
    let test = mk("b", &mut rng);
    dedup_corpus(&train, &test, &DedupConfig::default())
        .removed
        .is_empty()
}

/// Random ordered tree with `n` nodes over a small label alphabet.
pub fn random_tree<R: Rng>(rng: &mut R, n: usize) -> relook_core::dedup::LabeledTree {
    const LABELS: [&str; 4] = ["div", "p", "span", "ul"];
    let mut t = relook_core::dedup::LabeledTree::leaf(*LABELS.choose(rng).unwrap());
    for i in 1..n {
        let parent = rng.random_range(0..i);
        t.push(parent, *LABELS.choose(rng).unwrap());
    }
    t
}

const TAGS: [&str; 8] = ["div", "section", "p", "span", "ul", "li", "h2", "button"];

fn markup_of<R: Rng>(rng: &mut R, depth: usize, out: &mut String) {
    let kids = if depth >= 3 {
        0
    } else {
        rng.random_range(1..4)
    };
    for _ in 0..kids {
        let tag = *TAGS.choose(rng).unwrap();
        out.push_str(&format!("<{tag}>"));
        markup_of(rng, depth + 1, out);
        out.push_str(&format!("</{tag}>"));
    }
}

pub fn random_markup<R: Rng>(rng: &mut R) -> String {
    let mut s = String::from("<html><body>");
    markup_of(rng, 0, &mut s);
    s.push_str("</body></html>");
    s
}

pub fn random_code<R: Rng>(rng: &mut R, words: &[String]) -> String {
    let names: Vec<&String> = words.choose_multiple(rng, 6).collect();
    format!(
        "function {}({}) {{ let {} = {} * 2; return {}.map(x => x + {}); }}",
        names[0], names[1], names[2], names[1], names[3], names[2]
    )
}

/// Corpus exercising every view: prompt, markup and code near-copies of
/// test instances, plus unrelated filler.
pub fn mixed_corpus(
    seed: u64,
    words: &[String],
    n_test: usize,
    n_train: usize,
) -> (Vec<Instance>, Vec<Instance>) {
    let mut rng = rng_for(seed);
    let test: Vec<(String, String, String)> = (0..n_test)
        .map(|_| {
            (
                word_text(&mut rng, words, 200),
                random_markup(&mut rng),
                random_code(&mut rng, words),
            )
        })
        .collect();
    let mut train = Vec::new();
    for i in 0..n_train {
        let (p, m, c) = &test[rng.random_range(0..n_test)];
        let (p, m, c) = match rng.random_range(0..5) {
            0 => (
                mutate(&mut rng, p, 0.02),
                random_markup(&mut rng),
                random_code(&mut rng, words),
            ),
            1 => (
                word_text(&mut rng, words, 200),
                m.clone(),
                random_code(&mut rng, words),
            ),
            2 => (
                word_text(&mut rng, words, 200),
                random_markup(&mut rng),
                c.replacen("x", "y", 2),
            ),
            3 if i > 0 => {
                // near copy of an earlier train instance
                let j = rng.random_range(0..train.len());
                let src: &Instance = &train[j];
                (
                    mutate(&mut rng, &src.prompt_text.clone(), 0.01),
                    random_markup(&mut rng),
                    String::new(),
                )
            }
            _ => (
                word_text(&mut rng, words, 200),
                random_markup(&mut rng),
                random_code(&mut rng, words),
            ),
        };
        train.push(Instance::new(format!("tr{i:04}"), p, &m, c));
    }
    let test = test
        .into_iter()
        .enumerate()
        .map(|(i, (p, m, c))| Instance::new(format!("te{i:04}"), p, &m, c))
        .collect();
    (train, test)
}
