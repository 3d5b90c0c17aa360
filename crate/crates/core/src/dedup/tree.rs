//! Ordered labeled trees, tag bigrams, and tree edit distance.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::html::Dom;

/// Ordered labeled tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledTree {
    pub labels: Vec<String>,
    pub children: Vec<Vec<usize>>,
}

impl LabeledTree {
    pub fn leaf(label: impl Into<String>) -> Self {
        LabeledTree {
            labels: vec![label.into()],
            children: vec![Vec::new()],
        }
    }

    /// Add a child under `parent` and return its index.
    pub fn push(&mut self, parent: usize, label: impl Into<String>) -> usize {
        self.labels.push(label.into());
        self.children.push(Vec::new());
        let i = self.labels.len() - 1;
        self.children[parent].push(i);
        i
    }

    /// Element tree of a document, synthetic root included.
    pub fn from_dom(dom: &Dom) -> Self {
        LabeledTree {
            labels: dom.nodes.iter().map(|n| n.tag.clone()).collect(),
            children: dom.nodes.iter().map(|n| n.children.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        let mut stack = vec![0];
        while let Some(i) = stack.pop() {
            out.push(i);
            stack.extend(self.children[i].iter().rev());
        }
        out
    }

    pub fn postorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        let mut stack = vec![(0usize, false)];
        while let Some((i, expanded)) = stack.pop() {
            if expanded {
                out.push(i);
            } else {
                stack.push((i, true));
                stack.extend(self.children[i].iter().rev().map(|&c| (c, false)));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BigramMode {
    /// Parent to child tag pairs.
    #[default]
    Structural,
    /// Consecutive tags in depth-first order.
    Sequence,
}

pub fn tag_bigrams(tree: &LabeledTree, mode: BigramMode) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    match mode {
        BigramMode::Structural => {
            for (p, kids) in tree.children.iter().enumerate() {
                for &c in kids {
                    out.insert((tree.labels[p].clone(), tree.labels[c].clone()));
                }
            }
        }
        BigramMode::Sequence => {
            let order = tree.preorder();
            for w in order.windows(2) {
                out.insert((tree.labels[w[0]].clone(), tree.labels[w[1]].clone()));
            }
        }
    }
    out
}

/// `|A ∩ B| / |A ∪ B|`, 1 for two empty sets.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

pub fn dom_tag_bigram_jaccard(a: &LabeledTree, b: &LabeledTree, mode: BigramMode) -> f64 {
    jaccard(&tag_bigrams(a, mode), &tag_bigrams(b, mode))
}

struct Postorder<'a> {
    labels: Vec<&'a str>,
    /// Leftmost leaf descendant, in postorder numbering.
    lml: Vec<usize>,
    keyroots: Vec<usize>,
}

fn annotate(t: &LabeledTree) -> Postorder<'_> {
    let post = t.postorder();
    let mut pos = vec![0; t.len()];
    for (k, &i) in post.iter().enumerate() {
        pos[i] = k;
    }
    let mut lml = vec![0; t.len()];
    for &i in &post {
        lml[pos[i]] = match t.children[i].first() {
            Some(&c) => lml[pos[c]],
            None => pos[i],
        };
    }
    let mut keyroots = Vec::new();
    for k in 0..post.len() {
        // a keyroot is the highest node with its leftmost leaf
        if !(k + 1..post.len()).any(|m| lml[m] == lml[k]) {
            keyroots.push(k);
        }
    }
    Postorder {
        labels: post.iter().map(|&i| t.labels[i].as_str()).collect(),
        lml,
        keyroots,
    }
}

/// Unit-cost ordered tree edit distance (Zhang and Shasha).
pub fn tree_edit_distance(a: &LabeledTree, b: &LabeledTree) -> usize {
    if a.is_empty() || b.is_empty() {
        return a.len().max(b.len());
    }
    let (pa, pb) = (annotate(a), annotate(b));
    let (n, m) = (a.len(), b.len());
    let mut td = vec![vec![0usize; m]; n];
    let mut fd = vec![vec![0usize; m + 1]; n + 1];
    for &i in &pa.keyroots {
        for &j in &pb.keyroots {
            let (li, lj) = (pa.lml[i], pb.lml[j]);
            // forest distance; fd[x][y] covers nodes li..li+x-1 and lj..lj+y-1
            fd[0][0] = 0;
            for x in 1..=i - li + 1 {
                fd[x][0] = fd[x - 1][0] + 1;
            }
            for y in 1..=j - lj + 1 {
                fd[0][y] = fd[0][y - 1] + 1;
            }
            for x in 1..=i - li + 1 {
                let ni = li + x - 1;
                for y in 1..=j - lj + 1 {
                    let nj = lj + y - 1;
                    let del = fd[x - 1][y] + 1;
                    let ins = fd[x][y - 1] + 1;
                    if pa.lml[ni] == li && pb.lml[nj] == lj {
                        let sub = fd[x - 1][y - 1] + usize::from(pa.labels[ni] != pb.labels[nj]);
                        fd[x][y] = del.min(ins).min(sub);
                        td[ni][nj] = fd[x][y];
                    } else {
                        let px = pa.lml[ni] - li;
                        let py = pb.lml[nj] - lj;
                        fd[x][y] = del.min(ins).min(fd[px][py] + td[ni][nj]);
                    }
                }
            }
        }
    }
    td[n - 1][m - 1]
}

/// Edit distance over the larger node count, or `None` past `node_cap`.
pub fn tree_edit_distance_norm(a: &LabeledTree, b: &LabeledTree, node_cap: usize) -> Option<f64> {
    let n = a.len().max(b.len());
    if n > node_cap {
        return None;
    }
    if n == 0 {
        return Some(0.0);
    }
    Some(tree_edit_distance(a, b) as f64 / n as f64)
}

/// Exhaustive search over every valid edit mapping: a partial one-to-one
/// node matching that preserves ancestry and left-to-right order. The cost of
/// a mapping is its relabels plus unmatched nodes of both trees. Branches
/// that cannot beat the best complete mapping are cut.
pub fn brute_force_ted(a: &LabeledTree, b: &LabeledTree) -> usize {
    let order = |t: &LabeledTree| {
        let (pre, post) = (t.preorder(), t.postorder());
        let mut rank = vec![(0usize, 0usize); t.len()];
        for (k, &i) in pre.iter().enumerate() {
            rank[i].0 = k;
        }
        for (k, &i) in post.iter().enumerate() {
            rank[i].1 = k;
        }
        rank
    };
    let (ra, rb) = (order(a), order(b));
    let mut st = Search {
        a,
        b,
        ra: &ra,
        rb: &rb,
        pairs: Vec::new(),
        used: vec![false; b.len()],
        best: a.len() + b.len(),
    };
    st.go(0, 0);
    st.best
}

struct Search<'a> {
    a: &'a LabeledTree,
    b: &'a LabeledTree,
    ra: &'a [(usize, usize)],
    rb: &'a [(usize, usize)],
    pairs: Vec<(usize, usize)>,
    used: Vec<bool>,
    best: usize,
}

impl Search<'_> {
    fn compatible(&self, i: usize, j: usize) -> bool {
        self.pairs.iter().all(|&(x, y)| {
            (self.ra[i].0 < self.ra[x].0) == (self.rb[j].0 < self.rb[y].0)
                && (self.ra[i].1 < self.ra[x].1) == (self.rb[j].1 < self.rb[y].1)
        })
    }

    /// `i` is the next node of `a` to decide; `cost` counts relabels and
    /// unmatched nodes of `a` so far.
    fn go(&mut self, i: usize, cost: usize) {
        let (n, m) = (self.a.len(), self.b.len());
        let matched = self.pairs.len();
        // unmatched nodes of b that the remaining nodes of a cannot absorb
        let bound = cost + m.saturating_sub(matched + (n - i));
        if bound >= self.best {
            return;
        }
        if i == n {
            self.best = cost + (m - matched);
            return;
        }
        for j in 0..m {
            if !self.used[j] && self.compatible(i, j) {
                self.used[j] = true;
                self.pairs.push((i, j));
                let relabel = usize::from(self.a.labels[i] != self.b.labels[j]);
                self.go(i + 1, cost + relabel);
                self.pairs.pop();
                self.used[j] = false;
            }
        }
        self.go(i + 1, cost + 1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::html::parse;

    fn chain(labels: &[&str]) -> LabeledTree {
        let mut t = LabeledTree::leaf(labels[0]);
        let mut p = 0;
        for l in &labels[1..] {
            p = t.push(p, *l);
        }
        t
    }

    fn classic() -> (LabeledTree, LabeledTree) {
        // f(d(a, c(b)), e) vs f(c(d(a, b)), e): distance 2
        let mut t1 = LabeledTree::leaf("f");
        let d = t1.push(0, "d");
        t1.push(d, "a");
        let c = t1.push(d, "c");
        t1.push(c, "b");
        t1.push(0, "e");
        let mut t2 = LabeledTree::leaf("f");
        let c = t2.push(0, "c");
        let d = t2.push(c, "d");
        t2.push(d, "a");
        t2.push(d, "b");
        t2.push(0, "e");
        (t1, t2)
    }

    #[test]
    fn known_distances() {
        let (t1, t2) = classic();
        assert_eq!(tree_edit_distance(&t1, &t2), 2);
        assert_eq!(brute_force_ted(&t1, &t2), 2);
        assert_eq!(tree_edit_distance(&t1, &t1), 0);
        assert_eq!(tree_edit_distance(&chain(&["a", "b"]), &chain(&["a"])), 1);
    }

    #[test]
    fn single_relabel_is_one_over_n() {
        let a = LabeledTree::from_dom(&parse(
            "<div><p>x</p><span>y</span><ul><li>z</li></ul></div>",
        ));
        let mut b = a.clone();
        let last = b.len() - 1;
        b.labels[last] = "ol".into();
        let n = a.len() as f64;
        assert_eq!(tree_edit_distance_norm(&a, &b, 100), Some(1.0 / n));
        assert_eq!(tree_edit_distance_norm(&a, &b, 3), None);
    }

    #[test]
    fn bigram_modes() {
        let t = LabeledTree::from_dom(&parse("<div><p></p><span></span></div>"));
        let s = tag_bigrams(&t, BigramMode::Structural);
        assert!(
            s.contains(&("div".into(), "p".into())) && s.contains(&("div".into(), "span".into()))
        );
        let q = tag_bigrams(&t, BigramMode::Sequence);
        assert!(q.contains(&("p".into(), "span".into())));
        assert_eq!(dom_tag_bigram_jaccard(&t, &t, BigramMode::Structural), 1.0);
        let other = LabeledTree::from_dom(&parse("<table><tr></tr></table>"));
        assert_eq!(
            dom_tag_bigram_jaccard(&t, &other, BigramMode::Structural),
            0.0
        );
    }
}
