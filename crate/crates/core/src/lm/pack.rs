//! Prefix-shared packing.
//!
//! Prompts from one student share long token prefixes. Inserting them into a
//! trie and flattening it gives one sequence where each token attends only
//! to its ancestors and carries its depth as position, which is exactly the
//! computation each prompt would see on its own.

use std::collections::HashMap;

use crate::ktlp::{KtlpExample, Vocab};

/// Visible keys for every query position, as ascending half-open ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    ranges: Vec<Vec<(usize, usize)>>,
}

impl Mask {
    pub fn causal(n: usize) -> Self {
        Mask {
            ranges: (0..n).map(|i| vec![(0, i + 1)]).collect(),
        }
    }

    pub fn keys(&self, query: usize) -> &[(usize, usize)] {
        &self.ranges[query]
    }

    pub fn n_visible(&self, query: usize) -> usize {
        self.ranges[query].iter().map(|(a, b)| b - a).sum()
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Every visible key precedes or equals its query.
    pub fn is_causal(&self) -> bool {
        self.ranges
            .iter()
            .enumerate()
            .all(|(i, r)| r.iter().all(|&(a, b)| a < b && b <= i + 1) && r.last().map(|x| x.1) == Some(i + 1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSequence {
    pub tokens: Vec<u32>,
    pub positions: Vec<usize>,
    pub mask: Mask,
}

impl PackedSequence {
    /// Plain left-to-right sequence with positions `0..n`.
    pub fn causal(tokens: Vec<u32>) -> Self {
        let n = tokens.len();
        PackedSequence {
            tokens,
            positions: (0..n).collect(),
            mask: Mask::causal(n),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct PrefixTrie {
    tokens: Vec<u32>,
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
    children: HashMap<(Option<usize>, u32), usize>,
}

impl PrefixTrie {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Depth of the deepest node plus one.
    pub fn max_len(&self) -> usize {
        self.depth.iter().map(|d| d + 1).max().unwrap_or(0)
    }

    /// Inserts a token path and returns the node index of every token.
    pub fn insert(&mut self, seq: &[u32]) -> Vec<usize> {
        let mut nodes = Vec::with_capacity(seq.len());
        let mut cur: Option<usize> = None;
        for (d, &tok) in seq.iter().enumerate() {
            let node = match self.children.get(&(cur, tok)) {
                Some(&n) => n,
                None => {
                    let n = self.tokens.len();
                    self.tokens.push(tok);
                    self.parent.push(cur);
                    self.depth.push(d);
                    self.children.insert((cur, tok), n);
                    n
                }
            };
            nodes.push(node);
            cur = Some(node);
        }
        nodes
    }

    pub fn finish(self) -> PackedSequence {
        let n = self.tokens.len();
        let mut run_start = vec![0usize; n];
        for i in 0..n {
            run_start[i] = match self.parent[i] {
                Some(p) if i > 0 && p == i - 1 => run_start[i - 1],
                _ => i,
            };
        }
        let ranges = (0..n)
            .map(|i| {
                let mut r = Vec::new();
                let mut cur = i;
                loop {
                    let s = run_start[cur];
                    r.push((s, cur + 1));
                    match self.parent[s] {
                        Some(p) => cur = p,
                        None => break,
                    }
                }
                r.reverse();
                r
            })
            .collect();
        PackedSequence {
            tokens: self.tokens,
            positions: self.depth,
            mask: Mask { ranges },
        }
    }
}

/// `[BOS] + input + output` token ids and the number of output tokens.
pub fn encode_example(ex: &KtlpExample, vocab: &Vocab) -> (Vec<u32>, usize) {
    let mut ids = vec![Vocab::BOS_ID];
    ids.extend(vocab.encode(&ex.input));
    let out = vocab.encode(&ex.output);
    let n_out = out.len();
    ids.extend(out);
    (ids, n_out)
}

/// Keeps the leading BOS and the most recent `max_len - 1` tokens.
pub fn left_truncate(ids: &[u32], max_len: usize) -> Vec<u32> {
    if ids.len() <= max_len {
        return ids.to_vec();
    }
    let mut out = Vec::with_capacity(max_len);
    if max_len > 0 {
        out.push(ids[0]);
        out.extend_from_slice(&ids[ids.len() - (max_len - 1)..]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trie_shares_prefixes() {
        let mut t = PrefixTrie::new();
        let a = t.insert(&[1, 2, 3, 4]);
        let b = t.insert(&[1, 2, 5]);
        let c = t.insert(&[1, 2, 3, 6, 7]);
        assert_eq!(a, vec![0, 1, 2, 3]);
        assert_eq!(b, vec![0, 1, 4]);
        assert_eq!(c, vec![0, 1, 2, 5, 6]);
        assert_eq!(t.max_len(), 5);
        let seq = t.finish();
        assert_eq!(seq.tokens, vec![1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(seq.positions, vec![0, 1, 2, 3, 2, 3, 4]);
        assert_eq!(seq.mask.keys(3), &[(0, 4)]);
        assert_eq!(seq.mask.keys(4), &[(0, 2), (4, 5)]);
        assert_eq!(seq.mask.keys(6), &[(0, 3), (5, 7)]);
        assert!(seq.mask.is_causal());
        assert_eq!(seq.mask.n_visible(6), 5);
    }

    #[test]
    fn truncation_keeps_bos_and_tail() {
        assert_eq!(left_truncate(&[9, 1, 2, 3, 4], 3), vec![9, 3, 4]);
        assert_eq!(left_truncate(&[9, 1], 3), vec![9, 1]);
    }
}
