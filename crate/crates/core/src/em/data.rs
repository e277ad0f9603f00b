use crate::graph::{training_indicator, ObservedGraph, PairMask};

/// Dense view of the training data: weights, the training indicator and
/// per-node lists of observed training edges.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub(crate) n: usize,
    pub(crate) directed: bool,
    pub(crate) a: Vec<u64>,
    pub(crate) train: Vec<bool>,
    /// `i -> [(j, A_ij)]` over training pairs with `A_ij > 0`. Undirected
    /// graphs list each edge from both ends.
    pub(crate) out_edges: Vec<Vec<(usize, u64)>>,
    /// `j -> [(i, A_ij)]`; directed graphs only.
    pub(crate) in_edges: Vec<Vec<(usize, u64)>>,
}

impl TrainingData {
    pub fn new(g: &ObservedGraph, mask: Option<&PairMask>) -> Self {
        let n = g.n_nodes();
        let directed = g.is_directed();
        let a = g.to_dense();
        let train = training_indicator(n, mask);
        let mut out_edges = vec![Vec::new(); n];
        let mut in_edges = vec![Vec::new(); if directed { n } else { 0 }];
        for ((i, j), w) in g.edges() {
            if !train[i * n + j] {
                continue;
            }
            out_edges[i].push((j, w));
            if directed {
                in_edges[j].push((i, w));
            } else {
                out_edges[j].push((i, w));
            }
        }
        for list in out_edges.iter_mut().chain(in_edges.iter_mut()) {
            list.sort_unstable();
        }
        Self {
            n,
            directed,
            a,
            train,
            out_edges,
            in_edges,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> u64 {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn is_training(&self, i: usize, j: usize) -> bool {
        self.train[i * self.n + j]
    }

    /// Training pairs in canonical orientation (`i < j` when undirected).
    pub fn training_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        let directed = self.directed;
        (0..n).flat_map(move |i| {
            let start = if directed { 0 } else { i + 1 };
            (start..n)
                .filter(move |&j| self.train[i * n + j])
                .map(move |j| (i, j))
        })
    }
}
