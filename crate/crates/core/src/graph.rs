//! Observed networks, exposure masks and cross-validation pair masks.
//!
//! Undirected graphs store each pair once as `(i, j)` with `i < j`; the
//! accessors answer symmetrically. Directed graphs store ordered pairs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Pair = (usize, usize);

/// Comment directive used by the edge-list writer to pin node order and keep
/// isolated nodes across a round-trip.
const NODE_DIRECTIVE: &str = "#! node";

/// Canonical storage key for a pair.
#[inline]
pub fn canonical(i: usize, j: usize, directed: bool) -> Pair {
    if directed || i < j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Every distinct pair of an `n`-node graph in canonical form, row-major.
pub fn all_pairs(n: usize, directed: bool) -> impl Iterator<Item = Pair> {
    (0..n).flat_map(move |i| {
        let start = if directed { 0 } else { i + 1 };
        (start..n).filter(move |&j| j != i).map(move |j| (i, j))
    })
}

pub fn n_pairs(n: usize, directed: bool) -> usize {
    if directed {
        n * n.saturating_sub(1)
    } else {
        n * n.saturating_sub(1) / 2
    }
}

/// Sparse nonnegative integer adjacency over `n_nodes` nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedGraph {
    n_nodes: usize,
    directed: bool,
    edges: BTreeMap<Pair, u64>,
    labels: Option<Vec<String>>,
    groups: Option<Vec<Option<String>>>,
}

impl ObservedGraph {
    /// Builds a graph from `(i, j, weight)` triples. Duplicates are summed,
    /// zero weights dropped, and for undirected graphs `(i, j)` and `(j, i)`
    /// land on the same pair.
    pub fn from_weighted_edges<I>(n_nodes: usize, directed: bool, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, u64)>,
    {
        if n_nodes == 0 {
            return Err(Error::Validation(
                "graph must have at least one node".into(),
            ));
        }
        let mut map = BTreeMap::new();
        for (i, j, w) in edges {
            if i >= n_nodes || j >= n_nodes {
                return Err(Error::Validation(format!(
                    "edge ({i}, {j}) out of range for {n_nodes} nodes"
                )));
            }
            if i == j {
                return Err(Error::Validation(format!("self-loop on node {i}")));
            }
            if w > 0 {
                *map.entry(canonical(i, j, directed)).or_insert(0) += w;
            }
        }
        Ok(Self {
            n_nodes,
            directed,
            edges: map,
            labels: None,
            groups: None,
        })
    }

    /// Attaches external node labels; they must be unique and one per node.
    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n_nodes {
            return Err(Error::Validation(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.n_nodes
            )));
        }
        let unique: BTreeSet<&str> = labels.iter().map(String::as_str).collect();
        if unique.len() != labels.len() {
            return Err(Error::Validation("node labels are not unique".into()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Attaches per-node group metadata (e.g. a conference id read from GML `value`).
    pub fn with_groups(mut self, groups: Vec<Option<String>>) -> Result<Self> {
        if groups.len() != self.n_nodes {
            return Err(Error::Validation("group vector length mismatch".into()));
        }
        self.groups = Some(groups);
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn weight(&self, i: usize, j: usize) -> u64 {
        if i == j {
            return 0;
        }
        self.edges
            .get(&canonical(i, j, self.directed))
            .copied()
            .unwrap_or(0)
    }

    /// Stored nonzero pairs in canonical order.
    pub fn edges(&self) -> impl Iterator<Item = (Pair, u64)> + '_ {
        self.edges.iter().map(|(&p, &w)| (p, w))
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_pairs(&self) -> usize {
        n_pairs(self.n_nodes, self.directed)
    }

    pub fn pairs(&self) -> impl Iterator<Item = Pair> {
        all_pairs(self.n_nodes, self.directed)
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// External label of node `i`, falling back to its index.
    pub fn label(&self, i: usize) -> String {
        match &self.labels {
            Some(l) => l[i].clone(),
            None => i.to_string(),
        }
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.as_ref()?.iter().position(|l| l == label)
    }

    pub fn groups(&self) -> Option<&[Option<String>]> {
        self.groups.as_deref()
    }

    /// Dense row-major `n × n` weight matrix; both halves filled when undirected.
    pub fn to_dense(&self) -> Vec<u64> {
        let n = self.n_nodes;
        let mut a = vec![0; n * n];
        for (&(i, j), &w) in &self.edges {
            a[i * n + j] = w;
            if !self.directed {
                a[j * n + i] = w;
            }
        }
        a
    }

    /// Writes the graph as a whitespace-separated edge list. Node order is
    /// pinned with `#! node` directives so a reload reproduces the indices.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        let names: Vec<String> = (0..self.n_nodes).map(|i| self.label(i)).collect();
        if let Some(bad) = names
            .iter()
            .find(|l| l.is_empty() || l.contains(char::is_whitespace))
        {
            return Err(Error::Validation(format!(
                "label {bad:?} cannot be written to an edge list"
            )));
        }
        writeln!(
            out,
            "# {} graph, {} nodes, {} edges",
            if self.directed {
                "directed"
            } else {
                "undirected"
            },
            self.n_nodes,
            self.edges.len()
        )?;
        for name in &names {
            writeln!(out, "{NODE_DIRECTIVE} {name}")?;
        }
        for (&(i, j), &w) in &self.edges {
            writeln!(out, "{}\t{}\t{}", names[i], names[j], w)?;
        }
        Ok(())
    }
}

/// Reads an edge list: one `src dst [weight]` per line, `#` comments, labels
/// mapped to indices in first-appearance order.
pub fn load_edge_list<R: BufRead>(source: R, directed: bool) -> Result<ObservedGraph> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut intern = |name: &str, labels: &mut Vec<String>| -> usize {
        *index.entry(name.to_string()).or_insert_with(|| {
            labels.push(name.to_string());
            labels.len() - 1
        })
    };
    let mut triples = Vec::new();
    for (lineno, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix(NODE_DIRECTIVE) {
            let name = rest.trim();
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "node directive needs exactly one label".into(),
                });
            }
            intern(name, &mut labels);
            continue;
        }
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected `src dst [weight]`, got {} fields", fields.len()),
            });
        }
        let weight = match fields.get(2) {
            None => 1,
            Some(raw) => match raw.parse::<i64>() {
                Ok(w) if w < 0 => {
                    return Err(Error::Validation(format!(
                        "negative weight {w} on line {lineno}"
                    )))
                }
                Ok(w) => w as u64,
                Err(_) => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("weight {raw:?} is not an integer"),
                    })
                }
            },
        };
        let i = intern(fields[0], &mut labels);
        let j = intern(fields[1], &mut labels);
        if i == j {
            return Err(Error::Validation(format!("self-loop on line {lineno}")));
        }
        triples.push((i, j, weight));
    }
    ObservedGraph::from_weighted_edges(labels.len(), directed, triples)?.with_labels(labels)
}

/// `2·|E| / N` for undirected graphs, `|E| / N` for directed ones.
pub fn mean_degree(g: &ObservedGraph) -> f64 {
    let e = g.n_edges() as f64;
    let n = g.n_nodes() as f64;
    if g.is_directed() {
        e / n
    } else {
        2.0 * e / n
    }
}

/// Binary exposure indicator per pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ExposureMask {
    n_nodes: usize,
    directed: bool,
    exposed: BTreeSet<Pair>,
}

impl ExposureMask {
    pub fn new(n_nodes: usize, directed: bool) -> Self {
        Self {
            n_nodes,
            directed,
            exposed: BTreeSet::new(),
        }
    }

    pub fn set(&mut self, i: usize, j: usize, exposed: bool) {
        debug_assert!(i != j && i < self.n_nodes && j < self.n_nodes);
        let p = canonical(i, j, self.directed);
        if exposed {
            self.exposed.insert(p);
        } else {
            self.exposed.remove(&p);
        }
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        u8::from(self.exposed.contains(&canonical(i, j, self.directed)))
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn n_exposed(&self) -> usize {
        self.exposed.len()
    }

    /// Fraction of distinct pairs with `Z = 1`.
    pub fn density(&self) -> f64 {
        self.exposed.len() as f64 / n_pairs(self.n_nodes, self.directed) as f64
    }

    /// Writes the exposed (`Z = 1`) pairs, one `i j` per line.
    pub fn write_pairs<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# exposed pairs (Z = 1), {} nodes", self.n_nodes)?;
        for &(i, j) in &self.exposed {
            writeln!(out, "{i} {j}")?;
        }
        Ok(())
    }

    pub fn read_pairs<R: BufRead>(source: R, n_nodes: usize, directed: bool) -> Result<Self> {
        let mut mask = Self::new(n_nodes, directed);
        for (i, j) in read_pair_lines(source, n_nodes)? {
            mask.set(i, j, true);
        }
        Ok(mask)
    }
}

/// Pairs hidden from training (one cross-validation fold).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairMask {
    n_nodes: usize,
    directed: bool,
    held: BTreeSet<Pair>,
}

impl PairMask {
    pub fn new<I: IntoIterator<Item = Pair>>(n_nodes: usize, directed: bool, held: I) -> Self {
        let held = held
            .into_iter()
            .map(|(i, j)| canonical(i, j, directed))
            .collect();
        Self {
            n_nodes,
            directed,
            held,
        }
    }

    pub fn is_held(&self, i: usize, j: usize) -> bool {
        self.held.contains(&canonical(i, j, self.directed))
    }

    pub fn held_pairs(&self) -> impl Iterator<Item = Pair> + '_ {
        self.held.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.held.len()
    }

    pub fn is_empty(&self) -> bool {
        self.held.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Dense row-major indicator of training pairs (diagonal excluded),
    /// filled symmetrically for undirected masks.
    pub fn training_indicator(&self) -> Vec<bool> {
        training_indicator(self.n_nodes, Some(self))
    }

    pub fn write_pairs<W: Write>(&self, mut out: W) -> Result<()> {
        for &(i, j) in &self.held {
            writeln!(out, "{i} {j}")?;
        }
        Ok(())
    }

    pub fn read_pairs<R: BufRead>(source: R, n_nodes: usize, directed: bool) -> Result<Self> {
        Ok(Self::new(
            n_nodes,
            directed,
            read_pair_lines(source, n_nodes)?,
        ))
    }
}

/// Dense training indicator for an optional mask.
pub fn training_indicator(n: usize, mask: Option<&PairMask>) -> Vec<bool> {
    let mut t = vec![true; n * n];
    for i in 0..n {
        t[i * n + i] = false;
    }
    if let Some(m) = mask {
        for (i, j) in m.held_pairs() {
            t[i * n + j] = false;
            if !m.directed {
                t[j * n + i] = false;
            }
        }
    }
    t
}

fn read_pair_lines<R: BufRead>(source: R, n_nodes: usize) -> Result<Vec<Pair>> {
    let mut pairs = Vec::new();
    for (lineno, line) in source.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let parsed: Vec<usize> = t
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse {
                line: lineno + 1,
                msg: "expected two node indices".into(),
            })?;
        match parsed[..] {
            [i, j] if i < n_nodes && j < n_nodes && i != j => pairs.push((i, j)),
            [_, _] => {
                return Err(Error::Validation(format!(
                    "pair on line {} is out of range or a self-pair",
                    lineno + 1
                )))
            }
            _ => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: "expected two node indices".into(),
                })
            }
        }
    }
    Ok(pairs)
}

/// Splits every distinct pair of `g` uniformly at random into `n_folds`
/// disjoint held-out masks whose sizes differ by at most one.
pub fn make_cv_folds(g: &ObservedGraph, n_folds: usize, seed: u64) -> Result<Vec<PairMask>> {
    if n_folds < 2 {
        return Err(Error::Validation("need at least 2 folds".into()));
    }
    let mut pairs: Vec<Pair> = g.pairs().collect();
    if n_folds > pairs.len() {
        return Err(Error::Validation(format!(
            "{n_folds} folds requested but only {} pairs exist",
            pairs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    let mut folds: Vec<Vec<Pair>> = vec![Vec::new(); n_folds];
    for (pos, p) in pairs.into_iter().enumerate() {
        folds[pos % n_folds].push(p);
    }
    Ok(folds
        .into_iter()
        .map(|held| PairMask::new(g.n_nodes(), g.is_directed(), held))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, directed: bool) -> Result<ObservedGraph> {
        load_edge_list(text.as_bytes(), directed)
    }

    #[test]
    fn two_edge_list() {
        let g = parse("a b\nb c", false).unwrap();
        assert_eq!(g.n_nodes(), 3);
        let e: Vec<_> = g.edges().collect();
        assert_eq!(e, vec![((0, 1), 1), ((1, 2), 1)]);
        assert_eq!(g.label(2), "c");
    }

    #[test]
    fn duplicates_sum() {
        let g = parse("a b 2\na b 3", false).unwrap();
        assert_eq!(g.n_edges(), 1);
        assert_eq!(g.weight(0, 1), 5);
    }

    #[test]
    fn undirected_merges_reversed_lines() {
        let g = parse("a b 2\nb a 1", false).unwrap();
        assert_eq!(g.weight(1, 0), 3);
        let d = parse("a b 2\nb a 1", true).unwrap();
        assert_eq!(d.weight(0, 1), 2);
        assert_eq!(d.weight(1, 0), 1);
    }

    #[test]
    fn comments_and_blank_lines() {
        let g = parse("# header\n\na\tb 4\n  # indented\n", false).unwrap();
        assert_eq!(g.weight(0, 1), 4);
    }

    #[test]
    fn malformed_lines_report_line_number() {
        match parse("a b\nc\n", false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse("a b x", false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("a b -2", false), Err(Error::Validation(_))));
        assert!(matches!(parse("a a", false), Err(Error::Validation(_))));
    }

    #[test]
    fn mean_degree_examples() {
        let tri = ObservedGraph::from_weighted_edges(3, false, [(0, 1, 1), (1, 2, 1), (0, 2, 1)])
            .unwrap();
        assert_eq!(mean_degree(&tri), 2.0);
        let single = ObservedGraph::from_weighted_edges(4, false, [(0, 1, 3)]).unwrap();
        assert_eq!(mean_degree(&single), 0.5);
        let d = ObservedGraph::from_weighted_edges(2, true, [(0, 1, 1), (1, 0, 1)]).unwrap();
        assert_eq!(mean_degree(&d), 1.0);
    }

    #[test]
    fn folds_five_nodes() {
        let g = ObservedGraph::from_weighted_edges(5, false, [(0, 1, 1)]).unwrap();
        let folds = make_cv_folds(&g, 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        assert!(folds.iter().all(|f| f.len() == 2));
        let again = make_cv_folds(&g, 5, 3).unwrap();
        assert_eq!(folds, again);
        let mut seen = BTreeSet::new();
        for f in &folds {
            for p in f.held_pairs() {
                assert!(seen.insert(p), "pair {p:?} in two folds");
            }
        }
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn folds_errors() {
        let g = ObservedGraph::from_weighted_edges(3, false, []).unwrap();
        assert!(make_cv_folds(&g, 1, 0).is_err());
        assert!(make_cv_folds(&g, 4, 0).is_err());
        assert!(make_cv_folds(&g, 3, 0).is_ok());
    }

    #[test]
    fn directed_folds_cover_ordered_pairs() {
        let g = ObservedGraph::from_weighted_edges(4, true, [(0, 1, 1)]).unwrap();
        let folds = make_cv_folds(&g, 5, 9).unwrap();
        let total: usize = folds.iter().map(PairMask::len).sum();
        assert_eq!(total, 12);
        let sizes: Vec<usize> = folds.iter().map(PairMask::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn isolated_nodes_survive_round_trip() {
        let g = ObservedGraph::from_weighted_edges(4, false, [(2, 1, 7)]).unwrap();
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        let back = load_edge_list(buf.as_slice(), false).unwrap();
        assert_eq!(back.n_nodes(), 4);
        assert_eq!(back.weight(1, 2), 7);
    }

    #[test]
    fn training_indicator_is_symmetric() {
        let m = PairMask::new(3, false, [(2, 0)]);
        let t = m.training_indicator();
        assert!(!t[2] && !t[6]);
        assert!(t[1] && t[3]);
        assert!(!t[0] && !t[4]);
    }

    #[test]
    fn mask_pairs_round_trip() {
        let m = PairMask::new(5, false, [(0, 3), (4, 1)]);
        let mut buf = Vec::new();
        m.write_pairs(&mut buf).unwrap();
        let back = PairMask::read_pairs(buf.as_slice(), 5, false).unwrap();
        assert_eq!(m, back);
    }
}
