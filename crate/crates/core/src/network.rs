//! Predicted-link graphs, Louvain communities and suspect-level reports.
//!
//! Modularity at resolution `gamma` on an unweighted graph with `m` edges:
//! `Q = sum_c [ L_c / m - gamma (d_c / 2m)^2 ]`, where `L_c` counts edges inside
//! community `c` and `d_c` sums its degrees. An edgeless graph has `Q = 0`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::format_threshold;
use crate::pairing::PairwiseDataset;
use crate::seed;

const MOVE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub score: f64,
}

/// Simple undirected graph over case ids; edges satisfy `a < b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
    #[serde(with = "crate::evaluation::threshold_serde")]
    pub threshold: f64,
}

impl LinkGraph {
    pub fn new(nodes: Vec<String>, edges: &[(usize, usize)]) -> Result<LinkGraph> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b || a >= nodes.len() || b >= nodes.len() {
                return Err(Error::invalid(format!("bad edge ({a}, {b})")));
            }
            let (a, b) = (a.min(b), a.max(b));
            if seen.insert((a, b)) {
                out.push(Edge { a, b, score: 1.0 });
            }
        }
        out.sort_by_key(|e| (e.a, e.b));
        Ok(LinkGraph {
            nodes,
            edges: out,
            threshold: f64::NAN,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.nodes.len()];
        for e in &self.edges {
            d[e.a] += 1;
            d[e.b] += 1;
        }
        d
    }

    pub fn write_edges_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["case_a", "case_b", "score"])?;
        for e in &self.edges {
            w.write_record([&self.nodes[e.a], &self.nodes[e.b], &e.score.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// DOT graph with nodes filled by community.
    pub fn to_dot(&self, partition: Option<&Partition>, name: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "graph \"{}\" {{", name.replace('"', "'"));
        let _ = writeln!(s, "  node [shape=circle, style=filled, label=\"\"];");
        if self.threshold.is_finite() || self.threshold.is_infinite() {
            let _ = writeln!(s, "  // threshold {}", format_threshold(self.threshold));
        }
        let k = partition.map_or(1, Partition::n_communities).max(1);
        for (i, id) in self.nodes.iter().enumerate() {
            let c = partition.map_or(0, |p| p.assignment[i]);
            // golden-ratio hue spacing keeps neighbouring ids apart
            let hue = (c as f64 * 0.618_033_988_749_895).fract();
            let _ = writeln!(
                s,
                "  \"{}\" [fillcolor=\"{:.3} 0.650 0.900\", tooltip=\"community {c} of {k}\"];",
                id.replace('"', "'"),
                hue
            );
        }
        for e in &self.edges {
            let _ = writeln!(
                s,
                "  \"{}\" -- \"{}\";",
                self.nodes[e.a].replace('"', "'"),
                self.nodes[e.b].replace('"', "'")
            );
        }
        s.push_str("}\n");
        s
    }
}

/// Edge iff `score >= threshold`; every case appearing in `pairs` is a node.
pub fn build_graph(pairs: &PairwiseDataset, scores: &[f64], threshold: f64) -> Result<LinkGraph> {
    if scores.len() != pairs.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} pairs",
            scores.len(),
            pairs.len()
        )));
    }
    let mut ids: Vec<String> = pairs
        .rows
        .iter()
        .flat_map(|r| [r.a.clone(), r.b.clone()])
        .collect();
    ids.sort();
    ids.dedup();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut edges = Vec::new();
    for (r, &s) in pairs.rows.iter().zip(scores) {
        if s >= threshold {
            let (a, b) = (index[r.a.as_str()], index[r.b.as_str()]);
            if a == b {
                return Err(Error::invalid(format!("self-pair on case `{}`", r.a)));
            }
            edges.push(Edge {
                a: a.min(b),
                b: a.max(b),
                score: s,
            });
        }
    }
    edges.sort_by_key(|e| (e.a, e.b));
    edges.dedup_by_key(|e| (e.a, e.b));
    Ok(LinkGraph {
        nodes: ids,
        edges,
        threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub nodes: Vec<String>,
    /// Community of each node; ids are `0..k` in order of first member.
    pub assignment: Vec<usize>,
    pub resolution: f64,
    pub modularity: f64,
    /// Modularity after each local-move phase.
    pub pass_modularity: Vec<f64>,
}

impl Partition {
    pub fn n_communities(&self) -> usize {
        self.assignment.iter().max().map_or(0, |m| m + 1)
    }

    pub fn communities(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_communities()];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.communities().iter().map(Vec::len).collect()
    }
}

/// Relabels so community ids follow the order of their first member.
pub fn canonical(assignment: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    assignment
        .iter()
        .map(|&c| {
            let next = map.len();
            *map.entry(c).or_insert(next)
        })
        .collect()
}

pub fn modularity(graph: &LinkGraph, assignment: &[usize], resolution: f64) -> f64 {
    let m = graph.n_edges() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let k = assignment.iter().max().map_or(0, |v| v + 1);
    let mut inside = vec![0.0; k];
    let mut degree = vec![0.0; k];
    for e in &graph.edges {
        degree[assignment[e.a]] += 1.0;
        degree[assignment[e.b]] += 1.0;
        if assignment[e.a] == assignment[e.b] {
            inside[assignment[e.a]] += 1.0;
        }
    }
    inside
        .iter()
        .zip(&degree)
        .map(|(l, d)| l / m - resolution * (d / (2.0 * m)).powi(2))
        .sum()
}

/// Weighted graph for one Louvain level; `adj[i]` excludes self-loops.
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    self_loops: Vec<f64>,
    degree: Vec<f64>,
}

impl Level {
    fn from_graph(graph: &LinkGraph) -> Level {
        let n = graph.n_nodes();
        let mut adj = vec![Vec::new(); n];
        for e in &graph.edges {
            adj[e.a].push((e.b, 1.0));
            adj[e.b].push((e.a, 1.0));
        }
        let degree = adj.iter().map(|a| a.len() as f64).collect();
        Level {
            adj,
            self_loops: vec![0.0; n],
            degree,
        }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    fn modularity(&self, community: &[usize], m: f64, gamma: f64) -> f64 {
        let k = community.iter().max().map_or(0, |v| v + 1);
        let mut inside = vec![0.0; k];
        let mut tot = vec![0.0; k];
        for i in 0..self.len() {
            let c = community[i];
            tot[c] += self.degree[i];
            inside[c] += self.self_loops[i];
            for &(j, w) in &self.adj[i] {
                if community[j] == c {
                    inside[c] += w;
                }
            }
        }
        // inside counts each internal edge twice
        inside
            .iter()
            .zip(&tot)
            .map(|(l, d)| l / (2.0 * m) - gamma * (d / (2.0 * m)).powi(2))
            .sum()
    }

    /// Greedy single-node moves until none improves modularity.
    fn local_moves(&self, m: f64, gamma: f64, rng: &mut seed::Rng) -> (Vec<usize>, bool) {
        let n = self.len();
        let mut community: Vec<usize> = (0..n).collect();
        let mut tot = self.degree.clone();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut moved_any = false;
        let mut links = vec![0.0; n];
        let mut touched = Vec::new();
        loop {
            let mut moved = false;
            for &i in &order {
                let ci = community[i];
                let ki = self.degree[i];
                for &(j, w) in &self.adj[i] {
                    let c = community[j];
                    if links[c] == 0.0 {
                        touched.push(c);
                    }
                    links[c] += w;
                }
                tot[ci] -= ki;
                let gain = |c: usize, l: f64| l / m - gamma * tot[c] * ki / (2.0 * m * m);
                // ties keep the current community, then favour the lowest id
                touched.sort_unstable();
                let mut best = ci;
                let mut best_gain = gain(ci, links[ci]);
                for &c in &touched {
                    let g = gain(c, links[c]);
                    if g > best_gain + MOVE_EPS {
                        best = c;
                        best_gain = g;
                    }
                }
                tot[best] += ki;
                if best != ci {
                    community[i] = best;
                    moved = true;
                    moved_any = true;
                }
                for &c in &touched {
                    links[c] = 0.0;
                }
                touched.clear();
            }
            if !moved {
                break;
            }
        }
        (canonical(&community), moved_any)
    }

    fn aggregate(&self, community: &[usize]) -> Level {
        let k = community.iter().max().map_or(0, |v| v + 1);
        let mut weights: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); k];
        let mut self_loops = vec![0.0; k];
        let mut degree = vec![0.0; k];
        for i in 0..self.len() {
            let ci = community[i];
            degree[ci] += self.degree[i];
            self_loops[ci] += self.self_loops[i];
            for &(j, w) in &self.adj[i] {
                let cj = community[j];
                if ci == cj {
                    self_loops[ci] += w;
                } else {
                    *weights[ci].entry(cj).or_insert(0.0) += w;
                }
            }
        }
        Level {
            adj: weights.into_iter().map(|m| m.into_iter().collect()).collect(),
            self_loops,
            degree,
        }
    }
}

/// Two-phase Louvain: local moves in a seeded node order, then aggregation,
/// repeated until a level makes no move.
pub fn louvain(graph: &LinkGraph, resolution: f64, seed_value: u64) -> Result<Partition> {
    if graph.n_nodes() == 0 {
        return Err(Error::insufficient("Louvain needs at least one node"));
    }
    if !(resolution > 0.0) {
        return Err(Error::invalid(format!("resolution must be positive, got {resolution}")));
    }
    let n = graph.n_nodes();
    let m = graph.n_edges() as f64;
    let mut assignment: Vec<usize> = (0..n).collect();
    let mut pass_modularity = Vec::new();
    if m > 0.0 {
        let mut rng = seed::derived_rng(seed_value, "louvain", 0);
        let mut level = Level::from_graph(graph);
        loop {
            let (community, moved) = level.local_moves(m, resolution, &mut rng);
            for a in assignment.iter_mut() {
                *a = community[*a];
            }
            pass_modularity.push(level.modularity(&community, m, resolution));
            if !moved {
                break;
            }
            level = level.aggregate(&community);
        }
    }
    let assignment = canonical(&assignment);
    Ok(Partition {
        nodes: graph.nodes.clone(),
        modularity: modularity(graph, &assignment, resolution),
        assignment,
        resolution,
        pass_modularity,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrevalenceRow {
    pub victims: usize,
    pub suspects: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrevalenceTable {
    pub rows: Vec<PrevalenceRow>,
}

impl PrevalenceTable {
    pub fn from_sizes(sizes: &[usize]) -> PrevalenceTable {
        let mut hist = BTreeMap::new();
        for &s in sizes {
            *hist.entry(s).or_insert(0) += 1;
        }
        PrevalenceTable {
            rows: hist
                .into_iter()
                .map(|(victims, suspects)| PrevalenceRow { victims, suspects })
                .collect(),
        }
    }

    pub fn total_victims(&self) -> usize {
        self.rows.iter().map(|r| r.victims * r.suspects).sum()
    }

    pub fn total_suspects(&self) -> usize {
        self.rows.iter().map(|r| r.suspects).sum()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["victims", "suspects"])?;
        for r in &self.rows {
            w.write_record([r.victims.to_string(), r.suspects.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Community sizes as (victims, suspect count) rows, ascending by victims.
pub fn prevalence(partition: &Partition) -> PrevalenceTable {
    PrevalenceTable::from_sizes(&partition.sizes())
}

/// Loss avoided when method a identifies more suspects than method b, each
/// identified suspect preventing one further offence.
pub fn savings_estimate(identified_a: usize, identified_b: usize, median_loss: f64) -> f64 {
    (identified_a as f64 - identified_b as f64) * median_loss
}

/// Connected components, over the cases incident to a truly linked pair, of
/// the graph of correctly predicted links; components without such a link
/// are not counted.
pub fn suspects_identified(pairs: &PairwiseDataset, scores: &[f64], threshold: f64) -> Result<usize> {
    if scores.len() != pairs.len() {
        return Err(Error::invalid("scores and pairs differ in length"));
    }
    let mut ids: Vec<&str> = pairs
        .rows
        .iter()
        .filter(|r| r.label.is_linked())
        .flat_map(|r| [r.a.as_str(), r.b.as_str()])
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut has_edge = vec![false; ids.len()];
    for (r, &s) in pairs.rows.iter().zip(scores) {
        if r.label.is_linked() && s >= threshold {
            let (a, b) = (index[r.a.as_str()], index[r.b.as_str()]);
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
            has_edge[a] = true;
            has_edge[b] = true;
        }
    }
    let mut roots: Vec<usize> = (0..ids.len())
        .filter(|&i| has_edge[i])
        .map(|i| find(&mut parent, i))
        .collect();
    roots.sort_unstable();
    roots.dedup();
    Ok(roots.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairing::{build_pairs, Label, PairRow};
    use crate::ingest::CaseTable;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("n{i}")).collect()
    }

    pub(crate) fn exhaustive_best(graph: &LinkGraph, gamma: f64) -> f64 {
        // restricted growth strings enumerate every set partition once
        let n = graph.n_nodes();
        let mut a = vec![0usize; n];
        let mut best = f64::MIN;
        loop {
            best = best.max(modularity(graph, &a, gamma));
            let mut i = n;
            loop {
                if i <= 1 {
                    return best;
                }
                i -= 1;
                let max_prefix = a[..i].iter().max().copied().unwrap_or(0);
                if a[i] <= max_prefix {
                    a[i] += 1;
                    for v in &mut a[i + 1..] {
                        *v = 0;
                    }
                    break;
                }
            }
        }
    }

    #[test]
    fn two_triangles_split_in_two() {
        let g = LinkGraph::new(names(6), &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]).unwrap();
        let p = louvain(&g, 1.0, 1).unwrap();
        assert_eq!(p.n_communities(), 2);
        assert_eq!(p.assignment, vec![0, 0, 0, 1, 1, 1]);
        assert!((p.modularity - exhaustive_best(&g, 1.0)).abs() < 1e-12);
        assert!((p.modularity - 0.5).abs() < 1e-12);
    }

    #[test]
    fn edgeless_and_complete_graphs() {
        let g = LinkGraph::new(names(5), &[]).unwrap();
        let p = louvain(&g, 1.0, 3).unwrap();
        assert_eq!(p.n_communities(), 5);
        assert_eq!(p.modularity, 0.0);
        let all: Vec<(usize, usize)> = (0..6).flat_map(|i| (i + 1..6).map(move |j| (i, j))).collect();
        let k6 = LinkGraph::new(names(6), &all).unwrap();
        assert_eq!(louvain(&k6, 1.0, 3).unwrap().n_communities(), 1);
        assert!(louvain(&LinkGraph::new(vec![], &[]).unwrap(), 1.0, 1).is_err());
    }

    #[test]
    fn bell_number_enumeration() {
        let mut count = 0;
        let g = LinkGraph::new(names(5), &[]).unwrap();
        // counting via the oracle's traversal
        let n = g.n_nodes();
        let mut a = vec![0usize; n];
        'outer: loop {
            count += 1;
            let mut i = n;
            loop {
                if i <= 1 {
                    break 'outer;
                }
                i -= 1;
                if a[i] <= a[..i].iter().copied().max().unwrap() {
                    a[i] += 1;
                    a[i + 1..].iter_mut().for_each(|v| *v = 0);
                    break;
                }
            }
        }
        assert_eq!(count, 52);
    }

    #[test]
    fn graph_building() {
        let mut rows = Vec::new();
        for (a, b) in [("x", "y"), ("x", "z"), ("y", "z"), ("w", "x")] {
            rows.push(PairRow { a: a.into(), b: b.into(), matches: vec![true], label: Label::Unknown, similarity: None });
        }
        let data = PairwiseDataset::new(rows, vec!["f".into()]).unwrap();
        let scores = [0.9, 0.6, 0.7, 0.1];
        let g = build_graph(&data, &scores, 0.5).unwrap();
        assert_eq!(g.n_nodes(), 4);
        assert_eq!(g.n_edges(), 3);
        let none = build_graph(&data, &scores, 0.95).unwrap();
        assert_eq!((none.n_nodes(), none.n_edges()), (4, 0));
        let dot = g.to_dot(Some(&louvain(&g, 1.0, 1).unwrap()), "demo");
        assert!(dot.starts_with("graph \"demo\" {") && dot.contains("\"x\" -- \"y\";"));
        let mut csv = Vec::new();
        g.write_edges_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 4);
    }

    #[test]
    fn three_hundred_cases_bound_edges() {
        let table = CaseTable::from_binary(
            (0..300).map(|i| format!("c{i:03}")).collect(),
            vec!["f".into()],
            (0..300).map(|i| vec![i % 2 == 0]).collect(),
        )
        .unwrap();
        let pairs = build_pairs(&table, None).unwrap();
        let g = build_graph(&pairs, &vec![1.0; pairs.len()], 0.0).unwrap();
        assert_eq!(g.n_edges(), 44_850);
        assert_eq!(louvain(&g, 1.0, 1).unwrap().n_communities(), 1);
    }

    #[test]
    fn prevalence_tables() {
        // 54 singletons plus larger groups; totals reconcile to 300 and 84
        let mut sizes = vec![1; 54];
        sizes.extend([23, 40, 54]);
        let rest = 300 - sizes.iter().sum::<usize>();
        let extra = 84 - sizes.len();
        // spread the remaining victims over the remaining suspects
        let base = rest / extra;
        for k in 0..extra {
            sizes.push(base + usize::from(k < rest % extra));
        }
        let t = PrevalenceTable::from_sizes(&sizes);
        assert_eq!(t.total_victims(), 300);
        assert_eq!(t.total_suspects(), 84);
        assert_eq!(t.rows[0], PrevalenceRow { victims: 1, suspects: 54 });
        assert_eq!(t.rows.last().unwrap().victims, 54);
        assert!(t.rows.windows(2).all(|w| w[0].victims < w[1].victims));

        let one = Partition { nodes: names(7), assignment: vec![0; 7], resolution: 1.0, modularity: 0.0, pass_modularity: vec![] };
        assert_eq!(prevalence(&one).rows, vec![PrevalenceRow { victims: 7, suspects: 1 }]);
        let singles = Partition { assignment: (0..7).collect(), ..one };
        assert_eq!(prevalence(&singles).rows, vec![PrevalenceRow { victims: 1, suspects: 7 }]);
    }

    #[test]
    fn savings_arithmetic() {
        assert_eq!(savings_estimate(10, 3, 1690.0), 11_830.0);
        assert_eq!(savings_estimate(4, 4, 1690.0), 0.0);
        assert_eq!(savings_estimate(3, 1, 100.0), 200.0);
        assert_eq!(savings_estimate(1, 3, 100.0), -200.0);
    }

    #[test]
    fn identified_suspects_count_true_positive_components() {
        let mk = |a: &str, b: &str, linked: bool| PairRow {
            a: a.into(),
            b: b.into(),
            matches: vec![true],
            label: Label::from_linked(linked),
            similarity: None,
        };
        let data = PairwiseDataset::new(
            vec![mk("a", "b", true), mk("b", "c", true), mk("a", "c", true), mk("d", "e", true), mk("a", "d", false), mk("f", "g", true)],
            vec!["f".into()],
        )
        .unwrap();
        // a-b, d-e caught; f-g missed; a-d is a false positive
        let scores = [0.9, 0.2, 0.3, 0.8, 0.9, 0.1];
        assert_eq!(suspects_identified(&data, &scores, 0.5).unwrap(), 2);
        assert_eq!(suspects_identified(&data, &[1.0; 6], 0.5).unwrap(), 3);
        assert_eq!(suspects_identified(&data, &[0.0; 6], 0.5).unwrap(), 0);
    }

    fn small_graphs() -> impl Strategy<Value = LinkGraph> {
        (2usize..=8).prop_flat_map(|n| {
            proptest::collection::vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |bits| {
                let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
                let edges: Vec<(usize, usize)> = pairs.into_iter().zip(bits).filter(|(_, b)| *b).map(|(e, _)| e).collect();
                LinkGraph::new(names(n), &edges).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn louvain_properties(g in small_graphs(), gamma in prop::sample::select(vec![0.5, 1.0, 2.0]), s in 0u64..100) {
            let p = louvain(&g, gamma, s).unwrap();
            let singletons: Vec<usize> = (0..g.n_nodes()).collect();
            prop_assert!(p.modularity >= modularity(&g, &singletons, gamma) - 1e-12);
            prop_assert!(p.modularity <= exhaustive_best(&g, gamma) + 1e-12);
            for w in p.pass_modularity.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12);
            }
            if let Some(last) = p.pass_modularity.last() {
                prop_assert!((last - p.modularity).abs() < 1e-12);
            }
            prop_assert_eq!(p.assignment.len(), g.n_nodes());
            let t = prevalence(&p);
            prop_assert_eq!(t.total_victims(), g.n_nodes());
            prop_assert_eq!(t.total_suspects(), p.n_communities());
            prop_assert_eq!(&p, &louvain(&g, gamma, s).unwrap());
        }

        #[test]
        fn raising_threshold_never_adds_edges(scores in proptest::collection::vec(0.0f64..1.0, 10), t1 in 0.0f64..1.0, dt in 0.0f64..0.5) {
            let table = CaseTable::from_binary(names(5), vec!["f".into()], (0..5).map(|i| vec![i % 2 == 0]).collect()).unwrap();
            let pairs = build_pairs(&table, None).unwrap();
            let lo = build_graph(&pairs, &scores, t1).unwrap();
            let hi = build_graph(&pairs, &scores, t1 + dt).unwrap();
            prop_assert!(hi.edges.iter().all(|e| lo.edges.iter().any(|f| (f.a, f.b) == (e.a, e.b))));
        }
    }
}
