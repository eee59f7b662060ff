//! Binary decision trees over match vectors.
//!
//! A split on feature `j` sends rows with `x_j >= 0.5` to the `one` branch.
//! Nodes live in a flat arena with the root at index 0. Split candidates are
//! scanned in ascending feature order and only a strictly better gain replaces
//! the incumbent, so ties resolve to the lowest feature index. Every child
//! holds at least [`MIN_LEAF`] rows.

use serde::{Deserialize, Serialize};

pub const MIN_LEAF: usize = 2;

const GAIN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: usize, zero: usize, one: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Tree {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split { feature, zero, one } => {
                    at = if x[feature] >= 0.5 { one } else { zero };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { zero, one, .. } => 1 + walk(nodes, zero).max(walk(nodes, one)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

/// Per-row statistics a split criterion aggregates.
trait Criterion {
    type Stats: Copy + Default;
    fn add(&self, acc: &mut Self::Stats, row: usize);
    fn sub(total: Self::Stats, part: Self::Stats) -> Self::Stats;
    fn admissible(&self, left: &Self::Stats, right: &Self::Stats) -> bool;
    fn gain(&self, parent: &Self::Stats, left: &Self::Stats, right: &Self::Stats) -> f64;
    fn leaf_value(&self, stats: &Self::Stats) -> f64;
    fn is_pure(&self, stats: &Self::Stats) -> bool;
}

struct Gini<'a> {
    y: &'a [bool],
}

#[derive(Clone, Copy, Default)]
struct ClassCounts {
    n: usize,
    linked: usize,
}

fn gini(c: &ClassCounts) -> f64 {
    if c.n == 0 {
        return 0.0;
    }
    let p = c.linked as f64 / c.n as f64;
    2.0 * p * (1.0 - p)
}

impl Criterion for Gini<'_> {
    type Stats = ClassCounts;

    fn add(&self, acc: &mut ClassCounts, row: usize) {
        acc.n += 1;
        acc.linked += usize::from(self.y[row]);
    }

    fn sub(total: ClassCounts, part: ClassCounts) -> ClassCounts {
        ClassCounts {
            n: total.n - part.n,
            linked: total.linked - part.linked,
        }
    }

    fn admissible(&self, left: &ClassCounts, right: &ClassCounts) -> bool {
        left.n >= MIN_LEAF && right.n >= MIN_LEAF
    }

    fn gain(&self, parent: &ClassCounts, left: &ClassCounts, right: &ClassCounts) -> f64 {
        let n = parent.n as f64;
        gini(parent) - (left.n as f64 / n) * gini(left) - (right.n as f64 / n) * gini(right)
    }

    fn leaf_value(&self, stats: &ClassCounts) -> f64 {
        stats.linked as f64 / stats.n as f64
    }

    fn is_pure(&self, stats: &ClassCounts) -> bool {
        stats.linked == 0 || stats.linked == stats.n
    }
}

pub(crate) struct Newton<'a> {
    pub grad: &'a [f64],
    pub hess: &'a [f64],
    pub lambda: f64,
    pub min_child_weight: f64,
}

#[derive(Clone, Copy, Default)]
pub(crate) struct GradStats {
    n: usize,
    g: f64,
    h: f64,
}

impl Newton<'_> {
    fn score(&self, s: &GradStats) -> f64 {
        s.g * s.g / (s.h + self.lambda)
    }
}

impl Criterion for Newton<'_> {
    type Stats = GradStats;

    fn add(&self, acc: &mut GradStats, row: usize) {
        acc.n += 1;
        acc.g += self.grad[row];
        acc.h += self.hess[row];
    }

    fn sub(total: GradStats, part: GradStats) -> GradStats {
        GradStats {
            n: total.n - part.n,
            g: total.g - part.g,
            h: total.h - part.h,
        }
    }

    fn admissible(&self, left: &GradStats, right: &GradStats) -> bool {
        left.n >= MIN_LEAF
            && right.n >= MIN_LEAF
            && left.h >= self.min_child_weight
            && right.h >= self.min_child_weight
    }

    fn gain(&self, parent: &GradStats, left: &GradStats, right: &GradStats) -> f64 {
        0.5 * (self.score(left) + self.score(right) - self.score(parent))
    }

    fn leaf_value(&self, stats: &GradStats) -> f64 {
        -stats.g / (stats.h + self.lambda)
    }

    fn is_pure(&self, _: &GradStats) -> bool {
        false
    }
}

struct Grower<'a, C: Criterion> {
    x: &'a [Vec<bool>],
    features: &'a [usize],
    max_depth: Option<usize>,
    criterion: C,
    nodes: Vec<Node>,
}

impl<C: Criterion> Grower<'_, C> {
    fn stats(&self, rows: &[usize]) -> C::Stats {
        let mut s = C::Stats::default();
        for &r in rows {
            self.criterion.add(&mut s, r);
        }
        s
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let at = self.nodes.len();
        let total = self.stats(&rows);
        self.nodes.push(Node::Leaf {
            value: self.criterion.leaf_value(&total),
        });
        if self.max_depth.is_some_and(|d| depth >= d)
            || rows.len() < 2 * MIN_LEAF
            || self.criterion.is_pure(&total)
        {
            return at;
        }
        let mut best: Option<(usize, f64)> = None;
        for &j in self.features {
            let mut one = C::Stats::default();
            for &r in &rows {
                if self.x[r][j] {
                    self.criterion.add(&mut one, r);
                }
            }
            let zero = C::sub(total, one);
            if !self.criterion.admissible(&zero, &one) {
                continue;
            }
            let g = self.criterion.gain(&total, &zero, &one);
            if g > GAIN_EPS && best.map_or(true, |(_, b)| g > b + GAIN_EPS) {
                best = Some((j, g));
            }
        }
        let Some((feature, _)) = best else {
            return at;
        };
        let (ones, zeros): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&r| self.x[r][feature]);
        let zero = self.grow(zeros, depth + 1);
        let one = self.grow(ones, depth + 1);
        self.nodes[at] = Node::Split { feature, zero, one };
        at
    }
}

fn sorted_features(features: &[usize]) -> Vec<usize> {
    let mut f = features.to_vec();
    f.sort_unstable();
    f.dedup();
    f
}

/// CART with Gini impurity; leaves hold the fraction of linked rows.
///
/// `rows` may repeat indices (bootstrap samples). `max_depth` of `None`
/// grows until nodes are pure or no admissible split improves impurity.
pub fn fit_classification_tree(
    x: &[Vec<bool>],
    y: &[bool],
    rows: &[usize],
    features: &[usize],
    max_depth: Option<usize>,
) -> Tree {
    if rows.is_empty() {
        return Tree::leaf(0.0);
    }
    let features = sorted_features(features);
    let mut grower = Grower {
        x,
        features: &features,
        max_depth,
        criterion: Gini { y },
        nodes: Vec::new(),
    };
    grower.grow(rows.to_vec(), 0);
    Tree { nodes: grower.nodes }
}

/// Second-order regression tree: leaf weight `-G / (H + lambda)`, split gain
/// `(G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)) / 2`.
pub(crate) fn fit_newton_tree(x: &[Vec<bool>], criterion: Newton<'_>, max_depth: usize) -> Tree {
    let rows: Vec<usize> = (0..x.len()).collect();
    let features: Vec<usize> = (0..x.first().map_or(0, Vec::len)).collect();
    let mut grower = Grower {
        x,
        features: &features,
        max_depth: Some(max_depth),
        criterion,
        nodes: Vec::new(),
    };
    grower.grow(rows, 0);
    Tree { nodes: grower.nodes }
}
