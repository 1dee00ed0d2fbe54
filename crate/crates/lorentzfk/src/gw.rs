//! Critical Galton-Watson trees and their size-biased (single-spine)
//! companions, with layer statistics.
//!
//! Offspring laws are either finite-support maps or one of the built-in
//! closed forms; criticality (mean exactly 1) is validated, never estimated.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use thiserror::Error;

pub const PROB_SUM_TOL: f64 = 1e-12;
pub const CRITICAL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GwError {
    #[error("probabilities do not form a distribution (sum = {0})")]
    NotAProbability(f64),
    #[error("offspring mean {0} is not critical")]
    NotCritical(f64),
    #[error("second moment of the offspring law diverges")]
    InfiniteVariance,
    #[error("negative probability for k = {0}")]
    NegativeProbability(usize),
    #[error("malformed tree encoding: {0}")]
    BadEncoding(String),
}

/// Offspring law representation. `GeometricHalf` is the mean-1 geometric
/// p_k = 2^{-(k+1)}, kept in closed form so its moments are exact.
#[derive(Clone, Debug, PartialEq)]
pub enum OffspringLaw {
    Finite(BTreeMap<usize, f64>),
    GeometricHalf,
}

#[derive(Clone, Debug)]
pub struct OffspringDistribution {
    law: OffspringLaw,
    mean: f64,
    variance: f64,
}

impl OffspringDistribution {
    /// Validates a finite-support offspring map: probabilities sum to 1 and
    /// the mean is exactly 1 (within tolerance).
    pub fn validate_critical(probs: BTreeMap<usize, f64>) -> Result<Self, GwError> {
        for (&k, &p) in &probs {
            if p < 0.0 {
                return Err(GwError::NegativeProbability(k));
            }
        }
        let sum: f64 = probs.values().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(GwError::NotAProbability(sum));
        }
        let mean: f64 = probs.iter().map(|(&k, &p)| k as f64 * p).sum();
        if (mean - 1.0).abs() > CRITICAL_TOL {
            return Err(GwError::NotCritical(mean));
        }
        let m2: f64 = probs.iter().map(|(&k, &p)| (k * k) as f64 * p).sum();
        if !m2.is_finite() {
            return Err(GwError::InfiniteVariance);
        }
        Ok(Self {
            law: OffspringLaw::Finite(probs),
            mean,
            variance: m2 - mean * mean,
        })
    }

    /// Mean-1 geometric: p_k = 2^{-(k+1)}, sigma^2 = 2.
    pub fn geometric() -> Self {
        Self {
            law: OffspringLaw::GeometricHalf,
            mean: 1.0,
            variance: 2.0,
        }
    }

    /// Binary law {p_0 = 1/2, p_2 = 1/2}, sigma^2 = 1.
    pub fn binary() -> Self {
        let mut m = BTreeMap::new();
        m.insert(0, 0.5);
        m.insert(2, 0.5);
        Self::validate_critical(m).expect("binary law is critical")
    }

    /// Deterministic unit offspring {p_1 = 1}.
    pub fn deterministic_unit() -> Self {
        let mut m = BTreeMap::new();
        m.insert(1, 1.0);
        Self::validate_critical(m).expect("unit law is critical")
    }

    pub fn law(&self) -> &OffspringLaw {
        &self.law
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn prob(&self, k: usize) -> f64 {
        match &self.law {
            OffspringLaw::Finite(m) => m.get(&k).copied().unwrap_or(0.0),
            OffspringLaw::GeometricHalf => 0.5f64.powi(k as i32 + 1),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.law {
            OffspringLaw::Finite(m) => sample_finite(m, rng),
            OffspringLaw::GeometricHalf => sample_geometric_half(rng),
        }
    }

    /// Sum of `count` independent offspring draws, using closed-form
    /// aggregates where available so layer statistics scale to large trees.
    pub fn sample_offspring_sum<R: Rng + ?Sized>(&self, count: u64, rng: &mut R) -> u64 {
        if count == 0 {
            return 0;
        }
        match &self.law {
            OffspringLaw::GeometricHalf => {
                // Sum of m iid Geometric(1/2) on {0,1,..} is NegBinomial(m, 1/2),
                // sampled as a Poisson mixture of Gamma(m, 1).
                let lambda = Gamma::new(count as f64, 1.0).unwrap().sample(rng);
                if lambda <= 0.0 {
                    0
                } else {
                    Poisson::new(lambda).unwrap().sample(rng) as u64
                }
            }
            OffspringLaw::Finite(m) => finite_multinomial_sum(m, count, rng),
        }
    }
}

/// The size-biased companion p~_k = k p_k of a critical law; its mean is
/// sigma^2 + 1.
#[derive(Clone, Debug)]
pub struct SizeBiasedDistribution {
    law: OffspringLaw,
    mean: f64,
}

impl SizeBiasedDistribution {
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn prob(&self, k: usize) -> f64 {
        match &self.law {
            OffspringLaw::Finite(m) => m.get(&k).copied().unwrap_or(0.0),
            OffspringLaw::GeometricHalf => k as f64 * 0.5f64.powi(k as i32 + 1),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.law {
            OffspringLaw::Finite(m) => sample_finite(m, rng),
            // k 2^{-(k+1)} is the law of G1 + G2 + 1 with Gi iid Geometric(1/2).
            OffspringLaw::GeometricHalf => {
                sample_geometric_half(rng) + sample_geometric_half(rng) + 1
            }
        }
    }
}

pub fn size_bias(dist: &OffspringDistribution) -> SizeBiasedDistribution {
    match dist.law() {
        OffspringLaw::Finite(m) => {
            let probs: BTreeMap<usize, f64> = m
                .iter()
                .filter(|(&k, &p)| k > 0 && p > 0.0)
                .map(|(&k, &p)| (k, k as f64 * p))
                .collect();
            SizeBiasedDistribution {
                law: OffspringLaw::Finite(probs),
                mean: dist.variance() + 1.0,
            }
        }
        OffspringLaw::GeometricHalf => SizeBiasedDistribution {
            law: OffspringLaw::GeometricHalf,
            mean: dist.variance() + 1.0,
        },
    }
}

fn sample_finite<R: Rng + ?Sized>(m: &BTreeMap<usize, f64>, rng: &mut R) -> usize {
    let mut u: f64 = rng.gen();
    let mut last = 0;
    for (&k, &p) in m {
        last = k;
        if u < p {
            return k;
        }
        u -= p;
    }
    last
}

fn sample_geometric_half<R: Rng + ?Sized>(rng: &mut R) -> usize {
    let mut k = 0;
    while rng.gen_bool(0.5) {
        k += 1;
    }
    k
}

/// Sum over a multinomial split of `count` draws from a finite law,
/// realized by conditional binomials.
fn finite_multinomial_sum<R: Rng + ?Sized>(
    m: &BTreeMap<usize, f64>,
    count: u64,
    rng: &mut R,
) -> u64 {
    let mut remaining = count;
    let mut mass_left = 1.0f64;
    let mut total = 0u64;
    for (&k, &p) in m {
        if remaining == 0 {
            break;
        }
        let q = (p / mass_left).clamp(0.0, 1.0);
        let n_k = if q >= 1.0 {
            remaining
        } else {
            Binomial::new(remaining, q).unwrap().sample(rng)
        };
        total += n_k * k as u64;
        remaining -= n_k;
        mass_left -= p;
    }
    total
}

/// A rooted planar tree; vertex 0 is the root. Children lists are in planar
/// (left to right) order. `spine` is present for size-biased trees.
#[derive(Clone, Debug, PartialEq)]
pub struct RootedPlanarTree {
    pub heights: Vec<usize>,
    pub parent: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    pub spine: Option<Vec<usize>>,
}

impl RootedPlanarTree {
    pub fn root() -> usize {
        0
    }

    pub fn len(&self) -> usize {
        self.heights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heights.is_empty()
    }

    pub fn height(&self) -> usize {
        self.heights.iter().copied().max().unwrap_or(0)
    }

    /// DFS preorder, children in planar order.
    pub fn dfs_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.len());
        let mut stack = vec![0usize];
        while let Some(v) = stack.pop() {
            order.push(v);
            for &c in self.children[v].iter().rev() {
                stack.push(c);
            }
        }
        order
    }

    /// Canonical newline-delimited parent-array serialization.
    ///
    /// Header "CDLT-TREE v1", then one line "index height parent_index" per
    /// vertex in DFS preorder (root parent is -1). Round-trips byte for byte.
    pub fn to_canonical(&self) -> String {
        let order = self.dfs_order();
        let mut new_id = vec![0usize; self.len()];
        for (i, &v) in order.iter().enumerate() {
            new_id[v] = i;
        }
        let mut out = String::from("CDLT-TREE v1\n");
        for &v in &order {
            let p = match self.parent[v] {
                Some(p) => new_id[p] as i64,
                None => -1,
            };
            writeln!(out, "{} {} {}", new_id[v], self.heights[v], p).unwrap();
        }
        out
    }

    /// The height-h chain: k_n = 1 for every level.
    pub fn chain(height: usize) -> Self {
        let n = height + 1;
        RootedPlanarTree {
            heights: (0..n).collect(),
            parent: (0..n)
                .map(|v| if v == 0 { None } else { Some(v - 1) })
                .collect(),
            children: (0..n)
                .map(|v| if v + 1 < n { vec![v + 1] } else { vec![] })
                .collect(),
            spine: None,
        }
    }

    pub fn from_canonical(text: &str) -> Result<Self, GwError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| GwError::BadEncoding("empty".into()))?;
        if header != "CDLT-TREE v1" {
            return Err(GwError::BadEncoding(format!("bad header {header:?}")));
        }
        let mut heights = Vec::new();
        let mut parent: Vec<Option<usize>> = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let idx: usize = parse_field(it.next(), line)?;
            let h: usize = parse_field(it.next(), line)?;
            let p: i64 = parse_field(it.next(), line)?;
            if idx != heights.len() {
                return Err(GwError::BadEncoding(format!("non-sequential index {idx}")));
            }
            heights.push(h);
            parent.push(if p < 0 { None } else { Some(p as usize) });
        }
        let n = heights.len();
        let mut children = vec![Vec::new(); n];
        for v in 1..n {
            let p = parent[v].ok_or_else(|| GwError::BadEncoding("multiple roots".into()))?;
            if p >= n || heights[p] + 1 != heights[v] {
                return Err(GwError::BadEncoding(format!("bad parent for vertex {v}")));
            }
            children[p].push(v);
        }
        Ok(Self {
            heights,
            parent,
            children,
            spine: None,
        })
    }
}

fn parse_field<T: std::str::FromStr>(f: Option<&str>, line: &str) -> Result<T, GwError> {
    f.and_then(|s| s.parse().ok())
        .ok_or_else(|| GwError::BadEncoding(format!("bad line {line:?}")))
}

/// Samples a critical GW tree, generation truncated at `max_height`.
pub fn sample_gw_tree<R: Rng + ?Sized>(
    dist: &OffspringDistribution,
    max_height: usize,
    rng: &mut R,
) -> RootedPlanarTree {
    let mut tree = RootedPlanarTree {
        heights: vec![0],
        parent: vec![None],
        children: vec![Vec::new()],
        spine: None,
    };
    grow_gw_subtree(&mut tree, 0, max_height, dist, rng);
    tree
}

/// Expands the critical GW descendancy of `v` depth-first, truncating any
/// generation beyond `max_height`.
fn grow_gw_subtree<R: Rng + ?Sized>(
    tree: &mut RootedPlanarTree,
    v: usize,
    max_height: usize,
    dist: &OffspringDistribution,
    rng: &mut R,
) {
    if tree.heights[v] >= max_height {
        return;
    }
    let c = dist.sample(rng);
    let h = tree.heights[v] + 1;
    let first = tree.len();
    for i in 0..c {
        tree.heights.push(h);
        tree.parent.push(Some(v));
        tree.children.push(Vec::new());
        tree.children[v].push(first + i);
    }
    for i in 0..c {
        grow_gw_subtree(tree, first + i, max_height, dist, rng);
    }
}

/// Samples a size-biased (single-spine) tree of exactly height `height`.
///
/// Each spine vertex draws its offspring count from the size-biased law, one
/// uniformly chosen child continues the spine, and every sibling roots an
/// independent critical GW tree truncated at the remaining height.
pub fn sample_sb_tree<R: Rng + ?Sized>(
    dist: &OffspringDistribution,
    height: usize,
    rng: &mut R,
) -> RootedPlanarTree {
    assert!(height >= 1, "SB trees need height >= 1");
    let sb = size_bias(dist);
    let mut tree = RootedPlanarTree {
        heights: vec![0],
        parent: vec![None],
        children: vec![Vec::new()],
        spine: Some(vec![0]),
    };
    let mut spine_v = 0usize;
    for level in 0..height {
        let c = sb.sample(rng);
        debug_assert!(c >= 1);
        let spine_pos = rng.gen_range(0..c);
        let h = level + 1;
        let first = tree.len();
        for i in 0..c {
            tree.heights.push(h);
            tree.parent.push(Some(spine_v));
            tree.children.push(Vec::new());
            tree.children[spine_v].push(first + i);
        }
        for i in 0..c {
            if i != spine_pos {
                grow_gw_subtree(&mut tree, first + i, height, dist, rng);
            }
        }
        spine_v = first + spine_pos;
        tree.spine.as_mut().unwrap().push(spine_v);
    }
    tree
}

/// Exhaustively enumerates every rooted planar tree of height <= max_height
/// whose vertices have 0, 1, or 2 children. Used as the oracle universe for
/// bijection round-trip checks.
pub fn enumerate_binary_trees(max_height: usize) -> Vec<RootedPlanarTree> {
    #[derive(Clone)]
    enum Shape {
        Node(Vec<Shape>),
    }
    fn shapes(depth_left: usize) -> Vec<Shape> {
        if depth_left == 0 {
            return vec![Shape::Node(vec![])];
        }
        let sub = shapes(depth_left - 1);
        let mut out = vec![Shape::Node(vec![])];
        for s in &sub {
            out.push(Shape::Node(vec![s.clone()]));
        }
        for a in &sub {
            for b in &sub {
                out.push(Shape::Node(vec![a.clone(), b.clone()]));
            }
        }
        out
    }
    fn build(shape: &Shape, tree: &mut RootedPlanarTree, parent: Option<usize>, h: usize) {
        let v = tree.heights.len();
        tree.heights.push(h);
        tree.parent.push(parent);
        tree.children.push(vec![]);
        if let Some(p) = parent {
            tree.children[p].push(v);
        }
        let Shape::Node(kids) = shape;
        for kid in kids {
            build(kid, tree, Some(v), h + 1);
        }
    }
    shapes(max_height)
        .iter()
        .map(|s| {
            let mut t = RootedPlanarTree {
                heights: vec![],
                parent: vec![],
                children: vec![],
                spine: None,
            };
            build(s, &mut t, None, 0);
            t
        })
        .collect()
}

/// Layer sizes k_0..k_H of a tree.
pub fn layer_sizes(tree: &RootedPlanarTree) -> Vec<usize> {
    let mut k = vec![0usize; tree.height() + 1];
    for &h in &tree.heights {
        k[h] += 1;
    }
    k
}

/// Samples only the layer sizes k_0..k_N of a size-biased tree, using
/// aggregate offspring sums. Agrees in law with layer_sizes(sample_sb_tree)
/// and scales to heights of 10^3 and beyond.
pub fn sample_sb_layer_sizes<R: Rng + ?Sized>(
    dist: &OffspringDistribution,
    height: usize,
    rng: &mut R,
) -> Vec<usize> {
    let sb = size_bias(dist);
    let mut layers = Vec::with_capacity(height + 1);
    layers.push(1usize);
    let mut prev = 1u64;
    for _ in 0..height {
        let spine_children = sb.sample(rng) as u64;
        let bulk = dist.sample_offspring_sum(prev - 1, rng);
        let k = spine_children + bulk;
        layers.push(k as usize);
        prev = k;
    }
    layers
}
