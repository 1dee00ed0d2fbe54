//! Causal Lorentzian triangulations parametrized by rooted planar trees:
//! the bijection in both directions, graph distances, and the geometric
//! bounds feeding the symmetry argument.
//!
//! The triangulation of a tree with layer sizes k_0..k_N lives on the
//! cylinder: each level is a cyclically ordered circle of vertices, and the
//! strip between levels l and l+1 carries exactly k_l + k_{l+1} triangles.
//! Every vertex keeps its leftmost downward edge as its tree edge; the rest
//! of its downward arc is the rightward fan up to the parent of its cyclic
//! successor.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::gw::RootedPlanarTree;
use crate::interaction::DecayJ;

#[derive(Debug, Error)]
pub enum CdltError {
    #[error("malformed tree: {0}")]
    MalformedTree(String),
    #[error("not a triangulation: {0}")]
    NotATriangulation(String),
    #[error("unknown vertex {0}")]
    UnknownVertex(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("epsilon must lie in (0,1), got {0}")]
    BadEpsilon(f64),
    #[error("decay function violates the admissibility condition: {0}")]
    InadmissibleJ(String),
    #[error("bad serialization: {0}")]
    BadEncoding(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeTag {
    Circle,
    Tree,
    Fan,
}

impl EdgeTag {
    fn as_str(self) -> &'static str {
        match self {
            EdgeTag::Circle => "circle",
            EdgeTag::Tree => "tree",
            EdgeTag::Fan => "fan",
        }
    }
}

/// A finite rooted CDLT. Vertex ids are shared with the parametrizing tree;
/// `down_walk[v]` is the left-to-right walk of downward neighbors of `v`
/// (a cyclic arc on the level below, possibly revisiting a vertex in
/// degenerate strips).
#[derive(Clone, Debug)]
pub struct Triangulation {
    pub layers: Vec<Vec<usize>>,
    pub level: Vec<usize>,
    pub pos_in_layer: Vec<usize>,
    pub down_walk: Vec<Vec<usize>>,
    pub edges: Vec<(usize, usize, EdgeTag)>,
}

impl Triangulation {
    pub fn vertex_count(&self) -> usize {
        self.level.len()
    }

    pub fn height(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.len()).collect()
    }

    pub fn root_vertex(&self) -> usize {
        self.layers[0][0]
    }

    /// Per-strip triangle counts from the fan structure: each step of a
    /// downward walk is the base of one up-triangle and each circle edge on
    /// the upper level caps one down-triangle.
    pub fn strip_triangle_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.layers.len().saturating_sub(1)];
        for v in 0..self.vertex_count() {
            let l = self.level[v];
            if l == 0 {
                continue;
            }
            counts[l - 1] += self.down_walk[v].len() - 1; // up-triangles
            counts[l - 1] += 1; // the down-triangle capped by (v, succ(v))
        }
        counts
    }

    /// Adjacency lists for metric purposes: deduplicated, self-loops dropped.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertex_count()];
        for &(a, b, _) in &self.edges {
            if a == b {
                continue;
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// "CDLT-GRAPH v1" serialization: a levels block then the tagged edge
    /// list, in deterministic order.
    pub fn to_canonical(&self) -> String {
        let mut out = String::from("CDLT-GRAPH v1\n");
        writeln!(out, "levels {}", self.layers.len()).unwrap();
        for layer in &self.layers {
            let ids: Vec<String> = layer.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", ids.join(" ")).unwrap();
        }
        writeln!(out, "edges {}", self.edges.len()).unwrap();
        for &(a, b, tag) in &self.edges {
            writeln!(out, "{} {} {}", a, b, tag.as_str()).unwrap();
        }
        out
    }

    pub fn from_canonical(text: &str) -> Result<Self, CdltError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| CdltError::BadEncoding("empty".into()))?;
        if header != "CDLT-GRAPH v1" {
            return Err(CdltError::BadEncoding(format!("bad header {header:?}")));
        }
        let levels_line = lines
            .next()
            .ok_or_else(|| CdltError::BadEncoding("missing levels".into()))?;
        let n_levels: usize = levels_line
            .strip_prefix("levels ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CdltError::BadEncoding("bad levels line".into()))?;
        let mut layers = Vec::with_capacity(n_levels);
        for _ in 0..n_levels {
            let line = lines
                .next()
                .ok_or_else(|| CdltError::BadEncoding("missing layer".into()))?;
            let ids: Result<Vec<usize>, _> = line.split_whitespace().map(|s| s.parse()).collect();
            layers.push(ids.map_err(|_| CdltError::BadEncoding("bad layer ids".into()))?);
        }
        let edges_line = lines
            .next()
            .ok_or_else(|| CdltError::BadEncoding("missing edges".into()))?;
        let n_edges: usize = edges_line
            .strip_prefix("edges ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CdltError::BadEncoding("bad edges line".into()))?;
        let mut edges = Vec::with_capacity(n_edges);
        for _ in 0..n_edges {
            let line = lines
                .next()
                .ok_or_else(|| CdltError::BadEncoding("missing edge".into()))?;
            let mut it = line.split_whitespace();
            let a: usize = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CdltError::BadEncoding("bad edge".into()))?;
            let b: usize = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CdltError::BadEncoding("bad edge".into()))?;
            let tag = match it.next() {
                Some("circle") => EdgeTag::Circle,
                Some("tree") => EdgeTag::Tree,
                Some("fan") => EdgeTag::Fan,
                other => return Err(CdltError::BadEncoding(format!("bad tag {other:?}"))),
            };
            edges.push((a, b, tag));
        }
        let n_vertices: usize = layers.iter().map(|l| l.len()).sum();
        let mut level = vec![0usize; n_vertices];
        let mut pos_in_layer = vec![0usize; n_vertices];
        for (l, layer) in layers.iter().enumerate() {
            for (p, &v) in layer.iter().enumerate() {
                if v >= n_vertices {
                    return Err(CdltError::BadEncoding(format!("vertex id {v} out of range")));
                }
                level[v] = l;
                pos_in_layer[v] = p;
            }
        }
        // Recover the downward walks from the edge list; validates arcs.
        let tri = reconstruct_from_edges(layers, level, pos_in_layer, edges)
            .map_err(|e| CdltError::BadEncoding(e.to_string()))?;
        Ok(tri)
    }
}

/// Builds the CDLT parametrized by a rooted planar tree with k_0 = 1.
pub fn tree_to_triangulation(tree: &RootedPlanarTree) -> Result<Triangulation, CdltError> {
    let n = tree.len();
    if n == 0 {
        return Err(CdltError::MalformedTree("empty tree".into()));
    }
    for v in 0..n {
        match tree.parent[v] {
            None => {
                if v != 0 || tree.heights[v] != 0 {
                    return Err(CdltError::MalformedTree("root must be vertex 0 at height 0".into()));
                }
            }
            Some(p) => {
                if tree.heights[p] + 1 != tree.heights[v] {
                    return Err(CdltError::MalformedTree(format!(
                        "vertex {v} at height {} has parent at height {}",
                        tree.heights[v], tree.heights[p]
                    )));
                }
            }
        }
    }

    let height = tree.height();
    let mut layers: Vec<Vec<usize>> = vec![Vec::new(); height + 1];
    for &v in &tree.dfs_order() {
        layers[tree.heights[v]].push(v);
    }
    if layers[0].len() != 1 {
        return Err(CdltError::MalformedTree("k_0 must be 1".into()));
    }

    let mut level = vec![0usize; n];
    let mut pos_in_layer = vec![0usize; n];
    for (l, layer) in layers.iter().enumerate() {
        for (p, &v) in layer.iter().enumerate() {
            level[v] = l;
            pos_in_layer[v] = p;
        }
    }

    let mut down_walk: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut edges = Vec::new();
    for l in 0..layers.len() {
        let k = layers[l].len();
        for t in 0..k {
            let a = layers[l][t];
            let b = layers[l][(t + 1) % k];
            edges.push((a, b, EdgeTag::Circle));
        }
    }
    for l in 1..layers.len() {
        let below = &layers[l - 1];
        let kb = below.len();
        let layer = &layers[l];
        let k = layer.len();
        for t in 0..k {
            let u = layer[t];
            let succ = layer[(t + 1) % k];
            let p_u = tree.parent[u].unwrap();
            let p_succ = tree.parent[succ].unwrap();
            // Rightward fan from the parent of u to the parent of its cyclic
            // successor; the wrap pair closes the circle below.
            let steps = if t + 1 < k {
                pos_in_layer[p_succ] - pos_in_layer[p_u]
            } else {
                kb - pos_in_layer[p_u] + pos_in_layer[p_succ]
            };
            let mut walk = Vec::with_capacity(steps + 1);
            for s in 0..=steps {
                walk.push(below[(pos_in_layer[p_u] + s) % kb]);
            }
            edges.push((u, walk[0], EdgeTag::Tree));
            for &w in &walk[1..] {
                edges.push((u, w, EdgeTag::Fan));
            }
            down_walk[u] = walk;
        }
    }

    Ok(Triangulation {
        layers,
        level,
        pos_in_layer,
        down_walk,
        edges,
    })
}

/// Extracts the spanning tree: every vertex keeps its leftmost downward edge.
pub fn triangulation_to_tree(tri: &Triangulation) -> Result<RootedPlanarTree, CdltError> {
    let n = tri.vertex_count();
    let mut parent: Vec<Option<usize>> = vec![None; n];
    for v in 0..n {
        let l = tri.level[v];
        if l == 0 {
            continue;
        }
        let walk = &tri.down_walk[v];
        if walk.is_empty() {
            return Err(CdltError::NotATriangulation(format!(
                "vertex {v} has no downward edge"
            )));
        }
        let below = &tri.layers[l - 1];
        let kb = below.len();
        let start = tri.pos_in_layer[walk[0]];
        for (s, &w) in walk.iter().enumerate() {
            if below[(start + s) % kb] != w {
                return Err(CdltError::NotATriangulation(format!(
                    "downward neighbors of vertex {v} are not a contiguous arc"
                )));
            }
        }
        parent[v] = Some(walk[0]);
    }
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    // Planar child order is the layer order of the upper level.
    for l in 1..tri.layers.len() {
        for &v in &tri.layers[l] {
            children[parent[v].unwrap()].push(v);
        }
    }
    let root = tri.root_vertex();
    if root != 0 {
        // Tree vertex ids follow the triangulation's ids; the root is
        // whatever sits on level 0.
        return Err(CdltError::NotATriangulation("root vertex is not id 0".into()));
    }
    Ok(RootedPlanarTree {
        heights: tri.level.clone(),
        parent,
        children,
        spine: None,
    })
}

fn reconstruct_from_edges(
    layers: Vec<Vec<usize>>,
    level: Vec<usize>,
    pos_in_layer: Vec<usize>,
    edges: Vec<(usize, usize, EdgeTag)>,
) -> Result<Triangulation, CdltError> {
    let n = level.len();
    let mut down_sets: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut tree_parent: Vec<Option<usize>> = vec![None; n];
    for &(a, b, tag) in &edges {
        if tag == EdgeTag::Circle {
            continue;
        }
        let (up, down) = if level[a] == level[b] + 1 {
            (a, b)
        } else if level[b] == level[a] + 1 {
            (b, a)
        } else {
            return Err(CdltError::NotATriangulation(format!(
                "edge ({a},{b}) does not join adjacent levels"
            )));
        };
        down_sets[up].push(down);
        if tag == EdgeTag::Tree {
            tree_parent[up] = Some(down);
        }
    }
    let mut down_walk: Vec<Vec<usize>> = vec![Vec::new(); n];
    for v in 0..n {
        if level[v] == 0 {
            continue;
        }
        let p = tree_parent[v].ok_or_else(|| {
            CdltError::NotATriangulation(format!("vertex {v} has no tree edge"))
        })?;
        let below = &layers[level[v] - 1];
        let kb = below.len();
        // The walk starts at the tree parent and takes one rightward step per
        // fan edge; each down edge appears in the list with multiplicity, so
        // degenerate full-circle walks are recovered too.
        let count = down_sets[v].len();
        let mut walk = Vec::with_capacity(count);
        let mut s = pos_in_layer[p];
        walk.push(below[s]);
        for _ in 1..count {
            s = (s + 1) % kb;
            walk.push(below[s]);
        }
        let mut expect = walk.clone();
        let mut got = down_sets[v].clone();
        expect.sort_unstable();
        got.sort_unstable();
        if expect != got {
            return Err(CdltError::NotATriangulation(format!(
                "downward neighbors of vertex {v} are not a contiguous arc"
            )));
        }
        down_walk[v] = walk;
    }
    Ok(Triangulation {
        layers,
        level,
        pos_in_layer,
        down_walk,
        edges,
    })
}

/// BFS distance oracle with a bounded per-source cache.
pub struct DistanceOracle {
    adj: Vec<Vec<usize>>,
    cache: Mutex<OracleCache>,
}

struct OracleCache {
    map: HashMap<usize, Arc<Vec<u32>>>,
    order: VecDeque<usize>,
    cap: usize,
}

impl DistanceOracle {
    pub fn new(tri: &Triangulation) -> Self {
        Self::with_cache_capacity(tri, 64)
    }

    pub fn with_cache_capacity(tri: &Triangulation, cap: usize) -> Self {
        DistanceOracle {
            adj: tri.adjacency(),
            cache: Mutex::new(OracleCache {
                map: HashMap::new(),
                order: VecDeque::new(),
                cap: cap.max(1),
            }),
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.adj.len()
    }

    pub fn distances_from(&self, src: usize) -> Result<Arc<Vec<u32>>, CdltError> {
        if src >= self.adj.len() {
            return Err(CdltError::UnknownVertex(src));
        }
        {
            let cache = self.cache.lock().unwrap();
            if let Some(d) = cache.map.get(&src) {
                return Ok(Arc::clone(d));
            }
        }
        let mut dist = vec![u32::MAX; self.adj.len()];
        dist[src] = 0;
        let mut queue = VecDeque::new();
        queue.push_back(src);
        while let Some(v) = queue.pop_front() {
            let dv = dist[v];
            for &w in &self.adj[v] {
                if dist[w] == u32::MAX {
                    dist[w] = dv + 1;
                    queue.push_back(w);
                }
            }
        }
        let dist = Arc::new(dist);
        let mut cache = self.cache.lock().unwrap();
        if cache.map.len() >= cache.cap {
            if let Some(old) = cache.order.pop_front() {
                cache.map.remove(&old);
            }
        }
        cache.map.insert(src, Arc::clone(&dist));
        cache.order.push_back(src);
        Ok(dist)
    }

    pub fn distance(&self, i: usize, j: usize) -> Result<u32, CdltError> {
        if j >= self.adj.len() {
            return Err(CdltError::UnknownVertex(j));
        }
        let d = self.distances_from(i)?;
        Ok(d[j])
    }
}

/// The growth constant C = max_{i>=2} k_i / (i (ln i)^{1/2+eps}).
pub fn growth_constant(layers: &[usize], eps: f64) -> Result<f64, CdltError> {
    if !(0.0..1.0).contains(&eps) || eps == 0.0 {
        return Err(CdltError::BadEpsilon(eps));
    }
    if layers.len() < 3 {
        return Err(CdltError::EmptyInput);
    }
    let mut c: f64 = 0.0;
    for (i, &k) in layers.iter().enumerate().skip(2) {
        let denom = i as f64 * (i as f64).ln().powf(0.5 + eps);
        c = c.max(k as f64 / denom);
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug)]
pub struct TailBounded {
    pub value: f64,
    pub tail_bound: f64,
}

/// The decay majorant (1/(r ln r))^3 from the admissibility condition.
pub fn j_majorant(r: f64) -> f64 {
    if r < 2.0 {
        1.0
    } else {
        (1.0 / (r * r.ln())).powi(3)
    }
}

/// sum_{i>=1} k_i J(i) over the known layers, with a closed-form bound on
/// the truncated tail under the growth bound with the given epsilon.
pub fn j_layer_sum(layers: &[usize], j: &DecayJ, eps: f64) -> Result<TailBounded, CdltError> {
    if layers.len() < 2 {
        return Err(CdltError::EmptyInput);
    }
    if !j.is_admissible() {
        return Err(CdltError::InadmissibleJ(j.describe()));
    }
    let mut sum = 0.0;
    for (i, &k) in layers.iter().enumerate().skip(1) {
        sum += k as f64 * j.eval(i as u32);
    }
    let c = growth_constant(layers, eps).unwrap_or(0.0);
    let m = layers.len() as f64;
    // Tail term f(i) = i (ln i)^{1/2+eps} (1/(i ln i))^3 = (ln i)^{eps-5/2}/i^2,
    // bounded by f(M) + integral_M^inf dx / (x^2 (ln x)^{5/2-eps}).
    let f_m = (m.ln()).powf(eps - 2.5) / (m * m);
    let tail = c * (f_m + (m.ln()).powf(eps - 2.5) / m);
    Ok(TailBounded {
        value: sum,
        tail_bound: tail,
    })
}

/// sup_j sum_{j'} J(d(j,j')) d(j,j')^2, truncated at graph radius `truncate`;
/// the part of the finite graph beyond the radius is bounded by the majorant.
pub fn interaction_moment(
    oracle: &DistanceOracle,
    j: &DecayJ,
    truncate: u32,
) -> Result<TailBounded, CdltError> {
    let n = oracle.vertex_count();
    let mut best = 0.0f64;
    let mut best_tail = 0.0f64;
    for v in 0..n {
        let dist = oracle.distances_from(v)?;
        let mut acc = 0.0;
        let mut tail = 0.0;
        for &d in dist.iter() {
            if d == 0 || d == u32::MAX {
                continue;
            }
            let df = d as f64;
            if d <= truncate {
                acc += j.eval(d) * df * df;
            } else {
                tail += j_majorant(df) * df * df;
            }
        }
        if acc + tail > best + best_tail {
            best = acc;
            best_tail = tail;
        }
    }
    Ok(TailBounded {
        value: best,
        tail_bound: best_tail,
    })
}
