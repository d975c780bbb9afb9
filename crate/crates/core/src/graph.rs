//! Affinity-matrix assembly.
//!
//! Graph nodes are the `n_L` seeds followed by the `n_B` background points.
//! The unnormalized matrix `W0` is made of four blocks (seed→seed,
//! seed→background, background→seed, background→background); each row keeps
//! the `k` nearest candidates found across its two blocks. The diffusion
//! operator is `W = D⁻¹ (W0 + W0ᵀ)`. Test points only receive edges from
//! their `k` nearest graph nodes and never appear in `W`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::knn::{brute_force_knn, by_distance_then_id, ivf_search, IvfIndex, NeighborList, SENTINEL};
use crate::matrix::{FeatureMatrix, SparseRowMatrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EdgeWeighting {
    Constant,
    /// `exp(−x²/σ²)` with `x` the Euclidean distance.
    Gaussian { sigma: f64 },
    /// `s·(1 − exp(−λs))^k`, `s` the distance remapped to 1 at the first
    /// neighbor and 0 at the last.
    Meaningful { lambda: f64 },
}

impl Default for EdgeWeighting {
    fn default() -> Self {
        EdgeWeighting::Constant
    }
}

impl EdgeWeighting {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EdgeWeighting::Constant => Ok(()),
            EdgeWeighting::Gaussian { sigma } if sigma > 0.0 && sigma.is_finite() => Ok(()),
            EdgeWeighting::Meaningful { lambda } if lambda > 0.0 && lambda.is_finite() => Ok(()),
            EdgeWeighting::Gaussian { sigma } => Err(Error::Parameter(format!("gaussian sigma must be > 0, got {sigma}"))),
            EdgeWeighting::Meaningful { lambda } => {
                Err(Error::Parameter(format!("meaningful-neighbors lambda must be > 0, got {lambda}")))
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EdgeWeighting::Constant => "constant",
            EdgeWeighting::Gaussian { .. } => "gaussian",
            EdgeWeighting::Meaningful { .. } => "meaningful",
        }
    }

    pub fn parameter(&self) -> Option<f64> {
        match *self {
            EdgeWeighting::Constant => None,
            EdgeWeighting::Gaussian { sigma } => Some(sigma),
            EdgeWeighting::Meaningful { lambda } => Some(lambda),
        }
    }
}

impl fmt::Display for EdgeWeighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.parameter() {
            Some(p) => write!(f, "{}:{p}", self.kind()),
            None => f.write_str(self.kind()),
        }
    }
}

impl FromStr for EdgeWeighting {
    type Err = Error;

    /// `constant`, `gaussian:<sigma>` or `meaningful:<lambda>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, param) = match s.split_once(':') {
            Some((k, p)) => (k, Some(p)),
            None => (s, None),
        };
        let num = |p: Option<&str>| -> Result<f64> {
            p.and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parameter(format!("weighting {s:?} needs a numeric parameter")))
        };
        let w = match kind {
            "constant" => EdgeWeighting::Constant,
            "gaussian" => EdgeWeighting::Gaussian { sigma: num(param)? },
            "meaningful" => EdgeWeighting::Meaningful { lambda: num(param)? },
            _ => return Err(Error::Parameter(format!("unknown edge weighting {s:?}"))),
        };
        w.validate()?;
        Ok(w)
    }
}

/// Replaces the distances of `nl` by edge weights. Sentinel entries keep
/// their id and get weight 0.
pub fn weigh_edges(nl: &NeighborList, scheme: &EdgeWeighting) -> Result<NeighborList> {
    scheme.validate()?;
    let mut weights = vec![0f32; nl.indices().len()];
    for q in 0..nl.query_count() {
        let valid: Vec<f32> = nl.valid(q).map(|(d, _)| d).collect();
        let out = &mut weights[q * nl.k()..q * nl.k() + valid.len()];
        match *scheme {
            EdgeWeighting::Constant => out.fill(1.0),
            EdgeWeighting::Gaussian { sigma } => {
                for (w, &sq) in out.iter_mut().zip(&valid) {
                    *w = (-(f64::from(sq)) / (sigma * sigma)).exp() as f32;
                }
            }
            EdgeWeighting::Meaningful { lambda } => {
                let m = valid.len();
                let dist: Vec<f64> = valid.iter().map(|&sq| f64::from(sq).max(0.0).sqrt()).collect();
                let (first, last) = (dist.first().copied().unwrap_or(0.0), dist.last().copied().unwrap_or(0.0));
                let span = last - first;
                for (w, &x) in out.iter_mut().zip(&dist) {
                    let s = if span > 0.0 { ((last - x) / span).clamp(0.0, 1.0) } else { 1.0 };
                    *w = (s * (1.0 - (-lambda * s).exp()).powi(m as i32)) as f32;
                }
            }
        }
    }
    NeighborList::new(nl.query_count(), nl.k(), nl.indices().to_vec(), weights)
}

/// Median Euclidean neighbor distance over (a sample of) the rows, skipping
/// zero distances (self-matches). Used as the default Gaussian bandwidth.
pub fn median_neighbor_distance(nl: &NeighborList, max_rows: usize, seed: u64) -> Option<f64> {
    let rows: Vec<usize> = if nl.query_count() > max_rows {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = rand::seq::index::sample(&mut rng, nl.query_count(), max_rows).into_vec();
        s.sort_unstable();
        s
    } else {
        (0..nl.query_count()).collect()
    };
    let mut d: Vec<f64> = rows
        .iter()
        .flat_map(|&q| nl.valid(q).map(|(sq, _)| f64::from(sq)))
        .filter(|&sq| sq > 0.0)
        .map(f64::sqrt)
        .collect();
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    Some(d[d.len() / 2])
}

/// Neighbor lists of the four `W0` blocks, with squared distances. Ids are
/// local to the searched partition (seed index or background index).
#[derive(Clone, Debug)]
pub struct BlockLists {
    /// seeds searched among seeds
    pub ll: NeighborList,
    /// seeds searched among background
    pub lb: NeighborList,
    /// background searched among seeds
    pub bl: NeighborList,
    /// background searched among background (the off-line block)
    pub bb: NeighborList,
}

/// How the background blocks are searched.
#[derive(Clone, Copy, Debug)]
pub enum SearchBackend<'a> {
    Exact,
    Ivf { index: &'a IvfIndex, n_probe: usize },
}

impl SearchBackend<'_> {
    fn search(&self, queries: &FeatureMatrix, corpus: &FeatureMatrix, k: usize) -> Result<NeighborList> {
        match *self {
            SearchBackend::Exact => brute_force_knn(queries, corpus, k),
            SearchBackend::Ivf { index, n_probe } => {
                if index.len() != corpus.n_rows() {
                    return Err(Error::shape("SearchBackend::Ivf", corpus.n_rows(), index.len()));
                }
                ivf_search(index, queries, k, n_probe)
            }
        }
    }
}

/// Off-line stage: k-NN graph of the background among itself.
pub fn background_block(background: &FeatureMatrix, k: usize, backend: SearchBackend<'_>) -> Result<NeighborList> {
    backend.search(background, background, k.min(background.n_rows()))
}

impl BlockLists {
    /// On-line stage: searches the three blocks involving seeds and reuses a
    /// precomputed background block when given. Seed-involving searches with
    /// the seeds as corpus are brute force.
    pub fn compute(
        seeds: &FeatureMatrix,
        background: &FeatureMatrix,
        k: usize,
        bb: Option<NeighborList>,
        backend: SearchBackend<'_>,
    ) -> Result<Self> {
        let (n_l, n_b) = (seeds.n_rows(), background.n_rows());
        let k_l = k.min(n_l);
        let k_b = k.min(n_b);
        let bb = match bb {
            Some(bb) => bb,
            None => background_block(background, k, backend)?,
        };
        let lb = if n_b == 0 {
            NeighborList::from_rows(0, &vec![Vec::new(); n_l])
        } else {
            backend.search(seeds, background, k_b)?
        };
        Ok(Self {
            ll: brute_force_knn(seeds, seeds, k_l)?,
            lb,
            bl: if n_l == 0 {
                NeighborList::from_rows(0, &vec![Vec::new(); n_b])
            } else {
                brute_force_knn(background, seeds, k_l)?
            },
            bb,
        })
    }

    pub fn n_seeds(&self) -> usize {
        self.ll.query_count()
    }

    pub fn n_background(&self) -> usize {
        self.bb.query_count()
    }

    /// Merges `[LL LB]` and `[BL BB]` row-wise into one list over graph node
    /// ids, keeping the `k` nearest candidates per row. A node reported by
    /// both blocks of a row keeps its smaller distance.
    pub fn merge(&self, k: usize) -> Result<NeighborList> {
        let (n_l, n_b) = (self.n_seeds(), self.n_background());
        if self.lb.query_count() != n_l || self.bl.query_count() != n_b {
            return Err(Error::shape(
                "BlockLists::merge",
                format!("{n_l} seed rows / {n_b} background rows"),
                format!("{} / {}", self.lb.query_count(), self.bl.query_count()),
            ));
        }
        let (k_l, k_b) = (k.min(n_l), k.min(n_b));
        let checks = [("LL", &self.ll, k_l), ("BL", &self.bl, k_l), ("LB", &self.lb, k_b), ("BB", &self.bb, k_b)];
        for (name, nl, want) in checks {
            if nl.query_count() > 0 && nl.k() != want {
                return Err(Error::Parameter(format!(
                    "inconsistent k: block {name} has k = {}, expected {want}",
                    nl.k()
                )));
            }
        }
        let offset = n_l as u32;
        let mut rows = Vec::with_capacity(n_l + n_b);
        for i in 0..n_l {
            rows.push(merge_row(self.ll.valid(i), self.lb.valid(i).map(|(d, id)| (d, id + offset)), k));
        }
        for i in 0..n_b {
            rows.push(merge_row(self.bl.valid(i), self.bb.valid(i).map(|(d, id)| (d, id + offset)), k));
        }
        let out_k = k.min(n_l + n_b);
        Ok(NeighborList::from_rows(out_k, &rows))
    }
}

fn merge_row(
    a: impl Iterator<Item = (f32, u32)>,
    b: impl Iterator<Item = (f32, u32)>,
    k: usize,
) -> Vec<(f32, u32)> {
    let mut best: BTreeMap<u32, f32> = BTreeMap::new();
    for (d, id) in a.chain(b) {
        best.entry(id)
            .and_modify(|cur| {
                if d < *cur {
                    *cur = d;
                }
            })
            .or_insert(d);
    }
    let mut row: Vec<(f32, u32)> = best.into_iter().map(|(id, d)| (d, id)).collect();
    row.sort_unstable_by(by_distance_then_id);
    row.truncate(k);
    row
}

/// Sparse `W0` from a merged, weighted neighbor list over `n_nodes` nodes.
/// Sentinel entries are dropped.
pub fn neighbors_to_sparse(weighted: &NeighborList, n_nodes: usize) -> Result<SparseRowMatrix> {
    let rows: Vec<Vec<(u32, f32)>> = (0..weighted.query_count())
        .map(|q| weighted.valid(q).map(|(w, id)| (id, w)).collect())
        .collect();
    if let Some(bad) = rows.iter().flatten().find(|(id, _)| *id as usize >= n_nodes) {
        return Err(Error::Data(format!("neighbor id {} out of range for {n_nodes} nodes", bad.0)));
    }
    SparseRowMatrix::from_rows(n_nodes, rows)
}

/// Builds `W0`: merge the block lists, weight the merged edges, convert to
/// sparse form.
pub fn assemble_w0(blocks: &BlockLists, k: usize, scheme: &EdgeWeighting) -> Result<SparseRowMatrix> {
    let merged = blocks.merge(k)?;
    let weighted = weigh_edges(&merged, scheme)?;
    neighbors_to_sparse(&weighted, blocks.n_seeds() + blocks.n_background())
}

/// `D⁻¹ (W0 + W0ᵀ)`; all-zero rows stay zero.
pub fn symmetrize_and_normalize(w0: &SparseRowMatrix) -> Result<SparseRowMatrix> {
    if w0.n_rows() != w0.n_cols() {
        return Err(Error::shape(
            "symmetrize_and_normalize",
            "square matrix",
            format!("{}x{}", w0.n_rows(), w0.n_cols()),
        ));
    }
    let s = w0.add(&w0.transpose())?;
    Ok(row_normalize(&s))
}

/// Divides each row with a positive sum by that sum.
pub fn row_normalize(m: &SparseRowMatrix) -> SparseRowMatrix {
    let sums = m.row_sums();
    let mut values = m.values().to_vec();
    for (i, &s) in sums.iter().enumerate() {
        if s > 0.0 {
            let (a, b) = (m.row_offsets()[i], m.row_offsets()[i + 1]);
            for v in &mut values[a..b] {
                *v = (f64::from(*v) / s) as f32;
            }
        }
    }
    SparseRowMatrix::from_raw_parts_unchecked(
        m.n_rows(),
        m.n_cols(),
        m.row_offsets().to_vec(),
        m.col_indices().to_vec(),
        values,
    )
}

/// Incoming edges of out-of-sample points: their `k` nearest graph nodes,
/// weighted by `scheme` and L1-normalized per row. `k` is capped at the
/// number of graph nodes.
pub fn build_test_edges(
    test: &FeatureMatrix,
    graph_nodes: &FeatureMatrix,
    k: usize,
    scheme: &EdgeWeighting,
) -> Result<NeighborList> {
    if graph_nodes.is_empty() {
        return Err(Error::Data("cannot connect test points to an empty graph".into()));
    }
    let nl = brute_force_knn(test, graph_nodes, k.min(graph_nodes.n_rows()))?;
    let weighted = weigh_edges(&nl, scheme)?;
    Ok(normalize_edge_rows(&weighted))
}

/// L1-normalizes the weights of every row that has a positive total.
pub fn normalize_edge_rows(nl: &NeighborList) -> NeighborList {
    let mut w = nl.distances().to_vec();
    for q in 0..nl.query_count() {
        let (ids, ws) = nl.row(q);
        let sum: f64 = ids
            .iter()
            .zip(ws)
            .filter(|(&id, _)| id != SENTINEL)
            .map(|(_, &x)| f64::from(x))
            .sum();
        if sum > 0.0 {
            for (j, &id) in ids.iter().enumerate() {
                if id != SENTINEL {
                    w[q * nl.k() + j] = (f64::from(ws[j]) / sum) as f32;
                }
            }
        }
    }
    NeighborList::new(nl.query_count(), nl.k(), nl.indices().to_vec(), w).expect("same shape")
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphMeta {
    pub n_seeds: usize,
    pub n_background: usize,
    pub k: usize,
    pub weighting: EdgeWeighting,
}

/// Everything the diffusion stage needs from graph construction.
#[derive(Clone, Debug)]
pub struct GraphBundle {
    /// Row-stochastic operator over the `N` graph nodes.
    pub w: SparseRowMatrix,
    /// Pre-symmetrization weights.
    pub w0: SparseRowMatrix,
    /// Normalized incoming edges of out-of-sample points.
    pub test_edges: NeighborList,
    pub meta: GraphMeta,
}

impl GraphBundle {
    /// One-shot construction from features already split by role.
    pub fn build(
        seeds: &FeatureMatrix,
        background: &FeatureMatrix,
        test: &FeatureMatrix,
        k: usize,
        weighting: EdgeWeighting,
        backend: SearchBackend<'_>,
    ) -> Result<Self> {
        let blocks = BlockLists::compute(seeds, background, k, None, backend)?;
        Self::from_blocks(&blocks, seeds, background, test, k, weighting)
    }

    pub fn from_blocks(
        blocks: &BlockLists,
        seeds: &FeatureMatrix,
        background: &FeatureMatrix,
        test: &FeatureMatrix,
        k: usize,
        weighting: EdgeWeighting,
    ) -> Result<Self> {
        let w0 = assemble_w0(blocks, k, &weighting)?;
        let w = symmetrize_and_normalize(&w0)?;
        let nodes = FeatureMatrix::vstack(&[seeds, background])?;
        let test_edges = if test.is_empty() {
            NeighborList::empty(k.min(nodes.n_rows()))
        } else {
            build_test_edges(test, &nodes, k, &weighting)?
        };
        Ok(Self {
            w,
            w0,
            test_edges,
            meta: GraphMeta {
                n_seeds: seeds.n_rows(),
                n_background: background.n_rows(),
                k,
                weighting,
            },
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.w.n_rows()
    }

    /// Writes `w0.sprm`, `w.sprm`, `test_edges.knnl` and `graph.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.w0.save(dir.join("w0.sprm"))?;
        self.w.save(dir.join("w.sprm"))?;
        self.test_edges.save(dir.join("test_edges.knnl"))?;
        let mut text = format!(
            "n_L={}\nn_B={}\nk={}\nweighting={}\n",
            self.meta.n_seeds,
            self.meta.n_background,
            self.meta.k,
            self.meta.weighting.kind()
        );
        if let Some(p) = self.meta.weighting.parameter() {
            text.push_str(&format!("weighting_param={p}\n"));
        }
        std::fs::write(dir.join("graph.txt"), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("graph.txt"))?;
        let kv = parse_key_values(&text)?;
        let get = |key: &str| -> Result<&String> {
            kv.get(key).ok_or_else(|| Error::Format(format!("graph.txt missing {key}")))
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?.parse().map_err(|_| Error::Format(format!("graph.txt: bad {key}")))
        };
        let weighting = match kv.get("weighting_param") {
            Some(p) => format!("{}:{p}", get("weighting")?).parse()?,
            None => get("weighting")?.parse()?,
        };
        let meta = GraphMeta {
            n_seeds: num("n_L")?,
            n_background: num("n_B")?,
            k: num("k")?,
            weighting,
        };
        let w0 = SparseRowMatrix::load(dir.join("w0.sprm"))?;
        let w = SparseRowMatrix::load(dir.join("w.sprm"))?;
        let test_edges = NeighborList::load(dir.join("test_edges.knnl"))?;
        let n = meta.n_seeds + meta.n_background;
        if w.n_rows() != n || w.n_cols() != n || w0.n_rows() != n {
            return Err(Error::Format(format!("graph matrices do not match n_L + n_B = {n}")));
        }
        Ok(Self { w, w0, test_edges, meta })
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("line {}: expected key=value", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
