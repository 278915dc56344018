//! Spatial KNN graphs over patch centres and their normalized adjacency.
//!
//! The normalized operator is stored densely, so memory grows as O(n²) in
//! the number of patches: a 2,000-patch slide needs about 32 MB.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{Label, PatchRecord};
use crate::numerics::{NumericsError, Tensor};

/// Neighbourhood size used for slide graphs.
pub const DEFAULT_K: usize = 9;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("graph needs at least one node")]
    Empty,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("non-finite coordinate at node {index}")]
    NonFiniteCoordinate { index: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Undirected simple graph. Each undirected edge is stored as both
/// `(i, j)` and `(j, i)`; no self-loops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    /// Builds the union-symmetrized graph from any list of directed pairs.
    /// Self-loops and duplicates are dropped.
    pub fn from_directed(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut edges: Vec<(usize, usize)> = pairs
            .into_iter()
            .filter(|(i, j)| i != j)
            .flat_map(|(i, j)| [(i, j), (j, i)])
            .collect();
        for &(i, j) in &edges {
            assert!(i < n && j < n, "edge ({i}, {j}) out of range for {n} nodes");
        }
        edges.sort_unstable();
        edges.dedup();
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &edges {
            neighbors[i].push(j);
        }
        Self {
            n,
            edges,
            neighbors,
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Sorted directed pairs, both orientations present.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Each undirected edge once, as `(i, j)` with `i < j`.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        self.edges.iter().copied().filter(|(i, j)| i < j).collect()
    }

    /// Sorted neighbour lists, excluding the node itself.
    pub fn neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }
}

fn check_coords(coords: &[[f64; 2]]) -> Result<(), GraphError> {
    match coords
        .iter()
        .position(|c| !(c[0].is_finite() && c[1].is_finite()))
    {
        Some(index) => Err(GraphError::NonFiniteCoordinate { index }),
        None => Ok(()),
    }
}

/// For every node, its `min(k, n - 1)` nearest other nodes by Euclidean
/// distance, nearest first; equal distances go to the lower index.
pub fn knn_directed(coords: &[[f64; 2]], k: usize) -> Result<Vec<Vec<usize>>, GraphError> {
    if coords.is_empty() {
        return Err(GraphError::Empty);
    }
    if k == 0 {
        return Err(GraphError::ZeroK);
    }
    check_coords(coords)?;
    let n = coords.len();
    let k = k.min(n - 1);
    let mut out = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (i, p) in coords.iter().enumerate() {
        cand.clear();
        cand.extend(coords.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, q)| {
            let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
            (dx * dx + dy * dy, j)
        }));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k > 0 && k < cand.len() {
            cand.select_nth_unstable_by(k - 1, cmp);
        }
        let mut chosen = cand[..k].to_vec();
        chosen.sort_unstable_by(cmp);
        out.push(chosen.into_iter().map(|(_, j)| j).collect());
    }
    Ok(out)
}

/// KNN graph symmetrized by union.
pub fn knn_graph(coords: &[[f64; 2]], k: usize) -> Result<Adjacency, GraphError> {
    let directed = knn_directed(coords, k)?;
    Ok(Adjacency::from_directed(
        coords.len(),
        directed
            .iter()
            .enumerate()
            .flat_map(|(i, js)| js.iter().map(move |&j| (i, j))),
    ))
}

/// Dense `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree matrix of `A + I`.
pub fn normalized_adjacency(adj: &Adjacency) -> Tensor {
    let n = adj.node_count();
    let deg: Vec<f64> = (0..n).map(|v| (adj.degree(v) + 1) as f64).collect();
    let mut out = Tensor::zeros(n, n);
    for v in 0..n {
        out.set(v, v, 1.0 / deg[v]);
    }
    for &(i, j) in adj.edges() {
        out.set(i, j, 1.0 / (deg[i] * deg[j]).sqrt());
    }
    out
}

/// One slide as a graph: node `i` is the `i`-th patch record.
#[derive(Clone, Debug)]
pub struct WsiGraph {
    pub slide_id: String,
    pub patch_ids: Vec<u32>,
    pub coords: Vec<[f64; 2]>,
    pub feat_a: Tensor,
    pub feat_b: Tensor,
    pub adj: Adjacency,
    pub norm_adj: Tensor,
    pub label: Option<Label>,
}

impl WsiGraph {
    /// Assembles a graph from raw parts. Feature widths are not fixed here;
    /// the model checks them against its own configuration.
    pub fn from_parts(
        slide_id: impl Into<String>,
        patch_ids: Vec<u32>,
        coords: Vec<[f64; 2]>,
        feat_a: Tensor,
        feat_b: Tensor,
        k: usize,
        label: Option<Label>,
    ) -> Result<Self, GraphError> {
        let n = coords.len();
        if feat_a.rows() != n || feat_b.rows() != n || patch_ids.len() != n {
            return Err(GraphError::Shape(format!(
                "{n} coordinates, {} patch ids, feature rows {} and {}",
                patch_ids.len(),
                feat_a.rows(),
                feat_b.rows()
            )));
        }
        let adj = knn_graph(&coords, k)?;
        let norm_adj = normalized_adjacency(&adj);
        Ok(Self {
            slide_id: slide_id.into(),
            patch_ids,
            coords,
            feat_a,
            feat_b,
            adj,
            norm_adj,
            label,
        })
    }

    pub fn node_count(&self) -> usize {
        self.coords.len()
    }

    /// Writes `<stem>_edges.csv` (`src,dst`, one row per undirected edge) and
    /// `<stem>_nodes.csv` (`node,patch_id,x,y`) into `dir`.
    pub fn export_csv(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), GraphError> {
        let mut edges = String::from("src,dst\n");
        for (i, j) in self.adj.undirected_edges() {
            let _ = writeln!(edges, "{i},{j}");
        }
        let mut nodes = String::from("node,patch_id,x,y\n");
        for (i, (c, id)) in self.coords.iter().zip(&self.patch_ids).enumerate() {
            let _ = writeln!(nodes, "{i},{id},{},{}", c[0], c[1]);
        }
        let ep = dir.join(format!("{stem}_edges.csv"));
        let np = dir.join(format!("{stem}_nodes.csv"));
        for (p, body) in [(&ep, edges), (&np, nodes)] {
            fs::write(p, body).map_err(|source| GraphError::Io {
                path: p.clone(),
                source,
            })?;
        }
        Ok((ep, np))
    }
}

/// Builds the graph of one slide from its patch records, in record order.
pub fn build_wsi_graph(
    slide_id: impl Into<String>,
    records: &[PatchRecord],
    k: usize,
    label: Option<Label>,
) -> Result<WsiGraph, GraphError> {
    if records.is_empty() {
        return Err(GraphError::Empty);
    }
    let dim_a = records[0].feat_a.len();
    let dim_b = records[0].feat_b.len();
    let mut a = Vec::with_capacity(records.len() * dim_a);
    let mut b = Vec::with_capacity(records.len() * dim_b);
    for r in records {
        if r.feat_a.len() != dim_a || r.feat_b.len() != dim_b {
            return Err(GraphError::Shape(format!(
                "patch {} has feature dims ({}, {}), expected ({dim_a}, {dim_b})",
                r.patch_id,
                r.feat_a.len(),
                r.feat_b.len()
            )));
        }
        a.extend_from_slice(&r.feat_a);
        b.extend_from_slice(&r.feat_b);
    }
    WsiGraph::from_parts(
        slide_id,
        records.iter().map(|r| r.patch_id).collect(),
        records.iter().map(|r| [r.x, r.y]).collect(),
        Tensor::new(records.len(), dim_a, a)?,
        Tensor::new(records.len(), dim_b, b)?,
        k,
        label,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_points_k1() {
        let coords = [[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]];
        assert_eq!(knn_directed(&coords, 1).unwrap(), vec![vec![1], vec![0], vec![1]]);
        assert_eq!(knn_graph(&coords, 1).unwrap().undirected_edges(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn single_node_has_no_edges() {
        for k in [1, 9, 100] {
            let adj = knn_graph(&[[5.0, 5.0]], k).unwrap();
            assert!(adj.edges().is_empty());
            assert_eq!(normalized_adjacency(&adj).data(), &[1.0]);
        }
    }

    #[test]
    fn unit_square_k3_is_complete() {
        let adj = knn_graph(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], 3).unwrap();
        assert_eq!(adj.undirected_edges().len(), 6);
    }

    #[test]
    fn equidistant_tie_goes_to_lower_index() {
        let coords = [[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0]];
        assert_eq!(knn_directed(&coords, 1).unwrap()[0], vec![1]);
    }

    #[test]
    fn two_node_and_path_normalization() {
        let two = normalized_adjacency(&Adjacency::from_directed(2, [(0, 1)]));
        assert_eq!(two.data(), &[0.5, 0.5, 0.5, 0.5]);

        let path = normalized_adjacency(&Adjacency::from_directed(3, [(0, 1), (1, 2)]));
        let s6 = 1.0 / 6f64.sqrt();
        let expected = Tensor::from_rows(&[[0.5, s6, 0.0], [s6, 1.0 / 3.0, s6], [0.0, s6, 0.5]]).unwrap();
        assert!(path.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn rejects_nan_coordinates_and_empty_input() {
        assert!(matches!(
            knn_graph(&[[0.0, 0.0], [f64::NAN, 1.0]], 1),
            Err(GraphError::NonFiniteCoordinate { index: 1 })
        ));
        assert!(matches!(knn_graph(&[], 1), Err(GraphError::Empty)));
        assert!(matches!(build_wsi_graph("s", &[], 9, None), Err(GraphError::Empty)));
    }

    #[test]
    fn edge_export() {
        let g = WsiGraph::from_parts(
            "s",
            vec![10, 11, 12],
            vec![[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]],
            Tensor::zeros(3, 2),
            Tensor::zeros(3, 2),
            1,
            None,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (e, n) = g.export_csv(dir.path(), "s").unwrap();
        assert_eq!(fs::read_to_string(e).unwrap(), "src,dst\n0,1\n1,2\n");
        assert!(fs::read_to_string(n).unwrap().starts_with("node,patch_id,x,y\n0,10,0,0\n"));
    }
}
