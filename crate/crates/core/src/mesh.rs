//! Computational meshes viewed as undirected graphs.
//!
//! A [`MeshGraph`] owns node coordinates, the canonical edge list (each
//! undirected edge once, smaller index first) and a CSR neighbor index
//! that expands every edge in both directions. [`EdgePseudoCoords`] shares
//! the CSR slot layout and stores the relative position of each directed
//! edge.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Sorted per-node adjacency lists in compressed-row form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl NeighborIndex {
    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.indices[self.offsets[u]..self.offsets[u + 1]]
    }

    #[inline]
    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    /// CSR slot range of node `u`; slot `k` holds the directed edge `u -> indices[k]`.
    #[inline]
    pub fn slots(&self, u: usize) -> std::ops::Range<usize> {
        self.offsets[u]..self.offsets[u + 1]
    }

    pub fn num_directed_edges(&self) -> usize {
        self.indices.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes()).map(|u| self.degree(u)).collect()
    }
}

fn normalize_edge(edge: [usize; 2]) -> [usize; 2] {
    if edge[0] <= edge[1] {
        edge
    } else {
        [edge[1], edge[0]]
    }
}

/// Builds sorted neighbor lists from an undirected edge list.
///
/// Edges may be given in any order and orientation; `(i, j)` and `(j, i)`
/// describe the same edge and listing both is a duplicate.
pub fn build_neighbor_index(edges: &[[usize; 2]], num_nodes: usize) -> Result<NeighborIndex> {
    let mut canonical: Vec<[usize; 2]> = Vec::with_capacity(edges.len());
    for &edge in edges {
        let [i, j] = edge;
        if i >= num_nodes || j >= num_nodes {
            return Err(Error::Validation(format!(
                "edge ({i}, {j}) references a node outside [0, {num_nodes})"
            )));
        }
        if i == j {
            return Err(Error::Validation(format!("edge ({i}, {j}) is a self-loop")));
        }
        canonical.push(normalize_edge(edge));
    }
    canonical.sort_unstable();
    if let Some(w) = canonical.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Validation(format!(
            "edge ({}, {}) is listed more than once",
            w[0][0], w[0][1]
        )));
    }

    let mut degree = vec![0usize; num_nodes];
    for &[i, j] in &canonical {
        degree[i] += 1;
        degree[j] += 1;
    }
    let mut offsets = Vec::with_capacity(num_nodes + 1);
    offsets.push(0);
    for d in &degree {
        offsets.push(offsets.last().unwrap() + d);
    }
    let mut fill = offsets[..num_nodes].to_vec();
    let mut indices = vec![0usize; offsets[num_nodes]];
    for &[i, j] in &canonical {
        indices[fill[i]] = j;
        fill[i] += 1;
        indices[fill[j]] = i;
        fill[j] += 1;
    }
    for u in 0..num_nodes {
        indices[offsets[u]..offsets[u + 1]].sort_unstable();
    }
    Ok(NeighborIndex { offsets, indices })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshGraph {
    num_nodes: usize,
    dim: usize,
    coords: Vec<f64>,
    edges: Vec<[usize; 2]>,
    neighbors: NeighborIndex,
}

#[derive(Serialize, Deserialize)]
struct MeshFile {
    num_nodes: usize,
    dim: usize,
    coords: Vec<Vec<f64>>,
    edges: Vec<[usize; 2]>,
}

impl MeshGraph {
    /// Validates and indexes a mesh. `coords` is node-major (`num_nodes * dim`).
    /// The graph must be connected.
    pub fn new(num_nodes: usize, dim: usize, coords: Vec<f64>, edges: Vec<[usize; 2]>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("mesh dimension must be positive".into()));
        }
        Error::check_dim("mesh coordinates", num_nodes * dim, coords.len())?;
        if let Some(pos) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::Validation(format!(
                "node {} has a non-finite coordinate",
                pos / dim
            )));
        }
        let neighbors = build_neighbor_index(&edges, num_nodes)?;
        let mut edges: Vec<[usize; 2]> = edges.into_iter().map(normalize_edge).collect();
        edges.sort_unstable();
        let mesh = MeshGraph {
            num_nodes,
            dim,
            coords,
            edges,
            neighbors,
        };
        mesh.check_connected()?;
        Ok(mesh)
    }

    fn check_connected(&self) -> Result<()> {
        if self.num_nodes == 0 {
            return Err(Error::Validation("mesh has no nodes".into()));
        }
        let mut seen = vec![false; self.num_nodes];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        if count != self.num_nodes {
            let first = seen.iter().position(|s| !s).unwrap();
            return Err(Error::Validation(format!(
                "mesh is not connected: node {first} is unreachable from node 0"
            )));
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn node(&self, u: usize) -> &[f64] {
        &self.coords[u * self.dim..(u + 1) * self.dim]
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn neighbors(&self) -> &NeighborIndex {
        &self.neighbors
    }

    /// Relabels node `u` as `perm[u]`, moving coordinates and edges along.
    pub fn relabel(&self, perm: &[usize]) -> Result<MeshGraph> {
        Error::check_dim("permutation", self.num_nodes, perm.len())?;
        let mut seen = vec![false; self.num_nodes];
        for &p in perm {
            if p >= self.num_nodes || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Validation("relabeling is not a permutation".into()));
            }
        }
        let mut coords = vec![0.0; self.coords.len()];
        for u in 0..self.num_nodes {
            coords[perm[u] * self.dim..(perm[u] + 1) * self.dim].copy_from_slice(self.node(u));
        }
        let edges = self.edges.iter().map(|&[i, j]| [perm[i], perm[j]]).collect();
        MeshGraph::new(self.num_nodes, self.dim, coords, edges)
    }

    /// SHA-256 over node count, dimension, coordinate bits and canonical edges.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.num_nodes as u64).to_le_bytes());
        hasher.update((self.dim as u64).to_le_bytes());
        for c in &self.coords {
            hasher.update(c.to_bits().to_le_bytes());
        }
        for &[i, j] in &self.edges {
            hasher.update((i as u64).to_le_bytes());
            hasher.update((j as u64).to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: MeshFile =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        Error::check_dim("mesh.json coords rows", file.num_nodes, file.coords.len())?;
        let mut coords = Vec::with_capacity(file.num_nodes * file.dim);
        for (u, row) in file.coords.iter().enumerate() {
            if row.len() != file.dim {
                return Err(Error::format(
                    path,
                    format!("node {u} has {} coordinates, expected {}", row.len(), file.dim),
                ));
            }
            coords.extend_from_slice(row);
        }
        MeshGraph::new(file.num_nodes, file.dim, coords, file.edges)
    }

    pub fn store_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = MeshFile {
            num_nodes: self.num_nodes,
            dim: self.dim,
            coords: self.coords.chunks(self.dim).map(<[f64]>::to_vec).collect(),
            edges: self.edges.clone(),
        };
        let text = serde_json::to_string(&file).expect("mesh serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Relative positions `e_uv = x_v - x_u` for every directed edge, stored in
/// the CSR slot order of the mesh neighbor index.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePseudoCoords {
    dim: usize,
    vectors: Vec<f64>,
}

impl EdgePseudoCoords {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `e_{u v}` for CSR slot `slot` (edge `u -> v`).
    #[inline]
    pub fn slot(&self, slot: usize) -> &[f64] {
        &self.vectors[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn edge(&self, mesh: &MeshGraph, u: usize, v: usize) -> Option<&[f64]> {
        let nbrs = mesh.neighbors().neighbors(u);
        let k = nbrs.binary_search(&v).ok()?;
        Some(self.slot(mesh.neighbors().slots(u).start + k))
    }
}

pub fn compute_pseudo_coords(mesh: &MeshGraph) -> Result<EdgePseudoCoords> {
    let dim = mesh.dim();
    let index = mesh.neighbors();
    let mut vectors = Vec::with_capacity(index.num_directed_edges() * dim);
    for u in 0..mesh.num_nodes() {
        let xu = mesh.node(u);
        for &v in index.neighbors(u) {
            let xv = mesh.node(v);
            let start = vectors.len();
            vectors.extend(xv.iter().zip(xu).map(|(a, b)| a - b));
            if vectors[start..].iter().all(|&c| c == 0.0) {
                return Err(Error::Geometry(format!(
                    "edge ({u}, {v}) has coincident endpoints"
                )));
            }
        }
    }
    Ok(EdgePseudoCoords { dim, vectors })
}

/// Structured `n x n` grid on the unit square with 4-connectivity, row-major.
pub fn unit_square_grid(n: usize) -> Result<MeshGraph> {
    if n < 2 {
        return Err(Error::Validation("grid needs at least 2 nodes per side".into()));
    }
    let h = 1.0 / (n - 1) as f64;
    let mut coords = Vec::with_capacity(2 * n * n);
    let mut edges = Vec::new();
    for j in 0..n {
        for i in 0..n {
            coords.push(i as f64 * h);
            coords.push(j as f64 * h);
            let u = j * n + i;
            if i + 1 < n {
                edges.push([u, u + 1]);
            }
            if j + 1 < n {
                edges.push([u, u + n]);
            }
        }
    }
    MeshGraph::new(n * n, 2, coords, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> MeshGraph {
        MeshGraph::new(3, 1, vec![0.0, 1.0, 2.0], vec![[0, 1], [1, 2]]).unwrap()
    }

    #[test]
    fn triangle_neighbors() {
        let idx = build_neighbor_index(&[[0, 1], [1, 2], [0, 2]], 3).unwrap();
        assert_eq!(idx.neighbors(0), &[1, 2]);
        assert_eq!(idx.neighbors(1), &[0, 2]);
        assert_eq!(idx.neighbors(2), &[0, 1]);
    }

    #[test]
    fn path_degrees() {
        assert_eq!(path3().neighbors().degrees(), vec![1, 2, 1]);
    }

    #[test]
    fn grid_degrees_match_brute_force_scan() {
        let n = 5;
        let mesh = unit_square_grid(n).unwrap();
        let h = 1.0 / (n - 1) as f64;
        for u in 0..mesh.num_nodes() {
            // brute force: every other node at lattice distance exactly h
            let brute: Vec<usize> = (0..mesh.num_nodes())
                .filter(|&v| {
                    let d: f64 = mesh
                        .node(u)
                        .iter()
                        .zip(mesh.node(v))
                        .map(|(a, b)| (a - b).abs())
                        .sum();
                    v != u && (d - h).abs() < 1e-12
                })
                .collect();
            assert_eq!(mesh.neighbors().neighbors(u), brute.as_slice());
        }
        let degrees = mesh.neighbors().degrees();
        for &corner in &[0, n - 1, n * (n - 1), n * n - 1] {
            assert_eq!(degrees[corner], 2);
        }
        assert_eq!(degrees[2 * n + 2], 4);
    }

    #[test]
    fn rejects_bad_edges() {
        let err = build_neighbor_index(&[[0, 3]], 3).unwrap_err();
        assert!(err.to_string().contains("(0, 3)"));
        let err = build_neighbor_index(&[[1, 1]], 3).unwrap_err();
        assert!(err.to_string().contains("self-loop"));
        let err = build_neighbor_index(&[[0, 1], [1, 0]], 3).unwrap_err();
        assert!(err.to_string().contains("more than once"));
    }

    #[test]
    fn rejects_disconnected() {
        let err = MeshGraph::new(4, 1, vec![0.0, 1.0, 2.0, 3.0], vec![[0, 1], [2, 3]]).unwrap_err();
        assert!(err.to_string().contains("not connected"));
    }

    #[test]
    fn pseudo_coords_two_nodes() {
        let mesh = MeshGraph::new(2, 2, vec![0.0, 0.0, 1.0, 0.0], vec![[0, 1]]).unwrap();
        let pc = compute_pseudo_coords(&mesh).unwrap();
        assert_eq!(pc.edge(&mesh, 0, 1).unwrap(), &[1.0, 0.0]);
        assert_eq!(pc.edge(&mesh, 1, 0).unwrap(), &[-1.0, 0.0]);
    }

    #[test]
    fn pseudo_coords_grid_norms_and_antisymmetry() {
        let mesh = unit_square_grid(6).unwrap();
        let h = 0.2;
        let pc = compute_pseudo_coords(&mesh).unwrap();
        for &[u, v] in mesh.edges() {
            let a = pc.edge(&mesh, u, v).unwrap();
            let b = pc.edge(&mesh, v, u).unwrap();
            assert!(a.iter().zip(b).all(|(x, y)| x + y == 0.0));
            let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - h).abs() < 1e-12, "norm {norm}");
        }
    }

    #[test]
    fn coincident_nodes_rejected() {
        let mesh = MeshGraph::new(2, 2, vec![0.5, 0.5, 0.5, 0.5], vec![[0, 1]]).unwrap();
        assert!(matches!(compute_pseudo_coords(&mesh), Err(Error::Geometry(_))));
    }

    #[test]
    fn json_round_trip_preserves_hash() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = unit_square_grid(4).unwrap();
        let path = dir.path().join("mesh.json");
        mesh.store_json(&path).unwrap();
        let back = MeshGraph::load_json(&path).unwrap();
        assert_eq!(back, mesh);
        assert_eq!(back.content_hash(), mesh.content_hash());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn index_is_order_insensitive(seed in any::<u64>()) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let mesh = unit_square_grid(4).unwrap();
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let mut edges = mesh.edges().to_vec();
                edges.shuffle(&mut rng);
                for e in edges.iter_mut() {
                    if rand::Rng::gen_bool(&mut rng, 0.5) {
                        e.swap(0, 1);
                    }
                }
                let idx = build_neighbor_index(&edges, 16).unwrap();
                prop_assert_eq!(&idx, mesh.neighbors());
            }

            #[test]
            fn relabeling_preserves_degree_and_pseudo_coord_multisets(seed in any::<u64>()) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let mesh = unit_square_grid(4).unwrap();
                let mut perm: Vec<usize> = (0..16).collect();
                perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                let relabeled = mesh.relabel(&perm).unwrap();
                let mut d0 = mesh.neighbors().degrees();
                let mut d1 = relabeled.neighbors().degrees();
                d0.sort_unstable();
                d1.sort_unstable();
                prop_assert_eq!(d0, d1);
                let collect = |m: &MeshGraph| {
                    let pc = compute_pseudo_coords(m).unwrap();
                    let mut v: Vec<(u64, u64)> = (0..m.neighbors().num_directed_edges())
                        .map(|s| (pc.slot(s)[0].to_bits(), pc.slot(s)[1].to_bits()))
                        .collect();
                    v.sort_unstable();
                    v
                };
                prop_assert_eq!(collect(&mesh), collect(&relabeled));
            }
        }
    }
}
