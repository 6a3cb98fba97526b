//! Advection-diffusion snapshot generator: finite differences on a tensor
//! grid read as a graph, hybrid central/upwind advection, implicit Euler.
//!
//! `u_t - kappa lap(u) + beta(t) . grad(u) = f` with Dirichlet data on the
//! outer square and homogeneous Neumann conditions on hole boundaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{SignalTable, SnapshotDataset};
use crate::error::{Error, Result};
use crate::mesh::MeshGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    UnitSquare,
    SquareWithHole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometrySpec {
    pub kind: GeometryKind,
    /// Lower-left corner of the hole `[mu_1, mu_1 + side] x [mu_2, mu_2 + side]`.
    pub hole_origin: Option<[f64; 2]>,
    pub hole_side: f64,
    /// Nodes per side.
    pub resolution: usize,
}

impl GeometrySpec {
    pub fn unit_square(resolution: usize) -> Self {
        GeometrySpec {
            kind: GeometryKind::UnitSquare,
            hole_origin: None,
            hole_side: 0.3,
            resolution,
        }
    }

    pub fn square_with_hole(resolution: usize, origin: [f64; 2]) -> Self {
        GeometrySpec {
            kind: GeometryKind::SquareWithHole,
            hole_origin: Some(origin),
            hole_side: 0.3,
            resolution,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTag {
    Interior,
    Dirichlet,
    Neumann,
}

/// A tensor grid with some cells removed.
#[derive(Debug, Clone)]
pub struct GridGeometry {
    pub mesh: MeshGraph,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Node index of grid point `(i, j)` at `j * nx + i`.
    pub grid_index: Vec<Option<usize>>,
    pub node_ij: Vec<(usize, usize)>,
    pub tags: Vec<BoundaryTag>,
}

impl GridGeometry {
    fn at(&self, i: isize, j: isize) -> Option<usize> {
        let (nx, ny) = (self.xs.len() as isize, self.ys.len() as isize);
        if i < 0 || j < 0 || i >= nx || j >= ny {
            return None;
        }
        self.grid_index[(j * nx + i) as usize]
    }
}

/// Hole cell span `(first node index, side in cells)` on the reference grid.
pub fn hole_cells(resolution: usize) -> Result<(usize, usize)> {
    let cells = (resolution - 1) as f64;
    let k = (0.3 * cells).round() as usize;
    let i0 = (0.35 * cells).round() as usize;
    if k < 2 || i0 < 1 || i0 + k > resolution - 2 {
        return Err(Error::Geometry(format!(
            "resolution {resolution} is too coarse to carve the hole (need at least 8 nodes per side)"
        )));
    }
    Ok((i0, k))
}

/// Piecewise-linear axis through `0, a, a + side, 1` at node indices
/// `0, i0, i0 + k, n - 1`.
fn deformed_axis(n: usize, i0: usize, k: usize, a: f64, side: f64) -> Vec<f64> {
    let last = n - 1;
    (0..n)
        .map(|i| {
            if i <= i0 {
                a * i as f64 / i0 as f64
            } else if i <= i0 + k {
                a + side * (i - i0) as f64 / k as f64
            } else {
                let rest = (last - i0 - k) as f64;
                a + side + (1.0 - a - side) * (i - i0 - k) as f64 / rest
            }
        })
        .collect()
}

/// Structured grid, with the hole's interior nodes removed for MH. The hole
/// always spans the same grid cells, so node count and connectivity do not
/// depend on where the hole sits; its position lives in the coordinates.
pub fn build_geometry(spec: &GeometrySpec) -> Result<GridGeometry> {
    let n = spec.resolution;
    if n < 2 {
        return Err(Error::Geometry("resolution must be at least 2".into()));
    }
    let h = 1.0 / (n - 1) as f64;
    let uniform: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    let (xs, ys, hole) = match spec.kind {
        GeometryKind::UnitSquare => (uniform.clone(), uniform, None),
        GeometryKind::SquareWithHole => {
            let [a, b] = spec
                .hole_origin
                .ok_or_else(|| Error::Geometry("square_with_hole needs a hole origin".into()))?;
            let side = spec.hole_side;
            for v in [a, b] {
                if !(v > 0.0 && v + side < 1.0) {
                    return Err(Error::Geometry(format!(
                        "hole [{a}, {}] x [{b}, {}] is not strictly inside the unit square",
                        a + side,
                        b + side
                    )));
                }
            }
            let (i0, k) = hole_cells(n)?;
            (
                deformed_axis(n, i0, k, a, side),
                deformed_axis(n, i0, k, b, side),
                Some((i0, k)),
            )
        }
    };
    let inside = |i: usize, j: usize| match hole {
        Some((i0, k)) => i > i0 && i < i0 + k && j > i0 && j < i0 + k,
        None => false,
    };
    let mut grid_index = vec![None; n * n];
    let mut node_ij = Vec::new();
    let mut coords = Vec::new();
    for j in 0..n {
        for i in 0..n {
            if !inside(i, j) {
                grid_index[j * n + i] = Some(node_ij.len());
                node_ij.push((i, j));
                coords.extend([xs[i], ys[j]]);
            }
        }
    }
    let mut edges = Vec::new();
    for (u, &(i, j)) in node_ij.iter().enumerate() {
        if i + 1 < n {
            if let Some(v) = grid_index[j * n + i + 1] {
                edges.push([u, v]);
            }
        }
        if j + 1 < n {
            if let Some(v) = grid_index[(j + 1) * n + i] {
                edges.push([u, v]);
            }
        }
    }
    let tags = node_ij
        .iter()
        .map(|&(i, j)| {
            if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                BoundaryTag::Dirichlet
            } else if hole.is_some_and(|(i0, k)| (i0..=i0 + k).contains(&i) && (i0..=i0 + k).contains(&j)) {
                BoundaryTag::Neumann
            } else {
                BoundaryTag::Interior
            }
        })
        .collect();
    let mesh = MeshGraph::new(node_ij.len(), 2, coords, edges)?;
    Ok(GridGeometry {
        mesh,
        xs,
        ys,
        grid_index,
        node_ij,
        tags,
    })
}

type ScalarFn = Box<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// Problem data for one parameter value.
pub struct AdvDiffProblem {
    pub kappa: f64,
    pub t_final: f64,
    pub dt: f64,
    pub beta: Box<dyn Fn(f64) -> [f64; 2] + Send + Sync>,
    pub forcing: ScalarFn,
    pub dirichlet: ScalarFn,
    pub initial: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl AdvDiffProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.t_final > 0.0 && self.kappa >= 0.0) {
            return Err(Error::Config(format!(
                "need dt > 0, T > 0 and kappa >= 0 (got dt = {}, T = {}, kappa = {})",
                self.dt, self.t_final, self.kappa
            )));
        }
        Ok(())
    }

    pub fn num_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

/// Banded matrix with `p` sub- and `q` super-diagonals, factored in place
/// without pivoting (the step operator is an M-matrix).
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    p: usize,
    q: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, p: usize, q: usize) -> Self {
        BandedMatrix {
            n,
            p,
            q,
            data: vec![0.0; n * (p + q + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.p + self.q + 1) + (j + self.p - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.p < i || j > i + self.q {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn factor(&mut self) -> Result<()> {
        let (n, p, q) = (self.n, self.p, self.q);
        for k in 0..n {
            let piv = self.data[self.idx(k, k)];
            if piv.abs() < 1e-300 || !piv.is_finite() {
                return Err(Error::Numerical(format!("singular step operator at row {k}")));
            }
            for i in k + 1..(k + p + 1).min(n) {
                let ik = self.idx(i, k);
                let l = self.data[ik] / piv;
                self.data[ik] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..(k + q + 1).min(n) {
                    let kj = self.data[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.data[ij] -= l * kj;
                }
            }
        }
        Ok(())
    }

    /// Solves with the factored matrix.
    pub fn solve(&self, b: &mut [f64]) {
        let (n, p, q) = (self.n, self.p, self.q);
        for i in 0..n {
            let mut acc = b[i];
            for j in i.saturating_sub(p)..i {
                acc -= self.data[self.idx(i, j)] * b[j];
            }
            b[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = b[i];
            for j in i + 1..(i + q + 1).min(n) {
                acc -= self.data[self.idx(i, j)] * b[j];
            }
            b[i] = acc / self.data[self.idx(i, i)];
        }
    }
}

/// Stencil weights along one axis for node `(i, j)`: `(neighbor, weight)`
/// pairs whose sum with `-sum(weights) * u` approximates the operator.
fn axis_terms(geom: &GridGeometry, i: usize, j: usize, axis: usize, kappa: f64, beta: f64, out: &mut Vec<(usize, f64)>) {
    let (coords, di, dj) = if axis == 0 { (&geom.xs, 1, 0) } else { (&geom.ys, 0, 1) };
    let c = if axis == 0 { i } else { j };
    let prev = geom.at(i as isize - di, j as isize - dj);
    let next = geom.at(i as isize + di, j as isize + dj);
    let hl = if c > 0 { coords[c] - coords[c - 1] } else { 0.0 };
    let hr = if c + 1 < coords.len() { coords[c + 1] - coords[c] } else { 0.0 };
    // -kappa * u'' as weights on (neighbor - u)
    match (prev, next) {
        (Some(l), Some(r)) => {
            let s = 2.0 * kappa / (hl + hr);
            out.push((l, s / hl));
            out.push((r, s / hr));
        }
        // mirror ghost across a Neumann face
        (Some(l), None) => out.push((l, 2.0 * kappa / (hl * hl))),
        (None, Some(r)) => out.push((r, 2.0 * kappa / (hr * hr))),
        (None, None) => {}
    }
    // -beta * u': central while the cell Peclet number stays below 2 (the
    // row keeps non-negative off-diagonals), upwind otherwise; dropped at a
    // Neumann face
    if let (Some(l), Some(r)) = (prev, next) {
        if beta.abs() * hl.max(hr) <= 2.0 * kappa {
            out.push((l, beta / (hl + hr)));
            out.push((r, -beta / (hl + hr)));
            return;
        }
    }
    if beta > 0.0 {
        if let Some(l) = prev {
            out.push((l, beta / hl));
        }
    } else if beta < 0.0 {
        if let Some(r) = next {
            out.push((r, -beta / hr));
        }
    }
}

/// Implicit-Euler operator `A = I + dt (-kappa lap_h + beta . grad_h)` at
/// time `t`, with identity rows at Dirichlet nodes.
pub fn assemble_step_operator(problem: &AdvDiffProblem, geom: &GridGeometry, t: f64) -> BandedMatrix {
    let n = geom.node_ij.len();
    let beta = (problem.beta)(t);
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let (mut p, mut q) = (0, 0);
    let mut terms = Vec::new();
    for (u, &(i, j)) in geom.node_ij.iter().enumerate() {
        terms.clear();
        if geom.tags[u] != BoundaryTag::Dirichlet {
            axis_terms(geom, i, j, 0, problem.kappa, beta[0], &mut terms);
            axis_terms(geom, i, j, 1, problem.kappa, beta[1], &mut terms);
        }
        for &(v, _) in &terms {
            if v < u {
                p = p.max(u - v);
            } else {
                q = q.max(v - u);
            }
        }
        rows.push(terms.clone());
    }
    let mut a = BandedMatrix::zeros(n, p, q);
    for (u, row) in rows.iter().enumerate() {
        let mut diag = 1.0;
        for &(v, w) in row {
            diag += problem.dt * w;
            a.add(u, v, -problem.dt * w);
        }
        a.add(u, u, diag);
    }
    a
}

/// `N_t + 1` snapshots on the grid nodes.
pub fn solve_trajectory(problem: &AdvDiffProblem, geom: &GridGeometry) -> Result<Vec<Vec<f64>>> {
    problem.validate()?;
    let mesh = &geom.mesh;
    let n = mesh.num_nodes();
    let mut u: Vec<f64> = (0..n).map(|v| (problem.initial)(mesh.node(v))).collect();
    let mut out = vec![u.clone()];
    for step in 1..=problem.num_steps() {
        let t = step as f64 * problem.dt;
        let mut a = assemble_step_operator(problem, geom, t);
        a.factor()?;
        for v in 0..n {
            let x = mesh.node(v);
            if geom.tags[v] == BoundaryTag::Dirichlet {
                u[v] = (problem.dirichlet)(x, t);
            } else {
                u[v] += problem.dt * (problem.forcing)(x, t);
            }
        }
        a.solve(&mut u);
        if let Some(v) = u.iter().position(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                at: format!("step {step}"),
                message: format!("non-finite value at node {v}"),
            });
        }
        out.push(u.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    Sa,
    Mh,
}

impl std::str::FromStr for Benchmark {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sa" => Ok(Benchmark::Sa),
            "mh" => Ok(Benchmark::Mh),
            other => Err(Error::Config(format!("unknown benchmark {other:?} (expected sa or mh)"))),
        }
    }
}

impl Benchmark {
    pub fn parameter_range(self) -> (f64, f64) {
        match self {
            Benchmark::Sa => (-1.0, 1.0),
            Benchmark::Mh => (0.2, 0.5),
        }
    }
}

/// `K` equispaced values on `[lo, hi]`.
pub fn equispaced(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
}

fn paraboloid(x: &[f64]) -> f64 {
    (x[0] - 1.0).powi(2) + (x[1] - 1.0).powi(2)
}

/// Benchmark problem at `mu`: `kappa = 0.1`, `T = 2`, `f = 0`,
/// `u_D = u_0 = (x0 - 1)^2 + (x1 - 1)^2`.
pub fn benchmark_problem(bench: Benchmark, mu: [f64; 2], dt: f64) -> AdvDiffProblem {
    let beta: Box<dyn Fn(f64) -> [f64; 2] + Send + Sync> = match bench {
        Benchmark::Sa => Box::new(move |t| [mu[0] * (1.0 - t), mu[1] * (1.0 - t)]),
        Benchmark::Mh => Box::new(|t| [1.0 - t, 1.0 - t]),
    };
    AdvDiffProblem {
        kappa: 0.1,
        t_final: 2.0,
        dt,
        beta,
        forcing: Box::new(|_, _| 0.0),
        dirichlet: Box::new(|x, _| paraboloid(x)),
        initial: Box::new(paraboloid),
    }
}

/// One trajectory per point of the `K x K` parameter grid (`mu_1` slow).
/// For MH the stored mesh is the reference grid with the hole at its
/// reference cells; each trajectory is solved on its own deformed grid.
pub fn generate_benchmark(bench: Benchmark, grid: usize, resolution: usize, dt: f64) -> Result<SnapshotDataset> {
    if grid == 0 {
        return Err(Error::Config("parameter grid needs at least one value per axis".into()));
    }
    let (lo, hi) = bench.parameter_range();
    let values = equispaced(lo, hi, grid);
    let mus: Vec<[f64; 2]> = values.iter().flat_map(|&a| values.iter().map(move |&b| [a, b])).collect();
    let reference = match bench {
        Benchmark::Sa => build_geometry(&GeometrySpec::unit_square(resolution))?,
        Benchmark::Mh => {
            let (i0, _) = hole_cells(resolution)?;
            let r = (i0 as f64) / (resolution - 1) as f64;
            build_geometry(&GeometrySpec::square_with_hole(resolution, [r, r]))?
        }
    };
    let probe = benchmark_problem(bench, mus[0], dt);
    probe.validate()?;
    let times: Vec<f64> = (0..=probe.num_steps()).map(|k| k as f64 * dt).collect();
    let trajectories: Vec<Vec<Vec<f64>>> = mus
        .par_iter()
        .map(|&mu| {
            let geom = match bench {
                Benchmark::Sa => reference.clone(),
                Benchmark::Mh => build_geometry(&GeometrySpec::square_with_hole(resolution, mu))?,
            };
            solve_trajectory(&benchmark_problem(bench, mu, dt), &geom)
        })
        .collect::<Result<_>>()?;
    let signals = mus
        .iter()
        .enumerate()
        .map(|(sim, mu)| SignalTable::constant(sim, times.clone(), mu))
        .collect::<Result<_>>()?;
    let fields = trajectories.into_iter().flatten().flatten().collect();
    SnapshotDataset::new(reference.mesh, times, signals, 1, fields)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn constant_problem(kappa: f64, beta: [f64; 2], c: f64, dt: f64, t_final: f64) -> AdvDiffProblem {
        AdvDiffProblem {
            kappa,
            t_final,
            dt,
            beta: Box::new(move |_| beta),
            forcing: Box::new(|_, _| 0.0),
            dirichlet: Box::new(move |_, _| c),
            initial: Box::new(move |_| c),
        }
    }

    #[test]
    fn unit_square_counts() {
        let g = build_geometry(&GeometrySpec::unit_square(5)).unwrap();
        assert_eq!(g.mesh.num_nodes(), 25);
        let deg = g.mesh.neighbors().degrees();
        assert_eq!(deg.iter().filter(|&&d| d == 2).count(), 4);
        for corner in [0, 4, 20, 24] {
            assert_eq!(deg[corner], 2);
        }
        assert_eq!(g.tags.iter().filter(|&&t| t == BoundaryTag::Dirichlet).count(), 16);
    }

    #[test]
    fn unit_square_matches_reference_grid() {
        let g = build_geometry(&GeometrySpec::unit_square(6)).unwrap();
        assert_eq!(g.mesh, crate::mesh::unit_square_grid(6).unwrap());
    }

    #[test]
    fn hole_removes_interior_nodes() {
        let mu = [0.35, 0.35];
        let g = build_geometry(&GeometrySpec::square_with_hole(21, mu)).unwrap();
        assert!(g.mesh.num_nodes() < 441);
        for u in 0..g.mesh.num_nodes() {
            let x = g.mesh.node(u);
            let strictly_inside = x[0] > mu[0] && x[0] < mu[0] + 0.3 && x[1] > mu[1] && x[1] < mu[1] + 0.3;
            assert!(!strictly_inside, "node {u} at {x:?}");
        }
        // the removed nodes are exactly the grid points strictly inside S
        let (i0, k) = hole_cells(21).unwrap();
        assert_eq!(441 - g.mesh.num_nodes(), (k - 1) * (k - 1));
        assert!(g.tags.iter().filter(|&&t| t == BoundaryTag::Neumann).count() == 4 * k);
        assert!(i0 >= 1);
    }

    #[test]
    fn connectivity_is_independent_of_hole_position() {
        let a = build_geometry(&GeometrySpec::square_with_hole(15, [0.2, 0.5])).unwrap();
        let b = build_geometry(&GeometrySpec::square_with_hole(15, [0.45, 0.25])).unwrap();
        assert_eq!(a.mesh.num_nodes(), b.mesh.num_nodes());
        assert_eq!(a.mesh.edges(), b.mesh.edges());
        assert_ne!(a.mesh.coords(), b.mesh.coords());
        // hole corners sit at the requested origin
        let (i0, k) = hole_cells(15).unwrap();
        assert!((a.xs[i0] - 0.2).abs() < 1e-15 && (a.ys[i0 + k] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn hole_outside_square_rejected() {
        assert!(build_geometry(&GeometrySpec::square_with_hole(21, [0.8, 0.3])).is_err());
        assert!(build_geometry(&GeometrySpec::square_with_hole(21, [0.0, 0.3])).is_err());
        assert!(build_geometry(&GeometrySpec::square_with_hole(5, [0.3, 0.3])).is_err());
    }

    #[test]
    fn banded_solve_matches_dense() {
        let n = 7;
        let mut a = BandedMatrix::zeros(n, 2, 1);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(2)..(i + 2).min(n) {
                let v = if i == j { 5.0 + i as f64 } else { -((i + 2 * j) as f64 * 0.37).sin().abs() };
                a.add(i, j, v);
                dense[i][j] = v;
            }
        }
        let x: Vec<f64> = (0..n).map(|i| i as f64 - 2.5).collect();
        let mut b: Vec<f64> = (0..n).map(|i| (0..n).map(|j| dense[i][j] * x[j]).sum()).collect();
        a.factor().unwrap();
        a.solve(&mut b);
        for (p, q) in b.iter().zip(&x) {
            assert!((p - q).abs() < 1e-13);
        }
    }

    #[test]
    fn trivial_operator_is_identity() {
        let g = build_geometry(&GeometrySpec::unit_square(4)).unwrap();
        let p = constant_problem(0.0, [0.0, 0.0], 1.0, 0.1, 1.0);
        let a = assemble_step_operator(&p, &g, 0.5);
        for i in 0..16 {
            for j in 0..16 {
                assert_eq!(a.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
        let mut prob = constant_problem(0.0, [0.0, 0.0], 0.0, 0.1, 0.5);
        prob.initial = Box::new(|x| x[0] * x[1]);
        prob.dirichlet = Box::new(|x, _| x[0] * x[1]);
        let traj = solve_trajectory(&prob, &g).unwrap();
        assert!(traj.iter().all(|u| u == &traj[0]));
    }

    #[test]
    fn zero_data_stays_zero() {
        let g = build_geometry(&GeometrySpec::square_with_hole(12, [0.3, 0.4])).unwrap();
        let traj = solve_trajectory(&constant_problem(0.1, [0.0, 0.0], 0.0, 0.05, 0.5), &g).unwrap();
        assert!(traj.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_state_is_steady() {
        let g = build_geometry(&GeometrySpec::square_with_hole(12, [0.3, 0.4])).unwrap();
        let traj = solve_trajectory(&constant_problem(0.1, [0.7, -0.4], 2.5, 0.05, 0.5), &g).unwrap();
        assert!(traj.iter().flatten().all(|&v| (v - 2.5).abs() < 1e-13));
    }

    #[test]
    fn max_norm_does_not_grow_under_diffusion() {
        let g = build_geometry(&GeometrySpec::square_with_hole(14, [0.25, 0.3])).unwrap();
        let mut p = constant_problem(0.1, [0.0, 0.0], 0.0, 0.02, 0.6);
        p.initial = Box::new(|x| (7.0 * x[0]).sin() * (3.0 * x[1] + 0.5).cos());
        let traj = solve_trajectory(&p, &g).unwrap();
        let norms: Vec<f64> = traj[1..].iter().map(|u| u.iter().fold(0.0f64, |m, v| m.max(v.abs()))).collect();
        for w in norms.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn sa_zero_parameter_has_no_advection() {
        let p = benchmark_problem(Benchmark::Sa, [0.0, 0.0], 0.02);
        for t in [0.0, 0.3, 1.7] {
            assert_eq!((p.beta)(t), [0.0, 0.0]);
        }
        let p = benchmark_problem(Benchmark::Sa, [0.8, -0.3], 0.02);
        assert_eq!((p.beta)(1.0), [0.0, 0.0]);
    }

    #[test]
    fn sa_initial_snapshot_is_the_paraboloid() {
        let ds = generate_benchmark(Benchmark::Sa, 2, 5, 0.5).unwrap();
        assert_eq!(ds.num_sims(), 4);
        assert_eq!(ds.times(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
        for u in 0..25 {
            let x = ds.mesh().node(u);
            assert_eq!(ds.snapshot(2, 0)[u], (x[0] - 1.0).powi(2) + (x[1] - 1.0).powi(2));
        }
        assert_eq!(ds.signals()[2].value(0), &[1.0, -1.0]);
    }

    #[test]
    fn mh_grid_values() {
        let v = equispaced(0.2, 0.5, 5);
        for (a, b) in v.iter().zip([0.2, 0.275, 0.35, 0.425, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
        let ds = generate_benchmark(Benchmark::Mh, 2, 11, 0.5).unwrap();
        assert_eq!(ds.num_sims(), 4);
        assert!(ds.fields().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_benchmark(Benchmark::Sa, 2, 6, 0.25).unwrap();
        crate::dataset::store_dataset(&ds, dir.path()).unwrap();
        assert_eq!(crate::dataset::load_dataset(dir.path()).unwrap(), ds);
    }

    /// `u = e^{-t} sin(pi x) sin(pi y)` with matching forcing.
    fn mms_transient(n: usize, dt: f64) -> (GridGeometry, AdvDiffProblem) {
        let g = build_geometry(&GeometrySpec::unit_square(n)).unwrap();
        let (kappa, beta) = (0.1, [0.5, 0.3]);
        let exact = |x: &[f64], t: f64| (-t).exp() * (PI * x[0]).sin() * (PI * x[1]).sin();
        let p = AdvDiffProblem {
            kappa,
            t_final: 0.5,
            dt,
            beta: Box::new(move |_| beta),
            forcing: Box::new(move |x, t| {
                let e = (-t).exp();
                let (sx, cx, sy, cy) = ((PI * x[0]).sin(), (PI * x[0]).cos(), (PI * x[1]).sin(), (PI * x[1]).cos());
                let u = e * sx * sy;
                -u + 2.0 * kappa * PI * PI * u + e * PI * (beta[0] * cx * sy + beta[1] * sx * cy)
            }),
            dirichlet: Box::new(exact),
            initial: Box::new(move |x| exact(x, 0.0)),
        };
        (g, p)
    }

    #[test]
    fn temporal_self_convergence_is_first_order() {
        let last = |dt: f64| {
            let (g, p) = mms_transient(17, dt);
            solve_trajectory(&p, &g).unwrap().pop().unwrap()
        };
        let (a, b, c) = (last(0.05), last(0.025), last(0.0125));
        let d1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let d2: f64 = b.iter().zip(&c).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let order = (d1 / d2).log2();
        assert!((order - 1.0).abs() < 0.2, "order {order}");
    }

    #[test]
    fn spatial_convergence_is_at_least_first_order() {
        let (kappa, beta) = (0.1, [0.5, 0.3]);
        let exact = |x: &[f64]| (PI * x[0]).sin() * (PI * x[1]).sin();
        // steady manufactured solution, reached from the exact state
        let err = |n: usize| {
            let g = build_geometry(&GeometrySpec::unit_square(n)).unwrap();
            let p = AdvDiffProblem {
                kappa,
                t_final: 40.0,
                dt: 1.0,
                beta: Box::new(move |_| beta),
                forcing: Box::new(move |x, _| {
                    let (sx, cx, sy, cy) = ((PI * x[0]).sin(), (PI * x[0]).cos(), (PI * x[1]).sin(), (PI * x[1]).cos());
                    2.0 * kappa * PI * PI * sx * sy + PI * (beta[0] * cx * sy + beta[1] * sx * cy)
                }),
                dirichlet: Box::new(move |x, _| exact(x)),
                initial: Box::new(exact),
            };
            let u = solve_trajectory(&p, &g).unwrap().pop().unwrap();
            (0..g.mesh.num_nodes())
                .map(|v| (u[v] - exact(g.mesh.node(v))).abs())
                .fold(0.0f64, f64::max)
        };
        let e: Vec<f64> = [9, 17, 33].into_iter().map(err).collect();
        for w in e.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.0, "errors {e:?}");
        }
    }

    #[test]
    fn advection_dominated_flow_keeps_max_principle() {
        let g = build_geometry(&GeometrySpec::square_with_hole(17, [0.3, 0.25])).unwrap();
        let mut p = constant_problem(1e-3, [2.0, -1.5], 0.0, 0.01, 0.3);
        p.initial = Box::new(|x| if x[0] < 0.3 { 1.0 } else { -0.5 });
        p.dirichlet = Box::new(|_, _| 0.0);
        let traj = solve_trajectory(&p, &g).unwrap();
        assert!(traj.iter().flatten().all(|&v| (-0.5 - 1e-14..=1.0 + 1e-14).contains(&v)));
    }
}
