//! Degree-1 interpolation over `(t, mu)`: linear in time along each stored
//! trajectory, then barycentric over a Delaunay triangulation of the
//! parameter points (intervals when `d_mu = 1`).

use delaunator::{triangulate, Point};

use super::LatentTable;
use crate::error::{Error, Result};

const EDGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct MultilinearInterp {
    table: LatentTable,
    /// Triangles as indices into the table trajectories (`d_mu = 2`), or
    /// the trajectories sorted by parameter (`d_mu = 1`).
    cells: Vec<[usize; 3]>,
    order: Vec<usize>,
}

impl MultilinearInterp {
    pub fn new(table: LatentTable) -> Result<Self> {
        let mus: Vec<&[f64]> = table.trajectories().iter().map(|tr| tr.mu.as_slice()).collect();
        let (cells, order) = match table.d_mu() {
            1 => {
                let mut order: Vec<usize> = (0..mus.len()).collect();
                order.sort_by(|&a, &b| mus[a][0].total_cmp(&mus[b][0]));
                if order.windows(2).any(|w| mus[w[0]][0] == mus[w[1]][0]) {
                    return Err(Error::Validation("repeated parameter value in the latent table".into()));
                }
                (Vec::new(), order)
            }
            2 => {
                let pts: Vec<Point> = mus.iter().map(|m| Point { x: m[0], y: m[1] }).collect();
                let tri = triangulate(&pts);
                if tri.triangles.is_empty() {
                    return Err(Error::Validation(
                        "parameter points are collinear or too few to triangulate".into(),
                    ));
                }
                let cells = tri.triangles.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
                (cells, Vec::new())
            }
            d => {
                return Err(Error::Config(format!(
                    "linear interpolation supports 1 or 2 parameters, got {d}"
                )))
            }
        };
        Ok(MultilinearInterp { table, cells, order })
    }

    pub fn table(&self) -> &LatentTable {
        &self.table
    }

    /// Parameter-space weights `(trajectory, weight)`.
    fn weights(&self, mu: &[f64]) -> Option<Vec<(usize, f64)>> {
        let trs = self.table.trajectories();
        if self.table.d_mu() == 1 {
            let x = mu[0];
            let at = |i: usize| trs[self.order[i]].mu[0];
            let last = self.order.len() - 1;
            if x < at(0) || x > at(last) {
                return None;
            }
            if self.order.len() == 1 {
                return Some(vec![(self.order[0], 1.0)]);
            }
            let i = (0..last).find(|&i| x <= at(i + 1)).unwrap_or(last - 1);
            let r = (x - at(i)) / (at(i + 1) - at(i));
            return Some(vec![(self.order[i], 1.0 - r), (self.order[i + 1], r)]);
        }
        for c in &self.cells {
            let [a, b, d] = c.map(|i| &trs[i].mu);
            let det = (b[1] - d[1]) * (a[0] - d[0]) + (d[0] - b[0]) * (a[1] - d[1]);
            let l1 = ((b[1] - d[1]) * (mu[0] - d[0]) + (d[0] - b[0]) * (mu[1] - d[1])) / det;
            let l2 = ((d[1] - a[1]) * (mu[0] - d[0]) + (a[0] - d[0]) * (mu[1] - d[1])) / det;
            let l3 = 1.0 - l1 - l2;
            if l1 >= -EDGE_TOL && l2 >= -EDGE_TOL && l3 >= -EDGE_TOL {
                return Some(vec![(c[0], l1), (c[1], l2), (c[2], l3)]);
            }
        }
        None
    }

    pub fn predict(&self, t: f64, mu: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim("query parameter", self.table.d_mu(), mu.len())?;
        let out_of_hull = || Error::OutOfHull {
            query: [&[t][..], mu].concat(),
        };
        let w = self.weights(mu).ok_or_else(out_of_hull)?;
        let mut s = vec![0.0; self.table.latent_dim()];
        for (i, wi) in w {
            // an exact vertex hit contributes a single trajectory
            if wi == 0.0 {
                continue;
            }
            let v = self.table.trajectories()[i].at_time(t).ok_or_else(out_of_hull)?;
            s.iter_mut().zip(&v).for_each(|(a, b)| *a += wi * b);
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::TableTrajectory;

    fn affine_table(mus: &[[f64; 2]]) -> LatentTable {
        let times: Vec<f64> = (0..6).map(|k| k as f64 * 0.2).collect();
        let trs = mus
            .iter()
            .map(|m| TableTrajectory {
                mu: m.to_vec(),
                times: times.clone(),
                states: times.iter().flat_map(|&t| [2.0 * t - m[0] + 0.5 * m[1], 1.0 - t + 3.0 * m[1]]).collect(),
            })
            .collect();
        LatentTable::new(2, 2, trs).unwrap()
    }

    #[test]
    fn grid_points_are_exact() {
        let mus = [[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0], [0.0, 0.0]];
        let table = affine_table(&mus);
        let lin = MultilinearInterp::new(table.clone()).unwrap();
        for tr in table.trajectories() {
            for (k, &t) in tr.times.iter().enumerate() {
                assert_eq!(lin.predict(t, &tr.mu).unwrap(), tr.state(k));
            }
        }
    }

    #[test]
    fn affine_fields_are_reproduced() {
        let mus = [[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0], [0.2, -0.3]];
        let lin = MultilinearInterp::new(affine_table(&mus)).unwrap();
        for (t, m) in [(0.13, [0.4, 0.1]), (0.77, [-0.9, 0.95]), (1.0, [0.0, -1.0])] {
            let s = lin.predict(t, &m).unwrap();
            let expect = [2.0 * t - m[0] + 0.5 * m[1], 1.0 - t + 3.0 * m[1]];
            for (a, b) in s.iter().zip(expect) {
                assert!((a - b).abs() < 1e-13, "{s:?} vs {expect:?}");
            }
        }
    }

    #[test]
    fn outside_the_hull_is_an_error() {
        let mus = [[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]];
        let lin = MultilinearInterp::new(affine_table(&mus)).unwrap();
        assert!(matches!(lin.predict(1.2, &[0.0, 0.0]), Err(Error::OutOfHull { .. })));
        assert!(matches!(lin.predict(0.5, &[1.5, 0.0]), Err(Error::OutOfHull { .. })));
        assert!(matches!(lin.predict(-0.1, &[0.0, 0.0]), Err(Error::OutOfHull { .. })));
    }

    #[test]
    fn one_parameter_uses_intervals() {
        let times = vec![0.0, 1.0];
        let trs = [0.5, -1.0, 2.0]
            .iter()
            .map(|&m| TableTrajectory {
                mu: vec![m],
                times: times.clone(),
                states: times.iter().map(|t| 3.0 * m + t).collect(),
            })
            .collect();
        let lin = MultilinearInterp::new(LatentTable::new(1, 1, trs).unwrap()).unwrap();
        assert!((lin.predict(0.25, &[1.0]).unwrap()[0] - 3.25).abs() < 1e-14);
        assert!(lin.predict(0.25, &[2.5]).is_err());
    }

    #[test]
    fn collinear_parameters_rejected() {
        let mus = [[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]];
        assert!(MultilinearInterp::new(affine_table(&mus)).is_err());
    }
}
