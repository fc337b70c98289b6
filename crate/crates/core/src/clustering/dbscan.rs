//! DBSCAN over 3-D positions with a uniform grid of cell size `eps`.

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};

/// Cluster id of points that belong to no cluster.
pub const NOISE: i32 = -1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbscanResult {
    /// Cluster id per point, [`NOISE`] for noise. Ids are assigned in discovery order.
    pub cluster_ids: Vec<i32>,
    pub cluster_sizes: Vec<usize>,
    /// Whether each point is a core point.
    pub core: Vec<bool>,
}

impl DbscanResult {
    pub fn cluster_count(&self) -> usize {
        self.cluster_sizes.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.cluster_ids
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cluster as i32)
            .map(|(i, _)| i)
            .collect()
    }

    /// Largest cluster, lowest id on ties.
    pub fn dominant(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (c, &s) in self.cluster_sizes.iter().enumerate() {
            if best.is_none_or(|b| s > self.cluster_sizes[b]) {
                best = Some(c);
            }
        }
        best
    }
}

type Cell = (i64, i64, i64);

struct Grid<'a> {
    points: &'a [[f64; 3]],
    eps: f64,
    cells: HashMap<Cell, Vec<usize>>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [[f64; 3]], eps: f64) -> Self {
        let mut cells: HashMap<Cell, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::cell_of(p, eps)).or_default().push(i);
        }
        Self { points, eps, cells }
    }

    fn cell_of(p: &[f64; 3], eps: f64) -> Cell {
        (
            (p[0] / eps).floor() as i64,
            (p[1] / eps).floor() as i64,
            (p[2] / eps).floor() as i64,
        )
    }

    /// Indices within `eps` of point `i` (including `i`), ascending.
    fn neighbors(&self, i: usize) -> Vec<usize> {
        let p = &self.points[i];
        let (cx, cy, cz) = Self::cell_of(p, self.eps);
        let eps2 = self.eps * self.eps;
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &j in list {
                            let q = &self.points[j];
                            let d2 = (p[0] - q[0]).powi(2)
                                + (p[1] - q[1]).powi(2)
                                + (p[2] - q[2]).powi(2);
                            if d2 <= eps2 {
                                out.push(j);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Density-based clustering. A point is core when at least `min_pts` points
/// (itself included) lie within `eps`. Border points join the first cluster
/// that reaches them.
pub fn dbscan(positions: &[[f64; 3]], eps: f64, min_pts: usize) -> Result<DbscanResult> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid("eps must be positive and finite"));
    }
    if min_pts == 0 {
        return Err(Error::invalid("min_pts must be at least 1"));
    }
    if !positions.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("dbscan positions"));
    }
    let grid = Grid::new(positions, eps);
    let m = positions.len();
    let neighbors: Vec<Vec<usize>> = (0..m).map(|i| grid.neighbors(i)).collect();
    let core: Vec<bool> = neighbors.iter().map(|n| n.len() >= min_pts).collect();

    let mut ids = vec![NOISE; m];
    let mut sizes = Vec::new();
    for start in 0..m {
        if ids[start] != NOISE || !core[start] {
            continue;
        }
        let id = sizes.len() as i32;
        let mut size = 0;
        let mut queue = VecDeque::from([start]);
        ids[start] = id;
        while let Some(p) = queue.pop_front() {
            size += 1;
            if !core[p] {
                continue;
            }
            for &q in &neighbors[p] {
                if ids[q] == NOISE {
                    ids[q] = id;
                    queue.push_back(q);
                }
            }
        }
        sizes.push(size);
    }
    Ok(DbscanResult {
        cluster_ids: ids,
        cluster_sizes: sizes,
        core,
    })
}
