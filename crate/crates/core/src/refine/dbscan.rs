use std::collections::HashMap;

type Cell = (i64, i64, i64);

/// Uniform voxel grid with cell size `eps`; any neighbor within `eps` lies in
/// one of the 27 cells around a point's own cell.
struct VoxelGrid<'a> {
    points: &'a [[f64; 3]],
    eps: f64,
    eps2: f64,
    cells: HashMap<Cell, Vec<u32>>,
}

impl<'a> VoxelGrid<'a> {
    fn new(points: &'a [[f64; 3]], eps: f64) -> Self {
        let mut cells: HashMap<Cell, Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::cell_of(p, eps)).or_default().push(i as u32);
        }
        Self {
            points,
            eps,
            eps2: eps * eps,
            cells,
        }
    }

    fn cell_of(p: &[f64; 3], eps: f64) -> Cell {
        (
            (p[0] / eps).floor() as i64,
            (p[1] / eps).floor() as i64,
            (p[2] / eps).floor() as i64,
        )
    }

    fn for_each_neighbor(&self, i: usize, mut f: impl FnMut(u32)) {
        let p = &self.points[i];
        let (cx, cy, cz) = Self::cell_of(p, self.eps);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    for &j in bucket {
                        let q = &self.points[j as usize];
                        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                        if d2 <= self.eps2 {
                            f(j);
                        }
                    }
                }
            }
        }
    }

    fn neighbor_count(&self, i: usize) -> usize {
        let mut n = 0;
        self.for_each_neighbor(i, |_| n += 1);
        n
    }
}

/// DBSCAN over 3D points with Euclidean distance.
///
/// A point is core when at least `min_pts` points (itself included) lie
/// within `eps`, inclusive. Clusters are the density-connected components of
/// core points plus their border points; a border point reachable from
/// several clusters joins the one discovered first when scanning points in
/// index order. Noise is dropped. Returned clusters hold sorted indices into
/// `points` and are ordered by their smallest member.
pub fn dbscan(points: &[[f64; 3]], eps: f64, min_pts: usize) -> Vec<Vec<u32>> {
    assert!(eps > 0.0, "eps must be positive");
    let min_pts = min_pts.max(1);
    let n = points.len();
    let grid = VoxelGrid::new(points, eps);
    let core: Vec<bool> = (0..n).map(|i| grid.neighbor_count(i) >= min_pts).collect();

    const UNSET: u32 = u32::MAX;
    let mut label = vec![UNSET; n];
    let mut clusters: Vec<Vec<u32>> = Vec::new();
    let mut queue: Vec<u32> = Vec::new();
    for seed in 0..n {
        if !core[seed] || label[seed] != UNSET {
            continue;
        }
        let c = clusters.len() as u32;
        let mut members = vec![seed as u32];
        label[seed] = c;
        queue.clear();
        queue.push(seed as u32);
        while let Some(p) = queue.pop() {
            grid.for_each_neighbor(p as usize, |q| {
                if label[q as usize] == UNSET {
                    label[q as usize] = c;
                    members.push(q);
                    if core[q as usize] {
                        queue.push(q);
                    }
                }
            });
        }
        members.sort_unstable();
        clusters.push(members);
    }
    clusters.sort_by_key(|m| m[0]);
    clusters
}
