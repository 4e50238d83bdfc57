//! Delaunay triangulation of region centroids.
//!
//! Points are inserted in lexicographic order, each one fanned onto the hull
//! edges it sees, and the result is made Delaunay by Lawson edge flips. All
//! geometric decisions use exact orientation and in-circle predicates. Among
//! cocircular configurations the diagonal with the lexicographically smallest
//! endpoint pair (by input index) is kept.

use std::collections::HashMap;

use robust::{incircle, orient2d, Coord};

use super::contiguity::ContiguityMatrix;
use crate::data::RegionTable;
use crate::error::{Error, Result};

fn c(p: [f64; 2]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

fn orient(p: &[[f64; 2]], a: usize, b: usize, q: usize) -> f64 {
    orient2d(c(p[a]), c(p[b]), c(p[q]))
}

struct Mesh<'a> {
    pts: &'a [[f64; 2]],
    tris: Vec<[usize; 3]>,
    // directed edge -> triangle holding it in counter-clockwise order
    edges: HashMap<(usize, usize), usize>,
}

impl<'a> Mesh<'a> {
    fn add(&mut self, t: [usize; 3]) {
        debug_assert!(orient(self.pts, t[0], t[1], t[2]) > 0.0);
        let id = self.tris.len();
        self.tris.push(t);
        for k in 0..3 {
            self.edges.insert((t[k], t[(k + 1) % 3]), id);
        }
    }

    fn apex(&self, tri: usize, a: usize, b: usize) -> usize {
        let t = self.tris[tri];
        t.into_iter()
            .find(|&v| v != a && v != b)
            .expect("triangle has three vertices")
    }

    /// For interior edge a-b, the apexes on the left (c) and right (d) of a->b.
    fn quad(&self, a: usize, b: usize) -> Option<(usize, usize, usize, usize)> {
        let t1 = *self.edges.get(&(a, b))?;
        let t2 = *self.edges.get(&(b, a))?;
        Some((t1, t2, self.apex(t1, a, b), self.apex(t2, b, a)))
    }

    fn flip(&mut self, a: usize, b: usize) {
        let (t1, t2, cc, d) = self.quad(a, b).expect("flip on interior edge");
        self.edges.remove(&(a, b));
        self.edges.remove(&(b, a));
        self.tris[t1] = [a, d, cc];
        self.tris[t2] = [d, b, cc];
        for t in [t1, t2] {
            let tri = self.tris[t];
            for k in 0..3 {
                self.edges.insert((tri[k], tri[(k + 1) % 3]), t);
            }
        }
    }

    /// Strictly positive when the right apex lies inside the circumcircle of the left triangle.
    fn in_circle(&self, a: usize, b: usize, cc: usize, d: usize) -> f64 {
        incircle(
            c(self.pts[a]),
            c(self.pts[b]),
            c(self.pts[cc]),
            c(self.pts[d]),
        )
    }

    fn legalize(&mut self, mut stack: Vec<(usize, usize)>) {
        while let Some((a, b)) = stack.pop() {
            let Some((_, _, cc, d)) = self.quad(a, b) else {
                continue;
            };
            if self.in_circle(a, b, cc, d) > 0.0 {
                self.flip(a, b);
                stack.extend([(a, d), (d, b), (b, cc), (cc, a)]);
            }
        }
    }

    fn break_cocircular_ties(&mut self) {
        loop {
            let mut flipped = false;
            let mut interior: Vec<(usize, usize)> =
                self.edges.keys().copied().filter(|&(a, b)| a < b).collect();
            interior.sort_unstable();
            for (a, b) in interior {
                let Some((_, _, cc, d)) = self.quad(a, b) else {
                    continue;
                };
                if self.in_circle(a, b, cc, d) != 0.0 {
                    continue;
                }
                let alt = (cc.min(d), cc.max(d));
                if alt < (a, b) {
                    self.flip(a, b);
                    flipped = true;
                }
            }
            if !flipped {
                break;
            }
        }
    }
}

fn lexicographic_order(pts: &[[f64; 2]]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&i, &j| {
        pts[i][0]
            .total_cmp(&pts[j][0])
            .then(pts[i][1].total_cmp(&pts[j][1]))
            .then(i.cmp(&j))
    });
    order
}

fn first_duplicate(pts: &[[f64; 2]], order: &[usize]) -> Option<(usize, usize)> {
    order
        .windows(2)
        .find(|w| pts[w[0]] == pts[w[1]])
        .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
}

/// Triangles (counter-clockwise index triples) of the Delaunay triangulation.
pub fn triangulate(pts: &[[f64; 2]]) -> Result<Vec<[usize; 3]>> {
    let n = pts.len();
    if n < 3 {
        return Err(Error::Geometry(format!("need at least 3 points, got {n}")));
    }
    if let Some(i) = pts
        .iter()
        .position(|p| !(p[0].is_finite() && p[1].is_finite()))
    {
        return Err(Error::Geometry(format!("point {i} is not finite")));
    }
    let order = lexicographic_order(pts);
    if let Some((i, j)) = first_duplicate(pts, &order) {
        return Err(Error::Geometry(format!("duplicate points {i} and {j}")));
    }

    // leading run of collinear points
    let mut k = 2;
    while k < n && orient(pts, order[0], order[1], order[k]) == 0.0 {
        k += 1;
    }
    if k == n {
        return Err(Error::Geometry("all points are collinear".into()));
    }

    let mut mesh = Mesh {
        pts,
        tris: Vec::with_capacity(2 * n),
        edges: HashMap::with_capacity(6 * n),
    };
    let apex = order[k];
    let left = orient(pts, order[0], order[1], apex) > 0.0;
    for w in order[..k].windows(2) {
        if left {
            mesh.add([w[0], w[1], apex]);
        } else {
            mesh.add([w[1], w[0], apex]);
        }
    }
    let mut hull: Vec<usize> = if left {
        order[..k].iter().copied().chain([apex]).collect()
    } else {
        order[..k].iter().rev().copied().chain([apex]).collect()
    };

    let mut pending = Vec::new();
    for &p in &order[k + 1..] {
        let m = hull.len();
        let visible: Vec<bool> = (0..m)
            .map(|i| orient(pts, hull[i], hull[(i + 1) % m], p) < 0.0)
            .collect();
        let start = (0..m)
            .find(|&i| visible[i] && !visible[(i + m - 1) % m])
            .ok_or_else(|| Error::Geometry("sweep point sees no hull edge".into()))?;
        let mut end = start;
        while visible[(end + 1) % m] {
            end = (end + 1) % m;
        }
        let mut i = start;
        loop {
            let (a, b) = (hull[i], hull[(i + 1) % m]);
            mesh.add([b, a, p]);
            pending.push((a, b));
            if i == end {
                break;
            }
            i = (i + 1) % m;
        }
        let mut next = Vec::with_capacity(m + 1);
        let mut j = (end + 1) % m;
        loop {
            next.push(hull[j]);
            if j == start {
                break;
            }
            j = (j + 1) % m;
        }
        next.push(p);
        hull = next;
        mesh.legalize(std::mem::take(&mut pending));
    }

    mesh.break_cocircular_ties();
    Ok(mesh.tris)
}

/// Contiguity from the Delaunay triangulation of region centroids: regions are
/// neighbours iff their centroids share a triangle edge.
pub fn delaunay_neighbors(regions: &RegionTable) -> Result<ContiguityMatrix> {
    let pts = regions.centroids();
    if let Some((i, j)) = first_duplicate(&pts, &lexicographic_order(&pts)) {
        let r = regions.entries();
        return Err(Error::Geometry(format!(
            "duplicate centroids for regions '{}' and '{}'",
            r[i].region_id, r[j].region_id
        )));
    }
    let tris = triangulate(&pts)?;
    let edges = tris
        .iter()
        .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])]);
    let w = ContiguityMatrix::from_edges(regions.ids(), edges)?;
    debug_assert!(w.is_connected());
    Ok(w)
}
