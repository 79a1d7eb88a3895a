//! Admissible polygonal meshes of a planar domain.
//!
//! Text format (lines starting with `#` and blank lines are ignored):
//!
//! ```text
//! vertices <nv>
//! <x> <y>                      (nv lines)
//! cells <nc>
//! <k> <v_1> ... <v_k>          (nc lines, counter-clockwise vertex indices)
//! cellpoints <nc>              (optional section)
//! <x> <y>                      (nc lines)
//! ```
//!
//! Without a `cellpoints` section, triangles use their circumcenter and
//! other polygons the vertex average.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Angle tolerance of the orthogonality check.
pub const ADMISSIBILITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub center: [f64; 2],
    pub measure: f64,
    pub vertices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeKind {
    /// Oriented `K -> L`; the normal points out of `K`.
    Interior { k: usize, l: usize, d_k: f64, d_l: f64 },
    Boundary { k: usize, d_k: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub measure: f64,
    pub normal: [f64; 2],
    pub midpoint: [f64; 2],
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    cells: Vec<Cell>,
    edges: Vec<Edge>,
    /// Edge indices touching each cell.
    cell_edges: Vec<Vec<usize>>,
    explicit_points: bool,
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn norm(a: [f64; 2]) -> f64 {
    dot(a, a).sqrt()
}

fn signed_area(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let (p, q) = (pts[i], pts[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
        / 2.0
}

fn circumcenter(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> [f64; 2] {
    let (b, c) = (sub(b, a), sub(c, a));
    let den = 2.0 * (b[0] * c[1] - b[1] * c[0]);
    let (bb, cc) = (dot(b, b), dot(c, c));
    [
        a[0] + (c[1] * bb - b[1] * cc) / den,
        a[1] + (b[0] * cc - c[0] * bb) / den,
    ]
}

impl Mesh {
    /// Builds edges and geometry and runs the admissibility check.
    pub fn from_polygons(
        vertices: Vec<[f64; 2]>,
        polygons: Vec<Vec<usize>>,
        cell_points: Option<Vec<[f64; 2]>>,
    ) -> Result<Self> {
        if polygons.is_empty() {
            return Err(Error::Mesh("mesh has no cells".into()));
        }
        if let Some(p) = &cell_points {
            if p.len() != polygons.len() {
                return Err(Error::Mesh(format!(
                    "{} cell points for {} cells",
                    p.len(),
                    polygons.len()
                )));
            }
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mesh vertices"));
        }
        let mut cells = Vec::with_capacity(polygons.len());
        for (ci, poly) in polygons.into_iter().enumerate() {
            if poly.len() < 3 {
                return Err(Error::Mesh(format!("cell {ci} has fewer than 3 vertices")));
            }
            if let Some(&v) = poly.iter().find(|&&v| v >= vertices.len()) {
                return Err(Error::Mesh(format!("cell {ci} references missing vertex {v}")));
            }
            let pts: Vec<[f64; 2]> = poly.iter().map(|&v| vertices[v]).collect();
            let area = signed_area(&pts);
            if !(area > 0.0) {
                return Err(Error::Mesh(format!(
                    "cell {ci} has non-positive measure {area} (vertices must be counter-clockwise)"
                )));
            }
            let center = match &cell_points {
                Some(p) => p[ci],
                None if pts.len() == 3 => circumcenter(pts[0], pts[1], pts[2]),
                None => {
                    let n = pts.len() as f64;
                    [
                        pts.iter().map(|p| p[0]).sum::<f64>() / n,
                        pts.iter().map(|p| p[1]).sum::<f64>() / n,
                    ]
                }
            };
            cells.push(Cell {
                center,
                measure: area,
                vertices: poly,
            });
        }

        let mut edges: Vec<Edge> = Vec::new();
        let mut by_key: HashMap<(usize, usize), usize> = HashMap::new();
        let mut cell_edges = vec![Vec::new(); cells.len()];
        for (ci, cell) in cells.iter().enumerate() {
            let n = cell.vertices.len();
            for i in 0..n {
                let (a, b) = (cell.vertices[i], cell.vertices[(i + 1) % n]);
                let key = (a.min(b), a.max(b));
                match by_key.get(&key) {
                    None => {
                        let (pa, pb) = (vertices[a], vertices[b]);
                        let t = sub(pb, pa);
                        let len = norm(t);
                        if !(len > 0.0) {
                            return Err(Error::Mesh(format!("edge {a}-{b} has zero length")));
                        }
                        // counter-clockwise cell: outward normal is the tangent rotated clockwise
                        let normal = [t[1] / len, -t[0] / len];
                        let midpoint = [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0];
                        let d_k = dot(sub(midpoint, cell.center), normal);
                        by_key.insert(key, edges.len());
                        cell_edges[ci].push(edges.len());
                        edges.push(Edge {
                            vertices: [a, b],
                            measure: len,
                            normal,
                            midpoint,
                            kind: EdgeKind::Boundary { k: ci, d_k },
                        });
                    }
                    Some(&ei) => {
                        let edge = &mut edges[ei];
                        let EdgeKind::Boundary { k, d_k } = edge.kind else {
                            return Err(Error::Mesh(format!(
                                "edge {a}-{b} is shared by more than two cells"
                            )));
                        };
                        let d_l = -dot(sub(edge.midpoint, cell.center), edge.normal);
                        edge.kind = EdgeKind::Interior { k, l: ci, d_k, d_l };
                        cell_edges[ci].push(ei);
                    }
                }
            }
        }
        let mesh = Self {
            vertices,
            cells,
            edges,
            cell_edges,
            explicit_points: cell_points.is_some(),
        };
        mesh.check_admissible()?;
        Ok(mesh)
    }

    /// Uniform `nx x ny` rectangles on `(0,1)^2`, cells numbered `i + nx j`.
    pub fn cartesian(nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Mesh(format!("cartesian mesh needs nx, ny >= 1 (got {nx}x{ny})")));
        }
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([i as f64 / nx as f64, j as f64 / ny as f64]);
            }
        }
        let v = |i: usize, j: usize| i + (nx + 1) * j;
        let mut polygons = Vec::with_capacity(nx * ny);
        let mut points = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                polygons.push(vec![v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)]);
                points.push([(i as f64 + 0.5) / nx as f64, (j as f64 + 0.5) / ny as f64]);
            }
        }
        Self::from_polygons(vertices, polygons, Some(points))
    }

    fn check_admissible(&self) -> Result<()> {
        for (ei, e) in self.edges.iter().enumerate() {
            if let EdgeKind::Interior { k, l, d_k, d_l } = e.kind {
                if !(d_k > 0.0 && d_l > 0.0) {
                    return Err(Error::Mesh(format!(
                        "edge {ei} ({}-{}): cell points must lie strictly on either side (d_K = {d_k}, d_L = {d_l})",
                        e.vertices[0], e.vertices[1]
                    )));
                }
                let kl = sub(self.cells[l].center, self.cells[k].center);
                let tangent = [-e.normal[1], e.normal[0]];
                let sine = dot(kl, tangent).abs() / norm(kl);
                if sine > ADMISSIBILITY_TOL {
                    return Err(Error::Mesh(format!(
                        "edge {ei} ({}-{}): segment between cell points {k} and {l} is not orthogonal (sin = {sine:e})",
                        e.vertices[0], e.vertices[1]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn cell_edges(&self, cell: usize) -> &[usize] {
        &self.cell_edges[cell]
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn interior_edges(&self) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| matches!(e.kind, EdgeKind::Interior { .. }))
    }

    pub fn total_measure(&self) -> f64 {
        self.cells.iter().map(|c| c.measure).sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "vertices {}", self.vertices.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{:?} {:?}", v[0], v[1]);
        }
        let _ = writeln!(s, "cells {}", self.cells.len());
        for c in &self.cells {
            let ids: Vec<String> = c.vertices.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{} {}", c.vertices.len(), ids.join(" "));
        }
        if self.explicit_points {
            let _ = writeln!(s, "cellpoints {}", self.cells.len());
            for c in &self.cells {
                let _ = writeln!(s, "{:?} {:?}", c.center[0], c.center[1]);
            }
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .peekable();
        let bad = |line: usize, what: &str| Error::Parse(format!("mesh line {line}: {what}"));

        let section = |name: &str, lines: &mut dyn Iterator<Item = (usize, &str)>| -> Result<usize> {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("mesh: missing `{name}` section")))?;
            let mut it = l.split_whitespace();
            if it.next() != Some(name) {
                return Err(bad(ln, &format!("expected `{name} <count>`")));
            }
            it.next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| bad(ln, "missing count"))
        };
        let point = |ln: usize, l: &str| -> Result<[f64; 2]> {
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(ln, "expected two numbers"))?;
            match v[..] {
                [x, y] => Ok([x, y]),
                _ => Err(bad(ln, "expected two numbers")),
            }
        };

        let nv = section("vertices", &mut lines)?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, l) = lines.next().ok_or_else(|| Error::Parse("mesh: truncated vertices".into()))?;
            vertices.push(point(ln, l)?);
        }
        let nc = section("cells", &mut lines)?;
        let mut polygons = Vec::with_capacity(nc);
        for _ in 0..nc {
            let (ln, l) = lines.next().ok_or_else(|| Error::Parse("mesh: truncated cells".into()))?;
            let ids: Vec<usize> = l
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(ln, "expected vertex indices"))?;
            match ids.split_first() {
                Some((&k, rest)) if k == rest.len() => polygons.push(rest.to_vec()),
                _ => return Err(bad(ln, "vertex count does not match")),
            }
        }
        let cell_points = if lines.peek().is_some() {
            let n = section("cellpoints", &mut lines)?;
            if n != nc {
                return Err(Error::Parse(format!("mesh: {n} cell points for {nc} cells")));
            }
            let mut p = Vec::with_capacity(n);
            for _ in 0..n {
                let (ln, l) = lines.next().ok_or_else(|| Error::Parse("mesh: truncated cellpoints".into()))?;
                p.push(point(ln, l)?);
            }
            Some(p)
        } else {
            None
        };
        if let Some((ln, _)) = lines.next() {
            return Err(bad(ln, "unexpected trailing content"));
        }
        Self::from_polygons(vertices, polygons, cell_points)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cartesian_counts() {
        let m = Mesh::cartesian(2, 2).unwrap();
        assert_eq!(m.n_cells(), 4);
        assert_eq!(m.interior_edges().count(), 4);
        assert_eq!(m.edges().len() - 4, 8);
        assert_eq!(Mesh::cartesian(16, 16).unwrap().n_cells(), 256);
        let m = Mesh::cartesian(18, 18).unwrap();
        assert!((m.total_measure() - 1.0).abs() < 1e-14);
        for (_, e) in m.interior_edges() {
            if let EdgeKind::Interior { d_k, d_l, .. } = e.kind {
                assert!((d_k - 1.0 / 36.0).abs() < 1e-15 && (d_l - 1.0 / 36.0).abs() < 1e-15);
            }
        }
        assert!(Mesh::cartesian(0, 3).is_err());
    }

    #[test]
    fn right_triangle_with_circumcenter() {
        let text = "vertices 3\n0 0\n1 0\n0 1\ncells 1\n3 0 1 2\ncellpoints 1\n0.5 0.5\n";
        let m = Mesh::parse(text).unwrap();
        assert_eq!(m.n_cells(), 1);
        assert!((m.cells()[0].measure - 0.5).abs() < 1e-15);
        // implicit circumcenter is the hypotenuse midpoint as well
        let implicit = Mesh::parse("vertices 3\n0 0\n1 0\n0 1\ncells 1\n3 0 1 2\n").unwrap();
        assert_eq!(implicit.cells()[0].center, [0.5, 0.5]);
    }

    #[test]
    fn coincident_cell_points_rejected() {
        // unit square split along its diagonal: both circumcenters at (0.5, 0.5)
        let text = "vertices 4\n0 0\n1 0\n1 1\n0 1\ncells 2\n3 0 1 2\n3 0 2 3\n";
        let err = Mesh::parse(text).unwrap_err();
        assert!(err.to_string().contains("edge"), "{err}");
    }

    #[test]
    fn non_orthogonal_rejected() {
        let text = "vertices 4\n0 0\n1 0\n1 1\n0 1\ncells 2\n3 0 1 2\n3 0 2 3\ncellpoints 2\n0.7 0.2\n0.2 0.6\n";
        assert!(Mesh::parse(text).unwrap_err().to_string().contains("orthogonal"));
    }

    #[test]
    fn clockwise_cell_rejected() {
        let text = "vertices 3\n0 0\n0 1\n1 0\ncells 1\n3 0 1 2\n";
        assert!(Mesh::parse(text).is_err());
    }

    #[test]
    fn round_trip() {
        let m = Mesh::cartesian(5, 3).unwrap();
        let back = Mesh::parse(&m.to_text()).unwrap();
        assert_eq!(back, m);
    }
}
