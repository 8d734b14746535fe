//! Hierarchical quadrilateral mesh of the disk `|x| <= R` with the diameter
//! `y = 0` as a mesh line.
//!
//! The coarse layout has twelve cells: four squares covering `[-s, s]²`
//! (`s = 0.4 R`) and eight outer cells between the square and the circle,
//! each with one circular side. Outer cells use a transfinite map that is
//! linear along the straight sides and follows the arc with an angle linear
//! in the reference coordinate. Refined cells keep the map of their root and
//! only select a dyadic sub-square of the root's reference square, so curved
//! boundaries stay exact under refinement.
//!
//! Local numbering (reference coordinates `(u, v)`):
//!
//! ```text
//!   v2 ---3--- v3
//!   |          |
//!   0          1
//!   |          |
//!   v0 ---2--- v1
//! ```
//!
//! Line 0 is `u = 0`, line 1 is `u = 1`, line 2 is `v = 0`, line 3 is `v = 1`.

use crate::{Error, Result};
use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::path::Path;

/// Vertex pair `(low id, high id)` identifying an edge.
pub type EdgeKey = (usize, usize);

pub fn edge_key(a: usize, b: usize) -> EdgeKey {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Local vertex pairs of the four lines, oriented along `+u` or `+v`.
pub const LINE_VERTICES: [[usize; 2]; 4] = [[0, 2], [1, 3], [0, 1], [2, 3]];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeFlags {
    pub interface: bool,
    pub boundary: bool,
}

/// Reference-to-physical map of a coarse cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RootMap {
    /// Corners in local vertex order `v0, v1, v2, v3`.
    Bilinear([[f64; 2]; 4]),
    /// Straight side `p0 -> p1` at `v = 0`, circular side at `v = 1` running
    /// from angle `theta0` to `theta1`.
    Arc {
        p0: [f64; 2],
        p1: [f64; 2],
        radius: f64,
        theta0: f64,
        theta1: f64,
    },
}

impl RootMap {
    /// Point and Jacobian `J[i][j] = ∂x_i/∂u_j` at `(u, v)`.
    pub fn eval(&self, u: f64, v: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        match *self {
            RootMap::Bilinear(p) => {
                let mut x = [0.0; 2];
                let mut j = [[0.0; 2]; 2];
                for i in 0..2 {
                    x[i] = (1.0 - u) * (1.0 - v) * p[0][i]
                        + u * (1.0 - v) * p[1][i]
                        + (1.0 - u) * v * p[2][i]
                        + u * v * p[3][i];
                    j[i][0] = (1.0 - v) * (p[1][i] - p[0][i]) + v * (p[3][i] - p[2][i]);
                    j[i][1] = (1.0 - u) * (p[2][i] - p[0][i]) + u * (p[3][i] - p[1][i]);
                }
                (x, j)
            }
            RootMap::Arc {
                p0,
                p1,
                radius,
                theta0,
                theta1,
            } => {
                let th = theta0 + u * (theta1 - theta0);
                let (s, c) = th.sin_cos();
                let arc = [radius * c, radius * s];
                let darc = [-radius * s * (theta1 - theta0), radius * c * (theta1 - theta0)];
                let mut x = [0.0; 2];
                let mut j = [[0.0; 2]; 2];
                for i in 0..2 {
                    let line = (1.0 - u) * p0[i] + u * p1[i];
                    x[i] = (1.0 - v) * line + v * arc[i];
                    j[i][0] = (1.0 - v) * (p1[i] - p0[i]) + v * darc[i];
                    j[i][1] = arc[i] - line;
                }
                (x, j)
            }
        }
    }
}

/// Geometry of one cell: its root map restricted to a dyadic sub-square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellGeometry {
    pub map: RootMap,
    pub origin: [f64; 2],
    pub size: f64,
}

impl CellGeometry {
    pub fn point(&self, xi: [f64; 2]) -> [f64; 2] {
        self.eval(xi).0
    }

    pub fn eval(&self, xi: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let (x, j) = self
            .map
            .eval(self.origin[0] + self.size * xi[0], self.origin[1] + self.size * xi[1]);
        let h = self.size;
        (x, [[j[0][0] * h, j[0][1] * h], [j[1][0] * h, j[1][1] * h]])
    }

    pub fn jacobian(&self, xi: [f64; 2]) -> [[f64; 2]; 2] {
        self.eval(xi).1
    }
}

pub fn det2(j: &[[f64; 2]; 2]) -> f64 {
    j[0][0] * j[1][1] - j[0][1] * j[1][0]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub root: usize,
    pub level: u8,
    /// Position of the cell inside its root's reference square, in units of `2^-level`.
    pub index: [u32; 2],
    pub vertices: [usize; 4],
    pub parent: Option<usize>,
    pub children: Option<[usize; 4]>,
}

impl Cell {
    pub fn is_active(&self) -> bool {
        self.children.is_none()
    }

    pub fn line_vertices(&self, line: usize) -> [usize; 2] {
        let [a, b] = LINE_VERTICES[line];
        [self.vertices[a], self.vertices[b]]
    }

    pub fn edge(&self, line: usize) -> EdgeKey {
        let [a, b] = self.line_vertices(line);
        edge_key(a, b)
    }
}

/// A sheet face as seen from the cell above it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceFace {
    pub cell: usize,
    pub line: usize,
    pub x0: f64,
    pub x1: f64,
}

impl InterfaceFace {
    pub fn length(&self) -> f64 {
        self.x1 - self.x0
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    /// Radius of the disk; `None` for rectangular test meshes.
    pub radius: Option<f64>,
    pub vertices: Vec<[f64; 2]>,
    pub roots: Vec<RootMap>,
    pub cells: Vec<Cell>,
    edge_mid: HashMap<EdgeKey, usize>,
    edge_parent: HashMap<EdgeKey, EdgeKey>,
    edge_flags: HashMap<EdgeKey, EdgeFlags>,
    active: Vec<usize>,
}

impl Mesh {
    fn from_roots(radius: Option<f64>, vertices: Vec<[f64; 2]>, roots: Vec<(RootMap, [usize; 4])>) -> Self {
        let scale = vertices
            .iter()
            .map(|p| p[0].abs().max(p[1].abs()))
            .fold(0.0, f64::max)
            .max(1.0);
        let mut count: HashMap<EdgeKey, usize> = HashMap::new();
        let mut cells = Vec::with_capacity(roots.len());
        let mut maps = Vec::with_capacity(roots.len());
        for (r, (map, vs)) in roots.into_iter().enumerate() {
            let cell = Cell {
                root: r,
                level: 0,
                index: [0, 0],
                vertices: vs,
                parent: None,
                children: None,
            };
            for l in 0..4 {
                *count.entry(cell.edge(l)).or_default() += 1;
            }
            cells.push(cell);
            maps.push(map);
        }
        let mut edge_flags = HashMap::new();
        for (&e, &n) in &count {
            let on_axis = |v: usize| vertices[v][1].abs() <= 1e-14 * scale;
            edge_flags.insert(
                e,
                EdgeFlags {
                    interface: on_axis(e.0) && on_axis(e.1),
                    boundary: n == 1,
                },
            );
        }
        let active = (0..cells.len()).collect();
        Mesh {
            radius,
            vertices,
            roots: maps,
            cells,
            edge_mid: HashMap::new(),
            edge_parent: HashMap::new(),
            edge_flags,
            active,
        }
    }

    /// Disk of radius `radius` refined uniformly `initial_refines` times.
    pub fn disk(radius: f64, initial_refines: usize) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Domain(format!("disk radius must be positive, got {radius}")));
        }
        let s = 0.4 * radius;
        let g = [-s, 0.0, s];
        // 3×3 grid of the inner square: id = 3 * iy + ix
        let mut vertices: Vec<[f64; 2]> = Vec::new();
        for &y in &g {
            for &x in &g {
                vertices.push([x, y]);
            }
        }
        let gid = |ix: usize, iy: usize| 3 * iy + ix;
        // eight points on the circle at multiples of 45°, id = 9 + k for angle k·45°
        for k in 0..8 {
            let th = k as f64 * PI / 4.0;
            let (sn, cs) = th.sin_cos();
            let mut p = [radius * cs, radius * sn];
            if k % 4 == 0 {
                p[1] = 0.0;
            }
            if k % 4 == 2 {
                p[0] = 0.0;
            }
            vertices.push(p);
        }
        let arc = |k: usize| 9 + (k % 8);
        let mut roots = Vec::new();
        for iy in 0..2 {
            for ix in 0..2 {
                let vs = [gid(ix, iy), gid(ix + 1, iy), gid(ix, iy + 1), gid(ix + 1, iy + 1)];
                let corners = vs.map(|v| vertices[v]);
                roots.push((RootMap::Bilinear(corners), vs));
            }
        }
        // (start, end) of the straight side and the arc angles in units of 45°
        let outer: [((usize, usize), (usize, usize), i32, i32); 8] = [
            ((0, 2), (1, 2), 3, 2),
            ((1, 2), (2, 2), 2, 1),
            ((2, 2), (2, 1), 1, 0),
            ((2, 1), (2, 0), 0, -1),
            ((2, 0), (1, 0), -1, -2),
            ((1, 0), (0, 0), -2, -3),
            ((0, 0), (0, 1), 5, 4),
            ((0, 1), (0, 2), 4, 3),
        ];
        for &((ax, ay), (bx, by), t0, t1) in &outer {
            let (a, b) = (gid(ax, ay), gid(bx, by));
            let ka = t0.rem_euclid(8) as usize;
            let kb = t1.rem_euclid(8) as usize;
            let map = RootMap::Arc {
                p0: vertices[a],
                p1: vertices[b],
                radius,
                theta0: t0 as f64 * PI / 4.0,
                theta1: t1 as f64 * PI / 4.0,
            };
            roots.push((map, [a, b, arc(ka), arc(kb)]));
        }
        let mut mesh = Mesh::from_roots(Some(radius), vertices, roots);
        for _ in 0..initial_refines {
            mesh.refine_global();
        }
        Ok(mesh)
    }

    /// Axis-aligned rectangle split into `nx × ny` cells; the sheet flag is
    /// set on grid lines at `y = 0`.
    pub fn rectangle(x: [f64; 2], y: [f64; 2], nx: usize, ny: usize) -> Result<Self> {
        if !(x[1] > x[0] && y[1] > y[0]) || nx == 0 || ny == 0 {
            return Err(Error::Domain("degenerate rectangle".into()));
        }
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                let px = x[0] + (x[1] - x[0]) * i as f64 / nx as f64;
                let py = y[0] + (y[1] - y[0]) * j as f64 / ny as f64;
                vertices.push([px, py]);
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut roots = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let vs = [id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1)];
                roots.push((RootMap::Bilinear(vs.map(|v| vertices[v])), vs));
            }
        }
        Ok(Mesh::from_roots(None, vertices, roots))
    }

    /// Same topology as [`Mesh::rectangle`] with every interior vertex
    /// displaced by `shift(i, j)`; used to test non-affine cells.
    pub fn distorted_rectangle(
        x: [f64; 2],
        y: [f64; 2],
        nx: usize,
        ny: usize,
        shift: impl Fn(usize, usize) -> [f64; 2],
    ) -> Result<Self> {
        let base = Mesh::rectangle(x, y, nx, ny)?;
        let mut vertices = base.vertices.clone();
        for j in 1..ny {
            for i in 1..nx {
                let d = shift(i, j);
                let v = &mut vertices[j * (nx + 1) + i];
                v[0] += d[0];
                v[1] += d[1];
            }
        }
        let roots = base
            .cells
            .iter()
            .map(|c| (RootMap::Bilinear(c.vertices.map(|v| vertices[v])), c.vertices))
            .collect();
        let mesh = Mesh::from_roots(None, vertices, roots);
        for &c in mesh.active_cells() {
            for xi in [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]] {
                if det2(&mesh.geometry(c).jacobian(xi)) <= 0.0 {
                    return Err(Error::Geometry {
                        cell: c,
                        detail: "vertex shift folds the cell".into(),
                    });
                }
            }
        }
        Ok(mesh)
    }

    /// Active cells in increasing id order.
    pub fn active_cells(&self) -> &[usize] {
        &self.active
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    pub fn cell(&self, id: usize) -> &Cell {
        &self.cells[id]
    }

    pub fn geometry(&self, id: usize) -> CellGeometry {
        let c = &self.cells[id];
        let size = 1.0 / (1u64 << c.level) as f64;
        CellGeometry {
            map: self.roots[c.root],
            origin: [c.index[0] as f64 * size, c.index[1] as f64 * size],
            size,
        }
    }

    pub fn center(&self, id: usize) -> [f64; 2] {
        self.geometry(id).point([0.5, 0.5])
    }

    /// Largest vertex-to-vertex distance (edges and diagonals).
    pub fn diameter(&self, id: usize) -> f64 {
        let v = self.cells[id].vertices.map(|k| self.vertices[k]);
        let mut d: f64 = 0.0;
        for a in 0..4 {
            for b in a + 1..4 {
                d = d.max((v[a][0] - v[b][0]).hypot(v[a][1] - v[b][1]));
            }
        }
        d
    }

    pub fn flags(&self, e: EdgeKey) -> EdgeFlags {
        self.edge_flags.get(&e).copied().unwrap_or_default()
    }

    /// Midpoint vertex of `e` if the edge has been split.
    pub fn midpoint(&self, e: EdgeKey) -> Option<usize> {
        self.edge_mid.get(&e).copied()
    }

    /// Edge that `e` is a half of, if any.
    pub fn parent_edge(&self, e: EdgeKey) -> Option<EdgeKey> {
        self.edge_parent.get(&e).copied()
    }

    /// Every edge of an active cell, in first-seen order over active cells.
    pub fn active_edges(&self) -> Vec<EdgeKey> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for &c in &self.active {
            for l in 0..4 {
                let e = self.cells[c].edge(l);
                if seen.insert(e) {
                    out.push(e);
                }
            }
        }
        out
    }

    pub fn refine_global(&mut self) {
        let all = self.active.clone();
        self.refine(&all);
    }

    /// Splits the marked active cells and closes the result so that
    /// neighbouring active cells differ by at most one level. Inactive or
    /// unknown ids are ignored.
    pub fn refine(&mut self, marked: &[usize]) {
        let mut todo: Vec<usize> = marked
            .iter()
            .copied()
            .filter(|&c| c < self.cells.len() && self.cells[c].is_active())
            .collect();
        todo.sort_unstable();
        todo.dedup();
        while !todo.is_empty() {
            for &c in &todo {
                if self.cells[c].is_active() {
                    self.split(c);
                }
            }
            self.rebuild_active();
            todo = self.irregular_cells();
        }
    }

    fn rebuild_active(&mut self) {
        self.active = (0..self.cells.len()).filter(|&c| self.cells[c].is_active()).collect();
    }

    /// Active cells with an edge whose halves have been split again.
    fn irregular_cells(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for &c in &self.active {
            let cell = &self.cells[c];
            let bad = (0..4).any(|l| {
                let [a, b] = cell.line_vertices(l);
                match self.edge_mid.get(&edge_key(a, b)) {
                    Some(&m) => {
                        self.edge_mid.contains_key(&edge_key(a, m)) || self.edge_mid.contains_key(&edge_key(m, b))
                    }
                    None => false,
                }
            });
            if bad {
                out.push(c);
            }
        }
        out
    }

    fn split(&mut self, c: usize) {
        let geo = self.geometry(c);
        let cell = self.cells[c].clone();
        let ref_mid = [[0.0, 0.5], [1.0, 0.5], [0.5, 0.0], [0.5, 1.0]];
        let mut m = [0usize; 4];
        for l in 0..4 {
            let [a, b] = cell.line_vertices(l);
            let key = edge_key(a, b);
            m[l] = match self.edge_mid.get(&key) {
                Some(&v) => v,
                None => {
                    let flags = self.flags(key);
                    let mut p = geo.point(ref_mid[l]);
                    if flags.interface {
                        p[1] = 0.0;
                    }
                    let v = self.vertices.len();
                    self.vertices.push(p);
                    self.edge_mid.insert(key, v);
                    for half in [edge_key(a, v), edge_key(v, b)] {
                        self.edge_flags.insert(half, flags);
                        self.edge_parent.insert(half, key);
                    }
                    v
                }
            };
        }
        let center = self.vertices.len();
        self.vertices.push(geo.point([0.5, 0.5]));
        let [v0, v1, v2, v3] = cell.vertices;
        let [m0, m1, m2, m3] = m;
        let child_vertices = [[v0, m2, m0, center], [m2, v1, center, m1], [m0, center, v2, m3], [center, m1, m3, v3]];
        let first = self.cells.len();
        for (k, vs) in child_vertices.into_iter().enumerate() {
            let (dx, dy) = ((k % 2) as u32, (k / 2) as u32);
            self.cells.push(Cell {
                root: cell.root,
                level: cell.level + 1,
                index: [2 * cell.index[0] + dx, 2 * cell.index[1] + dy],
                vertices: vs,
                parent: Some(c),
                children: None,
            });
        }
        self.cells[c].children = Some([first, first + 1, first + 2, first + 3]);
    }

    /// Sheet faces seen from above, sorted by `x`.
    pub fn interface_faces(&self) -> Result<Vec<InterfaceFace>> {
        let mut faces = Vec::new();
        for &c in &self.active {
            let cell = &self.cells[c];
            if self.center(c)[1] <= 0.0 {
                continue;
            }
            for l in 0..4 {
                if self.flags(cell.edge(l)).interface {
                    let [a, b] = cell.line_vertices(l);
                    let (xa, xb) = (self.vertices[a][0], self.vertices[b][0]);
                    faces.push(InterfaceFace {
                        cell: c,
                        line: l,
                        x0: xa.min(xb),
                        x1: xa.max(xb),
                    });
                }
            }
        }
        if faces.is_empty() {
            return Err(Error::Geometry {
                cell: 0,
                detail: "no mesh faces on the sheet y = 0".into(),
            });
        }
        faces.sort_by(|p, q| p.x0.total_cmp(&q.x0));
        Ok(faces)
    }

    /// Active edges on the outer boundary with the owning cell and line.
    pub fn boundary_faces(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &c in &self.active {
            for l in 0..4 {
                if self.flags(self.cells[c].edge(l)).boundary {
                    out.push((c, l));
                }
            }
        }
        out
    }

    /// Largest level difference between active cells sharing part of an edge.
    /// Computed from edge ancestry, so it also sees jumps across hanging edges.
    pub fn max_level_jump(&self) -> u8 {
        let owner: HashSet<EdgeKey> = self.active_edges().into_iter().collect();
        let mut worst = 0;
        for &c in &self.active {
            for l in 0..4 {
                let mut e = self.cells[c].edge(l);
                let mut up = 0u8;
                while let Some(p) = self.parent_edge(e) {
                    up += 1;
                    if owner.contains(&p) {
                        worst = worst.max(up);
                    }
                    e = p;
                }
            }
        }
        worst
    }

    /// Hash of the active topology; equal meshes give equal fingerprints.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.active.len().hash(&mut h);
        for &c in &self.active {
            self.cells[c].vertices.hash(&mut h);
            self.cells[c].level.hash(&mut h);
        }
        h.finish()
    }

    /// Writes the active cells as a legacy ASCII VTK unstructured grid with
    /// the given per-cell scalar fields.
    pub fn write_vtk(&self, path: &Path, cell_fields: &[(&str, &[f64])]) -> Result<()> {
        for (name, data) in cell_fields {
            if data.len() != self.active.len() {
                return Err(Error::Domain(format!(
                    "cell field {name} has {} values for {} cells",
                    data.len(),
                    self.active.len()
                )));
            }
        }
        let mut s = String::new();
        let _ = writeln!(s, "# vtk DataFile Version 3.0\nsheet mesh\nASCII\nDATASET UNSTRUCTURED_GRID");
        let _ = writeln!(s, "POINTS {} double", self.vertices.len());
        for p in &self.vertices {
            let _ = writeln!(s, "{} {} 0", p[0], p[1]);
        }
        let n = self.active.len();
        let _ = writeln!(s, "CELLS {} {}", n, 5 * n);
        for &c in &self.active {
            let [v0, v1, v2, v3] = self.cells[c].vertices;
            let _ = writeln!(s, "4 {v0} {v1} {v3} {v2}");
        }
        let _ = writeln!(s, "CELL_TYPES {n}");
        for _ in 0..n {
            let _ = writeln!(s, "9");
        }
        if !cell_fields.is_empty() {
            let _ = writeln!(s, "CELL_DATA {n}");
            for (name, data) in cell_fields {
                let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
                for v in data.iter() {
                    let _ = writeln!(s, "{v}");
                }
            }
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}
