//! Order-2 curl-conforming quadrilateral elements.
//!
//! The reference space is `Q_{1,2} × Q_{2,1}` on `[0, 1]²`, spanned by the
//! tensor Lagrange products
//!
//! * `(G_i(u) N_j(v), 0)` for the `E_x`-type functions,
//! * `(0, N_j(u) G_i(v))` for the `E_y`-type functions,
//!
//! with `G_i` linear Lagrange on the two Gauss points of `[0, 1]` and `N_j`
//! quadratic Lagrange on `{0, ½, 1}`. The degrees of freedom are point values
//! of the tangential component at the Gauss points of the four lines and of
//! the mid lines, so each line carries two of them and four are interior.
//! Physical functions use the covariant map `φ = J⁻ᵀ φ̂`, `curl φ = curl φ̂ / det J`.
//!
//! Local numbering: line `l` owns dofs `2l` and `2l + 1` (ordered along the
//! line direction of [`crate::mesh::LINE_VERTICES`]); dofs 8 and 9 are `E_x`
//! on `v = ½`, dofs 10 and 11 are `E_y` on `u = ½`.

use crate::mesh::{det2, edge_key, EdgeKey, InterfaceFace, Mesh};
use crate::{Complex64, Error, Result};
use std::collections::HashMap;

pub const DOFS_PER_CELL: usize = 12;

const G0: f64 = 0.5 - 0.288_675_134_594_812_9;
const G1: f64 = 0.5 + 0.288_675_134_594_812_9;
/// Gauss points of `[0, 1]` carrying the tangential dofs.
pub const GAUSS2: [f64; 2] = [G0, G1];

/// Linear Lagrange basis on the Gauss points.
pub fn lagrange_gauss(t: f64) -> [f64; 2] {
    [(t - G1) / (G0 - G1), (t - G0) / (G1 - G0)]
}

/// Quadratic Lagrange basis on `{0, ½, 1}`.
pub fn lagrange_nodes(t: f64) -> [f64; 3] {
    [2.0 * (t - 0.5) * (t - 1.0), -4.0 * t * (t - 1.0), 2.0 * t * (t - 0.5)]
}

fn lagrange_nodes_deriv(t: f64) -> [f64; 3] {
    [4.0 * t - 3.0, 4.0 - 8.0 * t, 4.0 * t - 1.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Component {
    X,
    Y,
}

/// `(component, gauss index i, node index j)` of each local dof.
const LOCAL: [(Component, usize, usize); DOFS_PER_CELL] = [
    (Component::Y, 0, 0),
    (Component::Y, 1, 0),
    (Component::Y, 0, 2),
    (Component::Y, 1, 2),
    (Component::X, 0, 0),
    (Component::X, 1, 0),
    (Component::X, 0, 2),
    (Component::X, 1, 2),
    (Component::X, 0, 1),
    (Component::X, 1, 1),
    (Component::Y, 0, 1),
    (Component::Y, 1, 1),
];

/// Reference values and curls of the 12 local functions at `xi`.
pub fn reference_shape(xi: [f64; 2]) -> ([[f64; 2]; DOFS_PER_CELL], [f64; DOFS_PER_CELL]) {
    let [u, v] = xi;
    let (gu, gv) = (lagrange_gauss(u), lagrange_gauss(v));
    let (nu, nv) = (lagrange_nodes(u), lagrange_nodes(v));
    let (dnu, dnv) = (lagrange_nodes_deriv(u), lagrange_nodes_deriv(v));
    let mut val = [[0.0; 2]; DOFS_PER_CELL];
    let mut curl = [0.0; DOFS_PER_CELL];
    for (k, &(comp, i, j)) in LOCAL.iter().enumerate() {
        match comp {
            Component::X => {
                val[k][0] = gu[i] * nv[j];
                curl[k] = -gu[i] * dnv[j];
            }
            Component::Y => {
                val[k][1] = nu[j] * gv[i];
                curl[k] = dnu[j] * gv[i];
            }
        }
    }
    (val, curl)
}

/// Reference point and reference direction of each local dof functional.
pub fn dof_functionals() -> [([f64; 2], [f64; 2]); DOFS_PER_CELL] {
    let nodes = [0.0, 0.5, 1.0];
    LOCAL.map(|(comp, i, j)| match comp {
        Component::X => ([GAUSS2[i], nodes[j]], [1.0, 0.0]),
        Component::Y => ([nodes[j], GAUSS2[i]], [0.0, 1.0]),
    })
}

/// Point on local line `line` at parameter `t` along its direction.
pub fn line_point(line: usize, t: f64) -> [f64; 2] {
    match line {
        0 => [0.0, t],
        1 => [1.0, t],
        2 => [t, 0.0],
        _ => [t, 1.0],
    }
}

/// Reference direction of local line `line`.
pub fn line_direction(line: usize) -> [f64; 2] {
    if line < 2 {
        [0.0, 1.0]
    } else {
        [1.0, 0.0]
    }
}

/// Tensor Gauss–Legendre rule with `n` points on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[n - 1 - i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Points and weights of a tensor rule on the reference square.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn tensor(n: usize) -> Self {
        let (x, w) = gauss_legendre(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                points.push([x[i], x[j]]);
                weights.push(w[i] * w[j]);
            }
        }
        QuadratureRule { points, weights }
    }

    /// `n × n` Gauss rule on each of `m × m` equal sub-squares.
    pub fn subdivided(n: usize, m: usize) -> Self {
        let base = QuadratureRule::tensor(n);
        let h = 1.0 / m as f64;
        let mut points = Vec::with_capacity(base.points.len() * m * m);
        let mut weights = Vec::with_capacity(base.points.len() * m * m);
        for by in 0..m {
            for bx in 0..m {
                for (p, w) in base.points.iter().zip(&base.weights) {
                    points.push([(bx as f64 + p[0]) * h, (by as f64 + p[1]) * h]);
                    weights.push(w * h * h);
                }
            }
        }
        QuadratureRule { points, weights }
    }
}

/// Physical shape data of one cell at a set of reference points, with the
/// global orientation signs already applied.
#[derive(Debug, Clone)]
pub struct CellValues {
    pub points: Vec<[f64; 2]>,
    /// `det J` times the reference weight.
    pub jxw: Vec<f64>,
    pub values: Vec<[[f64; 2]; DOFS_PER_CELL]>,
    pub curls: Vec<[f64; DOFS_PER_CELL]>,
}

impl CellValues {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One hanging dof expressed through master dofs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintLine {
    pub dof: usize,
    pub entries: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSet {
    pub lines: Vec<ConstraintLine>,
    constrained: Vec<bool>,
}

impl ConstraintSet {
    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn is_constrained(&self, dof: usize) -> bool {
        self.constrained.get(dof).copied().unwrap_or(false)
    }

    /// Overwrites every constrained entry with its master combination.
    pub fn distribute(&self, coeffs: &mut [Complex64]) {
        for line in &self.lines {
            coeffs[line.dof] = line.entries.iter().map(|&(m, w)| w * coeffs[m]).sum();
        }
    }

    /// Sets constrained entries to zero.
    pub fn zero_constrained(&self, coeffs: &mut [Complex64]) {
        for line in &self.lines {
            coeffs[line.dof] = Complex64::new(0.0, 0.0);
        }
    }
}

/// Coefficients of a discrete field in a given space.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSolution {
    pub coeffs: Vec<Complex64>,
}

impl FieldSolution {
    pub fn zeros(n: usize) -> Self {
        FieldSolution {
            coeffs: vec![Complex64::new(0.0, 0.0); n],
        }
    }
}

#[derive(Debug, Clone)]
pub struct EdgeFESpace {
    pub order: usize,
    pub n_dofs: usize,
    cells: Vec<usize>,
    slot: HashMap<usize, usize>,
    dofs: Vec<[usize; DOFS_PER_CELL]>,
    signs: Vec<[f64; DOFS_PER_CELL]>,
    edges: HashMap<EdgeKey, usize>,
    constraints: ConstraintSet,
    mesh_fingerprint: u64,
}

/// Enumerates the dofs of the active mesh and builds hanging-edge constraints.
pub fn distribute_dofs(mesh: &Mesh, order: usize) -> Result<EdgeFESpace> {
    if order != 2 {
        return Err(Error::UnsupportedOrder(order));
    }
    let edge_list = mesh.active_edges();
    let edges: HashMap<EdgeKey, usize> = edge_list.iter().enumerate().map(|(i, &e)| (e, i)).collect();
    let n_edge_dofs = 2 * edge_list.len();
    let cells = mesh.active_cells().to_vec();
    let mut dofs = Vec::with_capacity(cells.len());
    let mut signs = Vec::with_capacity(cells.len());
    let mut slot = HashMap::with_capacity(cells.len());
    for (s, &c) in cells.iter().enumerate() {
        let cell = mesh.cell(c);
        let mut d = [0usize; DOFS_PER_CELL];
        let mut sg = [1.0; DOFS_PER_CELL];
        for line in 0..4 {
            let [a, b] = cell.line_vertices(line);
            let e = edges[&edge_key(a, b)];
            let reversed = a > b;
            for m in 0..2 {
                let k = 2 * line + m;
                d[k] = 2 * e + if reversed { 1 - m } else { m };
                sg[k] = if reversed { -1.0 } else { 1.0 };
            }
        }
        for m in 0..4 {
            d[8 + m] = n_edge_dofs + 4 * s + m;
        }
        dofs.push(d);
        signs.push(sg);
        slot.insert(c, s);
    }
    let n_dofs = n_edge_dofs + 4 * cells.len();
    let mut space = EdgeFESpace {
        order,
        n_dofs,
        cells,
        slot,
        dofs,
        signs,
        edges,
        constraints: ConstraintSet::default(),
        mesh_fingerprint: mesh.fingerprint(),
    };
    space.constraints = build_constraints(&space, mesh);
    Ok(space)
}

/// Expresses the dofs of every hanging half-edge through the dofs of the
/// coarse edge it lies on, by evaluating the coarse tangential trace.
///
/// The half adjacent to the parent's low vertex runs in the parent's
/// direction with `t_P = t/2`; the other half runs backwards from the
/// parent's high vertex to the midpoint, `t_P = 1 − t/2`. The tangent of a
/// half is half as long as the parent's, hence the factor `½`.
pub fn build_constraints(space: &EdgeFESpace, mesh: &Mesh) -> ConstraintSet {
    let mut lines = Vec::new();
    let mut keys: Vec<(&EdgeKey, &usize)> = space.edges.iter().collect();
    keys.sort_by_key(|(_, &i)| i);
    for (&e, &idx) in keys {
        let Some(p) = mesh.parent_edge(e) else { continue };
        let Some(&pidx) = space.edges.get(&p) else { continue };
        let first_half = e.0 == p.0 || e.1 == p.0;
        for (j, &g) in GAUSS2.iter().enumerate() {
            let (t_p, dir) = if first_half { (0.5 * g, 1.0) } else { (1.0 - 0.5 * g, -1.0) };
            let l = lagrange_gauss(t_p);
            lines.push(ConstraintLine {
                dof: 2 * idx + j,
                entries: vec![(2 * pidx, 0.5 * dir * l[0]), (2 * pidx + 1, 0.5 * dir * l[1])],
            });
        }
    }
    lines.sort_by_key(|l| l.dof);
    let mut constrained = vec![false; space.n_dofs];
    for l in &lines {
        constrained[l.dof] = true;
    }
    ConstraintSet { lines, constrained }
}

impl EdgeFESpace {
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn mesh_fingerprint(&self) -> u64 {
        self.mesh_fingerprint
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    fn slot(&self, cell: usize) -> usize {
        self.slot[&cell]
    }

    pub fn cell_dofs(&self, cell: usize) -> &[usize; DOFS_PER_CELL] {
        &self.dofs[self.slot(cell)]
    }

    pub fn cell_signs(&self, cell: usize) -> &[f64; DOFS_PER_CELL] {
        &self.signs[self.slot(cell)]
    }

    /// Global dofs of the edge `e` in global orientation order.
    pub fn edge_dofs(&self, e: EdgeKey) -> Option<[usize; 2]> {
        self.edges.get(&e).map(|&i| [2 * i, 2 * i + 1])
    }

    /// Physical values and curls of the oriented local functions at the
    /// given reference points.
    pub fn shape_eval(&self, mesh: &Mesh, cell: usize, points: &[[f64; 2]]) -> Result<CellValues> {
        let rule = QuadratureRule {
            points: points.to_vec(),
            weights: vec![1.0; points.len()],
        };
        self.cell_values(mesh, cell, &rule)
    }

    pub fn cell_values(&self, mesh: &Mesh, cell: usize, rule: &QuadratureRule) -> Result<CellValues> {
        let geo = mesh.geometry(cell);
        let sg = self.cell_signs(cell);
        let n = rule.points.len();
        let mut cv = CellValues {
            points: Vec::with_capacity(n),
            jxw: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            curls: Vec::with_capacity(n),
        };
        for (q, &xi) in rule.points.iter().enumerate() {
            let (x, j) = geo.eval(xi);
            let det = det2(&j);
            if !(det > 0.0) {
                return Err(Error::Geometry {
                    cell,
                    detail: format!("det J = {det} at reference point {xi:?}"),
                });
            }
            // J⁻ᵀ = [[j11, -j10], [-j01, j00]] / det
            let jit = [[j[1][1] / det, -j[1][0] / det], [-j[0][1] / det, j[0][0] / det]];
            let (rv, rc) = reference_shape(xi);
            let mut val = [[0.0; 2]; DOFS_PER_CELL];
            let mut curl = [0.0; DOFS_PER_CELL];
            for k in 0..DOFS_PER_CELL {
                val[k] = [
                    sg[k] * (jit[0][0] * rv[k][0] + jit[0][1] * rv[k][1]),
                    sg[k] * (jit[1][0] * rv[k][0] + jit[1][1] * rv[k][1]),
                ];
                curl[k] = sg[k] * rc[k] / det;
            }
            cv.points.push(x);
            cv.jxw.push(det * rule.weights[q]);
            cv.values.push(val);
            cv.curls.push(curl);
        }
        Ok(cv)
    }

    /// Local coefficients of `field` on `cell`, in oriented local numbering.
    pub fn local_coeffs(&self, cell: usize, field: &[Complex64]) -> [Complex64; DOFS_PER_CELL] {
        let d = self.cell_dofs(cell);
        std::array::from_fn(|k| field[d[k]])
    }

    /// Field value and curl at reference point `xi` of `cell`.
    pub fn evaluate(&self, mesh: &Mesh, field: &[Complex64], cell: usize, xi: [f64; 2]) -> Result<([Complex64; 2], Complex64)> {
        let cv = self.shape_eval(mesh, cell, &[xi])?;
        let u = self.local_coeffs(cell, field);
        let mut e = [Complex64::new(0.0, 0.0); 2];
        let mut c = Complex64::new(0.0, 0.0);
        for k in 0..DOFS_PER_CELL {
            e[0] += u[k] * cv.values[0][k][0];
            e[1] += u[k] * cv.values[0][k][1];
            c += u[k] * cv.curls[0][k];
        }
        Ok((e, c))
    }

    /// Tangential component along local line `line` (unit tangent in the
    /// line direction) at parameter `t`.
    pub fn line_tangential(&self, mesh: &Mesh, field: &[Complex64], cell: usize, line: usize, t: f64) -> Result<Complex64> {
        let xi = line_point(line, t);
        let (e, _) = self.evaluate(mesh, field, cell, xi)?;
        let j = mesh.geometry(cell).jacobian(xi);
        let d = line_direction(line);
        let tan = [j[0][0] * d[0] + j[0][1] * d[1], j[1][0] * d[0] + j[1][1] * d[1]];
        let len = tan[0].hypot(tan[1]);
        Ok((e[0] * tan[0] + e[1] * tan[1]) / len)
    }

    /// `E_x` on a sheet face at physical abscissae inside `[x0, x1]`,
    /// evaluated from the cell above the sheet.
    pub fn tangential_trace(&self, mesh: &Mesh, field: &[Complex64], face: &InterfaceFace, xs: &[f64]) -> Result<Vec<Complex64>> {
        let cell = mesh.cell(face.cell);
        let [a, b] = cell.line_vertices(face.line);
        let (xa, xb) = (mesh.vertices[a][0], mesh.vertices[b][0]);
        xs.iter()
            .map(|&x| {
                let t = ((x - xa) / (xb - xa)).clamp(0.0, 1.0);
                let (e, _) = self.evaluate(mesh, field, face.cell, line_point(face.line, t))?;
                Ok(e[0])
            })
            .collect()
    }

    /// Dof values of the nodal interpolant of `f`, with hanging dofs taken
    /// from the constraints.
    pub fn interpolate(&self, mesh: &Mesh, f: impl Fn([f64; 2]) -> [Complex64; 2]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.n_dofs];
        let fun = dof_functionals();
        for &c in &self.cells {
            let geo = mesh.geometry(c);
            let d = self.cell_dofs(c);
            let sg = self.cell_signs(c);
            for k in 0..DOFS_PER_CELL {
                let (xi, dir) = fun[k];
                let (x, j) = geo.eval(xi);
                let tan = [j[0][0] * dir[0] + j[0][1] * dir[1], j[1][0] * dir[0] + j[1][1] * dir[1]];
                let v = f(x);
                out[d[k]] = sg[k] * (v[0] * tan[0] + v[1] * tan[1]);
            }
        }
        self.constraints.distribute(&mut out);
        out
    }
}

/// Reference dof functionals applied to a reference vector field.
pub fn reference_interpolate(f: impl Fn([f64; 2]) -> [f64; 2]) -> [f64; DOFS_PER_CELL] {
    let fun = dof_functionals();
    std::array::from_fn(|k| {
        let (xi, dir) = fun[k];
        let v = f(xi);
        v[0] * dir[0] + v[1] * dir[1]
    })
}
