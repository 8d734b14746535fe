//! Goal-oriented error estimation.
//!
//! The quantity of interest is the band-weighted curl energy
//! `J(E) = ∫ ϖ |curl E|²`. Cell indicators combine the primal residual
//! weighted by the dual reconstruction error and the dual residual weighted
//! by the primal reconstruction error, both in variational form.

use crate::assembly::{cell_faces, touches_disk, QUAD_POINTS, SOURCE_SUBDIVISION};
use crate::assembly::SheetModel;
use crate::fespace::{
    dof_functionals, gauss_legendre, GAUSS2, line_direction, line_point, reference_shape, EdgeFESpace, QuadratureRule,
    DOFS_PER_CELL,
};
use crate::mesh::{det2, Mesh};
use crate::{Complex64, Error, Result, I};
use faer::linalg::solvers::Solve;
use faer::Mat;
use rayon::prelude::*;
use std::collections::HashMap;
use std::sync::OnceLock;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Fraction of cells marked by indicator size.
pub const MARK_FRACTION: f64 = 0.15;
/// Cells at this level are never marked.
pub const MAX_LEVEL: u8 = 12;

/// Smooth band `ϖ(y) = cos²(πy / 2d_w)` for `|y| ≤ d_w`, zero outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightFunction {
    pub d_w: f64,
}

impl WeightFunction {
    pub fn new(d_w: f64) -> Result<Self> {
        if !(d_w > 0.0) || !d_w.is_finite() {
            return Err(Error::Domain(format!("band half-width must be positive, got {d_w}")));
        }
        Ok(WeightFunction { d_w })
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        let y = x[1];
        if y.abs() > self.d_w {
            return 0.0;
        }
        let c = (std::f64::consts::FRAC_PI_2 * y / self.d_w).cos();
        c * c
    }
}

/// Physical data of a cell map at one reference point.
struct MapPoint {
    x: [f64; 2],
    det: f64,
    jit: [[f64; 2]; 2],
}

fn map_point(mesh: &Mesh, cell: usize, xi: [f64; 2]) -> Result<MapPoint> {
    let (x, j) = mesh.geometry(cell).eval(xi);
    let det = det2(&j);
    if !(det > 0.0) {
        return Err(Error::Geometry {
            cell,
            detail: format!("det J = {det} at reference point {xi:?}"),
        });
    }
    let jit = [[j[1][1] / det, -j[1][0] / det], [-j[0][1] / det, j[0][0] / det]];
    Ok(MapPoint { x, det, jit })
}

impl MapPoint {
    fn physical(&self, (g, c): RefValue) -> RefValue {
        (
            [
                self.jit[0][0] * g[0] + self.jit[0][1] * g[1],
                self.jit[1][0] * g[0] + self.jit[1][1] * g[1],
            ],
            c / self.det,
        )
    }
}

/// Vector value and scalar curl, either in reference or physical form.
type RefValue = ([Complex64; 2], Complex64);

/// Reference pullback of a discrete field on `cell`.
fn reference_field(space: &EdgeFESpace, cell: usize, field: &[Complex64], xi: [f64; 2]) -> RefValue {
    let u = space.local_coeffs(cell, field);
    let sg = space.cell_signs(cell);
    let (v, c) = reference_shape(xi);
    let mut e = [ZERO; 2];
    let mut cu = ZERO;
    for k in 0..DOFS_PER_CELL {
        let a = u[k] * sg[k];
        e[0] += a * v[k][0];
        e[1] += a * v[k][1];
        cu += a * c[k];
    }
    (e, cu)
}

/// `∫ ϖ |curl E|²` with the assembly quadrature.
pub fn qoi(mesh: &Mesh, space: &EdgeFESpace, field: &[Complex64], weight: &WeightFunction) -> Result<f64> {
    let rule = QuadratureRule::tensor(QUAD_POINTS);
    let parts: Vec<f64> = space
        .cells()
        .par_iter()
        .map(|&c| {
            let cv = space.cell_values(mesh, c, &rule)?;
            let u = space.local_coeffs(c, field);
            let mut s = 0.0;
            for q in 0..cv.len() {
                let w = weight.value(cv.points[q]);
                if w == 0.0 {
                    continue;
                }
                let curl: Complex64 = (0..DOFS_PER_CELL).map(|k| u[k] * cv.curls[q][k]).sum();
                s += w * curl.norm_sqr() * cv.jxw[q];
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum())
}

const ORDER3: usize = 24;
const NODES3: [f64; 4] = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];

fn gauss3() -> [f64; 3] {
    let h = 0.5 * (0.6f64).sqrt();
    [0.5 - h, 0.5, 0.5 + h]
}

fn lagrange<const N: usize>(nodes: &[f64; N], t: f64) -> ([f64; N], [f64; N]) {
    let mut val = [0.0; N];
    let mut der = [0.0; N];
    for i in 0..N {
        let mut p = 1.0;
        let mut d = 0.0;
        for j in 0..N {
            if j == i {
                continue;
            }
            let s = 1.0 / (nodes[i] - nodes[j]);
            d = d * (t - nodes[j]) * s + p * s;
            p *= (t - nodes[j]) * s;
        }
        val[i] = p;
        der[i] = d;
    }
    (val, der)
}

/// Reference values and curls of the 24 order-3 functions used for the
/// patch fit: `E_x` in `Q_{2,3}`, `E_y` in `Q_{3,2}`.
fn order3_shape(xi: [f64; 2]) -> ([[f64; 2]; ORDER3], [f64; ORDER3]) {
    let [u, v] = xi;
    let g = gauss3();
    let (gu, _) = lagrange(&g, u);
    let (gv, _) = lagrange(&g, v);
    let (nu, dnu) = lagrange(&NODES3, u);
    let (nv, dnv) = lagrange(&NODES3, v);
    let mut val = [[0.0; 2]; ORDER3];
    let mut curl = [0.0; ORDER3];
    for j in 0..4 {
        for i in 0..3 {
            let k = 3 * j + i;
            val[k][0] = gu[i] * nv[j];
            curl[k] = -gu[i] * dnv[j];
            let k = 12 + 3 * j + i;
            val[k][1] = nu[j] * gv[i];
            curl[k] = dnu[j] * gv[i];
        }
    }
    (val, curl)
}

fn child_offset(k: usize) -> [f64; 2] {
    [0.5 * (k % 2) as f64, 0.5 * (k / 2) as f64]
}

/// Parent edges of the order-3 space: the tangential component, the fixed
/// node index (`0` or `3`) and the children along the edge in order.
const PARENT_EDGES: [(usize, usize, [usize; 2]); 4] = [(0, 0, [0, 1]), (0, 3, [2, 3]), (1, 0, [0, 2]), (1, 3, [1, 3])];

fn order3_index(component: usize, node: usize, gauss: usize) -> usize {
    12 * component + 3 * node + gauss
}

/// Map from the 48 child dof values of a 2×2 patch to the coefficients of
/// the parent order-3 field.
///
/// Edge coefficients are fitted to the tangential dof samples on each
/// parent edge alone, so patches sharing an edge agree on it and the
/// reconstruction is tangentially continuous. The interior
/// coefficients are a least-squares fit to the remaining data.
fn patch_projector() -> &'static Vec<[f64; 4 * DOFS_PER_CELL]> {
    static P: OnceLock<Vec<[f64; 4 * DOFS_PER_CELL]>> = OnceLock::new();
    P.get_or_init(|| {
        let rows = 4 * DOFS_PER_CELL;
        let fun = dof_functionals();
        let a = Mat::<f64>::from_fn(rows, ORDER3, |r, m| {
            let (child, k) = (r / DOFS_PER_CELL, r % DOFS_PER_CELL);
            let (xi, dir) = fun[k];
            let off = child_offset(child);
            let (val, _) = order3_shape([off[0] + 0.5 * xi[0], off[1] + 0.5 * xi[1]]);
            0.5 * (val[m][0] * dir[0] + val[m][1] * dir[1])
        });
        // edge coefficients: P2 least-squares fit to the four tangential
        // samples of the children along each parent edge
        let g = gauss3();
        let mut edge = Mat::<f64>::zeros(ORDER3, rows);
        let mut is_edge = [false; ORDER3];
        for (comp, node, children) in PARENT_EDGES {
            let fixed = if node == 0 { 0.0 } else { 1.0 };
            let mut ts = Vec::with_capacity(4);
            let mut samples = Mat::<f64>::zeros(4, rows);
            for (half, &child) in children.iter().enumerate() {
                let off = child_offset(child);
                for &gq in &GAUSS2 {
                    let t = 0.5 * (half as f64 + gq);
                    let p = if comp == 0 { [t, fixed] } else { [fixed, t] };
                    let (val, _) = reference_shape([2.0 * (p[0] - off[0]), 2.0 * (p[1] - off[1])]);
                    for k in 0..DOFS_PER_CELL {
                        // parent reference field is twice the child's
                        samples[(ts.len(), child * DOFS_PER_CELL + k)] = 2.0 * val[k][comp];
                    }
                    ts.push(t);
                }
            }
            let v = Mat::<f64>::from_fn(4, 3, |q, i| lagrange(&g, ts[q]).0[i]);
            let fit = (v.transpose() * &v).partial_piv_lu().solve(&(v.transpose() * &samples));
            for i in 0..3 {
                let m = order3_index(comp, node, i);
                is_edge[m] = true;
                for c in 0..rows {
                    edge[(m, c)] = fit[(i, c)];
                }
            }
        }
        let interior: Vec<usize> = (0..ORDER3).filter(|&m| !is_edge[m]).collect();
        let edges: Vec<usize> = (0..ORDER3).filter(|&m| is_edge[m]).collect();
        let a_i = Mat::<f64>::from_fn(rows, interior.len(), |r, j| a[(r, interior[j])]);
        let a_e = Mat::<f64>::from_fn(rows, edges.len(), |r, j| a[(r, edges[j])]);
        let e_rows = Mat::<f64>::from_fn(edges.len(), rows, |j, c| edge[(edges[j], c)]);
        let residual = Mat::<f64>::identity(rows, rows) - &a_e * &e_rows;
        let ata = a_i.transpose() * &a_i;
        let p_i = ata.partial_piv_lu().solve(&(a_i.transpose() * &residual));
        let mut out = vec![[0.0; 4 * DOFS_PER_CELL]; ORDER3];
        for (j, &m) in edges.iter().enumerate() {
            out[m] = std::array::from_fn(|c| e_rows[(j, c)]);
        }
        for (j, &m) in interior.iter().enumerate() {
            out[m] = std::array::from_fn(|c| p_i[(j, c)]);
        }
        out
    })
}

#[derive(Debug, Clone)]
enum Patch {
    /// No parent to reconstruct from.
    Zero,
    /// Order-3 fit over the parent of the cell's sibling patch.
    Fit { offset: [f64; 2], coeffs: usize },
}

/// Patchwise higher-order reconstruction `π E_H` of a discrete field.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    patches: Vec<Patch>,
    fits: Vec<[Complex64; ORDER3]>,
    slot: HashMap<usize, usize>,
}

/// Active cell containing reference point `xi` of `cell` and the local
/// coordinates there.
fn locate(mesh: &Mesh, mut cell: usize, mut xi: [f64; 2]) -> (usize, [f64; 2]) {
    while let Some(ch) = mesh.cell(cell).children {
        let i = usize::from(xi[0] >= 0.5);
        let j = usize::from(xi[1] >= 0.5);
        cell = ch[i + 2 * j];
        xi = [(2.0 * xi[0] - i as f64).clamp(0.0, 1.0), (2.0 * xi[1] - j as f64).clamp(0.0, 1.0)];
    }
    (cell, xi)
}

/// Reference tangential dof values of `child` for the patch fit: its own
/// coefficients when active, otherwise samples of the field in its
/// descendants.
fn child_samples(mesh: &Mesh, space: &EdgeFESpace, field: &[Complex64], child: usize) -> Result<[Complex64; DOFS_PER_CELL]> {
    if mesh.cell(child).is_active() {
        let u = space.local_coeffs(child, field);
        let sg = space.cell_signs(child);
        return Ok(std::array::from_fn(|k| u[k] * sg[k]));
    }
    let geo = mesh.geometry(child);
    let mut out = [ZERO; DOFS_PER_CELL];
    for (k, (xi, dir)) in dof_functionals().into_iter().enumerate() {
        let j = geo.jacobian(xi);
        let t = [j[0][0] * dir[0] + j[0][1] * dir[1], j[1][0] * dir[0] + j[1][1] * dir[1]];
        let (c, local) = locate(mesh, child, xi);
        let (e, _) = space.evaluate(mesh, field, c, local)?;
        out[k] = e[0] * t[0] + e[1] * t[1];
    }
    Ok(out)
}

/// Builds `π E_H` on every active cell.
///
/// Every refined cell uses the order-3 least-squares fit over its parent.
/// Siblings that are refined further contribute samples of the field in
/// their descendants. Root cells get a zero weight.
pub fn reconstruct(mesh: &Mesh, space: &EdgeFESpace, field: &[Complex64]) -> Result<Reconstruction> {
    let proj = patch_projector();
    let mut parents: Vec<usize> = space.cells().iter().filter_map(|&c| mesh.cell(c).parent).collect();
    parents.sort_unstable();
    parents.dedup();
    let fits: Vec<[Complex64; ORDER3]> = parents
        .par_iter()
        .map(|&p| {
            let ch = mesh.cell(p).children.expect("refined parent");
            let mut data = [ZERO; 4 * DOFS_PER_CELL];
            for (n, &c) in ch.iter().enumerate() {
                data[n * DOFS_PER_CELL..(n + 1) * DOFS_PER_CELL].copy_from_slice(&child_samples(mesh, space, field, c)?);
            }
            Ok(std::array::from_fn(|m| proj[m].iter().zip(&data).map(|(&w, &d)| w * d).sum()))
        })
        .collect::<Result<_>>()?;
    let fit_of: HashMap<usize, usize> = parents.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let patches: Vec<Patch> = space
        .cells()
        .iter()
        .map(|&c| {
            let cell = mesh.cell(c);
            match cell.parent {
                None => Patch::Zero,
                Some(p) => Patch::Fit {
                    offset: [0.5 * (cell.index[0] % 2) as f64, 0.5 * (cell.index[1] % 2) as f64],
                    coeffs: fit_of[&p],
                },
            }
        })
        .collect();
    let slot = space.cells().iter().enumerate().map(|(s, &c)| (c, s)).collect();
    Ok(Reconstruction { patches, fits, slot })
}

impl Reconstruction {
    /// Reference pullback of `π E_H` on `cell` at local point `xi`, or `None`
    /// where no reconstruction exists.
    fn reference(&self, cell: usize, xi: [f64; 2]) -> Option<RefValue> {
        let Patch::Fit { offset, coeffs } = &self.patches[self.slot[&cell]] else {
            return None;
        };
        let (v, c) = order3_shape([offset[0] + 0.5 * xi[0], offset[1] + 0.5 * xi[1]]);
        let mut e = [ZERO; 2];
        let mut cu = ZERO;
        for (m, a) in self.fits[*coeffs].iter().enumerate() {
            e[0] += a * v[m][0];
            e[1] += a * v[m][1];
            cu += a * c[m];
        }
        // the child map is the parent map scaled by one half
        Some(([0.5 * e[0], 0.5 * e[1]], 0.25 * cu))
    }

    /// Physical `π E_H − E_H` on `cell` at local point `xi`.
    pub fn difference(&self, mesh: &Mesh, space: &EdgeFESpace, field: &[Complex64], cell: usize, xi: [f64; 2]) -> Result<RefValue> {
        let mp = map_point(mesh, cell, xi)?;
        Ok(mp.physical(self.reference_difference(space, field, cell, xi)))
    }

    fn reference_difference(&self, space: &EdgeFESpace, field: &[Complex64], cell: usize, xi: [f64; 2]) -> RefValue {
        match self.reference(cell, xi) {
            None => ([ZERO; 2], ZERO),
            Some((g, c)) => {
                let (e, ce) = reference_field(space, cell, field, xi);
                ([g[0] - e[0], g[1] - e[1]], c - ce)
            }
        }
    }

    /// Physical `π E_H` on `cell` at local point `xi`; zero without a parent.
    pub fn value(&self, mesh: &Mesh, cell: usize, xi: [f64; 2]) -> Result<RefValue> {
        let mp = map_point(mesh, cell, xi)?;
        Ok(mp.physical(self.reference(cell, xi).unwrap_or(([ZERO; 2], ZERO))))
    }
}

/// Cell indicators `η_Q = ½|ρ_Q + ρ*_Q|` over the active cells.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorMap {
    pub cells: Vec<usize>,
    pub eta: Vec<f64>,
    pub rho: Vec<Complex64>,
    pub rho_star: Vec<Complex64>,
}

impl IndicatorMap {
    /// `Σ η_Q`.
    pub fn total(&self) -> f64 {
        self.eta.iter().sum()
    }

    /// `½ Σ (ρ_Q + ρ*_Q)`, the signed estimate.
    pub fn estimate(&self) -> Complex64 {
        self.rho.iter().zip(&self.rho_star).map(|(a, b)| 0.5 * (a + b)).sum()
    }

    /// Indicator per active cell in the mesh's active order, for output.
    pub fn by_active(&self, mesh: &Mesh) -> Vec<f64> {
        let pos: HashMap<usize, usize> = self.cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        mesh.active_cells().iter().map(|c| pos.get(c).map_or(0.0, |&i| self.eta[i])).collect()
    }
}

/// Primal and dual discrete fields with their reconstructions.
pub struct DwrFields<'a> {
    pub primal: &'a [Complex64],
    pub dual: &'a [Complex64],
    pub primal_rec: &'a Reconstruction,
    pub dual_rec: &'a Reconstruction,
}

/// Evaluates `ρ_Q(E_H, πZ − Z_H)` and `ρ*_Q(Z_H, πE − E_H)` on every cell.
///
/// With `A(u, v)` linear in `u` and antilinear in `v`:
/// `ρ_Q = F(w) − A(E_H, w)` with `w = (πZ − Z_H)χ_Q` and
/// `ρ*_Q = D_E J(E_H)[w*] − A(w*, Z_H)` with `w* = (πE − E_H)χ_Q`.
pub fn indicators(
    mesh: &Mesh,
    space: &EdgeFESpace,
    model: &SheetModel,
    weight: &WeightFunction,
    fields: &DwrFields,
) -> Result<IndicatorMap> {
    if fields.primal.len() != space.n_dofs || fields.dual.len() != space.n_dofs {
        return Err(Error::Assembly("primal and dual fields must live on the given space".into()));
    }
    let faces = cell_faces(mesh, space)?;
    let volume = QuadratureRule::tensor(QUAD_POINTS);
    let fine = QuadratureRule::subdivided(QUAD_POINTS, SOURCE_SUBDIVISION);
    let (gx, gw) = gauss_legendre(QUAD_POINTS);
    let disks = model.source_disks();
    let z_bc = model.boundary_impedance();
    let parts: Vec<(Complex64, Complex64)> = space
        .cells()
        .par_iter()
        .enumerate()
        .map(|(s, &c)| {
            let near = disks.iter().any(|&(p, r)| touches_disk(mesh, c, p, r));
            let rule = if near { &fine } else { &volume };
            let mut rho = ZERO;
            let mut rho_star = ZERO;
            let eval = |xi: [f64; 2]| -> Result<(MapPoint, [RefValue; 4])> {
                let mp = map_point(mesh, c, xi)?;
                let e = mp.physical(reference_field(space, c, fields.primal, xi));
                let z = mp.physical(reference_field(space, c, fields.dual, xi));
                let de = mp.physical(fields.primal_rec.reference_difference(space, fields.primal, c, xi));
                let dz = mp.physical(fields.dual_rec.reference_difference(space, fields.dual, c, xi));
                Ok((mp, [e, z, de, dz]))
            };
            for (xi, w) in rule.points.iter().zip(&rule.weights) {
                let (mp, [e, z, de, dz]) = eval(*xi)?;
                let jxw = w * mp.det;
                let mat = model.materials(mp.x);
                let mu_inv = mat.mu_inv();
                let eps = |v: [Complex64; 2]| {
                    [
                        mat.eps[0][0] * v[0] + mat.eps[0][1] * v[1],
                        mat.eps[1][0] * v[0] + mat.eps[1][1] * v[1],
                    ]
                };
                let dot = |a: [Complex64; 2], b: [Complex64; 2]| a[0] * b[0].conj() + a[1] * b[1].conj();
                let j = model.current(mp.x);
                let m = model.magnetic_current(mp.x);
                let varpi = weight.value(mp.x);
                rho += jxw
                    * (I * dot(j, dz.0) - mu_inv * m * dz.1.conj() - mu_inv * e.1 * dz.1.conj() + dot(eps(e.0), dz.0));
                rho_star += jxw * (varpi * de.1 * e.1.conj() - mu_inv * de.1 * z.1.conj() + dot(eps(de.0), z.0));
            }
            let face_lines = faces.interface[s]
                .iter()
                .map(|&l| (l, true))
                .chain(faces.boundary[s].iter().map(|&l| (l, false)));
            for (line, sheet) in face_lines {
                let d = line_direction(line);
                for (t, w) in gx.iter().zip(&gw) {
                    let xi = line_point(line, *t);
                    let (mp, [e, z, de, dz]) = eval(xi)?;
                    let jac = mesh.geometry(c).jacobian(xi);
                    let tan = [jac[0][0] * d[0] + jac[0][1] * d[1], jac[1][0] * d[0] + jac[1][1] * d[1]];
                    let len = tan[0].hypot(tan[1]);
                    let tt = |v: [Complex64; 2]| (v[0] * tan[0] + v[1] * tan[1]) / len;
                    let coef = if sheet { I * model.materials(mp.x).sigma } else { I * z_bc };
                    let ds = w * len;
                    rho += ds * coef * tt(e.0) * tt(dz.0).conj();
                    rho_star += ds * coef * tt(de.0) * tt(z.0).conj();
                }
            }
            Ok((rho, rho_star))
        })
        .collect::<Result<_>>()?;
    Ok(IndicatorMap {
        cells: space.cells().to_vec(),
        eta: parts.iter().map(|(a, b)| 0.5 * (a + b).norm()).collect(),
        rho: parts.iter().map(|p| p.0).collect(),
        rho_star: parts.iter().map(|p| p.1).collect(),
    })
}

/// The `MARK_FRACTION` share of cells with the largest indicators, ties
/// broken by cell id.
pub fn top_fraction(ind: &IndicatorMap) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ind.cells.len()).collect();
    order.sort_by(|&a, &b| ind.eta[b].total_cmp(&ind.eta[a]).then(ind.cells[a].cmp(&ind.cells[b])));
    let n = (MARK_FRACTION * ind.cells.len() as f64).round() as usize;
    order[..n].iter().map(|&i| ind.cells[i]).collect()
}

/// Cells whose center satisfies `ϖ(x_Q) / max ϖ > 1 − (1/2)^(cycle − 1)`.
pub fn band_cells(mesh: &Mesh, weight: &WeightFunction, cycle: usize) -> Result<Vec<usize>> {
    if cycle == 0 {
        return Err(Error::Precondition("cycles are counted from 1".into()));
    }
    let w: Vec<f64> = mesh.active_cells().iter().map(|&c| weight.value(mesh.center(c))).collect();
    let max = w.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(Vec::new());
    }
    let threshold = 1.0 - 0.5f64.powi(cycle as i32 - 1);
    Ok(mesh
        .active_cells()
        .iter()
        .zip(&w)
        .filter(|(_, &v)| v / max > threshold)
        .map(|(&c, _)| c)
        .collect())
}

/// Union of the indicator and band selections, without cells at
/// [`MAX_LEVEL`], sorted by id.
pub fn mark(ind: &IndicatorMap, mesh: &Mesh, weight: &WeightFunction, cycle: usize) -> Result<Vec<usize>> {
    let mut out = top_fraction(ind);
    out.extend(band_cells(mesh, weight, cycle)?);
    out.retain(|&c| mesh.cell(c).level < MAX_LEVEL);
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_dual_rhs, assemble_system, refine_for_source, Dipole};
    use crate::fespace::distribute_dofs;
    use crate::pml::PmlSpec;
    use crate::solver::{solve, solve_adjoint};
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn weight_examples() {
        let w = WeightFunction::new(1.5625).unwrap();
        assert_eq!(w.value([3.0, 0.0]), 1.0);
        assert!(w.value([0.0, 1.5625]).abs() < 1e-15);
        assert_eq!(w.value([0.0, 2.0]), 0.0);
        assert!((w.value([0.0, -0.78125]) - 0.5).abs() < 1e-15);
        assert!(WeightFunction::new(0.0).is_err());
    }

    #[test]
    fn qoi_examples() {
        let mesh = Mesh::distorted_rectangle([-1.0, 1.0], [-1.0, 1.0], 4, 4, |i, j| [0.05 * (i as f64 - 1.5), -0.04 * (j as f64 - 2.0)]).unwrap();
        let space = distribute_dofs(&mesh, 2).unwrap();
        let w = WeightFunction::new(0.8).unwrap();
        assert_eq!(qoi(&mesh, &space, &vec![ZERO; space.n_dofs], &w).unwrap(), 0.0);
        // gradient of x² y + y³
        let grad = space.interpolate(&mesh, |p| [c(2.0 * p[0] * p[1], 0.0), c(p[0] * p[0] + 3.0 * p[1] * p[1], 0.0)]);
        assert!(qoi(&mesh, &space, &grad, &w).unwrap() < 1e-20);
        let f = space.interpolate(&mesh, |p| [c(p[1] * p[1], 0.5), c(-p[0], p[0] * p[1])]);
        let f2: Vec<Complex64> = f.iter().map(|v| 2.0 * v).collect();
        let (a, b) = (qoi(&mesh, &space, &f, &w).unwrap(), qoi(&mesh, &space, &f2, &w).unwrap());
        assert!(a > 0.0);
        assert!((b - 4.0 * a).abs() < 1e-12 * b);
    }

    #[test]
    fn lagrange_is_cardinal() {
        let g = gauss3();
        for (i, &t) in g.iter().enumerate() {
            let (v, _) = lagrange(&g, t);
            for (j, x) in v.iter().enumerate() {
                assert!((x - f64::from(i == j)).abs() < 1e-14);
            }
        }
        // derivative check
        let (_, d) = lagrange(&NODES3, 0.3);
        let h = 1e-6;
        let (p, _) = lagrange(&NODES3, 0.3 + h);
        let (m, _) = lagrange(&NODES3, 0.3 - h);
        for k in 0..4 {
            assert!((d[k] - (p[k] - m[k]) / (2.0 * h)).abs() < 1e-8);
        }
    }

    fn sample_points() -> Vec<[f64; 2]> {
        vec![[0.1, 0.2], [0.5, 0.5], [0.9, 0.33], [0.0, 1.0], [0.77, 0.05]]
    }

    fn max_difference(mesh: &Mesh, space: &EdgeFESpace, f: &[Complex64]) -> f64 {
        let rec = reconstruct(mesh, space, f).unwrap();
        let mut m: f64 = 0.0;
        for &cell in mesh.active_cells() {
            for xi in sample_points() {
                let (d, dc) = rec.difference(mesh, space, f, cell, xi).unwrap();
                m = m.max(d[0].norm()).max(d[1].norm()).max(dc.norm());
            }
        }
        m
    }

    fn patch_fixture() -> Mesh {
        let mut mesh = Mesh::distorted_rectangle([0.0, 2.0], [-1.0, 1.0], 2, 2, |_, _| [0.12, -0.08]).unwrap();
        mesh.refine_global();
        // partial refinement creates closure-style cells with refined siblings
        let first = mesh.active_cells()[0];
        mesh.refine(&[first]);
        mesh
    }

    #[test]
    fn reconstruction_reproduces_parent_fields() {
        let mesh = patch_fixture();
        let space = distribute_dofs(&mesh, 2).unwrap();
        // constant field
        let f = space.interpolate(&mesh, |_| [c(1.0, -2.0), c(0.5, 0.0)]);
        assert!(max_difference(&mesh, &space, &f) < 1e-10);
        // a field in the order-2 space of an affine parent
        let mesh = {
            let mut m = Mesh::rectangle([0.0, 2.0], [-1.0, 1.0], 2, 2).unwrap();
            m.refine_global();
            let first = m.active_cells()[0];
            m.refine(&[first]);
            m
        };
        let space = distribute_dofs(&mesh, 2).unwrap();
        let f = space.interpolate(&mesh, |p| [c(p[0] * p[1] * p[1], 1.0), c(p[0] * p[0] * p[1], -p[1])]);
        assert!(max_difference(&mesh, &space, &f) < 1e-10);
    }

    #[test]
    fn root_cells_get_zero_weight() {
        let mesh = Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 2, 2).unwrap();
        let space = distribute_dofs(&mesh, 2).unwrap();
        let f = space.interpolate(&mesh, |p| [c(p[1].sin(), 0.0), c(0.0, p[0].cos())]);
        assert_eq!(max_difference(&mesh, &space, &f), 0.0);
    }

    #[test]
    fn reconstruction_is_higher_order() {
        let exact = |p: [f64; 2]| [c((2.0 * p[1]).sin() * p[0].cos(), 0.0), c(0.0, (p[0] + p[1]).exp())];
        let mut mesh = Mesh::distorted_rectangle([0.0, 1.0], [0.0, 1.0], 2, 2, |_, _| [0.07, 0.05]).unwrap();
        mesh.refine_global();
        let mut ratios = Vec::new();
        for _ in 0..3 {
            let space = distribute_dofs(&mesh, 2).unwrap();
            let f = space.interpolate(&mesh, exact);
            let rec = reconstruct(&mesh, &space, &f).unwrap();
            let rule = QuadratureRule::tensor(5);
            let (mut e_h, mut e_pi) = (0.0, 0.0);
            for &cell in mesh.active_cells() {
                let cv = space.cell_values(&mesh, cell, &rule).unwrap();
                for (q, xi) in rule.points.iter().enumerate() {
                    let ex = exact(cv.points[q]);
                    let (eh, _) = space.evaluate(&mesh, &f, cell, *xi).unwrap();
                    let (pi, _) = rec.value(&mesh, cell, *xi).unwrap();
                    e_h += cv.jxw[q] * ((eh[0] - ex[0]).norm_sqr() + (eh[1] - ex[1]).norm_sqr());
                    e_pi += cv.jxw[q] * ((pi[0] - ex[0]).norm_sqr() + (pi[1] - ex[1]).norm_sqr());
                }
            }
            ratios.push((e_pi / e_h).sqrt());
            mesh.refine_global();
        }
        assert!(ratios[0] < 1.0, "{ratios:?}");
        assert!(ratios[1] < 0.7 * ratios[0] && ratios[2] < 0.7 * ratios[1], "{ratios:?}");
    }

    #[test]
    fn reconstruction_is_tangentially_continuous() {
        let mut mesh = Mesh::distorted_rectangle([0.0, 3.0], [-1.0, 2.0], 3, 3, |i, j| {
            [0.05 * ((i + 2 * j) % 3) as f64, -0.04 * ((2 * i + j) % 2) as f64]
        })
        .unwrap();
        mesh.refine_global();
        mesh.refine_global();
        let space = distribute_dofs(&mesh, 2).unwrap();
        let f: Vec<Complex64> = (0..space.n_dofs).map(|i| c((1.7 * i as f64).sin(), (0.3 * i as f64).cos())).collect();
        let rec = reconstruct(&mesh, &space, &f).unwrap();
        let mut owners: HashMap<crate::mesh::EdgeKey, Vec<(usize, usize)>> = HashMap::new();
        for &cell in mesh.active_cells() {
            for l in 0..4 {
                owners.entry(mesh.cell(cell).edge(l)).or_default().push((cell, l));
            }
        }
        // tangential component at global parameter t from the lower vertex id
        let tangential = |cell: usize, l: usize, t: f64| {
            let [a, b] = mesh.cell(cell).line_vertices(l);
            let t = if a < b { t } else { 1.0 - t };
            let geo = mesh.geometry(cell);
            let (p0, p1) = (geo.point(line_point(l, 0.0)), geo.point(line_point(l, 1.0)));
            let sgn = if a < b { 1.0 } else { -1.0 };
            let d = [sgn * (p1[0] - p0[0]), sgn * (p1[1] - p0[1])];
            let len = d[0].hypot(d[1]);
            let (v, _) = rec.value(&mesh, cell, line_point(l, t)).unwrap();
            (v[0] * d[0] + v[1] * d[1]) / len
        };
        let mut worst: f64 = 0.0;
        let mut shared = 0;
        for own in owners.values().filter(|o| o.len() == 2) {
            shared += 1;
            for t in [0.0, 0.21, 0.5, 0.77, 1.0] {
                worst = worst.max((tangential(own[0].0, own[0].1, t) - tangential(own[1].0, own[1].1, t)).norm());
            }
        }
        assert!(shared > 100);
        assert!(worst < 1e-12, "{worst}");
    }

    fn small_problem() -> (Mesh, EdgeFESpace, SheetModel, WeightFunction) {
        let r = 4.0 * PI;
        let model = SheetModel::new(c(1e-3, 0.3), Dipole::vertical(1.0, 0.3), PmlSpec::new(r, 2.0).unwrap()).unwrap();
        let mut mesh = Mesh::disk(r, 2).unwrap();
        refine_for_source(&mut mesh, &model);
        let space = distribute_dofs(&mesh, 2).unwrap();
        (mesh, space, model, WeightFunction::new(1.5625).unwrap())
    }

    #[test]
    fn zero_weights_give_zero_indicators() {
        // affine cells, so a global field of the parent space is reproduced
        let model = SheetModel::new(c(1e-3, 0.3), Dipole::vertical(1.0, 0.3), PmlSpec::new(100.0, 0.0).unwrap()).unwrap();
        let mut mesh = Mesh::rectangle([-2.0, 2.0], [-2.0, 2.0], 4, 4).unwrap();
        mesh.refine_global();
        refine_for_source(&mut mesh, &model);
        let space = distribute_dofs(&mesh, 2).unwrap();
        let w = WeightFunction::new(1.5625).unwrap();
        let e = space.interpolate(&mesh, |p| [c(p[1] * p[0], p[1] * p[1]), c(1.0, p[0] * p[0] * p[1])]);
        let z = vec![ZERO; space.n_dofs];
        let re = reconstruct(&mesh, &space, &e).unwrap();
        let rz = reconstruct(&mesh, &space, &z).unwrap();
        let fields = DwrFields {
            primal: &e,
            dual: &z,
            primal_rec: &re,
            dual_rec: &rz,
        };
        let ind = indicators(&mesh, &space, &model, &w, &fields).unwrap();
        assert!(ind.eta.iter().all(|&v| v < 1e-12), "{}", ind.total());
    }

    #[test]
    fn indicators_are_finite_and_nonnegative() {
        let (mesh, space, model, w) = small_problem();
        let sys = assemble_system(&mesh, &space, &model).unwrap();
        let (e, f) = solve(&sys, &space).unwrap();
        let rhs = assemble_dual_rhs(&mesh, &space, &e.coeffs, |x| w.value(x)).unwrap();
        let z = solve_adjoint(&f, &sys.matrix, &rhs, &space).unwrap();
        let re = reconstruct(&mesh, &space, &e.coeffs).unwrap();
        let rz = reconstruct(&mesh, &space, &z.coeffs).unwrap();
        let fields = DwrFields {
            primal: &e.coeffs,
            dual: &z.coeffs,
            primal_rec: &re,
            dual_rec: &rz,
        };
        let ind = indicators(&mesh, &space, &model, &w, &fields).unwrap();
        assert_eq!(ind.cells.len(), mesh.n_active());
        assert!(ind.eta.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(ind.total() > 0.0);
        assert!(ind.estimate().norm() <= ind.total() + 1e-15);
    }

    fn uniform_map(mesh: &Mesh, value: f64) -> IndicatorMap {
        let n = mesh.n_active();
        IndicatorMap {
            cells: mesh.active_cells().to_vec(),
            eta: vec![value; n],
            rho: vec![ZERO; n],
            rho_star: vec![ZERO; n],
        }
    }

    #[test]
    fn equal_indicators_mark_the_lowest_ids() {
        let mesh = Mesh::rectangle([0.0, 1.0], [5.0, 6.0], 10, 10).unwrap();
        let ind = uniform_map(&mesh, 1.0);
        let top = top_fraction(&ind);
        assert_eq!(top.len(), 15);
        let mut ids = mesh.active_cells().to_vec();
        ids.sort_unstable();
        assert_eq!(top, ids[..15].to_vec());
        // no band cells this far from the sheet
        assert_eq!(mark(&ind, &mesh, &WeightFunction::new(1.0).unwrap(), 1).unwrap(), ids[..15].to_vec());
    }

    #[test]
    fn band_rule_examples() {
        let mesh = Mesh::rectangle([-2.0, 2.0], [-4.0, 4.0], 4, 16).unwrap();
        let w = WeightFunction::new(1.5625).unwrap();
        let first = band_cells(&mesh, &w, 1).unwrap();
        let expect: Vec<usize> = mesh
            .active_cells()
            .iter()
            .copied()
            .filter(|&c| w.value(mesh.center(c)) > 0.0)
            .collect();
        assert_eq!(first, expect);
        assert_eq!(first.len(), 4 * 6);
        let late = band_cells(&mesh, &w, 40).unwrap();
        let max = mesh.active_cells().iter().map(|&c| w.value(mesh.center(c))).fold(0.0, f64::max);
        assert!(late.iter().all(|&c| w.value(mesh.center(c)) == max));
        assert_eq!(late.len(), 8);
        assert!(band_cells(&mesh, &w, 0).is_err());
    }

    #[test]
    fn marking_respects_the_level_cap() {
        let mut mesh = Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 1, 1).unwrap();
        for _ in 0..MAX_LEVEL {
            let c = *mesh.active_cells().last().unwrap();
            mesh.refine(&[c]);
        }
        let ind = uniform_map(&mesh, 1.0);
        let marked = mark(&ind, &mesh, &WeightFunction::new(0.1).unwrap(), 1).unwrap();
        assert!(marked.iter().all(|&c| mesh.cell(c).level < MAX_LEVEL));
        let deep = mesh.active_cells().iter().filter(|&&c| mesh.cell(c).level == MAX_LEVEL).count();
        assert!(deep > 0);
    }

    #[test]
    fn band_cells_shrink_every_cycle() {
        let mut mesh = Mesh::disk(8.0 * PI, 3).unwrap();
        let w = WeightFunction::new(1.5625).unwrap();
        let band_diameter = |mesh: &Mesh| {
            let max = mesh.active_cells().iter().map(|&c| w.value(mesh.center(c))).fold(0.0, f64::max);
            mesh.active_cells()
                .iter()
                .filter(|&&c| w.value(mesh.center(c)) >= 0.5 * max)
                .map(|&c| mesh.diameter(c))
                .fold(0.0, f64::max)
        };
        let mut prev = band_diameter(&mesh);
        for cycle in 1..=3 {
            let ind = uniform_map(&mesh, 0.0);
            let marked = mark(&ind, &mesh, &w, cycle).unwrap();
            mesh.refine(&marked);
            let d = band_diameter(&mesh);
            assert!(d < prev, "cycle {cycle}: {d} vs {prev}");
            prev = d;
        }
    }
}
