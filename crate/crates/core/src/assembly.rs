//! Discrete sesquilinear form and right-hand sides.
//!
//! With real basis functions the matrix entry `M_ij = A(φ_j, φ_i)` is
//!
//! ```text
//! ∫ μ⁻¹ curl φ_j curl φ_i − ∫ (ε φ_j)·φ_i − i ∫_Σ σ φ_j,T φ_i,T − i ∫_∂Ω √(ε/μ) φ_j,T φ_i,T
//! ```
//!
//! using the PML-modified coefficients, and the source term is
//! `F(φ_i) = i ∫ J·φ_i − ∫ μ⁻¹ M curl φ_i`. Hanging dofs are condensed:
//! their rows and columns are distributed onto the masters, then replaced
//! by a scaled identity with zero right-hand side.

use crate::fespace::{CellValues, EdgeFESpace, QuadratureRule, DOFS_PER_CELL};
use crate::mesh::{det2, InterfaceFace, Mesh};
use crate::pml::{transform_materials, EffectiveMaterials, PmlSpec};
use crate::{Complex64, Error, Result, I};
use rayon::prelude::*;
use std::f64::consts::PI;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Points per direction of the volume and face Gauss rules.
pub const QUAD_POINTS: usize = 4;
/// Sub-squares per direction used on cells touching the dipole disk.
pub const SOURCE_SUBDIVISION: usize = 8;

/// Smooth bump of unit mass supported on `|x − a| < d`:
/// `δ(r) = (π/2 − 2/π)⁻¹ d⁻² cos²(π r / (2d))`.
pub fn regularized_delta(r: f64, d: f64) -> f64 {
    if r >= d {
        return 0.0;
    }
    let c = (PI * r / (2.0 * d)).cos();
    c * c / ((PI / 2.0 - 2.0 / PI) * d * d)
}

/// Regularized point source `strength · direction · δ(x − position)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dipole {
    pub position: [f64; 2],
    pub radius: f64,
    pub direction: [f64; 2],
    pub strength: Complex64,
}

impl Dipole {
    /// Unit vertical dipole at height `a` above the origin.
    pub fn vertical(a: f64, radius: f64) -> Self {
        Dipole {
            position: [0.0, a],
            radius,
            direction: [0.0, 1.0],
            strength: Complex64::new(1.0, 0.0),
        }
    }

    pub fn density(&self, x: [f64; 2]) -> f64 {
        let r = (x[0] - self.position[0]).hypot(x[1] - self.position[1]);
        regularized_delta(r, self.radius)
    }
}

/// Out-of-plane magnetic current `strength · δ(x − position)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagneticSource {
    pub position: [f64; 2],
    pub radius: f64,
    pub strength: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SheetModel {
    pub sigma_r: Complex64,
    pub mu_r: Complex64,
    pub eps_r: Complex64,
    pub dipole: Dipole,
    pub magnetic: Option<MagneticSource>,
    pub pml: PmlSpec,
}

impl SheetModel {
    pub fn new(sigma_r: Complex64, dipole: Dipole, pml: PmlSpec) -> Result<Self> {
        let m = SheetModel {
            sigma_r,
            mu_r: Complex64::new(1.0, 0.0),
            eps_r: Complex64::new(1.0, 0.0),
            dipole,
            magnetic: None,
            pml,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dipole.position[1] > 0.0) {
            return Err(Error::Domain(format!("dipole must sit above the sheet, got a = {:?}", self.dipole.position)));
        }
        if !(self.dipole.radius > 0.0) {
            return Err(Error::Domain(format!("regularization radius must be positive, got {}", self.dipole.radius)));
        }
        if self.sigma_r.im < 0.0 {
            return Err(Error::Domain(format!("Im sigma must be >= 0, got {}", self.sigma_r)));
        }
        Ok(())
    }

    /// Same configuration without the sheet.
    pub fn without_sheet(&self) -> Self {
        SheetModel {
            sigma_r: ZERO,
            ..*self
        }
    }

    pub fn materials(&self, x: [f64; 2]) -> EffectiveMaterials {
        transform_materials(x, self.mu_r, self.eps_r, self.sigma_r, &self.pml)
    }

    /// Impedance coefficient `√(μ⁻¹ ε)` of the absorbing boundary condition.
    pub fn boundary_impedance(&self) -> Complex64 {
        (self.eps_r / self.mu_r).sqrt()
    }

    /// Electric current density `J(x)`.
    pub fn current(&self, x: [f64; 2]) -> [Complex64; 2] {
        let s = self.dipole.strength * self.dipole.density(x);
        [s * self.dipole.direction[0], s * self.dipole.direction[1]]
    }

    /// Magnetic current density `M_z(x)`.
    pub fn magnetic_current(&self, x: [f64; 2]) -> Complex64 {
        match self.magnetic {
            Some(m) => {
                let r = (x[0] - m.position[0]).hypot(x[1] - m.position[1]);
                m.strength * regularized_delta(r, m.radius)
            }
            None => ZERO,
        }
    }

    pub(crate) fn source_disks(&self) -> Vec<([f64; 2], f64)> {
        let mut v = vec![(self.dipole.position, self.dipole.radius)];
        if let Some(m) = self.magnetic {
            v.push((m.position, m.radius));
        }
        v
    }
}

/// Compressed sparse row matrix with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<Complex64>,
}

impl SparseMatrix {
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[Complex64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let (c, v) = self.row(i);
        match c.binary_search(&j) {
            Ok(k) => v[k],
            Err(_) => ZERO,
        }
    }

    fn position(&self, i: usize, j: usize) -> usize {
        let (c, _) = self.row(i);
        self.row_ptr[i] + c.binary_search(&j).expect("entry outside the sparsity pattern")
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .into_par_iter()
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum()
            })
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `max |M_ij − M_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                worst = worst.max((a - self.get(j, i)).norm());
            }
        }
        worst
    }

    /// `vᴴ M v`.
    pub fn quadratic_form(&self, v: &[Complex64]) -> Complex64 {
        self.matvec(v).iter().zip(v).map(|(mv, x)| x.conj() * mv).sum()
    }
}

/// Condensed linear system of one model on one space.
#[derive(Debug, Clone)]
pub struct ComplexSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<Complex64>,
    /// Fingerprint of the mesh the system was assembled on.
    pub mesh_fingerprint: u64,
}

/// Values of a field and its curl at one quadrature point.
type FieldPoint = ([Complex64; 2], Complex64);

/// Weighted quadrature data of a face seen from one cell.
#[derive(Debug, Clone)]
pub struct FaceValues {
    pub points: Vec<[f64; 2]>,
    /// Line element times the Gauss weight.
    pub jxw: Vec<f64>,
    /// Tangential components of the oriented local functions (unit tangent
    /// along the local line direction).
    pub tangential: Vec<[f64; DOFS_PER_CELL]>,
}

fn face_rule(line: usize, n: usize) -> QuadratureRule {
    let (x, w) = crate::fespace::gauss_legendre(n);
    QuadratureRule {
        points: x.iter().map(|&t| crate::fespace::line_point(line, t)).collect(),
        weights: w,
    }
}

/// Shape data on local line `line` of `cell`.
pub fn face_values(space: &EdgeFESpace, mesh: &Mesh, cell: usize, line: usize, n: usize) -> Result<FaceValues> {
    let rule = face_rule(line, n);
    let cv = space.shape_eval(mesh, cell, &rule.points)?;
    let geo = mesh.geometry(cell);
    let d = crate::fespace::line_direction(line);
    let mut fv = FaceValues {
        points: cv.points.clone(),
        jxw: Vec::with_capacity(n),
        tangential: Vec::with_capacity(n),
    };
    for (q, xi) in rule.points.iter().enumerate() {
        let j = geo.jacobian(*xi);
        let t = [j[0][0] * d[0] + j[0][1] * d[1], j[1][0] * d[0] + j[1][1] * d[1]];
        let len = t[0].hypot(t[1]);
        fv.jxw.push(len * rule.weights[q]);
        fv.tangential
            .push(std::array::from_fn(|k| (cv.values[q][k][0] * t[0] + cv.values[q][k][1] * t[1]) / len));
    }
    Ok(fv)
}

type LocalMatrix = [[Complex64; DOFS_PER_CELL]; DOFS_PER_CELL];

struct LocalSystem {
    matrix: LocalMatrix,
    rhs: [Complex64; DOFS_PER_CELL],
}

/// Which pieces of the form a cell contributes.
#[derive(Clone, Copy)]
struct Parts {
    matrix: bool,
    rhs: bool,
}

pub(crate) struct CellFaces {
    pub(crate) interface: Vec<Vec<usize>>,
    pub(crate) boundary: Vec<Vec<usize>>,
}

pub(crate) fn cell_faces(mesh: &Mesh, space: &EdgeFESpace) -> Result<CellFaces> {
    let n = space.cells().len();
    let slot: std::collections::HashMap<usize, usize> = space.cells().iter().enumerate().map(|(s, &c)| (c, s)).collect();
    let mut out = CellFaces {
        interface: vec![Vec::new(); n],
        boundary: vec![Vec::new(); n],
    };
    let faces: Vec<InterfaceFace> = mesh.interface_faces().unwrap_or_default();
    for f in faces {
        out.interface[slot[&f.cell]].push(f.line);
    }
    for (c, l) in mesh.boundary_faces() {
        out.boundary[slot[&c]].push(l);
    }
    Ok(out)
}

pub(crate) fn touches_disk(mesh: &Mesh, cell: usize, center: [f64; 2], radius: f64) -> bool {
    let vs = mesh.cell(cell).vertices.map(|v| mesh.vertices[v]);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in vs {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let dx = (lo[0] - center[0]).max(0.0).max(center[0] - hi[0]);
    let dy = (lo[1] - center[1]).max(0.0).max(center[1] - hi[1]);
    dx.hypot(dy) < radius
}

/// Checks that every cell touching a source disk is at most half the disk
/// radius across.
pub fn check_source_resolution(mesh: &Mesh, model: &SheetModel) -> Result<()> {
    for (center, radius) in model.source_disks() {
        for &c in mesh.active_cells() {
            if touches_disk(mesh, c, center, radius) && mesh.diameter(c) > 0.5 * radius {
                return Err(Error::Precondition(format!(
                    "cell {c} of diameter {:.4} meets the source disk of radius {radius} at {center:?}; \
                     refine near the dipole until cells there are at most {:.4} across",
                    mesh.diameter(c),
                    0.5 * radius
                )));
            }
        }
    }
    Ok(())
}

fn local_system(
    mesh: &Mesh,
    space: &EdgeFESpace,
    model: &SheetModel,
    cell: usize,
    faces: (&[usize], &[usize]),
    parts: Parts,
    volume_rule: &QuadratureRule,
    source_rule: &QuadratureRule,
) -> Result<LocalSystem> {
    let mut matrix = [[ZERO; DOFS_PER_CELL]; DOFS_PER_CELL];
    let mut rhs = [ZERO; DOFS_PER_CELL];
    if parts.matrix {
        let cv = space.cell_values(mesh, cell, volume_rule)?;
        add_volume_terms(&cv, model, &mut matrix);
        for &line in faces.0 {
            let fv = face_values(space, mesh, cell, line, QUAD_POINTS)?;
            for q in 0..fv.points.len() {
                let sigma = model.materials(fv.points[q]).sigma;
                add_face_term(&fv, q, -I * sigma, &mut matrix);
            }
        }
        let z = model.boundary_impedance();
        for &line in faces.1 {
            let fv = face_values(space, mesh, cell, line, QUAD_POINTS)?;
            for q in 0..fv.points.len() {
                add_face_term(&fv, q, -I * z, &mut matrix);
            }
        }
    }
    if parts.rhs {
        let near = model
            .source_disks()
            .iter()
            .any(|&(center, radius)| touches_disk(mesh, cell, center, radius));
        if near {
            let cv = space.cell_values(mesh, cell, source_rule)?;
            for q in 0..cv.len() {
                let x = cv.points[q];
                let j = model.current(x);
                let m = model.magnetic_current(x);
                let mu_inv = model.materials(x).mu_inv();
                for k in 0..DOFS_PER_CELL {
                    let phi = cv.values[q][k];
                    rhs[k] += cv.jxw[q] * (I * (j[0] * phi[0] + j[1] * phi[1]) - mu_inv * m * cv.curls[q][k]);
                }
            }
        }
    }
    Ok(LocalSystem { matrix, rhs })
}

fn add_volume_terms(cv: &CellValues, model: &SheetModel, out: &mut LocalMatrix) {
    for q in 0..cv.len() {
        let mat = model.materials(cv.points[q]);
        let mu_inv = mat.mu_inv();
        let w = cv.jxw[q];
        let v = &cv.values[q];
        let c = &cv.curls[q];
        for j in 0..DOFS_PER_CELL {
            let ej = [
                mat.eps[0][0] * v[j][0] + mat.eps[0][1] * v[j][1],
                mat.eps[1][0] * v[j][0] + mat.eps[1][1] * v[j][1],
            ];
            let cj = mu_inv * c[j];
            for i in 0..DOFS_PER_CELL {
                out[i][j] += w * (cj * c[i] - (ej[0] * v[i][0] + ej[1] * v[i][1]));
            }
        }
    }
}

fn add_face_term(fv: &FaceValues, q: usize, coef: Complex64, out: &mut LocalMatrix) {
    let w = coef * fv.jxw[q];
    let t = &fv.tangential[q];
    for j in 0..DOFS_PER_CELL {
        for i in 0..DOFS_PER_CELL {
            out[i][j] += w * (t[j] * t[i]);
        }
    }
}

/// Global dofs of a local dof after substituting constraints.
fn expand(space: &EdgeFESpace, dof: usize, sign: f64) -> Vec<(usize, f64)> {
    let cs = space.constraints();
    if cs.is_constrained(dof) {
        let line = cs.lines.binary_search_by_key(&dof, |l| l.dof).map(|k| &cs.lines[k]).expect("constraint line");
        line.entries.iter().map(|&(m, w)| (m, sign * w)).collect()
    } else {
        vec![(dof, sign)]
    }
}

fn cell_expansion(space: &EdgeFESpace, cell: usize) -> Vec<Vec<(usize, f64)>> {
    let d = space.cell_dofs(cell);
    (0..DOFS_PER_CELL).map(|k| expand(space, d[k], 1.0)).collect()
}

fn check_space(mesh: &Mesh, space: &EdgeFESpace) -> Result<()> {
    if space.mesh_fingerprint() != mesh.fingerprint() {
        return Err(Error::Assembly(
            "space was built for a different mesh; hanging dofs would be unconstrained".into(),
        ));
    }
    Ok(())
}

fn sparsity(space: &EdgeFESpace, expansions: &[Vec<Vec<(usize, f64)>>]) -> SparseMatrix {
    let n = space.n_dofs;
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
    for exp in expansions {
        let mut g: Vec<usize> = exp.iter().flatten().map(|&(d, _)| d).collect();
        g.sort_unstable();
        g.dedup();
        for &a in &g {
            rows[a].extend_from_slice(&g);
        }
    }
    for l in &space.constraints().lines {
        rows[l.dof].push(l.dof);
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let mut cols = Vec::new();
    for r in rows.iter_mut() {
        r.sort_unstable();
        r.dedup();
        cols.extend_from_slice(r);
        row_ptr.push(cols.len());
    }
    let nnz = cols.len();
    SparseMatrix {
        n,
        row_ptr,
        cols,
        vals: vec![ZERO; nnz],
    }
}

fn assemble(mesh: &Mesh, space: &EdgeFESpace, model: &SheetModel, parts: Parts) -> Result<(Option<SparseMatrix>, Vec<Complex64>)> {
    check_space(mesh, space)?;
    model.validate()?;
    if parts.rhs {
        check_source_resolution(mesh, model)?;
    }
    let faces = cell_faces(mesh, space)?;
    let volume_rule = QuadratureRule::tensor(QUAD_POINTS);
    let source_rule = QuadratureRule::subdivided(QUAD_POINTS, SOURCE_SUBDIVISION);
    let locals: Vec<LocalSystem> = space
        .cells()
        .par_iter()
        .enumerate()
        .map(|(s, &c)| {
            local_system(
                mesh,
                space,
                model,
                c,
                (&faces.interface[s], &faces.boundary[s]),
                parts,
                &volume_rule,
                &source_rule,
            )
        })
        .collect::<Result<_>>()?;
    let expansions: Vec<Vec<Vec<(usize, f64)>>> = space.cells().par_iter().map(|&c| cell_expansion(space, c)).collect();
    let mut rhs = vec![ZERO; space.n_dofs];
    let mut matrix = parts.matrix.then(|| sparsity(space, &expansions));
    // serial scatter in cell order keeps the summation order fixed
    for (loc, exp) in locals.iter().zip(&expansions) {
        for i in 0..DOFS_PER_CELL {
            if loc.rhs[i] != ZERO {
                for &(gi, wi) in &exp[i] {
                    rhs[gi] += wi * loc.rhs[i];
                }
            }
        }
        if let Some(m) = matrix.as_mut() {
            for i in 0..DOFS_PER_CELL {
                for &(gi, wi) in &exp[i] {
                    for j in 0..DOFS_PER_CELL {
                        let v = loc.matrix[i][j];
                        for &(gj, wj) in &exp[j] {
                            let p = m.position(gi, gj);
                            m.vals[p] += (wi * wj) * v;
                        }
                    }
                }
            }
        }
    }
    if let Some(m) = matrix.as_mut() {
        let cs = space.constraints();
        if !cs.is_empty() {
            let mean_diag = (0..m.n)
                .filter(|&i| !cs.is_constrained(i))
                .map(|i| m.get(i, i).norm())
                .sum::<f64>()
                / (m.n - cs.lines.len()).max(1) as f64;
            for l in &cs.lines {
                let p = m.position(l.dof, l.dof);
                m.vals[p] = Complex64::new(mean_diag.max(1.0), 0.0);
            }
        }
    }
    space.constraints().zero_constrained(&mut rhs);
    Ok((matrix, rhs))
}

/// Matrix of the form and dipole right-hand side, condensed.
pub fn assemble_system(mesh: &Mesh, space: &EdgeFESpace, model: &SheetModel) -> Result<ComplexSystem> {
    let (matrix, rhs) = assemble(mesh, space, model, Parts { matrix: true, rhs: true })?;
    Ok(ComplexSystem {
        matrix: matrix.expect("matrix requested"),
        rhs,
        mesh_fingerprint: mesh.fingerprint(),
    })
}

/// Condensed matrix only; needs no source resolution.
pub fn assemble_matrix(mesh: &Mesh, space: &EdgeFESpace, model: &SheetModel) -> Result<SparseMatrix> {
    let (matrix, _) = assemble(mesh, space, model, Parts { matrix: true, rhs: false })?;
    Ok(matrix.expect("matrix requested"))
}

/// `F(φ_i) = i ∫ J·φ_i − ∫ μ⁻¹ M curl φ_i`, condensed.
pub fn assemble_dipole_rhs(mesh: &Mesh, space: &EdgeFESpace, model: &SheetModel) -> Result<Vec<Complex64>> {
    Ok(assemble(mesh, space, model, Parts { matrix: false, rhs: true })?.1)
}

/// Curl of a discrete field at the points of a cell rule.
pub fn field_at(cv: &CellValues, coeffs: &[Complex64; DOFS_PER_CELL]) -> Vec<FieldPoint> {
    (0..cv.len())
        .map(|q| {
            let mut e = [ZERO; 2];
            let mut c = ZERO;
            for k in 0..DOFS_PER_CELL {
                e[0] += coeffs[k] * cv.values[q][k][0];
                e[1] += coeffs[k] * cv.values[q][k][1];
                c += coeffs[k] * cv.curls[q][k];
            }
            (e, c)
        })
        .collect()
}

/// `∫ ϖ curl φ_i conj(curl E_H)`, condensed: the derivative of
/// `∫ ϖ |curl E|²` in the direction `φ_i` with `Ē` held fixed.
pub fn assemble_dual_rhs(
    mesh: &Mesh,
    space: &EdgeFESpace,
    field: &[Complex64],
    weight: impl Fn([f64; 2]) -> f64 + Sync,
) -> Result<Vec<Complex64>> {
    check_space(mesh, space)?;
    let rule = QuadratureRule::tensor(QUAD_POINTS);
    let locals: Vec<[Complex64; DOFS_PER_CELL]> = space
        .cells()
        .par_iter()
        .map(|&c| {
            let cv = space.cell_values(mesh, c, &rule)?;
            let u = space.local_coeffs(c, field);
            let vals = field_at(&cv, &u);
            let mut r = [ZERO; DOFS_PER_CELL];
            for q in 0..cv.len() {
                let w = weight(cv.points[q]);
                if w == 0.0 {
                    continue;
                }
                let cc = vals[q].1.conj() * (w * cv.jxw[q]);
                for k in 0..DOFS_PER_CELL {
                    r[k] += cc * cv.curls[q][k];
                }
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;
    let mut rhs = vec![ZERO; space.n_dofs];
    for (&c, r) in space.cells().iter().zip(&locals) {
        let exp = cell_expansion(space, c);
        for k in 0..DOFS_PER_CELL {
            for &(g, w) in &exp[k] {
                rhs[g] += w * r[k];
            }
        }
    }
    space.constraints().zero_constrained(&mut rhs);
    Ok(rhs)
}

/// `∫ δ_reg` over the mesh with the source quadrature; equals one on a
/// resolved mesh.
pub fn dipole_mass(mesh: &Mesh, model: &SheetModel) -> f64 {
    let rule = QuadratureRule::subdivided(QUAD_POINTS, SOURCE_SUBDIVISION);
    let d = &model.dipole;
    mesh.active_cells()
        .iter()
        .filter(|&&c| touches_disk(mesh, c, d.position, d.radius))
        .map(|&c| {
            let geo = mesh.geometry(c);
            rule.points
                .iter()
                .zip(&rule.weights)
                .map(|(&xi, &w)| {
                    let (x, j) = geo.eval(xi);
                    w * det2(&j) * d.density(x)
                })
                .sum::<f64>()
        })
        .sum()
}

/// Refines cells touching the dipole disk until they are at most half the
/// regularization radius across.
pub fn refine_for_source(mesh: &mut Mesh, model: &SheetModel) {
    loop {
        let d = &model.dipole;
        let marked: Vec<usize> = mesh
            .active_cells()
            .iter()
            .copied()
            .filter(|&c| touches_disk(mesh, c, d.position, d.radius) && mesh.diameter(c) > 0.5 * d.radius)
            .collect();
        if marked.is_empty() {
            return;
        }
        mesh.refine(&marked);
    }
}
