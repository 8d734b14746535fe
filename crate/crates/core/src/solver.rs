//! Sparse direct solves of the condensed systems.
//!
//! The matrix is factorized by faer's sparse LU with partial pivoting. The
//! symbolic analysis (fill-reducing ordering and elimination structure)
//! depends only on the sparsity pattern, so it is shared between the
//! primal, the sheet-free companion and the adjoint solves on one mesh.

use crate::assembly::{ComplexSystem, SparseMatrix};
use crate::fespace::{EdgeFESpace, FieldSolution};
use crate::{Complex64, Error, Result};
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::Mat;

/// Relative residual every returned solution satisfies.
pub const RESIDUAL_TOL: f64 = 1e-10;
const REFINEMENT_STEPS: usize = 4;

/// Reusable symbolic analysis of one sparsity pattern.
#[derive(Debug, Clone)]
pub struct SymbolicFactor {
    inner: SymbolicLu<usize>,
    pattern: (usize, usize, u64),
}

fn pattern_id(m: &SparseMatrix) -> (usize, usize, u64) {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    m.row_ptr.hash(&mut h);
    m.cols.hash(&mut h);
    (m.n, m.nnz(), h.finish())
}

/// Column-major copy of `m`. The pattern is structurally symmetric, so the
/// row pointers double as column pointers and only the values move.
fn to_csc(m: &SparseMatrix) -> SparseColMat<usize, Complex64> {
    let mut vals = vec![Complex64::new(0.0, 0.0); m.nnz()];
    for i in 0..m.n {
        let (cols, v) = m.row(i);
        for (&j, &a) in cols.iter().zip(v) {
            // entry (i, j) lives in column j at row i
            let (rows_j, _) = m.row(j);
            let k = rows_j.binary_search(&i).expect("structurally symmetric pattern");
            vals[m.row_ptr[j] + k] = a;
        }
    }
    let sym = SymbolicSparseColMat::new_checked(m.n, m.n, m.row_ptr.clone(), None, m.cols.clone());
    SparseColMat::new(sym, vals)
}

fn check_structure(m: &SparseMatrix) -> Result<()> {
    for i in 0..m.n {
        let (cols, _) = m.row(i);
        for &j in cols {
            if m.row(j).0.binary_search(&i).is_err() {
                return Err(Error::Solver(format!("pattern is not structurally symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Numeric LU factors of one matrix.
pub struct Factorization {
    lu: Lu<usize, Complex64>,
    symbolic: SymbolicFactor,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization").field("pattern", &self.symbolic.pattern).finish()
    }
}

fn diagnostics(m: &SparseMatrix) -> String {
    let zero_rows = (0..m.n).filter(|&i| m.row(i).1.iter().all(|v| v.norm() == 0.0)).count();
    let min_diag = (0..m.n).map(|i| m.get(i, i).norm()).fold(f64::INFINITY, f64::min);
    format!(
        "n = {}, nnz = {}, max |a_ij| = {:.3e}, min |a_ii| = {:.3e}, zero rows = {}",
        m.n,
        m.nnz(),
        m.max_abs(),
        min_diag,
        zero_rows
    )
}

impl Factorization {
    pub fn new(m: &SparseMatrix) -> Result<Self> {
        check_structure(m)?;
        let csc = to_csc(m);
        let inner = SymbolicLu::try_new(csc.symbolic())
            .map_err(|e| Error::Solver(format!("symbolic analysis failed ({e:?}); {}", diagnostics(m))))?;
        let symbolic = SymbolicFactor {
            inner,
            pattern: pattern_id(m),
        };
        Self::numeric(m, &csc, symbolic)
    }

    /// Factorizes `m` reusing the analysis of a matrix with the same pattern.
    pub fn with_symbolic(m: &SparseMatrix, symbolic: &SymbolicFactor) -> Result<Self> {
        if pattern_id(m) != symbolic.pattern {
            return Err(Error::Solver("sparsity pattern differs from the symbolic analysis".into()));
        }
        let csc = to_csc(m);
        Self::numeric(m, &csc, symbolic.clone())
    }

    fn numeric(m: &SparseMatrix, csc: &SparseColMat<usize, Complex64>, symbolic: SymbolicFactor) -> Result<Self> {
        let lu = Lu::try_new_with_symbolic(symbolic.inner.clone(), csc.as_ref())
            .map_err(|e| Error::Solver(format!("numeric factorization failed ({e:?}); {}", diagnostics(m))))?;
        Ok(Factorization { lu, symbolic })
    }

    pub fn symbolic(&self) -> &SymbolicFactor {
        &self.symbolic
    }

    fn apply(&self, b: &[Complex64]) -> Vec<Complex64> {
        let rhs = Mat::<Complex64>::from_fn(b.len(), 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }

    /// Solves `m x = b` with iterative refinement until the relative
    /// residual is below [`RESIDUAL_TOL`].
    pub fn solve(&self, m: &SparseMatrix, b: &[Complex64]) -> Result<Vec<Complex64>> {
        if b.len() != m.n {
            return Err(Error::Solver(format!("rhs has length {} for n = {}", b.len(), m.n)));
        }
        let bn = norm(b);
        if bn == 0.0 {
            return Ok(vec![Complex64::new(0.0, 0.0); m.n]);
        }
        let mut x = self.apply(b);
        let mut rel = f64::INFINITY;
        for _ in 0..=REFINEMENT_STEPS {
            let r: Vec<Complex64> = m.matvec(&x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
            rel = norm(&r) / bn;
            if !rel.is_finite() {
                break;
            }
            if rel <= RESIDUAL_TOL {
                return Ok(x);
            }
            let dx = self.apply(&r);
            for (xi, d) in x.iter_mut().zip(dx) {
                *xi += d;
            }
        }
        Err(Error::Solver(format!(
            "relative residual {rel:.3e} above {RESIDUAL_TOL:e} after refinement; {}",
            diagnostics(m)
        )))
    }
}

pub fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Primal solve; hanging dofs are filled in from their masters.
pub fn solve(system: &ComplexSystem, space: &EdgeFESpace) -> Result<(FieldSolution, Factorization)> {
    let f = Factorization::new(&system.matrix)?;
    let sol = solve_with(&f, system, space)?;
    Ok((sol, f))
}

/// Primal solve with existing factors of `system.matrix`.
pub fn solve_with(f: &Factorization, system: &ComplexSystem, space: &EdgeFESpace) -> Result<FieldSolution> {
    if system.mesh_fingerprint != space.mesh_fingerprint() {
        return Err(Error::Solver("system and space belong to different meshes".into()));
    }
    let mut coeffs = f.solve(&system.matrix, &system.rhs)?;
    space.constraints().distribute(&mut coeffs);
    Ok(FieldSolution { coeffs })
}

/// Dual solution `Z` with `A(φ_i, Z) = dual_rhs_i` for every basis function.
///
/// `A(φ_i, Z) = Σ_j conj(Z_j) A(φ_i, φ_j) = (Mᵀ conj(Z))_i` and `M = Mᵀ`, so
/// `conj(Z) = M⁻¹ dual_rhs`.
pub fn solve_adjoint(
    f: &Factorization,
    matrix: &SparseMatrix,
    dual_rhs: &[Complex64],
    space: &EdgeFESpace,
) -> Result<FieldSolution> {
    let w = f.solve(matrix, dual_rhs)?;
    let mut coeffs: Vec<Complex64> = w.iter().map(|z| z.conj()).collect();
    space.constraints().distribute(&mut coeffs);
    Ok(FieldSolution { coeffs })
}

/// Jacobi-preconditioned conjugate orthogonal CG for complex symmetric
/// matrices. Low-memory fallback for smoke tests; not used by the adaptive
/// loop.
pub fn cocg(m: &SparseMatrix, b: &[Complex64], tol: f64, max_iter: usize) -> Result<Vec<Complex64>> {
    let n = m.n;
    let dinv: Vec<Complex64> = (0..n)
        .map(|i| {
            let d = m.get(i, i);
            if d.norm() > 0.0 {
                1.0 / d
            } else {
                Complex64::new(1.0, 0.0)
            }
        })
        .collect();
    let bn = norm(b);
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    if bn == 0.0 {
        return Ok(x);
    }
    let dot = |a: &[Complex64], c: &[Complex64]| -> Complex64 { a.iter().zip(c).map(|(u, v)| u * v).sum() };
    let mut r = b.to_vec();
    let mut z: Vec<Complex64> = r.iter().zip(&dinv).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_iter {
        let ap = m.matvec(&p);
        let pap = dot(&p, &ap);
        if pap.norm() == 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= tol * bn {
            return Ok(x);
        }
        z = r.iter().zip(&dinv).map(|(a, d)| a * d).collect();
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Solver(format!(
        "COCG stopped at relative residual {:.3e} after {max_iter} iterations",
        norm(&r) / bn
    )))
}
