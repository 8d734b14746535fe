//! Radial perfectly matched layer.
//!
//! Inside the annulus `rho <= r <= R` the radial coordinate is complexified,
//! `r -> r + i ∫_rho^r s(τ) dτ`, with the quadratic profile
//! `s(r) = s0 (r - rho)² / (R - rho)²`. Pulling the stretched equations back
//! to real coordinates replaces the material coefficients by
//!
//! * `μ⁻¹ -> μ⁻¹ / d` for the scalar curl in the plane,
//! * `ε -> ε (d̄²/d e_r e_rᵀ + d e_θ e_θᵀ)`,
//! * `σ -> σ d̄ / d` on the sheet,
//!
//! with `d = 1 + i s(r)` and `d̄ = 1 + (i/r) ∫_rho^r s`. The tensors follow
//! from `A⁻¹ ε B⁻¹`, `B μ⁻¹ A` and `C⁻¹ σ B⁻¹` where, in the rotated frame
//! `(e_r, e_θ, e_z)`, `A = diag(1/d̄², 1/(d d̄), 1/(d d̄))`,
//! `B = diag(d, d̄, d̄)` and `C = diag(1/d̄, 1/d̄, 1/d)`:
//!
//! * in-plane ε: `(A⁻¹ ε B⁻¹)_rr = ε d̄²/d` and `(A⁻¹ ε B⁻¹)_θθ = ε d d̄/d̄ = ε d`,
//! * out-of-plane μ⁻¹: `(B μ⁻¹ A)_zz = μ⁻¹ d̄/(d d̄) = μ⁻¹/d`,
//! * sheet: the sheet tangent is `e_r`, so `(C⁻¹ σ B⁻¹)_rr = σ d̄/d`.

use crate::{Complex64, Error, Result, I};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmlSpec {
    /// Outer radius of the computational disk.
    pub r_outer: f64,
    /// Inner radius of the layer.
    pub rho: f64,
    pub s0: f64,
}

impl PmlSpec {
    /// Layer occupying the outer fifth of the disk.
    pub fn new(r_outer: f64, s0: f64) -> Result<Self> {
        Self::with_inner_radius(r_outer, 0.8 * r_outer, s0)
    }

    pub fn with_inner_radius(r_outer: f64, rho: f64, s0: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < r_outer) {
            return Err(Error::Domain(format!(
                "PML radii must satisfy 0 < rho < R, got rho = {rho}, R = {r_outer}"
            )));
        }
        if !(s0 >= 0.0) || !s0.is_finite() {
            return Err(Error::Domain(format!("PML strength must be >= 0, got {s0}")));
        }
        Ok(PmlSpec { r_outer, rho, s0 })
    }

    /// Scaling profile `s(r)`.
    pub fn profile(&self, r: f64) -> f64 {
        if r <= self.rho {
            return 0.0;
        }
        let w = self.r_outer - self.rho;
        self.s0 * (r - self.rho).powi(2) / (w * w)
    }

    /// `∫_rho^r s(τ) dτ`, evaluated in closed form.
    pub fn profile_integral(&self, r: f64) -> f64 {
        if r <= self.rho {
            return 0.0;
        }
        let w = self.r_outer - self.rho;
        self.s0 * (r - self.rho).powi(3) / (3.0 * w * w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StretchFactors {
    pub d: Complex64,
    pub dbar: Complex64,
    /// Unit radial direction at the query point (`e_x` at the origin).
    pub e_r: [f64; 2],
}

pub fn stretch(point: [f64; 2], spec: &PmlSpec) -> StretchFactors {
    let r = point[0].hypot(point[1]);
    let e_r = if r > 0.0 {
        [point[0] / r, point[1] / r]
    } else {
        [1.0, 0.0]
    };
    if r <= spec.rho {
        return StretchFactors {
            d: Complex64::new(1.0, 0.0),
            dbar: Complex64::new(1.0, 0.0),
            e_r,
        };
    }
    StretchFactors {
        d: 1.0 + I * spec.profile(r),
        dbar: 1.0 + I * (spec.profile_integral(r) / r),
        e_r,
    }
}

/// Material coefficients seen by the weak form at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveMaterials {
    /// Effective permeability; the curl term uses its inverse.
    pub mu: Complex64,
    /// Complex-symmetric in-plane permittivity tensor.
    pub eps: [[Complex64; 2]; 2],
    /// Effective sheet conductivity (meaningful on the sheet only).
    pub sigma: Complex64,
}

impl EffectiveMaterials {
    pub fn mu_inv(&self) -> Complex64 {
        1.0 / self.mu
    }

    pub fn isotropic(mu: Complex64, eps: Complex64, sigma: Complex64) -> Self {
        let z = Complex64::new(0.0, 0.0);
        EffectiveMaterials {
            mu,
            eps: [[eps, z], [z, eps]],
            sigma,
        }
    }
}

pub fn transform_materials(
    point: [f64; 2],
    mu_r: Complex64,
    eps_r: Complex64,
    sigma_r: Complex64,
    spec: &PmlSpec,
) -> EffectiveMaterials {
    let f = stretch(point, spec);
    if f.d == Complex64::new(1.0, 0.0) && f.dbar == Complex64::new(1.0, 0.0) {
        return EffectiveMaterials::isotropic(mu_r, eps_r, sigma_r);
    }
    let err = eps_r * f.dbar * f.dbar / f.d;
    let ett = eps_r * f.d;
    let [c, s] = f.e_r;
    // R^T diag(err, ett) R with e_r = (c, s), e_θ = (-s, c)
    let exx = err * c * c + ett * s * s;
    let eyy = err * s * s + ett * c * c;
    let exy = (err - ett) * c * s;
    EffectiveMaterials {
        mu: mu_r * f.d,
        eps: [[exx, exy], [exy, eyy]],
        sigma: sigma_r * f.dbar / f.d,
    }
}
