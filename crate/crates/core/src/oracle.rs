//! Exact solution of the sheet problem in Fourier space and its on-sheet
//! pole and branch-cut contributions.
//!
//! For identical half-spaces with wave number `k = √(μ ε)` the scattered
//! tangential field on the sheet is
//!
//! ```text
//! E_x^sc(x) = μ²σ/(4πk²) ∫ ξ β e^{iβa} e^{iξx} / (2k² + μσβ) dξ,   β = √(k² − ξ²).
//! ```
//!
//! Substituting `ξ = k t` shows that `E_x^sc(x; a, σ, μ, ε) = μ · U(kx; ka, μσ/k)`
//! where `U` is the same field in the unit medium `μ = ε = 1`. Every
//! closed form below is therefore evaluated for the unit medium and scaled.
//! In the unit medium, deforming the inversion contour for `x > 0` picks up
//! the residue at the SPP root `k_m = √(1 − 4/σ²)` and a hairpin integral
//! made of the segment `(0, 1)` and the imaginary axis `ξ = iς`.

use crate::harness::InterfaceTrace;
use crate::units::RescaledModel;
use crate::{Complex64, Error, Result, I};
use rayon::prelude::*;
use std::f64::consts::PI;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// `√(k² − ξ²)` on the branch with `Im β ≥ 0`; the positive root when real.
pub fn beta(xi: Complex64, k: Complex64) -> Complex64 {
    let b = (k * k - xi * xi).sqrt();
    if b.im < 0.0 || (b.im == 0.0 && b.re < 0.0) {
        -b
    } else {
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispersionMode {
    Exact,
    /// Leading order for `|σ| ≪ 1`.
    Asymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionRoot {
    pub k_m: Complex64,
    pub mode: DispersionMode,
}

/// SPP wave number for identical half-spaces.
///
/// The dispersion relation `2k²β + μσβ² = 0` gives `β(k_m) = −2ε/σ`, hence
/// `k_m² = με − 4ε²/σ²`; the asymptotic form keeps only the second term.
pub fn dispersion(
    sigma_r: Complex64,
    mu_r: Complex64,
    eps_r: Complex64,
    mode: DispersionMode,
) -> Result<DispersionRoot> {
    if sigma_r == c(0.0) {
        return Err(Error::Domain("sheet conductivity must be nonzero".into()));
    }
    let k_m = match mode {
        DispersionMode::Exact => (mu_r * eps_r - 4.0 * eps_r * eps_r / (sigma_r * sigma_r)).sqrt(),
        DispersionMode::Asymptotic => 2.0 * I * eps_r / sigma_r,
    };
    let k_m = if k_m.re < 0.0 { -k_m } else { k_m };
    Ok(DispersionRoot { k_m, mode })
}

/// Residual of the dispersion relation for identical half-spaces,
/// `k²β₁ + k²β₂ + μσβ₁β₂` at `ξ`.
pub fn dispersion_residual(xi: Complex64, sigma_r: Complex64, mu_r: Complex64, eps_r: Complex64) -> Complex64 {
    let k2 = mu_r * eps_r;
    let b = beta(xi, k2.sqrt());
    2.0 * k2 * b + mu_r * sigma_r * b * b
}

/// Parameters of the two-media Fourier solution (`ω = 1` in rescaled units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierParams {
    pub k1: Complex64,
    pub k2: Complex64,
    pub mu: Complex64,
    pub omega: f64,
    pub sigma: Complex64,
    pub a: f64,
}

/// Fourier-space field of a vertical dipole at height `a` above the sheet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierCoefficients {
    pub xi: f64,
    pub beta1: Complex64,
    pub beta2: Complex64,
    pub c_gt: Complex64,
    pub c_lt: Complex64,
    pub params: FourierParams,
}

pub fn fourier_coefficients(xi: f64, params: FourierParams) -> Result<FourierCoefficients> {
    let FourierParams {
        k1,
        k2,
        mu,
        omega,
        sigma,
        a,
    } = params;
    let xc = c(xi);
    let b1 = beta(xc, k1);
    let b2 = beta(xc, k2);
    let wms = omega * mu * sigma;
    let den = k2 * k2 * b1 + k1 * k1 * b2 + wms * b1 * b2;
    let scale = (k2 * k2 * b1).norm() + (k1 * k1 * b2).norm() + (wms * b1 * b2).norm();
    if den.norm() <= 1e-14 * scale || b1 == c(0.0) {
        return Err(Error::Pole { xi });
    }
    let e = (I * b1 * a).exp();
    let num = k2 * k2 * b1 - k1 * k1 * b2 + wms * b1 * b2;
    Ok(FourierCoefficients {
        xi,
        beta1: b1,
        beta2: b2,
        c_gt: -(xc * mu / (2.0 * b1)) * num / den * e,
        c_lt: -mu * k2 * k2 * xc * e / den,
        params,
    })
}

impl FourierCoefficients {
    fn source(&self) -> Complex64 {
        self.xi * self.params.mu / (2.0 * self.beta1)
    }

    /// `B̂_z` in the upper half-space (`y ≥ 0`).
    pub fn b1z(&self, y: f64) -> Complex64 {
        self.c_gt * (I * self.beta1 * y).exp() - self.source() * (I * self.beta1 * (y - self.params.a).abs()).exp()
    }

    /// `B̂_z` in the lower half-space (`y ≤ 0`).
    pub fn b2z(&self, y: f64) -> Complex64 {
        self.c_lt * (-I * self.beta2 * y).exp()
    }

    fn db1z(&self, y: f64) -> Complex64 {
        let sgn = if y > self.params.a { 1.0 } else { -1.0 };
        I * self.beta1
            * (self.c_gt * (I * self.beta1 * y).exp()
                - sgn * self.source() * (I * self.beta1 * (y - self.params.a).abs()).exp())
    }

    fn db2z(&self, y: f64) -> Complex64 {
        -I * self.beta2 * self.b2z(y)
    }

    /// `Ê_x = (iω/k²) ∂_y B̂_z` above the sheet.
    pub fn e1x(&self, y: f64) -> Complex64 {
        I * self.params.omega / (self.params.k1 * self.params.k1) * self.db1z(y)
    }

    pub fn e2x(&self, y: f64) -> Complex64 {
        I * self.params.omega / (self.params.k2 * self.params.k2) * self.db2z(y)
    }

    /// `Ê_y = (ξω/k²) B̂_z` above the sheet.
    pub fn e1y(&self, y: f64) -> Complex64 {
        self.xi * self.params.omega / (self.params.k1 * self.params.k1) * self.b1z(y)
    }

    pub fn e2y(&self, y: f64) -> Complex64 {
        self.xi * self.params.omega / (self.params.k2 * self.params.k2) * self.b2z(y)
    }
}

/// How the two branch-cut integrals are summed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchCutRule {
    /// Trapezoid rules in the original variables with the growing cutoff
    /// `1/√(h x)`; first-order-in-√h accurate near `ξ = 1`.
    Trapezoid,
    /// Romberg extrapolation after `ξ = sin θ` on the segment and `ς = u/x`
    /// on the axis, which make both integrands smooth on finite intervals.
    MappedRomberg,
}

/// Step control for the branch-cut trapezoid rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    /// Initial step; a power of two keeps the `(0, 1)` grid nested.
    pub h0: f64,
    /// Stop once `|T(h) − T(2h)| ≤ rel_tol |T(h)| + abs_tol`.
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_halvings: usize,
    pub rule: BranchCutRule,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            h0: 1.0 / 16.0,
            rel_tol: 0.005,
            abs_tol: 0.0,
            max_halvings: 26,
            rule: BranchCutRule::Trapezoid,
        }
    }
}

impl QuadratureSpec {
    fn validate(&self) -> Result<()> {
        if !(self.h0 > 0.0) || !(self.rel_tol > 0.0) || !(self.abs_tol >= 0.0) {
            return Err(Error::Domain(format!("invalid quadrature spec {self:?}")));
        }
        Ok(())
    }
}

/// Medium reduced to `μ = ε = 1` (see the module docs).
#[derive(Debug, Clone, Copy)]
struct UnitMedium {
    mu: Complex64,
    k: Complex64,
    sigma: Complex64,
}

impl UnitMedium {
    fn new(sigma_r: Complex64, mu_r: Complex64, eps_r: Complex64) -> Result<Self> {
        if sigma_r == c(0.0) {
            return Err(Error::Domain("sheet conductivity must be nonzero".into()));
        }
        let k = (mu_r * eps_r).sqrt();
        Ok(UnitMedium {
            mu: mu_r,
            k,
            sigma: mu_r * sigma_r / k,
        })
    }
}

/// SPP (pole) part of the on-sheet tangential field, `x > 0`.
///
/// Unit medium: `−2i/σ² exp(i k_m x − 2i a/σ)`.
pub fn pole_contribution(x: f64, a: f64, sigma_r: Complex64, mu_r: Complex64, eps_r: Complex64) -> Result<Complex64> {
    let m = UnitMedium::new(sigma_r, mu_r, eps_r)?;
    let beta_pole = -2.0 / m.sigma;
    if beta_pole.im < 0.0 {
        return Err(Error::Domain(format!(
            "sigma = {sigma_r} places the SPP root off the physical sheet"
        )));
    }
    let km = dispersion(m.sigma, c(1.0), c(1.0), DispersionMode::Exact)?.k_m;
    let (xs, as_) = (m.k * x, m.k * a);
    Ok(m.mu * (-2.0 * I / (m.sigma * m.sigma)) * (I * km * xs - 2.0 * I * as_ / m.sigma).exp())
}

/// Result of the branch-cut quadrature with its convergence history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchCutEstimate {
    pub value: Complex64,
    pub previous: Complex64,
    pub h: f64,
    pub halvings: usize,
}

impl BranchCutEstimate {
    /// Relative change between the last two step sizes.
    pub fn relative_change(&self) -> f64 {
        (self.value - self.previous).norm() / self.value.norm()
    }
}

/// Integrand on the real segment `ξ ∈ (0, 1)`, unit medium.
pub fn segment_integrand(xi: f64, x: Complex64, a: Complex64, sigma: Complex64) -> Complex64 {
    let s = (1.0 - xi * xi).max(0.0).sqrt();
    let den = xi * xi + 4.0 / (sigma * sigma) - 1.0;
    xi * s * (I * x * xi).exp() * (4.0 * (a * s).cos() - 2.0 * I * sigma * s * (a * s).sin()) / den
}

/// Integrand on the imaginary axis `ξ = iς`, unit medium.
pub fn axis_integrand(t: f64, x: Complex64, a: Complex64, sigma: Complex64) -> Complex64 {
    let s = (1.0 + t * t).sqrt();
    let den = t * t - 4.0 / (sigma * sigma) + 1.0;
    t * s * (-x * t).exp() * (4.0 * (a * s).cos() - 2.0 * I * sigma * s * (a * s).sin()) / den
}

fn check_denominators(sigma: Complex64) -> Result<()> {
    // segment: ξ² + q, axis: ς² − q, with q = 4/σ² − 1
    let q = 4.0 / (sigma * sigma) - 1.0;
    let scale = q.norm().max(1.0);
    let seg_min = if -q.re >= 0.0 && -q.re <= 1.0 {
        (q.im.abs(), (-q.re).sqrt())
    } else {
        ((c(0.0) + q).norm().min((c(1.0) + q).norm()), 0.0)
    };
    if seg_min.0 <= 1e-12 * scale {
        return Err(Error::Pole { xi: seg_min.1 });
    }
    if q.re >= 0.0 && q.im.abs() <= 1e-12 * scale {
        return Err(Error::Pole { xi: q.re.sqrt() });
    }
    Ok(())
}

/// Branch-cut (radiation) part of the on-sheet scattered field, `x > 0`,
/// by summed trapezoid rules with step halving. The improper integral is
/// cut off at `ς_max = 1/√(h x)` in unit-medium variables.
pub fn branchcut_estimate(
    x: f64,
    a: f64,
    sigma_r: Complex64,
    mu_r: Complex64,
    eps_r: Complex64,
    quad: &QuadratureSpec,
) -> Result<BranchCutEstimate> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("branch-cut evaluation needs x > 0, got {x}")));
    }
    quad.validate()?;
    let m = UnitMedium::new(sigma_r, mu_r, eps_r)?;
    check_denominators(m.sigma)?;
    let xs = m.k * x;
    let as_ = m.k * a;
    let decay = xs.re;
    if !(decay > 0.0) {
        return Err(Error::Domain(format!("medium with Re k <= 0 ({})", m.k)));
    }
    let seg = |t: f64| segment_integrand(t, xs, as_, m.sigma);
    let ax = |t: f64| axis_integrand(t, xs, as_, m.sigma);

    // Nested sums: integrand values at j h, both integrands vanish at t = 0
    // and the segment integrand also at t = 1.
    let mut h = quad.h0;
    let mut n_seg = (1.0 / h).round() as u64;
    let mut seg_sum: Complex64 = (1..n_seg).map(|j| seg(j as f64 * h)).sum();
    let cutoff = |h: f64| (1.0 / (h * decay).sqrt()).ceil();
    let mut n_ax = (cutoff(h) / h).ceil() as u64;
    let mut ax_sum: Complex64 = (1..=n_ax).map(|j| ax(j as f64 * h)).sum();
    let total = |h: f64, s1: Complex64, s2: Complex64| h * (s1 - s2) / (4.0 * PI * m.sigma);
    let mut value = total(h, seg_sum, ax_sum);
    let mut previous = value;
    for halving in 1..=quad.max_halvings {
        let h_new = 0.5 * h;
        seg_sum += (0..n_seg).map(|j| seg((2 * j + 1) as f64 * h_new)).sum::<Complex64>();
        n_seg *= 2;
        let n_ax_new = ((cutoff(h_new) / h_new).ceil() as u64).max(2 * n_ax);
        ax_sum += (0..n_ax).map(|j| ax((2 * j + 1) as f64 * h_new)).sum::<Complex64>();
        ax_sum += (2 * n_ax + 1..=n_ax_new).map(|j| ax(j as f64 * h_new)).sum::<Complex64>();
        n_ax = n_ax_new;
        h = h_new;
        previous = value;
        value = total(h, seg_sum, ax_sum);
        if (value - previous).norm() <= quad.rel_tol * value.norm() + quad.abs_tol {
            return Ok(BranchCutEstimate {
                value: m.mu * value,
                previous: m.mu * previous,
                h,
                halvings: halving,
            });
        }
    }
    Err(Error::Quadrature {
        x,
        halvings: quad.max_halvings,
        previous: m.mu * previous,
        last: m.mu * value,
    })
}

/// Axis cutoff in the scaled variable `u = x ς`; `e^{-u}` is below 1e-26 there.
const AXIS_CUTOFF: f64 = 60.0;

/// Romberg table on nested trapezoid sums over `[lo, hi]` starting from `n0`
/// panels. Returns the value and the last two diagonal entries.
fn romberg(
    f: impl Fn(f64) -> Complex64,
    lo: f64,
    hi: f64,
    n0: u64,
    quad: &QuadratureSpec,
) -> std::result::Result<Complex64, (Complex64, Complex64)> {
    let mut n = n0;
    let mut h = (hi - lo) / n as f64;
    let mut sum: Complex64 = 0.5 * (f(lo) + f(hi)) + (1..n).map(|j| f(lo + j as f64 * h)).sum::<Complex64>();
    let mut row = vec![h * sum];
    for level in 1..=quad.max_halvings {
        sum += (0..n).map(|j| f(lo + (2 * j + 1) as f64 * 0.5 * h)).sum::<Complex64>();
        n *= 2;
        h *= 0.5;
        let mut next = vec![h * sum];
        let mut p = 1.0;
        for j in 0..row.len() {
            p *= 4.0;
            let r = next[j] + (next[j] - row[j]) / (p - 1.0);
            next.push(r);
        }
        let (prev, cur) = (row[row.len() - 1], next[next.len() - 1]);
        row = next;
        if level >= 3 && (cur - prev).norm() <= quad.rel_tol * cur.norm() + quad.abs_tol {
            return Ok(cur);
        }
        if level == quad.max_halvings {
            return Err((prev, cur));
        }
    }
    Err((row[0], row[0]))
}

fn branchcut_mapped(x: f64, a: f64, sigma_r: Complex64, mu_r: Complex64, eps_r: Complex64, quad: &QuadratureSpec) -> Result<Complex64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("branch-cut evaluation needs x > 0, got {x}")));
    }
    quad.validate()?;
    let m = UnitMedium::new(sigma_r, mu_r, eps_r)?;
    check_denominators(m.sigma)?;
    let xs = m.k * x;
    let as_ = m.k * a;
    let decay = xs.re;
    if !(decay > 0.0) {
        return Err(Error::Domain(format!("medium with Re k <= 0 ({})", m.k)));
    }
    let seg = |t: f64| t.cos() * segment_integrand(t.sin(), xs, as_, m.sigma);
    let ax = |u: f64| axis_integrand(u / decay, xs, as_, m.sigma) / decay;
    // enough panels to resolve e^{ixξ} and cos(a ς) before extrapolating
    let n_seg = (8.0 * (1.0 + xs.norm())).ceil() as u64;
    let n_ax = (8.0 * AXIS_CUTOFF * (1.0 + as_.norm() / decay)).ceil() as u64;
    let fail = |(previous, last): (Complex64, Complex64)| Error::Quadrature {
        x,
        halvings: quad.max_halvings,
        previous,
        last,
    };
    let s1 = romberg(seg, 0.0, 0.5 * PI, n_seg, quad).map_err(fail)?;
    let s2 = romberg(ax, 0.0, AXIS_CUTOFF, n_ax, quad).map_err(fail)?;
    Ok(m.mu * (s1 - s2) / (4.0 * PI * m.sigma))
}

/// Branch-cut part of the on-sheet scattered field, `x > 0`, by the rule
/// selected in `quad`.
pub fn branchcut_contribution(
    x: f64,
    a: f64,
    sigma_r: Complex64,
    mu_r: Complex64,
    eps_r: Complex64,
    quad: &QuadratureSpec,
) -> Result<Complex64> {
    match quad.rule {
        BranchCutRule::Trapezoid => branchcut_estimate(x, a, sigma_r, mu_r, eps_r, quad).map(|e| e.value),
        BranchCutRule::MappedRomberg => branchcut_mapped(x, a, sigma_r, mu_r, eps_r, quad),
    }
}

/// On-sheet pole, branch-cut and total scattered field at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSample {
    pub x: f64,
    pub pole: Complex64,
    pub branchcut: Complex64,
}

impl OracleSample {
    pub fn total(&self) -> Complex64 {
        self.pole + self.branchcut
    }
}

/// Evaluates the decomposition at every `x`; negative abscissae use the
/// odd parity of `E_x` in `x`, and `x = 0` gives zero.
pub fn oracle_samples(xs: &[f64], model: &RescaledModel, quad: &QuadratureSpec) -> Result<Vec<OracleSample>> {
    xs.par_iter()
        .map(|&x| {
            if x == 0.0 {
                return Ok(OracleSample {
                    x,
                    pole: c(0.0),
                    branchcut: c(0.0),
                });
            }
            let ax = x.abs();
            let p = pole_contribution(ax, model.a, model.sigma_r, model.mu_r, model.eps_r)?;
            let b = branchcut_contribution(ax, model.a, model.sigma_r, model.mu_r, model.eps_r, quad)?;
            let sgn = x.signum();
            Ok(OracleSample {
                x,
                pole: sgn * p,
                branchcut: sgn * b,
            })
        })
        .collect()
}

/// Scattered tangential field on the sheet at the given abscissae.
pub fn scattered_interface_field(xs: &[f64], model: &RescaledModel, quad: &QuadratureSpec) -> Result<InterfaceTrace> {
    let samples = oracle_samples(xs, model, quad)?;
    InterfaceTrace::new(xs.to_vec(), samples.iter().map(OracleSample::total).collect())
}
