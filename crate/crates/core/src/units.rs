//! Conversion of physical inputs to the dimensionless model.
//!
//! Lengths are scaled by the free-space wave number `k0 = ω√(ε0 μ0)`, the
//! material parameters by their vacuum values and the sheet conductivity by
//! the vacuum impedance. After [`rescale`] every other module works with
//! `k0 = 1`.

use crate::{Complex64, Error, Result};

/// Physical (SI-style) description of a sheet configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalInputs {
    /// Angular frequency [rad/s].
    pub omega: f64,
    pub eps0: f64,
    pub mu0: f64,
    /// Dipole current strength; only used to scale fields, never a length.
    pub j0: f64,
    pub mu: Complex64,
    /// Complex permittivity `ε + iσ/ω` of the ambient medium.
    pub eps_tilde: Complex64,
    pub sigma_sheet: Complex64,
    /// Height of the dipole above the sheet [m].
    pub dipole_height: f64,
}

/// Dimensionless parameters shared by the FEM and the oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescaledModel {
    pub mu_r: Complex64,
    pub eps_r: Complex64,
    pub sigma_r: Complex64,
    /// Free-space wave number [1/m], kept for reporting.
    pub k0: f64,
    /// Dipole height in units of `1/k0`.
    pub a: f64,
}

impl RescaledModel {
    /// Vacuum above and below a sheet of conductivity `sigma_r`.
    pub fn vacuum(sigma_r: Complex64, a: f64) -> Self {
        RescaledModel {
            mu_r: Complex64::new(1.0, 0.0),
            eps_r: Complex64::new(1.0, 0.0),
            sigma_r,
            k0: 1.0,
            a,
        }
    }

    /// Physical sheets dissipate (`Re σ ≥ 0`) and are inductive (`Im σ ≥ 0`).
    pub fn is_physical_sheet(&self) -> bool {
        self.sigma_r.re >= 0.0 && self.sigma_r.im >= 0.0
    }
}

pub fn rescale(inputs: &PhysicalInputs) -> Result<RescaledModel> {
    let PhysicalInputs {
        omega,
        eps0,
        mu0,
        j0,
        ..
    } = *inputs;
    if !(omega > 0.0) {
        return Err(Error::Domain(format!("omega must be positive, got {omega}")));
    }
    if !(eps0 > 0.0) || !(mu0 > 0.0) {
        return Err(Error::Domain(format!(
            "vacuum constants must be positive, got eps0 = {eps0}, mu0 = {mu0}"
        )));
    }
    if j0 == 0.0 || !j0.is_finite() {
        return Err(Error::Domain(format!("dipole strength must be nonzero, got {j0}")));
    }
    let k0 = omega * (eps0 * mu0).sqrt();
    let eps_r = inputs.eps_tilde / eps0;
    if !eps_r.re.is_finite() || eps_r.im < 0.0 {
        return Err(Error::Domain(format!(
            "rescaled permittivity must have finite real part and Im >= 0, got {eps_r}"
        )));
    }
    Ok(RescaledModel {
        mu_r: inputs.mu / mu0,
        eps_r,
        sigma_r: inputs.sigma_sheet * (mu0 / eps0).sqrt(),
        k0,
        a: inputs.dipole_height * k0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_inputs() -> PhysicalInputs {
        PhysicalInputs {
            omega: 1.0,
            eps0: 1.0,
            mu0: 1.0,
            j0: 1.0,
            mu: Complex64::new(1.3, 0.0),
            eps_tilde: Complex64::new(2.0, 0.1),
            sigma_sheet: Complex64::new(1e-3, 0.2),
            dipole_height: 0.75,
        }
    }

    #[test]
    fn unit_constants_are_identity() {
        let inp = unit_inputs();
        let m = rescale(&inp).unwrap();
        assert_eq!(m.mu_r, inp.mu);
        assert_eq!(m.eps_r, inp.eps_tilde);
        assert_eq!(m.sigma_r, inp.sigma_sheet);
        assert_eq!(m.k0, 1.0);
        assert_eq!(m.a, 0.75);
    }

    #[test]
    fn vacuum_material_maps_to_one() {
        let eps0 = 8.854e-12;
        let mu0 = 1.2566e-6;
        let inp = PhysicalInputs {
            omega: 2.0e13,
            eps0,
            mu0,
            j0: 1e-3,
            mu: Complex64::new(mu0, 0.0),
            eps_tilde: Complex64::new(eps0, 0.0),
            sigma_sheet: Complex64::new(0.0, 0.15) * (eps0 / mu0).sqrt(),
            dipole_height: 1e-6,
        };
        let m = rescale(&inp).unwrap();
        assert!((m.mu_r - 1.0).norm() < 1e-14);
        assert!((m.eps_r - 1.0).norm() < 1e-14);
        // σ = 0.15i √(ε0/μ0) inverts the impedance scaling
        assert!((m.sigma_r - Complex64::new(0.0, 0.15)).norm() < 1e-14);
        let k0 = 2.0e13 * (eps0 * mu0).sqrt();
        assert!((m.a - 1e-6 * k0).abs() < 1e-14 * m.a.abs().max(1.0));
    }

    #[test]
    fn rejects_nonpositive_constants() {
        let mut inp = unit_inputs();
        inp.omega = 0.0;
        assert!(matches!(rescale(&inp), Err(Error::Domain(_))));
        let mut inp = unit_inputs();
        inp.mu0 = -1.0;
        assert!(matches!(rescale(&inp), Err(Error::Domain(_))));
        let mut inp = unit_inputs();
        inp.j0 = 0.0;
        assert!(matches!(rescale(&inp), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn idempotent_on_rescaled_inputs(sr in 0.0f64..1.0, si in 0.0f64..1.0, a in 0.1f64..3.0) {
            let mut inp = unit_inputs();
            inp.sigma_sheet = Complex64::new(sr, si);
            inp.dipole_height = a;
            let once = rescale(&inp).unwrap();
            let again = PhysicalInputs {
                mu: once.mu_r, eps_tilde: once.eps_r, sigma_sheet: once.sigma_r,
                dipole_height: once.a, ..inp.clone()
            };
            prop_assert_eq!(rescale(&again).unwrap(), once);
        }

        #[test]
        fn preserves_conductivity_phase(sr in 1e-4f64..1.0, si in 1e-3f64..1.0,
                                        eps0 in 0.1f64..10.0, mu0 in 0.1f64..10.0) {
            let mut inp = unit_inputs();
            inp.eps0 = eps0;
            inp.mu0 = mu0;
            inp.sigma_sheet = Complex64::new(sr, si);
            let m = rescale(&inp).unwrap();
            let before = si / sr;
            let after = m.sigma_r.im / m.sigma_r.re;
            prop_assert!((before - after).abs() <= 1e-12 * before.abs());
        }
    }
}
