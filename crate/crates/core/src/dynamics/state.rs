use nalgebra::{SymmetricEigen, Vector4};

use crate::error::{Error, Result};
use crate::model::{ComplexMatrix4, C64};

/// Pure state over `{|0g⟩, |1g⟩, |0e⟩, |1e⟩}`.
pub type Ket4 = Vector4<C64>;

/// Basis ket `index`.
pub fn basis_ket(index: usize) -> Ket4 {
    let mut v = Ket4::zeros();
    v[index] = C64::new(1.0, 0.0);
    v
}

pub fn ket_populations(psi: &Ket4) -> [f64; 4] {
    [psi[0].norm_sqr(), psi[1].norm_sqr(), psi[2].norm_sqr(), psi[3].norm_sqr()]
}

/// Hermitian, unit-trace, positive 4×4 density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix4 {
    m: ComplexMatrix4,
}

impl DensityMatrix4 {
    pub const HERMITIAN_TOL: f64 = 1e-10;
    pub const TRACE_TOL: f64 = 1e-10;
    pub const POSITIVITY_TOL: f64 = 1e-9;

    /// Validate and wrap a matrix.
    pub fn new(m: ComplexMatrix4) -> Result<Self> {
        let rho = DensityMatrix4 { m };
        rho.validate()?;
        Ok(rho)
    }

    pub(crate) fn new_unchecked(m: ComplexMatrix4) -> Self {
        DensityMatrix4 { m }
    }

    pub fn from_ket(psi: &Ket4) -> Self {
        DensityMatrix4 {
            m: psi * psi.adjoint(),
        }
    }

    pub fn basis(index: usize) -> Self {
        Self::from_ket(&basis_ket(index))
    }

    pub fn matrix(&self) -> &ComplexMatrix4 {
        &self.m
    }

    pub fn populations(&self) -> [f64; 4] {
        [self.m[(0, 0)].re, self.m[(1, 1)].re, self.m[(2, 2)].re, self.m[(3, 3)].re]
    }

    pub fn trace(&self) -> f64 {
        self.m.trace().re
    }

    pub fn hermiticity_defect(&self) -> f64 {
        (self.m - self.m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (self.m + self.m.adjoint()) * C64::new(0.5, 0.0);
        SymmetricEigen::new(h).eigenvalues.min()
    }

    pub fn purity(&self) -> f64 {
        (self.m * self.m).trace().re
    }

    pub fn validate(&self) -> Result<()> {
        let herm = self.hermiticity_defect();
        if herm > Self::HERMITIAN_TOL {
            return Err(Error::Domain(format!("density matrix not Hermitian (defect {herm:e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > Self::TRACE_TOL {
            return Err(Error::Domain(format!("density matrix trace {tr} != 1")));
        }
        let lam = self.min_eigenvalue();
        if lam < -Self::POSITIVITY_TOL {
            return Err(Error::Domain(format!("density matrix has eigenvalue {lam:e} < 0")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_states_are_valid() {
        let psi = (basis_ket(1) + basis_ket(2)) / C64::new(2f64.sqrt(), 0.0);
        let rho = DensityMatrix4::from_ket(&psi);
        rho.validate().unwrap();
        assert!((rho.purity() - 1.0).abs() < 1e-12);
        assert!((rho.populations()[1] - 0.5).abs() < 1e-12);
        assert_eq!(ket_populations(&psi), rho.populations());
    }

    #[test]
    fn rejects_bad_matrices() {
        let mut m = ComplexMatrix4::identity() * C64::new(0.25, 0.0);
        assert!(DensityMatrix4::new(m).is_ok());
        m[(0, 1)] = C64::new(0.1, 0.0);
        assert!(DensityMatrix4::new(m).is_err());
        let m = ComplexMatrix4::identity() * C64::new(0.5, 0.0);
        assert!(DensityMatrix4::new(m).is_err());
        let mut m = ComplexMatrix4::zeros();
        m[(0, 0)] = C64::new(1.5, 0.0);
        m[(1, 1)] = C64::new(-0.5, 0.0);
        assert!(DensityMatrix4::new(m).is_err());
    }
}
