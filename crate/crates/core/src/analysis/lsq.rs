//! Thin adapter over the `levenberg-marquardt` crate for residual closures
//! with a finite-difference Jacobian.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt, TerminationReason};
use nalgebra::{DMatrix, DVector, Dyn, Owned};

struct Problem<F> {
    x: DVector<f64>,
    m: usize,
    residual: F,
}

impl<F: Fn(&[f64], &mut [f64])> Problem<F> {
    fn eval(&self, x: &[f64]) -> DVector<f64> {
        let mut r = DVector::zeros(self.m);
        (self.residual)(x, r.as_mut_slice());
        r
    }
}

impl<F: Fn(&[f64], &mut [f64])> LeastSquaresProblem<f64, Dyn, Dyn> for Problem<F> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.x.copy_from(x);
    }

    fn params(&self) -> DVector<f64> {
        self.x.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let r = self.eval(self.x.as_slice());
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let n = self.x.len();
        let mut jac = DMatrix::zeros(self.m, n);
        let mut xp = self.x.clone();
        for j in 0..n {
            let h = 1e-6 * self.x[j].abs().max(1.0);
            xp[j] = self.x[j] + h;
            let rp = self.eval(xp.as_slice());
            xp[j] = self.x[j] - h;
            let rm = self.eval(xp.as_slice());
            xp[j] = self.x[j];
            jac.set_column(j, &((rp - rm) / (2.0 * h)));
        }
        jac.iter().all(|v| v.is_finite()).then_some(jac)
    }
}

pub(crate) struct LsqResult {
    pub x: Vec<f64>,
    pub rms: f64,
    pub converged: bool,
    pub termination: String,
}

/// Minimise Σ r_i(x)² from `x0`; `residual` fills `m` residuals.
pub(crate) fn least_squares(x0: &[f64], m: usize, residual: impl Fn(&[f64], &mut [f64])) -> LsqResult {
    let problem = Problem {
        x: DVector::from_column_slice(x0),
        m,
        residual,
    };
    let (problem, report) = LevenbergMarquardt::new().with_patience(200).minimize(problem);
    let r = problem.eval(problem.x.as_slice());
    let rms = (r.norm_squared() / m.max(1) as f64).sqrt();
    let usable = matches!(
        report.termination,
        TerminationReason::ResidualsZero
            | TerminationReason::Orthogonal
            | TerminationReason::Converged { .. }
            | TerminationReason::NoImprovementPossible(_)
    );
    LsqResult {
        converged: usable && rms.is_finite() && problem.x.iter().all(|v| v.is_finite()),
        x: problem.x.as_slice().to_vec(),
        rms,
        termination: format!("{:?}", report.termination),
    }
}

/// Ordinary linear least squares `A·c ≈ b` through the SVD.
pub(crate) fn linear_fit(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let c = svd.solve(b, 1e-12).ok()?;
    c.iter().all(|v| v.is_finite()).then_some(c)
}
