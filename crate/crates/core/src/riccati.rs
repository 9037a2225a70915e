//! Continuous-time algebraic Riccati equation and LQR gain synthesis.
//!
//! `solve_care` works on dense matrices of any size. It seeds a stabilizing
//! solution with the matrix sign function of the Hamiltonian
//!
//! ```text
//!     H = [  A   -B R^-1 B^T ]
//!         [ -Q   -A^T        ]
//! ```
//!
//! and then polishes it with Kleinman-Newton steps, each of which solves a
//! Lyapunov equation for the current closed loop. The result is accepted only
//! once the Frobenius residual drops below `1e-8 (1 + |P|_F)` and the closed
//! loop is Hurwitz.

use nalgebra::{Complex, DMatrix, Matrix3x4, Vector4};

use crate::error::{Error, Result};
use crate::linmodel::LinearModel;
use crate::plant::TractionTorques;
use crate::sim::Trajectory;

pub const RESIDUAL_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;

const SIGN_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct LqrWeights {
    /// State weight, symmetric positive semidefinite.
    pub q: DMatrix<f64>,
    /// Input weight, symmetric positive definite.
    pub r: DMatrix<f64>,
}

impl LqrWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&q, "Q")?;
        check_symmetric(&r, "R")?;
        let q_scale = q.amax().max(1.0);
        if q.clone().symmetric_eigenvalues().min() < -1e-12 * q_scale {
            return Err(Error::InvalidWeights("Q must be positive semidefinite".into()));
        }
        if r.clone().symmetric_eigenvalues().min() <= 0.0 {
            return Err(Error::InvalidWeights("R must be positive definite".into()));
        }
        Ok(Self { q, r })
    }

    pub fn from_diagonals(q: &[f64], r: &[f64]) -> Result<Self> {
        Self::new(
            DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(q)),
            DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(r)),
        )
    }

    /// `Q = diag(200, 10, 200, 10)`, `R = I_3`.
    pub fn paper() -> Self {
        Self::from_diagonals(&[200.0, 10.0, 200.0, 10.0], &[1.0, 1.0, 1.0])
            .expect("constant weights are valid")
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.q * c, &self.r * c)
    }
}

fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidWeights(format!("{name} must be square")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidWeights(format!("{name} has non-finite entries")));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * m.amax().max(1.0) {
        return Err(Error::InvalidWeights(format!("{name} must be symmetric")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CareSolution {
    pub p: DMatrix<f64>,
    /// `|A^T P + P A - P B R^-1 B^T P + Q|_F`
    pub residual_norm: f64,
    pub closed_loop_eigs: Vec<Complex<f64>>,
    pub newton_steps: usize,
}

impl CareSolution {
    pub fn residual_bound(&self) -> f64 {
        RESIDUAL_TOL * (1.0 + self.p.norm())
    }
}

pub fn care_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w: &LqrWeights,
    p: &DMatrix<f64>,
) -> Result<f64> {
    let r_inv = invert(&w.r, "R")?;
    let res = a.transpose() * p + p * a - p * b * r_inv * b.transpose() * p + &w.q;
    Ok(res.norm())
}

fn invert(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Synthesis(format!("{name} is singular")))
}

fn check_dims(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &LqrWeights) -> Result<()> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square()
        || b.nrows() != n
        || w.q.shape() != (n, n)
        || w.r.shape() != (m, m)
    {
        return Err(Error::Dimension(format!(
            "A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            w.q.shape(),
            w.r.shape()
        )));
    }
    Ok(())
}

/// Matrix sign function by the scaled Newton iteration.
fn matrix_sign(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = h.nrows() as f64;
    let mut z = h.clone();
    for _ in 0..MAX_ITERATIONS {
        let det = z.determinant();
        if !det.is_finite() || det == 0.0 {
            return Err(Error::Synthesis(
                "Hamiltonian has eigenvalues on the imaginary axis".into(),
            ));
        }
        let z_inv = z
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Synthesis("sign iteration hit a singular matrix".into()))?;
        let c = det.abs().powf(-1.0 / n);
        let next = (&z * c + z_inv / c) * 0.5;
        let delta = (&next - &z).norm();
        z = next;
        if delta <= SIGN_TOL * z.norm() {
            return Ok(z);
        }
    }
    Err(Error::Synthesis(
        "sign iteration did not converge (eigenvalues near the imaginary axis)".into(),
    ))
}

fn hamiltonian(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &LqrWeights) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let g = b * invert(&w.r, "R")? * b.transpose();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-&w.q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    Ok(h)
}

/// Stable invariant subspace from `sign(H)`: solve
/// `[W12; W22 + I] P = -[W11 + I; W21]` in the least-squares sense.
fn sign_function_seed(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &LqrWeights) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let s = matrix_sign(&hamiltonian(a, b, w)?)?;
    let eye = DMatrix::<f64>::identity(n, n);
    let mut lhs = DMatrix::zeros(2 * n, n);
    let mut rhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&s.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n))
        .copy_from(&(s.view((n, n), (n, n)) + &eye));
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(-(s.view((0, 0), (n, n)) + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-s.view((n, 0), (n, n))));
    let svd = lhs.svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    let p = svd
        .solve(&rhs, eps)
        .map_err(|e| Error::Synthesis(format!("invariant subspace solve: {e}")))?;
    Ok(symmetrize(&p))
}

fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    (p + p.transpose()) * 0.5
}

/// Solve `Ac^T X + X Ac = -M` through the Kronecker-product linear system.
pub fn solve_lyapunov(ac: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = ac.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let act = ac.transpose();
    let op = eye.kronecker(&act) + act.kronecker(&eye);
    let rhs = nalgebra::DVector::from_column_slice((-m).as_slice());
    let x = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Synthesis("Lyapunov operator is singular".into()))?;
    Ok(DMatrix::from_column_slice(n, n, x.as_slice()))
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    m.clone().complex_eigenvalues().iter().copied().collect()
}

pub fn is_hurwitz(eigs: &[Complex<f64>]) -> bool {
    eigs.iter().all(|e| e.re < 0.0)
}

/// Stabilizing solution of `A^T P + P A - P B R^-1 B^T P + Q = 0`.
pub fn solve_care(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &LqrWeights) -> Result<CareSolution> {
    check_dims(a, b, w)?;
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "system matrices",
        });
    }
    let r_inv = invert(&w.r, "R")?;
    let mut p = sign_function_seed(a, b, w)?;

    for step in 0..=MAX_ITERATIONS {
        let k = &r_inv * b.transpose() * &p;
        let ac = a - b * &k;
        let eigs = eigenvalues(&ac);
        if !is_hurwitz(&eigs) {
            return Err(Error::Synthesis(
                "no stabilizing solution: (A, B) is not stabilizable or Q leaves modes undetectable"
                    .into(),
            ));
        }
        let residual_norm = care_residual(a, b, w, &p)?;
        if residual_norm <= RESIDUAL_TOL * (1.0 + p.norm()) {
            return Ok(CareSolution {
                p,
                residual_norm,
                closed_loop_eigs: eigs,
                newton_steps: step,
            });
        }
        if step == MAX_ITERATIONS {
            break;
        }
        let m = &w.q + k.transpose() * &w.r * &k;
        p = symmetrize(&solve_lyapunov(&ac, &m)?);
    }
    Err(Error::Synthesis(format!(
        "Newton refinement did not reach the residual bound in {MAX_ITERATIONS} steps"
    )))
}

/// `K = R^-1 B^T P`.
pub fn lqr_gain(sol: &CareSolution, b: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if r.nrows() != b.ncols() || sol.p.nrows() != b.nrows() {
        return Err(Error::Dimension("R, B and P are incompatible".into()));
    }
    Ok(invert(r, "R")? * b.transpose() * &sol.p)
}

/// State-feedback gain of the attitude subsystem, 3 torques by 4 states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainMatrix(pub Matrix3x4<f64>);

impl GainMatrix {
    /// Published gain matrix, rounded to four decimals.
    pub fn paper() -> Self {
        Self(Matrix3x4::new(
            0.0, 0.0, -11.5470, -2.5889, //
            -10.0, -2.2442, 5.7735, 1.2945, //
            10.0, 2.2442, 5.7735, 1.2945,
        ))
    }

    pub fn zeros() -> Self {
        Self(Matrix3x4::zeros())
    }

    pub fn column_norm(&self, j: usize) -> f64 {
        self.0.column(j).norm()
    }
}

impl TryFrom<&DMatrix<f64>> for GainMatrix {
    type Error = Error;

    fn try_from(k: &DMatrix<f64>) -> Result<Self> {
        if k.shape() != (3, 4) {
            return Err(Error::Dimension(format!("gain must be 3x4, got {:?}", k.shape())));
        }
        Ok(Self(Matrix3x4::from_fn(|i, j| k[(i, j)])))
    }
}

/// `u = -K x_s`.
pub fn control_law(k: &GainMatrix, xs: &Vector4<f64>) -> TractionTorques {
    TractionTorques::from_vector(&(-(k.0 * xs)))
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub solution: CareSolution,
    pub gain: GainMatrix,
}

pub fn synthesize(model: &LinearModel, w: &LqrWeights) -> Result<Synthesis> {
    let b = model.b_dyn();
    let solution = solve_care(&model.a_dyn(), &b, w)?;
    let k = lqr_gain(&solution, &b, &w.r)?;
    Ok(Synthesis {
        gain: GainMatrix::try_from(&k)?,
        solution,
    })
}

/// Trapezoidal approximation of `int x_s^T Q x_s + u^T R u dt` over the
/// recorded horizon.
pub fn lqr_cost(traj: &Trajectory, w: &LqrWeights) -> Result<f64> {
    if traj.samples.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    if w.q.shape() != (4, 4) || w.r.shape() != (3, 3) {
        return Err(Error::Dimension("cost weights must be 4x4 and 3x3".into()));
    }
    let integrand = |i: usize| {
        let s = &traj.samples[i];
        let x = nalgebra::DVector::from_column_slice(s.state.stabilizing().as_slice());
        let u = nalgebra::DVector::from_column_slice(&s.torques.0);
        x.dot(&(&w.q * &x)) + u.dot(&(&w.r * &u))
    };
    let n = traj.samples.len();
    let mut sum = 0.0;
    for i in 1..n {
        sum += 0.5 * (integrand(i - 1) + integrand(i)) * traj.dt;
    }
    Ok(sum)
}
