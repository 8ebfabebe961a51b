//! Excitation kernels, the multivariate self-exciting model they induce, and
//! its stability analysis.
//!
//! A model couples `p` counting processes through a `p x p` matrix of causal
//! kernels: process `j` adds `kernels[i][j](t - s)` to the intensity of
//! process `i` for every event of `j` at time `s`. Stability is governed by
//! the spectral radius of the matrix of kernel L1 norms; below one, the
//! stationary intensity solves `lambda = u + G lambda`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::integrate;
use crate::{Cplx, Scalar};

/// Horizon used whenever an integral of a non-integrable power-law tail
/// (`beta <= 1`) must be forced finite. Evaluation of the kernel itself is
/// never truncated.
pub const POWER_LAW_HORIZON: f64 = 50.0;

/// Relative tolerance for kernel integrals that lack a closed form.
pub const QUAD_REL_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid kernel parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("kernel L1 norm diverges (power law with beta = {beta} <= 1 on an infinite horizon)")]
    DivergentNorm { beta: f64 },
    #[error("baseline length {baseline} does not match kernel matrix size {kernels}")]
    ShapeMismatch { baseline: usize, kernels: usize },
    #[error(
        "spectral radius iteration did not reach tolerance {tol} in {iters} steps; last estimate {last}"
    )]
    PowerIterationStalled { tol: f64, iters: usize, last: f64 },
    #[error("transfer matrix is singular at omega = {omega}")]
    SingularTransfer { omega: f64 },
}

/// Causal, non-negative excitation kernel on `[0, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params")]
pub enum KernelSpec<T: Scalar> {
    /// `alpha * exp(-beta t)`.
    Exponential { alpha: T, beta: T },
    /// `alpha / (t + c)^beta`.
    PowerLaw { alpha: T, beta: T, c: T },
    /// `height` on `[start, end]`, zero elsewhere.
    Rectangular { height: T, start: T, end: T },
    Zero,
}

impl<T: Scalar> KernelSpec<T> {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |name: &'static str, value: T, reason: &'static str| {
            Err(ModelError::InvalidParameter {
                name,
                value: value.as_f64(),
                reason,
            })
        };
        match *self {
            KernelSpec::Exponential { alpha, beta } => {
                if alpha < T::zero() {
                    return bad("alpha", alpha, "must be non-negative");
                }
                if beta <= T::zero() {
                    return bad("beta", beta, "must be positive");
                }
            }
            KernelSpec::PowerLaw { alpha, beta, c } => {
                if alpha < T::zero() {
                    return bad("alpha", alpha, "must be non-negative");
                }
                if beta <= T::zero() {
                    return bad("beta", beta, "must be positive");
                }
                if c <= T::zero() {
                    return bad("c", c, "must be positive");
                }
            }
            KernelSpec::Rectangular { height, start, end } => {
                if height < T::zero() {
                    return bad("height", height, "must be non-negative");
                }
                if start < T::zero() {
                    return bad("start", start, "must be non-negative");
                }
                if end < start {
                    return bad("end", end, "must not precede start");
                }
            }
            KernelSpec::Zero => {}
        }
        Ok(())
    }

    /// Kernel value at lag `t`; zero for `t < 0`.
    pub fn eval(&self, t: T) -> T {
        if t < T::zero() {
            return T::zero();
        }
        match *self {
            KernelSpec::Exponential { alpha, beta } => alpha * (-beta * t).exp(),
            KernelSpec::PowerLaw { alpha, beta, c } => alpha * (t + c).powf(-beta),
            KernelSpec::Rectangular { height, start, end } => {
                if t >= start && t <= end {
                    height
                } else {
                    T::zero()
                }
            }
            KernelSpec::Zero => T::zero(),
        }
    }

    /// `int_0^inf phi`; errors for power laws with non-integrable tails.
    pub fn l1_norm(&self) -> Result<T, ModelError> {
        match *self {
            KernelSpec::Exponential { alpha, beta } => Ok(alpha / beta),
            KernelSpec::PowerLaw { alpha, beta, c } => {
                if beta <= T::one() {
                    Err(ModelError::DivergentNorm {
                        beta: beta.as_f64(),
                    })
                } else {
                    Ok(alpha * c.powf(T::one() - beta) / (beta - T::one()))
                }
            }
            KernelSpec::Rectangular { height, start, end } => Ok(height * (end - start)),
            KernelSpec::Zero => Ok(T::zero()),
        }
    }

    /// `int_0^t phi`, finite for every kernel and every `t >= 0`.
    pub fn l1_truncated(&self, t: T) -> T {
        if t <= T::zero() {
            return T::zero();
        }
        match *self {
            KernelSpec::Exponential { alpha, beta } => {
                alpha / beta * (T::one() - (-beta * t).exp())
            }
            KernelSpec::PowerLaw { alpha, beta, c } => {
                if beta == T::one() {
                    alpha * ((t + c) / c).ln()
                } else {
                    alpha * (c.powf(T::one() - beta) - (t + c).powf(T::one() - beta))
                        / (beta - T::one())
                }
            }
            KernelSpec::Rectangular { height, start, end } => {
                let upper = t.min(end);
                if upper > start {
                    height * (upper - start)
                } else {
                    T::zero()
                }
            }
            KernelSpec::Zero => T::zero(),
        }
    }

    /// Remaining mass `int_t^inf phi` (power laws with `beta <= 1` are
    /// measured against [`POWER_LAW_HORIZON`]).
    pub fn l1_tail(&self, t: T) -> T {
        match self.l1_norm() {
            Ok(total) => (total - self.l1_truncated(t)).max(T::zero()),
            Err(_) => {
                let horizon = T::lit(POWER_LAW_HORIZON);
                (self.l1_truncated(horizon) - self.l1_truncated(t)).max(T::zero())
            }
        }
    }

    /// Supremum of the kernel over `[t, inf)`. Non-increasing in `t`, which
    /// makes it a valid future-proof intensity bound contribution.
    pub fn sup_after(&self, t: T) -> T {
        let t = t.max(T::zero());
        match *self {
            KernelSpec::Exponential { .. } | KernelSpec::PowerLaw { .. } => self.eval(t),
            KernelSpec::Rectangular { height, end, .. } => {
                if t <= end {
                    height
                } else {
                    T::zero()
                }
            }
            KernelSpec::Zero => T::zero(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            KernelSpec::Zero => true,
            KernelSpec::Exponential { alpha, .. } | KernelSpec::PowerLaw { alpha, .. } => {
                alpha == T::zero()
            }
            KernelSpec::Rectangular { height, start, end } => {
                height == T::zero() || end == start
            }
        }
    }

    /// One-sided Fourier transform `int_0^inf phi(t) e^{-i omega t} dt`.
    ///
    /// Exponential and rectangular kernels use closed forms. Power laws are
    /// integrated numerically with oscillation-capped panels; for `beta > 1`
    /// the truncation point is chosen so that a two-term integration-by-parts
    /// tail correction leaves a relative error below [`QUAD_REL_TOL`], and for
    /// `beta <= 1` the transform is taken over [`POWER_LAW_HORIZON`].
    pub fn fourier(&self, omega: T) -> Cplx<T> {
        match *self {
            KernelSpec::Zero => Cplx::new(T::zero(), T::zero()),
            KernelSpec::Exponential { alpha, beta } => {
                let denom = beta * beta + omega * omega;
                Cplx::new(alpha * beta / denom, -alpha * omega / denom)
            }
            KernelSpec::Rectangular { height, start, end } => {
                // h * (end-start) * sinc(omega w/2) * e^{-i omega (start+end)/2}
                let w = end - start;
                let mid = (start + end) * T::lit(0.5);
                let x = omega * w * T::lit(0.5);
                let sinc = if x.abs() < T::lit(1e-8) {
                    T::one() - x * x / T::lit(6.0)
                } else {
                    x.sin() / x
                };
                let mag = height * w * sinc;
                Cplx::new(mag * (omega * mid).cos(), -mag * (omega * mid).sin())
            }
            KernelSpec::PowerLaw { alpha, beta, c } => {
                power_law_fourier(alpha, beta, c, omega)
            }
        }
    }
}

fn power_law_fourier<T: Scalar>(alpha: T, beta: T, c: T, omega: T) -> Cplx<T> {
    let rel = T::lit(QUAD_REL_TOL);
    let integrable = beta > T::one();
    if omega == T::zero() {
        let l1 = if integrable {
            alpha * c.powf(T::one() - beta) / (beta - T::one())
        } else {
            let k = KernelSpec::PowerLaw { alpha, beta, c };
            k.l1_truncated(T::lit(POWER_LAW_HORIZON))
        };
        return Cplx::new(l1, T::zero());
    }
    let aw = omega.abs();
    let scale = alpha * c.powf(-beta) * c; // order-of-magnitude of the transform
    let abs_tol = rel * scale.max(T::lit(1e-30));

    let upper = if integrable {
        // |remainder after two IBP terms| <= |phi'(T*)| / omega^2
        let lhs = alpha * beta / (aw * aw * abs_tol);
        let t_star = lhs.powf(T::one() / (beta + T::one())) - c;
        t_star.max(T::lit(20.0)).min(T::lit(2.0e6))
    } else {
        T::lit(POWER_LAW_HORIZON)
    };

    let period_cap = T::lit(std::f64::consts::PI) / aw / T::lit(3.0);
    let floor = upper / T::lit(200_000.0);
    let panel = period_cap.max(floor).min(upper);

    let re = integrate(
        &|t: T| alpha * (t + c).powf(-beta) * (omega * t).cos(),
        T::zero(),
        upper,
        rel,
        panel,
    );
    let im = -integrate(
        &|t: T| alpha * (t + c).powf(-beta) * (omega * t).sin(),
        T::zero(),
        upper,
        rel,
        panel,
    );
    let mut out = Cplx::new(re, im);

    if integrable {
        // tail = e^{-i w T*} (phi/(iw) + phi'/(iw)^2), phi' = -alpha beta (t+c)^{-beta-1}
        let phi = alpha * (upper + c).powf(-beta);
        let dphi = -alpha * beta * (upper + c).powf(-beta - T::one());
        let rot = Cplx::new((omega * upper).cos(), -(omega * upper).sin());
        let inv_iw = Cplx::new(T::zero(), -T::one() / omega);
        let tail = rot * (inv_iw * phi + inv_iw * inv_iw * dphi);
        out += tail;
    }
    out
}

/// Multivariate self-exciting model: baseline rates plus a kernel matrix.
/// Entry `kernels[i][j]` carries influence from process `j` onto process `i`.
#[derive(Debug, Clone)]
pub struct HawkesModel<T: Scalar> {
    pub baseline: DVector<T>,
    pub kernels: Vec<Vec<KernelSpec<T>>>,
}

impl<T: Scalar> HawkesModel<T> {
    pub fn new(baseline: Vec<T>, kernels: Vec<Vec<KernelSpec<T>>>) -> Result<Self, ModelError> {
        let p = baseline.len();
        if kernels.len() != p || kernels.iter().any(|row| row.len() != p) {
            return Err(ModelError::ShapeMismatch {
                baseline: p,
                kernels: kernels.len(),
            });
        }
        for row in &kernels {
            for k in row {
                k.validate()?;
            }
        }
        Ok(HawkesModel {
            baseline: DVector::from_vec(baseline),
            kernels,
        })
    }

    pub fn p(&self) -> usize {
        self.baseline.len()
    }

    /// Matrix of kernel L1 norms; errors if any entry diverges.
    pub fn l1_matrix(&self) -> Result<DMatrix<T>, ModelError> {
        let p = self.p();
        let mut g = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                g[(i, j)] = self.kernels[i][j].l1_norm()?;
            }
        }
        Ok(g)
    }

    /// Matrix of kernel transforms at `omega`.
    pub fn fourier_matrix(&self, omega: T) -> DMatrix<Cplx<T>> {
        let p = self.p();
        DMatrix::from_fn(p, p, |i, j| self.kernels[i][j].fourier(omega))
    }
}

/// Outcome of the stability analysis.
#[derive(Debug, Clone)]
pub struct StabilityReport<T: Scalar> {
    pub l1_norm_matrix: DMatrix<T>,
    pub spectral_radius: T,
    /// `(I - G)^{-1} u`; absent when the radius is not below one.
    pub stationary_intensity: Option<DVector<T>>,
    pub stable: bool,
}

/// Spectral radius and stationary intensity of the model.
///
/// The radius of the (entrywise non-negative) L1 matrix is found by power
/// iteration on `G + eps I`; the diagonal shift moves the dominant eigenvalue
/// of a non-negative matrix by exactly `eps`, which keeps the iteration
/// convergent even for periodic structures such as pure 2-cycles.
pub fn check_stability<T: Scalar>(m: &HawkesModel<T>) -> Result<StabilityReport<T>, ModelError> {
    let g = m.l1_matrix()?;
    let p = m.p();
    let radius = nonneg_spectral_radius(&g)?;
    let stable = radius < T::one();
    let stationary = if stable {
        let a = DMatrix::identity(p, p) - &g;
        a.lu().solve(&m.baseline)
    } else {
        None
    };
    Ok(StabilityReport {
        l1_norm_matrix: g,
        spectral_radius: radius,
        stationary_intensity: stationary,
        stable,
    })
}

/// Spectral radius of an entrywise nonnegative matrix by shifted power
/// iteration with Rayleigh-quotient stopping.
///
/// The shift is exact for nonnegative matrices (`rho(G + sI) = rho(G) + s`)
/// and also breaks modulus ties: pure cycles have a peripheral eigenvalue
/// `-rho` that plain power iteration never escapes.
pub(crate) fn nonneg_spectral_radius<T: Scalar>(g: &DMatrix<T>) -> Result<T, ModelError> {
    let p = g.nrows();
    let tol = T::lit(1e-12);
    let max_iters = 10_000usize;

    let max_entry = g.iter().fold(T::zero(), |a, &b| a.max(b));
    let shift = T::lit(0.05) * (T::one() + max_entry);
    let b = g + DMatrix::from_diagonal_element(p, p, shift);

    let mut x = DVector::from_element(p, T::one());
    x /= x.norm();
    let mut last = T::zero();
    let mut converged = false;
    for iter in 0..max_iters {
        let bx = &b * &x;
        let rayleigh = x.dot(&bx);
        x = &bx / bx.norm();
        if iter > 0 && (rayleigh - last).abs() <= tol * T::one().max(rayleigh) {
            last = rayleigh;
            converged = true;
            break;
        }
        last = rayleigh;
    }
    if !converged {
        return Err(ModelError::PowerIterationStalled {
            tol: 1e-12,
            iters: max_iters,
            last: (last - shift).as_f64(),
        });
    }
    Ok(last - shift)
}

/// Transfer matrix `H(omega) = (I - Phi(omega))^{-1}`.
pub fn transfer_matrix<T: Scalar>(
    m: &HawkesModel<T>,
    omega: T,
) -> Result<DMatrix<Cplx<T>>, ModelError> {
    let p = m.p();
    let phi = m.fourier_matrix(omega);
    let a = DMatrix::from_fn(p, p, |i, j| {
        let d = if i == j {
            Cplx::new(T::one(), T::zero())
        } else {
            Cplx::new(T::zero(), T::zero())
        };
        d - phi[(i, j)]
    });
    a.lu().try_inverse().ok_or(ModelError::SingularTransfer {
        omega: omega.as_f64(),
    })
}
