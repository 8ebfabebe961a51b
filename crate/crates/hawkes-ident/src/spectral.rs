//! Cross-spectral density estimation, Wilson minimum-phase factorization,
//! and the Gaussian parameters of the convolution prior.
//!
//! The frequency grid is always the FFT grid of the analysis window,
//! `omega_k = 2 pi k / N` in radians per bin, so that discrete identities
//! (Wiener-Khinchin, Parseval) hold exactly on the grid.

use nalgebra::{DMatrix, DVector};
use rustfft::{Fft, FftPlanner};

use crate::model::{check_stability, nonneg_spectral_radius, HawkesModel, ModelError};
use crate::numeric::rank_from_singular_values;
use crate::{Cplx, Scalar};

#[derive(Debug, thiserror::Error)]
pub enum SpectralError {
    #[error("series of length {got} is shorter than n_freq * segments = {need}")]
    TooShort { need: usize, got: usize },
    #[error("frequency grid size {0} must be a power of two (and at least 4)")]
    NotPowerOfTwo(usize),
    #[error("need at least one segment")]
    NoSegments,
    #[error("matrix at frequency index {index} is not Hermitian (defect {defect:e})")]
    NotHermitian { index: usize, defect: f64 },
    #[error("matrix at frequency index {index} is not positive semidefinite (min eigenvalue {min_eig:e})")]
    NotPsd { index: usize, min_eig: f64 },
    #[error("factorization did not reach tolerance {tol:e} in {iters} iterations (residual {residual:e})")]
    NonConvergence {
        residual: f64,
        tol: f64,
        iters: usize,
    },
    #[error("factor normalizer is singular")]
    SingularNormalizer,
    #[error("imaginary residue {ratio:e} exceeds 1e-8 of the real part")]
    ImaginaryResidue { ratio: f64 },
    #[error("spectrum has rank below {p} at {deficient} of {total} frequencies")]
    RankDeficient {
        p: usize,
        deficient: usize,
        total: usize,
    },
    #[error("model is unstable (spectral radius {radius})")]
    UnstableModel { radius: f64 },
    #[error("discretized model at delta {delta} is unstable (coefficient radius {radius})")]
    UnstableDiscretization { delta: f64, radius: f64 },
    #[error("discrete transfer is singular at frequency {theta}")]
    SingularTransfer { theta: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Window applied to each analysis segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Taper {
    None,
    Hann,
}

/// Cross-spectral density on the FFT grid: one Hermitian positive
/// semidefinite p x p matrix per frequency `omega_k = 2 pi k / N`.
#[derive(Debug, Clone)]
pub struct SpectralDensity<T: Scalar> {
    pub matrices: Vec<DMatrix<Cplx<T>>>,
    /// Total eigenvalue mass removed by the PSD projection during
    /// estimation; zero for exactly constructed densities.
    pub clip_mass: T,
}

impl<T: Scalar> SpectralDensity<T> {
    /// Validating constructor: every matrix square of one size, Hermitian to
    /// 1e-10 (relative), smallest eigenvalue >= -1e-8 * trace.
    pub fn new(matrices: Vec<DMatrix<Cplx<T>>>) -> Result<Self, SpectralError> {
        if matrices.is_empty() {
            return Err(SpectralError::Shape("empty frequency grid".into()));
        }
        let p = matrices[0].nrows();
        for (k, m) in matrices.iter().enumerate() {
            if m.nrows() != p || m.ncols() != p {
                return Err(SpectralError::Shape(format!(
                    "matrix {k} is {}x{}, expected {p}x{p}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            let defect = (m - m.adjoint()).norm();
            if defect > T::lit(1e-10) * T::one().max(m.norm()) {
                return Err(SpectralError::NotHermitian {
                    index: k,
                    defect: defect.as_f64(),
                });
            }
            let eig = m.clone().symmetric_eigen();
            let trace: T = eig.eigenvalues.iter().copied().sum();
            let min_eig = eig
                .eigenvalues
                .iter()
                .copied()
                .fold(T::lit(f64::INFINITY), |a, b| a.min(b));
            if min_eig < -T::lit(1e-8) * trace.max(T::zero()) {
                return Err(SpectralError::NotPsd {
                    index: k,
                    min_eig: min_eig.as_f64(),
                });
            }
        }
        Ok(Self {
            matrices,
            clip_mass: T::zero(),
        })
    }

    pub fn n_freq(&self) -> usize {
        self.matrices.len()
    }

    pub fn p(&self) -> usize {
        self.matrices[0].nrows()
    }

    /// Grid frequencies in radians per bin.
    pub fn frequencies(&self) -> Vec<T> {
        let n = T::from_usize(self.n_freq()).unwrap();
        (0..self.n_freq())
            .map(|k| T::two_pi() * T::from_usize(k).unwrap() / n)
            .collect()
    }
}

/// Minimum-phase spectral factor `S(omega) = G(omega) Sigma G(omega)^H`
/// with causal `G` whose zero-lag coefficient is the identity (then a
/// diagonal sign gauge makes the real diagonal of `G(0)` nonnegative).
#[derive(Debug, Clone)]
pub struct SpectralFactor<T: Scalar> {
    pub g: Vec<DMatrix<Cplx<T>>>,
    pub sigma: DMatrix<T>,
    /// Final max-over-frequency relative reconstruction residual.
    pub residual: T,
    /// Energy fraction of the anticausal lag coefficients of `g`.
    pub causality_defect: T,
    /// Orthonormal projection applied before factorization when the observed
    /// dimension exceeds the requested rank; `None` for square inputs.
    pub projection: Option<DMatrix<T>>,
}

impl<T: Scalar> SpectralFactor<T> {
    pub fn n_freq(&self) -> usize {
        self.g.len()
    }

    pub fn p(&self) -> usize {
        self.g[0].nrows()
    }

    /// `G(omega_k) Sigma G(omega_k)^H`.
    pub fn reconstruct(&self, k: usize) -> DMatrix<Cplx<T>> {
        let sigma_c = self.sigma.map(|v| Cplx::new(v, T::zero()));
        &self.g[k] * sigma_c * self.g[k].adjoint()
    }

    /// Transfer seen in observation coordinates: `P G(omega_k)` when a
    /// projection was applied, `G(omega_k)` otherwise.
    pub fn observed_transfer(&self, k: usize) -> DMatrix<Cplx<T>> {
        match &self.projection {
            Some(p) => p.map(|v| Cplx::new(v, T::zero())) * &self.g[k],
            None => self.g[k].clone(),
        }
    }
}

fn hermitianize<T: Scalar>(m: &mut DMatrix<Cplx<T>>) {
    let p = m.nrows();
    for i in 0..p {
        m[(i, i)] = Cplx::new(m[(i, i)].re, T::zero());
        for j in (i + 1)..p {
            let h = (m[(i, j)] + m[(j, i)].conj()) * T::lit(0.5);
            m[(i, j)] = h;
            m[(j, i)] = h.conj();
        }
    }
}

/// Clips negative eigenvalues to zero in place, returning the removed mass.
/// The eigendecomposition is only taken when something is actually negative,
/// so already-PSD matrices pass through bit-identically.
fn clip_negative_eigenvalues<T: Scalar>(m: &mut DMatrix<Cplx<T>>) -> T {
    let eig = m.clone().symmetric_eigen();
    let mut mass = T::zero();
    for &l in eig.eigenvalues.iter() {
        if l < T::zero() {
            mass += -l;
        }
    }
    if mass > T::zero() {
        let clipped: Vec<Cplx<T>> = eig
            .eigenvalues
            .iter()
            .map(|&l| Cplx::new(l.max(T::zero()), T::zero()))
            .collect();
        let d = DMatrix::from_diagonal(&DVector::from_vec(clipped));
        *m = &eig.eigenvectors * d * eig.eigenvectors.adjoint();
        hermitianize(m);
    }
    mass
}

/// Welch-averaged cross-periodogram of a multivariate series (rows = bins).
///
/// Columns are mean-centered once, segments of length `n_freq` start at
/// multiples of `n_freq / 2` (half overlap), each is tapered and transformed,
/// and the averaged outer products are normalized by the window energy. The
/// result is exactly Hermitian, PSD after eigenvalue clipping (the removed
/// mass is reported on the output), and exactly conjugate-mirrored across
/// Nyquist.
pub fn estimate_psd<T: Scalar>(
    x: &DMatrix<T>,
    n_freq: usize,
    taper: Taper,
    segments: usize,
) -> Result<SpectralDensity<T>, SpectralError> {
    if segments == 0 {
        return Err(SpectralError::NoSegments);
    }
    if n_freq < 4 || !n_freq.is_power_of_two() {
        return Err(SpectralError::NotPowerOfTwo(n_freq));
    }
    let n = n_freq;
    let len = x.nrows();
    if len < n * segments {
        return Err(SpectralError::TooShort {
            need: n * segments,
            got: len,
        });
    }
    let p = x.ncols();
    let nf = T::from_usize(len).unwrap();
    let means: Vec<T> = (0..p).map(|j| x.column(j).sum() / nf).collect();
    let window: Vec<T> = match taper {
        Taper::None => vec![T::one(); n],
        Taper::Hann => (0..n)
            .map(|t| {
                let phase =
                    T::two_pi() * T::from_usize(t).unwrap() / T::from_usize(n).unwrap();
                T::lit(0.5) * (T::one() - phase.cos())
            })
            .collect(),
    };
    let energy: T = window.iter().map(|&w| w * w).sum();

    let mut planner = FftPlanner::<T>::new();
    let fft = planner.plan_fft_forward(n);
    let mut acc: Vec<DMatrix<Cplx<T>>> = vec![DMatrix::zeros(p, p); n];
    let mut cols: Vec<Vec<Cplx<T>>> = vec![vec![Cplx::new(T::zero(), T::zero()); n]; p];
    for s in 0..segments {
        let start = s * n / 2;
        for (j, buf) in cols.iter_mut().enumerate() {
            for (t, slot) in buf.iter_mut().enumerate() {
                *slot = Cplx::new((x[(start + t, j)] - means[j]) * window[t], T::zero());
            }
            fft.process(buf);
        }
        for (k, a) in acc.iter_mut().enumerate() {
            for i in 0..p {
                for j in 0..p {
                    a[(i, j)] += cols[i][k] * cols[j][k].conj();
                }
            }
        }
    }

    let norm = T::one() / (energy * T::from_usize(segments).unwrap());
    let mut clip_mass = T::zero();
    let mut mats: Vec<DMatrix<Cplx<T>>> = vec![DMatrix::zeros(p, p); n];
    for k in 0..=n / 2 {
        let mut m = acc[k].map(|v| v * norm);
        hermitianize(&mut m);
        if k == 0 || k == n / 2 {
            // Self-conjugate bins of a real series are real symmetric.
            m = m.map(|v| Cplx::new(v.re, T::zero()));
        }
        clip_mass += clip_negative_eigenvalues(&mut m);
        if k > 0 && k < n / 2 {
            mats[n - k] = m.map(|v| v.conj());
        }
        mats[k] = m;
    }
    Ok(SpectralDensity {
        matrices: mats,
        clip_mass,
    })
}

/// Lag coefficients of a matrix function sampled on the FFT grid
/// (`B(omega) = sum_m b_m e^{-i omega m}` inverted per entry).
fn lags_from_grid<T: Scalar>(
    grid: &[DMatrix<Cplx<T>>],
    ifft: &dyn Fft<T>,
) -> Vec<DMatrix<Cplx<T>>> {
    let n = grid.len();
    let p = grid[0].nrows();
    let q = grid[0].ncols();
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mut out = vec![DMatrix::<Cplx<T>>::zeros(p, q); n];
    let mut buf = vec![Cplx::new(T::zero(), T::zero()); n];
    for i in 0..p {
        for j in 0..q {
            for (k, slot) in buf.iter_mut().enumerate() {
                *slot = grid[k][(i, j)];
            }
            ifft.process(&mut buf);
            for (m, lag) in out.iter_mut().enumerate() {
                lag[(i, j)] = buf[m] * inv_n;
            }
        }
    }
    out
}

fn grid_from_lags<T: Scalar>(
    lags: &[DMatrix<Cplx<T>>],
    fft: &dyn Fft<T>,
) -> Vec<DMatrix<Cplx<T>>> {
    let n = lags.len();
    let p = lags[0].nrows();
    let q = lags[0].ncols();
    let mut out = vec![DMatrix::<Cplx<T>>::zeros(p, q); n];
    let mut buf = vec![Cplx::new(T::zero(), T::zero()); n];
    for i in 0..p {
        for j in 0..q {
            for (m, slot) in buf.iter_mut().enumerate() {
                *slot = lags[m][(i, j)];
            }
            fft.process(&mut buf);
            for (k, g) in out.iter_mut().enumerate() {
                g[(i, j)] = buf[k];
            }
        }
    }
    out
}

/// Causal half of a Hermitian matrix function: keeps lags `1..N/2`, splits
/// the zero lag into its lower-triangular half (half diagonal), and zeroes
/// the aliased upper half, so that `plus(B) + plus(B)^H = B`.
fn causal_half<T: Scalar>(lags: &[DMatrix<Cplx<T>>]) -> Vec<DMatrix<Cplx<T>>> {
    let n = lags.len();
    let p = lags[0].nrows();
    let mut out = vec![DMatrix::<Cplx<T>>::zeros(p, p); n];
    let mut zero = DMatrix::<Cplx<T>>::zeros(p, p);
    for i in 0..p {
        zero[(i, i)] = Cplx::new(lags[0][(i, i)].re * T::lit(0.5), T::zero());
        for j in 0..i {
            zero[(i, j)] = lags[0][(i, j)];
        }
    }
    out[0] = zero;
    for m in 1..n / 2 {
        out[m] = lags[m].clone();
    }
    out
}

/// Wilson's iterative minimum-phase factorization of a spectral density.
///
/// A ridge `epsilon * I` (default `1e-8` times the mean trace, overridable)
/// regularizes near-singular estimates; the input must then be strictly
/// positive definite at every frequency. The returned factor is canonical:
/// the unitary constant ambiguity is removed by normalizing the zero-lag
/// coefficient to the identity, and a final diagonal sign gauge makes the
/// real diagonal of `G(0)` nonnegative.
pub fn wilson_factorize<T: Scalar>(
    s: &SpectralDensity<T>,
    tol: T,
    max_iter: usize,
    ridge: Option<T>,
) -> Result<SpectralFactor<T>, SpectralError> {
    let n = s.n_freq();
    let p = s.p();
    if n < 4 {
        return Err(SpectralError::Shape(format!(
            "need at least 4 grid frequencies, got {n}"
        )));
    }
    let mean_trace: T = s
        .matrices
        .iter()
        .map(|m| (0..p).map(|i| m[(i, i)].re).sum::<T>())
        .sum::<T>()
        / T::from_usize(n).unwrap();
    let eps = ridge.unwrap_or(T::lit(1e-8) * mean_trace.max(T::zero()));
    let eye_c = DMatrix::<Cplx<T>>::identity(p, p);
    let sreg: Vec<DMatrix<Cplx<T>>> = s
        .matrices
        .iter()
        .map(|m| m + eye_c.map(|v| v * eps))
        .collect();

    for (k, m) in sreg.iter().enumerate() {
        let eig = m.clone().symmetric_eigen();
        let trace: T = eig.eigenvalues.iter().copied().sum();
        let min_eig = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(T::lit(f64::INFINITY), |a, b| a.min(b));
        if min_eig <= T::lit(1e-10) * trace {
            return Err(SpectralError::NotPsd {
                index: k,
                min_eig: min_eig.as_f64(),
            });
        }
    }

    let mut mean = DMatrix::<Cplx<T>>::zeros(p, p);
    for m in &sreg {
        mean += m;
    }
    mean = mean.map(|v| v / T::from_usize(n).unwrap());
    hermitianize(&mut mean);
    let chol = mean
        .clone()
        .cholesky()
        .ok_or(SpectralError::SingularNormalizer)?;
    let mut psi: Vec<DMatrix<Cplx<T>>> = vec![chol.l(); n];

    let mut planner = FftPlanner::<T>::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);

    let rel_residual = |psi: &[DMatrix<Cplx<T>>]| -> T {
        let mut worst = T::zero();
        for k in 0..n {
            let rec = &psi[k] * psi[k].adjoint();
            let denom = sreg[k].norm().max(T::lit(1e-300));
            worst = worst.max((rec - &sreg[k]).norm() / denom);
        }
        worst
    };

    let mut residual = rel_residual(&psi);
    let mut iters = 0;
    while residual > tol && iters < max_iter {
        let mut b: Vec<DMatrix<Cplx<T>>> = Vec::with_capacity(n);
        for k in 0..n {
            let lu = psi[k].clone().lu();
            let left = lu
                .solve(&sreg[k])
                .ok_or(SpectralError::SingularNormalizer)?;
            let full = lu
                .solve(&left.adjoint())
                .ok_or(SpectralError::SingularNormalizer)?
                .adjoint();
            b.push(full + &eye_c);
        }
        let lags = lags_from_grid(&b, ifft.as_ref());
        let plus = grid_from_lags(&causal_half(&lags), fft.as_ref());
        for k in 0..n {
            psi[k] = &psi[k] * &plus[k];
        }
        residual = rel_residual(&psi);
        iters += 1;
    }
    if residual > tol {
        return Err(SpectralError::NonConvergence {
            residual: residual.as_f64(),
            tol: tol.as_f64(),
            iters,
        });
    }

    // Zero-lag coefficient; right-dividing by it pins G's zero lag to I and
    // cancels the unitary ambiguity of the factor pair.
    let mut a0 = DMatrix::<Cplx<T>>::zeros(p, p);
    for m in &psi {
        a0 += m;
    }
    a0 = a0.map(|v| v / T::from_usize(n).unwrap());
    let a0h_lu = a0.adjoint().lu();
    let mut g: Vec<DMatrix<Cplx<T>>> = Vec::with_capacity(n);
    for m in &psi {
        let solved = a0h_lu
            .solve(&m.adjoint())
            .ok_or(SpectralError::SingularNormalizer)?;
        g.push(solved.adjoint());
    }
    let sigma_c = &a0 * a0.adjoint();
    let mut sigma = sigma_c.map(|v| v.re);
    // Innovation covariance of a real series is real; fold tiny asymmetry.
    sigma = (&sigma + sigma.transpose()) * T::lit(0.5);

    // Diagonal sign gauge at omega = 0.
    let signs: Vec<T> = (0..p)
        .map(|i| {
            if g[0][(i, i)].re < T::zero() {
                -T::one()
            } else {
                T::one()
            }
        })
        .collect();
    if signs.iter().any(|&d| d < T::zero()) {
        for gk in g.iter_mut() {
            for j in 0..p {
                if signs[j] < T::zero() {
                    for i in 0..p {
                        gk[(i, j)] = -gk[(i, j)];
                    }
                }
            }
        }
        for i in 0..p {
            for j in 0..p {
                sigma[(i, j)] *= signs[i] * signs[j];
            }
        }
    }

    let g_lags = lags_from_grid(&g, ifft.as_ref());
    let total: T = g_lags.iter().map(|m| m.norm_squared()).sum();
    let anti: T = g_lags[n / 2..].iter().map(|m| m.norm_squared()).sum();
    let causality_defect = (anti / total.max(T::lit(1e-300))).sqrt();

    // Residual reported against the unridged input.
    let sigma_cplx = sigma.map(|v| Cplx::new(v, T::zero()));
    let mut reported = T::zero();
    for k in 0..n {
        let rec = &g[k] * &sigma_cplx * g[k].adjoint();
        let denom = s.matrices[k].norm().max(T::lit(1e-300));
        reported = reported.max((rec - &s.matrices[k]).norm() / denom);
    }

    Ok(SpectralFactor {
        g,
        sigma,
        residual: reported,
        causality_defect,
        projection: None,
    })
}

/// Recovers the observed-side transfer from a spectral density of mixed
/// counts: square inputs are factorized directly; when the observed
/// dimension exceeds `p`, the density is first projected onto the top-p
/// principal subspace of the zero-lag covariance (projection reported on
/// the result).
pub fn recover_transfer<T: Scalar>(
    s_obs: &SpectralDensity<T>,
    p: usize,
    tol: T,
    max_iter: usize,
) -> Result<SpectralFactor<T>, SpectralError> {
    let n_dim = s_obs.p();
    let n = s_obs.n_freq();
    if p == 0 || n_dim < p {
        return Err(SpectralError::Shape(format!(
            "need 1 <= p <= observed dimension, got p = {p}, dim = {n_dim}"
        )));
    }
    let mut deficient = 0usize;
    for m in &s_obs.matrices {
        let eig = m.clone().symmetric_eigen();
        let sv: Vec<T> = eig.eigenvalues.iter().map(|&l| l.abs()).collect();
        if rank_from_singular_values(&sv, n_dim, n_dim) < p {
            deficient += 1;
        }
    }
    if deficient * 10 > n {
        return Err(SpectralError::RankDeficient {
            p,
            deficient,
            total: n,
        });
    }
    if n_dim == p {
        return wilson_factorize(s_obs, tol, max_iter, None);
    }

    let c0 = wiener_khinchin_cov(s_obs)?;
    let eig = c0.symmetric_eigen();
    let mut order: Vec<usize> = (0..n_dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
    });
    let mut proj = DMatrix::<T>::zeros(n_dim, p);
    for (c, &idx) in order.iter().take(p).enumerate() {
        let col = eig.eigenvectors.column(idx);
        // Deterministic sign: largest-magnitude entry positive.
        let lead = col
            .iter()
            .copied()
            .fold(T::zero(), |a, v| if v.abs() > a.abs() { v } else { a });
        let flip = if lead < T::zero() { -T::one() } else { T::one() };
        for r in 0..n_dim {
            proj[(r, c)] = col[r] * flip;
        }
    }
    let proj_c = proj.map(|v| Cplx::new(v, T::zero()));
    let mut clip_mass = T::zero();
    let mats: Vec<DMatrix<Cplx<T>>> = s_obs
        .matrices
        .iter()
        .map(|m| {
            let mut small = proj_c.adjoint() * m * &proj_c;
            hermitianize(&mut small);
            clip_mass += clip_negative_eigenvalues(&mut small);
            small
        })
        .collect();
    let projected = SpectralDensity {
        matrices: mats,
        clip_mass,
    };
    let mut factor = wilson_factorize(&projected, tol, max_iter, None)?;
    factor.projection = Some(proj);
    Ok(factor)
}

/// Zero-lag covariance from the spectral density: `C(0) = mean_k S(omega_k)`,
/// with the imaginary residue checked against `1e-8` of the real part.
pub fn wiener_khinchin_cov<T: Scalar>(
    s: &SpectralDensity<T>,
) -> Result<DMatrix<T>, SpectralError> {
    let p = s.p();
    let n = s.n_freq();
    let mut acc = DMatrix::<Cplx<T>>::zeros(p, p);
    for m in &s.matrices {
        acc += m;
    }
    acc = acc.map(|v| v / T::from_usize(n).unwrap());
    let re = acc.map(|v| v.re);
    let im = acc.map(|v| v.im);
    let (re_norm, im_norm) = (re.norm(), im.norm());
    if im_norm > T::lit(1e-8) * re_norm {
        return Err(SpectralError::ImaginaryResidue {
            ratio: (im_norm / re_norm.max(T::lit(1e-300))).as_f64(),
        });
    }
    Ok((&re + re.transpose()) * T::lit(0.5))
}

/// Count-feedback coefficient matrices `Phi(tau * delta) * delta` for
/// `tau = 1..=W`, `W` chosen so the neglected kernel mass is below 1e-6.
pub fn discrete_coefficients<T: Scalar>(m: &HawkesModel<T>, delta: T) -> Vec<DMatrix<T>> {
    let p = m.p();
    let w = crate::simulate::truncation_window(m, delta);
    (1..=w)
        .map(|tau| {
            let t = delta * T::from_usize(tau).unwrap();
            DMatrix::from_fn(p, p, |i, j| m.kernels[i][j].eval(t) * delta)
        })
        .collect()
}

/// Discrete transfer `H(theta) = (I - sum_tau A_tau e^{-i theta tau})^{-1}`
/// of the count recursion with coefficients `A_tau`.
pub fn discrete_transfer<T: Scalar>(
    coeffs: &[DMatrix<T>],
    theta: T,
) -> Result<DMatrix<Cplx<T>>, SpectralError> {
    assert!(!coeffs.is_empty(), "need at least one coefficient matrix");
    let p = coeffs[0].nrows();
    let mut a = DMatrix::<Cplx<T>>::identity(p, p);
    for (idx, c) in coeffs.iter().enumerate() {
        let tau = T::from_usize(idx + 1).unwrap();
        let angle = -theta * tau;
        let phase = Cplx::new(angle.cos(), angle.sin());
        for i in 0..p {
            for j in 0..p {
                a[(i, j)] -= phase * c[(i, j)];
            }
        }
    }
    a.lu()
        .try_inverse()
        .ok_or(SpectralError::SingularTransfer {
            theta: theta.as_f64(),
        })
}

/// Gaussian parameters of the count-convolution prior implied by a model
/// estimate at bin width `delta`: mean `H(0) u delta` and covariance
/// `mean_k H(omega_k) Sigma_R H(omega_k)^H` (real part).
///
/// `sigma_r` overrides the innovation covariance; the default is the
/// Poisson-consistent `diag` of the stationary bin means.
pub fn convolution_prior_params<T: Scalar>(
    m: &HawkesModel<T>,
    delta: T,
    n_freq: usize,
    sigma_r: Option<&DMatrix<T>>,
) -> Result<(DVector<T>, DMatrix<T>), SpectralError> {
    if delta <= T::zero() {
        return Err(SpectralError::Shape(format!(
            "bin width must be positive, got {}",
            delta.as_f64()
        )));
    }
    if n_freq < 2 {
        return Err(SpectralError::Shape(format!(
            "need at least 2 grid frequencies, got {n_freq}"
        )));
    }
    let report = check_stability(m)?;
    if !report.stable {
        return Err(SpectralError::UnstableModel {
            radius: report.spectral_radius.as_f64(),
        });
    }
    let p = m.p();
    let coeffs = discrete_coefficients(m, delta);
    let mut asum = DMatrix::<T>::zeros(p, p);
    for c in &coeffs {
        asum += c;
    }
    let radius = nonneg_spectral_radius(&asum)?;
    if radius >= T::one() {
        return Err(SpectralError::UnstableDiscretization {
            delta: delta.as_f64(),
            radius: radius.as_f64(),
        });
    }
    let u_delta = &m.baseline * delta;
    let mean = (DMatrix::<T>::identity(p, p) - &asum)
        .lu()
        .solve(&u_delta)
        .ok_or(SpectralError::SingularTransfer { theta: 0.0 })?;

    let sr: DMatrix<T> = match sigma_r {
        Some(s) => {
            if s.nrows() != p || s.ncols() != p {
                return Err(SpectralError::Shape(format!(
                    "innovation covariance is {}x{}, expected {p}x{p}",
                    s.nrows(),
                    s.ncols()
                )));
            }
            s.clone()
        }
        None => DMatrix::from_diagonal(&mean),
    };
    let sr_c = sr.map(|v| Cplx::new(v, T::zero()));

    let mut acc = DMatrix::<Cplx<T>>::zeros(p, p);
    let nf = T::from_usize(n_freq).unwrap();
    for k in 0..n_freq {
        let theta = T::two_pi() * T::from_usize(k).unwrap() / nf;
        let h = discrete_transfer(&coeffs, theta)?;
        acc += &h * &sr_c * h.adjoint();
    }
    acc = acc.map(|v| v / nf);
    let cov = acc.map(|v| v.re);
    Ok((mean, (&cov + cov.transpose()) * T::lit(0.5)))
}
