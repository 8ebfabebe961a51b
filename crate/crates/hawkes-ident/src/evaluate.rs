//! Scoring recovered structure against ground truth: permutation-invariant
//! correlation matching, kernel matrix error, and the discretisation
//! convergence diagnostics.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::assignment::max_weight_assignment;
use crate::model::HawkesModel;
use crate::simulate::{bin, simulate, simulate_inar, CountNoise, SimError};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {need} time points, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("series dimension mismatch: {left} vs {right} rows")]
    RowMismatch { left: usize, right: usize },
    #[error("deltas must be strictly decreasing and positive")]
    BadDeltas,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Correlation flavour used by [`mcc`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrMethod {
    Pearson,
    /// Pearson on average ranks; robust to monotone distortions.
    Spearman,
}

/// Mean correlation over the best column matching.
#[derive(Debug, Clone)]
pub struct MccResult<T: Scalar> {
    /// Mean of the matched absolute correlations.
    pub score: T,
    /// Matched pairs `(estimated column, reference column)`.
    pub assignment: Vec<(usize, usize)>,
    /// Absolute correlation per matched pair, same order as `assignment`.
    pub correlations: Vec<T>,
    /// Estimated columns with zero variance (scored as 0).
    pub degenerate_estimated: Vec<usize>,
    /// Reference columns with zero variance (scored as 0).
    pub degenerate_reference: Vec<usize>,
}

fn column_ranks<T: Scalar>(col: &[T]) -> Vec<T> {
    let n = col.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| col[a].partial_cmp(&col[b]).unwrap());
    let mut ranks = vec![T::zero(); n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && col[idx[j + 1]] == col[idx[i]] {
            j += 1;
        }
        // Average rank over the tie block, 1-based.
        let avg = T::from_usize(i + j + 2).unwrap() * T::lit(0.5);
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson<T: Scalar>(a: &[T], b: &[T]) -> Option<T> {
    let n = T::from_usize(a.len()).unwrap();
    let ma = a.iter().copied().sum::<T>() / n;
    let mb = b.iter().copied().sum::<T>() / n;
    let mut sab = T::zero();
    let mut saa = T::zero();
    let mut sbb = T::zero();
    for i in 0..a.len() {
        let da = a[i] - ma;
        let db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    // Mean subtraction leaves roundoff of order eps * |value| in every
    // deviation, so a constant column shows a tiny positive sum of squares
    // rather than an exact zero; degeneracy is judged against that floor.
    let noise_floor = |m: T, xs: &[T]| {
        let scale = xs
            .iter()
            .fold(T::zero(), |acc, &v| acc.max(v.abs()))
            .max(m.abs());
        let tol = T::lit(16.0) * T::default_epsilon() * scale;
        n * tol * tol
    };
    if saa <= noise_floor(ma, a) || sbb <= noise_floor(mb, b) {
        None
    } else {
        Some(sab / (saa * sbb).sqrt())
    }
}

/// Mean correlation coefficient between two multivariate series.
///
/// Columns of `estimated` are matched one-to-one to columns of `reference`
/// (the smaller side is fully matched) by maximising the sum of absolute
/// correlations; the score is the mean over matched pairs. Zero-variance
/// columns correlate as zero with everything and are reported.
pub fn mcc<T: Scalar>(
    estimated: &DMatrix<T>,
    reference: &DMatrix<T>,
    method: CorrMethod,
) -> Result<MccResult<T>, EvalError> {
    if estimated.nrows() != reference.nrows() {
        return Err(EvalError::RowMismatch {
            left: estimated.nrows(),
            right: reference.nrows(),
        });
    }
    if estimated.nrows() < 10 {
        return Err(EvalError::TooShort {
            need: 10,
            got: estimated.nrows(),
        });
    }
    let ke = estimated.ncols();
    let kr = reference.ncols();
    let col = |m: &DMatrix<T>, j: usize| -> Vec<T> { m.column(j).iter().copied().collect() };
    let prep = |m: &DMatrix<T>, j: usize| -> Vec<T> {
        let c = col(m, j);
        match method {
            CorrMethod::Pearson => c,
            CorrMethod::Spearman => column_ranks(&c),
        }
    };
    let est: Vec<Vec<T>> = (0..ke).map(|j| prep(estimated, j)).collect();
    let refc: Vec<Vec<T>> = (0..kr).map(|j| prep(reference, j)).collect();

    let mut degenerate_estimated = Vec::new();
    let mut degenerate_reference = Vec::new();
    let mut weights = DMatrix::<T>::zeros(ke, kr);
    for i in 0..ke {
        for j in 0..kr {
            weights[(i, j)] = pearson(&est[i], &refc[j]).map_or(T::zero(), |r| r.abs());
        }
    }
    for (i, e) in est.iter().enumerate() {
        if pearson(e, e).is_none() {
            degenerate_estimated.push(i);
        }
    }
    for (j, r) in refc.iter().enumerate() {
        if pearson(r, r).is_none() {
            degenerate_reference.push(j);
        }
    }

    // Hungarian wants rows <= cols; transpose if the estimate is wider.
    let (assignment, correlations) = if ke <= kr {
        let (cols, _) = max_weight_assignment(&weights);
        let pairs: Vec<(usize, usize)> = cols.iter().enumerate().map(|(i, &j)| (i, j)).collect();
        let corr: Vec<T> = pairs.iter().map(|&(i, j)| weights[(i, j)]).collect();
        (pairs, corr)
    } else {
        let (rows, _) = max_weight_assignment(&weights.transpose());
        let pairs: Vec<(usize, usize)> = rows.iter().enumerate().map(|(j, &i)| (i, j)).collect();
        let corr: Vec<T> = pairs.iter().map(|&(i, j)| weights[(i, j)]).collect();
        (pairs, corr)
    };
    let score = correlations.iter().copied().sum::<T>()
        / T::from_usize(correlations.len().max(1)).unwrap();
    Ok(MccResult {
        score,
        assignment,
        correlations,
        degenerate_estimated,
        degenerate_reference,
    })
}

/// Frobenius error of an (already aligned) kernel matrix estimate.
#[derive(Debug, Clone, Copy)]
pub struct KernelError<T: Scalar> {
    pub value: T,
    /// True when the reference is zero and the error is absolute.
    pub absolute_fallback: bool,
}

pub fn kernel_error<T: Scalar>(estimate: &DMatrix<T>, truth: &DMatrix<T>) -> KernelError<T> {
    assert_eq!(estimate.shape(), truth.shape(), "shapes must agree");
    let diff = (estimate - truth).norm();
    let scale = truth.norm();
    if scale > T::zero() {
        KernelError {
            value: diff / scale,
            absolute_fallback: false,
        }
    } else {
        KernelError {
            value: diff,
            absolute_fallback: true,
        }
    }
}

/// One-sample Kolmogorov-Smirnov statistic against Exponential(rate).
pub fn ks_statistic_exponential<T: Scalar>(samples: &[T], rate: T) -> T {
    assert!(!samples.is_empty(), "need samples");
    let mut xs: Vec<T> = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = T::from_usize(xs.len()).unwrap();
    let mut d = T::zero();
    for (i, &x) in xs.iter().enumerate() {
        let f = T::one() - (-rate * x).exp();
        let lo = T::from_usize(i).unwrap() / n;
        let hi = T::from_usize(i + 1).unwrap() / n;
        d = d.max((hi - f).abs()).max((f - lo).abs());
    }
    d
}

/// Energy distance between two one-dimensional samples:
/// `2 E|X-Y| - E|X-X'| - E|Y-Y'|`, computed in O(n log n) via sorting.
pub fn energy_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    assert!(!a.is_empty() && !b.is_empty(), "need samples on both sides");
    let cross = mean_abs_cross(a, b);
    let within_a = mean_abs_within(a);
    let within_b = mean_abs_within(b);
    (T::lit(2.0) * cross - within_a - within_b).max(T::zero())
}

fn mean_abs_within<T: Scalar>(x: &[T]) -> T {
    let mut xs = x.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    let mut total = T::zero();
    let mut prefix = T::zero();
    for (i, &v) in xs.iter().enumerate() {
        // sum_{j<i} (v - x_j)
        total += v * T::from_usize(i).unwrap() - prefix;
        prefix += v;
    }
    total * T::lit(2.0) / (T::from_usize(n).unwrap() * T::from_usize(n).unwrap())
}

fn mean_abs_cross<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut xs = a.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let prefix: Vec<T> = {
        let mut acc = T::zero();
        let mut out = Vec::with_capacity(xs.len() + 1);
        out.push(T::zero());
        for &v in &xs {
            acc += v;
            out.push(acc);
        }
        out
    };
    let total_a = prefix[xs.len()];
    let n = xs.len();
    let mut total = T::zero();
    for &y in b {
        // Split a at y: below contributes y - a_j, above contributes a_j - y.
        let k = xs.partition_point(|&v| v <= y);
        let below = prefix[k];
        let above = total_a - below;
        let kf = T::from_usize(k).unwrap();
        let rest = T::from_usize(n - k).unwrap();
        total += y * kf - below + above - y * rest;
    }
    total / (T::from_usize(n).unwrap() * T::from_usize(b.len()).unwrap())
}

/// Per-delta comparison between the count approximation and binned exact
/// simulation.
#[derive(Debug, Clone)]
pub struct ConvergenceRow<T: Scalar> {
    pub delta: T,
    /// Mean over processes of |rate(approx) - rate(binned exact)|.
    pub mean_rate_gap: T,
    /// Mean over processes of |per-bin count variance difference|.
    pub variance_gap: T,
    /// Mean over processes of the energy distance between count samples.
    pub energy_distance: T,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport<T: Scalar> {
    pub seed: u64,
    pub rows: Vec<ConvergenceRow<T>>,
}

/// Runs the weak-convergence diagnostic over a strictly decreasing delta
/// ladder, one report per seed. Each seed simulates one exact trajectory and
/// compares its binnings against the autoregressive count sampler at every
/// delta.
pub fn convergence_suite<T: Scalar>(
    m: &HawkesModel<T>,
    deltas: &[T],
    horizon: T,
    seeds: &[u64],
    noise: &CountNoise,
) -> Result<Vec<ConvergenceReport<T>>, EvalError> {
    if deltas.is_empty()
        || deltas.iter().any(|&d| d <= T::zero())
        || deltas.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(EvalError::BadDeltas);
    }
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let exact = simulate(m, horizon, seed)?;
        let mut rows = Vec::with_capacity(deltas.len());
        for &delta in deltas {
            let reference = bin(&exact, delta)?;
            let (approx, _) = simulate_inar(m, delta, horizon, noise, seed)?;
            let p = reference.p();
            let nb = reference.n_bins().min(approx.n_bins());
            let mut rate_gap = T::zero();
            let mut var_gap = T::zero();
            let mut edist = T::zero();
            for i in 0..p {
                let r: Vec<T> = (0..nb)
                    .map(|k| T::from_u64(reference.counts[(k, i)]).unwrap())
                    .collect();
                let a: Vec<T> = (0..nb)
                    .map(|k| T::from_u64(approx.counts[(k, i)]).unwrap())
                    .collect();
                let nbf = T::from_usize(nb).unwrap();
                let mr = r.iter().copied().sum::<T>() / nbf;
                let ma = a.iter().copied().sum::<T>() / nbf;
                rate_gap += ((ma - mr) / delta).abs();
                let vr = r.iter().map(|&x| (x - mr) * (x - mr)).sum::<T>() / nbf;
                let va = a.iter().map(|&x| (x - ma) * (x - ma)).sum::<T>() / nbf;
                var_gap += (va - vr).abs();
                edist += energy_distance(&a, &r);
            }
            let pf = T::from_usize(p).unwrap();
            rows.push(ConvergenceRow {
                delta,
                mean_rate_gap: rate_gap / pf,
                variance_gap: var_gap / pf,
                energy_distance: edist / pf,
            });
        }
        out.push(ConvergenceReport { seed, rows });
    }
    Ok(out)
}
