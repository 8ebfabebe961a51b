//! Higher-order joint cumulant estimation and symmetric CP decomposition.
//!
//! Orders 2 and 3 use unbiased multivariate k-statistics; order 4 uses the
//! moment-based cumulant with the classical small-sample factors. Zero-lag
//! tensors are decomposed by a tied alternating least squares that shares one
//! factor matrix across all modes, with signed weights so even orders keep
//! negative components.

use nalgebra::DMatrix;
use rand::seq::index::sample;

use crate::numeric::rank_from_singular_values;
use crate::rng::{self, streams};
use crate::simulate::Observation;
use crate::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum CumulantError {
    #[error("order {0} unsupported, need 2 <= d <= 4")]
    BadOrder(usize),
    #[error("need {need} lags for order {order}, got {got}")]
    BadLags {
        order: usize,
        need: usize,
        got: usize,
    },
    #[error("series of length {got} too short, need at least {need}")]
    TooShort { need: usize, got: usize },
    #[error("tensor data has {got} entries, expected {need}")]
    BadShape { need: usize, got: usize },
    #[error("tensor entries must be finite")]
    NonFinite,
    #[error("zero-lag tensor not permutation symmetric (relative defect {0:e})")]
    NotSymmetric(f64),
    #[error("decomposition needs a zero-lag tensor, got lags {0:?}")]
    LaggedInput(Vec<usize>),
    #[error("rank {rank} infeasible for dim {dim} order {order} (bound {bound})")]
    RankInfeasible {
        rank: usize,
        dim: usize,
        order: usize,
        bound: usize,
    },
    #[error("no restart reached residual 0.1, best was {residual:e}")]
    DecompositionFailed { residual: f64 },
    #[error("Kruskal check capped at 20 columns, got {0}")]
    TooManyColumns(usize),
    #[error("need at least one column")]
    NoColumns,
}

/// Order-d joint cumulant of lagged observation coordinates, stored dense in
/// row-major order over `dim^order` entries. Entry `(i_0, .., i_{d-1})` is
/// the joint cumulant of coordinate `i_0` at time `t` with coordinate `i_l`
/// at `t + lags[l-1]` for the remaining modes.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulantTensor<T: Scalar> {
    pub order: usize,
    pub dim: usize,
    pub lags: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> CumulantTensor<T> {
    pub fn new(
        order: usize,
        dim: usize,
        lags: Vec<usize>,
        data: Vec<T>,
    ) -> Result<Self, CumulantError> {
        if !(2..=4).contains(&order) {
            return Err(CumulantError::BadOrder(order));
        }
        if lags.len() != order - 1 {
            return Err(CumulantError::BadLags {
                order,
                need: order - 1,
                got: lags.len(),
            });
        }
        let need = dim.pow(order as u32);
        if data.len() != need {
            return Err(CumulantError::BadShape {
                need,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CumulantError::NonFinite);
        }
        let t = Self {
            order,
            dim,
            lags,
            data,
        };
        if t.is_zero_lag() {
            let defect = t.symmetry_defect();
            if defect > T::lit(1e-10) {
                return Err(CumulantError::NotSymmetric(defect.as_f64()));
            }
        }
        Ok(t)
    }

    pub fn is_zero_lag(&self) -> bool {
        self.lags.iter().all(|&l| l == 0)
    }

    pub fn norm(&self) -> T {
        self.data
            .iter()
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    pub fn get(&self, idx: &[usize]) -> T {
        self.data[self.flat_index(idx)]
    }

    /// Max deviation under simultaneous index permutations, relative to the
    /// tensor norm.
    pub fn symmetry_defect(&self) -> T {
        let scale = self.norm().max(T::lit(1e-300));
        let mut worst = T::zero();
        let mut idx = vec![0usize; self.order];
        let mut perm: Vec<usize> = (0..self.order).collect();
        loop {
            let base = self.get(&idx);
            permutations(&mut perm, &mut |p| {
                let permuted: Vec<usize> = p.iter().map(|&m| idx[m]).collect();
                worst = worst.max((self.get(&permuted) - base).abs());
                true
            });
            if !advance(&mut idx, self.dim) {
                break;
            }
        }
        worst / scale
    }
}

/// CP factors of a symmetric tensor: `T = sum_i w_i v_i^{(x) d}` with unit
/// columns, each column's largest-magnitude entry positive, weights sorted
/// by descending magnitude. `order` is the tensor order the factors model,
/// needed to keep terms fixed under sign flips.
#[derive(Debug, Clone, PartialEq)]
pub struct CpFactors<T: Scalar> {
    pub rank: usize,
    pub order: usize,
    pub weights: Vec<T>,
    pub factors: DMatrix<T>,
    pub residual: T,
}

/// Result of the Kruskal-rank uniqueness test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KruskalCheck {
    pub krank: usize,
    pub required: usize,
    pub pass: bool,
    pub margin: isize,
    /// False when the rank was certified by random subset sampling rather
    /// than exhaustive enumeration.
    pub exhaustive: bool,
}

fn advance(idx: &mut [usize], dim: usize) -> bool {
    for slot in idx.iter_mut().rev() {
        *slot += 1;
        if *slot < dim {
            return true;
        }
        *slot = 0;
    }
    false
}

/// Heap's algorithm; visitor returns false to stop early.
fn permutations(items: &mut [usize], visit: &mut dyn FnMut(&[usize]) -> bool) -> bool {
    fn rec(k: usize, items: &mut [usize], visit: &mut dyn FnMut(&[usize]) -> bool) -> bool {
        if k <= 1 {
            return visit(items);
        }
        for i in 0..k {
            if !rec(k - 1, items, visit) {
                return false;
            }
            if k % 2 == 0 {
                items.swap(i, k - 1);
            } else {
                items.swap(0, k - 1);
            }
        }
        true
    }
    rec(items.len(), items, visit)
}

/// Visits every k-subset of `0..n` in lexicographic order; visitor returns
/// false to stop early. Returns false when stopped.
fn combinations(n: usize, k: usize, visit: &mut dyn FnMut(&[usize]) -> bool) -> bool {
    if k > n {
        return true;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        if !visit(&idx) {
            return false;
        }
        let mut i = k;
        loop {
            if i == 0 {
                return true;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return true;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Joint cumulant tensor of lagged observation coordinates.
///
/// Orders 2 and 3 are the unbiased multivariate k-statistics; order 4 is the
/// moment-based joint cumulant with the standard small-sample factors,
/// `k4 = M^2 [(M+1) m4 - (M-1)(three pairwise m2 products)] / ((M-1)(M-2)(M-3))`,
/// applied per index tuple with biased central moments `m`. Lagged entries
/// are computed on the aligned overlap of the shifted series.
pub fn estimate_cumulant<T: Scalar>(
    obs: &Observation<T>,
    order: usize,
    lags: &[usize],
) -> Result<CumulantTensor<T>, CumulantError> {
    if !(2..=4).contains(&order) {
        return Err(CumulantError::BadOrder(order));
    }
    if lags.len() != order - 1 {
        return Err(CumulantError::BadLags {
            order,
            need: order - 1,
            got: lags.len(),
        });
    }
    let n = obs.data.ncols();
    let rows = obs.data.nrows();
    let need = (50 * n).max(order + 1);
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    if rows < need + max_lag {
        return Err(CumulantError::TooShort {
            need: need + max_lag,
            got: rows,
        });
    }
    let m = rows - max_lag;
    let mf = T::from_usize(m).unwrap();

    // Position l reads coordinate i at time t + shift[l].
    let shifts: Vec<usize> = std::iter::once(0).chain(lags.iter().copied()).collect();
    let means: Vec<Vec<T>> = shifts
        .iter()
        .map(|&s| {
            (0..n)
                .map(|i| (0..m).map(|t| obs.data[(t + s, i)]).sum::<T>() / mf)
                .collect()
        })
        .collect();
    let centered = |t: usize, pos: usize, i: usize| obs.data[(t + shifts[pos], i)] - means[pos][i];

    let size = n.pow(order as u32);
    let mut moment = vec![T::zero(); size];
    for t in 0..m {
        match order {
            2 => {
                for i0 in 0..n {
                    let c0 = centered(t, 0, i0);
                    for i1 in 0..n {
                        moment[i0 * n + i1] += c0 * centered(t, 1, i1);
                    }
                }
            }
            3 => {
                for i0 in 0..n {
                    let c0 = centered(t, 0, i0);
                    for i1 in 0..n {
                        let c01 = c0 * centered(t, 1, i1);
                        for i2 in 0..n {
                            moment[(i0 * n + i1) * n + i2] += c01 * centered(t, 2, i2);
                        }
                    }
                }
            }
            _ => {
                for i0 in 0..n {
                    let c0 = centered(t, 0, i0);
                    for i1 in 0..n {
                        let c01 = c0 * centered(t, 1, i1);
                        for i2 in 0..n {
                            let c012 = c01 * centered(t, 2, i2);
                            for i3 in 0..n {
                                moment[((i0 * n + i1) * n + i2) * n + i3] +=
                                    c012 * centered(t, 3, i3);
                            }
                        }
                    }
                }
            }
        }
    }

    let data: Vec<T> = match order {
        2 => {
            let scale = T::one() / (mf - T::one());
            moment.iter().map(|&v| v * scale).collect()
        }
        3 => {
            let scale = mf / ((mf - T::one()) * (mf - T::lit(2.0)));
            moment.iter().map(|&v| v * scale).collect()
        }
        _ => {
            // Biased central pair moments between mode positions.
            let mut pair = vec![DMatrix::<T>::zeros(n, n); 16];
            for a in 0..4 {
                for b in (a + 1)..4 {
                    let mut acc = DMatrix::<T>::zeros(n, n);
                    for t in 0..m {
                        for i in 0..n {
                            let ca = centered(t, a, i);
                            for j in 0..n {
                                acc[(i, j)] += ca * centered(t, b, j);
                            }
                        }
                    }
                    pair[a * 4 + b] = acc / mf;
                }
            }
            let p2 = |a: usize, b: usize, i: usize, j: usize| {
                if a < b {
                    pair[a * 4 + b][(i, j)]
                } else {
                    pair[b * 4 + a][(j, i)]
                }
            };
            let denom = (mf - T::one()) * (mf - T::lit(2.0)) * (mf - T::lit(3.0));
            let lead = mf * mf / denom;
            let mut out = vec![T::zero(); size];
            for (flat, slot) in out.iter_mut().enumerate() {
                let i3 = flat % n;
                let i2 = flat / n % n;
                let i1 = flat / (n * n) % n;
                let i0 = flat / (n * n * n);
                let m4 = moment[flat] / mf;
                let pairs = p2(0, 1, i0, i1) * p2(2, 3, i2, i3)
                    + p2(0, 2, i0, i2) * p2(1, 3, i1, i3)
                    + p2(0, 3, i0, i3) * p2(1, 2, i1, i2);
                *slot = lead * ((mf + T::one()) * m4 - (mf - T::one()) * pairs);
            }
            out
        }
    };
    CumulantTensor::new(order, n, lags.to_vec(), data)
}

/// Builds `sum_i w_i v_i^{(x) d}` as a zero-lag tensor.
pub fn rank_one_sum<T: Scalar>(
    order: usize,
    weights: &[T],
    factors: &DMatrix<T>,
) -> Result<CumulantTensor<T>, CumulantError> {
    if !(2..=4).contains(&order) {
        return Err(CumulantError::BadOrder(order));
    }
    assert_eq!(weights.len(), factors.ncols(), "one weight per column");
    let n = factors.nrows();
    let mut data = vec![T::zero(); n.pow(order as u32)];
    let mut idx = vec![0usize; order];
    loop {
        let flat = idx.iter().fold(0, |acc, &i| acc * n + i);
        let mut acc = T::zero();
        for (c, &w) in weights.iter().enumerate() {
            let mut prod = w;
            for &i in &idx {
                prod *= factors[(i, c)];
            }
            acc += prod;
        }
        data[flat] = acc;
        if !advance(&mut idx, n) {
            break;
        }
    }
    CumulantTensor::new(order, n, vec![0; order - 1], data)
}

/// Applies `a` to every mode: `T' = T x_1 a x_2 a ... x_d a`.
pub fn mode_products<T: Scalar>(
    t: &CumulantTensor<T>,
    a: &DMatrix<T>,
) -> Result<CumulantTensor<T>, CumulantError> {
    assert_eq!(a.ncols(), t.dim, "matrix columns must match tensor dim");
    let n_in = t.dim;
    let n_out = a.nrows();
    let d = t.order;
    let mut data = vec![T::zero(); n_out.pow(d as u32)];
    let mut out_idx = vec![0usize; d];
    loop {
        let flat_out = out_idx.iter().fold(0, |acc, &j| acc * n_out + j);
        let mut acc = T::zero();
        let mut in_idx = vec![0usize; d];
        loop {
            let flat_in = in_idx.iter().fold(0, |acc, &i| acc * n_in + i);
            let mut coef = t.data[flat_in];
            for mode in 0..d {
                coef *= a[(out_idx[mode], in_idx[mode])];
            }
            acc += coef;
            if !advance(&mut in_idx, n_in) {
                break;
            }
        }
        data[flat_out] = acc;
        if !advance(&mut out_idx, n_out) {
            break;
        }
    }
    // Mode products preserve symmetry but not exactly in floating point;
    // bypass the constructor's defect gate and keep raw values.
    Ok(CumulantTensor {
        order: d,
        dim: n_out,
        lags: t.lags.clone(),
        data,
    })
}

/// Largest rank with a generically satisfiable Kruskal uniqueness condition
/// for a shared n x r factor at order d: `min(n, r) >= ceil((2r + d - 1)/d)`
/// for generic columns gives `r <= (d (n - 1) + 1) / 2`; rank one is always
/// feasible.
pub fn kruskal_feasible_bound(dim: usize, order: usize) -> usize {
    ((order * (dim - 1) + 1) / 2).max(1)
}

fn reconstruction_residual<T: Scalar>(
    t: &CumulantTensor<T>,
    weights: &[T],
    factors: &DMatrix<T>,
) -> T {
    let model = rank_one_sum(t.order, weights, factors).expect("valid factor shape");
    let mut diff = T::zero();
    for (a, b) in model.data.iter().zip(&t.data) {
        diff += (*a - *b) * (*a - *b);
    }
    let norm = t.norm();
    if norm <= T::zero() {
        diff.sqrt()
    } else {
        diff.sqrt() / norm
    }
}

/// Canonical form: unit columns, largest-magnitude entry of each column
/// positive (weights adjusted to keep each term fixed), weights sorted by
/// descending magnitude. Idempotent.
pub fn canonicalize<T: Scalar>(f: &CpFactors<T>) -> CpFactors<T> {
    let n = f.factors.nrows();
    let r = f.rank;
    let mut weights = f.weights.clone();
    let mut cols: Vec<Vec<T>> = (0..r)
        .map(|c| (0..n).map(|i| f.factors[(i, c)]).collect())
        .collect();
    for (c, col) in cols.iter_mut().enumerate() {
        let norm = col.iter().map(|&v| v * v).sum::<T>().sqrt();
        // The unit guard makes repeated canonicalization a bitwise no-op.
        if norm > T::zero() && (norm - T::one()).abs() > T::lit(32.0) * T::default_epsilon() {
            for v in col.iter_mut() {
                *v /= norm;
            }
            // Fold the length into the weight: w v^{(x)d} scales by norm^d.
            let mut pow = T::one();
            for _ in 0..f.order {
                pow *= norm;
            }
            weights[c] *= pow;
        }
        let mut lead = T::zero();
        for &v in col.iter() {
            if v.abs() > lead.abs() {
                lead = v;
            }
        }
        if lead < T::zero() {
            for v in col.iter_mut() {
                *v = -*v;
            }
            // Flipping v flips odd-order terms.
            if f.order % 2 == 1 {
                weights[c] = -weights[c];
            }
        }
    }
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| {
        weights[b]
            .abs()
            .partial_cmp(&weights[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let factors = DMatrix::from_fn(n, r, |i, c| cols[order[c]][i]);
    CpFactors {
        rank: r,
        order: f.order,
        weights: order.iter().map(|&c| weights[c]).collect(),
        factors,
        residual: f.residual,
    }
}

/// Symmetric CP decomposition by tied alternating least squares.
///
/// One factor matrix is shared across all modes; each sweep solves the
/// normal equations `A = T_(1) K (K^T K)^{-1}` with `K` the (d-1)-fold
/// Khatri-Rao power of the current factors (`K^T K = (V^T V)` Hadamard
/// power), then re-extracts unit directions and signed weights, keeping each
/// direction aligned with its predecessor so that even orders retain
/// negative weights. The best of `restarts` unit-sphere initializations is
/// returned in canonical form.
pub fn cp_decompose<T: Scalar>(
    t: &CumulantTensor<T>,
    rank: usize,
    restarts: usize,
    tol: T,
) -> Result<CpFactors<T>, CumulantError> {
    if !t.is_zero_lag() {
        return Err(CumulantError::LaggedInput(t.lags.clone()));
    }
    let n = t.dim;
    let d = t.order;
    let bound = kruskal_feasible_bound(n, d);
    if rank == 0 || rank > bound {
        return Err(CumulantError::RankInfeasible {
            rank,
            dim: n,
            order: d,
            bound,
        });
    }
    let restarts = restarts.max(1);
    let t_norm = t.norm();
    if t_norm <= T::zero() {
        // Degenerate-by-contract: the zero tensor gets zero weights.
        let factors = DMatrix::from_fn(n, rank, |i, c| {
            if i == c % n {
                T::one()
            } else {
                T::zero()
            }
        });
        return Ok(CpFactors {
            rank,
            order: d,
            weights: vec![T::zero(); rank],
            factors,
            residual: T::zero(),
        });
    }

    // Mode-1 unfolding is the row-major data itself: rows indexed by i_0.
    let cols = n.pow((d - 1) as u32);
    let unfolding = DMatrix::from_fn(n, cols, |i, j| t.data[i * cols + j]);

    let mut best: Option<(T, DMatrix<T>, Vec<T>)> = None;
    for restart in 0..restarts {
        let mut r = rng::stream(restart as u64, streams::CP_RESTARTS);
        let mut v = DMatrix::from_fn(n, rank, |_, _| T::lit(rng::standard_normal(&mut r)));
        for c in 0..rank {
            let norm = v.column(c).norm();
            for i in 0..n {
                v[(i, c)] /= norm;
            }
        }
        let mut w = vec![T::zero(); rank];
        for _sweep in 0..2_000 {
            // K columns are vectorized v_c^{(x)(d-1)}.
            let mut k = DMatrix::<T>::zeros(cols, rank);
            for c in 0..rank {
                let mut idx = vec![0usize; d - 1];
                let mut row = 0usize;
                loop {
                    let mut prod = T::one();
                    for &i in &idx {
                        prod *= v[(i, c)];
                    }
                    k[(row, c)] = prod;
                    row += 1;
                    if !advance(&mut idx, n) {
                        break;
                    }
                }
            }
            let mut gram = DMatrix::<T>::zeros(rank, rank);
            for a in 0..rank {
                for b in 0..rank {
                    let dot = v.column(a).dot(&v.column(b));
                    let mut pow = T::one();
                    for _ in 0..d - 1 {
                        pow *= dot;
                    }
                    gram[(a, b)] = pow;
                }
            }
            // Tiny ridge keeps duplicated columns solvable mid-iteration.
            let trace: T = (0..rank).map(|i| gram[(i, i)]).sum();
            for i in 0..rank {
                gram[(i, i)] += T::lit(1e-12) * trace.max(T::one());
            }
            let rhs = &unfolding * &k;
            let solved = gram
                .lu()
                .solve(&rhs.transpose())
                .expect("ridged Gram is invertible");
            let a = solved.transpose();

            let mut v_next = v.clone();
            let mut w_next = vec![T::zero(); rank];
            for c in 0..rank {
                let norm = a.column(c).norm();
                if norm <= T::lit(1e-300) {
                    // Dead component: re-randomize the direction, weight 0.
                    let fresh = (0..n)
                        .map(|_| T::lit(rng::standard_normal(&mut r)))
                        .collect::<Vec<T>>();
                    let fn_norm = fresh.iter().map(|&x| x * x).sum::<T>().sqrt();
                    for (i, x) in fresh.iter().enumerate() {
                        v_next[(i, c)] = *x / fn_norm;
                    }
                    w_next[c] = T::zero();
                    continue;
                }
                let align: T = (0..n).map(|i| a[(i, c)] * v[(i, c)]).sum();
                let sign = if align < T::zero() { -T::one() } else { T::one() };
                for i in 0..n {
                    v_next[(i, c)] = a[(i, c)] * sign / norm;
                }
                w_next[c] = sign * norm;
            }

            let dv = (&v_next - &v).norm() / T::from_usize(rank).unwrap().sqrt();
            let wn = w_next
                .iter()
                .map(|&x| x * x)
                .sum::<T>()
                .sqrt()
                .max(T::lit(1e-300));
            let dw = w_next
                .iter()
                .zip(&w)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<T>()
                .sqrt()
                / wn;
            v = v_next;
            w = w_next;
            if dv.max(dw) < tol {
                break;
            }
        }
        let res = reconstruction_residual(t, &w, &v);
        if best.as_ref().map_or(true, |(b, _, _)| res < *b) {
            best = Some((res, v, w));
        }
    }

    let (residual, factors, weights) = best.expect("at least one restart ran");
    if residual > T::lit(0.1) {
        return Err(CumulantError::DecompositionFailed {
            residual: residual.as_f64(),
        });
    }
    Ok(canonicalize(&CpFactors {
        rank,
        weights,
        factors,
        residual,
        order: d,
    }))
}

/// Kruskal rank of the columns plus the order-d uniqueness condition
/// `krank >= ceil((2r + d - 1)/d)`.
///
/// Every subset size with at most 2000 subsets is enumerated exhaustively;
/// larger sizes are certified by 2000 seeded random subsets (reported on the
/// result). Hard cap at 20 columns.
pub fn kruskal_check<T: Scalar>(
    factors: &DMatrix<T>,
    order: usize,
) -> Result<KruskalCheck, CumulantError> {
    let r = factors.ncols();
    if r == 0 {
        return Err(CumulantError::NoColumns);
    }
    if r > 20 {
        return Err(CumulantError::TooManyColumns(r));
    }
    let n = factors.nrows();
    let full_rank = {
        let sv = factors.clone().svd(false, false).singular_values;
        let svec: Vec<T> = sv.iter().copied().collect();
        rank_from_singular_values(&svec, n, r)
    };
    let mut exhaustive = true;
    let mut krank = 0usize;
    let subset_full = |cols: &[usize]| -> bool {
        let sub = DMatrix::from_fn(n, cols.len(), |i, c| factors[(i, cols[c])]);
        let sv = sub.clone().svd(false, false).singular_values;
        let svec: Vec<T> = sv.iter().copied().collect();
        rank_from_singular_values(&svec, n, cols.len()) == cols.len()
    };
    for k in 1..=full_rank.min(r) {
        let count = binomial(r, k);
        let mut all_full = true;
        if count <= 2_000 {
            combinations(r, k, &mut |cols| {
                if !subset_full(cols) {
                    all_full = false;
                    return false;
                }
                true
            });
        } else {
            exhaustive = false;
            let mut rng = rng::stream((r * 31 + k) as u64, streams::KRUSKAL);
            for _ in 0..2_000 {
                let cols: Vec<usize> = sample(&mut rng, r, k).into_vec();
                if !subset_full(&cols) {
                    all_full = false;
                    break;
                }
            }
        }
        if !all_full {
            break;
        }
        krank = k;
    }
    let required = (2 * r + order - 1).div_ceil(order);
    Ok(KruskalCheck {
        krank,
        required,
        pass: krank >= required,
        margin: krank as isize - required as isize,
        exhaustive,
    })
}

/// Orders `2..=d_max` whose zero-lag cumulant tensor norm exceeds five
/// estimated standard errors (block-resampled over eight contiguous blocks).
pub fn nonzero_cumulant_scan<T: Scalar>(
    obs: &Observation<T>,
    d_max: usize,
) -> Result<Vec<usize>, CumulantError> {
    if !(2..=4).contains(&d_max) {
        return Err(CumulantError::BadOrder(d_max));
    }
    let blocks = 8usize;
    let rows = obs.data.nrows();
    let n = obs.data.ncols();
    let mut found = Vec::new();
    for d in 2..=d_max {
        let lags = vec![0usize; d - 1];
        let full = estimate_cumulant(obs, d, &lags)?;
        let block_len = rows / blocks;
        let mut block_tensors: Vec<CumulantTensor<T>> = Vec::with_capacity(blocks);
        let mut ok = true;
        for b in 0..blocks {
            let part = Observation {
                delta: obs.delta,
                data: obs.data.rows(b * block_len, block_len).into_owned(),
            };
            match estimate_cumulant(&part, d, &lags) {
                Ok(t) => block_tensors.push(t),
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        // Elementwise SE of the full-series mean from block dispersion.
        let size = n.pow(d as u32);
        let bf = T::from_usize(blocks).unwrap();
        let mut se_sq_total = T::zero();
        for e in 0..size {
            let mean: T = block_tensors.iter().map(|t| t.data[e]).sum::<T>() / bf;
            let var: T = block_tensors
                .iter()
                .map(|t| (t.data[e] - mean) * (t.data[e] - mean))
                .sum::<T>()
                / (bf - T::one());
            se_sq_total += var / bf;
        }
        let aggregate_se = se_sq_total.sqrt();
        if full.norm() > T::lit(5.0) * aggregate_se && aggregate_se > T::zero() {
            found.push(d);
        }
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HawkesModel, KernelSpec};
    use crate::simulate::{simulate_inar, CountNoise};

    fn obs_from(data: DMatrix<f64>) -> Observation<f64> {
        Observation { delta: 1.0, data }
    }

    fn gaussian_obs(rows: usize, cols: usize, seed: u64) -> Observation<f64> {
        let mut r = rng::stream(seed, streams::NOISE);
        obs_from(DMatrix::from_fn(rows, cols, |_, _| {
            rng::standard_normal(&mut r)
        }))
    }

    fn unit_columns(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, streams::NOISE);
        let mut m = DMatrix::from_fn(rows, cols, |_, _| rng::standard_normal(&mut r));
        for c in 0..cols {
            let norm = m.column(c).norm();
            for i in 0..rows {
                m[(i, c)] /= norm;
            }
        }
        m
    }

    #[test]
    fn gaussian_third_cumulants_vanish() {
        let m = 20_000usize;
        let obs = gaussian_obs(m, 2, 11);
        let k3 = estimate_cumulant(&obs, 3, &[0, 0]).unwrap();
        // Worst per-entry standard error is sqrt(6/M) for the diagonal.
        let bound = 4.0 * (6.0 / m as f64).sqrt();
        for &v in &k3.data {
            assert!(v.abs() < bound, "entry {v} above {bound}");
        }
    }

    #[test]
    fn gaussian_fourth_cumulant_vanishes() {
        let m = 20_000usize;
        let obs = gaussian_obs(m, 1, 12);
        let k4 = estimate_cumulant(&obs, 4, &[0, 0, 0]).unwrap();
        // Sample excess kurtosis of a unit Gaussian has variance 24/M.
        let bound = 4.0 * (24.0 / m as f64).sqrt();
        assert!(k4.data[0].abs() < bound, "{} above {bound}", k4.data[0]);
    }

    #[test]
    fn poisson_low_cumulants_match_the_rate() {
        let m = 20_000usize;
        let rate = 2.0;
        let mut r = rng::stream(13, streams::NOISE);
        let obs = obs_from(DMatrix::from_fn(m, 1, |_, _| {
            rng::poisson(&mut r, rate) as f64
        }));
        let k2 = estimate_cumulant(&obs, 2, &[0]).unwrap().data[0];
        let k3 = estimate_cumulant(&obs, 3, &[0, 0]).unwrap().data[0];
        // Var(k2) = (kappa4 + 2 kappa2^2)/M, Var(k3) uses kappa6..kappa2^3;
        // all Poisson cumulants equal the rate.
        let se2 = ((rate + 2.0 * rate * rate) / m as f64).sqrt();
        let se3 =
            ((rate + 9.0 * rate * rate + 9.0 * rate * rate + 6.0 * rate.powi(3)) / m as f64).sqrt();
        assert!((k2 - rate).abs() < 4.0 * se2, "k2 {k2}");
        assert!((k3 - rate).abs() < 4.0 * se3, "k3 {k3}");
    }

    #[test]
    fn covariance_of_scaled_copies_is_exactly_rank_one() {
        let mut r = rng::stream(14, streams::NOISE);
        let x: Vec<f64> = (0..200).map(|_| rng::standard_normal(&mut r)).collect();
        let data = DMatrix::from_fn(200, 2, |t, c| if c == 0 { x[t] } else { 2.0 * x[t] });
        let k2 = estimate_cumulant(&obs_from(data), 2, &[0]).unwrap();
        // Doubling a column scales every shared float op by an exact power
        // of two, so the proportionality and the zero determinant are exact.
        assert_eq!(k2.data[1], 2.0 * k2.data[0]);
        assert_eq!(k2.data[2], 2.0 * k2.data[0]);
        assert_eq!(k2.data[3], 4.0 * k2.data[0]);
        assert_eq!(k2.data[0] * k2.data[3] - k2.data[1] * k2.data[2], 0.0);
    }

    #[test]
    fn k_statistics_match_the_scalar_power_sum_formulas() {
        let m = 56usize;
        let x: Vec<f64> = (0..m).map(|t| ((t * 37) % 101) as f64 / 10.0).collect();
        let data = DMatrix::from_fn(m, 1, |t, _| x[t]);
        let obs = obs_from(data);

        let mf = m as f64;
        let mean = x.iter().sum::<f64>() / mf;
        let central = |p: i32| x.iter().map(|&v| (v - mean).powi(p)).sum::<f64>() / mf;
        let (m2, m3, m4) = (central(2), central(3), central(4));
        let k2_ref = m2 * mf / (mf - 1.0);
        let k3_ref = m3 * mf * mf / ((mf - 1.0) * (mf - 2.0));
        let k4_ref = mf * mf * ((mf + 1.0) * m4 - 3.0 * (mf - 1.0) * m2 * m2)
            / ((mf - 1.0) * (mf - 2.0) * (mf - 3.0));

        let k2 = estimate_cumulant(&obs, 2, &[0]).unwrap().data[0];
        let k3 = estimate_cumulant(&obs, 3, &[0, 0]).unwrap().data[0];
        let k4 = estimate_cumulant(&obs, 4, &[0, 0, 0]).unwrap().data[0];
        assert!((k2 - k2_ref).abs() <= 1e-12 * k2_ref.abs());
        assert!((k3 - k3_ref).abs() <= 1e-12 * k3_ref.abs().max(1.0));
        assert!((k4 - k4_ref).abs() <= 1e-12 * k4_ref.abs().max(1.0));
    }

    #[test]
    fn lagged_covariance_uses_aligned_subseries() {
        // Alternating +-1 of length 101: the lag-1 pair means are exactly
        // zero and each product is -1, so k2 = -100/99 exactly.
        let data = DMatrix::from_fn(101, 1, |t, _| if t % 2 == 0 { 1.0 } else { -1.0 });
        let k2 = estimate_cumulant(&obs_from(data), 2, &[1]).unwrap();
        assert_eq!(k2.lags, vec![1]);
        assert_eq!(k2.data[0], -100.0 / 99.0);
    }

    #[test]
    fn population_cumulants_are_multilinear_under_mixing() {
        let factors = DMatrix::from_column_slice(3, 2, &[1.0, 0.5, -0.25, -0.3, 0.8, 0.1]);
        let weights = [1.4, -0.7];
        let t = rank_one_sum(3, &weights, &factors).unwrap();
        let a = DMatrix::from_row_slice(2, 3, &[0.6, -0.2, 0.3, 0.1, 0.9, -0.4]);
        let pushed = mode_products(&t, &a).unwrap();
        let direct = rank_one_sum(3, &weights, &(&a * &factors)).unwrap();
        let mut diff = 0.0f64;
        for (x, y) in pushed.data.iter().zip(&direct.data) {
            diff += (x - y) * (x - y);
        }
        assert!(diff.sqrt() <= 1e-10 * direct.norm().max(1.0));
    }

    #[test]
    fn cp_recovers_a_rank_one_cube() {
        let v = DMatrix::from_column_slice(3, 1, &[1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]);
        let t = rank_one_sum(3, &[1.0f64], &v).unwrap();
        let f = cp_decompose(&t, 1, 2, 1e-9).unwrap();
        assert!((f.weights[0] - 1.0).abs() <= 1e-8);
        let cos: f64 = (0..3).map(|i| f.factors[(i, 0)] * v[(i, 0)]).sum();
        assert!(cos >= 1.0 - 1e-10);
        assert!(f.residual <= 1e-10);
    }

    #[test]
    fn cp_recovers_two_well_separated_terms() {
        let cols = unit_columns(5, 2, 21);
        let t = rank_one_sum(3, &[2.0, 1.0], &cols).unwrap();
        let f = cp_decompose(&t, 2, 8, 1e-9).unwrap();
        assert_eq!(f.weights.len(), 2);
        for (c, (&w_true, true_col)) in [2.0, 1.0].iter().zip([0usize, 1]).enumerate() {
            let cos: f64 = (0..5)
                .map(|i| f.factors[(i, c)] * cols[(i, true_col)])
                .sum();
            assert!(cos.abs() >= 0.999999, "component {c} misaligned: {cos}");
            // A flipped direction carries a flipped weight at odd order.
            let w_aligned = f.weights[c] * cos.signum();
            assert!((w_aligned - w_true).abs() <= 1e-6, "weight {w_aligned}");
        }
        // The reported residual must agree with an independent recompute.
        let model = rank_one_sum(3, &f.weights, &f.factors).unwrap();
        let mut diff = 0.0f64;
        for (a, b) in model.data.iter().zip(&t.data) {
            diff += (a - b) * (a - b);
        }
        let recomputed = diff.sqrt() / t.norm();
        assert!((recomputed - f.residual).abs() <= 1e-12);
        assert!(f.residual <= 1e-6);
    }

    #[test]
    fn cp_keeps_negative_weights_at_even_order() {
        let cols = unit_columns(3, 2, 22);
        let t = rank_one_sum(4, &[1.0, -0.5], &cols).unwrap();
        let f = cp_decompose(&t, 2, 8, 1e-9).unwrap();
        // Even-order sign flips cannot be absorbed into the column, so the
        // negative weight must survive canonicalization.
        assert!((f.weights[0] - 1.0).abs() <= 1e-6, "{:?}", f.weights);
        assert!((f.weights[1] + 0.5).abs() <= 1e-6, "{:?}", f.weights);
        let cos: f64 = (0..3).map(|i| f.factors[(i, 1)] * cols[(i, 1)]).sum();
        assert!(cos.abs() >= 0.999999);
        assert!(f.residual <= 1e-6);
    }

    #[test]
    fn cp_zero_tensor_returns_zero_weights() {
        let t = CumulantTensor::new(3, 2, vec![0, 0], vec![0.0f64; 8]).unwrap();
        let f = cp_decompose(&t, 2, 3, 1e-9).unwrap();
        assert_eq!(f.weights, vec![0.0, 0.0]);
        assert_eq!(f.residual, 0.0);
        for c in 0..2 {
            assert!((f.factors.column(c).norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn cp_rejects_an_infeasible_rank() {
        let t = rank_one_sum(3, &[1.0], &unit_columns(3, 1, 23)).unwrap();
        let err = cp_decompose(&t, 4, 2, 1e-9).unwrap_err();
        match err {
            CumulantError::RankInfeasible { rank, bound, .. } => {
                assert_eq!(rank, 4);
                assert_eq!(bound, 3);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn cp_reports_failure_when_the_rank_is_too_small() {
        let e = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let t = rank_one_sum(3, &[2.0, 1.0], &e).unwrap();
        // The best rank-one model drops the weight-1 term entirely, leaving
        // a relative residual of 1/sqrt(5).
        let err = cp_decompose(&t, 1, 6, 1e-9).unwrap_err();
        match err {
            CumulantError::DecompositionFailed { residual } => {
                assert!((residual - 1.0 / 5.0f64.sqrt()).abs() < 0.01, "{residual}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn cp_canonical_form_is_a_fixed_point() {
        let messy: CpFactors<f64> = CpFactors {
            rank: 2,
            order: 3,
            weights: vec![0.3, -1.7],
            factors: DMatrix::from_column_slice(3, 2, &[-2.0, 1.0, 0.5, 0.1, -0.2, 0.15]),
            residual: 0.01,
        };
        let once = canonicalize(&messy);
        let twice = canonicalize(&once);
        assert_eq!(once, twice);
        // Canonicalization must not change the represented tensor.
        let before = rank_one_sum(3, &messy.weights, &messy.factors).unwrap();
        let after = rank_one_sum(3, &once.weights, &once.factors).unwrap();
        for (a, b) in before.data.iter().zip(&after.data) {
            assert!((a - b).abs() <= 1e-12 * before.norm());
        }
        assert!(once.weights[0].abs() >= once.weights[1].abs());
        for c in 0..2 {
            assert!((once.factors.column(c).norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn cp_matches_a_grid_search_oracle_at_rank_one() {
        // A slightly perturbed rank-one binary cubic: the best rank-one
        // approximation is interior and the one-angle grid search below is
        // an independent oracle for it.
        let u = DMatrix::from_column_slice(2, 1, &[0.3f64.cos(), 0.3f64.sin()]);
        let q = DMatrix::from_column_slice(2, 1, &[1.4f64.cos(), 1.4f64.sin()]);
        let mut cols = DMatrix::zeros(2, 2);
        cols.set_column(0, &u.column(0));
        cols.set_column(1, &q.column(0));
        let t = rank_one_sum(3, &[1.5, 0.09], &cols).unwrap();

        let norm = t.norm();
        let score = |theta: f64| {
            let v = [theta.cos(), theta.sin()];
            let mut s = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        s += t.get(&[i, j, k]) * v[i] * v[j] * v[k];
                    }
                }
            }
            s.abs()
        };
        let mut best_theta = 0.0;
        let mut best = -1.0;
        let mut lo = 0.0;
        let mut hi = std::f64::consts::PI;
        for _round in 0..3 {
            let steps = 4_000;
            for s in 0..=steps {
                let theta = lo + (hi - lo) * s as f64 / steps as f64;
                let val = score(theta);
                if val > best {
                    best = val;
                    best_theta = theta;
                }
            }
            let width = (hi - lo) / steps as f64;
            lo = best_theta - 2.0 * width;
            hi = best_theta + 2.0 * width;
        }
        let grid_residual = (norm * norm - best * best).max(0.0).sqrt() / norm;

        let f = cp_decompose(&t, 1, 6, 1e-12).unwrap();
        assert!(
            (f.residual - grid_residual).abs() <= 1e-6,
            "als {} vs grid {grid_residual}",
            f.residual
        );
        assert!((f.weights[0].abs() - best).abs() <= 1e-6);
        let v_star = [best_theta.cos(), best_theta.sin()];
        let cos: f64 = (0..2).map(|i| f.factors[(i, 0)] * v_star[i]).sum();
        assert!(cos.abs() >= 0.999999);
    }

    #[test]
    fn kruskal_identity_columns_pass_at_order_three() {
        let id = DMatrix::<f64>::identity(3, 3);
        let chk = kruskal_check(&id, 3).unwrap();
        assert_eq!(chk.krank, 3);
        assert_eq!(chk.required, 3);
        assert!(chk.pass);
        assert_eq!(chk.margin, 0);
        assert!(chk.exhaustive);
    }

    #[test]
    fn kruskal_flags_duplicated_columns() {
        let m = DMatrix::from_column_slice(3, 2, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let chk = kruskal_check(&m, 3).unwrap();
        assert_eq!(chk.krank, 1);
        assert_eq!(chk.required, 2);
        assert!(!chk.pass);
        assert_eq!(chk.margin, -1);
    }

    #[test]
    fn kruskal_rank_matches_a_brute_force_subset_scan() {
        let m = unit_columns(5, 4, 31);
        let chk = kruskal_check(&m, 3).unwrap();

        let mut brute = 0usize;
        for k in 1..=4usize {
            let mut all_full = true;
            combinations(4, k, &mut |cols| {
                let sub = DMatrix::from_fn(5, cols.len(), |i, c| m[(i, cols[c])]);
                let sv = sub.clone().svd(false, false).singular_values;
                let svec: Vec<f64> = sv.iter().copied().collect();
                if rank_from_singular_values(&svec, 5, cols.len()) != cols.len() {
                    all_full = false;
                    return false;
                }
                true
            });
            if !all_full {
                break;
            }
            brute = k;
        }
        assert_eq!(chk.krank, brute);
        assert_eq!(chk.krank, 4);
        assert!(chk.pass);
        assert!(chk.exhaustive);
    }

    #[test]
    fn kruskal_finds_a_planted_three_column_dependency() {
        let mut m = unit_columns(13, 14, 32);
        for i in 0..13 {
            m[(i, 13)] = m[(i, 0)] + m[(i, 1)];
        }
        let chk = kruskal_check(&m, 3).unwrap();
        // Columns {0, 1, 13} are dependent but every pair is independent.
        assert_eq!(chk.krank, 2);
        assert!(!chk.pass);
        assert!(chk.exhaustive);
    }

    #[test]
    fn kruskal_certifies_a_wide_generic_matrix_by_sampling() {
        let m = unit_columns(13, 14, 33);
        let chk = kruskal_check(&m, 4).unwrap();
        assert_eq!(chk.krank, 13);
        // Sizes with more than 2000 subsets fall back to seeded sampling.
        assert!(!chk.exhaustive);
        assert_eq!(chk.required, 8);
        assert!(chk.pass);
    }

    #[test]
    fn kruskal_rejects_degenerate_column_counts() {
        let wide = DMatrix::<f64>::from_element(3, 21, 1.0);
        assert!(matches!(
            kruskal_check(&wide, 3),
            Err(CumulantError::TooManyColumns(21))
        ));
        let empty = DMatrix::<f64>::zeros(3, 0);
        assert!(matches!(
            kruskal_check(&empty, 3),
            Err(CumulantError::NoColumns)
        ));
    }

    #[test]
    fn feasible_bound_matches_the_generic_uniqueness_condition() {
        assert_eq!(kruskal_feasible_bound(2, 3), 2);
        assert_eq!(kruskal_feasible_bound(3, 3), 3);
        assert_eq!(kruskal_feasible_bound(3, 4), 4);
        assert_eq!(kruskal_feasible_bound(1, 3), 1);
    }

    #[test]
    fn scan_flags_only_second_order_for_gaussian_noise() {
        let obs = gaussian_obs(8_000, 2, 41);
        let found = nonzero_cumulant_scan(&obs, 4).unwrap();
        assert_eq!(found, vec![2]);
    }

    #[test]
    fn scan_returns_nothing_for_constant_data() {
        let obs = obs_from(DMatrix::from_element(600, 1, 5.0));
        let found = nonzero_cumulant_scan(&obs, 3).unwrap();
        assert!(found.is_empty());
    }

    #[test]
    fn scan_flags_third_order_for_hawkes_counts() {
        let m = HawkesModel::new(
            vec![0.3],
            vec![vec![KernelSpec::Exponential {
                alpha: 0.3,
                beta: 1.0,
            }]],
        )
        .unwrap();
        let (b, _) = simulate_inar(&m, 0.1, 1_000.0, &CountNoise::Poisson, 42).unwrap();
        let obs = obs_from(b.to_real());
        let found = nonzero_cumulant_scan(&obs, 3).unwrap();
        assert!(found.contains(&2), "{found:?}");
        assert!(found.contains(&3), "{found:?}");
    }

    #[test]
    fn estimator_rejects_malformed_requests() {
        let obs = gaussian_obs(200, 1, 51);
        assert!(matches!(
            estimate_cumulant(&obs, 5, &[0, 0, 0, 0]),
            Err(CumulantError::BadOrder(5))
        ));
        assert!(matches!(
            estimate_cumulant(&obs, 3, &[0]),
            Err(CumulantError::BadLags { need: 2, got: 1, .. })
        ));
        let short = gaussian_obs(30, 1, 52);
        assert!(matches!(
            estimate_cumulant(&short, 2, &[0]),
            Err(CumulantError::TooShort { .. })
        ));
    }

    #[test]
    fn tensor_constructor_validates_its_input() {
        assert!(matches!(
            CumulantTensor::new(3, 2, vec![0, 0], vec![0.0; 7]),
            Err(CumulantError::BadShape { need: 8, got: 7 })
        ));
        assert!(matches!(
            CumulantTensor::new(2, 2, vec![0], vec![0.0, f64::NAN, 0.0, 0.0]),
            Err(CumulantError::NonFinite)
        ));
        // Asymmetric data is rejected at zero lag but fine when lagged.
        let asym = vec![1.0, 2.0, 3.0, 4.0];
        assert!(matches!(
            CumulantTensor::new(2, 2, vec![0], asym.clone()),
            Err(CumulantError::NotSymmetric(_))
        ));
        let lagged = CumulantTensor::new(2, 2, vec![1], asym).unwrap();
        assert!(!lagged.is_zero_lag());
        assert_eq!(lagged.get(&[1, 0]), 3.0);
    }

    #[test]
    fn tensor_accessor_indexes_row_major() {
        let data: Vec<f64> = (0..8).map(|v| v as f64).collect();
        let t = CumulantTensor::new(3, 2, vec![1, 0], data).unwrap();
        assert_eq!(t.get(&[1, 0, 1]), 5.0);
        assert_eq!(t.get(&[0, 1, 1]), 3.0);
        assert_eq!(t.norm(), (0..8).map(|v| (v * v) as f64).sum::<f64>().sqrt());
    }
}
