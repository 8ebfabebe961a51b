//! Sampling from the model: exact event simulation by thinning, the
//! discretised autoregressive count approximation, binning, and the mixing
//! maps that turn latent counts into observations.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{check_stability, HawkesModel, KernelSpec, ModelError};
use crate::rng::{self, streams};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model is not stable (spectral radius {radius} >= 1); simulation refused")]
    Unstable { radius: f64 },
    #[error("intensity bound {bound} exceeded the explosion guard {guard} at t = {time}")]
    Explosion { time: f64, bound: f64, guard: f64 },
    #[error("linked intensity {intensity} exceeded the cap {cap} at t = {time}")]
    CapViolation { time: f64, intensity: f64, cap: f64 },
    #[error("horizon must be positive, got {0}")]
    BadHorizon(f64),
    #[error("bin width must be positive, got {0}")]
    BadDelta(f64),
    #[error("timestamps must be strictly increasing within [0, horizon)")]
    BadTimestamps,
    #[error("mixing map expects input dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("mixing matrix failed the rank check {attempts} times in a row")]
    RankFailure { attempts: usize },
    #[error("mixing map validation failed: {0}")]
    BadMixing(String),
}

/// Event times of `p` processes on `[0, horizon)`.
#[derive(Debug, Clone)]
pub struct EventSequence<T: Scalar> {
    pub horizon: T,
    pub events: Vec<Vec<T>>,
}

impl<T: Scalar> EventSequence<T> {
    pub fn new(horizon: T, events: Vec<Vec<T>>) -> Result<Self, SimError> {
        if horizon <= T::zero() {
            return Err(SimError::BadHorizon(horizon.as_f64()));
        }
        for list in &events {
            let mut prev = -T::one();
            for &t in list {
                if t < T::zero() || t >= horizon || (prev >= T::zero() && t <= prev) {
                    return Err(SimError::BadTimestamps);
                }
                prev = t;
            }
        }
        Ok(EventSequence { horizon, events })
    }

    pub fn p(&self) -> usize {
        self.events.len()
    }

    pub fn total(&self) -> usize {
        self.events.iter().map(Vec::len).sum()
    }
}

/// Counts per bin (rows) and process (columns).
#[derive(Debug, Clone)]
pub struct BinnedCounts<T: Scalar> {
    pub delta: T,
    pub counts: DMatrix<u64>,
}

impl<T: Scalar> BinnedCounts<T> {
    pub fn p(&self) -> usize {
        self.counts.ncols()
    }

    pub fn n_bins(&self) -> usize {
        self.counts.nrows()
    }

    /// Counts as real numbers, bins x p.
    pub fn to_real(&self) -> DMatrix<T> {
        DMatrix::from_fn(self.counts.nrows(), self.counts.ncols(), |i, j| {
            T::from_u64(self.counts[(i, j)]).unwrap()
        })
    }
}

/// Per-event excitation bookkeeping for one (target, source) kernel.
///
/// Exponential kernels keep the usual lazily-decayed recursion; windowed
/// kernels count source events inside the support by binary search; power
/// laws sum the full history (no finite-state recursion exists for them).
enum Contrib<T: Scalar> {
    Exp {
        alpha: T,
        beta: T,
        value: T,
        last_t: T,
    },
    Window {
        height: T,
        start: T,
        end: T,
    },
    Power {
        alpha: T,
        beta: T,
        c: T,
    },
    Silent,
}

impl<T: Scalar> Contrib<T> {
    fn from_kernel(k: &KernelSpec<T>) -> Self {
        if k.is_zero() {
            return Contrib::Silent;
        }
        match *k {
            KernelSpec::Exponential { alpha, beta } => Contrib::Exp {
                alpha,
                beta,
                value: T::zero(),
                last_t: T::zero(),
            },
            KernelSpec::Rectangular { height, start, end } => {
                Contrib::Window { height, start, end }
            }
            KernelSpec::PowerLaw { alpha, beta, c } => Contrib::Power { alpha, beta, c },
            KernelSpec::Zero => Contrib::Silent,
        }
    }

    /// Exact excitation at time `t` (left limit) given the source history.
    fn eval(&self, t: T, source: &[T]) -> T {
        match *self {
            Contrib::Silent => T::zero(),
            Contrib::Exp {
                beta, value, last_t, ..
            } => value * (-beta * (t - last_t)).exp(),
            Contrib::Window { height, start, end } => {
                // Events with t - s in [start, end], i.e. s in [t-end, t-start].
                let lo = source.partition_point(|&s| s < t - end);
                let hi = source.partition_point(|&s| s <= t - start);
                height * T::from_usize(hi.saturating_sub(lo)).unwrap()
            }
            Contrib::Power { alpha, beta, c } => {
                let cut = source.partition_point(|&s| s <= t);
                source[..cut]
                    .iter()
                    .map(|&s| alpha * (t - s + c).powf(-beta))
                    .sum()
            }
        }
    }

    /// Upper bound on this excitation over all future times `>= t`.
    /// Valid because each kernel's supremum over a shrinking tail is
    /// non-increasing; delayed rectangular supports are covered before they
    /// activate, which a bound built from current values alone would miss.
    fn sup_after(&self, t: T, source: &[T]) -> T {
        match *self {
            Contrib::Silent => T::zero(),
            Contrib::Exp { .. } | Contrib::Power { .. } => self.eval(t, source),
            Contrib::Window { height, end, .. } => {
                let lo = source.partition_point(|&s| s < t - end);
                let hi = source.partition_point(|&s| s <= t);
                height * T::from_usize(hi.saturating_sub(lo)).unwrap()
            }
        }
    }

    fn on_event(&mut self, t: T) {
        if let Contrib::Exp {
            alpha,
            beta,
            value,
            last_t,
        } = self
        {
            *value = *value * (-*beta * (t - *last_t)).exp() + *alpha;
            *last_t = t;
        }
    }
}

struct Engine<'a, T: Scalar> {
    model: &'a HawkesModel<T>,
    events: Vec<Vec<T>>,
    contribs: Vec<Vec<Contrib<T>>>,
}

impl<'a, T: Scalar> Engine<'a, T> {
    fn new(model: &'a HawkesModel<T>) -> Self {
        let p = model.p();
        let contribs = (0..p)
            .map(|i| {
                (0..p)
                    .map(|j| Contrib::from_kernel(&model.kernels[i][j]))
                    .collect()
            })
            .collect();
        Engine {
            model,
            events: vec![Vec::new(); p],
            contribs,
        }
    }

    /// Linear predictor u_i + sum_j (phi_ij * dN_j)(t), left limit.
    fn linear_intensity(&self, t: T) -> DVector<T> {
        let p = self.model.p();
        DVector::from_fn(p, |i, _| {
            let mut v = self.model.baseline[i];
            for j in 0..p {
                v += self.contribs[i][j].eval(t, &self.events[j]);
            }
            v
        })
    }

    /// Total dominating rate valid on all of `[t, inf)`.
    fn bound(&self, t: T) -> T {
        let p = self.model.p();
        let mut total = T::zero();
        for i in 0..p {
            total += self.model.baseline[i];
            for j in 0..p {
                total += self.contribs[i][j].sup_after(t, &self.events[j]);
            }
        }
        total
    }

    fn push(&mut self, j: usize, t: T) {
        for i in 0..self.model.p() {
            self.contribs[i][j].on_event(t);
        }
        self.events[j].push(t);
    }
}

fn draw_positive_exponential(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    loop {
        let w = rng::exponential(rng, rate);
        if w > 0.0 {
            return w;
        }
    }
}

/// Exact simulation by thinning against an adaptive dominating rate.
///
/// Proposals arrive at the current bound's rate; each is accepted with
/// probability (total intensity)/(bound) and then attributed to a process by
/// a categorical draw proportional to the per-process intensities. The bound
/// is recomputed at every proposal. Identical seeds give identical output.
pub fn simulate<T: Scalar>(
    m: &HawkesModel<T>,
    horizon: T,
    seed: u64,
) -> Result<EventSequence<T>, SimError> {
    let report = check_stability(m)?;
    if !report.stable {
        return Err(SimError::Unstable {
            radius: report.spectral_radius.as_f64(),
        });
    }
    let lambda_star_sum = report
        .stationary_intensity
        .as_ref()
        .expect("stable model has stationary intensity")
        .sum();
    let guard = T::lit(1e6) * lambda_star_sum;
    let mut rng = rng::stream(seed, streams::THINNING);
    run_thinning(
        m,
        horizon,
        &mut rng,
        |lin: &DVector<T>| lin.clone(),
        BoundPolicy::Adaptive { guard },
    )
}

/// Intensity link for the nonlinear model.
#[derive(Debug, Clone)]
pub enum IntensityLink<T: Scalar> {
    /// `lambda_i = log(1 + exp(eta_i))`, applied componentwise.
    Softplus,
    /// Square layers with leaky-ReLU pre-activations, then a final softplus
    /// so the intensity stays strictly positive.
    Mlp {
        layers: Vec<DMatrix<T>>,
        slope: T,
    },
}

pub fn softplus<T: Scalar>(x: T) -> T {
    // Stable at both tails.
    if x > T::lit(30.0) {
        x
    } else if x < T::lit(-30.0) {
        x.exp()
    } else {
        (T::one() + x.exp()).ln()
    }
}

fn leaky_relu<T: Scalar>(x: T, slope: T) -> T {
    if x >= T::zero() {
        x
    } else {
        slope * x
    }
}

impl<T: Scalar> IntensityLink<T> {
    fn apply(&self, eta: &DVector<T>) -> DVector<T> {
        match self {
            IntensityLink::Softplus => eta.map(softplus),
            IntensityLink::Mlp { layers, slope } => {
                let mut v = eta.clone();
                for a in layers {
                    v = a * v.map(|x| leaky_relu(x, *slope));
                }
                v.map(softplus)
            }
        }
    }
}

/// Thinning with a nonlinear intensity `lambda(t) = link(u + Phi * dN)`,
/// bounded by the constant per-process cap `lambda_max`.
///
/// The cap is verified at every proposal time and immediately after every
/// accepted event (where jump kernels peak); a violation aborts with the
/// offending time.
pub fn simulate_nonlinear<T: Scalar>(
    m: &HawkesModel<T>,
    link: &IntensityLink<T>,
    horizon: T,
    lambda_max: T,
    seed: u64,
) -> Result<EventSequence<T>, SimError> {
    if lambda_max <= T::zero() {
        return Err(SimError::BadHorizon(lambda_max.as_f64()));
    }
    let mut rng = rng::stream(seed, streams::THINNING);
    run_thinning(
        m,
        horizon,
        &mut rng,
        |lin: &DVector<T>| link.apply(lin),
        BoundPolicy::ConstantCap { cap: lambda_max },
    )
}

enum BoundPolicy<T: Scalar> {
    Adaptive { guard: T },
    ConstantCap { cap: T },
}

fn run_thinning<T: Scalar, F: Fn(&DVector<T>) -> DVector<T>>(
    m: &HawkesModel<T>,
    horizon: T,
    rng: &mut ChaCha8Rng,
    intensity_of: F,
    policy: BoundPolicy<T>,
) -> Result<EventSequence<T>, SimError> {
    if horizon <= T::zero() {
        return Err(SimError::BadHorizon(horizon.as_f64()));
    }
    let p = m.p();
    let mut engine = Engine::new(m);
    let mut t = T::zero();

    let check_cap = |lam: &DVector<T>, time: T| -> Result<(), SimError> {
        if let BoundPolicy::ConstantCap { cap } = policy {
            for i in 0..lam.len() {
                if lam[i] > cap {
                    return Err(SimError::CapViolation {
                        time: time.as_f64(),
                        intensity: lam[i].as_f64(),
                        cap: cap.as_f64(),
                    });
                }
            }
        }
        Ok(())
    };

    loop {
        let bound = match policy {
            BoundPolicy::Adaptive { guard } => {
                let b = engine.bound(t);
                if b > guard {
                    return Err(SimError::Explosion {
                        time: t.as_f64(),
                        bound: b.as_f64(),
                        guard: guard.as_f64(),
                    });
                }
                b
            }
            BoundPolicy::ConstantCap { cap } => cap * T::from_usize(p).unwrap(),
        };
        if bound <= T::lit(1e-300) {
            break; // nothing can ever fire again
        }
        let w = T::lit(draw_positive_exponential(rng, bound.as_f64()));
        let cand = t + w;
        if cand >= horizon {
            break;
        }
        let lam = intensity_of(&engine.linear_intensity(cand));
        check_cap(&lam, cand)?;
        let total: T = lam.iter().copied().sum();
        let accept = T::lit(rng::uniform(rng)) * bound;
        if accept <= total && total > T::zero() {
            // Attribute to a process proportionally to its intensity share.
            let pick = T::lit(rng::uniform(rng)) * total;
            let mut acc = T::zero();
            let mut who = p - 1;
            for i in 0..p {
                acc += lam[i];
                if pick <= acc {
                    who = i;
                    break;
                }
            }
            engine.push(who, cand);
            let after = intensity_of(&engine.linear_intensity(cand + T::lit(1e-12)));
            check_cap(&after, cand)?;
        }
        t = cand;
    }
    EventSequence::new(horizon, engine.events)
}

/// Bin events on a regular grid: `counts[k][i] = #{t in events_i : k delta <= t < (k+1) delta}`.
pub fn bin<T: Scalar>(e: &EventSequence<T>, delta: T) -> Result<BinnedCounts<T>, SimError> {
    if delta <= T::zero() {
        return Err(SimError::BadDelta(delta.as_f64()));
    }
    let n_bins = (e.horizon / delta).ceil().to_usize().unwrap().max(1);
    let p = e.p();
    let mut counts = DMatrix::<u64>::zeros(n_bins, p);
    for (i, list) in e.events.iter().enumerate() {
        for &t in list {
            let k = (t / delta).floor().to_usize().unwrap().min(n_bins - 1);
            counts[(k, i)] += 1;
        }
    }
    Ok(BinnedCounts { delta, counts })
}

/// Count noise family for the autoregressive sampler.
#[derive(Debug, Clone)]
pub enum CountNoise {
    /// `Z ~ Poisson(mean)` — the point-process-faithful default.
    Poisson,
    /// `Z = max(0, round(mean + N(0, sigma^2)))`.
    GaussianRounded { sigma: f64 },
    /// `Z = max(0, round(mean + eps))` with `eps` from a two-component
    /// Gaussian mixture.
    MixtureRounded {
        weight_first: f64,
        means: (f64, f64),
        sigmas: (f64, f64),
    },
}

#[derive(Debug, Clone, Default)]
pub struct InarDiagnostics {
    /// Bins whose predicted intensity came out negative and was clipped.
    pub clipped: usize,
    /// Largest per-bin expected count seen; values near or above 1 mean the
    /// discretisation is too coarse for the count approximation to be close.
    pub max_bin_mean: f64,
    /// History length in bins after kernel-tail truncation.
    pub window: usize,
}

/// Discretised autoregressive count sampler.
///
/// Recursively draws `Z_k` with conditional mean `lambda_k * delta` where
/// `lambda_k = u + sum_{tau=1..W} Phi(tau delta) delta Z_{k-tau}`. The window
/// `W` covers each kernel until its remaining L1 mass is below 1e-6.
pub fn simulate_inar<T: Scalar>(
    m: &HawkesModel<T>,
    delta: T,
    horizon: T,
    noise: &CountNoise,
    seed: u64,
) -> Result<(BinnedCounts<T>, InarDiagnostics), SimError> {
    if delta <= T::zero() {
        return Err(SimError::BadDelta(delta.as_f64()));
    }
    if horizon <= T::zero() {
        return Err(SimError::BadHorizon(horizon.as_f64()));
    }
    let report = check_stability(m)?;
    if !report.stable {
        return Err(SimError::Unstable {
            radius: report.spectral_radius.as_f64(),
        });
    }
    let p = m.p();
    let n_bins = (horizon / delta).ceil().to_usize().unwrap().max(1);

    let window = truncation_window(m, delta);
    // Kernel samples Phi(tau*delta) for tau = 1..=window. Each past count
    // adds phi(age) to the intensity, so the bin mean is
    // u*delta + sum_tau Phi(tau*delta)*delta * Z_{k-tau}.
    let weights: Vec<DMatrix<T>> = (1..=window)
        .map(|tau| {
            let t = delta * T::from_usize(tau).unwrap();
            DMatrix::from_fn(p, p, |i, j| m.kernels[i][j].eval(t))
        })
        .collect();

    let mut rng = rng::stream(seed, streams::INAR);
    let mut counts = DMatrix::<u64>::zeros(n_bins, p);
    let mut diag = InarDiagnostics {
        window,
        ..Default::default()
    };

    let mut lam = DVector::<T>::zeros(p);
    for k in 0..n_bins {
        lam.copy_from(&m.baseline);
        let reach = window.min(k);
        for tau in 1..=reach {
            let w = &weights[tau - 1];
            let past = k - tau;
            for j in 0..p {
                let z = counts[(past, j)];
                if z == 0 {
                    continue;
                }
                let zt = T::from_u64(z).unwrap();
                for i in 0..p {
                    lam[i] += w[(i, j)] * zt;
                }
            }
        }
        for i in 0..p {
            let mut mean = (lam[i] * delta).as_f64();
            if mean < 0.0 {
                diag.clipped += 1;
                mean = 0.0;
            }
            diag.max_bin_mean = diag.max_bin_mean.max(mean);
            let z = match noise {
                CountNoise::Poisson => rng::poisson(&mut rng, mean),
                CountNoise::GaussianRounded { sigma } => {
                    let draw = mean + sigma * rng::standard_normal(&mut rng);
                    draw.round().max(0.0) as u64
                }
                CountNoise::MixtureRounded {
                    weight_first,
                    means,
                    sigmas,
                } => {
                    let (mu, sig) = if rng::uniform(&mut rng) < *weight_first {
                        (means.0, sigmas.0)
                    } else {
                        (means.1, sigmas.1)
                    };
                    let draw = mean + mu + sig * rng::standard_normal(&mut rng);
                    draw.round().max(0.0) as u64
                }
            };
            counts[(k, i)] = z;
        }
    }
    Ok((BinnedCounts { delta, counts }, diag))
}

/// Number of lags needed before every kernel's remaining mass drops below
/// 1e-6.
pub fn truncation_window<T: Scalar>(m: &HawkesModel<T>, delta: T) -> usize {
    let tol = T::lit(1e-6);
    let mut window = 1usize;
    for row in &m.kernels {
        for k in row {
            if k.is_zero() {
                continue;
            }
            // Exponential/rectangular tails have closed forms; bisection on
            // the tail function covers every kind uniformly.
            let mut lo = T::zero();
            let mut hi = T::one();
            while k.l1_tail(hi) >= tol && hi < T::lit(1e9) {
                hi += hi;
            }
            for _ in 0..200 {
                let mid = (lo + hi) * T::lit(0.5);
                if k.l1_tail(mid) < tol {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo < T::lit(1e-9) {
                    break;
                }
            }
            let lags = (hi / delta).ceil().to_usize().unwrap_or(1).max(1);
            window = window.max(lags);
        }
    }
    window
}

/// Latent-to-observed map.
#[derive(Debug, Clone)]
pub enum MixingMap<T: Scalar> {
    Linear { f: DMatrix<T> },
    Mlp { layers: Vec<DMatrix<T>>, slope: T },
}

impl<T: Scalar> MixingMap<T> {
    pub fn input_dim(&self) -> usize {
        match self {
            MixingMap::Linear { f } => f.ncols(),
            MixingMap::Mlp { layers, .. } => layers.first().map_or(0, |a| a.ncols()),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            MixingMap::Linear { f } => f.nrows(),
            MixingMap::Mlp { layers, .. } => layers.last().map_or(0, |a| a.nrows()),
        }
    }

    /// Construction-time checks: linear maps must have full rank min(n, p)
    /// (smallest singular value above 1e-8 of the largest); MLP layers must
    /// have orthonormal columns to 1e-10 and chain dimensions correctly.
    pub fn validate(&self) -> Result<(), SimError> {
        match self {
            MixingMap::Linear { f } => {
                let sv = f.clone().singular_values();
                let smax = sv.iter().fold(T::zero(), |a, &b| a.max(b));
                let smin = sv.iter().fold(smax, |a, &b| a.min(b));
                if smax <= T::zero() || smin / smax < T::lit(1e-8) {
                    return Err(SimError::BadMixing(format!(
                        "linear map is rank deficient (sigma_min/sigma_max = {:e})",
                        (smin / smax).as_f64()
                    )));
                }
                Ok(())
            }
            MixingMap::Mlp { layers, .. } => {
                if layers.is_empty() {
                    return Err(SimError::BadMixing("MLP needs at least one layer".into()));
                }
                let mut dim = layers[0].ncols();
                for (idx, a) in layers.iter().enumerate() {
                    if a.ncols() != dim {
                        return Err(SimError::BadMixing(format!(
                            "layer {idx} expects input {} but receives {dim}",
                            a.ncols()
                        )));
                    }
                    dim = a.nrows();
                    let gram = a.transpose() * a;
                    let eye = DMatrix::<T>::identity(a.ncols(), a.ncols());
                    let err = (&gram - &eye)
                        .iter()
                        .fold(T::zero(), |acc, &x| acc.max(x.abs()));
                    if err > T::lit(1e-10) {
                        return Err(SimError::BadMixing(format!(
                            "layer {idx} is not orthogonal (max deviation {:e})",
                            err.as_f64()
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Applies the map to one latent vector.
    pub fn apply(&self, z: &DVector<T>) -> DVector<T> {
        match self {
            MixingMap::Linear { f } => f * z,
            MixingMap::Mlp { layers, slope } => {
                let mut v = z.clone();
                for a in layers {
                    v = a * v.map(|x| leaky_relu(x, *slope));
                }
                v
            }
        }
    }
}

/// Observed series after mixing, bins x n.
#[derive(Debug, Clone)]
pub struct Observation<T: Scalar> {
    pub delta: T,
    pub data: DMatrix<T>,
}

/// Applies a mixing map row-by-row to binned counts.
pub fn mix<T: Scalar>(b: &BinnedCounts<T>, map: &MixingMap<T>) -> Result<Observation<T>, SimError> {
    if map.input_dim() != b.p() {
        return Err(SimError::DimensionMismatch {
            expected: map.input_dim(),
            got: b.p(),
        });
    }
    let real = b.to_real();
    let n = map.output_dim();
    let mut data = DMatrix::<T>::zeros(real.nrows(), n);
    for k in 0..real.nrows() {
        let z = DVector::from_fn(b.p(), |j, _| real[(k, j)]);
        let o = map.apply(&z);
        for j in 0..n {
            data[(k, j)] = o[j];
        }
    }
    Ok(Observation { delta: b.delta, data })
}

/// Dense i.i.d.-normal mixing matrix with a validated conditioning floor;
/// regenerates on failure (at most 8 attempts).
pub fn make_generic_linear<T: Scalar>(
    n: usize,
    p: usize,
    seed: u64,
) -> Result<MixingMap<T>, SimError> {
    assert!(n >= 1 && p >= 1, "dimensions must be positive");
    let mut rng = rng::stream(seed, streams::GENERIC_MATRIX);
    for _ in 0..8 {
        let f = DMatrix::from_fn(n, p, |_, _| T::lit(rng::standard_normal(&mut rng)));
        let map = MixingMap::Linear { f };
        if map.validate().is_ok() {
            return Ok(map);
        }
    }
    Err(SimError::RankFailure { attempts: 8 })
}

/// Random MLP mixing: the first layer is a semi-orthogonal n x p embedding,
/// later layers are n x n orthogonal (QR of Gaussian matrices).
pub fn make_generic_mlp<T: Scalar>(
    n: usize,
    p: usize,
    n_layers: usize,
    slope: T,
    seed: u64,
) -> Result<MixingMap<T>, SimError> {
    assert!(n >= p && p >= 1, "need n >= p >= 1");
    assert!(n_layers >= 1, "need at least one layer");
    let mut rng = rng::stream(seed, streams::MIXING);
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let cols = if l == 0 { p } else { n };
        let g = DMatrix::from_fn(n, cols, |_, _| T::lit(rng::standard_normal(&mut rng)));
        let qr = g.qr();
        let mut q = qr.q();
        let r = qr.r();
        // Fix the sign convention so the factor is unique and well spread.
        for j in 0..cols {
            if r[(j, j)] < T::zero() {
                for i in 0..n {
                    q[(i, j)] = -q[(i, j)];
                }
            }
        }
        layers.push(q);
    }
    let map = MixingMap::Mlp { layers, slope };
    map.validate()?;
    Ok(map)
}
