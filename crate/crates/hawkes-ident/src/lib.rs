//! Latent multivariate Hawkes processes, their count discretisations, and the
//! estimation machinery needed to recover the generative model from mixed
//! observations.
//!
//! The crate is organised as a pipeline:
//!
//! * [`model`] declares excitation kernels and the stability analysis of the
//!   induced point process.
//! * [`simulate`] draws exact event sequences by thinning, bins them, runs the
//!   autoregressive count approximation and applies linear or MLP mixing.
//! * [`spectral`] estimates cross-spectral densities, factorises them into a
//!   causal transfer function and derives second-order summaries.
//! * [`cumulants`] estimates higher-order lagged cumulant tensors and
//!   decomposes them into symmetric rank-one terms.
//! * [`identify`] assembles per-environment transfer snapshots into the linear
//!   systems that decide identifiability and solve for kernel entries.
//! * [`evaluate`] scores recovered factors and latent series against ground
//!   truth.
//!
//! All numerical code is generic over [`Scalar`], a closed marker trait
//! implemented for `f32` and `f64`. The `*64` aliases at the crate root fix
//! the `f64` instantiations used by the command-line driver.

pub mod assignment;
pub mod cumulants;
pub mod evaluate;
pub mod identify;
pub mod io;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod spectral;

mod numeric;

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the whole crate is generic over.
///
/// `nalgebra::RealField` supplies field arithmetic and elementary functions,
/// `rustfft::FftNum` admits the type into FFT plans, and the `num-traits`
/// conversions move literals and RNG output (always drawn in `f64`) into the
/// working precision.
pub trait Scalar:
    nalgebra::RealField
    + rustfft::FftNum
    + FromPrimitive
    + ToPrimitive
    + Copy
    + Default
    + std::iter::Sum<Self>
{
    /// Injects an `f64` constant, panicking only for non-finite inputs that
    /// the target type cannot represent.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 constant must be representable")
    }

    /// Lossy widening back to `f64`, used for reporting and serialisation.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("real scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Complex number over the crate scalar.
pub type Cplx<T> = num_complex::Complex<T>;

pub type Kernel64 = model::KernelSpec<f64>;
pub type Model64 = model::HawkesModel<f64>;
pub type Stability64 = model::StabilityReport<f64>;
pub type Events64 = simulate::EventSequence<f64>;
pub type Counts64 = simulate::BinnedCounts<f64>;
pub type Mixing64 = simulate::MixingMap<f64>;
pub type Observation64 = simulate::Observation<f64>;
pub type Mcc64 = evaluate::MccResult<f64>;
pub type Spectrum64 = spectral::SpectralDensity<f64>;
pub type Factor64 = spectral::SpectralFactor<f64>;
pub type Cumulant64 = cumulants::CumulantTensor<f64>;
pub type CpFactors64 = cumulants::CpFactors<f64>;
pub type Environments64 = identify::EnvironmentSet<f64>;
pub type IdentReport64 = identify::IdentReport<f64>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_roundtrips_literals() {
        assert_eq!(f64::lit(0.25), 0.25);
        assert_eq!(f32::lit(0.25), 0.25f32);
        assert_eq!(0.25f64.as_f64(), 0.25);
    }
}
