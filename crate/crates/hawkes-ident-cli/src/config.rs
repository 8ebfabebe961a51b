//! Pipeline configuration: one JSON document, explicit seeds, no wall-clock
//! anywhere. Field defaults are encoded here so a config stays minimal; the
//! full schema is documented in the repository README.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hawkes_ident::evaluate::CorrMethod;
use hawkes_ident::model::{HawkesModel, KernelSpec};
use hawkes_ident::simulate::CountNoise;
use hawkes_ident::spectral::Taper;

/// Schema or semantic violation in the config document. Maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelCfg,
    pub mixing: MixingCfg,
    pub simulation: SimulationCfg,
    pub environments: EnvironmentsCfg,
    #[serde(default)]
    pub estimation: EstimationCfg,
    #[serde(default)]
    pub identify: IdentifyCfg,
    #[serde(default)]
    pub evaluation: EvaluationCfg,
    pub output_dir: PathBuf,
    /// Worker threads; `null` means available parallelism.
    #[serde(default)]
    pub threads: Option<usize>,
}

/// Generative model, either inline or loaded from a model JSON file.
/// Exactly one of the two forms must be present.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCfg {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernels: Option<Vec<Vec<KernelSpec<f64>>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum MixingCfg {
    /// Dense Gaussian matrix, `n` observed coordinates, generated from `seed`.
    Linear { n: usize, seed: u64 },
    /// Leaky-ReLU multilayer map with Gaussian weight matrices.
    Mlp {
        n: usize,
        layers: usize,
        slope: f64,
        seed: u64,
    },
    /// Pre-built map loaded from a mixing JSON file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationCfg {
    pub horizon: f64,
    pub delta: f64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub noise: NoiseCfg,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum NoiseCfg {
    #[default]
    Poisson,
    GaussianRounded {
        sigma: f64,
    },
    MixtureRounded {
        weight_first: f64,
        means: (f64, f64),
        sigmas: (f64, f64),
    },
}

impl NoiseCfg {
    pub fn to_noise(&self) -> CountNoise {
        match *self {
            NoiseCfg::Poisson => CountNoise::Poisson,
            NoiseCfg::GaussianRounded { sigma } => CountNoise::GaussianRounded { sigma },
            NoiseCfg::MixtureRounded {
                weight_first,
                means,
                sigmas,
            } => CountNoise::MixtureRounded {
                weight_first,
                means,
                sigmas,
            },
        }
    }
}

/// Environment 0 is always the unaltered reference; environment `k >= 1`
/// applies `intervention.targets[k-1]` with `intervention.factors[k-1]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentsCfg {
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervention: Option<InterventionCfg>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionCfg {
    pub kind: InterventionKind,
    /// Kernel matrix entries `(i, j)` edited per environment, zero-based.
    pub targets: Vec<(usize, usize)>,
    /// Amplitude per environment: replacement for `Hard`, multiplier for `Soft`.
    pub factors: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterventionKind {
    /// Replace the target kernel's amplitude with the factor; a `Zero`
    /// target becomes `Exponential { alpha: factor, beta: 1 }`.
    Hard,
    /// Multiply the target kernel's amplitude by the factor; `Zero` stays zero.
    Soft,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationCfg {
    #[serde(default = "default_n_freq")]
    pub n_freq: usize,
    #[serde(default = "default_taper")]
    pub taper: TaperCfg,
    /// Welch segment count; omit (or `null`) to use the maximum the series
    /// length admits, `floor(bins / n_freq)`.
    #[serde(default)]
    pub segments: Option<usize>,
    #[serde(default = "default_cumulant_orders")]
    pub cumulant_orders: Vec<usize>,
    #[serde(default)]
    pub preprocess: PreprocessCfg,
    #[serde(default)]
    pub cp: CpCfg,
}

fn default_n_freq() -> usize {
    256
}

fn default_taper() -> TaperCfg {
    TaperCfg::Hann
}

fn default_cumulant_orders() -> Vec<usize> {
    vec![2, 3]
}

impl Default for EstimationCfg {
    fn default() -> Self {
        Self {
            n_freq: default_n_freq(),
            taper: default_taper(),
            segments: None,
            cumulant_orders: default_cumulant_orders(),
            preprocess: PreprocessCfg::default(),
            cp: CpCfg::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaperCfg {
    None,
    Hann,
}

impl TaperCfg {
    pub fn to_taper(self) -> Taper {
        match self {
            TaperCfg::None => Taper::None,
            TaperCfg::Hann => Taper::Hann,
        }
    }
}

/// Series transform applied before cumulant estimation and before scoring
/// recovered latents. Spectra are always estimated on the raw series.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PreprocessCfg {
    /// Subtract column means (cumulant and correlation estimators already
    /// center, so this is the identity in effect).
    #[default]
    Center,
    /// First difference, for mixings that are only locally linear.
    Difference,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpCfg {
    /// Decomposition rank; `null` means the latent dimension of the model.
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_cp_tol")]
    pub tol: f64,
}

fn default_restarts() -> usize {
    8
}

fn default_cp_tol() -> f64 {
    1e-7
}

impl Default for CpCfg {
    fn default() -> Self {
        Self {
            rank: None,
            restarts: default_restarts(),
            tol: default_cp_tol(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifyCfg {
    /// Relative singular-value cutoff for rank decisions; `null` uses the
    /// exact-arithmetic default.
    #[serde(default)]
    pub rank_threshold: Option<f64>,
    /// Frequencies (radians per bin) at which kernel snapshots are solved;
    /// each is mapped to the nearest spectral grid point.
    #[serde(default = "default_snapshot_frequencies")]
    pub snapshot_frequencies: Vec<f64>,
}

fn default_snapshot_frequencies() -> Vec<f64> {
    vec![0.0, FRAC_PI_4, FRAC_PI_2]
}

impl Default for IdentifyCfg {
    fn default() -> Self {
        Self {
            rank_threshold: None,
            snapshot_frequencies: default_snapshot_frequencies(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationCfg {
    #[serde(default)]
    pub method: MethodCfg,
    /// Bin-width ladder diagnostic; `null` disables it.
    #[serde(default = "default_convergence")]
    pub convergence: Option<ConvergenceCfg>,
}

impl Default for EvaluationCfg {
    fn default() -> Self {
        Self {
            method: MethodCfg::default(),
            convergence: default_convergence(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MethodCfg {
    #[default]
    Pearson,
    Spearman,
}

impl MethodCfg {
    pub fn to_method(self) -> CorrMethod {
        match self {
            MethodCfg::Pearson => CorrMethod::Pearson,
            MethodCfg::Spearman => CorrMethod::Spearman,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceCfg {
    pub deltas: Vec<f64>,
    pub horizon: f64,
    pub seeds: Vec<u64>,
}

fn default_convergence() -> Option<ConvergenceCfg> {
    Some(ConvergenceCfg {
        deltas: vec![0.5, 0.2, 0.1],
        horizon: 200.0,
        seeds: vec![0, 1, 2],
    })
}

impl PipelineConfig {
    /// Parses and validates a config document, reporting the parse position
    /// on schema violations.
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| {
            err(format!(
                "parse failure at line {} column {}: {e}",
                e.line(),
                e.column()
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::from_str(&text)?;
        Ok((cfg, text))
    }

    /// Builds the base (environment 0) model. Structural failures are config
    /// errors; stability is deliberately not checked here, it is a runtime
    /// property verified by the simulator.
    pub fn build_model(&self) -> Result<HawkesModel<f64>, ConfigError> {
        match (&self.model.path, &self.model.baseline, &self.model.kernels) {
            (Some(path), None, None) => hawkes_ident::io::read_model(path)
                .map_err(|e| err(format!("model file {}: {e}", path.display()))),
            (None, Some(baseline), Some(kernels)) => {
                HawkesModel::new(baseline.clone(), kernels.clone())
                    .map_err(|e| err(format!("model: {e}")))
            }
            _ => Err(err(
                "model needs either {path} or {baseline, kernels}, not a mixture",
            )),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let model = self.build_model()?;
        let p = model.p();

        let sim = &self.simulation;
        if !(sim.horizon.is_finite() && sim.horizon > 0.0) {
            return Err(err("simulation.horizon must be positive and finite"));
        }
        if !(sim.delta.is_finite() && sim.delta > 0.0) {
            return Err(err("simulation.delta must be positive and finite"));
        }
        if sim.delta >= sim.horizon {
            return Err(err("simulation.delta must be smaller than the horizon"));
        }
        if sim.seeds.is_empty() {
            return Err(err("simulation.seeds must list at least one seed"));
        }
        match &sim.noise {
            NoiseCfg::Poisson => {}
            NoiseCfg::GaussianRounded { sigma } => {
                if !(sigma.is_finite() && *sigma >= 0.0) {
                    return Err(err("simulation.noise.sigma must be nonnegative"));
                }
            }
            NoiseCfg::MixtureRounded {
                weight_first,
                means,
                sigmas,
            } => {
                if !(0.0..=1.0).contains(weight_first) {
                    return Err(err("simulation.noise.weight_first must lie in [0, 1]"));
                }
                for v in [means.0, means.1] {
                    if !v.is_finite() {
                        return Err(err("simulation.noise.means must be finite"));
                    }
                }
                for v in [sigmas.0, sigmas.1] {
                    if !(v.is_finite() && v >= 0.0) {
                        return Err(err("simulation.noise.sigmas must be nonnegative"));
                    }
                }
            }
        }

        match &self.mixing {
            MixingCfg::Linear { n, .. } => {
                if *n < p {
                    return Err(err(format!(
                        "mixing.n = {n} is below the latent dimension {p}"
                    )));
                }
            }
            MixingCfg::Mlp {
                n, layers, slope, ..
            } => {
                if *n < p {
                    return Err(err(format!(
                        "mixing.n = {n} is below the latent dimension {p}"
                    )));
                }
                if *layers == 0 {
                    return Err(err("mixing.layers must be at least 1"));
                }
                if !(slope.is_finite() && *slope > 0.0) {
                    return Err(err("mixing.slope must be positive"));
                }
            }
            MixingCfg::File { path } => {
                if path.as_os_str().is_empty() {
                    return Err(err("mixing.path must not be empty"));
                }
            }
        }

        let envs = &self.environments;
        if envs.count == 0 {
            return Err(err("environments.count must be at least 1"));
        }
        if envs.count > 1 {
            let iv = envs.intervention.as_ref().ok_or_else(|| {
                err("environments.intervention is required when count > 1")
            })?;
            let need = envs.count - 1;
            if iv.targets.len() < need {
                return Err(err(format!(
                    "environments.intervention.targets has {} entries, {need} environments need one each",
                    iv.targets.len()
                )));
            }
            if iv.factors.len() < need {
                return Err(err(format!(
                    "environments.intervention.factors has {} entries, {need} environments need one each",
                    iv.factors.len()
                )));
            }
            for &(i, j) in &iv.targets {
                if i >= p || j >= p {
                    return Err(err(format!(
                        "intervention target ({i}, {j}) is outside the {p}x{p} kernel matrix"
                    )));
                }
            }
            for &f in &iv.factors {
                if !(f.is_finite() && f >= 0.0) {
                    return Err(err("intervention factors must be nonnegative and finite"));
                }
            }
        }

        let est = &self.estimation;
        if est.n_freq < 4 || !est.n_freq.is_power_of_two() {
            return Err(err("estimation.n_freq must be a power of two, at least 4"));
        }
        if est.segments == Some(0) {
            return Err(err("estimation.segments must be at least 1"));
        }
        if est.cumulant_orders.is_empty() {
            return Err(err("estimation.cumulant_orders must not be empty"));
        }
        for &d in &est.cumulant_orders {
            if !(2..=4).contains(&d) {
                return Err(err(format!(
                    "estimation.cumulant_orders entry {d} is outside 2..=4"
                )));
            }
        }
        if let Some(rank) = est.cp.rank {
            if rank == 0 {
                return Err(err("estimation.cp.rank must be at least 1"));
            }
        }
        if est.cp.restarts == 0 {
            return Err(err("estimation.cp.restarts must be at least 1"));
        }
        if !(est.cp.tol.is_finite() && est.cp.tol > 0.0) {
            return Err(err("estimation.cp.tol must be positive"));
        }

        let ident = &self.identify;
        if let Some(t) = ident.rank_threshold {
            if !(t.is_finite() && t > 0.0) {
                return Err(err("identify.rank_threshold must be positive"));
            }
        }
        if ident.snapshot_frequencies.is_empty() {
            return Err(err("identify.snapshot_frequencies must not be empty"));
        }
        for &w in &ident.snapshot_frequencies {
            if !(w.is_finite() && (0.0..std::f64::consts::TAU).contains(&w)) {
                return Err(err(format!(
                    "snapshot frequency {w} is outside [0, 2pi)"
                )));
            }
        }

        if let Some(conv) = &self.evaluation.convergence {
            if conv.deltas.is_empty()
                || conv.deltas.iter().any(|&d| !(d.is_finite() && d > 0.0))
                || conv.deltas.windows(2).any(|w| w[1] >= w[0])
            {
                return Err(err(
                    "evaluation.convergence.deltas must be positive and strictly decreasing",
                ));
            }
            if !(conv.horizon.is_finite() && conv.horizon > 0.0) {
                return Err(err("evaluation.convergence.horizon must be positive"));
            }
            if conv.seeds.is_empty() {
                return Err(err("evaluation.convergence.seeds must not be empty"));
            }
        }

        if self.output_dir.as_os_str().is_empty() {
            return Err(err("output_dir must not be empty"));
        }
        if let Some(t) = self.threads {
            if t == 0 {
                return Err(err("threads must be at least 1 when given"));
            }
        }
        Ok(())
    }
}

/// Hex SHA-256 of the raw config document, recorded in the run manifest.
pub fn config_digest(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    let out = h.finalize();
    let mut hex = String::with_capacity(64);
    for b in out {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> String {
        r#"{
            "model": {
                "baseline": [0.2, 0.3],
                "kernels": [
                    [{"kind": "Exponential", "params": {"alpha": 0.3, "beta": 1.0}}, {"kind": "Zero"}],
                    [{"kind": "Zero"}, {"kind": "Zero"}]
                ]
            },
            "mixing": {"kind": "Linear", "n": 4, "seed": 7},
            "simulation": {"horizon": 500.0, "delta": 0.1, "seeds": [1, 2]},
            "environments": {
                "count": 2,
                "intervention": {"kind": "Soft", "targets": [[0, 0]], "factors": [1.5]}
            },
            "output_dir": "out"
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = PipelineConfig::from_str(&minimal()).unwrap();
        assert_eq!(cfg.estimation.n_freq, 256);
        assert_eq!(cfg.estimation.segments, None);
        assert_eq!(cfg.estimation.cumulant_orders, vec![2, 3]);
        assert_eq!(cfg.estimation.cp.rank, None);
        assert_eq!(cfg.identify.snapshot_frequencies.len(), 3);
        assert!(cfg.evaluation.convergence.is_some());
        assert!(matches!(cfg.simulation.noise, NoiseCfg::Poisson));
    }

    #[test]
    fn unknown_fields_are_rejected_with_position() {
        let bad = minimal().replace("\"output_dir\"", "\"bogus\": 1, \"output_dir\"");
        let e = PipelineConfig::from_str(&bad).unwrap_err();
        assert!(e.0.contains("line"), "want position in: {}", e.0);
        assert!(e.0.contains("bogus"), "want field name in: {}", e.0);
    }

    #[test]
    fn model_must_come_from_exactly_one_source() {
        let both = minimal().replace(
            "\"baseline\"",
            "\"path\": \"m.json\", \"baseline\"",
        );
        assert!(PipelineConfig::from_str(&both).is_err());
    }

    #[test]
    fn intervention_is_required_for_extra_environments() {
        let cfg = minimal().replace(
            r#""count": 2,
                "intervention": {"kind": "Soft", "targets": [[0, 0]], "factors": [1.5]}"#,
            r#""count": 3,
                "intervention": {"kind": "Soft", "targets": [[0, 0]], "factors": [1.5]}"#,
        );
        let e = PipelineConfig::from_str(&cfg).unwrap_err();
        assert!(e.0.contains("targets"), "got: {}", e.0);
    }

    #[test]
    fn out_of_range_target_is_rejected() {
        let cfg = minimal().replace("[[0, 0]]", "[[0, 5]]");
        let e = PipelineConfig::from_str(&cfg).unwrap_err();
        assert!(e.0.contains("outside"), "got: {}", e.0);
    }

    #[test]
    fn unstable_kernels_still_pass_static_validation() {
        let cfg = minimal().replace("\"alpha\": 0.3", "\"alpha\": 1.2");
        assert!(PipelineConfig::from_str(&cfg).is_ok());
    }

    #[test]
    fn digest_is_stable_and_hex() {
        let a = config_digest("abc");
        assert_eq!(a.len(), 64);
        assert_eq!(a, config_digest("abc"));
        assert_ne!(a, config_digest("abd"));
        assert_eq!(
            a,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn bad_n_freq_is_a_config_error() {
        let cfg = minimal().replace(
            "\"output_dir\"",
            "\"estimation\": {\"n_freq\": 100}, \"output_dir\"",
        );
        let e = PipelineConfig::from_str(&cfg).unwrap_err();
        assert!(e.0.contains("power of two"), "got: {}", e.0);
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = PipelineConfig::from_str(&minimal()).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = PipelineConfig::from_str(&text).unwrap();
        assert_eq!(back.simulation.seeds, cfg.simulation.seeds);
        assert_eq!(back.estimation.n_freq, cfg.estimation.n_freq);
    }
}
