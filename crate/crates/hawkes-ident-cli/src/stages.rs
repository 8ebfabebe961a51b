//! The five pipeline stages. Every stage reads files written by earlier
//! stages (never in-process state), writes its own artifacts atomically, and
//! returns the relative paths it produced, in deterministic order.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use hawkes_ident::cumulants::{cp_decompose, estimate_cumulant};
use hawkes_ident::evaluate::{convergence_suite, kernel_error, mcc};
use hawkes_ident::identify::{
    align, assemble_polysystem, embed_kernel_dag, recover_baseline, solve_kernels,
    variety_dimension, Alignment, EnvironmentSet, IdentReport,
};
use hawkes_ident::io;
use hawkes_ident::model::{HawkesModel, KernelSpec};
use hawkes_ident::simulate::{
    make_generic_linear, make_generic_mlp, mix, simulate, simulate_inar, MixingMap, Observation,
};
use hawkes_ident::spectral::{
    discrete_coefficients, estimate_psd, wilson_factorize, SpectralDensity, SpectralError,
    SpectralFactor,
};
use hawkes_ident::Cplx;

use crate::config::{
    InterventionKind, MixingCfg, PipelineConfig, PreprocessCfg,
};

/// Offset between the stochastic streams of consecutive environments, large
/// enough that explicit config seeds never collide across environments.
const ENV_SEED_STRIDE: u64 = 1 << 20;

/// Convergence tolerance and iteration cap for the minimum-phase
/// factorization of estimated (hence noisy) spectra.
const WILSON_TOL: f64 = 1e-7;
const WILSON_MAX_ITER: usize = 500;
/// Estimated spectra sit slightly off the exactly-factorable manifold, so
/// the iteration can plateau at a data-dependent floor. Floors above this
/// mean the spectra are too rough to trust at all.
const WILSON_FLOOR_CAP: f64 = 0.5;

pub struct Ctx {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
}

impl Ctx {
    pub fn new(cfg: PipelineConfig, out: PathBuf) -> Self {
        Self { cfg, out }
    }

    fn abs(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn model_name(env: usize) -> String {
        if env == 0 {
            "model.json".to_string()
        } else {
            format!("model_env{env}.json")
        }
    }

    fn events_name(env: usize, seed: u64) -> String {
        format!("events_env{env}_seed{seed}.csv")
    }

    fn counts_name(env: usize, seed: u64) -> String {
        format!("counts_env{env}_seed{seed}.csv")
    }

    fn observations_name(env: usize, seed: u64) -> String {
        format!("observations_env{env}_seed{seed}.csv")
    }

    fn spectra_name(env: usize, seed: u64) -> String {
        format!("spectra_env{env}_seed{seed}.json")
    }

    fn cumulant_name(order: usize, seed: u64) -> String {
        format!("cumulant_order{order}_seed{seed}.json")
    }

    fn cp_name(seed: u64) -> String {
        format!("cp_seed{seed}.json")
    }

    fn report_name(seed: u64) -> String {
        format!("ident_report_seed{seed}.json")
    }

    fn kernels_name(seed: u64) -> String {
        format!("kernels_seed{seed}.json")
    }

    /// Model with the environment's intervention applied; environment 0 is
    /// the untouched reference.
    fn env_model(&self, base: &HawkesModel<f64>, env: usize) -> Result<HawkesModel<f64>> {
        if env == 0 {
            return Ok(base.clone());
        }
        let iv = self
            .cfg
            .environments
            .intervention
            .as_ref()
            .ok_or_else(|| anyhow!("environment {env} has no intervention"))?;
        let (i, j) = iv.targets[env - 1];
        let factor = iv.factors[env - 1];
        let mut kernels = base.kernels.clone();
        kernels[i][j] = edited_kernel(&kernels[i][j], iv.kind, factor);
        let baseline: Vec<f64> = base.baseline.iter().copied().collect();
        HawkesModel::new(baseline, kernels).map_err(|e| anyhow!("environment {env} model: {e}"))
    }

    fn build_mixing(&self, p: usize) -> Result<MixingMap<f64>> {
        let map = match &self.cfg.mixing {
            MixingCfg::Linear { n, seed } => make_generic_linear(*n, p, *seed)?,
            MixingCfg::Mlp {
                n,
                layers,
                slope,
                seed,
            } => make_generic_mlp(*n, p, *layers, *slope, *seed)?,
            MixingCfg::File { path } => {
                let map: MixingMap<f64> = io::read_mixing(path)
                    .with_context(|| format!("mixing file {}", path.display()))?;
                if map.input_dim() != p {
                    bail!(
                        "mixing file expects {} latent processes, model has {p}",
                        map.input_dim()
                    );
                }
                map
            }
        };
        Ok(map)
    }

    fn intervention_note(&self, env: usize) -> String {
        if env == 0 {
            return "reference".to_string();
        }
        match &self.cfg.environments.intervention {
            Some(iv) => {
                let (i, j) = iv.targets[env - 1];
                let word = match iv.kind {
                    InterventionKind::Hard => "hard",
                    InterventionKind::Soft => "soft",
                };
                format!("{word} ({i},{j}) factor {}", iv.factors[env - 1])
            }
            None => String::new(),
        }
    }
}

fn env_seed(seed: u64, env: usize) -> u64 {
    seed.wrapping_add(ENV_SEED_STRIDE.wrapping_mul(env as u64))
}

fn edited_kernel(spec: &KernelSpec<f64>, kind: InterventionKind, factor: f64) -> KernelSpec<f64> {
    use InterventionKind::{Hard, Soft};
    use KernelSpec::{Exponential, PowerLaw, Rectangular, Zero};
    match (kind, spec.clone()) {
        (Hard, Zero) => Exponential {
            alpha: factor,
            beta: 1.0,
        },
        (Hard, Exponential { beta, .. }) => Exponential {
            alpha: factor,
            beta,
        },
        (Hard, PowerLaw { beta, c, .. }) => PowerLaw {
            alpha: factor,
            beta,
            c,
        },
        (Hard, Rectangular { start, end, .. }) => Rectangular {
            height: factor,
            start,
            end,
        },
        (Soft, Zero) => Zero,
        (Soft, Exponential { alpha, beta }) => Exponential {
            alpha: alpha * factor,
            beta,
        },
        (Soft, PowerLaw { alpha, beta, c }) => PowerLaw {
            alpha: alpha * factor,
            beta,
            c,
        },
        (Soft, Rectangular { height, start, end }) => Rectangular {
            height: height * factor,
            start,
            end,
        },
    }
}

fn col_means(x: &DMatrix<f64>) -> DVector<f64> {
    let rows = x.nrows() as f64;
    DVector::from_fn(x.ncols(), |j, _| x.column(j).sum() / rows)
}

fn centered(x: &DMatrix<f64>) -> DMatrix<f64> {
    let means = col_means(x);
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - means[j])
}

fn differenced(x: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows() - 1, x.ncols(), |i, j| {
        x[(i + 1, j)] - x[(i, j)]
    })
}

fn preprocessed(x: &DMatrix<f64>, kind: PreprocessCfg) -> DMatrix<f64> {
    match kind {
        PreprocessCfg::Center => centered(x),
        PreprocessCfg::Difference => differenced(x),
    }
}

/// Nearest spectral grid index for a frequency in radians per bin.
fn grid_index(theta: f64, n_freq: usize) -> usize {
    let raw = (theta / std::f64::consts::TAU * n_freq as f64).round() as usize;
    raw % n_freq
}

/// `[Re; Im]` stacking, which preserves the Frobenius norm of a complex
/// matrix so real-matrix error metrics apply unchanged.
fn stack_complex(m: &DMatrix<Cplx<f64>>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    DMatrix::from_fn(2 * r, c, |i, j| {
        if i < r {
            m[(i, j)].re
        } else {
            m[(i - r, j)].im
        }
    })
}

/// `sum_tau A_tau e^{-i theta tau}`: the count-feedback symbol whose transfer
/// is `(I - symbol)^{-1}`.
fn feedback_symbol(coeffs: &[DMatrix<f64>], theta: f64) -> DMatrix<Cplx<f64>> {
    let p = coeffs[0].nrows();
    let mut out = DMatrix::<Cplx<f64>>::zeros(p, p);
    for (idx, a) in coeffs.iter().enumerate() {
        let tau = (idx + 1) as f64;
        let phase = Cplx::new((theta * tau).cos(), -(theta * tau).sin());
        for i in 0..p {
            for j in 0..p {
                out[(i, j)] += phase * a[(i, j)];
            }
        }
    }
    out
}

/// Minimum-phase factorization of an estimated density. Sampling noise
/// leaves such spectra slightly off the exactly-factorable manifold, so when
/// the iteration plateaus above the requested tolerance, the plateau itself
/// is accepted as the achievable residual and the factor at that fixed point
/// is returned; the residual is preserved in the factor for reporting.
fn factorize_estimated(s: &SpectralDensity<f64>) -> Result<SpectralFactor<f64>, SpectralError> {
    match wilson_factorize(s, WILSON_TOL, WILSON_MAX_ITER, None) {
        Ok(f) => Ok(f),
        Err(SpectralError::NonConvergence { residual, .. }) if residual < WILSON_FLOOR_CAP => {
            wilson_factorize(s, residual * 1.05, 4 * WILSON_MAX_ITER, None)
        }
        Err(e) => Err(e),
    }
}

/// Permutation-and-scale matrix sending recovered latent coordinates onto
/// reference coordinates; `None` when a matched scale is numerically zero.
fn alignment_matrix(al: &Alignment<f64>, p: usize) -> Option<DMatrix<f64>> {
    if al.permutation.len() != p || al.scales.len() != p {
        return None;
    }
    if al.scales.iter().any(|s| s.abs() < 1e-12) {
        return None;
    }
    let mut a = DMatrix::<f64>::zeros(p, p);
    for t in 0..p {
        a[(t, al.permutation[t])] = al.scales[t];
    }
    Some(a)
}

pub fn cmd_simulate(ctx: &Ctx) -> Result<Vec<String>> {
    let base = ctx.cfg.build_model()?;
    let p = base.p();
    let mixing = ctx.build_mixing(p)?;
    let sim = &ctx.cfg.simulation;
    let noise = sim.noise.to_noise();
    let n_envs = ctx.cfg.environments.count;

    let mut artifacts = Vec::new();
    let mut models = Vec::with_capacity(n_envs);
    for k in 0..n_envs {
        let m = ctx.env_model(&base, k)?;
        let name = Ctx::model_name(k);
        io::write_model(&ctx.abs(&name), &m)?;
        artifacts.push(name);
        models.push(m);
    }
    io::write_mixing(&ctx.abs("mixing.json"), &mixing)?;
    artifacts.push("mixing.json".to_string());

    let jobs: Vec<(usize, u64)> = (0..n_envs)
        .flat_map(|k| sim.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let written: Vec<Vec<String>> = jobs
        .par_iter()
        .map(|&(k, s)| -> Result<Vec<String>> {
            let m = &models[k];
            let es = env_seed(s, k);
            let events = simulate(m, sim.horizon, es)
                .with_context(|| format!("environment {k}, seed {s}"))?;
            let counts = simulate_inar(m, sim.delta, sim.horizon, &noise, es)
                .with_context(|| format!("environment {k}, seed {s}"))?
                .0;
            let obs = mix(&counts, &mixing)?;
            let names = [
                Ctx::events_name(k, s),
                Ctx::counts_name(k, s),
                Ctx::observations_name(k, s),
            ];
            io::write_events(&ctx.abs(&names[0]), &events)?;
            io::write_counts(&ctx.abs(&names[1]), &counts)?;
            io::write_observation(&ctx.abs(&names[2]), &obs)?;
            Ok(names.to_vec())
        })
        .collect::<Result<_>>()?;
    artifacts.extend(written.into_iter().flatten());
    Ok(artifacts)
}

pub fn cmd_estimate(ctx: &Ctx) -> Result<Vec<String>> {
    let mixing: MixingMap<f64> = io::read_mixing(&ctx.abs("mixing.json"))?;
    let n = mixing.output_dim();
    let est = &ctx.cfg.estimation;
    let p = mixing.input_dim();
    let rank = est.cp.rank.unwrap_or(p);
    let cp_order = *est.cumulant_orders.iter().max().expect("validated");
    let n_envs = ctx.cfg.environments.count;
    let taper = est.taper.to_taper();

    let jobs: Vec<(usize, u64)> = (0..n_envs)
        .flat_map(|k| ctx.cfg.simulation.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let spectra: Vec<String> = jobs
        .par_iter()
        .map(|&(k, s)| -> Result<String> {
            let obs: Observation<f64> =
                io::read_observation(&ctx.abs(&Ctx::observations_name(k, s)), n)?;
            let segments = est.segments.unwrap_or(obs.data.nrows() / est.n_freq);
            let psd = estimate_psd(&obs.data, est.n_freq, taper, segments)
                .with_context(|| format!("spectra, environment {k}, seed {s}"))?;
            let name = Ctx::spectra_name(k, s);
            io::write_spectra(&ctx.abs(&name), &psd)?;
            Ok(name)
        })
        .collect::<Result<_>>()?;

    // Cumulants and the factor decomposition describe the mixing, which is
    // shared across environments, so the reference environment suffices.
    let factor_files: Vec<Vec<String>> = ctx
        .cfg
        .simulation
        .seeds
        .par_iter()
        .map(|&s| -> Result<Vec<String>> {
            let obs: Observation<f64> =
                io::read_observation(&ctx.abs(&Ctx::observations_name(0, s)), n)?;
            let pre = Observation {
                delta: obs.delta,
                data: preprocessed(&obs.data, est.preprocess),
            };
            let mut names = Vec::new();
            let mut cp_input = None;
            for &order in &est.cumulant_orders {
                let tensor = estimate_cumulant(&pre, order, &vec![0; order - 1])
                    .with_context(|| format!("order-{order} cumulant, seed {s}"))?;
                let name = Ctx::cumulant_name(order, s);
                io::write_cumulant(&ctx.abs(&name), &tensor)?;
                names.push(name);
                if order == cp_order {
                    cp_input = Some(tensor);
                }
            }
            let tensor = cp_input.expect("cp order comes from cumulant_orders");
            let cp = cp_decompose(&tensor, rank, est.cp.restarts, est.cp.tol)
                .with_context(|| format!("factor decomposition, seed {s}"))?;
            let name = Ctx::cp_name(s);
            io::write_cp(&ctx.abs(&name), &cp)?;
            names.push(name);
            Ok(names)
        })
        .collect::<Result<_>>()?;

    let mut artifacts = spectra;
    artifacts.extend(factor_files.into_iter().flatten());
    Ok(artifacts)
}

/// Kernel snapshots solved per frequency and environment, with the direct
/// transfer inversion kept as fallback when the structural solve is refused.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelSnapshotsDoc {
    pub p: usize,
    pub requested_frequencies: Vec<f64>,
    /// Nearest spectral grid frequencies actually used.
    pub grid_frequencies: Vec<f64>,
    /// Whether the structural solve ran at each frequency.
    pub solved: Vec<bool>,
    pub solve_residuals: Vec<Option<f64>>,
    /// `[frequency][environment]`, row-major `(re, im)` entries.
    pub snapshots: Vec<Vec<Vec<(f64, f64)>>>,
}

fn snapshot_entries(m: &DMatrix<Cplx<f64>>) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push((m[(i, j)].re, m[(i, j)].im));
        }
    }
    out
}

pub fn cmd_identify(ctx: &Ctx) -> Result<Vec<String>> {
    let model: HawkesModel<f64> = io::read_model(&ctx.abs("model.json"))?;
    let p = model.p();
    let n_envs = ctx.cfg.environments.count;
    let seeds = &ctx.cfg.simulation.seeds;

    let per_seed: Vec<(Vec<String>, IdentReport<f64>)> = seeds
        .par_iter()
        .map(|&s| identify_one_seed(ctx, p, n_envs, s))
        .collect::<Result<_>>()?;

    let mut artifacts: Vec<String> = Vec::new();
    for (names, _) in &per_seed {
        artifacts.extend(names.iter().cloned());
    }
    // The headline report is the first seed's; per-seed files keep the rest.
    io::write_json(&ctx.abs("ident_report.json"), &per_seed[0].1)?;
    artifacts.push("ident_report.json".to_string());
    Ok(artifacts)
}

fn identify_one_seed(
    ctx: &Ctx,
    p: usize,
    n_envs: usize,
    seed: u64,
) -> Result<(Vec<String>, IdentReport<f64>)> {
    let est = &ctx.cfg.estimation;
    let ident = &ctx.cfg.identify;
    let cp: hawkes_ident::CpFactors64 = io::read_cp(&ctx.abs(&Ctx::cp_name(seed)))?;
    if cp.rank != p {
        bail!(
            "identification needs a rank-{p} factor decomposition, file has rank {}",
            cp.rank
        );
    }
    let f_hat = cp.factors.clone();
    let n = f_hat.nrows();

    let svd = f_hat.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let pinv = svd
        .pseudo_inverse(smax * 1e-12)
        .map_err(|e| anyhow!("mixing pseudo-inverse: {e}"))?;
    let pinv_c = pinv.map(|v| Cplx::new(v, 0.0));

    // Latent spectra by congruence: identical to re-estimating the density
    // of the projected series, because the estimator is quadratic in the data.
    let mut phis: Vec<Vec<DMatrix<Cplx<f64>>>> =
        vec![Vec::with_capacity(n_envs); ident.snapshot_frequencies.len()];
    let mut h0_reference: Option<DMatrix<f64>> = None;
    let mut grid_used: Vec<f64> = Vec::new();
    for k in 0..n_envs {
        let s_obs: hawkes_ident::Spectrum64 =
            io::read_spectra(&ctx.abs(&Ctx::spectra_name(k, seed)))?;
        if s_obs.p() != n {
            bail!(
                "spectra for environment {k} are {}-dimensional, mixing has {n} rows",
                s_obs.p()
            );
        }
        let projected: Vec<DMatrix<Cplx<f64>>> = s_obs
            .matrices
            .iter()
            .map(|m| {
                let a = &pinv_c * m * pinv_c.adjoint();
                (&a + a.adjoint()).map(|v| v * 0.5)
            })
            .collect();
        let latent = hawkes_ident::Spectrum64::new(projected)
            .map_err(|e| anyhow!("projected spectra, environment {k}: {e}"))?;
        let factor = factorize_estimated(&latent)
            .map_err(|e| anyhow!("spectral factorization, environment {k}: {e}"))?;
        let n_freq = latent.n_freq();
        let eye = DMatrix::<Cplx<f64>>::identity(p, p);
        for (m_idx, &w) in ident.snapshot_frequencies.iter().enumerate() {
            let g_idx = grid_index(w, n_freq);
            if k == 0 {
                grid_used.push(std::f64::consts::TAU * g_idx as f64 / n_freq as f64);
            }
            let h = factor.g[g_idx].clone();
            let hinv = h
                .try_inverse()
                .ok_or_else(|| anyhow!("singular transfer at frequency index {g_idx}"))?;
            phis[m_idx].push(&eye - hinv);
        }
        if k == 0 {
            h0_reference = Some(factor.g[0].map(|v| v.re));
        }
    }

    // One structural solve per snapshot frequency over all environments.
    let dag = embed_kernel_dag(&DMatrix::from_element(p, p, 1.0))?;
    let mut solved = Vec::new();
    let mut residuals = Vec::new();
    let mut snapshots = Vec::new();
    let mut report_dim = None;
    let mut report_block = None;
    let mut report_residual = -1.0;
    for (m_idx, phi_set) in phis.iter().enumerate() {
        let mut envs = EnvironmentSet::bipartite(&f_hat, phi_set, &dag)?;
        for k in 0..n_envs {
            envs.set_intervention(k, ctx.intervention_note(k));
        }
        let systems = assemble_polysystem(&envs)?;
        let dim = variety_dimension(&systems, ident.rank_threshold);
        let solvable = dim.identifiable();
        let mut row = Vec::with_capacity(n_envs);
        if solvable {
            let sol = solve_kernels(&envs, &dim)?;
            for k in 0..n_envs {
                row.push(sol.kernel_block(k, p));
            }
            residuals.push(Some(sol.residual));
            if m_idx == 0 {
                report_block = Some(row[0].clone());
                report_residual = sol.residual;
            }
        } else {
            row.extend(phi_set.iter().cloned());
            residuals.push(None);
            if m_idx == 0 {
                report_block = Some(phi_set[0].clone());
            }
        }
        solved.push(solvable);
        snapshots.push(row.iter().map(snapshot_entries).collect::<Vec<_>>());
        if m_idx == 0 {
            report_dim = Some(dim);
        }
    }

    let obs0: Observation<f64> =
        io::read_observation(&ctx.abs(&Ctx::observations_name(0, seed)), n)?;
    let mean = col_means(&obs0.data);
    let h0 = h0_reference.expect("reference environment processed");
    let baseline = recover_baseline(&mean, &f_hat, &h0, ctx.cfg.simulation.delta)?;

    let counts0 = io::read_counts(&ctx.abs(&Ctx::counts_name(0, seed)), p)?;
    let truth = preprocessed(&counts0.to_real(), est.preprocess);
    let z_hat = preprocessed(&(&obs0.data * pinv.transpose()), est.preprocess);
    let score = mcc(&z_hat, &truth, ctx.cfg.evaluation.method.to_method())?;
    let alignment = align(&z_hat, &truth)?;

    let report = IdentReport::new(
        &report_dim.expect("at least one snapshot frequency"),
        &report_block.expect("at least one snapshot frequency"),
        report_residual,
        &baseline,
        alignment,
        score.score,
    );
    let doc = KernelSnapshotsDoc {
        p,
        requested_frequencies: ident.snapshot_frequencies.clone(),
        grid_frequencies: grid_used,
        solved,
        solve_residuals: residuals,
        snapshots,
    };
    let report_name = Ctx::report_name(seed);
    let kernels_name = Ctx::kernels_name(seed);
    io::write_json(&ctx.abs(&report_name), &report)?;
    io::write_json(&ctx.abs(&kernels_name), &doc)?;
    Ok((vec![report_name, kernels_name], report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelErrorEntry {
    pub env: usize,
    pub frequency: f64,
    pub value: f64,
    /// True when the reference kernel is zero and the error is absolute.
    pub absolute: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedScore {
    pub seed: u64,
    pub mcc: f64,
    /// Mean matched absolute cosine between recovered and true latents.
    pub similarity: f64,
    /// False when the alignment was too degenerate to apply to kernels.
    pub aligned: bool,
    pub kernel_errors: Vec<KernelErrorEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoresDoc {
    pub method: String,
    pub seeds: Vec<SeedScore>,
    pub mean_mcc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRowDoc {
    pub delta: f64,
    pub mean_rate_gap: f64,
    pub variance_gap: f64,
    pub energy_distance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceSeedDoc {
    pub seed: u64,
    pub rows: Vec<ConvergenceRowDoc>,
}

pub fn cmd_evaluate(ctx: &Ctx) -> Result<Vec<String>> {
    let model: HawkesModel<f64> = io::read_model(&ctx.abs("model.json"))?;
    let p = model.p();
    let n_envs = ctx.cfg.environments.count;
    let delta = ctx.cfg.simulation.delta;

    // Reference kernel symbols per environment, from the persisted models.
    let mut truth_coeffs = Vec::with_capacity(n_envs);
    for k in 0..n_envs {
        let mk: HawkesModel<f64> = io::read_model(&ctx.abs(&Ctx::model_name(k)))?;
        truth_coeffs.push(discrete_coefficients(&mk, delta));
    }

    let mut seed_scores = Vec::new();
    for &s in &ctx.cfg.simulation.seeds {
        let report: IdentReport<f64> = io::read_json(&ctx.abs(&Ctx::report_name(s)))?;
        let doc: KernelSnapshotsDoc = io::read_json(&ctx.abs(&Ctx::kernels_name(s)))?;
        if doc.p != p {
            bail!("kernel snapshots for seed {s} have p = {}, model has {p}", doc.p);
        }
        let align_mx = alignment_matrix(&report.alignment, p);
        let align_inv = align_mx.as_ref().and_then(|a| a.clone().try_inverse());
        let aligned = align_mx.is_some() && align_inv.is_some();
        let mut errors = Vec::new();
        for (m_idx, &w) in doc.grid_frequencies.iter().enumerate() {
            for k in 0..n_envs {
                let entries = &doc.snapshots[m_idx][k];
                let est = DMatrix::from_fn(p, p, |i, j| {
                    let (re, im) = entries[i * p + j];
                    Cplx::new(re, im)
                });
                let est = match (&align_mx, &align_inv) {
                    (Some(a), Some(ai)) => {
                        let ac = a.map(|v| Cplx::new(v, 0.0));
                        let aic = ai.map(|v| Cplx::new(v, 0.0));
                        &ac * est * &aic
                    }
                    _ => est,
                };
                let truth = feedback_symbol(&truth_coeffs[k], w);
                let ke = kernel_error(&stack_complex(&est), &stack_complex(&truth));
                errors.push(KernelErrorEntry {
                    env: k,
                    frequency: w,
                    value: ke.value,
                    absolute: ke.absolute_fallback,
                });
            }
        }
        seed_scores.push(SeedScore {
            seed: s,
            mcc: report.mcc,
            similarity: report.alignment.similarity,
            aligned,
            kernel_errors: errors,
        });
    }
    let mean_mcc = seed_scores.iter().map(|r| r.mcc).sum::<f64>() / seed_scores.len() as f64;
    let scores = ScoresDoc {
        method: format!("{:?}", ctx.cfg.evaluation.method),
        seeds: seed_scores,
        mean_mcc,
    };
    io::write_json(&ctx.abs("scores.json"), &scores)?;
    let mut artifacts = vec!["scores.json".to_string()];

    if let Some(conv) = &ctx.cfg.evaluation.convergence {
        let noise = ctx.cfg.simulation.noise.to_noise();
        let reports =
            convergence_suite(&model, &conv.deltas, conv.horizon, &conv.seeds, &noise)?;
        let docs: Vec<ConvergenceSeedDoc> = reports
            .iter()
            .map(|r| ConvergenceSeedDoc {
                seed: r.seed,
                rows: r
                    .rows
                    .iter()
                    .map(|row| ConvergenceRowDoc {
                        delta: row.delta,
                        mean_rate_gap: row.mean_rate_gap,
                        variance_gap: row.variance_gap,
                        energy_distance: row.energy_distance,
                    })
                    .collect(),
            })
            .collect();
        io::write_json(&ctx.abs("convergence.json"), &docs)?;
        // The CSV aggregates seeds: one row per delta, gaps averaged.
        let n_seeds = reports.len() as f64;
        let mean_rows: Vec<hawkes_ident::evaluate::ConvergenceRow<f64>> = (0..conv.deltas.len())
            .map(|i| hawkes_ident::evaluate::ConvergenceRow {
                delta: conv.deltas[i],
                mean_rate_gap: reports.iter().map(|r| r.rows[i].mean_rate_gap).sum::<f64>()
                    / n_seeds,
                variance_gap: reports.iter().map(|r| r.rows[i].variance_gap).sum::<f64>()
                    / n_seeds,
                energy_distance: reports
                    .iter()
                    .map(|r| r.rows[i].energy_distance)
                    .sum::<f64>()
                    / n_seeds,
            })
            .collect();
        let aggregate = hawkes_ident::evaluate::ConvergenceReport {
            seed: conv.seeds[0],
            rows: mean_rows,
        };
        io::write_convergence_csv(&ctx.abs("convergence.csv"), &aggregate)?;
        artifacts.push("convergence.json".to_string());
        artifacts.push("convergence.csv".to_string());
    }
    Ok(artifacts)
}
