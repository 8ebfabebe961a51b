//! Multi-environment identification of the latent autoregressive structure.
//!
//! The estimation stages deliver, for every environment, a snapshot of the
//! observed transfer `K = F H` at a chosen frequency or lag. This module
//! decides whether those snapshots pin the kernel entries down (a numerical
//! variety-dimension test on per-node linear systems), solves for the entries
//! and the baseline when they do, and aligns recovered factors against ground
//! truth for scoring.
//!
//! The driving structure is a directed acyclic graph on the latent
//! coordinates. Matrices follow the column-source convention throughout:
//! entry `(i, c)` is the weight of the edge from node `c` to node `i`, so a
//! column lists the out-edges of its node. For the one-lag count model the
//! graph is bipartite (lagged counts on one side, present counts on the
//! other) and [`embed_kernel_dag`] builds its `2p x 2p` matrix from a kernel
//! snapshot.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::max_weight_assignment;
use crate::numeric::rank_from_singular_values;
use crate::{Cplx, Scalar};

/// Entries at or below this magnitude count as structural zeros when reading
/// edge patterns off a kernel snapshot.
pub const EDGE_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum IdentifyError {
    #[error("kernel snapshot must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("need at least two environments, got {0}")]
    TooFewEnvironments(usize),
    #[error("environment {index} has shape {got_rows}x{got_cols}, expected {rows}x{cols}")]
    ShapeMismatch {
        index: usize,
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("variety dimension {dim} > 0: kernel entries under-determined, refusing to solve")]
    NotZeroDimensional { dim: usize },
    #[error("mixing estimate has column rank {rank} < {cols}")]
    RankDeficientMixing { rank: usize, cols: usize },
    #[error("zero-frequency transfer is singular")]
    SingularTransfer,
    #[error("{0}")]
    Shape(String),
}

/// Bipartite one-lag graph on `2p` nodes with the kernel snapshot in the
/// upper-right block.
///
/// Sources are the lagged counts (columns `p..2p`), targets the present
/// counts (rows `0..p`), so the matrix is strictly upper triangular and
/// `m * m` vanishes exactly. `child_sets[j]` lists the targets excited by
/// source `j`, read off column `j` of the snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDag<T: Scalar> {
    pub p: usize,
    pub m: DMatrix<T>,
    pub child_sets: Vec<Vec<usize>>,
}

/// Embeds a `p x p` kernel snapshot into its bipartite one-lag graph.
pub fn embed_kernel_dag<T: Scalar>(phi: &DMatrix<T>) -> Result<KernelDag<T>, IdentifyError> {
    let p = phi.nrows();
    if phi.ncols() != p {
        return Err(IdentifyError::NotSquare {
            rows: p,
            cols: phi.ncols(),
        });
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(IdentifyError::NonFinite);
    }
    let mut m = DMatrix::<T>::zeros(2 * p, 2 * p);
    let mut child_sets = vec![Vec::new(); p];
    let thresh = T::lit(EDGE_THRESHOLD);
    for j in 0..p {
        for i in 0..p {
            m[(i, p + j)] = phi[(i, j)];
            if phi[(i, j)].abs() > thresh {
                child_sets[j].push(i);
            }
        }
    }
    Ok(KernelDag { p, m, child_sets })
}

/// Transfer snapshots from several environments over a shared latent graph.
///
/// Each snapshot is the observed transfer of one environment, an
/// `n_rows x n_nodes` complex matrix; environment 0 is the reference. The
/// `support` pattern declares which graph edges may be nonzero
/// (column-source convention), and `f_hat`, when present, is the shared
/// mixing in the same expanded coordinates, which lets the solver use the
/// reference equations directly instead of only environment differences.
#[derive(Debug, Clone)]
pub struct EnvironmentSet<T: Scalar> {
    snapshots: Vec<DMatrix<Cplx<T>>>,
    labels: Vec<String>,
    interventions: Vec<String>,
    f_hat: Option<DMatrix<Cplx<T>>>,
    support: DMatrix<T>,
}

impl<T: Scalar> EnvironmentSet<T> {
    pub fn new(
        snapshots: Vec<DMatrix<Cplx<T>>>,
        labels: Vec<String>,
        interventions: Vec<String>,
        f_hat: Option<DMatrix<Cplx<T>>>,
        support: DMatrix<T>,
    ) -> Result<Self, IdentifyError> {
        if snapshots.is_empty() {
            return Err(IdentifyError::TooFewEnvironments(0));
        }
        let rows = snapshots[0].nrows();
        let nodes = snapshots[0].ncols();
        for (index, s) in snapshots.iter().enumerate() {
            if s.nrows() != rows || s.ncols() != nodes {
                return Err(IdentifyError::ShapeMismatch {
                    index,
                    rows,
                    cols: nodes,
                    got_rows: s.nrows(),
                    got_cols: s.ncols(),
                });
            }
        }
        if support.nrows() != nodes || support.ncols() != nodes {
            return Err(IdentifyError::Shape(format!(
                "support is {}x{}, expected {nodes}x{nodes}",
                support.nrows(),
                support.ncols()
            )));
        }
        if let Some(f) = &f_hat {
            if f.nrows() != rows || f.ncols() != nodes {
                return Err(IdentifyError::Shape(format!(
                    "mixing estimate is {}x{}, expected {rows}x{nodes}",
                    f.nrows(),
                    f.ncols()
                )));
            }
        }
        if labels.len() != snapshots.len() || interventions.len() != snapshots.len() {
            return Err(IdentifyError::Shape(
                "labels and interventions must match the environment count".into(),
            ));
        }
        Ok(Self {
            snapshots,
            labels,
            interventions,
            f_hat,
            support,
        })
    }

    /// Expanded environment set for the bipartite one-lag graph: each
    /// environment contributes a `p x p` kernel snapshot `phi_k`, the mixing
    /// `f` is shared, and the expanded transfer is
    /// `[[F, F phi_k], [0, F]]` with mixing `[[F, 0], [0, F]]`.
    pub fn bipartite(
        f: &DMatrix<T>,
        phis: &[DMatrix<Cplx<T>>],
        dag: &KernelDag<T>,
    ) -> Result<Self, IdentifyError> {
        let n = f.nrows();
        let p = f.ncols();
        if dag.p != p {
            return Err(IdentifyError::Shape(format!(
                "graph has {} processes, mixing has {p} columns",
                dag.p
            )));
        }
        let fc = f.map(|v| Cplx::new(v, T::zero()));
        let mut snapshots = Vec::with_capacity(phis.len());
        for (index, phi) in phis.iter().enumerate() {
            if phi.nrows() != p || phi.ncols() != p {
                return Err(IdentifyError::ShapeMismatch {
                    index,
                    rows: p,
                    cols: p,
                    got_rows: phi.nrows(),
                    got_cols: phi.ncols(),
                });
            }
            let fphi = &fc * phi;
            let mut k = DMatrix::<Cplx<T>>::zeros(2 * n, 2 * p);
            k.view_mut((0, 0), (n, p)).copy_from(&fc);
            k.view_mut((0, p), (n, p)).copy_from(&fphi);
            k.view_mut((n, p), (n, p)).copy_from(&fc);
            snapshots.push(k);
        }
        let mut f_exp = DMatrix::<Cplx<T>>::zeros(2 * n, 2 * p);
        f_exp.view_mut((0, 0), (n, p)).copy_from(&fc);
        f_exp.view_mut((n, p), (n, p)).copy_from(&fc);
        let labels = (0..phis.len()).map(|k| format!("env-{k}")).collect();
        let interventions = vec![String::new(); phis.len()];
        Self::new(
            snapshots,
            labels,
            interventions,
            Some(f_exp),
            dag.m.clone(),
        )
    }

    pub fn n_environments(&self) -> usize {
        self.snapshots.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.support.nrows()
    }

    pub fn snapshot(&self, k: usize) -> &DMatrix<Cplx<T>> {
        &self.snapshots[k]
    }

    pub fn label(&self, k: usize) -> &str {
        &self.labels[k]
    }

    pub fn intervention(&self, k: usize) -> &str {
        &self.interventions[k]
    }

    pub fn set_intervention(&mut self, k: usize, note: String) {
        self.interventions[k] = note;
    }

    pub fn has_mixing(&self) -> bool {
        self.f_hat.is_some()
    }

    fn children(&self, node: usize) -> Vec<usize> {
        let thresh = T::lit(EDGE_THRESHOLD);
        (0..self.n_nodes())
            .filter(|&i| self.support[(i, node)].abs() > thresh)
            .collect()
    }

    /// Strict descendants of `node`, reachable through at least one edge.
    fn descendants(&self, node: usize) -> Vec<usize> {
        let n = self.n_nodes();
        let mut seen = vec![false; n];
        let mut stack = self.children(node);
        let mut out = Vec::new();
        while let Some(v) = stack.pop() {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            out.push(v);
            stack.extend(self.children(v));
        }
        out.sort_unstable();
        out
    }
}

/// Linear system pinning the reference-environment out-edge weights of one
/// node: `matrix * x = rhs` with one unknown per child.
///
/// Rows come from two sources: the reference equations written against the
/// known mixing (present only when the environment set carries one), and per
/// environment the `|de(j)| - |ch(j)|` eliminated difference equations, whose
/// total is recorded in `elimination_rows`.
#[derive(Debug, Clone)]
pub struct NodeSystem<T: Scalar> {
    pub node: usize,
    pub children: Vec<usize>,
    pub elimination_rows: usize,
    pub matrix: DMatrix<Cplx<T>>,
    pub rhs: DVector<Cplx<T>>,
}

/// Builds the per-node linear systems from environment differences.
///
/// For each node `j` with children `ch(j)`, the difference between the
/// transfer equations of environment `k` and the reference reads
/// `K_k M_k - K_0 M_0 = K_k - K_0` column by column. Vectors orthogonal to
/// the environment-`k` child columns (within the span of the descendant
/// columns, which is environment-independent) eliminate the `M_k` unknowns
/// and leave linear constraints on the reference weights. When the mixing is
/// known, the reference equation `F = K_0 (I - M_0)` contributes one row per
/// observed coordinate as well.
pub fn assemble_polysystem<T: Scalar>(
    envs: &EnvironmentSet<T>,
) -> Result<Vec<NodeSystem<T>>, IdentifyError> {
    if envs.n_environments() < 2 {
        return Err(IdentifyError::TooFewEnvironments(envs.n_environments()));
    }
    let nodes = envs.n_nodes();
    let k0 = envs.snapshot(0);
    let mut systems = Vec::new();
    for c in 0..nodes {
        let children = envs.children(c);
        if children.is_empty() {
            continue;
        }
        let de = envs.descendants(c);
        let mut rows: Vec<Vec<Cplx<T>>> = Vec::new();
        let mut rhs: Vec<Cplx<T>> = Vec::new();

        if let Some(f) = &envs.f_hat {
            for l in 0..k0.nrows() {
                rows.push(children.iter().map(|&i| k0[(l, i)]).collect());
                rhs.push(k0[(l, c)] - f[(l, c)]);
            }
        }

        let mut elimination_rows = 0usize;
        let spare = de.len().saturating_sub(children.len());
        if spare > 0 {
            // Orthonormal basis of the descendant columns of the reference
            // snapshot; the same span holds in every environment.
            let basis_cols = DMatrix::from_fn(k0.nrows(), de.len(), |r, j| k0[(r, de[j])]);
            let v = basis_cols.qr().q();
            for k in 1..envs.n_environments() {
                let kk = envs.snapshot(k);
                let b = DMatrix::from_fn(kk.nrows(), children.len(), |r, j| {
                    kk[(r, children[j])]
                });
                let c_small = v.adjoint() * &b;
                // Left-null directions of the projected child columns; the
                // graph guarantees exactly |de| - |ch| of them generically.
                let gram = &c_small * c_small.adjoint();
                let eig = gram.symmetric_eigen();
                let mut order: Vec<usize> = (0..de.len()).collect();
                order.sort_by(|&a, &b| {
                    eig.eigenvalues[a]
                        .partial_cmp(&eig.eigenvalues[b])
                        .unwrap()
                });
                for &z_idx in order.iter().take(spare) {
                    let z = eig.eigenvectors.column(z_idx);
                    let w = &v * z;
                    let coeffs: Vec<Cplx<T>> = children
                        .iter()
                        .map(|&i| {
                            (0..k0.nrows())
                                .map(|r| w[r].conj() * k0[(r, i)])
                                .sum::<Cplx<T>>()
                        })
                        .collect();
                    let d: Cplx<T> = (0..k0.nrows())
                        .map(|r| w[r].conj() * (kk[(r, c)] - k0[(r, c)]))
                        .sum();
                    rows.push(coeffs);
                    rhs.push(-d);
                    elimination_rows += 1;
                }
            }
        }

        let matrix = DMatrix::from_fn(rows.len(), children.len(), |r, j| rows[r][j]);
        let rhs = DVector::from_vec(rhs);
        systems.push(NodeSystem {
            node: c,
            children,
            elimination_rows,
            matrix,
            rhs,
        });
    }
    Ok(systems)
}

/// Rank diagnostics of one node system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDiagnostic {
    pub node: usize,
    pub n_children: usize,
    pub rank: usize,
    pub augmented_rank_consistent: bool,
}

/// Outcome of the zero-dimensionality test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport {
    /// Remaining solution freedom, summed over nodes.
    pub variety_dim: usize,
    pub per_node: Vec<NodeDiagnostic>,
}

impl DimensionReport {
    /// The system pins every kernel entry and the data are consistent.
    pub fn identifiable(&self) -> bool {
        self.variety_dim == 0 && self.per_node.iter().all(|d| d.augmented_rank_consistent)
    }
}

fn complex_rank<T: Scalar>(m: &DMatrix<Cplx<T>>, rel_tol: Option<T>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let svec: Vec<T> = sv.iter().copied().collect();
    match rel_tol {
        None => rank_from_singular_values(&svec, m.nrows(), m.ncols()),
        Some(tol) => {
            let top = svec.iter().copied().fold(T::zero(), |a, b| a.max(b));
            if top <= T::zero() {
                0
            } else {
                svec.iter().filter(|&&s| s > tol * top).count()
            }
        }
    }
}

/// Per-node degrees of freedom left by the assembled systems.
///
/// Each node contributes `|ch(j)| - rank(M[j])`; the total is the dimension
/// of the solution variety, zero exactly when every kernel entry is pinned.
/// Ranks use singular values with the `max(rows, cols) * eps * sigma_max`
/// cutoff, or `rel_tol * sigma_max` when an explicit tolerance is given
/// (rank statements are exact-arithmetic facts and noisy data may need a
/// looser cut). Inconsistent augmented ranks (`rank([M | b]) > rank(M)`,
/// data off the model manifold) are flagged, never fatal.
pub fn variety_dimension<T: Scalar>(
    systems: &[NodeSystem<T>],
    rel_tol: Option<T>,
) -> DimensionReport {
    let mut per_node = Vec::with_capacity(systems.len());
    let mut dim = 0usize;
    for s in systems {
        let rank = complex_rank(&s.matrix, rel_tol).min(s.children.len());
        let augmented = {
            let mut aug = DMatrix::<Cplx<T>>::zeros(s.matrix.nrows(), s.children.len() + 1);
            aug.view_mut((0, 0), (s.matrix.nrows(), s.children.len()))
                .copy_from(&s.matrix);
            for r in 0..s.matrix.nrows() {
                aug[(r, s.children.len())] = s.rhs[r];
            }
            complex_rank(&aug, rel_tol)
        };
        dim += s.children.len() - rank;
        per_node.push(NodeDiagnostic {
            node: s.node,
            n_children: s.children.len(),
            rank,
            augmented_rank_consistent: augmented <= rank,
        });
    }
    DimensionReport {
        variety_dim: dim,
        per_node,
    }
}

/// Solution freedom of a single passively observed environment, counting the
/// unknown mixing and kernel coordinates that no difference equation
/// constrains: `3 p^2 - 2 p` for `p` processes.
pub fn single_environment_dimension_bound(p: usize) -> usize {
    3 * p * p - 2 * p
}

/// Kernel entries solved from the assembled systems.
#[derive(Debug, Clone)]
pub struct KernelSolution<T: Scalar> {
    /// Edge-weight matrix per environment in graph coordinates (entry
    /// `(i, c)` is the solved weight of edge `c -> i`). Environment 0 comes
    /// from the assembled systems; later environments are solved against the
    /// known mixing and are present only when the environment set has one.
    pub matrices: Vec<DMatrix<Cplx<T>>>,
    /// Aggregate relative least-squares residual over all solved systems.
    pub residual: T,
    /// Mixing implied by the reference solution, `K_0 (I - M_0)`.
    pub f_solved: DMatrix<Cplx<T>>,
}

impl<T: Scalar> KernelSolution<T> {
    /// Upper-right `p x p` block of an environment's solution, the kernel
    /// snapshot when the graph is the bipartite one-lag embedding.
    pub fn kernel_block(&self, env: usize, p: usize) -> DMatrix<Cplx<T>> {
        DMatrix::from_fn(p, p, |i, j| self.matrices[env][(i, p + j)])
    }
}

fn lstsq<T: Scalar>(
    m: &DMatrix<Cplx<T>>,
    b: &DVector<Cplx<T>>,
) -> Result<DVector<Cplx<T>>, IdentifyError> {
    let svd = m.clone().svd(true, true);
    svd.solve(b, T::default_epsilon().sqrt())
        .map_err(|e| IdentifyError::Shape(e.to_string()))
}

/// Solves every assembled node system for the reference kernel entries, and,
/// when the mixing is known, re-solves each later environment against it.
///
/// Refuses when the dimension report leaves any freedom; the least-squares
/// residual aggregates `||M x - b||` over all solved systems relative to
/// `||b||`.
pub fn solve_kernels<T: Scalar>(
    envs: &EnvironmentSet<T>,
    report: &DimensionReport,
) -> Result<KernelSolution<T>, IdentifyError> {
    if report.variety_dim > 0 {
        return Err(IdentifyError::NotZeroDimensional {
            dim: report.variety_dim,
        });
    }
    let systems = assemble_polysystem(envs)?;
    let nodes = envs.n_nodes();
    let mut reference = DMatrix::<Cplx<T>>::zeros(nodes, nodes);
    let mut err_sq = T::zero();
    let mut rhs_sq = T::zero();
    let mut solve_into =
        |m: &DMatrix<Cplx<T>>,
         b: &DVector<Cplx<T>>,
         children: &[usize],
         node: usize,
         out: &mut DMatrix<Cplx<T>>|
         -> Result<(), IdentifyError> {
            let x = lstsq(m, b)?;
            for (pos, &i) in children.iter().enumerate() {
                out[(i, node)] = x[pos];
            }
            let res = m * &x - b;
            err_sq += res.norm_squared();
            rhs_sq += b.norm_squared();
            Ok(())
        };
    for s in &systems {
        solve_into(&s.matrix, &s.rhs, &s.children, s.node, &mut reference)?;
    }

    let mut matrices = vec![reference.clone()];
    if let Some(f) = &envs.f_hat {
        for k in 1..envs.n_environments() {
            let kk = envs.snapshot(k);
            let mut solved = DMatrix::<Cplx<T>>::zeros(nodes, nodes);
            for s in &systems {
                let m = DMatrix::from_fn(kk.nrows(), s.children.len(), |l, j| {
                    kk[(l, s.children[j])]
                });
                let b = DVector::from_fn(kk.nrows(), |l, _| kk[(l, s.node)] - f[(l, s.node)]);
                solve_into(&m, &b, &s.children, s.node, &mut solved)?;
            }
            matrices.push(solved);
        }
    }

    let residual = if rhs_sq > T::zero() {
        (err_sq / rhs_sq).sqrt()
    } else {
        err_sq.sqrt()
    };
    let k0 = envs.snapshot(0);
    let f_solved = k0 - k0 * &reference;
    Ok(KernelSolution {
        matrices,
        residual,
        f_solved,
    })
}

/// Baseline recovered from the first moment of the observations.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineEstimate<T: Scalar> {
    pub u: DVector<T>,
    /// Total magnitude removed by clipping negative coordinates to zero.
    pub clipped_mass: T,
    /// Relative residual of the unclipped least-squares fit.
    pub residual: T,
}

/// Solves `mean(O) = K H(0) u delta` for the baseline `u >= 0`.
///
/// `k_hat` is the mixing estimate and `h0_hat` the zero-frequency transfer
/// of the count model, so their product maps baselines to stationary bin
/// means. Negative solution coordinates are clipped to zero with the removed
/// mass reported; any column scale ambiguity in `k_hat` lands inversely on
/// the matching coordinate of `u`.
pub fn recover_baseline<T: Scalar>(
    obs_mean: &DVector<T>,
    k_hat: &DMatrix<T>,
    h0_hat: &DMatrix<T>,
    delta: T,
) -> Result<BaselineEstimate<T>, IdentifyError> {
    let n = k_hat.nrows();
    let p = k_hat.ncols();
    if obs_mean.len() != n {
        return Err(IdentifyError::Shape(format!(
            "mean has {} entries, mixing has {n} rows",
            obs_mean.len()
        )));
    }
    if h0_hat.nrows() != p || h0_hat.ncols() != p {
        return Err(IdentifyError::Shape(format!(
            "transfer is {}x{}, expected {p}x{p}",
            h0_hat.nrows(),
            h0_hat.ncols()
        )));
    }
    if delta <= T::zero() {
        return Err(IdentifyError::Shape("bin width must be positive".into()));
    }
    let sv = k_hat.clone().svd(false, false).singular_values;
    let svec: Vec<T> = sv.iter().copied().collect();
    let rank = rank_from_singular_values(&svec, n, p);
    if rank < p {
        return Err(IdentifyError::RankDeficientMixing { rank, cols: p });
    }
    let design = k_hat * h0_hat * delta;
    let dv = design.clone().svd(false, false).singular_values;
    let dvec: Vec<T> = dv.iter().copied().collect();
    if rank_from_singular_values(&dvec, n, p) < p {
        return Err(IdentifyError::SingularTransfer);
    }
    let svd = design.clone().svd(true, true);
    let raw = svd
        .solve(obs_mean, T::default_epsilon())
        .map_err(|e| IdentifyError::Shape(e.to_string()))?;
    let mean_norm = obs_mean.norm();
    let residual = if mean_norm > T::zero() {
        (&design * &raw - obs_mean).norm() / mean_norm
    } else {
        T::zero()
    };
    let mut clipped_mass = T::zero();
    let u = DVector::from_fn(p, |i, _| {
        if raw[i] < T::zero() {
            clipped_mass += -raw[i];
            T::zero()
        } else {
            raw[i]
        }
    });
    Ok(BaselineEstimate {
        u,
        clipped_mass,
        residual,
    })
}

/// Column matching between recovered and reference factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment<T: Scalar> {
    /// `permutation[j]` is the recovered column matched to truth column `j`.
    pub permutation: Vec<usize>,
    /// Signed scale per truth column: `truth_j ~ scales[j] * recovered`.
    pub scales: Vec<T>,
    /// Mean matched absolute cosine similarity.
    pub similarity: T,
}

/// Matches recovered factor columns to reference columns by maximizing the
/// summed absolute cosine similarity with an exact assignment.
///
/// Cosines are scale-invariant, so the chosen permutation is unaffected by
/// rescaling any column; the signed scales returned map each matched
/// recovered column onto its reference column in least squares.
pub fn align<T: Scalar>(
    recovered: &DMatrix<T>,
    truth: &DMatrix<T>,
) -> Result<Alignment<T>, IdentifyError> {
    if recovered.nrows() != truth.nrows() || recovered.ncols() != truth.ncols() {
        return Err(IdentifyError::Shape(format!(
            "recovered is {}x{}, truth is {}x{}",
            recovered.nrows(),
            recovered.ncols(),
            truth.nrows(),
            truth.ncols()
        )));
    }
    let r = truth.ncols();
    let weight = DMatrix::from_fn(r, r, |t, c| {
        let tn = truth.column(t).norm();
        let cn = recovered.column(c).norm();
        if tn <= T::zero() || cn <= T::zero() {
            T::zero()
        } else {
            (truth.column(t).dot(&recovered.column(c)) / (tn * cn)).abs()
        }
    });
    let (permutation, total) = max_weight_assignment(&weight);
    let scales = (0..r)
        .map(|t| {
            let col = recovered.column(permutation[t]);
            let denom = col.norm_squared();
            if denom <= T::zero() {
                T::zero()
            } else {
                truth.column(t).dot(&col) / denom
            }
        })
        .collect();
    let similarity = if r == 0 {
        T::zero()
    } else {
        total / T::from_usize(r).unwrap()
    };
    Ok(Alignment {
        permutation,
        scales,
        similarity,
    })
}

/// Terminal identification artifact gathered by the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentReport<T: Scalar> {
    pub variety_dim: usize,
    pub per_node: Vec<NodeDiagnostic>,
    /// Zero dimension with consistent augmented ranks.
    pub identifiable: bool,
    /// Reference-environment kernel snapshot, row-major `(re, im)` pairs.
    pub solved_kernels: Vec<Vec<(T, T)>>,
    /// Aggregate least-squares residual of the kernel solve; smaller means
    /// higher confidence in the entries above.
    pub solve_residual: T,
    pub baseline: Vec<T>,
    pub baseline_clipped: T,
    pub alignment: Alignment<T>,
    pub mcc: T,
}

impl<T: Scalar> IdentReport<T> {
    pub fn new(
        dimension: &DimensionReport,
        kernel_block: &DMatrix<Cplx<T>>,
        solve_residual: T,
        baseline: &BaselineEstimate<T>,
        alignment: Alignment<T>,
        mcc: T,
    ) -> Self {
        let solved_kernels = (0..kernel_block.nrows())
            .map(|i| {
                (0..kernel_block.ncols())
                    .map(|j| (kernel_block[(i, j)].re, kernel_block[(i, j)].im))
                    .collect()
            })
            .collect();
        Self {
            variety_dim: dimension.variety_dim,
            per_node: dimension.per_node.clone(),
            identifiable: dimension.identifiable(),
            solved_kernels,
            solve_residual,
            baseline: baseline.u.iter().copied().collect(),
            baseline_clipped: baseline.clipped_mass,
            alignment,
            mcc,
        }
    }
}
