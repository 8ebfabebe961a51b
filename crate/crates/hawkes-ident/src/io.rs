//! Artifact files: CSV for event and count series, JSON for structured
//! objects. Every writer goes through a temp-file rename so readers never
//! observe a partially written artifact.
//!
//! Formats, by artifact:
//! * events: CSV `process_id,timestamp`, timestamps with 12 decimal digits
//! * counts: CSV `t0,z_1..z_p`; observations: CSV `t0,o_1..o_n`
//! * model: JSON `{p, baseline, kernels: [[{kind, params}, ..], ..]}`
//! * mixing: JSON `{kind, matrices, slope}`
//! * spectra: JSON `{n_freq, p, matrices}` with complex entries as `[re, im]`
//! * cumulant tensor: JSON `{order, dim, lags, data}` (row-major data)
//! * factorization: JSON `{rank, order, weights, factors, residual}`
//! * convergence: CSV `delta,mean_rate_gap,variance_gap,energy_distance`

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cumulants::{CpFactors, CumulantTensor};
use crate::evaluate::ConvergenceReport;
use crate::model::{HawkesModel, KernelSpec};
use crate::simulate::{BinnedCounts, EventSequence, MixingMap, Observation};
use crate::spectral::SpectralDensity;
use crate::{Cplx, Scalar};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Format(String),
}

fn bad(msg: impl Into<String>) -> IoError {
    IoError::Format(msg.into())
}

/// Writes bytes through a sibling temp file plus rename, so a crash mid-write
/// leaves either the old artifact or none, never a truncated one.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Serializes any value as pretty JSON with a trailing newline.
pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D, IoError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn expect_header(path: &Path, text: &str, want: &str) -> Result<(), IoError> {
    match text.lines().next() {
        Some(h) if h == want => Ok(()),
        Some(h) => Err(bad(format!(
            "{}: expected header `{want}`, found `{h}`",
            path.display()
        ))),
        None => Err(bad(format!("{}: empty file", path.display()))),
    }
}

pub fn write_events<T: Scalar>(path: &Path, ev: &EventSequence<T>) -> Result<(), IoError> {
    let mut out = String::from("process_id,timestamp\n");
    for (pid, list) in ev.events.iter().enumerate() {
        for &t in list {
            out.push_str(&format!("{pid},{:.12}\n", t.as_f64()));
        }
    }
    atomic_write(path, out.as_bytes())
}

/// Event files carry no shape metadata, so the process count and horizon
/// come from the caller; ordering and range are revalidated on load.
pub fn read_events<T: Scalar>(
    path: &Path,
    p: usize,
    horizon: T,
) -> Result<EventSequence<T>, IoError> {
    let text = fs::read_to_string(path)?;
    expect_header(path, &text, "process_id,timestamp")?;
    let mut events = vec![Vec::new(); p];
    for (idx, line) in text.lines().enumerate().skip(1) {
        let (pid, stamp) = line
            .split_once(',')
            .ok_or_else(|| bad(format!("line {}: expected two fields", idx + 1)))?;
        let pid: usize = pid
            .parse()
            .map_err(|_| bad(format!("line {}: bad process id `{pid}`", idx + 1)))?;
        if pid >= p {
            return Err(bad(format!(
                "line {}: process id {pid} out of range for p = {p}",
                idx + 1
            )));
        }
        let stamp: f64 = stamp
            .parse()
            .map_err(|_| bad(format!("line {}: bad timestamp `{stamp}`", idx + 1)))?;
        events[pid].push(T::lit(stamp));
    }
    EventSequence::new(horizon, events).map_err(|e| bad(e.to_string()))
}

fn series_header(prefix: &str, cols: usize) -> String {
    let mut h = String::from("t0");
    for j in 1..=cols {
        h.push_str(&format!(",{prefix}_{j}"));
    }
    h.push('\n');
    h
}

/// Parses a bin-series CSV body into bin start times and row-major cells.
fn parse_series(path: &Path, text: &str, cols: usize) -> Result<(Vec<f64>, Vec<f64>), IoError> {
    let mut starts = Vec::new();
    let mut cells = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        let mut fields = line.split(',');
        let t0: f64 = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(format!("line {}: bad t0", idx + 1)))?;
        starts.push(t0);
        let mut got = 0;
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| bad(format!("line {}: bad value `{f}`", idx + 1)))?;
            cells.push(v);
            got += 1;
        }
        if got != cols {
            return Err(bad(format!(
                "{}: line {} has {got} value columns, expected {cols}",
                path.display(),
                idx + 1
            )));
        }
    }
    if starts.len() < 2 {
        return Err(bad(format!(
            "{}: need at least two rows to recover the bin width",
            path.display()
        )));
    }
    Ok((starts, cells))
}

pub fn write_counts<T: Scalar>(path: &Path, b: &BinnedCounts<T>) -> Result<(), IoError> {
    let mut out = series_header("z", b.counts.ncols());
    let delta = b.delta.as_f64();
    for k in 0..b.counts.nrows() {
        out.push_str(&format!("{}", k as f64 * delta));
        for j in 0..b.counts.ncols() {
            out.push_str(&format!(",{}", b.counts[(k, j)]));
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_counts<T: Scalar>(path: &Path, p: usize) -> Result<BinnedCounts<T>, IoError> {
    let text = fs::read_to_string(path)?;
    expect_header(path, &text, series_header("z", p).trim_end())?;
    let (starts, cells) = parse_series(path, &text, p)?;
    let counts = DMatrix::from_fn(starts.len(), p, |k, j| {
        let v = cells[k * p + j];
        if v < 0.0 || v.fract() != 0.0 {
            u64::MAX // flagged below
        } else {
            v as u64
        }
    });
    if counts.iter().any(|&c| c == u64::MAX) {
        return Err(bad(format!("{}: counts must be whole and nonnegative", path.display())));
    }
    Ok(BinnedCounts {
        delta: T::lit(starts[1] - starts[0]),
        counts,
    })
}

pub fn write_observation<T: Scalar>(path: &Path, o: &Observation<T>) -> Result<(), IoError> {
    let mut out = series_header("o", o.data.ncols());
    let delta = o.delta.as_f64();
    for k in 0..o.data.nrows() {
        out.push_str(&format!("{}", k as f64 * delta));
        for j in 0..o.data.ncols() {
            out.push_str(&format!(",{}", o.data[(k, j)].as_f64()));
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_observation<T: Scalar>(path: &Path, n: usize) -> Result<Observation<T>, IoError> {
    let text = fs::read_to_string(path)?;
    expect_header(path, &text, series_header("o", n).trim_end())?;
    let (starts, cells) = parse_series(path, &text, n)?;
    Ok(Observation {
        delta: T::lit(starts[1] - starts[0]),
        data: DMatrix::from_fn(starts.len(), n, |k, j| T::lit(cells[k * n + j])),
    })
}

#[derive(Serialize, Deserialize)]
struct ModelDoc<T: Scalar> {
    p: usize,
    baseline: Vec<T>,
    kernels: Vec<Vec<KernelSpec<T>>>,
}

pub fn write_model<T>(path: &Path, m: &HawkesModel<T>) -> Result<(), IoError>
where
    T: Scalar + Serialize,
{
    write_json(
        path,
        &ModelDoc {
            p: m.p(),
            baseline: m.baseline.iter().copied().collect(),
            kernels: m.kernels.clone(),
        },
    )
}

pub fn read_model<T>(path: &Path) -> Result<HawkesModel<T>, IoError>
where
    T: Scalar + DeserializeOwned,
{
    let doc: ModelDoc<T> = read_json(path)?;
    if doc.baseline.len() != doc.p {
        return Err(bad(format!(
            "model file claims p = {} but lists {} baseline rates",
            doc.p,
            doc.baseline.len()
        )));
    }
    HawkesModel::new(doc.baseline, doc.kernels).map_err(|e| bad(e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct MixingDoc<T> {
    kind: String,
    matrices: Vec<Vec<Vec<T>>>,
    slope: Option<T>,
}

fn matrix_rows<T: Scalar>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_matrix<T: Scalar>(rows: &[Vec<T>], what: &str) -> Result<DMatrix<T>, IoError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(bad(format!("{what}: ragged or empty matrix")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn write_mixing<T>(path: &Path, map: &MixingMap<T>) -> Result<(), IoError>
where
    T: Scalar + Serialize,
{
    let doc = match map {
        MixingMap::Linear { f } => MixingDoc {
            kind: "Linear".into(),
            matrices: vec![matrix_rows(f)],
            slope: None,
        },
        MixingMap::Mlp { layers, slope } => MixingDoc {
            kind: "Mlp".into(),
            matrices: layers.iter().map(matrix_rows).collect(),
            slope: Some(*slope),
        },
    };
    write_json(path, &doc)
}

pub fn read_mixing<T>(path: &Path) -> Result<MixingMap<T>, IoError>
where
    T: Scalar + DeserializeOwned,
{
    let doc: MixingDoc<T> = read_json(path)?;
    let map = match doc.kind.as_str() {
        "Linear" => {
            if doc.matrices.len() != 1 {
                return Err(bad("linear mixing expects exactly one matrix"));
            }
            MixingMap::Linear {
                f: rows_matrix(&doc.matrices[0], "mixing")?,
            }
        }
        "Mlp" => MixingMap::Mlp {
            layers: doc
                .matrices
                .iter()
                .map(|m| rows_matrix(m, "mixing layer"))
                .collect::<Result<_, _>>()?,
            slope: doc
                .slope
                .ok_or_else(|| bad("mlp mixing requires a slope"))?,
        },
        other => return Err(bad(format!("unknown mixing kind `{other}`"))),
    };
    map.validate().map_err(|e| bad(e.to_string()))?;
    Ok(map)
}

#[derive(Serialize, Deserialize)]
struct SpectraDoc<T> {
    n_freq: usize,
    p: usize,
    matrices: Vec<Vec<Vec<[T; 2]>>>,
}

pub fn write_spectra<T>(path: &Path, s: &SpectralDensity<T>) -> Result<(), IoError>
where
    T: Scalar + Serialize,
{
    let p = s.matrices[0].nrows();
    let matrices = s
        .matrices
        .iter()
        .map(|m| {
            (0..p)
                .map(|i| (0..p).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
                .collect()
        })
        .collect();
    write_json(
        path,
        &SpectraDoc {
            n_freq: s.matrices.len(),
            p,
            matrices,
        },
    )
}

pub fn read_spectra<T>(path: &Path) -> Result<SpectralDensity<T>, IoError>
where
    T: Scalar + DeserializeOwned,
{
    let doc: SpectraDoc<T> = read_json(path)?;
    if doc.matrices.len() != doc.n_freq {
        return Err(bad(format!(
            "spectra file claims {} frequencies but lists {}",
            doc.n_freq,
            doc.matrices.len()
        )));
    }
    let matrices = doc
        .matrices
        .iter()
        .map(|rows| {
            if rows.len() != doc.p || rows.iter().any(|r| r.len() != doc.p) {
                return Err(bad(format!("spectra matrices must be {0}x{0}", doc.p)));
            }
            Ok(DMatrix::from_fn(doc.p, doc.p, |i, j| {
                Cplx::new(rows[i][j][0], rows[i][j][1])
            }))
        })
        .collect::<Result<Vec<_>, _>>()?;
    SpectralDensity::new(matrices).map_err(|e| bad(e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct TensorDoc<T> {
    order: usize,
    dim: usize,
    lags: Vec<usize>,
    data: Vec<T>,
}

pub fn write_cumulant<T>(path: &Path, t: &CumulantTensor<T>) -> Result<(), IoError>
where
    T: Scalar + Serialize,
{
    write_json(
        path,
        &TensorDoc {
            order: t.order,
            dim: t.dim,
            lags: t.lags.clone(),
            data: t.data.clone(),
        },
    )
}

pub fn read_cumulant<T>(path: &Path) -> Result<CumulantTensor<T>, IoError>
where
    T: Scalar + DeserializeOwned,
{
    let doc: TensorDoc<T> = read_json(path)?;
    CumulantTensor::new(doc.order, doc.dim, doc.lags, doc.data).map_err(|e| bad(e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct CpDoc<T> {
    rank: usize,
    order: usize,
    weights: Vec<T>,
    /// Factor matrix rows, row-major: one inner list per tensor dimension.
    factors: Vec<Vec<T>>,
    residual: T,
}

pub fn write_cp<T>(path: &Path, cp: &CpFactors<T>) -> Result<(), IoError>
where
    T: Scalar + Serialize,
{
    write_json(
        path,
        &CpDoc {
            rank: cp.rank,
            order: cp.order,
            weights: cp.weights.clone(),
            factors: matrix_rows(&cp.factors),
            residual: cp.residual,
        },
    )
}

pub fn read_cp<T>(path: &Path) -> Result<CpFactors<T>, IoError>
where
    T: Scalar + DeserializeOwned,
{
    let doc: CpDoc<T> = read_json(path)?;
    if doc.weights.len() != doc.rank {
        return Err(bad(format!(
            "factorization file claims rank {} but lists {} weights",
            doc.rank,
            doc.weights.len()
        )));
    }
    let factors = if doc.rank == 0 {
        DMatrix::zeros(doc.factors.len(), 0)
    } else {
        rows_matrix(&doc.factors, "factors")?
    };
    if factors.ncols() != doc.rank {
        return Err(bad("factor matrix width must equal the rank"));
    }
    Ok(CpFactors {
        rank: doc.rank,
        order: doc.order,
        weights: doc.weights,
        factors,
        residual: doc.residual,
    })
}

/// Flat CSV view of the weak-convergence diagnostic for external plotting.
pub fn convergence_csv<T: Scalar>(rep: &ConvergenceReport<T>) -> String {
    let mut out = String::from("delta,mean_rate_gap,variance_gap,energy_distance\n");
    for row in &rep.rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.delta.as_f64(),
            row.mean_rate_gap.as_f64(),
            row.variance_gap.as_f64(),
            row.energy_distance.as_f64()
        ));
    }
    out
}

pub fn write_convergence_csv<T: Scalar>(
    path: &Path,
    rep: &ConvergenceReport<T>,
) -> Result<(), IoError> {
    atomic_write(path, convergence_csv(rep).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::KernelSpec;
    use crate::rng::{self, streams};
    use nalgebra::DVector;

    fn dir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn events_roundtrip_and_format() {
        let ev = EventSequence::new(10.0, vec![vec![0.5, 1.25], vec![], vec![3.0625]]).unwrap();
        let d = dir();
        let path = d.path().join("events.csv");
        write_events(&path, &ev).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("process_id,timestamp"));
        assert_eq!(lines.next(), Some("0,0.500000000000"));
        assert_eq!(lines.next(), Some("0,1.250000000000"));
        assert_eq!(lines.next(), Some("2,3.062500000000"));
        let back: EventSequence<f64> = read_events(&path, 3, 10.0).unwrap();
        assert_eq!(back.events, ev.events);
        assert_eq!(back.horizon, 10.0);
    }

    #[test]
    fn events_reject_unknown_process_ids() {
        let d = dir();
        let path = d.path().join("events.csv");
        std::fs::write(&path, "process_id,timestamp\n5,1.0\n").unwrap();
        assert!(matches!(
            read_events::<f64>(&path, 2, 10.0),
            Err(IoError::Format(_))
        ));
    }

    #[test]
    fn counts_roundtrip_bitwise() {
        let b = BinnedCounts {
            delta: 0.1f64,
            counts: DMatrix::from_row_slice(3, 2, &[0, 1, 2, 0, 5, 3]),
        };
        let d = dir();
        let path = d.path().join("counts.csv");
        write_counts(&path, &b).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t0,z_1,z_2\n0,0,1\n"));
        let back: BinnedCounts<f64> = read_counts(&path, 2).unwrap();
        assert_eq!(back.delta, 0.1);
        assert_eq!(back.counts, b.counts);
    }

    #[test]
    fn counts_reject_fractional_cells() {
        let d = dir();
        let path = d.path().join("counts.csv");
        std::fs::write(&path, "t0,z_1\n0,1\n0.1,2.5\n").unwrap();
        assert!(matches!(
            read_counts::<f64>(&path, 1),
            Err(IoError::Format(_))
        ));
    }

    #[test]
    fn observations_roundtrip_bitwise() {
        let o = Observation {
            delta: 0.25f64,
            data: DMatrix::from_row_slice(3, 2, &[0.1, -2.5, 0.30000000000000004, 1e-12, 7.0, 0.0]),
        };
        let d = dir();
        let path = d.path().join("obs.csv");
        write_observation(&path, &o).unwrap();
        let back: Observation<f64> = read_observation(&path, 2).unwrap();
        assert_eq!(back.delta, 0.25);
        assert_eq!(back.data, o.data);
    }

    #[test]
    fn model_roundtrip_is_bit_stable() {
        let m = HawkesModel::new(
            vec![0.30000000000000004f64, 0.2],
            vec![
                vec![
                    KernelSpec::Exponential { alpha: 0.3, beta: 1.7 },
                    KernelSpec::Zero,
                ],
                vec![
                    KernelSpec::PowerLaw { alpha: 0.1, beta: 1.5, c: 1.0 },
                    KernelSpec::Rectangular { height: 0.2, start: 0.0, end: 1.0 },
                ],
            ],
        )
        .unwrap();
        let d = dir();
        let path = d.path().join("model.json");
        write_model(&path, &m).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"p\": 2"));
        assert!(text.contains("\"kind\": \"Exponential\""));
        let back: HawkesModel<f64> = read_model(&path).unwrap();
        assert_eq!(back.baseline, m.baseline);
        assert_eq!(back.kernels, m.kernels);
    }

    #[test]
    fn model_file_shape_claims_are_checked() {
        let d = dir();
        let path = d.path().join("model.json");
        std::fs::write(
            &path,
            "{\"p\": 3, \"baseline\": [0.1], \"kernels\": [[{\"kind\": \"Zero\"}]]}",
        )
        .unwrap();
        assert!(matches!(
            read_model::<f64>(&path),
            Err(IoError::Format(_))
        ));
    }

    #[test]
    fn mixing_roundtrip_covers_both_kinds() {
        let d = dir();
        let lin = MixingMap::Linear {
            f: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.5, -0.5]),
        };
        let path = d.path().join("mixing.json");
        write_mixing(&path, &lin).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"kind\": \"Linear\""));
        match read_mixing::<f64>(&path).unwrap() {
            MixingMap::Linear { f } => match &lin {
                MixingMap::Linear { f: orig } => assert_eq!(f, *orig),
                _ => unreachable!(),
            },
            _ => panic!("expected a linear map back"),
        }

        let mlp = crate::simulate::make_generic_mlp(4, 2, 1, 0.2, 9).unwrap();
        let path = d.path().join("mlp.json");
        write_mixing(&path, &mlp).unwrap();
        match (read_mixing::<f64>(&path).unwrap(), &mlp) {
            (MixingMap::Mlp { layers, slope }, MixingMap::Mlp { layers: l0, slope: s0 }) => {
                assert_eq!(&layers, l0);
                assert_eq!(&slope, s0);
            }
            _ => panic!("expected an mlp back"),
        }
    }

    #[test]
    fn mixing_reader_rejects_nonsense() {
        let d = dir();
        let path = d.path().join("mixing.json");
        std::fs::write(&path, "{\"kind\": \"Quadratic\", \"matrices\": [], \"slope\": null}")
            .unwrap();
        assert!(matches!(
            read_mixing::<f64>(&path),
            Err(IoError::Format(_))
        ));
    }

    #[test]
    fn spectra_roundtrip_preserves_complex_entries() {
        let mut r = rng::stream(3, streams::NOISE);
        let base = DMatrix::from_fn(2, 2, |_, _| {
            Cplx::new(rng::standard_normal(&mut r), rng::standard_normal(&mut r))
        });
        // Hermitian PSD by construction.
        let psd = &base * base.adjoint() + DMatrix::identity(2, 2).map(|v: f64| Cplx::new(v, 0.0));
        let s = SpectralDensity::new(vec![psd.clone(), psd.clone()]).unwrap();
        let d = dir();
        let path = d.path().join("spectra.json");
        write_spectra(&path, &s).unwrap();
        let back: SpectralDensity<f64> = read_spectra(&path).unwrap();
        assert_eq!(back.matrices.len(), 2);
        assert_eq!(back.matrices[0], psd);
    }

    #[test]
    fn cumulant_roundtrip_revalidates() {
        let t = CumulantTensor::new(2, 2, vec![0], vec![2.0f64, 0.5, 0.5, 1.0]).unwrap();
        let d = dir();
        let path = d.path().join("cumulant.json");
        write_cumulant(&path, &t).unwrap();
        let back: CumulantTensor<f64> = read_cumulant(&path).unwrap();
        assert_eq!(back, t);

        std::fs::write(
            &path,
            "{\"order\": 2, \"dim\": 2, \"lags\": [0], \"data\": [1.0, 0.5, 0.4, 1.0]}",
        )
        .unwrap();
        assert!(matches!(
            read_cumulant::<f64>(&path),
            Err(IoError::Format(_))
        ));
    }

    #[test]
    fn cp_roundtrip_preserves_every_field() {
        let cp = CpFactors {
            rank: 2,
            order: 3,
            weights: vec![2.0f64, -0.5],
            factors: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.6, 0.0, 0.8]),
            residual: 1e-9,
        };
        let d = dir();
        let path = d.path().join("cp.json");
        write_cp(&path, &cp).unwrap();
        let back: CpFactors<f64> = read_cp(&path).unwrap();
        assert_eq!(back, cp);
    }

    #[test]
    fn convergence_csv_lists_one_row_per_delta() {
        let rep = ConvergenceReport {
            seed: 7,
            rows: vec![
                crate::evaluate::ConvergenceRow {
                    delta: 0.2f64,
                    mean_rate_gap: 0.01,
                    variance_gap: 0.02,
                    energy_distance: 0.003,
                },
                crate::evaluate::ConvergenceRow {
                    delta: 0.1,
                    mean_rate_gap: 0.005,
                    variance_gap: 0.01,
                    energy_distance: 0.001,
                },
            ],
        };
        let text = convergence_csv(&rep);
        assert_eq!(
            text,
            "delta,mean_rate_gap,variance_gap,energy_distance\n\
             0.2,0.01,0.02,0.003\n0.1,0.005,0.01,0.001\n"
        );
    }

    #[test]
    fn json_report_roundtrip_via_generic_helpers() {
        let d = dir();
        let path = d.path().join("report.json");
        let report = crate::identify::Alignment {
            permutation: vec![1usize, 0],
            scales: vec![0.5f64, -2.0],
            similarity: 0.99,
        };
        write_json(&path, &report).unwrap();
        let back: crate::identify::Alignment<f64> = read_json(&path).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn atomic_write_replaces_existing_content() {
        let d = dir();
        let path = d.path().join("file.txt");
        atomic_write(&path, b"first").unwrap();
        atomic_write(&path, b"second").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
        assert!(!path.with_extension("txt.tmp").exists());
    }

}
