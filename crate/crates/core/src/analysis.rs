//! Post-processing: rescaled-range Hurst exponents, mean fields of ROM
//! trajectories, L2 error reports and time-series exports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{l2_grid_norm, Field2D};
use crate::gp::RomTrajectory;
use crate::pod::{reconstruct_field, FieldKind, PodBasis};

/// Shortest series accepted by [`hurst_exponent`].
pub const HURST_MIN_LEN: usize = 64;
const HURST_MIN_CHUNK: usize = 8;

/// Outcome of a rescaled-range analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct HurstResult {
    pub h: f64,
    pub n_values: Vec<usize>,
    pub rs_values: Vec<f64>,
    /// Coefficient of determination of the log-log fit.
    pub fit_r2: f64,
}

impl HurstResult {
    /// Estimates outside `[0, 1]` are legal but unusual.
    pub fn is_anomalous(&self) -> bool {
        !(0.0..=1.0).contains(&self.h)
    }
}

/// Mean `R/S` over disjoint chunks of length `n`, or `None` if every chunk
/// is constant.
fn mean_rescaled_range(series: &[f64], n: usize) -> Option<f64> {
    let mut total = 0.0;
    let mut used = 0usize;
    for chunk in series.chunks_exact(n) {
        let mean = chunk.iter().sum::<f64>() / n as f64;
        let (mut cum, mut lo, mut hi, mut ss) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0);
        for &x in chunk {
            let d = x - mean;
            cum += d;
            lo = lo.min(cum);
            hi = hi.max(cum);
            ss += d * d;
        }
        let sd = (ss / n as f64).sqrt();
        if sd > 0.0 {
            total += (hi - lo) / sd;
            used += 1;
        }
    }
    (used > 0).then(|| total / used as f64)
}

/// Hurst exponent by classical R/S analysis on chunk sizes `8, 16, ...`
/// up to half the series length.
pub fn hurst_exponent(series: &[f64]) -> Result<HurstResult> {
    if series.len() < HURST_MIN_LEN {
        return Err(Error::InsufficientData(format!(
            "Hurst analysis needs at least {HURST_MIN_LEN} samples, got {}",
            series.len()
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Hurst input series"));
    }
    let mut n_values = Vec::new();
    let mut rs_values = Vec::new();
    let mut n = HURST_MIN_CHUNK;
    while n <= series.len() / 2 {
        if let Some(rs) = mean_rescaled_range(series, n) {
            n_values.push(n);
            rs_values.push(rs);
        }
        n *= 2;
    }
    if n_values.len() < 2 {
        return Err(Error::InsufficientData(
            "fewer than two chunk sizes with non-zero variance".into(),
        ));
    }
    let xs: Vec<f64> = n_values.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = rs_values.iter().map(|rs| rs.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let h = sxy / sxx;
    let fit_r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(HurstResult {
        h,
        n_values,
        rs_values,
        fit_r2,
    })
}

/// `l2_grid_norm(rom_mean - fom_mean)`.
pub fn mean_field_error(rom_mean: &Field2D, fom_mean: &Field2D) -> Result<f64> {
    Ok(l2_grid_norm(&rom_mean.sub(fom_mean)?))
}

/// Time-averaged coefficients of a trajectory.
pub fn mean_coefficients(traj: &RomTrajectory) -> Result<Vec<f64>> {
    if traj.is_empty() {
        return Err(Error::InsufficientData("empty trajectory".into()));
    }
    let r = traj.r();
    let mut mean = vec![0.0; r];
    for s in &traj.states {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    let n = traj.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Time-averaged vorticity and streamfunction of a trajectory, obtained by
/// reconstructing the mean coefficient vector.
pub fn trajectory_mean_fields(traj: &RomTrajectory, basis: &PodBasis) -> Result<(Field2D, Field2D)> {
    let mean = mean_coefficients(traj)?;
    Ok((
        reconstruct_field(&mean, basis, FieldKind::Omega)?,
        reconstruct_field(&mean, basis, FieldKind::Psi)?,
    ))
}

/// Time average of a set of fields.
pub fn field_mean(fields: &[Field2D]) -> Result<Field2D> {
    let Some(first) = fields.first() else {
        return Err(Error::InsufficientData("no fields to average".into()));
    };
    let mut mean = Field2D::zeros(*first.grid());
    let w = 1.0 / fields.len() as f64;
    for f in fields {
        mean.axpy(w, f)?;
    }
    Ok(mean)
}

/// One row of the mean-field error table.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub model: String,
    pub r: usize,
    pub sigma: Option<usize>,
    pub vort_l2: f64,
    pub psi_l2: f64,
}

impl ErrorReport {
    /// Compares a trajectory's mean fields against reference means.
    pub fn evaluate(
        model: impl Into<String>,
        traj: &RomTrajectory,
        basis: &PodBasis,
        fom_omega_mean: &Field2D,
        fom_psi_mean: &Field2D,
    ) -> Result<Self> {
        let (w, p) = trajectory_mean_fields(traj, basis)?;
        let sigma = match traj.provenance {
            crate::gp::Provenance::Lstm { sigma } => Some(sigma),
            _ => None,
        };
        Ok(Self {
            model: model.into(),
            r: basis.r(),
            sigma,
            vort_l2: mean_field_error(&w, fom_omega_mean)?,
            psi_l2: mean_field_error(&p, fom_psi_mean)?,
        })
    }
}

pub const ERROR_REPORT_HEADER: &str = "model,R,sigma,vort_l2,psi_l2";

pub fn format_error_report(rows: &[ErrorReport]) -> String {
    let mut out = String::from(ERROR_REPORT_HEADER);
    out.push('\n');
    for row in rows {
        let sigma = row.sigma.map(|s| s.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{:.16e},{:.16e}",
            row.model, row.r, sigma, row.vort_l2, row.psi_l2
        );
    }
    out
}

pub fn write_error_report(rows: &[ErrorReport], path: &Path) -> Result<()> {
    fs::write(path, format_error_report(rows)).map_err(|e| Error::io(path, e))
}

/// Predicted and true coefficient series on a shared time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeseriesTable {
    pub times: Vec<f64>,
    pub predicted: Vec<Vec<f64>>,
    pub truth: Vec<Vec<f64>>,
    /// Time of the last training sample, marked once in the export.
    pub train_end: f64,
}

const TRAIN_END_MARKER: &str = "#train_end";

/// Renders `t, a1_pred, a1_true, a2_pred, ...` as CSV. A `#train_end,<t>`
/// line follows the first row at or after `train_end`.
pub fn format_timeseries(pred: &RomTrajectory, truth: &RomTrajectory, train_end: f64) -> Result<String> {
    let n = pred.len();
    if truth.len() < n {
        return Err(Error::Dimension(format!(
            "{n} predicted states but only {} true states",
            truth.len()
        )));
    }
    let r = pred.r();
    if truth.r() != r {
        return Err(Error::Dimension(format!(
            "predicted trajectory has {r} modes, truth has {}",
            truth.r()
        )));
    }
    for (a, b) in pred.times.iter().zip(&truth.times) {
        if (a - b).abs() > 1e-9 * a.abs().max(1.0) {
            return Err(Error::Dimension(format!("time grids disagree at t = {a} vs {b}")));
        }
    }
    let mut out = String::from("t");
    for k in 1..=r {
        let _ = write!(out, ",a{k}_pred,a{k}_true");
    }
    out.push('\n');
    let mut marked = false;
    for m in 0..n {
        let _ = write!(out, "{:.16e}", pred.times[m]);
        for k in 0..r {
            let _ = write!(out, ",{:.16e},{:.16e}", pred.states[m][k], truth.states[m][k]);
        }
        out.push('\n');
        if !marked && pred.times[m] >= train_end - 1e-9 * train_end.abs().max(1.0) {
            let _ = writeln!(out, "{TRAIN_END_MARKER},{train_end:.16e}");
            marked = true;
        }
    }
    Ok(out)
}

pub fn export_timeseries(
    pred: &RomTrajectory,
    truth: &RomTrajectory,
    train_end: f64,
    path: &Path,
) -> Result<()> {
    let text = format_timeseries(pred, truth, train_end)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_timeseries(text: &str) -> std::result::Result<TimeseriesTable, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    let cols = header.split(',').count();
    if cols < 3 || (cols - 1) % 2 != 0 || !header.starts_with("t,") {
        return Err(format!("bad header {header:?}"));
    }
    let r = (cols - 1) / 2;
    let mut table = TimeseriesTable {
        times: Vec::new(),
        predicted: Vec::new(),
        truth: Vec::new(),
        train_end: f64::NAN,
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("bad number {s:?}: {e}"));
    for line in lines {
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix(TRAIN_END_MARKER) {
            if !table.train_end.is_nan() {
                return Err("train-end marker appears twice".into());
            }
            table.train_end = num(rest.trim_start_matches(','))?;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(format!("row has {} columns, expected {cols}", fields.len()));
        }
        table.times.push(num(fields[0])?);
        let mut p = Vec::with_capacity(r);
        let mut t = Vec::with_capacity(r);
        for k in 0..r {
            p.push(num(fields[1 + 2 * k])?);
            t.push(num(fields[2 + 2 * k])?);
        }
        table.predicted.push(p);
        table.truth.push(t);
    }
    Ok(table)
}

pub fn read_timeseries(path: &Path) -> Result<TimeseriesTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_timeseries(&text).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use crate::fom::SnapshotSet;
    use crate::gp::Provenance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn hurst_white_noise_and_ramp() {
        let res = hurst_exponent(&noise(4096, 1)).unwrap();
        assert!((0.45..=0.60).contains(&res.h), "H = {}", res.h);
        assert_eq!(res.n_values, vec![8, 16, 32, 64, 128, 256, 512, 1024, 2048]);
        assert!(res.n_values.windows(2).all(|w| w[0] < w[1]));

        let ramp: Vec<f64> = (1..=4096).map(|v| v as f64).collect();
        assert!(hurst_exponent(&ramp).unwrap().h >= 0.85);
    }

    #[test]
    fn hurst_affine_invariance() {
        let x = noise(1000, 2);
        let y: Vec<f64> = x.iter().map(|v| 3.5 * v - 12.0).collect();
        let (hx, hy) = (hurst_exponent(&x).unwrap().h, hurst_exponent(&y).unwrap().h);
        assert!((hx - hy).abs() < 1e-6);
    }

    #[test]
    fn hurst_errors() {
        assert!(hurst_exponent(&[1.0; 63]).is_err());
        assert!(hurst_exponent(&[2.0; 256]).is_err());
    }

    #[test]
    fn rescaled_range_oracle() {
        // Chunk [1, 2, 3, 4]: deviations -1.5, -0.5, 0.5, 1.5, cumulative
        // -1.5, -2, -1.5, 0 -> range 2; population sd sqrt(1.25).
        let rs = mean_rescaled_range(&[1.0, 2.0, 3.0, 4.0], 4).unwrap();
        assert!((rs - 2.0 / 1.25f64.sqrt()).abs() < 1e-15);
    }

    fn small_basis() -> PodBasis {
        let g = Grid::new(9, 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let omega = (0..6)
            .map(|_| Field2D::from_fn_dirichlet(g, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let set = SnapshotSet::new(g, (0..6).map(|t| t as f64).collect(), omega).unwrap();
        PodBasis::from_snapshots(&set, 3).unwrap()
    }

    fn traj(states: Vec<Vec<f64>>) -> RomTrajectory {
        let times = (0..states.len()).map(|t| t as f64 * 0.5).collect();
        RomTrajectory::new(times, states, Provenance::Gp).unwrap()
    }

    #[test]
    fn mean_field_error_cases() {
        let g = Grid::new(9, 9).unwrap();
        let f = Field2D::from_fn(g, |x, y| x * y);
        assert_eq!(mean_field_error(&f, &f).unwrap(), 0.0);
        let mut shifted = f.clone();
        shifted.values_mut().iter_mut().for_each(|v| *v += 0.25);
        assert!((mean_field_error(&shifted, &f).unwrap() - 0.25).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let mut r = || Field2D::from_fn(g, |_, _| rng.gen_range(-1.0..1.0));
            let (a, b, c) = (r(), r(), r());
            let ab = mean_field_error(&a, &b).unwrap();
            assert_eq!(ab, mean_field_error(&b, &a).unwrap());
            let ac = mean_field_error(&a, &c).unwrap();
            let cb = mean_field_error(&c, &b).unwrap();
            assert!(ab <= ac + cb + 1e-15);
        }
        assert!(mean_field_error(&f, &Field2D::zeros(Grid::new(9, 10).unwrap())).is_err());
    }

    #[test]
    fn trajectory_means() {
        let basis = small_basis();
        let a0 = vec![0.3, -1.0, 2.0];
        let (w, p) = trajectory_mean_fields(&traj(vec![a0.clone(); 4]), &basis).unwrap();
        assert_eq!(w, reconstruct_field(&a0, &basis, FieldKind::Omega).unwrap());
        assert_eq!(p, reconstruct_field(&a0, &basis, FieldKind::Psi).unwrap());

        let v = vec![1.5, -0.5, 0.25];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let (w, p) = trajectory_mean_fields(&traj(vec![v.clone(), neg.clone(), v, neg]), &basis).unwrap();
        assert!(w.sub(&basis.omega_mean).unwrap().max_abs() < 1e-15);
        assert!(p.sub(&basis.psi_mean).unwrap().max_abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let states: Vec<Vec<f64>> = (0..7).map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let fields: Vec<Field2D> = states
            .iter()
            .map(|s| reconstruct_field(s, &basis, FieldKind::Omega).unwrap())
            .collect();
        let direct = field_mean(&fields).unwrap();
        let (w, _) = trajectory_mean_fields(&traj(states), &basis).unwrap();
        assert!(w.sub(&direct).unwrap().max_abs() < 1e-10);

        assert!(trajectory_mean_fields(&traj(vec![]), &basis).is_err());
    }

    #[test]
    fn timeseries_csv() {
        let pred = traj(vec![vec![0.1], vec![0.2]]);
        let truth = traj(vec![vec![1.0], vec![2.0]]);
        let text = format_timeseries(&pred, &truth, 0.0).unwrap();
        let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "t,a1_pred,a1_true");
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 3));

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut states = || -> Vec<Vec<f64>> {
            (0..20).map(|_| (0..3).map(|_| rng.gen_range(-1e3..1e3)).collect()).collect()
        };
        let (p, t) = (traj(states()), traj(states()));
        let text = format_timeseries(&p, &t, 4.0).unwrap();
        assert_eq!(text.matches(TRAIN_END_MARKER).count(), 1);
        let marker_line = text.lines().position(|l| l.starts_with(TRAIN_END_MARKER)).unwrap();
        assert!(text.lines().nth(marker_line - 1).unwrap().starts_with("4.0000000000000000e0"));
        let back = parse_timeseries(&text).unwrap();
        assert_eq!(back.times, p.times);
        assert_eq!(back.train_end, 4.0);
        for m in 0..20 {
            for k in 0..3 {
                assert!((back.predicted[m][k] - p.states[m][k]).abs() <= 1e-12 * p.states[m][k].abs());
                assert!((back.truth[m][k] - t.states[m][k]).abs() <= 1e-12 * t.states[m][k].abs());
            }
        }
    }

    #[test]
    fn error_report_format() {
        let rows = vec![
            ErrorReport {
                model: "gp".into(),
                r: 10,
                sigma: None,
                vort_l2: 1.5,
                psi_l2: 0.25,
            },
            ErrorReport {
                model: "lstm".into(),
                r: 10,
                sigma: Some(5),
                vort_l2: 0.0,
                psi_l2: 0.0,
            },
        ];
        let text = format_error_report(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "model,R,sigma,vort_l2,psi_l2");
        assert!(lines[1].starts_with("gp,10,,1.5"));
        assert!(lines[2].starts_with("lstm,10,5,0"));
    }
}
