//! One function per pipeline stage. Each reads its inputs from the run
//! configuration, writes one artifact and returns a short summary line.

use std::path::{Path, PathBuf};

use crate::analysis::{
    export_timeseries, field_mean, hurst_exponent, write_error_report, ErrorReport,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::field::{l2_grid_norm, Field2D};
use crate::fom::{run_fom, run_fom_extended, FomConfig};
use crate::gp::{assemble_tensors, integrate_gp, Provenance, RomTrajectory};
use crate::io;
use crate::lstm::{rollout, train};
use crate::pod::PodBasis;

/// Echo of the sampling plan printed before a full-order run starts.
pub fn fom_echo(cfg: &FomConfig) -> String {
    format!(
        "grid={}x{} re={} ro={} dt={} t=[{}, {}] snapshots={} window=[{}, {}]",
        cfg.grid.nx(),
        cfg.grid.ny(),
        cfg.re,
        cfg.ro,
        cfg.dt,
        cfg.t_start,
        cfg.t_end,
        cfg.n_snapshots,
        cfg.snapshot_t0,
        cfg.snapshot_t1
    )
}

/// Runs the full-order model and writes the training snapshots to `out`.
/// With `verify_out` set, the run continues to `t_end` and the whole
/// window is written there too.
pub fn cmd_fom(cfg: &RunConfig, out: &Path) -> Result<String> {
    let fom = cfg.fom_config()?;
    let train = match cfg.path("verify_out") {
        Some(verify) => {
            let (train, full) = run_fom_extended(&fom)?;
            io::write_snapshots(&verify, &full)?;
            train
        }
        None => run_fom(&fom)?,
    };
    io::write_snapshots(out, &train)?;
    Ok(format!(
        "{} | |omega_mean|={:.6e} |psi_mean|={:.6e}",
        fom_echo(&fom),
        l2_grid_norm(&train.omega_mean),
        l2_grid_norm(&train.psi_mean)
    ))
}

pub fn cmd_pod(cfg: &RunConfig, out: &Path) -> Result<String> {
    let snaps = io::read_snapshots(&cfg.require_path("snapshots")?)?;
    let r = cfg.modes()?;
    let basis = PodBasis::from_snapshots(&snaps, r)?;
    io::write_basis(out, &basis)?;
    let total: f64 = basis.lambdas.iter().sum();
    let kept: f64 = basis.lambdas[..r].iter().sum();
    Ok(format!(
        "modes={r} snapshots={} captured_energy={:.6}",
        snaps.len(),
        kept / total
    ))
}

/// Uniform output grid from the first training time to `t_end`.
fn prediction_grid(cfg: &RunConfig, basis: &PodBasis) -> Result<(f64, f64, usize)> {
    let t0 = *basis
        .times
        .first()
        .ok_or_else(|| Error::InsufficientData("basis has no training times".into()))?;
    let default_dt = match basis.times.as_slice() {
        [a, b, ..] => b - a,
        _ => return Err(Error::InsufficientData("basis needs two training times".into())),
    };
    let dt: f64 = cfg.get_or("predict_dt", default_dt)?;
    let t_end: f64 = cfg.require("t_end")?;
    if !(dt > 0.0) || !(t_end > t0) {
        return Err(Error::Config(format!(
            "need predict_dt > 0 and t_end > {t0}, got {dt} and {t_end}"
        )));
    }
    Ok((t0, dt, prediction_steps(t0, t_end, dt)))
}

/// Number of states after `t0` on the grid `t0 + n dt` up to `t_end`.
pub fn prediction_steps(t0: f64, t_end: f64, dt: f64) -> usize {
    ((t_end - t0) / dt).round() as usize
}

pub fn cmd_romgp(cfg: &RunConfig, out: &Path) -> Result<String> {
    let basis = io::read_basis(&cfg.require_path("basis")?)?;
    let tensors = assemble_tensors(&basis, cfg.require("re")?, cfg.require("ro")?)?;
    let (t0, dt, n) = prediction_grid(cfg, &basis)?;
    let times: Vec<f64> = (0..=n).map(|k| t0 + k as f64 * dt).collect();
    let a0 = basis.train_states().swap_remove(0);
    let traj = integrate_gp(&a0, &tensors, cfg.gp_dt()?, &times)?;
    io::write_trajectory(out, &traj)?;
    Ok(match traj.diverged_at {
        Some(t) => format!("modes={} states={} diverged_at={t}", basis.r(), traj.len()),
        None => format!(
            "modes={} states={} max|a1|={:.6e}",
            basis.r(),
            traj.len(),
            traj.max_abs_mode(0)
        ),
    })
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<String> {
    let basis = io::read_basis(&cfg.require_path("basis")?)?;
    let sigma = cfg.sigma()?;
    let tc = cfg.train_config()?;
    let (model, hist) = train(&basis.train_states(), sigma, &tc)?;
    io::write_model(out, &model)?;
    let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
    Ok(format!(
        "modes={} sigma={sigma} epochs={} train_loss={:.6e} val_loss={:.6e}",
        basis.r(),
        tc.epochs,
        last(&hist.train_loss),
        last(&hist.val_loss)
    ))
}

pub fn cmd_predict(cfg: &RunConfig, out: &Path) -> Result<String> {
    let basis = io::read_basis(&cfg.require_path("basis")?)?;
    let model = io::read_model(&cfg.require_path("model")?)?;
    if model.r() != basis.r() {
        return Err(Error::Dimension(format!(
            "model forecasts {} modes but the basis has {}",
            model.r(),
            basis.r()
        )));
    }
    let states = basis.train_states();
    if states.len() < model.sigma {
        return Err(Error::InsufficientData(format!(
            "{} training states cannot seed a window of {}",
            states.len(),
            model.sigma
        )));
    }
    let (t0, dt, n) = prediction_grid(cfg, &basis)?;
    let traj = rollout(&model, &states[..model.sigma], t0, dt, n)?;
    io::write_trajectory(out, &traj)?;
    Ok(format!(
        "modes={} sigma={} predicted_states={n} t=[{t0}, {}]",
        model.r(),
        model.sigma,
        traj.times.last().copied().unwrap_or(t0)
    ))
}

fn label(traj: &RomTrajectory, index: usize) -> String {
    match traj.provenance {
        Provenance::Gp => format!("gp{index}"),
        Provenance::Lstm { sigma } => format!("lstm{index}-sigma{sigma}"),
        Provenance::TrueProjection => format!("true{index}"),
    }
}

/// Sibling of `out` with a suffix appended to its file stem.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    out.with_file_name(format!("{stem}-{suffix}.csv"))
}

/// Writes the mean-field error table for every listed trajectory.
///
/// Reference means come from the `reference` trajectory if given, else
/// from the `verify` snapshots, else from the training snapshots. With
/// `verify` set, each trajectory is also exported as a time series next to
/// the true projection.
pub fn cmd_analyze(cfg: &RunConfig, out: &Path) -> Result<String> {
    let basis = io::read_basis(&cfg.require_path("basis")?)?;
    let paths = cfg.paths("trajectories");
    if paths.is_empty() {
        return Err(Error::Config("missing required key `trajectories`".into()));
    }
    let verify = cfg.path("verify").map(|p| io::read_snapshots(&p)).transpose()?;

    let (ref_omega, ref_psi): (Field2D, Field2D) = if let Some(p) = cfg.path("reference") {
        let reference = io::read_trajectory(&p)?;
        crate::analysis::trajectory_mean_fields(&reference, &basis)?
    } else if let Some(v) = &verify {
        let mean = field_mean(&v.omega)?;
        let psi = crate::poisson::solve_poisson(&mean)?;
        (mean, psi)
    } else {
        (basis.omega_mean.clone(), basis.psi_mean.clone())
    };

    let truth = match &verify {
        Some(v) => Some(RomTrajectory::new(
            v.times.clone(),
            basis.project_states(&v.omega)?,
            Provenance::TrueProjection,
        )?),
        None => None,
    };
    let train_end = basis.times.last().copied().unwrap_or(0.0);

    let mut rows = Vec::with_capacity(paths.len());
    for (i, path) in paths.iter().enumerate() {
        let traj = io::read_trajectory(path)?;
        let name = label(&traj, i);
        rows.push(ErrorReport::evaluate(&name, &traj, &basis, &ref_omega, &ref_psi)?);
        if let Some(truth) = &truth {
            export_timeseries(&traj, truth, train_end, &sibling(out, &name))?;
        }
    }
    write_error_report(&rows, out)?;

    let mut summary = String::new();
    for row in &rows {
        summary.push_str(&format!(
            "{} vort_l2={:.6e} psi_l2={:.6e}\n",
            row.model, row.vort_l2, row.psi_l2
        ));
    }
    if let Ok(h) = hurst_exponent(&basis.a_train[0]) {
        summary.push_str(&format!("hurst(a1)={:.4}", h.h));
    }
    Ok(summary.trim_end().to_string())
}
