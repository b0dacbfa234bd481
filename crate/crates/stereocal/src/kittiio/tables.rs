use std::io::Write;

use stereocal_core::calibrate::SensitivityCurve;
use stereocal_core::refine::{PointStatus, ScoreRow};

use super::format_sig;
use crate::error::Result;

pub const SCORE_COLUMNS: [&str; 7] = ["f_x", "c_u", "c_v", "baseline", "t_rel", "r_rel", "status"];

const TABLE_DIGITS: usize = 12;

fn num(v: Option<f64>) -> String {
    v.map(|v| format_sig(v, TABLE_DIGITS)).unwrap_or_default()
}

fn status(s: &PointStatus) -> String {
    match s {
        PointStatus::Ok => "ok".into(),
        PointStatus::CalibrationFailed(m) => format!("calibration failed: {m}"),
        PointStatus::RunnerFailed(m) => format!("runner failed: {m}"),
    }
}

/// Grid-search score table. `t_rel` is in percent, `r_rel` in deg/m, and the
/// baseline is that of the constrained calibration.
pub fn write_score_table<W: Write>(rows: &[ScoreRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCORE_COLUMNS)?;
    for r in rows {
        w.write_record([
            num(Some(r.point.fx)),
            num(Some(r.point.cu)),
            num(Some(r.point.cv)),
            num(Some(r.baseline)),
            num(r.error.map(|e| e.t_rel)),
            num(r.error.map(|e| e.r_rel)),
            status(&r.status),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `probe,rms` with a `pitch_deg` column for baseline sweeps; failed probes
/// leave the cells empty.
pub fn write_sensitivity_csv<W: Write>(curve: &SensitivityCurve, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let pitch = !curve.pitch_deg.is_empty();
    if pitch {
        w.write_record(["probe", "rms", "pitch_deg"])?;
    } else {
        w.write_record(["probe", "rms"])?;
    }
    for (i, p) in curve.probes.iter().enumerate() {
        let mut rec = vec![num(Some(*p)), num(curve.rms[i])];
        if pitch {
            rec.push(num(curve.pitch_deg[i]));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
