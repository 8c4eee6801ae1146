//! Report CSV contract.
//!
//! Line 1 is a comment `# dronesense-report v1 series=<name> sweep=<variable>
//! estimator=<estimator> seed=<base seed>`, line 2 the header [`COLUMNS`],
//! then one row per sweep point. Numbers use Rust's shortest round-trip
//! decimal form (locale independent); undefined overlays are written `NaN`.
//! The `ci_*` columns are 95% half-widths from trial-level variance.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{HarnessError, MonteCarloReport, ReportRow};

pub const FORMAT_VERSION: u32 = 1;

pub const COLUMNS: [&str; 18] = [
    "sweep_value",
    "rmse_phi_deg",
    "rmse_theta_deg",
    "rmse_fd_hz",
    "crlb_phi_deg",
    "crlb_theta_deg",
    "crlb_fd_hz",
    "ser",
    "sdr_empirical",
    "sdr_analytic_1st",
    "sdr_analytic_2nd",
    "ci_rmse_phi_deg",
    "ci_rmse_theta_deg",
    "ci_rmse_fd_hz",
    "ci_ser",
    "ci_sdr_empirical",
    "trials",
    "failures",
];

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn emit_csv(report: &MonteCarloReport, path: &Path) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut buf = Vec::new();
    writeln!(
        buf,
        "# dronesense-report v{FORMAT_VERSION} series={} sweep={} estimator={} seed={}",
        report.name, report.sweep_variable, report.estimator, report.base_seed
    )
    .map_err(|e| io_err(path, e))?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(COLUMNS).map_err(|e| io_err(path, e))?;
        for row in report.rows() {
            let v = row.values();
            let mut fields: Vec<String> = v[..16].iter().map(|x| x.to_string()).collect();
            fields.push(row.trials.to_string());
            fields.push(row.failures.to_string());
            w.write_record(&fields).map_err(|e| io_err(path, e))?;
        }
        w.flush().map_err(|e| io_err(path, e))?;
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Numeric table of a report CSV.
pub fn read_csv(path: &Path) -> Result<Vec<ReportRow>, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| io_err(path, e))?;
    if header.iter().ne(COLUMNS) {
        return Err(io_err(path, "header does not match the report columns"));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let num = |j: usize| -> Result<f64, HarnessError> {
            rec.get(j)
                .ok_or_else(|| io_err(path, format!("row {}: missing column {}", i + 1, COLUMNS[j])))?
                .parse::<f64>()
                .map_err(|e| io_err(path, format!("row {}, {}: {e}", i + 1, COLUMNS[j])))
        };
        let count = |j: usize| -> Result<usize, HarnessError> {
            rec.get(j)
                .unwrap_or_default()
                .parse::<usize>()
                .map_err(|e| io_err(path, format!("row {}, {}: {e}", i + 1, COLUMNS[j])))
        };
        rows.push(ReportRow {
            sweep_value: num(0)?,
            rmse_phi_deg: num(1)?,
            rmse_theta_deg: num(2)?,
            rmse_fd_hz: num(3)?,
            crlb_phi_deg: num(4)?,
            crlb_theta_deg: num(5)?,
            crlb_fd_hz: num(6)?,
            ser: num(7)?,
            sdr_empirical: num(8)?,
            sdr_analytic_1st: num(9)?,
            sdr_analytic_2nd: num(10)?,
            ci_rmse_phi_deg: num(11)?,
            ci_rmse_theta_deg: num(12)?,
            ci_rmse_fd_hz: num(13)?,
            ci_ser: num(14)?,
            ci_sdr_empirical: num(15)?,
            trials: count(16)?,
            failures: count(17)?,
        });
    }
    Ok(rows)
}
