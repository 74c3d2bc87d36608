//! CSV and JSON serialisation of paths and reports.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::dynamics::{ControlPath, Trajectory};
use crate::error::Result;
use crate::hamiltonian::PhaseTrajectory;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

fn names(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (0..count).map(move |i| format!("{prefix}{i}"))
}

/// One row per interval: `t, u0, u1, ...` with `t` the left end.
pub fn control_path_csv(u: &ControlPath) -> Result<Vec<u8>> {
    let header: Vec<String> = std::iter::once("t".to_string()).chain(names("u", u.dim())).collect();
    let dt = u.dt();
    csv_bytes(
        &header,
        (0..u.steps()).map(|k| std::iter::once(k as f64 * dt).chain(u.row(k).iter().copied()).collect()),
    )
}

/// One row per grid time: `t, q0, q1, ...`.
pub fn trajectory_csv(t: &Trajectory) -> Result<Vec<u8>> {
    let header: Vec<String> = std::iter::once("t".to_string()).chain(names("q", t.dim)).collect();
    csv_bytes(
        &header,
        (0..t.len()).map(|k| std::iter::once(t.times[k]).chain(t.state(k).iter().copied()).collect()),
    )
}

/// One row per grid time: `t, q.., p.., u..`.
pub fn phase_trajectory_csv(t: &PhaseTrajectory) -> Result<Vec<u8>> {
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(names("q", t.dim))
        .chain(names("p", t.dim))
        .chain(names("u", t.control_dim))
        .collect();
    csv_bytes(
        &header,
        (0..t.len()).map(|k| {
            std::iter::once(t.times[k])
                .chain(t.q(k).iter().copied())
                .chain(t.p(k).iter().copied())
                .chain(t.control(k).iter().copied())
                .collect()
        }),
    )
}

/// Serialises any sequence of flat records as CSV.
pub fn records_csv<T: Serialize>(records: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}
