//! Plain-text exports: CSV tables and pretty JSON.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{ErrorBound, MomentTrajectory};
use crate::simulator::Trajectory;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes a header row and numeric rows; floats use the shortest text that
/// round-trips.
pub fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric CSV with a header row.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines();
    let header = match lines.next() {
        Some(h) => h?.split(',').map(|s| s.trim().to_string()).collect(),
        None => return Err(Error::InvalidArgument(format!("{} is empty", path.display()))),
    };
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|e| {
                    Error::InvalidArgument(format!("{}:{}: {e}", path.display(), i + 2))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// `t, m_1, ..., m_M` per row.
pub fn write_moment_csv(path: &Path, traj: &MomentTrajectory, labels: &[String]) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(labels.iter().cloned());
    let rows = (0..traj.len()).map(|i| {
        let mut r = vec![traj.times[i]];
        r.extend(traj.values.row(i).iter());
        r
    });
    write_csv(path, &header, rows)
}

pub fn read_moment_csv(path: &Path) -> Result<(Vec<String>, MomentTrajectory)> {
    let (header, rows) = read_csv(path)?;
    if header.first().map(String::as_str) != Some("t") {
        return Err(Error::InvalidArgument(format!("{}: first column must be t", path.display())));
    }
    let m = header.len() - 1;
    let mut data = Vec::with_capacity(rows.len() * m);
    let mut times = Vec::with_capacity(rows.len());
    for r in &rows {
        if r.len() != m + 1 {
            return Err(Error::Dimension(format!("{}: ragged row", path.display())));
        }
        times.push(r[0]);
        data.extend_from_slice(&r[1..]);
    }
    Ok((
        header[1..].to_vec(),
        MomentTrajectory {
            values: nalgebra::DMatrix::from_row_slice(times.len(), m, &data),
            times,
            exit_time: None,
        },
    ))
}

/// `t, bound` per row.
pub fn write_bound_csv(path: &Path, bound: &ErrorBound) -> Result<()> {
    let header = vec!["t".to_string(), "bound".to_string()];
    write_csv(
        path,
        &header,
        bound.times.iter().zip(&bound.values).map(|(t, b)| vec![*t, *b]),
    )
}

/// Agent snapshots in long form: `t, agent, x_1, ..., x_d`.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let d = traj.snapshots.first().map_or(1, |s| s.dim());
    let mut header = vec!["t".to_string(), "agent".to_string()];
    header.extend((1..=d).map(|c| format!("x_{c}")));
    let rows = traj.times.iter().zip(&traj.snapshots).flat_map(|(t, snap)| {
        snap.iter().enumerate().map(move |(i, p)| {
            let mut r = vec![*t, i as f64];
            r.extend_from_slice(p);
            r
        })
    });
    write_csv(path, &header, rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moment_csv_round_trip_is_exact() {
        let dir = std::env::temp_dir().join(format!("moment-io-{}", std::process::id()));
        let path = dir.join("m.csv");
        let values = nalgebra::DMatrix::from_row_slice(2, 2, &[0.1, 1.0 / 3.0, -2.5e-17, std::f64::consts::PI]);
        let traj = MomentTrajectory {
            times: vec![0.0, 0.01],
            values,
            exit_time: None,
        };
        write_moment_csv(&path, &traj, &["m_1".into(), "m_2".into()]).unwrap();
        let (labels, back) = read_moment_csv(&path).unwrap();
        assert_eq!(labels, vec!["m_1", "m_2"]);
        assert_eq!(back, traj);
        std::fs::remove_dir_all(dir).ok();
    }
}
