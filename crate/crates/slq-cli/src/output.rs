//! Output artifacts: per-iteration CSV, trajectory CSV, and the plain-text
//! report.
//!
//! Numeric CSV fields use Rust's shortest round-trip float formatting, so a
//! rerun with the same config and seed reproduces the files byte for byte.
//! The report rounds matrices to four decimals for reading; its timestamp
//! lives only in the header line so the body stays reproducible too.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use slq::matops::{vec_of, vec_plus};
use slq::system::{Gain, TrajectoryBatch};

/// One accepted iteration, normalized across the three solvers. The
/// condition number is absent for the model-based solver, which does not
/// run a regression.
pub struct IterateRow {
    pub iteration: usize,
    pub p: DMatrix<f64>,
    pub k: Gain,
    pub dp_norm: f64,
    pub radius: f64,
    pub condition: Option<f64>,
}

/// Writes iterates.csv: iteration index, the free entries of P (lower
/// triangle column-major, off-diagonals doubled), vec(K) column-major,
/// ||P - P_prev||_F, the moment-map spectral radius, and the regression
/// condition number. Every row has the same column count; the condition
/// field is empty when it does not apply.
pub fn write_iterates(path: &Path, rows: &[IterateRow]) -> io::Result<()> {
    let mut out = String::new();
    if let Some(first) = rows.first() {
        let n = first.p.nrows();
        let (km, kn) = first.k.shape();
        out.push_str("iteration");
        for j in 0..n {
            for i in j..n {
                write!(out, ",p_{}_{}", i + 1, j + 1).unwrap();
            }
        }
        for j in 0..kn {
            for i in 0..km {
                write!(out, ",k_{}_{}", i + 1, j + 1).unwrap();
            }
        }
        out.push_str(",dp_norm,ms_radius,condition\n");
    }
    for row in rows {
        write!(out, "{}", row.iteration).unwrap();
        let vp = vec_plus(&row.p).expect("iterate P is square by construction");
        for x in vp.iter() {
            write!(out, ",{x}").unwrap();
        }
        for x in vec_of(&row.k).iter() {
            write!(out, ",{x}").unwrap();
        }
        write!(out, ",{},{}", row.dp_norm, row.radius).unwrap();
        match row.condition {
            Some(c) => writeln!(out, ",{c}").unwrap(),
            None => writeln!(out, ",").unwrap(),
        }
    }
    fs::write(path, out)
}

/// Writes trajectories.csv with columns window, path, t, x_1..x_n. The
/// window column identifies which excitation window a path belongs to.
pub fn write_trajectories(path: &Path, batches: &[TrajectoryBatch], n: usize) -> io::Result<()> {
    let mut out = String::from("window,path,t");
    for i in 0..n {
        write!(out, ",x_{}", i + 1).unwrap();
    }
    out.push('\n');
    for (w, batch) in batches.iter().enumerate() {
        for (p, states) in batch.paths.iter().enumerate() {
            for (offset, x) in states.iter().enumerate() {
                write!(out, "{w},{p},{}", batch.start + offset).unwrap();
                for entry in x.iter() {
                    write!(out, ",{entry}").unwrap();
                }
                out.push('\n');
            }
        }
    }
    fs::write(path, out)
}

/// Plain-text run report. Accumulates lines and 4-decimal matrix blocks,
/// then writes them to a file, prints them, or both.
pub struct Report {
    lines: Vec<String>,
}

impl Report {
    /// Starts a report. The timestamp appears only here, never in the
    /// body, so everything after the header is reproducible.
    pub fn new(command: &str) -> Self {
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            lines: vec![format!("slq {command} report (generated at unix time {stamp})")],
        }
    }

    pub fn line(&mut self, text: impl Into<String>) {
        self.lines.push(text.into());
    }

    pub fn blank(&mut self) {
        self.lines.push(String::new());
    }

    /// Appends a named matrix block, entries at four decimals, columns
    /// right-aligned.
    pub fn matrix(&mut self, name: &str, m: &DMatrix<f64>) {
        self.lines.push(format!("{name} ="));
        let cells: Vec<String> = m.iter().map(|x| format!("{x:.4}")).collect();
        let width = cells.iter().map(String::len).max().unwrap_or(0);
        for i in 0..m.nrows() {
            let mut row = String::from(" ");
            for j in 0..m.ncols() {
                write!(row, " {:>width$}", cells[j * m.nrows() + i]).unwrap();
            }
            self.lines.push(row);
        }
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        let mut text = self.lines.join("\n");
        text.push('\n');
        fs::write(path, text)
    }

    /// Prints the body (everything after the timestamp header) to stdout.
    pub fn print_body(&self) {
        for line in &self.lines[1..] {
            println!("{line}");
        }
    }
}
