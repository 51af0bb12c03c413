//! Artifact writers. Every float goes out as `{:.16e}` so identical runs give
//! byte-identical files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dynamics::SimRecord;
use crate::error::{Error, Result};
use crate::state::MembraneState;
use crate::steady::SteadyBranch;

/// Fixed 17-significant-digit scientific notation.
pub fn sci(x: f64) -> String {
    format!("{x:.16e}")
}

/// As [`sci`], with `None` written as an empty field.
pub fn sci_opt(x: Option<f64>) -> String {
    x.map(sci).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Structure(format!("csv: {other:?}")),
    }
}

/// An output directory that remembers what was written into it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        Ok(OutputDir { root, written: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Relative names of the files written so far, in write order.
    pub fn files(&self) -> &[String] {
        &self.written
    }

    fn open(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        self.written.push(name.to_string());
        Ok(BufWriter::new(File::create(path)?))
    }

    /// Writes a CSV table with a header row.
    pub fn csv<I, R>(&mut self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let mut w = csv::Writer::from_writer(self.open(name)?);
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.write_record(row.into_iter().collect::<Vec<_>>()).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Pretty-printed JSON with a trailing newline.
    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.open(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    /// Raw writer for formats with their own serializer.
    pub fn with_writer<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let mut w = self.open(name)?;
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Writes `x,u,v` for one state.
pub fn write_state(out: &mut OutputDir, name: &str, s: &MembraneState) -> Result<()> {
    let rows = (0..s.grid.len()).map(|i| [sci(s.grid.x(i)), sci(s.u[i]), sci(s.v[i])]);
    out.csv(name, &["x", "u", "v"], rows)
}

/// `record.csv`, optional snapshots and `summary.json` for one run.
pub fn write_record(out: &mut OutputDir, rec: &SimRecord, snapshots: bool) -> Result<()> {
    let rows = rec.snapshots.iter().enumerate().map(|(k, s)| {
        let (g1, g2) = rec.load_norms[k];
        [sci(s.t), sci(rec.gap_min[k]), sci(rec.e_alpha[k]), sci(g1), sci(g2)]
    });
    out.csv("record.csv", &["t", "gap_min", "E_alpha", "max_g1", "max_g2"], rows)?;
    if snapshots {
        for (k, s) in rec.snapshots.iter().enumerate() {
            write_state(out, &format!("snapshots/snap_{k:05}.csv"), s)?;
        }
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        model: &'a str,
        verdict: &'a str,
        touchdown_time: Option<f64>,
        detail: &'a crate::dynamics::Verdict,
        steps: usize,
        final_time: f64,
        final_gap_min: f64,
    }
    out.json(
        "summary.json",
        &Summary {
            model: &rec.model,
            verdict: rec.verdict.label(),
            touchdown_time: rec.verdict.touchdown_time(),
            detail: &rec.verdict,
            steps: rec.steps,
            final_time: rec.last().t,
            final_gap_min: rec.last().gap_min(),
        },
    )
}

/// One `branch.csv` row.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchRow {
    pub lambda: f64,
    pub mu: f64,
    pub state_min_gap: f64,
    pub u_mid: f64,
    pub v_mid: f64,
    pub spectral_bound: f64,
    pub fold_flag: bool,
}

impl BranchRow {
    pub fn from_state(lambda: f64, mu: f64, s: &MembraneState, spectral_bound: f64, fold_flag: bool) -> Self {
        let mid = s.grid.mid();
        BranchRow {
            lambda,
            mu,
            state_min_gap: s.gap_min(),
            u_mid: s.u[mid],
            v_mid: s.v[mid],
            spectral_bound,
            fold_flag,
        }
    }
}

pub fn steady_branch_rows(b: &SteadyBranch) -> Vec<BranchRow> {
    b.points
        .iter()
        .map(|p| BranchRow::from_state(p.lambda, p.mu, &p.state, p.spectral_bound, p.fold_flag))
        .collect()
}

pub fn write_branch(out: &mut OutputDir, rows: &[BranchRow]) -> Result<()> {
    let body = rows.iter().map(|r| {
        [
            sci(r.lambda),
            sci(r.mu),
            sci(r.state_min_gap),
            sci(r.u_mid),
            sci(r.v_mid),
            sci(r.spectral_bound),
            (r.fold_flag as u8).to_string(),
        ]
    });
    out.csv(
        "branch.csv",
        &["lambda", "mu", "min_gap", "u_mid", "v_mid", "spectral_bound", "fold_flag"],
        body,
    )
}
