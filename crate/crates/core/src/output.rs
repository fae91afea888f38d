//! Plain-text writers for snapshots, the per-step series, column profiles
//! and nullcline curves. Reals are written with 17 significant digits.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::diagnostics::{ColumnProfile, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::mesh::GridSpec;
use crate::stepper::{RunObserver, SimState, SnapshotPoint};

/// `x` with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "nan".to_string(), num)
}

/// Buffered file that is flushed and synced on [`SyncedFile::finish`].
pub struct SyncedFile {
    path: PathBuf,
    out: BufWriter<File>,
}

impl SyncedFile {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(self) -> Result<()> {
        let path = self.path;
        let file = self
            .out
            .into_inner()
            .map_err(|e| Error::io(&path, e.into_error()))?;
        file.sync_all().map_err(|e| Error::io(&path, e))
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = SyncedFile::create(path)?;
    f.out
        .write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    f.finish()
}

pub fn write_snapshot(path: &Path, t: f64, grid: &GridSpec, field: &Field) -> Result<()> {
    let mut f = SyncedFile::create(path)?;
    f.line(&format!("# t = {}", num(t)))?;
    f.line(&format!(
        "# J = {}, I = {}, dp = {}, dr = {}",
        grid.j_max(),
        grid.i_max(),
        num(grid.dp()),
        num(grid.dr())
    ))?;
    for j in 0..grid.np() {
        for i in 0..grid.nr() {
            f.line(&format!(
                "{j} {i} {} {} {}",
                num(grid.p_center(j)),
                num(grid.r_center(i)),
                num(field[(j, i)])
            ))?;
        }
    }
    f.finish()
}

pub const SERIES_HEADER: &str = "# n t u M0 M1 Mrp rho drift clamp_count";

pub fn series_row(r: &DiagnosticsRecord) -> String {
    format!(
        "{} {} {} {} {} {} {} {} {}",
        r.step,
        num(r.t),
        num(r.u),
        num(r.m0),
        num(r.m1),
        num(r.mrp),
        num(r.rho),
        num(r.drift),
        r.clamp_count
    )
}

pub fn write_profile(path: &Path, t: f64, u: f64, profile: &ColumnProfile) -> Result<()> {
    let mut f = SyncedFile::create(path)?;
    f.line(&format!("# t = {}, u = {}", num(t), num(u)))?;
    f.line(&format!(
        "# concentration_distance = {}",
        num(profile.concentration_distance())
    ))?;
    f.line("# j p_center mass rbar rstd r_null")?;
    for (j, c) in profile.columns.iter().enumerate() {
        f.line(&format!(
            "{j} {} {} {} {} {}",
            num(c.p),
            num(c.mass),
            opt(c.rbar),
            opt(c.rstd),
            num(c.r_null)
        ))?;
    }
    f.finish()
}

pub fn curve_lines(grid: &GridSpec, u: f64, r_null: &[f64]) -> Vec<String> {
    let mut lines = vec![format!("# u = {}", num(u)), "# p_center r_null".to_string()];
    lines.extend(
        r_null
            .iter()
            .enumerate()
            .map(|(j, r)| format!("{} {}", num(grid.p_center(j)), num(*r))),
    );
    lines
}

pub fn write_curve(path: &Path, grid: &GridSpec, u: f64, r_null: &[f64]) -> Result<()> {
    let mut f = SyncedFile::create(path)?;
    for line in curve_lines(grid, u, r_null) {
        f.line(&line)?;
    }
    f.finish()
}

/// Writes the series and snapshots of a run into a directory:
/// `series.dat`, `snapshot_<step>.dat` and the `snapshots.dat` index with
/// the rounding of each requested time.
pub struct DirectoryObserver {
    dir: PathBuf,
    grid: GridSpec,
    series: Option<SyncedFile>,
    index: Option<SyncedFile>,
}

impl DirectoryObserver {
    pub fn create(dir: &Path, grid: GridSpec) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut series = SyncedFile::create(&dir.join("series.dat"))?;
        series.line(SERIES_HEADER)?;
        let mut index = SyncedFile::create(&dir.join("snapshots.dat"))?;
        index.line("# file step t requested rounding")?;
        Ok(Self {
            dir: dir.to_path_buf(),
            grid,
            series: Some(series),
            index: Some(index),
        })
    }

    pub fn snapshot_name(step: usize) -> String {
        format!("snapshot_{step:07}.dat")
    }

    /// Flushes and syncs the series and index files.
    pub fn finish(mut self) -> Result<()> {
        if let Some(s) = self.series.take() {
            s.finish()?;
        }
        if let Some(s) = self.index.take() {
            s.finish()?;
        }
        Ok(())
    }
}

impl RunObserver for DirectoryObserver {
    fn record(&mut self, record: &DiagnosticsRecord) -> Result<()> {
        self.series
            .as_mut()
            .expect("observer is open")
            .line(&series_row(record))
    }

    fn snapshot(&mut self, point: &SnapshotPoint, state: &SimState) -> Result<()> {
        let name = Self::snapshot_name(point.step);
        write_snapshot(&self.dir.join(&name), state.time, &self.grid, &state.field)?;
        self.index
            .as_mut()
            .expect("observer is open")
            .line(&format!(
                "{name} {} {} {} {}",
                point.step,
                num(point.time),
                opt(point.requested),
                num(point.rounding())
            ))
    }
}
