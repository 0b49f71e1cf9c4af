//! Artifact writers. Numbers are written with Rust's shortest round-trip
//! formatting, so files carry full precision.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::CliError;

pub fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(path).map_err(|e| runtime(format!("cannot create {}: {e}", path.display())))?;
        Ok(Self(path.to_path_buf()))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    pub fn file(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let p = self.path(name);
        File::create(&p)
            .map(BufWriter::new)
            .map_err(|e| runtime(format!("cannot write {}: {e}", p.display())))
    }

    pub fn csv(&self, name: &str) -> Result<csv::Writer<BufWriter<File>>, CliError> {
        Ok(csv::Writer::from_writer(self.file(name)?))
    }

    /// Writes `manifest.json`: the resolved flags under `config` (so the file
    /// can be fed back through `--config`), the library version and extras.
    pub fn manifest<A: Serialize>(&self, command: &str, args: &A, extra: Value) -> Result<(), CliError> {
        let mut m = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": serde_json::to_value(args).map_err(runtime)?,
        });
        if let (Value::Object(m), Value::Object(extra)) = (&mut m, extra) {
            m.extend(extra);
        }
        let mut f = self.file("manifest.json")?;
        serde_json::to_writer_pretty(&mut f, &m).map_err(runtime)?;
        writeln!(f).map_err(runtime)?;
        f.flush().map_err(runtime)
    }
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

/// `variable, [anchor,] b1 .. bd` with one row per covariate.
pub fn write_loadings(
    out: &OutDir,
    name: &str,
    names: &[String],
    b: &DMatrix<f64>,
    anchors: Option<&[usize]>,
) -> Result<(), CliError> {
    let mut w = out.csv(name)?;
    let mut header = vec!["variable".to_string()];
    if anchors.is_some() {
        header.push("anchor".into());
    }
    header.extend((1..=b.ncols()).map(|c| format!("b{c}")));
    w.write_record(&header).map_err(runtime)?;
    for (r, var) in names.iter().enumerate() {
        let mut rec = vec![var.clone()];
        if let Some(a) = anchors {
            rec.push((a.contains(&r) as u8).to_string());
        }
        rec.extend(b.row(r).iter().map(|&v| num(v)));
        w.write_record(&rec).map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}

/// Writes `rows` as a CSV table with `header`.
pub fn write_table(out: &OutDir, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = out.csv(name)?;
    w.write_record(header).map_err(runtime)?;
    for r in rows {
        w.write_record(r).map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}
