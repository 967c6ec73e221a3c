use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::observables::ObservableSeries;

use super::config::ExperimentConfig;

pub const MANIFEST_JSON: &str = "manifest.json";
pub const MANIFEST_TXT: &str = "manifest.txt";

/// Complex matrix as a JSON document: row-major `[re, im]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl From<&CMatrix> for MatrixJson {
    fn from(m: &CMatrix) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let z = m[(r, c)];
                data.push([z.re, z.im]);
            }
        }
        MatrixJson {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl MatrixJson {
    pub fn to_matrix(&self) -> Result<CMatrix> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {}x{} matrix",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(CMatrix::from_fn(self.rows, self.cols, |r, c| {
            let [re, im] = self.data[r * self.cols + c];
            crate::linalg::C64::new(re, im)
        }))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub version: String,
    pub files: Vec<FileEntry>,
    pub started_unix_s: u64,
    pub wall_clock_s: f64,
    pub workers: usize,
}

impl RunManifest {
    pub fn load(run_dir: impl AsRef<Path>) -> Result<Self> {
        let path = run_dir.as_ref().join(MANIFEST_JSON);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Files whose current checksum differs from the recorded one.
    pub fn verify(&self, run_dir: impl AsRef<Path>) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for f in &self.files {
            let path = run_dir.as_ref().join(&f.path);
            match fs::read(&path) {
                Ok(bytes) if sha256_hex(&bytes) == f.sha256 => {}
                _ => bad.push(f.path.clone()),
            }
        }
        Ok(bad)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes the files of one run and remembers them for the manifest.
#[derive(Debug)]
pub struct RunOutput {
    dir: PathBuf,
    files: Vec<String>,
}

impl RunOutput {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(RunOutput { dir, files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    /// CSV table; numbers are written in shortest round-trip form.
    pub fn table(&mut self, name: &str, header: &[String], rows: &[Vec<Cell>]) -> Result<()> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    /// `time_us, mean, sd, r1..rK`.
    pub fn series(&mut self, name: &str, s: &ObservableSeries) -> Result<()> {
        let mut header = vec!["time_us".to_string(), "mean".into(), "sd".into()];
        header.extend((1..=s.n_realizations()).map(|k| format!("r{k}")));
        let rows: Vec<Vec<Cell>> = (0..s.times.len())
            .map(|t| {
                let mut row = vec![Cell::F(s.times[t]), Cell::F(s.mean[t]), Cell::F(s.sd[t])];
                row.extend(s.values.iter().map(|v| Cell::F(v[t])));
                row
            })
            .collect();
        self.table(name, &header, &rows)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Checksum every written file and store the manifest as JSON and text.
    pub fn finish(
        self,
        config: &ExperimentConfig,
        started_unix_s: u64,
        wall_clock_s: f64,
        workers: usize,
    ) -> Result<RunManifest> {
        let mut files = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let path = self.dir.join(name);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            files.push(FileEntry {
                path: name.clone(),
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            });
        }
        let manifest = RunManifest {
            config: config.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            files,
            started_unix_s,
            wall_clock_s,
            workers,
        };
        let json_path = self.dir.join(MANIFEST_JSON);
        fs::write(&json_path, serde_json::to_string_pretty(&manifest)? + "\n")
            .map_err(|e| Error::io(&json_path, e))?;
        let txt_path = self.dir.join(MANIFEST_TXT);
        let mut txt = fs::File::create(&txt_path).map_err(|e| Error::io(&txt_path, e))?;
        let mut body = format!(
            "experiment: {}\nversion: {}\nseed: {}\nworkers: {}\nstarted_unix_s: {}\nwall_clock_s: {:.3}\nfiles:\n",
            config.experiment, manifest.version, config.seed, workers, started_unix_s, wall_clock_s
        );
        for f in &manifest.files {
            body.push_str(&format!("  {}  {}  {}\n", f.sha256, f.bytes, f.path));
        }
        txt.write_all(body.as_bytes()).map_err(|e| Error::io(&txt_path, e))?;
        Ok(manifest)
    }
}

/// One CSV field.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    F(f64),
    U(usize),
    S(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => format!("{x}"),
            Cell::U(n) => n.to_string(),
            Cell::S(s) => s.clone(),
        }
    }
}

pub fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}
