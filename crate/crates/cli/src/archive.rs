//! Seekable, versioned container for a calibrated model.
//!
//! Layout: the 8-byte magic `ADQARCH\0`, a little-endian `u32` format
//! version, a `u64` header length, the JSON header, then the data blocks.
//! The header holds the run metadata and a table of contents giving each
//! block's name, shape and byte offset from the start of the data section.
//! Blocks are `f64` little-endian in column-major order.

use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use adequacy::basis::ParamBounds;
use adequacy::emulator::WeightFit;
use adequacy::inference::PosteriorArchive;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"ADQARCH\0";
pub const FORMAT_VERSION: u32 = 1;
pub const ARCHIVE_FILE: &str = "posterior.adq";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub model: String,
    pub software_version: String,
    /// Hash of config, seed and input files that produced the archive.
    pub manifest_hash: String,
    pub observation_hash: String,
    pub seed: u64,
    /// Ensemble size M.
    pub runs: usize,
    /// Series length N.
    pub points: usize,
    pub basis_size: usize,
    pub variance_explained: f64,
    pub parameters: Vec<ParamBounds>,
    /// Boundary input names, the fictitious input first.
    pub boundary_names: Vec<String>,
    pub output_unit: String,
    pub noise_variance: f64,
    pub prior_shape: f64,
    pub prior_rate: f64,
    pub calibration_chains: usize,
    pub discrepancy_chains: usize,
    pub emulator: Vec<WeightFit>,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    meta: ArchiveMeta,
    blocks: Vec<BlockEntry>,
}

/// Everything a calibration run leaves behind.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedModel {
    pub meta: ArchiveMeta,
    pub posterior: PosteriorArchive,
    /// N × Q simulation basis.
    pub k: DMatrix<f64>,
    pub v_hat: DVector<f64>,
    pub w_star: DVector<f64>,
    /// N × (S+1) standardized boundary inputs.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub prediction: DVector<f64>,
    pub design_unit: DMatrix<f64>,
}

fn column(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

fn vector(m: DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn format_err(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {msg}", path.display()))
}

impl CalibratedModel {
    fn blocks(&self) -> Vec<(&'static str, DMatrix<f64>)> {
        let p = &self.posterior;
        vec![
            ("calibration_samples", p.calibration_samples.clone()),
            ("calibration_log_weights", column(&p.calibration_log_weights)),
            ("calibration_replicates", column(&p.calibration_replicates)),
            ("discrepancy_samples", p.discrepancy_samples.clone()),
            ("discrepancy_log_weights", column(&p.discrepancy_log_weights)),
            ("discrepancy_replicates", column(&p.discrepancy_replicates)),
            ("k", self.k.clone()),
            ("v_hat", column(self.v_hat.as_slice())),
            ("w_star", column(self.w_star.as_slice())),
            ("x", self.x.clone()),
            ("y", column(self.y.as_slice())),
            ("prediction", column(self.prediction.as_slice())),
            ("design_unit", self.design_unit.clone()),
        ]
    }

    pub fn to_bytes(&self) -> CliResult<Vec<u8>> {
        let blocks = self.blocks();
        let mut toc = Vec::with_capacity(blocks.len());
        let mut offset = 0u64;
        for (name, m) in &blocks {
            toc.push(BlockEntry { name: (*name).into(), rows: m.nrows(), cols: m.ncols(), offset });
            offset += 8 * m.len() as u64;
        }
        let header = serde_json::to_vec(&Header { meta: self.meta.clone(), blocks: toc })
            .map_err(|e| CliError::Data(format!("archive header: {e}")))?;
        let mut out = Vec::with_capacity(20 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, m) in &blocks {
            for v in m.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let bytes = self.to_bytes()?;
        let mut f = File::create(path).map_err(CliError::io(path))?;
        f.write_all(&bytes).and_then(|_| f.sync_all()).map_err(CliError::io(path))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let mut r = ArchiveReader::open(path)?;
        let meta = r.meta().clone();
        let mut get = |name: &str| r.block(name);
        let posterior = PosteriorArchive {
            calibration_samples: get("calibration_samples")?,
            calibration_log_weights: get("calibration_log_weights")?.as_slice().to_vec(),
            calibration_replicates: get("calibration_replicates")?.as_slice().to_vec(),
            discrepancy_samples: get("discrepancy_samples")?,
            discrepancy_log_weights: get("discrepancy_log_weights")?.as_slice().to_vec(),
            discrepancy_replicates: get("discrepancy_replicates")?.as_slice().to_vec(),
            calibration_chains: meta.calibration_chains,
            discrepancy_chains: meta.discrepancy_chains,
        };
        posterior.validate().map_err(|e| format_err(path, e))?;
        Ok(Self {
            posterior,
            k: get("k")?,
            v_hat: vector(get("v_hat")?),
            w_star: vector(get("w_star")?),
            x: get("x")?,
            y: vector(get("y")?),
            prediction: vector(get("prediction")?),
            design_unit: get("design_unit")?,
            meta,
        })
    }

    /// log10 evidence of every replicate (calibration plus discrepancy).
    pub fn log10_replicates(&self) -> Vec<f64> {
        self.posterior.log10_replicates()
    }
}

/// Reads the header eagerly and individual blocks on demand.
#[derive(Debug)]
pub struct ArchiveReader {
    path: PathBuf,
    file: BufReader<File>,
    data_start: u64,
    meta: ArchiveMeta,
    blocks: Vec<BlockEntry>,
}

impl ArchiveReader {
    pub fn open(path: &Path) -> CliResult<Self> {
        let f = File::open(path).map_err(CliError::io(path))?;
        let len = f.metadata().map_err(CliError::io(path))?.len();
        let mut file = BufReader::new(f);
        let mut fixed = [0u8; 20];
        file.read_exact(&mut fixed).map_err(|_| format_err(path, "not an archive (file too short)"))?;
        if &fixed[..8] != MAGIC {
            return Err(format_err(path, "not an archive (bad magic)"));
        }
        let version = u32::from_le_bytes(fixed[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(format_err(path, format!("archive format {version}, this build reads {FORMAT_VERSION}")));
        }
        let header_len = u64::from_le_bytes(fixed[12..20].try_into().expect("8 bytes"));
        if header_len > len.saturating_sub(20) {
            return Err(format_err(path, "truncated header"));
        }
        let mut header = vec![0u8; header_len as usize];
        file.read_exact(&mut header).map_err(|e| format_err(path, e))?;
        let header: Header = serde_json::from_slice(&header).map_err(|e| format_err(path, e))?;
        let data_start = 20 + header_len;
        for b in &header.blocks {
            if data_start + b.offset + 8 * (b.rows * b.cols) as u64 > len {
                return Err(format_err(path, format!("block {} runs past the end of the file", b.name)));
            }
        }
        Ok(Self { path: path.to_path_buf(), file, data_start, meta: header.meta, blocks: header.blocks })
    }

    pub fn meta(&self) -> &ArchiveMeta {
        &self.meta
    }

    pub fn blocks(&self) -> &[BlockEntry] {
        &self.blocks
    }

    pub fn block(&mut self, name: &str) -> CliResult<DMatrix<f64>> {
        let entry = self
            .blocks
            .iter()
            .find(|b| b.name == name)
            .cloned()
            .ok_or_else(|| format_err(&self.path, format!("missing block {name}")))?;
        self.file.seek(SeekFrom::Start(self.data_start + entry.offset)).map_err(CliError::io(&self.path))?;
        let mut raw = vec![0u8; 8 * entry.rows * entry.cols];
        self.file.read_exact(&mut raw).map_err(CliError::io(&self.path))?;
        let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(DMatrix::from_vec(entry.rows, entry.cols, values))
    }
}
