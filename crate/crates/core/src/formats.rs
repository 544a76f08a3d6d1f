//! On-disk formats.
//!
//! All integers and floats are little-endian.
//!
//! * `EMB1`: magic `"EMB1"`, `u32` version 1, `u64` rows, `u64` dim, then
//!   `rows * dim` `f32` values row-major. Metadata lives in a JSON sidecar at
//!   the same path with extension `.json` (see [`Sidecar`]).
//! * `SIM1`: magic `"SIM1"`, `u32` version 1, `u64` n_q, `u64` n_c, `u8`
//!   stage (0 base, 1 new, 2 geom, 3 struct, 4 final), then `n_q * n_c` `f32`
//!   values row-major.
//! * `WMD1`: magic `"WMD1"`, `u32` version 1, `u64` record count, `u64` dim,
//!   then per record: `u64` subject id ([`CANDIDATE_RECORD`] for the
//!   candidate model), `f64` lambda, `u64` n_fit, `dim` `f64` mean values and
//!   `dim * dim` `f64` transform values row-major.
//!
//! Writes go to a temporary file in the target directory that is renamed
//! into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::FittedModels;
use crate::types::{EmbeddingSet, Role, SimMatrix, Stage};
use crate::whitening::WhitenModel;

pub const EMB1_MAGIC: [u8; 4] = *b"EMB1";
pub const SIM1_MAGIC: [u8; 4] = *b"SIM1";
pub const WMD1_MAGIC: [u8; 4] = *b"WMD1";
pub const VERSION: u32 = 1;
/// Subject id marking the candidate-side model in a WMD1 file.
pub const CANDIDATE_RECORD: u64 = u64::MAX;

/// Metadata stored next to an EMB1 payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub role: Role,
    pub subject_of: Vec<usize>,
    #[serde(default)]
    pub label_of: Option<Vec<usize>>,
    #[serde(default)]
    pub class_names: Option<Vec<String>>,
    #[serde(default)]
    pub subject_name_map: BTreeMap<String, usize>,
}

impl Sidecar {
    /// Sidecar for `set` with subject names equal to the dense ids.
    pub fn for_set(set: &EmbeddingSet) -> Self {
        let subject_name_map = match set.role {
            Role::Query => (0..set.num_subjects())
                .map(|s| (s.to_string(), s))
                .collect(),
            Role::Candidate => [("pool".to_string(), 0)].into_iter().collect(),
        };
        Self {
            role: set.role,
            subject_of: set.subject_of.clone(),
            label_of: set.label_of.clone(),
            class_names: None,
            subject_name_map,
        }
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        if self.subject_of.len() != rows {
            return Err(Error::SidecarMismatch(format!(
                "subject_of has {} entries for {rows} rows",
                self.subject_of.len()
            )));
        }
        if let Some(l) = &self.label_of {
            if l.len() != rows {
                return Err(Error::SidecarMismatch(format!(
                    "label_of has {} entries for {rows} rows",
                    l.len()
                )));
            }
        }
        Ok(())
    }
}

pub fn sidecar_path(emb1: &Path) -> PathBuf {
    emb1.with_extension("json")
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::TruncatedPayload {
                expected: (self.pos as u64).saturating_add(n as u64),
                found: self.buf.len() as u64,
            }),
        }
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        if found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    /// Exactly `rows * cols` f32 values must remain.
    fn f32_matrix(&mut self, rows: u64, cols: u64) -> Result<Array2<f64>> {
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(self.pos as u64))
            .ok_or(Error::TruncatedPayload {
                expected: u64::MAX,
                found: self.buf.len() as u64,
            })?;
        if expected != self.buf.len() as u64 {
            return Err(Error::TruncatedPayload {
                expected,
                found: self.buf.len() as u64,
            });
        }
        let bytes = self.take((rows * cols * 4) as usize)?;
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        Ok(
            Array2::from_shape_vec((rows as usize, cols as usize), values)
                .expect("length checked above"),
        )
    }
}

fn push_f32_matrix(out: &mut Vec<u8>, m: &Array2<f64>) {
    out.reserve(m.len() * 4);
    for &v in m.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_emb1(vectors: &Array2<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + vectors.len() * 4);
    out.extend_from_slice(&EMB1_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(vectors.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(vectors.ncols() as u64).to_le_bytes());
    push_f32_matrix(&mut out, vectors);
    out
}

pub fn decode_emb1(bytes: &[u8]) -> Result<Array2<f64>> {
    let mut r = Reader::new(bytes);
    r.magic(EMB1_MAGIC)?;
    let rows = r.u64()?;
    let dim = r.u64()?;
    r.f32_matrix(rows, dim)
}

/// Writes the payload and its sidecar.
pub fn write_emb1(path: &Path, set: &EmbeddingSet, sidecar: &Sidecar) -> Result<()> {
    sidecar.check_rows(set.len())?;
    write_atomic(path, &encode_emb1(&set.vectors))?;
    let json = serde_json::to_vec_pretty(sidecar)?;
    write_atomic(&sidecar_path(path), &json)
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Reads a payload and its sidecar and validates the resulting set.
pub fn read_emb1(path: &Path) -> Result<(EmbeddingSet, Sidecar)> {
    let vectors = decode_emb1(&fs::read(path)?)?;
    let sidecar = read_sidecar(&sidecar_path(path))?;
    sidecar.check_rows(vectors.nrows())?;
    let set = EmbeddingSet::new(
        vectors,
        sidecar.role,
        sidecar.subject_of.clone(),
        sidecar.label_of.clone(),
    )?;
    Ok((set, sidecar))
}

pub fn encode_sim1(s: &SimMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(25 + s.scores.len() * 4);
    out.extend_from_slice(&SIM1_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(s.n_queries() as u64).to_le_bytes());
    out.extend_from_slice(&(s.n_classes() as u64).to_le_bytes());
    out.push(s.stage.code());
    push_f32_matrix(&mut out, &s.scores);
    out
}

/// Decodes a SIM1 payload. Index maps are the identity.
pub fn decode_sim1(bytes: &[u8]) -> Result<SimMatrix> {
    let mut r = Reader::new(bytes);
    r.magic(SIM1_MAGIC)?;
    let nq = r.u64()?;
    let nc = r.u64()?;
    let stage = Stage::from_code(r.u8()?)?;
    let scores = r.f32_matrix(nq, nc)?;
    if let Some(((row, col), _)) = scores.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { row, col });
    }
    Ok(SimMatrix::new(scores, stage))
}

pub fn write_sim1(path: &Path, s: &SimMatrix) -> Result<()> {
    write_atomic(path, &encode_sim1(s))
}

pub fn read_sim1(path: &Path) -> Result<SimMatrix> {
    decode_sim1(&fs::read(path)?)
}

fn push_model(out: &mut Vec<u8>, subject: u64, m: &WhitenModel) {
    out.extend_from_slice(&subject.to_le_bytes());
    out.extend_from_slice(&m.lambda_reg.to_le_bytes());
    out.extend_from_slice(&(m.n_fit as u64).to_le_bytes());
    for v in m.mean.iter().chain(m.w.iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_wmd1(models: &FittedModels) -> Result<Vec<u8>> {
    let dims: Vec<usize> = models
        .saw
        .values()
        .chain(models.candidate.iter())
        .map(WhitenModel::dim)
        .collect();
    let dim = dims.first().copied().unwrap_or(0);
    if let Some(&other) = dims.iter().find(|&&d| d != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            found: other,
        });
    }
    let mut out = Vec::new();
    out.extend_from_slice(&WMD1_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u64).to_le_bytes());
    out.extend_from_slice(&(dim as u64).to_le_bytes());
    for (&s, m) in &models.saw {
        push_model(&mut out, s as u64, m);
    }
    if let Some(m) = &models.candidate {
        push_model(&mut out, CANDIDATE_RECORD, m);
    }
    Ok(out)
}

pub fn decode_wmd1(bytes: &[u8]) -> Result<FittedModels> {
    let mut r = Reader::new(bytes);
    r.magic(WMD1_MAGIC)?;
    let count = r.u64()?;
    let dim = r.u64()? as usize;
    let record = 24 + 8 * (dim + dim * dim);
    let expected = (count as u128) * (record as u128) + 24;
    if expected != bytes.len() as u128 {
        return Err(Error::TruncatedPayload {
            expected: expected.min(u64::MAX as u128) as u64,
            found: bytes.len() as u64,
        });
    }
    let mut models = FittedModels::default();
    for _ in 0..count {
        let subject = r.u64()?;
        let lambda_reg = r.f64()?;
        let n_fit = r.u64()? as usize;
        let mean = Array1::from((0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
        let w = (0..dim * dim)
            .map(|_| r.f64())
            .collect::<Result<Vec<_>>>()?;
        let w = Array2::from_shape_vec((dim, dim), w).expect("dim * dim values");
        let model = WhitenModel {
            mean,
            w,
            lambda_reg,
            n_fit,
        };
        if subject == CANDIDATE_RECORD {
            models.candidate = Some(model);
        } else {
            models.saw.insert(subject as usize, model);
        }
    }
    Ok(models)
}

pub fn write_wmd1(path: &Path, models: &FittedModels) -> Result<()> {
    write_atomic(path, &encode_wmd1(models)?)
}

pub fn read_wmd1(path: &Path) -> Result<FittedModels> {
    decode_wmd1(&fs::read(path)?)
}
