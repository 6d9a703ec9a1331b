//! PSAB (segmentation) and PSBR (regression) batch files.
//!
//! Both are little-endian. Header: 4-byte magic, `u32` version (1), `u64`
//! record count, patch dims as 3×`u32`, `u32` label count. PSBR appends a
//! `u8` target kind (0 = ρ, 1 = T1, 2 = T2) and writes a label count of 0.
//!
//! Each record: `u16` subject-id length and UTF-8 bytes, `u8` provenance
//! (0 = real, 1 = synthetic), `u8` sequence kind, θ as 3×`f64` (zeros for
//! real records), corner as 3×`u32`, the intensity patch as `f32`, then the
//! label patch as `u16` (PSAB) or the target patch as `f32` (PSBR).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::pulse::{SequenceKind, ThetaSet};

pub const PSAB_MAGIC: &[u8; 4] = b"PSAB";
pub const PSBR_MAGIC: &[u8; 4] = b"PSBR";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Real,
    Synthetic,
}

/// NMR quantity stored as the target of a regression record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TargetKind {
    Rho,
    T1,
    T2,
}

impl TargetKind {
    pub fn code(self) -> u8 {
        match self {
            TargetKind::Rho => 0,
            TargetKind::T1 => 1,
            TargetKind::T2 => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [TargetKind::Rho, TargetKind::T1, TargetKind::T2].into_iter().find(|t| t.code() == c)
    }
}

/// Provenance, sequence and location shared by both record kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordMeta {
    pub subject_id: String,
    pub provenance: Provenance,
    pub kind: SequenceKind,
    /// Present exactly when the record is synthetic.
    pub theta: Option<ThetaSet>,
    pub corner: [u32; 3],
}

impl RecordMeta {
    pub fn real(subject_id: &str, kind: SequenceKind, corner: [usize; 3]) -> Self {
        RecordMeta {
            subject_id: subject_id.to_string(),
            provenance: Provenance::Real,
            kind,
            theta: None,
            corner: corner.map(|c| c as u32),
        }
    }

    pub fn synthetic(subject_id: &str, theta: ThetaSet, corner: [usize; 3]) -> Self {
        RecordMeta {
            subject_id: subject_id.to_string(),
            provenance: Provenance::Synthetic,
            kind: theta.kind,
            theta: Some(theta),
            corner: corner.map(|c| c as u32),
        }
    }
}

/// One segmentation training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRecord {
    pub meta: RecordMeta,
    pub intensity: Vec<f32>,
    pub labels: Vec<u16>,
}

/// One regression training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionRecord {
    pub meta: RecordMeta,
    pub intensity: Vec<f32>,
    pub target: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PsabHeader {
    pub record_count: u64,
    pub patch_dims: [u32; 3],
    pub label_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PsbrHeader {
    pub record_count: u64,
    pub patch_dims: [u32; 3],
    pub target_kind: TargetKind,
}

fn patch_len(dims: [u32; 3]) -> usize {
    dims.iter().map(|&d| d as usize).product()
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<batch stream>", e)
}

fn write_common_header<W: Write>(w: &mut W, magic: &[u8; 4], count: u64, dims: [u32; 3], labels: u32) -> std::io::Result<()> {
    w.write_all(magic)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u64::<LittleEndian>(count)?;
    for d in dims {
        w.write_u32::<LittleEndian>(d)?;
    }
    w.write_u32::<LittleEndian>(labels)
}

fn read_common_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<(u64, [u32; 3], u32)> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m).map_err(truncation)?;
    if &m != magic {
        return Err(Error::Format {
            offset: 0,
            field: "magic",
            message: format!("expected {:?}, found {:?}", String::from_utf8_lossy(magic), m),
        });
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncation)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format {
            offset: 4,
            field: "version",
            message: format!("unsupported version {version} (expected {FORMAT_VERSION})"),
        });
    }
    let count = r.read_u64::<LittleEndian>().map_err(truncation)?;
    let mut dims = [0u32; 3];
    for d in &mut dims {
        *d = r.read_u32::<LittleEndian>().map_err(truncation)?;
    }
    if dims.contains(&0) {
        return Err(Error::Format {
            offset: 16,
            field: "patch_dims",
            message: format!("patch dims must be positive, found {dims:?}"),
        });
    }
    let labels = r.read_u32::<LittleEndian>().map_err(truncation)?;
    Ok((count, dims, labels))
}

fn truncation(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Truncated {
            expected: 0,
            found: 0,
        }
    } else {
        io_err(e)
    }
}

fn write_meta<W: Write>(w: &mut W, meta: &RecordMeta) -> Result<()> {
    let id = meta.subject_id.as_bytes();
    let len = u16::try_from(id.len())
        .map_err(|_| Error::Validation(format!("subject id longer than {} bytes", u16::MAX)))?;
    if (meta.provenance == Provenance::Synthetic) != meta.theta.is_some() {
        return Err(Error::Validation("θ must be present exactly for synthetic records".into()));
    }
    let theta = meta.theta.map(|t| t.theta).unwrap_or([0.0; 3]);
    (|| -> std::io::Result<()> {
        w.write_u16::<LittleEndian>(len)?;
        w.write_all(id)?;
        w.write_u8(match meta.provenance {
            Provenance::Real => 0,
            Provenance::Synthetic => 1,
        })?;
        w.write_u8(meta.kind.code())?;
        for t in theta {
            w.write_f64::<LittleEndian>(t)?;
        }
        for c in meta.corner {
            w.write_u32::<LittleEndian>(c)?;
        }
        Ok(())
    })()
    .map_err(io_err)
}

fn read_meta<R: Read>(r: &mut R) -> Result<RecordMeta> {
    let len = r.read_u16::<LittleEndian>().map_err(truncation)? as usize;
    let mut id = vec![0u8; len];
    r.read_exact(&mut id).map_err(truncation)?;
    let subject_id =
        String::from_utf8(id).map_err(|_| Error::Validation("subject id is not valid UTF-8".into()))?;
    let provenance = match r.read_u8().map_err(truncation)? {
        0 => Provenance::Real,
        1 => Provenance::Synthetic,
        other => return Err(Error::Validation(format!("unknown provenance byte {other}"))),
    };
    let code = r.read_u8().map_err(truncation)?;
    let kind = SequenceKind::from_code(code)
        .ok_or_else(|| Error::Validation(format!("unknown sequence kind byte {code}")))?;
    let mut theta = [0.0; 3];
    for t in &mut theta {
        *t = r.read_f64::<LittleEndian>().map_err(truncation)?;
    }
    let mut corner = [0u32; 3];
    for c in &mut corner {
        *c = r.read_u32::<LittleEndian>().map_err(truncation)?;
    }
    let theta = match provenance {
        Provenance::Real => None,
        Provenance::Synthetic => Some(ThetaSet::new(kind, theta)?),
    };
    Ok(RecordMeta {
        subject_id,
        provenance,
        kind,
        theta,
        corner,
    })
}

fn write_f32s<W: Write>(w: &mut W, xs: &[f32]) -> Result<()> {
    let mut buf = vec![0u8; 4 * xs.len()];
    for (c, x) in buf.chunks_exact_mut(4).zip(xs) {
        c.copy_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf).map_err(io_err)
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; 4 * n];
    r.read_exact(&mut buf).map_err(truncation)?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Streaming PSAB writer. The declared record count must match the number of
/// records written before [`PsabWriter::finish`].
pub struct PsabWriter<W: Write> {
    inner: W,
    header: PsabHeader,
    written: u64,
}

impl<W: Write> PsabWriter<W> {
    pub fn new(mut inner: W, header: PsabHeader) -> Result<Self> {
        write_common_header(&mut inner, PSAB_MAGIC, header.record_count, header.patch_dims, header.label_count)
            .map_err(io_err)?;
        Ok(PsabWriter {
            inner,
            header,
            written: 0,
        })
    }

    pub fn write_record(&mut self, rec: &BatchRecord) -> Result<()> {
        let n = patch_len(self.header.patch_dims);
        if rec.intensity.len() != n || rec.labels.len() != n {
            return Err(Error::Validation(format!(
                "record patch sizes ({}, {}) do not match header dims {:?}",
                rec.intensity.len(),
                rec.labels.len(),
                self.header.patch_dims
            )));
        }
        if let Some(x) = rec.intensity.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Validation(format!("intensity {x} outside [0, 1]")));
        }
        if let Some(l) = rec.labels.iter().find(|&&l| l as u32 >= self.header.label_count) {
            return Err(Error::Validation(format!(
                "label {l} outside the label set of size {}",
                self.header.label_count
            )));
        }
        if self.written >= self.header.record_count {
            return Err(Error::Validation("more records than declared in the header".into()));
        }
        write_meta(&mut self.inner, &rec.meta)?;
        write_f32s(&mut self.inner, &rec.intensity)?;
        let mut buf = vec![0u8; 2 * n];
        for (c, l) in buf.chunks_exact_mut(2).zip(&rec.labels) {
            c.copy_from_slice(&l.to_le_bytes());
        }
        self.inner.write_all(&buf).map_err(io_err)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.header.record_count {
            return Err(Error::Validation(format!(
                "declared {} records but wrote {}",
                self.header.record_count, self.written
            )));
        }
        self.inner.flush().map_err(io_err)?;
        Ok(self.inner)
    }
}

/// Streaming PSAB reader yielding records in file order.
pub struct PsabReader<R: Read> {
    inner: R,
    header: PsabHeader,
    remaining: u64,
}

impl<R: Read> PsabReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let (record_count, patch_dims, label_count) = read_common_header(&mut inner, PSAB_MAGIC)?;
        Ok(PsabReader {
            inner,
            header: PsabHeader {
                record_count,
                patch_dims,
                label_count,
            },
            remaining: record_count,
        })
    }

    pub fn header(&self) -> PsabHeader {
        self.header
    }

    fn read_record(&mut self) -> Result<BatchRecord> {
        let n = patch_len(self.header.patch_dims);
        let meta = read_meta(&mut self.inner)?;
        let intensity = read_f32s(&mut self.inner, n)?;
        let mut buf = vec![0u8; 2 * n];
        self.inner.read_exact(&mut buf).map_err(truncation)?;
        let labels = buf.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        Ok(BatchRecord { meta, intensity, labels })
    }
}

impl<R: Read> Iterator for PsabReader<R> {
    type Item = Result<BatchRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let rec = self.read_record();
        if rec.is_err() {
            self.remaining = 0;
        }
        Some(rec)
    }
}

pub fn write_psab(path: impl AsRef<Path>, header: PsabHeader, records: &[BatchRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = PsabWriter::new(BufWriter::new(file), header)?;
    for r in records {
        w.write_record(r)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_psab(path: impl AsRef<Path>) -> Result<(PsabHeader, Vec<BatchRecord>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = PsabReader::new(BufReader::new(file))?;
    let header = reader.header();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}

pub struct PsbrWriter<W: Write> {
    inner: W,
    header: PsbrHeader,
    written: u64,
}

impl<W: Write> PsbrWriter<W> {
    pub fn new(mut inner: W, header: PsbrHeader) -> Result<Self> {
        write_common_header(&mut inner, PSBR_MAGIC, header.record_count, header.patch_dims, 0)
            .and_then(|_| inner.write_u8(header.target_kind.code()))
            .map_err(io_err)?;
        Ok(PsbrWriter {
            inner,
            header,
            written: 0,
        })
    }

    pub fn write_record(&mut self, rec: &RegressionRecord) -> Result<()> {
        let n = patch_len(self.header.patch_dims);
        if rec.intensity.len() != n || rec.target.len() != n {
            return Err(Error::Validation(format!(
                "record patch sizes ({}, {}) do not match header dims {:?}",
                rec.intensity.len(),
                rec.target.len(),
                self.header.patch_dims
            )));
        }
        if self.written >= self.header.record_count {
            return Err(Error::Validation("more records than declared in the header".into()));
        }
        write_meta(&mut self.inner, &rec.meta)?;
        write_f32s(&mut self.inner, &rec.intensity)?;
        write_f32s(&mut self.inner, &rec.target)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.header.record_count {
            return Err(Error::Validation(format!(
                "declared {} records but wrote {}",
                self.header.record_count, self.written
            )));
        }
        self.inner.flush().map_err(io_err)?;
        Ok(self.inner)
    }
}

pub fn read_psbr(path: impl AsRef<Path>) -> Result<(PsbrHeader, Vec<RegressionRecord>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_psbr(BufReader::new(file))
}

pub fn decode_psbr<R: Read>(mut r: R) -> Result<(PsbrHeader, Vec<RegressionRecord>)> {
    let (record_count, patch_dims, _) = read_common_header(&mut r, PSBR_MAGIC)?;
    let code = r.read_u8().map_err(truncation)?;
    let target_kind = TargetKind::from_code(code).ok_or_else(|| Error::Format {
        offset: 28,
        field: "target_kind",
        message: format!("unknown target kind byte {code}"),
    })?;
    let header = PsbrHeader {
        record_count,
        patch_dims,
        target_kind,
    };
    let n = patch_len(patch_dims);
    let mut records = Vec::new();
    for _ in 0..record_count {
        let meta = read_meta(&mut r)?;
        let intensity = read_f32s(&mut r, n)?;
        let target = read_f32s(&mut r, n)?;
        records.push(RegressionRecord { meta, intensity, target });
    }
    Ok((header, records))
}
