//! Packed region-feature file. Binary, little-endian:
//! magic `M3SV`, version u32, then per record: id length u32, id bytes,
//! n u32, m u32, d_v u32, features n*m*d_v f32, boxes n*m*4 f32,
//! mask n*m u8. Records run to end of file.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::VisionInput;

const MAGIC: &[u8; 4] = b"M3SV";
const VERSION: u32 = 1;

/// One article's region features, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct VisionRecord {
    pub id: String,
    pub n_images: usize,
    pub m_regions: usize,
    pub d_v: usize,
    /// `n*m*d_v`, row-major by (image, region).
    pub features: Vec<f32>,
    /// `n*m*4` normalized coordinates.
    pub boxes: Vec<f32>,
    /// `n*m`, 1 = real region.
    pub mask: Vec<u8>,
}

impl VisionRecord {
    pub fn validate(&self) -> Result<()> {
        let rows = self.n_images * self.m_regions;
        if rows == 0 || self.d_v == 0 {
            return Err(Error::data(format!("vision record {} has empty grid", self.id)));
        }
        if self.features.len() != rows * self.d_v
            || self.boxes.len() != rows * 4
            || self.mask.len() != rows
        {
            return Err(Error::shape(
                "vision-record",
                format!("inconsistent buffer lengths in record {}", self.id),
            ));
        }
        Ok(())
    }

    pub fn to_input(&self) -> Result<VisionInput<f32>> {
        self.validate()?;
        let rows = self.n_images * self.m_regions;
        Ok(VisionInput {
            features: Tensor::matrix(rows, self.d_v, self.features.clone())?,
            boxes: Tensor::matrix(rows, 4, self.boxes.clone())?,
            mask: self.mask.clone(),
            n_images: self.n_images,
            m_regions: self.m_regions,
        })
    }
}

fn put_u32(out: &mut impl Write, v: u32) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_vision_file(records: &[VisionRecord], path: &Path) -> Result<()> {
    for rec in records {
        rec.validate()?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    put_u32(&mut out, VERSION)?;
    for rec in records {
        let id = rec.id.as_bytes();
        put_u32(&mut out, id.len() as u32)?;
        out.write_all(id)?;
        put_u32(&mut out, rec.n_images as u32)?;
        put_u32(&mut out, rec.m_regions as u32)?;
        put_u32(&mut out, rec.d_v as u32)?;
        for &f in &rec.features {
            out.write_all(&f.to_le_bytes())?;
        }
        for &b in &rec.boxes {
            out.write_all(&b.to_le_bytes())?;
        }
        out.write_all(&rec.mask)?;
    }
    out.flush()?;
    Ok(())
}

struct Reader<'a> {
    inner: &'a [u8],
    path: String,
}

impl Reader<'_> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::format(format!("{}: truncated while reading {what}", self.path)))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let b = self.bytes(n * 4, what)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

pub fn read_vision_file(path: &Path) -> Result<BTreeMap<String, VisionRecord>> {
    let file = File::open(path)?;
    let mut data = Vec::new();
    BufReader::new(file).read_to_end(&mut data)?;
    let mut r = Reader { inner: &data[..], path: path.display().to_string() };

    let magic = r.bytes(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(format!("{}: bad magic", path.display())));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(format!(
            "{}: unsupported vision file version {version}",
            path.display()
        )));
    }

    let mut records = BTreeMap::new();
    while !r.inner.is_empty() {
        let id_len = r.u32("id length")? as usize;
        let id = String::from_utf8(r.bytes(id_len, "id")?)
            .map_err(|_| Error::format(format!("{}: non-utf8 record id", path.display())))?;
        let n = r.u32("n")? as usize;
        let m = r.u32("m")? as usize;
        let d_v = r.u32("d_v")? as usize;
        let rows = n
            .checked_mul(m)
            .ok_or_else(|| Error::format(format!("{}: absurd grid in {id}", path.display())))?;
        let features = r.f32s(rows * d_v, "features")?;
        let boxes = r.f32s(rows * 4, "boxes")?;
        let mask = r.bytes(rows, "mask")?;
        let rec = VisionRecord { id: id.clone(), n_images: n, m_regions: m, d_v, features, boxes, mask };
        rec.validate()?;
        if records.insert(id.clone(), rec).is_some() {
            return Err(Error::format(format!("{}: duplicate record id {id}", path.display())));
        }
    }
    if records.is_empty() {
        return Err(Error::data(format!("{}: no vision records", path.display())));
    }
    Ok(records)
}
