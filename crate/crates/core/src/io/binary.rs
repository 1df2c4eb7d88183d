use std::fs;
use std::path::Path;

use crate::deformation::{DeformationField, FourierEncodingConfig};
use crate::error::{Error, Result};
use crate::raster::Image;
use crate::scene::GaussianSet;

pub const FORMAT_VERSION: u32 = 1;

const FEATURE_MAGIC: [u8; 4] = *b"DGDF";
const QUERY_MAGIC: [u8; 4] = *b"DGDQ";
const CHECKPOINT_MAGIC: [u8; 4] = *b"DGDC";

struct Writer(Vec<u8>);

impl Writer {
    fn header(magic: [u8; 4]) -> Self {
        let mut w = Self(magic.to_vec());
        w.u32(FORMAT_VERSION);
        w
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn len(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v)
            .map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")))?;
        self.u32(v);
        Ok(())
    }

    fn f32s(&mut self, values: &[f64]) {
        self.0.reserve(4 * values.len());
        for v in values {
            self.0.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn header(bytes: &'a [u8], magic: [u8; 4]) -> Result<Self> {
        let mut r = Self { bytes, pos: 0 };
        let found: [u8; 4] = r.take(4)?.try_into().expect("four bytes");
        if found != magic {
            return Err(Error::BadMagic {
                expected: magic,
                found,
            });
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::TruncatedFile)?;
        let out = self.bytes.get(self.pos..end).ok_or(Error::TruncatedFile)?;
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("four bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("eight bytes"),
        ))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(4).ok_or(Error::TruncatedFile)?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
            .collect())
    }

    fn finish(self) -> Result<()> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(Error::TrailingBytes(n)),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(fs::read(path)?)
}

/// `DGDF`: `H`, `W`, `C` then `H·W·C` floats, row-major, channel-last.
pub fn encode_feature_map(map: &Image) -> Result<Vec<u8>> {
    let mut w = Writer::header(FEATURE_MAGIC);
    w.len(map.height)?;
    w.len(map.width)?;
    w.len(map.channels)?;
    w.f32s(&map.data);
    Ok(w.0)
}

pub fn decode_feature_map(bytes: &[u8]) -> Result<Image> {
    let mut r = Reader::header(bytes, FEATURE_MAGIC)?;
    let (h, w, c) = (r.usize()?, r.usize()?, r.usize()?);
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or(Error::TruncatedFile)?;
    let data = r.f32s(n)?;
    r.finish()?;
    Image::from_data(w, h, c, data)
}

pub fn write_feature_map(path: impl AsRef<Path>, map: &Image) -> Result<()> {
    Ok(fs::write(path, encode_feature_map(map)?)?)
}

pub fn read_feature_map(path: impl AsRef<Path>) -> Result<Image> {
    decode_feature_map(&read_file(path.as_ref())?)
}

/// `DGDQ`: `C` then `C` floats.
pub fn encode_query_embedding(q: &[f64]) -> Result<Vec<u8>> {
    let mut w = Writer::header(QUERY_MAGIC);
    w.len(q.len())?;
    w.f32s(q);
    Ok(w.0)
}

pub fn decode_query_embedding(bytes: &[u8]) -> Result<Vec<f64>> {
    let mut r = Reader::header(bytes, QUERY_MAGIC)?;
    let c = r.usize()?;
    let q = r.f32s(c)?;
    r.finish()?;
    Ok(q)
}

pub fn write_query_embedding(path: impl AsRef<Path>, q: &[f64]) -> Result<()> {
    Ok(fs::write(path, encode_query_embedding(q)?)?)
}

pub fn read_query_embedding(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    decode_query_embedding(&read_file(path.as_ref())?)
}

/// A trained scene: canonical Gaussians, deformation field and the
/// iteration it was saved at.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub gaussians: GaussianSet,
    pub field: DeformationField,
    pub iteration: u64,
}

/// `DGDC`: `N`, `C`, MLP header (`depth`, `width`, position bands, time
/// bands, include-input flag), the six Gaussian blocks, the MLP parameters
/// and a trailing `u64` iteration.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let g = &ckpt.gaussians;
    let f = &ckpt.field;
    let enc = f.encoding();
    let mut w = Writer::header(CHECKPOINT_MAGIC);
    w.len(g.len())?;
    w.len(g.feature_dim())?;
    w.len(f.depth())?;
    w.len(f.width())?;
    w.len(enc.bands_position)?;
    w.len(enc.bands_time)?;
    w.u32(u32::from(enc.include_input));
    for block in [
        &g.positions,
        &g.rotations,
        &g.log_scales,
        &g.opacity_logits,
        &g.color_logits,
        &g.features,
    ] {
        w.f32s(block);
    }
    w.f32s(f.params());
    w.0.extend_from_slice(&ckpt.iteration.to_le_bytes());
    Ok(w.0)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::header(bytes, CHECKPOINT_MAGIC)?;
    let n = r.usize()?;
    let c = r.usize()?;
    let depth = r.usize()?;
    let width = r.usize()?;
    let bands_position = r.usize()?;
    let bands_time = r.usize()?;
    let include_input = match r.u32()? {
        0 => false,
        1 => true,
        v => return Err(Error::Parse(format!("checkpoint include-input flag {v}"))),
    };
    let encoding = FourierEncodingConfig {
        bands_position,
        bands_time,
        include_input,
    };
    let positions = r.f32s(3 * n)?;
    let rotations = r.f32s(4 * n)?;
    let log_scales = r.f32s(3 * n)?;
    let opacity = r.f32s(n)?;
    let colors = r.f32s(3 * n)?;
    let features = r.f32s(c * n)?;
    let mut field = DeformationField::zeros(encoding, depth, width)?;
    let params = r.f32s(field.num_params())?;
    field.set_params(params)?;
    let iteration = r.u64()?;
    r.finish()?;
    let gaussians = GaussianSet::from_parts(
        positions, rotations, log_scales, opacity, colors, features, c,
    )?;
    Ok(Checkpoint {
        gaussians,
        field,
        iteration,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    Ok(fs::write(path, encode_checkpoint(ckpt)?)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path.as_ref())?)
}
