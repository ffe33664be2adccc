//! Index file layout, all integers little-endian:
//!
//! ```text
//! magic            8 bytes "DMINDEX\0"
//! version          u32     1
//! encoder kind     u8      1 = base, 2 = enhanced
//! dim              u32
//! count            u32
//! checkpoint_hash  u16 length + UTF-8
//! config_hash      u16 length + UTF-8
//! names            count times: u32 length + UTF-8
//! matrix           count*dim f32, row-major, unit rows
//! flags            u8      bit 0: cluster section, bit 1: concept section
//! cluster section  clusters u32, default_probes u32, centroids clusters*dim f32,
//!                  offsets (clusters+1) u32, ids count u32
//! concept section  entries u32, each: u32 entity id, u16 n, n times u32 length + UTF-8
//! ```
//!
//! Quantized codes are derived from the matrix on load.

use std::io::{BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::checkpoint::sha256_hex;
use crate::error::{Error, Result};
use crate::index::{ConceptMap, EntityIndex, IndexMeta, Ivf};
use crate::model::EncoderKind;
use crate::numerics::Matrix32;

pub const MAGIC: &[u8; 8] = b"DMINDEX\0";
pub const VERSION: u32 = 1;

struct HashingWriter<W: Write> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

fn put_str<W: Write>(w: &mut W, s: &str, wide: bool) -> Result<()> {
    if wide {
        w.write_all(&(u32::try_from(s.len()).map_err(|_| Error::Format("string too long".into()))?).to_le_bytes())?;
    } else {
        w.write_all(&(u16::try_from(s.len()).map_err(|_| Error::Format("string too long".into()))?).to_le_bytes())?;
    }
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn put_f32s<W: Write>(w: &mut W, xs: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(4096);
    for chunk in xs.chunks(1024) {
        buf.clear();
        for x in chunk {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn put_u32s<W: Write>(w: &mut W, xs: &[u32]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

impl EntityIndex {
    pub fn write_to<W: Write>(&self, w: W) -> Result<String> {
        let mut w = HashingWriter {
            inner: BufWriter::new(w),
            hasher: Sha256::new(),
        };
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[self.meta.encoder.tag()])?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        put_str(&mut w, &self.meta.checkpoint_hash, false)?;
        put_str(&mut w, &self.meta.config_hash, false)?;
        for n in &self.names {
            put_str(&mut w, n, true)?;
        }
        put_f32s(&mut w, self.matrix.as_slice())?;
        let flags = self.ivf.is_some() as u8 | ((self.concepts.is_some() as u8) << 1);
        w.write_all(&[flags])?;
        if let Some(ivf) = &self.ivf {
            w.write_all(&(ivf.num_clusters() as u32).to_le_bytes())?;
            w.write_all(&(ivf.default_probes as u32).to_le_bytes())?;
            put_f32s(&mut w, ivf.centroids.as_slice())?;
            put_u32s(&mut w, &ivf.offsets)?;
            put_u32s(&mut w, &ivf.ids)?;
        }
        if let Some(map) = &self.concepts {
            let mut entries: Vec<(u32, &Vec<String>)> = map.iter().map(|(n, c)| (self.name_to_id[n], c)).collect();
            entries.sort_by_key(|e| e.0);
            w.write_all(&(entries.len() as u32).to_le_bytes())?;
            for (id, cs) in entries {
                w.write_all(&id.to_le_bytes())?;
                w.write_all(&(cs.len() as u16).to_le_bytes())?;
                for c in cs {
                    put_str(&mut w, c, true)?;
                }
            }
        }
        w.flush()?;
        Ok(hex::encode(w.hasher.finalize()))
    }

    /// Writes the index and returns the SHA-256 of the file.
    pub fn save(&self, path: &Path) -> Result<String> {
        self.write_to(std::fs::File::create(path)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not an index file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported index version {version}")));
        }
        let tag = r.take(1)?[0];
        let encoder = EncoderKind::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown encoder tag {tag}")))?;
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let checkpoint_hash = r.string(false)?;
        let config_hash = r.string(false)?;
        let names = (0..count).map(|_| r.string(true)).collect::<Result<Vec<_>>>()?;
        let matrix = Matrix32::from_vec(count, dim, r.f32s(count * dim)?)?;
        let flags = r.take(1)?[0];
        if flags & !3 != 0 {
            return Err(Error::Format(format!("unknown flags {flags:#x}")));
        }
        let ivf = if flags & 1 != 0 {
            let clusters = r.u32()? as usize;
            let probes = r.u32()? as usize;
            let centroids = Matrix32::from_vec(clusters, dim, r.f32s(clusters * dim)?)?;
            let offsets = r.u32s(clusters + 1)?;
            let ids = r.u32s(count)?;
            let mut seen = vec![false; count];
            let valid = offsets.first() == Some(&0)
                && offsets.last() == Some(&(count as u32))
                && offsets.windows(2).all(|w| w[0] <= w[1])
                && ids.iter().all(|&i| (i as usize) < count && !std::mem::replace(&mut seen[i as usize], true));
            if !valid {
                return Err(Error::Format("corrupt cluster lists".into()));
            }
            Some(Ivf::from_parts(&matrix, centroids, offsets, ids, probes))
        } else {
            None
        };
        let concepts = if flags & 2 != 0 {
            let n = r.u32()? as usize;
            let mut map = ConceptMap::new();
            for _ in 0..n {
                let id = r.u32()? as usize;
                let name = names.get(id).ok_or_else(|| Error::Format(format!("concept entry for id {id}")))?;
                let k = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
                let cs = (0..k).map(|_| r.string(true)).collect::<Result<Vec<_>>>()?;
                map.insert(name.clone(), cs);
            }
            Some(map)
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let meta = IndexMeta {
            encoder,
            checkpoint_hash,
            config_hash,
        };
        let mut index = EntityIndex::from_unit_matrix(matrix, names, concepts.as_ref(), meta)?;
        index.ivf = ivf;
        Ok(index)
    }

    /// Reads an index and the SHA-256 of its file.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::InputMissing(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Ok((Self::from_bytes(&bytes)?, sha256_hex(&bytes)))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        Ok(self
            .take(n.checked_mul(4).ok_or_else(|| Error::Format("overflow".into()))?)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(n.checked_mul(4).ok_or_else(|| Error::Format("overflow".into()))?)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn string(&mut self, wide: bool) -> Result<String> {
        let len = if wide {
            self.u32()? as usize
        } else {
            u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize
        };
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8 string".into()))
    }
}
