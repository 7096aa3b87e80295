//! Weight-snapshot model and the `.wsnp` binary format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "WSNP" | version u32 = 1 | epoch u32 | layer_count u32
//! per layer: name_len u32 | name (UTF-8) | ndims u32 (2 or 4) | dims u64 * ndims
//!            | product(dims) * f64, row-major
//! ```

use std::collections::HashSet;
use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"WSNP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("write failed at byte offset {offset}: {source}")]
    Io {
        offset: u64,
        #[source]
        source: io::Error,
    },
    #[error("bad magic bytes {found:02x?}, expected \"WSNP\"")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated at layer {layer} (byte offset {offset})")]
    Truncated { layer: usize, offset: u64 },
    #[error("truncated header (byte offset {offset})")]
    TruncatedHeader { offset: u64 },
    #[error("layer {layer}: name is not valid UTF-8")]
    InvalidName { layer: usize },
    #[error("layer {layer}: {reason}")]
    Structure { layer: usize, reason: String },
    #[error("snapshot has no layers")]
    Empty,
    #[error("unexpected data after the last layer (byte offset {offset})")]
    TrailingBytes { offset: u64 },
}

impl SnapshotError {
    fn structure(layer: usize, reason: impl Into<String>) -> Self {
        SnapshotError::Structure {
            layer,
            reason: reason.into(),
        }
    }
}

/// One named weight tensor. Dense layers are `(out, in)`, convolutions
/// `(out, in, kh, kw)`; values are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl LayerTensor {
    pub fn new(
        name: impl Into<String>,
        dims: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, SnapshotError> {
        let tensor = LayerTensor {
            name: name.into(),
            dims,
            values,
        };
        tensor.validate(0)?;
        Ok(tensor)
    }

    pub fn zeros(name: impl Into<String>, dims: Vec<usize>) -> Result<Self, SnapshotError> {
        let len = dims.iter().product();
        Self::new(name, dims, vec![0.0; len])
    }

    pub fn is_conv(&self) -> bool {
        self.dims.len() == 4
    }

    /// Squared Frobenius norm.
    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    fn validate(&self, index: usize) -> Result<(), SnapshotError> {
        if self.name.is_empty() {
            return Err(SnapshotError::structure(index, "empty layer name"));
        }
        if self.dims.len() != 2 && self.dims.len() != 4 {
            return Err(SnapshotError::structure(
                index,
                format!("expected 2 or 4 dims, got {}", self.dims.len()),
            ));
        }
        if self.dims.contains(&0) {
            return Err(SnapshotError::structure(index, "zero-sized dimension"));
        }
        let expected = checked_product(&self.dims)
            .ok_or_else(|| SnapshotError::structure(index, "dims product overflows"))?;
        if expected != self.values.len() {
            return Err(SnapshotError::structure(
                index,
                format!(
                    "dims product {expected} does not match value count {}",
                    self.values.len()
                ),
            ));
        }
        Ok(())
    }
}

/// Named layer weights of one model at one training instant.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSnapshot {
    pub epoch: u32,
    pub layers: Vec<LayerTensor>,
}

impl WeightSnapshot {
    pub fn new(epoch: u32, layers: Vec<LayerTensor>) -> Result<Self, SnapshotError> {
        let snapshot = WeightSnapshot { epoch, layers };
        snapshot.validate()?;
        Ok(snapshot)
    }

    pub fn validate(&self) -> Result<(), SnapshotError> {
        if self.layers.is_empty() {
            return Err(SnapshotError::Empty);
        }
        let mut seen = HashSet::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(i)?;
            if !seen.insert(layer.name.as_str()) {
                return Err(SnapshotError::structure(
                    i,
                    format!("duplicate layer name {:?}", layer.name),
                ));
            }
        }
        Ok(())
    }

    pub fn layer(&self, name: &str) -> Option<&LayerTensor> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, SnapshotError> {
        let mut buf = Vec::new();
        write_snapshot(self, &mut buf)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SnapshotError> {
        read_snapshot(bytes)
    }
}

fn checked_product(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

struct CountingWriter<W> {
    inner: W,
    written: u64,
}

impl<W: Write> CountingWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<(), SnapshotError> {
        self.inner
            .write_all(bytes)
            .map_err(|source| SnapshotError::Io {
                offset: self.written,
                source,
            })?;
        self.written += bytes.len() as u64;
        Ok(())
    }
}

/// Serializes `snapshot` and returns the number of bytes written.
pub fn write_snapshot<W: Write>(
    snapshot: &WeightSnapshot,
    destination: W,
) -> Result<u64, SnapshotError> {
    snapshot.validate()?;
    let mut out = CountingWriter {
        inner: destination,
        written: 0,
    };
    out.put(&MAGIC)?;
    out.put(&FORMAT_VERSION.to_le_bytes())?;
    out.put(&snapshot.epoch.to_le_bytes())?;
    out.put(&len_u32(snapshot.layers.len(), 0)?.to_le_bytes())?;
    for (i, layer) in snapshot.layers.iter().enumerate() {
        out.put(&len_u32(layer.name.len(), i)?.to_le_bytes())?;
        out.put(layer.name.as_bytes())?;
        out.put(&(layer.dims.len() as u32).to_le_bytes())?;
        for &d in &layer.dims {
            out.put(&(d as u64).to_le_bytes())?;
        }
        // one buffered chunk per layer rather than a syscall-sized write per value
        let mut payload = Vec::with_capacity(layer.values.len() * 8);
        for v in &layer.values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        out.put(&payload)?;
    }
    out.inner.flush().map_err(|source| SnapshotError::Io {
        offset: out.written,
        source,
    })?;
    Ok(out.written)
}

fn len_u32(len: usize, layer: usize) -> Result<u32, SnapshotError> {
    u32::try_from(len).map_err(|_| SnapshotError::structure(layer, "length exceeds u32"))
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    /// Fills `buf`; `Ok(false)` on a short read.
    fn fill(&mut self, buf: &mut [u8]) -> Result<bool, SnapshotError> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    self.offset += got as u64;
                    return Ok(false);
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(source) => {
                    return Err(SnapshotError::Io {
                        offset: self.offset + got as u64,
                        source,
                    })
                }
            }
        }
        self.offset += got as u64;
        Ok(true)
    }

    fn header_u32(&mut self) -> Result<u32, SnapshotError> {
        let mut b = [0u8; 4];
        if !self.fill(&mut b)? {
            return Err(SnapshotError::TruncatedHeader {
                offset: self.offset,
            });
        }
        Ok(u32::from_le_bytes(b))
    }

    fn layer_bytes(&mut self, buf: &mut [u8], layer: usize) -> Result<(), SnapshotError> {
        if self.fill(buf)? {
            Ok(())
        } else {
            Err(SnapshotError::Truncated {
                layer,
                offset: self.offset,
            })
        }
    }

    fn layer_u32(&mut self, layer: usize) -> Result<u32, SnapshotError> {
        let mut b = [0u8; 4];
        self.layer_bytes(&mut b, layer)?;
        Ok(u32::from_le_bytes(b))
    }

    fn layer_u64(&mut self, layer: usize) -> Result<u64, SnapshotError> {
        let mut b = [0u8; 8];
        self.layer_bytes(&mut b, layer)?;
        Ok(u64::from_le_bytes(b))
    }
}

/// Parses a snapshot written by [`write_snapshot`].
pub fn read_snapshot<R: Read>(source: R) -> Result<WeightSnapshot, SnapshotError> {
    let mut cur = Cursor {
        inner: source,
        offset: 0,
    };
    let mut magic = [0u8; 4];
    if !cur.fill(&mut magic)? {
        return Err(SnapshotError::BadMagic {
            found: magic[..cur.offset as usize].to_vec(),
        });
    }
    if magic != MAGIC {
        return Err(SnapshotError::BadMagic {
            found: magic.to_vec(),
        });
    }
    let version = cur.header_u32()?;
    if version != FORMAT_VERSION {
        return Err(SnapshotError::UnsupportedVersion(version));
    }
    let epoch = cur.header_u32()?;
    let layer_count = cur.header_u32()? as usize;
    if layer_count == 0 {
        return Err(SnapshotError::Empty);
    }

    let mut layers = Vec::with_capacity(layer_count.min(1024));
    for i in 0..layer_count {
        let name_len = cur.layer_u32(i)? as usize;
        let mut name = vec![0u8; name_len];
        cur.layer_bytes(&mut name, i)?;
        let name = String::from_utf8(name).map_err(|_| SnapshotError::InvalidName { layer: i })?;

        let ndims = cur.layer_u32(i)?;
        if ndims != 2 && ndims != 4 {
            return Err(SnapshotError::structure(
                i,
                format!("expected 2 or 4 dims, got {ndims}"),
            ));
        }
        let mut dims = Vec::with_capacity(ndims as usize);
        for _ in 0..ndims {
            let d = cur.layer_u64(i)?;
            let d = usize::try_from(d)
                .map_err(|_| SnapshotError::structure(i, "dimension exceeds address space"))?;
            dims.push(d);
        }
        if dims.contains(&0) {
            return Err(SnapshotError::structure(i, "zero-sized dimension"));
        }
        let count = checked_product(&dims)
            .and_then(|c| c.checked_mul(8).map(|_| c))
            .ok_or_else(|| SnapshotError::structure(i, "dims product overflows"))?;

        // read in bounded chunks so a corrupt header cannot force a huge allocation
        let mut values = Vec::with_capacity(count.min(1 << 20));
        let mut chunk = vec![0u8; 8 * count.min(1 << 16)];
        let mut remaining = count;
        while remaining > 0 {
            let take = remaining.min(1 << 16);
            let bytes = &mut chunk[..take * 8];
            cur.layer_bytes(bytes, i)?;
            values.extend(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))),
            );
            remaining -= take;
        }
        layers.push(LayerTensor { name, dims, values });
    }
    let end = cur.offset;
    if cur.fill(&mut [0u8; 1])? {
        return Err(SnapshotError::TrailingBytes { offset: end });
    }

    let snapshot = WeightSnapshot { epoch, layers };
    snapshot.validate()?;
    Ok(snapshot)
}
