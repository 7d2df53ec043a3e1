//! Binary checkpoint format.
//!
//! ```text
//! "PDFN"  u32 version  u8 bytes-per-scalar
//! u32 metadata length, metadata (UTF-8 key = value text)
//! u32 entry count
//! per entry: u8 kind (0 parameter, 1 buffer), u32 name length, name,
//!            u8 rank (4), rank x u32 dims, little-endian payload
//! ```
//!
//! All integers are little-endian. Round trips are bit-exact.

use std::path::Path;

use crate::config::KvConfig;
use crate::error::{io_at, Error, Result};
use crate::network::{Model, ModelConfig};
use crate::params::{Named, ParamStore};
use crate::tensor::{Scalar, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"PDFN";
pub const VERSION: u32 = 1;

const KIND_PARAM: u8 = 0;
const KIND_BUFFER: u8 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("checkpoint field exceeds u32");
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode<T: Scalar>(store: &ParamStore<T>, metadata: &str) -> Vec<u8> {
    let (params, buffers) = store.parts();
    let payload: usize = params.iter().chain(buffers).map(|n| n.tensor.len()).sum();
    let mut out = Vec::with_capacity(64 + metadata.len() + payload * T::BYTES as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::BYTES);
    put_u32(&mut out, metadata.len());
    out.extend_from_slice(metadata.as_bytes());
    put_u32(&mut out, params.len() + buffers.len());
    let tagged = params
        .iter()
        .map(|n| (KIND_PARAM, n))
        .chain(buffers.iter().map(|n| (KIND_BUFFER, n)));
    for (kind, named) in tagged {
        out.push(kind);
        put_u32(&mut out, named.name.len());
        out.extend_from_slice(named.name.as_bytes());
        out.push(4);
        for d in named.tensor.shape().dims() {
            put_u32(&mut out, d);
        }
        for &v in named.tensor.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse("checkpoint", self.pos, msg)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)?;
        let start = self.pos;
        let b = self.take(len, what)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| Error::parse("checkpoint", start, format!("{what} is not UTF-8")))
    }
}

/// Parses a checkpoint whose scalars are of type `T`. Returns the metadata
/// text and the stored tensors.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(String, ParamStore<T>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::parse("checkpoint", 0, "bad magic"));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::parse("checkpoint", 4, format!("unsupported version {version}")));
    }
    let width = r.u8("scalar width")?;
    if width != T::BYTES {
        return Err(Error::parse(
            "checkpoint",
            8,
            format!("stored {width}-byte scalars, expected {}", T::BYTES),
        ));
    }
    let metadata = r.string("metadata")?;
    let count = r.u32("entry count")?;
    let mut params = Vec::new();
    let mut buffers = Vec::new();
    for _ in 0..count {
        let kind_pos = r.pos;
        let kind = r.u8("entry kind")?;
        let name = r.string("entry name")?;
        let rank_pos = r.pos;
        let rank = r.u8("rank")?;
        if rank != 4 {
            return Err(Error::parse("checkpoint", rank_pos, format!("rank {rank}, expected 4")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32("dimension")?;
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(T::BYTES as usize).map(|b| (n, b)));
        let Some((numel, nbytes)) = numel else {
            return Err(r.err("tensor size overflows"));
        };
        let payload = r.take(nbytes, "payload")?;
        let data = payload
            .chunks_exact(T::BYTES as usize)
            .map(T::read_le)
            .collect::<Vec<_>>();
        debug_assert_eq!(data.len(), numel);
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        let tensor = Tensor::from_vec(shape, data)?;
        let named = Named { name, tensor };
        match kind {
            KIND_PARAM => params.push(named),
            KIND_BUFFER => buffers.push(named),
            k => return Err(Error::parse("checkpoint", kind_pos, format!("unknown entry kind {k}"))),
        }
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes"));
    }
    Ok((metadata, ParamStore::from_parts(params, buffers)))
}

pub fn save<T: Scalar>(path: &Path, store: &ParamStore<T>, metadata: &str) -> Result<()> {
    std::fs::write(path, encode(store, metadata)).map_err(io_at(path))?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<(String, ParamStore<T>)> {
    decode(&std::fs::read(path).map_err(io_at(path))?)
}

impl<T: Scalar> Model<T> {
    /// Writes the model; its configuration plus `extra` become the metadata.
    pub fn save(&self, path: &Path, extra: &KvConfig) -> Result<()> {
        let mut meta = self.config().to_kv();
        meta.merge(extra);
        save(path, &self.store, &meta.to_string())
    }

    /// Rebuilds the model described by a checkpoint's metadata and fills it
    /// with the stored tensors.
    pub fn load(path: &Path) -> Result<(Self, KvConfig)> {
        let (meta, stored) = load::<T>(path)?;
        let kv = KvConfig::parse(&meta)?;
        let mut model = Model::new(ModelConfig::from_kv(&kv)?, 0)?;
        model.store.load_from(&stored)?;
        Ok((model, kv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add_param("a.weight", Tensor::from_fn(Shape::new(2, 3, 1, 1), |i| i as f32 * 0.1 - 0.2));
        s.add_param("a.bias", Tensor::full(Shape::new(1, 2, 1, 1), f32::MIN_POSITIVE));
        s.add_buffer("a.running_var", Tensor::full(Shape::new(1, 2, 1, 1), -0.0));
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample();
        let bytes = encode(&s, "k = v\n");
        let (meta, back) = decode::<f32>(&bytes).unwrap();
        assert_eq!(meta, "k = v\n");
        let (p0, b0) = s.parts();
        let (p1, b1) = back.parts();
        for (x, y) in p0.iter().chain(b0).zip(p1.iter().chain(b1)) {
            assert_eq!(x.name, y.name);
            let xb: Vec<u32> = x.tensor.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u32> = y.tensor.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        assert_eq!(encode(&back, &meta), bytes);
    }

    #[test]
    fn wrong_width_and_magic_are_rejected() {
        let bytes = encode(&sample(), "");
        assert!(matches!(decode::<f64>(&bytes), Err(Error::Parse { offset: 8, .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode::<f32>(&bad), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn every_truncation_is_an_error() {
        let bytes = encode(&sample(), "meta");
        for cut in 0..bytes.len() {
            assert!(decode::<f32>(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode::<f32>(&long).is_err());
    }

    #[test]
    fn huge_dimensions_do_not_allocate() {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.push(4);
        b.extend_from_slice(&0u32.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.push(0);
        b.extend_from_slice(&1u32.to_le_bytes());
        b.push(b'x');
        b.push(4);
        for _ in 0..4 {
            b.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(decode::<f32>(&b), Err(Error::Parse { .. })));
    }

    #[test]
    fn model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut cfg = ModelConfig::parse_name("pdfnet3-2s").unwrap();
        cfg.spec.num_classes = 5;
        let m = Model::<f32>::new(cfg, 7).unwrap();
        let mut extra = KvConfig::new();
        extra.set("epoch", 3);
        m.save(&path, &extra).unwrap();
        let (back, kv) = Model::<f32>::load(&path).unwrap();
        assert_eq!(back.config(), cfg);
        assert_eq!(back.store, m.store);
        assert_eq!(kv.get("epoch"), Some("3"));
        // Scalar count on disk equals the analytic parameter count.
        let (_, stored) = load::<f32>(&path).unwrap();
        assert_eq!(stored.scalar_count(), m.net.arch.param_count());
    }
}
