//! `FNW1` checkpoint files.
//!
//! Layout (little-endian): magic `FNW1`, u32 version, u8 float width (4 or
//! 8), input layout (u8 tag, then u32 extents), u64 init seed, u32 layer
//! count, then per layer a u8 tag followed by its u32 parameters. After the
//! layers come u32 tensor count and each parameter tensor as u32 rank, u32
//! extents and row-major values at the declared width.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{InputLayout, LayerSpec, LocalSpec, Network};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FNW1";
pub const CHECKPOINT_VERSION: u32 = 1;

const TAG_DENSE: u8 = 0;
const TAG_CONV: u8 = 1;
const TAG_UNTIED: u8 = 2;
const TAG_SOFTMAX: u8 = 3;

const LAYOUT_FLAT: u8 = 0;
const LAYOUT_GRID: u8 = 1;

/// Largest tensor rank a checkpoint may declare.
const MAX_RANK: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloatWidth {
    F32,
    F64,
}

impl FloatWidth {
    fn byte(self) -> u8 {
        match self {
            FloatWidth::F32 => 4,
            FloatWidth::F64 => 8,
        }
    }
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::format(what, format!("{v} does not fit in u32")))
}

pub fn write_network<W: Write>(net: &Network, width: FloatWidth, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.write_u8(width.byte())?;
    match net.input() {
        InputLayout::Flat(d) => {
            w.write_u8(LAYOUT_FLAT)?;
            w.write_u32::<LittleEndian>(u32_of(d, "input")?)?;
        }
        InputLayout::Grid { time, freq } => {
            w.write_u8(LAYOUT_GRID)?;
            w.write_u32::<LittleEndian>(u32_of(time, "input")?)?;
            w.write_u32::<LittleEndian>(u32_of(freq, "input")?)?;
        }
    }
    w.write_u64::<LittleEndian>(net.seed())?;
    w.write_u32::<LittleEndian>(u32_of(net.layers().len(), "layers")?)?;
    for layer in net.layers() {
        let (tag, values): (u8, Vec<usize>) = match *layer {
            LayerSpec::Dense(units) => (TAG_DENSE, vec![units]),
            LayerSpec::SoftmaxOutput(k) => (TAG_SOFTMAX, vec![k]),
            LayerSpec::Conv(l) | LayerSpec::Untied(l) => (
                if matches!(layer, LayerSpec::Conv(_)) {
                    TAG_CONV
                } else {
                    TAG_UNTIED
                },
                vec![l.maps, l.filter.0, l.filter.1, l.pool.0, l.pool.1],
            ),
        };
        w.write_u8(tag)?;
        for v in values {
            w.write_u32::<LittleEndian>(u32_of(v, "layers")?)?;
        }
    }
    w.write_u32::<LittleEndian>(u32_of(net.params().len(), "tensors")?)?;
    for t in net.params() {
        w.write_u32::<LittleEndian>(u32_of(t.shape().len(), "rank")?)?;
        for &e in t.shape() {
            w.write_u32::<LittleEndian>(u32_of(e, "extent")?)?;
        }
        for &v in t.data() {
            match width {
                FloatWidth::F32 => w.write_f32::<LittleEndian>(v as f32)?,
                FloatWidth::F64 => w.write_f64::<LittleEndian>(v)?,
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn field<T>(r: std::io::Result<T>, name: &str) -> Result<T> {
    r.map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(name, "file truncated"),
        _ => Error::Io(e),
    })
}

/// Reads a checkpoint. Returns the network and the width it was stored at.
pub fn read_network<R: Read>(mut r: R) -> Result<(Network, FloatWidth)> {
    let mut magic = [0u8; 4];
    field(r.read_exact(&mut magic), "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format(
            "magic",
            format!("expected FNW1, found {magic:?}"),
        ));
    }
    let version = field(r.read_u32::<LittleEndian>(), "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            "version",
            format!("unsupported version {version}"),
        ));
    }
    let width = match field(r.read_u8(), "float_width")? {
        4 => FloatWidth::F32,
        8 => FloatWidth::F64,
        other => {
            return Err(Error::format(
                "float_width",
                format!("{other} is not 4 or 8"),
            ))
        }
    };
    let u32f = |r: &mut R, name: &str| -> Result<usize> {
        Ok(field(r.read_u32::<LittleEndian>(), name)? as usize)
    };
    let input = match field(r.read_u8(), "input")? {
        LAYOUT_FLAT => InputLayout::Flat(u32f(&mut r, "input")?),
        LAYOUT_GRID => {
            let time = u32f(&mut r, "input")?;
            let freq = u32f(&mut r, "input")?;
            InputLayout::Grid { time, freq }
        }
        other => {
            return Err(Error::format(
                "input",
                format!("unknown layout tag {other}"),
            ))
        }
    };
    let seed = field(r.read_u64::<LittleEndian>(), "seed")?;
    let count = u32f(&mut r, "layers")?;
    let mut layers = Vec::new();
    for _ in 0..count {
        let tag = field(r.read_u8(), "layers")?;
        let layer = match tag {
            TAG_DENSE => LayerSpec::Dense(u32f(&mut r, "layers")?),
            TAG_SOFTMAX => LayerSpec::SoftmaxOutput(u32f(&mut r, "layers")?),
            TAG_CONV | TAG_UNTIED => {
                let mut v = [0usize; 5];
                for slot in v.iter_mut() {
                    *slot = u32f(&mut r, "layers")?;
                }
                let local = LocalSpec {
                    maps: v[0],
                    filter: (v[1], v[2]),
                    pool: (v[3], v[4]),
                };
                if tag == TAG_CONV {
                    LayerSpec::Conv(local)
                } else {
                    LayerSpec::Untied(local)
                }
            }
            other => {
                return Err(Error::format(
                    "layers",
                    format!("unknown layer tag {other}"),
                ))
            }
        };
        layers.push(layer);
    }
    let resolved = super::resolve_layers(input, &layers)
        .map_err(|e| Error::format("layers", e.to_string()))?;

    let tensors = u32f(&mut r, "tensors")?;
    if tensors != 2 * resolved.len() {
        return Err(Error::format(
            "tensors",
            format!("{tensors} tensors for {} layers", resolved.len()),
        ));
    }
    let mut params = Vec::with_capacity(tensors);
    for i in 0..tensors {
        let rank = field(r.read_u32::<LittleEndian>(), "rank")?;
        if rank > MAX_RANK {
            return Err(Error::format("rank", format!("rank {rank} too large")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(u32f(&mut r, "extent")?);
        }
        let layer = &resolved[i / 2];
        let (w, b) = layer.param_shapes();
        let expected = if i % 2 == 0 { w } else { b };
        if shape != expected {
            return Err(Error::format(
                "extent",
                format!("tensor {i} has shape {shape:?}, layer needs {expected:?}"),
            ));
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let v = match width {
                FloatWidth::F32 => field(r.read_f32::<LittleEndian>(), "values")? as f64,
                FloatWidth::F64 => field(r.read_f64::<LittleEndian>(), "values")?,
            };
            data.push(v);
        }
        params.push(Tensor::new(shape, data)?);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::format(
            "trailer",
            "unexpected bytes after the last tensor",
        ));
    }
    let net = Network::from_parts(input, layers, params, seed).map_err(|e| match e {
        Error::Numerical(m) => Error::format("values", m),
        other => other,
    })?;
    Ok((net, width))
}

pub fn save_network(path: impl AsRef<Path>, net: &Network, width: FloatWidth) -> Result<()> {
    write_network(net, width, BufWriter::new(File::create(path)?))
}

pub fn load_network(path: impl AsRef<Path>) -> Result<(Network, FloatWidth)> {
    read_network(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::InitScheme;

    fn sample() -> Network {
        let local = LocalSpec {
            maps: 2,
            filter: (2, 3),
            pool: (1, 2),
        };
        Network::new(
            InputLayout::Grid { time: 4, freq: 7 },
            vec![
                LayerSpec::Conv(local),
                LayerSpec::Untied(LocalSpec {
                    maps: 2,
                    filter: (1, 1),
                    pool: (1, 1),
                }),
                LayerSpec::Dense(5),
                LayerSpec::SoftmaxOutput(3),
            ],
            InitScheme::Gaussian(0.3),
            17,
        )
        .unwrap()
    }

    #[test]
    fn f64_round_trip_is_exact() {
        let net = sample();
        let mut bytes = Vec::new();
        write_network(&net, FloatWidth::F64, &mut bytes).unwrap();
        let (back, width) = read_network(bytes.as_slice()).unwrap();
        assert_eq!(width, FloatWidth::F64);
        assert_eq!(back, net);
    }

    #[test]
    fn f32_round_trip_is_lossless_at_width() {
        let net = sample();
        let mut bytes = Vec::new();
        write_network(&net, FloatWidth::F32, &mut bytes).unwrap();
        let (back, _) = read_network(bytes.as_slice()).unwrap();
        for (a, b) in back.params().iter().zip(net.params()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
        let mut again = Vec::new();
        write_network(&back, FloatWidth::F32, &mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn corrupted_headers_rejected() {
        let mut bytes = Vec::new();
        write_network(&sample(), FloatWidth::F64, &mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_network(bad.as_slice()),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[8] = 5;
        assert!(matches!(
            read_network(bad.as_slice()),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            read_network(&bytes[..bytes.len() - 1]),
            Err(Error::Format { .. })
        ));
        assert!(matches!(read_network(&[][..]), Err(Error::Format { .. })));
    }
}
