//! Versioned binary model format.
//!
//! ```text
//! "ECNN" | version u16 | class_count u32 | rank u8 | dims u32 * rank |
//! layer_count u32 | layers...
//! layer: tag u8, then
//!   0 dense:   inputs u32, outputs u32, weight f32 * (o*i), bias f32 * o
//!   1 conv:    in u32, out u32, kernel u32, stride u32, padding u32,
//!              weight f32 * (out*in*k*k), bias f32 * out
//!   2 relu, 3 pool, 4 flatten: no body
//! ```
//! All integers and reals are little-endian.

use std::io::{Cursor, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::nn::layer::{Conv2d, Dense, Layer};
use crate::nn::network::Network;

pub const MAGIC: &[u8; 4] = b"ECNN";
pub const VERSION: u16 = 1;

const TAG_DENSE: u8 = 0;
const TAG_CONV: u8 = 1;
const TAG_RELU: u8 = 2;
const TAG_POOL: u8 = 3;
const TAG_FLATTEN: u8 = 4;

fn write_f32s<W: Write>(w: &mut W, vals: &[f32]) -> std::io::Result<()> {
    for &v in vals {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    write(net, &mut out).expect("writing to a Vec cannot fail");
    out
}

pub fn write<W: Write>(net: &Network, w: &mut W) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(net.class_count() as u32)?;
    w.write_u8(net.input_dims().len() as u8)?;
    for &d in net.input_dims() {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    w.write_u32::<LittleEndian>(net.layers().len() as u32)?;
    for layer in net.layers() {
        match layer {
            Layer::Dense(d) => {
                w.write_u8(TAG_DENSE)?;
                w.write_u32::<LittleEndian>(d.inputs as u32)?;
                w.write_u32::<LittleEndian>(d.outputs as u32)?;
                write_f32s(w, &d.weight)?;
                write_f32s(w, &d.bias)?;
            }
            Layer::Conv2d(c) => {
                w.write_u8(TAG_CONV)?;
                for v in [c.in_channels, c.out_channels, c.kernel, c.stride, c.padding] {
                    w.write_u32::<LittleEndian>(v as u32)?;
                }
                write_f32s(w, &c.weight)?;
                write_f32s(w, &c.bias)?;
            }
            Layer::Relu => w.write_u8(TAG_RELU)?,
            Layer::MaxPool => w.write_u8(TAG_POOL)?,
            Layer::Flatten => w.write_u8(TAG_FLATTEN)?,
        }
    }
    Ok(())
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl Reader<'_> {
    fn err(&self, what: &str) -> Error {
        Error::parse(self.cur.position(), format!("truncated model: missing {what}"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        self.cur.read_u8().map_err(|_| self.err(what))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        self.cur.read_u16::<LittleEndian>().map_err(|_| self.err(what))
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        self.cur.read_u32::<LittleEndian>().map(|v| v as usize).map_err(|_| self.err(what))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let remaining = self.cur.get_ref().len() as u64 - self.cur.position();
        if (n as u64) * 4 > remaining {
            return Err(self.err(what));
        }
        let mut out = vec![0.0f32; n];
        self.cur
            .read_f32_into::<LittleEndian>(&mut out)
            .map_err(|_| self.err(what))?;
        Ok(out)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { cur: Cursor::new(bytes) };
    let mut magic = [0u8; 4];
    r.cur.read_exact(&mut magic).map_err(|_| r.err("magic"))?;
    if &magic != MAGIC {
        return Err(Error::parse(0, format!("bad model magic {magic:?}")));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::parse(4, format!("unsupported model version {version}")));
    }
    let class_count = r.u32("class count")?;
    let rank = r.u8("input rank")? as usize;
    let input_dims = (0..rank).map(|_| r.u32("input dim")).collect::<Result<Vec<_>>>()?;
    let count = r.u32("layer count")?;
    let mut layers = Vec::new();
    for _ in 0..count {
        let at = r.cur.position();
        let layer = match r.u8("layer tag")? {
            TAG_DENSE => {
                let inputs = r.u32("dense inputs")?;
                let outputs = r.u32("dense outputs")?;
                let weight = r.f32s(inputs * outputs, "dense weights")?;
                let bias = r.f32s(outputs, "dense bias")?;
                Layer::Dense(Dense {
                    inputs,
                    outputs,
                    weight,
                    bias,
                })
            }
            TAG_CONV => {
                let in_channels = r.u32("conv in")?;
                let out_channels = r.u32("conv out")?;
                let kernel = r.u32("conv kernel")?;
                let stride = r.u32("conv stride")?;
                let padding = r.u32("conv padding")?;
                let weight = r.f32s(out_channels * in_channels * kernel * kernel, "conv weights")?;
                let bias = r.f32s(out_channels, "conv bias")?;
                Layer::Conv2d(Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    weight,
                    bias,
                })
            }
            TAG_RELU => Layer::Relu,
            TAG_POOL => Layer::MaxPool,
            TAG_FLATTEN => Layer::Flatten,
            t => return Err(Error::parse(at, format!("unknown layer tag {t}"))),
        };
        layers.push(layer);
    }
    if (r.cur.position() as usize) != bytes.len() {
        return Err(Error::parse(r.cur.position(), "trailing bytes after model"));
    }
    Network::new(input_dims, layers, class_count)
}

pub fn save(net: &Network, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, to_bytes(net))?;
    Ok(())
}

pub fn load(path: &std::path::Path) -> Result<Network> {
    from_bytes(&std::fs::read(path)?)
}
