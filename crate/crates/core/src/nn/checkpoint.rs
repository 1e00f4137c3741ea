//! Model checkpoint file: magic "NNCK1", the input shape, the layer spec
//! list, then the state tensors in declaration order, each as a little-endian
//! u32 shape header followed by little-endian f32 values. Batchnorm layers
//! contribute gamma, beta, running mean and running variance, in that order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::model::{InputShape, LayerSpec, Network};

const MAGIC: &[u8; 5] = b"NNCK1";

struct Writer<'a> {
    inner: BufWriter<File>,
    path: &'a Path,
}

impl<'a> Writer<'a> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b).map_err(|e| Error::io(self.path, e))
    }

    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
}

struct Reader<'a> {
    inner: BufReader<File>,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|e| Error::io(self.path, e))
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn f32(&mut self) -> Result<f32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }
}

fn spec_tag(spec: &LayerSpec) -> u8 {
    match spec {
        LayerSpec::Conv2d { .. } => 0,
        LayerSpec::MaxPool { .. } => 1,
        LayerSpec::ZeroPad { .. } => 2,
        LayerSpec::Dense { .. } => 3,
        LayerSpec::Relu => 4,
        LayerSpec::Dropout { .. } => 5,
        LayerSpec::BatchNorm => 6,
        LayerSpec::Flatten => 7,
        LayerSpec::Softmax => 8,
    }
}

/// Writes the network's specs, input shape and state to `path`.
pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = Writer {
        inner: BufWriter::new(file),
        path,
    };
    w.bytes(MAGIC)?;
    match net.input_shape() {
        InputShape::Hwc { h, w: iw, c } => {
            w.bytes(&[0u8])?;
            w.u32(h as u32)?;
            w.u32(iw as u32)?;
            w.u32(c as u32)?;
        }
        InputShape::Flat { d } => {
            w.bytes(&[1u8])?;
            w.u32(d as u32)?;
            w.u32(0)?;
            w.u32(0)?;
        }
    }
    let specs = net.specs();
    w.u32(specs.len() as u32)?;
    for spec in specs {
        w.bytes(&[spec_tag(spec)])?;
        match *spec {
            LayerSpec::Conv2d {
                filters,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => {
                for v in [filters, kernel_h, kernel_w, stride, padding] {
                    w.u32(v as u32)?;
                }
            }
            LayerSpec::MaxPool { size, stride } => {
                w.u32(size as u32)?;
                w.u32(stride as u32)?;
            }
            LayerSpec::ZeroPad { size } => w.u32(size as u32)?,
            LayerSpec::Dense { units } => w.u32(units as u32)?,
            LayerSpec::Dropout { rate } => w.f64(rate)?,
            LayerSpec::Relu | LayerSpec::BatchNorm | LayerSpec::Flatten | LayerSpec::Softmax => {}
        }
    }
    let tensors = net.state_tensors();
    w.u32(tensors.len() as u32)?;
    for (shape, data) in &tensors {
        w.u32(shape.len() as u32)?;
        for &d in shape {
            w.u32(d as u32)?;
        }
        for &v in data {
            w.bytes(&(v as f32).to_le_bytes())?;
        }
    }
    w.inner.flush().map_err(|e| Error::io(path, e))
}

/// Reads back specs, input shape and state tensors.
pub fn read_checkpoint(
    path: &Path,
) -> Result<(Vec<LayerSpec>, InputShape, Vec<(Vec<usize>, Vec<f64>)>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path,
    };
    let bad = |message: &str| Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    };
    let mut magic = [0u8; 5];
    r.bytes(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic, not a NNCK1 checkpoint"));
    }
    let mut kind = [0u8; 1];
    r.bytes(&mut kind)?;
    let d0 = r.u32()? as usize;
    let d1 = r.u32()? as usize;
    let d2 = r.u32()? as usize;
    let input_shape = match kind[0] {
        0 => InputShape::Hwc { h: d0, w: d1, c: d2 },
        1 => InputShape::Flat { d: d0 },
        _ => return Err(bad("unknown input shape tag")),
    };
    let n_specs = r.u32()? as usize;
    let mut specs = Vec::with_capacity(n_specs);
    for _ in 0..n_specs {
        let mut tag = [0u8; 1];
        r.bytes(&mut tag)?;
        let spec = match tag[0] {
            0 => LayerSpec::Conv2d {
                filters: r.u32()? as usize,
                kernel_h: r.u32()? as usize,
                kernel_w: r.u32()? as usize,
                stride: r.u32()? as usize,
                padding: r.u32()? as usize,
            },
            1 => LayerSpec::MaxPool {
                size: r.u32()? as usize,
                stride: r.u32()? as usize,
            },
            2 => LayerSpec::ZeroPad {
                size: r.u32()? as usize,
            },
            3 => LayerSpec::Dense {
                units: r.u32()? as usize,
            },
            4 => LayerSpec::Relu,
            5 => LayerSpec::Dropout { rate: r.f64()? },
            6 => LayerSpec::BatchNorm,
            7 => LayerSpec::Flatten,
            8 => LayerSpec::Softmax,
            _ => return Err(bad("unknown layer tag")),
        };
        specs.push(spec);
    }
    let n_tensors = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let ndim = r.u32()? as usize;
        if ndim > 8 {
            return Err(bad("implausible tensor rank"));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f32()? as f64);
        }
        tensors.push((shape, data));
    }
    Ok((specs, input_shape, tensors))
}

/// Rebuilds a network from a checkpoint, state included.
pub fn load_network(path: &Path) -> Result<Network> {
    let (specs, input_shape, tensors) = read_checkpoint(path)?;
    let mut net = Network::build(&specs, input_shape, 0)?;
    net.load_state_tensors(&tensors)?;
    Ok(net)
}
