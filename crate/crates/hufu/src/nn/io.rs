//! HUFW1 tensor container and network checkpointing.
//!
//! Layout: 8-byte magic `HUFW0001`; u32 LE tensor count; then per tensor a
//! u16 LE name length, the UTF-8 name, a u8 rank, rank u32 LE dims, and
//! dim-product payload values. The payload element type is not recorded in
//! the container; each file kind fixes it (f32 LE for weights, u8 for
//! masks, i8/i32 LE for quantized tensors, declared by the model sidecar).
//!
//! A network checkpoint is the f32 container plus a `<path>.json` topology
//! sidecar, since the container carries tensors only.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::layers::LayerSpec;
use super::network::Network;
use super::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"HUFW0001";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    F32,
    U8,
    I8,
    I32,
}

/// Tensor payload variants the container can carry.
#[derive(Debug, Clone)]
pub enum Payload {
    F32(Tensor<f32>),
    U8(Tensor<u8>),
    I8(Tensor<i8>),
    I32(Tensor<i32>),
}

impl Payload {
    fn shape(&self) -> &[usize] {
        match self {
            Payload::F32(t) => t.shape(),
            Payload::U8(t) => t.shape(),
            Payload::I8(t) => t.shape(),
            Payload::I32(t) => t.shape(),
        }
    }
}

fn file_err(path: &Path, message: impl Into<String>) -> Error {
    Error::WeightFile {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn write_container(path: &Path, entries: &[(String, Payload)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, payload) in entries {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(file_err(path, format!("tensor name too long: {name}")));
        }
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        let shape = payload.shape();
        if shape.len() > u8::MAX as usize {
            return Err(file_err(path, format!("tensor rank too large: {name}")));
        }
        w.write_all(&[shape.len() as u8])?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        match payload {
            Payload::F32(t) => {
                for v in t.data() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            Payload::U8(t) => w.write_all(t.data())?,
            Payload::I8(t) => {
                for v in t.data() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            Payload::I32(t) => {
                for v in t.data() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct ContainerReader<'p> {
    r: BufReader<File>,
    path: &'p Path,
}

impl<'p> ContainerReader<'p> {
    fn open(path: &'p Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|e| file_err(path, format!("reading magic: {e}")))?;
        if &magic != MAGIC {
            return Err(file_err(
                path,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&magic),
                    String::from_utf8_lossy(MAGIC)
                ),
            ));
        }
        Ok(ContainerReader { r, path })
    }

    fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.r
            .read_exact(buf)
            .map_err(|e| file_err(self.path, format!("truncated while reading {what}: {e}")))
    }

    fn u16_le(&mut self, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.exact(&mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }
}

/// Read a container whose payloads are all of `kind`.
pub fn read_container(path: &Path, kind: PayloadKind) -> Result<Vec<(String, Payload)>> {
    read_container_with(path, |_| kind)
}

/// Read a container, selecting the payload kind per tensor name (quantized
/// models mix i8 weights and i32 biases).
pub fn read_container_with(
    path: &Path,
    kind_for: impl Fn(&str) -> PayloadKind,
) -> Result<Vec<(String, Payload)>> {
    let mut c = ContainerReader::open(path)?;
    let count = c.u32_le("tensor count")?;
    let mut out = Vec::with_capacity(count as usize);
    for i in 0..count {
        let name_len = c.u16_le("name length")? as usize;
        let mut name_buf = vec![0u8; name_len];
        c.exact(&mut name_buf, "tensor name")?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| file_err(path, format!("tensor {i}: name is not UTF-8")))?;
        let mut rank_b = [0u8; 1];
        c.exact(&mut rank_b, "rank")?;
        let rank = rank_b[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32_le("dimension")? as usize);
        }
        let len: usize = shape.iter().product();
        let payload = match kind_for(&name) {
            PayloadKind::F32 => {
                let mut data = vec![0f32; len];
                for v in data.iter_mut() {
                    let mut b = [0u8; 4];
                    c.exact(&mut b, &format!("values of {name}"))?;
                    *v = f32::from_le_bytes(b);
                }
                Payload::F32(Tensor::from_vec(&shape, data)?)
            }
            PayloadKind::U8 => {
                let mut data = vec![0u8; len];
                c.exact(&mut data, &format!("values of {name}"))?;
                Payload::U8(Tensor::from_vec(&shape, data)?)
            }
            PayloadKind::I8 => {
                let mut data = vec![0u8; len];
                c.exact(&mut data, &format!("values of {name}"))?;
                Payload::I8(Tensor::from_vec(
                    &shape,
                    data.into_iter().map(|b| b as i8).collect(),
                )?)
            }
            PayloadKind::I32 => {
                let mut data = vec![0i32; len];
                for v in data.iter_mut() {
                    let mut b = [0u8; 4];
                    c.exact(&mut b, &format!("values of {name}"))?;
                    *v = i32::from_le_bytes(b);
                }
                Payload::I32(Tensor::from_vec(&shape, data)?)
            }
        };
        out.push((name, payload));
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct TopologySidecar {
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    os.into()
}

/// Write an f32 network checkpoint: HUFW1 container plus topology sidecar.
pub fn save_weights(network: &Network<f32>, path: &Path) -> Result<()> {
    let entries: Vec<(String, Payload)> = network
        .params()
        .iter()
        .map(|(k, v)| (k.clone(), Payload::F32(v.clone())))
        .collect();
    write_container(path, &entries)?;
    let sidecar = TopologySidecar {
        input_shape: network.input_shape(),
        layers: network.layers().to_vec(),
    };
    let f = BufWriter::new(File::create(sidecar_path(path))?);
    serde_json::to_writer_pretty(f, &sidecar)?;
    Ok(())
}

/// Load a checkpoint written by `save_weights`. Round-trips bit-exactly.
pub fn load_weights(path: &Path) -> Result<Network<f32>> {
    let sidecar: TopologySidecar = {
        let sp = sidecar_path(path);
        let f = File::open(&sp).map_err(|e| file_err(&sp, format!("topology sidecar: {e}")))?;
        serde_json::from_reader(BufReader::new(f))?
    };
    let skeleton = Network::<f32>::zeroed(sidecar.input_shape, sidecar.layers)?;
    let entries = read_container(path, PayloadKind::F32)?;
    let mut params: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
    for (name, payload) in entries {
        match payload {
            Payload::F32(t) => {
                params.insert(name, t);
            }
            _ => unreachable!(),
        }
    }
    skeleton.with_params(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::LayerSpec;
    use crate::rng::Rng;

    fn random_net(seed: u64) -> Network<f32> {
        let layers = vec![
            LayerSpec::Conv {
                kernel_w: 3,
                kernel_h: 3,
                c_in: 2,
                c_out: 4,
                stride: 1,
                zero_pad: 1,
                bias: true,
            },
            LayerSpec::BatchNorm {
                channels: 4,
                momentum: 0.1,
                epsilon: 1e-5,
            },
            LayerSpec::Relu,
            LayerSpec::FullyConnected { n_in: 4 * 4 * 4, n_out: 5 },
            LayerSpec::SoftmaxCe,
        ];
        Network::init([2, 4, 4], layers, &mut Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn save_load_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.hufw");
        let net = random_net(3);
        save_weights(&net, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(net.params().len(), back.params().len());
        for (k, v) in net.params() {
            let b = &back.params()[k];
            assert_eq!(v.shape(), b.shape(), "{k}");
            for (x, y) in v.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "{k}");
            }
        }
    }

    #[test]
    fn wrong_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.hufw");
        std::fs::write(&path, b"NOPE0001\x00\x00\x00\x00").unwrap();
        let err = read_container(&path, PayloadKind::F32).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("HUFW0001"), "error should name expected magic: {msg}");
    }

    #[test]
    fn truncated_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.hufw");
        let net = random_net(9);
        save_weights(&net, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = read_container(&path, PayloadKind::F32).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn mixed_payload_container() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mix.hufw");
        let entries = vec![
            (
                "a.weight".to_string(),
                Payload::I8(Tensor::from_vec(&[2, 2], vec![-1i8, 2, -3, 4]).unwrap()),
            ),
            (
                "a.bias".to_string(),
                Payload::I32(Tensor::from_vec(&[2], vec![-100_000i32, 7]).unwrap()),
            ),
        ];
        write_container(&path, &entries).unwrap();
        let back = read_container_with(&path, |name| {
            if name.ends_with(".bias") {
                PayloadKind::I32
            } else {
                PayloadKind::I8
            }
        })
        .unwrap();
        match (&back[0].1, &back[1].1) {
            (Payload::I8(w), Payload::I32(b)) => {
                assert_eq!(w.data(), &[-1i8, 2, -3, 4]);
                assert_eq!(b.data(), &[-100_000i32, 7]);
            }
            _ => panic!("payload kinds lost"),
        }
    }
}
