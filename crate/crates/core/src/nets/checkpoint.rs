//! The `KACP` tensor container and network checkpoints built on it.
//!
//! Layout (little-endian, no padding): magic `KACP`, version `u32 = 1`,
//! spec blob (`u32` length + UTF-8), tensor count `u32`, then per tensor a
//! name (`u32` length + UTF-8), dtype `u8 = 0` (f32), rank `u8`, extents as
//! `u64`, and the raw f32 payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::Param;
use crate::tensor::Tensor;

use super::network::Network;
use super::spec::NetworkSpec;

pub const MAGIC: &[u8; 4] = b"KACP";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Decoded container: a free-form spec text and named tensors in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub spec: String,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn encode_container(spec: &str, tensors: &[(&str, &Tensor)]) -> Vec<u8> {
    let payload: usize = tensors
        .iter()
        .map(|(n, t)| 4 + n.len() + 2 + 8 * t.rank() + 4 * t.len())
        .sum();
    let mut out = Vec::with_capacity(16 + spec.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(spec.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated { what: what.to_string() })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format {
            detail: format!("{what} is not UTF-8"),
        })
    }
}

pub fn decode_container(bytes: &[u8]) -> Result<Container> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: "KACP".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            detail: format!("unsupported checkpoint version {version}"),
        });
    }
    let spec = r.string("spec blob")?;
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let name = r.string(&format!("name of tensor {i}"))?;
        let dtype = r.u8(&format!("dtype of {name}"))?;
        if dtype != DTYPE_F32 {
            return Err(Error::Format {
                detail: format!("tensor {name} has unknown dtype {dtype}"),
            });
        }
        let rank = r.u8(&format!("rank of {name}"))? as usize;
        let shape = (0..rank)
            .map(|_| r.u64(&format!("extents of {name}")).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format {
                detail: format!("tensor {name} extents overflow"),
            })?;
        let raw = r.take(n.checked_mul(4).unwrap_or(usize::MAX), &format!("payload of {name}"))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Format {
            detail: format!("tensor {name}: {e}"),
        })?;
        tensors.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format {
            detail: format!("{} trailing bytes after the last tensor", bytes.len() - r.pos),
        });
    }
    Ok(Container { spec, tensors })
}

pub fn write_container(path: impl AsRef<Path>, spec: &str, tensors: &[(&str, &Tensor)]) -> Result<()> {
    std::fs::write(path, encode_container(spec, tensors))?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Container> {
    decode_container(&std::fs::read(path)?)
}

pub fn encode_network(net: &Network) -> Vec<u8> {
    let tensors: Vec<(&str, &Tensor)> = net.params.iter().map(|p| (p.name.as_str(), &p.value)).collect();
    encode_container(&net.spec.to_text(), &tensors)
}

/// Rebuild a network from a decoded container, checking every tensor
/// against the embedded spec.
pub fn network_from_container(c: Container) -> Result<Network> {
    let spec = NetworkSpec::parse(&c.spec)?;
    let params = c.tensors.into_iter().map(|(name, t)| Param::new(name, t)).collect();
    Network::from_params(spec, params)
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_network(net))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    network_from_container(read_container(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::build_network;
    use crate::rng::Rng;

    fn net() -> Network {
        let spec = NetworkSpec::conv_stack([1, 6, 6], &[2], &[3], 2).unwrap();
        build_network::<f32>(&spec, &mut Rng::new(8))
            .unwrap()
            .with_identity_fams()
            .unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let n = net();
        let bytes = encode_network(&n);
        let back = network_from_container(decode_container(&bytes).unwrap()).unwrap();
        assert!(back.bitwise_eq(&n));
        assert_eq!(encode_network(&back), bytes);
        let x = Tensor::full(&[2, 1, 6, 6], 0.3);
        assert!(n.scores(&x, 8).unwrap().bitwise_eq(&back.scores(&x, 8).unwrap()));
    }

    #[test]
    fn exact_layout() {
        let t = Tensor::new(&[2], vec![1.0f32, -2.0]).unwrap();
        let bytes = encode_container("s", &[("w", &t)]);
        let mut expect = b"KACP".to_vec();
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.push(b's');
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.push(b'w');
        expect.extend_from_slice(&[0, 1]);
        expect.extend_from_slice(&2u64.to_le_bytes());
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn distinct_diagnostics() {
        let bytes = encode_network(&net());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        let e = decode_container(&bad).unwrap_err();
        assert!(e.to_string().contains("bad magic"), "{e}");
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            let e = decode_container(&bytes[..cut]).unwrap_err();
            assert!(matches!(e, Error::Truncated { .. }), "cut {cut}: {e}");
            assert!(e.to_string().contains("truncated"));
        }
        // swap in a spec whose first layer is wider
        let c = decode_container(&bytes).unwrap();
        let mut spec = NetworkSpec::parse(&c.spec).unwrap();
        spec.layers[0].out_ch = 3;
        spec.derive_in_channels().unwrap();
        let tensors: Vec<(&str, &Tensor)> = c.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let e = network_from_container(decode_container(&encode_container(&spec.to_text(), &tensors)).unwrap())
            .unwrap_err();
        assert!(matches!(e, Error::Shape { .. }), "{e}");
    }
}
