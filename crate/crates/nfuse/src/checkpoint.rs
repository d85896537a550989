//! Parameter checkpoint file format.
//!
//! Layout: magic `NFUSE1`, widening factor (u32 LE), then each parameter as
//! name length (u32 LE), name bytes, rank (u32 LE), extents (u32 LE each),
//! raw little-endian f32 data. Cascade-head checkpoints use widening factor
//! 0 since they carry no backbone.

use crate::arch::{CascadeHead, CascadeMode, Network, NetworkSpec, Param, ENCODING_DIM};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 6] = b"NFUSE1";

pub fn save_params(path: &Path, widening_factor: u32, params: &[Param]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(widening_factor)?;
    for p in params {
        let name = p.name.as_bytes();
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name)?;
        w.write_u32::<LittleEndian>(p.tensor.shape().len() as u32)?;
        for &e in p.tensor.shape() {
            w.write_u32::<LittleEndian>(e as u32)?;
        }
        for &v in p.tensor.data() {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<(u32, Vec<Param>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let widening = r.read_u32::<LittleEndian>()?;
    let mut params = Vec::new();
    loop {
        let name_len = match r.read_u32::<LittleEndian>() {
            Ok(n) => n as usize,
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| Error::Format(format!("parameter name not utf-8: {e}")))?;
        let rank = r.read_u32::<LittleEndian>()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0f32; numel];
        r.read_f32_into::<LittleEndian>(&mut data)?;
        params.push(Param {
            name,
            tensor: Tensor::new(shape, data)?,
        });
    }
    Ok((widening, params))
}

impl Network {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_params(path, self.spec.widening_factor as u32, &self.params)
    }

    /// Reconstructs the spec from the stored widening factor and the conv
    /// weight shapes (which carry the realized channel counts).
    pub fn load(path: &Path) -> Result<Self> {
        let (widening, params) = load_params(path)?;
        if widening == 0 {
            return Err(Error::Format(format!(
                "{}: cascade-head checkpoint, not a network",
                path.display()
            )));
        }
        let mut channels = [0usize; 4];
        for (i, c) in channels.iter_mut().enumerate() {
            let name = format!("block{}.conv.weight", i + 1);
            let p = params
                .iter()
                .find(|p| p.name == name)
                .ok_or_else(|| Error::Format(format!("{}: missing {name}", path.display())))?;
            *c = p.tensor.shape()[0];
        }
        let mut spec = NetworkSpec::with_channels(channels)?;
        spec.widening_factor = widening as usize;
        let net = Network { spec, params };
        net.validate_shapes(path)?;
        Ok(net)
    }

    fn validate_shapes(&self, path: &Path) -> Result<()> {
        let fresh = Network::init(self.spec.clone(), 0)?;
        if fresh.params.len() != self.params.len() {
            return Err(Error::Format(format!(
                "{}: expected {} parameters, found {}",
                path.display(),
                fresh.params.len(),
                self.params.len()
            )));
        }
        for (a, b) in fresh.params.iter().zip(&self.params) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::Format(format!(
                    "{}: parameter {} has shape {:?}, expected {} {:?}",
                    path.display(),
                    b.name,
                    b.tensor.shape(),
                    a.name,
                    a.tensor.shape()
                )));
            }
        }
        Ok(())
    }
}

impl CascadeHead {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_params(path, 0, &self.params)
    }

    /// Mode is inferred from the stored hidden-layer input width.
    pub fn load(path: &Path) -> Result<Self> {
        let (widening, params) = load_params(path)?;
        if widening != 0 {
            return Err(Error::Format(format!(
                "{}: network checkpoint, not a cascade head",
                path.display()
            )));
        }
        let fc1 = params
            .iter()
            .find(|p| p.name == "head.fc1.weight")
            .ok_or_else(|| Error::Format(format!("{}: missing head.fc1.weight", path.display())))?;
        let mode = match fc1.tensor.shape().get(1) {
            Some(&w) if w == ENCODING_DIM => CascadeMode::Additive,
            Some(&w) if w == 2 * ENCODING_DIM => CascadeMode::Concatenated,
            other => {
                return Err(Error::Format(format!(
                    "{}: unexpected head input width {:?}",
                    path.display(),
                    other
                )))
            }
        };
        Ok(CascadeHead { mode, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::build_network;

    #[test]
    fn network_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.nfuse");
        let net = Network::init(NetworkSpec::with_channels([1, 2, 2, 2]).unwrap(), 99).unwrap();
        net.save(&path).unwrap();
        let loaded = Network::load(&path).unwrap();
        assert_eq!(loaded.params.len(), net.params.len());
        for (a, b) in net.params.iter().zip(&loaded.params) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.shape(), b.tensor.shape());
            assert!(a
                .tensor
                .data()
                .iter()
                .zip(b.tensor.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn head_roundtrip_restores_mode() {
        let dir = tempfile::tempdir().unwrap();
        for mode in [CascadeMode::Additive, CascadeMode::Concatenated] {
            let path = dir.path().join("head.nfuse");
            let head = CascadeHead::init(mode, 3);
            head.save(&path).unwrap();
            let loaded = CascadeHead::load(&path).unwrap();
            assert_eq!(loaded.mode, mode);
        }
    }

    #[test]
    fn magic_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOTNFUSEJUNK").unwrap();
        assert!(Network::load(&path).is_err());
    }

    #[test]
    fn head_and_network_checkpoints_are_distinguished() {
        let dir = tempfile::tempdir().unwrap();
        let net_path = dir.path().join("net.nfuse");
        let head_path = dir.path().join("head.nfuse");
        build_network(1, 0).unwrap().save(&net_path).unwrap();
        CascadeHead::init(CascadeMode::Additive, 0).save(&head_path).unwrap();
        assert!(CascadeHead::load(&net_path).is_err());
        assert!(Network::load(&head_path).is_err());
    }
}
