//! FTCK checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FTCK"  u32 version
//! u32 len, arch id (UTF-8)
//! u8 include_palm, u8 tied, u32 input_size, u64 init seed
//! u64 iterations, u64 train seed
//! u32 tensor count, then per tensor:
//!     u32 len, name (UTF-8), u32 ndim, u32 dims[ndim], f32 data[prod(dims)]
//! 32-byte config hash
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{write_f32s, write_str, LeReader};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::arch::{build, ArchId, BuildOptions, Network};

const MAGIC: [u8; 4] = *b"FTCK";
const VERSION: u32 = 1;
const FORMAT: &str = "FTCK";

/// Provenance stored alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrainMeta {
    pub iterations: u64,
    pub seed: u64,
    pub config_hash: [u8; 32],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchId,
    pub options: BuildOptions,
    pub meta: TrainMeta,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_network(net: &Network<f32>, meta: TrainMeta) -> Self {
        Self {
            arch: net.arch(),
            options: *net.options(),
            meta,
            tensors: net
                .params()
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    /// Rebuilds the network and loads every stored tensor by name.
    pub fn to_network(&self) -> Result<Network<f32>> {
        let mut net = build::<f32>(self.arch, &self.options)?;
        if net.params().len() != self.tensors.len() {
            return Err(Error::Malformed {
                format: FORMAT,
                reason: format!(
                    "{} expects {} tensors, checkpoint has {}",
                    self.arch,
                    net.params().len(),
                    self.tensors.len()
                ),
            });
        }
        for (name, t) in &self.tensors {
            let p = net
                .graph_mut()
                .param_mut(name)
                .ok_or_else(|| Error::Malformed {
                    format: FORMAT,
                    reason: format!("unknown tensor `{name}` for {}", self.arch),
                })?;
            if p.value.shape() != t.shape() {
                return Err(Error::shape(
                    "checkpoint",
                    format!("tensor `{name}`"),
                    format!("{:?}", p.value.shape()),
                    format!("{:?}", t.shape()),
                ));
            }
            p.value = t.clone();
        }
        Ok(net)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_str(w, self.arch.as_str())?;
        w.write_all(&[self.options.include_palm as u8, self.options.tied as u8])?;
        w.write_all(&(self.options.input_size as u32).to_le_bytes())?;
        w.write_all(&self.options.seed.to_le_bytes())?;
        w.write_all(&self.meta.iterations.to_le_bytes())?;
        w.write_all(&self.meta.seed.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            write_str(w, name)?;
            w.write_all(&(t.ndim() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            write_f32s(w, t.data())?;
        }
        w.write_all(&self.meta.config_hash)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = LeReader::new(r, FORMAT);
        let mut magic = [0u8; 4];
        r.exact(&mut magic, &|| "magic".into())?;
        if magic != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found: magic,
            });
        }
        let version = r.u32(&|| "version".into())?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                format: FORMAT,
                found: version,
                supported: VERSION,
            });
        }
        let arch: ArchId = r.string(256, &|| "arch id".into())?.parse()?;
        let include_palm = r.u8(&|| "options".into())? != 0;
        let tied = r.u8(&|| "options".into())? != 0;
        let input_size = r.u32(&|| "options".into())? as usize;
        let init_seed = r.u64(&|| "options".into())?;
        let iterations = r.u64(&|| "metadata".into())?;
        let seed = r.u64(&|| "metadata".into())?;
        let count = r.u32(&|| "tensor count".into())? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for i in 0..count {
            let what = move || format!("tensor {i}");
            let name = r.string(1024, &what)?;
            let ndim = r.u32(&what)? as usize;
            if ndim > 8 {
                return Err(Error::Malformed {
                    format: FORMAT,
                    reason: format!("tensor `{name}` has rank {ndim}"),
                });
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32(&what)? as usize);
            }
            let len: usize = shape.iter().product();
            let data = r.f32s(len, &what)?;
            tensors.push((name, Tensor::from_vec(shape, data)?));
        }
        let mut config_hash = [0u8; 32];
        r.exact(&mut config_hash, &|| "config hash".into())?;
        if !r.at_eof()? {
            return Err(Error::Malformed {
                format: FORMAT,
                reason: "trailing bytes after the config hash".into(),
            });
        }
        Ok(Self {
            arch,
            options: BuildOptions {
                include_palm,
                input_size,
                tied,
                seed: init_seed,
            },
            meta: TrainMeta {
                iterations,
                seed,
                config_hash,
            },
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path.as_ref()).map_err(Error::at_path(&path))?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(
            File::open(path.as_ref()).map_err(Error::at_path(&path))?,
        ))
    }
}
