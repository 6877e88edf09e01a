//! FTDS dataset container.
//!
//! Layout (all values little-endian):
//!
//! ```text
//! "FTDS"  u32 version  u32 N  u32 H  u32 W
//! N × sample:
//!     f32 depth[H*W]          normalized crop, row-major
//!     u8  has_edge
//!     f32 edge[H*W]           only when has_edge == 1
//!     f32 joints[18]          thumb..pinky, palm; (x, y, z) in mm
//!     f32 center[3], f32 cube_size
//! ```
//!
//! Readers stream one sample at a time.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::binio::{write_f32s, LeReader};
use crate::edges::EdgeImage;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::joints::{CropMeta, JointSet};

const MAGIC: [u8; 4] = *b"FTDS";
pub const VERSION: u32 = 1;
const FORMAT: &str = "FTDS";

/// One training/evaluation item.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[1,1,H,W]` crop in `[-1, 1]`.
    pub depth: Tensor<f32>,
    pub edge: Option<EdgeImage>,
    /// Five fingertips and the palm, in millimetres.
    pub joints: JointSet,
    pub meta: CropMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub count: u32,
    pub height: u32,
    pub width: u32,
}

/// Writes samples and patches the sample count into the header on
/// [`DatasetWriter::finish`].
pub struct DatasetWriter<W: Write + Seek> {
    inner: W,
    height: usize,
    width: usize,
    count: u32,
}

impl<W: Write + Seek> DatasetWriter<W> {
    pub fn new(mut inner: W, height: usize, width: usize) -> Result<Self> {
        inner.write_all(&MAGIC)?;
        inner.write_all(&VERSION.to_le_bytes())?;
        inner.write_all(&0u32.to_le_bytes())?;
        inner.write_all(&(height as u32).to_le_bytes())?;
        inner.write_all(&(width as u32).to_le_bytes())?;
        Ok(Self {
            inner,
            height,
            width,
            count: 0,
        })
    }

    pub fn write(&mut self, s: &Sample) -> Result<()> {
        let want = [1, 1, self.height, self.width];
        if s.depth.shape() != want {
            return Err(Error::shape(
                "ftds write",
                "depth crop",
                format!("{want:?}"),
                format!("{:?}", s.depth.shape()),
            ));
        }
        if !s.joints.has_palm() {
            return Err(Error::invalid("ftds samples store all six joints"));
        }
        write_f32s(&mut self.inner, s.depth.data())?;
        match &s.edge {
            Some(e) => {
                if e.tensor().shape() != want {
                    return Err(Error::shape(
                        "ftds write",
                        "edge image",
                        format!("{want:?}"),
                        format!("{:?}", e.tensor().shape()),
                    ));
                }
                self.inner.write_all(&[1])?;
                write_f32s(&mut self.inner, e.tensor().data())?;
            }
            None => self.inner.write_all(&[0])?,
        }
        let joints: Vec<f32> = s.joints.points.iter().flatten().copied().collect();
        write_f32s(&mut self.inner, &joints)?;
        let m = &s.meta;
        write_f32s(
            &mut self.inner,
            &[m.center[0], m.center[1], m.center[2], m.cube_size],
        )?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.seek(SeekFrom::Start(8))?;
        self.inner.write_all(&self.count.to_le_bytes())?;
        self.inner.seek(SeekFrom::End(0))?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Streaming reader; yields `Result<Sample>` in file order.
pub struct DatasetReader<R: Read> {
    inner: LeReader<R>,
    header: Header,
    next: u32,
    failed: bool,
}

impl<R: Read> DatasetReader<R> {
    pub fn new(inner: R) -> Result<Self> {
        let mut r = LeReader::new(inner, FORMAT);
        let mut magic = [0u8; 4];
        r.exact(&mut magic, &|| "header".into())?;
        if magic != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found: magic,
            });
        }
        let version = r.u32(&|| "header".into())?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                format: FORMAT,
                found: version,
                supported: VERSION,
            });
        }
        let count = r.u32(&|| "header".into())?;
        let height = r.u32(&|| "header".into())?;
        let width = r.u32(&|| "header".into())?;
        Ok(Self {
            inner: r,
            header: Header {
                count,
                height,
                width,
            },
            next: 0,
            failed: false,
        })
    }

    pub fn header(&self) -> Header {
        self.header
    }

    fn read_sample(&mut self) -> Result<Sample> {
        let index = self.next;
        let what = move || format!("sample {index}");
        let (h, w) = (self.header.height as usize, self.header.width as usize);
        let shape = vec![1, 1, h, w];
        let depth = Tensor::from_vec(shape.clone(), self.inner.f32s(h * w, &what)?)?;
        let edge = match self.inner.u8(&what)? {
            0 => None,
            1 => Some(EdgeImage::new(Tensor::from_vec(
                shape,
                self.inner.f32s(h * w, &what)?,
            )?)?),
            flag => {
                return Err(Error::Malformed {
                    format: FORMAT,
                    reason: format!("sample {index}: edge flag {flag}"),
                })
            }
        };
        let j = self.inner.f32s(18, &what)?;
        let joints = JointSet::new(j.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())?;
        let m = self.inner.f32s(4, &what)?;
        let meta =
            CropMeta::new([m[0], m[1], m[2]], m[3], index).map_err(|e| Error::Malformed {
                format: FORMAT,
                reason: format!("sample {index}: {e}"),
            })?;
        Ok(Sample {
            depth,
            edge,
            joints,
            meta,
        })
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<Sample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.next >= self.header.count {
            return None;
        }
        let s = self.read_sample();
        self.failed = s.is_err();
        self.next += 1;
        Some(s)
    }
}

pub fn open_dataset(path: impl AsRef<Path>) -> Result<DatasetReader<BufReader<File>>> {
    DatasetReader::new(BufReader::new(
        File::open(path.as_ref()).map_err(Error::at_path(&path))?,
    ))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    open_dataset(path)?.collect()
}

/// Writes every sample from `samples`; `size` is the crop side.
pub fn write_dataset<I>(path: impl AsRef<Path>, size: usize, samples: I) -> Result<u32>
where
    I: IntoIterator<Item = Result<Sample>>,
{
    let mut w = DatasetWriter::new(
        BufWriter::new(File::create(path.as_ref()).map_err(Error::at_path(&path))?),
        size,
        size,
    )?;
    for s in samples {
        w.write(&s?)?;
    }
    let count = w.count;
    w.finish()?;
    Ok(count)
}
