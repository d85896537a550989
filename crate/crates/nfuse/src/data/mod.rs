//! Volume and session data model, on-disk formats, augmentation, splitting,
//! and the synthetic paired-modality generator.

pub mod augment;
pub mod split;
pub mod synth;

pub use split::{patient_split, read_split_csv, write_split_csv, Split, SplitAssignment};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use chrono::NaiveDate;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Preprocessed volume extents along sagittal, coronal, axial.
pub const PREPROCESSED_EXTENTS: [usize; 3] = [121, 145, 121];
/// Network input crop size.
pub const CROP_SIZE: usize = 96;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    T1,
    Flair,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::T1 => "t1",
            Modality::Flair => "flair",
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t1" => Ok(Modality::T1),
            "flair" => Ok(Modality::Flair),
            other => Err(Error::InvalidArgument(format!("unknown modality {other:?}"))),
        }
    }
}

/// A single-modality 3D image.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    extents: [usize; 3],
    data: Vec<f32>,
    modality: Modality,
}

impl Volume {
    pub fn new(extents: [usize; 3], data: Vec<f32>, modality: Modality) -> Result<Self> {
        let numel: usize = extents.iter().product();
        if extents.contains(&0) {
            return Err(Error::InvalidArgument("volume extents must be positive".into()));
        }
        if numel != data.len() {
            return Err(Error::shape_mismatch("volume", numel, data.len()));
        }
        Ok(Volume {
            extents,
            data,
            modality,
        })
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    #[inline]
    pub fn get(&self, d: usize, h: usize, w: usize) -> f32 {
        self.data[(d * self.extents[1] + h) * self.extents[2] + w]
    }

    /// Per-volume min-max normalization to [0, 1]. Constant volumes map to 0.
    pub fn min_max_normalized(&self) -> Volume {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let range = hi - lo;
        let data = if range > 0.0 {
            self.data.iter().map(|&v| (v - lo) / range).collect()
        } else {
            vec![0.0; self.data.len()]
        };
        Volume {
            extents: self.extents,
            data,
            modality: self.modality,
        }
    }

    /// Single-sample network input tensor [1, 1, D, H, W].
    pub fn to_tensor(&self) -> Tensor {
        let [d, h, w] = self.extents;
        Tensor::new(vec![1, 1, d, h, w], self.data.clone()).expect("consistent shape")
    }
}

const VOLUME_MAGIC: &[u8; 6] = b"NFVOL1";

/// Write a volume: magic, modality byte, three u32 LE extents, then raw
/// little-endian f32 voxels row-major.
pub fn save_volume(path: &Path, vol: &Volume) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(VOLUME_MAGIC)?;
    w.write_all(&[match vol.modality {
        Modality::T1 => 0u8,
        Modality::Flair => 1u8,
    }])?;
    for &e in &vol.extents {
        w.write_u32::<LittleEndian>(e as u32)?;
    }
    for &v in &vol.data {
        w.write_f32::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != VOLUME_MAGIC {
        return Err(Error::Format(format!("{}: bad magic", path.display())));
    }
    let mut mb = [0u8; 1];
    r.read_exact(&mut mb)?;
    let modality = match mb[0] {
        0 => Modality::T1,
        1 => Modality::Flair,
        other => return Err(Error::Format(format!("{}: bad modality byte {other}", path.display()))),
    };
    let mut extents = [0usize; 3];
    for e in extents.iter_mut() {
        *e = r.read_u32::<LittleEndian>()? as usize;
    }
    let numel: usize = extents.iter().product();
    let mut data = vec![0.0f32; numel];
    r.read_f32_into::<LittleEndian>(&mut data)?;
    Volume::new(extents, data, modality)
}

/// A co-registered T1 + FLAIR pair from one scan session.
#[derive(Clone, Debug)]
pub struct ScanPair {
    pub patient_id: String,
    pub session_id: String,
    pub scan_date: NaiveDate,
    pub t1: Volume,
    pub flair: Volume,
}

impl ScanPair {
    pub fn validate(&self) -> Result<()> {
        if self.t1.extents() != self.flair.extents() {
            return Err(Error::shape_mismatch(
                format!("session {} volume extents", self.session_id),
                self.t1.extents(),
                self.flair.extents(),
            ));
        }
        Ok(())
    }
}

/// One row of the dataset manifest CSV.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ManifestRow {
    pub patient_id: String,
    pub session_id: String,
    pub scan_date: String,
    pub t1_path: String,
    pub flair_path: String,
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.nfvol");
        let vol = Volume::new([2, 3, 4], (0..24).map(|i| i as f32 * 0.5).collect(), Modality::Flair).unwrap();
        save_volume(&path, &vol).unwrap();
        let loaded = load_volume(&path).unwrap();
        assert_eq!(loaded, vol);
    }

    #[test]
    fn min_max_normalization() {
        let vol = Volume::new([1, 1, 4], vec![2.0, 4.0, 6.0, 10.0], Modality::T1).unwrap();
        let n = vol.min_max_normalized();
        assert_eq!(n.data(), &[0.0, 0.25, 0.5, 1.0]);
        let flat = Volume::new([1, 1, 2], vec![3.0, 3.0], Modality::T1).unwrap();
        assert_eq!(flat.min_max_normalized().data(), &[0.0, 0.0]);
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        let rows = vec![ManifestRow {
            patient_id: "p0".into(),
            session_id: "p0-s0".into(),
            scan_date: "2020-03-01".into(),
            t1_path: "vols/p0-s0-t1.nfvol".into(),
            flair_path: "vols/p0-s0-flair.nfvol".into(),
        }];
        write_manifest(&path, &rows).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].session_id, "p0-s0");
    }
}
