//! Dataset file: a text header terminated by an `end` line, then one binary
//! record per sample:
//!
//! ```text
//! id            u64 LE
//! is_augmented  u8
//! labels        C bytes (0/1)
//! hr            T*H*W f64 LE, row-major
//! lr            T*(H/d)*(W/d) f64 LE
//! sr            T*H*W f64 LE
//! ```

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array3;

use super::{Dataset, Geometry, LabeledSample, Tier, VideoTensor};
use crate::error::{Error, Result};
use crate::fsutil::{self, header_field, parse_list, parse_num, put_f64s, Reader};

pub const DATASET_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "tinyaction-dataset";

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let g = ds.geometry;
    let mut header = String::new();
    writeln!(header, "{MAGIC} {DATASET_FORMAT_VERSION}").unwrap();
    writeln!(header, "num_classes {}", ds.num_classes).unwrap();
    writeln!(header, "frames {}", g.frames).unwrap();
    writeln!(header, "height {}", g.height).unwrap();
    writeln!(header, "width {}", g.width).unwrap();
    writeln!(header, "downsample {}", g.downsample).unwrap();
    writeln!(header, "num_samples {}", ds.samples.len()).unwrap();
    writeln!(header, "class_counts {}", join(&ds.class_counts)).unwrap();
    writeln!(header, "group_map {}", join(&ds.group_map)).unwrap();
    header.push_str("end\n");

    let mut out = header.into_bytes();
    for s in &ds.samples {
        out.extend_from_slice(&s.id.to_le_bytes());
        out.push(u8::from(s.is_augmented));
        out.extend_from_slice(&s.labels);
        for tier in Tier::ALL {
            put_f64s(&mut out, s.video(tier).frames.iter());
        }
    }
    out
}

pub fn write_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    fsutil::write_atomic(path, &encode_dataset(ds))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fsutil::read_bytes(path)?;
    decode_dataset(path, &bytes)
}

pub fn decode_dataset(path: &Path, bytes: &[u8]) -> Result<Dataset> {
    let (lines, payload) = fsutil::split_header(path, bytes)?;
    let version: u32 = parse_num(path, MAGIC, header_field(path, &lines, 0, MAGIC)?)?;
    if version != DATASET_FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported dataset version {version}")));
    }
    let field = |idx: usize, key: &str| -> Result<usize> { parse_num(path, key, header_field(path, &lines, idx, key)?) };
    let num_classes = field(1, "num_classes")?;
    let geometry = Geometry {
        frames: field(2, "frames")?,
        height: field(3, "height")?,
        width: field(4, "width")?,
        downsample: field(5, "downsample")?,
    };
    let num_samples = field(6, "num_samples")?;
    let class_counts: Vec<usize> = parse_list(path, "class_counts", header_field(path, &lines, 7, "class_counts")?)?;
    let group_map: Vec<usize> = parse_list(path, "group_map", header_field(path, &lines, 8, "group_map")?)?;
    if lines.len() != 9 {
        return Err(Error::format(path, "unexpected extra header lines"));
    }
    if geometry.downsample == 0
        || geometry.height % geometry.downsample != 0
        || geometry.width % geometry.downsample != 0
    {
        return Err(Error::format(path, "downsample factor must divide height and width"));
    }

    let mut reader = Reader::new(path, payload);
    let mut samples = Vec::with_capacity(num_samples);
    for _ in 0..num_samples {
        let id = reader.u64()?;
        let is_augmented = match reader.u8()? {
            0 => false,
            1 => true,
            other => return Err(Error::format(path, format!("bad augmentation flag {other}"))),
        };
        let labels = reader.bytes(num_classes)?;
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::format(path, format!("sample {id}: label bytes must be 0 or 1")));
        }
        let mut video = |tier: Tier| -> Result<VideoTensor> {
            let (h, w) = geometry.tier_dims(tier);
            let data = reader.f64s(geometry.frames * h * w)?;
            let frames = Array3::from_shape_vec((geometry.frames, h, w), data)
                .map_err(|e| Error::format(path, e.to_string()))?;
            VideoTensor::new(frames, tier)
        };
        let hr = video(Tier::Hr)?;
        let lr = video(Tier::Lr)?;
        let sr = video(Tier::Sr)?;
        samples.push(LabeledSample {
            id,
            hr,
            lr,
            sr,
            labels,
            is_augmented,
        });
    }
    reader.finish()?;

    let ds = Dataset {
        samples,
        num_classes,
        class_counts,
        group_map,
        geometry,
    };
    ds.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(ds)
}
