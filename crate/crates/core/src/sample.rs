//! Generated training pairs and their on-disk container format.
//!
//! A container file is a single JSON header line describing shapes and
//! field order, followed by the raw little-endian f64 payload of each
//! field. A dataset file concatenates samples behind an index table.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Normals,
    Depth,
}

impl Task {
    pub fn gt_channels(&self) -> usize {
        match self {
            Task::Normals => 3,
            Task::Depth => 1,
        }
    }
}

/// One generated training pair: a shaded grayscale image, its ground
/// truth (camera-space unit normals or depth), and the foreground mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub width: usize,
    pub height: usize,
    pub task: Task,
    /// H*W grayscale values in [0, 1], row-major.
    pub image: Vec<f64>,
    /// H*W*3 normals or H*W depths, row-major; zero on background pixels.
    pub ground_truth: Vec<f64>,
    /// H*W hit flags; ground truth is only meaningful where true.
    pub mask: Vec<bool>,
}

impl Sample {
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn hit_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// A render where every ray missed; legal, but flagged.
    pub fn all_background(&self) -> bool {
        self.hit_count() == 0
    }

    /// The differentiable payload (image then ground truth) as one flat
    /// vector; this is the row space of the generator Jacobian. The mask
    /// is discrete and deliberately excluded.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.image.len() + self.ground_truth.len());
        out.extend_from_slice(&self.image);
        out.extend_from_slice(&self.ground_truth);
        out
    }

    pub fn flat_len(&self) -> usize {
        self.image.len() + self.ground_truth.len()
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    width: usize,
    height: usize,
    task: Task,
    dtype: String,
    fields: Vec<FieldDesc>,
}

#[derive(Serialize, Deserialize)]
struct FieldDesc {
    name: String,
    shape: Vec<usize>,
}

fn header_of(sample: &Sample) -> Header {
    Header {
        width: sample.width,
        height: sample.height,
        task: sample.task,
        dtype: "f64le".to_string(),
        fields: vec![
            FieldDesc {
                name: "image".into(),
                shape: vec![sample.height, sample.width],
            },
            FieldDesc {
                name: "ground_truth".into(),
                shape: match sample.task {
                    Task::Normals => vec![sample.height, sample.width, 3],
                    Task::Depth => vec![sample.height, sample.width],
                },
            },
            FieldDesc {
                name: "mask".into(),
                shape: vec![sample.height, sample.width],
            },
        ],
    }
}

fn write_payload(w: &mut impl Write, sample: &Sample) -> Result<()> {
    for v in &sample.image {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in &sample.ground_truth {
        w.write_all(&v.to_le_bytes())?;
    }
    for m in &sample.mask {
        let v: f64 = if *m { 1.0 } else { 0.0 };
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn read_after_header(r: &mut impl Read, header: &Header) -> Result<Sample> {
    if header.dtype != "f64le" {
        return Err(Error::Record(format!("unsupported dtype {}", header.dtype)));
    }
    let pixels = header.width * header.height;
    let gt_len = pixels * header.task.gt_channels();
    let image = read_f64s(r, pixels)?;
    let ground_truth = read_f64s(r, gt_len)?;
    let mask = read_f64s(r, pixels)?.into_iter().map(|v| v != 0.0).collect();
    Ok(Sample {
        width: header.width,
        height: header.height,
        task: header.task,
        image,
        ground_truth,
        mask,
    })
}

pub fn write_sample(path: &Path, sample: &Sample) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header_of(sample))?;
    w.write_all(b"\n")?;
    write_payload(&mut w, sample)?;
    w.flush()?;
    Ok(())
}

pub fn read_sample(path: &Path) -> Result<Sample> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_header_line(&mut r)?;
    read_after_header(&mut r, &header)
}

fn read_header_line(r: &mut impl Read) -> Result<Header> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)?;
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 1 << 20 {
            return Err(Error::Record("unterminated container header".into()));
        }
    }
    Ok(serde_json::from_slice(&line)?)
}

/// Concatenated dataset: a JSON index line listing byte offsets, then each
/// sample in the single-sample format.
pub fn write_dataset(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut bodies: Vec<Vec<u8>> = Vec::with_capacity(samples.len());
    for s in samples {
        let mut buf = Vec::new();
        serde_json::to_writer(&mut buf, &header_of(s))?;
        buf.push(b'\n');
        write_payload(&mut buf, s)?;
        bodies.push(buf);
    }
    #[derive(Serialize)]
    struct Index {
        count: usize,
        offsets: Vec<u64>,
    }
    let mut offsets = Vec::with_capacity(bodies.len());
    let mut cursor = 0u64;
    for b in &bodies {
        offsets.push(cursor);
        cursor += b.len() as u64;
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(
        &mut w,
        &Index {
            count: bodies.len(),
            offsets,
        },
    )?;
    w.write_all(b"\n")?;
    for b in &bodies {
        w.write_all(b)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<Sample>> {
    #[derive(Deserialize)]
    struct Index {
        count: usize,
        #[allow(dead_code)]
        offsets: Vec<u64>,
    }
    let mut r = BufReader::new(File::open(path)?);
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)?;
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
    }
    let index: Index = serde_json::from_slice(&line)?;
    let mut out = Vec::with_capacity(index.count);
    for _ in 0..index.count {
        let header = read_header_line(&mut r)?;
        out.push(read_after_header(&mut r, &header)?);
    }
    Ok(out)
}
