//! Folder datasets: 8-bit RGB PNG files plus a metadata CSV with the exact
//! header `path,label,location_id,timestamp`. Paths are relative to the
//! dataset root.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::sample::{Dataset, Image, LocationId, Sample};
use crate::error::{Error, Result};
use crate::nn::ImageShape;

pub const METADATA_HEADER: [&str; 4] = ["path", "label", "location_id", "timestamp"];
pub const METADATA_FILE: &str = "metadata.csv";

fn decode_png(path: &Path) -> std::result::Result<Image, String> {
    let file = File::open(path).map_err(|e| e.to_string())?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| "image too large".to_string())?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(format!("expected 8-bit samples, found {:?}", info.bit_depth));
    }
    let stride = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        other => return Err(format!("unsupported color type {other:?}")),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * stride];
        for px in row.chunks(stride) {
            if stride == 1 {
                data.extend_from_slice(&[px[0] as f64 / 255.0; 3]);
            } else {
                data.extend(px[..3].iter().map(|&v| v as f64 / 255.0));
            }
        }
    }
    Image::new(ImageShape::new(h, w, 3), data).map_err(|e| e.to_string())
}

pub fn encode_png(path: &Path, image: &Image) -> Result<()> {
    let s = image.shape();
    if s.channels != 3 {
        return Err(Error::Contract("PNG export expects RGB images".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), s.width as u32, s.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e.to_string()));
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(&bytes).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

/// Reads `metadata` and the images it references under `root`.
pub fn load_folder(root: &Path, metadata: &Path) -> Result<Dataset> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: metadata.to_path_buf(),
        line,
        message,
    };
    let file = File::open(metadata).map_err(|e| Error::io(metadata, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::None)
        .from_reader(BufReader::new(file));
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| parse_err(1, "empty metadata file".into()))?
        .map_err(|e| parse_err(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != METADATA_HEADER {
        return Err(parse_err(
            1,
            format!("header must be `{}`", METADATA_HEADER.join(",")),
        ));
    }

    let mut location_index: HashMap<String, u32> = HashMap::new();
    let mut keys = Vec::new();
    let mut samples = Vec::new();
    let mut max_label = 0;
    for (row, record) in records.enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, found {}", record.len())));
        }
        let rel = &record[0];
        if rel.is_empty() {
            return Err(parse_err(line, "empty path".into()));
        }
        let label: usize = record[1]
            .parse()
            .map_err(|_| parse_err(line, format!("label `{}` is not a class index", &record[1])))?;
        let loc_key = record[2].to_string();
        if loc_key.is_empty() {
            return Err(parse_err(line, "empty location_id".into()));
        }
        let timestamp: i64 = record[3]
            .parse()
            .map_err(|_| parse_err(line, format!("timestamp `{}` is not an integer", &record[3])))?;
        let image_path: PathBuf = root.join(rel);
        if !image_path.is_file() {
            return Err(parse_err(
                line,
                format!("image file `{}` not found", image_path.display()),
            ));
        }
        let image = decode_png(&image_path)
            .map_err(|e| parse_err(line, format!("cannot decode `{}`: {e}", image_path.display())))?;
        let next = keys.len() as u32;
        let loc = *location_index.entry(loc_key.clone()).or_insert_with(|| {
            keys.push(loc_key);
            next
        });
        max_label = max_label.max(label);
        samples.push(Sample {
            image: Arc::new(image),
            label,
            location: LocationId(loc),
            timestamp,
        });
    }
    if samples.is_empty() {
        return Err(Error::Ingestion(format!("{} lists no images", metadata.display())));
    }
    Dataset::new(samples, keys, max_label + 1)
}

/// Writes `dataset` as `root/images/*.png` plus `root/metadata.csv`.
pub fn export_folder(dataset: &Dataset, root: &Path) -> Result<PathBuf> {
    let images = root.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let meta_path = root.join(METADATA_FILE);
    let mut writer = csv::Writer::from_path(&meta_path).map_err(|e| Error::io(&meta_path, e.into()))?;
    let csv_err = |e: csv::Error| Error::io(&meta_path, e.into());
    writer.write_record(METADATA_HEADER).map_err(csv_err)?;
    for (i, s) in dataset.samples().iter().enumerate() {
        let rel = format!("images/{i:06}.png");
        encode_png(&root.join(&rel), &s.image)?;
        writer
            .write_record([
                rel.as_str(),
                &s.label.to_string(),
                dataset.location_key(s.location),
                &s.timestamp.to_string(),
            ])
            .map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::io(&meta_path, e))?;
    Ok(meta_path)
}
