//! Observation-table and image files.
//!
//! Tables are comma-separated with one header row. Images are grayscale or
//! color PGM/PNG with 8- or 16-bit samples mapped linearly to `[0, 1]`;
//! written images are 16-bit grayscale.

use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};

use crate::array::DenseArray;
use crate::error::{Error, Result};
use crate::tasks::ObservationTable;

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "pgm" | "pnm" | "ppm")
    )
}

/// Reads `n` rows of `dim` coordinates plus a value. Image files are
/// flattened to integer pixel coordinates `(row, col)`, or
/// `(row, col, channel)` for color images.
pub fn read_observation_table(path: &Path, dim: usize) -> Result<ObservationTable> {
    if is_image(path) {
        let img = read_image(path)?;
        if img.shape().len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: img.shape().len(),
            });
        }
        return ObservationTable::from_array(&img);
    }
    let (_, table) = read_csv(path, dim, None)?;
    Ok(table)
}

/// Reads a table whose header must equal `columns` exactly.
pub fn read_named_table(path: &Path, columns: &[&str]) -> Result<ObservationTable> {
    let (_, table) = read_csv(path, columns.len() - 1, Some(columns))?;
    Ok(table)
}

fn read_csv(
    path: &Path,
    dim: usize,
    columns: Option<&[&str]>,
) -> Result<(Vec<String>, ObservationTable)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => parse_err(path, 0, format!("{other:?}")),
        })?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if let Some(cols) = columns {
        if header != cols {
            return Err(parse_err(
                path,
                1,
                format!("header {header:?} does not match the expected {cols:?}"),
            ));
        }
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != dim + 1 {
            return Err(parse_err(
                path,
                line,
                format!("expected {} columns, found {}", dim + 1, record.len()),
            ));
        }
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, line, format!("`{f}` is not a finite number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "no data rows"));
    }
    Ok((header, ObservationTable::from_rows(&rows, dim)?))
}

/// Writes a table with the given header (coordinates then value).
pub fn write_table(path: &Path, header: &[&str], table: &ObservationTable) -> Result<()> {
    if header.len() != table.dim() + 1 {
        return Err(Error::LengthMismatch {
            what: "csv header",
            expected: table.dim() + 1,
            actual: header.len(),
        });
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for i in 0..table.len() {
        let (p, v) = table.row(i);
        let fields: Vec<String> = p.iter().chain([&v]).map(|x| format!("{x}")).collect();
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

/// `[rows, cols]` for grayscale, `[rows, cols, channels]` otherwise, with
/// values in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<DenseArray> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let channels = img.color().channel_count() as usize;
    let (channels, data): (usize, Vec<f64>) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()),
        DynamicImage::ImageLuma16(b) => {
            (1, b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
        }
        other if other.color().bytes_per_pixel() / other.color().channel_count() > 1 => {
            let keep = channels.min(3);
            let rgb = other.into_rgb16().into_raw();
            (keep, strip(&rgb, 3, keep, 65535.0))
        }
        other => {
            let keep = channels.min(3);
            let rgb = other.into_rgb8().into_raw();
            (keep, strip(&rgb, 3, keep, 255.0))
        }
    };
    let shape = if channels == 1 { vec![h, w] } else { vec![h, w, channels] };
    DenseArray::new(shape, data)
}

fn strip<T: Copy + Into<f64>>(raw: &[T], stride: usize, keep: usize, scale: f64) -> Vec<f64> {
    raw.chunks_exact(stride)
        .flat_map(|px| px[..keep].iter().map(move |&v| v.into() / scale))
        .collect()
}

/// Stacks grayscale images of equal size into a `[rows, cols, n]` cube.
pub fn read_image_stack(paths: &[PathBuf]) -> Result<DenseArray> {
    let slices = paths
        .iter()
        .map(|p| read_image(p))
        .collect::<Result<Vec<_>>>()?;
    let first = slices.first().ok_or(Error::EmptySampleSet)?;
    let (rows, cols) = first
        .dims2()
        .ok_or_else(|| Error::invalid("stack", "slices must be grayscale"))?;
    let mut data = vec![0.0; rows * cols * slices.len()];
    for (b, s) in slices.iter().enumerate() {
        if s.shape() != first.shape() {
            return Err(Error::ShapeMismatch {
                node: b,
                expected: first.shape().to_vec(),
                actual: s.shape().to_vec(),
            });
        }
        for (i, &v) in s.data().iter().enumerate() {
            data[i * slices.len() + b] = v;
        }
    }
    DenseArray::new(vec![rows, cols, slices.len()], data)
}

/// Writes a 2-D array in `[0, 1]` as a 16-bit grayscale PNG or PGM chosen by
/// extension; values are clamped first.
pub fn write_image(path: &Path, image: &DenseArray) -> Result<()> {
    let (rows, cols) = image
        .dims2()
        .ok_or_else(|| Error::invalid("image", "only 2-D arrays can be written"))?;
    let px: Vec<u16> = image
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(cols as u32, rows as u32, px).expect("sized buffer");
    buf.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rows_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("t.csv");
        std::fs::write(&good, "x,y,v\n0,0,1\n1,0,0.5\n0,1,0.25\n").unwrap();
        let t = read_observation_table(&good, 2).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.row(2), (&[0.0, 1.0][..], 0.25));

        let short = dir.path().join("s.csv");
        std::fs::write(&short, "x,y,v\n0,0,1\n1,0\n").unwrap();
        match read_observation_table(&short, 2) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let text = dir.path().join("n.csv");
        std::fs::write(&text, "x,y,v\n0,a,1\n").unwrap();
        assert!(matches!(read_observation_table(&text, 2), Err(Error::Parse { line: 2, .. })));

        assert!(read_named_table(&good, &["x", "y", "g", "v"]).is_err());
        assert!(read_named_table(&good, &["x", "y", "v"]).is_ok());
    }

    #[test]
    fn image_round_trip_and_flattening() {
        let dir = tempfile::tempdir().unwrap();
        let img = DenseArray::new(vec![4, 4], (0..16).map(|i| i as f64 / 15.0).collect()).unwrap();
        for name in ["a.png", "a.pgm"] {
            let p = dir.path().join(name);
            write_image(&p, &img).unwrap();
            let back = read_image(&p).unwrap();
            assert_eq!(back.shape(), &[4, 4]);
            assert!(back.zip_map(&img, |a, b| (a - b).abs()).max_abs() < 1e-4);
            let t = read_observation_table(&p, 2).unwrap();
            assert_eq!(t.len(), 16);
            assert_eq!(t.coord_ranges(), vec![(0.0, 3.0), (0.0, 3.0)]);
        }
    }

    #[test]
    fn eight_bit_pgm_is_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.pgm");
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 255, 51, 102]);
        std::fs::write(&p, bytes).unwrap();
        let img = read_image(&p).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn table_write_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.csv");
        let t = ObservationTable::from_rows(&[vec![0.1, 2.0, -3.5], vec![1.0, 1.0, 0.0]], 2).unwrap();
        write_table(&p, &["x", "y", "v"], &t).unwrap();
        assert_eq!(read_observation_table(&p, 2).unwrap(), t);
    }
}
