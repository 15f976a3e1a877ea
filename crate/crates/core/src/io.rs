//! File formats: raw little-endian f64 images, windowed 16-bit PGM,
//! sinograms and eigenset files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::ct::{ImageGrid, Sinogram};
use crate::error::{check_len, Error, Result};
use crate::spectral::EigenSet;

const SINOGRAM_MAGIC: &[u8; 4] = b"CPSG";

pub fn write_raw(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_raw(path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "{}: {} bytes is not a whole number of f64 values",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Map `image` to 16-bit gray levels: `lo` and below to 0, `hi` and above
/// to 65535. Rows are emitted top to bottom, i.e. highest `y` first.
pub fn pgm_bytes(grid: &ImageGrid, image: &[f64], window: (f64, f64)) -> Result<Vec<u8>> {
    check_len("PGM image", grid.n_pixels(), image.len())?;
    let (lo, hi) = window;
    if !(hi > lo) {
        return Err(Error::invalid(format!("display window [{lo}, {hi}] is empty")));
    }
    let mut out = format!("P5\n{} {}\n65535\n", grid.nx, grid.ny).into_bytes();
    out.reserve(2 * image.len());
    for row in (0..grid.ny).rev() {
        for col in 0..grid.nx {
            let v = image[grid.index(col, row)];
            let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
            let level = if t.is_nan() { 0 } else { (t * 65535.0).round() as u16 };
            out.extend_from_slice(&level.to_be_bytes());
        }
    }
    Ok(out)
}

pub fn write_pgm(path: &Path, grid: &ImageGrid, image: &[f64], window: (f64, f64)) -> Result<()> {
    std::fs::write(path, pgm_bytes(grid, image, window)?)?;
    Ok(())
}

/// Width, height and gray levels (top row first) of a 16-bit binary PGM.
pub fn parse_pgm16(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let bad = |m: &str| Error::Format(format!("PGM: {m}"));
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not text"))?);
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "65535" {
        return Err(bad("expected a P5 file with maxval 65535"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let body = bytes.get(pos..).ok_or_else(|| bad("missing pixel data"))?;
    if body.len() != 2 * w * h {
        return Err(bad("pixel data length does not match size"));
    }
    Ok((
        w,
        h,
        body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect(),
    ))
}

pub fn write_sinogram(path: &Path, sino: &Sinogram) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SINOGRAM_MAGIC)?;
    w.write_all(&(sino.n_views as u64).to_le_bytes())?;
    w.write_all(&(sino.n_bins as u64).to_le_bytes())?;
    w.write_all(&sino.geometry_hash.to_le_bytes())?;
    for v in &sino.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sinogram(path: &Path) -> Result<Sinogram> {
    let mut r = BufReader::new(File::open(path)?);
    let mut word = [0u8; 8];
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SINOGRAM_MAGIC {
        return Err(Error::Format(format!("{} is not a sinogram file", path.display())));
    }
    let mut next = |r: &mut BufReader<File>| -> Result<u64> {
        r.read_exact(&mut word)?;
        Ok(u64::from_le_bytes(word))
    };
    let n_views = next(&mut r)? as usize;
    let n_bins = next(&mut r)? as usize;
    let geometry_hash = next(&mut r)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() != 8 * n_views * n_bins {
        return Err(Error::Format(format!(
            "sinogram body has {} bytes, expected {}",
            rest.len(),
            8 * n_views * n_bins
        )));
    }
    Ok(Sinogram {
        values: rest
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
        n_views,
        n_bins,
        geometry_hash,
    })
}

pub fn write_eigenset(path: &Path, eigs: &EigenSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    eigs.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_eigenset(path: &Path) -> Result<EigenSet> {
    EigenSet::read_from(BufReader::new(File::open(path)?))
}
