//! Image file formats: binary/ASCII PGM and the lossless `F64IMG` raw format.
//!
//! `F64IMG` layout (all little-endian):
//!
//! ```text
//! b"F64IMG" | rows: u32 | cols: u32 | rows*cols f64 values, column-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

pub const F64IMG_MAGIC: &[u8; 6] = b"F64IMG";

pub fn write_f64img<W: Write>(mut w: W, img: &Image) -> Result<()> {
    let rows = u32::try_from(img.rows()).map_err(|_| too_large("rows"))?;
    let cols = u32::try_from(img.cols()).map_err(|_| too_large("cols"))?;
    w.write_all(F64IMG_MAGIC)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    for v in img.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_f64img<R: Read>(mut r: R) -> Result<Image> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != F64IMG_MAGIC {
        return Err(Error::Format {
            format: "F64IMG",
            reason: "bad magic".into(),
        });
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let rows = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u32::from_le_bytes(word) as usize;
    let n = rows.checked_mul(cols).ok_or_else(|| too_large("rows*cols"))?;
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Image::new(rows, cols, data)
}

pub fn save_f64img(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    write_f64img(BufWriter::new(File::create(path)?), img)
}

pub fn load_f64img(path: impl AsRef<Path>) -> Result<Image> {
    read_f64img(BufReader::new(File::open(path)?))
}

fn too_large(what: &str) -> Error {
    Error::Format {
        format: "F64IMG",
        reason: format!("{what} does not fit in u32"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgmDepth {
    Eight,
    Sixteen,
}

impl PgmDepth {
    pub fn maxval(self) -> u16 {
        match self {
            PgmDepth::Eight => u8::MAX as u16,
            PgmDepth::Sixteen => u16::MAX,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgmEncoding {
    /// `P5`
    Binary,
    /// `P2`
    Ascii,
}

/// Reads a P2 or P5 graymap. Intensities are returned as raw sample values
/// (`0..=maxval`); row `k` of the file becomes row `k` of the image.
pub fn read_pgm<R: Read>(mut r: R) -> Result<Image> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut cursor = 0usize;
    let magic = next_token(&buf, &mut cursor)?;
    let binary = match magic.as_str() {
        "P5" => true,
        "P2" => false,
        other => return Err(pgm_err(format!("unsupported magic {other:?}"))),
    };
    let width: usize = parse_token(&buf, &mut cursor, "width")?;
    let height: usize = parse_token(&buf, &mut cursor, "height")?;
    let maxval: u32 = parse_token(&buf, &mut cursor, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(pgm_err(format!("maxval {maxval} out of range")));
    }
    let n = width * height;
    let mut samples = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        cursor += 1;
        let bytes_per = if maxval < 256 { 1 } else { 2 };
        let raster = buf
            .get(cursor..cursor + n * bytes_per)
            .ok_or_else(|| pgm_err("truncated raster".into()))?;
        if bytes_per == 1 {
            samples.extend(raster.iter().map(|&b| b as f64));
        } else {
            samples.extend(
                raster
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64),
            );
        }
    } else {
        for _ in 0..n {
            let v: u32 = parse_token(&buf, &mut cursor, "sample")?;
            samples.push(v as f64);
        }
    }
    // file is row-major
    let img = Image::from_fn(height, width, |k, l| samples[k * width + l]);
    Ok(img)
}

/// Writes `img` as a graymap, mapping `[0, max(img)]` linearly onto
/// `[0, maxval]`; negative values are clipped to 0.
pub fn write_pgm<W: Write>(
    mut w: W,
    img: &Image,
    depth: PgmDepth,
    encoding: PgmEncoding,
) -> Result<()> {
    let maxval = depth.maxval();
    let peak = img.max();
    let scale = if peak > 0.0 { maxval as f64 / peak } else { 0.0 };
    let quantize = |v: f64| -> u16 { (v * scale).round().clamp(0.0, maxval as f64) as u16 };
    let magic = match encoding {
        PgmEncoding::Binary => "P5",
        PgmEncoding::Ascii => "P2",
    };
    write!(w, "{magic}\n{} {}\n{maxval}\n", img.cols(), img.rows())?;
    for k in 0..img.rows() {
        for l in 0..img.cols() {
            let q = quantize(img.get(k, l));
            match (encoding, depth) {
                (PgmEncoding::Binary, PgmDepth::Eight) => w.write_all(&[q as u8])?,
                (PgmEncoding::Binary, PgmDepth::Sixteen) => w.write_all(&q.to_be_bytes())?,
                (PgmEncoding::Ascii, _) => {
                    let sep = if l + 1 == img.cols() { '\n' } else { ' ' };
                    write!(w, "{q}{sep}")?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Image> {
    read_pgm(BufReader::new(File::open(path)?))
}

pub fn save_pgm(path: impl AsRef<Path>, img: &Image, depth: PgmDepth) -> Result<()> {
    write_pgm(
        BufWriter::new(File::create(path)?),
        img,
        depth,
        PgmEncoding::Binary,
    )
}

fn pgm_err(reason: String) -> Error {
    Error::Format {
        format: "PGM",
        reason,
    }
}

fn next_token(buf: &[u8], cursor: &mut usize) -> Result<String> {
    loop {
        match buf.get(*cursor) {
            None => return Err(pgm_err("unexpected end of header".into())),
            Some(b'#') => {
                while let Some(&c) = buf.get(*cursor) {
                    *cursor += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            }
            Some(c) if c.is_ascii_whitespace() => *cursor += 1,
            Some(_) => break,
        }
    }
    let start = *cursor;
    while let Some(c) = buf.get(*cursor) {
        if c.is_ascii_whitespace() {
            break;
        }
        *cursor += 1;
    }
    Ok(String::from_utf8_lossy(&buf[start..*cursor]).into_owned())
}

fn parse_token<T: std::str::FromStr>(buf: &[u8], cursor: &mut usize, what: &str) -> Result<T> {
    let tok = next_token(buf, cursor)?;
    tok.parse()
        .map_err(|_| pgm_err(format!("cannot parse {what} from {tok:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64img_round_trip_is_lossless() {
        let img = Image::from_fn(3, 5, |k, l| (k as f64 + 0.1) * std::f64::consts::PI.powi(l as i32));
        let mut bytes = Vec::new();
        write_f64img(&mut bytes, &img).unwrap();
        assert_eq!(&bytes[..6], b"F64IMG");
        assert_eq!(&bytes[6..10], &3u32.to_le_bytes());
        assert_eq!(&bytes[10..14], &5u32.to_le_bytes());
        assert_eq!(bytes.len(), 14 + 15 * 8);
        // first value stored is X[0,0], second X[1,0] (column-major)
        assert_eq!(&bytes[22..30], &img.get(1, 0).to_le_bytes());
        assert_eq!(read_f64img(bytes.as_slice()).unwrap(), img);
    }

    #[test]
    fn f64img_rejects_bad_magic() {
        let err = read_f64img(&b"F32IMG\0\0\0\0\0\0\0\0"[..]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn pgm_binary_and_ascii_round_trip() {
        let img = Image::from_fn(4, 3, |k, l| (k * 3 + l) as f64);
        for depth in [PgmDepth::Eight, PgmDepth::Sixteen] {
            for enc in [PgmEncoding::Binary, PgmEncoding::Ascii] {
                let mut bytes = Vec::new();
                write_pgm(&mut bytes, &img, depth, enc).unwrap();
                let back = read_pgm(bytes.as_slice()).unwrap();
                assert_eq!(back.shape(), (4, 3));
                let scale = depth.maxval() as f64 / 11.0;
                for k in 0..4 {
                    for l in 0..3 {
                        assert_eq!(back.get(k, l), (img.get(k, l) * scale).round());
                    }
                }
            }
        }
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let data = b"P2\n# a comment\n2 1\n# another\n255\n7 9\n";
        let img = read_pgm(&data[..]).unwrap();
        assert_eq!(img.shape(), (1, 2));
        assert_eq!(img.as_slice(), &[7.0, 9.0]);
    }
}
