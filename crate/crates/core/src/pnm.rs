//! Binary 8-bit PGM (`P5`) and PPM (`P6`) images.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    /// 1 for PGM, 3 for PPM.
    pub channels: usize,
    pub maxval: u8,
    /// Row-major, channels interleaved.
    pub data: Vec<u8>,
}

impl Pnm {
    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Pnm {
            width,
            height,
            channels: 1,
            maxval: 255,
            data,
        }
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Self {
        debug_assert_eq!(data.len(), width * height * 3);
        Pnm {
            width,
            height,
            channels: 3,
            maxval: 255,
            data,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse("pnm", self.pos, msg)
    }

    /// Skips whitespace and `#` comments running to end of line.
    fn skip_space(&mut self) {
        while let Some(&c) = self.b.get(self.pos) {
            if c.is_ascii_whitespace() {
                self.pos += 1;
            } else if c == b'#' {
                while let Some(&c) = self.b.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        let mut v: usize = 0;
        while let Some(&c) = self.b.get(self.pos) {
            if !c.is_ascii_digit() {
                break;
            }
            v = v
                .checked_mul(10)
                .and_then(|v| v.checked_add((c - b'0') as usize))
                .ok_or_else(|| Error::parse("pnm", start, format!("{what} too large")))?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err(format!("expected {what}")));
        }
        Ok(v)
    }
}

/// Parses a P5 or P6 image.
pub fn parse(bytes: &[u8]) -> Result<Pnm> {
    let mut c = Cursor { b: bytes, pos: 0 };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(c.err("expected P5 or P6 magic")),
    };
    c.pos = 2;
    let width = c.number("width")?;
    let height = c.number("height")?;
    c.skip_space();
    let maxval_pos = c.pos;
    let maxval = c.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::parse("pnm", maxval_pos, format!("maxval {maxval} is not 8-bit")));
    }
    if width == 0 || height == 0 {
        return Err(c.err("empty image"));
    }
    match bytes.get(c.pos) {
        Some(b) if b.is_ascii_whitespace() => c.pos += 1,
        _ => return Err(c.err("expected one whitespace byte before the raster")),
    }
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| c.err("image size overflows"))?;
    let rest = &bytes[c.pos..];
    if rest.len() < len {
        return Err(c.err(format!("raster truncated: {} of {len} bytes", rest.len())));
    }
    if rest.len() > len {
        return Err(Error::parse("pnm", c.pos + len, "trailing bytes after raster"));
    }
    if let Some(i) = rest.iter().position(|&v| v as usize > maxval) {
        return Err(Error::parse("pnm", c.pos + i, format!("sample exceeds maxval {maxval}")));
    }
    Ok(Pnm {
        width,
        height,
        channels,
        maxval: maxval as u8,
        data: rest.to_vec(),
    })
}

pub fn parse_ppm(bytes: &[u8]) -> Result<Pnm> {
    let p = parse(bytes)?;
    if p.channels != 3 {
        return Err(Error::parse("pnm", 0, "expected a P6 (RGB) image"));
    }
    Ok(p)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Pnm> {
    let p = parse(bytes)?;
    if p.channels != 1 {
        return Err(Error::parse("pnm", 0, "expected a P5 (grayscale) image"));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let img = Pnm::rgb(2, 1, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(parse(&img.encode()).unwrap(), img);
        let g = Pnm::gray(3, 2, vec![0, 1, 2, 3, 4, 255]);
        assert_eq!(parse_pgm(&g.encode()).unwrap(), g);
    }

    #[test]
    fn comments_and_odd_whitespace() {
        let bytes = b"P5 # c\n#another\n 2\t1 # x\n255\n\x07\x08";
        let p = parse(bytes).unwrap();
        assert_eq!((p.width, p.height), (2, 1));
        assert_eq!(p.data, vec![7, 8]);
    }

    #[test]
    fn errors_report_offsets() {
        assert!(matches!(parse(b"P3\n1 1\n255\n1"), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(parse(b"P5\n1 x\n255\n1"), Err(Error::Parse { offset: 5, .. })));
        assert!(matches!(parse(b"P5\n1 1\n65535\n1"), Err(Error::Parse { offset: 7, .. })));
        assert!(matches!(parse(b"P5\n2 1\n255\n1"), Err(Error::Parse { offset: 11, .. })));
        assert!(matches!(parse(b"P5\n1 1\n255\n12"), Err(Error::Parse { offset: 12, .. })));
        assert!(matches!(parse(b"P5\n1 1\n9\n\x0a"), Err(Error::Parse { offset: 9, .. })));
        assert!(parse(b"P5\n99999999999999999999999 1\n255\n").is_err());
        assert!(parse(b"P6\n4294967296 4294967296\n255\n").is_err());
        assert!(parse_ppm(&Pnm::gray(1, 1, vec![0]).encode()).is_err());
    }
}
