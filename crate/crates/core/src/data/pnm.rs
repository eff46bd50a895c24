//! Binary Netpbm codec: P6 (RGB) and P5 (grayscale), maxval 255 only.
//!
//! Samples are stored as `round(255 * v)` and read back as `byte / 255`.
//! Files written here always use the header `P6\n<w> <h>\n255\n` (or `P5`).

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::synth::{to_byte, Image};

pub fn encode(image: &Image) -> Vec<u8> {
    let magic = if image.channels() == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| to_byte(v)));
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> std::result::Result<usize, (usize, String)> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err((start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or((start, format!("{what} out of range")))
    }
}

/// Parses a P5/P6 byte buffer. `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Image> {
    let fail = |offset: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        offset,
        msg,
    };
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(fail(0, "expected P5 or P6 magic".into())),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    if !cur.bytes.get(2).is_some_and(u8::is_ascii_whitespace) && cur.bytes.get(2) != Some(&b'#') {
        return Err(fail(2, "expected whitespace after magic".into()));
    }
    let width = cur.number("width").map_err(|(o, m)| fail(o, m))?;
    let height = cur.number("height").map_err(|(o, m)| fail(o, m))?;
    let maxval_at = {
        cur.skip_whitespace_and_comments();
        cur.pos
    };
    let maxval = cur.number("maxval").map_err(|(o, m)| fail(o, m))?;
    if maxval != 255 {
        return Err(fail(maxval_at, format!("unsupported maxval {maxval} (only 255)")));
    }
    if width == 0 || height == 0 {
        return Err(fail(maxval_at, format!("degenerate size {width}x{height}")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if !cur.bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(fail(cur.pos, "expected single whitespace before pixel data".into()));
    }
    let start = cur.pos + 1;
    let needed = width * height * channels;
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() < needed {
        return Err(fail(
            bytes.len(),
            format!("truncated payload: {} of {needed} bytes", payload.len()),
        ));
    }
    if payload.len() > needed {
        return Err(fail(start + needed, "trailing bytes after pixel data".into()));
    }
    let data = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Image::new(height, width, channels, data)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn write_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode(image)).map_err(|e| Error::io(path, e))
}
