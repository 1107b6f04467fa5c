//! `.tvo` object images.
//!
//! ```text
//! "TVO1"  u32 function count
//! per function: u32 name length, name bytes, u32 code offset,
//!               u32 code length, u32 frame size
//! code bytes
//! ```
//!
//! All integers are little-endian; code offsets are relative to the start of
//! the code section.

use super::WORD;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"TVO1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageFunction {
    pub name: String,
    pub code: Vec<u8>,
    pub frame_size: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Image {
    pub functions: Vec<ImageFunction>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("bad magic: not a TVO1 image")]
    BadMagic,
    #[error("image truncated")]
    Truncated,
    #[error("function '{0}' has code outside the code section")]
    BadCodeRange(String),
    #[error("function name is not valid UTF-8")]
    BadName,
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ImageError> {
        let end = self.pos.checked_add(n).ok_or(ImageError::Truncated)?;
        let s = self.data.get(self.pos..end).ok_or(ImageError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ImageError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl Image {
    pub fn function_index(&self, name: &str) -> Option<usize> {
        self.functions.iter().position(|f| f.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.functions.len() as u32).to_le_bytes());
        let mut off = 0u32;
        for f in &self.functions {
            out.extend_from_slice(&(f.name.len() as u32).to_le_bytes());
            out.extend_from_slice(f.name.as_bytes());
            out.extend_from_slice(&off.to_le_bytes());
            out.extend_from_slice(&(f.code.len() as u32).to_le_bytes());
            out.extend_from_slice(&f.frame_size.to_le_bytes());
            off += f.code.len() as u32;
        }
        for f in &self.functions {
            out.extend_from_slice(&f.code);
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Image, ImageError> {
        let mut r = Reader { data, pos: 0 };
        if r.take(4).map_err(|_| ImageError::BadMagic)? != MAGIC {
            return Err(ImageError::BadMagic);
        }
        let count = r.u32()?;
        let mut headers = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| ImageError::BadName)?
                .to_string();
            let off = r.u32()? as usize;
            let clen = r.u32()? as usize;
            let frame_size = r.u32()?;
            headers.push((name, off, clen, frame_size));
        }
        let code = &data[r.pos..];
        let mut functions = Vec::new();
        for (name, off, clen, frame_size) in headers {
            let end = off.checked_add(clen).ok_or(ImageError::Truncated)?;
            if clen % WORD != 0 {
                return Err(ImageError::BadCodeRange(name));
            }
            let bytes = code.get(off..end).ok_or(ImageError::Truncated)?;
            functions.push(ImageFunction {
                name,
                code: bytes.to_vec(),
                frame_size,
            });
        }
        Ok(Image { functions })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert_eq!(Image::from_bytes(b"ELF\x7f"), Err(ImageError::BadMagic));
        assert_eq!(Image::from_bytes(b"TV"), Err(ImageError::BadMagic));
        let img = Image {
            functions: vec![ImageFunction { name: "f".into(), code: vec![0; 16], frame_size: 0 }],
        };
        let bytes = img.to_bytes();
        assert_eq!(
            Image::from_bytes(&bytes[..bytes.len() - 1]),
            Err(ImageError::Truncated)
        );
    }

    proptest! {
        #[test]
        fn round_trip(fs in proptest::collection::vec(("[a-z_]{1,8}", 0usize..6, any::<u32>()), 0..5)) {
            let img = Image {
                functions: fs
                    .into_iter()
                    .map(|(name, words, frame_size)| ImageFunction {
                        name,
                        code: (0..words * WORD).map(|i| i as u8).collect(),
                        frame_size,
                    })
                    .collect(),
            };
            prop_assert_eq!(Image::from_bytes(&img.to_bytes()).unwrap(), img);
        }
    }
}
