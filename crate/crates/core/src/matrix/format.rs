//! Little-endian container helpers shared by the binary artifact formats.

use std::io::Read;

use byteorder::{LittleEndian, ReadBytesExt};

use crate::error::{Error, Result};

pub(crate) fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)
        .map_err(|_| Error::Format(format!("missing {} header", String::from_utf8_lossy(magic))))?;
    if &got != magic {
        return Err(Error::Format(format!(
            "bad magic bytes: expected {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&got)
        )));
    }
    Ok(())
}

pub(crate) fn expect_version<R: Read>(r: &mut R, version: u32) -> Result<()> {
    let got = r.read_u32::<LittleEndian>()?;
    if got != version {
        return Err(Error::Format(format!("unsupported version {got}, expected {version}")));
    }
    Ok(())
}

/// Reads the first four bytes of a file, for magic-byte checks on artifacts.
pub fn peek_magic(path: impl AsRef<std::path::Path>) -> Result<[u8; 4]> {
    let mut f = std::fs::File::open(path)?;
    let mut got = [0u8; 4];
    f.read_exact(&mut got)
        .map_err(|_| Error::Format("file shorter than a magic header".into()))?;
    Ok(got)
}
