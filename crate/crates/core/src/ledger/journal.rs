//! Append-only chain journal: each block's canonical serialization preceded
//! by a 4-byte big-endian length.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::block::Block;
use crate::canon::{CanonError, Canonical};

pub fn encode_frame(block: &Block) -> Vec<u8> {
    let body = block.to_canonical();
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn encode_journal(blocks: &[Block]) -> Vec<u8> {
    blocks.iter().flat_map(encode_frame).collect()
}

/// Frames decoded from a journal buffer.
#[derive(Debug)]
pub struct Decoded {
    pub blocks: Vec<Block>,
    /// Bytes consumed by complete, well-formed frames.
    pub consumed: usize,
    /// Set when decoding stopped early: a partial frame (`None`) or a
    /// malformed one.
    pub stopped: Option<Option<CanonError>>,
}

/// Decodes frames until the buffer ends or a frame fails to parse.
pub fn decode_journal(bytes: &[u8]) -> Decoded {
    let mut blocks = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let rest = &bytes[pos..];
        if rest.len() < 4 {
            return Decoded { blocks, consumed: pos, stopped: Some(None) };
        }
        let len = u32::from_be_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
        if rest.len() - 4 < len {
            return Decoded { blocks, consumed: pos, stopped: Some(None) };
        }
        match Block::from_canonical(&rest[4..4 + len]) {
            Ok(b) => blocks.push(b),
            Err(e) => return Decoded { blocks, consumed: pos, stopped: Some(Some(e)) },
        }
        pos += 4 + len;
    }
    Decoded { blocks, consumed: pos, stopped: None }
}

/// Writer side of a journal file.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    /// Opens (creating if needed) and returns the existing contents.
    pub fn open(path: impl AsRef<Path>) -> io::Result<(Self, Vec<u8>)> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let mut existing = Vec::new();
        file.seek(SeekFrom::Start(0))?;
        file.read_to_end(&mut existing)?;
        Ok((Self { path, file }, existing))
    }

    pub fn append(&mut self, block: &Block) -> io::Result<()> {
        self.file.write_all(&encode_frame(block))?;
        self.file.flush()?;
        self.file.sync_data()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Reads whatever was appended to `path` after `offset`.
pub fn read_from(path: &Path, offset: u64) -> io::Result<Vec<u8>> {
    let mut file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    if file.metadata()?.len() <= offset {
        return Ok(Vec::new());
    }
    file.seek(SeekFrom::Start(offset))?;
    let mut out = Vec::new();
    file.read_to_end(&mut out)?;
    Ok(out)
}
