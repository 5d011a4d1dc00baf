//! JSON Lines persistence: one block object per line, `\n`-terminated.
//!
//! Reading is strict. Every line must re-serialize to exactly the bytes it was
//! read from, so the file has a single valid spelling for a given chain.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::block::Block;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("ledger is not valid UTF-8")]
    Utf8,
    #[error("ledger does not end with a newline (truncated?)")]
    MissingTrailingNewline,
    #[error("line {line}: empty line")]
    EmptyLine { line: usize },
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: not in canonical encoding")]
    NonCanonical { line: usize },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

pub fn encode_block(block: &Block) -> String {
    serde_json::to_string(block).expect("block serialization is infallible")
}

pub fn to_jsonl(blocks: &[Block]) -> String {
    let mut out = String::new();
    for b in blocks {
        out.push_str(&encode_block(b));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(bytes: &[u8]) -> Result<Vec<Block>, CodecError> {
    let text = std::str::from_utf8(bytes).map_err(|_| CodecError::Utf8)?;
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let body = text.strip_suffix('\n').ok_or(CodecError::MissingTrailingNewline)?;
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            let line_no = i + 1;
            if line.is_empty() {
                return Err(CodecError::EmptyLine { line: line_no });
            }
            let block: Block =
                serde_json::from_str(line).map_err(|source| CodecError::Json { line: line_no, source })?;
            if encode_block(&block) != line {
                return Err(CodecError::NonCanonical { line: line_no });
            }
            Ok(block)
        })
        .collect()
}

pub fn read_file(path: &Path) -> Result<Vec<Block>, CodecError> {
    from_jsonl(&fs::read(path)?)
}

pub fn write_file(path: &Path, blocks: &[Block]) -> io::Result<()> {
    fs::write(path, to_jsonl(blocks))
}
