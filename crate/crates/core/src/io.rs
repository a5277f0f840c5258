//! File formats: JSONL token streams, delimiter-table JSON, and the binary
//! "ATN1" attention tensor container.
//!
//! In-memory values are `f64`; every on-disk float is 32-bit little-endian
//! (matching typical inference precision). Reading widens exactly, writing
//! narrows with round-to-nearest.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{AttentionTensor, DelimiterTable, TableError, TokenSequence};

/// Magic bytes opening an attention tensor file.
pub const ATTENTION_MAGIC: &[u8; 4] = b"ATN1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("bad magic: expected \"ATN1\", got {0:?}")]
    BadMagic([u8; 4]),
    #[error("attention header inconsistent: dims are ({0}, {1}, {2}, {3}), last two must match")]
    BadHeader(u32, u32, u32, u32),
    #[error("attention payload truncated: expected {expected} floats, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("empty input: {0}")]
    Empty(String),
}

#[derive(Serialize, Deserialize)]
struct TokenRecord {
    tokens: Vec<u32>,
}

/// Reads a JSONL token stream: one `{"tokens": [...]}` object per line.
/// Blank lines are skipped.
pub fn read_token_sequences(path: impl AsRef<Path>) -> Result<Vec<TokenSequence>, FormatError> {
    let reader = BufReader::new(File::open(path)?);
    let mut sequences = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TokenRecord = serde_json::from_str(&line)
            .map_err(|source| FormatError::Json { line: idx + 1, source })?;
        sequences.push(TokenSequence::new(record.tokens));
    }
    Ok(sequences)
}

pub fn write_token_sequences(
    path: impl AsRef<Path>,
    sequences: &[TokenSequence],
) -> Result<(), FormatError> {
    let mut writer = BufWriter::new(File::create(path)?);
    for seq in sequences {
        let record = TokenRecord {
            tokens: seq.tokens.clone(),
        };
        serde_json::to_writer(&mut writer, &record)
            .map_err(|source| FormatError::Json { line: 0, source })?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads and validates a delimiter table: a JSON object mapping token-id
/// strings to weights, e.g. `{"28723": 1.0, "28725": 0.6}`.
pub fn read_delimiter_table(path: impl AsRef<Path>) -> Result<DelimiterTable, FormatError> {
    let text = std::fs::read_to_string(path)?;
    parse_delimiter_table(&text)
}

pub fn parse_delimiter_table(text: &str) -> Result<DelimiterTable, FormatError> {
    let table: DelimiterTable = serde_json::from_str(text)
        .map_err(|source| FormatError::Json { line: 1, source })?;
    table.validate()?;
    Ok(table)
}

/// Canonical serialization of a table: keys in ascending numeric order,
/// one entry per line. Identical tables serialize to identical bytes.
pub fn delimiter_table_to_json(table: &DelimiterTable) -> String {
    let mut out = String::from("{\n");
    let mut first = true;
    for (token, weight) in table.iter() {
        if !first {
            out.push_str(",\n");
        }
        first = false;
        out.push_str(&format!("  \"{token}\": {weight:?}"));
    }
    out.push_str("\n}\n");
    out
}

pub fn write_delimiter_table(
    path: impl AsRef<Path>,
    table: &DelimiterTable,
) -> Result<(), FormatError> {
    std::fs::write(path, delimiter_table_to_json(table))?;
    Ok(())
}

/// Reads a JSON array of candidate token ids, e.g. `[28723, 28725]`.
pub fn read_candidate_ids(path: impl AsRef<Path>) -> Result<Vec<u32>, FormatError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|source| FormatError::Json { line: 1, source })
}

/// Reads an ATN1 attention tensor: magic, four u32 LE dims
/// `(layers, heads, S, S)`, then `layers*heads*S*S` f32 LE values in
/// `[layer][head][query][key]` order.
pub fn read_attention(path: impl AsRef<Path>) -> Result<AttentionTensor, FormatError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != ATTENTION_MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let mut header = [0u8; 16];
    reader.read_exact(&mut header)?;
    let dim = |i: usize| u32::from_le_bytes(header[i * 4..i * 4 + 4].try_into().unwrap());
    let (layers, heads, s0, s1) = (dim(0), dim(1), dim(2), dim(3));
    if s0 != s1 {
        return Err(FormatError::BadHeader(layers, heads, s0, s1));
    }
    let expected = layers as usize * heads as usize * s0 as usize * s1 as usize;
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    if payload.len() != expected * 4 {
        return Err(FormatError::Truncated {
            expected,
            got: payload.len() / 4,
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    AttentionTensor::from_values(layers as usize, heads as usize, s0 as usize, values)
        .map_err(|_| FormatError::Truncated {
            expected,
            got: expected,
        })
}

pub fn write_attention(
    path: impl AsRef<Path>,
    tensor: &AttentionTensor,
) -> Result<(), FormatError> {
    let mut writer = BufWriter::new(File::create(path)?);
    writer.write_all(ATTENTION_MAGIC)?;
    for dim in [
        tensor.layers() as u32,
        tensor.heads() as u32,
        tensor.seq_len() as u32,
        tensor.seq_len() as u32,
    ] {
        writer.write_all(&dim.to_le_bytes())?;
    }
    for &v in tensor.values() {
        writer.write_all(&(v as f32).to_le_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("kvsplit-io-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(format!("{}-{name}", std::process::id()))
    }

    #[test]
    fn token_jsonl_round_trip() {
        let path = tmp("tokens.jsonl");
        let seqs = vec![
            TokenSequence::new(vec![1, 2, 3]),
            TokenSequence::new(vec![]),
            TokenSequence::new(vec![28723]),
        ];
        write_token_sequences(&path, &seqs).unwrap();
        assert_eq!(read_token_sequences(&path).unwrap(), seqs);
    }

    #[test]
    fn table_json_round_trip_is_byte_stable() {
        let table = DelimiterTable::new(BTreeMap::from([
            (28723u32, 1.0),
            (28725u32, 0.6),
            (557u32, 0.6),
        ]))
        .unwrap();
        let first = delimiter_table_to_json(&table);
        let reparsed = parse_delimiter_table(&first).unwrap();
        assert_eq!(reparsed, table);
        assert_eq!(delimiter_table_to_json(&reparsed), first);
        // Numeric key order, not lexicographic.
        assert!(first.find("\"557\"").unwrap() < first.find("\"28723\"").unwrap());
    }

    #[test]
    fn table_rejects_invalid_weight_on_read() {
        assert!(matches!(
            parse_delimiter_table("{\"5\": 1.25}"),
            Err(FormatError::Table(_))
        ));
    }

    #[test]
    fn attention_round_trip_via_f32() {
        let path = tmp("attn.atn1");
        let tensor =
            AttentionTensor::from_values(1, 2, 2, vec![1.0, 0.0, 0.25, 0.75, 1.0, 0.0, 0.5, 0.5])
                .unwrap();
        write_attention(&path, &tensor).unwrap();
        let back = read_attention(&path).unwrap();
        // All values here are exactly representable in f32.
        assert_eq!(back, tensor);
    }

    #[test]
    fn attention_bad_magic_rejected() {
        let path = tmp("bad.atn1");
        std::fs::write(&path, b"NOPE\0\0\0\0\0\0\0\0\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(
            read_attention(&path),
            Err(FormatError::BadMagic(_))
        ));
    }

    #[test]
    fn attention_truncated_payload_rejected() {
        let path = tmp("short.atn1");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(ATTENTION_MAGIC);
        for dim in [1u32, 1, 2, 2] {
            bytes.extend_from_slice(&dim.to_le_bytes());
        }
        bytes.extend_from_slice(&1.0f32.to_le_bytes()); // 1 of 4 floats
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_attention(&path),
            Err(FormatError::Truncated { expected: 4, .. })
        ));
    }
}
