//! Word-embedding table and its text file format.
//!
//! File layout: a `"vocab_size dim"` header line, then one line per token
//! holding the token followed by `dim` decimal reals. Values survive a
//! round trip to within 1e-6 absolute.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::text::Vocabulary;

#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub rows: usize,
    pub dim: usize,
    /// Row-major, rows * dim.
    pub values: Vec<f64>,
    pub trainable: bool,
}

impl EmbeddingTable {
    /// Seeded uniform initialization in (-0.5/dim, 0.5/dim).
    pub fn random_init(rows: usize, dim: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let half = 0.5 / dim as f64;
        let values = (0..rows * dim)
            .map(|_| rng.random_range(-half..half))
            .collect();
        EmbeddingTable {
            rows,
            dim,
            values,
            trainable: true,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Writes the table aligned to `vocab` id order.
pub fn save_embeddings(path: &Path, vocab: &Vocabulary, table: &EmbeddingTable) -> Result<()> {
    if table.rows != vocab.len() {
        return Err(Error::InvalidArgument(format!(
            "embedding table has {} rows but vocabulary has {} tokens",
            table.rows,
            vocab.len()
        )));
    }
    let mut out = String::new();
    out.push_str(&format!("{} {}\n", table.rows, table.dim));
    for (i, token) in vocab.tokens().iter().enumerate() {
        out.push_str(token);
        for v in table.row(i) {
            out.push_str(&format!(" {v:.6}"));
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Reads an embedding file; returns the tokens in file order and the
/// table. Malformed headers and short lines report their line number.
pub fn load_embeddings(path: &Path) -> Result<(Vec<String>, EmbeddingTable)> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let path_str = path.display().to_string();
    let bad = |line: usize, message: String| Error::DataFormat {
        path: path_str.clone(),
        line,
        message,
    };

    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| bad(1, "missing header".into()))?;
    let mut parts = header.split_whitespace();
    let rows: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(1, format!("malformed header {header:?}")))?;
    let dim: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(1, format!("malformed header {header:?}")))?;
    if parts.next().is_some() {
        return Err(bad(1, format!("malformed header {header:?}")));
    }

    let mut tokens = Vec::with_capacity(rows);
    let mut values = Vec::with_capacity(rows * dim);
    for (idx, line) in lines {
        let lineno = idx + 1;
        let mut fields = line.split_whitespace();
        let token = fields
            .next()
            .ok_or_else(|| bad(lineno, "empty line".into()))?;
        let row: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| bad(lineno, format!("bad value {f:?}")))
            })
            .collect::<Result<_>>()?;
        if row.len() != dim {
            return Err(bad(
                lineno,
                format!("expected {dim} values, found {}", row.len()),
            ));
        }
        tokens.push(token.to_string());
        values.extend(row);
    }
    if tokens.len() != rows {
        return Err(bad(
            tokens.len() + 1,
            format!("header promised {rows} rows, found {}", tokens.len()),
        ));
    }
    Ok((
        tokens,
        EmbeddingTable {
            rows,
            dim,
            values,
            trainable: true,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_vocab() -> Vocabulary {
        let docs: Vec<Vec<String>> = (0..3)
            .map(|_| vec!["alpha".to_string(), "beta".to_string()])
            .collect();
        Vocabulary::build(&docs, 3).unwrap()
    }

    #[test]
    fn round_trip_preserves_values_and_order() {
        let vocab = tiny_vocab();
        let table = EmbeddingTable::random_init(vocab.len(), 8, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        save_embeddings(&path, &vocab, &table).unwrap();
        let (tokens, loaded) = load_embeddings(&path).unwrap();
        assert_eq!(tokens, vocab.tokens());
        assert_eq!(loaded.dim, 8);
        let max_diff = table
            .values
            .iter()
            .zip(&loaded.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff <= 1e-6, "max diff {max_diff}");
    }

    #[test]
    fn short_row_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        fs::write(&path, "2 3\nunk 0.0 0.0 0.0\nalpha 0.1 0.2\n").unwrap();
        match load_embeddings(&path) {
            Err(Error::DataFormat { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("expected 3"));
            }
            other => panic!("expected DataFormat error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        fs::write(&path, "two 3\nunk 0 0 0\n").unwrap();
        assert!(matches!(
            load_embeddings(&path),
            Err(Error::DataFormat { line: 1, .. })
        ));
    }
}
