//! Dataset records and file formats.
//!
//! Raw notes travel as JSON lines `{"id", "text", "codes"}`; code
//! descriptions as a `code<TAB>description` TSV; encoded notes as JSON
//! lines of id sequences. All readers report the offending line number
//! on malformed input.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::text::{tokenize, Vocabulary};

/// One labeled document as it appears on disk, pre-tokenization.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct RawNote {
    pub id: String,
    pub text: String,
    pub codes: Vec<String>,
}

/// One encoded document: token ids plus gold code ids.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct NoteRecord {
    pub id: String,
    pub token_ids: Vec<usize>,
    pub code_ids: Vec<usize>,
}

pub fn read_notes_jsonl(path: &Path) -> Result<Vec<RawNote>> {
    read_jsonl(path)
}

pub fn write_notes_jsonl(path: &Path, notes: &[RawNote]) -> Result<()> {
    write_jsonl(path, notes)
}

pub fn read_encoded_jsonl(path: &Path) -> Result<Vec<NoteRecord>> {
    read_jsonl(path)
}

pub fn write_encoded_jsonl(path: &Path, notes: &[NoteRecord]) -> Result<()> {
    write_jsonl(path, notes)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::DataFormat {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        file.write_all(line.as_bytes())?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a `code<TAB>description` TSV.
pub fn read_code_descriptions_tsv(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (code, desc) = line.split_once('\t').ok_or_else(|| Error::DataFormat {
            path: path.display().to_string(),
            line: idx + 1,
            message: "expected code<TAB>description".into(),
        })?;
        if !seen.insert(code.to_string()) {
            return Err(Error::DataFormat {
                path: path.display().to_string(),
                line: idx + 1,
                message: format!("duplicate code {code:?}"),
            });
        }
        out.push((code.to_string(), desc.to_string()));
    }
    Ok(out)
}

pub fn write_code_descriptions_tsv(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    for (code, desc) in pairs {
        writeln!(file, "{code}\t{desc}")?;
    }
    Ok(())
}

/// The code universe: dense ids, description text, and the description
/// token ids under a fixed vocabulary.
#[derive(Clone, Debug)]
pub struct CodeSet {
    codes: Vec<String>,
    code_to_id: HashMap<String, usize>,
    raw_descriptions: Vec<String>,
    descriptions: Vec<Vec<usize>>,
}

impl CodeSet {
    /// Builds the code set as the union of the description TSV and the
    /// codes observed in training data, ids assigned in lexicographic
    /// order. Returns the codes that were observed but lack a description
    /// (they fall back to an empty one).
    pub fn build(
        description_pairs: &[(String, String)],
        observed: &BTreeSet<String>,
        vocab: &Vocabulary,
    ) -> (Self, Vec<String>) {
        let mut desc_by_code: HashMap<&str, &str> = HashMap::new();
        let mut universe: BTreeSet<String> = observed.clone();
        for (code, desc) in description_pairs {
            desc_by_code.insert(code, desc);
            universe.insert(code.clone());
        }
        let codes: Vec<String> = universe.into_iter().collect();
        let mut missing = Vec::new();
        let mut raw_descriptions = Vec::with_capacity(codes.len());
        let mut descriptions = Vec::with_capacity(codes.len());
        for code in &codes {
            let raw = match desc_by_code.get(code.as_str()) {
                Some(desc) => (*desc).to_string(),
                None => {
                    missing.push(code.clone());
                    String::new()
                }
            };
            let tokens = tokenize(&raw);
            descriptions.push(if tokens.is_empty() {
                Vec::new()
            } else {
                vocab.encode(&tokens, usize::MAX)
            });
            raw_descriptions.push(raw);
        }
        let code_to_id = codes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        (
            CodeSet {
                codes,
                code_to_id,
                raw_descriptions,
                descriptions,
            },
            missing,
        )
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn id(&self, code: &str) -> Option<usize> {
        self.code_to_id.get(code).copied()
    }

    pub fn code(&self, id: usize) -> &str {
        &self.codes[id]
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn description_ids(&self) -> &[Vec<usize>] {
        &self.descriptions
    }

    pub fn raw_description(&self, id: usize) -> &str {
        &self.raw_descriptions[id]
    }

    /// Maps code strings to sorted ids, counting codes outside the set.
    pub fn encode_codes(&self, codes: &[String]) -> (Vec<usize>, usize) {
        let mut ids: Vec<usize> = codes.iter().filter_map(|c| self.id(c)).collect();
        let unknown = codes.len() - ids.len();
        ids.sort_unstable();
        ids.dedup();
        (ids, unknown)
    }

    /// Dense 0/1 target vector over the code universe.
    pub fn multi_hot(&self, code_ids: &[usize]) -> Vec<f64> {
        let mut row = vec![0.0; self.len()];
        for &id in code_ids {
            row[id] = 1.0;
        }
        row
    }

    /// SHA-256 over codes and their description token ids, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (code, desc) in self.codes.iter().zip(&self.descriptions) {
            hasher.update(code.as_bytes());
            hasher.update(b"\t");
            for (i, id) in desc.iter().enumerate() {
                if i > 0 {
                    hasher.update(b",");
                }
                hasher.update(id.to_string().as_bytes());
            }
            hasher.update(b"\n");
        }
        crate::text::hex_digest(hasher)
    }

    pub fn description_pairs(&self) -> Vec<(String, String)> {
        self.codes
            .iter()
            .cloned()
            .zip(self.raw_descriptions.iter().cloned())
            .collect()
    }
}
