//! Vocabulary with document-frequency filtering and a reserved unknown
//! token.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Replacement token for words below the document-frequency threshold.
pub const UNK_TOKEN: &str = "unk";

/// Token <-> id mapping. Id 0 is always the unknown token; the remaining
/// ids are assigned by descending document frequency, ties broken
/// lexicographically, so rebuilding on the same corpus is reproducible.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    min_doc_count: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from tokenized training documents, keeping
    /// tokens that appear in at least `min_doc_count` distinct documents.
    pub fn build(documents: &[Vec<String>], min_doc_count: usize) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut doc_freq: HashMap<&str, usize> = HashMap::new();
        for doc in documents {
            let distinct: HashSet<&str> = doc.iter().map(String::as_str).collect();
            for token in distinct {
                *doc_freq.entry(token).or_insert(0) += 1;
            }
        }
        let mut retained: Vec<(&str, usize)> = doc_freq
            .into_iter()
            .filter(|(token, count)| *count >= min_doc_count && *token != UNK_TOKEN)
            .collect();
        retained.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut id_to_token = Vec::with_capacity(retained.len() + 1);
        id_to_token.push(UNK_TOKEN.to_string());
        id_to_token.extend(retained.into_iter().map(|(t, _)| t.to_string()));
        Ok(Self::from_tokens(id_to_token, min_doc_count))
    }

    fn from_tokens(id_to_token: Vec<String>, min_doc_count: usize) -> Self {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            token_to_id,
            id_to_token,
            min_doc_count,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn unk_id(&self) -> usize {
        0
    }

    pub fn min_doc_count(&self) -> usize {
        self.min_doc_count
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Encodes tokens to ids, mapping unknown tokens to the unk id and
    /// hard-truncating to the first `max_len` tokens.
    pub fn encode(&self, tokens: &[String], max_len: usize) -> Vec<usize> {
        assert!(max_len >= 1, "max_len must be >= 1");
        tokens
            .iter()
            .take(max_len)
            .map(|t| self.id(t).unwrap_or(0))
            .collect()
    }

    /// SHA-256 over the id-ordered token list, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for token in &self.id_to_token {
            hasher.update(token.as_bytes());
            hasher.update(b"\n");
        }
        hex_digest(hasher)
    }

    /// Writes one token per line, line number = id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for token in &self.id_to_token {
            out.push_str(token);
            out.push('\n');
        }
        let mut file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
        file.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::DataFormat {
                path: path.display().to_string(),
                line: 1,
                message: format!("first vocabulary entry must be {UNK_TOKEN:?}"),
            });
        }
        let mut seen = HashSet::new();
        for (i, t) in tokens.iter().enumerate() {
            if !seen.insert(t.as_str()) {
                return Err(Error::DataFormat {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: format!("duplicate token {t:?}"),
                });
            }
        }
        Ok(Self::from_tokens(tokens, 0))
    }
}

pub(crate) fn hex_digest(hasher: Sha256) -> String {
    let bytes = hasher.finalize();
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
