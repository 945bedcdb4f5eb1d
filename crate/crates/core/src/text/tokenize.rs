//! Rule-pinned tokenizer.
//!
//! The rules are frozen so downstream artifacts are bit-stable:
//! 1. split on Unicode whitespace;
//! 2. drop any whitespace-delimited chunk containing no alphabetic
//!    character (pure numbers, punctuation runs);
//! 3. split the surviving chunks on non-alphanumeric characters;
//! 4. lowercase everything.

/// Tokenizes free text into lowercased alphanumeric tokens.
///
/// `"Chest X-Ray: CLEAR."` becomes `[chest, x, ray, clear]`;
/// `"ICD-9 414.01"` becomes `[icd, 9]` — the chunk `414.01` has no
/// alphabetic character and is dropped whole.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(char::is_whitespace)
        .filter(|chunk| chunk.chars().any(char::is_alphabetic))
        .flat_map(|chunk| {
            chunk
                .split(|c: char| !c.is_alphanumeric())
                .filter(|piece| !piece.is_empty())
                .map(str::to_lowercase)
        })
        .collect()
}
