//! Text preprocessing: tokenization, vocabulary construction, note
//! encoding, CBOW embedding pretraining, and the embedding file format.

mod cbow;
mod embeddings;
mod tokenize;
mod vocab;

pub use cbow::{cosine, initial_table, train_cbow, CbowConfig, CbowStats};
pub use embeddings::{load_embeddings, save_embeddings, EmbeddingTable};
pub use tokenize::tokenize;
pub use vocab::{Vocabulary, UNK_TOKEN};

pub(crate) use vocab::hex_digest;
