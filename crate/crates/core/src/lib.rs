//! Token-level local differential privacy for text.
//!
//! Each token is replaced by a draw from an exponential mechanism over word
//! embedding distances ([`mechanism`]). The [`audit`] module measures and
//! verifies the resulting privacy, and [`attack`] runs a masked-token
//! inference attack against sanitized corpora.

pub mod alias;
pub mod attack;
pub mod audit;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod mechanism;
pub mod par;
pub mod vocab;

pub use embedding::{load_embeddings, EmbeddingMatrix};
pub use error::{Error, Result};
pub use mechanism::{
    BuildOptions, Layout, MechanismConfig, MechanismKind, ProbabilityModel, SanitizedDocument,
};
pub use vocab::{
    build_vocab, partition_sensitivity, tokenize, Document, FrequencyTable, SensitivityPartition,
    Token, TokenId, TokenizerMode, Vocabulary,
};

/// Hex SHA-256 of the JSON encoding of `config`. Output artifacts record it
/// so they can be traced back to the settings that produced them.
pub fn config_hash<T: serde::Serialize>(config: &T) -> String {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(config).expect("config serializes to JSON");
    hex::encode(Sha256::digest(&bytes))
}
