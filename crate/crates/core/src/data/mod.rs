//! Corpus parsing, tag-scheme conversion, vocabularies, pretrained vectors
//! and dataset statistics.

mod corpus;
mod embeddings;
pub mod scheme;
mod stats;
pub mod vocab;

pub use corpus::{parse_corpus, parse_corpus_lenient, read_corpus, serialize_corpus, Utterance};
pub use embeddings::{load_embeddings, EmbeddingTable};
pub use scheme::{bio_to_bioes, bioes_to_bio, Scheme};
pub use stats::{corpus_stats, CorpusStats};
pub use vocab::Vocabulary;
