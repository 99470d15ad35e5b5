pub mod adapter;
pub mod choicegen;
pub mod corpus;
pub mod decimal;
pub mod error;
pub mod evalkit;
pub mod extractor;
pub mod instructions;
pub mod jsonl;
pub mod linalg;
pub mod nmlf;
pub mod numeric_lex;
pub mod rng;
pub mod tokenizer;

pub use error::{ForgeError, Result};
