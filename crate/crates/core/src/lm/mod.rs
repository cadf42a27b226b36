//! Small T5-style encoder-decoder language model with optional LoRA
//! adapters and int8 weight storage.

mod lora;
mod quant;
mod spec;
mod tokenizer;
mod transformer;

pub use lora::LoraAdapter;
pub use quant::{dequant_matmul, quantize_int8, QuantizedLinear};
pub use spec::ModelSpec;
pub use tokenizer::{split_words, Tokenizer, BOS, EOS, PAD, UNK};
pub use transformer::{LanguageModel, LmVars};
