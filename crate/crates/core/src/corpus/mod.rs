//! Tokenization, vocabularies, concept sets, dataset files, held-out splits
//! and the synthetic corpus generator.

pub mod concepts;
pub mod data;
pub mod synth;
pub mod vocab;

pub use concepts::{default_stopwords, mine_concepts, ConceptSet};
pub use data::{
    build_heldout_split, derive_concept_labels, label_vector, load_concepts, load_paired, load_text,
    load_unpaired_images, save_concepts, save_paired, save_text, save_unpaired_images, PairedExample,
    UnpairedImageExample, Visual,
};
pub use synth::{generate_synthetic_dataset, FrameSpec, SyntheticConfig, SyntheticDataset, TemplateSet};
pub use vocab::{build_vocab, tokenize, Vocabulary, BOS_ID, EOS_ID, UNK_ID};
