//! Zero-shot classification of segment tokens against text-prompt embeddings.
//!
//! Text embeddings are computed outside this crate: [`build_prompt_manifest`]
//! lists the sentences to embed, and [`read_embedding_matrix`] plus
//! [`attach_embeddings`] load the encoder output back, one unit vector per
//! (class, prompt) averaged over templates.

mod classify;
mod prompts;
mod vocab;

pub use classify::{classify_segments, classify_token, prompt_query, query_selects, ClassScores, DISPLAY_TEMPERATURE};
pub use prompts::{
    attach_embeddings, build_prompt_manifest, load_prompt_embeddings, read_embedding_matrix, write_embedding_matrix,
    EmbeddingMatrix, ManifestEntry, PromptEmbeddings, PromptManifest,
};
pub use vocab::{map_to_super_classes, VocabClass, Vocabulary, BUILTIN_VOCABULARIES, PLACEHOLDER};
