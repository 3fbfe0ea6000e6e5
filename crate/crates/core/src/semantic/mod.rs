//! Time-aware semantic preferences from a frozen text encoder: prompts with
//! domain and gap tokens, cached encodings, PCA plus a trainable adapter,
//! counterfactual gap perturbations and their ranking objective.

mod backend;
mod cache;
mod loss;
mod perturb;
mod projection;
mod prompt;

pub use backend::{
    encode_all, RemoteEncoder, StubEncoder, TextEncoder, ENV_ENCODER_TOKEN, ENV_ENCODER_URL, STUB_NAME,
    STUB_VERSION,
};
pub use cache::{encode_cached, CacheHeader, EmbeddingCache};
pub use loss::{counterfactual_loss, row_cosine};
pub use perturb::{perturb, PerturbMode, PerturbStats};
pub use projection::{Adapter, Pca};
pub use prompt::{build_prompt, domain_token, exact_duration, Prompt, PromptMode, PromptToken, PROMPT_PREFIX};
