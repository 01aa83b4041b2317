//! Content-addressed request keys.

use sha2::{Digest, Sha256};

use super::LlmParams;

/// SHA-256 digest identifying one backend request: the request kind
/// (completion or embedding), the model id, the sampling parameters, and the
/// full prompt text. Any byte change in the prompt changes the digest.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    digest: String,
}

impl CacheKey {
    pub fn completion(params: &LlmParams, prompt: &str) -> Self {
        Self::from_fields(&[
            "completion",
            &params.model_id,
            &params.temperature.to_string(),
            &params.max_output_tokens.to_string(),
            prompt,
        ])
    }

    pub fn embedding(model_id: &str, text: &str) -> Self {
        Self::from_fields(&["embedding", model_id, text])
    }

    // Fields are length-prefixed so concatenation cannot alias across
    // field boundaries.
    fn from_fields(fields: &[&str]) -> Self {
        let mut hasher = Sha256::new();
        for field in fields {
            hasher.update((field.len() as u64).to_le_bytes());
            hasher.update(field.as_bytes());
        }
        let digest = hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<String>();
        CacheKey { digest }
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.digest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> LlmParams {
        LlmParams::new("gpt-4")
    }

    #[test]
    fn equal_inputs_equal_digests() {
        let a = CacheKey::completion(&params(), "SELECT 1");
        let b = CacheKey::completion(&params(), "SELECT 1");
        assert_eq!(a, b);
    }

    #[test]
    fn any_byte_change_changes_digest() {
        let base = CacheKey::completion(&params(), "SELECT 1");
        assert_ne!(base, CacheKey::completion(&params(), "SELECT 2"));
        assert_ne!(base, CacheKey::completion(&params(), "SELECT 1 "));
        let mut warm = params();
        warm.temperature = 0.7;
        assert_ne!(base, CacheKey::completion(&warm, "SELECT 1"));
    }

    #[test]
    fn kind_separates_completion_from_embedding() {
        let c = CacheKey::completion(&params(), "hello");
        let e = CacheKey::embedding("gpt-4", "hello");
        assert_ne!(c, e);
    }

    #[test]
    fn fixture_scale_collision_freedom() {
        let prompts: Vec<String> = (0..500).map(|i| format!("prompt {i}")).collect();
        let mut digests: Vec<String> = prompts
            .iter()
            .map(|p| CacheKey::completion(&params(), p).digest().to_string())
            .collect();
        digests.sort();
        digests.dedup();
        assert_eq!(digests.len(), 500);
    }
}
