use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::prompt::PROMPT_PREFIX;
use crate::error::{Error, Result};
use crate::temporal::GapToken;
use crate::util::{sha256_hex, Rng};

pub const ENV_ENCODER_URL: &str = "TCDSR_ENCODER_URL";
pub const ENV_ENCODER_TOKEN: &str = "TCDSR_ENCODER_TOKEN";

/// A frozen text encoder returning one vector per prompt.
pub trait TextEncoder: Send + Sync {
    fn name(&self) -> &str;
    fn version(&self) -> &str;
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<Vec<f64>>;
}

/// Deterministic offline encoder. Every word gets a fixed pseudo-random
/// vector derived from a hash of the word. The prompt vector is a weighted
/// sum over interactions, where weights decay walking back from the last
/// interaction by a factor tied to each gap token crossed. Gap text that is
/// not a recognised token (raw durations, or no gap at all) uses a neutral
/// factor, so the encoder only "understands" time through the token vocabulary.
pub struct StubEncoder {
    dim: usize,
    seed: u64,
    memo: Mutex<HashMap<String, Arc<Vec<f64>>>>,
}

pub const STUB_NAME: &str = "stub-hash";
pub const STUB_VERSION: &str = "1";
const NEUTRAL_DECAY: f64 = 0.6;
const GAP_TOKEN_WEIGHT: f64 = 0.25;

fn token_decay(t: GapToken) -> f64 {
    match t {
        GapToken::SeqStart => 1.0,
        GapToken::UnderHour => 0.95,
        GapToken::HourToDay => 0.9,
        GapToken::OneToThreeDays => 0.8,
        GapToken::ThreeToSevenDays => 0.65,
        GapToken::OneToFourWeeks => 0.5,
        GapToken::OneToThreeMonths => 0.35,
        GapToken::ThreeToTwelveMonths => 0.2,
        GapToken::OverYear => 0.1,
    }
}

fn is_domain_token(w: &str) -> bool {
    w.starts_with('[') && w.ends_with("_Domain]")
}

impl StubEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed, memo: Mutex::new(HashMap::new()) }
    }

    fn word_vector(&self, word: &str) -> Arc<Vec<f64>> {
        if let Some(v) = self.memo.lock().expect("memo lock").get(word) {
            return v.clone();
        }
        let digest = sha256_hex(format!("{}\u{0}{word}", self.seed).as_bytes());
        let mut seed = [0u8; 32];
        hex::decode_to_slice(&digest, &mut seed).expect("sha256 hex");
        let mut rng = Rng::from_seed(seed);
        let scale = 1.0 / (self.dim as f64).sqrt();
        let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).map(|x: f64| x * scale).collect();
        let v = Arc::new(v);
        self.memo.lock().expect("memo lock").insert(word.to_string(), v.clone());
        v
    }
}

impl TextEncoder for StubEncoder {
    fn name(&self) -> &str {
        STUB_NAME
    }

    fn version(&self) -> &str {
        STUB_VERSION
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let body = text.strip_prefix(PROMPT_PREFIX).unwrap_or(text);
        // Segments: words of one interaction, and the decay of the gap before it.
        let mut segments: Vec<(Vec<&str>, f64, Option<GapToken>)> = Vec::new();
        let mut pending: Option<(f64, Option<GapToken>)> = None;
        for w in body.split_whitespace() {
            if let Some(tok) = GapToken::from_prompt_form(w) {
                pending = Some((token_decay(tok), Some(tok)));
            } else if is_domain_token(w) {
                let (decay, tok) = pending.take().unwrap_or(if segments.is_empty() {
                    (1.0, None)
                } else {
                    (NEUTRAL_DECAY, None)
                });
                segments.push((vec![w], decay, tok));
            } else if let Some(seg) = segments.last_mut() {
                seg.0.push(w);
            } else {
                segments.push((vec![w], 1.0, None));
            }
        }
        let mut out = vec![0.0; self.dim];
        let mut weight = 1.0;
        for (words, decay, gap) in segments.iter().rev() {
            let parts: Vec<&str> = words.iter().flat_map(|w| w.split('/')).filter(|p| !p.is_empty()).collect();
            let norm = 1.0 / (parts.len().max(1) as f64).sqrt();
            for p in &parts {
                let v = self.word_vector(p);
                for (o, x) in out.iter_mut().zip(v.iter()) {
                    *o += weight * norm * x;
                }
            }
            if let Some(tok) = gap {
                let v = self.word_vector(&tok.prompt_form());
                for (o, x) in out.iter_mut().zip(v.iter()) {
                    *o += weight * GAP_TOKEN_WEIGHT * x;
                }
            }
            weight *= decay;
        }
        let n = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            out.iter_mut().for_each(|x| *x /= n);
        }
        Ok(out)
    }
}

/// Client for a JSON-over-HTTP embedding endpoint:
/// `POST {"text": ...}` answered by `{"embedding": [...]}`.
pub struct RemoteEncoder {
    url: String,
    token: Option<String>,
    dim: usize,
    version: String,
    retries: u32,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

impl RemoteEncoder {
    pub fn new(url: String, token: Option<String>, dim: usize, version: String) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(60)).build();
        Self { url, token, dim, version, retries: 3, agent }
    }

    /// Endpoint and token from the environment.
    pub fn from_env(dim: usize, version: String) -> Result<Self> {
        let url = std::env::var(ENV_ENCODER_URL)
            .map_err(|_| Error::Encoder(format!("{ENV_ENCODER_URL} is not set")))?;
        Ok(Self::new(url, std::env::var(ENV_ENCODER_TOKEN).ok(), dim, version))
    }

    fn request(&self, text: &str) -> std::result::Result<Vec<f64>, String> {
        let mut req = self.agent.post(&self.url);
        if let Some(t) = &self.token {
            req = req.set("Authorization", &format!("Bearer {t}"));
        }
        let resp = req.send_json(EmbedRequest { text }).map_err(|e| e.to_string())?;
        let body: EmbedResponse = resp.into_json().map_err(|e| e.to_string())?;
        Ok(body.embedding)
    }
}

impl TextEncoder for RemoteEncoder {
    fn name(&self) -> &str {
        "remote"
    }

    fn version(&self) -> &str {
        &self.version
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(200 << attempt));
            }
            match self.request(text) {
                Ok(v) if v.len() == self.dim => return Ok(v),
                Ok(v) => {
                    return Err(Error::Encoder(format!("expected {} dims, endpoint returned {}", self.dim, v.len())))
                }
                Err(e) => {
                    log::warn!("encoder request failed (attempt {}): {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(Error::Encoder(format!("giving up after {} attempts: {last}", self.retries + 1)))
    }
}

/// Encodes `texts` with up to `concurrency` worker threads; output order
/// matches input order.
pub fn encode_all(encoder: &dyn TextEncoder, texts: &[String], concurrency: usize) -> Result<Vec<Vec<f64>>> {
    let workers = concurrency.max(1).min(texts.len().max(1));
    if workers == 1 {
        return texts.iter().map(|t| encoder.encode(t)).collect();
    }
    let chunk = texts.len().div_ceil(workers);
    let results: Vec<Result<Vec<Vec<f64>>>> = std::thread::scope(|s| {
        let handles: Vec<_> = texts
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|t| encoder.encode(t)).collect::<Result<Vec<_>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("encoder worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(texts.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}
