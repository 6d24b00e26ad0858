//! Policy backends: prompt in, token sequence (and, where available,
//! per-token log-likelihoods) out.
//!
//! Four backends share the [`PolicyBackend`] trait:
//!
//! - [`TokenSequencePolicy`]: a bigram autoregressive policy with exact
//!   log-likelihoods and analytic gradients; the only trainable backend.
//! - [`ScriptedOracle`]: emits violation-free output matching the ground
//!   truth staged through [`PolicyBackend::observe`]; the upper-bound
//!   reference used by evaluation fixtures.
//! - [`ThresholdPolicy`]: a utilization-threshold scaler that renders its
//!   decisions as counterfactual claims so it flows through the same parsing
//!   pipeline.
//! - [`HttpPolicy`]: an adapter for an external text-completion endpoint;
//!   eval-only since completions carry no likelihoods.
//!
//! Backends that act on structured state rather than prompt text (the oracle
//! and the threshold scaler) receive it through `observe`, which the control
//! and eval paths call before each `generate`. Generation is deterministic
//! under a fixed seed for every backend.

mod http;

pub use http::{ExternalModelConfig, HttpPolicy};

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::encode::{DiscretizedState, Prompt, QualitativeLevel, TokenId, Vocab};
use crate::rng::XorShift64;
use crate::sim::{Resource, ScalingAction, TruthSet};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("endpoint returned status {0}")]
    Status(u16),
    #[error("malformed response body: {0}")]
    MalformedBody(String),
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("token {0} outside the policy vocabulary")]
    UnknownToken(TokenId),
    #[error("the scripted oracle was not given ground truth before generate")]
    OracleTruthMissing,
    #[error("the threshold policy was not given a discretized state before generate")]
    ThresholdStateMissing,
}

/// One generated candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub tokens: Vec<TokenId>,
    pub text: String,
    /// Per-token log-likelihoods; `None` for backends without likelihoods.
    pub logp: Option<Vec<f64>>,
}

impl Sample {
    pub fn log_likelihood_sum(&self) -> Option<f64> {
        self.logp.as_ref().map(|l| l.iter().sum())
    }
}

/// Structured context staged ahead of generation for backends that need it.
#[derive(Debug, Clone, Copy, Default)]
pub struct GenerationContext<'a> {
    pub discretized: Option<&'a DiscretizedState>,
    pub truth: Option<&'a TruthSet>,
}

/// Common surface over all policy backends.
pub trait PolicyBackend {
    fn name(&self) -> &'static str;

    fn trainable(&self) -> bool {
        false
    }

    /// Stages structured context for the next `generate` call. The default
    /// ignores it; prompt-driven backends need nothing else.
    fn observe(&self, _ctx: &GenerationContext<'_>) {}

    /// Produces `g` candidates for the prompt, deterministic under `seed`.
    fn generate(&self, prompt: &Prompt, g: usize, seed: u64) -> Result<Vec<Sample>, PolicyError>;

    /// Per-token log-likelihoods of an arbitrary sequence given a context
    /// token, when the backend can score sequences it did not generate.
    fn log_likelihood(&self, _context: TokenId, _tokens: &[TokenId]) -> Option<Vec<f64>> {
        None
    }
}

// ---------------------------------------------------------------------------
// Analytic bigram policy
// ---------------------------------------------------------------------------

/// Bigram autoregressive policy over a finite vocabulary.
///
/// Each row of `theta` holds the logits of the successor distribution given
/// the previous token. Generation starts from a prompt-summary context token
/// (the last prompt token) and stops at the stop token or `max_len`. The stop
/// token, when produced, is part of the sequence and its log-likelihood term
/// is included. Log-likelihoods and their gradients with respect to `theta`
/// are exact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenSequencePolicy {
    pub vocab: Vocab,
    /// Row-major `V x V` logit matrix.
    pub theta: Vec<f64>,
    pub max_len: usize,
    pub start_token: TokenId,
    pub stop_token: TokenId,
}

impl TokenSequencePolicy {
    /// Zero-initialized (uniform) policy over an arbitrary vocabulary.
    pub fn new(vocab: Vocab, max_len: usize, start_token: TokenId, stop_token: TokenId) -> Self {
        assert!(max_len >= 1);
        let v = vocab.len();
        assert!((start_token as usize) < v && (stop_token as usize) < v);
        Self { vocab, theta: vec![0.0; v * v], max_len, start_token, stop_token }
    }

    /// Policy over the standard vocabulary; generation stops after closing
    /// the final structured-output tag.
    pub fn for_standard_vocab(max_len: usize) -> Self {
        let vocab = Vocab::standard().clone();
        let start = vocab.bos();
        let stop = vocab.id_of("</root>").expect("standard vocabulary carries the tags");
        Self::new(vocab, max_len, start, stop)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn row(&self, prev: TokenId) -> &[f64] {
        let v = self.vocab_size();
        let p = prev as usize;
        &self.theta[p * v..(p + 1) * v]
    }

    /// Log-softmax of a row, numerically stable.
    pub fn log_distribution(&self, prev: TokenId) -> Vec<f64> {
        let row = self.row(prev);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
        row.iter().map(|x| x - log_z).collect()
    }

    /// Exact KL divergence of this policy's successor distribution from
    /// `other`'s, for one context token.
    pub fn step_kl(&self, other: &TokenSequencePolicy, prev: TokenId) -> f64 {
        let ours = self.log_distribution(prev);
        let theirs = other.log_distribution(prev);
        ours.iter()
            .zip(&theirs)
            .map(|(a, b)| a.exp() * (a - b))
            .sum()
    }

    fn check_token(&self, t: TokenId) -> Result<(), PolicyError> {
        if (t as usize) < self.vocab_size() {
            Ok(())
        } else {
            Err(PolicyError::UnknownToken(t))
        }
    }

    /// Samples one sequence from the given context token.
    pub fn generate_once(&self, context: TokenId, rng: &mut XorShift64) -> (Vec<TokenId>, Vec<f64>) {
        let mut tokens = Vec::new();
        let mut logps = Vec::new();
        let mut prev = context;
        for _ in 0..self.max_len {
            let logd = self.log_distribution(prev);
            let u = rng.next_f64();
            let mut acc = 0.0;
            let mut chosen = (self.vocab_size() - 1) as TokenId;
            for (idx, lp) in logd.iter().enumerate() {
                acc += lp.exp();
                if u < acc {
                    chosen = idx as TokenId;
                    break;
                }
            }
            tokens.push(chosen);
            logps.push(logd[chosen as usize]);
            if chosen == self.stop_token {
                break;
            }
            prev = chosen;
        }
        (tokens, logps)
    }

    /// Exact per-token log-likelihoods of `tokens` given `context`.
    pub fn seq_log_likelihood(
        &self,
        context: TokenId,
        tokens: &[TokenId],
    ) -> Result<Vec<f64>, PolicyError> {
        self.check_token(context)?;
        let mut prev = context;
        let mut out = Vec::with_capacity(tokens.len());
        for &t in tokens {
            self.check_token(t)?;
            let logd = self.log_distribution(prev);
            out.push(logd[t as usize]);
            prev = t;
        }
        Ok(out)
    }

    /// Negative log-likelihood of `tokens` given `context`, with its exact
    /// gradient with respect to `theta` (softmax minus one-hot, accumulated
    /// over the visited transitions).
    pub fn nll_and_grad(
        &self,
        context: TokenId,
        tokens: &[TokenId],
    ) -> Result<(f64, Vec<f64>), PolicyError> {
        self.check_token(context)?;
        let v = self.vocab_size();
        let mut grad = vec![0.0; v * v];
        let mut nll = 0.0;
        let mut prev = context;
        for &t in tokens {
            self.check_token(t)?;
            let logd = self.log_distribution(prev);
            nll -= logd[t as usize];
            let base = (prev as usize) * v;
            for (idx, lp) in logd.iter().enumerate() {
                grad[base + idx] += lp.exp();
            }
            grad[base + t as usize] -= 1.0;
            prev = t;
        }
        Ok((nll, grad))
    }

    /// Gradient of the summed log-likelihood (the negated NLL gradient).
    pub fn loglik_grad(
        &self,
        context: TokenId,
        tokens: &[TokenId],
    ) -> Result<(f64, Vec<f64>), PolicyError> {
        let (nll, mut grad) = self.nll_and_grad(context, tokens)?;
        for g in &mut grad {
            *g = -*g;
        }
        Ok((-nll, grad))
    }

    /// Applies `theta += scale * direction`.
    pub fn apply_update(&mut self, direction: &[f64], scale: f64) {
        debug_assert_eq!(direction.len(), self.theta.len());
        for (t, d) in self.theta.iter_mut().zip(direction) {
            *t += scale * d;
        }
    }

    pub fn has_finite_parameters(&self) -> bool {
        self.theta.iter().all(|t| t.is_finite())
    }
}

impl PolicyBackend for TokenSequencePolicy {
    fn name(&self) -> &'static str {
        "toy"
    }

    fn trainable(&self) -> bool {
        true
    }

    fn generate(&self, prompt: &Prompt, g: usize, seed: u64) -> Result<Vec<Sample>, PolicyError> {
        assert!(g >= 1);
        let context = prompt.context_token(&self.vocab);
        self.check_token(context)?;
        let mut rng = XorShift64::new(seed);
        let mut out = Vec::with_capacity(g);
        for _ in 0..g {
            let (tokens, logps) = self.generate_once(context, &mut rng);
            let text = self.vocab.detokenize_spaced(&tokens);
            out.push(Sample { tokens, text, logp: Some(logps) });
        }
        Ok(out)
    }

    fn log_likelihood(&self, context: TokenId, tokens: &[TokenId]) -> Option<Vec<f64>> {
        self.seq_log_likelihood(context, tokens).ok()
    }
}

// ---------------------------------------------------------------------------
// Scripted oracle
// ---------------------------------------------------------------------------

/// Emits a violation-free structured output whose root section equals the
/// staged ground truth, with remedy claims per fault class (CPU faults get
/// both a vertical and a horizontal remedy, memory faults a vertical memory
/// remedy, network faults a scale-out). Test-only wiring: the truth channel
/// exists so evaluation fixtures can realize precision = recall = 1.
pub struct ScriptedOracle {
    vocab: Vocab,
    staged: Mutex<Option<TruthSet>>,
}

impl ScriptedOracle {
    pub fn new(vocab: Vocab) -> Self {
        Self { vocab, staged: Mutex::new(None) }
    }

    pub fn standard() -> Self {
        Self::new(Vocab::standard().clone())
    }

    /// Renders the oracle's canonical response for a truth set.
    pub fn response_text(truth: &TruthSet) -> String {
        let mut think = String::new();
        let mut labels = String::new();
        let mut claims = String::new();
        for (service, resource) in truth {
            think.push_str(&format!("#{} {} HIGH ", service.0, resource_word(*resource)));
            labels.push_str(&format!("#{} @{} ", service.0, resource.letter()));
            match resource {
                Resource::Cpu => {
                    claims.push_str(&format!("IF CPU_UP #{} THEN IMPROVED\n", service.0));
                    claims.push_str(&format!("IF SCALE_OUT #{} THEN IMPROVED\n", service.0));
                }
                Resource::Memory => {
                    claims.push_str(&format!("IF MEM_UP #{} THEN IMPROVED\n", service.0));
                }
                Resource::Network | Resource::Disk => {
                    claims.push_str(&format!("IF SCALE_OUT #{} THEN IMPROVED\n", service.0));
                }
            }
        }
        if truth.is_empty() {
            think.push_str("all services nominal ");
            labels.push_str("NONE ");
            claims.push_str("NONE\n");
        }
        format!(
            "<think> {}</think>\n<Fault> {}</Fault>\n<Counterfactual> {}</Counterfactual>\n<root> {}</root>",
            think,
            labels,
            claims.trim_end_matches('\n'),
            labels
        )
    }
}

fn resource_word(r: Resource) -> &'static str {
    match r {
        Resource::Cpu => "cpu",
        Resource::Disk => "disk",
        Resource::Memory => "mem",
        Resource::Network => "network",
    }
}

impl PolicyBackend for ScriptedOracle {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn observe(&self, ctx: &GenerationContext<'_>) {
        if let Some(truth) = ctx.truth {
            *self.staged.lock().expect("oracle lock") = Some(truth.clone());
        }
    }

    fn generate(&self, _prompt: &Prompt, g: usize, _seed: u64) -> Result<Vec<Sample>, PolicyError> {
        assert!(g >= 1);
        let truth = self
            .staged
            .lock()
            .expect("oracle lock")
            .clone()
            .ok_or(PolicyError::OracleTruthMissing)?;
        let text = Self::response_text(&truth);
        let tokens = self.vocab.tokenize_lossy(&text);
        let sample = Sample { tokens, text, logp: None };
        Ok(vec![sample; g])
    }
}

// ---------------------------------------------------------------------------
// Threshold baseline
// ---------------------------------------------------------------------------

/// Utilization-threshold scaling rules over a discretized state: scale out
/// services whose CPU bin is High (above the 75%-style target) and scale in
/// Low services running more than one replica.
pub fn threshold_baseline(state: &DiscretizedState) -> Vec<ScalingAction> {
    let mut actions = Vec::new();
    for (id, levels) in &state.services {
        match levels.cpu {
            QualitativeLevel::High => actions.push(ScalingAction::horizontal(*id, 1)),
            QualitativeLevel::Low if levels.replicas > 1 => {
                actions.push(ScalingAction::horizontal(*id, -1))
            }
            _ => {}
        }
    }
    actions
}

/// The threshold scaler wrapped as a policy backend: it renders its decisions
/// as improvement-predicting counterfactual claims so the standard
/// parse-interpret-verify pipeline executes them. It never claims root causes.
pub struct ThresholdPolicy {
    vocab: Vocab,
    staged: Mutex<Option<DiscretizedState>>,
}

impl ThresholdPolicy {
    pub fn new(vocab: Vocab) -> Self {
        Self { vocab, staged: Mutex::new(None) }
    }

    pub fn standard() -> Self {
        Self::new(Vocab::standard().clone())
    }
}

impl PolicyBackend for ThresholdPolicy {
    fn name(&self) -> &'static str {
        "threshold"
    }

    fn observe(&self, ctx: &GenerationContext<'_>) {
        if let Some(state) = ctx.discretized {
            *self.staged.lock().expect("threshold lock") = Some(state.clone());
        }
    }

    fn generate(&self, _prompt: &Prompt, g: usize, _seed: u64) -> Result<Vec<Sample>, PolicyError> {
        assert!(g >= 1);
        let state = self
            .staged
            .lock()
            .expect("threshold lock")
            .clone()
            .ok_or(PolicyError::ThresholdStateMissing)?;
        let actions = threshold_baseline(&state);
        let mut think = String::new();
        let mut claims = String::new();
        for (id, levels) in &state.services {
            think.push_str(&format!("#{} cpu {} ", id.0, levels.cpu.word()));
        }
        for action in &actions {
            let verb = if action.delta > 0 { "SCALE_OUT" } else { "SCALE_IN" };
            claims.push_str(&format!("IF {verb} #{} THEN IMPROVED\n", action.service_id.0));
        }
        if claims.is_empty() {
            claims.push_str("NONE\n");
        }
        let text = format!(
            "<think> {}</think>\n<Fault> NONE </Fault>\n<Counterfactual> {}</Counterfactual>\n<root> NONE </root>",
            think,
            claims.trim_end_matches('\n'),
        );
        let tokens = self.vocab.tokenize_lossy(&text);
        let sample = Sample { tokens, text, logp: None };
        Ok(vec![sample; g])
    }
}

/// The CLI-facing policy choice.
pub enum PolicyHandle {
    Toy(TokenSequencePolicy),
    Oracle(ScriptedOracle),
    Threshold(ThresholdPolicy),
    Http(HttpPolicy),
}

impl PolicyHandle {
    pub fn backend(&self) -> &dyn PolicyBackend {
        match self {
            PolicyHandle::Toy(p) => p,
            PolicyHandle::Oracle(p) => p,
            PolicyHandle::Threshold(p) => p,
            PolicyHandle::Http(p) => p,
        }
    }

    pub fn as_toy_mut(&mut self) -> Option<&mut TokenSequencePolicy> {
        match self {
            PolicyHandle::Toy(p) => Some(p),
            _ => None,
        }
    }
}
