//! Offline and online training for the analytic sequence policy.
//!
//! Offline training runs two phases over an annotated dataset: supervised
//! fine-tuning (exact next-token cross-entropy with its analytic gradient)
//! followed by group-relative sequence policy optimization. The optimizer is
//! plain fixed-rate gradient ascent/descent; at desk scale that keeps every
//! run bit-reproducible under a fixed seed.
//!
//! The sequence objective per step: snapshot the old parameters, draw a group
//! of G candidates, score each with the reward stack, normalize rewards to
//! group advantages, and ascend
//!
//! ```text
//! J = (1/G) sum_i min(s_i * A_i, clip(s_i, 1 - eps, 1 + eps) * A_i)
//! s_i = exp((loglik_new_i - loglik_old_i) / len_i)
//! ```
//!
//! where the length-root keeps the ratio scale independent of sequence
//! length. The gradient flows through `s_i` only where the unclipped branch
//! is active; at the exact clip boundary the clipped branch's zero gradient
//! is taken. Because each group is scored at the snapshot parameters, the
//! on-policy KL term of the total reward is identically zero during these
//! updates; the exact divergence helper exists for off-policy scoring.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cot;
use crate::encode::{Outcome, Prompt, TokenId, Vocab};
use crate::policy::TokenSequencePolicy;
use crate::reward::{self, RewardBreakdown, RewardConfig};
use crate::rng::XorShift64;
use crate::sim::{ClusterState, TruthSet};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("dataset too small: {0} sample(s), need at least 2")]
    TooFewSamples(usize),
    #[error("partition ratio {0} outside (0, 1)")]
    BadRatio(f64),
    #[error("sft diverged at step {step}: loss {loss}")]
    SftDiverged { step: usize, loss: f64 },
    #[error("policy parameters became non-finite at step {step}")]
    NonFiniteParameters { step: usize },
    #[error("policy error: {0}")]
    Policy(#[from] crate::policy::PolicyError),
    #[error("reward error: {0}")]
    Reward(#[from] crate::reward::RewardError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("checkpoint vocabulary hash {found:#x} does not match policy vocabulary {expected:#x}")]
    VocabMismatch { found: u64, expected: u64 },
}

/// One annotated training sample: a prompt, a violation-free reference
/// response, and the ground-truth labels its root section encodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotatedSample {
    pub prompt: Prompt,
    pub reference_response: Vec<TokenId>,
    pub truth: TruthSet,
}

/// Training knobs; reward constants ride along so a single config document
/// pins every number a run depends on.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub sft_steps: usize,
    pub gspo_steps: usize,
    pub learning_rate: f64,
    pub partition_ratio: f64,
    pub seed: u64,
    pub reward: RewardConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            sft_steps: 400,
            gspo_steps: 300,
            learning_rate: 0.1,
            partition_ratio: 0.5,
            seed: 7,
            reward: RewardConfig::default(),
        }
    }
}

/// Deterministic shuffled split; the first partition takes
/// `floor(ratio * n)` samples.
pub fn split_dataset(
    mut samples: Vec<AnnotatedSample>,
    ratio: f64,
    seed: u64,
) -> Result<(Vec<AnnotatedSample>, Vec<AnnotatedSample>), TrainError> {
    if samples.len() < 2 {
        return Err(TrainError::TooFewSamples(samples.len()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(TrainError::BadRatio(ratio));
    }
    let mut rng = XorShift64::new(seed);
    rng.shuffle(&mut samples);
    let cut = ((samples.len() as f64) * ratio).floor() as usize;
    let tail = samples.split_off(cut);
    Ok((samples, tail))
}

/// Next-token cross-entropy of the reference response with its exact
/// gradient; conditioning starts from the prompt's last token.
pub fn sft_loss(
    policy: &TokenSequencePolicy,
    sample: &AnnotatedSample,
) -> Result<(f64, Vec<f64>), TrainError> {
    let context = sample.prompt.context_token(&policy.vocab);
    Ok(policy.nll_and_grad(context, &sample.reference_response)?)
}

/// Per-step training log row shared by both phases.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    /// SFT loss or sequence objective value.
    pub objective: f64,
    pub mean_r_total: f64,
    pub mean_r_result: f64,
    pub mean_r_format: f64,
    pub mean_r_length: f64,
    pub mean_r_kl: f64,
}

/// Outcome of the supervised phase.
#[derive(Debug, Clone)]
pub struct SftOutcome {
    pub loss_curve: Vec<f64>,
}

/// Runs gradient descent on the cross-entropy over shuffled samples, one
/// sample per step, reshuffling each epoch.
pub fn run_sft(
    policy: &mut TokenSequencePolicy,
    partition: &[AnnotatedSample],
    cfg: &TrainingConfig,
) -> Result<SftOutcome, TrainError> {
    if cfg.sft_steps == 0 || partition.is_empty() {
        return Ok(SftOutcome { loss_curve: Vec::new() });
    }
    let mut rng = XorShift64::new(cfg.seed ^ 0x5f74);
    let mut order: Vec<usize> = (0..partition.len()).collect();
    rng.shuffle(&mut order);
    let mut loss_curve = Vec::with_capacity(cfg.sft_steps);
    for step in 0..cfg.sft_steps {
        if step % partition.len() == 0 && step > 0 {
            rng.shuffle(&mut order);
        }
        let sample = &partition[order[step % partition.len()]];
        let (loss, grad) = sft_loss(policy, sample)?;
        if !loss.is_finite() || loss > 1e6 {
            return Err(TrainError::SftDiverged { step, loss });
        }
        policy.apply_update(&grad, -cfg.learning_rate);
        if !policy.has_finite_parameters() {
            return Err(TrainError::NonFiniteParameters { step });
        }
        loss_curve.push(loss);
    }
    Ok(SftOutcome { loss_curve })
}

/// Group-normalized advantages: `(r_i - mean) / (population std + adv_eps)`.
pub fn gspo_advantages(rewards: &[f64], cfg: &RewardConfig) -> Vec<f64> {
    assert!(rewards.len() >= 2, "advantage normalization needs a group");
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + cfg.adv_eps;
    rewards.iter().map(|r| (r - mean) / denom).collect()
}

/// Length-root sequence likelihood ratio:
/// `exp((loglik_new - loglik_old) / len)`.
pub fn gspo_ratio(loglik_new_sum: f64, loglik_old_sum: f64, len: usize) -> f64 {
    assert!(len >= 1);
    ((loglik_new_sum - loglik_old_sum) / len as f64).exp()
}

/// One scored candidate within a group.
#[derive(Debug, Clone)]
pub struct GspoSample {
    pub context: TokenId,
    pub tokens: Vec<TokenId>,
    pub loglik_old_sum: f64,
    pub reward: RewardBreakdown,
    pub advantage: f64,
}

/// A full group for one prompt: G candidates with old-policy likelihoods,
/// rewards, and advantages computed from this group's own rewards.
#[derive(Debug, Clone)]
pub struct GspoBatch {
    pub samples: Vec<GspoSample>,
}

impl GspoBatch {
    /// Assembles a batch from generated candidates scored under the policy
    /// snapshot that produced them.
    pub fn new(
        context: TokenId,
        candidates: Vec<(Vec<TokenId>, f64)>,
        rewards: Vec<RewardBreakdown>,
        cfg: &RewardConfig,
    ) -> Self {
        assert_eq!(candidates.len(), rewards.len());
        let totals: Vec<f64> = rewards.iter().map(|r| r.r_total).collect();
        let advantages = gspo_advantages(&totals, cfg);
        let samples = candidates
            .into_iter()
            .zip(rewards)
            .zip(advantages)
            .map(|(((tokens, loglik_old_sum), reward), advantage)| GspoSample {
                context,
                tokens,
                loglik_old_sum,
                reward,
                advantage,
            })
            .collect();
        Self { samples }
    }
}

/// Evaluates the clipped sequence objective and its ascent gradient at the
/// policy's current parameters.
pub fn gspo_objective(
    policy: &TokenSequencePolicy,
    batch: &GspoBatch,
    cfg: &RewardConfig,
) -> Result<(f64, Vec<f64>), TrainError> {
    let g = batch.samples.len().max(1) as f64;
    let v = policy.vocab_size();
    let mut grad = vec![0.0; v * v];
    let mut objective = 0.0;
    for sample in &batch.samples {
        if sample.tokens.is_empty() {
            continue;
        }
        let len = sample.tokens.len();
        let (loglik_new, loglik_grad) = policy.loglik_grad(sample.context, &sample.tokens)?;
        let ratio = gspo_ratio(loglik_new, sample.loglik_old_sum, len);
        let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
        let unclipped_term = ratio * sample.advantage;
        let clipped_term = clipped * sample.advantage;
        objective += unclipped_term.min(clipped_term) / g;

        let strictly_inside = ratio > 1.0 - cfg.clip_eps && ratio < 1.0 + cfg.clip_eps;
        let unclipped_active = unclipped_term < clipped_term;
        if strictly_inside || unclipped_active {
            // dJ/dtheta += (A_i / G) * s_i * (1/len) * d loglik_new / dtheta
            let coeff = sample.advantage / g * ratio / len as f64;
            for (acc, lg) in grad.iter_mut().zip(&loglik_grad) {
                *acc += coeff * lg;
            }
        }
    }
    Ok((objective, grad))
}

/// Scores candidates during sequence-policy training. Implementations own
/// the prompts; the trainer asks for the context token and a reward per
/// generated candidate.
pub trait GspoTask {
    fn num_prompts(&self) -> usize;
    fn context_token(&self, idx: usize) -> TokenId;
    fn score(&self, idx: usize, tokens: &[TokenId]) -> RewardBreakdown;
}

/// Standard task over annotated samples: candidates are parsed as structured
/// output and scored against each sample's truth labels.
pub struct AnnotatedTask<'a> {
    pub samples: &'a [AnnotatedSample],
    pub vocab: &'a Vocab,
    pub cfg: RewardConfig,
}

impl GspoTask for AnnotatedTask<'_> {
    fn num_prompts(&self) -> usize {
        self.samples.len()
    }

    fn context_token(&self, idx: usize) -> TokenId {
        self.samples[idx].prompt.context_token(self.vocab)
    }

    fn score(&self, idx: usize, tokens: &[TokenId]) -> RewardBreakdown {
        score_structured_output(tokens, &self.samples[idx].truth, self.vocab, &self.cfg)
    }
}

/// Parses a candidate and runs the full reward stack against `truth`; the KL
/// component is zero here because scoring happens at the generating snapshot.
pub fn score_structured_output(
    tokens: &[TokenId],
    truth: &TruthSet,
    vocab: &Vocab,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let out = cot::parse_tokens(tokens, vocab);
    let (c_total, c_invalid) = cot::count_format_checks(&out);
    let length = cot::reasoning_length(&out, vocab) as u32;
    reward::score_sample(&out.root_set(), truth, c_total, c_invalid, length, 0.0, cfg)
        .expect("format check counts are always in range")
}

/// Outcome of the sequence-optimization phase.
#[derive(Debug, Clone)]
pub struct GspoOutcome {
    /// Mean total reward per step.
    pub reward_curve: Vec<f64>,
    pub log_rows: Vec<TrainLogRow>,
}

/// Runs sequence policy optimization: per step, snapshot the parameters,
/// generate G candidates for the step's prompt (cycling through the task's
/// prompts), score, normalize, and take one ascent step.
pub fn run_gspo(
    policy: &mut TokenSequencePolicy,
    task: &dyn GspoTask,
    cfg: &TrainingConfig,
) -> Result<GspoOutcome, TrainError> {
    if cfg.gspo_steps == 0 || task.num_prompts() == 0 {
        return Ok(GspoOutcome { reward_curve: Vec::new(), log_rows: Vec::new() });
    }
    let g = cfg.reward.group_size;
    let mut seed_stream = XorShift64::new(cfg.seed ^ 0x6570);
    let mut reward_curve = Vec::with_capacity(cfg.gspo_steps);
    let mut log_rows = Vec::with_capacity(cfg.gspo_steps);
    for step in 0..cfg.gspo_steps {
        let prompt_idx = step % task.num_prompts();
        let context = task.context_token(prompt_idx);
        let mut rng = XorShift64::new(seed_stream.next_u64());

        // The policy is its own snapshot: generation and old-likelihoods are
        // evaluated before the update touches the parameters.
        let mut candidates = Vec::with_capacity(g);
        let mut rewards = Vec::with_capacity(g);
        for _ in 0..g {
            let (tokens, logps) = policy.generate_once(context, &mut rng);
            let loglik_old: f64 = logps.iter().sum();
            rewards.push(task.score(prompt_idx, &tokens));
            candidates.push((tokens, loglik_old));
        }
        let batch = GspoBatch::new(context, candidates, rewards, &cfg.reward);
        let (objective, grad) = gspo_objective(policy, &batch, &cfg.reward)?;
        policy.apply_update(&grad, cfg.learning_rate);
        if !policy.has_finite_parameters() {
            return Err(TrainError::NonFiniteParameters { step });
        }

        let n = batch.samples.len().max(1) as f64;
        let mean = |f: fn(&RewardBreakdown) -> f64| {
            batch.samples.iter().map(|s| f(&s.reward)).sum::<f64>() / n
        };
        let mean_total = mean(|r| r.r_total);
        reward_curve.push(mean_total);
        log_rows.push(TrainLogRow {
            step,
            objective,
            mean_r_total: mean_total,
            mean_r_result: mean(|r| r.r_result),
            mean_r_format: mean(|r| r.r_format),
            mean_r_length: mean(|r| r.r_length),
            mean_r_kl: mean(|r| r.r_kl),
        });
    }
    Ok(GspoOutcome { reward_curve, log_rows })
}

/// Classifies a transition by comparing SLO-violation counts: strictly fewer
/// violated services is an improvement, strictly more a degradation.
pub fn classify_outcome(pre: &ClusterState, post: &ClusterState, slo_ms: f64) -> Outcome {
    let before = pre.slo_violation_count(slo_ms);
    let after = post.slo_violation_count(slo_ms);
    match after.cmp(&before) {
        std::cmp::Ordering::Less => Outcome::Improved,
        std::cmp::Ordering::Equal => Outcome::Neutral,
        std::cmp::Ordering::Greater => Outcome::Degraded,
    }
}

/// Baseline substituting group normalization in the single-sample online
/// update: the binary match reward is centered on one half.
pub const ONLINE_BASELINE: f64 = 0.5;

/// Online adaptation after an executed counterfactual: binary match reward
/// (one when the predicted outcome equals the observed one), centered on
/// [`ONLINE_BASELINE`], driving one length-normalized ascent step on the
/// generated sequence. Returns whether the parameters changed.
pub fn online_step(
    policy: &mut TokenSequencePolicy,
    context: TokenId,
    tokens: &[TokenId],
    predicted: Outcome,
    observed: Outcome,
    cfg: &TrainingConfig,
) -> Result<bool, TrainError> {
    if tokens.is_empty() {
        return Ok(false);
    }
    let reward = if predicted == observed { 1.0 } else { 0.0 };
    let advantage = reward - ONLINE_BASELINE;
    let (_, loglik_grad) = policy.loglik_grad(context, tokens)?;
    let scale = cfg.learning_rate * advantage / tokens.len() as f64;
    policy.apply_update(&loglik_grad, scale);
    if !policy.has_finite_parameters() {
        return Err(TrainError::NonFiniteParameters { step: 0 });
    }
    Ok(scale != 0.0)
}

// ---------------------------------------------------------------------------
// Checkpoints and logs
// ---------------------------------------------------------------------------

/// Versioned policy checkpoint.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub vocab_hash: u64,
    pub vocab_size: usize,
    pub max_len: usize,
    pub start_token: TokenId,
    pub stop_token: TokenId,
    pub theta: Vec<f64>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(policy: &TokenSequencePolicy, path: &Path) -> Result<(), TrainError> {
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        vocab_hash: policy.vocab.hash(),
        vocab_size: policy.vocab_size(),
        max_len: policy.max_len,
        start_token: policy.start_token,
        stop_token: policy.stop_token,
        theta: policy.theta.clone(),
    };
    let mut file = std::fs::File::create(path)?;
    file.write_all(serde_json::to_string(&ckpt)?.as_bytes())?;
    Ok(())
}

/// Loads checkpoint parameters into a policy with a matching vocabulary.
pub fn load_checkpoint(policy: &mut TokenSequencePolicy, path: &Path) -> Result<(), TrainError> {
    let text = std::fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    let expected = policy.vocab.hash();
    if ckpt.vocab_hash != expected {
        return Err(TrainError::VocabMismatch { found: ckpt.vocab_hash, expected });
    }
    policy.theta = ckpt.theta;
    policy.max_len = ckpt.max_len;
    policy.start_token = ckpt.start_token;
    policy.stop_token = ckpt.stop_token;
    Ok(())
}

/// Writes the per-step training log as CSV.
pub fn write_training_log(rows: &[TrainLogRow], path: &Path) -> Result<(), TrainError> {
    let mut out = String::from("step,objective,mean_r_total,mean_r_result,mean_r_format,mean_r_length,mean_r_kl\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.step, r.objective, r.mean_r_total, r.mean_r_result, r.mean_r_format, r.mean_r_length, r.mean_r_kl
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
