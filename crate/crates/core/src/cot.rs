//! Structured chain-of-thought grammar: parser, format checks, and the
//! interpreter that turns counterfactual claims into executable actions.
//!
//! The output schema is four tag pairs, in this canonical order:
//!
//! ```text
//! <think> free-form observations </think>
//! <Fault> candidate services: whitespace-separated `#id @P` pairs or NONE </Fault>
//! <Counterfactual> claims of the form
//!     IF <verb> #id [delta] THEN {IMPROVED|NEUTRAL|DEGRADED}
//!   with verb in {SCALE_OUT, SCALE_IN, CPU_UP, CPU_DOWN, MEM_UP, MEM_DOWN},
//!   or the literal NONE </Counterfactual>
//! <root> confirmed causes: `#id @P` pairs or NONE </root>
//! ```
//!
//! `P` is a profile letter in {C, D, M, N}. Omitted deltas default to
//! 1 replica for horizontal verbs, 100 millicores for CPU verbs, and 128 MiB
//! for memory verbs. Claims are scanned from the whitespace-separated word
//! stream of the segment, so one claim per line and several claims on one
//! line parse identically.
//!
//! Parsing is total: any token sequence produces a `CotOutput`, with every
//! deviation recorded as a `FormatViolation` rather than an error, so rewards
//! stay computable for arbitrarily malformed generations. Three checks apply
//! per tag pair (non-empty content, correct start/end ordering, no foreign
//! tags nested inside), giving 12 format checks total; a missing pair fails
//! all three of its checks, and duplicate pairs count as an ordering
//! violation with only the first pair parsed.

use serde::{Deserialize, Serialize};

use crate::encode::{Outcome, TokenId, Vocab};
use crate::sim::{ActionKind, Resource, ScalingAction, ServiceId};

/// The four normative tag names, in canonical order.
pub const TAG_NAMES: [&str; 4] = ["think", "Fault", "Counterfactual", "root"];

/// Checks applied per tag pair.
const CHECKS_PER_TAG: u32 = 3;

/// Total number of format checks: three per tag pair.
pub const TOTAL_FORMAT_CHECKS: u32 = CHECKS_PER_TAG * TAG_NAMES.len() as u32;

/// Default deltas when a claim omits the amount.
pub const DEFAULT_REPLICA_STEP: i64 = 1;
pub const DEFAULT_CPU_STEP_MILLICORES: i64 = 100;
pub const DEFAULT_MEM_STEP_MIB: i64 = 128;

/// Ways a generation can deviate from the schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    EmptyContent,
    BadOrdering,
    NestedTags,
    MissingTag,
}

/// One recorded format deviation, attributed to a tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatViolation {
    pub kind: ViolationKind,
    /// Index into [`TAG_NAMES`].
    pub tag: usize,
}

impl FormatViolation {
    pub fn tag_name(&self) -> &'static str {
        TAG_NAMES[self.tag]
    }
}

/// A hypothesized action paired with its predicted outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterfactualClaim {
    pub action: ScalingAction,
    pub predicted_outcome: Outcome,
}

/// Parsed structured output: raw token sequence, the four segments, the
/// decoded claims and root labels, and every format violation observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotOutput {
    pub raw_text: String,
    pub raw_tokens: Vec<TokenId>,
    pub think: String,
    pub fault: String,
    pub counterfactual_text: String,
    pub root_text: String,
    pub counterfactual: Vec<CounterfactualClaim>,
    pub root: Vec<(ServiceId, Resource)>,
    pub violations: Vec<FormatViolation>,
}

impl CotOutput {
    pub fn is_violation_free(&self) -> bool {
        self.violations.is_empty()
    }

    /// Root labels as the set type used by reward scoring.
    pub fn root_set(&self) -> crate::sim::TruthSet {
        self.root.iter().copied().collect()
    }

    /// The single most confident prediction: the first root entry.
    pub fn top1(&self) -> Option<(ServiceId, Resource)> {
        self.root.first().copied()
    }

    /// Reconstructs canonical text from the four segments.
    pub fn to_text(&self) -> String {
        format!(
            "<think>{}</think>\n<Fault>{}</Fault>\n<Counterfactual>{}</Counterfactual>\n<root>{}</root>",
            self.think, self.fault, self.counterfactual_text, self.root_text
        )
    }
}

/// Parses a generated content-token sequence (whitespace-free convention;
/// tokens render with single spaces between them).
pub fn parse_tokens(tokens: &[TokenId], vocab: &Vocab) -> CotOutput {
    let text = vocab.detokenize_spaced(tokens);
    parse_with_tokens(&text, tokens.to_vec(), vocab)
}

/// Parses raw text, tokenizing it (lossily) for the token-level views.
pub fn parse(text: &str, vocab: &Vocab) -> CotOutput {
    let tokens = vocab.tokenize_lossy(text);
    parse_with_tokens(text, tokens, vocab)
}

fn parse_with_tokens(text: &str, raw_tokens: Vec<TokenId>, _vocab: &Vocab) -> CotOutput {
    let mut segments: [String; 4] = Default::default();
    let mut violations = Vec::new();
    let mut spans: [Option<(usize, usize)>; 4] = [None; 4];

    for (tag_idx, tag) in TAG_NAMES.iter().enumerate() {
        let open = format!("<{tag}>");
        let close = format!("</{tag}>");
        let opens: Vec<usize> = find_all(text, &open);
        let closes: Vec<usize> = find_all(text, &close);

        let mut bad_ordering = false;
        // An end tag strictly before the first start tag is an ordering fault.
        if let (Some(&first_close), first_open) = (closes.first(), opens.first()) {
            match first_open {
                Some(&fo) if first_close < fo => bad_ordering = true,
                None => bad_ordering = true,
                _ => {}
            }
        }
        // Duplicate pairs beyond the first also count as ordering faults.
        if opens.len() > 1 || closes.len() > 1 {
            bad_ordering = true;
        }

        let pair = opens.iter().find_map(|&o| {
            closes.iter().find(|&&c| c > o).map(|&c| (o + open.len(), c))
        });
        match pair {
            Some((start, end)) => {
                let content = &text[start..end];
                segments[tag_idx] = content.to_string();
                spans[tag_idx] = Some((start, end));
                if content.trim().is_empty() {
                    violations.push(FormatViolation { kind: ViolationKind::EmptyContent, tag: tag_idx });
                }
                if bad_ordering {
                    violations.push(FormatViolation { kind: ViolationKind::BadOrdering, tag: tag_idx });
                }
            }
            None => {
                if bad_ordering {
                    violations.push(FormatViolation { kind: ViolationKind::BadOrdering, tag: tag_idx });
                }
                violations.push(FormatViolation { kind: ViolationKind::MissingTag, tag: tag_idx });
            }
        }
    }

    // Nesting: any foreign tag token inside a parsed segment's span.
    for (tag_idx, span) in spans.iter().enumerate() {
        let Some((start, end)) = span else { continue };
        let segment = &text[*start..*end];
        let nested = TAG_NAMES
            .iter()
            .enumerate()
            .filter(|(other, _)| *other != tag_idx)
            .any(|(_, other_tag)| {
                segment.contains(&format!("<{other_tag}>")) || segment.contains(&format!("</{other_tag}>"))
            });
        if nested {
            violations.push(FormatViolation { kind: ViolationKind::NestedTags, tag: tag_idx });
        }
    }

    let [think, fault, counterfactual_text, root_text] = segments;
    let counterfactual = parse_claims(&counterfactual_text);
    let root = parse_root(&root_text);
    CotOutput {
        raw_text: text.to_string(),
        raw_tokens,
        think,
        fault,
        counterfactual_text,
        root_text,
        counterfactual,
        root,
        violations,
    }
}

fn find_all(haystack: &str, needle: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(at) = haystack[from..].find(needle) {
        out.push(from + at);
        from += at + needle.len();
    }
    out
}

/// Parses whitespace-separated `#id @P` pairs; entries that do not fit the
/// micro-syntax (including ids outside 1..=20) are skipped. The literal NONE
/// yields no entries.
fn parse_root(segment: &str) -> Vec<(ServiceId, Resource)> {
    let mut out = Vec::new();
    let words: Vec<&str> = segment.split_whitespace().collect();
    let mut i = 0;
    while i < words.len() {
        if let Some(service) = parse_service_ref(words[i]) {
            if i + 1 < words.len() {
                if let Some(resource) = parse_profile_ref(words[i + 1]) {
                    out.push((service, resource));
                    i += 2;
                    continue;
                }
            }
        }
        i += 1;
    }
    out
}

fn parse_service_ref(word: &str) -> Option<ServiceId> {
    let rest = word.strip_prefix('#')?;
    let id: u32 = rest.parse().ok()?;
    (1..=20).contains(&id).then_some(ServiceId(id))
}

fn parse_profile_ref(word: &str) -> Option<Resource> {
    let rest = word.strip_prefix('@')?;
    let mut chars = rest.chars();
    let letter = chars.next()?;
    if chars.next().is_some() {
        return None;
    }
    Resource::from_letter(letter)
}

/// Scans the segment's word stream for `IF <verb> #id [delta] THEN <outcome>`
/// groups; words that do not continue a claim restart the scan, so malformed
/// fragments are skipped without consuming later claims.
fn parse_claims(segment: &str) -> Vec<CounterfactualClaim> {
    let words: Vec<&str> = segment.split_whitespace().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < words.len() {
        if words[i] != "IF" {
            i += 1;
            continue;
        }
        match parse_one_claim(&words[i + 1..]) {
            Some((claim, consumed)) => {
                out.push(claim);
                i += 1 + consumed;
            }
            None => i += 1,
        }
    }
    out
}

/// Parses one claim starting right after its `IF`; returns the claim and how
/// many words it consumed.
fn parse_one_claim(words: &[&str]) -> Option<(CounterfactualClaim, usize)> {
    let mut used = 0;
    let verb = *words.get(used)?;
    let (kind, sign, default_step) = verb_spec(verb)?;
    used += 1;
    let service = parse_service_ref(words.get(used)?)?;
    used += 1;
    let delta_mag = match words.get(used) {
        Some(&word) if word != "THEN" => {
            let v = word.parse::<i64>().ok().filter(|v| *v > 0)?;
            used += 1;
            v
        }
        _ => default_step,
    };
    if *words.get(used)? != "THEN" {
        return None;
    }
    used += 1;
    let predicted_outcome = match *words.get(used)? {
        "IMPROVED" => Outcome::Improved,
        "NEUTRAL" => Outcome::Neutral,
        "DEGRADED" => Outcome::Degraded,
        _ => return None,
    };
    used += 1;
    let claim = CounterfactualClaim {
        action: ScalingAction { service_id: service, kind, delta: sign * delta_mag, no_op: false },
        predicted_outcome,
    };
    Some((claim, used))
}

fn verb_spec(verb: &str) -> Option<(ActionKind, i64, i64)> {
    match verb {
        "SCALE_OUT" => Some((ActionKind::Horizontal, 1, DEFAULT_REPLICA_STEP)),
        "SCALE_IN" => Some((ActionKind::Horizontal, -1, DEFAULT_REPLICA_STEP)),
        "CPU_UP" => Some((ActionKind::VerticalCpu, 1, DEFAULT_CPU_STEP_MILLICORES)),
        "CPU_DOWN" => Some((ActionKind::VerticalCpu, -1, DEFAULT_CPU_STEP_MILLICORES)),
        "MEM_UP" => Some((ActionKind::VerticalMem, 1, DEFAULT_MEM_STEP_MIB)),
        "MEM_DOWN" => Some((ActionKind::VerticalMem, -1, DEFAULT_MEM_STEP_MIB)),
        _ => None,
    }
}

/// Counts format checks: `(total, failed)`. Three checks per tag; a missing
/// tag fails all three of its checks, otherwise each recorded violation kind
/// fails at most one check per tag.
pub fn count_format_checks(out: &CotOutput) -> (u32, u32) {
    let mut invalid = 0u32;
    for tag_idx in 0..TAG_NAMES.len() {
        let missing = out
            .violations
            .iter()
            .any(|v| v.tag == tag_idx && v.kind == ViolationKind::MissingTag);
        if missing {
            invalid += CHECKS_PER_TAG;
            continue;
        }
        for kind in [ViolationKind::EmptyContent, ViolationKind::BadOrdering, ViolationKind::NestedTags] {
            if out.violations.iter().any(|v| v.tag == tag_idx && v.kind == kind) {
                invalid += 1;
            }
        }
    }
    (TOTAL_FORMAT_CHECKS, invalid)
}

/// The interpreter: keeps only counterfactual claims predicting improvement,
/// preserving their order.
pub fn interpret(out: &CotOutput) -> Vec<(Outcome, ScalingAction)> {
    out.counterfactual
        .iter()
        .filter(|claim| claim.predicted_outcome == Outcome::Improved)
        .map(|claim| (claim.predicted_outcome, claim.action))
        .collect()
}

/// Number of non-whitespace tokens strictly inside the four tag pairs; tag
/// tokens themselves are excluded, and whitespace is treated as rendering
/// glue rather than reasoning content.
pub fn reasoning_length(out: &CotOutput, vocab: &Vocab) -> usize {
    [&out.think, &out.fault, &out.counterfactual_text, &out.root_text]
        .iter()
        .map(|segment| {
            vocab
                .tokenize_lossy(segment)
                .iter()
                .filter(|&&t| !vocab.is_whitespace(t))
                .count()
        })
        .sum()
}
