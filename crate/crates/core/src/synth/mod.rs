//! Training-set synthesis: every chunk is sent to a completion provider with
//! an instruction asking for a scenario, a question, and an answer in a
//! three-tag format; well-formed completions become [`QuerySample`]s.
//!
//! The parser only looks at the first occurrence of each tag pair, so
//! reasoning text emitted before the tags ("think mode" prefixes) is
//! ignored. Completions missing a tag or with a blank field are dropped and
//! counted, as are samples failing the language-script or question-length
//! filters.

pub mod provider;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::{ChunkIndex, ChunkStore};
use crate::error::{Error, Result};
use crate::io;
use provider::CompletionProvider;

/// Instruction block embedded in every synthesis prompt. The tag skeleton is
/// load-bearing: the parser and the format reward both key on
/// `<scenario>`/`<question>`/`<answer>`.
const SYNTHESIS_INSTRUCTION: &str = "\
# Generating document requiring question and answer
Read the document, then (1) think of a scenario that requires the document, \
(2) create a question that fits the scenario, and (3) provide an answer that \
matches the question.

If the document's information is insufficient to identify a situation \
requiring the document, output blank spaces.

The final response format should follow this structure:

<scenario>...</scenario>
<question>...</question>
<answer>...</answer>";

/// Render the synthesis prompt for one chunk. The chunk text is embedded
/// verbatim (no escaping).
///
/// Panics if `chunk_text` is empty; chunk stores never contain empty chunks.
pub fn render_synthesis_prompt(chunk_text: &str) -> String {
    assert!(
        !chunk_text.is_empty(),
        "render_synthesis_prompt requires non-empty chunk text"
    );
    format!("{SYNTHESIS_INSTRUCTION}\n\nDocument:\n{chunk_text}")
}

/// The three generated fields, all non-blank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisTriple {
    pub scenario: String,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagField {
    Scenario,
    Question,
    Answer,
}

impl TagField {
    fn name(self) -> &'static str {
        match self {
            TagField::Scenario => "scenario",
            TagField::Question => "question",
            TagField::Answer => "answer",
        }
    }
}

impl std::fmt::Display for TagField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Why a completion was not turned into a sample. A rejection is an expected
/// value, not a failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    MissingTag(TagField),
    BlankField(TagField),
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::MissingTag(t) => write!(f, "missing_tag({t})"),
            Rejection::BlankField(t) => write!(f, "blank_field({t})"),
        }
    }
}

fn extract_tag(completion: &str, field: TagField) -> std::result::Result<String, Rejection> {
    let open = format!("<{}>", field.name());
    let close = format!("</{}>", field.name());
    let start = completion
        .find(&open)
        .ok_or(Rejection::MissingTag(field))?;
    let after = start + open.len();
    let end = completion[after..]
        .find(&close)
        .ok_or(Rejection::MissingTag(field))?;
    let inner = completion[after..after + end].trim();
    if inner.is_empty() {
        return Err(Rejection::BlankField(field));
    }
    Ok(inner.to_string())
}

/// Extract the first occurrence of each tag pair. All three fields must be
/// present and non-blank after trimming.
pub fn parse_synthesis_output(
    completion: &str,
) -> std::result::Result<SynthesisTriple, Rejection> {
    Ok(SynthesisTriple {
        scenario: extract_tag(completion, TagField::Scenario)?,
        question: extract_tag(completion, TagField::Question)?,
        answer: extract_tag(completion, TagField::Answer)?,
    })
}

/// One training/eval example. `query` is always the scenario and the
/// question joined by a single space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySample {
    pub target_index: ChunkIndex,
    pub scenario: String,
    pub question: String,
    pub answer: String,
    pub query: String,
}

impl QuerySample {
    pub fn from_triple(target_index: ChunkIndex, triple: SynthesisTriple) -> Self {
        let query = format!("{} {}", triple.scenario, triple.question);
        Self {
            target_index,
            scenario: triple.scenario,
            question: triple.question,
            answer: triple.answer,
            query,
        }
    }
}

/// Unicode script classes accepted by the language filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Script {
    Latin,
    Hangul,
    Han,
    Hiragana,
    Katakana,
    Cyrillic,
    Greek,
}

impl Script {
    fn contains(self, ch: char) -> bool {
        match self {
            Script::Latin => ch.is_ascii_alphabetic() || matches!(ch, '\u{C0}'..='\u{24F}'),
            Script::Hangul => matches!(ch,
                '\u{1100}'..='\u{11FF}' | '\u{3130}'..='\u{318F}' | '\u{AC00}'..='\u{D7AF}'),
            Script::Han => matches!(ch,
                '\u{3400}'..='\u{4DBF}' | '\u{4E00}'..='\u{9FFF}' | '\u{F900}'..='\u{FAFF}'),
            Script::Hiragana => matches!(ch, '\u{3040}'..='\u{309F}'),
            Script::Katakana => matches!(ch, '\u{30A0}'..='\u{30FF}'),
            Script::Cyrillic => matches!(ch, '\u{400}'..='\u{4FF}'),
            Script::Greek => matches!(ch, '\u{370}'..='\u{3FF}'),
        }
    }
}

/// Post-parse filters applied to each candidate sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    /// Scripts counted as in-range by the language filter.
    pub allowed_scripts: Vec<Script>,
    /// Maximum fraction of alphabetic characters outside the allowed
    /// scripts before a sample is dropped.
    pub max_foreign_fraction: f64,
    /// Minimum question length in characters.
    pub min_question_chars: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            allowed_scripts: vec![Script::Latin, Script::Hangul, Script::Han],
            max_foreign_fraction: 0.2,
            min_question_chars: 10,
        }
    }
}

impl FilterConfig {
    /// Fraction of letters outside the allowed scripts; non-alphabetic
    /// characters are ignored. Text without letters passes.
    pub fn foreign_fraction(&self, text: &str) -> f64 {
        let mut letters = 0usize;
        let mut foreign = 0usize;
        for ch in text.chars() {
            if !ch.is_alphabetic() {
                continue;
            }
            letters += 1;
            if !self.allowed_scripts.iter().any(|s| s.contains(ch)) {
                foreign += 1;
            }
        }
        if letters == 0 {
            0.0
        } else {
            foreign as f64 / letters as f64
        }
    }
}

/// Per-reason outcome counts for a synthesis run. `accepted` plus the sum of
/// `rejected` always equals `total_chunks`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SynthReport {
    pub total_chunks: usize,
    pub accepted: usize,
    pub rejected: BTreeMap<String, usize>,
}

impl SynthReport {
    pub fn acceptance_rate(&self) -> f64 {
        if self.total_chunks == 0 {
            0.0
        } else {
            self.accepted as f64 / self.total_chunks as f64
        }
    }

    fn bump(&mut self, reason: &str) {
        *self.rejected.entry(reason.to_string()).or_insert(0) += 1;
    }
}

enum ChunkOutcome {
    Sample(Box<QuerySample>),
    Rejected(&'static str),
    ProviderFailed,
}

fn synthesize_chunk(
    chunk_index: ChunkIndex,
    chunk_text: &str,
    provider: &dyn CompletionProvider,
    filters: &FilterConfig,
) -> ChunkOutcome {
    let prompt = render_synthesis_prompt(chunk_text);
    let completion = match provider.complete(chunk_index, &prompt) {
        Ok(text) => text,
        Err(_) => return ChunkOutcome::ProviderFailed,
    };
    let triple = match parse_synthesis_output(&completion) {
        Ok(t) => t,
        Err(Rejection::MissingTag(_)) => return ChunkOutcome::Rejected("missing_tag"),
        Err(Rejection::BlankField(_)) => return ChunkOutcome::Rejected("blank_field"),
    };
    if triple.question.chars().count() < filters.min_question_chars {
        return ChunkOutcome::Rejected("min_length");
    }
    let sample = QuerySample::from_triple(chunk_index, triple);
    if filters.foreign_fraction(&sample.query) > filters.max_foreign_fraction {
        return ChunkOutcome::Rejected("script_filter");
    }
    ChunkOutcome::Sample(Box::new(sample))
}

/// Synthesize at most one sample per chunk. Requests run on `fan_out`
/// worker threads but the result order is always chunk order. Provider
/// failures skip the chunk and are counted; the call only fails as a whole
/// if the provider failed for every chunk.
pub fn build_training_set(
    store: &ChunkStore,
    provider: &dyn CompletionProvider,
    filters: &FilterConfig,
    fan_out: usize,
) -> Result<(Vec<QuerySample>, SynthReport)> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    let n = store.len();
    let slots: Mutex<Vec<Option<ChunkOutcome>>> = Mutex::new((0..n).map(|_| None).collect());
    let cursor = AtomicUsize::new(0);

    std::thread::scope(|scope| {
        for _ in 0..fan_out.max(1).min(n) {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let chunk = &store.chunks()[i];
                let outcome =
                    synthesize_chunk(chunk.chunk_index, &chunk.text, provider, filters);
                slots.lock().expect("synth worker poisoned")[i] = Some(outcome);
            });
        }
    });

    let mut report = SynthReport {
        total_chunks: n,
        ..SynthReport::default()
    };
    let mut samples = Vec::new();
    let mut provider_failures = 0usize;
    for outcome in slots.into_inner().expect("synth workers poisoned") {
        match outcome.expect("every chunk processed") {
            ChunkOutcome::Sample(sample) => {
                report.accepted += 1;
                samples.push(*sample);
            }
            ChunkOutcome::Rejected(reason) => report.bump(reason),
            ChunkOutcome::ProviderFailed => {
                provider_failures += 1;
                report.bump("provider_error");
            }
        }
    }
    if provider_failures == n {
        return Err(Error::SynthesisExhausted(n));
    }
    Ok((samples, report))
}

/// Persist the dataset as one JSON object per line:
/// `{"target_index", "scenario", "question", "answer", "query"}`.
pub fn save_dataset(path: &Path, samples: &[QuerySample]) -> Result<()> {
    io::write_jsonl(path, samples)
}

pub fn load_dataset(path: &Path) -> Result<Vec<QuerySample>> {
    io::read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::provider::{ScriptedCompletion, ScriptedProvider};
    use super::*;
    use crate::corpus::{build_db, ChunkConfig, Document};

    #[test]
    fn prompt_contains_the_tag_skeleton_and_the_chunk() {
        let prompt = render_synthesis_prompt("the pet camera manual");
        for needle in [
            "<scenario>...</scenario>",
            "<question>...</question>",
            "<answer>...</answer>",
            "output blank spaces",
            "the pet camera manual",
        ] {
            assert!(prompt.contains(needle), "missing {needle:?}");
        }
    }

    #[test]
    fn tag_like_chunk_text_is_embedded_verbatim() {
        let prompt = render_synthesis_prompt("contains <answer>inline</answer> tags");
        assert!(prompt.contains("contains <answer>inline</answer> tags"));
    }

    #[test]
    #[should_panic(expected = "non-empty chunk text")]
    fn empty_chunk_violates_the_precondition() {
        render_synthesis_prompt("");
    }

    #[test]
    fn well_formed_completion_parses() {
        let triple = parse_synthesis_output(
            "<scenario>s</scenario><question>q</question><answer>a</answer>",
        )
        .unwrap();
        assert_eq!(
            triple,
            SynthesisTriple {
                scenario: "s".into(),
                question: "q".into(),
                answer: "a".into()
            }
        );
    }

    #[test]
    fn think_prefix_before_tags_is_ignored() {
        let triple = parse_synthesis_output(
            "Let me reason about this first...\n<scenario>s</scenario>\n<question>q</question>\n<answer>a</answer>",
        )
        .unwrap();
        assert_eq!(triple.scenario, "s");
    }

    #[test]
    fn blank_scenario_is_rejected_as_blank_field() {
        let err = parse_synthesis_output(
            "<scenario>   </scenario><question>q</question><answer>a</answer>",
        )
        .unwrap_err();
        assert_eq!(err, Rejection::BlankField(TagField::Scenario));
    }

    #[test]
    fn missing_close_tag_is_rejected_as_missing_tag() {
        let err = parse_synthesis_output(
            "<scenario>s</scenario><question>q</question><answer>a",
        )
        .unwrap_err();
        assert_eq!(err, Rejection::MissingTag(TagField::Answer));
        assert_eq!(err.to_string(), "missing_tag(answer)");
    }

    #[test]
    fn query_is_scenario_space_question() {
        let sample = QuerySample::from_triple(
            5,
            SynthesisTriple {
                scenario: "lost remote".into(),
                question: "how to reset".into(),
                answer: "hold button".into(),
            },
        );
        assert_eq!(sample.query, "lost remote how to reset");
    }

    fn three_chunk_store() -> ChunkStore {
        let docs = vec![
            Document::new("a", "first chunk text"),
            Document::new("b", "second chunk text"),
            Document::new("c", "third chunk text"),
        ];
        build_db(&docs, &ChunkConfig::new(1000, 0).unwrap()).unwrap()
    }

    fn good(i: u64) -> ScriptedCompletion {
        ScriptedCompletion {
            chunk_index: i,
            completion: format!(
                "<scenario>scenario {i}</scenario><question>a question long enough {i}</question><answer>answer {i}</answer>"
            ),
        }
    }

    #[test]
    fn all_well_formed_completions_are_accepted() {
        let store = three_chunk_store();
        let provider = ScriptedProvider::from_records(vec![good(0), good(1), good(2)]);
        let (samples, report) =
            build_training_set(&store, &provider, &FilterConfig::default(), 2).unwrap();
        assert_eq!(samples.len(), 3);
        assert_eq!(report.accepted, 3);
        assert_eq!(report.total_chunks, 3);
        assert!((report.acceptance_rate() - 1.0).abs() < 1e-12);
        // order-stable regardless of worker completion order
        let targets: Vec<_> = samples.iter().map(|s| s.target_index).collect();
        assert_eq!(targets, vec![0, 1, 2]);
    }

    #[test]
    fn missing_tag_is_counted_and_chunk_skipped() {
        let store = three_chunk_store();
        let provider = ScriptedProvider::from_records(vec![
            good(0),
            ScriptedCompletion {
                chunk_index: 1,
                completion: "<scenario>s</scenario><question>q but no answer</question>".into(),
            },
            good(2),
        ]);
        let (samples, report) =
            build_training_set(&store, &provider, &FilterConfig::default(), 1).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(report.rejected.get("missing_tag"), Some(&1));
        let total: usize = report.accepted + report.rejected.values().sum::<usize>();
        assert_eq!(total, report.total_chunks);
    }

    #[test]
    fn short_question_is_dropped_for_min_length() {
        let store = three_chunk_store();
        let provider = ScriptedProvider::from_records(vec![
            good(0),
            ScriptedCompletion {
                chunk_index: 1,
                completion:
                    "<scenario>fine scenario</scenario><question>tiny</question><answer>a</answer>"
                        .into(),
            },
            good(2),
        ]);
        let (samples, report) =
            build_training_set(&store, &provider, &FilterConfig::default(), 1).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(report.rejected.get("min_length"), Some(&1));
    }

    #[test]
    fn foreign_script_sample_is_dropped() {
        let store = three_chunk_store();
        let filters = FilterConfig {
            allowed_scripts: vec![Script::Latin],
            ..FilterConfig::default()
        };
        let provider = ScriptedProvider::from_records(vec![
            good(0),
            ScriptedCompletion {
                chunk_index: 1,
                completion: "<scenario>Ένα σενάριο στα ελληνικά</scenario><question>ερώτηση αρκετά μεγάλη εδώ</question><answer>απάντηση</answer>".into(),
            },
            good(2),
        ]);
        let (samples, report) = build_training_set(&store, &provider, &filters, 1).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(report.rejected.get("script_filter"), Some(&1));
    }

    #[test]
    fn provider_failure_for_some_chunks_is_recorded() {
        let store = three_chunk_store();
        let provider = ScriptedProvider::from_records(vec![good(0), good(2)]);
        let (samples, report) =
            build_training_set(&store, &provider, &FilterConfig::default(), 1).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(report.rejected.get("provider_error"), Some(&1));
    }

    #[test]
    fn provider_failure_for_every_chunk_fails_the_run() {
        let store = three_chunk_store();
        let provider = ScriptedProvider::from_records(vec![]);
        match build_training_set(&store, &provider, &FilterConfig::default(), 2) {
            Err(Error::SynthesisExhausted(3)) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn emitted_samples_round_trip_the_concatenation_rule() {
        let store = three_chunk_store();
        let provider = ScriptedProvider::from_records(vec![good(0), good(1), good(2)]);
        let (samples, _) =
            build_training_set(&store, &provider, &FilterConfig::default(), 3).unwrap();
        for s in &samples {
            assert_eq!(s.query, format!("{} {}", s.scenario, s.question));
        }
    }

    #[test]
    fn dataset_save_load_round_trip() {
        let sample = QuerySample::from_triple(
            1,
            SynthesisTriple {
                scenario: "s".into(),
                question: "q".into(),
                answer: "a".into(),
            },
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");
        save_dataset(&path, &[sample.clone()]).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded, vec![sample]);

        let raw = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            raw.lines().next().unwrap(),
            r#"{"target_index":1,"scenario":"s","question":"q","answer":"a","query":"s q"}"#
        );
    }
}
