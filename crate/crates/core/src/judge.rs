//! LLM-as-judge gateway: renders the correctness-evaluation prompts, calls a
//! chat-completion endpoint with bounded parallelism and retry, and parses
//! the XML assessment out of the reply into verdict records.
//!
//! Parse failures are a first-class outcome. They are reported and excluded
//! from the verdicts file, never coerced to fail, and a run aborts when more
//! than 10% of its judgments fail to parse.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{RunRecord, TestExample, Verdict, VerdictRecord};
use crate::error::{Error, Result};

/// Fraction of parse failures above which a judge run aborts.
pub const MAX_PARSE_FAILURE_FRACTION: f64 = 0.10;

/// Environment variable holding the bearer token for the judge endpoint.
pub const API_TOKEN_ENV: &str = "MIGRATEVAL_API_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    LlmCorrectness,
    NewCorrectness,
}

impl TemplateId {
    pub fn metric_name(self) -> &'static str {
        match self {
            TemplateId::LlmCorrectness => "llm_correctness",
            TemplateId::NewCorrectness => "new_correctness",
        }
    }
}

impl std::str::FromStr for TemplateId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "llm_correctness" => Ok(TemplateId::LlmCorrectness),
            "new_correctness" => Ok(TemplateId::NewCorrectness),
            other => Err(Error::Configuration(format!("unknown template {other}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub max_parallel_requests: usize,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub backoff_base_s: f64,
    pub temperature: f64,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig {
            endpoint_url: String::new(),
            model_name: String::new(),
            max_parallel_requests: 4,
            timeout_s: 60.0,
            max_retries: 3,
            backoff_base_s: 1.0,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeOutcome {
    pub example_id: String,
    pub model: String,
    pub metric: String,
    pub verdict: Option<Verdict>,
    pub raw_response: String,
    pub attempts: u32,
    pub parse_ok: bool,
}

const NEW_CORRECTNESS_TEMPLATE: &str = r#"You are assisting AI developers by assessing the correctness of another LLM's answers to questions in given contexts.

An LLM was provided with some ground-truth context (given below in the
"context" XML tags) and a user's question (given below in the "question" XML tags).
It generated the answer given below in the "llm-answer" XML tags. You may also be
provided with an 'ideal' answer to the question, which is an example of how the
developers would like their LLM to respond. Do not overrely on this however -
trust the context as the absolute truth.

Your job is to assess the correctness of the generated answer, but you must do
it in the following specific way:
1. Assess the factual accuracy of the answer - does it contradict the context?
If it does, your assessment should be "incorrect".
2. Is the answer complete? If it gives some but not all of the information that
a user would need in order to understand and resolve their issue then is incomplete.
An incomplete answer can still be considered correct if it is not likely to cause
problems for the user, for example giving one option out of multiple alternatives
each of which will help the user. But for example if the response misses one of a
set of requirements all of which are needed then your response should be "incorrect". You need to
use careful judgement here to assess the seriousness of missing information and
its impact on the user.
3. If the answer off-topic - unrelated to the question or context - or does
not attempt an answer (e.g. "I don't know.") then it should be considered incorrect.

Output your reasoning first, taking particular care with incomplete answers.
Then, output your assessment within "assessment" XML tags. Use "correct" or
"incorrect" as the value, for example <assessment>incorrect</assessment>

Here is the data for you to assess:

<context>{context}</context>

<question>{question}</question>

<llm-answer>{llm_answer}</llm-answer>

<ideal-answer>{ideal_answer}</ideal-answer>
"#;

const LLM_CORRECTNESS_TEMPLATE: &str = r#"Your job is to detect whether statements are contradictory.

You compare a single "answer" statement to number of "ground-truth" statements and report which of the ground-truths is contradicted by the answer.
The answer and ground-truths are answers to a question, which your user provides within the <question> XML tag.

The answer is contained within <answer> tag and ground-truths are contained within the <ground-truth> XML tags. Each ground-truth tag has a unique id attribute which you use to identify them in your response.
Your respond with a comma-separated list of the IDs of contradicting ground-truths in the <contradictions> XML tags.

If there are no contradictions, leave an empty response between the tags.

This is the question: <question>{question}</question>

This is the answer to the question: <answer>{answer}</answer>

These are the ground-truth statements:
{ground_truths}

Which (if any) of the ground-truths contradict the answer?
"#;

/// Split a ground-truth text into sentence-level statements.
fn split_statements(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') {
            let boundary = chars.peek().map_or(true, |n| n.is_whitespace());
            if boundary {
                let s = current.trim().to_string();
                if !s.is_empty() {
                    out.push(s);
                }
                current.clear();
            }
        }
    }
    let tail = current.trim().to_string();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render the evaluation prompt for one (example, answer) pair.
pub fn render_prompt(
    template_id: TemplateId,
    example: &TestExample,
    answer: &RunRecord,
) -> Result<String> {
    match template_id {
        TemplateId::NewCorrectness => {
            if example.contexts.is_empty() {
                return Err(Error::Render(format!(
                    "example {} has no contexts for the context-based template",
                    example.id
                )));
            }
            let context = example
                .contexts
                .iter()
                .map(|c| xml_escape(c))
                .collect::<Vec<_>>()
                .join("\n\n");
            Ok(NEW_CORRECTNESS_TEMPLATE
                .replace("{context}", &context)
                .replace("{question}", &xml_escape(&example.question))
                .replace("{llm_answer}", &xml_escape(&answer.answer_text))
                .replace("{ideal_answer}", &xml_escape(&example.ground_truth)))
        }
        TemplateId::LlmCorrectness => {
            let statements = split_statements(&example.ground_truth);
            if statements.is_empty() {
                return Err(Error::Render(format!(
                    "example {} has no ground truth statements",
                    example.id
                )));
            }
            let ground_truths = statements
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    format!("<ground-truth id=\"{}\">{}</ground-truth>", i + 1, xml_escape(s))
                })
                .collect::<Vec<_>>()
                .join("\n");
            Ok(LLM_CORRECTNESS_TEMPLATE
                .replace("{question}", &xml_escape(&example.question))
                .replace("{answer}", &xml_escape(&answer.answer_text))
                .replace("{ground_truths}", &ground_truths))
        }
    }
}

fn extract_tag<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    // tolerant of surrounding reasoning: take the last occurrence
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.rfind(&open)? + open.len();
    let end = start + text[start..].find(&close)?;
    Some(&text[start..end])
}

/// Extract the judge's verdict from its raw reply.
pub fn parse_assessment(raw_response: &str, template_id: TemplateId) -> Result<Verdict> {
    match template_id {
        TemplateId::NewCorrectness => {
            let content = extract_tag(raw_response, "assessment")
                .ok_or_else(|| Error::JudgeParse("no assessment tag in response".into()))?;
            match content.trim().to_lowercase().as_str() {
                "correct" => Ok(Verdict::Pass),
                "incorrect" => Ok(Verdict::Fail),
                other => Err(Error::JudgeParse(format!(
                    "assessment value '{other}' outside vocabulary"
                ))),
            }
        }
        TemplateId::LlmCorrectness => {
            let content = extract_tag(raw_response, "contradictions")
                .ok_or_else(|| Error::JudgeParse("no contradictions tag in response".into()))?;
            let trimmed = content.trim();
            if trimmed.is_empty() {
                return Ok(Verdict::Pass);
            }
            let all_ids = trimmed
                .split(',')
                .all(|part| !part.trim().is_empty() && part.trim().chars().all(|c| c.is_ascii_digit()));
            if all_ids {
                Ok(Verdict::Fail)
            } else {
                Err(Error::JudgeParse(format!(
                    "contradictions content '{trimmed}' is not an id list"
                )))
            }
        }
    }
}

/// Pre-jitter backoff delay before retry attempt `attempt` (1-based).
pub fn backoff_delay(config: &JudgeConfig, attempt: u32) -> Duration {
    let secs = config.backoff_base_s * 2.0_f64.powi(attempt.saturating_sub(1) as i32);
    Duration::from_secs_f64(secs)
}

fn jitter(delay: Duration) -> Duration {
    // up to 10% extra; growth of the base schedule keeps delays nondecreasing
    let extra = delay.as_secs_f64() * 0.1 * rand::random::<f64>();
    delay + Duration::from_secs_f64(extra)
}

#[derive(Debug, Serialize, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChatMessage {
    content: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

/// Single chat-completion request with retry on 429/5xx and per-attempt
/// timeout. Returns the reply content and the number of attempts used.
pub fn submit(config: &JudgeConfig, prompt: &str) -> Result<(String, u32)> {
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs_f64(config.timeout_s))
        .build()
        .map_err(|e| Error::Transport {
            attempts: 0,
            message: e.to_string(),
        })?;
    let body = json!({
        "model": config.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": config.temperature,
    });

    let mut attempt_log = Vec::new();
    let max_attempts = config.max_retries + 1;
    for attempt in 1..=max_attempts {
        let mut request = client.post(&config.endpoint_url).json(&body);
        if let Ok(token) = std::env::var(API_TOKEN_ENV) {
            request = request.bearer_auth(token);
        }
        match request.send() {
            Ok(response) => {
                let status = response.status().as_u16();
                if (200..300).contains(&status) {
                    let parsed: ChatResponse =
                        response.json().map_err(|e| Error::Transport {
                            attempts: attempt,
                            message: format!("unparseable chat response: {e}"),
                        })?;
                    let content = parsed
                        .choices
                        .first()
                        .map(|c| c.message.content.clone())
                        .ok_or_else(|| Error::Transport {
                            attempts: attempt,
                            message: "chat response has no choices".into(),
                        })?;
                    return Ok((content, attempt));
                }
                if status == 429 || (500..600).contains(&status) {
                    attempt_log.push(format!("attempt {attempt}: HTTP {status}"));
                } else {
                    return Err(Error::Transport {
                        attempts: attempt,
                        message: format!("non-retryable HTTP {status}"),
                    });
                }
            }
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
                attempt_log.push(format!("attempt {attempt}: {e}"));
            }
            Err(e) => {
                return Err(Error::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                });
            }
        }
        if attempt < max_attempts {
            std::thread::sleep(jitter(backoff_delay(config, attempt)));
        }
    }
    Err(Error::Transport {
        attempts: max_attempts,
        message: format!("retries exhausted: {}", attempt_log.join("; ")),
    })
}

/// Judge every run, with at most `max_parallel_requests` requests in flight.
/// Output is sorted by (example_id, model); the verdict records exclude
/// parse failures.
pub fn judge_run(
    examples: &[TestExample],
    runs: &[RunRecord],
    template_id: TemplateId,
    config: &JudgeConfig,
) -> Result<(Vec<JudgeOutcome>, Vec<VerdictRecord>)> {
    let index: std::collections::BTreeMap<&str, &TestExample> =
        examples.iter().map(|e| (e.id.as_str(), e)).collect();
    for run in runs {
        if !index.contains_key(run.example_id.as_str()) {
            return Err(Error::Validation(format!(
                "run references unknown example {}",
                run.example_id
            )));
        }
    }

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<JudgeOutcome>>> = Mutex::new(vec![None; runs.len()]);
    let workers = config.max_parallel_requests.max(1).min(runs.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= runs.len() {
                    break;
                }
                let run = &runs[i];
                let example = index[run.example_id.as_str()];
                let outcome = judge_one(example, run, template_id, config);
                slots.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    let mut outcomes: Vec<JudgeOutcome> =
        slots.into_inner().unwrap().into_iter().flatten().collect();
    outcomes.sort_by(|a, b| (&a.example_id, &a.model).cmp(&(&b.example_id, &b.model)));

    let failures = outcomes.iter().filter(|o| !o.parse_ok).count();
    if !outcomes.is_empty()
        && failures as f64 > MAX_PARSE_FAILURE_FRACTION * outcomes.len() as f64
    {
        return Err(Error::JudgeAborted(format!(
            "{failures} of {} judgments failed to parse (> {:.0}%), calibration would be unsound",
            outcomes.len(),
            MAX_PARSE_FAILURE_FRACTION * 100.0
        )));
    }

    let verdicts: Vec<VerdictRecord> = outcomes
        .iter()
        .filter_map(|o| {
            o.verdict.map(|v| VerdictRecord {
                example_id: o.example_id.clone(),
                model: o.model.clone(),
                metric: o.metric.clone(),
                verdict: v,
            })
        })
        .collect();
    Ok((outcomes, verdicts))
}

fn judge_one(
    example: &TestExample,
    run: &RunRecord,
    template_id: TemplateId,
    config: &JudgeConfig,
) -> JudgeOutcome {
    let mut outcome = JudgeOutcome {
        example_id: run.example_id.clone(),
        model: run.model.clone(),
        metric: template_id.metric_name().to_string(),
        verdict: None,
        raw_response: String::new(),
        attempts: 0,
        parse_ok: false,
    };
    let prompt = match render_prompt(template_id, example, run) {
        Ok(p) => p,
        Err(_) => return outcome,
    };
    match submit(config, &prompt) {
        Ok((raw, attempts)) => {
            outcome.attempts = attempts;
            outcome.raw_response = raw;
            if let Ok(verdict) = parse_assessment(&outcome.raw_response, template_id) {
                outcome.verdict = Some(verdict);
                outcome.parse_ok = true;
            }
        }
        Err(_) => {}
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> TestExample {
        TestExample {
            id: "e1".into(),
            test_set: "t".into(),
            question: "What is the cap?".into(),
            contexts: vec!["C1".into(), "C2".into()],
            ground_truth: "The cap is 10. It applies yearly.".into(),
        }
    }

    fn run() -> RunRecord {
        RunRecord {
            example_id: "e1".into(),
            model: "m".into(),
            prompt_id: "p".into(),
            answer_text: "The cap is 10.".into(),
            is_idk: false,
            response_time_s: 0.5,
        }
    }

    #[test]
    fn context_template_embeds_all_contexts_in_order() {
        let p = render_prompt(TemplateId::NewCorrectness, &example(), &run()).unwrap();
        assert!(p.contains("<context>C1\n\nC2</context>"));
        assert!(p.contains("<question>What is the cap?</question>"));
        assert!(p.contains("<llm-answer>The cap is 10.</llm-answer>"));
        assert!(p.contains("<ideal-answer>The cap is 10. It applies yearly.</ideal-answer>"));
    }

    #[test]
    fn ground_truth_statements_get_unique_ids() {
        let p = render_prompt(TemplateId::LlmCorrectness, &example(), &run()).unwrap();
        assert!(p.contains("<ground-truth id=\"1\">The cap is 10.</ground-truth>"));
        assert!(p.contains("<ground-truth id=\"2\">It applies yearly.</ground-truth>"));
    }

    #[test]
    fn missing_ground_truth_is_render_error() {
        let mut ex = example();
        ex.ground_truth = "   ".into();
        let err = render_prompt(TemplateId::LlmCorrectness, &ex, &run()).unwrap_err();
        assert!(matches!(err, Error::Render(_)));
    }

    #[test]
    fn statement_splitting() {
        assert_eq!(
            split_statements("One. Two! Three?"),
            vec!["One.", "Two!", "Three?"]
        );
        assert_eq!(split_statements("Costs $1.50 each. Done."), vec!["Costs $1.50 each.", "Done."]);
        assert_eq!(split_statements("No terminator"), vec!["No terminator"]);
    }

    #[test]
    fn assessment_parses_with_reasoning_prefix() {
        let raw = "The answer omits the 45 day limit...reasoning...<assessment>incorrect</assessment>";
        assert_eq!(parse_assessment(raw, TemplateId::NewCorrectness).unwrap(), Verdict::Fail);
        let raw = "Looks right. <assessment>correct</assessment>";
        assert_eq!(parse_assessment(raw, TemplateId::NewCorrectness).unwrap(), Verdict::Pass);
    }

    #[test]
    fn empty_contradictions_is_pass() {
        assert_eq!(
            parse_assessment("<contradictions></contradictions>", TemplateId::LlmCorrectness)
                .unwrap(),
            Verdict::Pass
        );
        assert_eq!(
            parse_assessment("<contradictions>1, 3</contradictions>", TemplateId::LlmCorrectness)
                .unwrap(),
            Verdict::Fail
        );
    }

    #[test]
    fn out_of_vocabulary_is_parse_failure() {
        assert!(parse_assessment("<assessment>maybe</assessment>", TemplateId::NewCorrectness)
            .is_err());
        assert!(parse_assessment("no tags at all", TemplateId::NewCorrectness).is_err());
        assert!(parse_assessment(
            "<contradictions>the first one</contradictions>",
            TemplateId::LlmCorrectness
        )
        .is_err());
    }

    #[test]
    fn backoff_schedule_is_nondecreasing() {
        let config = JudgeConfig {
            backoff_base_s: 0.5,
            max_retries: 5,
            ..JudgeConfig::default()
        };
        let delays: Vec<Duration> = (1..=5).map(|a| backoff_delay(&config, a)).collect();
        for pair in delays.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
        assert_eq!(delays[0], Duration::from_secs_f64(0.5));
        assert_eq!(delays[3], Duration::from_secs_f64(4.0));
    }

    #[test]
    fn render_and_parse_are_consistent_end_to_end() {
        // an echo of the template's own example token must parse as fail
        let p = render_prompt(TemplateId::NewCorrectness, &example(), &run()).unwrap();
        assert!(p.contains("<assessment>incorrect</assessment>"));
        assert_eq!(parse_assessment(&p, TemplateId::NewCorrectness).unwrap(), Verdict::Fail);
    }
}
