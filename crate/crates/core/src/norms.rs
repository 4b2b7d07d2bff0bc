//! Norm extraction: two-shot prompts per industry and emotion, a cached
//! chat-completions client, and parsing of the `target, gender, reason`
//! answer into [`NormRecord`]s.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::Industry;
use crate::error::{Error, Result};
use crate::excerpt::{Emotion, Excerpt};
use crate::exec::Exec;
use crate::provider::{endpoint, request_key, DiskCache, HttpJson, ReplayFile, RetryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PersonaMode {
    /// Industry-specific personas ("you study Indian society").
    #[default]
    Cultural,
    /// One persona for every industry.
    Neutral,
}

const NEUTRAL_PERSONA: &str =
    "You are an experienced social scientist and you study the society depicted in this film.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub industry: Industry,
    pub emotion: Emotion,
    pub persona: String,
    pub instructions: String,
    pub output_format: String,
    pub exemplars: [Exemplar; 2],
}

fn ex(input: &str, output: &str) -> Exemplar {
    Exemplar {
        input: input.into(),
        output: output.into(),
    }
}

const TASK: &str = "Your task is to interpret the given movie dialogues spoken by multiple characters and identify";

impl PromptTemplate {
    /// The original prompt wording for Bollywood and Hollywood. Other
    /// industries reuse the Hollywood exemplars under the neutral persona.
    pub fn for_target(industry: &Industry, emotion: Emotion, persona: PersonaMode) -> Result<Self> {
        let mut t = match (industry, emotion) {
            (Industry::Bollywood, Emotion::Pride) => PromptTemplate {
                industry: industry.clone(),
                emotion,
                persona: "You are an experienced social scientist and you study Indian society.".into(),
                instructions: format!(
                    "{TASK}\n\n1. Who is feeling proud? Provide the gender. If agent or gender is not explicit, use the pronouns, name, and salutations to guess agent and gender.\n\n2. Identify the reason behind feeling proud. If not explicit, return NA."
                ),
                output_format: "The answer should be short and in below CSV format.\n<who_proud, gender, reason>".into(),
                exemplars: [
                    ex(
                        "Your mother had already given up on me because I was useless hopeless But you were the apple of her eye My child will make me proud look after me He'll support in my old-age But this kid left her all alone.",
                        "mother, male, provide care for old parents",
                    ),
                    ex(
                        "I've heard there's a promising young student in your school What's his name? He's made us proud in long jump, we are here to felicitate him Call him Show yourself, Raju Tempre",
                        "authority, NA, Sports achievement",
                    ),
                ],
            },
            (Industry::Bollywood, Emotion::Shame) => PromptTemplate {
                industry: industry.clone(),
                emotion,
                persona: "You are an experienced social scientist and you study Indian society.".into(),
                instructions: format!(
                    "{TASK}\n\n1. Who is being shamed? Predict the gender. If gender is not explicit, use the pronouns, name, and salutations to guess gender.\n\n2. Identify the primary reason for shaming"
                ),
                output_format: "The answer should be short and in CSV format.\n< shamed, gender, reason>".into(),
                exemplars: [
                    ex(
                        "And should we bow before others begging....them to marry our daughters? This shall not happen. Neither will the girls be alive here nor shall....we be ashamed of ourselves. You cannot kill the life which God has given. I won't let you commit the sin.",
                        "girl's parent, NA, not able to marry off their daughters",
                    ),
                    ex(
                        "Black marketers are now in the open. And the thieves too Politics is in a great mess Shame on this system. There's no democracy Get rid of these politicians The gong has struck..''Our hearts are swaying to it's beats''",
                        "System, NA, poor law and regulations",
                    ),
                ],
            },
            (Industry::Hollywood, Emotion::Pride) => PromptTemplate {
                industry: industry.clone(),
                emotion,
                persona: "You are an experienced social scientist and you study Western society.".into(),
                instructions: format!(
                    "{TASK}\n\n1. Who is feeling proud? Provide the gender. If agent or gender is not explicit, use the pronouns, name, and salutations to guess agent and gender.\n\n2. Identify the reason behind feeling proud? If not explicit, return NA."
                ),
                output_format: "The answer should be short and in below CSV format.\n<who_proud, gender, reason>".into(),
                exemplars: [
                    ex(
                        "I want to go to Worlds and win gold. I want to go to the 88 Olympics in Seoul and win gold. Good! I'm proud of you. Are you getting the support that you need?  What do you mean sir?",
                        "Sir, male, winning olympic gold",
                    ),
                    ex(
                        "Yes. Yes, I did.  I promise, this time I really got the promotion.  - I'm proud of you, son. - Thank you, sir.  Excuse me.  Hi, sweetheart.",
                        "father, male, for getting the promotion",
                    ),
                ],
            },
            (Industry::Hollywood, Emotion::Shame) => PromptTemplate {
                industry: industry.clone(),
                emotion,
                persona: "You are an experienced social scientist and you study western societies.".into(),
                instructions: format!(
                    "{TASK}\n\n1. Who is being shamed? Predict the gender. If gender is not explicit, use the pronouns, name, and salutations to guess gender.\n\n2. Identify the primary reason for shaming."
                ),
                output_format: "The answer should be short and in CSV format.\n< shamed, gender, reason, prevalence >".into(),
                exemplars: [
                    ex(
                        "You still owe me 100. Remember?  You stiffed Donny for 100 bucks?  Cheapskate. Shame on you.  Pay this man his C-note.  Now I know why they call you the Snake.",
                        "NA, male, not returning borrowed money",
                    ),
                    ex(
                        "You prey on your own people.  You steal from your own people.  Have you no shame!?  - Huh? - Well, we're still here.  Man: Mr. Markopolos, it's all yours.",
                        "Snake, male, stealing and preying on people",
                    ),
                ],
            },
            (Industry::Other(_), Emotion::Shame | Emotion::Pride) => {
                let mut t = Self::for_target(&Industry::Hollywood, emotion, PersonaMode::Neutral)?;
                t.industry = industry.clone();
                t
            }
            (_, Emotion::Control) => {
                return Err(Error::ConfigInvalid("no prompt template for control excerpts".into()))
            }
        };
        if persona == PersonaMode::Neutral {
            t.persona = NEUTRAL_PERSONA.into();
        }
        Ok(t)
    }

    pub fn name(&self) -> String {
        format!("{}/{}", self.industry, self.emotion)
    }

    pub fn system_message(&self) -> String {
        format!("{} {}\n\n{}", self.persona, self.instructions, self.output_format)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    fn new(role: &str, content: String) -> Self {
        ChatMessage {
            role: role.into(),
            content,
        }
    }
}

/// System instructions, the two exemplars as prior turns, then the excerpt.
pub fn render_prompt(template: &PromptTemplate, excerpt: &Excerpt) -> Result<Vec<ChatMessage>> {
    if excerpt.emotion != template.emotion {
        return Err(Error::TemplateMismatch {
            template: template.name(),
            excerpt: excerpt.excerpt_id.clone(),
        });
    }
    let mut msgs = vec![ChatMessage::new("system", template.system_message())];
    for e in &template.exemplars {
        msgs.push(ChatMessage::new("user", format!("Input: {}", e.input)));
        msgs.push(ChatMessage::new("assistant", format!("Output: {}", e.output)));
    }
    msgs.push(ChatMessage::new("user", format!("Input: {}", excerpt.text)));
    Ok(msgs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Unknown,
}

impl Gender {
    pub fn parse(s: &str) -> Self {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" => Gender::Male,
            "female" => Gender::Female,
            _ => Gender::Unknown,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormTriple {
    pub target: String,
    pub gender: Gender,
    pub reason: Option<String>,
}

fn is_na(s: &str) -> bool {
    let s = s.trim();
    s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("n/a")
}

/// Values a model might put in the unused fourth "prevalence" slot.
fn looks_like_prevalence(s: &str) -> bool {
    let s = s.trim().to_ascii_lowercase();
    if is_na(&s) {
        return true;
    }
    let num = s.trim_end_matches('%').trim();
    if num.parse::<f64>().is_ok() {
        return true;
    }
    matches!(
        s.as_str(),
        "low" | "medium" | "moderate" | "high" | "very high" | "very low" | "common" | "uncommon"
            | "very common" | "rare" | "frequent" | "infrequent"
    )
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &s[prefix.len()..])
}

/// Parse `target, gender, reason`. Only the first two commas split fields,
/// so reasons may contain commas. A trailing prevalence field is dropped.
pub fn parse_response(raw: &str) -> Result<NormTriple> {
    let line = raw
        .lines()
        .map(|l| {
            let l = l.trim();
            let l = strip_prefix_ci(l, "output:").unwrap_or(l).trim();
            l.trim_start_matches('<').trim_end_matches('>').trim()
        })
        .find(|l| !l.is_empty())
        .ok_or_else(|| Error::ParseFailure(raw.to_string()))?;

    let mut parts = line.splitn(3, ',');
    let (Some(target), Some(gender), Some(rest)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(Error::ParseFailure(raw.to_string()));
    };
    let mut reason = rest.trim();
    if let Some((head, tail)) = reason.rsplit_once(',') {
        if looks_like_prevalence(tail) {
            reason = head.trim();
        }
    }
    let target = target.trim();
    Ok(NormTriple {
        target: if target.is_empty() { "NA".into() } else { target.into() },
        gender: Gender::parse(gender),
        reason: (!is_na(reason)).then(|| reason.to_string()),
    })
}

/// Inverse of [`parse_response`] for well-formed triples.
pub fn format_triple(t: &NormTriple) -> String {
    let gender = match t.gender {
        Gender::Unknown => "NA",
        g => g.as_str(),
    };
    format!("{}, {}, {}", t.target, gender, t.reason.as_deref().unwrap_or("NA"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub concurrency: usize,
    pub max_retries: u32,
    pub backoff_ms: Vec<u64>,
    pub cache_dir: Option<PathBuf>,
    pub replay: Option<PathBuf>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub persona: PersonaMode,
}

impl Default for ChatConfig {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        ChatConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            temperature: 0.0,
            timeout_secs: 60,
            concurrency: 4,
            max_retries: retry.max_retries,
            backoff_ms: retry.backoff_ms,
            cache_dir: None,
            replay: None,
            api_key_env: "OPENAI_API_KEY".into(),
            persona: PersonaMode::Cultural,
        }
    }
}

impl ChatConfig {
    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            backoff_ms: self.backoff_ms.clone(),
        }
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.cache_dir, &mut self.replay].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Something that answers a chat request with raw text.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, model: &str, temperature: f64, messages: &[ChatMessage]) -> Result<String>;
}

/// OpenAI-compatible `/chat/completions` endpoint with retries.
pub struct HttpChatProvider {
    http: HttpJson,
    url: String,
    retry: RetryPolicy,
}

impl HttpChatProvider {
    pub fn new(cfg: &ChatConfig) -> Self {
        let key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        HttpChatProvider {
            http: HttpJson::new(Duration::from_secs(cfg.timeout_secs), key),
            url: endpoint(&cfg.base_url, "chat/completions"),
            retry: cfg.retry(),
        }
    }
}

impl ChatProvider for HttpChatProvider {
    fn complete(&self, model: &str, temperature: f64, messages: &[ChatMessage]) -> Result<String> {
        let body = json!({ "model": model, "temperature": temperature, "messages": messages });
        let resp = self.retry.run(|| self.http.post(&self.url, &body), std::thread::sleep)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::ParseFailure(format!("no message content in {resp}")))
    }
}

/// Cache key of a chat request: hash of the model name and messages.
pub fn chat_key(model: &str, messages: &[ChatMessage]) -> String {
    request_key(&json!({ "model": model, "messages": messages }))
}

/// Layered chat client: disk cache, then replay file, then the remote
/// provider (absent when offline). Remote answers are written to the cache.
pub struct ChatClient {
    model: String,
    temperature: f64,
    cache: Option<DiskCache>,
    replay: Option<ReplayFile>,
    remote: Option<Box<dyn ChatProvider>>,
    remote_calls: AtomicUsize,
}

impl ChatClient {
    pub fn new(model: &str, temperature: f64) -> Self {
        ChatClient {
            model: model.into(),
            temperature,
            cache: None,
            replay: None,
            remote: None,
            remote_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, cache: DiskCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_replay(mut self, replay: ReplayFile) -> Self {
        self.replay = Some(replay);
        self
    }

    pub fn with_remote(mut self, remote: Box<dyn ChatProvider>) -> Self {
        self.remote = Some(remote);
        self
    }

    pub fn from_config(cfg: &ChatConfig, offline: bool) -> Result<Self> {
        let mut c = ChatClient::new(&cfg.model, cfg.temperature);
        if let Some(dir) = &cfg.cache_dir {
            c = c.with_cache(DiskCache::new(dir));
        }
        if let Some(path) = &cfg.replay {
            c = c.with_replay(ReplayFile::load(path)?);
        }
        if !offline {
            c = c.with_remote(Box::new(HttpChatProvider::new(cfg)));
        }
        Ok(c)
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    /// Number of requests that reached the remote provider.
    pub fn remote_calls(&self) -> usize {
        self.remote_calls.load(Ordering::Relaxed)
    }

    pub fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        let key = chat_key(&self.model, messages);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(hit);
        }
        if let Some(hit) = self.replay.as_ref().and_then(|r| r.get(&key)) {
            return Ok(hit.to_string());
        }
        let Some(remote) = &self.remote else {
            return Err(Error::ProviderUnavailable(format!(
                "offline and no cached or replayed response for request {key}"
            )));
        };
        self.remote_calls.fetch_add(1, Ordering::Relaxed);
        let text = remote.complete(&self.model, self.temperature, messages)?;
        if let Some(cache) = &self.cache {
            cache.put(&key, &text)?;
        }
        Ok(text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormRecord {
    pub excerpt_id: String,
    pub industry: Industry,
    pub emotion: Emotion,
    pub target: String,
    pub gender: Gender,
    pub reason: Option<String>,
    pub raw_response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormFailure {
    pub excerpt_id: String,
    pub industry: Industry,
    pub emotion: Emotion,
    /// `parse`, `provider`, `template` or `other`.
    pub kind: String,
    pub message: String,
    pub raw_response: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormOutcome {
    pub records: Vec<NormRecord>,
    pub failures: Vec<NormFailure>,
}

impl NormOutcome {
    pub fn provider_failures(&self) -> usize {
        self.failures.iter().filter(|f| f.kind == "provider").count()
    }
}

/// Prompt templates keyed by industry and emotion.
#[derive(Debug, Clone, Default)]
pub struct TemplateSet {
    templates: BTreeMap<(Industry, Emotion), PromptTemplate>,
}

impl TemplateSet {
    pub fn for_industries<'a>(industries: impl IntoIterator<Item = &'a Industry>, persona: PersonaMode) -> Result<Self> {
        let mut templates = BTreeMap::new();
        for ind in industries {
            for emo in [Emotion::Shame, Emotion::Pride] {
                templates.insert((ind.clone(), emo), PromptTemplate::for_target(ind, emo, persona)?);
            }
        }
        Ok(TemplateSet { templates })
    }

    pub fn insert(&mut self, t: PromptTemplate) {
        self.templates.insert((t.industry.clone(), t.emotion), t);
    }

    pub fn get(&self, industry: &Industry, emotion: Emotion) -> Option<&PromptTemplate> {
        self.templates.get(&(industry.clone(), emotion))
    }
}

fn failure_kind(e: &Error) -> &'static str {
    match e {
        Error::ParseFailure(_) => "parse",
        e if e.is_provider_error() => "provider",
        Error::TemplateMismatch { .. } | Error::ConfigInvalid(_) => "template",
        _ => "other",
    }
}

fn extract_one(ex: &Excerpt, templates: &TemplateSet, client: &ChatClient) -> std::result::Result<NormRecord, NormFailure> {
    let fail = |e: Error, raw: Option<String>| NormFailure {
        excerpt_id: ex.excerpt_id.clone(),
        industry: ex.industry.clone(),
        emotion: ex.emotion,
        kind: failure_kind(&e).into(),
        message: e.to_string(),
        raw_response: raw,
    };
    let template = templates.get(&ex.industry, ex.emotion).ok_or_else(|| {
        fail(
            Error::ConfigInvalid(format!("no template for {}/{}", ex.industry, ex.emotion)),
            None,
        )
    })?;
    let msgs = render_prompt(template, ex).map_err(|e| fail(e, None))?;
    let raw = client.complete(&msgs).map_err(|e| fail(e, None))?;
    let t = parse_response(&raw).map_err(|e| fail(e, Some(raw.clone())))?;
    Ok(NormRecord {
        excerpt_id: ex.excerpt_id.clone(),
        industry: ex.industry.clone(),
        emotion: ex.emotion,
        target: t.target,
        gender: t.gender,
        reason: t.reason,
        raw_response: raw,
    })
}

/// One attempt per excerpt. Errors are collected, never raised, and output
/// order follows input order.
pub fn extract_norms(
    excerpts: &[Excerpt],
    templates: &TemplateSet,
    client: &ChatClient,
    concurrency: usize,
) -> NormOutcome {
    extract_norms_with(Exec::default(), excerpts, templates, client, concurrency)
}

pub fn extract_norms_with(
    exec: Exec,
    excerpts: &[Excerpt],
    templates: &TemplateSet,
    client: &ChatClient,
    concurrency: usize,
) -> NormOutcome {
    let results = exec.map_bounded(excerpts, concurrency.max(1), |ex| extract_one(ex, templates, client));
    let mut out = NormOutcome::default();
    for r in results {
        match r {
            Ok(rec) => out.records.push(rec),
            Err(f) => out.failures.push(f),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenderCounts {
    pub male: usize,
    pub female: usize,
    pub not_known: usize,
    /// Records where no reason was predicted. Not part of `total`.
    pub no_reason: usize,
}

impl GenderCounts {
    pub fn total(&self) -> usize {
        self.male + self.female + self.not_known
    }
}

/// Norm counts per industry, emotion and target gender. Only records with a
/// predicted reason count as norms.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormStats {
    pub rows: BTreeMap<(Industry, Emotion), GenderCounts>,
}

pub fn norm_stats(records: &[NormRecord]) -> NormStats {
    let mut rows: BTreeMap<(Industry, Emotion), GenderCounts> = BTreeMap::new();
    for r in records {
        let c = rows.entry((r.industry.clone(), r.emotion)).or_default();
        if r.reason.is_none() {
            c.no_reason += 1;
            continue;
        }
        match r.gender {
            Gender::Male => c.male += 1,
            Gender::Female => c.female += 1,
            Gender::Unknown => c.not_known += 1,
        }
    }
    NormStats { rows }
}

impl NormStats {
    pub fn get(&self, industry: &Industry, emotion: Emotion) -> GenderCounts {
        self.rows.get(&(industry.clone(), emotion)).copied().unwrap_or_default()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["industry", "emotion", "male", "female", "not_known", "total", "no_reason"])?;
        for ((ind, emo), c) in &self.rows {
            wtr.write_record([
                ind.to_string(),
                emo.to_string(),
                c.male.to_string(),
                c.female.to_string(),
                c.not_known.to_string(),
                c.total().to_string(),
                c.no_reason.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::Mutex;

    fn excerpt(id: &str, industry: Industry, emotion: Emotion, text: &str) -> Excerpt {
        Excerpt {
            excerpt_id: id.into(),
            movie_id: "m".into(),
            industry,
            emotion,
            anchor_index: Some(0),
            context_indices: vec![0],
            text: text.into(),
            matched_form: None,
            anchor_text: None,
        }
    }

    struct Fixed(String);
    impl ChatProvider for Fixed {
        fn complete(&self, _: &str, _: f64, _: &[ChatMessage]) -> Result<String> {
            Ok(self.0.clone())
        }
    }

    struct Failing(Mutex<usize>);
    impl ChatProvider for Failing {
        fn complete(&self, _: &str, _: f64, _: &[ChatMessage]) -> Result<String> {
            *self.0.lock().unwrap() += 1;
            Err(Error::ProviderUnavailable("503".into()))
        }
    }

    #[test]
    fn render_contains_exemplars() {
        let t = PromptTemplate::for_target(&Industry::Bollywood, Emotion::Pride, PersonaMode::Cultural).unwrap();
        let e = excerpt("a", Industry::Bollywood, Emotion::Pride, "so proud of you");
        let msgs = render_prompt(&t, &e).unwrap();
        assert_eq!(msgs.len(), 6);
        assert!(msgs[0].content.contains("you study Indian society"));
        assert!(msgs[0].content.contains("Who is feeling proud?"));
        assert!(msgs.iter().any(|m| m.content == "Output: mother, male, provide care for old parents"));
        assert_eq!(msgs[5].content, "Input: so proud of you");

        let t = PromptTemplate::for_target(&Industry::Hollywood, Emotion::Shame, PersonaMode::Cultural).unwrap();
        let e = excerpt("b", Industry::Hollywood, Emotion::Shame, "shame on you");
        let msgs = render_prompt(&t, &e).unwrap();
        assert!(msgs.iter().any(|m| m.content.contains("Snake, male, stealing and preying on people")));
        assert!(msgs[0].content.contains("Who is being shamed?"));

        let e = excerpt("c", Industry::Hollywood, Emotion::Pride, "proud");
        assert!(matches!(render_prompt(&t, &e), Err(Error::TemplateMismatch { .. })));
    }

    #[test]
    fn neutral_persona_and_other_industries() {
        let t = PromptTemplate::for_target(&Industry::Bollywood, Emotion::Shame, PersonaMode::Neutral).unwrap();
        assert_eq!(t.persona, NEUTRAL_PERSONA);
        assert!(t.exemplars[0].output.starts_with("girl's parent"));
        let other = Industry::Other("nollywood".into());
        let t = PromptTemplate::for_target(&other, Emotion::Pride, PersonaMode::Cultural).unwrap();
        assert_eq!(t.persona, NEUTRAL_PERSONA);
        assert_eq!(t.industry, other);
        assert!(PromptTemplate::for_target(&other, Emotion::Control, PersonaMode::Cultural).is_err());
    }

    #[test]
    fn parse_quoted_exemplars() {
        let t = parse_response("mother, male, provide care for old parents").unwrap();
        assert_eq!(
            t,
            NormTriple {
                target: "mother".into(),
                gender: Gender::Male,
                reason: Some("provide care for old parents".into())
            }
        );
        let t = parse_response("girl's parent, NA, not able to marry off their daughters").unwrap();
        assert_eq!(t.target, "girl's parent");
        assert_eq!(t.gender, Gender::Unknown);
        assert_eq!(t.reason.as_deref(), Some("not able to marry off their daughters"));
        let t = parse_response("Snake, male, stealing and preying on people").unwrap();
        assert_eq!(format_triple(&t), "Snake, male, stealing and preying on people");
        assert!(matches!(parse_response("he was ashamed"), Err(Error::ParseFailure(_))));
        assert!(matches!(parse_response("   \n "), Err(Error::ParseFailure(_))));
    }

    #[test]
    fn parse_variants() {
        let t = parse_response("Output: <son, Male, achievements and growth, in school>").unwrap();
        assert_eq!(t.gender, Gender::Male);
        assert_eq!(t.reason.as_deref(), Some("achievements and growth, in school"));
        let t = parse_response("\nOUTPUT: NA, male, not returning borrowed money, high\n").unwrap();
        assert_eq!(t.reason.as_deref(), Some("not returning borrowed money"));
        let t = parse_response("NA, NA, NA").unwrap();
        assert_eq!(t.gender, Gender::Unknown);
        assert_eq!(t.reason, None);
        let t = parse_response("x, FEMALE, N/A, 10%").unwrap();
        assert_eq!(t.gender, Gender::Female);
        assert_eq!(t.reason, None);
        let t = parse_response("x, woman, y").unwrap();
        assert_eq!(t.gender, Gender::Unknown);
    }

    #[test]
    fn cache_hit_skips_network() {
        let dir = tempfile::tempdir().unwrap();
        let client = ChatClient::new("m", 0.0)
            .with_cache(DiskCache::new(dir.path()))
            .with_remote(Box::new(Fixed("a, male, b".into())));
        let msgs = vec![ChatMessage::new("user", "hi".into())];
        assert_eq!(client.complete(&msgs).unwrap(), "a, male, b");
        assert_eq!(client.complete(&msgs).unwrap(), "a, male, b");
        assert_eq!(client.remote_calls(), 1);

        // warm cache serves an offline client
        let offline = ChatClient::new("m", 0.0).with_cache(DiskCache::new(dir.path()));
        assert_eq!(offline.complete(&msgs).unwrap(), "a, male, b");
        let other = vec![ChatMessage::new("user", "other".into())];
        assert!(matches!(offline.complete(&other), Err(Error::ProviderUnavailable(_))));
    }

    #[test]
    fn replay_serves_by_key() {
        let msgs = vec![ChatMessage::new("user", "hi".into())];
        let mut replay = ReplayFile::default();
        replay.insert(chat_key("m", &msgs), "verbatim text".into());
        let client = ChatClient::new("m", 0.0).with_replay(replay);
        assert_eq!(client.complete(&msgs).unwrap(), "verbatim text");
        // a different model is a different request
        assert_ne!(chat_key("m2", &msgs), chat_key("m", &msgs));
    }

    #[test]
    fn extraction_batches() {
        let ts = TemplateSet::for_industries([&Industry::Bollywood], PersonaMode::Cultural).unwrap();
        let exs: Vec<Excerpt> = (0..10)
            .map(|i| excerpt(&format!("e{i}"), Industry::Bollywood, Emotion::Shame, &format!("shame {i}")))
            .collect();
        let client = ChatClient::new("m", 0.0).with_remote(Box::new(Fixed("father, male, debts".into())));
        let out = extract_norms(&exs, &ts, &client, 4);
        assert_eq!(out.records.len(), 10);
        assert!(out.failures.is_empty());
        assert_eq!(out.records[3].excerpt_id, "e3");

        let client = ChatClient::new("m", 0.0).with_remote(Box::new(Fixed("NA, NA, NA".into())));
        let out = extract_norms(&exs[..1], &ts, &client, 1);
        assert_eq!(out.records[0].gender, Gender::Unknown);
        assert_eq!(out.records[0].reason, None);
        assert_eq!(norm_stats(&out.records).get(&Industry::Bollywood, Emotion::Shame).no_reason, 1);
    }

    #[test]
    fn malformed_response_is_reported() {
        let ts = TemplateSet::for_industries([&Industry::Hollywood], PersonaMode::Cultural).unwrap();
        let exs: Vec<Excerpt> = (0..6)
            .map(|i| excerpt(&format!("e{i}"), Industry::Hollywood, Emotion::Pride, &format!("proud {i}")))
            .collect();
        let mut replay = ReplayFile::default();
        for (i, e) in exs.iter().enumerate() {
            let msgs = render_prompt(ts.get(&e.industry, e.emotion).unwrap(), e).unwrap();
            let resp = if i == 4 { "no commas here".to_string() } else { format!("son, male, reason {i}") };
            replay.insert(chat_key("m", &msgs), resp);
        }
        let client = ChatClient::new("m", 0.0).with_replay(replay);
        let out = extract_norms_with(Exec::Sequential, &exs, &ts, &client, 2);
        assert_eq!(out.records.len(), 5);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].kind, "parse");
        assert_eq!(out.failures[0].raw_response.as_deref(), Some("no commas here"));
        assert_eq!(out.records.len() + out.failures.len(), exs.len());
    }

    #[test]
    fn failing_provider_and_missing_template() {
        let ts = TemplateSet::for_industries([&Industry::Hollywood], PersonaMode::Cultural).unwrap();
        let client = ChatClient::new("m", 0.0).with_remote(Box::new(Failing(Mutex::new(0))));
        let exs = vec![
            excerpt("a", Industry::Hollywood, Emotion::Shame, "shame"),
            excerpt("b", Industry::Bollywood, Emotion::Shame, "shame"),
        ];
        let out = extract_norms(&exs, &ts, &client, 1);
        assert_eq!(out.failures.len(), 2);
        assert_eq!(out.failures[0].kind, "provider");
        assert_eq!(out.failures[1].kind, "template");
        assert_eq!(out.provider_failures(), 1);
    }

    fn record(ind: Industry, emo: Emotion, g: Gender) -> NormRecord {
        NormRecord {
            excerpt_id: String::new(),
            industry: ind,
            emotion: emo,
            target: "t".into(),
            gender: g,
            reason: Some("r".into()),
            raw_response: String::new(),
        }
    }

    #[test]
    fn stats_reproduce_table_row() {
        let mut recs = Vec::new();
        for (g, n) in [(Gender::Male, 3102), (Gender::Female, 1306), (Gender::Unknown, 913)] {
            recs.extend((0..n).map(|_| record(Industry::Bollywood, Emotion::Shame, g)));
        }
        let s = norm_stats(&recs);
        let c = s.get(&Industry::Bollywood, Emotion::Shame);
        assert_eq!((c.male, c.female, c.not_known, c.total()), (3102, 1306, 913, 5321));
        assert_eq!(norm_stats(&[]).rows.len(), 0);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "industry,emotion,male,female,not_known,total,no_reason\nBollywood,shame,3102,1306,913,5321,0\n"
        );
    }

    proptest! {
        #[test]
        fn format_parse_round_trip(
            target in "[a-z][a-z' ]{0,15}[a-z]",
            gender in prop_oneof![Just(Gender::Male), Just(Gender::Female), Just(Gender::Unknown)],
            reason in proptest::option::of("[a-z][a-z ]{0,20}[a-z](, [a-z]+ [a-z]+)?"),
        ) {
            prop_assume!(reason.as_deref().is_none_or(|r| !is_na(r)));
            let t = NormTriple { target, gender, reason };
            prop_assert_eq!(parse_response(&format_triple(&t)).unwrap(), t);
        }

        #[test]
        fn parse_never_panics(raw in "\\PC{0,80}") {
            let _ = parse_response(&raw);
        }
    }
}
