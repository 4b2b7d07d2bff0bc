//! Keyword-anchored dialogue excerpts, exclusion phrases and control sampling.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Industry, MovieRecord, SubtitleDocument};
use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Shame,
    Pride,
    Control,
}

impl Emotion {
    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Shame => "shame",
            Emotion::Pride => "pride",
            Emotion::Control => "control",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "shame" => Ok(Emotion::Shame),
            "pride" => Ok(Emotion::Pride),
            "control" => Ok(Emotion::Control),
            other => Err(Error::ConfigInvalid(format!("unknown emotion `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchLexeme {
    pub lemma: String,
    pub forms: BTreeSet<String>,
}

impl SearchLexeme {
    pub fn new<I, S>(lemma: &str, forms: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let lex = SearchLexeme {
            lemma: lemma.to_string(),
            forms: forms.into_iter().map(|f| f.as_ref().to_string()).collect(),
        };
        lex.validate()?;
        Ok(lex)
    }

    fn validate(&self) -> Result<()> {
        self.emotion()?;
        if self.forms.is_empty() {
            return Err(Error::ConfigInvalid(format!("lexeme `{}` has no forms", self.lemma)));
        }
        for f in &self.forms {
            let single = keyword_tokens(f).count() == 1 && keyword_tokens(f).next().as_deref() == Some(f);
            if !single {
                return Err(Error::ConfigInvalid(format!(
                    "form `{f}` of `{}` must be a single lowercase token",
                    self.lemma
                )));
            }
        }
        Ok(())
    }

    pub fn emotion(&self) -> Result<Emotion> {
        match self.lemma.parse()? {
            Emotion::Control => Err(Error::ConfigInvalid("`control` is not a search lemma".into())),
            e => Ok(e),
        }
    }
}

/// Shame and pride word forms. `shameless` is included alongside the base
/// forms since it is a common derivative in subtitles.
pub fn default_lexemes() -> Vec<SearchLexeme> {
    vec![
        SearchLexeme::new(
            "shame",
            ["shame", "shamed", "shameful", "ashamed", "shameless"],
        )
        .unwrap(),
        SearchLexeme::new("pride", ["proud", "prouder", "proudly", "pride"]).unwrap(),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionRule {
    pub phrase: String,
    #[serde(rename = "emotion")]
    pub applies_to: Emotion,
}

pub fn default_exclusions() -> Vec<ExclusionRule> {
    let rule = |p: &str, e| ExclusionRule {
        phrase: p.into(),
        applies_to: e,
    };
    vec![
        rule("what a shame", Emotion::Shame),
        rule("it's a shame", Emotion::Shame),
        rule("a shame", Emotion::Shame),
        rule("proudly presents", Emotion::Pride),
    ]
}

/// Search configuration as stored on disk. Rule ids are positions in
/// `exclusions`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordConfig {
    pub lexemes: Vec<SearchLexeme>,
    #[serde(default)]
    pub exclusions: Vec<ExclusionRule>,
}

impl Default for KeywordConfig {
    fn default() -> Self {
        KeywordConfig {
            lexemes: default_lexemes(),
            exclusions: default_exclusions(),
        }
    }
}

impl KeywordConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: KeywordConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::unreadable(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        for l in &self.lexemes {
            l.validate()?;
        }
        for r in &self.exclusions {
            if r.phrase.trim().is_empty() {
                return Err(Error::ConfigInvalid("empty exclusion phrase".into()));
            }
            if r.phrase != r.phrase.to_lowercase() {
                return Err(Error::ConfigInvalid(format!(
                    "exclusion phrase `{}` must be lowercase",
                    r.phrase
                )));
            }
        }
        Ok(())
    }
}

/// Lowercased tokens split on every non-alphanumeric character.
pub fn keyword_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordHit {
    pub line: usize,
    pub lexeme: usize,
    pub form: String,
}

/// One hit per (line, lexeme); the first matching token supplies the form.
pub fn find_keyword_lines(doc: &SubtitleDocument, lexemes: &[SearchLexeme]) -> Vec<KeywordHit> {
    let mut hits = Vec::new();
    for (i, line) in doc.lines.iter().enumerate() {
        let tokens: Vec<String> = keyword_tokens(&line.text).collect();
        for (li, lex) in lexemes.iter().enumerate() {
            if let Some(t) = tokens.iter().find(|t| lex.forms.contains(t.as_str())) {
                hits.push(KeywordHit {
                    line: i,
                    lexeme: li,
                    form: t.clone(),
                });
            }
        }
    }
    hits
}

fn line_has_keyword(text: &str, lexemes: &[SearchLexeme]) -> bool {
    keyword_tokens(text).any(|t| lexemes.iter().any(|l| l.forms.contains(&t)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowOptions {
    /// Lines taken on each side of the anchor.
    pub radius: usize,
    /// Windows with fewer whitespace tokens grow by one line on each side.
    pub min_tokens: usize,
}

impl Default for WindowOptions {
    fn default() -> Self {
        WindowOptions {
            radius: 2,
            min_tokens: 25,
        }
    }
}

pub fn context_window(
    doc: &SubtitleDocument,
    anchor: usize,
    opts: &WindowOptions,
) -> RangeInclusive<usize> {
    let last = doc.lines.len().saturating_sub(1);
    let lo = anchor.saturating_sub(opts.radius);
    let hi = (anchor + opts.radius).min(last);
    let tokens: usize = doc.lines[lo..=hi]
        .iter()
        .map(|l| l.text.split_whitespace().count())
        .sum();
    if tokens < opts.min_tokens {
        lo.saturating_sub(1)..=(hi + 1).min(last)
    } else {
        lo..=hi
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excerpt {
    pub excerpt_id: String,
    pub movie_id: String,
    pub industry: Industry,
    pub emotion: Emotion,
    #[serde(rename = "anchor")]
    pub anchor_index: Option<usize>,
    #[serde(rename = "context")]
    pub context_indices: Vec<usize>,
    pub text: String,
    pub matched_form: Option<String>,
    /// Text of the anchor line; exclusion phrases are matched against it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_text: Option<String>,
}

fn window_text(doc: &SubtitleDocument, range: &RangeInclusive<usize>) -> String {
    doc.lines[range.clone()]
        .iter()
        .map(|l| l.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Excerpt around a keyword hit.
pub fn build_excerpt(
    doc: &SubtitleDocument,
    industry: &Industry,
    hit: &KeywordHit,
    lexemes: &[SearchLexeme],
    opts: &WindowOptions,
) -> Result<Excerpt> {
    let emotion = lexemes[hit.lexeme].emotion()?;
    let range = context_window(doc, hit.line, opts);
    Ok(Excerpt {
        excerpt_id: format!("{}:{}:{}", doc.movie_id, hit.line, emotion),
        movie_id: doc.movie_id.clone(),
        industry: industry.clone(),
        emotion,
        anchor_index: Some(hit.line),
        context_indices: range.clone().collect(),
        text: window_text(doc, &range),
        matched_form: Some(hit.form.clone()),
        anchor_text: Some(doc.lines[hit.line].text.clone()),
    })
}

/// All keyword-anchored excerpts, in document then line then lexeme order.
pub fn extract_emotion_excerpts(
    movies: &[(MovieRecord, SubtitleDocument)],
    lexemes: &[SearchLexeme],
    opts: &WindowOptions,
) -> Result<Vec<Excerpt>> {
    extract_emotion_excerpts_with(Exec::default(), movies, lexemes, opts)
}

pub fn extract_emotion_excerpts_with(
    exec: Exec,
    movies: &[(MovieRecord, SubtitleDocument)],
    lexemes: &[SearchLexeme],
    opts: &WindowOptions,
) -> Result<Vec<Excerpt>> {
    let per_doc = exec.map(movies, |(m, d)| {
        find_keyword_lines(d, lexemes)
            .iter()
            .map(|h| build_excerpt(d, &m.industry, h, lexemes, opts))
            .collect::<Result<Vec<_>>>()
    });
    let mut out = Vec::new();
    for r in per_doc {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedExcerpt {
    pub rule_id: usize,
    pub phrase: String,
    pub excerpt: Excerpt,
}

#[derive(Debug, Clone, Default)]
pub struct ExclusionOutcome {
    pub kept: Vec<Excerpt>,
    pub excluded: Vec<ExcludedExcerpt>,
}

fn fold_apostrophes(s: &str) -> String {
    s.to_lowercase().replace(['\u{2019}', '\u{2018}'], "'")
}

/// Whether `phrase` occurs in `text` starting and ending on token boundaries.
pub fn contains_phrase(text: &str, phrase: &str) -> bool {
    let text = fold_apostrophes(text);
    let phrase = fold_apostrophes(phrase);
    if phrase.is_empty() {
        return false;
    }
    let bytes = text.as_bytes();
    let mut from = 0;
    while let Some(pos) = text[from..].find(&phrase) {
        let start = from + pos;
        let end = start + phrase.len();
        let before_ok = text[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = text[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        // advance by one character
        from = start + text[start..].chars().next().map_or(1, char::len_utf8);
        if from >= bytes.len() {
            break;
        }
    }
    false
}

/// Split excerpts by exclusion phrases found on the anchor line. The first
/// matching rule (in configuration order) is recorded.
pub fn apply_exclusions(excerpts: Vec<Excerpt>, rules: &[ExclusionRule]) -> ExclusionOutcome {
    let mut out = ExclusionOutcome::default();
    for ex in excerpts {
        let anchor = ex.anchor_text.as_deref().unwrap_or("");
        let hit = rules
            .iter()
            .enumerate()
            .find(|(_, r)| r.applies_to == ex.emotion && contains_phrase(anchor, &r.phrase));
        match hit {
            Some((id, r)) => out.excluded.push(ExcludedExcerpt {
                rule_id: id,
                phrase: r.phrase.clone(),
                excerpt: ex,
            }),
            None => out.kept.push(ex),
        }
    }
    out
}

/// Number of control windows for a given emotion-excerpt count.
pub fn control_target(emotion_count: usize, ratio: f64) -> usize {
    (emotion_count as f64 * ratio).round() as usize
}

/// Uniformly sample `target` control windows: windows (after the short-dialogue
/// extension) that contain no keyword form and do not overlap an emotion
/// excerpt of the same movie.
pub fn sample_control_set(
    movies: &[(MovieRecord, SubtitleDocument)],
    emotion_excerpts: &[Excerpt],
    lexemes: &[SearchLexeme],
    target: usize,
    opts: &WindowOptions,
    seed: u64,
) -> Result<Vec<Excerpt>> {
    let mut taken: HashMap<&str, BTreeSet<usize>> = HashMap::new();
    for ex in emotion_excerpts {
        taken
            .entry(ex.movie_id.as_str())
            .or_default()
            .extend(ex.context_indices.iter().copied());
    }

    let mut eligible: Vec<(usize, usize, RangeInclusive<usize>)> = Vec::new();
    for (mi, (_, doc)) in movies.iter().enumerate() {
        let flagged: Vec<bool> = doc
            .lines
            .iter()
            .map(|l| line_has_keyword(&l.text, lexemes))
            .collect();
        let used = taken.get(doc.movie_id.as_str());
        for i in 0..doc.lines.len() {
            let w = context_window(doc, i, opts);
            let clean = w.clone().all(|j| !flagged[j])
                && used.is_none_or(|u| w.clone().all(|j| !u.contains(&j)));
            if clean {
                eligible.push((mi, i, w));
            }
        }
    }
    if target > eligible.len() {
        return Err(Error::InsufficientEligibleLines {
            needed: target,
            available: eligible.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = rand::seq::index::sample(&mut rng, eligible.len(), target).into_vec();
    picks.sort_unstable();

    Ok(picks
        .into_iter()
        .map(|p| {
            let (mi, line, ref w) = eligible[p];
            let (movie, doc) = &movies[mi];
            Excerpt {
                excerpt_id: format!("{}:{}:control", doc.movie_id, line),
                movie_id: doc.movie_id.clone(),
                industry: movie.industry.clone(),
                emotion: Emotion::Control,
                anchor_index: None,
                context_indices: w.clone().collect(),
                text: window_text(doc, w),
                matched_form: None,
                anchor_text: None,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionCounts {
    pub shame: usize,
    pub pride: usize,
    pub control: usize,
}

impl EmotionCounts {
    pub fn total(&self) -> usize {
        self.shame + self.pride + self.control
    }
}

pub fn dataset_summary(excerpts: &[Excerpt]) -> BTreeMap<Industry, EmotionCounts> {
    let mut out: BTreeMap<Industry, EmotionCounts> = BTreeMap::new();
    for ex in excerpts {
        let c = out.entry(ex.industry.clone()).or_default();
        match ex.emotion {
            Emotion::Shame => c.shame += 1,
            Emotion::Pride => c.pride += 1,
            Emotion::Control => c.control += 1,
        }
    }
    out
}

pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, rows: &[T]) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
