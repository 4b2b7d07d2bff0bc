//! Subtitle ingestion: SRT/plain parsing, text cleanup and corpus assembly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Culture label of a movie.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Industry {
    Bollywood,
    Hollywood,
    Other(String),
}

impl Industry {
    pub fn as_str(&self) -> &str {
        match self {
            Industry::Bollywood => "Bollywood",
            Industry::Hollywood => "Hollywood",
            Industry::Other(s) => s,
        }
    }
}

impl fmt::Display for Industry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Industry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "" => Err(Error::ConfigInvalid("empty industry label".into())),
            "bollywood" => Ok(Industry::Bollywood),
            "hollywood" => Ok(Industry::Hollywood),
            _ => Ok(Industry::Other(s.to_string())),
        }
    }
}

impl Serialize for Industry {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Industry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MovieRecord {
    pub movie_id: String,
    pub industry: Industry,
    /// `None` when neither the manifest nor the file name yields a year.
    pub year: Option<i32>,
    pub title: String,
    pub source_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueLine {
    #[serde(rename = "i")]
    pub index: usize,
    #[serde(rename = "t")]
    pub text: String,
    #[serde(rename = "s", default, skip_serializing_if = "Option::is_none")]
    pub start_ms: Option<u64>,
    #[serde(rename = "e", default, skip_serializing_if = "Option::is_none")]
    pub end_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SubtitleDocument {
    pub movie_id: String,
    pub lines: Vec<DialogueLine>,
}

impl SubtitleDocument {
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.lines.iter().map(|l| l.text.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubtitleFormat {
    Srt,
    Plain,
}

impl SubtitleFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "srt" => Some(SubtitleFormat::Srt),
            "txt" => Some(SubtitleFormat::Plain),
            _ => None,
        }
    }
}

impl FromStr for SubtitleFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "srt" => Ok(SubtitleFormat::Srt),
            "plain" | "txt" => Ok(SubtitleFormat::Plain),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

fn tag_patterns() -> &'static (Regex, Regex) {
    static PATTERNS: OnceLock<(Regex, Regex)> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        (
            Regex::new(r"<[^>]*>").unwrap(),
            Regex::new(r"\{[^}]*\}").unwrap(),
        )
    })
}

fn is_unprintable(c: char) -> bool {
    let cp = c as u32;
    c == '\u{FFFD}'
        || (c.is_control() && !c.is_whitespace())
        // zero-width and bidi formatting characters
        || (0x200B..=0x200F).contains(&cp)
        || (0x202A..=0x202E).contains(&cp)
        || (0x2060..=0x206F).contains(&cp)
        || cp == 0xFEFF
        || cp == 0x00AD
        // private use areas
        || (0xE000..=0xF8FF).contains(&cp)
        || cp >= 0xF0000
        // noncharacters
        || (0xFDD0..=0xFDEF).contains(&cp)
        || (cp & 0xFFFE) == 0xFFFE
}

/// Strip markup tags and unprintable characters, then collapse whitespace.
pub fn normalize_text(text: &str) -> String {
    let (angle, brace) = tag_patterns();
    let text = angle.replace_all(text, "");
    let text = brace.replace_all(&text, "");
    let kept: String = text.chars().filter(|c| !is_unprintable(*c)).collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parse `HH:MM:SS,mmm` (a `.` separator is also accepted).
fn parse_timestamp(s: &str) -> Option<u64> {
    let s = s.trim();
    let (hms, ms) = s.split_once([',', '.']).unwrap_or((s, "0"));
    let mut parts = hms.split(':');
    let h: u64 = parts.next()?.trim().parse().ok()?;
    let m: u64 = parts.next()?.trim().parse().ok()?;
    let sec: u64 = parts.next()?.trim().parse().ok()?;
    if parts.next().is_some() || m >= 60 || sec >= 60 {
        return None;
    }
    let ms: String = ms.chars().take_while(|c| c.is_ascii_digit()).collect();
    let ms: u64 = if ms.is_empty() {
        0
    } else {
        // pad/truncate to millisecond precision
        let padded = format!("{ms:0<3}");
        padded[..3].parse().ok()?
    };
    Some(((h * 60 + m) * 60 + sec) * 1000 + ms)
}

fn parse_timing_line(line: &str) -> Option<(u64, u64)> {
    let (a, b) = line.split_once("-->")?;
    // trailing cue settings ("X1:.. Y1:..") follow the end time
    let b = b.split_whitespace().next()?;
    Some((parse_timestamp(a)?, parse_timestamp(b)?))
}

fn push_line(lines: &mut Vec<DialogueLine>, raw: &str, times: Option<(u64, u64)>) {
    let text = normalize_text(raw);
    if text.is_empty() {
        return;
    }
    let (start_ms, end_ms) = match times {
        Some((s, e)) if s <= e => (Some(s), Some(e)),
        _ => (None, None),
    };
    lines.push(DialogueLine {
        index: lines.len(),
        text,
        start_ms,
        end_ms,
    });
}

fn parse_srt(text: &str) -> Vec<DialogueLine> {
    let mut out = Vec::new();
    let mut block: Vec<&str> = Vec::new();
    let flush = |block: &mut Vec<&str>, out: &mut Vec<DialogueLine>| {
        if block.is_empty() {
            return;
        }
        match block.iter().position(|l| l.contains("-->")) {
            Some(t) => {
                let times = parse_timing_line(block[t]);
                push_line(out, &block[t + 1..].join(" "), times);
            }
            None => {
                // cue without timing: drop a leading cue number, keep the rest
                let is_number = |l: &str| l.trim().chars().all(|c| c.is_ascii_digit());
                let body = if is_number(block[0]) { &block[1..] } else { &block[..] };
                if !body.is_empty() {
                    push_line(out, &body.join(" "), None);
                }
            }
        }
        block.clear();
    };
    for line in text.lines() {
        if line.trim().is_empty() {
            flush(&mut block, &mut out);
        } else {
            block.push(line);
        }
    }
    flush(&mut block, &mut out);
    out
}

/// Decode raw bytes and split them into cleaned, contiguously indexed lines.
pub fn parse_subtitle_file(raw: &[u8], format: SubtitleFormat) -> SubtitleDocument {
    let text = String::from_utf8_lossy(raw);
    let text = text.strip_prefix('\u{FEFF}').unwrap_or(&text);
    let lines = match format {
        SubtitleFormat::Srt => parse_srt(text),
        SubtitleFormat::Plain => {
            let mut out = Vec::new();
            for l in text.lines() {
                push_line(&mut out, l, None);
            }
            out
        }
    };
    SubtitleDocument {
        movie_id: String::new(),
        lines,
    }
}

pub fn read_subtitle_file(path: &Path, format: SubtitleFormat) -> Result<SubtitleDocument> {
    let raw = fs::read(path).map_err(|e| Error::unreadable(path, e))?;
    Ok(parse_subtitle_file(&raw, format))
}

/// Whitespace-delimited token count over all lines.
pub fn token_count(doc: &SubtitleDocument) -> usize {
    doc.lines
        .iter()
        .map(|l| l.text.split_whitespace().count())
        .sum()
}

/// Release year from a file name: the unique 4-digit token in [1900, 2100].
/// Two distinct candidates leave the year unresolved.
pub fn year_from_filename(name: &str) -> Option<i32> {
    let candidates: BTreeSet<i32> = name
        .split(|c: char| !c.is_ascii_digit())
        .filter(|t| t.len() == 4)
        .filter_map(|t| t.parse().ok())
        .filter(|y| (1900..=2100).contains(y))
        .collect();
    if candidates.len() == 1 {
        candidates.into_iter().next()
    } else {
        None
    }
}

fn title_from_stem(stem: &str) -> String {
    let year_re = Regex::new(r"\b(19|20)\d{2}\b").unwrap();
    let t = stem.replace(['.', '_'], " ");
    let t = year_re.replace_all(&t, "");
    let t = t.split_whitespace().collect::<Vec<_>>().join(" ");
    if t.is_empty() {
        stem.to_string()
    } else {
        t
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ManifestEntry {
    pub movie_id: String,
    pub industry: Industry,
    pub year: Option<i32>,
    pub title: String,
    pub path: String,
}

/// Movie metadata keyed by path relative to the corpus root.
#[derive(Debug, Clone, Default)]
pub struct CorpusManifest {
    by_path: HashMap<String, ManifestEntry>,
}

impl CorpusManifest {
    pub fn from_reader<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut by_path = HashMap::new();
        for row in rdr.deserialize() {
            let e: ManifestEntry = row?;
            by_path.insert(e.path.replace('\\', "/"), e);
        }
        Ok(CorpusManifest { by_path })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::unreadable(path, e))?;
        Self::from_reader(f)
    }

    pub fn get(&self, rel_path: &str) -> Option<&ManifestEntry> {
        self.by_path.get(rel_path)
    }

    pub fn len(&self) -> usize {
        self.by_path.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_path.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct CorpusOptions {
    /// Keep only movies released strictly after this year.
    pub released_after: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct Corpus {
    pub movies: Vec<(MovieRecord, SubtitleDocument)>,
    pub skipped: Vec<SkipEntry>,
}

/// Walk `root` for `.srt`/`.txt` files and assemble movie records.
///
/// Year precedence is manifest first, then file name. Files are visited in
/// sorted path order so the output is stable.
pub fn build_corpus(
    root: &Path,
    industry: &Industry,
    manifest: Option<&CorpusManifest>,
    opts: &CorpusOptions,
) -> Result<Corpus> {
    build_corpus_with(Exec::default(), root, industry, manifest, opts)
}

pub fn build_corpus_with(
    exec: Exec,
    root: &Path,
    industry: &Industry,
    manifest: Option<&CorpusManifest>,
    opts: &CorpusOptions,
) -> Result<Corpus> {
    if !root.is_dir() {
        return Err(Error::unreadable(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "corpus root is not a directory"),
        ));
    }
    let mut files: Vec<(PathBuf, SubtitleFormat)> = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .filter_map(|e| SubtitleFormat::from_path(e.path()).map(|f| (e.into_path(), f)))
        .collect();
    files.sort_by(|a, b| a.0.cmp(&b.0));
    if files.is_empty() {
        return Err(Error::EmptyCorpus(root.to_path_buf()));
    }

    let parsed = exec.map(&files, |(path, fmt)| read_subtitle_file(path, *fmt));

    let mut corpus = Corpus::default();
    let mut seen = BTreeSet::new();
    let mut parsed_ok = 0usize;
    for ((path, _), doc) in files.iter().zip(parsed) {
        let rel = path
            .strip_prefix(root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/");
        let mut doc = match doc {
            Ok(d) => {
                parsed_ok += 1;
                d
            }
            Err(e) => {
                corpus.skipped.push(SkipEntry {
                    path: rel,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let stem_rel = rel
            .rsplit_once('.')
            .map(|(s, _)| s.to_string())
            .unwrap_or_else(|| rel.clone());
        let file_stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let entry = manifest.and_then(|m| m.get(&rel));
        let record = MovieRecord {
            movie_id: entry.map(|e| e.movie_id.clone()).unwrap_or(stem_rel),
            industry: entry.map(|e| e.industry.clone()).unwrap_or_else(|| industry.clone()),
            year: entry
                .and_then(|e| e.year)
                .or_else(|| year_from_filename(&file_stem)),
            title: entry
                .map(|e| e.title.clone())
                .unwrap_or_else(|| title_from_stem(&file_stem)),
            source_path: rel.clone(),
        };
        if let Some(after) = opts.released_after {
            match record.year {
                None => {
                    corpus.skipped.push(SkipEntry {
                        path: rel,
                        reason: "release year unresolved".into(),
                    });
                    continue;
                }
                Some(y) if y <= after => {
                    corpus.skipped.push(SkipEntry {
                        path: rel,
                        reason: format!("released {y}, not after {after}"),
                    });
                    continue;
                }
                _ => {}
            }
        }
        if !seen.insert(record.movie_id.clone()) {
            return Err(Error::ConfigInvalid(format!(
                "duplicate movie_id `{}`",
                record.movie_id
            )));
        }
        doc.movie_id = record.movie_id.clone();
        corpus.movies.push((record, doc));
    }
    if parsed_ok == 0 {
        return Err(Error::EmptyCorpus(root.to_path_buf()));
    }
    Ok(corpus)
}

#[derive(Serialize, Deserialize)]
struct DocumentRow {
    movie_id: String,
    industry: Industry,
    year: Option<i32>,
    lines: Vec<DialogueLine>,
}

pub fn write_documents_jsonl<W: Write>(
    mut w: W,
    movies: &[(MovieRecord, SubtitleDocument)],
) -> Result<()> {
    for (m, d) in movies {
        let row = DocumentRow {
            movie_id: m.movie_id.clone(),
            industry: m.industry.clone(),
            year: m.year,
            lines: d.lines.clone(),
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Read documents back. Title and source path are not part of the document
/// stream and are left empty here; see the `movies.csv` side file.
pub fn read_documents_jsonl(text: &str) -> Result<Vec<(MovieRecord, SubtitleDocument)>> {
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row: DocumentRow = serde_json::from_str(line)?;
        out.push((
            MovieRecord {
                movie_id: row.movie_id.clone(),
                industry: row.industry,
                year: row.year,
                title: String::new(),
                source_path: String::new(),
            },
            SubtitleDocument {
                movie_id: row.movie_id,
                lines: row.lines,
            },
        ));
    }
    Ok(out)
}

/// Movie count and total tokens per industry.
pub fn corpus_totals(
    movies: &[(MovieRecord, SubtitleDocument)],
) -> BTreeMap<Industry, (usize, usize)> {
    let mut out: BTreeMap<Industry, (usize, usize)> = BTreeMap::new();
    for (m, d) in movies {
        let e = out.entry(m.industry.clone()).or_default();
        e.0 += 1;
        e.1 += token_count(d);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(lines: &[&str]) -> SubtitleDocument {
        SubtitleDocument {
            movie_id: "m".into(),
            lines: lines
                .iter()
                .enumerate()
                .map(|(i, t)| DialogueLine {
                    index: i,
                    text: t.to_string(),
                    start_ms: None,
                    end_ms: None,
                })
                .collect(),
        }
    }

    #[test]
    fn single_srt_cue() {
        let d = parse_subtitle_file(
            b"1\n00:00:01,000 --> 00:00:02,000\nHello there.",
            SubtitleFormat::Srt,
        );
        assert_eq!(
            d.lines,
            vec![DialogueLine {
                index: 0,
                text: "Hello there.".into(),
                start_ms: Some(1000),
                end_ms: Some(2000)
            }]
        );
    }

    #[test]
    fn empty_file_has_no_lines() {
        assert!(parse_subtitle_file(b"", SubtitleFormat::Srt).lines.is_empty());
        assert!(parse_subtitle_file(b"", SubtitleFormat::Plain).lines.is_empty());
    }

    #[test]
    fn italic_tags_are_stripped() {
        let d = parse_subtitle_file(
            b"7\n00:01:00,000 --> 00:01:01,500\n<i>Shame on you</i>\n",
            SubtitleFormat::Srt,
        );
        assert_eq!(d.lines[0].text, "Shame on you");
    }

    #[test]
    fn multi_line_cues_join_and_renumber() {
        let raw = "\u{FEFF}1\r\n00:00:01,000 --> 00:00:02,000\r\nFirst half\r\nsecond half\r\n\r\n\
                   2\r\n00:00:03,000 --> 00:00:04,000\r\n<i></i>\r\n\r\n\
                   3\r\n00:00:05,000 --> 00:00:06,000\r\nThird\r\n";
        let d = parse_subtitle_file(raw.as_bytes(), SubtitleFormat::Srt);
        let texts: Vec<_> = d.texts().collect();
        assert_eq!(texts, ["First half second half", "Third"]);
        assert_eq!(d.lines[1].index, 1);
        assert_eq!(d.lines[1].start_ms, Some(5000));
    }

    #[test]
    fn inverted_timestamps_are_dropped() {
        let d = parse_subtitle_file(
            b"1\n00:00:05,000 --> 00:00:02,000\nOops",
            SubtitleFormat::Srt,
        );
        assert_eq!(d.lines[0].start_ms, None);
        assert_eq!(d.lines[0].end_ms, None);
    }

    #[test]
    fn plain_format_keeps_one_line_per_line() {
        let d = parse_subtitle_file(b"one\n\n  two  \n\xff\n", SubtitleFormat::Plain);
        assert_eq!(d.texts().collect::<Vec<_>>(), ["one", "two"]);
    }

    #[test]
    fn unknown_format() {
        assert!(matches!(
            "ass".parse::<SubtitleFormat>(),
            Err(Error::UnknownFormat(_))
        ));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_text("  What   a\tday "), "What a day");
        assert_eq!(normalize_text("{\\an8}Look out!"), "Look out!");
        assert_eq!(normalize_text("caf\u{FFFD}"), "caf");
        assert_eq!(normalize_text("a\u{0007}b\u{200B}c"), "abc");
        assert_eq!(normalize_text("<font color=\"red\">Hi</font>"), "Hi");
    }

    #[test]
    fn timestamps() {
        assert_eq!(parse_timestamp("01:02:03,004"), Some(3_723_004));
        assert_eq!(parse_timestamp("00:00:01.5"), Some(1500));
        assert_eq!(parse_timestamp("00:61:00,000"), None);
    }

    #[test]
    fn token_counts() {
        assert_eq!(token_count(&doc(&["Hello there.", "Bye"])), 3);
        assert_eq!(token_count(&doc(&[])), 0);
        assert_eq!(token_count(&doc(&["a b", "c d e"])), 5);
    }

    #[test]
    fn filename_years() {
        assert_eq!(year_from_filename("Lagaan.2001"), Some(2001));
        assert_eq!(year_from_filename("Sholay.1975"), Some(1975));
        assert_eq!(year_from_filename("film.2001.remake.2005"), None);
        assert_eq!(year_from_filename("film.2001.2001"), Some(2001));
        assert_eq!(year_from_filename("Blade.Runner.2049.1982"), None);
        assert_eq!(year_from_filename("no_year_12345"), None);
        assert_eq!(year_from_filename("Se7en"), None);
    }

    fn write(dir: &Path, name: &str, body: &str) {
        let p = dir.join(name);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, body).unwrap();
    }

    #[test]
    fn corpus_year_filter_and_manifest_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        write(root, "Sholay.1975.srt", "1\n00:00:01,000 --> 00:00:02,000\nHi\n");
        write(root, "Lagaan.2001.srt", "1\n00:00:01,000 --> 00:00:02,000\nHi there\n");
        write(root, "film.2005.srt", "1\n00:00:01,000 --> 00:00:02,000\nHello\n");
        write(root, "undated.txt", "Just a line\n");
        write(root, "notes.md", "ignored");
        let manifest = CorpusManifest::from_reader(
            "movie_id,industry,year,title,path\nfilm-x,Bollywood,1999,Film,film.2005.srt\n"
                .as_bytes(),
        )
        .unwrap();
        let opts = CorpusOptions {
            released_after: Some(1990),
        };
        let c = build_corpus(root, &Industry::Bollywood, Some(&manifest), &opts).unwrap();
        let ids: Vec<_> = c.movies.iter().map(|(m, _)| m.movie_id.as_str()).collect();
        assert_eq!(ids, ["Lagaan.2001", "film-x"]);
        assert_eq!(c.movies[0].0.year, Some(2001));
        assert_eq!(c.movies[0].0.title, "Lagaan");
        assert_eq!(c.movies[1].0.year, Some(1999));
        assert_eq!(c.movies[1].1.movie_id, "film-x");
        let skipped: Vec<_> = c.skipped.iter().map(|s| s.path.as_str()).collect();
        assert_eq!(skipped, ["Sholay.1975.srt", "undated.txt"]);

        // without a filter undated movies are kept
        let c = build_corpus(root, &Industry::Hollywood, None, &CorpusOptions::default()).unwrap();
        assert_eq!(c.movies.len(), 4);
        assert!(c.movies.iter().any(|(m, _)| m.year.is_none()));
        assert_eq!(corpus_totals(&c.movies)[&Industry::Hollywood], (4, 7));
    }

    #[test]
    fn empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "readme.md", "x");
        assert!(matches!(
            build_corpus(dir.path(), &Industry::Hollywood, None, &CorpusOptions::default()),
            Err(Error::EmptyCorpus(_))
        ));
    }

    #[test]
    fn jsonl_shape() {
        let m = MovieRecord {
            movie_id: "m1".into(),
            industry: Industry::Hollywood,
            year: Some(2001),
            title: "t".into(),
            source_path: "m1.srt".into(),
        };
        let mut d = doc(&["Hello"]);
        d.lines[0].start_ms = Some(1000);
        d.lines[0].end_ms = Some(2000);
        let mut buf = Vec::new();
        write_documents_jsonl(&mut buf, &[(m, d.clone())]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(
            s,
            "{\"movie_id\":\"m1\",\"industry\":\"Hollywood\",\"year\":2001,\"lines\":[{\"i\":0,\"t\":\"Hello\",\"s\":1000,\"e\":2000}]}\n"
        );
        let back = read_documents_jsonl(&s).unwrap();
        assert_eq!(back[0].1.lines, d.lines);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC*|[<>{} \t\\n\u{FFFD}a-z]*") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once);
        }

        #[test]
        fn parse_is_deterministic_and_contiguous(s in "[0-9a-z<>:,> \\n-]{0,200}") {
            let a = parse_subtitle_file(s.as_bytes(), SubtitleFormat::Srt);
            let b = parse_subtitle_file(s.as_bytes(), SubtitleFormat::Srt);
            prop_assert_eq!(&a, &b);
            for (i, l) in a.lines.iter().enumerate() {
                prop_assert_eq!(l.index, i);
                prop_assert!(!l.text.is_empty());
                if let (Some(s), Some(e)) = (l.start_ms, l.end_ms) {
                    prop_assert!(s <= e);
                }
            }
        }
    }
}
