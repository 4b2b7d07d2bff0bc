//! LIWC-style category lexicon and per-excerpt category proportions.
//!
//! A lexicon is a two-column TSV (`category<TAB>entry`). Entries are exact
//! words or stems with a trailing `*` wildcard. Lines starting with `#` and
//! blank lines are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excerpt::{Excerpt, SearchLexeme};
use crate::exec::Exec;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Category {
    pub exact: BTreeSet<String>,
    /// Stems of wildcard entries, without the `*`.
    pub stems: BTreeSet<String>,
}

impl Category {
    pub fn matches(&self, token: &str) -> bool {
        if self.exact.contains(token) {
            return true;
        }
        if self.stems.is_empty() {
            return false;
        }
        token
            .char_indices()
            .map(|(i, c)| i + c.len_utf8())
            .any(|end| self.stems.contains(&token[..end]))
    }

    pub fn is_empty(&self) -> bool {
        self.exact.is_empty() && self.stems.is_empty()
    }

    fn entries(&self) -> impl Iterator<Item = String> + '_ {
        self.exact
            .iter()
            .cloned()
            .chain(self.stems.iter().map(|s| format!("{s}*")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    pub name: String,
    pub categories: BTreeMap<String, Category>,
}

impl Lexicon {
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut categories: BTreeMap<String, Category> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let malformed = |reason: &str| Error::MalformedLexicon {
                line: line_no,
                reason: reason.to_string(),
            };
            let (cat, entry) = line
                .split_once('\t')
                .ok_or_else(|| malformed("expected `category<TAB>entry`"))?;
            let cat = cat.trim();
            let entry = entry.trim().to_lowercase();
            if cat.is_empty() {
                return Err(malformed("empty category name"));
            }
            if entry.is_empty() {
                return Err(malformed("empty entry"));
            }
            let slot = categories.entry(cat.to_string()).or_default();
            match entry.strip_suffix('*') {
                Some(stem) => {
                    if stem.is_empty() || stem.contains('*') {
                        return Err(malformed("wildcard must follow a non-empty stem"));
                    }
                    slot.stems.insert(stem.to_string());
                }
                None => {
                    if entry.contains('*') {
                        return Err(malformed("wildcard only allowed in terminal position"));
                    }
                    slot.exact.insert(entry);
                }
            }
        }
        Ok(Lexicon {
            name: name.to_string(),
            categories,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::unreadable(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(&name, &text)
    }

    pub fn category_names(&self) -> Vec<String> {
        self.categories.keys().cloned().collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (name, cat) in &self.categories {
            for e in cat.entries() {
                out.push_str(name);
                out.push('\t');
                out.push_str(&e);
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedEntry {
    pub category: String,
    pub entry: String,
}

/// Drop entries that equal a search form or whose wildcard stem covers one.
pub fn strip_search_keywords(
    lexicon: &Lexicon,
    lexemes: &[SearchLexeme],
) -> (Lexicon, Vec<RemovedEntry>) {
    let forms: BTreeSet<&str> = lexemes
        .iter()
        .flat_map(|l| l.forms.iter().map(String::as_str))
        .collect();
    let mut removed = Vec::new();
    let mut out = lexicon.clone();
    for (name, cat) in out.categories.iter_mut() {
        cat.exact.retain(|e| {
            let keep = !forms.contains(e.as_str());
            if !keep {
                removed.push(RemovedEntry {
                    category: name.clone(),
                    entry: e.clone(),
                });
            }
            keep
        });
        cat.stems.retain(|s| {
            let keep = !forms.iter().any(|f| f.starts_with(s.as_str()));
            if !keep {
                removed.push(RemovedEntry {
                    category: name.clone(),
                    entry: format!("{s}*"),
                });
            }
            keep
        });
    }
    (out, removed)
}

fn is_apostrophe(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}')
}

/// Lowercase tokens split on anything that is not a letter, digit or
/// apostrophe. Contractions such as `don't` stay whole; apostrophes at token
/// edges (quotes) are trimmed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || is_apostrophe(c)))
        .map(|t| t.trim_matches(is_apostrophe))
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase().replace('\u{2019}', "'"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryProfile {
    pub excerpt_id: String,
    pub proportions: BTreeMap<String, f64>,
    pub total_tokens: usize,
}

pub fn score_tokens(excerpt_id: &str, tokens: &[String], lexicon: &Lexicon) -> Result<CategoryProfile> {
    if tokens.is_empty() {
        return Err(Error::ZeroTokens(excerpt_id.to_string()));
    }
    let n = tokens.len() as f64;
    let proportions = lexicon
        .categories
        .iter()
        .map(|(name, cat)| {
            let hits = tokens.iter().filter(|t| cat.matches(t)).count();
            (name.clone(), hits as f64 / n)
        })
        .collect();
    Ok(CategoryProfile {
        excerpt_id: excerpt_id.to_string(),
        proportions,
        total_tokens: tokens.len(),
    })
}

/// Category proportions for one excerpt (hits / window tokens). A token counts
/// once toward every category it matches.
pub fn score_excerpt(excerpt: &Excerpt, lexicon: &Lexicon) -> Result<CategoryProfile> {
    score_tokens(&excerpt.excerpt_id, &tokenize(&excerpt.text), lexicon)
}

/// Rows follow input order, columns are category names in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileMatrix {
    pub categories: Vec<String>,
    pub excerpt_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Excerpts with no tokens, left out of `rows`.
    pub skipped: Vec<String>,
}

impl ProfileMatrix {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["excerpt_id".to_string()];
        header.extend(self.categories.iter().cloned());
        wtr.write_record(&header)?;
        for (id, row) in self.excerpt_ids.iter().zip(&self.rows) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let categories: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_string).collect();
        let mut excerpt_ids = Vec::new();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            excerpt_ids.push(rec.get(0).unwrap_or_default().to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| Error::ConfigInvalid(format!("bad proportion `{v}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(ProfileMatrix {
            categories,
            excerpt_ids,
            rows,
            skipped: Vec::new(),
        })
    }
}

pub fn profile_matrix(excerpts: &[Excerpt], lexicon: &Lexicon) -> ProfileMatrix {
    profile_matrix_with(Exec::default(), excerpts, lexicon)
}

pub fn profile_matrix_with(exec: Exec, excerpts: &[Excerpt], lexicon: &Lexicon) -> ProfileMatrix {
    let scored = exec.map(excerpts, |ex| score_excerpt(ex, lexicon));
    let mut m = ProfileMatrix {
        categories: lexicon.category_names(),
        excerpt_ids: Vec::new(),
        rows: Vec::new(),
        skipped: Vec::new(),
    };
    for (ex, p) in excerpts.iter().zip(scored) {
        match p {
            Ok(p) => {
                m.excerpt_ids.push(ex.excerpt_id.clone());
                m.rows.push(p.proportions.into_values().collect());
            }
            Err(_) => m.skipped.push(ex.excerpt_id.clone()),
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Industry;
    use crate::excerpt::{default_lexemes, Emotion};
    use proptest::prelude::*;

    fn excerpt(id: &str, text: &str) -> Excerpt {
        Excerpt {
            excerpt_id: id.into(),
            movie_id: "m".into(),
            industry: Industry::Hollywood,
            emotion: Emotion::Control,
            anchor_index: None,
            context_indices: vec![0],
            text: text.into(),
            matched_form: None,
            anchor_text: None,
        }
    }

    #[test]
    fn load_exact_and_wildcard() {
        let lx = Lexicon::parse("t", "EMO_NEG\tbad\nPOWER\tkill*\nPOWER\tKill*\n# c\n\n").unwrap();
        assert!(lx.categories["EMO_NEG"].exact.contains("bad"));
        let power = &lx.categories["POWER"];
        assert_eq!(power.stems.len(), 1);
        for w in ["kill", "killed", "killing"] {
            assert!(power.matches(w), "{w}");
        }
        assert!(!power.matches("kil"));
    }

    #[test]
    fn malformed_lexicons() {
        for bad in ["X\t*bad", "X\tba*d", "\tbad", "X\t", "X bad", "X\t*"] {
            assert!(
                matches!(Lexicon::parse("t", bad), Err(Error::MalformedLexicon { line: 1, .. })),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn strip_removes_forms_and_covering_stems() {
        let lx = Lexicon::parse(
            "t",
            "EMO_NEG\tashamed\nEMO_NEG\tsham*\nEMO_NEG\tshampoo\nACHIEVE\tprou*\nACHIEVE\twin\nX\tproudest*",
        )
        .unwrap();
        let (out, removed) = strip_search_keywords(&lx, &default_lexemes());
        assert_eq!(
            removed,
            vec![
                RemovedEntry { category: "ACHIEVE".into(), entry: "prou*".into() },
                RemovedEntry { category: "EMO_NEG".into(), entry: "ashamed".into() },
                RemovedEntry { category: "EMO_NEG".into(), entry: "sham*".into() },
            ]
        );
        assert!(out.categories["EMO_NEG"].exact.contains("shampoo"));
        // a stem longer than every form covers none of them
        assert!(out.categories["X"].stems.contains("proudest"));
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize("Don't do it!"), ["don't", "do", "it"]);
        assert_eq!(tokenize("he's\u{2014}gone"), ["he's", "gone"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("'Quoted' I\u{2019}m"), ["quoted", "i'm"]);
    }

    #[test]
    fn scoring_examples() {
        let lx = Lexicon::parse("t", "EMO_NEG\tbad\nI\ti\nPOWER\tkill*").unwrap();
        let p = score_excerpt(&excerpt("a", "I feel bad"), &lx).unwrap();
        assert_eq!(p.proportions["EMO_NEG"], 1.0 / 3.0);
        assert_eq!(p.proportions["I"], 1.0 / 3.0);
        assert_eq!(p.proportions["POWER"], 0.0);

        let p = score_excerpt(&excerpt("b", "nothing matches here"), &lx).unwrap();
        assert!(p.proportions.values().all(|v| *v == 0.0));

        // killed and killer start with the stem, kin does not
        let p = score_excerpt(&excerpt("c", "killed killer kin"), &lx).unwrap();
        assert_eq!(p.proportions["POWER"], 2.0 / 3.0);

        assert!(matches!(
            score_excerpt(&excerpt("d", "... !"), &lx),
            Err(Error::ZeroTokens(_))
        ));
    }

    #[test]
    fn multi_category_tokens_count_everywhere() {
        let lx = Lexicon::parse("t", "A\tyou\nB\tyou\nB\tyour").unwrap();
        let p = score_excerpt(&excerpt("a", "you and your"), &lx).unwrap();
        assert_eq!(p.proportions["A"], 1.0 / 3.0);
        assert_eq!(p.proportions["B"], 2.0 / 3.0);
    }

    #[test]
    fn matrix_shape_and_consistency() {
        let lx = Lexicon::parse("t", "C\tc\nA\ta\nB\tb").unwrap();
        let exs = vec![excerpt("x", "a b c c"), excerpt("y", "b b"), excerpt("z", "?")];
        let m = profile_matrix(&exs, &lx);
        assert_eq!(m.categories, ["A", "B", "C"]);
        assert_eq!(m.rows.len(), 2);
        assert_eq!(m.skipped, ["z"]);
        for (ex, row) in exs.iter().zip(&m.rows) {
            let p = score_excerpt(ex, &lx).unwrap();
            assert_eq!(row, &p.proportions.values().copied().collect::<Vec<_>>());
        }
        assert_eq!(m, profile_matrix_with(Exec::Sequential, &exs, &lx));

        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = ProfileMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.rows, m.rows);
        assert!(String::from_utf8(buf).unwrap().starts_with("excerpt_id,A,B,C\n"));
    }

    fn arb_words() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec(
            prop_oneof![
                Just("shame".to_string()),
                Just("ashamed".to_string()),
                Just("proud".to_string()),
                Just("pride".to_string()),
                "[a-d]{1,4}",
            ],
            1..20,
        )
    }

    proptest! {
        #[test]
        fn bag_of_words(words in arb_words(), seed in any::<u64>()) {
            let lx = Lexicon::parse("t", "A\ta*\nB\tab\nB\tc\nE\tsham*\nE\tproud").unwrap();
            let mut shuffled = words.clone();
            // deterministic permutation
            let n = shuffled.len();
            for i in 0..n {
                let j = (seed as usize).wrapping_add(i * 7919) % n;
                shuffled.swap(i, j);
            }
            let a = score_tokens("a", &words, &lx).unwrap();
            let b = score_tokens("a", &shuffled, &lx).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn stripped_lexicon_ignores_keywords(n in 1usize..10, pick in any::<u64>()) {
            let lx = Lexicon::parse(
                "t",
                "E\tsham*\nE\tashamed\nE\tpride\nA\tproud*\nA\tp*\nZ\tzebra",
            ).unwrap();
            let lexemes = default_lexemes();
            let (stripped, _) = strip_search_keywords(&lx, &lexemes);
            let forms: Vec<String> = lexemes.iter().flat_map(|l| l.forms.iter().cloned()).collect();
            let tokens: Vec<String> = (0..n)
                .map(|i| forms[(pick as usize + i * 3) % forms.len()].clone())
                .collect();
            let p = score_tokens("k", &tokens, &stripped).unwrap();
            prop_assert!(p.proportions.values().all(|v| *v == 0.0));
        }

        #[test]
        fn wildcard_never_decreases(words in arb_words(), entry in "[a-d]{1,3}") {
            let exact = Lexicon::parse("t", &format!("A\t{entry}")).unwrap();
            let wild = Lexicon::parse("t", &format!("A\t{entry}*")).unwrap();
            let a = score_tokens("a", &words, &exact).unwrap();
            let b = score_tokens("a", &words, &wild).unwrap();
            prop_assert!(b.proportions["A"] >= a.proportions["A"]);
        }
    }
}
