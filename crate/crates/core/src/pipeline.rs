//! Staged pipeline runs driven by one TOML config.
//!
//! Each stage reads plain JSONL/CSV artifacts from the output directory,
//! writes its own artifacts atomically and records input and output digests
//! in `manifest.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::assoc::{
    gender_attribution, gender_theme_delta, read_association_csv, theme_association, write_association_csv,
    AssociationRow, GroupCounts,
};
use crate::cluster::{
    agglomerative_cluster_with, apply_cluster_edits, assign_clusters, cluster_report, dedupe_norms, embed_norms,
    parse_cluster_edits, ClusterReport, EmbeddingConfig, EmbeddingSource, Linkage, Metric,
};
use crate::corpus::{
    build_corpus_with, corpus_totals, read_documents_jsonl, write_documents_jsonl, CorpusManifest, CorpusOptions,
    Industry, MovieRecord, SubtitleDocument,
};
use crate::error::{Error, Result};
use crate::excerpt::{
    apply_exclusions, control_target, dataset_summary, extract_emotion_excerpts_with, read_jsonl, sample_control_set,
    write_jsonl, Emotion, ExcludedExcerpt, Excerpt, KeywordConfig, WindowOptions,
};
use crate::exec::Exec;
use crate::lexicon::{profile_matrix_with, strip_search_keywords, Lexicon, ProfileMatrix};
use crate::norms::{extract_norms_with, norm_stats, ChatClient, ChatConfig, Gender, NormRecord, TemplateSet};
use crate::provider::sha256_hex;
use crate::stats::{attach_top_words, correlate_categories_with, CorrelationTable};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    pub industry: Industry,
    pub root: PathBuf,
    /// CSV `movie_id,industry,year,title,path`, paths relative to `root`.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub linkage: Linkage,
    pub metric: Metric,
    pub threshold: f64,
    pub normalize: bool,
    /// Cluster-edit file per emotion.
    pub edits: BTreeMap<Emotion, PathBuf>,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            linkage: Linkage::Average,
            metric: Metric::Euclidean,
            threshold: 5.0,
            normalize: true,
            edits: BTreeMap::new(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_alpha() -> f64 {
    0.05
}
fn default_ratio() -> f64 {
    1.5
}
fn default_min_tokens() -> usize {
    WindowOptions::default().min_tokens
}
fn default_radius() -> usize {
    WindowOptions::default().radius
}
fn default_top_words() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Control windows per emotion excerpt.
    #[serde(default = "default_ratio")]
    pub control_ratio: f64,
    /// Keep movies released strictly after this year.
    #[serde(default)]
    pub released_after: Option<i32>,
    #[serde(default = "default_min_tokens")]
    pub min_tokens: usize,
    #[serde(default = "default_radius")]
    pub window_radius: usize,
    #[serde(default = "default_top_words")]
    pub top_words: usize,
    pub lexicon: PathBuf,
    /// Search lexemes and exclusion phrases; built-in defaults when absent.
    #[serde(default)]
    pub keywords: Option<PathBuf>,
    pub corpus: Vec<CorpusSource>,
    #[serde(default)]
    pub chat: ChatConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(skip)]
    raw: String,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Parse TOML. Relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.raw = text.to_string();
        resolve(base, &mut cfg.output_dir);
        resolve(base, &mut cfg.lexicon);
        if let Some(k) = &mut cfg.keywords {
            resolve(base, k);
        }
        for c in &mut cfg.corpus {
            resolve(base, &mut c.root);
            if let Some(m) = &mut c.manifest {
                resolve(base, m);
            }
        }
        for p in cfg.clustering.edits.values_mut() {
            resolve(base, p);
        }
        cfg.chat.resolve_paths(base);
        cfg.embedding.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::unreadable(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.corpus.is_empty() {
            return bad("at least one [[corpus]] entry is required".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must be in (0, 1), got {}", self.alpha));
        }
        if !(self.control_ratio > 0.0 && self.control_ratio.is_finite()) {
            return bad(format!("control_ratio must be positive, got {}", self.control_ratio));
        }
        if self.clustering.threshold.is_nan() || self.clustering.threshold < 0.0 {
            return bad(format!("clustering threshold must be >= 0, got {}", self.clustering.threshold));
        }
        if self.chat.temperature < 0.0 {
            return bad("chat temperature must be >= 0".into());
        }
        let mut must_exist: Vec<&Path> = vec![&self.lexicon];
        must_exist.extend(self.keywords.as_deref());
        for c in &self.corpus {
            must_exist.push(&c.root);
            must_exist.extend(c.manifest.as_deref());
        }
        must_exist.extend(self.clustering.edits.values().map(PathBuf::as_path));
        must_exist.extend(self.chat.replay.as_deref());
        must_exist.extend(self.embedding.vectors.as_deref());
        for p in must_exist {
            if !p.exists() {
                return bad(format!("path does not exist: {}", p.display()));
            }
        }
        for emo in self.clustering.edits.keys() {
            if *emo == Emotion::Control {
                return bad("cluster edits apply to shame or pride only".into());
            }
        }
        Ok(())
    }

    /// Digest of the config text plus overridable settings.
    pub fn config_hash(&self) -> String {
        let v = json!({
            "config": self.raw,
            "seed": self.seed,
            "threshold": self.clustering.threshold,
        });
        sha256_hex(v.to_string().as_bytes())
    }

    /// Industries in config order.
    pub fn industries(&self) -> Vec<Industry> {
        let mut seen = BTreeSet::new();
        self.corpus
            .iter()
            .filter(|c| seen.insert(c.industry.clone()))
            .map(|c| c.industry.clone())
            .collect()
    }

    fn keyword_config(&self) -> Result<KeywordConfig> {
        match &self.keywords {
            Some(p) => KeywordConfig::load(p),
            None => Ok(KeywordConfig::default()),
        }
    }

    fn window(&self) -> WindowOptions {
        WindowOptions {
            radius: self.window_radius,
            min_tokens: self.min_tokens,
        }
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub threshold: Option<f64>,
    pub offline: bool,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Extract,
    Lexstats,
    Norms,
    Cluster,
    Assoc,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Extract,
        Stage::Lexstats,
        Stage::Norms,
        Stage::Cluster,
        Stage::Assoc,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Extract => "extract",
            Stage::Lexstats => "lexstats",
            Stage::Norms => "norms",
            Stage::Cluster => "cluster",
            Stage::Assoc => "assoc",
            Stage::Report => "report",
        }
    }

    /// Artifacts this stage reads, with the stage that produces each.
    pub fn inputs(self) -> &'static [(&'static str, Stage)] {
        match self {
            Stage::Ingest => &[],
            Stage::Extract => &[("corpus.jsonl", Stage::Ingest)],
            Stage::Lexstats => &[("excerpts.jsonl", Stage::Extract)],
            Stage::Norms => &[("excerpts.jsonl", Stage::Extract)],
            Stage::Cluster => &[("norms.jsonl", Stage::Norms)],
            Stage::Assoc => &[
                ("clusters_shame.json", Stage::Cluster),
                ("clusters_pride.json", Stage::Cluster),
                ("norms.jsonl", Stage::Norms),
            ],
            Stage::Report => &[("dataset_summary.csv", Stage::Extract)],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEntry {
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub stages: BTreeMap<String, StageEntry>,
}

pub const MANIFEST: &str = "manifest.json";

/// Write via a sibling temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::unreadable(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::unreadable(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::unreadable(path, e))?;
    Ok(())
}

#[derive(Default)]
struct StageOutput {
    files: Vec<(String, Vec<u8>)>,
    counts: BTreeMap<String, u64>,
    /// Raised after artifacts and manifest are written.
    deferred: Option<Error>,
}

impl StageOutput {
    fn file(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    fn count(&mut self, key: impl Into<String>, n: usize) {
        self.counts.insert(key.into(), n as u64);
    }
}

fn file_label(industry: &Industry) -> String {
    industry
        .as_str()
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// Control-sampling seed for one industry.
pub fn industry_seed(seed: u64, industry: &Industry) -> u64 {
    let h = sha256_hex(industry.as_str().as_bytes());
    seed ^ u64::from_str_radix(&h[..16], 16).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct DatasetRow {
    industry: Industry,
    movies: usize,
    tokens: usize,
    shame: usize,
    pride: usize,
    control: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct NormStatsRow {
    industry: Industry,
    emotion: Emotion,
    male: usize,
    female: usize,
    not_known: usize,
    total: usize,
    no_reason: usize,
}

fn csv_bytes<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    wtr.write_record(header)?;
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn read_csv_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub struct Pipeline {
    cfg: PipelineConfig,
    offline: bool,
    exec: Exec,
}

impl Pipeline {
    pub fn new(mut cfg: PipelineConfig, opts: &RunOptions) -> Result<Self> {
        if let Some(s) = opts.seed {
            cfg.seed = s;
        }
        if let Some(t) = opts.threshold {
            cfg.clustering.threshold = t;
        }
        if let Some(o) = &opts.output_dir {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(Pipeline {
            cfg,
            offline: opts.offline,
            exec: Exec::default(),
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn output_dir(&self) -> &Path {
        &self.cfg.output_dir
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn read(&self, name: &str) -> Result<String> {
        let p = self.path(name);
        fs::read_to_string(&p).map_err(|e| Error::unreadable(p, e))
    }

    pub fn load_manifest(&self) -> Result<RunManifest> {
        let p = self.path(MANIFEST);
        if !p.exists() {
            return Ok(RunManifest::default());
        }
        Ok(serde_json::from_str(&self.read(MANIFEST)?)?)
    }

    /// Run every stage in order.
    pub fn run_all(&self) -> Result<()> {
        for st in Stage::ALL {
            self.run(st)?;
        }
        Ok(())
    }

    pub fn run(&self, stage: Stage) -> Result<StageEntry> {
        let mut inputs = BTreeMap::new();
        for (artifact, upstream) in stage.inputs() {
            let p = self.path(artifact);
            let bytes = fs::read(&p).map_err(|_| Error::MissingUpstream {
                stage: stage.name().into(),
                upstream: upstream.name().into(),
                artifact: artifact.to_string(),
            })?;
            inputs.insert(artifact.to_string(), sha256_hex(&bytes));
        }
        log::info!("running stage {stage}");
        let out = match stage {
            Stage::Ingest => self.ingest(),
            Stage::Extract => self.extract(),
            Stage::Lexstats => self.lexstats(),
            Stage::Norms => self.norms(),
            Stage::Cluster => self.cluster(),
            Stage::Assoc => self.assoc(),
            Stage::Report => self.report(),
        }?;

        let mut entry = StageEntry {
            inputs,
            counts: out.counts,
            ..Default::default()
        };
        for (name, bytes) in &out.files {
            write_atomic(&self.path(name), bytes)?;
            entry.outputs.insert(name.clone(), sha256_hex(bytes));
        }
        let mut manifest = self.load_manifest()?;
        let hash = self.cfg.config_hash();
        if manifest.config_hash != hash {
            manifest = RunManifest {
                config_hash: hash,
                stages: BTreeMap::new(),
            };
        }
        manifest.stages.insert(stage.name().into(), entry.clone());
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&self.path(MANIFEST), text.as_bytes())?;
        match out.deferred {
            Some(e) => Err(e),
            None => Ok(entry),
        }
    }

    fn documents(&self) -> Result<Vec<(MovieRecord, SubtitleDocument)>> {
        read_documents_jsonl(&self.read("corpus.jsonl")?)
    }

    fn excerpts(&self) -> Result<Vec<Excerpt>> {
        read_jsonl(&self.read("excerpts.jsonl")?)
    }

    fn norm_records(&self) -> Result<Vec<NormRecord>> {
        read_jsonl(&self.read("norms.jsonl")?)
    }

    /// Config industries first, then any others present in `found`.
    fn industries_with<'a>(&self, found: impl IntoIterator<Item = &'a Industry>) -> Vec<Industry> {
        let mut out = self.cfg.industries();
        let extra: BTreeSet<&Industry> = found.into_iter().filter(|i| !out.contains(i)).collect();
        out.extend(extra.into_iter().cloned());
        out
    }

    fn ingest(&self) -> Result<StageOutput> {
        let opts = CorpusOptions {
            released_after: self.cfg.released_after,
        };
        let mut movies = Vec::new();
        let mut skipped: Vec<(Industry, String, String)> = Vec::new();
        let mut ids = BTreeSet::new();
        for src in &self.cfg.corpus {
            let manifest = src.manifest.as_deref().map(CorpusManifest::load).transpose()?;
            let c = build_corpus_with(self.exec, &src.root, &src.industry, manifest.as_ref(), &opts)?;
            for (m, _) in &c.movies {
                if !ids.insert(m.movie_id.clone()) {
                    return Err(Error::ConfigInvalid(format!(
                        "movie_id `{}` appears in more than one corpus",
                        m.movie_id
                    )));
                }
            }
            skipped.extend(c.skipped.into_iter().map(|s| (src.industry.clone(), s.path, s.reason)));
            movies.extend(c.movies);
        }

        let mut out = StageOutput::default();
        let mut buf = Vec::new();
        write_documents_jsonl(&mut buf, &movies)?;
        out.file("corpus.jsonl", buf);
        let records: Vec<&MovieRecord> = movies.iter().map(|(m, _)| m).collect();
        out.file(
            "movies.csv",
            csv_bytes(&records, &["movie_id", "industry", "year", "title", "source_path"])?,
        );
        out.file("ingest_skipped.csv", csv_bytes(&skipped, &["industry", "path", "reason"])?);
        out.count("movies", movies.len());
        out.count("skipped", skipped.len());
        out.count("lines", movies.iter().map(|(_, d)| d.lines.len()).sum());
        Ok(out)
    }

    fn extract(&self) -> Result<StageOutput> {
        let docs = self.documents()?;
        let kw = self.keyword_config_checked()?;
        let window = self.cfg.window();
        let all = extract_emotion_excerpts_with(self.exec, &docs, &kw.lexemes, &window)?;
        let outcome = apply_exclusions(all, &kw.exclusions);

        let industries = self.industries_with(docs.iter().map(|(m, _)| &m.industry));
        let mut controls = Vec::new();
        for ind in &industries {
            let movies: Vec<(MovieRecord, SubtitleDocument)> =
                docs.iter().filter(|(m, _)| &m.industry == ind).cloned().collect();
            if movies.is_empty() {
                continue;
            }
            let emotion: Vec<Excerpt> = outcome
                .kept
                .iter()
                .chain(outcome.excluded.iter().map(|e| &e.excerpt))
                .filter(|e| &e.industry == ind)
                .cloned()
                .collect();
            let kept = outcome.kept.iter().filter(|e| &e.industry == ind).count();
            let target = control_target(kept, self.cfg.control_ratio);
            let seed = industry_seed(self.cfg.seed, ind);
            controls.extend(sample_control_set(&movies, &emotion, &kw.lexemes, target, &window, seed)?);
        }

        let mut excerpts = outcome.kept.clone();
        excerpts.extend(controls);
        let summary = dataset_summary(&excerpts);
        let totals = corpus_totals(&docs);
        let rows: Vec<DatasetRow> = industries
            .iter()
            .map(|ind| {
                let (movies, tokens) = totals.get(ind).copied().unwrap_or_default();
                let c = summary.get(ind).copied().unwrap_or_default();
                DatasetRow {
                    industry: ind.clone(),
                    movies,
                    tokens,
                    shame: c.shame,
                    pride: c.pride,
                    control: c.control,
                }
            })
            .collect();

        let mut out = StageOutput::default();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &excerpts)?;
        out.file("excerpts.jsonl", buf);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &outcome.excluded)?;
        out.file("exclusions.jsonl", buf);
        out.file(
            "dataset_summary.csv",
            csv_bytes(&rows, &["industry", "movies", "tokens", "shame", "pride", "control"])?,
        );
        out.count("kept", outcome.kept.len());
        out.count("excluded", outcome.excluded.len());
        out.count("control", excerpts.len() - outcome.kept.len());
        Ok(out)
    }

    fn keyword_config_checked(&self) -> Result<KeywordConfig> {
        let kw = self.cfg.keyword_config()?;
        kw.validate()?;
        Ok(kw)
    }

    fn lexstats(&self) -> Result<StageOutput> {
        let excerpts = self.excerpts()?;
        let kw = self.keyword_config_checked()?;
        let (lexicon, removed) = strip_search_keywords(&Lexicon::load(&self.cfg.lexicon)?, &kw.lexemes);
        let matrix = profile_matrix_with(self.exec, &excerpts, &lexicon);
        let row_of: BTreeMap<&str, usize> = matrix
            .excerpt_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();

        let mut out = StageOutput::default();
        let mut buf = Vec::new();
        matrix.write_csv(&mut buf)?;
        out.file("profiles.csv", buf);
        out.file("lexicon_removed.csv", csv_bytes(&removed, &["category", "entry"])?);

        let mut degenerate: Vec<(Industry, Emotion, String, String)> = Vec::new();
        let (mut tables, mut significant) = (0, 0);
        for ind in self.industries_with(excerpts.iter().map(|e| &e.industry)) {
            for emo in [Emotion::Shame, Emotion::Pride] {
                let group: Vec<&Excerpt> = excerpts
                    .iter()
                    .filter(|e| e.industry == ind && (e.emotion == emo || e.emotion == Emotion::Control))
                    .filter(|e| row_of.contains_key(e.excerpt_id.as_str()))
                    .collect();
                let labels: Vec<bool> = group.iter().map(|e| e.emotion == emo).collect();
                let pos = labels.iter().filter(|b| **b).count();
                if group.len() < 3 || pos == 0 || pos == labels.len() {
                    log::warn!("{ind}/{emo}: {pos} emotion and {} control profiles, skipping", labels.len() - pos);
                    continue;
                }
                let sub = ProfileMatrix {
                    categories: matrix.categories.clone(),
                    excerpt_ids: group.iter().map(|e| e.excerpt_id.clone()).collect(),
                    rows: group.iter().map(|e| matrix.rows[row_of[e.excerpt_id.as_str()]].clone()).collect(),
                    skipped: Vec::new(),
                };
                let mut table = correlate_categories_with(self.exec, &sub, &labels, self.cfg.alpha)?;
                let emotion_side: Vec<Excerpt> =
                    group.iter().filter(|e| e.emotion == emo).map(|e| (*e).clone()).collect();
                attach_top_words(&mut table, &emotion_side, &lexicon, self.cfg.top_words);
                degenerate.extend(
                    table
                        .degenerate
                        .iter()
                        .map(|d| (ind.clone(), emo, d.category.clone(), d.reason.clone())),
                );
                tables += 1;
                significant += table.significant().count();
                let mut buf = Vec::new();
                table.write_csv(&mut buf)?;
                out.file(format!("correlations_{}_{}.csv", file_label(&ind), emo), buf);
            }
        }
        out.file(
            "lexstats_degenerate.csv",
            csv_bytes(&degenerate, &["industry", "emotion", "category", "reason"])?,
        );
        out.count("profiles", matrix.rows.len());
        out.count("zero_token_excerpts", matrix.skipped.len());
        out.count("removed_entries", removed.len());
        out.count("tables", tables);
        out.count("significant", significant);
        Ok(out)
    }

    fn norms(&self) -> Result<StageOutput> {
        let excerpts: Vec<Excerpt> = self
            .excerpts()?
            .into_iter()
            .filter(|e| e.emotion != Emotion::Control)
            .collect();
        let industries = self.industries_with(excerpts.iter().map(|e| &e.industry));
        let templates = TemplateSet::for_industries(&industries, self.cfg.chat.persona)?;
        let client = ChatClient::from_config(&self.cfg.chat, self.offline)?;
        let outcome = extract_norms_with(self.exec, &excerpts, &templates, &client, self.cfg.chat.concurrency);

        let mut out = StageOutput::default();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &outcome.records)?;
        out.file("norms.jsonl", buf);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &outcome.failures)?;
        out.file("norm_failures.jsonl", buf);
        let mut buf = Vec::new();
        norm_stats(&outcome.records).write_csv(&mut buf)?;
        out.file("norm_stats.csv", buf);
        out.count("records", outcome.records.len());
        out.count("failures", outcome.failures.len());
        out.count("with_reason", outcome.records.iter().filter(|r| r.reason.is_some()).count());
        let pf = outcome.provider_failures();
        if pf > 0 {
            out.deferred = Some(Error::ProviderUnavailable(format!(
                "{pf} of {} requests could not be answered; see norm_failures.jsonl",
                excerpts.len()
            )));
        }
        Ok(out)
    }

    fn cluster(&self) -> Result<StageOutput> {
        let records = self.norm_records()?;
        let source = EmbeddingSource::from_config(&self.cfg.embedding, self.offline)?;
        let cc = &self.cfg.clustering;
        let mut out = StageOutput::default();
        for emo in [Emotion::Shame, Emotion::Pride] {
            let subset: Vec<NormRecord> = records.iter().filter(|r| r.emotion == emo).cloned().collect();
            let uniques = dedupe_norms(&subset);
            let mut report = ClusterReport {
                threshold: cc.threshold,
                linkage: cc.linkage,
                metric: cc.metric,
                rows: Vec::new(),
                dropped: Vec::new(),
            };
            if !uniques.is_empty() {
                let texts: Vec<String> = uniques.iter().map(|u| u.text.clone()).collect();
                let vectors: Vec<Vec<f64>> = embed_norms(&texts, &source)?.into_iter().map(|e| e.vector).collect();
                let dendro = agglomerative_cluster_with(self.exec, &vectors, cc.linkage, cc.metric, cc.normalize)?;
                let mut asg = assign_clusters(&dendro, &vectors, cc.threshold);
                if let Some(path) = cc.edits.get(&emo) {
                    let text = fs::read_to_string(path).map_err(|e| Error::unreadable(path, e))?;
                    apply_cluster_edits(&mut asg, &parse_cluster_edits(&text)?, &vectors)?;
                }
                report.rows = cluster_report(&asg, &uniques);
                report.dropped = asg.dropped;
            }
            out.count(format!("{emo}_unique_norms"), uniques.len());
            out.count(format!("{emo}_clusters"), report.rows.len());
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            out.file(format!("clusters_{emo}.csv"), buf);
            let mut json = serde_json::to_vec_pretty(&report)?;
            json.push(b'\n');
            out.file(format!("clusters_{emo}.json"), json);
        }
        Ok(out)
    }

    fn cluster_json(&self, emo: Emotion) -> Result<ClusterReport> {
        Ok(serde_json::from_str(&self.read(&format!("clusters_{emo}.json"))?)?)
    }

    fn assoc(&self) -> Result<StageOutput> {
        let records = self.norm_records()?;
        let industries = self.industries_with(records.iter().map(|r| &r.industry));
        let mut rows: Vec<AssociationRow> = Vec::new();
        let mut push = |dimension: String, group: String, res: Result<Vec<crate::assoc::ThemeAssociation>>| match res {
            Ok(v) => rows.extend(v.into_iter().map(|a| AssociationRow {
                dimension: dimension.clone(),
                group: group.clone(),
                theme: a.theme,
                delta: a.delta,
            })),
            Err(e) => log::warn!("{dimension} {group}: skipped: {e}"),
        };

        for emo in [Emotion::Shame, Emotion::Pride] {
            let report = self.cluster_json(emo)?;
            let by_theme = |f: &dyn Fn(&crate::cluster::ClusterRow) -> usize| {
                let mut m: BTreeMap<String, u64> = BTreeMap::new();
                for r in &report.rows {
                    *m.entry(r.name.clone()).or_default() += f(r) as u64;
                }
                m
            };
            if let [a, b, ..] = industries.as_slice() {
                let ga = GroupCounts::partitioned(a.as_str(), by_theme(&|r| r.by_industry.get(a).copied().unwrap_or(0)));
                let gb = GroupCounts::partitioned(b.as_str(), by_theme(&|r| r.by_industry.get(b).copied().unwrap_or(0)));
                push(format!("industry_{emo}"), format!("{a}-{b}"), theme_association(&ga, &gb));
            }
            for ind in &industries {
                let count = |g: Gender| {
                    by_theme(&|r| {
                        r.by_gender
                            .get(ind)
                            .and_then(|m| m.get(&g))
                            .copied()
                            .unwrap_or(0)
                    })
                };
                let female = GroupCounts::partitioned("female", count(Gender::Female));
                let male = GroupCounts::partitioned("male", count(Gender::Male));
                push(format!("gender_{emo}"), format!("{ind}:female-male"), gender_theme_delta(&female, &male));
            }
        }
        for g in gender_attribution(&norm_stats(&records)) {
            let group = g.industry.to_string();
            for (theme, v) in [
                ("male", g.male.as_ref().map(|a| a.delta)),
                ("female", g.female.as_ref().map(|a| a.delta)),
                ("gap", g.gap),
            ] {
                if let Some(delta) = v {
                    rows.push(AssociationRow {
                        dimension: "gender_attribution".into(),
                        group: group.clone(),
                        theme: theme.into(),
                        delta,
                    });
                }
            }
        }
        let mut out = StageOutput::default();
        let mut buf = Vec::new();
        write_association_csv(&mut buf, &rows)?;
        out.file("associations.csv", buf);
        out.count("rows", rows.len());
        Ok(out)
    }

    fn report(&self) -> Result<StageOutput> {
        let md = render_report(&self.cfg.output_dir)?;
        let mut out = StageOutput::default();
        out.count("bytes", md.len());
        out.file("report.md", md.into_bytes());
        Ok(out)
    }
}

fn absent(md: &mut String, stage: Stage) {
    let _ = writeln!(md, "_Not available: run the `{stage}` stage._\n");
}

fn f2(x: f64) -> String {
    format!("{x:.2}")
}

/// Markdown summary of whatever artifacts exist in `dir`. Requires at least
/// the extraction summary.
pub fn render_report(dir: &Path) -> Result<String> {
    let summary_path = dir.join("dataset_summary.csv");
    if !summary_path.exists() {
        return Err(Error::MissingUpstream {
            stage: "report".into(),
            upstream: "extract".into(),
            artifact: "dataset_summary.csv".into(),
        });
    }
    let mut md = String::from("# Shame and pride norm report\n\n## Dataset\n\n");
    md.push_str("| Industry | Movies | Tokens | Shame | Pride | Control |\n|---|---:|---:|---:|---:|---:|\n");
    for r in read_csv_rows::<DatasetRow>(&summary_path)? {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} |",
            r.industry, r.movies, r.tokens, r.shame, r.pride, r.control
        );
    }
    md.push('\n');

    let excl = dir.join("exclusions.jsonl");
    if excl.exists() {
        let rows: Vec<ExcludedExcerpt> = read_jsonl(&fs::read_to_string(&excl)?)?;
        let mut by_rule: BTreeMap<(usize, String), usize> = BTreeMap::new();
        for r in &rows {
            *by_rule.entry((r.rule_id, r.phrase.clone())).or_default() += 1;
        }
        let _ = writeln!(md, "Excluded by phrase: {} excerpts.\n", rows.len());
        for ((id, phrase), n) in by_rule {
            let _ = writeln!(md, "- rule {id} \"{phrase}\": {n}");
        }
        md.push('\n');
    }

    md.push_str("## Lexical correlates\n\n");
    let mut corr: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("correlations_") && n.ends_with(".csv"))
        })
        .collect();
    corr.sort();
    if corr.is_empty() {
        absent(&mut md, Stage::Lexstats);
    }
    for p in corr {
        let name = p.file_stem().and_then(|n| n.to_str()).unwrap_or_default();
        let label = name.trim_start_matches("correlations_").replace('_', " / ");
        let t = CorrelationTable::read_csv(fs::File::open(&p)?)?;
        let _ = writeln!(md, "### {label}\n");
        let sig: Vec<_> = t.significant().collect();
        if sig.is_empty() {
            md.push_str("No category is significant after correction.\n\n");
            continue;
        }
        md.push_str("| Category | r | 95% CI | p (adj.) | Top words |\n|---|---:|---|---:|---|\n");
        for r in sig.iter().take(10) {
            let _ = writeln!(
                md,
                "| {} | {} | [{}, {}] | {:.2e} | {} |",
                r.category,
                f2(r.r),
                f2(r.ci_low),
                f2(r.ci_high),
                r.p_adj,
                r.top_words.join(", ")
            );
        }
        md.push('\n');
    }

    md.push_str("## Norms\n\n");
    let ns = dir.join("norm_stats.csv");
    if ns.exists() {
        md.push_str("| Industry | Emotion | Male | Female | Not known | Total | No reason |\n|---|---|---:|---:|---:|---:|---:|\n");
        for r in read_csv_rows::<NormStatsRow>(&ns)? {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} |",
                r.industry, r.emotion, r.male, r.female, r.not_known, r.total, r.no_reason
            );
        }
        md.push('\n');
    } else {
        absent(&mut md, Stage::Norms);
    }

    for emo in [Emotion::Shame, Emotion::Pride] {
        let _ = writeln!(md, "## Themes: {emo}\n");
        let p = dir.join(format!("clusters_{emo}.json"));
        if !p.exists() {
            absent(&mut md, Stage::Cluster);
            continue;
        }
        let rep: ClusterReport = serde_json::from_str(&fs::read_to_string(&p)?)?;
        let _ = writeln!(
            md,
            "{} clusters ({:?} linkage, {} distance, threshold {}).\n",
            rep.rows.len(),
            rep.linkage,
            rep.metric,
            rep.threshold
        );
        if rep.rows.is_empty() {
            continue;
        }
        md.push_str("| Cluster | Dialogues | By industry | Exemplars |\n|---|---:|---|---|\n");
        for r in &rep.rows {
            let by: Vec<String> = r.by_industry.iter().map(|(i, n)| format!("{i} {n}")).collect();
            let ex: Vec<&str> = r.exemplars.iter().take(3).map(String::as_str).collect();
            let _ = writeln!(md, "| {} | {} | {} | {} |", r.name, r.dialogues, by.join(", "), ex.join("; "));
        }
        md.push('\n');
    }

    md.push_str("## Associations\n\n");
    let ap = dir.join("associations.csv");
    if ap.exists() {
        let rows = read_association_csv(fs::File::open(&ap)?)?;
        let mut groups: BTreeMap<(String, String), Vec<&AssociationRow>> = BTreeMap::new();
        for r in &rows {
            groups.entry((r.dimension.clone(), r.group.clone())).or_default().push(r);
        }
        for ((dim, group), rs) in groups {
            let _ = writeln!(md, "### {dim}: {group}\n\n| Theme | Delta |\n|---|---:|");
            for r in rs {
                let _ = writeln!(md, "| {} | {} |", r.theme, f2(r.delta));
            }
            md.push('\n');
        }
    } else {
        absent(&mut md, Stage::Assoc);
    }
    Ok(md)
}
