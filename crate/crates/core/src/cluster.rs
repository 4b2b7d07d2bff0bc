//! Theme discovery over norm reasons: deduplication, sentence embeddings,
//! agglomerative clustering with a distance cut, and exemplar selection.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::Industry;
use crate::error::{Error, Result};
use crate::excerpt::keyword_tokens;
use crate::exec::Exec;
use crate::norms::{Gender, NormRecord};
use crate::provider::{endpoint, request_key, sha256_hex, DiskCache, HttpJson, RetryPolicy};

/// Dedup key: lowercase with whitespace runs collapsed.
pub fn norm_key(reason: &str) -> String {
    reason.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniqueNorm {
    pub text: String,
    pub multiplicity: usize,
    pub by_industry: BTreeMap<Industry, usize>,
    pub by_gender: BTreeMap<Industry, BTreeMap<Gender, usize>>,
}

/// Collapse records with a reason onto unique keys, sorted by key. Counts
/// keep every duplicate.
pub fn dedupe_norms(records: &[NormRecord]) -> Vec<UniqueNorm> {
    let mut map: BTreeMap<String, UniqueNorm> = BTreeMap::new();
    for r in records {
        let Some(reason) = &r.reason else { continue };
        let key = norm_key(reason);
        if key.is_empty() {
            continue;
        }
        let u = map.entry(key.clone()).or_insert_with(|| UniqueNorm {
            text: key,
            multiplicity: 0,
            by_industry: BTreeMap::new(),
            by_gender: BTreeMap::new(),
        });
        u.multiplicity += 1;
        *u.by_industry.entry(r.industry.clone()).or_default() += 1;
        *u.by_gender
            .entry(r.industry.clone())
            .or_default()
            .entry(r.gender)
            .or_default() += 1;
    }
    map.into_values().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub text: String,
    pub vector: Vec<f64>,
}

/// `dim=N` header, then `text<TAB>v1,...,vN` per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorFile {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl VectorFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let bad = |line: usize, msg: String| Error::ConfigInvalid(format!("vector file line {line}: {msg}"));
        let (_, header) = lines.next().ok_or_else(|| bad(1, "missing dim header".into()))?;
        let dim: usize = header
            .trim()
            .strip_prefix("dim=")
            .and_then(|d| d.trim().parse().ok())
            .filter(|d| *d > 0)
            .ok_or_else(|| bad(1, format!("expected `dim=N`, got `{header}`")))?;
        let mut vectors = HashMap::new();
        for (i, line) in lines {
            let (text, vals) = line
                .rsplit_once('\t')
                .ok_or_else(|| bad(i + 1, "missing tab".into()))?;
            let v: Vec<f64> = vals
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(i + 1, e.to_string()))?;
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(bad(i + 1, "non-finite value".into()));
            }
            vectors.insert(norm_key(text), v);
        }
        Ok(VectorFile { dim, vectors })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::unreadable(path, e))?;
        Self::parse(&text)
    }

    /// Serialize with texts sorted.
    pub fn to_text(&self) -> String {
        let mut keys: Vec<&String> = self.vectors.keys().collect();
        keys.sort();
        let mut out = format!("dim={}\n", self.dim);
        for k in keys {
            let vals: Vec<String> = self.vectors[k].iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("{k}\t{}\n", vals.join(",")));
        }
        out
    }
}

/// Deterministic bag-of-words embedding: unigrams and bigrams hashed into
/// `dim` signed buckets, then L2-normalized.
pub fn hashed_embedding(text: &str, dim: usize) -> Vec<f64> {
    let toks: Vec<String> = keyword_tokens(text).collect();
    let mut v = vec![0.0; dim.max(1)];
    let mut add = |feature: &str, w: f64| {
        let h = sha256_hex(feature.as_bytes());
        let idx = u64::from_str_radix(&h[..12], 16).unwrap_or(0) as usize % v.len();
        let sign = if u8::from_str_radix(&h[12..14], 16).unwrap_or(0) & 1 == 0 { 1.0 } else { -1.0 };
        v[idx] += sign * w;
    };
    for t in &toks {
        add(t, 1.0);
    }
    for w in toks.windows(2) {
        add(&format!("{} {}", w[0], w[1]), 0.5);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    /// Offline hashed bag-of-words vectors.
    #[default]
    Hashed,
    /// Precomputed vector file.
    File,
    /// OpenAI-compatible `/embeddings` endpoint.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub kind: EmbeddingKind,
    pub dim: usize,
    pub vectors: Option<PathBuf>,
    pub base_url: String,
    pub model: String,
    pub timeout_secs: u64,
    pub batch_size: usize,
    pub max_retries: u32,
    pub backoff_ms: Vec<u64>,
    pub cache_dir: Option<PathBuf>,
    pub api_key_env: String,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        EmbeddingConfig {
            kind: EmbeddingKind::Hashed,
            dim: 256,
            vectors: None,
            base_url: "https://api.openai.com/v1".into(),
            model: "text-embedding-3-small".into(),
            timeout_secs: 60,
            batch_size: 64,
            max_retries: retry.max_retries,
            backoff_ms: retry.backoff_ms,
            cache_dir: None,
            api_key_env: "OPENAI_API_KEY".into(),
        }
    }
}

impl EmbeddingConfig {
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.vectors, &mut self.cache_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

pub enum EmbeddingSource {
    Hashed { dim: usize },
    File(VectorFile),
    Http(HttpEmbedder),
}

impl EmbeddingSource {
    pub fn from_config(cfg: &EmbeddingConfig, offline: bool) -> Result<Self> {
        match cfg.kind {
            EmbeddingKind::Hashed => Ok(EmbeddingSource::Hashed { dim: cfg.dim }),
            EmbeddingKind::File => {
                let path = cfg
                    .vectors
                    .as_ref()
                    .ok_or_else(|| Error::ConfigInvalid("embedding kind `file` needs `vectors`".into()))?;
                Ok(EmbeddingSource::File(VectorFile::load(path)?))
            }
            EmbeddingKind::Http => Ok(EmbeddingSource::Http(HttpEmbedder::new(cfg, offline))),
        }
    }
}

/// `/embeddings` client with a per-text disk cache.
pub struct HttpEmbedder {
    http: Option<HttpJson>,
    url: String,
    model: String,
    batch_size: usize,
    retry: RetryPolicy,
    cache: Option<DiskCache>,
}

impl HttpEmbedder {
    pub fn new(cfg: &EmbeddingConfig, offline: bool) -> Self {
        let key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        HttpEmbedder {
            http: (!offline).then(|| HttpJson::new(Duration::from_secs(cfg.timeout_secs), key)),
            url: endpoint(&cfg.base_url, "embeddings"),
            model: cfg.model.clone(),
            batch_size: cfg.batch_size.max(1),
            retry: RetryPolicy {
                max_retries: cfg.max_retries,
                backoff_ms: cfg.backoff_ms.clone(),
            },
            cache: cfg.cache_dir.as_ref().map(DiskCache::new),
        }
    }

    fn key(&self, text: &str) -> String {
        request_key(&json!({ "model": self.model, "input": text }))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut out: Vec<Option<Vec<f64>>> = texts
            .iter()
            .map(|t| {
                let hit = self.cache.as_ref()?.get(&self.key(t))?;
                serde_json::from_str(&hit).ok()
            })
            .collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|i| out[*i].is_none()).collect();
        if !missing.is_empty() {
            let http = self.http.as_ref().ok_or_else(|| {
                Error::ProviderUnavailable(format!("offline and {} embeddings are not cached", missing.len()))
            })?;
            for batch in missing.chunks(self.batch_size) {
                let input: Vec<&str> = batch.iter().map(|i| texts[*i].as_str()).collect();
                let body = json!({ "model": self.model, "input": input });
                let resp = self.retry.run(|| http.post(&self.url, &body), std::thread::sleep)?;
                let data = resp
                    .get("data")
                    .and_then(Value::as_array)
                    .ok_or_else(|| Error::ParseFailure("embedding response has no data".into()))?;
                if data.len() != batch.len() {
                    return Err(Error::ParseFailure(format!(
                        "asked for {} embeddings, got {}",
                        batch.len(),
                        data.len()
                    )));
                }
                for (slot, item) in data.iter().enumerate() {
                    // entries carry their own index; fall back to position
                    let pos = item.get("index").and_then(Value::as_u64).map_or(slot, |x| x as usize);
                    let i = *batch
                        .get(pos)
                        .ok_or_else(|| Error::ParseFailure(format!("embedding index {pos} out of range")))?;
                    let v: Vec<f64> = serde_json::from_value(item.get("embedding").cloned().unwrap_or(Value::Null))
                        .map_err(|e| Error::ParseFailure(format!("embedding: {e}")))?;
                    if let Some(c) = &self.cache {
                        c.put(&self.key(&texts[i]), &serde_json::to_string(&v)?)?;
                    }
                    out[i] = Some(v);
                }
            }
        }
        out.into_iter()
            .zip(texts)
            .map(|(v, t)| v.ok_or_else(|| Error::MissingVector(t.clone())))
            .collect()
    }
}

/// One vector per text, all of the same dimension.
pub fn embed_norms(texts: &[String], source: &EmbeddingSource) -> Result<Vec<EmbeddingVector>> {
    let vectors: Vec<Vec<f64>> = match source {
        EmbeddingSource::Hashed { dim } => texts.iter().map(|t| hashed_embedding(t, *dim)).collect(),
        EmbeddingSource::File(f) => texts
            .iter()
            .map(|t| {
                f.vectors
                    .get(&norm_key(t))
                    .cloned()
                    .ok_or_else(|| Error::MissingVector(t.clone()))
            })
            .collect::<Result<_>>()?,
        EmbeddingSource::Http(h) => h.embed(texts)?,
    };
    let dim = vectors.first().map_or(0, Vec::len);
    texts
        .iter()
        .zip(vectors)
        .map(|(t, v)| {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::DegenerateInput(format!("non-finite embedding for `{t}`")));
            }
            Ok(EmbeddingVector { text: t.clone(), vector: v })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Complete,
    #[default]
    Average,
    Ward,
}

impl FromStr for Linkage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            "ward" => Ok(Linkage::Ward),
            _ => Err(Error::ConfigInvalid(format!("unknown linkage `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        })
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// 1 - cosine similarity; 1 when either vector is zero.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (na * nb)).max(0.0)
}

pub fn unit_normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

fn check_dims(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().map_or(0, Vec::len);
    for p in points {
        if p.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
        }
    }
    Ok(dim)
}

/// Upper-triangle distances, row-major: (0,1),(0,2),..,(1,2),...
pub fn condensed_distances(points: &[Vec<f64>], metric: Metric) -> Result<Vec<f64>> {
    condensed_distances_with(Exec::default(), points, metric)
}

pub fn condensed_distances_with(exec: Exec, points: &[Vec<f64>], metric: Metric) -> Result<Vec<f64>> {
    check_dims(points)?;
    let n = points.len();
    let f = match metric {
        Metric::Euclidean => euclidean,
        Metric::Cosine => cosine_distance,
    };
    let rows = exec.map_range(n, |i| {
        (i + 1..n).map(|j| f(&points[i], &points[j])).collect::<Vec<f64>>()
    });
    Ok(rows.concat())
}

#[inline]
fn cidx(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// One agglomeration step. Leaves are nodes `0..n`; merge `k` creates node
/// `n + k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DendrogramNode {
    pub id: usize,
    pub children: Option<(usize, usize)>,
    pub merge_distance: f64,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn root_id(&self) -> Option<usize> {
        match self.n_leaves {
            0 => None,
            n => Some(n - 1 + self.merges.len()),
        }
    }

    pub fn node(&self, id: usize) -> DendrogramNode {
        if id < self.n_leaves {
            return DendrogramNode {
                id,
                children: None,
                merge_distance: 0.0,
                members: vec![id],
            };
        }
        let m = self.merges[id - self.n_leaves];
        let mut members = Vec::with_capacity(m.size);
        let mut stack = vec![id];
        while let Some(x) = stack.pop() {
            if x < self.n_leaves {
                members.push(x);
            } else {
                let mm = self.merges[x - self.n_leaves];
                stack.push(mm.left);
                stack.push(mm.right);
            }
        }
        members.sort_unstable();
        DendrogramNode {
            id,
            children: Some((m.left, m.right)),
            merge_distance: m.distance,
            members,
        }
    }

    pub fn root(&self) -> Option<DendrogramNode> {
        self.root_id().map(|r| self.node(r))
    }
}

fn lance_williams(linkage: Linkage, d_ki: f64, d_kj: f64, d_ij: f64, ni: f64, nj: f64, nk: f64) -> f64 {
    match linkage {
        Linkage::Single => d_ki.min(d_kj),
        Linkage::Complete => d_ki.max(d_kj),
        Linkage::Average => (ni * d_ki + nj * d_kj) / (ni + nj),
        Linkage::Ward => {
            let t = nk + ni + nj;
            (((nk + ni) * d_ki * d_ki + (nk + nj) * d_kj * d_kj - nk * d_ij * d_ij) / t)
                .max(0.0)
                .sqrt()
        }
    }
}

/// Total order used to pick merges: distance, then smaller node id, then
/// larger node id.
type PairKey = (f64, usize, usize);

fn key_lt(a: PairKey, b: PairKey) -> bool {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)).is_lt()
}

/// Bottom-up clustering over a condensed distance matrix. The closest pair
/// is merged at each step; each live row caches its nearest neighbour so a
/// step costs O(n) unless a cached neighbour was consumed.
pub fn agglomerate(n: usize, mut dist: Vec<f64>, linkage: Linkage) -> Dendrogram {
    assert_eq!(dist.len(), n * n.saturating_sub(1) / 2, "condensed matrix size");
    let mut node = (0..n).collect::<Vec<usize>>();
    let mut size = vec![1usize; n];
    let mut alive = vec![true; n];
    let mut nn: Vec<Option<(PairKey, usize)>> = vec![None; n];

    let row_best = |i: usize, dist: &[f64], node: &[usize], alive: &[bool]| -> Option<(PairKey, usize)> {
        let mut best: Option<(PairKey, usize)> = None;
        for j in 0..n {
            if j == i || !alive[j] {
                continue;
            }
            let d = dist[cidx(n, i, j)];
            let k = (d, node[i].min(node[j]), node[i].max(node[j]));
            if best.is_none_or(|(bk, _)| key_lt(k, bk)) {
                best = Some((k, j));
            }
        }
        best
    };
    for i in 0..n {
        nn[i] = row_best(i, &dist, &node, &alive);
    }

    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let (a, b) = {
            let mut best: Option<(PairKey, usize, usize)> = None;
            for i in (0..n).filter(|i| alive[*i]) {
                if let Some((k, j)) = nn[i] {
                    if best.is_none_or(|(bk, _, _)| key_lt(k, bk)) {
                        best = Some((k, i, j));
                    }
                }
            }
            let (_, i, j) = best.expect("at least two live clusters");
            (i.min(j), i.max(j))
        };
        let d_ab = dist[cidx(n, a, b)];
        let (na, nb) = (size[a] as f64, size[b] as f64);
        let (id_a, id_b) = (node[a], node[b]);
        merges.push(Merge {
            left: id_a.min(id_b),
            right: id_a.max(id_b),
            distance: d_ab,
            size: size[a] + size[b],
        });

        alive[b] = false;
        for k in 0..n {
            if !alive[k] || k == a {
                continue;
            }
            let nk = size[k] as f64;
            let v = lance_williams(linkage, dist[cidx(n, k, a)], dist[cidx(n, k, b)], d_ab, na, nb, nk);
            dist[cidx(n, k, a)] = v;
        }
        size[a] += size[b];
        node[a] = n + step;
        nn[b] = None;

        nn[a] = row_best(a, &dist, &node, &alive);
        for k in 0..n {
            if !alive[k] || k == a {
                continue;
            }
            match nn[k] {
                Some((_, j)) if j == a || j == b => nn[k] = row_best(k, &dist, &node, &alive),
                Some((bk, _)) => {
                    let d = dist[cidx(n, k, a)];
                    let key = (d, node[k].min(node[a]), node[k].max(node[a]));
                    if key_lt(key, bk) {
                        nn[k] = Some((key, a));
                    }
                }
                None => nn[k] = row_best(k, &dist, &node, &alive),
            }
        }
    }
    Dendrogram { n_leaves: n, merges }
}

/// Cluster vectors bottom-up. Vectors are optionally unit-normalized first.
pub fn agglomerative_cluster(
    vectors: &[Vec<f64>],
    linkage: Linkage,
    metric: Metric,
    normalize: bool,
) -> Result<Dendrogram> {
    agglomerative_cluster_with(Exec::default(), vectors, linkage, metric, normalize)
}

pub fn agglomerative_cluster_with(
    exec: Exec,
    vectors: &[Vec<f64>],
    linkage: Linkage,
    metric: Metric,
    normalize: bool,
) -> Result<Dendrogram> {
    if vectors.is_empty() {
        return Err(Error::EmptyInput("vectors"));
    }
    let pts: Vec<Vec<f64>> = if normalize {
        vectors.iter().map(|v| unit_normalize(v)).collect()
    } else {
        vectors.to_vec()
    };
    let dist = condensed_distances_with(exec, &pts, metric)?;
    Ok(agglomerate(pts.len(), dist, linkage))
}

/// Maximal subtrees whose merge distances are all below `threshold`, each
/// as a sorted leaf list, ordered by smallest leaf.
pub fn cut_at_threshold(d: &Dendrogram, threshold: f64) -> Vec<Vec<usize>> {
    let n = d.n_leaves;
    if n == 0 {
        return Vec::new();
    }
    // largest merge distance inside each internal node
    let mut inner = vec![0.0f64; d.merges.len()];
    for (k, m) in d.merges.iter().enumerate() {
        let sub = |id: usize| if id < n { 0.0 } else { inner[id - n] };
        inner[k] = m.distance.max(sub(m.left)).max(sub(m.right));
    }
    let mut clusters = Vec::new();
    let mut stack = vec![d.root_id().expect("non-empty")];
    while let Some(id) = stack.pop() {
        if id < n || inner[id - n] < threshold {
            clusters.push(d.node(id).members);
        } else {
            let m = d.merges[id - n];
            stack.push(m.left);
            stack.push(m.right);
        }
    }
    clusters.sort_by_key(|c| c[0]);
    clusters
}

/// Up to `k` members ordered by cosine distance to the mean vector, ties by
/// index.
pub fn exemplars(members: &[usize], vectors: &[Vec<f64>], k: usize) -> Vec<usize> {
    if members.is_empty() {
        return Vec::new();
    }
    let dim = vectors[members[0]].len();
    let mut centroid = vec![0.0; dim];
    for &m in members {
        for (c, x) in centroid.iter_mut().zip(&vectors[m]) {
            *c += x;
        }
    }
    let cnt = members.len() as f64;
    centroid.iter_mut().for_each(|c| *c /= cnt);
    let mut scored: Vec<(f64, usize)> = members
        .iter()
        .map(|&m| (cosine_distance(&vectors[m], &centroid), m))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, m)| m).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    pub name: String,
    pub members: Vec<usize>,
    pub exemplars: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedCluster {
    pub id: usize,
    pub reason: String,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub threshold: f64,
    pub clusters: Vec<Cluster>,
    pub dropped: Vec<DroppedCluster>,
}

pub const MAX_EXEMPLARS: usize = 10;

pub fn assign_clusters(d: &Dendrogram, vectors: &[Vec<f64>], threshold: f64) -> ClusterAssignment {
    let clusters = cut_at_threshold(d, threshold)
        .into_iter()
        .enumerate()
        .map(|(id, members)| Cluster {
            id,
            name: format!("c{id}"),
            exemplars: exemplars(&members, vectors, MAX_EXEMPLARS),
            members,
        })
        .collect();
    ClusterAssignment {
        threshold,
        clusters,
        dropped: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClusterEdit {
    Merge { a: usize, b: usize, name: String },
    Drop { id: usize, reason: String },
}

/// Lines `merge <id> <id> <name>` or `drop <id> <reason>`; `#` starts a
/// comment.
pub fn parse_cluster_edits(text: &str) -> Result<Vec<ClusterEdit>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::ConfigInvalid(format!("cluster edits line {}: {msg}", i + 1));
        let mut parts = line.split_whitespace();
        let verb = parts.next().unwrap_or_default();
        let id = |s: Option<&str>| -> Result<usize> {
            s.and_then(|x| x.parse().ok()).ok_or_else(|| bad("expected a cluster id"))
        };
        match verb {
            "merge" => {
                let a = id(parts.next())?;
                let b = id(parts.next())?;
                let name = parts.collect::<Vec<_>>().join(" ");
                if name.is_empty() {
                    return Err(bad("merge needs a name"));
                }
                out.push(ClusterEdit::Merge { a, b, name });
            }
            "drop" => {
                let id = id(parts.next())?;
                out.push(ClusterEdit::Drop {
                    id,
                    reason: parts.collect::<Vec<_>>().join(" "),
                });
            }
            other => return Err(bad(&format!("unknown directive `{other}`"))),
        }
    }
    Ok(out)
}

/// Apply edits in order. A merged cluster keeps the smaller id.
pub fn apply_cluster_edits(
    asg: &mut ClusterAssignment,
    edits: &[ClusterEdit],
    vectors: &[Vec<f64>],
) -> Result<()> {
    let pos = |asg: &ClusterAssignment, id: usize| {
        asg.clusters
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| Error::ConfigInvalid(format!("cluster edit refers to unknown cluster {id}")))
    };
    for e in edits {
        match e {
            ClusterEdit::Merge { a, b, name } => {
                if a == b {
                    return Err(Error::ConfigInvalid(format!("cannot merge cluster {a} with itself")));
                }
                let pb = pos(asg, *b)?;
                let cb = asg.clusters.remove(pb);
                let pa = pos(asg, *a)?;
                let ca = &mut asg.clusters[pa];
                ca.members.extend(cb.members);
                ca.members.sort_unstable();
                ca.id = ca.id.min(cb.id);
                ca.name = name.clone();
                ca.exemplars = exemplars(&ca.members, vectors, MAX_EXEMPLARS);
            }
            ClusterEdit::Drop { id, reason } => {
                let p = pos(asg, *id)?;
                let c = asg.clusters.remove(p);
                asg.dropped.push(DroppedCluster {
                    id: c.id,
                    reason: reason.clone(),
                    members: c.members,
                });
            }
        }
    }
    asg.clusters.sort_by_key(|c| c.id);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub cluster_id: usize,
    pub name: String,
    /// Unique norm texts.
    pub size: usize,
    /// Dialogues, duplicates included.
    pub dialogues: usize,
    pub by_industry: BTreeMap<Industry, usize>,
    pub by_gender: BTreeMap<Industry, BTreeMap<Gender, usize>>,
    pub exemplars: Vec<String>,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub threshold: f64,
    pub linkage: Linkage,
    pub metric: Metric,
    pub rows: Vec<ClusterRow>,
    pub dropped: Vec<DroppedCluster>,
}

/// Per-cluster counts. Industry and gender counts are dialogue counts.
pub fn cluster_report(asg: &ClusterAssignment, norms: &[UniqueNorm]) -> Vec<ClusterRow> {
    asg.clusters
        .iter()
        .map(|c| {
            let mut by_industry: BTreeMap<Industry, usize> = BTreeMap::new();
            let mut by_gender: BTreeMap<Industry, BTreeMap<Gender, usize>> = BTreeMap::new();
            let mut dialogues = 0;
            for &m in &c.members {
                let u = &norms[m];
                dialogues += u.multiplicity;
                for (ind, n) in &u.by_industry {
                    *by_industry.entry(ind.clone()).or_default() += n;
                }
                for (ind, g) in &u.by_gender {
                    let e = by_gender.entry(ind.clone()).or_default();
                    for (gender, n) in g {
                        *e.entry(*gender).or_default() += n;
                    }
                }
            }
            ClusterRow {
                cluster_id: c.id,
                name: c.name.clone(),
                size: c.members.len(),
                dialogues,
                by_industry,
                by_gender,
                exemplars: c.exemplars.iter().map(|&m| norms[m].text.clone()).collect(),
                members: c.members.iter().map(|&m| norms[m].text.clone()).collect(),
            }
        })
        .collect()
}

impl ClusterReport {
    /// `cluster_id,name,size,dialogues,<industry>...,exemplars`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut industries: Vec<&Industry> = self.rows.iter().flat_map(|r| r.by_industry.keys()).collect();
        industries.sort();
        industries.dedup();
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["cluster_id".to_string(), "name".into(), "size".into(), "dialogues".into()];
        header.extend(industries.iter().map(|i| i.to_string()));
        header.push("exemplars".into());
        wtr.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.cluster_id.to_string(), r.name.clone(), r.size.to_string(), r.dialogues.to_string()];
            rec.extend(
                industries
                    .iter()
                    .map(|i| r.by_industry.get(*i).copied().unwrap_or(0).to_string()),
            );
            rec.push(r.exemplars.join("|"));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}
