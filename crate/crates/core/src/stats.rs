//! Category-vs-emotion correlation statistics.
//!
//! Each lexicon category is correlated with a 0/1 indicator (emotion excerpt
//! = 1, control excerpt = 0). Point-biserial correlation is Pearson's r on
//! that indicator. p-values are two-sided from Student's t with n-2 degrees
//! of freedom, intervals use the Fisher z-transform, and the family of
//! category p-values is corrected with Benjamini-Hochberg.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::excerpt::Excerpt;
use crate::exec::Exec;
use crate::lexicon::{tokenize, Lexicon, ProfileMatrix};

/// Two-sided 97.5% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

/// Pearson r of a binary indicator against real values, with a two-sided
/// t-test p-value.
pub fn pearson_point_biserial(indicator: &[bool], values: &[f64]) -> Result<Correlation> {
    let n = indicator.len();
    if n != values.len() {
        return Err(Error::DegenerateInput(format!(
            "length mismatch: {n} labels vs {} values",
            values.len()
        )));
    }
    if n < 3 {
        return Err(Error::DegenerateInput(format!("need n >= 3, got {n}")));
    }
    let ones = indicator.iter().filter(|b| **b).count();
    if ones == 0 || ones == n {
        return Err(Error::DegenerateInput("indicator has a single class".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite value".into()));
    }

    let nf = n as f64;
    let mx = ones as f64 / nf;
    let my = values.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (b, y) in indicator.iter().zip(values) {
        let dx = if *b { 1.0 } else { 0.0 } - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if syy == 0.0 {
        return Err(Error::DegenerateInput("values are constant".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(Correlation {
        r,
        p: t_test_p(r, n),
        n,
    })
}

/// Two-sided p for H0: rho = 0. With t^2 = r^2 (n-2) / (1-r^2), the tail
/// probability reduces to the regularized incomplete beta I_{1-r^2}(df/2, 1/2).
fn t_test_p(r: f64, n: usize) -> f64 {
    let x = 1.0 - r * r;
    if x <= 0.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    beta_reg(df / 2.0, 0.5, x.min(1.0)).clamp(0.0, 1.0)
}

/// Confidence interval for r via the Fisher z-transform.
pub fn fisher_ci(r: f64, n: usize, level: f64) -> Result<(f64, f64)> {
    if r.is_nan() || r.abs() >= 1.0 {
        return Err(Error::DegenerateInput(format!("|r| must be < 1, got {r}")));
    }
    if n < 4 {
        return Err(Error::DegenerateInput(format!("need n >= 4, got {n}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::DegenerateInput(format!("level must be in (0,1), got {level}")));
    }
    let z_crit = if level == 0.95 {
        Z_95
    } else {
        Normal::standard().inverse_cdf(1.0 - (1.0 - level) / 2.0)
    };
    let z = r.atanh();
    let half = z_crit / ((n - 3) as f64).sqrt();
    Ok(((z - half).tanh(), (z + half).tanh()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BhOutcome {
    pub adjusted: Vec<f64>,
    pub reject: Vec<bool>,
}

/// Benjamini-Hochberg step-up correction. Rejections are the classic set
/// {i : p(i) <= k*alpha/m} for the largest qualifying rank k, which is the
/// same as `adjusted <= alpha`.
pub fn benjamini_hochberg(pvalues: &[f64], alpha: f64) -> Result<BhOutcome> {
    let m = pvalues.len();
    if m == 0 {
        return Err(Error::EmptyInput("p-values"));
    }
    if let Some(bad) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidPValue(*bad));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]).then(a.cmp(&b)));

    let mf = m as f64;
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0_f64;
    for rank in (1..=m).rev() {
        let i = order[rank - 1];
        // max() guards against m*p/k rounding one ulp below p
        running = running.min((mf * pvalues[i] / rank as f64).max(pvalues[i])).min(1.0);
        adjusted[i] = running;
    }

    let cutoff_rank = (1..=m)
        .rev()
        .find(|&k| pvalues[order[k - 1]] <= k as f64 * alpha / mf)
        .unwrap_or(0);
    let mut reject = vec![false; m];
    for &i in &order[..cutoff_rank] {
        reject[i] = true;
    }
    Ok(BhOutcome { adjusted, reject })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub category: String,
    pub r: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p: f64,
    pub p_adj: f64,
    pub significant: bool,
    pub n: usize,
    pub top_words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegenerateCategory {
    pub category: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrelationTable {
    /// Sorted by r, descending.
    pub results: Vec<CorrelationResult>,
    pub degenerate: Vec<DegenerateCategory>,
}

impl CorrelationTable {
    pub fn significant(&self) -> impl Iterator<Item = &CorrelationResult> {
        self.results.iter().filter(|r| r.significant)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "category",
            "r",
            "ci_low",
            "ci_high",
            "p",
            "p_adj",
            "significant",
            "n",
            "top_words",
        ])?;
        for r in &self.results {
            wtr.write_record([
                r.category.clone(),
                r.r.to_string(),
                r.ci_low.to_string(),
                r.ci_high.to_string(),
                r.p.to_string(),
                r.p_adj.to_string(),
                r.significant.to_string(),
                r.n.to_string(),
                r.top_words.join("|"),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut results = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .unwrap_or_default()
                    .parse()
                    .map_err(|_| Error::ConfigInvalid(format!("bad number in column {i}")))
            };
            results.push(CorrelationResult {
                category: rec.get(0).unwrap_or_default().to_string(),
                r: num(1)?,
                ci_low: num(2)?,
                ci_high: num(3)?,
                p: num(4)?,
                p_adj: num(5)?,
                significant: rec.get(6) == Some("true"),
                n: num(7)? as usize,
                top_words: rec
                    .get(8)
                    .unwrap_or_default()
                    .split('|')
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect(),
            });
        }
        Ok(CorrelationTable {
            results,
            degenerate: Vec::new(),
        })
    }
}

/// Interval reported alongside r. Falls back to the limits of the transform
/// where the Fisher interval is undefined: a perfect correlation collapses to
/// [r, r] and n = 3 spans [-1, 1].
fn reported_ci(r: f64, n: usize, level: f64) -> (f64, f64) {
    match fisher_ci(r, n, level) {
        Ok(ci) => ci,
        Err(_) if r.abs() >= 1.0 => (r, r),
        Err(_) => (-1.0, 1.0),
    }
}

/// Correlate every category column against the emotion indicator.
pub fn correlate_categories(
    matrix: &ProfileMatrix,
    labels: &[bool],
    alpha: f64,
) -> Result<CorrelationTable> {
    correlate_categories_with(Exec::default(), matrix, labels, alpha)
}

pub fn correlate_categories_with(
    exec: Exec,
    matrix: &ProfileMatrix,
    labels: &[bool],
    alpha: f64,
) -> Result<CorrelationTable> {
    if labels.len() != matrix.rows.len() {
        return Err(Error::DegenerateInput(format!(
            "{} labels for {} profiles",
            labels.len(),
            matrix.rows.len()
        )));
    }
    let n = labels.len();
    if n < 3 {
        return Err(Error::DegenerateInput(format!("need >= 3 excerpts, got {n}")));
    }
    if labels.iter().all(|b| *b) || labels.iter().all(|b| !*b) {
        return Err(Error::DegenerateInput("both emotion and control excerpts are required".into()));
    }

    let per_cat = exec.map_range(matrix.categories.len(), |j| {
        // canonical order makes the sums independent of excerpt order
        let mut pairs: Vec<(f64, bool)> = matrix.rows.iter().map(|r| r[j]).zip(labels.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (vals, ind): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
        pearson_point_biserial(&ind, &vals)
    });

    let mut table = CorrelationTable::default();
    let mut kept: Vec<(String, Correlation)> = Vec::new();
    for (cat, res) in matrix.categories.iter().zip(per_cat) {
        match res {
            Ok(c) => kept.push((cat.clone(), c)),
            Err(Error::DegenerateInput(reason)) => table.degenerate.push(DegenerateCategory {
                category: cat.clone(),
                reason,
            }),
            Err(e) => return Err(e),
        }
    }
    if kept.is_empty() {
        return Ok(table);
    }
    let ps: Vec<f64> = kept.iter().map(|(_, c)| c.p).collect();
    let bh = benjamini_hochberg(&ps, alpha)?;
    for (i, (cat, c)) in kept.into_iter().enumerate() {
        let (lo, hi) = reported_ci(c.r, c.n, 0.95);
        table.results.push(CorrelationResult {
            category: cat,
            r: c.r,
            ci_low: lo,
            ci_high: hi,
            p: c.p,
            p_adj: bh.adjusted[i],
            significant: bh.reject[i],
            n: c.n,
            top_words: Vec::new(),
        });
    }
    table
        .results
        .sort_by(|a, b| b.r.total_cmp(&a.r).then_with(|| a.category.cmp(&b.category)));
    Ok(table)
}

/// The `k` most frequent tokens that matched `category`, ties broken
/// lexicographically.
pub fn top_words_for_category(
    excerpts: &[Excerpt],
    lexicon: &Lexicon,
    category: &str,
    k: usize,
) -> Vec<String> {
    let Some(cat) = lexicon.categories.get(category) else {
        return Vec::new();
    };
    let mut counts: HashMap<String, usize> = HashMap::new();
    for ex in excerpts {
        for t in tokenize(&ex.text) {
            if cat.matches(&t) {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    let mut words: Vec<(String, usize)> = counts.into_iter().collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    words.into_iter().take(k).map(|(w, _)| w).collect()
}

/// Fill `top_words` for every result from the emotion-side excerpts.
pub fn attach_top_words(table: &mut CorrelationTable, excerpts: &[Excerpt], lexicon: &Lexicon, k: usize) {
    for r in &mut table.results {
        r.top_words = top_words_for_category(excerpts, lexicon, &r.category, k);
    }
}
