//! Keyword scoring: LDA topics, saliency and relevance, essentiality propagated
//! from a tagged seed list through embedding similarity, and trending terms.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercase, split on anything that is not alphanumeric, drop tokens shorter than 2 chars.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    documents: Vec<Vec<usize>>,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    term_frequency: Vec<usize>,
}

impl Corpus {
    /// Vocabulary in order of first appearance. Empty documents are dropped.
    pub fn from_token_lists(docs: Vec<Vec<String>>) -> Result<Self> {
        let mut c = Corpus { documents: Vec::new(), vocab: Vec::new(), index: HashMap::new(), term_frequency: Vec::new() };
        for doc in docs {
            if doc.is_empty() {
                continue;
            }
            let ids = doc.into_iter().map(|t| c.intern(t)).collect::<Vec<_>>();
            for &id in &ids {
                c.term_frequency[id] += 1;
            }
            c.documents.push(ids);
        }
        if c.documents.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(c)
    }

    pub fn from_texts<S: AsRef<str>>(lines: &[S]) -> Result<Self> {
        Corpus::from_token_lists(lines.iter().map(|l| tokenize(l.as_ref())).collect())
    }

    /// One document per line, UTF-8.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Corpus::from_texts(&text.lines().collect::<Vec<_>>())
    }

    fn intern(&mut self, t: String) -> usize {
        if let Some(&id) = self.index.get(&t) {
            return id;
        }
        let id = self.vocab.len();
        self.index.insert(t.clone(), id);
        self.vocab.push(t);
        self.term_frequency.push(0);
        id
    }

    pub fn documents(&self) -> &[Vec<usize>] {
        &self.documents
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn term_id(&self, w: &str) -> Option<usize> {
        self.index.get(w).copied()
    }

    pub fn frequency(&self, w: &str) -> Option<usize> {
        self.term_id(w).map(|i| self.term_frequency[i])
    }

    pub fn term_frequency(&self) -> &[usize] {
        &self.term_frequency
    }

    pub fn n_tokens(&self) -> usize {
        self.term_frequency.iter().sum()
    }

    /// Splits documents into (train, held-out) sharing this corpus' vocabulary.
    /// Term frequencies of each part are recounted.
    pub fn split(&self, heldout_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
        if !(heldout_fraction > 0.0 && heldout_fraction < 1.0) {
            return Err(Error::BadParameter(format!("held-out fraction {heldout_fraction} outside (0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for d in &self.documents {
            if rng.gen::<f64>() < heldout_fraction {
                test.push(d.clone());
            } else {
                train.push(d.clone());
            }
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok((self.with_documents(train), self.with_documents(test)))
    }

    fn with_documents(&self, documents: Vec<Vec<usize>>) -> Corpus {
        let mut term_frequency = vec![0; self.vocab.len()];
        for &w in documents.iter().flatten() {
            term_frequency[w] += 1;
        }
        Corpus { documents, vocab: self.vocab.clone(), index: self.index.clone(), term_frequency }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaOptions {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for LdaOptions {
    fn default() -> Self {
        LdaOptions { k: 20, alpha: 50.0 / 20.0, beta: 0.01, iterations: 1000, seed: 0 }
    }
}

impl LdaOptions {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::BadHyperparameter(format!("K must be at least 2, got {}", self.k)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) || !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::BadHyperparameter(format!("alpha {} and beta {} must be positive", self.alpha, self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub k: usize,
    pub vocab: Vec<String>,
    /// `phi[t][w]` = p(w | t).
    pub phi: Vec<Vec<f64>>,
    /// p(t).
    pub topic_weights: Vec<f64>,
    pub doc_theta: Vec<Vec<f64>>,
}

impl TopicModel {
    fn term(&self, w: &str) -> Result<usize> {
        self.vocab.iter().position(|v| v == w).ok_or_else(|| Error::UnknownTerm(w.to_string()))
    }

    /// p(w) = sum_t p(t) p(w | t).
    pub fn term_probability(&self, w: usize) -> f64 {
        (0..self.k).map(|t| self.topic_weights[t] * self.phi[t][w]).sum()
    }

    /// p(t | w) by Bayes rule.
    pub fn topic_given_term(&self, w: usize) -> Vec<f64> {
        let pw = self.term_probability(w);
        (0..self.k).map(|t| if pw > 0.0 { self.topic_weights[t] * self.phi[t][w] / pw } else { 0.0 }).collect()
    }
}

/// Collapsed Gibbs sampler state.
pub(crate) struct Sampler<'a> {
    docs: &'a [Vec<usize>],
    opts: LdaOptions,
    v: usize,
    z: Vec<Vec<usize>>,
    n_dk: Vec<Vec<u32>>,
    n_kw: Vec<Vec<u32>>,
    n_k: Vec<u32>,
    rng: ChaCha8Rng,
    probs: Vec<f64>,
}

impl<'a> Sampler<'a> {
    pub(crate) fn new(c: &'a Corpus, opts: LdaOptions) -> Self {
        let k = opts.k;
        let v = c.vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut n_dk = vec![vec![0u32; k]; c.documents.len()];
        let mut n_kw = vec![vec![0u32; v]; k];
        let mut n_k = vec![0u32; k];
        let mut z = Vec::with_capacity(c.documents.len());
        for (d, doc) in c.documents.iter().enumerate() {
            let zd: Vec<usize> = doc
                .iter()
                .map(|&w| {
                    let t = rng.gen_range(0..k);
                    n_dk[d][t] += 1;
                    n_kw[t][w] += 1;
                    n_k[t] += 1;
                    t
                })
                .collect();
            z.push(zd);
        }
        Sampler { docs: &c.documents, opts, v, z, n_dk, n_kw, n_k, rng, probs: vec![0.0; k] }
    }

    pub(crate) fn sweep(&mut self) {
        let (alpha, beta) = (self.opts.alpha, self.opts.beta);
        let vbeta = self.v as f64 * beta;
        for (d, doc) in self.docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let old = self.z[d][i];
                self.n_dk[d][old] -= 1;
                self.n_kw[old][w] -= 1;
                self.n_k[old] -= 1;
                let mut total = 0.0;
                for t in 0..self.opts.k {
                    let p = (self.n_dk[d][t] as f64 + alpha) * (self.n_kw[t][w] as f64 + beta) / (self.n_k[t] as f64 + vbeta);
                    total += p;
                    self.probs[t] = total;
                }
                let u = self.rng.gen::<f64>() * total;
                let new = self.probs.iter().position(|&c| u < c).unwrap_or(self.opts.k - 1);
                self.z[d][i] = new;
                self.n_dk[d][new] += 1;
                self.n_kw[new][w] += 1;
                self.n_k[new] += 1;
            }
        }
    }

    /// Total tokens counted per topic, per topic-word table and per document table.
    #[cfg(test)]
    pub(crate) fn count_totals(&self) -> (u64, u64, u64) {
        let a = self.n_k.iter().map(|&c| c as u64).sum();
        let b = self.n_kw.iter().flatten().map(|&c| c as u64).sum();
        let c = self.n_dk.iter().flatten().map(|&c| c as u64).sum();
        (a, b, c)
    }

    pub(crate) fn model(&self, vocab: &[String]) -> TopicModel {
        let (k, v) = (self.opts.k, self.v);
        let (alpha, beta) = (self.opts.alpha, self.opts.beta);
        let phi = (0..k)
            .map(|t| {
                let denom = self.n_k[t] as f64 + v as f64 * beta;
                (0..v).map(|w| (self.n_kw[t][w] as f64 + beta) / denom).collect()
            })
            .collect();
        let total: f64 = self.n_k.iter().map(|&c| c as f64).sum();
        let topic_weights = self.n_k.iter().map(|&c| c as f64 / total).collect();
        let doc_theta = self
            .n_dk
            .iter()
            .zip(self.docs)
            .map(|(row, doc)| {
                let denom = doc.len() as f64 + k as f64 * alpha;
                row.iter().map(|&c| (c as f64 + alpha) / denom).collect()
            })
            .collect();
        TopicModel { k, vocab: vocab.to_vec(), phi, topic_weights, doc_theta }
    }
}

pub fn fit_lda(c: &Corpus, opts: &LdaOptions) -> Result<TopicModel> {
    opts.validate()?;
    if c.documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut s = Sampler::new(c, *opts);
    for _ in 0..opts.iterations {
        s.sweep();
    }
    Ok(s.model(&c.vocab))
}

/// Held-out perplexity with document topic mixtures estimated by fold-in Gibbs
/// sampling against the fixed topics of `m`. `docs` must share the model vocabulary.
pub fn perplexity(m: &TopicModel, docs: &Corpus, alpha: f64, fold_in_sweeps: usize, seed: u64) -> Result<f64> {
    if docs.vocab != m.vocab {
        return Err(Error::BadParameter("held-out corpus does not share the model vocabulary".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = m.k;
    let mut log_lik = 0.0;
    let mut n = 0usize;
    let mut probs = vec![0.0; k];
    for doc in &docs.documents {
        let mut n_k = vec![0u32; k];
        let mut z: Vec<usize> = doc
            .iter()
            .map(|_| {
                let t = rng.gen_range(0..k);
                n_k[t] += 1;
                t
            })
            .collect();
        for _ in 0..fold_in_sweeps {
            for (i, &w) in doc.iter().enumerate() {
                n_k[z[i]] -= 1;
                let mut total = 0.0;
                for t in 0..k {
                    total += (n_k[t] as f64 + alpha) * m.phi[t][w];
                    probs[t] = total;
                }
                let u = rng.gen::<f64>() * total;
                z[i] = probs.iter().position(|&c| u < c).unwrap_or(k - 1);
                n_k[z[i]] += 1;
            }
        }
        let denom = doc.len() as f64 + k as f64 * alpha;
        for &w in doc {
            let p: f64 = (0..k).map(|t| (n_k[t] as f64 + alpha) / denom * m.phi[t][w]).sum();
            log_lik += p.ln();
        }
        n += doc.len();
    }
    Ok((-log_lik / n as f64).exp())
}

/// frequency(w) · sum_t p(t|w) log(p(t|w) / p(t)).
pub fn saliency(m: &TopicModel, c: &Corpus, w: &str) -> Result<f64> {
    let id = m.term(w)?;
    let freq = c.frequency(w).ok_or_else(|| Error::UnknownTerm(w.to_string()))? as f64;
    let ptw = m.topic_given_term(id);
    let kl: f64 = ptw
        .iter()
        .zip(&m.topic_weights)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, pt)| p * (p / pt).ln())
        .sum();
    Ok(freq * kl)
}

/// λ p(w|t) + (1 - λ) p(w|t) / p(w).
pub fn relevance(m: &TopicModel, w: &str, t: usize, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::LambdaOutOfRange(lambda));
    }
    let id = m.term(w)?;
    if t >= m.k {
        return Err(Error::IndexOutOfRange { index: t });
    }
    let pwt = m.phi[t][id];
    let pw = m.term_probability(id);
    Ok(lambda * pwt + (1.0 - lambda) * pwt / pw)
}

/// Human-tagged essentiality values in [0, 1], keyed by lowercase term.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedTags {
    tags: BTreeMap<String, f64>,
}

impl SeedTags {
    pub fn new<I: IntoIterator<Item = (String, f64)>>(pairs: I) -> Result<Self> {
        let mut tags = BTreeMap::new();
        for (term, v) in pairs {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::BadParameter(format!("seed value {v} for {term} outside [0, 1]")));
            }
            tags.insert(term.trim().to_lowercase(), v);
        }
        Ok(SeedTags { tags })
    }

    /// CSV `term,score`, with or without a header row.
    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path).map_err(|e| csv_err(path, e))?;
        let mut pairs = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let line = i + 1;
            let (term, score) = match (rec.get(0), rec.get(1)) {
                (Some(t), Some(s)) => (t, s),
                _ => return Err(Error::Parse { path: path.display().to_string(), line, message: "expected term,score".into() }),
            };
            match score.trim().parse::<f64>() {
                Ok(v) => pairs.push((term.to_string(), v)),
                Err(_) if i == 0 => continue,
                Err(_) => return Err(Error::Parse { path: path.display().to_string(), line, message: format!("bad score {score:?}") }),
            }
        }
        SeedTags::new(pairs)
    }

    pub fn get(&self, term: &str) -> Option<f64> {
        self.tags.get(term).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.tags.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse { path: path.display().to_string(), line, message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new<I: IntoIterator<Item = (String, Vec<f64>)>>(entries: I) -> Result<Self> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (term, v) in entries {
            let d = *dim.get_or_insert(v.len());
            if v.len() != d || d == 0 {
                return Err(Error::LengthMismatch { what: format!("embedding for {term}"), expected: d, got: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::BadParameter(format!("non-finite embedding for {term}")));
            }
            if v.iter().all(|&x| x == 0.0) {
                return Err(Error::BadParameter(format!("zero embedding for {term}")));
            }
            vectors.insert(term.to_lowercase(), v);
        }
        Ok(EmbeddingTable { dim: dim.unwrap_or(0), vectors })
    }

    /// Text format: term followed by space-separated components, one term per line.
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(term) = parts.next() else { continue };
            let v = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse { path: path.to_string(), line: i + 1, message: e.to_string() })?;
            entries.push((term.to_string(), v));
        }
        EmbeddingTable::new(entries)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EmbeddingTable::parse(&text, &path.display().to_string())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Vector for a term, or the mean of word vectors for a multi-token keyword.
    pub fn vector(&self, keyword: &str) -> Option<Vec<f64>> {
        let key = keyword.trim().to_lowercase();
        if let Some(v) = self.vectors.get(&key) {
            return Some(v.clone());
        }
        let toks = tokenize(&key);
        if toks.len() < 2 {
            return None;
        }
        let mut acc = vec![0.0; self.dim];
        for t in &toks {
            let v = self.vectors.get(t)?;
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
        let n = toks.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc.iter().any(|&x| x != 0.0).then_some(acc)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Seed value for seeds; otherwise the mean of the `m` most similar seeds'
/// values weighted by max(cosine, 0). With no positive similarity among the
/// neighbours the unweighted mean is used.
pub fn essentiality(seeds: &SeedTags, emb: &EmbeddingTable, w: &str, m: usize) -> Result<f64> {
    let key = w.trim().to_lowercase();
    if let Some(v) = seeds.get(&key) {
        return Ok(v);
    }
    if m == 0 {
        return Err(Error::BadParameter("m_neighbors must be positive".into()));
    }
    let target = emb.vector(&key).ok_or_else(|| Error::UnknownTerm(w.to_string()))?;
    let mut sims: Vec<(f64, &str, f64)> =
        seeds.iter().filter_map(|(t, v)| emb.vector(t).map(|sv| (cosine(&target, &sv), t, v))).collect();
    if sims.len() < m {
        return Err(Error::InsufficientSeeds { needed: m, found: sims.len() });
    }
    sims.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let nearest = &sims[..m];
    let wsum: f64 = nearest.iter().map(|s| s.0.max(0.0)).sum();
    let score = if wsum > 0.0 {
        nearest.iter().map(|s| s.0.max(0.0) * s.2).sum::<f64>() / wsum
    } else {
        nearest.iter().map(|s| s.2).sum::<f64>() / m as f64
    };
    Ok(score.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendingTerm {
    pub term: String,
    pub ratio: f64,
    pub recent_count: usize,
}

/// Terms whose relative frequency rose, with a count floor against noisy bumps.
pub fn trending_terms(recent: &Corpus, baseline: &Corpus, min_count: usize) -> Result<Vec<TrendingTerm>> {
    let nr = recent.n_tokens();
    let nb = baseline.n_tokens();
    if nr == 0 || nb == 0 {
        return Err(Error::EmptyCorpus);
    }
    let eps = 1.0 / nb as f64;
    let mut out: Vec<TrendingTerm> = recent
        .vocab
        .iter()
        .zip(&recent.term_frequency)
        .filter(|(_, &c)| c >= min_count)
        .map(|(t, &c)| {
            let base = baseline.frequency(t).unwrap_or(0) as f64 / nb as f64;
            TrendingTerm { term: t.clone(), ratio: (c as f64 / nr as f64) / (base + eps), recent_count: c }
        })
        .collect();
    out.sort_by(|a, b| b.ratio.total_cmp(&a.ratio).then_with(|| a.term.cmp(&b.term)));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeywordConfig {
    pub lda: LdaOptions,
    pub lambda: f64,
    pub m_neighbors: usize,
    pub min_count: usize,
}

impl Default for KeywordConfig {
    fn default() -> Self {
        KeywordConfig { lda: LdaOptions::default(), lambda: 0.6, m_neighbors: 10, min_count: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordRow {
    pub term: String,
    pub frequency: usize,
    pub saliency: f64,
    pub best_topic: usize,
    pub relevance: f64,
    pub essentiality: Option<f64>,
    pub trend_ratio: Option<f64>,
}

/// One row per vocabulary term, sorted by saliency (descending).
pub fn keyword_report(
    c: &Corpus,
    m: &TopicModel,
    cfg: &KeywordConfig,
    seeds: Option<(&SeedTags, &EmbeddingTable)>,
    baseline: Option<&Corpus>,
) -> Result<Vec<KeywordRow>> {
    let trends: HashMap<String, f64> = match baseline {
        Some(b) => trending_terms(c, b, cfg.min_count)?.into_iter().map(|t| (t.term, t.ratio)).collect(),
        None => HashMap::new(),
    };
    let mut rows = Vec::with_capacity(c.vocab.len());
    for (id, term) in c.vocab.iter().enumerate() {
        let best_topic = (0..m.k).max_by(|&a, &b| m.phi[a][id].total_cmp(&m.phi[b][id]).then(b.cmp(&a))).unwrap_or(0);
        let essentiality = match seeds {
            Some((s, e)) => match essentiality(s, e, term, cfg.m_neighbors) {
                Ok(v) => Some(v),
                Err(Error::UnknownTerm(_)) => None,
                Err(err) => return Err(err),
            },
            None => None,
        };
        rows.push(KeywordRow {
            term: term.clone(),
            frequency: c.term_frequency[id],
            saliency: saliency(m, c, term)?,
            best_topic,
            relevance: relevance(m, term, best_topic, cfg.lambda)?,
            essentiality,
            trend_ratio: trends.get(term).copied(),
        });
    }
    rows.sort_by(|a, b| b.saliency.total_cmp(&a.saliency).then_with(|| a.term.cmp(&b.term)));
    Ok(rows)
}

pub fn keyword_csv(rows: &[KeywordRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("term,frequency,saliency,best_topic,relevance,essentiality,trend_ratio\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.term,
            r.frequency,
            r.saliency,
            r.best_topic,
            r.relevance,
            opt(r.essentiality),
            opt(r.trend_ratio)
        ));
    }
    out
}
