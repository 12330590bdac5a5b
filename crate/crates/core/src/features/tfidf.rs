//! Shallow text features: TF-IDF and binary word presence.
//!
//! Tokens are maximal runs of alphanumeric characters, lowercased. The
//! vocabulary keeps the `vocab_size` terms with the highest document
//! frequency, ties broken lexicographically, and is returned in that order.
//! Weights are `tf · idf` with raw counts for `tf` and
//! `idf = ln((1 + N) / (1 + df)) + 1`; each row is then L2-normalised.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMatrix, Tensor};

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Fitted vocabulary with per-term document frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    pub terms: Vec<String>,
    pub doc_freq: Vec<usize>,
    pub num_docs: usize,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn idf(&self, k: usize) -> f64 {
        ((1.0 + self.num_docs as f64) / (1.0 + self.doc_freq[k] as f64)).ln() + 1.0
    }

    /// Per-document term counts over this vocabulary.
    fn counts(&self, doc: &str) -> Vec<(usize, f64)> {
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for tok in tokenize(doc) {
            if let Some(k) = self.index_of(&tok) {
                *counts.entry(k).or_default() += 1.0;
            }
        }
        let mut out: Vec<_> = counts.into_iter().collect();
        out.sort_unstable_by_key(|&(k, _)| k);
        out
    }
}

fn check_corpus<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    if vocab_size == 0 {
        return Err(Error::InvalidArgument("vocab_size must be at least 1".into()));
    }
    Ok(())
}

pub fn build_vocabulary<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<Vocabulary> {
    check_corpus(corpus, vocab_size)?;
    let mut df: HashMap<String, usize> = HashMap::new();
    for doc in corpus {
        let mut seen: Vec<String> = tokenize(doc.as_ref()).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = df.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(vocab_size);
    let index = ranked.iter().enumerate().map(|(k, (t, _))| (t.clone(), k)).collect();
    let (terms, doc_freq) = ranked.into_iter().unzip();
    Ok(Vocabulary {
        terms,
        doc_freq,
        num_docs: corpus.len(),
        index,
    })
}

/// TF-IDF matrix (one row per document) and the ordered vocabulary.
pub fn tfidf<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<(FeatureMatrix, Vec<String>)> {
    let vocab = build_vocabulary(corpus, vocab_size)?;
    let idf: Vec<f64> = (0..vocab.len()).map(|k| vocab.idf(k)).collect();
    let mut m = Tensor::zeros(corpus.len(), vocab.len());
    for (i, doc) in corpus.iter().enumerate() {
        let row = m.row_mut(i);
        for (k, c) in vocab.counts(doc.as_ref()) {
            row[k] = c * idf[k];
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok((m, vocab.terms))
}

/// Binary presence matrix over the same vocabulary as [`tfidf`].
pub fn word_binary<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<FeatureMatrix> {
    let vocab = build_vocabulary(corpus, vocab_size)?;
    let mut m = Tensor::zeros(corpus.len(), vocab.len());
    for (i, doc) in corpus.iter().enumerate() {
        for (k, _) in vocab.counts(doc.as_ref()) {
            m.set(i, k, 1.0);
        }
    }
    Ok(m)
}
