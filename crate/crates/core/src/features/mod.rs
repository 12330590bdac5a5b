//! Node feature sources: local text features, embedding files and a
//! remote embedding service.

pub mod emb;
pub mod remote;
pub mod tfidf;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::tensor::FeatureMatrix;

pub use emb::{decode_emb1, encode_emb1, load_embedding_file, save_embedding_file};
pub use remote::{remote_embed, RemoteSpec};
pub use tfidf::{build_vocabulary, tfidf, word_binary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EncoderSpec {
    Tfidf { vocab_size: usize },
    /// Binary keyword presence over the TF-IDF vocabulary.
    Word { vocab_size: usize },
    File { path: PathBuf },
    Remote(RemoteSpec),
}

impl EncoderSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            EncoderSpec::Tfidf { .. } => "tfidf",
            EncoderSpec::Word { .. } => "word",
            EncoderSpec::File { .. } => "file",
            EncoderSpec::Remote(_) => "remote",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EncoderSpec::Tfidf { vocab_size } | EncoderSpec::Word { vocab_size } if *vocab_size == 0 => {
                Err(Error::Config(format!("{} encoder needs vocab_size >= 1", self.kind())))
            }
            EncoderSpec::File { path } if !path.is_file() => Err(Error::Config(format!(
                "embedding file {} does not exist",
                path.display()
            ))),
            EncoderSpec::Remote(r) => r.validate(),
            _ => Ok(()),
        }
    }
}

fn texts<'a>(spec: &EncoderSpec, dataset: &'a Dataset) -> Result<&'a [String]> {
    dataset.texts.as_deref().ok_or_else(|| {
        Error::Dataset(format!(
            "{} encoder needs raw texts but dataset {} has none",
            spec.kind(),
            dataset.name
        ))
    })
}

/// Produces an `n × d` feature matrix for `dataset`.
pub fn encode(spec: &EncoderSpec, dataset: &Dataset) -> Result<FeatureMatrix> {
    spec.validate()?;
    let m = match spec {
        EncoderSpec::Tfidf { vocab_size } => tfidf(texts(spec, dataset)?, *vocab_size)?.0,
        EncoderSpec::Word { vocab_size } => word_binary(texts(spec, dataset)?, *vocab_size)?,
        EncoderSpec::File { path } => load_embedding_file(path)?,
        EncoderSpec::Remote(r) => remote_embed(r, texts(spec, dataset)?)?,
    };
    if m.rows() != dataset.num_nodes() {
        return Err(Error::Dataset(format!(
            "{} encoder produced {} rows for {} nodes",
            spec.kind(),
            m.rows(),
            dataset.num_nodes()
        )));
    }
    Ok(m)
}
