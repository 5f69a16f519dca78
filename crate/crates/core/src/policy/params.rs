//! Weight matrix of the linear-softmax policy and its file format.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::features::{FeatureConfig, FeatureVector};
use crate::dialogue::{hex16, Vocabulary};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PRSPOL01";

/// W as a dense row-major F x V matrix plus the fingerprints it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    features: FeatureConfig,
    vocab_fingerprint: String,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    features: FeatureConfig,
    feature_fingerprint: String,
    vocab_fingerprint: String,
}

impl PolicyParams {
    /// All-zero weights: the uniform policy.
    pub fn zeros(vocab: &Vocabulary) -> Self {
        Self::zeros_with(FeatureConfig::new(vocab.len()), vocab.fingerprint())
    }

    pub fn zeros_with(features: FeatureConfig, vocab_fingerprint: String) -> Self {
        Self {
            weights: vec![0.0; features.dim() * features.vocab_size],
            features,
            vocab_fingerprint,
        }
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        &self.features
    }

    pub fn vocab_size(&self) -> usize {
        self.features.vocab_size
    }

    pub fn vocab_fingerprint(&self) -> &str {
        &self.vocab_fingerprint
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn row(&self, feature: usize) -> &[f64] {
        let v = self.vocab_size();
        &self.weights[feature * v..(feature + 1) * v]
    }

    /// Unscaled logits Wᵀφ.
    pub fn logits(&self, fv: &FeatureVector) -> Vec<f64> {
        let mut z = vec![0.0; self.vocab_size()];
        for &f in fv.active() {
            for (zi, wi) in z.iter_mut().zip(self.row(f)) {
                *zi += wi;
            }
        }
        z
    }

    /// `self += scale * grad`.
    pub fn add_scaled(&mut self, grad: &[f64], scale: f64) {
        for (w, g) in self.weights.iter_mut().zip(grad) {
            *w += scale * g;
        }
    }

    /// SHA-256 over fingerprints and weight bits; changes iff any weight changes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.features.fingerprint().as_bytes());
        h.update(self.vocab_fingerprint.as_bytes());
        for w in &self.weights {
            h.update(w.to_le_bytes());
        }
        hex16(&h.finalize())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    /// Errors unless both params share a feature space and vocabulary.
    pub fn check_compatible(&self, other: &PolicyParams) -> Result<()> {
        if self.features != other.features || self.vocab_fingerprint != other.vocab_fingerprint {
            return Err(Error::Mismatch(
                "policy parameters use different feature spaces or vocabularies".into(),
            ));
        }
        Ok(())
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.len() != self.vocab_size() || vocab.fingerprint() != self.vocab_fingerprint {
            return Err(Error::Mismatch(format!(
                "policy was trained on vocabulary {} but corpus vocabulary is {}",
                self.vocab_fingerprint,
                vocab.fingerprint()
            )));
        }
        Ok(())
    }

    /// Layout: magic, u64 header length, JSON header, little-endian f64 weights.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&Header {
            features: self.features,
            feature_fingerprint: self.features.fingerprint(),
            vocab_fingerprint: self.vocab_fingerprint.clone(),
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.weights.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    /// Loads and verifies the file against `vocab`.
    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let params = Self::load_unchecked(path)?;
        params.check_vocab(vocab)?;
        Ok(params)
    }

    /// Loads without a vocabulary check; the internal fingerprints are still verified.
    pub fn load_unchecked(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Mismatch(format!("{}: {m}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a policy parameter file"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.feature_fingerprint != header.features.fingerprint() {
            return Err(bad("feature fingerprint mismatch"));
        }
        let n = header.features.dim() * header.features.vocab_size;
        let raw = &bytes[16 + hlen..];
        if raw.len() != 8 * n {
            return Err(bad("weight block has the wrong size"));
        }
        let weights: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(Error::NonFinite(format!("{}: weights", path.display())));
        }
        Ok(Self {
            features: header.features,
            vocab_fingerprint: header.vocab_fingerprint,
            weights,
        })
    }
}
