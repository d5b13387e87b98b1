//! Posterior draws and their on-disk container.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! "DTANETPS" | u32 version | u64 header length | JSON header
//! | f64 draws, chain-major, each chain keep × dim row-major
//! | f64 residual deviance, chain-major
//! ```
//!
//! A TOML sidecar `<file>.index.toml` records byte offsets and coordinate
//! names so the draws can be read without parsing the JSON header.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{InferenceError, MoveStats, SamplerConfig};
use crate::model::{Layout, ParameterState};

const MAGIC: &[u8; 8] = b"DTANETPS";
const VERSION: u32 = 1;

/// Draws of one chain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainDraws {
    /// keep × dim, row-major.
    pub draws: Vec<f64>,
    pub deviance: Vec<f64>,
    pub stats: Vec<MoveStats>,
    /// Proposal log-scales at the end of warmup.
    pub warmup_scales: Vec<f64>,
    pub final_log_scales: Vec<f64>,
    pub final_values: Vec<f64>,
    pub rng_word_pos: u128,
}

#[derive(Debug, Clone)]
pub struct PosteriorSamples {
    pub layout: Arc<Layout>,
    pub config: SamplerConfig,
    pub data_fingerprint: String,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorSamples {
    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// Retained draws per chain.
    pub fn keep(&self) -> usize {
        self.chains.first().map_or(0, |c| c.deviance.len())
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.deviance.len()).sum()
    }

    pub fn draw(&self, chain: usize, t: usize) -> &[f64] {
        let d = self.dim();
        &self.chains[chain].draws[t * d..(t + 1) * d]
    }

    /// All draws, chain by chain.
    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> + '_ {
        let d = self.dim();
        self.chains.iter().flat_map(move |c| c.draws.chunks_exact(d))
    }

    /// Coordinate `c` in each chain.
    pub fn trace(&self, c: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        self.chains.iter().map(|ch| ch.draws.chunks_exact(d).map(|x| x[c]).collect()).collect()
    }

    /// Coordinate `c` pooled over chains.
    pub fn pooled(&self, c: usize) -> Vec<f64> {
        self.iter_draws().map(|x| x[c]).collect()
    }

    pub fn pooled_deviance(&self) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.deviance.iter().copied()).collect()
    }

    pub fn state(&self, chain: usize, t: usize) -> ParameterState {
        ParameterState::from_values(self.layout.clone(), self.draw(chain, t).to_vec()).expect("draw has layout length")
    }

    /// Posterior mean of every coordinate.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        let mut n = 0usize;
        for x in self.iter_draws() {
            for (a, b) in m.iter_mut().zip(x) {
                *a += b;
            }
            n += 1;
        }
        m.iter_mut().for_each(|a| *a /= n.max(1) as f64);
        m
    }
}

#[derive(Serialize, Deserialize)]
struct ChainMeta {
    stats: Vec<MoveStats>,
    warmup_scales: Vec<f64>,
    final_log_scales: Vec<f64>,
    final_values: Vec<f64>,
    rng_word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    layout: Layout,
    config: SamplerConfig,
    data_fingerprint: String,
    spec_hash: String,
    dim: usize,
    keep: usize,
    chains: Vec<ChainMeta>,
}

/// Sidecar index of a container file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerIndex {
    pub version: u32,
    pub spec_hash: String,
    pub data_fingerprint: String,
    pub chains: usize,
    pub keep: usize,
    pub dim: usize,
    pub draws_offset: u64,
    pub deviance_offset: u64,
    pub names: Vec<String>,
}

pub fn index_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".index.toml");
    PathBuf::from(s)
}

fn container_err(m: impl Into<String>) -> InferenceError {
    InferenceError::Container(m.into())
}

/// Writes `samples` to `path` and its index next to it.
pub fn write_container(path: &Path, samples: &PosteriorSamples) -> Result<ContainerIndex, InferenceError> {
    let keep = samples.keep();
    if samples.chains.iter().any(|c| c.deviance.len() != keep || c.draws.len() != keep * samples.dim()) {
        return Err(container_err("chains have unequal lengths"));
    }
    let header = Header {
        layout: (*samples.layout).clone(),
        config: samples.config.clone(),
        data_fingerprint: samples.data_fingerprint.clone(),
        spec_hash: samples.layout.spec.hash(),
        dim: samples.dim(),
        keep,
        chains: samples
            .chains
            .iter()
            .map(|c| ChainMeta {
                stats: c.stats.clone(),
                warmup_scales: c.warmup_scales.clone(),
                final_log_scales: c.final_log_scales.clone(),
                final_values: c.final_values.clone(),
                rng_word_pos: c.rng_word_pos.to_string(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| container_err(e.to_string()))?;
    let mut buf = Vec::with_capacity(20 + json.len() + 8 * samples.n_draws() * (samples.dim() + 1));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    let draws_offset = buf.len() as u64;
    for c in &samples.chains {
        for x in &c.draws {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let deviance_offset = buf.len() as u64;
    for c in &samples.chains {
        for x in &c.deviance {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;

    let index = ContainerIndex {
        version: VERSION,
        spec_hash: header.spec_hash,
        data_fingerprint: header.data_fingerprint,
        chains: samples.chains.len(),
        keep,
        dim: samples.dim(),
        draws_offset,
        deviance_offset,
        names: samples.layout.names.clone(),
    };
    let text = toml::to_string(&index).map_err(|e| container_err(e.to_string()))?;
    std::fs::write(index_path(path), text)?;
    Ok(index)
}

fn read_f64s(bytes: &[u8], n: usize) -> Result<(Vec<f64>, &[u8]), InferenceError> {
    if bytes.len() < 8 * n {
        return Err(container_err("truncated draws"));
    }
    let (head, rest) = bytes.split_at(8 * n);
    Ok((head.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect(), rest))
}

pub fn read_container(path: &Path) -> Result<PosteriorSamples, InferenceError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(container_err(format!("{} is not a posterior container", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(container_err(format!("unsupported container version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(container_err("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| container_err(e.to_string()))?;
    if header.layout.spec.hash() != header.spec_hash || header.layout.dim() != header.dim {
        return Err(container_err("header is inconsistent"));
    }
    let mut rest = &body[hlen..];
    let mut chains = Vec::with_capacity(header.chains.len());
    for meta in &header.chains {
        let (draws, r) = read_f64s(rest, header.keep * header.dim)?;
        rest = r;
        chains.push(ChainDraws {
            draws,
            deviance: Vec::new(),
            stats: meta.stats.clone(),
            warmup_scales: meta.warmup_scales.clone(),
            final_log_scales: meta.final_log_scales.clone(),
            final_values: meta.final_values.clone(),
            rng_word_pos: meta.rng_word_pos.parse().map_err(|_| container_err("bad rng position"))?,
        });
    }
    for c in &mut chains {
        let (dev, r) = read_f64s(rest, header.keep)?;
        rest = r;
        c.deviance = dev;
    }
    if !rest.is_empty() {
        return Err(container_err("trailing bytes"));
    }
    Ok(PosteriorSamples {
        layout: Arc::new(header.layout),
        config: header.config,
        data_fingerprint: header.data_fingerprint,
        chains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, TestDescriptor, Threshold, ThresholdSeries, DiseaseGroup};
    use crate::inference::{run_mcmc, MoveKind};
    use crate::model::{CovarianceStructure, ModelSpec, ModelVariant};

    fn tiny() -> Dataset {
        let mut s = Vec::new();
        for st in ["A", "B", "C"] {
            for g in DiseaseGroup::ALL {
                s.push(ThresholdSeries {
                    study_id: st.into(),
                    test_id: "T".into(),
                    group: g,
                    group_size: 30,
                    thresholds: vec![Threshold::Value(1.0), Threshold::Value(2.0)],
                    positives: if g == DiseaseGroup::Diseased { vec![25, 20] } else { vec![9, 4] },
                });
            }
        }
        Dataset::new(vec![TestDescriptor::continuous("T", 1.5)], s).unwrap()
    }

    #[test]
    fn container_round_trip() {
        let d = tiny();
        let spec = ModelSpec::new(ModelVariant::MetaRegression, CovarianceStructure::BlockDiag22);
        let cfg = SamplerConfig { chains: 2, warmup_iters: 50, keep_iters: 30, ..SamplerConfig::default() };
        let s = run_mcmc(&d, &spec, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("post.bin");
        let idx = write_container(&path, &s).unwrap();
        let back = read_container(&path).unwrap();
        assert_eq!(back.chains, s.chains);
        assert_eq!(*back.layout, *s.layout);
        assert_eq!(back.config, s.config);
        let idx_back: ContainerIndex = toml::from_str(&std::fs::read_to_string(index_path(&path)).unwrap()).unwrap();
        assert_eq!(idx, idx_back);
        assert!(s.chains[0].stats.iter().any(|m| m.kind == MoveKind::Gibbs));

        // the index offsets address the raw doubles directly
        let bytes = std::fs::read(&path).unwrap();
        let at = idx.draws_offset as usize + 8 * (idx.dim + 2);
        let x = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        assert_eq!(x, s.draw(0, 1)[2]);
        let at = idx.deviance_offset as usize + 8 * idx.keep;
        let dev = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        assert_eq!(dev, s.chains[1].deviance[0]);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        std::fs::write(&path, b"not a container at all").unwrap();
        assert!(matches!(read_container(&path), Err(InferenceError::Container(_))));
    }
}
