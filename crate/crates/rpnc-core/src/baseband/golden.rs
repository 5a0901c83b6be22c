//! Golden-vector files for cross-implementation regression.
//!
//! Samples are stored as little-endian interleaved 32-bit float I/Q pairs in
//! a `.iq` file. A sidecar `.manifest.toml` records the generation
//! parameters, seed, and the positions of embedded preambles so another
//! implementation can regenerate and compare.

use super::{BasebandError, Cpx, OfdmParams, PreambleRole, SampleStream};
use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GoldenManifest {
    pub params: OfdmParams,
    pub seed: u64,
    pub origin_tick: u64,
    pub sample_count: usize,
    /// (role, absolute start tick) of every embedded preamble.
    pub preambles: Vec<(PreambleRole, u64)>,
}

#[derive(Clone, Debug)]
pub struct GoldenVector {
    pub manifest: GoldenManifest,
    pub stream: SampleStream,
}

#[derive(Debug, thiserror::Error)]
pub enum GoldenError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("sample count mismatch: manifest says {manifest}, file holds {file}")]
    CountMismatch { manifest: usize, file: usize },
    #[error(transparent)]
    Baseband(#[from] BasebandError),
}

/// Write `base.iq` and `base.manifest.toml`.
pub fn write_golden(base: &Path, golden: &GoldenVector) -> Result<(), GoldenError> {
    let mut iq = Vec::with_capacity(golden.stream.len() * 8);
    for s in &golden.stream.samples {
        iq.extend_from_slice(&(s.re as f32).to_le_bytes());
        iq.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    std::fs::File::create(base.with_extension("iq"))?.write_all(&iq)?;
    let manifest = toml::to_string_pretty(&golden.manifest)
        .map_err(|e| GoldenError::Manifest(e.to_string()))?;
    std::fs::write(base.with_extension("manifest.toml"), manifest)?;
    Ok(())
}

/// Read a golden vector written by [`write_golden`].
pub fn read_golden(base: &Path) -> Result<GoldenVector, GoldenError> {
    let manifest: GoldenManifest =
        toml::from_str(&std::fs::read_to_string(base.with_extension("manifest.toml"))?)
            .map_err(|e| GoldenError::Manifest(e.to_string()))?;
    let mut raw = Vec::new();
    std::fs::File::open(base.with_extension("iq"))?.read_to_end(&mut raw)?;
    if raw.len() != manifest.sample_count * 8 {
        return Err(GoldenError::CountMismatch { manifest: manifest.sample_count, file: raw.len() / 8 });
    }
    let samples: Vec<Cpx> = raw
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[0..4].try_into().unwrap());
            let im = f32::from_le_bytes(c[4..8].try_into().unwrap());
            Cpx::new(re as f64, im as f64)
        })
        .collect();
    let stream = SampleStream::new(manifest.origin_tick, samples);
    Ok(GoldenVector { manifest, stream })
}
