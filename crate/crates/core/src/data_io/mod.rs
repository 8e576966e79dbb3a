//! Dataset, embedding and scores file formats, plus the synthetic benchmark.

mod binary;
mod embeddings;
mod images;
mod scores;
mod synth;

pub use embeddings::{embed_dataset, read_embeddings, write_embeddings, EmbeddingDataset, Provenance, EMBEDDING_MAGIC};
pub use images::{read_images, write_images, ImageDataset, IMAGE_MAGIC};
pub use scores::{parse_scores, read_scores, scores_to_string, write_scores, ScoresFile};
pub use synth::{blob_centered_rect, farthest_corner_rect, gen_synth, gen_synth_with_layout, SynthConfig, SynthGeometry};

use std::path::Path;

use crate::metrics::MisDReport;
use crate::{MisdError, Result};

/// Writes `bytes` to `path`, replacing any existing file.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| MisdError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| MisdError::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| MisdError::io(path, e))
}

pub fn write_report(path: &Path, report: &MisDReport) -> Result<()> {
    write_file(path, report.to_json().as_bytes())
}

pub fn read_report(path: &Path) -> Result<MisDReport> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| MisdError::Json { path: path.to_path_buf(), source: e })
}
