use std::path::Path;

use super::binary::{push_names, to_u32, Reader};
use super::{read_file, write_file, ImageDataset};
use crate::augment::{generate_views, CropConfig};
use crate::model::{Embedding, FrozenVisionEncoder};
use crate::{seed, MisdError, Result};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"MISDEMB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    ToyEncoder,
    External,
    /// Read back from disk; the file format does not record provenance.
    Unrecorded,
}

/// `count × k` view embeddings of dimension `d`, sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    k: usize,
    views: Vec<Embedding>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub provenance: Provenance,
}

impl EmbeddingDataset {
    pub fn new(
        k: usize,
        views: Vec<Embedding>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        if k == 0 {
            return Err(MisdError::Config("an embedding dataset needs k >= 1".into()));
        }
        if views.len() != labels.len() * k {
            return Err(MisdError::Shape(format!(
                "{} view embeddings for {} samples with k = {k}",
                views.len(),
                labels.len()
            )));
        }
        let d = views.first().map_or(0, Embedding::dim);
        if views.iter().any(|v| v.dim() != d || !v.is_finite()) {
            return Err(MisdError::Data("embeddings differ in dimension or hold non-finite values".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(MisdError::Data(format!("label {bad} out of range for {} classes", class_names.len())));
        }
        Ok(Self { k, views, labels, class_names, provenance })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.views.first().map_or(0, Embedding::dim)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// The `k` views of sample `i`.
    pub fn sample(&self, i: usize) -> &[Embedding] {
        &self.views[i * self.k..(i + 1) * self.k]
    }
}

pub fn encode_embeddings(ds: &EmbeddingDataset) -> Result<Vec<u8>> {
    let (count, k, d, c) = (ds.len(), ds.k(), ds.dim(), ds.num_classes());
    let mut out = Vec::with_capacity(24 + count * k * d * 4 + count * 4);
    out.extend_from_slice(EMBEDDING_MAGIC);
    for v in [count, k, d, c] {
        out.extend_from_slice(&to_u32(v, "embedding header field")?.to_le_bytes());
    }
    for e in &ds.views {
        for &x in e.as_slice() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    for &l in &ds.labels {
        out.extend_from_slice(&to_u32(l, "label")?.to_le_bytes());
    }
    push_names(&mut out, &ds.class_names)?;
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingDataset> {
    let mut r = Reader::new(bytes);
    let magic = r.take(8, 24)?;
    if magic != EMBEDDING_MAGIC {
        return Err(MisdError::Format(format!("bad magic {:?}, expected MISDEMB1", String::from_utf8_lossy(magic))));
    }
    let count = r.u32(24)? as usize;
    let k = r.u32(24)? as usize;
    let d = r.u32(24)? as usize;
    let c = r.u32(24)? as usize;
    // names are variable length; everything before them is fixed by the header
    let fixed = 24 + count * k * d * 4 + count * 4 + c * 2;
    let values = r.f32s(count * k * d, fixed)?;
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        labels.push(r.u32(fixed)? as usize);
    }
    let names = r.names(c, fixed)?;
    r.finish()?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MisdError::Data("embedding file contains non-finite values".into()));
    }
    if k == 0 || d == 0 {
        return Err(MisdError::Format(format!("embedding header has k = {k}, d = {d}")));
    }
    let views = values
        .chunks_exact(d)
        .map(|ch| Embedding::from_vec_unchecked(ch.iter().map(|&v| v as f64).collect()))
        .collect();
    EmbeddingDataset::new(k, views, labels, names, Provenance::Unrecorded)
}

pub fn write_embeddings(path: &Path, ds: &EmbeddingDataset) -> Result<()> {
    write_file(path, &encode_embeddings(ds)?)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingDataset> {
    decode_embeddings(&read_file(path)?)
}

/// Encodes every image. With `crops.k == 1` the whole image is encoded as is;
/// otherwise each sample gets `k` views from its own seeded stream.
pub fn embed_dataset(
    dataset: &ImageDataset,
    encoder: &FrozenVisionEncoder,
    crops: &CropConfig,
    seed: u64,
) -> Result<EmbeddingDataset> {
    let mut views = Vec::with_capacity(dataset.len() * crops.k);
    for (i, image) in dataset.images.iter().enumerate() {
        if crops.k == 1 {
            views.push(encoder.encode(image)?);
        } else {
            let mut rng = seed::rng_indexed(seed, &["views"], i as u64);
            for view in generate_views(image, crops, encoder.spec(), &mut rng)? {
                views.push(encoder.encode(&view)?);
            }
        }
    }
    EmbeddingDataset::new(crops.k, views, dataset.labels.clone(), dataset.class_names.clone(), Provenance::ToyEncoder)
}
