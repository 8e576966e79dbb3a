use std::path::Path;

use super::binary::{push_names, to_u32, Reader};
use super::{read_file, write_file};
use crate::model::Image;
use crate::{MisdError, Result};

/// Magic of the image dataset file. Same layout as the embedding file with
/// a `u32 height, width, channels` header in place of `k, d`:
/// magic, count, height, width, channels, classes, f32 pixels (sample, row,
/// column, channel), u32 labels, u16-length-prefixed UTF-8 class names.
pub const IMAGE_MAGIC: &[u8; 8] = b"MISDIMG1";

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl ImageDataset {
    pub fn new(images: Vec<Image>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(MisdError::Shape(format!("{} images but {} labels", images.len(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(MisdError::Data(format!("label {bad} out of range for {} classes", class_names.len())));
        }
        if let Some(first) = images.first() {
            let same = images
                .iter()
                .all(|i| (i.height(), i.width(), i.channels()) == (first.height(), first.width(), first.channels()));
            if !same {
                return Err(MisdError::Shape("images in one dataset must share a resolution".into()));
            }
        }
        if images.iter().any(|i| i.data().iter().any(|v| !(0.0..=1.0).contains(v))) {
            return Err(MisdError::Data("pixels must lie in [0, 1]".into()));
        }
        Ok(Self { images, labels, class_names })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Keeps the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> ImageDataset {
        ImageDataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }
}

pub fn encode_images(ds: &ImageDataset) -> Result<Vec<u8>> {
    let (h, w, ch) = ds.images.first().map_or((0, 0, 0), |i| (i.height(), i.width(), i.channels()));
    let mut out = Vec::with_capacity(28 + ds.len() * (h * w * ch * 4 + 4));
    out.extend_from_slice(IMAGE_MAGIC);
    for v in [ds.len(), h, w, ch, ds.num_classes()] {
        out.extend_from_slice(&to_u32(v, "image header field")?.to_le_bytes());
    }
    for img in &ds.images {
        for &x in img.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    for &l in &ds.labels {
        out.extend_from_slice(&to_u32(l, "label")?.to_le_bytes());
    }
    push_names(&mut out, &ds.class_names)?;
    Ok(out)
}

pub fn decode_images(bytes: &[u8]) -> Result<ImageDataset> {
    let mut r = Reader::new(bytes);
    let magic = r.take(8, 28)?;
    if magic != IMAGE_MAGIC {
        return Err(MisdError::Format(format!("bad magic {:?}, expected MISDIMG1", String::from_utf8_lossy(magic))));
    }
    let count = r.u32(28)? as usize;
    let h = r.u32(28)? as usize;
    let w = r.u32(28)? as usize;
    let ch = r.u32(28)? as usize;
    let c = r.u32(28)? as usize;
    let per_image = h * w * ch;
    let fixed = 28 + count * per_image * 4 + count * 4 + c * 2;
    let pixels = r.f32s(count * per_image, fixed)?;
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        labels.push(r.u32(fixed)? as usize);
    }
    let names = r.names(c, fixed)?;
    r.finish()?;
    if pixels.iter().any(|v| !v.is_finite()) {
        return Err(MisdError::Data("image file contains non-finite pixels".into()));
    }
    let images = if count == 0 {
        Vec::new()
    } else {
        pixels
            .chunks_exact(per_image.max(1))
            .map(|px| Image::new(h, w, ch, px.iter().map(|&v| v as f64).collect()))
            .collect::<Result<_>>()?
    };
    ImageDataset::new(images, labels, names)
}

pub fn write_images(path: &Path, ds: &ImageDataset) -> Result<()> {
    write_file(path, &encode_images(ds)?)
}

pub fn read_images(path: &Path) -> Result<ImageDataset> {
    decode_images(&read_file(path)?)
}
