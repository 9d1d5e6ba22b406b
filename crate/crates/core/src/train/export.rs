//! Embedding matrices stored as rasters: `C = 1`, `H = samples`, `W = D + 1`.
//! Row `i` holds the `D` features of sample `i` followed by its label (`-1`
//! when unlabeled). The single wavelength is a placeholder `1.0`.

use std::path::Path;

use crate::data::{read_raster, write_raster, Dataset, SpectralImage};
use crate::error::{Error, Result};
use crate::hypernet::WavelengthList;
use crate::model::DofaModel;
use crate::tensor::Tensor;

pub const EMBEDDING_MODALITY: &str = "embeddings";

/// Writes mean-pooled encoder features of every sample and returns them with
/// their labels.
pub fn export_embeddings(model: &DofaModel<f32>, data: &Dataset, path: impl AsRef<Path>) -> Result<Vec<(Vec<f32>, Option<u32>)>> {
    if data.is_empty() {
        return Err(Error::Config("nothing to export".into()));
    }
    let images: Vec<_> = data.images().collect();
    let feats = model.features_batch(&images)?;
    let d = feats[0].len();
    let mut flat = Vec::with_capacity(feats.len() * (d + 1));
    for (f, img) in feats.iter().zip(&images) {
        flat.extend_from_slice(f);
        flat.push(img.label.map_or(-1.0, |l| l as f32));
    }
    let raster = SpectralImage::new(
        Tensor::new(vec![1, feats.len(), d + 1], flat)?,
        WavelengthList::new(vec![1.0])?,
        EMBEDDING_MODALITY,
        None,
    )?;
    write_raster(path, &raster)?;
    Ok(feats.into_iter().zip(images.iter().map(|im| im.label)).collect())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<(Vec<f32>, Option<u32>)>> {
    let r = read_raster(path, EMBEDDING_MODALITY)?;
    let w = r.width();
    if r.channels() != 1 || w < 2 {
        return Err(Error::Malformed(format!("embedding file has shape {:?}", r.data.shape())));
    }
    Ok(r.data
        .data()
        .chunks(w)
        .map(|row| {
            let label = row[w - 1];
            (row[..w - 1].to_vec(), (label >= 0.0).then_some(label as u32))
        })
        .collect())
}
