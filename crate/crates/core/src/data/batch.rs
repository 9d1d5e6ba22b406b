use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SpectralImage;
use crate::error::{Error, Result};

/// Indices of images sharing one modality.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub modality: String,
    pub indices: Vec<usize>,
}

/// Plans batches from `(modality, channels)` pairs.
///
/// Each modality's samples are shuffled with `seed` and cut into batches of
/// `batch_size` (the last one may be short). Batches are then emitted
/// round-robin over modalities in order of first appearance, skipping
/// modalities that have run out.
pub fn batch_schedule(items: &[(&str, usize)], batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut groups: Vec<(String, usize, Vec<usize>)> = Vec::new();
    for (i, &(name, channels)) in items.iter().enumerate() {
        match groups.iter_mut().find(|g| g.0 == name) {
            Some(g) if g.1 != channels => {
                return Err(Error::MixedBatch(format!(
                    "modality {name} has samples with {} and {channels} channels",
                    g.1
                )))
            }
            Some(g) => g.2.push(i),
            None => groups.push((name.to_string(), channels, vec![i])),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chunked: Vec<Vec<Batch>> = groups
        .into_iter()
        .map(|(name, _, mut idx)| {
            idx.shuffle(&mut rng);
            idx.chunks(batch_size)
                .map(|c| Batch { modality: name.clone(), indices: c.to_vec() })
                .collect()
        })
        .collect();
    let rounds = chunked.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::with_capacity(chunked.iter().map(Vec::len).sum());
    for r in 0..rounds {
        for group in &chunked {
            if let Some(b) = group.get(r) {
                out.push(b.clone());
            }
        }
    }
    Ok(out)
}

/// Modality-homogeneous batches over `images`; see [`batch_schedule`].
pub fn batch_iter(images: &[SpectralImage], batch_size: usize, shuffle_seed: u64) -> Result<impl Iterator<Item = Batch>> {
    let items: Vec<(&str, usize)> = images.iter().map(|im| (im.modality.as_str(), im.channels())).collect();
    Ok(batch_schedule(&items, batch_size, shuffle_seed)?.into_iter())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_with_partial_tail() {
        let items = vec![("a", 3); 10];
        let sizes: Vec<usize> = batch_schedule(&items, 4, 1).unwrap().iter().map(|b| b.indices.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn same_seed_same_order() {
        let items = vec![("a", 3); 10];
        assert_eq!(batch_schedule(&items, 4, 9).unwrap(), batch_schedule(&items, 4, 9).unwrap());
        assert_ne!(batch_schedule(&items, 4, 9).unwrap(), batch_schedule(&items, 4, 10).unwrap());
    }

    #[test]
    fn modalities_cycle() {
        let names = ["s1", "s2", "gf", "naip", "enmap"];
        let items: Vec<(&str, usize)> = (0..50).map(|i| (names[i % 5], 2 + i % 5)).collect();
        let sched = batch_schedule(&items, 4, 0).unwrap();
        // 10 per modality -> 3 batches each
        assert_eq!(sched.len(), 15);
        for (k, b) in sched.iter().enumerate() {
            assert_eq!(b.modality, names[k % 5]);
        }
        let mut seen: Vec<usize> = sched.iter().flat_map(|b| b.indices.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn uneven_groups_skip_exhausted() {
        let items = vec![("a", 1), ("a", 1), ("a", 1), ("b", 2)];
        let mods: Vec<String> = batch_schedule(&items, 1, 0).unwrap().into_iter().map(|b| b.modality).collect();
        assert_eq!(mods, vec!["a", "b", "a", "a"]);
    }

    #[test]
    fn mixed_channels_rejected() {
        let items = vec![("a", 3), ("a", 4)];
        assert!(matches!(batch_schedule(&items, 2, 0), Err(Error::MixedBatch(_))));
    }
}
