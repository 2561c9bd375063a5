use std::collections::HashMap;

use rand::seq::SliceRandom;

use crate::corpus::{Image, Label, LabeledImageSet};
use crate::error::{Error, Result};
use crate::imprint::{ExpansionManifest, LatentCodec, LatentTensor};
use crate::rng::Rng;

/// A real image, its simulated variant, and both frozen-codec latents.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub real: Image,
    pub fake: Image,
    pub z_real: LatentTensor,
    pub z_fake: LatentTensor,
}

/// All manifest-linked pairs of a run, served in shuffled batches.
#[derive(Clone, Debug, Default)]
pub struct PairStream {
    pairs: Vec<TrainingPair>,
    batch_size: usize,
}

impl PairStream {
    pub fn pairs(&self) -> &[TrainingPair] {
        &self.pairs
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    /// Pair batches per pass, `ceil(len / batch_size)`.
    pub fn batches_per_epoch(&self) -> usize {
        if self.batch_size == 0 {
            0
        } else {
            self.pairs.len().div_ceil(self.batch_size)
        }
    }

    /// One shuffled pass as index batches. A trailing batch of one pair is
    /// merged into its predecessor so every batch can form a contrast.
    pub fn epoch_batches(&self, rng: &mut Rng) -> Vec<Vec<usize>> {
        if self.pairs.is_empty() {
            return Vec::new();
        }
        let mut idx: Vec<usize> = (0..self.pairs.len()).collect();
        idx.shuffle(rng);
        let mut out: Vec<Vec<usize>> = idx.chunks(self.batch_size).map(<[usize]>::to_vec).collect();
        if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
            let tail = out.pop().expect("nonempty");
            out.last_mut().expect("nonempty").extend(tail);
        }
        out
    }
}

/// Link each simulated fake in `expanded` to its source real via the
/// manifest and encode both with the frozen `codec`. An empty manifest gives
/// an empty stream (auxiliary losses off) with a warning.
pub fn build_pairs(
    expanded: &LabeledImageSet,
    manifest: &ExpansionManifest,
    codec: &dyn LatentCodec,
    batch_size: usize,
) -> Result<PairStream> {
    if batch_size == 0 {
        return Err(Error::Config("pair batch size must be >= 1".into()));
    }
    if manifest.inserted.is_empty() {
        log::warn!("expansion manifest is empty; auxiliary losses are disabled");
        return Ok(PairStream {
            pairs: Vec::new(),
            batch_size,
        });
    }
    let by_id: HashMap<&str, &Image> = expanded.items.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut reals = Vec::with_capacity(manifest.inserted.len());
    let mut fakes = Vec::with_capacity(manifest.inserted.len());
    for e in &manifest.inserted {
        let fake = by_id.get(e.simulated_id.as_str()).ok_or_else(|| {
            Error::Alignment(format!("simulated image '{}' is not in the dataset", e.simulated_id))
        })?;
        let real = by_id.get(e.source_real_id.as_str()).ok_or_else(|| {
            Error::Alignment(format!("source image '{}' is not in the dataset", e.source_real_id))
        })?;
        if real.label != Label::Real || fake.label != Label::Fake {
            return Err(Error::Alignment(format!(
                "manifest link '{}' -> '{}' has wrong labels",
                e.source_real_id, e.simulated_id
            )));
        }
        reals.push(*real);
        fakes.push(*fake);
    }
    let zr = codec.encode_batch(&reals)?;
    let zf = codec.encode_batch(&fakes)?;
    let pairs = reals
        .into_iter()
        .zip(fakes)
        .zip(zr.into_iter().zip(zf))
        .map(|((r, f), (z_real, z_fake))| TrainingPair {
            real: r.clone(),
            fake: f.clone(),
            z_real,
            z_fake,
        })
        .collect();
    Ok(PairStream { pairs, batch_size })
}
