use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, LabeledSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// Endless minibatches: each epoch is a fresh shuffle, cut into full batches.
///
/// Leftover samples at the end of an epoch (`len % batch_size`) are skipped
/// for that epoch only.
#[derive(Debug)]
pub struct BatchStream<'a> {
    set: &'a LabeledSet,
    batch_size: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl<'a> BatchStream<'a> {
    pub fn new(set: &'a LabeledSet, batch_size: usize, seed: u64) -> Result<Self, DataError> {
        if set.is_empty() {
            return Err(DataError::EmptySet);
        }
        if batch_size == 0 || batch_size > set.len() {
            return Err(DataError::BatchTooLarge {
                batch_size,
                set_size: set.len(),
            });
        }
        let mut stream = Self {
            set,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..set.len()).collect(),
            pos: 0,
        };
        stream.reshuffle();
        Ok(stream)
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    /// Sample indices of the next batch.
    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.pos + self.batch_size > self.order.len() {
            self.reshuffle();
        }
        let idx = self.order[self.pos..self.pos + self.batch_size].to_vec();
        self.pos += self.batch_size;
        idx
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let idx = self.next_indices();
        let sub = self.set.subset(&idx);
        Some(Batch {
            labels: sub.labels().to_vec(),
            images: sub.images().clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;

    #[test]
    fn first_epoch_partitions_the_set() {
        let set = synthetic::prototype_digits(10, 20, 4, 0.1, 3);
        let mut s = BatchStream::new(&set, 100, 9).unwrap();
        let mut all: Vec<usize> = s.next_indices();
        all.extend(s.next_indices());
        all.sort();
        assert_eq!(all, (0..200).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_sequence() {
        let set = synthetic::prototype_digits(10, 7, 4, 0.1, 3);
        let a: Vec<Vec<usize>> = {
            let mut s = BatchStream::new(&set, 16, 1).unwrap();
            (0..20).map(|_| s.next_indices()).collect()
        };
        let mut s = BatchStream::new(&set, 16, 1).unwrap();
        for expect in a {
            assert_eq!(s.next_indices(), expect);
        }
        let mut other = BatchStream::new(&set, 16, 2).unwrap();
        assert_ne!(other.next_indices(), BatchStream::new(&set, 16, 1).unwrap().next_indices());
    }

    #[test]
    fn every_batch_is_full() {
        let set = synthetic::prototype_digits(3, 11, 4, 0.1, 3);
        let s = BatchStream::new(&set, 10, 0).unwrap();
        for b in s.take(12) {
            assert_eq!(b.labels.len(), 10);
            assert_eq!(b.images.shape(), &[10, 4, 4]);
        }
    }

    #[test]
    fn rejects_oversized_batches() {
        let set = synthetic::prototype_digits(2, 2, 4, 0.1, 3);
        assert!(matches!(
            BatchStream::new(&set, 5, 0),
            Err(DataError::BatchTooLarge { batch_size: 5, set_size: 4 })
        ));
    }
}
