use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use super::ProtocolError;
use crate::data::LabeledSet;

/// Gate in front of the D1 training set.
///
/// Open during initial training and the one-time Fisher capture, then sealed.
/// Every read attempted after sealing is refused and counted.
#[derive(Debug)]
pub struct AccessGuard<'a> {
    set: &'a LabeledSet,
    sealed: AtomicBool,
    trips: AtomicUsize,
}

impl<'a> AccessGuard<'a> {
    pub fn new(set: &'a LabeledSet) -> Self {
        Self {
            set,
            sealed: AtomicBool::new(false),
            trips: AtomicUsize::new(0),
        }
    }

    pub fn get(&self) -> Result<&'a LabeledSet, ProtocolError> {
        if self.sealed.load(Ordering::SeqCst) {
            self.trips.fetch_add(1, Ordering::SeqCst);
            return Err(ProtocolError::D1Sealed);
        }
        Ok(self.set)
    }

    pub fn seal(&self) {
        self.sealed.store(true, Ordering::SeqCst);
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed.load(Ordering::SeqCst)
    }

    /// Reads refused since sealing.
    pub fn trips(&self) -> usize {
        self.trips.load(Ordering::SeqCst)
    }
}
