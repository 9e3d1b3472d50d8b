//! Per-point panoptic labels and the SemanticKITTI `.label` format: one
//! little-endian `u32` per point, semantic id in the low 16 bits and instance
//! id in the high 16 bits.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Semantic id reserved for void / unlabeled points.
pub const VOID: u16 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct PanopticLabel {
    pub semantic: u16,
    pub instance: u16,
}

impl PanopticLabel {
    pub const VOID: PanopticLabel = PanopticLabel {
        semantic: 0,
        instance: 0,
    };

    pub fn new(semantic: u16, instance: u16) -> Self {
        Self { semantic, instance }
    }

    pub fn from_word(word: u32) -> Self {
        Self {
            semantic: (word & 0xFFFF) as u16,
            instance: (word >> 16) as u16,
        }
    }

    pub fn to_word(self) -> u32 {
        ((self.instance as u32) << 16) | self.semantic as u32
    }

    /// A point counts as labeled when either channel is set.
    pub fn is_labeled(self) -> bool {
        self.semantic != 0 || self.instance != 0
    }
}

/// Per-point (semantic, instance) pairs for one scan. Used for ground truth,
/// pseudo-labels and predictions alike.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PanopticLabeling {
    labels: Vec<PanopticLabel>,
}

impl PanopticLabeling {
    pub fn new(labels: Vec<PanopticLabel>) -> Self {
        Self { labels }
    }

    /// All-void labeling of `n` points.
    pub fn void(n: usize) -> Self {
        Self {
            labels: vec![PanopticLabel::VOID; n],
        }
    }

    pub fn from_channels(semantic: &[u16], instance: &[u16]) -> Result<Self> {
        if semantic.len() != instance.len() {
            return Err(Error::LengthMismatch {
                expected: semantic.len(),
                actual: instance.len(),
            });
        }
        Ok(Self {
            labels: semantic
                .iter()
                .zip(instance)
                .map(|(&s, &i)| PanopticLabel::new(s, i))
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[PanopticLabel] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [PanopticLabel] {
        &mut self.labels
    }

    pub fn get(&self, i: usize) -> PanopticLabel {
        self.labels[i]
    }

    pub fn into_labels(self) -> Vec<PanopticLabel> {
        self.labels
    }

    pub fn ensure_len(&self, n: usize) -> Result<()> {
        if self.labels.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: self.labels.len(),
            });
        }
        Ok(())
    }

    /// Checks that every nonzero instance id carries exactly one semantic id.
    pub fn check_instance_purity(&self) -> Result<()> {
        let mut owner: HashMap<u16, u16> = HashMap::new();
        for (i, l) in self.labels.iter().enumerate() {
            if l.instance == 0 {
                continue;
            }
            match owner.insert(l.instance, l.semantic) {
                Some(prev) if prev != l.semantic => {
                    return Err(Error::invalid(format!(
                        "instance {} carries semantic ids {prev} and {} (point {i})",
                        l.instance, l.semantic
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn max_instance(&self) -> u16 {
        self.labels.iter().map(|l| l.instance).max().unwrap_or(0)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 4 != 0 {
            return Err(Error::Format {
                offset: (bytes.len() - bytes.len() % 4) as u64,
                message: format!("label file of {} bytes is not a multiple of 4", bytes.len()),
            });
        }
        Ok(Self {
            labels: bytes
                .chunks_exact(4)
                .map(|w| PanopticLabel::from_word(u32::from_le_bytes(w.try_into().unwrap())))
                .collect(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.labels
            .iter()
            .flat_map(|l| l.to_word().to_le_bytes())
            .collect()
    }
}

/// Reads a `.label` file. When `expected_len` is given the point count must match.
pub fn read_labels(path: impl AsRef<Path>, expected_len: Option<usize>) -> Result<PanopticLabeling> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let labeling = PanopticLabeling::from_bytes(&bytes)?;
    if let Some(n) = expected_len {
        labeling.ensure_len(n)?;
    }
    Ok(labeling)
}

/// Writes a `.label` file for a scan of `scan_len` points.
pub fn write_labels(labeling: &PanopticLabeling, scan_len: usize, path: impl AsRef<Path>) -> Result<()> {
    labeling.ensure_len(scan_len)?;
    let path = path.as_ref();
    fs::write(path, labeling.to_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn word_layout() {
        assert_eq!(PanopticLabel::new(10, 3).to_word(), 196_618);
        assert_eq!(PanopticLabel::new(10, 3).to_word(), (3 << 16) | 10);
        assert_eq!(PanopticLabel::from_word(0), PanopticLabel::VOID);
    }

    #[test]
    fn write_rejects_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let l = PanopticLabeling::void(3);
        assert!(matches!(
            write_labels(&l, 4, dir.path().join("x.label")),
            Err(Error::LengthMismatch { expected: 4, actual: 3 })
        ));
    }

    #[test]
    fn read_checks_expected_length() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.label");
        write_labels(&PanopticLabeling::void(5), 5, &path).unwrap();
        assert!(read_labels(&path, Some(5)).is_ok());
        assert!(read_labels(&path, Some(6)).is_err());
    }

    #[test]
    fn purity_detects_mixed_instance() {
        let ok = PanopticLabeling::new(vec![PanopticLabel::new(1, 1), PanopticLabel::new(1, 1)]);
        assert!(ok.check_instance_purity().is_ok());
        let bad = PanopticLabeling::new(vec![PanopticLabel::new(1, 1), PanopticLabel::new(2, 1)]);
        assert!(bad.check_instance_purity().is_err());
    }

    #[test]
    fn random_pairs_round_trip_through_file() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let labels: Vec<_> = (0..1000)
            .map(|_| PanopticLabel::new(rng.gen(), rng.gen()))
            .collect();
        let labeling = PanopticLabeling::new(labels);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.label");
        write_labels(&labeling, 1000, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let back = read_labels(&path, Some(1000)).unwrap();
        assert_eq!(back, labeling);
        assert_eq!(back.to_bytes(), bytes);
    }

    proptest! {
        #[test]
        fn word_round_trip(sem in any::<u16>(), inst in any::<u16>()) {
            let l = PanopticLabel::new(sem, inst);
            prop_assert_eq!(PanopticLabel::from_word(l.to_word()), l);
        }

        #[test]
        fn any_word_round_trips(word in any::<u32>()) {
            prop_assert_eq!(PanopticLabel::from_word(word).to_word(), word);
        }
    }
}
