//! Octave band sets and per-band value vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const T60_CENTERS: [f64; 7] = [125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0];
pub const EQ_CENTERS: [f64; 6] = [62.5, 125.0, 250.0, 500.0, 2000.0, 4000.0];
/// Octaves used when rendering: the T60 set plus a 62.5 Hz band that
/// reuses the 125 Hz material solution.
pub const RENDER_CENTERS: [f64; 8] = [62.5, 125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0];
/// Reference octave for relative EQ gains.
pub const EQ_REFERENCE_HZ: f64 = 1000.0;

/// One of the two canonical octave band sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandSet {
    T60,
    Eq,
}

impl BandSet {
    pub fn centers(self) -> &'static [f64] {
        match self {
            BandSet::T60 => &T60_CENTERS,
            BandSet::Eq => &EQ_CENTERS,
        }
    }

    pub fn len(self) -> usize {
        self.centers().len()
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn index_of(self, center: f64) -> Option<usize> {
        self.centers().iter().position(|&c| (c - center).abs() < 1e-9)
    }
}

/// Lower and upper octave edges around `center`.
pub fn octave_edges(center: f64) -> (f64, f64) {
    (center / std::f64::consts::SQRT_2, center * std::f64::consts::SQRT_2)
}

/// Per-band values (T60 seconds or EQ dB) plus a validity mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandProfile {
    pub bands: BandSet,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl BandProfile {
    pub fn new(bands: BandSet, values: Vec<f64>) -> Result<Self> {
        if values.len() != bands.len() {
            return Err(Error::InvalidInput(format!(
                "{:?} profile needs {} values, got {}",
                bands,
                bands.len(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("band value {v}")));
        }
        let valid = vec![true; values.len()];
        Ok(Self {
            bands,
            values,
            valid,
        })
    }

    pub fn uniform(bands: BandSet, value: f64) -> Self {
        Self {
            bands,
            values: vec![value; bands.len()],
            valid: vec![true; bands.len()],
        }
    }

    pub fn with_mask(mut self, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != self.values.len() {
            return Err(Error::InvalidInput("mask length mismatch".into()));
        }
        self.valid = valid;
        Ok(self)
    }

    pub fn centers(&self) -> &'static [f64] {
        self.bands.centers()
    }

    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    /// Values with every invalid band replaced by its nearest valid
    /// neighbour (ties go to the lower band). Errors if no band is valid.
    pub fn filled(&self) -> Result<Vec<f64>> {
        let valid: Vec<usize> = (0..self.values.len()).filter(|&i| self.valid[i]).collect();
        if valid.is_empty() {
            return Err(Error::NoReliableBand);
        }
        Ok((0..self.values.len())
            .map(|i| {
                let j = *valid
                    .iter()
                    .min_by_key(|&&j| (j as isize - i as isize).unsigned_abs() * 2 + usize::from(j > i))
                    .unwrap();
                self.values[j]
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_sets_are_increasing() {
        for set in [BandSet::T60, BandSet::Eq] {
            assert!(set.centers().windows(2).all(|w| w[0] < w[1]));
        }
        assert_eq!(BandSet::T60.len(), 7);
        assert_eq!(BandSet::Eq.len(), 6);
    }

    #[test]
    fn fill_prefers_nearest_then_lower() {
        let p = BandProfile::new(BandSet::T60, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0])
            .unwrap()
            .with_mask(vec![false, true, false, true, false, false, true])
            .unwrap();
        assert_eq!(p.filled().unwrap(), vec![2.0, 2.0, 2.0, 4.0, 4.0, 7.0, 7.0]);
    }

    #[test]
    fn fill_with_no_valid_band_errors() {
        let p = BandProfile::uniform(BandSet::Eq, 0.0)
            .with_mask(vec![false; 6])
            .unwrap();
        assert!(matches!(p.filled(), Err(Error::NoReliableBand)));
    }

    #[test]
    fn wrong_length_rejected() {
        assert!(BandProfile::new(BandSet::T60, vec![0.5; 6]).is_err());
    }
}
