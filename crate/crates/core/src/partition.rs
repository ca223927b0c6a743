//! Splitting the flat parameter vector into corruptible coordinates (`w`)
//! and frozen coordinates (`θ`).

use std::ops::Range;

use crate::error::{check_len, invalid, Result};

/// Boolean mask over the flat parameter vector; `true` marks a corruptible
/// coordinate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamPartition {
    mask: Vec<bool>,
    indices: Vec<usize>,
}

impl ParamPartition {
    pub fn from_mask(mask: Vec<bool>) -> Self {
        let indices = mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect();
        Self { mask, indices }
    }

    /// Every coordinate corruptible.
    pub fn all(total: usize) -> Self {
        Self::from_mask(vec![true; total])
    }

    /// Corruptible exactly on the union of `ranges`.
    pub fn from_ranges(total: usize, ranges: &[Range<usize>]) -> Result<Self> {
        let mut mask = vec![false; total];
        for r in ranges {
            if r.end > total || r.start > r.end {
                return Err(invalid(format!(
                    "range {}..{} outside parameter vector of length {total}",
                    r.start, r.end
                )));
            }
            mask[r.clone()].iter_mut().for_each(|m| *m = true);
        }
        Ok(Self::from_mask(mask))
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Flat indices of the corruptible coordinates, ascending.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn total(&self) -> usize {
        self.mask.len()
    }

    /// Number of corruptible coordinates.
    pub fn k(&self) -> usize {
        self.indices.len()
    }

    /// Errors unless at least one coordinate is corruptible and the mask
    /// covers `total` parameters.
    pub fn validate_for(&self, total: usize) -> Result<()> {
        check_len("partition mask", total, self.mask.len())?;
        if self.indices.is_empty() {
            return Err(invalid("partition has no corruptible coordinates"));
        }
        Ok(())
    }

    /// Restricts a full-length vector to the corruptible coordinates.
    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&i| full[i]).collect()
    }

    /// Embeds a length-`k` vector into a zero full-length vector.
    pub fn scatter(&self, a: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.total()];
        for (&i, &v) in self.indices.iter().zip(a) {
            full[i] = v;
        }
        full
    }

    /// `params + a` on the corruptible coordinates. Coordinates where `a` is
    /// zero (and every frozen coordinate) are copied bit-for-bit.
    pub fn perturbed(&self, params: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        check_len("parameter vector", self.total(), params.len())?;
        check_len("corruption vector", self.k(), a.len())?;
        let mut out = params.to_vec();
        self.perturb_into(&mut out, params, a);
        Ok(out)
    }

    /// Allocation-free form of [`perturbed`](Self::perturbed); lengths must
    /// already agree.
    pub(crate) fn perturb_into(&self, out: &mut [f64], params: &[f64], a: &[f64]) {
        for (&i, &v) in self.indices.iter().zip(a) {
            out[i] = if v == 0.0 { params[i] } else { params[i] + v };
        }
    }
}
