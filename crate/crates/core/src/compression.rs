//! rand-k sparsification with a coordinate set chosen by the master.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, LocalDataset, ObjectiveSpec};

/// Sorted, distinct coordinates retained in one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinateSet {
    dim: usize,
    indices: Vec<usize>,
}

impl CoordinateSet {
    pub fn new(dim: usize, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() || indices.len() > dim {
            return Err(Error::CoordinateCount { k: indices.len(), dim });
        }
        if let Some(&bad) = indices.iter().find(|&&j| j >= dim) {
            return Err(Error::IndexOutOfRange { index: bad, len: dim });
        }
        Ok(Self { dim, indices })
    }

    pub fn full(dim: usize) -> Self {
        Self { dim, indices: (0..dim).collect() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The unbiasing factor `d/k`.
    pub fn scale(&self) -> f64 {
        self.dim as f64 / self.k() as f64
    }
}

/// A uniformly random size-`k` subset of `0..d`.
pub fn draw_coords<R: Rng + ?Sized>(rng: &mut R, d: usize, k: usize) -> Result<CoordinateSet> {
    if k == 0 || k > d {
        return Err(Error::CoordinateCount { k, dim: d });
    }
    let mut indices = rand::seq::index::sample(rng, d, k).into_vec();
    indices.sort_unstable();
    Ok(CoordinateSet { dim: d, indices })
}

fn check_len(v: &[f64], set: &CoordinateSet) -> Result<()> {
    if v.len() != set.dim {
        return Err(Error::DimensionMismatch { expected: set.dim, got: v.len() });
    }
    Ok(())
}

/// `(d/k) · select_K(v)` as a vector in `R^d`.
pub fn select_scale(v: &[f64], set: &CoordinateSet) -> Result<Vec<f64>> {
    check_len(v, set)?;
    let s = set.scale();
    let mut out = vec![0.0; set.dim];
    for &j in &set.indices {
        out[j] = s * v[j];
    }
    Ok(out)
}

/// `(d/k) · v_K` as a vector in `R^k`.
pub fn restrict_scaled(v: &[f64], set: &CoordinateSet) -> Result<Vec<f64>> {
    check_len(v, set)?;
    let s = set.scale();
    Ok(set.indices.iter().map(|&j| s * v[j]).collect())
}

/// Plain restriction `v_K` (no scaling).
pub fn restrict(v: &[f64], set: &CoordinateSet) -> Result<Vec<f64>> {
    check_len(v, set)?;
    Ok(set.indices.iter().map(|&j| v[j]).collect())
}

/// Places a `k`-vector back into `R^d` with zeros outside `K`.
pub fn embed(v: &[f64], set: &CoordinateSet) -> Result<Vec<f64>> {
    if v.len() != set.k() {
        return Err(Error::DimensionMismatch { expected: set.k(), got: v.len() });
    }
    let mut out = vec![0.0; set.dim];
    for (&j, &x) in set.indices.iter().zip(v) {
        out[j] = x;
    }
    Ok(out)
}

/// The worker message `(d/k) · select_K(minibatch gradient)` in `R^d`.
pub fn compressed_minibatch_gradient<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &ObjectiveSpec,
    ds: &LocalDataset,
    b: usize,
    x: &[f64],
    set: &CoordinateSet,
) -> Result<Vec<f64>> {
    check_len(x, set)?;
    let g = model::minibatch_gradient(rng, spec, ds, b, x)?;
    select_scale(&g, set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::{stream, StreamTag};

    #[test]
    fn full_set_is_identity() {
        let mut rng = stream(1, StreamTag::Master, 0, 0);
        let set = draw_coords(&mut rng, 4, 4).unwrap();
        assert_eq!(set, CoordinateSet::full(4));
        let v = [1.0, -2.0, 3.5, 0.25];
        assert_eq!(select_scale(&v, &set).unwrap(), v.to_vec());
    }

    #[test]
    fn same_seed_same_set() {
        let a = draw_coords(&mut stream(9, StreamTag::Master, 3, 0), 50, 7).unwrap();
        let b = draw_coords(&mut stream(9, StreamTag::Master, 3, 0), 50, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.indices().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn bad_k() {
        let mut rng = stream(1, StreamTag::Master, 0, 0);
        assert!(draw_coords(&mut rng, 3, 0).is_err());
        assert!(draw_coords(&mut rng, 3, 4).is_err());
    }

    #[test]
    fn enumerated_unbiasedness() {
        let v = [3.0, 0.0, 0.0];
        let mut acc = [0.0; 3];
        for j in 0..3 {
            let s = select_scale(&v, &CoordinateSet::new(3, vec![j]).unwrap()).unwrap();
            for (a, x) in acc.iter_mut().zip(&s) {
                *a += x / 3.0;
            }
        }
        assert_eq!(acc, [3.0, 0.0, 0.0]);
    }

    #[test]
    fn restrict_embed_roundtrip() {
        let set = CoordinateSet::new(5, vec![3, 1]).unwrap();
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(restrict(&v, &set).unwrap(), vec![2.0, 4.0]);
        assert_eq!(embed(&[2.0, 4.0], &set).unwrap(), vec![0.0, 2.0, 0.0, 4.0, 0.0]);
        assert_eq!(restrict_scaled(&v, &set).unwrap(), vec![5.0, 10.0]);
    }
}
