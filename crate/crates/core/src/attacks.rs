//! Byzantine adversaries: who is corrupt each round and what they send.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rge::GradientMatrix;
use crate::seed::{self, StreamTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    None,
    /// Honest value plus `scale · N(0, I)`.
    GaussianNoise {
        scale: f64,
    },
    /// `−scale ·` the worker's own honest value.
    SignFlip {
        scale: f64,
    },
    /// A fixed vector. A length-1 vector is broadcast to every coordinate.
    Constant {
        vector: Vec<f64>,
    },
    /// All corrupt workers send `m + scale · unit(−m)` with `m` the honest mean.
    OmniscientShift {
        scale: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Redraw the corrupt set every round.
    #[serde(default)]
    pub mobile: bool,
    pub eps: f64,
}

impl AttackSpec {
    pub fn none() -> Self {
        Self { kind: AttackKind::None, mobile: false, eps: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.eps) {
            return Err(Error::InvalidParameter(format!("attack eps must lie in [0, 1/2), got {}", self.eps)));
        }
        Ok(())
    }
}

/// `⌊ε R⌋`, robust to representation error in `ε`.
pub fn corrupt_count(eps: f64, workers: usize) -> usize {
    libm::floor(eps * workers as f64 + 1e-9) as usize
}

/// The corrupt set for `round`, sorted. Static adversaries draw it once from
/// the round-0 stream; mobile ones redraw from the round's own stream. Both use
/// the adversary tag, so worker sampling is unaffected.
pub fn choose_corrupt_set(adversary_seed: u64, round: u64, workers: usize, spec: &AttackSpec) -> Vec<usize> {
    let count = corrupt_count(spec.eps, workers).min(workers);
    if count == 0 {
        return Vec::new();
    }
    let draw_round = if spec.mobile { round } else { 0 };
    let mut rng = seed::stream(adversary_seed, StreamTag::Adversary, draw_round, 0);
    let mut set = rand::seq::index::sample(&mut rng, workers, count).into_vec();
    set.sort_unstable();
    set
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackContext<'a> {
    pub round: u64,
    /// Mean of the honest (non-corrupt) columns this round.
    pub honest_mean: &'a [f64],
}

/// Replaces the columns in `corrupt` according to `spec.kind`; every other
/// column is copied unchanged.
pub fn apply_attack<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &AttackSpec,
    honest: &GradientMatrix,
    corrupt: &[usize],
    ctx: &AttackContext<'_>,
) -> Result<GradientMatrix> {
    let dim = honest.dim();
    let mut out = honest.clone();
    if corrupt.is_empty() || matches!(spec.kind, AttackKind::None) {
        return Ok(out);
    }
    if let Some(&bad) = corrupt.iter().find(|&&j| j >= honest.len()) {
        return Err(Error::IndexOutOfRange { index: bad, len: honest.len() });
    }
    if ctx.honest_mean.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: ctx.honest_mean.len() });
    }
    let shared: Option<Vec<f64>> = match &spec.kind {
        AttackKind::Constant { vector } if vector.len() == dim => Some(vector.clone()),
        AttackKind::Constant { vector } if vector.len() == 1 => Some(alloc::vec![vector[0]; dim]),
        AttackKind::Constant { vector } => return Err(Error::DimensionMismatch { expected: dim, got: vector.len() }),
        AttackKind::OmniscientShift { scale } => {
            let neg: Vec<f64> = ctx.honest_mean.iter().map(|v| -v).collect();
            let dir = linalg::normalized(&neg).unwrap_or_else(|| {
                let mut e = alloc::vec![0.0; dim];
                e[0] = 1.0;
                e
            });
            Some(ctx.honest_mean.iter().zip(&dir).map(|(m, u)| m + scale * u).collect())
        }
        _ => None,
    };
    for &j in corrupt {
        let col = out.column_mut(j);
        match (&spec.kind, &shared) {
            (_, Some(v)) => col.copy_from_slice(v),
            (AttackKind::GaussianNoise { scale }, None) => {
                for c in col.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *c += scale * z;
                }
            }
            (AttackKind::SignFlip { scale }, None) => linalg::scale(-scale, col),
            _ => unreachable!("constant and omniscient kinds always carry a shared vector"),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn spec(kind: AttackKind, mobile: bool, eps: f64) -> AttackSpec {
        AttackSpec { kind, mobile, eps }
    }

    #[test]
    fn corrupt_set_sizes() {
        let s = spec(AttackKind::None, true, 0.0);
        assert!(choose_corrupt_set(1, 0, 10, &s).is_empty());
        let s = spec(AttackKind::None, true, 0.2);
        for round in 0..20 {
            assert_eq!(choose_corrupt_set(1, round, 10, &s).len(), 2);
        }
        assert_eq!(corrupt_count(0.29, 100), 29);
    }

    #[test]
    fn static_set_is_fixed() {
        let s = spec(AttackKind::None, false, 0.3);
        assert_eq!(choose_corrupt_set(5, 7, 10, &s), choose_corrupt_set(5, 0, 10, &s));
    }

    #[test]
    fn mobile_set_changes() {
        let s = spec(AttackKind::None, true, 0.3);
        let first = choose_corrupt_set(5, 0, 20, &s);
        assert!((1..20).any(|t| choose_corrupt_set(5, t, 20, &s) != first));
    }

    fn matrix() -> GradientMatrix {
        GradientMatrix::from_columns(&[vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.5]]).unwrap()
    }

    #[test]
    fn none_and_empty_are_identity() {
        let g = matrix();
        let mean = [0.0, 0.0];
        let ctx = AttackContext { round: 0, honest_mean: &mean };
        let mut rng = seed::stream(0, StreamTag::Adversary, 0, 1);
        let out = apply_attack(&mut rng, &spec(AttackKind::None, false, 0.3), &g, &[1], &ctx).unwrap();
        assert_eq!(out, g);
        let out =
            apply_attack(&mut rng, &spec(AttackKind::SignFlip { scale: 1.0 }, false, 0.3), &g, &[], &ctx).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn sign_flip_negates() {
        let g = matrix();
        let mean = [0.0, 0.0];
        let ctx = AttackContext { round: 0, honest_mean: &mean };
        let mut rng = seed::stream(0, StreamTag::Adversary, 0, 1);
        let out =
            apply_attack(&mut rng, &spec(AttackKind::SignFlip { scale: 1.0 }, false, 0.3), &g, &[1], &ctx).unwrap();
        assert_eq!(out.column(1), &[-3.0, 1.0]);
        assert_eq!(out.column(0), g.column(0));
        assert_eq!(out.column(2), g.column(2));
    }

    #[test]
    fn omniscient_shift_distance() {
        let g = matrix();
        let mean = linalg::mean([g.column(0), g.column(2)]);
        let ctx = AttackContext { round: 3, honest_mean: &mean };
        let mut rng = seed::stream(0, StreamTag::Adversary, 0, 1);
        let out = apply_attack(&mut rng, &spec(AttackKind::OmniscientShift { scale: 4.0 }, true, 0.3), &g, &[1], &ctx)
            .unwrap();
        assert!((linalg::dist(out.column(1), &mean) - 4.0).abs() < 1e-12);
        // moves against the honest mean
        assert!(linalg::dot(&linalg::sub(out.column(1), &mean), &mean) < 0.0);
    }

    #[test]
    fn constant_broadcast_and_mismatch() {
        let g = matrix();
        let mean = [0.0, 0.0];
        let ctx = AttackContext { round: 0, honest_mean: &mean };
        let mut rng = seed::stream(0, StreamTag::Adversary, 0, 1);
        let out =
            apply_attack(&mut rng, &spec(AttackKind::Constant { vector: vec![7.0] }, false, 0.3), &g, &[0, 2], &ctx)
                .unwrap();
        assert_eq!(out.column(0), &[7.0, 7.0]);
        assert_eq!(out.column(2), &[7.0, 7.0]);
        let bad = spec(AttackKind::Constant { vector: vec![1.0, 2.0, 3.0] }, false, 0.3);
        assert!(apply_attack(&mut rng, &bad, &g, &[0], &ctx).is_err());
    }
}
