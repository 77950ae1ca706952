//! Categorical laws over the rank support `{r_min, ..., r_max}`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankDistributionKind {
    Uniform,
    /// `P(b) ∝ p (1 - p)^(b - r_min)`, truncated to the support and renormalized.
    Geometric {
        p: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankDistribution {
    kind: RankDistributionKind,
    r_min: usize,
    r_max: usize,
    probabilities: Vec<f64>,
    cdf: Vec<f64>,
}

fn check_support(r_min: usize, r_max: usize) -> Result<()> {
    if r_min == 0 || r_min > r_max {
        return Err(Error::Config(alloc::format!(
            "rank support [{r_min}, {r_max}] invalid (need 1 <= r_min <= r_max)"
        )));
    }
    Ok(())
}

impl RankDistribution {
    pub fn new(kind: RankDistributionKind, r_min: usize, r_max: usize) -> Result<Self> {
        match kind {
            RankDistributionKind::Uniform => Self::uniform(r_min, r_max),
            RankDistributionKind::Geometric { p } => Self::geometric(r_min, r_max, p),
        }
    }

    pub fn uniform(r_min: usize, r_max: usize) -> Result<Self> {
        check_support(r_min, r_max)?;
        let n = r_max - r_min + 1;
        Ok(Self::from_weights(
            RankDistributionKind::Uniform,
            r_min,
            r_max,
            alloc::vec![1.0; n],
        ))
    }

    pub fn geometric(r_min: usize, r_max: usize, p: f64) -> Result<Self> {
        check_support(r_min, r_max)?;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Config(alloc::format!(
                "geometric parameter must lie in (0, 1), got {p}"
            )));
        }
        let weights = (0..=r_max - r_min)
            .map(|k| p * libm::pow(1.0 - p, k as f64))
            .collect();
        Ok(Self::from_weights(
            RankDistributionKind::Geometric { p },
            r_min,
            r_max,
            weights,
        ))
    }

    /// All mass on a single rank.
    pub fn point_mass(b: usize) -> Result<Self> {
        Self::uniform(b, b)
    }

    fn from_weights(
        kind: RankDistributionKind,
        r_min: usize,
        r_max: usize,
        weights: Vec<f64>,
    ) -> Self {
        let total: f64 = weights.iter().sum();
        let probabilities: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        Self {
            kind,
            r_min,
            r_max,
            probabilities,
            cdf,
        }
    }

    pub fn kind(&self) -> RankDistributionKind {
        self.kind
    }
    pub fn r_min(&self) -> usize {
        self.r_min
    }
    pub fn r_max(&self) -> usize {
        self.r_max
    }
    pub fn len(&self) -> usize {
        self.probabilities.len()
    }
    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    /// Probabilities indexed from `r_min`.
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn prob(&self, b: usize) -> f64 {
        if b < self.r_min || b > self.r_max {
            0.0
        } else {
            self.probabilities[b - self.r_min]
        }
    }

    /// `(rank, probability)` pairs in increasing rank order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.probabilities
            .iter()
            .enumerate()
            .map(move |(i, &p)| (self.r_min + i, p))
    }

    /// Inverse-CDF draw. Consumes exactly one uniform per call.
    pub fn sample(&self, rng: &mut Rng) -> usize {
        let u = rng.uniform();
        let idx = self.cdf.partition_point(|&c| c <= u);
        self.r_min + idx.min(self.len() - 1)
    }
}
