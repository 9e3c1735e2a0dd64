//! Additive label noise with known moments and cumulants.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::cumulants::moments_to_cumulants;
use crate::error::{Error, Result};
use crate::exactdist::DiscreteRV;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    None,
    /// Finitely supported noise; need not be centered.
    Finite { values: Vec<f64>, probs: Vec<f64> },
    Gaussian { mean: f64, sd: f64 },
    /// User-supplied raw moments of orders 1..=len. Not validated.
    Table { moments: Vec<f64> },
}

impl NoiseSpec {
    pub fn gaussian(mean: f64, sd: f64) -> Self {
        NoiseSpec::Gaussian { mean, sd }
    }

    pub fn point_mass(c: f64) -> Self {
        NoiseSpec::Finite { values: vec![c], probs: vec![1.0] }
    }

    pub fn from_rv(rv: &DiscreteRV) -> Self {
        let (values, probs) = rv.to_f64_atoms().into_iter().unzip();
        NoiseSpec::Finite { values, probs }
    }

    /// Raw moments E[η^j] for j = 1..=n.
    pub fn raw_moments(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            NoiseSpec::None => Ok(vec![0.0; n]),
            NoiseSpec::Finite { values, probs } => Ok((1..=n)
                .map(|j| values.iter().zip(probs).map(|(v, p)| p * v.powi(j as i32)).sum())
                .collect()),
            NoiseSpec::Gaussian { mean, sd } => {
                let mut m = vec![1.0, *mean];
                for j in 2..=n {
                    let next = mean * m[j - 1] + (j as f64 - 1.0) * sd * sd * m[j - 2];
                    m.push(next);
                }
                m.truncate(n + 1);
                Ok(m[1..].to_vec())
            }
            NoiseSpec::Table { moments } => {
                if moments.len() < n {
                    return Err(Error::NoiseMoments(format!(
                        "moment table has {} entries, order {n} requested",
                        moments.len()
                    )));
                }
                Ok(moments[..n].to_vec())
            }
        }
    }

    /// Cumulants κ_j(η) for j = 1..=n.
    pub fn cumulants(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            NoiseSpec::None => Ok(vec![0.0; n]),
            NoiseSpec::Gaussian { mean, sd } => {
                let mut k = vec![0.0; n];
                if n >= 1 {
                    k[0] = *mean;
                }
                if n >= 2 {
                    k[1] = sd * sd;
                }
                Ok(k)
            }
            _ => Ok(moments_to_cumulants(&self.raw_moments(n)?)),
        }
    }

    /// m_{⌈a..b⌉}(η) = max_{a ≤ j ≤ b} E[η^j] (raw moments).
    pub fn max_moment(&self, a: usize, b: usize) -> Result<f64> {
        let m = self.raw_moments(b)?;
        Ok(m[a - 1..b].iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Law of c·η.
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            NoiseSpec::None => NoiseSpec::None,
            NoiseSpec::Finite { values, probs } => NoiseSpec::Finite {
                values: values.iter().map(|v| v * c).collect(),
                probs: probs.clone(),
            },
            NoiseSpec::Gaussian { mean, sd } => NoiseSpec::Gaussian { mean: mean * c, sd: sd * c.abs() },
            NoiseSpec::Table { moments } => NoiseSpec::Table {
                moments: moments.iter().enumerate().map(|(j, m)| m * c.powi(j as i32 + 1)).collect(),
            },
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match self {
            NoiseSpec::None => Ok(0.0),
            NoiseSpec::Finite { values, probs } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return Ok(*v);
                    }
                }
                Ok(*values.last().unwrap())
            }
            NoiseSpec::Gaussian { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                Ok(mean + sd * z)
            }
            NoiseSpec::Table { .. } => Err(Error::Oracle("cannot sample noise given only a moment table".into())),
        }
    }
}
