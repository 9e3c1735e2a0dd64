//! Finite base distributions with exact mean-0 / variance-1 normalization.

use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::rational::{self, Rational};

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteDistribution {
    /// (value, probability), sorted by value.
    atoms: Vec<(Rational, Rational)>,
    lambda: Rational,
    max_abs: Rational,
}

impl FiniteDistribution {
    pub fn rademacher() -> Self {
        validate_distribution(vec![(rational::int(-1), rational::frac(1, 2)), (rational::int(1), rational::frac(1, 2))])
            .expect("rademacher is valid")
    }

    pub fn atoms(&self) -> &[(Rational, Rational)] {
        &self.atoms
    }

    /// Smallest atom probability λ.
    pub fn lambda(&self) -> &Rational {
        &self.lambda
    }

    /// Largest absolute support value M.
    pub fn max_abs(&self) -> &Rational {
        &self.max_abs
    }

    /// Atom count ℓ.
    pub fn support_size(&self) -> usize {
        self.atoms.len()
    }

    pub fn values_f64(&self) -> Vec<f64> {
        self.atoms.iter().map(|(v, _)| rational::to_f64(v)).collect()
    }

    pub fn probs_f64(&self) -> Vec<f64> {
        self.atoms.iter().map(|(_, p)| rational::to_f64(p)).collect()
    }

    /// Short identifier used in sample batches and reports.
    pub fn id(&self) -> String {
        let parts: Vec<String> = self
            .atoms
            .iter()
            .map(|(v, p)| format!("{}@{}", rational::format_rational(v), rational::format_rational(p)))
            .collect();
        parts.join(",")
    }

    pub fn to_text(&self) -> String {
        self.atoms
            .iter()
            .map(|(v, p)| format!("{} {}\n", rational::format_rational(v), rational::format_rational(p)))
            .collect()
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut atoms = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let (v, p) = match (it.next(), it.next(), it.next()) {
                (Some(v), Some(p), None) => (v, p),
                _ => return Err(Error::Parse(format!("line {}: expected \"value prob\"", lineno + 1))),
            };
            atoms.push((rational::parse_rational(v)?, rational::parse_rational(p)?));
        }
        validate_distribution(atoms)
    }
}

/// Checks the atoms exactly and computes λ and M.
pub fn validate_distribution(mut atoms: Vec<(Rational, Rational)>) -> Result<FiniteDistribution> {
    if atoms.is_empty() {
        return Err(Error::InvalidDistribution("no atoms".into()));
    }
    atoms.sort_by(|a, b| a.0.cmp(&b.0));
    if atoms.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidDistribution("duplicate values".into()));
    }
    if atoms.iter().any(|(_, p)| !p.is_positive() || p > &Rational::one()) {
        return Err(Error::InvalidDistribution("probabilities must lie in (0,1]".into()));
    }
    let total: Rational = atoms.iter().map(|(_, p)| p.clone()).sum();
    if !total.is_one() {
        return Err(Error::InvalidDistribution(format!(
            "probabilities sum to {}",
            rational::format_rational(&total)
        )));
    }
    let mean: Rational = atoms.iter().map(|(v, p)| v * p).sum();
    if !mean.is_zero() {
        return Err(Error::InvalidDistribution(format!("nonzero mean {}", rational::format_rational(&mean))));
    }
    let var: Rational = atoms.iter().map(|(v, p)| v * v * p).sum();
    if !var.is_one() {
        return Err(Error::InvalidDistribution(format!("variance {} != 1", rational::format_rational(&var))));
    }
    let lambda = atoms.iter().map(|(_, p)| p.clone()).min().unwrap();
    let max_abs = atoms.iter().map(|(v, _)| v.abs()).max().unwrap();
    // Mean 0 and variance 1 force some |v| ≥ 1.
    assert!(max_abs >= Rational::one());
    Ok(FiniteDistribution { atoms, lambda, max_abs })
}
