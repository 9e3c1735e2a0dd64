//! Exact output distributions of polynomials under product measures, plus
//! exact moments, 1-D Wasserstein distance and moment distance.
//!
//! `output_distribution` splits the polynomial into variable-disjoint
//! components, enumerates support^k for each component, and convolves the
//! component laws. Enumeration runs on scaled integers when they fit in
//! 128 bits and falls back to big rationals otherwise.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;

use crate::distribution::FiniteDistribution;
use crate::error::{Error, Result};
use crate::poly::{Monomial, MultilinearPolynomial, Real, RootOf};
use crate::rational::{self, Rational};

pub const DEFAULT_ENUMERATION_BUDGET: f64 = 2e7;

/// A finitely supported real random variable with exact atoms.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DiscreteRV {
    atoms: Vec<(Rational, Rational)>,
}

impl DiscreteRV {
    /// Builds from (value, prob) pairs; repeated values are merged.
    pub fn from_atoms(atoms: impl IntoIterator<Item = (Rational, Rational)>) -> Result<Self> {
        let mut map: BTreeMap<Rational, Rational> = BTreeMap::new();
        for (v, p) in atoms {
            if !p.is_positive() {
                return Err(Error::InvalidArgument("probabilities must be positive".into()));
            }
            *map.entry(v).or_insert_with(Rational::zero) += p;
        }
        let total: Rational = map.values().cloned().sum();
        if !total.is_one() {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {}",
                rational::format_rational(&total)
            )));
        }
        Ok(DiscreteRV { atoms: map.into_iter().collect() })
    }

    fn from_map(map: BTreeMap<Rational, Rational>) -> Self {
        DiscreteRV { atoms: map.into_iter().collect() }
    }

    pub fn point_mass(v: Rational) -> Self {
        DiscreteRV { atoms: vec![(v, Rational::one())] }
    }

    pub fn from_distribution(d: &FiniteDistribution) -> Self {
        DiscreteRV { atoms: d.atoms().to_vec() }
    }

    pub fn atoms(&self) -> &[(Rational, Rational)] {
        &self.atoms
    }

    pub fn support_size(&self) -> usize {
        self.atoms.len()
    }

    pub fn raw_moment(&self, l: u32) -> Rational {
        self.atoms.iter().map(|(v, p)| rational::pow(v, l) * p).sum()
    }

    /// E|Y|^l.
    pub fn abs_moment(&self, l: u32) -> Rational {
        self.atoms.iter().map(|(v, p)| rational::pow(&v.abs(), l) * p).sum()
    }

    /// Raw moments of orders 1..=k.
    pub fn moments(&self, k: u32) -> Vec<Rational> {
        let mut out = vec![Rational::zero(); k as usize];
        for (v, p) in &self.atoms {
            let mut pw = p.clone();
            for slot in out.iter_mut() {
                pw *= v;
                *slot += &pw;
            }
        }
        out
    }

    pub fn mean(&self) -> Rational {
        self.raw_moment(1)
    }

    pub fn max_abs(&self) -> Rational {
        self.atoms.iter().map(|(v, _)| v.abs()).max().unwrap_or_else(Rational::zero)
    }

    pub fn map_values(&self, f: impl Fn(&Rational) -> Rational) -> Self {
        let mut map = BTreeMap::new();
        for (v, p) in &self.atoms {
            *map.entry(f(v)).or_insert_with(Rational::zero) += p;
        }
        Self::from_map(map)
    }

    pub fn scale(&self, c: &Rational) -> Self {
        self.map_values(|v| v * c)
    }

    pub fn shift(&self, c: &Rational) -> Self {
        self.map_values(|v| v + c)
    }

    /// Law of the sum of independent copies of `self` and `other`.
    pub fn convolve(&self, other: &DiscreteRV) -> Self {
        let mut map = BTreeMap::new();
        for (a, pa) in &self.atoms {
            for (b, pb) in &other.atoms {
                *map.entry(a + b).or_insert_with(Rational::zero) += pa * pb;
            }
        }
        Self::from_map(map)
    }

    pub fn prob(&self, pred: impl Fn(&Rational) -> bool) -> Rational {
        self.atoms.iter().filter(|(v, _)| pred(v)).map(|(_, p)| p.clone()).sum()
    }

    /// Pr[|Y| ≥ t] where `t_sq = t²`, computed exactly.
    pub fn prob_abs_at_least_sq(&self, t_sq: &Rational) -> Rational {
        self.prob(|v| &(v * v) >= t_sq)
    }

    pub fn to_f64_atoms(&self) -> Vec<(f64, f64)> {
        self.atoms.iter().map(|(v, p)| (rational::to_f64(v), rational::to_f64(p))).collect()
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
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(Error::Parse(format!("line {}: expected \"value prob\"", lineno + 1)));
            }
            atoms.push((rational::parse_rational(parts[0])?, rational::parse_rational(parts[1])?));
        }
        Self::from_atoms(atoms)
    }
}

pub fn raw_moment(rv: &DiscreteRV, l: u32) -> Rational {
    rv.raw_moment(l)
}

/// Exact W₁ via the quantile coupling: walk both sorted atom lists and
/// transport mass in order.
pub fn wasserstein1(a: &DiscreteRV, b: &DiscreteRV) -> Rational {
    let (mut i, mut j) = (0, 0);
    let mut ra = a.atoms[0].1.clone();
    let mut rb = b.atoms[0].1.clone();
    let mut acc = Rational::zero();
    loop {
        let m = if ra < rb { ra.clone() } else { rb.clone() };
        acc += &m * (&a.atoms[i].0 - &b.atoms[j].0).abs();
        ra -= &m;
        rb -= &m;
        if ra.is_zero() {
            i += 1;
            if i == a.atoms.len() {
                break;
            }
            ra = a.atoms[i].1.clone();
        }
        if rb.is_zero() {
            j += 1;
            if j == b.atoms.len() {
                break;
            }
            rb = b.atoms[j].1.clone();
        }
    }
    acc
}

/// Euclidean norm of the first-k raw-moment differences.
pub fn moment_distance(a: &DiscreteRV, b: &DiscreteRV, k: u32) -> RootOf {
    let ma = a.moments(k);
    let mb = b.moments(k);
    let sq: Rational = ma.iter().zip(&mb).map(|(x, y)| (x - y) * (x - y)).sum();
    let value = rational::to_f64(&sq).sqrt();
    RootOf { squared: Real::from_exact(sq), value }
}

/// Compares the first 2k−1 raw moments, k the larger support size. Two laws
/// on at most k points each agree iff these moments agree.
pub fn identical_by_moments(a: &DiscreteRV, b: &DiscreteRV) -> bool {
    let k = a.support_size().max(b.support_size()) as u32;
    a.moments(2 * k - 1) == b.moments(2 * k - 1)
}

/// Exact law of p(X^{⊗n}) using the default enumeration budget.
pub fn output_distribution(p: &MultilinearPolynomial, d: &FiniteDistribution) -> Result<DiscreteRV> {
    output_distribution_with_budget(p, d, DEFAULT_ENUMERATION_BUDGET)
}

pub fn output_distribution_with_budget(
    p: &MultilinearPolynomial,
    d: &FiniteDistribution,
    budget: f64,
) -> Result<DiscreteRV> {
    let terms = p.exact_terms()?;
    let constant = p.constant_term().and_then(|c| c.as_exact().cloned()).unwrap_or_else(Rational::zero);
    let nonconst: Vec<(Monomial, Rational)> = terms
        .into_iter()
        .filter(|(m, _)| !m.is_constant())
        .map(|(m, c)| (m.clone(), c.clone()))
        .collect();

    let l = d.support_size() as f64;
    let components = split_components(&nonconst);
    for comp in &components {
        let k = comp.vars.len();
        let need = l.powi(k as i32);
        if need > budget {
            return Err(Error::budget(
                "exactdist",
                format!("support^k enumeration with l={} k={}", d.support_size(), k),
                need,
                budget,
            ));
        }
    }

    let mut cache: HashMap<String, DiscreteRV> = HashMap::new();
    let mut acc = DiscreteRV::point_mass(constant);
    for comp in components {
        let key = comp.poly.to_text();
        let law = match cache.get(&key) {
            Some(law) => law.clone(),
            None => {
                let law = enumerate_component(&comp, d);
                cache.insert(key, law.clone());
                law
            }
        };
        let size = (acc.support_size() * law.support_size()) as f64;
        if size > budget {
            return Err(Error::budget("exactdist", "convolution support", size, budget));
        }
        acc = acc.convolve(&law);
    }
    Ok(acc)
}

/// A variable-disjoint piece of a polynomial, renamed onto 0..k.
struct Component {
    vars: Vec<u32>,
    poly: MultilinearPolynomial,
    /// (coefficient, positions into `vars`)
    terms: Vec<(Rational, Vec<usize>)>,
}

fn split_components(terms: &[(Monomial, Rational)]) -> Vec<Component> {
    let mut vars: Vec<u32> = terms.iter().flat_map(|(m, _)| m.vars().iter().copied()).collect();
    vars.sort_unstable();
    vars.dedup();
    let idx = |v: u32| vars.binary_search(&v).unwrap();
    let mut parent: Vec<usize> = (0..vars.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (m, _) in terms {
        let vs = m.vars();
        for w in vs.windows(2) {
            let (a, b) = (find(&mut parent, idx(w[0])), find(&mut parent, idx(w[1])));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<(Monomial, Rational)>> = BTreeMap::new();
    for (m, c) in terms {
        let root = find(&mut parent, idx(m.vars()[0]));
        groups.entry(root).or_default().push((m.clone(), c.clone()));
    }
    groups
        .into_values()
        .map(|group| {
            let mut cvars: Vec<u32> = group.iter().flat_map(|(m, _)| m.vars().iter().copied()).collect();
            cvars.sort_unstable();
            cvars.dedup();
            let pos = |v: u32| cvars.binary_search(&v).unwrap();
            let terms: Vec<(Rational, Vec<usize>)> =
                group.iter().map(|(m, c)| (c.clone(), m.vars().iter().map(|&v| pos(v)).collect())).collect();
            let poly = MultilinearPolynomial::from_terms(
                group.iter().map(|(m, c)| (m.map_vars(|v| pos(v) as u32), c.clone())),
            );
            Component { vars: cvars, poly, terms }
        })
        .collect()
}

const CHUNK: u64 = 1 << 14;

fn enumerate_component(comp: &Component, d: &FiniteDistribution) -> DiscreteRV {
    match IntegerForm::new(comp, d) {
        Some(form) => form.enumerate(),
        None => enumerate_rational(comp, d),
    }
}

/// Scaled-integer representation: p(x) = Σ_S n_S Π a_{x_i} / q and
/// Pr[x] = Π w_{x_i} / W^k.
struct IntegerForm {
    k: usize,
    values: Vec<i128>,
    weights: Vec<u128>,
    terms: Vec<(i128, Vec<usize>)>,
    q: BigInt,
    total_weight: BigInt,
}

impl IntegerForm {
    fn new(comp: &Component, d: &FiniteDistribution) -> Option<Self> {
        let k = comp.vars.len();
        let dv = rational::lcm_denominators(d.atoms().iter().map(|(v, _)| v));
        let dw = rational::lcm_denominators(d.atoms().iter().map(|(_, p)| p));
        let values: Vec<BigInt> = d.atoms().iter().map(|(v, _)| (v * &dv).to_integer()).collect();
        let weights: Vec<BigInt> = d.atoms().iter().map(|(_, p)| (p * &dw).to_integer()).collect();
        let scaled: Vec<Rational> = comp
            .terms
            .iter()
            .map(|(c, pos)| c / rational::pow(&Rational::from_integer(dv.clone()), pos.len() as u32))
            .collect();
        let q = rational::lcm_denominators(scaled.iter());
        let nums: Vec<BigInt> = scaled.iter().map(|c| (c * &q).to_integer()).collect();

        let amax = values.iter().map(|v| v.abs()).max().unwrap();
        let mut bound = BigInt::zero();
        for (n, (_, pos)) in nums.iter().zip(&comp.terms) {
            bound += n.abs() * num_traits::pow(amax.clone(), pos.len());
        }
        let limit = BigInt::one() << 120;
        if bound >= limit || num_traits::pow(dw.clone(), k) >= limit {
            return None;
        }
        Some(IntegerForm {
            k,
            values: values.iter().map(|v| v.to_i128().unwrap()).collect(),
            weights: weights.iter().map(|w| w.to_u128().unwrap()).collect(),
            terms: nums.iter().zip(&comp.terms).map(|(n, (_, pos))| (n.to_i128().unwrap(), pos.clone())).collect(),
            q,
            total_weight: num_traits::pow(dw, k),
        })
    }

    fn enumerate(&self) -> DiscreteRV {
        let l = self.values.len() as u64;
        let total = l.pow(self.k as u32);
        let chunks = total.div_ceil(CHUNK);
        let merged: HashMap<i128, u128> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let start = c * CHUNK;
                let end = (start + CHUNK).min(total);
                let mut digits = vec![0usize; self.k];
                let mut rem = start;
                for slot in digits.iter_mut() {
                    *slot = (rem % l) as usize;
                    rem /= l;
                }
                let mut local: HashMap<i128, u128> = HashMap::new();
                for _ in start..end {
                    let mut val: i128 = 0;
                    for (n, pos) in &self.terms {
                        let mut t = *n;
                        for &i in pos {
                            t *= self.values[digits[i]];
                        }
                        val += t;
                    }
                    let w: u128 = digits.iter().map(|&i| self.weights[i]).product();
                    *local.entry(val).or_insert(0) += w;
                    for slot in digits.iter_mut() {
                        *slot += 1;
                        if *slot < l as usize {
                            break;
                        }
                        *slot = 0;
                    }
                }
                local
            })
            .reduce(HashMap::new, |mut a, b| {
                for (v, w) in b {
                    *a.entry(v).or_insert(0) += w;
                }
                a
            });
        let q = Rational::from_integer(self.q.clone());
        let tw = Rational::from_integer(self.total_weight.clone());
        let map: BTreeMap<Rational, Rational> = merged
            .into_iter()
            .map(|(v, w)| (Rational::from_integer(BigInt::from(v)) / &q, Rational::from_integer(BigInt::from(w)) / &tw))
            .collect();
        DiscreteRV::from_map(map)
    }
}

fn enumerate_rational(comp: &Component, d: &FiniteDistribution) -> DiscreteRV {
    let k = comp.vars.len();
    let atoms = d.atoms();
    let l = atoms.len() as u64;
    let total = l.pow(k as u32);
    let chunks = total.div_ceil(CHUNK);
    let merged: BTreeMap<Rational, Rational> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(total);
            let mut local: BTreeMap<Rational, Rational> = BTreeMap::new();
            for idx in start..end {
                let mut rem = idx;
                let digits: Vec<usize> = (0..k)
                    .map(|_| {
                        let dgt = (rem % l) as usize;
                        rem /= l;
                        dgt
                    })
                    .collect();
                let mut val = Rational::zero();
                for (coef, pos) in &comp.terms {
                    let mut t = coef.clone();
                    for &i in pos {
                        t *= &atoms[digits[i]].0;
                    }
                    val += t;
                }
                let mut pr = Rational::one();
                for &i in &digits {
                    pr *= &atoms[i].1;
                }
                *local.entry(val).or_insert_with(Rational::zero) += pr;
            }
            local
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (v, p) in b {
                *a.entry(v).or_insert_with(Rational::zero) += p;
            }
            a
        });
    DiscreteRV::from_map(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::validate_distribution;
    use crate::rational::{frac, int};

    fn rv(pairs: &[(i64, i64, i64, i64)]) -> DiscreteRV {
        DiscreteRV::from_atoms(pairs.iter().map(|&(a, b, c, d)| (frac(a, b), frac(c, d)))).unwrap()
    }

    fn tree2() -> MultilinearPolynomial {
        let h = frac(1, 2);
        MultilinearPolynomial::from_pairs(&[(h.clone(), &[2]), (h.clone(), &[3]), (h.clone(), &[1, 2]), (-h, &[1, 3])])
            .unwrap()
    }

    #[test]
    fn output_distribution_examples() {
        let rad = FiniteDistribution::rademacher();
        let x1 = MultilinearPolynomial::var(1);
        assert_eq!(output_distribution(&x1, &rad).unwrap(), rv(&[(-1, 1, 1, 2), (1, 1, 1, 2)]));
        let s = x1.add(&MultilinearPolynomial::var(2));
        assert_eq!(output_distribution(&s, &rad).unwrap(), rv(&[(-2, 1, 1, 4), (0, 1, 1, 2), (2, 1, 1, 4)]));
        assert_eq!(output_distribution(&tree2(), &rad).unwrap(), rv(&[(-1, 1, 1, 2), (1, 1, 1, 2)]));
    }

    #[test]
    fn constant_polynomial() {
        let rad = FiniteDistribution::rademacher();
        let p = MultilinearPolynomial::constant(frac(3, 7));
        assert_eq!(output_distribution(&p, &rad).unwrap(), DiscreteRV::point_mass(frac(3, 7)));
        assert_eq!(output_distribution(&MultilinearPolynomial::zero(), &rad).unwrap(), DiscreteRV::point_mass(int(0)));
    }

    #[test]
    fn moment_examples() {
        let rad = FiniteDistribution::rademacher();
        let s = MultilinearPolynomial::var(1).add(&MultilinearPolynomial::var(2));
        let r = output_distribution(&s, &rad).unwrap();
        assert_eq!(raw_moment(&r, 2), int(2));
        assert_eq!(raw_moment(&r, 3), int(0));
        assert_eq!(raw_moment(&r, 4), int(8));
    }

    #[test]
    fn wasserstein_examples() {
        let rad = rv(&[(-1, 1, 1, 2), (1, 1, 1, 2)]);
        let zero = DiscreteRV::point_mass(int(0));
        let sum = rv(&[(-2, 1, 1, 4), (0, 1, 1, 2), (2, 1, 1, 4)]);
        assert_eq!(wasserstein1(&rad, &rad), int(0));
        assert_eq!(wasserstein1(&rad, &zero), int(1));
        assert_eq!(wasserstein1(&sum, &rad), int(1));
    }

    #[test]
    fn moment_distance_examples() {
        let rad = rv(&[(-1, 1, 1, 2), (1, 1, 1, 2)]);
        let sum = rv(&[(-2, 1, 1, 4), (0, 1, 1, 2), (2, 1, 1, 4)]);
        assert_eq!(moment_distance(&rad, &sum, 2).squared.exact, Some(int(1)));
        assert_eq!(moment_distance(&rad, &sum, 4).squared.exact, Some(int(50)));
        assert_eq!(moment_distance(&sum, &sum, 6).value, 0.0);
    }

    #[test]
    fn identity_examples() {
        let rad = FiniteDistribution::rademacher();
        let a = output_distribution(&MultilinearPolynomial::var(1), &rad).unwrap();
        let b = output_distribution(&tree2(), &rad).unwrap();
        assert!(identical_by_moments(&a, &b));
        // (x1 + x2)/sqrt(2) has support {-√2, 0, √2}; scaling does not change
        // the support size, so x1 + x2 stands in for it.
        let c = output_distribution(&MultilinearPolynomial::var(1).add(&MultilinearPolynomial::var(2)), &rad).unwrap();
        assert!(!identical_by_moments(&a, &c));
        assert!(identical_by_moments(&c, &c));
    }

    #[test]
    fn integer_and_rational_paths_agree() {
        let d = validate_distribution(vec![(int(-2), frac(1, 5)), (frac(1, 2), frac(4, 5))]).unwrap();
        let p = MultilinearPolynomial::from_pairs(&[(frac(2, 3), &[1, 2]), (frac(-1, 7), &[2]), (int(1), &[3, 1])]).unwrap();
        let comps = split_components(&p.exact_terms().unwrap().into_iter().map(|(m, c)| (m.clone(), c.clone())).collect::<Vec<_>>());
        assert_eq!(comps.len(), 1);
        let fast = IntegerForm::new(&comps[0], &d).unwrap().enumerate();
        let slow = enumerate_rational(&comps[0], &d);
        assert_eq!(fast, slow);
    }

    #[test]
    fn budget_error_names_requirement() {
        let rad = FiniteDistribution::rademacher();
        let p = MultilinearPolynomial::from_pairs(&[(int(1), &[1, 2]), (int(1), &[2, 3]), (int(1), &[3, 4])]).unwrap();
        let e = output_distribution_with_budget(&p, &rad, 8.0).unwrap_err();
        assert!(e.to_string().contains("k=4"), "{e}");
    }

    #[test]
    fn disjoint_components_convolve() {
        let rad = FiniteDistribution::rademacher();
        let mut p = MultilinearPolynomial::zero();
        for i in 1..=30 {
            p = p.add(&MultilinearPolynomial::var(i));
        }
        let r = output_distribution(&p, &rad).unwrap();
        assert_eq!(r.support_size(), 31);
        assert_eq!(r.raw_moment(2), int(30));
    }

    #[test]
    fn rv_text_round_trip() {
        let r = rv(&[(-3, 2, 1, 3), (5, 1, 2, 3)]);
        assert_eq!(DiscreteRV::parse_text(&r.to_text()).unwrap(), r);
    }
}
