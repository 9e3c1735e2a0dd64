//! Sparse multilinear polynomials with exact rational (or float) coefficients.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_traits::{Signed, Zero};

use crate::error::{Error, Result};
use crate::rational::{self, Rational};

/// A product of distinct variables, stored as a strictly increasing index list.
/// The empty list is the constant monomial.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(mut vars: Vec<u32>) -> Result<Self> {
        vars.sort_unstable();
        if vars.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!("repeated variable in monomial {vars:?}")));
        }
        Ok(Monomial(vars))
    }

    /// Builds from indices already known to be strictly increasing.
    pub fn from_sorted(vars: Vec<u32>) -> Self {
        debug_assert!(vars.windows(2).all(|w| w[0] < w[1]));
        Monomial(vars)
    }

    pub fn constant() -> Self {
        Monomial(Vec::new())
    }

    pub fn var(i: u32) -> Self {
        Monomial(vec![i])
    }

    pub fn vars(&self) -> &[u32] {
        &self.0
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, i: u32) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn is_constant(&self) -> bool {
        self.0.is_empty()
    }

    pub fn map_vars(&self, f: impl Fn(u32) -> u32) -> Self {
        let mut v: Vec<u32> = self.0.iter().map(|&i| f(i)).collect();
        v.sort_unstable();
        Monomial(v)
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        let parts: Vec<String> = self.0.iter().map(|i| format!("x{i}")).collect();
        write!(f, "{}", parts.join("*"))
    }
}

/// A coefficient in dual form. When `exact` is present it is authoritative and
/// `approx` is its rounding; otherwise the float is authoritative.
#[derive(Clone, Debug, PartialEq)]
pub struct Coefficient {
    exact: Option<Rational>,
    approx: f64,
}

impl Coefficient {
    pub fn exact(r: Rational) -> Self {
        let approx = rational::to_f64(&r);
        Coefficient { exact: Some(r), approx }
    }

    pub fn float(x: f64) -> Self {
        Coefficient { exact: None, approx: x }
    }

    pub fn value(&self) -> f64 {
        self.approx
    }

    pub fn as_exact(&self) -> Option<&Rational> {
        self.exact.as_ref()
    }

    pub fn is_exact(&self) -> bool {
        self.exact.is_some()
    }

    fn is_zero(&self) -> bool {
        match &self.exact {
            Some(r) => r.is_zero(),
            None => self.approx == 0.0,
        }
    }

    fn add(&self, other: &Coefficient) -> Coefficient {
        match (&self.exact, &other.exact) {
            (Some(a), Some(b)) => Coefficient::exact(a + b),
            _ => Coefficient::float(self.approx + other.approx),
        }
    }

    fn mul(&self, other: &Coefficient) -> Coefficient {
        match (&self.exact, &other.exact) {
            (Some(a), Some(b)) => Coefficient::exact(a * b),
            _ => Coefficient::float(self.approx * other.approx),
        }
    }

    fn neg(&self) -> Coefficient {
        match &self.exact {
            Some(a) => Coefficient::exact(-a),
            None => Coefficient::float(-self.approx),
        }
    }
}

/// A real quantity that is exact when its inputs were exact.
#[derive(Clone, Debug, PartialEq)]
pub struct Real {
    pub exact: Option<Rational>,
    pub value: f64,
}

impl Real {
    pub fn from_exact(r: Rational) -> Self {
        Real { value: rational::to_f64(&r), exact: Some(r) }
    }

    pub fn from_float(x: f64) -> Self {
        Real { exact: None, value: x }
    }
}

/// A norm-like quantity: the exact square (when available) and its float root.
#[derive(Clone, Debug, PartialEq)]
pub struct RootOf {
    pub squared: Real,
    pub value: f64,
}

impl RootOf {
    fn of(squared: Real) -> Self {
        let value = squared.value.max(0.0).sqrt();
        RootOf { squared, value }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct MultilinearPolynomial {
    terms: BTreeMap<Monomial, Coefficient>,
}

impl MultilinearPolynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (Monomial, Rational)>) -> Self {
        let mut p = Self::zero();
        for (m, c) in terms {
            p.add_term(m, Coefficient::exact(c));
        }
        p
    }

    pub fn from_float_terms(terms: impl IntoIterator<Item = (Monomial, f64)>) -> Self {
        let mut p = Self::zero();
        for (m, c) in terms {
            p.add_term(m, Coefficient::float(c));
        }
        p
    }

    /// Convenience constructor from (coefficient, variable list) pairs.
    pub fn from_pairs(terms: &[(Rational, &[u32])]) -> Result<Self> {
        let mut p = Self::zero();
        for (c, vars) in terms {
            p.add_term(Monomial::new(vars.to_vec())?, Coefficient::exact(c.clone()));
        }
        Ok(p)
    }

    pub fn constant(c: Rational) -> Self {
        Self::from_terms([(Monomial::constant(), c)])
    }

    pub fn var(i: u32) -> Self {
        Self::from_terms([(Monomial::var(i), rational::int(1))])
    }

    pub fn add_term(&mut self, m: Monomial, c: Coefficient) {
        let merged = match self.terms.remove(&m) {
            Some(old) => old.add(&c),
            None => c,
        };
        if !merged.is_zero() {
            self.terms.insert(m, merged);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Coefficient)> {
        self.terms.iter()
    }

    pub fn coefficient(&self, m: &Monomial) -> Option<&Coefficient> {
        self.terms.get(m)
    }

    pub fn sparsity(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn is_exact(&self) -> bool {
        self.terms.values().all(Coefficient::is_exact)
    }

    /// Exact coefficient list, or `NotExact` if any coefficient is float-only.
    pub fn exact_terms(&self) -> Result<Vec<(&Monomial, &Rational)>> {
        self.terms
            .iter()
            .map(|(m, c)| c.as_exact().map(|r| (m, r)).ok_or(Error::NotExact))
            .collect()
    }

    /// Sorted list of variables appearing in some monomial.
    pub fn active_variables(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.terms.keys().flat_map(|m| m.vars().iter().copied()).collect();
        set.into_iter().collect()
    }

    pub fn constant_term(&self) -> Option<&Coefficient> {
        self.terms.get(&Monomial::constant())
    }

    pub fn scale(&self, c: &Rational) -> Self {
        let c = Coefficient::exact(c.clone());
        let mut out = Self::zero();
        for (m, a) in &self.terms {
            out.add_term(m.clone(), a.mul(&c));
        }
        out
    }

    pub fn scale_f64(&self, c: f64) -> Self {
        let c = Coefficient::float(c);
        let mut out = Self::zero();
        for (m, a) in &self.terms {
            out.add_term(m.clone(), a.mul(&c));
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.neg());
        }
        out
    }

    /// Renames variables; `f` must be injective on the active variables.
    pub fn map_vars(&self, f: impl Fn(u32) -> u32) -> Self {
        let mut out = Self::zero();
        for (m, c) in &self.terms {
            out.add_term(m.map_vars(&f), c.clone());
        }
        out
    }

    /// Shifts every variable index by `offset`.
    pub fn shift_vars(&self, offset: u32) -> Self {
        self.map_vars(|i| i + offset)
    }

    fn sum_of_squares<'a>(coeffs: impl Iterator<Item = &'a Coefficient>) -> Real {
        let coeffs: Vec<&Coefficient> = coeffs.collect();
        if coeffs.iter().all(|c| c.is_exact()) {
            let s = coeffs.iter().fold(Rational::zero(), |acc, c| {
                let r = c.as_exact().unwrap();
                acc + r * r
            });
            Real::from_exact(s)
        } else {
            Real::from_float(coeffs.iter().map(|c| c.value() * c.value()).sum())
        }
    }

    /// (Σ_S p̂(S)²)^½, with the exact square when coefficients are rational.
    pub fn coeff_norm(&self) -> RootOf {
        RootOf::of(Self::sum_of_squares(self.terms.values()))
    }

    pub fn coeff_distance(&self, other: &Self) -> RootOf {
        self.sub(other).coeff_norm()
    }

    /// Monomials of the `s` largest-magnitude coefficients, ties broken by
    /// lexicographic monomial order.
    pub fn top_terms(&self, s: usize) -> Vec<Monomial> {
        let mut items: Vec<(&Monomial, &Coefficient)> = self.terms.iter().collect();
        items.sort_by(|(ma, ca), (mb, cb)| {
            let ord = match (ca.as_exact(), cb.as_exact()) {
                (Some(a), Some(b)) => b.abs().cmp(&a.abs()),
                _ => cb.value().abs().total_cmp(&ca.value().abs()),
            };
            ord.then_with(|| ma.cmp(mb))
        });
        items.into_iter().take(s).map(|(m, _)| m.clone()).collect()
    }

    /// Best s-sparse approximation in coefficient distance.
    pub fn truncate_to(&self, s: usize) -> Self {
        let keep = self.top_terms(s);
        let mut out = Self::zero();
        for m in keep {
            out.add_term(m.clone(), self.terms[&m].clone());
        }
        out
    }

    /// Sum of the `s` largest squared coefficients.
    pub fn top_mass(&self, s: usize) -> Real {
        let keep = self.top_terms(s);
        Self::sum_of_squares(keep.iter().map(|m| &self.terms[m]))
    }

    /// sqrt(1 − (sum of s largest squares)/‖p‖²).
    pub fn distance_to_sparsity(&self, s: usize) -> Result<RootOf> {
        if self.is_zero() {
            return Err(Error::ZeroPolynomial);
        }
        let total = Self::sum_of_squares(self.terms.values());
        let top = self.top_mass(s);
        let sq = match (&total.exact, &top.exact) {
            (Some(t), Some(k)) => Real::from_exact(rational::int(1) - k / t),
            _ => Real::from_float((1.0 - top.value / total.value).max(0.0)),
        };
        Ok(RootOf::of(sq))
    }

    /// True iff the polynomial is at least `eps`-far from every `t`-sparse
    /// polynomial, decided exactly for rational inputs.
    pub fn is_far_from_sparse(&self, t: usize, eps: &Rational) -> Result<bool> {
        let d = self.distance_to_sparsity(t)?;
        Ok(match &d.squared.exact {
            Some(sq) => sq >= &(eps * eps),
            None => d.value >= rational::to_f64(eps),
        })
    }

    /// Inf_i = Σ_{S ∋ i} p̂(S)².
    pub fn influence(&self, i: u32) -> Real {
        Self::sum_of_squares(self.terms.iter().filter(|(m, _)| m.contains(i)).map(|(_, c)| c))
    }

    /// Σ_S |S| p̂(S)², which equals the total influence.
    pub fn weighted_degree_mass(&self) -> Real {
        let ex: Option<Rational> = self.terms.iter().try_fold(Rational::zero(), |acc, (m, c)| {
            c.as_exact().map(|r| acc + r * r * rational::int(m.degree() as i64))
        });
        match ex {
            Some(r) => Real::from_exact(r),
            None => Real::from_float(
                self.terms.iter().map(|(m, c)| m.degree() as f64 * c.value() * c.value()).sum(),
            ),
        }
    }

    /// Float evaluation at an assignment given as a lookup from variable to value.
    pub fn eval_f64(&self, x: impl Fn(u32) -> f64) -> f64 {
        self.terms
            .iter()
            .map(|(m, c)| c.value() * m.vars().iter().map(|&i| x(i)).product::<f64>())
            .sum()
    }

    pub fn eval_exact(&self, x: impl Fn(u32) -> Rational) -> Result<Rational> {
        let mut acc = Rational::zero();
        for (m, c) in self.exact_terms()? {
            let mut t = c.clone();
            for &i in m.vars() {
                t *= x(i);
            }
            acc += t;
        }
        Ok(acc)
    }

    /// Compiles the polynomial into position-indexed form over `vars`
    /// (which must contain every active variable) for fast float evaluation.
    pub fn compile(&self, vars: &[u32]) -> CompiledPoly {
        let pos = |i: u32| vars.binary_search(&i).expect("variable missing from compile list");
        let terms = self
            .terms
            .iter()
            .map(|(m, c)| (c.value(), m.vars().iter().map(|&i| pos(i)).collect()))
            .collect();
        CompiledPoly { terms }
    }

    /// Text format: one term per line, "coeff: i1 i2 ... ik".
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (m, c) in &self.terms {
            let coeff = match c.as_exact() {
                Some(r) => rational::format_rational(r),
                None => format!("{:?}", c.value()),
            };
            let vars: Vec<String> = m.vars().iter().map(u32::to_string).collect();
            if vars.is_empty() {
                out.push_str(&format!("{coeff}:\n"));
            } else {
                out.push_str(&format!("{coeff}: {}\n", vars.join(" ")));
            }
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut p = Self::zero();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (c, vars) = line
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("line {}: expected \"coeff: vars\"", lineno + 1)))?;
            let coeff = rational::parse_rational(c)?;
            let vars: Vec<u32> = vars
                .split_whitespace()
                .map(|v| v.parse::<u32>().map_err(|_| Error::Parse(format!("line {}: bad index {v:?}", lineno + 1))))
                .collect::<Result<_>>()?;
            p.add_term(Monomial::new(vars)?, Coefficient::exact(coeff));
        }
        Ok(p)
    }
}

impl fmt::Display for MultilinearPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(m, c)| {
                let coeff = match c.as_exact() {
                    Some(r) => rational::format_rational(r),
                    None => format!("{}", c.value()),
                };
                if m.is_constant() {
                    coeff
                } else {
                    format!("{coeff}*{m}")
                }
            })
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

/// Float evaluation form: (coefficient, positions of the variables).
#[derive(Clone, Debug)]
pub struct CompiledPoly {
    terms: Vec<(f64, Vec<usize>)>,
}

impl CompiledPoly {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, pos)| c * pos.iter().map(|&i| x[i]).product::<f64>())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{frac, int};

    fn tree2() -> MultilinearPolynomial {
        let h = frac(1, 2);
        MultilinearPolynomial::from_pairs(&[
            (h.clone(), &[2]),
            (h.clone(), &[3]),
            (h.clone(), &[1, 2]),
            (-h, &[1, 3]),
        ])
        .unwrap()
    }

    #[test]
    fn norm_examples() {
        let p = MultilinearPolynomial::var(1).scale(&int(3));
        assert_eq!(p.coeff_norm().squared.exact, Some(int(9)));
        assert_eq!(p.coeff_norm().value, 3.0);
        assert_eq!(tree2().coeff_norm().squared.exact, Some(int(1)));
        let q = MultilinearPolynomial::from_pairs(&[(int(1), &[1, 2]), (int(1), &[3])]).unwrap();
        assert!((q.coeff_norm().value - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn distance_examples() {
        let p = MultilinearPolynomial::from_pairs(&[(frac(4, 5), &[1]), (frac(3, 5), &[2])]).unwrap();
        let d = p.distance_to_sparsity(1).unwrap();
        assert_eq!(d.squared.exact, Some(frac(9, 25)));
        assert!((d.value - 0.6).abs() < 1e-15);
        let p = MultilinearPolynomial::from_pairs(&[(int(2), &[1]), (int(1), &[2]), (int(1), &[3])]).unwrap();
        assert_eq!(p.distance_to_sparsity(1).unwrap().squared.exact, Some(frac(1, 3)));
        assert_eq!(p.distance_to_sparsity(3).unwrap().squared.exact, Some(int(0)));
        assert_eq!(MultilinearPolynomial::zero().distance_to_sparsity(1), Err(Error::ZeroPolynomial));
    }

    #[test]
    fn influence_examples() {
        let p = MultilinearPolynomial::from_pairs(&[(int(1), &[1, 2])]).unwrap();
        assert_eq!(p.influence(1).exact, Some(int(1)));
        let p = MultilinearPolynomial::from_pairs(&[(int(1), &[1]), (int(1), &[1, 2])]).unwrap();
        assert_eq!(p.influence(1).exact, Some(int(2)));
        assert_eq!(p.influence(7).exact, Some(int(0)));
    }

    #[test]
    fn repeated_variable_rejected() {
        assert!(Monomial::new(vec![1, 1]).is_err());
    }

    #[test]
    fn cancellation_removes_terms() {
        let p = MultilinearPolynomial::var(1);
        assert!(p.sub(&p).is_zero());
    }

    #[test]
    fn text_round_trip() {
        let mut p = tree2();
        p.add_term(Monomial::constant(), Coefficient::exact(frac(-7, 3)));
        let text = p.to_text();
        assert_eq!(MultilinearPolynomial::parse_text(&text).unwrap(), p);
        let q = MultilinearPolynomial::parse_text("0.5: 1 2\n# comment\n-1/4:\n").unwrap();
        assert_eq!(q.constant_term().unwrap().as_exact(), Some(&frac(-1, 4)));
    }

    #[test]
    fn top_terms_tie_break_is_lexicographic() {
        let p = MultilinearPolynomial::from_pairs(&[(int(1), &[2]), (int(-1), &[1]), (int(1), &[3])]).unwrap();
        assert_eq!(p.top_terms(2), vec![Monomial::var(1), Monomial::var(2)]);
    }
}
