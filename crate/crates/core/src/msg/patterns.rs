//! (d, r)-sparsity patterns: r distinct monomials of degree ≤ d over
//! x_1..x_{dr}, deduplicated up to renaming of variables.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::Monomial;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SparsityPattern {
    pub monomials: Vec<Monomial>,
}

impl SparsityPattern {
    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn variables(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.monomials.iter().flat_map(|m| m.vars().iter().copied()).collect();
        set.into_iter().collect()
    }

    /// Representative of the renaming class: used variables relabelled
    /// 1..u, minimizing the sorted monomial list over relabellings that
    /// respect a renaming-invariant ordering of the variables.
    pub fn canonical(&self) -> SparsityPattern {
        self.canonical_with_map().0
    }

    /// The canonical pattern and the relabelling (old → new) producing it.
    pub fn canonical_with_map(&self) -> (SparsityPattern, BTreeMap<u32, u32>) {
        let vars = self.variables();
        if vars.is_empty() {
            return (self.clone(), BTreeMap::new());
        }
        let sig1: BTreeMap<u32, Vec<usize>> = vars
            .iter()
            .map(|&v| {
                let mut s: Vec<usize> =
                    self.monomials.iter().filter(|m| m.contains(v)).map(|m| m.degree()).collect();
                s.sort_unstable();
                (v, s)
            })
            .collect();
        // One refinement round: each monomial containing v contributes the
        // sorted signatures of its other variables.
        let sig2: BTreeMap<u32, (Vec<usize>, Vec<Vec<Vec<usize>>>)> = vars
            .iter()
            .map(|&v| {
                let mut nb: Vec<Vec<Vec<usize>>> = self
                    .monomials
                    .iter()
                    .filter(|m| m.contains(v))
                    .map(|m| {
                        let mut o: Vec<Vec<usize>> =
                            m.vars().iter().filter(|&&w| w != v).map(|w| sig1[w].clone()).collect();
                        o.sort();
                        o
                    })
                    .collect();
                nb.sort();
                (v, (sig1[&v].clone(), nb))
            })
            .collect();
        let mut order = vars.clone();
        order.sort_by(|a, b| sig2[a].cmp(&sig2[b]).then(a.cmp(b)));
        let mut groups: Vec<Vec<u32>> = Vec::new();
        for v in order {
            match groups.last_mut() {
                Some(g) if sig2[&g[0]] == sig2[&v] => g.push(v),
                _ => groups.push(vec![v]),
            }
        }
        let total: f64 = groups.iter().map(|g| (1..=g.len()).map(|i| i as f64).product::<f64>()).product();
        let mut best: Option<(Vec<Monomial>, BTreeMap<u32, u32>)> = None;
        let mut consider = |ordering: &[u32]| {
            let label: BTreeMap<u32, u32> =
                ordering.iter().enumerate().map(|(i, &v)| (v, i as u32 + 1)).collect();
            let mut ms: Vec<Monomial> = self.monomials.iter().map(|m| m.map_vars(|v| label[&v])).collect();
            ms.sort();
            if best.as_ref().map_or(true, |(b, _)| &ms < b) {
                best = Some((ms, label));
            }
        };
        if total > 50_000.0 {
            // Too many relabellings: fall back to the group order itself.
            // Duplicates may survive, which only costs search time.
            let flat: Vec<u32> = groups.concat();
            consider(&flat);
        } else {
            for_each_ordering(&groups, &mut Vec::new(), &mut consider);
        }
        let (monomials, map) = best.expect("at least one relabelling");
        (SparsityPattern { monomials }, map)
    }
}

fn for_each_ordering(groups: &[Vec<u32>], prefix: &mut Vec<u32>, f: &mut impl FnMut(&[u32])) {
    match groups.split_first() {
        None => f(prefix),
        Some((g, rest)) => {
            for p in permutations(g) {
                let n = prefix.len();
                prefix.extend(p);
                for_each_ordering(rest, prefix, f);
                prefix.truncate(n);
            }
        }
    }
}

fn permutations(items: &[u32]) -> Vec<Vec<u32>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

/// All monomials of degree ≤ d over x_1..x_n, in monomial order.
pub fn monomials_up_to(n: u32, d: usize) -> Vec<Monomial> {
    let mut out = vec![Monomial::constant()];
    fn rec(start: u32, n: u32, left: usize, cur: &mut Vec<u32>, out: &mut Vec<Monomial>) {
        if left == 0 {
            return;
        }
        for v in start..=n {
            cur.push(v);
            out.push(Monomial::from_sorted(cur.clone()));
            rec(v + 1, n, left - 1, cur, out);
            cur.pop();
        }
    }
    rec(1, n, d, &mut Vec::new(), &mut out);
    out.sort();
    out
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Number of raw (d, r)-patterns: C(N, r) with N = Σ_{j ≤ d} C(dr, j).
pub fn raw_pattern_count(d: usize, r: usize) -> u128 {
    let n = (d * r) as u128;
    let monos: u128 = (0..=d as u128).map(|j| binomial(n, j)).sum();
    binomial(monos, r as u128)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternEnumeration {
    pub raw_count: u128,
    pub patterns: Vec<SparsityPattern>,
}

/// Canonical (d, r)-patterns in sorted order. Fails when the raw count
/// exceeds `cap`.
pub fn enumerate_sparsity_patterns(d: usize, r: usize, cap: u128) -> Result<PatternEnumeration> {
    let raw_count = raw_pattern_count(d, r);
    if raw_count > cap {
        return Err(Error::budget("msg", format!("({d},{r}) sparsity patterns"), raw_count as f64, cap as f64));
    }
    let monos = monomials_up_to((d * r) as u32, d);
    let mut seen = BTreeSet::new();
    let mut idx: Vec<usize> = (0..r).collect();
    if r == 0 || r > monos.len() {
        return Ok(PatternEnumeration { raw_count, patterns: Vec::new() });
    }
    loop {
        let pat = SparsityPattern { monomials: idx.iter().map(|&i| monos[i].clone()).collect() };
        seen.insert(pat.canonical());
        // next combination
        let mut j = r;
        loop {
            if j == 0 {
                return Ok(PatternEnumeration { raw_count, patterns: seen.into_iter().collect() });
            }
            j -= 1;
            if idx[j] < monos.len() - r + j {
                break;
            }
        }
        idx[j] += 1;
        for k in j + 1..r {
            idx[k] = idx[k - 1] + 1;
        }
    }
}
