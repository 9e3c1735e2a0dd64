//! Exact witness search: pairs (p, q) of sparsity s and t with identical
//! output laws. Witnesses are always certified exactly; a search that finds
//! nothing proves nothing beyond the grid it covered.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::patterns::{enumerate_sparsity_patterns, raw_pattern_count, SparsityPattern};
use super::trees::disjoint_tree_sum;
use super::phi_exponent;
use crate::distribution::FiniteDistribution;
use crate::error::{Error, Result};
use crate::exactdist::{identical_by_moments, output_distribution};
use crate::poly::{Monomial, MultilinearPolynomial};
use crate::rational::{self, frac, Rational};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpec {
    /// Grid coefficients are ±k/denominator for k = 1..=max_numerator.
    pub denominator: u32,
    pub max_numerator: u32,
    pub shortlist: bool,
    pub grid: bool,
    /// Largest raw pattern count the grid search will canonicalize.
    pub max_raw_patterns: u128,
    /// Largest number of (candidate, support point) evaluations.
    pub max_work: f64,
    /// Float moments compared before the exact check.
    pub moment_checks: usize,
}

impl Default for SearchSpec {
    fn default() -> Self {
        SearchSpec {
            denominator: 4,
            max_numerator: 8,
            shortlist: true,
            grid: true,
            max_raw_patterns: 200_000,
            max_work: 3e8,
            moment_checks: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MsgWitness {
    pub p: MultilinearPolynomial,
    pub q: MultilinearPolynomial,
    pub distribution_id: String,
    /// Exact raw moments 1..2k−1 shared by both output laws.
    pub certificate: Vec<Rational>,
    pub source: String,
}

impl MsgWitness {
    pub fn s(&self) -> usize {
        self.p.sparsity()
    }

    pub fn t(&self) -> usize {
        self.q.sparsity()
    }

    pub fn to_json(&self) -> Value {
        json!({
            "s": self.s(),
            "t": self.t(),
            "distribution": self.distribution_id,
            "source": self.source,
            "p": self.p.to_text(),
            "q": self.q.to_text(),
            "matched_moments": self.certificate.iter().map(rational::format_rational).collect::<Vec<_>>(),
        })
    }
}

/// Certifies that p and q have identical output laws under `dist`.
pub fn certify_witness(p: &MultilinearPolynomial, q: &MultilinearPolynomial, dist: &FiniteDistribution) -> Result<Option<MsgWitness>> {
    certify(p, q, dist, "given")
}

fn certify(p: &MultilinearPolynomial, q: &MultilinearPolynomial, dist: &FiniteDistribution, source: &str) -> Result<Option<MsgWitness>> {
    let a = output_distribution(p, dist)?;
    let b = output_distribution(q, dist)?;
    if !identical_by_moments(&a, &b) {
        return Ok(None);
    }
    debug_assert_eq!(a, b);
    let k = a.support_size().max(b.support_size()) as u32;
    Ok(Some(MsgWitness {
        p: p.clone(),
        q: q.clone(),
        distribution_id: dist.id(),
        certificate: a.moments(2 * k - 1),
        source: source.into(),
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub witness: Option<MsgWitness>,
    /// True when the whole declared grid was searched.
    pub exhaustive: bool,
    pub candidates: u64,
    pub note: String,
}

fn linear_sum(c: usize) -> MultilinearPolynomial {
    MultilinearPolynomial::from_terms((1..=c as u32).map(|i| (Monomial::var(i), rational::int(1))))
}

/// Non-increasing depth lists of length `c`, entries in 1..=d, with
/// Σ 4^{depth−1} = t.
fn depth_lists(c: usize, d: u32, t: usize) -> Vec<Vec<u32>> {
    fn rec(left: usize, max_depth: u32, t: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if left == 0 {
            if t == 0 {
                out.push(cur.clone());
            }
            return;
        }
        for depth in (1..=max_depth).rev() {
            let w = 4usize.pow(depth - 1);
            if w <= t && t - w >= left - 1 {
                cur.push(depth);
                rec(left - 1, depth, t - w, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(c, d, t, &mut Vec::new(), &mut out);
    out
}

fn shortlist(dist: &FiniteDistribution, d: u32, s: usize, t: usize) -> Result<Option<MsgWitness>> {
    for c in 1..=s.min(t) {
        for depths in depth_lists(c, d, t) {
            let q = disjoint_tree_sum(&depths)?;
            if let Some(w) = certify(&linear_sum(c), &q, dist, "shortlist")? {
                return Ok(Some(w));
            }
        }
    }
    Ok(None)
}

/// Support points of a pattern, with the value of each monomial at each point.
struct PatternTable {
    probs: Vec<f64>,
    /// Row-major, one row of `len` monomial values per point.
    monos: Vec<f64>,
    len: usize,
}

impl PatternTable {
    fn new(pat: &SparsityPattern, dist: &FiniteDistribution) -> Self {
        let vars = pat.variables();
        let vals = dist.values_f64();
        let ps = dist.probs_f64();
        let l = vals.len();
        let k = vars.len();
        let pos: Vec<Vec<usize>> = pat
            .monomials
            .iter()
            .map(|m| m.vars().iter().map(|v| vars.binary_search(v).unwrap()).collect())
            .collect();
        let points = l.pow(k as u32);
        let mut probs = Vec::with_capacity(points);
        let mut monos = Vec::with_capacity(points * pat.len());
        let mut idx = vec![0usize; k];
        for _ in 0..points {
            probs.push(idx.iter().map(|&i| ps[i]).product());
            for p in &pos {
                monos.push(p.iter().map(|&j| vals[idx[j]]).product());
            }
            for slot in idx.iter_mut() {
                *slot += 1;
                if *slot < l {
                    break;
                }
                *slot = 0;
            }
        }
        PatternTable { probs, monos, len: pat.len() }
    }

    fn moments(&self, coeffs: &[f64], n: usize) -> Vec<f64> {
        let mut m = vec![0.0; n];
        for (i, p) in self.probs.iter().enumerate() {
            let row = &self.monos[i * self.len..(i + 1) * self.len];
            let v: f64 = row.iter().zip(coeffs).map(|(a, b)| a * b).sum();
            let mut pw = 1.0;
            for mj in m.iter_mut() {
                pw *= v;
                *mj += p * pw;
            }
        }
        m
    }
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + x.abs() + y.abs()))
}

/// Positive vectors of length `len` with entries ≤ kmax and Σk² in `targets`.
fn magnitude_vectors(len: usize, kmax: u32, targets: &BTreeSet<u64>) -> Vec<Vec<u32>> {
    let max_t = targets.iter().copied().max().unwrap_or(0);
    fn rec(len: usize, kmax: u32, targets: &BTreeSet<u64>, max_t: u64, sum: u64, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == len {
            if targets.contains(&sum) {
                out.push(cur.clone());
            }
            return;
        }
        let rest = (len - cur.len() - 1) as u64;
        for k in 1..=kmax {
            let s = sum + (k as u64) * (k as u64);
            if s + rest > max_t {
                break;
            }
            cur.push(k);
            rec(len, kmax, targets, max_t, s, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(len, kmax, targets, max_t, 0, &mut Vec::new(), &mut out);
    out
}

fn count_magnitude_vectors(len: usize, kmax: u32, targets: &BTreeSet<u64>) -> f64 {
    let max_t = targets.iter().copied().max().unwrap_or(0) as usize;
    let mut ways = vec![0f64; max_t + 1];
    ways[0] = 1.0;
    for _ in 0..len {
        let mut next = vec![0f64; max_t + 1];
        for (v, &w) in ways.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for k in 1..=kmax as usize {
                let nv = v + k * k;
                if nv > max_t {
                    break;
                }
                next[nv] += w;
            }
        }
        ways = next;
    }
    targets.iter().map(|&t| ways[t as usize]).sum()
}

fn build(pat: &SparsityPattern, nums: &[i64], den: u32) -> MultilinearPolynomial {
    MultilinearPolynomial::from_terms(
        pat.monomials.iter().zip(nums).map(|(m, &k)| (m.clone(), frac(k, den as i64))),
    )
}

struct PCandidate {
    pattern: usize,
    nums: Vec<i64>,
    moments: Vec<f64>,
}

/// Every signed numerator vector of length r with entries in ±1..=kmax.
fn all_signed(r: usize, kmax: u32) -> Vec<Vec<i64>> {
    let vals: Vec<i64> = (1..=kmax as i64).flat_map(|k| [k, -k]).collect();
    let mut out = vec![Vec::new()];
    for _ in 0..r {
        out = out
            .into_iter()
            .flat_map(|v| {
                vals.iter().map(move |&x| {
                    let mut w = v.clone();
                    w.push(x);
                    w
                })
            })
            .collect();
    }
    out
}

fn grid_search(dist: &FiniteDistribution, d: usize, s: usize, t: usize, spec: &SearchSpec) -> Result<SearchOutcome> {
    let inconclusive = |note: String| SearchOutcome { witness: None, exhaustive: false, candidates: 0, note };
    let l = dist.support_size() as f64;
    let kmax = spec.max_numerator;
    let den = spec.denominator;
    let nm = spec.moment_checks.max(3);

    // s-side candidates, bucketed by Σk².
    let mut p_patterns: Vec<SparsityPattern> = Vec::new();
    let mut p_work = 0f64;
    for r in 1..=s {
        if raw_pattern_count(d, r) > spec.max_raw_patterns {
            return Ok(inconclusive(format!("too many ({d},{r}) patterns for the s side")));
        }
        let e = enumerate_sparsity_patterns(d, r, spec.max_raw_patterns)?;
        for p in e.patterns {
            p_work += (2.0 * kmax as f64).powi(r as i32) * l.powi(p.variables().len() as i32);
            p_patterns.push(p);
        }
    }
    if p_work > spec.max_work {
        return Ok(inconclusive(format!("s-side grid needs {p_work:.3e} evaluations")));
    }
    let p_cands: Vec<PCandidate> = p_patterns
        .par_iter()
        .enumerate()
        .flat_map_iter(|(pi, pat)| {
            let table = PatternTable::new(pat, dist);
            all_signed(pat.len(), kmax).into_iter().map(move |nums| {
                let c: Vec<f64> = nums.iter().map(|&k| k as f64 / den as f64).collect();
                PCandidate { pattern: pi, moments: table.moments(&c, nm), nums }
            })
        })
        .collect();
    let mut buckets: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, c) in p_cands.iter().enumerate() {
        let norm: u64 = c.nums.iter().map(|&k| (k * k) as u64).sum();
        buckets.entry(norm).or_default().push(i);
    }
    let targets: BTreeSet<u64> = buckets.keys().copied().collect();

    // t side.
    let raw = raw_pattern_count(d, t);
    if raw > spec.max_raw_patterns {
        return Ok(inconclusive(format!("{raw} raw ({d},{t}) patterns exceed cap {}", spec.max_raw_patterns)));
    }
    let vec_count = count_magnitude_vectors(t, kmax, &targets) * 2f64.powi(t as i32 - 1);
    let worst = vec_count * l.powi((d * t) as i32) * raw as f64;
    let q_patterns = if worst > spec.max_work {
        let e = enumerate_sparsity_patterns(d, t, spec.max_raw_patterns)?;
        let work: f64 = e.patterns.iter().map(|p| vec_count * l.powi(p.variables().len() as i32)).sum();
        if work > spec.max_work {
            return Ok(inconclusive(format!(
                "t-side grid needs {work:.3e} evaluations over {} patterns, budget {:.3e}",
                e.patterns.len(),
                spec.max_work
            )));
        }
        e.patterns
    } else {
        enumerate_sparsity_patterns(d, t, spec.max_raw_patterns)?.patterns
    };
    let mags = magnitude_vectors(t, kmax, &targets);

    let found = q_patterns.par_iter().find_map_first(|qpat| -> Option<Result<MsgWitness>> {
        let table = PatternTable::new(qpat, dist);
        for mag in &mags {
            let norm: u64 = mag.iter().map(|&k| (k as u64) * (k as u64)).sum();
            let bucket = &buckets[&norm];
            // The first sign is fixed: q matches p iff −q matches −p.
            for mask in 0u64..(1u64 << (t - 1)) {
                let nums: Vec<i64> = mag
                    .iter()
                    .enumerate()
                    .map(|(i, &k)| if i > 0 && mask >> (i - 1) & 1 == 1 { -(k as i64) } else { k as i64 })
                    .collect();
                let c: Vec<f64> = nums.iter().map(|&k| k as f64 / den as f64).collect();
                let mq = table.moments(&c, nm);
                for &pi in bucket {
                    let pc = &p_cands[pi];
                    if !close(&pc.moments, &mq) {
                        continue;
                    }
                    let p = build(&p_patterns[pc.pattern], &pc.nums, den);
                    let q = build(qpat, &nums, den);
                    match certify(&p, &q, dist, "grid") {
                        Ok(Some(w)) => return Some(Ok(w)),
                        Ok(None) => {}
                        Err(e) => return Some(Err(e)),
                    }
                }
            }
        }
        None
    });
    let candidates = (mags.len() as u64) << (t - 1);
    let candidates = candidates * q_patterns.len() as u64;
    match found {
        Some(Ok(w)) => Ok(SearchOutcome { witness: Some(w), exhaustive: false, candidates, note: "grid witness".into() }),
        Some(Err(e)) => Err(e),
        None => Ok(SearchOutcome {
            witness: None,
            exhaustive: true,
            candidates,
            note: format!(
                "grid ±k/{den}, k ≤ {kmax}: {} canonical t-patterns, {} s-side candidates",
                q_patterns.len(),
                p_cands.len()
            ),
        }),
    }
}

/// Looks for an s-sparse p and a t-sparse q with identical exact output laws.
pub fn find_msg_witness(dist: &FiniteDistribution, d: usize, s: usize, t: usize, spec: &SearchSpec) -> Result<SearchOutcome> {
    if d == 0 || s == 0 || t == 0 {
        return Err(Error::InvalidArgument("d, s, t must be positive".into()));
    }
    if t <= s {
        let p = linear_sum(t);
        let w = certify(&p, &p, dist, "identity")?.expect("p matches itself");
        return Ok(SearchOutcome { witness: Some(w), exhaustive: true, candidates: 1, note: "q = p".into() });
    }
    if spec.shortlist {
        if let Some(w) = shortlist(dist, d as u32, s, t)? {
            return Ok(SearchOutcome { witness: Some(w), exhaustive: false, candidates: 0, note: "shortlist witness".into() });
        }
    }
    if !spec.grid {
        return Ok(SearchOutcome { witness: None, exhaustive: false, candidates: 0, note: "grid search disabled".into() });
    }
    grid_search(dist, d, s, t, spec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TStatus {
    #[serde(rename = "witness")]
    Witness,
    #[serde(rename = "none-exhaustive")]
    NoneExhaustive,
    #[serde(rename = "inconclusive")]
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TOutcome {
    pub t: usize,
    pub status: TStatus,
    pub candidates: u64,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MsgReport {
    pub best_t_with_witness: usize,
    pub witness: MsgWitness,
    pub phi_log2: Option<u64>,
    pub start_t: usize,
    pub outcomes: Vec<TOutcome>,
    /// Every t above the answer, down from `start_t`, was searched
    /// exhaustively on the declared grid.
    pub certified: bool,
    /// `start_t` reached Φ, so no t beyond the search range remains.
    pub covers_phi: bool,
}

impl MsgReport {
    pub fn to_json(&self) -> Value {
        json!({
            "best_t_with_witness": self.best_t_with_witness,
            "phi_bound_log2": self.phi_log2,
            "start_t": self.start_t,
            "certified": self.certified,
            "covers_phi": self.covers_phi,
            "outcomes": self.outcomes,
            "witness": self.witness.to_json(),
        })
    }
}

/// Descends t from min(Φ, t_cap) to s+1 and stops at the first t with a
/// certified witness.
pub fn compute_msg(dist: &FiniteDistribution, d: usize, s: usize, t_cap: usize, spec: &SearchSpec) -> Result<MsgReport> {
    let l = dist.support_size() as u32;
    let phi_log2 = phi_exponent(d as u32, s as u32, l);
    let phi_small = phi_log2.filter(|&e| e < 63).map(|e| 1usize << e);
    let start_t = match phi_small {
        Some(p) => p.min(t_cap),
        None => t_cap,
    };
    let mut outcomes = Vec::new();
    let mut best = None;
    for t in (s + 1..=start_t).rev() {
        let o = find_msg_witness(dist, d, s, t, spec)?;
        let status = match (&o.witness, o.exhaustive) {
            (Some(_), _) => TStatus::Witness,
            (None, true) => TStatus::NoneExhaustive,
            (None, false) => TStatus::Inconclusive,
        };
        outcomes.push(TOutcome { t, status, candidates: o.candidates, note: o.note.clone() });
        if let Some(w) = o.witness {
            best = Some((t, w));
            break;
        }
    }
    let (best_t, witness) = match best {
        Some(b) => b,
        None => {
            let p = linear_sum(s);
            (s, certify(&p, &p, dist, "identity")?.expect("p matches itself"))
        }
    };
    let certified = outcomes.iter().all(|o| o.status != TStatus::Inconclusive);
    Ok(MsgReport {
        best_t_with_witness: best_t,
        witness,
        phi_log2,
        start_t,
        outcomes,
        certified,
        covers_phi: phi_small.map_or(false, |p| p <= t_cap),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msg::trees::decision_tree_polynomial;

    #[test]
    fn tree_witness_for_single_variable() {
        let rad = FiniteDistribution::rademacher();
        let o = find_msg_witness(&rad, 2, 1, 4, &SearchSpec::default()).unwrap();
        let w = o.witness.unwrap();
        assert_eq!(w.p, MultilinearPolynomial::var(1));
        assert_eq!(w.q, decision_tree_polynomial(2, None).unwrap());
        assert_eq!(output_distribution(&w.p, &rad).unwrap(), output_distribution(&w.q, &rad).unwrap());
    }

    #[test]
    fn linear_forms_have_no_gap_on_half_integer_grid() {
        let rad = FiniteDistribution::rademacher();
        let spec = SearchSpec { denominator: 2, max_numerator: 4, ..Default::default() };
        let o = find_msg_witness(&rad, 1, 1, 2, &spec).unwrap();
        assert!(o.witness.is_none());
        assert!(o.exhaustive);
    }

    #[test]
    fn depth_two_t3_has_no_grid_witness() {
        let rad = FiniteDistribution::rademacher();
        let o = find_msg_witness(&rad, 2, 1, 3, &SearchSpec::default()).unwrap();
        assert!(o.witness.is_none());
        assert!(o.exhaustive, "{}", o.note);
    }

    #[test]
    fn grid_finds_scaled_tree() {
        // Shortlist off: the grid alone reaches a scaled, relabelled depth-2 tree.
        let rad = FiniteDistribution::rademacher();
        let spec = SearchSpec { shortlist: false, max_work: 5e9, max_raw_patterns: 100_000, ..Default::default() };
        let o = find_msg_witness(&rad, 2, 1, 4, &spec).unwrap();
        let w = o.witness.expect("grid reaches the scaled tree");
        assert_eq!(w.t(), 4);
        assert_eq!(w.source, "grid");
        assert_eq!(output_distribution(&w.p, &rad).unwrap(), output_distribution(&w.q, &rad).unwrap());
    }

    #[test]
    fn vector_counts_match_enumeration() {
        let targets: BTreeSet<u64> = (1..=8u64).map(|k| k * k).collect();
        for len in 1..=4 {
            let n = magnitude_vectors(len, 8, &targets).len() as f64;
            assert_eq!(count_magnitude_vectors(len, 8, &targets), n);
        }
    }

    #[test]
    fn compute_msg_depth_two() {
        let rad = FiniteDistribution::rademacher();
        let r = compute_msg(&rad, 2, 1, 8, &SearchSpec::default()).unwrap();
        assert_eq!(r.best_t_with_witness, 4);
        assert!(!r.certified);
        assert!(!r.covers_phi);
        assert_eq!(r.phi_log2, Some(56));
    }

    #[test]
    fn compute_msg_linear() {
        let rad = FiniteDistribution::rademacher();
        let r = compute_msg(&rad, 1, 1, 8, &SearchSpec::default()).unwrap();
        assert_eq!(r.best_t_with_witness, 1);
        assert_eq!(r.witness.p, r.witness.q);
    }

    #[test]
    fn disjoint_sum_witness() {
        let rad = FiniteDistribution::rademacher();
        let o = find_msg_witness(&rad, 2, 2, 8, &SearchSpec { grid: false, ..Default::default() }).unwrap();
        let w = o.witness.unwrap();
        assert_eq!(w.s(), 2);
        assert_eq!(w.t(), 8);
    }
}
