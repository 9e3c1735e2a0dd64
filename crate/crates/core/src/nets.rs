//! Finite nets over unit-norm sparse polynomials and over their output laws.
//!
//! A net member is a primitive integer vector `nums` attached to a canonical
//! sparsity pattern; it stands for the unit-norm polynomial
//! `Σ nums_i m_i / sqrt(norm_sq)`. Members are kept up to renaming of
//! variables, which leaves output laws unchanged under a product measure.
//!
//! The coefficient net over P (unit norm, s-sparse, degree d) is the set of
//! normalized τ-grid points with τ = ζ/(3√s). The net over P(ε) (members of
//! P with at most Υ terms that are ε-far from T-sparse) uses the finer grid
//! τ' = 2ζ/(25√Υ') with Υ' the term cap, keeps the far grid points, and
//! repairs near-boundary points by scaling up their tail.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coarse;
use crate::distribution::FiniteDistribution;
use crate::error::{Error, Result};
use crate::exactdist::{output_distribution_with_budget, DiscreteRV, DEFAULT_ENUMERATION_BUDGET};
use crate::msg::patterns::{enumerate_sparsity_patterns, SparsityPattern};
use crate::poly::{Monomial, MultilinearPolynomial};
use crate::rational::{self, Rational};

/// Fixed-point scale used when repairing a grid point.
const REPAIR_BITS: u32 = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Coefficient-norm bound K used for Υ.
    pub k_bound: f64,
    /// Tail constant C used for Υ.
    pub c_dfko: f64,
    /// Largest number of terms enumerated for P(ε) members; Υ is replaced
    /// by min(Υ, max_terms).
    pub max_terms: usize,
    /// Cap on grid candidates examined (per construction or per gap iteration).
    pub max_candidates: f64,
    pub max_members: usize,
    pub max_raw_patterns: u128,
    /// Cap on ζ = 2^{-t} halvings in the gap loop.
    pub max_iterations: u32,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            k_bound: 1.0,
            c_dfko: 1.0,
            max_terms: 4,
            max_candidates: 5e6,
            max_members: 1_000_000,
            max_raw_patterns: 200_000,
            max_iterations: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetMember {
    pub monomials: Vec<Monomial>,
    pub nums: Vec<i64>,
    pub norm_sq: i128,
}

impl NetMember {
    /// Reduces `nums` to a primitive vector; zero entries drop their monomial.
    pub fn new(monomials: Vec<Monomial>, nums: Vec<i64>) -> Result<Self> {
        let (monomials, nums): (Vec<Monomial>, Vec<i64>) =
            monomials.into_iter().zip(nums).filter(|(_, n)| *n != 0).unzip();
        if nums.is_empty() {
            return Err(Error::ZeroPolynomial);
        }
        let g = nums.iter().fold(0i64, |g, &n| g.gcd(&n));
        let nums: Vec<i64> = nums.iter().map(|n| n / g).collect();
        let norm_sq = nums.iter().map(|&n| (n as i128) * (n as i128)).sum();
        Ok(NetMember { monomials, nums, norm_sq })
    }

    pub fn len(&self) -> usize {
        self.nums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nums.is_empty()
    }

    /// The integer polynomial Σ nums_i m_i (not normalized).
    pub fn base(&self) -> MultilinearPolynomial {
        MultilinearPolynomial::from_terms(
            self.monomials.iter().cloned().zip(self.nums.iter().map(|&n| rational::int(n))),
        )
    }

    /// The unit-norm polynomial with float coefficients.
    pub fn polynomial(&self) -> MultilinearPolynomial {
        let scale = (self.norm_sq as f64).sqrt();
        MultilinearPolynomial::from_float_terms(
            self.monomials.iter().cloned().zip(self.nums.iter().map(|&n| n as f64 / scale)),
        )
    }

    pub fn coefficients_f64(&self) -> Vec<f64> {
        let scale = (self.norm_sq as f64).sqrt();
        self.nums.iter().map(|&n| n as f64 / scale).collect()
    }

    /// Squared distance of the normalized polynomial to the nearest T-sparse
    /// polynomial, as an exact ratio (tail, norm_sq).
    fn sparsity_tail(&self, t: usize) -> i128 {
        let mut sq: Vec<i128> = self.nums.iter().map(|&n| (n as i128) * (n as i128)).collect();
        sq.sort_unstable_by(|a, b| b.cmp(a));
        sq.iter().skip(t).sum()
    }

    /// True iff the normalized member is at least ε-far from T-sparse.
    pub fn is_far(&self, t: usize, eps: &Rational) -> bool {
        let tail = BigInt::from(self.sparsity_tail(t));
        tail * eps.denom() * eps.denom() >= eps.numer() * eps.numer() * BigInt::from(self.norm_sq)
    }

    /// Output law of the normalized member, in floats.
    pub fn float_law(&self, dist: &FiniteDistribution) -> Vec<(f64, f64)> {
        float_law(&self.monomials, &self.coefficients_f64(), dist)
    }

    /// Exact output law of the integer base polynomial.
    pub fn base_law(&self, dist: &FiniteDistribution) -> Result<DiscreteRV> {
        output_distribution_with_budget(&self.base(), dist, DEFAULT_ENUMERATION_BUDGET)
    }

    /// Raw moments 1..=k of the normalized member: m_j(base) / norm_sq^{j/2}.
    pub fn moments(&self, dist: &FiniteDistribution, k: u32) -> Result<Vec<f64>> {
        let law = self.base_law(dist)?;
        let n = (self.norm_sq as f64).sqrt();
        Ok((1..=k).map(|j| rational::to_f64(&law.raw_moment(j)) / n.powi(j as i32)).collect())
    }

    /// Coefficient distance to `q`, after normalizing this member.
    pub fn distance_to(&self, q: &MultilinearPolynomial) -> f64 {
        self.polynomial().sub(q).coeff_norm().value
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetKind {
    Sparse,
    FarFromSparse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyNet {
    pub kind: NetKind,
    pub d: usize,
    pub s: usize,
    /// T for the far net; unused for the sparse net.
    pub t: usize,
    pub zeta: f64,
    pub tau: f64,
    pub max_numerator: i64,
    /// Υ' = min(Υ, max_terms) for the far net.
    pub term_cap: usize,
    pub candidates: u64,
    pub repaired: u64,
    pub members: Vec<NetMember>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    kind: NetKind,
    d: usize,
    s: usize,
    t: usize,
    zeta: f64,
    tau: f64,
    max_numerator: i64,
    term_cap: usize,
    candidates: u64,
    repaired: u64,
    members: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    norm_sq: i128,
}

impl PolyNet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Writes one integer polynomial file per member plus `manifest.json`.
    /// Each member stands for its file's polynomial divided by sqrt(norm_sq).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.members.len());
        for (i, m) in self.members.iter().enumerate() {
            let file = format!("member_{i:07}.poly");
            fs::write(dir.join(&file), m.base().to_text())?;
            entries.push(ManifestEntry { file, norm_sq: m.norm_sq });
        }
        let manifest = Manifest {
            kind: self.kind,
            d: self.d,
            s: self.s,
            t: self.t,
            zeta: self.zeta,
            tau: self.tau,
            max_numerator: self.max_numerator,
            term_cap: self.term_cap,
            candidates: self.candidates,
            repaired: self.repaired,
            members: entries,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<PolyNet> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut members = Vec::with_capacity(m.members.len());
        for e in &m.members {
            let p = MultilinearPolynomial::parse_text(&fs::read_to_string(dir.join(&e.file))?)?;
            let mut monomials = Vec::new();
            let mut nums = Vec::new();
            for (mono, c) in p.exact_terms()? {
                if !c.is_integer() {
                    return Err(Error::Parse(format!("{}: non-integer coefficient", e.file)));
                }
                monomials.push(mono.clone());
                nums.push(c.to_integer().to_i64().ok_or_else(|| Error::Parse("coefficient too large".into()))?);
            }
            let member = NetMember::new(monomials, nums)?;
            if member.norm_sq != e.norm_sq {
                return Err(Error::Parse(format!("{}: norm mismatch", e.file)));
            }
            members.push(member);
        }
        Ok(PolyNet {
            kind: m.kind,
            d: m.d,
            s: m.s,
            t: m.t,
            zeta: m.zeta,
            tau: m.tau,
            max_numerator: m.max_numerator,
            term_cap: m.term_cap,
            candidates: m.candidates,
            repaired: m.repaired,
            members,
        })
    }
}

/// Output law of Σ c_i m_i under `dist`, merged at relative tolerance 1e-12.
pub fn float_law(monomials: &[Monomial], coeffs: &[f64], dist: &FiniteDistribution) -> Vec<(f64, f64)> {
    let mut vars: Vec<u32> = monomials.iter().flat_map(|m| m.vars().iter().copied()).collect();
    vars.sort_unstable();
    vars.dedup();
    let idx: Vec<Vec<usize>> = monomials
        .iter()
        .map(|m| m.vars().iter().map(|v| vars.binary_search(v).unwrap()).collect())
        .collect();
    let values = dist.values_f64();
    let probs = dist.probs_f64();
    let k = values.len();
    let n = vars.len();
    let mut out = Vec::with_capacity(k.pow(n as u32));
    let mut digits = vec![0usize; n];
    loop {
        let mut y = 0.0;
        for (ix, c) in idx.iter().zip(coeffs) {
            y += c * ix.iter().map(|&i| values[digits[i]]).product::<f64>();
        }
        let p: f64 = digits.iter().map(|&j| probs[j]).product();
        out.push((y, p));
        let mut pos = 0;
        loop {
            if pos == n {
                return merge_law(out);
            }
            digits[pos] += 1;
            if digits[pos] < k {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
    }
}

fn merge_law(mut atoms: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for (v, p) in atoms {
        match out.last_mut() {
            Some((u, q)) if (v - *u).abs() <= 1e-12 * (1.0 + u.abs()) => *q += p,
            _ => out.push((v, p)),
        }
    }
    out
}

/// W₁ between two float laws given as sorted (value, prob) lists.
pub fn wasserstein1_f64(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut acc = 0.0;
    loop {
        let m = ra.min(rb);
        acc += m * (a[i].0 - b[j].0).abs();
        ra -= m;
        rb -= m;
        // Absorb rounding residue so neither side stalls.
        if ra <= 1e-15 {
            i += 1;
            if i == a.len() {
                break;
            }
            ra = a[i].1;
        }
        if rb <= 1e-15 {
            j += 1;
            if j == b.len() {
                break;
            }
            rb = b[j].1;
        }
    }
    acc
}

/// Raw moments 1..=k of a float law.
pub fn float_moments(law: &[(f64, f64)], k: u32) -> Vec<f64> {
    (1..=k).map(|j| law.iter().map(|(v, p)| p * v.powi(j as i32)).sum()).collect()
}

/// Euclidean distance between two moment vectors.
pub fn moment_vector_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Nonzero integer vectors of length r whose largest |entry| is exactly m.
fn shell_vectors(r: usize, m: i64) -> Vec<Vec<i64>> {
    fn rec(pos: usize, r: usize, m: i64, hit: bool, cur: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if pos == r {
            out.push(cur.clone());
            return;
        }
        let lo = if pos + 1 == r && !hit { m } else { 1 };
        for a in lo..=m {
            for v in [a, -a] {
                cur.push(v);
                rec(pos + 1, r, m, hit || a == m, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(0, r, m, false, &mut Vec::with_capacity(r), &mut out);
    out
}

fn is_primitive(v: &[i64]) -> bool {
    v.iter().fold(0i64, |g, &n| g.gcd(&n)) == 1
}

fn canonical_patterns(d: usize, r_lo: usize, r_hi: usize, cap: u128) -> Result<Vec<SparsityPattern>> {
    let mut out = Vec::new();
    for r in r_lo..=r_hi {
        out.extend(enumerate_sparsity_patterns(d, r, cap)?.patterns);
    }
    Ok(out)
}

fn grid_count(patterns: &[SparsityPattern], m: i64) -> f64 {
    // Length-1 primitive vectors are ±1 whatever the grid size.
    patterns.iter().map(|p| if p.len() == 1 { 2.0 } else { (2.0 * m as f64).powi(p.len() as i32) }).sum()
}

/// Largest shell holding a primitive vector of length r.
fn last_shell(r: usize, m: i64) -> i64 {
    if r == 1 {
        1
    } else {
        m
    }
}

fn sparse_tau(zeta: f64, s: usize) -> f64 {
    zeta / (3.0 * (s as f64).sqrt())
}

fn far_tau(zeta: f64, term_cap: usize) -> f64 {
    2.0 * zeta / (25.0 * (term_cap as f64).sqrt())
}

fn max_numerator(tau: f64) -> i64 {
    (2.0 / tau).floor().max(1.0) as i64
}

/// Υ' = min(Υ, max_terms), with Υ from the tail bound for the distribution.
pub fn far_term_cap(dist: &FiniteDistribution, d: usize, s: usize, eps: f64, cfg: &NetConfig) -> usize {
    let m = rational::to_f64(dist.max_abs());
    match coarse::upsilon(cfg.k_bound, s, d, eps, cfg.c_dfko, m) {
        Ok(u) => (u as usize).min(cfg.max_terms),
        Err(_) => cfg.max_terms,
    }
}

fn check_params(d: usize, s: usize, zeta: f64) -> Result<()> {
    if d == 0 || s == 0 {
        return Err(Error::InvalidArgument("d and s must be positive".into()));
    }
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(Error::InvalidArgument(format!("net scale ζ = {zeta} must lie in (0, 1]")));
    }
    Ok(())
}

/// ζ-net over unit-norm s-sparse degree-d polynomials, up to renaming.
pub fn construct_p_net(d: usize, s: usize, zeta: f64, cfg: &NetConfig) -> Result<PolyNet> {
    check_params(d, s, zeta)?;
    let tau = sparse_tau(zeta, s);
    let m = max_numerator(tau);
    let patterns = canonical_patterns(d, 1, s, cfg.max_raw_patterns)?;
    let count = grid_count(&patterns, m);
    if count > cfg.max_candidates {
        return Err(Error::budget("nets", "sparse net grid", count, cfg.max_candidates));
    }
    let mut members = Vec::new();
    for p in &patterns {
        for shell in 1..=last_shell(p.len(), m) {
            for v in shell_vectors(p.len(), shell) {
                if is_primitive(&v) {
                    members.push(NetMember::new(p.monomials.clone(), v)?);
                }
            }
        }
        if members.len() > cfg.max_members {
            return Err(Error::budget("nets", "sparse net members", members.len() as f64, cfg.max_members as f64));
        }
    }
    Ok(PolyNet {
        kind: NetKind::Sparse,
        d,
        s,
        t: 0,
        zeta,
        tau,
        max_numerator: m,
        term_cap: s,
        candidates: count as u64,
        repaired: 0,
        members,
    })
}

/// Result of examining one far-net grid point.
enum FarCandidate {
    Far(NetMember),
    Repaired(NetMember),
    Dropped,
}

/// Scales the tail of a non-far grid point until it is ε-far, and keeps the
/// result if it moved by at most ζ/2.
fn repair(grid: &NetMember, t: usize, eps: &Rational, zeta: f64) -> Option<NetMember> {
    let r = grid.len();
    if r <= t {
        return None;
    }
    // Top-T positions by magnitude, ties to the earlier monomial.
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| grid.nums[b].abs().cmp(&grid.nums[a].abs()).then(a.cmp(&b)));
    let top: HashSet<usize> = order[..t].iter().copied().collect();
    let top_sq: i128 = top.iter().map(|&i| (grid.nums[i] as i128).pow(2)).sum();
    let tail_sq: i128 = grid.norm_sq - top_sq;
    if tail_sq == 0 {
        return None;
    }
    // γ = g / 2^B with γ² (1 − ε²) tail ≥ ε² top.
    let (a, b) = (eps.numer(), eps.denom());
    let lhs_unit = (b * b - a * a) * BigInt::from(tail_sq);
    if !lhs_unit.is_positive() {
        return None;
    }
    let rhs = a * a * BigInt::from(top_sq) << (2 * REPAIR_BITS);
    let target = rational::to_f64(&Rational::new(rhs.clone(), lhs_unit.clone()));
    let mut g = BigInt::from(target.sqrt().ceil() as i64);
    while &g * &g * &lhs_unit < rhs {
        g += 1;
    }
    let g = g.to_i64()?;
    let unit = 1i64 << REPAIR_BITS;
    let nums: Vec<i64> = (0..r)
        .map(|i| if top.contains(&i) { grid.nums[i].checked_mul(unit) } else { grid.nums[i].checked_mul(g) })
        .collect::<Option<_>>()?;
    let cand = NetMember::new(grid.monomials.clone(), nums).ok()?;
    if !cand.is_far(t, eps) {
        return None;
    }
    let (x, y) = (grid.coefficients_f64(), cand.coefficients_f64());
    let dist = x.iter().zip(&y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
    (dist <= zeta / 2.0).then_some(cand)
}

fn far_candidate(pattern: &SparsityPattern, v: Vec<i64>, t: usize, eps: &Rational, zeta: f64) -> FarCandidate {
    let Ok(member) = NetMember::new(pattern.monomials.clone(), v) else {
        return FarCandidate::Dropped;
    };
    if member.is_far(t, eps) {
        FarCandidate::Far(member)
    } else {
        match repair(&member, t, eps, zeta) {
            Some(m) => FarCandidate::Repaired(m),
            None => FarCandidate::Dropped,
        }
    }
}

struct FarGrid {
    patterns: Vec<SparsityPattern>,
    tau: f64,
    m: i64,
    term_cap: usize,
}

fn far_grid(
    dist: &FiniteDistribution,
    d: usize,
    s: usize,
    t: usize,
    eps: &Rational,
    zeta: f64,
    cfg: &NetConfig,
) -> Result<FarGrid> {
    check_params(d, s, zeta)?;
    let ef = rational::to_f64(eps);
    if !(ef > 0.0 && ef < 1.0) {
        return Err(Error::InvalidArgument("ε must lie in (0, 1)".into()));
    }
    let term_cap = far_term_cap(dist, d, s, ef, cfg);
    let tau = far_tau(zeta, term_cap);
    let m = max_numerator(tau);
    let patterns = if term_cap > t { canonical_patterns(d, t + 1, term_cap, cfg.max_raw_patterns)? } else { Vec::new() };
    Ok(FarGrid { patterns, tau, m, term_cap })
}

/// All far-net members whose grid point lies in shell m, in a deterministic order.
fn far_shell(grid: &FarGrid, shell: i64, t: usize, eps: &Rational, zeta: f64) -> (Vec<(NetMember, bool)>, u64) {
    let per: Vec<(Vec<(NetMember, bool)>, u64)> = grid
        .patterns
        .par_iter()
        .map(|p| {
            let mut out = Vec::new();
            let mut n = 0u64;
            for v in shell_vectors(p.len(), shell) {
                if !is_primitive(&v) {
                    continue;
                }
                n += 1;
                match far_candidate(p, v, t, eps, zeta) {
                    FarCandidate::Far(m) => out.push((m, false)),
                    FarCandidate::Repaired(m) => out.push((m, true)),
                    FarCandidate::Dropped => {}
                }
            }
            (out, n)
        })
        .collect();
    let mut members = Vec::new();
    let mut n = 0;
    for (m, c) in per {
        members.extend(m);
        n += c;
    }
    (members, n)
}

/// ζ-net over P(ε): unit-norm degree-d polynomials with at most Υ' terms that
/// are ε-far from T-sparse, up to renaming.
pub fn construct_peps_net(
    dist: &FiniteDistribution,
    d: usize,
    s: usize,
    t: usize,
    eps: &Rational,
    zeta: f64,
    cfg: &NetConfig,
) -> Result<PolyNet> {
    let grid = far_grid(dist, d, s, t, eps, zeta, cfg)?;
    let count = grid_count(&grid.patterns, grid.m);
    if count > cfg.max_candidates {
        return Err(Error::budget("nets", "far net grid", count, cfg.max_candidates));
    }
    let mut seen = HashSet::new();
    let mut members = Vec::new();
    let mut candidates = 0;
    let mut repaired = 0;
    for shell in 1..=grid.m {
        let (batch, n) = far_shell(&grid, shell, t, eps, zeta);
        candidates += n;
        for (m, rep) in batch {
            if seen.insert((m.monomials.clone(), m.nums.clone())) {
                repaired += rep as u64;
                members.push(m);
            }
        }
        if members.len() > cfg.max_members {
            return Err(Error::budget("nets", "far net members", members.len() as f64, cfg.max_members as f64));
        }
    }
    Ok(PolyNet {
        kind: NetKind::FarFromSparse,
        d,
        s,
        t,
        zeta,
        tau: grid.tau,
        max_numerator: grid.m,
        term_cap: grid.term_cap,
        candidates,
        repaired,
        members,
    })
}

/// Both coefficient nets at scale ζ.
pub fn construct_poly_nets(
    dist: &FiniteDistribution,
    d: usize,
    s: usize,
    t: usize,
    eps: &Rational,
    zeta: f64,
    cfg: &NetConfig,
) -> Result<(PolyNet, PolyNet)> {
    Ok((construct_p_net(d, s, zeta, cfg)?, construct_peps_net(dist, d, s, t, eps, zeta, cfg)?))
}

/// ξ_{k,d,X}: the factor by which coefficient distance controls the distance
/// between the first k moments of two unit-norm degree-d polynomials.
///
/// Built from hypercontractive bounds on E[q₁^a q₂^b] with E[q₁²] ≤ 1 and
/// E[q₂²] ≤ 4 (q₂ a sum of two unit-norm polynomials).
pub fn xi_constant(k: u32, d: usize, lambda: f64) -> f64 {
    let h = |c: u32, second: f64| -> f64 {
        match c {
            0 => 1.0,
            1 => second,
            _ => {
                let cf = c as f64;
                let base = (2.0 * cf - 1.0).sqrt() * lambda.powf(1.0 / (2.0 * cf) - 0.5);
                base.powf(2.0 * d as f64 * cf) * second.powf(cf)
            }
        }
    };
    let mut total = 1.0;
    if k >= 2 {
        total += 9.0;
    }
    for l in 3..=k {
        let mut b2 = 0.0;
        for i in 0..l {
            for j in 0..l {
                b2 += h(2 * l - 2 - i - j, 1.0).sqrt() * h(i + j, 4.0).sqrt();
            }
        }
        total += b2;
    }
    total.sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RvNetMember {
    pub member: NetMember,
    /// Raw moments 1..=k of the member's output law.
    pub moments: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RvNet {
    pub k: u32,
    pub zeta_mom: f64,
    pub zeta_coeff: f64,
    pub xi: f64,
    pub members: Vec<RvNetMember>,
}

impl RvNet {
    /// Member minimizing Mom_k to `moments`, with that distance.
    pub fn nearest(&self, moments: &[f64]) -> Option<(&RvNetMember, f64)> {
        self.members
            .iter()
            .map(|m| (m, moment_vector_distance(&m.moments, moments)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

fn rv_net(net: PolyNet, dist: &FiniteDistribution, k: u32, zeta_mom: f64, xi: f64) -> Result<RvNet> {
    let zeta_coeff = net.zeta;
    let members = net
        .members
        .into_par_iter()
        .map(|m| Ok(RvNetMember { moments: m.moments(dist, k)?, member: m }))
        .collect::<Result<Vec<_>>>()?;
    Ok(RvNet { k, zeta_mom, zeta_coeff, xi, members })
}

fn coefficient_scale(zeta_mom: f64, k: u32, d: usize, dist: &FiniteDistribution) -> (f64, f64) {
    let xi = xi_constant(k, d, rational::to_f64(dist.lambda()));
    ((zeta_mom / xi).min(1.0), xi)
}

/// ζ_Mom-net (in Mom_k) over the output laws of P: the coefficient net at
/// scale ζ_Mom/ξ with each member's first k moments.
pub fn construct_rv_net_p(
    dist: &FiniteDistribution,
    d: usize,
    s: usize,
    zeta_mom: f64,
    k: u32,
    cfg: &NetConfig,
) -> Result<RvNet> {
    let (zc, xi) = coefficient_scale(zeta_mom, k, d, dist);
    rv_net(construct_p_net(d, s, zc, cfg)?, dist, k, zeta_mom, xi)
}

/// Moment nets over the laws of P and of P(ε).
#[allow(clippy::too_many_arguments)]
pub fn construct_rv_nets(
    dist: &FiniteDistribution,
    d: usize,
    s: usize,
    t: usize,
    eps: &Rational,
    zeta_mom: f64,
    k: u32,
    cfg: &NetConfig,
) -> Result<(RvNet, RvNet)> {
    let (zc, xi) = coefficient_scale(zeta_mom, k, d, dist);
    let (p, f) = construct_poly_nets(dist, d, s, t, eps, zc, cfg)?;
    Ok((rv_net(p, dist, k, zeta_mom, xi)?, rv_net(f, dist, k, zeta_mom, xi)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    /// Net estimate c with c_ε ≤ c ≤ 2c_ε.
    pub c: f64,
    pub zeta: f64,
    pub iterations: u32,
    pub p_net_size: usize,
    pub far_net_size: usize,
    pub candidates: u64,
    /// The pair attaining c: (sparse member, far member).
    pub closest: Option<(NetMember, NetMember)>,
}

/// Estimates c_ε = inf W₁(ψ(q₁), ψ(q₂)) over q₁ ∈ P, q₂ ∈ P(ε) by halving ζ
/// until the net minimum c satisfies 4ζ ≤ c.
///
/// An iteration stops as soon as one pair is closer than 4ζ. If the nets
/// contain two members with the same law no ζ can succeed, and the loop
/// runs to the iteration cap.
pub fn estimate_wasserstein_gap(
    dist: &FiniteDistribution,
    d: usize,
    s: usize,
    t: usize,
    eps: &Rational,
    cfg: &NetConfig,
) -> Result<GapEstimate> {
    let mut last_min = f64::INFINITY;
    let mut work = 0u64;
    for it in 1..=cfg.max_iterations {
        let zeta = (-(it as f64)).exp2();
        let pnet = construct_p_net(d, s, zeta, cfg)?;
        let plaws: Vec<Vec<(f64, f64)>> = pnet.members.iter().map(|m| m.float_law(dist)).collect();
        let grid = far_grid(dist, d, s, t, eps, zeta, cfg)?;
        if grid.patterns.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no polynomial with at most {} terms is ε-far from {t}-sparse; raise max_terms",
                grid.term_cap
            )));
        }
        let mut best: Option<(f64, usize, NetMember)> = None;
        let mut far_count = 0usize;
        let mut aborted = false;
        for shell in 1..=grid.m {
            let (batch, n) = far_shell(&grid, shell, t, eps, zeta);
            work += n * pnet.len() as u64;
            if work as f64 > cfg.max_candidates * pnet.len().max(1) as f64 {
                return Err(Error::budget(
                    "nets",
                    "gap estimation pairs",
                    work as f64,
                    cfg.max_candidates * pnet.len().max(1) as f64,
                ));
            }
            far_count += batch.len();
            let scored: Vec<(f64, usize)> = batch
                .par_iter()
                .map(|(m, _)| {
                    let law = m.float_law(dist);
                    plaws
                        .iter()
                        .enumerate()
                        .map(|(i, pl)| (wasserstein1_f64(pl, &law), i))
                        .min_by(|a, b| a.0.total_cmp(&b.0))
                        .unwrap_or((f64::INFINITY, 0))
                })
                .collect();
            for ((w, i), (m, _)) in scored.into_iter().zip(batch) {
                if best.as_ref().map_or(true, |b| w < b.0) {
                    best = Some((w, i, m));
                }
            }
            if best.as_ref().map_or(false, |b| b.0 < 4.0 * zeta) {
                aborted = true;
                break;
            }
        }
        let Some((c, pi, fm)) = best else {
            return Err(Error::InvalidArgument("far net is empty".into()));
        };
        last_min = last_min.min(c);
        if !aborted {
            return Ok(GapEstimate {
                c,
                zeta,
                iterations: it,
                p_net_size: pnet.len(),
                far_net_size: far_count,
                candidates: work,
                closest: Some((pnet.members[pi].clone(), fm)),
            });
        }
    }
    Err(Error::IterationCap {
        module: "nets",
        cap: cfg.max_iterations,
        detail: format!(
            "smallest net distance seen {last_min:.3e} never reached 4ζ; the gap is near zero, which suggests T is below the moment-sparsity gap"
        ),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KvCheck {
    pub w1: f64,
    pub mom: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Checks W₁ ≤ C/k + C'·3^k·Mom_k for two laws after rescaling both into
/// [−1, 1] by their common largest |value|.
pub fn kong_valiant_check(a: &[(f64, f64)], b: &[(f64, f64)], k: u32, c: f64, c_prime: f64) -> KvCheck {
    let l = a.iter().chain(b).map(|(v, _)| v.abs()).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let ra: Vec<(f64, f64)> = a.iter().map(|(v, p)| (v / l, *p)).collect();
    let rb: Vec<(f64, f64)> = b.iter().map(|(v, p)| (v / l, *p)).collect();
    let w1 = wasserstein1_f64(&ra, &rb);
    let mom = moment_vector_distance(&float_moments(&ra, k), &float_moments(&rb, k));
    let bound = c / k as f64 + c_prime * 3f64.powi(k as i32) * mom;
    KvCheck { w1, mom, bound, holds: w1 <= bound + 1e-12 }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Truncation {
    /// The kept terms rescaled to unit norm (float coefficients).
    pub q_prime: MultilinearPolynomial,
    /// ‖q/‖q‖ − q'‖.
    pub distance: f64,
    /// Exact squared distance of q' to the nearest T-sparse polynomial.
    pub far_sq: Rational,
}

/// Keeps the `keep` largest terms of `q` (exact coefficients) and rescales
/// them to unit norm.
pub fn truncate_and_rescale(q: &MultilinearPolynomial, keep: usize, t: usize) -> Result<Truncation> {
    let kept = q.truncate_to(keep);
    let top = kept.coeff_norm().squared.exact.ok_or(Error::NotExact)?;
    let total = q.coeff_norm().squared.exact.ok_or(Error::NotExact)?;
    if top.is_zero() {
        return Err(Error::ZeroPolynomial);
    }
    let far_sq = kept.distance_to_sparsity(t)?.squared.exact.ok_or(Error::NotExact)?;
    let (topf, totf) = (rational::to_f64(&top), rational::to_f64(&total));
    let tail = (totf - topf).max(0.0);
    let distance = (topf * (1.0 / totf.sqrt() - 1.0 / topf.sqrt()).powi(2) + tail / totf).sqrt();
    Ok(Truncation { q_prime: kept.scale_f64(1.0 / topf.sqrt()), distance, far_sq })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::frac;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rad() -> FiniteDistribution {
        FiniteDistribution::rademacher()
    }

    #[test]
    fn shells_partition_the_box() {
        for r in 1..=3 {
            let total: usize = (1..=4).map(|m| shell_vectors(r, m).len()).sum();
            assert_eq!(total, 8usize.pow(r as u32));
        }
    }

    #[test]
    fn members_have_exact_norm() {
        let net = construct_p_net(2, 2, 0.5, &NetConfig::default()).unwrap();
        for m in &net.members {
            let sq = m.base().coeff_norm().squared.exact.unwrap();
            assert_eq!(sq, rational::int(m.norm_sq as i64));
        }
    }

    #[test]
    fn sparse_net_covers_random_members() {
        let (d, s, zeta) = (2, 2, 0.25);
        let net = construct_p_net(d, s, zeta, &NetConfig::default()).unwrap();
        let keys: HashSet<(Vec<Monomial>, Vec<i64>)> =
            net.members.iter().map(|m| (m.monomials.clone(), m.nums.clone())).collect();
        let monos = crate::msg::patterns::monomials_up_to((d * s) as u32, d);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let mut picked: Vec<Monomial> = Vec::new();
            while picked.len() < s {
                let m = monos[rng.gen_range(0..monos.len())].clone();
                if !picked.contains(&m) {
                    picked.push(m);
                }
            }
            let raw: Vec<f64> = (0..s).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            let coeffs: Vec<f64> = raw.iter().map(|x| x / n).collect();
            let q = MultilinearPolynomial::from_float_terms(picked.iter().cloned().zip(coeffs.iter().copied()));
            // Round to the τ-grid and normalize.
            let ints: Vec<i64> = coeffs.iter().map(|c| (c / net.tau).round() as i64).collect();
            let z = NetMember::new(picked.clone(), ints).unwrap();
            assert!(z.distance_to(&q) <= zeta, "rounding moved too far");
            // Canonical relabelling of z must be a member.
            let pat = SparsityPattern { monomials: z.monomials.clone() };
            let (canon, map) = pat.canonical_with_map();
            let mut pairs: Vec<(Monomial, i64)> =
                z.monomials.iter().map(|m| m.map_vars(|v| map[&v])).zip(z.nums.iter().copied()).collect();
            pairs.sort();
            let ms: Vec<Monomial> = pairs.iter().map(|p| p.0.clone()).collect();
            assert_eq!(ms, canon.monomials);
            let ns: Vec<i64> = pairs.iter().map(|p| p.1).collect();
            assert!(keys.contains(&(ms, ns)));
        }
    }

    #[test]
    fn xi_small_orders() {
        assert_eq!(xi_constant(1, 1, 0.5), 1.0);
        assert!((xi_constant(2, 3, 0.5) - 10f64.sqrt()).abs() < 1e-12);
        assert!(xi_constant(4, 1, 0.5) > xi_constant(3, 1, 0.5));
    }

    #[test]
    fn far_members_are_far() {
        let eps = frac(1, 2);
        let cfg = NetConfig { max_terms: 2, ..NetConfig::default() };
        let net = construct_peps_net(&rad(), 1, 1, 1, &eps, 0.25, &cfg).unwrap();
        assert!(net.repaired > 0);
        for m in &net.members {
            assert!(m.is_far(1, &eps));
            let exact = m.base().is_far_from_sparse(1, &eps).unwrap();
            assert!(exact);
        }
    }

    #[test]
    fn contraction_on_net_pairs() {
        let net = construct_p_net(1, 2, 0.5, &NetConfig::default()).unwrap();
        let laws: Vec<_> = net.members.iter().map(|m| m.float_law(&rad())).collect();
        for i in 0..net.len() {
            for j in 0..net.len() {
                let (a, b) = (&net.members[i], &net.members[j]);
                if a.monomials != b.monomials {
                    continue;
                }
                let w = wasserstein1_f64(&laws[i], &laws[j]);
                let dist = a.distance_to(&b.polynomial());
                assert!(w <= dist + 1e-9);
            }
        }
    }

    #[test]
    fn float_w1_matches_exact() {
        let p = MultilinearPolynomial::from_pairs(&[(frac(1, 2), &[]), (frac(3, 4), &[1, 2])]).unwrap();
        let q = MultilinearPolynomial::from_pairs(&[(frac(1, 1), &[1]), (frac(1, 3), &[2])]).unwrap();
        let exact = crate::wasserstein1(
            &crate::output_distribution(&p, &rad()).unwrap(),
            &crate::output_distribution(&q, &rad()).unwrap(),
        );
        let monos_p: Vec<Monomial> = p.terms().map(|t| t.0.clone()).collect();
        let cp: Vec<f64> = p.terms().map(|t| t.1.value()).collect();
        let monos_q: Vec<Monomial> = q.terms().map(|t| t.0.clone()).collect();
        let cq: Vec<f64> = q.terms().map(|t| t.1.value()).collect();
        let w = wasserstein1_f64(&float_law(&monos_p, &cp, &rad()), &float_law(&monos_q, &cq, &rad()));
        assert!((w - rational::to_f64(&exact)).abs() < 1e-12);
    }

    /// Dense-angle oracle for the gap with d = 1, s = T = 1, ε = 1/2 and two
    /// terms: far members are a·u + b·v with min(a², b²) ≥ 1/4.
    fn toy_gap_oracle() -> f64 {
        let sparse: Vec<MultilinearPolynomial> = vec![
            MultilinearPolynomial::from_float_terms([(Monomial::var(1), 1.0)]),
            MultilinearPolynomial::from_float_terms([(Monomial::var(1), -1.0)]),
            MultilinearPolynomial::from_float_terms([(Monomial::constant(), 1.0)]),
            MultilinearPolynomial::from_float_terms([(Monomial::constant(), -1.0)]),
        ];
        let law = |p: &MultilinearPolynomial| {
            let ms: Vec<Monomial> = p.terms().map(|t| t.0.clone()).collect();
            let cs: Vec<f64> = p.terms().map(|t| t.1.value()).collect();
            float_law(&ms, &cs, &rad())
        };
        let slaws: Vec<_> = sparse.iter().map(law).collect();
        let mut best = f64::INFINITY;
        let n = 20000;
        for pat in [[Monomial::constant(), Monomial::var(1)], [Monomial::var(1), Monomial::var(2)]] {
            for i in 0..n {
                let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                let (a, b) = (th.cos(), th.sin());
                if a.powi(2).min(b.powi(2)) < 0.25 {
                    continue;
                }
                let p = MultilinearPolynomial::from_float_terms([(pat[0].clone(), a), (pat[1].clone(), b)]);
                let l = law(&p);
                for sl in &slaws {
                    best = best.min(wasserstein1_f64(sl, &l));
                }
            }
        }
        best
    }

    #[test]
    fn toy_gap_is_bracketed() {
        let oracle = toy_gap_oracle();
        assert!((oracle - 0.5).abs() < 1e-3);
        let cfg = NetConfig { max_terms: 2, ..NetConfig::default() };
        let g = estimate_wasserstein_gap(&rad(), 1, 1, 1, &frac(1, 2), &cfg).unwrap();
        assert!(4.0 * g.zeta <= g.c);
        // The angle grid approaches the infimum from above, within its step.
        assert!(g.c / 2.0 <= oracle && oracle <= g.c + 1e-3, "c = {}", g.c);
    }

    #[test]
    fn zero_gap_hits_iteration_cap() {
        // The depth-2 tree is 1/2-far from 3-sparse and has the law of x1.
        let cfg = NetConfig { max_terms: 4, max_iterations: 3, ..NetConfig::default() };
        let err = estimate_wasserstein_gap(&rad(), 2, 1, 3, &frac(1, 2), &cfg).unwrap_err();
        assert!(matches!(err, Error::IterationCap { .. }), "{err:?}");
    }

    #[test]
    fn truncation_perturbation_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (keep, t) = (3usize, 1usize);
        let eps = 0.6f64;
        let eps_p = 0.1f64;
        let mut checked = 0;
        for _ in 0..20000 {
            let n = 6;
            let coeffs: Vec<Rational> = (0..n).map(|_| frac(rng.gen_range(-20..=20), 20)).collect();
            let q = MultilinearPolynomial::from_terms(
                (1..=n as u32).map(Monomial::var).zip(coeffs.iter().cloned()),
            );
            if q.is_zero() {
                continue;
            }
            let total = rational::to_f64(&q.coeff_norm().squared.exact.unwrap());
            let tail = total - rational::to_f64(&q.top_mass(keep).exact.unwrap());
            let far = q.distance_to_sparsity(t).unwrap().value;
            if tail / total > eps_p * eps_p || far < eps {
                continue;
            }
            checked += 1;
            let tr = truncate_and_rescale(&q, keep, t).unwrap();
            assert!(tr.distance <= 2f64.sqrt() * eps_p + 1e-12);
            assert!(rational::to_f64(&tr.far_sq) >= eps * eps / 4.0);
        }
        assert!(checked > 20, "only {checked} draws qualified");
    }

    #[test]
    fn kong_valiant_holds_on_small_laws() {
        let a = vec![(-1.0, 0.5), (1.0, 0.5)];
        let b = vec![(-0.5, 0.25), (0.0, 0.5), (0.5, 0.25)];
        let r = kong_valiant_check(&a, &b, 4, 1.0, 1.0);
        assert!(r.holds);
        assert!(r.w1 > 0.0 && r.mom > 0.0);
    }

    #[test]
    fn save_and_load_roundtrip() {
        let net = construct_p_net(1, 2, 0.5, &NetConfig::default()).unwrap();
        let dir = std::env::temp_dir().join(format!("polysparse-net-{}", std::process::id()));
        net.save(&dir).unwrap();
        let back = PolyNet::load(&dir).unwrap();
        fs::remove_dir_all(&dir).ok();
        assert_eq!(back.members, net.members);
        assert_eq!(back.kind, NetKind::Sparse);
    }
}
