//! Exact checks of the anti-concentration machinery at small scale: the noise
//! operator with negative rates, hypercontractive moment bounds, the
//! Chebyshev-extrema lemma, the large-deviation tail theorem and its
//! far-from-sparse corollary, and calibration of the unspecified constant.

use std::collections::BTreeSet;

use num_traits::{One, Signed, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coarse;
use crate::distribution::FiniteDistribution;
use crate::error::{Error, Result};
use crate::exactdist::{output_distribution, DiscreteRV};
use crate::poly::{Monomial, MultilinearPolynomial};
use crate::rational::{self, Rational};

/// ρ_min = λ / (4(1 − λ)).
pub fn rho_min(dist: &FiniteDistribution) -> Rational {
    let l = dist.lambda();
    l / (rational::int(4) * (Rational::one() - l))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseOperatorSpec {
    pub rho: Rational,
    pub dist: FiniteDistribution,
}

impl NoiseOperatorSpec {
    pub fn new(rho: Rational, dist: &FiniteDistribution) -> Result<Self> {
        let lo = -rho_min(dist);
        if rho < lo || rho > Rational::one() {
            return Err(Error::InvalidArgument(format!(
                "ρ = {} outside [{}, 1]",
                rational::format_rational(&rho),
                rational::format_rational(&lo)
            )));
        }
        let spec = NoiseOperatorSpec { rho, dist: dist.clone() };
        for i in 0..dist.support_size() {
            for j in 0..dist.support_size() {
                if spec.transition(i, j).is_negative() {
                    return Err(Error::InvalidArgument("noise transition has a negative probability".into()));
                }
            }
        }
        Ok(spec)
    }

    /// Pr[y = v_j | x = v_i] under N_ρ.
    pub fn transition(&self, i: usize, j: usize) -> Rational {
        let a = &self.dist.atoms()[j].1;
        let off = (Rational::one() - &self.rho) * a;
        if i == j {
            &self.rho + off
        } else {
            off
        }
    }
}

/// T_ρ f by scaling each coefficient by ρ^{|S|}.
pub fn noise_operator(f: &MultilinearPolynomial, spec: &NoiseOperatorSpec) -> Result<MultilinearPolynomial> {
    let terms = f.exact_terms()?;
    Ok(MultilinearPolynomial::from_terms(
        terms
            .into_iter()
            .map(|(m, c)| (m.clone(), c * rational::pow(&spec.rho, m.degree() as u32)))
            .filter(|(_, c)| !c.is_zero()),
    ))
}

/// T_ρ f(x) = E_{y ~ N_ρ(x)}[f(y)], by summing over every y in support^k.
/// `x` holds support indices for the active variables of `f`, in order.
pub fn noise_operator_by_definition(f: &MultilinearPolynomial, spec: &NoiseOperatorSpec, x: &[usize]) -> Result<Rational> {
    let vars = f.active_variables();
    if x.len() != vars.len() {
        return Err(Error::InvalidArgument("assignment length differs from active variable count".into()));
    }
    let values: Vec<Rational> = spec.dist.atoms().iter().map(|(v, _)| v.clone()).collect();
    let k = values.len();
    let mut y = vec![0usize; vars.len()];
    let mut acc = Rational::zero();
    loop {
        let mut pr = Rational::one();
        for (xi, yi) in x.iter().zip(&y) {
            pr *= spec.transition(*xi, *yi);
        }
        if !pr.is_zero() {
            let fy = f.eval_exact(|v| values[y[vars.binary_search(&v).unwrap()]].clone())?;
            acc += pr * fy;
        }
        let mut pos = 0;
        loop {
            if pos == y.len() {
                return Ok(acc);
            }
            y[pos] += 1;
            if y[pos] < k {
                break;
            }
            y[pos] = 0;
            pos += 1;
        }
    }
}

/// True iff the Fourier and definition routes agree exactly at every point
/// of support^k.
pub fn noise_routes_agree(f: &MultilinearPolynomial, spec: &NoiseOperatorSpec) -> Result<bool> {
    let g = noise_operator(f, spec)?;
    let vars = f.active_variables();
    let values: Vec<Rational> = spec.dist.atoms().iter().map(|(v, _)| v.clone()).collect();
    let k = values.len();
    let mut x = vec![0usize; vars.len()];
    loop {
        let direct = noise_operator_by_definition(f, spec, &x)?;
        let fourier = g.eval_exact(|v| match vars.binary_search(&v) {
            Ok(i) => values[x[i]].clone(),
            Err(_) => Rational::zero(),
        })?;
        if direct != fourier {
            return Ok(false);
        }
        let mut pos = 0;
        loop {
            if pos == x.len() {
                return Ok(true);
            }
            x[pos] += 1;
            if x[pos] < k {
                break;
            }
            x[pos] = 0;
            pos += 1;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypercontractiveCheck {
    pub q: f64,
    pub degree: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// Decided in exact arithmetic when q is an even integer.
    pub exact: bool,
    pub holds: bool,
}

/// E|f|^q ≤ (√(q−1)·λ^{1/q−1/2})^{dq} · E[f²]^{q/2}, with d = deg f.
pub fn hypercontractive_check(f: &MultilinearPolynomial, q: f64, dist: &FiniteDistribution) -> Result<HypercontractiveCheck> {
    if !(q > 2.0) {
        return Err(Error::InvalidArgument(format!("q must exceed 2, got {q}")));
    }
    let rv = output_distribution(f, dist)?;
    let d = f.degree();
    let m2 = rv.raw_moment(2);
    if q.fract() == 0.0 && (q as u64) % 2 == 0 {
        let qi = q as u32;
        let lhs = rv.raw_moment(qi);
        // (q−1)^{dq/2} · (1/λ)^{d(q/2−1)} · m₂^{q/2}
        let rhs = rational::pow(&rational::int(qi as i64 - 1), d as u32 * qi / 2)
            * rational::pow(&(Rational::one() / dist.lambda()), d as u32 * (qi / 2 - 1))
            * rational::pow(&m2, qi / 2);
        return Ok(HypercontractiveCheck {
            q,
            degree: d,
            lhs: rational::to_f64(&lhs),
            rhs: rational::to_f64(&rhs),
            exact: true,
            holds: lhs <= rhs,
        });
    }
    let lhs: f64 = rv.atoms().iter().map(|(v, p)| rational::to_f64(p) * rational::to_f64(v).abs().powf(q)).sum();
    let lam = rational::to_f64(dist.lambda());
    let rhs = ((q - 1.0).sqrt() * lam.powf(1.0 / q - 0.5)).powf(d as f64 * q) * rational::to_f64(&m2).powf(q / 2.0);
    Ok(HypercontractiveCheck { q, degree: d, lhs, rhs, exact: false, holds: lhs <= rhs * (1.0 + 1e-12) })
}

/// (ℓ−1)^{dℓ/2} · λ^{d − dℓ/2} · K^ℓ, the ceiling on m_ℓ(|p|) for ‖p‖ ≤ K.
pub fn noiseless_moment_bound(l: u32, d: usize, lambda: f64, k: f64) -> f64 {
    let (lf, df) = (l as f64, d as f64);
    (lf - 1.0).powf(df * lf / 2.0) * lambda.powf(df - df * lf / 2.0) * k.powi(l as i32)
}

/// m_ℓ(|p|) against the noiseless-moment ceiling with K = ‖p‖, exactly when
/// ℓ is even. Meaningful for ℓ ≥ 2.
pub fn noiseless_moment_check(p: &MultilinearPolynomial, l: u32, dist: &FiniteDistribution) -> Result<bool> {
    if l < 2 {
        return Err(Error::InvalidArgument("the ceiling is stated for ℓ ≥ 2".into()));
    }
    let rv = output_distribution(p, dist)?;
    let d = p.degree() as u32;
    let norm_sq = p.coeff_norm().squared.exact.ok_or(Error::NotExact)?;
    if l % 2 == 0 {
        // (ℓ−1)^{dℓ/2} λ^{−d(ℓ/2−1)} (‖p‖²)^{ℓ/2}
        let bound = rational::pow(&rational::int(l as i64 - 1), d * l / 2)
            * rational::pow(&(Rational::one() / dist.lambda()), d * (l / 2 - 1))
            * rational::pow(&norm_sq, l / 2);
        return Ok(rv.raw_moment(l) <= bound);
    }
    let lhs: f64 = rv.atoms().iter().map(|(v, pr)| rational::to_f64(pr) * rational::to_f64(v).abs().powi(l as i32)).sum();
    let bound = noiseless_moment_bound(l, d as usize, rational::to_f64(dist.lambda()), rational::to_f64(&norm_sq).sqrt());
    Ok(lhs <= bound * (1.0 + 1e-12))
}

/// Every value of an s-sparse p is at most ‖p‖·M^d·√s in magnitude; checked
/// exactly on the squared scale.
pub fn sparse_small_values_check(p: &MultilinearPolynomial, dist: &FiniteDistribution) -> Result<bool> {
    let rv = output_distribution(p, dist)?;
    let norm_sq = p.coeff_norm().squared.exact.ok_or(Error::NotExact)?;
    let bound_sq = norm_sq
        * rational::pow(dist.max_abs(), 2 * p.degree() as u32)
        * rational::int(p.sparsity() as i64);
    Ok(rv.atoms().iter().all(|(v, _)| v * v <= bound_sq))
}

/// The d+1 extrema cos(jπ/d) of the Chebyshev polynomial T_d on [−1, 1].
pub fn chebyshev_extrema(d: usize) -> Result<Vec<f64>> {
    if d < 1 {
        return Err(Error::InvalidArgument("degree must be at least 1".into()));
    }
    Ok((0..=d).map(|j| (j as f64 * std::f64::consts::PI / d as f64).cos()).collect())
}

/// For odd d, some extremum η_j has |p(η_j)| ≥ |a₁|/d. `coeffs` = a₀..a_d.
pub fn chebyshev_extrema_check(coeffs: &[f64]) -> Result<bool> {
    let d = coeffs.len().saturating_sub(1);
    if d % 2 == 0 {
        return Err(Error::InvalidArgument("the lemma is stated for odd degree".into()));
    }
    let eval = |x: f64| coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c);
    let target = coeffs[1].abs() / d as f64;
    Ok(chebyshev_extrema(d)?.into_iter().any(|x| eval(x).abs() >= target * (1.0 - 1e-12)))
}

/// A polynomial f = base / sqrt(divisor_sq), so unit-norm polynomials with
/// irrational scaling stay exact.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledPoly {
    pub base: MultilinearPolynomial,
    pub divisor_sq: Rational,
}

impl ScaledPoly {
    pub fn exact(f: MultilinearPolynomial) -> Self {
        ScaledPoly { base: f, divisor_sq: Rational::one() }
    }

    /// f / ‖f‖.
    pub fn unit(f: MultilinearPolynomial) -> Result<Self> {
        let n = f.coeff_norm().squared.exact.ok_or(Error::NotExact)?;
        if n.is_zero() {
            return Err(Error::ZeroPolynomial);
        }
        Ok(ScaledPoly { base: f, divisor_sq: n })
    }

    fn mass<'a>(&'a self, keep: impl Fn(&Monomial) -> bool + 'a) -> Result<Rational> {
        let mut acc = Rational::zero();
        for (m, c) in self.base.exact_terms()? {
            if keep(m) {
                acc += c * c;
            }
        }
        Ok(acc / &self.divisor_sq)
    }

    pub fn influence(&self, i: u32) -> Result<Rational> {
        self.mass(move |m| m.contains(i))
    }

    /// Pr[|f| ≥ t] from the exact law, given t².
    pub fn tail_sq(&self, t_sq: &Rational, dist: &FiniteDistribution) -> Result<Rational> {
        let rv = output_distribution(&self.base, dist)?;
        Ok(rv.prob_abs_at_least_sq(&(t_sq * &self.divisor_sq)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailTheoremReport {
    pub degree: usize,
    /// Σ_{S ⊄ J} f̂(S)².
    pub outside_mass: f64,
    pub cond1: bool,
    pub t_at_least_sqrt_delta: bool,
    pub max_influence_outside: f64,
    pub influence_cap: f64,
    pub cond2: bool,
    pub hypotheses_hold: bool,
    pub tail: f64,
    pub tail_exact: String,
    pub bound: f64,
    pub conclusion_holds: bool,
}

fn log_d(d: usize) -> f64 {
    (d.max(2) as f64).ln()
}

/// Checks the hypotheses and the conclusion Pr[|f| ≥ t] ≥ exp(−C t² d² log d / δ)
/// of the tail theorem, with log 2 in place of log d at d = 1.
pub fn verify_tail_theorem(
    f: &ScaledPoly,
    j: &[u32],
    delta: &Rational,
    t_sq: &Rational,
    c: f64,
    dist: &FiniteDistribution,
) -> Result<TailTheoremReport> {
    if !delta.is_positive() || !t_sq.is_positive() || !(c > 0.0) {
        return Err(Error::InvalidArgument("δ, t and C must be positive".into()));
    }
    let jset: BTreeSet<u32> = j.iter().copied().collect();
    let d = f.base.degree();
    let outside = f.mass(|m| m.vars().iter().any(|v| !jset.contains(v)))?;
    let cond1 = &outside >= delta;
    let t_ok = t_sq >= delta;
    // Inf_i ≤ δ² t^{-2} C^{-d}
    let c_r = rational::from_f64(c)?;
    let cap = delta * delta / t_sq / rational::pow(&c_r, d as u32);
    let mut max_inf = Rational::zero();
    for i in f.base.active_variables() {
        if !jset.contains(&i) {
            let inf = f.influence(i)?;
            if inf > max_inf {
                max_inf = inf;
            }
        }
    }
    let cond2 = t_ok && max_inf <= cap;
    let tail = f.tail_sq(t_sq, dist)?;
    let df = d as f64;
    let bound = (-c * rational::to_f64(t_sq) * df * df * log_d(d) / rational::to_f64(delta)).exp();
    let tf = rational::to_f64(&tail);
    Ok(TailTheoremReport {
        degree: d,
        outside_mass: rational::to_f64(&outside),
        cond1,
        t_at_least_sqrt_delta: t_ok,
        max_influence_outside: rational::to_f64(&max_inf),
        influence_cap: rational::to_f64(&cap),
        cond2,
        hypotheses_hold: cond1 && cond2,
        tail: tf,
        tail_exact: rational::format_rational(&tail),
        bound,
        conclusion_holds: tf >= bound,
    })
}

/// One instance of a calibration family.
#[derive(Clone, Debug, PartialEq)]
pub struct TailInstance {
    pub f: ScaledPoly,
    pub j: Vec<u32>,
    pub delta: Rational,
    pub t_sq: Rational,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Largest C at which every instance meets the influence hypothesis.
    pub hypothesis_max: f64,
    /// Smallest C at which every instance's exact tail meets the bound.
    pub conclusion_min: f64,
    /// hypothesis_max when the two are compatible; the largest C at which
    /// the whole family satisfies hypotheses and conclusion.
    pub max_feasible: Option<f64>,
    pub instances: usize,
}

/// Range of C over which the family satisfies the theorem's hypotheses and
/// conclusion. Both endpoints have closed forms given the exact tails.
pub fn calibrate(family: &[TailInstance], dist: &FiniteDistribution) -> Result<Calibration> {
    let mut hyp_max = f64::INFINITY;
    let mut conc_min: f64 = 0.0;
    for inst in family {
        let d = inst.f.base.degree().max(1);
        let mut max_inf = Rational::zero();
        let jset: BTreeSet<u32> = inst.j.iter().copied().collect();
        for i in inst.f.base.active_variables() {
            if !jset.contains(&i) {
                max_inf = max_inf.max(inst.f.influence(i)?);
            }
        }
        if !max_inf.is_zero() {
            // C^d ≤ δ² / (t² Inf)
            let r = rational::to_f64(&(&inst.delta * &inst.delta / &inst.t_sq / &max_inf));
            hyp_max = hyp_max.min(r.powf(1.0 / d as f64));
        }
        let tail = inst.f.tail_sq(&inst.t_sq, dist)?;
        if tail.is_zero() {
            conc_min = f64::INFINITY;
            continue;
        }
        if tail < Rational::one() {
            let df = d as f64;
            let denom = rational::to_f64(&inst.t_sq) * df * df * log_d(d) / rational::to_f64(&inst.delta);
            let ln_t = rational::log2_abs(&tail) * std::f64::consts::LN_2;
            conc_min = conc_min.max(-ln_t / denom);
        }
    }
    let max_feasible = (conc_min <= hyp_max && hyp_max.is_finite()).then_some(hyp_max);
    Ok(Calibration { hypothesis_max: hyp_max, conclusion_min: conc_min, max_feasible, instances: family.len() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FarSparseTailReport {
    pub far: bool,
    pub threshold: f64,
    pub tail: f64,
    pub tail_exact: String,
    pub q: f64,
    pub tail_meets_q: bool,
    pub kappa: f64,
    pub j: Vec<u32>,
    pub j_size_bound: f64,
    pub j_size_ok: bool,
    pub cond1: bool,
    pub cond2: bool,
}

/// For p ε-far from T-sparse: the exact Pr[|p| ≥ 2KM^d√s] against q, and
/// the influence set J = {i : Inf_i > κ}, κ = eK²/T^{1/d}, with the two
/// conditions it is meant to deliver (δ = ε/K, t = 2KM^d√s).
#[allow(clippy::too_many_arguments)]
pub fn far_sparse_tail_check(
    p: &MultilinearPolynomial,
    s: usize,
    t_sparsity: usize,
    eps: &Rational,
    k: f64,
    c: f64,
    dist: &FiniteDistribution,
) -> Result<FarSparseTailReport> {
    let far = p.is_far_from_sparse(t_sparsity, eps)?;
    let d = p.degree().max(1);
    let rv: DiscreteRV = output_distribution(p, dist)?;
    let m = rational::to_f64(dist.max_abs());
    let tail = coarse::exact_large_value_prob(&rv, s, k, dist, d)?;
    let ef = rational::to_f64(eps);
    let q = coarse::tail_prob_bound(k, m, s, d, ef, c);
    let kappa = std::f64::consts::E * k * k / (t_sparsity as f64).powf(1.0 / d as f64);
    let f = ScaledPoly::exact(p.clone());
    let mut j = Vec::new();
    let mut max_out: f64 = 0.0;
    for i in p.active_variables() {
        let inf = rational::to_f64(&f.influence(i)?);
        if inf > kappa {
            j.push(i);
        } else {
            max_out = max_out.max(inf);
        }
    }
    let j_size_bound = d as f64 * k * k / kappa;
    let jset: BTreeSet<u32> = j.iter().copied().collect();
    let outside = rational::to_f64(&f.mass(|mo| mo.vars().iter().any(|v| !jset.contains(v)))?);
    let delta = ef / k;
    let t = 2.0 * k * m.powi(d as i32) * (s as f64).sqrt();
    let cap = delta * delta / (t * t) / c.powi(d as i32);
    let tf = rational::to_f64(&tail);
    Ok(FarSparseTailReport {
        far,
        threshold: t,
        tail: tf,
        tail_exact: rational::format_rational(&tail),
        q,
        tail_meets_q: tf >= q,
        kappa,
        j_size_ok: j.len() as f64 <= j_size_bound + 1e-9,
        j,
        j_size_bound,
        cond1: outside >= delta * (1.0 - 1e-12),
        cond2: max_out <= cap * (1.0 + 1e-12),
    })
}

/// Exact Pr[f ≥ E f].
pub fn prob_at_least_mean(f: &MultilinearPolynomial, dist: &FiniteDistribution) -> Result<Rational> {
    let rv = output_distribution(f, dist)?;
    let mean = rv.raw_moment(1);
    Ok(rv.atoms().iter().filter(|(v, _)| v >= &mean).map(|(_, p)| p.clone()).sum())
}

/// Pr[|f| ≥ t‖f‖] ≤ λ^d exp(−(d/2e) λ t^{2/d}) at every t ≥ (2e/λ)^{d/2}.
/// The tail is a step function, so checking at each atom and at the
/// smallest admissible t suffices.
pub fn large_deviation_check(f: &MultilinearPolynomial, dist: &FiniteDistribution) -> Result<bool> {
    let rv = output_distribution(f, dist)?;
    let d = f.degree().max(1) as f64;
    let lam = rational::to_f64(dist.lambda());
    let norm = f.coeff_norm().value;
    if norm == 0.0 {
        return Ok(true);
    }
    let t_min = (2.0 * std::f64::consts::E / lam).sqrt().powf(d);
    let bound = |t: f64| lam.powf(d) * (-(d / (2.0 * std::f64::consts::E)) * lam * t.powf(2.0 / d)).exp();
    let atoms: Vec<(f64, f64)> =
        rv.atoms().iter().map(|(v, p)| (rational::to_f64(v).abs() / norm, rational::to_f64(p))).collect();
    let tail = |t: f64| atoms.iter().filter(|(a, _)| *a >= t * (1.0 - 1e-12)).map(|(_, p)| p).sum::<f64>();
    let mut points = vec![t_min];
    points.extend(atoms.iter().map(|(a, _)| *a).filter(|a| *a >= t_min));
    Ok(points.into_iter().all(|t| tail(t) <= bound(t) * (1.0 + 1e-12)))
}

/// E[f² 1{|f| > t₀}] with f scaled to unit norm and t₀ = (2e/λ)^d.
pub fn truncated_second_moment(f: &MultilinearPolynomial, dist: &FiniteDistribution) -> Result<f64> {
    let rv = output_distribution(f, dist)?;
    let d = f.degree().max(1) as f64;
    let lam = rational::to_f64(dist.lambda());
    let n2 = rational::to_f64(&f.coeff_norm().squared.exact.ok_or(Error::NotExact)?);
    let t0 = (2.0 * std::f64::consts::E / lam).powf(d);
    Ok(rv
        .atoms()
        .iter()
        .map(|(v, p)| (rational::to_f64(v).powi(2) / n2, rational::to_f64(p)))
        .filter(|(v2, _)| v2.sqrt() > t0)
        .map(|(v2, p)| v2 * p)
        .sum())
}

/// Random multilinear polynomial over x_1..x_n: `terms` distinct monomials of
/// degree ≤ d with coefficients a/den, a ∈ [−max_num, max_num] \ {0}.
pub fn random_multilinear<R: Rng + ?Sized>(
    rng: &mut R,
    n: u32,
    d: usize,
    terms: usize,
    max_num: i64,
    den: i64,
) -> MultilinearPolynomial {
    let monos = crate::msg::patterns::monomials_up_to(n, d);
    let terms = terms.min(monos.len());
    let mut picked = BTreeSet::new();
    while picked.len() < terms {
        picked.insert(rng.gen_range(0..monos.len()));
    }
    MultilinearPolynomial::from_terms(picked.into_iter().map(|i| {
        let mut a = 0;
        while a == 0 {
            a = rng.gen_range(-max_num..=max_num);
        }
        (monos[i].clone(), rational::frac(a, den))
    }))
}
