//! Coarse tester: s-sparse versus ε-far from Υ-sparse, by comparing one high
//! even moment of the clean label against the ceiling that every s-sparse
//! polynomial obeys.

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::distribution::FiniteDistribution;
use crate::error::{Error, Result};
use crate::exactdist::DiscreteRV;
use crate::momest::{estimate_clean_moments, EstimatorConfig, Oracle};
use crate::rational::{self, Rational};
use crate::report::{PhaseTrace, TesterReport, Verdict};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseConfig {
    pub s: usize,
    pub d: usize,
    pub eps: f64,
    /// Coefficient-norm promise ‖p‖ ≤ K.
    pub k_bound: f64,
    /// Stand-in for the anti-concentration constant; calibrate with
    /// [`calibrate_tail_constant`].
    pub c_dfko: f64,
    /// Fixed moment order; chosen from the tail bound when absent.
    pub order: Option<usize>,
    /// Tolerance for the moment estimate; 0.1·B^ℓ when absent.
    pub tau: Option<f64>,
    pub delta: f64,
    /// Largest order the sampled path will attempt.
    pub max_order: usize,
    pub estimator: EstimatorConfig,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        CoarseConfig {
            s: 1,
            d: 1,
            eps: 0.5,
            k_bound: 1.0,
            c_dfko: 1.0,
            order: None,
            tau: None,
            delta: 0.1,
            max_order: 12,
            estimator: EstimatorConfig::default(),
        }
    }
}

impl CoarseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::InvalidArgument(format!("eps must lie in (0,1], got {}", self.eps)));
        }
        if !(self.k_bound >= 1.0) {
            return Err(Error::InvalidArgument(format!("K must be at least 1, got {}", self.k_bound)));
        }
        if self.s == 0 || self.d == 0 {
            return Err(Error::InvalidArgument("s and d must be positive".into()));
        }
        if let Some(l) = self.order {
            if l < 2 || l % 2 == 1 {
                return Err(Error::InvalidArgument(format!("moment order must be even and ≥ 2, got {l}")));
            }
        }
        Ok(())
    }
}

fn log_d(d: usize) -> f64 {
    // log d vanishes at d = 1; log 2 is used there instead.
    (d.max(2) as f64).ln()
}

/// log2 of (4e K⁶ M^{2d} C^d s / ε²)^d.
pub fn upsilon_log2(k: f64, s: usize, d: usize, eps: f64, c: f64, m: f64) -> f64 {
    let df = d as f64;
    let base = (4.0 * std::f64::consts::E).log2() + 6.0 * k.log2() + 2.0 * df * m.log2() + df * c.log2()
        + (s as f64).log2()
        - 2.0 * eps.log2();
    df * base
}

/// Υ = ⌈(4e K⁶ M^{2d} C^d s / ε²)^d⌉.
pub fn upsilon(k: f64, s: usize, d: usize, eps: f64, c: f64, m: f64) -> Result<u64> {
    if !(k > 0.0 && s > 0 && d > 0 && eps > 0.0 && c > 0.0 && m > 0.0) {
        return Err(Error::InvalidArgument("upsilon needs positive arguments".into()));
    }
    let lg = upsilon_log2(k, s, d, eps, c, m);
    if lg > 63.0 {
        return Err(Error::Budget {
            module: "coarse",
            what: "upsilon".into(),
            required_log2: lg,
            budget_log2: 63.0,
        });
    }
    Ok(lg.exp2().ceil() as u64)
}

/// K·M^d·√s, the largest |p(x)| any s-sparse p with ‖p‖ ≤ K can take.
pub fn sparse_value_bound(s: usize, k: f64, m: f64, d: usize) -> f64 {
    k * m.powi(d as i32) * (s as f64).sqrt()
}

/// q = exp(−4 C K³ M^{2d} s d² log d / ε), with log 2 in place of log d at d = 1.
pub fn tail_prob_bound(k: f64, m: f64, s: usize, d: usize, eps: f64, c: f64) -> f64 {
    (-tail_exponent(k, m, s, d, eps, c)).exp()
}

fn tail_exponent(k: f64, m: f64, s: usize, d: usize, eps: f64, c: f64) -> f64 {
    let df = d as f64;
    4.0 * c * k.powi(3) * m.powi(2 * d as i32) * s as f64 * df * df * log_d(d) / eps
}

/// Smallest even ℓ ≥ 2 with ℓ > log2(1/(2q)).
pub fn order_for_tail(q_ln: f64) -> usize {
    // log2(1/(2q)) = −ln q / ln 2 − 1
    let x = -q_ln / std::f64::consts::LN_2 - 1.0;
    if x < 2.0 {
        return 2;
    }
    let l = 2 * ((x / 2.0).floor() as usize) + 2;
    l.max(2)
}

/// Parameters the coarse test derives from its config and the base law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseParameters {
    pub upsilon: Option<u64>,
    pub upsilon_log2: f64,
    pub q: f64,
    pub order: usize,
    pub value_bound: f64,
    pub ceiling: f64,
    pub threshold: f64,
    pub tau: f64,
}

pub fn coarse_parameters(cfg: &CoarseConfig, dist: &FiniteDistribution) -> Result<CoarseParameters> {
    cfg.validate()?;
    let m = rational::to_f64(dist.max_abs());
    let exponent = tail_exponent(cfg.k_bound, m, cfg.s, cfg.d, cfg.eps, cfg.c_dfko);
    let order = cfg.order.unwrap_or_else(|| order_for_tail(-exponent));
    let b = sparse_value_bound(cfg.s, cfg.k_bound, m, cfg.d);
    let ceiling = b.powi(order as i32);
    let ups_log2 = upsilon_log2(cfg.k_bound, cfg.s, cfg.d, cfg.eps, cfg.c_dfko, m);
    Ok(CoarseParameters {
        upsilon: upsilon(cfg.k_bound, cfg.s, cfg.d, cfg.eps, cfg.c_dfko, m).ok(),
        upsilon_log2: ups_log2,
        q: (-exponent).exp(),
        order,
        value_bound: b,
        ceiling,
        threshold: 1.5 * ceiling,
        tau: cfg.tau.unwrap_or(0.1 * ceiling),
    })
}

/// Exact decision m_ℓ ≤ (3/2)·B^ℓ for even ℓ, with B^ℓ = (K² M^{2d} s)^{ℓ/2}.
/// Orders above 256 compare Σ p_i (v_i/B)^ℓ ≤ 3/2 in the log domain.
pub fn exact_moment_below_threshold(rv: &DiscreteRV, order: usize, cfg: &CoarseConfig, dist: &FiniteDistribution) -> Result<bool> {
    let k = rational::from_f64(cfg.k_bound)?;
    let base_sq = &k * &k * rational::pow(dist.max_abs(), 2 * cfg.d as u32) * rational::int(cfg.s as i64);
    if order <= 256 {
        let ceiling = rational::pow(&base_sq, (order / 2) as u32);
        return Ok(rv.raw_moment(order as u32) <= ceiling * rational::frac(3, 2));
    }
    let lb = 0.5 * rational::log2_abs(&base_sq);
    let terms: Vec<f64> = rv
        .atoms()
        .iter()
        .filter(|(v, _)| !v.is_zero())
        .map(|(v, p)| rational::log2_abs(p) + order as f64 * (rational::log2_abs(v) - lb))
        .collect();
    let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return Ok(true);
    }
    let total = mx + terms.iter().map(|t| (t - mx).exp2()).sum::<f64>().log2();
    Ok(total <= 1.5f64.log2())
}

/// Runs the coarse test against `oracle`. Budget failures yield an
/// inconclusive report rather than an error.
pub fn coarse_test(oracle: &mut Oracle, cfg: &CoarseConfig, dist: &FiniteDistribution) -> Result<TesterReport> {
    let params = coarse_parameters(cfg, dist)?;
    let start = oracle.samples_drawn();
    let mut trace = PhaseTrace::new("coarse")
        .with("order", params.order)
        .with("q", params.q)
        .with("upsilon", params.upsilon)
        .with("upsilon_log2", params.upsilon_log2)
        .with("value_bound", params.value_bound)
        .with("threshold", params.threshold)
        .with("tau", params.tau)
        .with("delta", cfg.delta);
    let mut report = TesterReport::new(Verdict::Inconclusive);
    report.param("coarse", cfg);

    if let Some(rv) = oracle.exact_rv() {
        let below = exact_moment_below_threshold(rv, params.order, cfg, dist)?;
        trace.set("source", "exact");
        if params.order <= 256 {
            trace.set("estimate", rational::to_f64(&rv.raw_moment(params.order as u32)));
        }
        report.verdict = if below { Verdict::Sparse } else { Verdict::Far };
        trace.set("verdict", report.verdict.as_str());
        report.phases.push(trace);
        return Ok(report);
    }

    if !oracle.is_exact() && params.order > cfg.max_order {
        report.diagnostic = Some(format!(
            "coarse: moment order {} required, cap is {}",
            params.order, cfg.max_order
        ));
        trace.set("required_order", params.order);
        report.phases.push(trace);
        return Ok(report);
    }

    let mut est_cfg = cfg.estimator.clone();
    est_cfg.degree = cfg.d;
    est_cfg.lambda = rational::to_f64(dist.lambda());
    let noise = oracle.noise();
    match estimate_clean_moments(oracle, params.order, params.tau, cfg.delta, &noise, cfg.k_bound, &est_cfg) {
        Ok(est) => {
            trace.set("source", &est.source);
            trace.set("estimate", est.value);
            trace.set("noisy_moments", &est.noisy_moments);
            trace.set("noisy_cumulants", &est.noisy_cumulants);
            trace.set("clean_cumulants", &est.clean_cumulants);
            trace.set("samples", est.samples_used);
            report.verdict = if est.value <= params.threshold { Verdict::Sparse } else { Verdict::Far };
        }
        Err(e) if e.is_budget() => {
            report.diagnostic = Some(e.to_string());
            trace.set("error", e.to_string());
        }
        Err(e) => return Err(e),
    }
    trace.set("verdict", report.verdict.as_str());
    report.samples_consumed = oracle.samples_drawn() - start;
    report.phases.push(trace);
    Ok(report)
}

/// Smallest C for which every instance's exact tail Pr[|p| ≥ 2KM^d√s]
/// is at least the bound q(C). The bound decreases in C, so the feasible
/// set is [C_min, ∞). Returns `None` when some tail is zero.
pub fn calibrate_tail_constant(
    tails: &[Rational],
    k: f64,
    m: f64,
    s: usize,
    d: usize,
    eps: f64,
) -> Option<f64> {
    let unit = tail_exponent(k, m, s, d, eps, 1.0);
    let mut c_min: f64 = 0.0;
    for t in tails {
        if t.is_zero() {
            return None;
        }
        if t >= &Rational::one() {
            continue;
        }
        let ln_t = rational::log2_abs(t) * std::f64::consts::LN_2;
        c_min = c_min.max(-ln_t / unit);
    }
    Some(c_min)
}

/// Exact Pr[|p(X)| ≥ 2K M^d √s].
pub fn exact_large_value_prob(rv: &DiscreteRV, s: usize, k: f64, dist: &FiniteDistribution, d: usize) -> Result<Rational> {
    let k = rational::from_f64(k)?;
    let t_sq = rational::int(4) * &k * &k * rational::pow(dist.max_abs(), 2 * d as u32) * rational::int(s as i64);
    Ok(rv.prob_abs_at_least_sq(&t_sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::momest::NoiseSpec;
    use crate::poly::MultilinearPolynomial;

    #[test]
    fn upsilon_values() {
        assert_eq!(upsilon(1.0, 1, 1, 1.0, 1.0, 1.0).unwrap(), 11);
        assert_eq!(upsilon(1.0, 1, 2, 1.0, 1.0, 1.0).unwrap(), 119);
        let a = upsilon_log2(1.0, 1, 3, 1.0, 1.0, 1.0);
        let b = upsilon_log2(1.0, 1, 3, 0.5, 1.0, 1.0);
        assert!((b - a - 3.0 * 2.0).abs() < 1e-12);
        assert!(upsilon(1e10, 1, 3, 1e-3, 1.0, 1.0).unwrap_err().is_budget());
    }

    #[test]
    fn value_bound_examples() {
        assert_eq!(sparse_value_bound(1, 1.0, 1.0, 3), 1.0);
        assert_eq!(sparse_value_bound(4, 1.0, 1.0, 2), 2.0);
        assert!((sparse_value_bound(2, 2.0, 2.0, 1) - 4.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn tail_bound_examples() {
        assert_eq!(tail_prob_bound(1.0, 1.0, 1, 2, 1.0, 0.0), 1.0);
        let q = tail_prob_bound(1.0, 1.0, 1, 2, 1.0, 1.0);
        assert!((q - (-16.0 * 2f64.ln()).exp()).abs() < 1e-18);
        let h = tail_prob_bound(1.0, 1.0, 1, 2, 0.5, 1.0);
        assert!((h.ln() - 2.0 * q.ln()).abs() < 1e-9);
    }

    #[test]
    fn order_choice() {
        // q = 2^-4 → log2(1/(2q)) = 3 → ℓ = 4
        assert_eq!(order_for_tail(-4.0 * std::f64::consts::LN_2), 4);
        assert_eq!(order_for_tail(-0.1), 2);
        // exactly 4 → next even above is 6
        assert_eq!(order_for_tail(-5.0 * std::f64::consts::LN_2), 6);
    }

    fn sampled_cfg() -> CoarseConfig {
        CoarseConfig { c_dfko: 0.5, ..Default::default() }
    }

    #[test]
    fn sampled_parameters() {
        let p = coarse_parameters(&sampled_cfg(), &FiniteDistribution::rademacher()).unwrap();
        assert_eq!(p.order, 4);
        assert_eq!(p.upsilon, Some(22));
        assert_eq!(p.threshold, 1.5);
    }

    #[test]
    fn exact_mode_verdicts() {
        let rad = FiniteDistribution::rademacher();
        let cfg = sampled_cfg();
        let mut o = Oracle::exact(&MultilinearPolynomial::var(3), &rad, &NoiseSpec::None).unwrap();
        assert_eq!(coarse_test(&mut o, &cfg, &rad).unwrap().verdict, Verdict::Sparse);
        let n = 36;
        let far = MultilinearPolynomial::from_terms((1..=n).map(|i| (crate::poly::Monomial::var(i), rational::frac(1, 6))));
        let mut o = Oracle::exact(&far, &rad, &NoiseSpec::None).unwrap();
        assert_eq!(coarse_test(&mut o, &cfg, &rad).unwrap().verdict, Verdict::Far);
    }

    #[test]
    fn log_domain_comparison_agrees() {
        let rad = FiniteDistribution::rademacher();
        let rv = crate::exactdist::output_distribution(&MultilinearPolynomial::var(1).add(&MultilinearPolynomial::var(2)).scale(&rational::frac(1, 2)), &rad).unwrap();
        let cfg = CoarseConfig::default();
        assert!(exact_moment_below_threshold(&rv, 300, &cfg, &rad).unwrap());
        let big = rv.scale(&rational::frac(3, 2));
        assert!(!exact_moment_below_threshold(&big, 300, &cfg, &rad).unwrap());
    }

    #[test]
    fn sampled_order_cap_gives_inconclusive() {
        let rad = FiniteDistribution::rademacher();
        let cfg = CoarseConfig { c_dfko: 4.0, ..Default::default() };
        let mut o = Oracle::simulated(&MultilinearPolynomial::var(1), &rad, &NoiseSpec::None, 1);
        let r = coarse_test(&mut o, &cfg, &rad).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
        assert!(r.diagnostic.unwrap().contains("coarse"));
    }

    #[test]
    fn calibration_is_minimal() {
        let tails = vec![rational::frac(1, 2), rational::frac(1, 16)];
        let c = calibrate_tail_constant(&tails, 1.0, 1.0, 1, 1, 0.5).unwrap();
        let q = tail_prob_bound(1.0, 1.0, 1, 1, 0.5, c);
        assert!((q - 1.0 / 16.0).abs() < 1e-12);
        assert!(calibrate_tail_constant(&[Rational::zero()], 1.0, 1.0, 1, 1, 0.5).is_none());
    }
}
