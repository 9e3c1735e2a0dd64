//! Clean-moment estimation under additive noise: empirical noisy moments,
//! conversion to cumulants, subtraction of the noise cumulants, conversion
//! back to moments.

use serde::{Deserialize, Serialize};

use super::cumulants::{cumulants_to_moments, moments_to_cumulants};
use super::noise::NoiseSpec;
use super::sampling::{empirical_moments, Sampler};
use crate::distribution::FiniteDistribution;
use crate::error::{Error, Result};
use crate::exactdist::DiscreteRV;
use crate::poly::MultilinearPolynomial;
use crate::rational;

/// Source of labels y = p(x) + η.
///
/// `Exact` hands out exact clean moments instead of samples. All variants
/// carry a label scale: labels (and exact moments) are divided by it.
#[derive(Clone, Debug)]
pub enum Oracle {
    Simulated(SimulatedOracle),
    Exact(ExactOracle),
    Recorded(RecordedOracle),
}

#[derive(Clone, Debug)]
pub struct SimulatedOracle {
    sampler: Sampler,
    noise: NoiseSpec,
    seed: u64,
    calls: u64,
    drawn: u64,
    scale: f64,
}

#[derive(Clone, Debug)]
pub struct ExactOracle {
    rv: DiscreteRV,
    noise: NoiseSpec,
    scale: f64,
}

#[derive(Clone, Debug)]
pub struct RecordedOracle {
    ys: Vec<f64>,
    cursor: usize,
    noise: NoiseSpec,
    scale: f64,
}

impl Oracle {
    pub fn simulated(p: &MultilinearPolynomial, d: &FiniteDistribution, noise: &NoiseSpec, seed: u64) -> Self {
        Oracle::Simulated(SimulatedOracle {
            sampler: Sampler::new(p, d, noise),
            noise: noise.clone(),
            seed,
            calls: 0,
            drawn: 0,
            scale: 1.0,
        })
    }

    pub fn exact(p: &MultilinearPolynomial, d: &FiniteDistribution, noise: &NoiseSpec) -> Result<Self> {
        let rv = crate::exactdist::output_distribution(p, d)?;
        Ok(Oracle::Exact(ExactOracle { rv, noise: noise.clone(), scale: 1.0 }))
    }

    pub fn exact_from_rv(rv: DiscreteRV, noise: &NoiseSpec) -> Self {
        Oracle::Exact(ExactOracle { rv, noise: noise.clone(), scale: 1.0 })
    }

    pub fn recorded(ys: Vec<f64>, noise: &NoiseSpec) -> Self {
        Oracle::Recorded(RecordedOracle { ys, cursor: 0, noise: noise.clone(), scale: 1.0 })
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Oracle::Exact(_))
    }

    pub fn label_scale(&self) -> f64 {
        match self {
            Oracle::Simulated(o) => o.scale,
            Oracle::Exact(o) => o.scale,
            Oracle::Recorded(o) => o.scale,
        }
    }

    fn scale_mut(&mut self) -> &mut f64 {
        match self {
            Oracle::Simulated(o) => &mut o.scale,
            Oracle::Exact(o) => &mut o.scale,
            Oracle::Recorded(o) => &mut o.scale,
        }
    }

    /// The same oracle with labels divided by an extra factor `c`.
    pub fn rescaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        *out.scale_mut() *= c;
        out
    }

    /// Noise law as seen in the (rescaled) labels.
    pub fn noise(&self) -> NoiseSpec {
        let (n, s) = match self {
            Oracle::Simulated(o) => (&o.noise, o.scale),
            Oracle::Exact(o) => (&o.noise, o.scale),
            Oracle::Recorded(o) => (&o.noise, o.scale),
        };
        if s == 1.0 {
            n.clone()
        } else {
            n.scaled(1.0 / s)
        }
    }

    /// The exact law of the clean label, when exactly known and unscaled.
    pub fn exact_rv(&self) -> Option<&DiscreteRV> {
        match self {
            Oracle::Exact(o) if o.scale == 1.0 => Some(&o.rv),
            _ => None,
        }
    }

    /// Exact clean moments of orders 1..=n (rescaled), exact mode only.
    pub fn exact_moments(&self, n: usize) -> Option<Vec<f64>> {
        match self {
            Oracle::Exact(o) => Some(
                o.rv.moments(n as u32)
                    .iter()
                    .enumerate()
                    .map(|(j, m)| rational::to_f64(m) / o.scale.powi(j as i32 + 1))
                    .collect(),
            ),
            _ => None,
        }
    }

    pub fn samples_drawn(&self) -> u64 {
        match self {
            Oracle::Simulated(o) => o.drawn,
            Oracle::Exact(_) => 0,
            Oracle::Recorded(o) => o.cursor as u64,
        }
    }

    pub fn draw_labels(&mut self, m: usize) -> Result<Vec<f64>> {
        match self {
            Oracle::Simulated(o) => {
                let ys = o.sampler.draw_labels(m, o.seed, o.calls)?;
                o.calls += 1;
                o.drawn += m as u64;
                Ok(ys.into_iter().map(|y| y / o.scale).collect())
            }
            Oracle::Exact(_) => Err(Error::Oracle("exact oracle does not produce samples".into())),
            Oracle::Recorded(o) => {
                if o.cursor + m > o.ys.len() {
                    return Err(Error::budget("momest", "recorded samples", (o.cursor + m) as f64, o.ys.len() as f64));
                }
                let out = o.ys[o.cursor..o.cursor + m].iter().map(|y| y / o.scale).collect();
                o.cursor += m;
                Ok(out)
            }
        }
    }
}

/// How the sample count is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CascadeMode {
    /// The explicit cascade of worst-case tolerances. Counts are astronomically
    /// large for all but trivial inputs.
    Analytic,
    /// Not from the analysis: a pilot batch estimates the variance of the
    /// plug-in estimator (delta method) and Chebyshev sets the count.
    Empirical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub mode: CascadeMode,
    /// Pilot batch size in empirical mode.
    pub pilot: usize,
    pub min_samples: usize,
    /// Largest number of samples a single estimate may draw.
    pub sample_budget: f64,
    /// Multiplier standing in for the unspecified constant of the count bound.
    pub constant: f64,
    /// Degree bound d and minimum atom probability λ, used by the analytic cascade.
    pub degree: usize,
    pub lambda: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            mode: CascadeMode::Empirical,
            pilot: 20_000,
            min_samples: 1_000,
            sample_budget: 5e7,
            constant: 1.0,
            degree: 1,
            lambda: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub order: usize,
    pub value: f64,
    pub tau: f64,
    pub delta: f64,
    pub samples_used: u64,
    pub noisy_moments: Vec<f64>,
    pub noisy_cumulants: Vec<f64>,
    pub clean_cumulants: Vec<f64>,
    pub clean_moments: Vec<f64>,
    pub source: String,
}

struct Pipeline {
    noisy_cumulants: Vec<f64>,
    clean_cumulants: Vec<f64>,
    clean_moments: Vec<f64>,
}

fn deconvolve(noisy_moments: &[f64], noise_cumulants: &[f64]) -> Pipeline {
    let noisy_cumulants = moments_to_cumulants(noisy_moments);
    let clean_cumulants: Vec<f64> = noisy_cumulants.iter().zip(noise_cumulants).map(|(a, b)| a - b).collect();
    let clean_moments = cumulants_to_moments(&clean_cumulants);
    Pipeline { noisy_cumulants, clean_cumulants, clean_moments }
}

/// Chebyshev sample count for the plug-in estimate of m_ℓ, from a pilot batch.
fn empirical_sample_count(pilot: &[f64], l: usize, tau: f64, delta: f64, kappa_eta: &[f64], constant: f64) -> Result<f64> {
    let m_hat = empirical_moments(pilot, l)?;
    let g = |m: &[f64]| deconvolve(m, kappa_eta).clean_moments[l - 1];
    let grad: Vec<f64> = (0..l)
        .map(|j| {
            let h = 1e-5 * m_hat[j].abs().max(1.0);
            let mut up = m_hat.clone();
            let mut dn = m_hat.clone();
            up[j] += h;
            dn[j] -= h;
            (g(&up) - g(&dn)) / (2.0 * h)
        })
        .collect();
    let phi: Vec<f64> = pilot
        .iter()
        .map(|&y| {
            let mut pw = 1.0;
            let mut acc = 0.0;
            for gj in &grad {
                pw *= y;
                acc += gj * pw;
            }
            acc
        })
        .collect();
    let n = phi.len() as f64;
    let mean = phi.iter().sum::<f64>() / n;
    let var = phi.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(constant * var / (delta * tau * tau))
}

/// Estimates m_ℓ(p(X^{⊗n})) from noisy labels to within τ with
/// probability ≥ 1 − δ (under the chosen count rule).
pub fn estimate_clean_moments(
    oracle: &mut Oracle,
    l: usize,
    tau: f64,
    delta: f64,
    noise: &NoiseSpec,
    k_bound: f64,
    cfg: &EstimatorConfig,
) -> Result<MomentEstimate> {
    if l == 0 {
        return Err(Error::InvalidArgument("moment order must be at least 1".into()));
    }
    let kappa_eta = noise.cumulants(l)?;

    if let Some(clean) = oracle.exact_moments(l) {
        let clean_cumulants = moments_to_cumulants(&clean);
        let noisy_cumulants: Vec<f64> = clean_cumulants.iter().zip(&kappa_eta).map(|(a, b)| a + b).collect();
        let noisy_moments = cumulants_to_moments(&noisy_cumulants);
        return Ok(MomentEstimate {
            order: l,
            value: clean[l - 1],
            tau,
            delta,
            samples_used: 0,
            noisy_moments,
            noisy_cumulants,
            clean_cumulants,
            clean_moments: clean,
            source: "exact".into(),
        });
    }

    let (count, pilot_used, source) = match cfg.mode {
        CascadeMode::Analytic => {
            let c = sample_size_for(l, tau, delta, k_bound, cfg.degree, cfg.lambda, noise, cfg.constant)?;
            (c.count, 0u64, "analytic-cascade")
        }
        CascadeMode::Empirical => {
            let pilot = oracle.draw_labels(cfg.pilot)?;
            let c = empirical_sample_count(&pilot, l, tau, delta, &kappa_eta, cfg.constant)?;
            (c, cfg.pilot as u64, "empirical-variance")
        }
    };
    let count = count.max(cfg.min_samples as f64).ceil();
    if !(count <= cfg.sample_budget) {
        return Err(Error::budget("momest", format!("samples for order-{l} clean moment"), count, cfg.sample_budget));
    }
    let ys = oracle.draw_labels(count as usize)?;
    let noisy_moments = empirical_moments(&ys, l)?;
    let pipe = deconvolve(&noisy_moments, &kappa_eta);
    Ok(MomentEstimate {
        order: l,
        value: pipe.clean_moments[l - 1],
        tau,
        delta,
        samples_used: count as u64 + pilot_used,
        noisy_moments,
        noisy_cumulants: pipe.noisy_cumulants,
        clean_cumulants: pipe.clean_cumulants,
        clean_moments: pipe.clean_moments,
        source: source.into(),
    })
}

/// A sample count that may be far beyond anything drawable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleCount {
    pub log2: f64,
    pub count: f64,
}

/// Largest log2 count `sample_size_for` reports before declaring overflow.
pub const SAMPLE_COUNT_LOG2_CAP: f64 = 1000.0;

fn log2_sum(terms: &[f64]) -> f64 {
    let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + terms.iter().map(|t| (t - mx).exp2()).sum::<f64>().log2()
}

fn log2_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).log2()).sum()
}

/// Sample count of the worst-case cascade, in log2 form:
///
/// * ε_κ = τ / (ℓ^{dℓ²} λ^{−dℓ²} K^{2ℓ²} e^{2ℓ²} ℓ^{3ℓ²})  (cumulants → clean moment)
/// * ε_m = ε_κ / ((ℓ!)² 2^{2ℓ²+2ℓ} (2^ℓ(ℓ^{dℓ/2} λ^{d(1−ℓ)/2} K^ℓ + m_{⌈1..ℓ+1⌉}(η) + 1))^{2ℓ})
/// * n = C (ℓ/δ) ε_m^{−2} 2^{2ℓ} ((2ℓ)^{dℓ} λ^{d(1−2ℓ)/2} K^{2ℓ} + m_{⌈2ℓ..2ℓ+2⌉}(η) + 1)
///
/// with confidence split as δ/ℓ across the ℓ noisy moments.
#[allow(clippy::too_many_arguments)]
pub fn sample_size_for(
    l: usize,
    tau: f64,
    delta: f64,
    k_bound: f64,
    d: usize,
    lambda: f64,
    noise: &NoiseSpec,
    constant: f64,
) -> Result<SampleCount> {
    let lf = l as f64;
    let df = d as f64;
    let lg_l = lf.log2();
    let lg_lam = lambda.log2();
    let lg_k = k_bound.log2();
    let lg_e = std::f64::consts::E.log2();
    let l2 = lf * lf;

    let lg_eps_kappa =
        tau.log2() - (df * l2 * lg_l - df * l2 * lg_lam + 2.0 * l2 * lg_k + 2.0 * l2 * lg_e + 3.0 * l2 * lg_l);

    let eta_low = noise.max_moment(1, l + 1)?;
    let inner_low = log2_sum(&[
        df * lf / 2.0 * lg_l + df * (1.0 - lf) / 2.0 * lg_lam + lf * lg_k,
        eta_low.max(0.0).log2(),
        0.0,
    ]);
    let lg_eps_m = lg_eps_kappa
        - (2.0 * log2_factorial(l) + 2.0 * l2 + 2.0 * lf + 2.0 * lf * (lf + inner_low));

    let eta_high = noise.max_moment(2 * l, 2 * l + 2)?;
    let inner_high = log2_sum(&[
        df * lf * (2.0 * lf).log2() + df * (1.0 - 2.0 * lf) / 2.0 * lg_lam + 2.0 * lf * lg_k,
        eta_high.max(0.0).log2(),
        0.0,
    ]);
    let log2 = constant.log2() + lg_l - delta.log2() - 2.0 * lg_eps_m + 2.0 * lf + inner_high;
    if !(log2 <= SAMPLE_COUNT_LOG2_CAP) {
        return Err(Error::Budget {
            module: "momest",
            what: format!("cascade sample count for order {l}"),
            required_log2: log2,
            budget_log2: SAMPLE_COUNT_LOG2_CAP,
        });
    }
    Ok(SampleCount { log2, count: log2.exp2() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x1() -> MultilinearPolynomial {
        MultilinearPolynomial::var(1)
    }

    #[test]
    fn noiseless_second_moment() {
        let rad = FiniteDistribution::rademacher();
        let mut o = Oracle::simulated(&x1(), &rad, &NoiseSpec::None, 5);
        let est = estimate_clean_moments(&mut o, 2, 0.05, 0.1, &NoiseSpec::None, 1.0, &EstimatorConfig::default()).unwrap();
        assert!((est.value - 1.0).abs() <= 0.05);
        assert_eq!(est.noisy_moments.len(), 2);
    }

    #[test]
    fn gaussian_noise_is_removed() {
        let rad = FiniteDistribution::rademacher();
        let noise = NoiseSpec::gaussian(0.0, 1.0);
        let mut o = Oracle::simulated(&x1(), &rad, &noise, 9);
        let est = estimate_clean_moments(&mut o, 2, 0.1, 0.1, &noise, 1.0, &EstimatorConfig::default()).unwrap();
        assert!((est.noisy_moments[1] - 2.0).abs() < 0.1);
        assert!((est.value - 1.0).abs() <= 0.1);
    }

    #[test]
    fn point_mass_noise_shifts_mean() {
        let rad = FiniteDistribution::rademacher();
        let noise = NoiseSpec::point_mass(0.75);
        let mut o = Oracle::simulated(&x1(), &rad, &noise, 2);
        let est = estimate_clean_moments(&mut o, 1, 0.05, 0.1, &noise, 1.0, &EstimatorConfig::default()).unwrap();
        assert!((est.value - (est.noisy_moments[0] - 0.75)).abs() < 1e-12);
    }

    #[test]
    fn exact_mode_uses_no_samples() {
        let rad = FiniteDistribution::rademacher();
        let mut o = Oracle::exact(&x1().scale(&rational::int(2)), &rad, &NoiseSpec::None).unwrap();
        let est = estimate_clean_moments(&mut o, 4, 0.1, 0.1, &NoiseSpec::None, 2.0, &EstimatorConfig::default()).unwrap();
        assert_eq!(est.value, 16.0);
        assert_eq!(est.samples_used, 0);
    }

    #[test]
    fn cascade_count_examples() {
        let a = sample_size_for(2, 0.1, 0.1, 1.0, 1, 0.5, &NoiseSpec::None, 1.0).unwrap();
        assert!(a.count.is_finite() && a.count > 1.0);
        let b = sample_size_for(2, 0.05, 0.1, 1.0, 1, 0.5, &NoiseSpec::None, 1.0).unwrap();
        assert!((b.log2 - a.log2 - 2.0).abs() < 1e-9);
        let e = sample_size_for(8, 0.1, 0.1, 1.0, 2, 0.5, &NoiseSpec::None, 1.0).unwrap_err();
        assert!(e.is_budget());
    }

    #[test]
    fn analytic_mode_exceeds_practical_budget() {
        let rad = FiniteDistribution::rademacher();
        let mut o = Oracle::simulated(&x1(), &rad, &NoiseSpec::None, 1);
        let cfg = EstimatorConfig { mode: CascadeMode::Analytic, ..Default::default() };
        let e = estimate_clean_moments(&mut o, 2, 0.1, 0.1, &NoiseSpec::None, 1.0, &cfg).unwrap_err();
        assert_eq!(e.module(), Some("momest"));
        assert_eq!(o.samples_drawn(), 0);
    }

    #[test]
    fn rescaled_oracle_divides_labels() {
        let rad = FiniteDistribution::rademacher();
        let p = x1().scale(&rational::int(2));
        let mut o = Oracle::simulated(&p, &rad, &NoiseSpec::gaussian(0.0, 1.0), 4).rescaled(2.0);
        assert_eq!(o.noise(), NoiseSpec::gaussian(0.0, 0.5));
        let ys = o.draw_labels(10).unwrap();
        assert!(ys.iter().all(|y| y.abs() < 5.0));
    }
}
