//! Experiment configuration: a strict TOML schema whose numeric fields accept
//! exact rationals written as strings ("3/4", "-2", "0.125") or plain TOML
//! numbers.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer, Visitor};
use serde::Deserialize;

use polysparse::coarse::CoarseConfig;
use polysparse::momest::estimate::{CascadeMode, EstimatorConfig};
use polysparse::momest::NoiseSpec;
use polysparse::nets::NetConfig;
use polysparse::rational::{self, Rational};
use polysparse::sharp::{GapStrategy, SharpConfig};
use polysparse::{validate_distribution, FiniteDistribution, MultilinearPolynomial};

use crate::CliError;

/// A rational-valued config number.
#[derive(Clone, Debug, PartialEq)]
pub struct Num(pub Rational);

impl Num {
    pub fn f64(&self) -> f64 {
        rational::to_f64(&self.0)
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Num;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or a rational string such as \"3/4\"")
            }
            fn visit_str<E: de::Error>(self, s: &str) -> Result<Num, E> {
                rational::parse_rational(s).map(Num).map_err(E::custom)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Num, E> {
                Ok(Num(rational::int(v)))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Num, E> {
                i64::try_from(v).map(|v| Num(rational::int(v))).map_err(E::custom)
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Num, E> {
                rational::from_f64(v).map(Num).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

pub fn parse_num(s: &str) -> Result<Num, String> {
    rational::parse_rational(s).map(Num).map_err(|e| e.to_string())
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Free-form label copied into reports.
    pub scenario: Option<String>,
    pub distribution: Option<DistributionSection>,
    pub polynomial: Option<PolynomialSection>,
    pub noise: Option<NoiseSection>,
    pub tester: Option<TesterSection>,
    pub estimator: Option<EstimatorSection>,
    pub nets: Option<NetSection>,
    pub trials: Option<usize>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSection {
    /// Only "rademacher" is built in.
    pub name: Option<String>,
    pub file: Option<PathBuf>,
    /// [[value, prob], ...]
    pub atoms: Option<Vec<(Num, Num)>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialSection {
    pub file: Option<PathBuf>,
    /// Inline polynomial in the text format.
    pub text: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Gaussian,
    Finite,
    Table,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub kind: NoiseKind,
    pub mean: Option<Num>,
    pub sd: Option<Num>,
    pub values: Option<Vec<Num>>,
    pub probs: Option<Vec<Num>>,
    pub moments: Option<Vec<Num>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TesterSection {
    pub s: Option<usize>,
    pub d: Option<usize>,
    pub t: Option<usize>,
    pub eps: Option<Num>,
    pub k: Option<Num>,
    pub c_dfko: Option<Num>,
    pub c_kv: Option<Num>,
    pub c_kv_prime: Option<Num>,
    /// "estimate" or a number.
    pub gap: Option<GapSetting>,
    pub normalize: Option<Num>,
    pub order: Option<usize>,
    pub tau: Option<Num>,
    pub delta: Option<Num>,
    pub max_order: Option<u32>,
    /// Read exact moments instead of sampling.
    pub exact: Option<bool>,
}

#[derive(Clone, Debug)]
pub enum GapSetting {
    Estimate,
    Given(Num),
}

impl<'de> Deserialize<'de> for GapSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            S(String),
            I(i64),
            F(f64),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::S(s) if s == "estimate" => GapSetting::Estimate,
            Raw::S(s) => GapSetting::Given(parse_num(&s).map_err(de::Error::custom)?),
            Raw::I(i) => GapSetting::Given(Num(rational::int(i))),
            Raw::F(f) => GapSetting::Given(Num(rational::from_f64(f).map_err(de::Error::custom)?)),
        })
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    /// "empirical" or "analytic".
    pub mode: Option<String>,
    pub pilot: Option<usize>,
    pub min_samples: Option<usize>,
    pub sample_budget: Option<Num>,
    pub constant: Option<Num>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    pub zeta: Option<Num>,
    pub max_terms: Option<usize>,
    pub max_candidates: Option<Num>,
    pub max_members: Option<usize>,
    pub max_raw_patterns: Option<u64>,
    pub max_iterations: Option<u32>,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(ExperimentConfig { base_dir: PathBuf::from("."), ..Default::default() });
        };
        let text = read(path)?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Rademacher when the config names no distribution.
    pub fn distribution(&self) -> Result<FiniteDistribution, CliError> {
        let Some(sec) = &self.distribution else {
            return Ok(FiniteDistribution::rademacher());
        };
        match (&sec.name, &sec.file, &sec.atoms) {
            (Some(n), None, None) if n == "rademacher" => Ok(FiniteDistribution::rademacher()),
            (Some(n), None, None) => Err(CliError::Usage(format!("unknown distribution name {n:?}"))),
            (None, Some(f), None) => Ok(FiniteDistribution::parse_text(&read(&self.resolve(f))?)?),
            (None, None, Some(a)) => Ok(validate_distribution(a.iter().map(|(v, p)| (v.0.clone(), p.0.clone())).collect())?),
            _ => Err(CliError::Usage("distribution needs exactly one of name, file, atoms".into())),
        }
    }

    /// The polynomial from `--poly` if given, else from the config.
    pub fn polynomial(&self, flag: Option<&Path>) -> Result<Option<MultilinearPolynomial>, CliError> {
        if let Some(f) = flag {
            return Ok(Some(MultilinearPolynomial::parse_text(&read(f)?)?));
        }
        let Some(sec) = &self.polynomial else { return Ok(None) };
        match (&sec.file, &sec.text) {
            (Some(f), None) => Ok(Some(MultilinearPolynomial::parse_text(&read(&self.resolve(f))?)?)),
            (None, Some(t)) => Ok(Some(MultilinearPolynomial::parse_text(t)?)),
            _ => Err(CliError::Usage("polynomial needs exactly one of file, text".into())),
        }
    }

    pub fn noise(&self) -> Result<NoiseSpec, CliError> {
        let Some(sec) = &self.noise else { return Ok(NoiseSpec::None) };
        let need = |v: &Option<Num>, name: &str| {
            v.as_ref().map(Num::f64).ok_or_else(|| CliError::Usage(format!("noise.{name} is required")))
        };
        let list = |v: &Option<Vec<Num>>, name: &str| {
            v.as_ref()
                .map(|xs| xs.iter().map(Num::f64).collect::<Vec<_>>())
                .ok_or_else(|| CliError::Usage(format!("noise.{name} is required")))
        };
        Ok(match sec.kind {
            NoiseKind::None => NoiseSpec::None,
            NoiseKind::Gaussian => NoiseSpec::gaussian(sec.mean.as_ref().map_or(0.0, Num::f64), need(&sec.sd, "sd")?),
            NoiseKind::Finite => NoiseSpec::Finite { values: list(&sec.values, "values")?, probs: list(&sec.probs, "probs")? },
            NoiseKind::Table => NoiseSpec::Table { moments: list(&sec.moments, "moments")? },
        })
    }

    fn tester(&self) -> TesterSection {
        self.tester.clone().unwrap_or_default()
    }

    pub fn exact_oracle(&self) -> bool {
        self.tester().exact.unwrap_or(false)
    }

    pub fn estimator_config(&self, dist: &FiniteDistribution, d: usize) -> Result<EstimatorConfig, CliError> {
        let mut e = EstimatorConfig { degree: d, lambda: rational::to_f64(dist.lambda()), ..EstimatorConfig::default() };
        if let Some(sec) = &self.estimator {
            if let Some(m) = &sec.mode {
                e.mode = match m.as_str() {
                    "empirical" => CascadeMode::Empirical,
                    "analytic" => CascadeMode::Analytic,
                    other => return Err(CliError::Usage(format!("unknown estimator mode {other:?}"))),
                };
            }
            if let Some(v) = sec.pilot {
                e.pilot = v;
            }
            if let Some(v) = sec.min_samples {
                e.min_samples = v;
            }
            if let Some(v) = &sec.sample_budget {
                e.sample_budget = v.f64();
            }
            if let Some(v) = &sec.constant {
                e.constant = v.f64();
            }
        }
        Ok(e)
    }

    pub fn coarse_config(&self, dist: &FiniteDistribution) -> Result<CoarseConfig, CliError> {
        let t = self.tester();
        let base = CoarseConfig::default();
        let d = t.d.unwrap_or(base.d);
        let cfg = CoarseConfig {
            s: t.s.unwrap_or(base.s),
            d,
            eps: t.eps.as_ref().map_or(base.eps, Num::f64),
            k_bound: t.k.as_ref().map_or(base.k_bound, Num::f64),
            c_dfko: t.c_dfko.as_ref().map_or(base.c_dfko, Num::f64),
            order: t.order.or(base.order),
            tau: t.tau.as_ref().map(Num::f64).or(base.tau),
            delta: t.delta.as_ref().map_or(base.delta, Num::f64),
            max_order: t.max_order.map_or(base.max_order, |v| v as usize),
            estimator: self.estimator_config(dist, d)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn net_config(&self, k_bound: f64, c_dfko: f64) -> NetConfig {
        let mut n = NetConfig { k_bound, c_dfko, ..NetConfig::default() };
        if let Some(sec) = &self.nets {
            if let Some(v) = sec.max_terms {
                n.max_terms = v;
            }
            if let Some(v) = &sec.max_candidates {
                n.max_candidates = v.f64();
            }
            if let Some(v) = sec.max_members {
                n.max_members = v;
            }
            if let Some(v) = sec.max_raw_patterns {
                n.max_raw_patterns = v as u128;
            }
            if let Some(v) = sec.max_iterations {
                n.max_iterations = v;
            }
        }
        n
    }

    /// Missing fields fall back to the desk configuration.
    pub fn sharp_config(&self, dist: &FiniteDistribution) -> Result<SharpConfig, CliError> {
        let t = self.tester();
        let base = SharpConfig::desk();
        let d = t.d.unwrap_or(base.d);
        let k_bound = t.k.as_ref().map_or(base.k_bound, Num::f64);
        let c_dfko = t.c_dfko.as_ref().map_or(base.c_dfko, Num::f64);
        let mut nets = self.net_config(k_bound, c_dfko);
        if self.nets.as_ref().and_then(|n| n.max_terms).is_none() {
            nets.max_terms = base.nets.max_terms;
        }
        let cfg = SharpConfig {
            s: t.s.unwrap_or(base.s),
            d,
            t: t.t.unwrap_or(base.t),
            eps: t.eps.as_ref().map_or(base.eps, Num::f64),
            k_bound,
            c_dfko,
            c_kv: t.c_kv.as_ref().map_or(base.c_kv, Num::f64),
            c_kv_prime: t.c_kv_prime.as_ref().map_or(base.c_kv_prime, Num::f64),
            gap: match &t.gap {
                None => base.gap,
                Some(GapSetting::Estimate) => GapStrategy::Estimate,
                Some(GapSetting::Given(c)) => GapStrategy::Given(c.f64()),
            },
            normalize: t.normalize.as_ref().map(Num::f64).or(base.normalize),
            delta: t.delta.as_ref().map_or(base.delta, Num::f64),
            max_moment_order: t.max_order.unwrap_or(base.max_moment_order),
            nets,
            estimator: self.estimator_config(dist, d)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Exact ε for net construction.
    pub fn eps_exact(&self) -> Option<Rational> {
        self.tester.as_ref().and_then(|t| t.eps.as_ref()).map(|n| n.0.clone())
    }

    pub fn zeta(&self) -> Option<f64> {
        self.nets.as_ref().and_then(|n| n.zeta.as_ref()).map(Num::f64)
    }
}
