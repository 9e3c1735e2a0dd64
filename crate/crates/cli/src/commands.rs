use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use num_traits::Zero;
use rayon::prelude::*;
use serde_json::{json, Value};

use polysparse::coarse;
use polysparse::dfkolab::{self, NoiseOperatorSpec, ScaledPoly, TailInstance};
use polysparse::exactdist::{moment_distance, output_distribution, wasserstein1, DiscreteRV};
use polysparse::hardness::{self, Case, HardInstanceEnsemble};
use polysparse::momest::estimate::{estimate_clean_moments, Oracle};
use polysparse::momest::sampling::derive_seed;
use polysparse::momest::{draw_labeled_samples, LabeledSampleBatch};
use polysparse::msg::{certify_witness, find_msg_witness, MsgWitness, SearchSpec};
use polysparse::nets;
use polysparse::rational::{self, Rational};
use polysparse::report::{TesterReport, Verdict};
use polysparse::sharp;
use polysparse::{FiniteDistribution, MultilinearPolynomial};

use crate::config::{ExperimentConfig, Num};
use crate::{CalibrateMode, CliError, Common, DfkoCmd, HardnessCmd, MsgCmd, NetCmd, Status, TesterArgs, VerifyCheck, WitnessArgs};

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display()))),
        None => match std::io::stdout().lock().write_all(text.as_bytes()) {
            // A closed reader (e.g. `| head`) is not an error.
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Usage(format!("stdout: {e}"))),
            _ => Ok(()),
        },
    }
}

fn emit_json(out: Option<&Path>, v: &Value) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    emit(out, &s)
}

fn need_seed(seed: Option<u64>, what: &str) -> Result<u64, CliError> {
    seed.ok_or_else(|| CliError::Usage(format!("{what} draws samples: --seed is required")))
}

fn read_poly(path: &Path) -> Result<MultilinearPolynomial, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(MultilinearPolynomial::parse_text(&text)?)
}

fn require_poly(cfg: &ExperimentConfig, flag: Option<&Path>) -> Result<MultilinearPolynomial, CliError> {
    cfg.polynomial(flag)?.ok_or_else(|| CliError::Usage("no polynomial: pass --poly or set [polynomial]".into()))
}

pub fn simulate(common: &Common, poly: Option<&Path>, m: usize, seed: u64) -> Result<Status, CliError> {
    let cfg = ExperimentConfig::load(common.config.as_deref())?;
    let p = require_poly(&cfg, poly)?;
    let batch = draw_labeled_samples(&p, &cfg.distribution()?, &cfg.noise()?, m, seed)?;
    let mut buf = Vec::new();
    batch.write_csv(&mut buf)?;
    emit(common.out.as_deref(), &String::from_utf8(buf).expect("csv is utf-8"))?;
    Ok(Status::Done)
}

/// The oracle for trial `i`, which only matters for simulated oracles.
enum OracleSource {
    Exact(Oracle),
    Recorded(Oracle),
    Simulated { p: MultilinearPolynomial, seed: u64 },
}

struct Setup {
    cfg: ExperimentConfig,
    dist: FiniteDistribution,
    noise: polysparse::momest::NoiseSpec,
    source: OracleSource,
}

fn setup(t: &TesterArgs, what: &str) -> Result<Setup, CliError> {
    let cfg = ExperimentConfig::load(t.common.config.as_deref())?;
    let dist = cfg.distribution()?;
    let noise = cfg.noise()?;
    let source = if let Some(path) = &t.samples {
        let f = fs::File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let batch = LabeledSampleBatch::read_csv(f)?;
        OracleSource::Recorded(Oracle::recorded(batch.ys, &noise))
    } else {
        let p = require_poly(&cfg, t.poly.as_deref())?;
        if t.exact || cfg.exact_oracle() {
            OracleSource::Exact(Oracle::exact(&p, &dist, &noise)?)
        } else {
            OracleSource::Simulated { p, seed: need_seed(t.seed, what)? }
        }
    };
    Ok(Setup { cfg, dist, noise, source })
}

impl Setup {
    fn oracle(&self, trial: usize, trials: usize) -> Oracle {
        match &self.source {
            OracleSource::Exact(o) | OracleSource::Recorded(o) => o.clone(),
            OracleSource::Simulated { p, seed } => {
                let s = if trials == 1 { *seed } else { derive_seed(*seed, 0, trial as u64) };
                Oracle::simulated(p, &self.dist, &self.noise, s)
            }
        }
    }

    fn seed(&self, trial: usize, trials: usize) -> Option<u64> {
        match &self.source {
            OracleSource::Simulated { seed, .. } => Some(if trials == 1 { *seed } else { derive_seed(*seed, 0, trial as u64) }),
            _ => None,
        }
    }
}

pub fn estimate_moments(t: &TesterArgs, order: usize, tau: &Num, delta: &Num) -> Result<Status, CliError> {
    let su = setup(t, "estimate-moments")?;
    let est = su.cfg.estimator_config(&su.dist, su.cfg.tester.as_ref().and_then(|x| x.d).unwrap_or(1))?;
    let k = su.cfg.tester.as_ref().and_then(|x| x.k.as_ref()).map_or(1.0, Num::f64);
    let mut o = su.oracle(0, 1);
    match estimate_clean_moments(&mut o, order, tau.f64(), delta.f64(), &su.noise, k, &est) {
        Ok(e) => {
            emit_json(t.common.out.as_deref(), &serde_json::to_value(&e).expect("estimate serializes"))?;
            Ok(Status::Done)
        }
        Err(e) if e.is_budget() => {
            emit_json(t.common.out.as_deref(), &json!({ "verdict": "inconclusive", "diagnostic": e.to_string() }))?;
            Ok(Status::Inconclusive)
        }
        Err(e) => Err(e.into()),
    }
}

fn run_trials(
    t: &TesterArgs,
    su: &Setup,
    test: impl Fn(&mut Oracle) -> polysparse::Result<TesterReport> + Sync,
) -> Result<Status, CliError> {
    let trials = t.trials.or(su.cfg.trials).unwrap_or(1).max(1);
    if trials > 1 && !matches!(su.source, OracleSource::Simulated { .. }) {
        return Err(CliError::Usage("--trials needs a simulated oracle".into()));
    }
    let reports: Vec<TesterReport> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut o = su.oracle(i, trials);
            let start = Instant::now();
            let mut r = test(&mut o)?;
            r.seed = su.seed(i, trials);
            if t.timing {
                r.wall_time_ms = Some(start.elapsed().as_secs_f64() * 1e3);
            }
            if let Some(s) = &su.cfg.scenario {
                r.param("scenario", s);
            }
            Ok(r)
        })
        .collect::<polysparse::Result<_>>()?;
    let out = t.common.out.as_deref();
    if trials == 1 {
        let r = &reports[0];
        emit_json(out, &serde_json::to_value(r).expect("report serializes"))?;
        return Ok(if r.verdict == Verdict::Inconclusive { Status::Inconclusive } else { Status::Done });
    }
    let count = |v: Verdict| reports.iter().filter(|r| r.verdict == v).count();
    let (sparse, far, inc) = (count(Verdict::Sparse), count(Verdict::Far), count(Verdict::Inconclusive));
    emit_json(
        out,
        &json!({
            "scenario": su.cfg.scenario,
            "trials": trials,
            "accept_rate": sparse as f64 / trials as f64,
            "reject_rate": far as f64 / trials as f64,
            "counts": { "s-sparse": sparse, "far-from-T-sparse": far, "inconclusive": inc },
            "reports": reports,
        }),
    )?;
    Ok(if inc == trials { Status::Inconclusive } else { Status::Done })
}

pub fn coarse_test(t: &TesterArgs) -> Result<Status, CliError> {
    let su = setup(t, "coarse-test")?;
    let cfg = su.cfg.coarse_config(&su.dist)?;
    run_trials(t, &su, |o| coarse::coarse_test(o, &cfg, &su.dist))
}

pub fn sharp_test(t: &TesterArgs) -> Result<Status, CliError> {
    let su = setup(t, "sharp-test")?;
    let cfg = su.cfg.sharp_config(&su.dist)?;
    run_trials(t, &su, |o| sharp::test_sparsity(o, &cfg, &su.dist))
}

fn write_witness(dir: &Path, w: &MsgWitness) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Usage(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    fs::write(dir.join("p.poly"), w.p.to_text()).map_err(io)?;
    fs::write(dir.join("q.poly"), w.q.to_text()).map_err(io)?;
    let mut cert = serde_json::to_string_pretty(&w.to_json()).expect("json values serialize");
    cert.push('\n');
    fs::write(dir.join("certificate.json"), cert).map_err(io)
}

pub fn msg(cmd: MsgCmd) -> Result<Status, CliError> {
    match cmd {
        MsgCmd::Search { common, d, s, t, denominator, max_numerator, dir } => {
            let cfg = ExperimentConfig::load(common.config.as_deref())?;
            let dist = cfg.distribution()?;
            let spec = SearchSpec { denominator, max_numerator, ..SearchSpec::default() };
            let outcome = find_msg_witness(&dist, d, s, t, &spec)?;
            let mut v = json!({
                "d": d, "s": s, "t": t,
                "distribution": dist.id(),
                "found": outcome.witness.is_some(),
                "exhaustive": outcome.exhaustive,
                "candidates": outcome.candidates,
                "note": outcome.note,
            });
            if let Some(w) = &outcome.witness {
                v["witness"] = w.to_json();
                if let Some(dir) = &dir {
                    write_witness(dir, w)?;
                }
            }
            emit_json(common.out.as_deref(), &v)?;
            Ok(if outcome.witness.is_some() { Status::Done } else { Status::Inconclusive })
        }
        MsgCmd::Witness { common, p, q } => {
            let cfg = ExperimentConfig::load(common.config.as_deref())?;
            let dist = cfg.distribution()?;
            let (p, q) = (read_poly(&p)?, read_poly(&q)?);
            let v = match certify_witness(&p, &q, &dist)? {
                Some(w) => json!({ "certified": true, "witness": w.to_json() }),
                None => json!({ "certified": false, "distribution": dist.id() }),
            };
            emit_json(common.out.as_deref(), &v)?;
            Ok(Status::Done)
        }
    }
}

pub fn net(cmd: NetCmd) -> Result<Status, CliError> {
    let NetCmd::Build { common, zeta, dir } = cmd;
    let cfg = ExperimentConfig::load(common.config.as_deref())?;
    let dist = cfg.distribution()?;
    let t = cfg.tester.clone().unwrap_or_default();
    let missing = |f: &str| CliError::Usage(format!("net build needs tester.{f}"));
    let (d, s, tt) = (t.d.ok_or_else(|| missing("d"))?, t.s.ok_or_else(|| missing("s"))?, t.t.ok_or_else(|| missing("t"))?);
    let eps = cfg.eps_exact().ok_or_else(|| missing("eps"))?;
    let net_cfg = cfg.net_config(t.k.as_ref().map_or(1.0, Num::f64), t.c_dfko.as_ref().map_or(1.0, Num::f64));
    let zeta = zeta
        .map(|z| z.f64())
        .or(cfg.zeta())
        .ok_or_else(|| CliError::Usage("no covering radius: pass --zeta or set nets.zeta".into()))?;
    let (p, far) = nets::construct_poly_nets(&dist, d, s, tt, &eps, zeta, &net_cfg)?;
    p.save(&dir.join("sparse"))?;
    far.save(&dir.join("far"))?;
    let summary = |n: &nets::PolyNet| {
        json!({
            "kind": n.kind, "zeta": n.zeta, "tau": n.tau, "members": n.members.len(),
            "candidates": n.candidates, "repaired": n.repaired, "term_cap": n.term_cap,
        })
    };
    emit_json(
        common.out.as_deref(),
        &json!({ "d": d, "s": s, "t": tt, "eps": rational::format_rational(&eps),
                 "sparse": summary(&p), "far": summary(&far) }),
    )?;
    Ok(Status::Done)
}

fn read_rv(path: &Path) -> Result<DiscreteRV, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(DiscreteRV::parse_text(&text)?)
}

pub fn wasserstein(a: &Path, b: &Path, moments: Option<u32>, out: Option<&Path>) -> Result<Status, CliError> {
    let (x, y) = (read_rv(a)?, read_rv(b)?);
    let w = wasserstein1(&x, &y);
    let mut v = json!({ "w1": rational::format_rational(&w), "w1_f64": rational::to_f64(&w) });
    if let Some(k) = moments {
        let md = moment_distance(&x, &y, k);
        v["moment_order"] = json!(k);
        v["moment_distance_sq"] = json!(md.squared.exact.as_ref().map(rational::format_rational));
        v["moment_distance"] = json!(md.value);
    }
    emit_json(out, &v)?;
    Ok(Status::Done)
}

fn t_squared(t: &Num) -> Rational {
    &t.0 * &t.0
}

pub fn dfko(cmd: DfkoCmd) -> Result<Status, CliError> {
    match cmd {
        DfkoCmd::Verify { common, poly, check } => {
            let cfg = ExperimentConfig::load(common.config.as_deref())?;
            let dist = cfg.distribution()?;
            let f = require_poly(&cfg, poly.as_deref())?;
            let v = match check {
                VerifyCheck::Tail { j, delta, t, c, normalize } => {
                    let sp = if normalize { ScaledPoly::unit(f)? } else { ScaledPoly::exact(f) };
                    let r = dfkolab::verify_tail_theorem(&sp, &j, &delta.0, &t_squared(&t), c.f64(), &dist)?;
                    serde_json::to_value(r)
                }
                VerifyCheck::FarSparse { s, t, eps, k, c } => {
                    serde_json::to_value(dfkolab::far_sparse_tail_check(&f, s, t, &eps.0, k.f64(), c.f64(), &dist)?)
                }
                VerifyCheck::Hypercontractive { q } => serde_json::to_value(dfkolab::hypercontractive_check(&f, q, &dist)?),
                VerifyCheck::Noise { rho } => {
                    let spec = NoiseOperatorSpec::new(rho.0.clone(), &dist)?;
                    let g = dfkolab::noise_operator(&f, &spec)?;
                    Ok(json!({
                        "rho": rational::format_rational(&rho.0),
                        "rho_min": rational::format_rational(&dfkolab::rho_min(&dist)),
                        "result": g.to_text(),
                        "routes_agree": dfkolab::noise_routes_agree(&f, &spec)?,
                    }))
                }
            }
            .expect("reports serialize");
            emit_json(common.out.as_deref(), &v)?;
            Ok(Status::Done)
        }
        DfkoCmd::Calibrate { common, mode } => {
            let cfg = ExperimentConfig::load(common.config.as_deref())?;
            let dist = cfg.distribution()?;
            match mode {
                CalibrateMode::Tail { delta, t, polys } => {
                    let family = polys
                        .iter()
                        .map(|p| {
                            Ok(TailInstance { f: ScaledPoly::unit(read_poly(p)?)?, j: vec![], delta: delta.0.clone(), t_sq: t_squared(&t) })
                        })
                        .collect::<Result<Vec<_>, CliError>>()?;
                    let c = dfkolab::calibrate(&family, &dist)?;
                    emit_json(common.out.as_deref(), &serde_json::to_value(&c).expect("calibration serializes"))?;
                    Ok(if c.max_feasible.is_some() { Status::Done } else { Status::Inconclusive })
                }
                CalibrateMode::FarSparse { s, eps, k, polys } => {
                    let mut tails = Vec::new();
                    let mut d = 1;
                    for p in &polys {
                        let f = read_poly(p)?;
                        d = d.max(f.degree());
                        tails.push(f);
                    }
                    let tails = tails
                        .iter()
                        .map(|f| coarse::exact_large_value_prob(&output_distribution(f, &dist)?, s, k.f64(), &dist, d))
                        .collect::<polysparse::Result<Vec<_>>>()?;
                    let m = rational::to_f64(dist.max_abs());
                    let c = coarse::calibrate_tail_constant(&tails, k.f64(), m, s, d, eps.f64());
                    emit_json(
                        common.out.as_deref(),
                        &json!({
                            "c_min": c,
                            "tails": tails.iter().map(rational::format_rational).collect::<Vec<_>>(),
                            "zero_tails": tails.iter().filter(|t| t.is_zero()).count(),
                        }),
                    )?;
                    Ok(if c.is_some() { Status::Done } else { Status::Inconclusive })
                }
            }
        }
    }
}

fn witness(w: &WitnessArgs) -> Result<(MsgWitness, FiniteDistribution), CliError> {
    let cfg = ExperimentConfig::load(w.common.config.as_deref())?;
    let dist = cfg.distribution()?;
    let (p, q) = (read_poly(&w.p)?, read_poly(&w.q)?);
    let wit = certify_witness(&p, &q, &dist)?
        .ok_or_else(|| CliError::Usage("p and q do not have identical output laws".into()))?;
    Ok((wit, dist))
}

pub fn hardness(cmd: HardnessCmd) -> Result<Status, CliError> {
    match cmd {
        HardnessCmd::Gen { w, n, case, m } => {
            let (wit, dist) = witness(&w)?;
            let case = match case.as_str() {
                "yes" => Case::Yes,
                "no" => Case::No,
                other => return Err(CliError::Usage(format!("case must be yes or no, got {other:?}"))),
            };
            let ens = HardInstanceEnsemble::new(&wit, &dist, n, case)?;
            let mut o = hardness::make_hard_instance(&ens, w.seed)?;
            let mut s = (1..=n).map(|i| format!("x_{i}")).collect::<Vec<_>>().join(",");
            s.push_str(",y\n");
            for (x, y) in o.samples(m) {
                for v in x {
                    s.push_str(&format!("{v},"));
                }
                s.push_str(&format!("{y}\n"));
            }
            emit(w.common.out.as_deref(), &s)?;
            Ok(Status::Done)
        }
        HardnessCmd::Curve { w, n, m, trials } => {
            let (wit, dist) = witness(&w)?;
            let mut points = Vec::new();
            for (i, &nn) in n.iter().enumerate() {
                let yes = HardInstanceEnsemble::new(&wit, &dist, nn, Case::Yes)?;
                let no = HardInstanceEnsemble::new(&wit, &dist, nn, Case::No)?;
                points.extend(hardness::transcript_experiment(&yes, &no, &m, trials, derive_seed(w.seed, 3, i as u64))?);
            }
            emit(w.common.out.as_deref(), &hardness::advantage_csv(&points))?;
            Ok(Status::Done)
        }
    }
}
