//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any fails.

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polysparse::coarse::{self, CoarseConfig};
use polysparse::dfkolab::{self, random_multilinear, NoiseOperatorSpec};
use polysparse::exactdist::{output_distribution, wasserstein1, DiscreteRV};
use polysparse::hardness::{label_marginal, transcript_experiment, Case, HardInstanceEnsemble};
use polysparse::momest::estimate::{estimate_clean_moments, EstimatorConfig, Oracle};
use polysparse::momest::{cumulants_to_moments, moments_to_cumulants, NoiseSpec};
use polysparse::msg::{self, certify_witness, disjoint_tree_sum, find_msg_witness, MsgWitness, SearchSpec};
use polysparse::nets::{self, NetConfig};
use polysparse::rational::{self, frac, Rational};
use polysparse::report::Verdict;
use polysparse::sharp::{self, SharpConfig};
use polysparse::{validate_distribution, FiniteDistribution, Monomial, MultilinearPolynomial};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rad() -> FiniteDistribution {
    FiniteDistribution::rademacher()
}

fn skewed() -> FiniteDistribution {
    validate_distribution(vec![(frac(-2, 1), frac(1, 5)), (frac(1, 2), frac(4, 5))]).unwrap()
}

fn three_point() -> FiniteDistribution {
    validate_distribution(vec![(frac(-1, 1), frac(1, 3)), (frac(0, 1), frac(1, 2)), (frac(2, 1), frac(1, 6))]).unwrap()
}

fn dists() -> [FiniteDistribution; 3] {
    [rad(), skewed(), three_point()]
}

fn rand_poly(rng: &mut ChaCha8Rng, n: u32, d: usize, max_terms: usize, max_num: i64, den: i64) -> MultilinearPolynomial {
    let terms = rng.gen_range(1..=max_terms);
    random_multilinear(rng, n, d, terms, max_num, den)
}

fn law(p: &MultilinearPolynomial, d: &FiniteDistribution) -> DiscreteRV {
    output_distribution(p, d).unwrap()
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let t = start.elapsed();
    if t > limit {
        return Err(format!("took {:.1?}, limit {:?}", t, limit));
    }
    Ok(())
}

fn c1_msg_witness() -> Outcome {
    let start = Instant::now();
    let out = find_msg_witness(&rad(), 2, 1, 4, &SearchSpec::default()).map_err(|e| e.to_string())?;
    let w = out.witness.ok_or("no witness found")?;
    ensure!(w.p.sparsity() <= 1 && w.q.sparsity() >= 4, "sparsities {} / {}", w.p.sparsity(), w.q.sparsity());
    let (a, b) = (law(&w.p, &rad()), law(&w.q, &rad()));
    ensure!(a.atoms() == b.atoms(), "atoms differ: {} vs {}", a.to_text(), b.to_text());
    within(Duration::from_secs(10), start)?;
    Ok(format!("q has {} terms, law {}", w.q.sparsity(), a.to_text().trim_end().replace('\n', "; ")))
}

fn c2_disjoint_sum() -> Outcome {
    let start = Instant::now();
    let p = MultilinearPolynomial::var(1).add(&MultilinearPolynomial::var(2));
    let q = disjoint_tree_sum(&[2, 2]).map_err(|e| e.to_string())?;
    ensure!(q.sparsity() == 8, "q sparsity {}", q.sparsity());
    let (a, b) = (law(&p, &rad()), law(&q, &rad()));
    ensure!(a == b, "laws differ");
    ensure!(certify_witness(&p, &q, &rad()).unwrap().is_some(), "not certified");
    within(Duration::from_secs(30), start)?;
    Ok("x1+x2 and two disjoint depth-2 trees share their law".into())
}

fn c3_cumulants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut rvs = Vec::new();
    for i in 0..100 {
        let dist = &dists()[i % 3];
        let p = rand_poly(&mut rng, 3, 2, 4, 5, 3);
        let q = rand_poly(&mut rng, 3, 2, 4, 5, 3).shift_vars(3);
        let (a, b) = (law(&p, dist), law(&q, dist));
        let sum = law(&p.add(&q), dist);
        ensure!(a.convolve(&b) == sum, "pair {i}: sum law is not the convolution");
        let (ka, kb, ks) = (moments_to_cumulants(&a.moments(8)), moments_to_cumulants(&b.moments(8)), moments_to_cumulants(&sum.moments(8)));
        for l in 0..8 {
            ensure!(ks[l] == &ka[l] + &kb[l], "pair {i}: additivity fails at order {}", l + 1);
        }
        let m: Vec<f64> = sum.moments(12).iter().map(rational::to_f64).collect();
        let back = cumulants_to_moments(&moments_to_cumulants(&m));
        for (x, y) in m.iter().zip(&back) {
            worst = worst.max((x - y).abs() / x.abs().max(1e-300));
        }
        rvs.extend([a, b, sum]);
    }
    ensure!(worst <= 1e-10, "round trip relative error {worst:e}");
    for (i, rv) in rvs.iter().enumerate() {
        let y = rv.shift(&-rv.mean());
        let k = moments_to_cumulants(&y.moments(10));
        for l in 1..=10u32 {
            let fact: Rational = (1..=l as i64).map(rational::int).product();
            // |κ_ℓ| ≤ E|Y|^ℓ e^ℓ ℓ!; e^ℓ is bounded below by the rational (271/100)^ℓ.
            let bound = y.abs_moment(l) * rational::pow(&frac(271, 100), l) * fact;
            ensure!(rational::abs(&k[l as usize - 1]) <= bound, "rv {i}: cumulant bound fails at order {l}");
        }
    }
    Ok(format!("round trip worst {worst:.1e}; additivity on 100 pairs; κ bound on {} rvs", rvs.len()))
}

fn c4_deconvolution() -> Outcome {
    let start = Instant::now();
    let p = MultilinearPolynomial::var(1);
    let noise = NoiseSpec::gaussian(0.0, 1.0);
    let cfg = EstimatorConfig::default();
    let mut detail = Vec::new();
    for l in [2usize, 4] {
        let hits = (0..200u64)
            .filter(|&t| {
                let mut o = Oracle::simulated(&p, &rad(), &noise, 40_000 + t);
                let e = estimate_clean_moments(&mut o, l, 0.1, 0.1, &noise, 1.0, &cfg).unwrap();
                (e.value - 1.0).abs() <= 0.1
            })
            .count();
        ensure!(hits >= 180, "order {l}: {hits}/200 within τ");
        detail.push(format!("ℓ={l}: {hits}/200"));
    }
    within(Duration::from_secs(120), start)?;
    Ok(detail.join(", "))
}

fn c5_moment_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ds = dists();
    for i in 0..500 {
        let dist = &ds[i % 3];
        let d = rng.gen_range(1..=3);
        let n = rng.gen_range(d as u32..=if i % 3 == 2 { 7 } else { 10 });
        let p = rand_poly(&mut rng, n, d, 6, 6, 4);
        let q = [4.0, 6.0][i % 2];
        let h = dfkolab::hypercontractive_check(&p, q, dist).map_err(|e| e.to_string())?;
        ensure!(h.holds, "hypercontractivity fails on instance {i}: {h:?}");
        for l in 2..=6 {
            ensure!(dfkolab::noiseless_moment_check(&p, l, dist).unwrap(), "noiseless moment bound fails: instance {i}, ℓ={l}");
        }
        ensure!(dfkolab::sparse_small_values_check(&p, dist).unwrap(), "value bound fails on instance {i}");
    }
    Ok("500 instances × 3 bounds, zero violations".into())
}

fn c6_wasserstein() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ds = dists();
    for i in 0..200 {
        let dist = &ds[i % 3];
        let v: Vec<DiscreteRV> = (0..3).map(|_| law(&rand_poly(&mut rng, 3, 2, 3, 4, 2), dist)).collect();
        let w = |a: usize, b: usize| wasserstein1(&v[a], &v[b]);
        ensure!(w(0, 1) == w(1, 0), "triple {i}: asymmetric");
        ensure!(w(0, 2) <= w(0, 1) + w(1, 2), "triple {i}: triangle inequality fails");
        ensure!(w(0, 0).is_zero() && (w(0, 1).is_zero() == (v[0] == v[1])), "triple {i}: identity fails");
    }
    for i in 0..500 {
        let dist = &ds[i % 3];
        let p = rand_poly(&mut rng, 4, 3, 4, 5, 3);
        let q = rand_poly(&mut rng, 4, 3, 4, 5, 3);
        let w = wasserstein1(&law(&p, dist), &law(&q, dist));
        ensure!(&w * &w <= p.sub(&q).coeff_norm().squared.exact.unwrap(), "pair {i}: contraction fails");
    }
    // Toy gap: d = 1, s = T = 1, ε = 1/2. Oracle: a dense angle grid over the
    // two renaming classes of two-term polynomials, kept ε-far.
    let sparse: Vec<Vec<(f64, f64)>> = [(Monomial::var(1), 1.0), (Monomial::var(1), -1.0), (Monomial::constant(), 1.0), (Monomial::constant(), -1.0)]
        .into_iter()
        .map(|(m, c)| nets::float_law(&[m], &[c], &rad()))
        .collect();
    let mut oracle = f64::INFINITY;
    let n = 20_000;
    for pat in [[Monomial::constant(), Monomial::var(1)], [Monomial::var(1), Monomial::var(2)]] {
        for i in 0..n {
            let th = std::f64::consts::TAU * i as f64 / n as f64;
            let (a, b) = (th.cos(), th.sin());
            if a.powi(2).min(b.powi(2)) < 0.25 {
                continue;
            }
            let l = nets::float_law(&pat, &[a, b], &rad());
            for s in &sparse {
                oracle = oracle.min(nets::wasserstein1_f64(s, &l));
            }
        }
    }
    let cfg = NetConfig { max_terms: 2, ..NetConfig::default() };
    let g = nets::estimate_wasserstein_gap(&rad(), 1, 1, 1, &frac(1, 2), &cfg).map_err(|e| e.to_string())?;
    ensure!(g.c / 2.0 <= oracle && oracle <= 2.0 * g.c, "gap {} vs oracle {oracle}", g.c);
    Ok(format!("metric on 200 triples, contraction on 500 pairs, gap {:.4} vs grid minimum {oracle:.4}", g.c))
}

fn c7_noise_operator() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ds = dists();
    let mut negatives = 0;
    for i in 0..200 {
        let dist = &ds[i % 3];
        let lo = -dfkolab::rho_min(dist);
        // The first instances of each law sit exactly at −ρ_min.
        let rho = if i < 6 { lo.clone() } else { &lo + (Rational::one() - &lo) * frac(rng.gen_range(0..=64), 64) };
        negatives += usize::from(rho < Rational::zero());
        let f = rand_poly(&mut rng, 4, 3, 5, 5, 3);
        let spec = NoiseOperatorSpec::new(rho.clone(), dist).map_err(|e| e.to_string())?;
        ensure!(dfkolab::noise_routes_agree(&f, &spec).unwrap(), "routes disagree: instance {i}, ρ = {rho}");
        let sigma = &lo + (Rational::one() - &lo) * frac(rng.gen_range(0..=64), 64);
        let prod = &rho * &sigma;
        if prod >= lo {
            let s = NoiseOperatorSpec::new(sigma, dist).unwrap();
            let twice = dfkolab::noise_operator(&dfkolab::noise_operator(&f, &s).unwrap(), &spec).unwrap();
            let once = dfkolab::noise_operator(&f, &NoiseOperatorSpec::new(prod, dist).unwrap()).unwrap();
            ensure!(twice == once, "semigroup fails on instance {i}");
        }
    }
    Ok(format!("200 (f, ρ) pairs, {negatives} with ρ < 0"))
}

fn coarse_cfg() -> CoarseConfig {
    CoarseConfig { c_dfko: 0.5, ..CoarseConfig::default() }
}

/// Degree-1 sums over k² variables with coefficients ±1/k: unit norm and
/// (1 − 1/k²)^{1/2}-far from 1-sparse, with fourth moment 3 − 2/k² > 3/2.
fn far_sums() -> Vec<MultilinearPolynomial> {
    let mut out = Vec::new();
    for k in 2..=6i64 {
        let n = (k * k) as u32;
        for variant in 0..4 {
            let offset = if variant == 3 { 10 } else { 0 };
            out.push(MultilinearPolynomial::from_terms((1..=n).map(|i| {
                let neg = match variant {
                    1 => i % 2 == 0,
                    2 => i == 1,
                    _ => false,
                };
                (Monomial::var(i + offset), frac(if neg { -1 } else { 1 }, k))
            })));
        }
    }
    out
}

fn c8_coarse() -> Outcome {
    let cfg = coarse_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..100 {
        // s = 1, d = 1: a single term c·x_j or c, |c| ≤ 1.
        let c = frac(rng.gen_range(1..=8) * if rng.gen() { 1 } else { -1 }, 8);
        let p = if i % 5 == 0 {
            MultilinearPolynomial::constant(c)
        } else {
            MultilinearPolynomial::from_terms([(Monomial::var(rng.gen_range(1..=6)), c)])
        };
        let mut o = Oracle::exact(&p, &rad(), &NoiseSpec::None).unwrap();
        let r = coarse::coarse_test(&mut o, &cfg, &rad()).map_err(|e| e.to_string())?;
        ensure!(r.verdict == Verdict::Sparse, "sparse instance {i} got {}", r.verdict.as_str());
    }
    let far = far_sums();
    for (i, p) in far.iter().enumerate() {
        ensure!(p.is_far_from_sparse(1, &frac(1, 2)).unwrap(), "far instance {i} is not far");
        let rv = law(p, &rad());
        ensure!(!coarse::exact_moment_below_threshold(&rv, 4, &cfg, &rad()).unwrap(), "far instance {i} does not cross");
        let mut o = Oracle::exact_from_rv(rv, &NoiseSpec::None);
        let r = coarse::coarse_test(&mut o, &cfg, &rad()).map_err(|e| e.to_string())?;
        ensure!(r.verdict == Verdict::Far, "far instance {i} got {}", r.verdict.as_str());
    }
    let noise = NoiseSpec::gaussian(0.0, 0.2);
    let sparse = MultilinearPolynomial::var(1);
    let far = &far_sums()[4];
    let count = |p: &MultilinearPolynomial, want: Verdict, stream: u64| {
        (0..100u64)
            .filter(|&t| {
                let mut o = Oracle::simulated(p, &rad(), &noise, 80_000 + 1000 * stream + t);
                coarse::coarse_test(&mut o, &cfg, &rad()).unwrap().verdict == want
            })
            .count()
    };
    let (a, b) = (count(&sparse, Verdict::Sparse, 0), count(far, Verdict::Far, 1));
    ensure!(a >= 80 && b >= 80, "sampled: {a}/100 sparse accepted, {b}/100 far rejected");
    Ok(format!("exact 100/100 and 20/20; sampled {a}/100 and {b}/100"))
}

/// (tree + (3/4)x₄)·(4/5): unit norm, 2/5-far from 4-sparse.
fn far_witness(offset: u32, sign: i64) -> MultilinearPolynomial {
    MultilinearPolynomial::from_pairs(&[
        (frac(2 * sign, 5), &[1 + offset, 2 + offset]),
        (frac(-2 * sign, 5), &[1 + offset, 3 + offset]),
        (frac(2 * sign, 5), &[2 + offset]),
        (frac(2 * sign, 5), &[3 + offset]),
        (frac(3 * sign, 5), &[4 + offset]),
    ])
    .unwrap()
}

fn c9_sharp() -> Outcome {
    let cfg = SharpConfig::desk();
    let eps = rational::from_f64(cfg.eps).unwrap();
    let sparse_inputs: Vec<MultilinearPolynomial> = vec![
        MultilinearPolynomial::var(1),
        MultilinearPolynomial::var(5).scale(&frac(-1, 1)),
        MultilinearPolynomial::from_pairs(&[(frac(1, 1), &[1, 2])]).unwrap(),
        MultilinearPolynomial::from_pairs(&[(frac(-1, 1), &[3, 7])]).unwrap(),
    ];
    for p in &sparse_inputs {
        let mut o = Oracle::exact(p, &rad(), &NoiseSpec::None).unwrap();
        let r = sharp::test_sparsity(&mut o, &cfg, &rad()).map_err(|e| e.to_string())?;
        ensure!(r.verdict == Verdict::Sparse, "{} got {}", p, r.verdict.as_str());
    }
    let far_inputs: Vec<MultilinearPolynomial> = vec![far_witness(0, 1), far_witness(0, -1), far_witness(6, 1)];
    for p in &far_inputs {
        ensure!(p.is_far_from_sparse(cfg.t, &eps).unwrap(), "{p} is not certified far");
        let mut o = Oracle::exact(p, &rad(), &NoiseSpec::None).unwrap();
        let r = sharp::test_sparsity(&mut o, &cfg, &rad()).map_err(|e| e.to_string())?;
        ensure!(r.verdict == Verdict::Far, "{} got {}", p, r.verdict.as_str());
    }
    let noise = NoiseSpec::gaussian(0.0, 0.2);
    let count = |p: &MultilinearPolynomial, want: Verdict, stream: u64| {
        (0..100u64)
            .filter(|&t| {
                let mut o = Oracle::simulated(p, &rad(), &noise, 90_000 + 1000 * stream + t);
                sharp::test_sparsity(&mut o, &cfg, &rad()).unwrap().verdict == want
            })
            .count()
    };
    let (a, b) = (count(&sparse_inputs[0], Verdict::Sparse, 0), count(&far_inputs[0], Verdict::Far, 1));
    ensure!(a >= 80 && b >= 80, "sampled: {a}/100 accepted, {b}/100 rejected");
    // T ≥ Υ: the sharp tester must hand over to the coarse tester verbatim.
    let small = SharpConfig { d: 1, t: 11, eps: 1.0, c_dfko: 1.0, ..SharpConfig::desk() };
    for seed in 0..5u64 {
        let mut a1 = Oracle::simulated(&sparse_inputs[0], &rad(), &noise, seed);
        let mut a2 = a1.clone();
        let r1 = sharp::test_sparsity(&mut a1, &small, &rad()).unwrap();
        let r2 = coarse::coarse_test(&mut a2, &small.coarse_config(small.eps), &rad()).unwrap();
        ensure!(r1 == r2 && r1.to_json() == r2.to_json(), "phase-0 report differs at seed {seed}");
    }
    Ok(format!("exact 4/4 and 3/3; sampled {a}/100 and {b}/100; phase 0 identical"))
}

fn c10_hardness() -> Outcome {
    let spec = SearchSpec::default();
    let mut witnesses: Vec<(MsgWitness, FiniteDistribution)> = Vec::new();
    for (d, s, t) in [(1, 1, 1), (2, 1, 2), (2, 1, 3), (2, 1, 4)] {
        if let Some(w) = find_msg_witness(&rad(), d, s, t, &spec).unwrap().witness {
            witnesses.push((w, rad()));
        }
    }
    for depths in [vec![2, 2], vec![2, 2, 2]] {
        let p = MultilinearPolynomial::from_terms((1..=depths.len() as u32).map(|i| (Monomial::var(i), Rational::one())));
        let q = disjoint_tree_sum(&depths).unwrap();
        witnesses.push((certify_witness(&p, &q, &rad()).unwrap().ok_or("disjoint sum not certified")?, rad()));
    }
    for (i, (w, dist)) in witnesses.iter().enumerate() {
        let k = w.p.active_variables().into_iter().chain(w.q.active_variables()).max().unwrap_or(1);
        let yes = HardInstanceEnsemble::new(w, dist, 4 * k, Case::Yes).unwrap();
        let no = HardInstanceEnsemble::new(w, dist, 4 * k, Case::No).unwrap();
        ensure!(label_marginal(&yes).unwrap() == label_marginal(&no).unwrap(), "witness {i}: marginals differ");
    }
    let (w, dist) = &witnesses.iter().find(|(w, _)| w.q.sparsity() >= 4).ok_or("no t = 4 witness")?;
    let yes = HardInstanceEnsemble::new(w, dist, 24, Case::Yes).unwrap();
    let no = HardInstanceEnsemble::new(w, dist, 24, Case::No).unwrap();
    let ms = [0, 1, 2, 4, 8, 16, 32, 64];
    let pts = transcript_experiment(&yes, &no, &ms, 400, 10).unwrap();
    ensure!(pts[0].advantage == 0.0, "advantage at m = 0 is {}", pts[0].advantage);
    for p in pts.windows(2) {
        ensure!(p[1].advantage >= p[0].advantage, "advantage drops from m = {} to m = {}", p[0].m, p[1].m);
    }
    let curve: Vec<String> = pts.iter().map(|p| format!("{}:{:.2}", p.m, p.advantage)).collect();
    Ok(format!("{} witnesses; curve {}", witnesses.len(), curve.join(" ")))
}

fn c11_plug_ins() -> Outcome {
    let phi = msg::phi_bound(1, 1, 2).map_err(|e| e.to_string())?;
    ensure!(phi == 1024u32.into(), "Φ(1,1,2) = {phi}");
    let u = coarse::upsilon(1.0, 1, 1, 1.0, 1.0, 1.0).map_err(|e| e.to_string())?;
    ensure!(u == 11, "Υ = {u}");
    let r = dfkolab::rho_min(&rad());
    ensure!(r == frac(1, 4), "ρ_min = {r}");
    Ok("Φ(1,1,2) = 1024, Υ = 11, ρ_min = 1/4".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("msg witness reproduction", c1_msg_witness),
        ("disjoint-sum witness", c2_disjoint_sum),
        ("moment/cumulant suite", c3_cumulants),
        ("noise deconvolution coverage", c4_deconvolution),
        ("hypercontractivity and moment bounds", c5_moment_bounds),
        ("wasserstein engine", c6_wasserstein),
        ("noise operator", c7_noise_operator),
        ("coarse tester", c8_coarse),
        ("sharp tester", c9_sharp),
        ("hardness ensembles", c10_hardness),
        ("formula plug-ins", c11_plug_ins),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {name} ({secs:.1}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} ({secs:.1}s): {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
