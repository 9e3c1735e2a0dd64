//! Seeded sample generation and reproducible empirical moments.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::noise::NoiseSpec;
use crate::distribution::FiniteDistribution;
use crate::error::{Error, Result};
use crate::poly::{CompiledPoly, MultilinearPolynomial};

/// Samples per independently seeded chunk. Fixed so output does not depend
/// on the thread count.
const CHUNK: usize = 4096;
/// Block length for the blocked pairwise summation.
const BLOCK: usize = 256;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic child seed for (seed, stream, index).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws x over the active variables and evaluates y = p(x) + η.
#[derive(Clone, Debug)]
pub struct Sampler {
    vars: Vec<u32>,
    poly: CompiledPoly,
    values: Vec<f64>,
    cumulative: Vec<f64>,
    noise: NoiseSpec,
}

impl Sampler {
    pub fn new(p: &MultilinearPolynomial, d: &FiniteDistribution, noise: &NoiseSpec) -> Self {
        let vars = p.active_variables();
        let poly = p.compile(&vars);
        let mut acc = 0.0;
        let cumulative = d
            .probs_f64()
            .iter()
            .map(|q| {
                acc += q;
                acc
            })
            .collect();
        Sampler { vars, poly, values: d.values_f64(), cumulative, noise: noise.clone() }
    }

    pub fn vars(&self) -> &[u32] {
        &self.vars
    }

    fn draw_atom<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let i = self.cumulative.iter().position(|&c| u < c).unwrap_or(self.values.len() - 1);
        self.values[i]
    }

    pub fn draw_into<R: Rng>(&self, rng: &mut R, x: &mut [f64]) -> Result<f64> {
        for slot in x.iter_mut() {
            *slot = self.draw_atom(rng);
        }
        Ok(self.poly.eval(x) + self.noise.sample(rng)?)
    }

    /// `m` labels from stream `stream` of `seed`; inputs are discarded.
    pub fn draw_labels(&self, m: usize, seed: u64, stream: u64) -> Result<Vec<f64>> {
        let chunks = m.div_ceil(CHUNK);
        let parts: Vec<Result<Vec<f64>>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = rng_from(derive_seed(seed, stream, c as u64));
                let n = CHUNK.min(m - c * CHUNK);
                let mut x = vec![0.0; self.vars.len()];
                (0..n).map(|_| self.draw_into(&mut rng, &mut x)).collect()
            })
            .collect();
        let mut out = Vec::with_capacity(m);
        for part in parts {
            out.extend(part?);
        }
        Ok(out)
    }
}

/// m labeled examples with the inputs restricted to p's active variables.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSampleBatch {
    pub vars: Vec<u32>,
    /// Row-major inputs, `m × vars.len()`.
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub seed: u64,
    pub noise: NoiseSpec,
    pub distribution_id: String,
}

impl LabeledSampleBatch {
    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        let k = self.vars.len();
        &self.xs[i * k..(i + 1) * k]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = self.vars.iter().map(|i| format!("x_{i}")).collect();
        header.push("y".into());
        wr.write_record(&header)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.x(i).iter().map(|v| format!("{v:?}")).collect();
            row.push(format!("{:?}", self.ys[i]));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a batch written by `write_csv`. Seed and noise are not stored
    /// in the CSV, so they come back as 0 and `None`.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        let k = header.len().checked_sub(1).ok_or_else(|| Error::Parse("empty CSV header".into()))?;
        if &header[k] != "y" {
            return Err(Error::Parse("last CSV column must be y".into()));
        }
        let vars = (0..k)
            .map(|j| {
                header[j]
                    .strip_prefix("x_")
                    .and_then(|s| s.parse::<u32>().ok())
                    .ok_or_else(|| Error::Parse(format!("bad column name {:?}", &header[j])))
            })
            .collect::<Result<Vec<u32>>>()?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            for j in 0..k {
                xs.push(rec[j].parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?);
            }
            ys.push(rec[k].parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?);
        }
        Ok(LabeledSampleBatch { vars, xs, ys, seed: 0, noise: NoiseSpec::None, distribution_id: String::new() })
    }
}

pub fn draw_labeled_samples(
    p: &MultilinearPolynomial,
    d: &FiniteDistribution,
    noise: &NoiseSpec,
    m: usize,
    seed: u64,
) -> Result<LabeledSampleBatch> {
    if m == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let sampler = Sampler::new(p, d, noise);
    let k = sampler.vars.len();
    let chunks = m.div_ceil(CHUNK);
    let parts: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from(derive_seed(seed, 0, c as u64));
            let n = CHUNK.min(m - c * CHUNK);
            let mut xs = vec![0.0; n * k];
            let mut ys = Vec::with_capacity(n);
            for i in 0..n {
                ys.push(sampler.draw_into(&mut rng, &mut xs[i * k..(i + 1) * k])?);
            }
            Ok((xs, ys))
        })
        .collect();
    let mut xs = Vec::with_capacity(m * k);
    let mut ys = Vec::with_capacity(m);
    for part in parts {
        let (a, b) = part?;
        xs.extend(a);
        ys.extend(b);
    }
    Ok(LabeledSampleBatch {
        vars: sampler.vars.clone(),
        xs,
        ys,
        seed,
        noise: noise.clone(),
        distribution_id: d.id(),
    })
}

/// Pairwise summation in a fixed tree order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Empirical raw moments of orders 1..=n: fixed-size blocks summed
/// sequentially, block sums combined pairwise.
pub fn empirical_moments(ys: &[f64], n: usize) -> Result<Vec<f64>> {
    if ys.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let blocks: Vec<Vec<f64>> = ys
        .par_chunks(BLOCK)
        .map(|blk| {
            let mut sums = vec![0.0; n];
            for &y in blk {
                let mut pw = 1.0;
                for s in sums.iter_mut() {
                    pw *= y;
                    *s += pw;
                }
            }
            sums
        })
        .collect();
    let m = ys.len() as f64;
    Ok((0..n)
        .map(|j| {
            let col: Vec<f64> = blocks.iter().map(|b| b[j]).collect();
            pairwise_sum(&col) / m
        })
        .collect())
}

pub fn empirical_raw_moment(batch: &LabeledSampleBatch, l: usize) -> Result<f64> {
    Ok(empirical_moments(&batch.ys, l)?[l - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::frac;

    #[test]
    fn constant_polynomial_without_noise() {
        let p = MultilinearPolynomial::constant(frac(3, 2));
        let b = draw_labeled_samples(&p, &FiniteDistribution::rademacher(), &NoiseSpec::None, 100, 7).unwrap();
        assert!(b.ys.iter().all(|&y| y == 1.5));
        assert_eq!(empirical_raw_moment(&b, 3).unwrap(), 1.5f64.powi(3));
    }

    #[test]
    fn same_seed_same_batch() {
        let p = MultilinearPolynomial::var(1).add(&MultilinearPolynomial::var(4));
        let rad = FiniteDistribution::rademacher();
        let noise = NoiseSpec::gaussian(0.0, 0.3);
        let a = draw_labeled_samples(&p, &rad, &noise, 10_000, 11).unwrap();
        let b = draw_labeled_samples(&p, &rad, &noise, 10_000, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.xs.iter().all(|&v| v == 1.0 || v == -1.0));
    }

    #[test]
    fn rademacher_sample_moments() {
        let p = MultilinearPolynomial::var(1);
        let b = draw_labeled_samples(&p, &FiniteDistribution::rademacher(), &NoiseSpec::None, 10_000, 3).unwrap();
        let m = empirical_moments(&b.ys, 2).unwrap();
        assert!(m[0].abs() <= 5.0 / 100.0);
        assert!((m[1] - 1.0).abs() < 0.1);
    }

    #[test]
    fn csv_round_trip() {
        let p = MultilinearPolynomial::var(2).add(&MultilinearPolynomial::var(5));
        let b = draw_labeled_samples(&p, &FiniteDistribution::rademacher(), &NoiseSpec::gaussian(0.0, 1.0), 50, 1).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("x_2,x_5,y\n"));
        let back = LabeledSampleBatch::read_csv(&buf[..]).unwrap();
        assert_eq!(back.xs, b.xs);
        assert_eq!(back.ys, b.ys);
    }

    #[test]
    fn empty_batch_is_error() {
        assert!(empirical_moments(&[], 2).is_err());
    }
}
