//! Indistinguishable instance ensembles built from a moment-sparsity witness.
//!
//! Given p (s-sparse) and q (t-sparse) over x_1..x_k with identical output
//! laws, split n variables into n/k blocks. A YES target is p applied to a
//! uniformly chosen block, a NO target is q applied to one. Every label has
//! the same law under both, so only the joint structure of many samples can
//! tell them apart.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::FiniteDistribution;
use crate::error::{Error, Result};
use crate::exactdist::{output_distribution, DiscreteRV};
use crate::momest::sampling::{derive_seed, rng_from};
use crate::msg::search::MsgWitness;
use crate::poly::{CompiledPoly, MultilinearPolynomial};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    Yes,
    No,
}

#[derive(Clone, Debug)]
pub struct HardInstanceEnsemble {
    pub p: MultilinearPolynomial,
    pub q: MultilinearPolynomial,
    pub dist: FiniteDistribution,
    /// Block width: the witness lives on x_1..x_k.
    pub k: u32,
    pub n: u32,
    pub case: Case,
}

impl HardInstanceEnsemble {
    pub fn new(witness: &MsgWitness, dist: &FiniteDistribution, n: u32, case: Case) -> Result<Self> {
        let k = witness
            .p
            .active_variables()
            .into_iter()
            .chain(witness.q.active_variables())
            .max()
            .unwrap_or(1);
        if n == 0 || n % k != 0 {
            return Err(Error::InvalidArgument(format!("n = {n} must be a positive multiple of the block width {k}")));
        }
        Ok(HardInstanceEnsemble { p: witness.p.clone(), q: witness.q.clone(), dist: dist.clone(), k, n, case })
    }

    pub fn blocks(&self) -> u32 {
        self.n / self.k
    }

    /// The polynomial applied to the chosen block.
    pub fn target(&self) -> &MultilinearPolynomial {
        match self.case {
            Case::Yes => &self.p,
            Case::No => &self.q,
        }
    }

    /// The target as a polynomial over x_1..x_n when block `i` is chosen.
    pub fn target_on_block(&self, i: u32) -> MultilinearPolynomial {
        self.target().shift_vars(i * self.k)
    }
}

/// Sampling oracle for one target drawn from an ensemble.
#[derive(Clone, Debug)]
pub struct HardOracle {
    block: u32,
    k: usize,
    n: usize,
    values: Vec<f64>,
    sampler: WeightedIndex<f64>,
    target: CompiledPoly,
    rng: ChaCha8Rng,
}

impl HardOracle {
    pub fn block(&self) -> u32 {
        self.block
    }

    /// One labeled example (x ∈ support^n, y = r(x_block)).
    pub fn sample(&mut self) -> (Vec<f64>, f64) {
        let x: Vec<f64> = (0..self.n).map(|_| self.values[self.sampler.sample(&mut self.rng)]).collect();
        let lo = self.block as usize * self.k;
        let y = self.target.eval(&x[lo..lo + self.k]);
        (x, y)
    }

    pub fn samples(&mut self, m: usize) -> Vec<(Vec<f64>, f64)> {
        (0..m).map(|_| self.sample()).collect()
    }
}

/// Draws the block once, then serves noiseless labeled examples.
pub fn make_hard_instance(ensemble: &HardInstanceEnsemble, seed: u64) -> Result<HardOracle> {
    let mut rng = rng_from(seed);
    let block = rng.gen_range(0..ensemble.blocks());
    let vars: Vec<u32> = (1..=ensemble.k).collect();
    let sampler = WeightedIndex::new(ensemble.dist.probs_f64())
        .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
    Ok(HardOracle {
        block,
        k: ensemble.k as usize,
        n: ensemble.n as usize,
        values: ensemble.dist.values_f64(),
        sampler,
        target: ensemble.target().compile(&vars),
        rng,
    })
}

/// Exact law of a single label. The block choice does not matter, since
/// every block has the same product law.
pub fn label_marginal(ensemble: &HardInstanceEnsemble) -> Result<DiscreteRV> {
    output_distribution(ensemble.target(), &ensemble.dist)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantagePoint {
    pub n: u32,
    pub m: usize,
    /// Pr[say NO | NO] − Pr[say NO | YES].
    pub advantage: f64,
    pub no_given_no: f64,
    pub no_given_yes: f64,
    pub trials: usize,
}

/// For each block, the index of the first sample its p- and q-labels
/// disagree with (or m if none does).
fn first_inconsistency(
    samples: &[(Vec<f64>, f64)],
    k: usize,
    blocks: usize,
    p: &CompiledPoly,
    q: &CompiledPoly,
) -> Vec<(usize, usize)> {
    let m = samples.len();
    (0..blocks)
        .map(|b| {
            let lo = b * k;
            let first = |f: &CompiledPoly| {
                samples
                    .iter()
                    .position(|(x, y)| (f.eval(&x[lo..lo + k]) - y).abs() > 1e-9 * (1.0 + y.abs()))
                    .unwrap_or(m)
            };
            (first(p), first(q))
        })
        .collect()
}

/// Says NO iff some block explains the labels as q and none explains them
/// as p, using the first m samples.
fn says_no(table: &[(usize, usize)], m: usize) -> bool {
    let p_ok = table.iter().any(|&(fp, _)| fp >= m);
    let q_ok = table.iter().any(|&(_, fq)| fq >= m);
    q_ok && !p_ok
}

/// Empirical advantage of the block-consistency distinguisher, for each m.
///
/// Each trial draws one YES and one NO target and max(ms) samples from
/// each; smaller m reuse prefixes, so every trial's decision is monotone in m.
pub fn transcript_experiment(
    yes: &HardInstanceEnsemble,
    no: &HardInstanceEnsemble,
    ms: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<AdvantagePoint>> {
    if yes.case != Case::Yes || no.case != Case::No || yes.n != no.n || yes.k != no.k {
        return Err(Error::InvalidArgument("need matching YES and NO ensembles".into()));
    }
    let m_max = ms.iter().copied().max().unwrap_or(0);
    let k = yes.k as usize;
    let blocks = yes.blocks() as usize;
    let vars: Vec<u32> = (1..=yes.k).collect();
    let (pc, qc) = (yes.p.compile(&vars), yes.q.compile(&vars));
    let tables: Vec<(Vec<(usize, usize)>, Vec<(usize, usize)>)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut oy = make_hard_instance(yes, derive_seed(seed, 1, t as u64))?;
            let mut on = make_hard_instance(no, derive_seed(seed, 2, t as u64))?;
            let sy = oy.samples(m_max);
            let sn = on.samples(m_max);
            Ok((first_inconsistency(&sy, k, blocks, &pc, &qc), first_inconsistency(&sn, k, blocks, &pc, &qc)))
        })
        .collect::<Result<_>>()?;
    Ok(ms
        .iter()
        .map(|&m| {
            let tf = trials.max(1) as f64;
            let ny = tables.iter().filter(|(ty, _)| says_no(ty, m)).count() as f64 / tf;
            let nn = tables.iter().filter(|(_, tn)| says_no(tn, m)).count() as f64 / tf;
            AdvantagePoint { n: yes.n, m, advantage: nn - ny, no_given_no: nn, no_given_yes: ny, trials }
        })
        .collect())
}

/// CSV with header "n,m,advantage".
pub fn advantage_csv(points: &[AdvantagePoint]) -> String {
    let mut out = String::from("n,m,advantage\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.n, p.m, p.advantage));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msg::search::certify_witness;
    use crate::msg::trees::{decision_tree_polynomial, disjoint_tree_sum};

    fn rad() -> FiniteDistribution {
        FiniteDistribution::rademacher()
    }

    fn tree_witness() -> MsgWitness {
        let p = MultilinearPolynomial::var(1);
        let q = decision_tree_polynomial(2, None).unwrap();
        certify_witness(&p, &q, &rad()).unwrap().expect("tree witness certifies")
    }

    #[test]
    fn marginals_match_and_are_uniform_signs() {
        let w = tree_witness();
        let yes = HardInstanceEnsemble::new(&w, &rad(), 12, Case::Yes).unwrap();
        let no = HardInstanceEnsemble::new(&w, &rad(), 12, Case::No).unwrap();
        let a = label_marginal(&yes).unwrap();
        let b = label_marginal(&no).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, DiscreteRV::from_distribution(&rad()));
    }

    #[test]
    fn disjoint_sum_marginals_match() {
        let p = MultilinearPolynomial::var(1).add(&MultilinearPolynomial::var(2));
        let q = disjoint_tree_sum(&[2, 2]).unwrap();
        let w = certify_witness(&p, &q, &rad()).unwrap().unwrap();
        let yes = HardInstanceEnsemble::new(&w, &rad(), 12, Case::Yes).unwrap();
        let no = HardInstanceEnsemble::new(&w, &rad(), 12, Case::No).unwrap();
        assert_eq!(label_marginal(&yes).unwrap(), label_marginal(&no).unwrap());
    }

    #[test]
    fn block_width_must_divide_n() {
        let w = tree_witness();
        assert!(HardInstanceEnsemble::new(&w, &rad(), 10, Case::Yes).is_err());
    }

    #[test]
    fn yes_labels_depend_only_on_block() {
        let w = tree_witness();
        let ens = HardInstanceEnsemble::new(&w, &rad(), 9, Case::Yes).unwrap();
        let mut o = make_hard_instance(&ens, 4).unwrap();
        let b = o.block() as usize;
        let target = ens.target_on_block(o.block());
        for (x, y) in o.samples(50) {
            assert_eq!(y, x[b * 3]);
            assert_eq!(y, target.eval_f64(|v| x[v as usize - 1]));
        }
    }

    #[test]
    fn advantage_curve() {
        let w = tree_witness();
        let yes = HardInstanceEnsemble::new(&w, &rad(), 9, Case::Yes).unwrap();
        let no = HardInstanceEnsemble::new(&w, &rad(), 9, Case::No).unwrap();
        let ms = [0, 1, 2, 4, 8, 16, 32];
        let pts = transcript_experiment(&yes, &no, &ms, 200, 7).unwrap();
        assert_eq!(pts[0].advantage, 0.0);
        for w in pts.windows(2) {
            assert!(w[1].advantage >= w[0].advantage);
        }
        assert!(pts.last().unwrap().advantage > 0.9);
        assert!(advantage_csv(&pts).starts_with("n,m,advantage\n9,0,0\n"));
    }
}
