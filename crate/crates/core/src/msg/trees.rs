//! Complete decision trees written as multilinear polynomials.
//!
//! Internal nodes are numbered in breadth-first order 1..2^d−1 (children of
//! node i are 2i and 2i+1) and node i queries x_i. The left child is taken
//! when x_i = +1:
//!
//! f_i = ((1 + x_i)/2)·f_{2i} + ((1 − x_i)/2)·f_{2i+1}.

use crate::error::{Error, Result};
use crate::poly::{Monomial, MultilinearPolynomial};
use crate::rational::{frac, int, Rational};

/// Alternating leaves +1, −1, +1, −1, ...
pub fn alternating_leaves(d: u32) -> Vec<i64> {
    (0..1usize << d).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect()
}

/// Depth-d tree polynomial over x_1..x_{2^d−1}; `leaf_values` must hold 2^d
/// entries in {−1, 1}, alternating when `None`.
pub fn decision_tree_polynomial(d: u32, leaf_values: Option<&[i64]>) -> Result<MultilinearPolynomial> {
    if d == 0 || d > 20 {
        return Err(Error::InvalidArgument(format!("tree depth must be in 1..=20, got {d}")));
    }
    let default;
    let leaves = match leaf_values {
        Some(v) => v,
        None => {
            default = alternating_leaves(d);
            &default
        }
    };
    if leaves.len() != 1 << d {
        return Err(Error::InvalidArgument(format!("depth {d} needs {} leaves, got {}", 1 << d, leaves.len())));
    }
    if leaves.iter().any(|&v| v != 1 && v != -1) {
        return Err(Error::InvalidArgument("leaf values must be ±1".into()));
    }
    Ok(node(1, d, leaves))
}

fn node(i: u32, d: u32, leaves: &[i64]) -> MultilinearPolynomial {
    let first_leaf = 1u32 << d;
    if i >= first_leaf {
        return MultilinearPolynomial::constant(int(leaves[(i - first_leaf) as usize]));
    }
    let left = node(2 * i, d, leaves);
    let right = node(2 * i + 1, d, leaves);
    let half = frac(1, 2);
    let mut out = MultilinearPolynomial::zero();
    for (sub, sign) in [(&left, 1i64), (&right, -1)] {
        for (m, c) in sub.exact_terms().expect("tree coefficients are exact") {
            let c: Rational = c * &half;
            out = out.add(&MultilinearPolynomial::from_terms([(m.clone(), c.clone())]));
            let mut vars = m.vars().to_vec();
            vars.push(i);
            let with_x = Monomial::new(vars).expect("subtree variables exclude the node");
            out = out.add(&MultilinearPolynomial::from_terms([(with_x, c * int(sign))]));
        }
    }
    out
}

/// Sum of alternating-leaf trees of the given depths on disjoint variables.
pub fn disjoint_tree_sum(depths: &[u32]) -> Result<MultilinearPolynomial> {
    let mut out = MultilinearPolynomial::zero();
    let mut offset = 0u32;
    for &d in depths {
        let t = decision_tree_polynomial(d, None)?;
        out = out.add(&t.shift_vars(offset));
        offset += (1 << d) - 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::FiniteDistribution;
    use crate::exactdist::output_distribution;

    #[test]
    fn depth_one_and_two() {
        assert_eq!(decision_tree_polynomial(1, None).unwrap(), MultilinearPolynomial::var(1));
        let h = frac(1, 2);
        let want = MultilinearPolynomial::from_pairs(&[
            (h.clone(), &[2]),
            (h.clone(), &[3]),
            (h.clone(), &[1, 2]),
            (-h, &[1, 3]),
        ])
        .unwrap();
        assert_eq!(decision_tree_polynomial(2, None).unwrap(), want);
    }

    #[test]
    fn sparsity_norm_and_balance() {
        let rad = FiniteDistribution::rademacher();
        let x1 = output_distribution(&MultilinearPolynomial::var(1), &rad).unwrap();
        for d in 1..=4u32 {
            let t = decision_tree_polynomial(d, None).unwrap();
            assert_eq!(t.sparsity(), 4usize.pow(d - 1));
            assert_eq!(t.coeff_norm().squared.exact, Some(int(1)));
            assert_eq!(output_distribution(&t, &rad).unwrap(), x1);
        }
    }

    #[test]
    fn bad_leaves() {
        assert!(decision_tree_polynomial(2, Some(&[1, -1, 1])).is_err());
        assert!(decision_tree_polynomial(1, Some(&[2, -1])).is_err());
    }

    #[test]
    fn disjoint_sum_vars() {
        let p = disjoint_tree_sum(&[2, 2]).unwrap();
        assert_eq!(p.sparsity(), 8);
        assert_eq!(p.active_variables(), (1..=6).collect::<Vec<_>>());
    }
}
