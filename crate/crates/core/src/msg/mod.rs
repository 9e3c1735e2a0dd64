//! Max-Sparsity-Gap: the Φ bound, output-count bounds, sparsity patterns,
//! decision-tree constructions and an exact witness search over coefficient
//! grids plus a shortlist of structured families.

pub mod patterns;
pub mod search;
pub mod trees;

use num_bigint::BigUint;
use num_traits::One;

use crate::error::{Error, Result};

pub use patterns::{enumerate_sparsity_patterns, PatternEnumeration, SparsityPattern};
pub use search::{certify_witness, compute_msg, find_msg_witness, MsgReport, MsgWitness, SearchOutcome, SearchSpec, TOutcome};
pub use trees::{decision_tree_polynomial, disjoint_tree_sum};

/// Largest exponent `phi_bound` will materialize as an integer.
pub const PHI_MAX_EXPONENT: u64 = 1 << 26;

/// Exponent e of Φ(d, s, ℓ) = 2^e, e = 2d²(ℓ^{ds} + 3). `None` on overflow.
pub fn phi_exponent(d: u32, s: u32, l: u32) -> Option<u64> {
    let p = (l as u64).checked_pow(d.checked_mul(s)?)?;
    (2 * d as u64 * d as u64).checked_mul(p.checked_add(3)?)
}

/// Φ(d, s, ℓ) = 2^{2d²(ℓ^{ds}+3)} as an exact integer.
pub fn phi_bound(d: u32, s: u32, l: u32) -> Result<BigUint> {
    if d == 0 || s == 0 || l == 0 {
        return Err(Error::InvalidArgument("phi_bound needs d, s, l ≥ 1".into()));
    }
    match phi_exponent(d, s, l) {
        Some(e) if e <= PHI_MAX_EXPONENT => Ok(BigUint::one() << e),
        Some(e) => Err(Error::Budget {
            module: "msg",
            what: "phi bound".into(),
            required_log2: e as f64,
            budget_log2: PHI_MAX_EXPONENT as f64,
        }),
        None => Err(Error::Budget {
            module: "msg",
            what: "phi bound exponent".into(),
            required_log2: f64::INFINITY,
            budget_log2: PHI_MAX_EXPONENT as f64,
        }),
    }
}

/// ℓ^{ds}: an s-sparse degree-d polynomial reads at most ds variables, each
/// taking ℓ values.
pub fn output_count_upper(d: u32, s: u32, l: u32) -> f64 {
    (l as f64).powf((d * s) as f64)
}

/// (1/2d²)·log2(T) − 3: a T-sparse polynomial takes at least this many
/// distinct values.
pub fn output_count_lower(d: u32, t: u64) -> f64 {
    (t as f64).log2() / (2.0 * (d * d) as f64) - 3.0
}

/// Both bounds at the same sparsity.
pub fn output_count_bounds(d: u32, sparsity: u32, l: u32) -> (f64, f64) {
    (output_count_upper(d, sparsity, l), output_count_lower(d, sparsity as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_values() {
        assert_eq!(phi_bound(1, 1, 2).unwrap(), BigUint::from(1024u32));
        assert_eq!(phi_bound(2, 1, 2).unwrap(), BigUint::one() << 56u32);
        assert!(phi_bound(2, 1, 3).unwrap() > phi_bound(2, 1, 2).unwrap());
        assert!(phi_bound(3, 1, 2).unwrap() > phi_bound(2, 1, 2).unwrap());
        assert!(phi_bound(2, 2, 2).unwrap() > phi_bound(2, 1, 2).unwrap());
        assert!(phi_bound(4, 8, 9).unwrap_err().is_budget());
    }

    #[test]
    fn count_bounds() {
        assert_eq!(output_count_upper(1, 1, 2), 2.0);
        assert!(output_count_lower(1, 64) <= 0.0);
        assert!(output_count_lower(2, 1 << 24) <= 0.0);
        assert!(output_count_lower(1, 1 << 7) > 0.0);
    }
}
