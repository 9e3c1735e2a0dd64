//! Moment/cumulant conversion through partial Bell polynomials.

use std::ops::{Add, Mul, Neg, Sub};

use num_traits::{One, Zero};

use crate::rational::Rational;

/// Arithmetic needed by the conversions; implemented for `f64` and exact
/// rationals.
pub trait Field:
    Clone + Zero + One + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn from_u64(n: u64) -> Self;
    /// Exact value, if the element has one.
    fn to_exact(&self) -> Option<Rational>;
    fn from_exact(r: Rational) -> Self;
}

impl Field for f64 {
    fn from_u64(n: u64) -> Self {
        n as f64
    }

    fn to_exact(&self) -> Option<Rational> {
        Rational::from_float(*self)
    }

    fn from_exact(r: Rational) -> Self {
        crate::rational::to_f64(&r)
    }
}

impl Field for Rational {
    fn from_u64(n: u64) -> Self {
        Rational::from_integer(n.into())
    }

    fn to_exact(&self) -> Option<Rational> {
        Some(self.clone())
    }

    fn from_exact(r: Rational) -> Self {
        r
    }
}

/// Runs `f` in exact arithmetic when every input is finite, rounding once at
/// the end. The alternating Bell sums cancel heavily at high orders, so
/// float evaluation loses most of its digits there.
fn exactly<T: Field>(x: &[T], f: impl Fn(&[Rational]) -> Vec<Rational>, fallback: impl Fn(&[T]) -> Vec<T>) -> Vec<T> {
    match x.iter().map(T::to_exact).collect::<Option<Vec<_>>>() {
        Some(ex) => f(&ex).into_iter().map(T::from_exact).collect(),
        None => fallback(x),
    }
}

fn binomials<T: Field>(n: usize) -> Vec<Vec<T>> {
    let mut c = vec![vec![T::zero(); n + 1]; n + 1];
    for i in 0..=n {
        c[i][0] = T::one();
        for j in 1..=i {
            c[i][j] = c[i - 1][j - 1].clone() + c[i - 1][j].clone();
        }
    }
    c
}

/// Table B[n][k] = B_{n,k}(x_1, ..., x_{n-k+1}) for 0 ≤ k ≤ n ≤ x.len(),
/// from B_{n,k} = Σ_{i=1}^{n-k+1} C(n-1, i-1) x_i B_{n-i,k-1}.
pub fn bell_table<T: Field>(x: &[T]) -> Vec<Vec<T>> {
    let n = x.len();
    let c = binomials::<T>(n);
    let mut b = vec![vec![T::zero(); n + 1]; n + 1];
    b[0][0] = T::one();
    for nn in 1..=n {
        for k in 1..=nn {
            let mut acc = T::zero();
            for i in 1..=nn - k + 1 {
                acc = acc + c[nn - 1][i - 1].clone() * x[i - 1].clone() * b[nn - i][k - 1].clone();
            }
            b[nn][k] = acc;
        }
    }
    b
}

/// κ_ℓ = Σ_k (−1)^{k−1} (k−1)! B_{ℓ,k}(m), for ℓ = 1..len.
pub fn moments_to_cumulants<T: Field>(m: &[T]) -> Vec<T> {
    exactly(m, m2c::<Rational>, m2c::<T>)
}

fn m2c<T: Field>(m: &[T]) -> Vec<T> {
    let b = bell_table(m);
    (1..=m.len())
        .map(|l| {
            let mut acc = T::zero();
            let mut fact = T::one();
            for k in 1..=l {
                if k > 1 {
                    fact = fact * T::from_u64(k as u64 - 1);
                }
                let term = fact.clone() * b[l][k].clone();
                acc = if k % 2 == 1 { acc + term } else { acc - term };
            }
            acc
        })
        .collect()
}

/// m_ℓ = Σ_k B_{ℓ,k}(κ), for ℓ = 1..len.
pub fn cumulants_to_moments<T: Field>(kappa: &[T]) -> Vec<T> {
    exactly(kappa, c2m::<Rational>, c2m::<T>)
}

fn c2m<T: Field>(kappa: &[T]) -> Vec<T> {
    let b = bell_table(kappa);
    (1..=kappa.len())
        .map(|l| (1..=l).fold(T::zero(), |acc, k| acc + b[l][k].clone()))
        .collect()
}

/// κ_ℓ = m_ℓ − Σ_{j=1}^{ℓ−1} C(ℓ−1, j−1) κ_j m_{ℓ−j}.
pub fn moments_to_cumulants_recursive<T: Field>(m: &[T]) -> Vec<T> {
    let n = m.len();
    let c = binomials::<T>(n);
    let mut kappa: Vec<T> = Vec::with_capacity(n);
    for l in 1..=n {
        let mut acc = m[l - 1].clone();
        for j in 1..l {
            acc = acc - c[l - 1][j - 1].clone() * kappa[j - 1].clone() * m[l - j - 1].clone();
        }
        kappa.push(acc);
    }
    kappa
}
