//! Small-modulus arithmetic over Z_q.

use crate::error::{Error, Result};

pub fn is_prime(q: u64) -> bool {
    if q < 2 {
        return false;
    }
    if q < 4 {
        return true;
    }
    if q.is_multiple_of(2) {
        return false;
    }
    let mut d = 3;
    while d * d <= q {
        if q.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

pub fn require_prime(q: u64) -> Result<()> {
    if is_prime(q) {
        Ok(())
    } else {
        Err(Error::NotPrime(q))
    }
}

pub fn pow_mod(mut base: u64, mut exp: u64, q: u64) -> u64 {
    let mut acc = 1 % q;
    base %= q;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % q;
        }
        base = base * base % q;
        exp >>= 1;
    }
    acc
}

/// Multiplicative inverse modulo a prime `q`. `a` must be nonzero mod q.
pub fn inv_mod(a: u64, q: u64) -> u64 {
    debug_assert!(!a.is_multiple_of(q));
    pow_mod(a, q - 2, q)
}

/// Rank over Z_q of the n×2 matrix with columns `x`, `y`.
pub fn rank2(x: &[u32], y: &[u32], q: u32) -> usize {
    let q64 = q as u64;
    let Some(p) = x.iter().position(|&v| v % q != 0) else {
        return usize::from(y.iter().any(|&v| v % q != 0));
    };
    // y - (y_p / x_p) x, zero everywhere iff y is a multiple of x
    let lam = (y[p] as u64 % q64) * inv_mod(x[p] as u64 % q64, q64) % q64;
    let dependent = x
        .iter()
        .zip(y)
        .all(|(&a, &b)| (b as u64 + q64 * q64 - lam * a as u64 % q64).is_multiple_of(q64));
    if dependent {
        1
    } else {
        2
    }
}

/// If `y = λ x` over Z_q for nonzero `x`, returns λ.
pub fn collinear_factor(x: &[u32], y: &[u32], q: u32) -> Option<u32> {
    let q64 = q as u64;
    let p = x.iter().position(|&v| v % q != 0)?;
    let lam = (y[p] as u64 % q64) * inv_mod(x[p] as u64 % q64, q64) % q64;
    x.iter()
        .zip(y)
        .all(|(&a, &b)| (lam * a as u64) % q64 == b as u64 % q64)
        .then_some(lam as u32)
}
