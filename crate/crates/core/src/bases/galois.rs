//! Small Galois fields and the prime-power MUB construction.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{QkdError, Result};
use crate::qcore::{c, CMatrix};

/// `GF(p^n)` with elements encoded as integers whose base-`p` digits are
/// polynomial coefficients (digit `j` multiplies `x^j`).
#[derive(Clone, Debug)]
pub struct GaloisField {
    pub p: usize,
    pub n: usize,
    pub q: usize,
    add: Vec<usize>,
    mul: Vec<usize>,
    trace: Vec<usize>,
}

/// Fixed irreducible polynomials, lowest coefficient first (monic leading
/// term omitted): `x² + x + 1` and `x³ + x + 1` over GF(2), `x² + 1` over GF(3).
fn modulus(q: usize) -> Option<(usize, usize, &'static [usize])> {
    match q {
        4 => Some((2, 2, &[1, 1])),
        8 => Some((2, 3, &[1, 1, 0])),
        9 => Some((3, 2, &[1, 0])),
        _ => None,
    }
}

pub fn is_prime(n: usize) -> bool {
    n >= 2 && (2..).take_while(|k| k * k <= n).all(|k| !n.is_multiple_of(k))
}

impl GaloisField {
    pub fn new(q: usize) -> Result<Self> {
        let (p, n, low): (usize, usize, Vec<usize>) = if is_prime(q) {
            (q, 1, vec![])
        } else if let Some((p, n, m)) = modulus(q) {
            (p, n, m.to_vec())
        } else {
            return Err(QkdError::Unsupported(format!("no Galois field of order {q}; supported orders are primes and 4, 8, 9")));
        };
        let digits = |x: usize| -> Vec<usize> {
            let mut v = vec![0; n];
            let mut x = x;
            for d in v.iter_mut() {
                *d = x % p;
                x /= p;
            }
            v
        };
        let encode = |v: &[usize]| -> usize { v.iter().rev().fold(0, |acc, &d| acc * p + d) };
        let mut add = vec![0; q * q];
        let mut mul = vec![0; q * q];
        for a in 0..q {
            for b in 0..q {
                let (da, db) = (digits(a), digits(b));
                let s: Vec<usize> = da.iter().zip(&db).map(|(x, y)| (x + y) % p).collect();
                add[a * q + b] = encode(&s);
                // schoolbook product, then reduce x^k for k >= n using x^n = -low(x)
                let mut prod = vec![0usize; 2 * n];
                for i in 0..n {
                    for j in 0..n {
                        prod[i + j] = (prod[i + j] + da[i] * db[j]) % p;
                    }
                }
                for k in (n..2 * n - 1).rev() {
                    let top = prod[k];
                    if top == 0 {
                        continue;
                    }
                    prod[k] = 0;
                    for (i, &l) in low.iter().enumerate() {
                        prod[k - n + i] = (prod[k - n + i] + (p - l % p) * top) % p;
                    }
                }
                mul[a * q + b] = encode(&prod[..n]);
            }
        }
        let mut field = GaloisField { p, n, q, add, mul, trace: vec![0; q] };
        for x in 0..q {
            // tr(x) = x + x^p + ... + x^{p^{n-1}}
            let mut acc = 0;
            let mut pow = x;
            for _ in 0..n {
                acc = field.add(acc, pow);
                let mut next = 1;
                for _ in 0..p {
                    next = field.mul(next, pow);
                }
                pow = next;
            }
            debug_assert!(acc < p, "trace must land in the prime field");
            field.trace[x] = acc;
        }
        Ok(field)
    }

    pub fn add(&self, a: usize, b: usize) -> usize {
        self.add[a * self.q + b]
    }

    pub fn mul(&self, a: usize, b: usize) -> usize {
        self.mul[a * self.q + b]
    }

    /// Absolute trace, an element of the prime field.
    pub fn trace(&self, a: usize) -> usize {
        self.trace[a]
    }
}

/// The `q` non-computational bases of a complete MUB set, indexed by field
/// element; column `b` of basis `a` is vector `b`.
pub(crate) fn field_bases(q: usize) -> Result<Vec<CMatrix>> {
    let f = GaloisField::new(q)?;
    let norm = 1.0 / (q as f64).sqrt();
    let mut out = Vec::with_capacity(q);
    if f.p != 2 {
        // v_{a,b}(x) = ω^{tr(a x² + b x)}
        let omega = |k: usize| Complex64::from_polar(norm, 2.0 * PI * k as f64 / f.p as f64);
        for a in 0..q {
            out.push(CMatrix::from_fn(q, q, |x, b| {
                let x2 = f.mul(x, x);
                omega(f.trace(f.add(f.mul(a, x2), f.mul(b, x))))
            }));
        }
        return Ok(out);
    }
    // characteristic 2: v_{a,b}(x) = i^{Q_a(x)} (-1)^{tr(b x)} with the Z4
    // quadratic form Q_a(x) = Σ_j x_j A_jj + 2 Σ_{j<k} x_j x_k A_jk,
    // A_jk = tr(a e_j e_k) in the polynomial basis e_j = 2^j
    let n = f.n;
    for a in 0..q {
        let form: Vec<Vec<usize>> = (0..n).map(|j| (0..n).map(|k| f.trace(f.mul(a, f.mul(1 << j, 1 << k)))).collect()).collect();
        let quad = |x: usize| -> usize {
            let bit = |j: usize| (x >> j) & 1;
            let mut s = 0;
            for j in 0..n {
                s += bit(j) * form[j][j];
                for k in j + 1..n {
                    s += 2 * bit(j) * bit(k) * form[j][k];
                }
            }
            s % 4
        };
        let ipow = [c(1.0), Complex64::new(0.0, 1.0), c(-1.0), Complex64::new(0.0, -1.0)];
        out.push(CMatrix::from_fn(q, q, |x, b| {
            let sign = if f.trace(f.mul(b, x)) == 1 { -1.0 } else { 1.0 };
            ipow[quad(x)] * (sign * norm)
        }));
    }
    Ok(out)
}
