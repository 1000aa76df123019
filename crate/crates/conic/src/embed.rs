use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::ConicError;

/// Real symmetric embedding `[[Re H, −Im H], [Im H, Re H]]` of a Hermitian matrix.
///
/// The embedding is a real-linear *-homomorphism, so each eigenvalue of `h`
/// appears twice and positivity is preserved in both directions.
pub fn hermitian_embed(h: &DMatrix<Complex64>) -> Result<DMatrix<f64>, ConicError> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(ConicError::Dimension(format!("{}x{} is not square", h.nrows(), h.ncols())));
    }
    let dev = (h - h.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if dev > 1e-12 {
        return Err(ConicError::NotHermitian(dev));
    }
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for p in 0..n {
        for q in 0..n {
            let z = h[(p, q)];
            out[(p, q)] = z.re;
            out[(p + n, q + n)] = z.re;
            out[(p + n, q)] = z.im;
            out[(p, q + n)] = -z.im;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn identity_embeds_to_identity() {
        let e = hermitian_embed(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(e, DMatrix::<f64>::identity(4, 4));
    }

    #[test]
    fn pauli_y_spectrum_doubles() {
        let y = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)]);
        let e = hermitian_embed(&y).unwrap();
        assert_eq!(e, e.transpose());
        let mut ev: Vec<f64> = SymmetricEigen::new(e).eigenvalues.iter().cloned().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (got, want) in ev.iter().zip([-1.0, -1.0, 1.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(hermitian_embed(&m).is_err());
    }
}
