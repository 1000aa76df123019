//! Removal of linearly dependent equality rows.

/// Outcome of scanning the equality rows in order.
#[derive(Debug)]
pub(crate) struct RowSelection {
    /// indices of the kept rows
    pub kept: Vec<usize>,
    /// largest inconsistency of a dropped row, relative to `1 + |b_i|`
    pub worst_inconsistency: f64,
}

/// Keeps the rows of the dense matrix `rows` (each of equal length) that are
/// independent of the rows kept before them.
pub(crate) fn select_rows(rows: &[Vec<f64>], b: &[f64], tol: f64) -> RowSelection {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut kept = Vec::new();
    let mut worst: f64 = 0.0;
    for (i, row) in rows.iter().enumerate() {
        let norm0 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut r = row.clone();
        let mut rb = b[i];
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for (q, &qb) in basis.iter().zip(&beta) {
                let c: f64 = q.iter().zip(&r).map(|(a, b)| a * b).sum();
                if c != 0.0 {
                    for (rv, qv) in r.iter_mut().zip(q) {
                        *rv -= c * qv;
                    }
                    rb -= c * qb;
                }
            }
        }
        let nr = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm0 == 0.0 || nr <= tol * norm0 {
            let scale = 1.0 + b[i].abs();
            worst = worst.max(rb.abs() / scale);
            continue;
        }
        for v in r.iter_mut() {
            *v /= nr;
        }
        basis.push(r);
        beta.push(rb / nr);
        kept.push(i);
    }
    RowSelection { kept, worst_inconsistency: worst }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_row_dropped() {
        let rows = vec![vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0], vec![1.0, 2.0, 1.0]];
        let sel = select_rows(&rows, &[1.0, 2.0, 3.0], 1e-10);
        assert_eq!(sel.kept, vec![0, 1]);
        assert!(sel.worst_inconsistency < 1e-12);
    }

    #[test]
    fn inconsistent_row_flagged() {
        let rows = vec![vec![1.0, 0.0], vec![2.0, 0.0]];
        let sel = select_rows(&rows, &[1.0, 3.0], 1e-10);
        assert_eq!(sel.kept, vec![0]);
        assert!((sel.worst_inconsistency - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_row_with_zero_rhs_is_harmless() {
        let rows = vec![vec![0.0, 0.0], vec![0.0, 1.0]];
        let sel = select_rows(&rows, &[0.0, 1.0], 1e-10);
        assert_eq!(sel.kept, vec![1]);
        assert_eq!(sel.worst_inconsistency, 0.0);
    }
}
