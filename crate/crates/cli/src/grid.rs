//! Visibility grids given as `v` or `lo:hi:step`.

/// Slack allowed when deciding whether `hi` is on the grid.
const ENDPOINT_TOL: f64 = 1e-12;

pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("bad number {t:?} in grid {s:?}"));
    let values = match parts.as_slice() {
        [v] => vec![num(v)?],
        [lo, hi, step] => {
            let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
            if !(step > 0.0) || !step.is_finite() {
                return Err(format!("grid step must be positive, got {step}"));
            }
            if hi < lo {
                return Err(format!("grid upper end {hi} is below {lo}"));
            }
            let n = ((hi - lo) / step + ENDPOINT_TOL).floor() as usize;
            let mut out: Vec<f64> = (0..=n).map(|i| lo + i as f64 * step).collect();
            // land exactly on hi when it is a grid point
            if let Some(last) = out.last_mut() {
                if (*last - hi).abs() <= ENDPOINT_TOL.max(step * 1e-9) {
                    *last = hi;
                }
            }
            out
        }
        _ => return Err(format!("grid {s:?} is neither v nor lo:hi:step")),
    };
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(format!("visibility {v} outside [0,1]"));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inclusive_endpoints() {
        assert_eq!(parse_grid("0.85:1.0:0.05").unwrap(), vec![0.85, 0.9, 0.95, 1.0]);
        assert_eq!(parse_grid("0.9").unwrap(), vec![0.9]);
        assert_eq!(parse_grid("0.5:0.5:0.1").unwrap(), vec![0.5]);
        assert_eq!(parse_grid("0:1:0.25").unwrap().len(), 5);
        assert_eq!(parse_grid("0.1:0.35:0.1").unwrap().len(), 3);
    }

    #[test]
    fn rejects_bad_grids() {
        for g in ["", "a", "0.1:0.2", "0.2:0.1:0.05", "0:1:0", "0:1:-0.1", "1.2", "0.9:1.1:0.1", "0:1:2:3"] {
            assert!(parse_grid(g).is_err(), "{g}");
        }
    }
}
