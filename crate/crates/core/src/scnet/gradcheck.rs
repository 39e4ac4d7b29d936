//! Central finite-difference comparison of analytic gradients.

use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic[i]` against `(f(x + h e_i) - f(x - h e_i)) / 2h` for
/// every index in `indices`.
pub fn check_gradient<T: Real, F>(
    x: &[T],
    analytic: &[T],
    indices: &[usize],
    step: f64,
    floor: f64,
    mut f: F,
) -> GradCheckReport
where
    F: FnMut(&[T]) -> f64,
{
    let mut probe = x.to_vec();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for &i in indices {
        let orig = probe[i];
        probe[i] = T::lit(orig.as_f64() + step);
        let fp = f(&probe);
        probe[i] = T::lit(orig.as_f64() - step);
        let fm = f(&probe);
        probe[i] = orig;
        let numeric = (fp - fm) / (2.0 * step);
        let a = analytic[i].as_f64();
        let rel = relative_error(a, numeric, floor);
        report.checked += 1;
        if rel > report.max_rel_error || report.checked == 1 {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_objective_is_exact_to_rounding() {
        let c = [0.5, -2.0, 3.25, 1.0];
        let x = [0.1, 0.2, -0.3, 0.4];
        let f = |v: &[f64]| v.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
        let r = check_gradient(&x, &c, &[0, 1, 2, 3], 1e-5, 1e-6, f);
        assert_eq!(r.checked, 4);
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let x = [1.0f64, 2.0];
        let wrong = [2.0, -4.0];
        let f = |v: &[f64]| v[0] * v[0] + v[1] * v[1];
        let r = check_gradient(&x, &wrong, &[0, 1], 1e-5, 1e-6, f);
        assert_eq!(r.worst_index, 1);
        assert!(r.max_rel_error > 1.0);
    }

    #[test]
    fn floor_guards_tiny_gradients() {
        assert_eq!(relative_error(0.0, 0.0, 1e-6), 0.0);
        assert!((relative_error(1e-9, 0.0, 1e-6) - 1e-3).abs() < 1e-12);
    }
}
