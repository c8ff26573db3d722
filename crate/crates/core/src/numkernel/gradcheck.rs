//! Finite-difference gradient checking.

use crate::error::{Error, Result};

/// A deterministic scalar loss over a flat parameter vector, with an
/// analytic (reverse-mode) gradient route.
///
/// Callers must freeze every source of randomness (seeds, negative samples)
/// before checking; `grad_check` detects violations by evaluating the loss
/// twice at the same point.
pub trait ScalarLoss {
    fn dim(&self) -> usize;
    /// Forward value only.
    fn loss(&mut self, x: &[f64]) -> Result<f64>;
    /// Forward value plus analytic gradient.
    fn loss_and_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// One coordinate whose analytic and numeric derivatives disagree beyond
/// the tolerance.
#[derive(Clone, Debug)]
pub struct CoordinateError {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate achieving `max_rel_error`, if any coordinate was checked.
    pub worst: Option<CoordinateError>,
    /// All coordinates above tolerance, in index order.
    pub failures: Vec<CoordinateError>,
    pub coords_checked: usize,
    /// Coordinates whose analytic/numeric disagreement is smaller than the
    /// cancellation noise of the central difference itself; they agree to
    /// within what the measurement can resolve at this step size.
    pub noise_limited: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Relative error with an absolute floor, |a - f| / max(|a|, |f|, 1e-8).
pub(crate) fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare the analytic gradient of `f` at `x0` against central finite
/// differences, coordinate by coordinate. `skip` excludes coordinates the
/// caller knows to be non-differentiable (e.g. ReLU kinks).
pub fn grad_check(
    f: &mut dyn ScalarLoss,
    x0: &[f64],
    step: f64,
    tolerance: f64,
    skip: Option<&dyn Fn(usize) -> bool>,
) -> Result<GradCheckReport> {
    if step <= 0.0 {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {step}")));
    }
    if x0.len() != f.dim() {
        return Err(Error::ShapeMismatch {
            op: "grad_check",
            detail: format!("{} params vs dim {}", x0.len(), f.dim()),
        });
    }

    let first = f.loss(x0)?;
    let second = f.loss(x0)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministicLoss { first, second });
    }

    let (_, analytic) = f.loss_and_grad(x0)?;
    let mut x = x0.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        failures: Vec::new(),
        coords_checked: 0,
        noise_limited: 0,
        tolerance,
    };

    for i in 0..x0.len() {
        if skip.map(|s| s(i)).unwrap_or(false) {
            continue;
        }
        x[i] = x0[i] + step;
        let up = f.loss(&x)?;
        x[i] = x0[i] - step;
        let down = f.loss(&x)?;
        x[i] = x0[i];
        let numeric = (up - down) / (2.0 * step);
        // Subtracting nearly equal loss values cancels to roughly machine
        // epsilon times their magnitude; differences below that floor are
        // beyond what the central difference can resolve.
        let noise_floor = 8.0 * f64::EPSILON * up.abs().max(down.abs()) / (2.0 * step);
        if (analytic[i] - numeric).abs() <= noise_floor {
            report.coords_checked += 1;
            report.noise_limited += 1;
            continue;
        }
        let err = rel_error(analytic[i], numeric);
        report.coords_checked += 1;
        let coord = CoordinateError {
            index: i,
            analytic: analytic[i],
            numeric,
            rel_error: err,
        };
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some(coord.clone());
        }
        if err > tolerance {
            report.failures.push(coord);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// f(x) = x' A x + b' x for a fixed symmetric A.
    struct Quadratic {
        a: Vec<f64>,
        b: Vec<f64>,
        n: usize,
    }

    impl Quadratic {
        fn new(n: usize) -> Quadratic {
            let mut a = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let v = 0.1 + 0.05 * (i * n + j) as f64;
                    a[i * n + j] += v;
                    a[j * n + i] += v;
                }
            }
            let b = (0..n).map(|i| 0.3 - 0.2 * i as f64).collect();
            Quadratic { a, b, n }
        }
    }

    impl ScalarLoss for Quadratic {
        fn dim(&self) -> usize {
            self.n
        }

        fn loss(&mut self, x: &[f64]) -> Result<f64> {
            let mut v = 0.0;
            for i in 0..self.n {
                v += self.b[i] * x[i];
                for j in 0..self.n {
                    v += x[i] * self.a[i * self.n + j] * x[j];
                }
            }
            Ok(v)
        }

        fn loss_and_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
            let v = self.loss(x)?;
            let mut g = self.b.clone();
            for i in 0..self.n {
                for j in 0..self.n {
                    g[i] += 2.0 * self.a[i * self.n + j] * x[j];
                }
            }
            Ok((v, g))
        }
    }

    #[test]
    fn quadratic_form_is_exact() {
        let mut f = Quadratic::new(5);
        let x0 = [0.4, -1.0, 0.2, 0.9, -0.3];
        let report = grad_check(&mut f, &x0, 1e-5, 1e-6, None).unwrap();
        assert!(report.passed());
        assert!(report.max_rel_error < 1e-9, "err {}", report.max_rel_error);
        assert_eq!(report.coords_checked, 5);
    }

    /// relu(x0) + x1^2 with the analytic relu-at-zero convention grad 0.
    struct ReluAtKink;

    impl ScalarLoss for ReluAtKink {
        fn dim(&self) -> usize {
            2
        }

        fn loss(&mut self, x: &[f64]) -> Result<f64> {
            Ok(x[0].max(0.0) + x[1] * x[1])
        }

        fn loss_and_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
            let g0 = if x[0] > 0.0 { 1.0 } else { 0.0 };
            Ok((self.loss(x)?, vec![g0, 2.0 * x[1]]))
        }
    }

    #[test]
    fn kink_coordinate_flagged_then_excluded() {
        let mut f = ReluAtKink;
        // Pre-activation exactly 0: central difference sees slope 0.5,
        // analytic convention says 0.
        let x0 = [0.0, 0.7];
        let report = grad_check(&mut f, &x0, 1e-5, 1e-4, None).unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].index, 0);

        // The caller's kink filter removes the flagged coordinate.
        let skip = |i: usize| i == 0;
        let filtered = grad_check(&mut f, &x0, 1e-5, 1e-4, Some(&skip)).unwrap();
        assert!(filtered.passed());
        assert_eq!(filtered.coords_checked, 1);
    }

    struct Flaky {
        calls: usize,
    }

    impl ScalarLoss for Flaky {
        fn dim(&self) -> usize {
            1
        }

        fn loss(&mut self, x: &[f64]) -> Result<f64> {
            self.calls += 1;
            Ok(x[0] + self.calls as f64)
        }

        fn loss_and_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((self.loss(x)?, vec![1.0]))
        }
    }

    #[test]
    fn non_deterministic_loss_rejected() {
        let mut f = Flaky { calls: 0 };
        assert!(matches!(
            grad_check(&mut f, &[0.0], 1e-5, 1e-4, None),
            Err(Error::NonDeterministicLoss { .. })
        ));
    }
}
