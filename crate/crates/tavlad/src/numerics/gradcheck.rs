//! Central-difference validation of reverse-mode gradients.
//!
//! The checker never touches the tape: callers hand it analytic gradients
//! they already computed plus a pure loss closure, and it re-derives every
//! coordinate numerically. Keeping the numeric side on the pure evaluation
//! path makes this an independent cross-check of the whole tape machinery,
//! not just of individual adjoints.

use std::fmt;

use crate::error::{Error, Result};

use super::Tensor;

/// One parameter to check: its current value and the analytic gradient the
/// caller computed for it.
pub struct ParamSpec<'a> {
    pub name: &'a str,
    pub value: &'a Tensor,
    pub analytic: &'a [f64],
}

/// Per-parameter check result; `worst_index` is the coordinate with the
/// largest relative error.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub len: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tol: f64,
    pub checks: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.max_rel_err <= self.tol)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.max_rel_err)
            .fold(0.0, f64::max)
    }

    /// The parameter with the largest relative error, if any were checked.
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "grad check (eps {:.1e}, tol {:.1e}): {}",
            self.eps,
            self.tol,
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        for c in &self.checks {
            writeln!(
                f,
                "  {:<28} max rel err {:.3e} at [{}] (analytic {:+.6e}, numeric {:+.6e}){}",
                c.name,
                c.max_rel_err,
                c.worst_index,
                c.analytic_at_worst,
                c.numeric_at_worst,
                if c.max_rel_err <= self.tol { "" } else { "  <-- FAIL" }
            )?;
        }
        Ok(())
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (1e-8f64).max(analytic.abs() + numeric.abs())
}

/// Compares the supplied analytic gradients to central differences
/// (f(θ+eps) − f(θ−eps)) / (2·eps) of `loss_fn`, coordinate by coordinate.
///
/// `loss_fn` receives the full parameter vector in `params` order with one
/// coordinate perturbed at a time; it must be deterministic. `eps` must lie
/// in [1e-7, 1e-3].
pub fn grad_check<F>(
    mut loss_fn: F,
    params: &[ParamSpec<'_>],
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::contract(format!(
            "grad_check eps {eps} outside [1e-7, 1e-3]"
        )));
    }
    if tol <= 0.0 {
        return Err(Error::contract("grad_check tol must be positive"));
    }
    for p in params {
        if p.value.len() != p.analytic.len() {
            return Err(Error::contract(format!(
                "param {}: value has {} entries but analytic gradient has {}",
                p.name,
                p.value.len(),
                p.analytic.len()
            )));
        }
    }

    let base: Vec<Tensor> = params.iter().map(|p| p.value.clone()).collect();
    let base_loss = loss_fn(&base)?;
    if !base_loss.is_finite() {
        return Err(Error::contract(format!(
            "loss is non-finite ({base_loss}) at the unperturbed parameters"
        )));
    }

    let mut checks = Vec::with_capacity(params.len());
    for (pi, p) in params.iter().enumerate() {
        let mut worst = ParamCheck {
            name: p.name.to_string(),
            len: p.value.len(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
        };
        for i in 0..p.value.len() {
            let mut probe = |delta: f64| -> Result<f64> {
                let mut theta = base.clone();
                theta[pi].data_mut()[i] += delta;
                let v = loss_fn(&theta)?;
                if !v.is_finite() {
                    return Err(Error::NonFiniteProbe {
                        param: p.name.to_string(),
                        index: i,
                        delta,
                    });
                }
                Ok(v)
            };
            let plus = probe(eps)?;
            let minus = probe(-eps)?;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = p.analytic[i];
            let err = rel_err(analytic, numeric);
            if err > worst.max_rel_err || i == 0 {
                worst.max_rel_err = err;
                worst.worst_index = i;
                worst.analytic_at_worst = analytic;
                worst.numeric_at_worst = numeric;
            }
        }
        checks.push(worst);
    }
    Ok(GradCheckReport { eps, tol, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_at_three_is_exact() {
        // eps = 2^-17 keeps 3±eps, their squares, and the difference quotient
        // exactly representable, so the central difference is exactly 6.
        let eps = 2f64.powi(-17);
        let x = Tensor::scalar(3.0);
        let analytic = [6.0];
        let report = grad_check(
            |theta| Ok(theta[0].data()[0] * theta[0].data()[0]),
            &[ParamSpec {
                name: "x",
                value: &x,
                analytic: &analytic,
            }],
            eps,
            1e-4,
        )
        .unwrap();
        assert!(report.passed());
        assert_eq!(report.checks[0].numeric_at_worst, 6.0);
        assert_eq!(report.max_rel_err(), 0.0);
    }

    #[test]
    fn constant_function_passes() {
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]);
        let analytic = [0.0, 0.0, 0.0];
        let report = grad_check(
            |_| Ok(42.0),
            &[ParamSpec {
                name: "x",
                value: &x,
                analytic: &analytic,
            }],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed());
        assert_eq!(report.max_rel_err(), 0.0);
    }

    #[test]
    fn wrong_gradient_fails() {
        let x = Tensor::scalar(3.0);
        let analytic = [5.0]; // truth is 6
        let report = grad_check(
            |theta| Ok(theta[0].data()[0] * theta[0].data()[0]),
            &[ParamSpec {
                name: "x",
                value: &x,
                analytic: &analytic,
            }],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed());
        let worst = report.worst().unwrap();
        assert_eq!(worst.name, "x");
        assert_eq!(worst.worst_index, 0);
    }

    #[test]
    fn multi_param_mixed() {
        // f(a, b) = Σ a² + 3·Σ b
        let a = Tensor::new(vec![2], vec![1.0, -2.0]);
        let b = Tensor::new(vec![3], vec![0.5, 0.0, -1.0]);
        let ga = [2.0, -4.0];
        let gb = [3.0, 3.0, 3.0];
        let report = grad_check(
            |theta| {
                let s1: f64 = theta[0].data().iter().map(|v| v * v).sum();
                let s2: f64 = theta[1].data().iter().sum();
                Ok(s1 + 3.0 * s2)
            },
            &[
                ParamSpec {
                    name: "a",
                    value: &a,
                    analytic: &ga,
                },
                ParamSpec {
                    name: "b",
                    value: &b,
                    analytic: &gb,
                },
            ],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.checks.len(), 2);
    }

    #[test]
    fn eps_out_of_range_rejected() {
        let x = Tensor::scalar(1.0);
        let g = [1.0];
        let spec = [ParamSpec {
            name: "x",
            value: &x,
            analytic: &g,
        }];
        assert!(grad_check(|t| Ok(t[0].data()[0]), &spec, 1e-8, 1e-4).is_err());
        assert!(grad_check(|t| Ok(t[0].data()[0]), &spec, 1e-2, 1e-4).is_err());
    }

    #[test]
    fn non_finite_probe_identified() {
        // sqrt turns the negative perturbation of x=0 into NaN.
        let x = Tensor::scalar(0.0);
        let g = [0.0];
        let err = grad_check(
            |theta| Ok(theta[0].data()[0].sqrt()),
            &[ParamSpec {
                name: "x",
                value: &x,
                analytic: &g,
            }],
            1e-5,
            1e-4,
        )
        .unwrap_err();
        match err {
            Error::NonFiniteProbe { param, index, delta } => {
                assert_eq!(param, "x");
                assert_eq!(index, 0);
                assert!(delta < 0.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn mismatched_gradient_length_rejected() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]);
        let g = [1.0];
        assert!(grad_check(
            |t| Ok(t[0].data().iter().sum()),
            &[ParamSpec {
                name: "x",
                value: &x,
                analytic: &g,
            }],
            1e-5,
            1e-4
        )
        .is_err());
    }
}
