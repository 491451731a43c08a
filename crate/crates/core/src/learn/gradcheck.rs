use crate::error::{ensure, Error, Result};

/// Central-difference comparison of an analytic gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `|fd - g| / max(|fd|, |g|, floor)` per checked coordinate.
    pub rel_errors: Vec<f64>,
    pub worst: f64,
    pub worst_index: usize,
}

impl GradCheckReport {
    pub fn fraction_within(&self, tol: f64) -> f64 {
        if self.rel_errors.is_empty() {
            return 1.0;
        }
        self.rel_errors.iter().filter(|&&e| e <= tol).count() as f64 / self.rel_errors.len() as f64
    }
}

/// Compares `grad` with `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for
/// every coordinate `i`. `floor` keeps near-zero gradients from producing
/// meaningless ratios.
pub fn gradient_check(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    point: &[f64],
    grad: &[f64],
    eps: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    ensure(eps > 0.0, || "eps must be positive".into())?;
    ensure(point.len() == grad.len(), || {
        "point and gradient lengths differ".into()
    })?;
    let mut x = point.to_vec();
    let mut rel_errors = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let fp = f(&x)?;
        x[i] = orig - eps;
        let fm = f(&x)?;
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite value perturbing coordinate {i}"
            )));
        }
        let fd = (fp - fm) / (2.0 * eps);
        rel_errors.push((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(floor));
    }
    let (worst_index, worst) = rel_errors
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
    Ok(GradCheckReport {
        rel_errors,
        worst,
        worst_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn quadratic_matches_to_roundoff() {
        let mut rng = Rng::new(1);
        let x: Vec<f64> = (0..6).map(|_| rng.uniform_range(0.5, 2.0)).collect();
        let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let r = gradient_check(|p| Ok(p.iter().map(|v| v * v).sum()), &x, &g, 1e-5, 1e-12).unwrap();
        assert!(r.worst < 1e-10, "{}", r.worst);
        assert_eq!(r.fraction_within(1e-10), 1.0);
    }

    #[test]
    fn corrupted_coordinate_is_reported() {
        let x = vec![0.5, -1.0, 2.0, 0.25];
        let mut g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        g[2] += 0.1;
        let r = gradient_check(|p| Ok(p.iter().map(|v| v * v).sum()), &x, &g, 1e-5, 1e-12).unwrap();
        assert_eq!(r.worst_index, 2);
        assert!(r.worst > 1e-2);
        assert_eq!(r.fraction_within(1e-8), 0.75);
    }

    #[test]
    fn non_finite_function_is_an_error() {
        let r = gradient_check(|p| Ok(1.0 / (p[0] - 1e-6)), &[0.0], &[0.0], 1e-6, 1e-12);
        assert!(r.is_err());
        assert!(gradient_check(|_| Ok(0.0), &[0.0], &[0.0], 0.0, 1e-12).is_err());
    }
}
