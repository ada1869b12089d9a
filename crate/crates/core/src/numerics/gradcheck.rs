//! Central finite-difference check of analytic gradients.

use rand::Rng;

use crate::connectome::Matrix;
use crate::error::Result;
use crate::rng::rng_for;

/// Valid range for the difference step.
pub const STEP_RANGE: (f64, f64) = (1e-7, 1e-3);

/// A scalar function of a list of tensors with an analytic gradient.
pub trait Objective {
    fn eval(&self, point: &[Matrix]) -> Result<f64>;
    fn eval_with_grad(&self, point: &[Matrix]) -> Result<(f64, Vec<Matrix>)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - fd| / max(1, |analytic|)` over the checked coordinates.
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub step: f64,
    /// `(tensor index, flat offset)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn step_in_range(&self) -> bool {
        (STEP_RANGE.0..=STEP_RANGE.1).contains(&self.step)
    }

    /// A check passes only with a sane step and every error below `tol`.
    pub fn passed(&self, tol: f64) -> bool {
        self.step_in_range() && self.max_rel_error < tol
    }
}

/// Compare analytic and central-difference gradients at `point`.
///
/// `n_coords` coordinates are drawn uniformly (with the given seed) from all
/// entries of all tensors; if `n_coords` covers every entry, all are checked.
pub fn finite_difference_check(
    objective: &dyn Objective,
    point: &[Matrix],
    h: f64,
    n_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, analytic) = objective.eval_with_grad(point)?;
    let analytic: Vec<Matrix> = analytic.iter().map(standard).collect();
    let point: Vec<Matrix> = point.iter().map(standard).collect();
    let sizes: Vec<usize> = point.iter().map(Matrix::len).collect();
    let total: usize = sizes.iter().sum();
    let flat: Vec<usize> = if n_coords >= total {
        (0..total).collect()
    } else {
        let mut rng = rng_for(seed, "gradcheck");
        (0..n_coords).map(|_| rng.random_range(0..total)).collect()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: flat.len(),
        step: h,
        worst: None,
    };
    let mut probe = point.clone();
    for f in flat {
        let (mut tensor, mut offset) = (0, f);
        while offset >= sizes[tensor] {
            offset -= sizes[tensor];
            tensor += 1;
        }
        let original = point[tensor].as_slice().expect("standard layout")[offset];
        set_entry(&mut probe, tensor, offset, original + h);
        let up = objective.eval(&probe)?;
        set_entry(&mut probe, tensor, offset, original - h);
        let down = objective.eval(&probe)?;
        set_entry(&mut probe, tensor, offset, original);
        let fd = (up - down) / (2.0 * h);
        let a = analytic[tensor].as_slice().expect("standard layout")[offset];
        let err = (a - fd).abs() / a.abs().max(1.0);
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((tensor, offset));
        }
    }
    Ok(report)
}

fn standard(m: &Matrix) -> Matrix {
    m.as_standard_layout().into_owned()
}

fn set_entry(point: &mut [Matrix], tensor: usize, offset: usize, value: f64) {
    point[tensor].as_slice_mut().expect("standard layout")[offset] = value;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tape::Tape;
    use ndarray::array;

    /// `sum(W x)`, linear in `W`.
    struct Linear {
        x: Matrix,
    }

    impl Objective for Linear {
        fn eval(&self, point: &[Matrix]) -> Result<f64> {
            Ok(point[0].dot(&self.x).sum())
        }
        fn eval_with_grad(&self, point: &[Matrix]) -> Result<(f64, Vec<Matrix>)> {
            let mut t = Tape::new();
            let w = t.param(point[0].clone());
            let x = t.constant(self.x.clone());
            let y = t.matmul(w, x)?;
            let loss = t.sum(y)?;
            let g = t.backward(loss)?;
            Ok((t.scalar(loss), vec![g.wrt(w)]))
        }
    }

    #[test]
    fn linear_model_is_exact() {
        let obj = Linear {
            x: array![[0.3], [-1.7], [2.2]],
        };
        let w = array![[0.1, 0.2, 0.3], [-0.4, 0.5, 0.6]];
        let rep = finite_difference_check(&obj, &[w], 1e-4, 100, 0).unwrap();
        assert_eq!(rep.coords_checked, 6);
        assert!(rep.max_rel_error < 1e-9, "{rep:?}");
        assert!(rep.passed(1e-4));
    }

    #[test]
    fn tiny_step_is_flagged() {
        let obj = Linear {
            x: array![[0.3], [-1.7], [2.2]],
        };
        let w = array![[0.1, 0.2, 0.3], [-0.4, 0.5, 0.6]];
        let rep = finite_difference_check(&obj, &[w], 1e-12, 100, 0).unwrap();
        assert!(!rep.step_in_range());
        assert!(!rep.passed(1e-4));
    }
}
