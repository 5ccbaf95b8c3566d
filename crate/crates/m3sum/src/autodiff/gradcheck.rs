//! Central-difference gradient verification, run in f64.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Worst observed disagreement between analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    /// (input index, flat element index, analytic, numeric) at the maximum.
    pub worst: Option<(usize, usize, f64, f64)>,
}

fn bits(t: &Tensor<f64>) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// Compare analytic gradients against central differences
/// `(f(x+eps) - f(x-eps)) / 2eps` for every element of every input.
///
/// `build` must construct the scalar loss from the given leaves on the given
/// graph, and must be a pure function of the leaf values: the checker
/// evaluates it twice at the base point and fails with a contract error if
/// the two results are not bitwise identical.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1.0)`.
pub fn gradcheck<F>(build: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::config(format!(
            "gradcheck step {eps} outside [1e-6, 1e-3]"
        )));
    }

    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors
            .iter()
            .map(|t| g.leaf(t.clone(), false))
            .collect::<Result<_>>()?;
        let loss = build(&mut g, &vars)?;
        if g.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "gradcheck loss must be scalar, got {:?}",
                g.shape(loss)
            )));
        }
        Ok(g.value(loss).data()[0])
    };

    // Determinism contract: two evaluations at the same point must agree
    // bitwise before finite differences mean anything.
    let base_a = eval(inputs)?;
    let base_b = eval(inputs)?;
    if base_a.to_bits() != base_b.to_bits() {
        return Err(Error::contract(format!(
            "loss evaluation is not deterministic: {base_a:?} vs {base_b:?}"
        )));
    }

    // Analytic gradients from one taped pass.
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.leaf(t.clone(), true))
        .collect::<Result<_>>()?;
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();

    let mut report = GradcheckReport { max_rel_err: 0.0, worst: None };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for ei in 0..t.numel() {
            let x0 = t.data()[ei];
            work[ti].data_mut()[ei] = x0 + eps;
            let fp = eval(&work)?;
            work[ti].data_mut()[ei] = x0 - eps;
            let fm = eval(&work)?;
            work[ti].data_mut()[ei] = x0;
            debug_assert_eq!(bits(&work[ti]), bits(t));

            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[ti].data()[ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((ti, ei, a, numeric));
            }
        }
    }
    Ok(report)
}

/// Panic with a description of the worst element when the check exceeds `tol`.
pub fn assert_gradcheck<F>(build: F, inputs: &[Tensor<f64>], eps: f64, tol: f64)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let report = gradcheck(build, inputs, eps).expect("gradcheck evaluation failed");
    assert!(
        report.max_rel_err <= tol,
        "gradient check failed: max rel err {:.3e} > {tol:.3e} at {:?}",
        report.max_rel_err,
        report.worst
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Axis;

    #[test]
    fn rejects_out_of_range_step() {
        let inputs = [Tensor::vector(vec![1.0f64])];
        let err = gradcheck(|g, vs| g.sum_all(vs[0]), &inputs, 1e-2).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn quadratic_matches_exactly_to_tolerance() {
        let inputs = [Tensor::vector(vec![0.7f64, -1.3, 2.1])];
        assert_gradcheck(
            |g, vs| {
                let sq = g.mul(vs[0], vs[0])?;
                g.sum_all(sq)
            },
            &inputs,
            1e-5,
            1e-9,
        );
    }

    #[test]
    fn softmax_chain_matches() {
        let inputs = [
            Tensor::matrix(2, 3, vec![0.3f64, -0.9, 0.44, 1.2, 0.0, -0.5]).unwrap(),
            Tensor::matrix(3, 2, vec![0.11f64, -0.7, 0.9, 0.2, -0.33, 0.05]).unwrap(),
        ];
        assert_gradcheck(
            |g, vs| {
                let h = g.matmul(vs[0], vs[1])?;
                let s = g.log_softmax(h, Axis::Cols)?;
                let t = g.tanh(s)?;
                g.sum_all(t)
            },
            &inputs,
            1e-5,
            1e-8,
        );
    }
}
