use super::{GradError, NodeId, Tape};
use crate::tensor::Tensor4;

/// Left and right slopes differing by more than this fraction of the larger
/// one mark a non-differentiable point (L1 at a zero residual, relu at zero).
pub const KINK_RATIO: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    /// `max |analytic - central| / max(1e-8, |central|)` over checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates excluded as non-differentiable points.
    pub skipped: usize,
}

/// Compares `analytic` against central differences of `f` at `at`.
///
/// Every coordinate of `at` is perturbed by `±eps` in turn. Coordinates whose
/// one-sided slopes disagree (see [`KINK_RATIO`]) are skipped and counted.
pub fn finite_diff_check<F>(f: F, analytic: &Tensor4<f64>, at: &Tensor4<f64>, eps: f64) -> FdReport
where
    F: Fn(&Tensor4<f64>) -> f64,
{
    assert!(eps > 0.0, "eps must be positive");
    assert_eq!(analytic.shape(), at.shape(), "gradient and point differ in shape");
    let f0 = f(at);
    let mut probe = at.clone();
    let mut report = FdReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for i in 0..at.len() {
        let orig = at.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;

        let right = (fp - f0) / eps;
        let left = (f0 - fm) / eps;
        if (right - left).abs() > KINK_RATIO * right.abs().max(left.abs()) && (right - left).abs() > 1e-9 {
            report.skipped += 1;
            continue;
        }
        let central = (fp - fm) / (2.0 * eps);
        let rel = (analytic.data()[i] - central).abs() / central.abs().max(1e-8);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    report
}

/// Runs [`finite_diff_check`] on every input of a taped computation.
///
/// `build` records a scalar loss from leaves holding `inputs` (in order) and
/// returns the loss node. It is called once for the analytic gradient and
/// again for every perturbed evaluation.
pub fn check_tape_gradients<F>(inputs: &[Tensor4<f64>], build: F, eps: f64) -> Result<Vec<FdReport>, GradError>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId, GradError>,
{
    let eval = |values: &[Tensor4<f64>]| -> Result<(Tape<f64>, Vec<NodeId>, NodeId), GradError> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        Ok((tape, ids, loss))
    };
    let (tape, ids, loss) = eval(inputs)?;
    let grads = tape.backward(loss)?;
    let mut reports = Vec::with_capacity(inputs.len());
    for (i, id) in ids.iter().enumerate() {
        let analytic = grads
            .get(*id)
            .cloned()
            .unwrap_or_else(|| Tensor4::zeros(inputs[i].shape()));
        let f = |x: &Tensor4<f64>| {
            let mut values = inputs.to_vec();
            values[i] = x.clone();
            let (tape, _, loss) = eval(&values).expect("perturbed evaluation succeeds");
            tape.value(loss).data()[0]
        };
        reports.push(finite_diff_check(f, &analytic, &inputs[i], eps));
    }
    Ok(reports)
}
