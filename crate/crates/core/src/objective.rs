//! Classification loss, hidden-state consistency loss and their weighted sum.

use crate::cells::{backward_into, forward_from_zero, CellParams, HiddenTrajectory, ParamGrads};
use crate::data::SequenceSample;
use crate::error::{check_dim, Error, Result};
use crate::math::Vector;
use crate::parallel::{map_ordered, Execution};

/// Loss terms for one sequence or one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_rc: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_cls: f64, l_rc: f64, lambda: f64) -> Self {
        LossBreakdown {
            l_cls,
            l_rc,
            lambda,
            total: l_cls + lambda * l_rc,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l_cls.is_finite() && self.l_rc.is_finite() && self.total.is_finite()
    }

    /// Mean of per-sequence terms, summed in slice order.
    pub fn mean(parts: &[LossBreakdown], lambda: f64) -> LossBreakdown {
        let n = parts.len() as f64;
        let l_cls = parts.iter().map(|p| p.l_cls).sum::<f64>() / n;
        let l_rc = parts.iter().map(|p| p.l_rc).sum::<f64>() / n;
        LossBreakdown::new(l_cls, l_rc, lambda)
    }
}

/// Softmax cross-entropy. Returns the loss and `softmax(logits) − onehot(label)`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vector)> {
    if label >= logits.len() {
        return Err(Error::param(
            "label",
            format!("{label} out of range for {} classes", logits.len()),
        ));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss, Vector::from_raw(grad)))
}

/// Consistency loss and its gradient with respect to each state.
#[derive(Debug, Clone, PartialEq)]
pub struct RcLoss {
    pub value: f64,
    pub grads: Vec<Vector>,
}

/// `1/(T−1) · Σ ‖h_t − h_{t−1}‖²` over a trajectory's states (h0 excluded).
pub fn rc_loss(trajectory: &HiddenTrajectory) -> Result<RcLoss> {
    rc_loss_states(&trajectory.states)
}

pub fn rc_loss_states(states: &[Vector]) -> Result<RcLoss> {
    let t = states.len();
    if t < 2 {
        return Err(Error::SequenceTooShort { len: t, min: 2 });
    }
    let k = states[0].len();
    for s in states {
        check_dim("hidden state length", k, s.len())?;
    }
    let scale = 1.0 / (t - 1) as f64;
    let diffs: Vec<Vec<f64>> = states
        .windows(2)
        .map(|w| w[1].iter().zip(w[0].iter()).map(|(a, b)| a - b).collect())
        .collect();
    let sum_sq: f64 = diffs
        .iter()
        .map(|d| d.iter().map(|v| v * v).sum::<f64>())
        .sum();
    let grads = (0..t)
        .map(|s| {
            let mut g = vec![0.0; k];
            // h_s appears as the newer state in diffs[s-1] and the older in diffs[s].
            if s >= 1 {
                for (gi, di) in g.iter_mut().zip(&diffs[s - 1]) {
                    *gi += 2.0 * scale * di;
                }
            }
            if s + 1 < t {
                for (gi, di) in g.iter_mut().zip(&diffs[s]) {
                    *gi -= 2.0 * scale * di;
                }
            }
            Vector::from_raw(g)
        })
        .collect();
    Ok(RcLoss {
        value: sum_sq * scale,
        grads,
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::param("lambda", format!("must be finite and >= 0, got {lambda}")))
    }
}

/// Loss terms for one sample without gradients.
pub fn sample_loss(params: &CellParams, sample: &SequenceSample, lambda: f64) -> Result<LossBreakdown> {
    check_lambda(lambda)?;
    let tr = forward_from_zero(params, &sample.inputs)?;
    let logits = params.logits(tr.last())?;
    let (l_cls, _) = cross_entropy(&logits, sample.label)?;
    let rc = rc_loss(&tr)?;
    Ok(LossBreakdown::new(l_cls, rc.value, lambda))
}

/// Full loss and parameter gradient for one sample.
///
/// The classification gradient enters at the final step only; the consistency
/// gradient enters at every step, scaled by `lambda`. With `lambda == 0` the
/// consistency term is still reported but contributes nothing to the gradient.
pub fn total_loss(
    params: &CellParams,
    sample: &SequenceSample,
    lambda: f64,
) -> Result<(LossBreakdown, ParamGrads)> {
    check_lambda(lambda)?;
    let tr = forward_from_zero(params, &sample.inputs)?;
    let h_last = tr.last();
    let logits = params.logits(h_last)?;
    let (l_cls, dlogits) = cross_entropy(&logits, sample.label)?;
    let rc = rc_loss(&tr)?;

    let mut grads = params.zero_grads();
    grads.readout.add_outer(&dlogits, h_last);
    for (b, d) in grads.readout_bias.iter_mut().zip(dlogits.iter()) {
        *b += d;
    }

    let steps = tr.len();
    let mut upstream = if lambda != 0.0 {
        rc.grads
            .iter()
            .map(|g| Vector::from_raw(g.iter().map(|v| lambda * v).collect()))
            .collect()
    } else {
        vec![Vector::zeros(params.hidden_dim); steps]
    };
    params
        .weights
        .readout
        .matvec_t_acc(&dlogits, &mut upstream[steps - 1]);
    backward_into(params, &tr, &upstream, &mut grads)?;
    Ok((LossBreakdown::new(l_cls, rc.value, lambda), grads))
}

/// Mean loss over a batch, no gradients.
pub fn batch_loss(
    params: &CellParams,
    samples: &[&SequenceSample],
    lambda: f64,
    exec: Execution,
) -> Result<LossBreakdown> {
    if samples.is_empty() {
        return Err(Error::param("batch", "empty batch"));
    }
    let parts = map_ordered(exec, samples, |s| sample_loss(params, s, lambda))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(LossBreakdown::mean(&parts, lambda))
}

/// Mean loss and mean gradient over a batch. Per-sample work may run in
/// parallel; the reduction is always in slice order.
pub fn batch_gradient(
    params: &CellParams,
    samples: &[&SequenceSample],
    lambda: f64,
    exec: Execution,
) -> Result<(LossBreakdown, ParamGrads)> {
    if samples.is_empty() {
        return Err(Error::param("batch", "empty batch"));
    }
    let results = map_ordered(exec, samples, |s| total_loss(params, s, lambda))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut parts = Vec::with_capacity(results.len());
    let mut grads = params.zero_grads();
    for (loss, g) in &results {
        parts.push(*loss);
        grads.add_assign(g);
    }
    grads.scale(1.0 / samples.len() as f64);
    Ok((LossBreakdown::mean(&parts, lambda), grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{backward, CellKind};
    use crate::math::{Matrix, Rng};

    fn states(rows: &[&[f64]]) -> Vec<Vector> {
        rows.iter().map(|r| Vector::new(r.to_vec()).unwrap()).collect()
    }

    #[test]
    fn cross_entropy_uniform() {
        let (loss, grad) = cross_entropy(&[0.3; 4], 1).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert!((grad[1] + 0.75).abs() < 1e-15);
        assert!((grad[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_is_stable() {
        let (loss, grad) = cross_entropy(&[1000.0, 0.0], 0).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-300);
        assert!(grad.iter().all(|g| g.is_finite()));
        let (loss, _) = cross_entropy(&[1000.0, 0.0], 1).unwrap();
        assert!((loss - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_hand_value() {
        let (loss, _) = cross_entropy(&[1.0, 2.0, 3.0], 2).unwrap();
        let expected = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
        assert!((loss - expected).abs() < 1e-15);
        assert!((loss - 0.40761).abs() < 1e-5);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        assert!(matches!(
            cross_entropy(&[0.0, 1.0], 2),
            Err(Error::Parameter { name: "label", .. })
        ));
    }

    #[test]
    fn rc_constant_trajectory() {
        let rc = rc_loss_states(&states(&[&[3.0, -1.0][..]; 5])).unwrap();
        assert_eq!(rc.value, 0.0);
        assert!(rc.grads.iter().all(|g| g.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn rc_hand_value() {
        let rc = rc_loss_states(&states(&[&[0.0], &[1.0], &[3.0]])).unwrap();
        assert_eq!(rc.value, 2.5);
        // dh_1 = -(1-0), dh_2 = (1-0) - (3-1), dh_3 = (3-1); all times 2/(T-1) = 1
        assert_eq!(rc.grads[0].as_slice(), &[-1.0]);
        assert_eq!(rc.grads[1].as_slice(), &[-1.0]);
        assert_eq!(rc.grads[2].as_slice(), &[2.0]);
    }

    #[test]
    fn rc_too_short() {
        assert!(matches!(
            rc_loss_states(&states(&[&[1.0]])),
            Err(Error::SequenceTooShort { len: 1, min: 2 })
        ));
    }

    #[test]
    fn rc_gradient_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let (k, t) = (4, 6);
        let traj: Vec<Vector> = (0..t)
            .map(|_| Vector::new((0..k).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap())
            .collect();
        let rc = rc_loss_states(&traj).unwrap();
        let step = 1e-5;
        for s in 0..t {
            for j in 0..k {
                let mut p = traj.clone();
                p[s][j] += step;
                let plus = rc_loss_states(&p).unwrap().value;
                p[s][j] -= 2.0 * step;
                let minus = rc_loss_states(&p).unwrap().value;
                let fd = (plus - minus) / (2.0 * step);
                let a = rc.grads[s][j];
                assert!(
                    (a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1e-3),
                    "h[{s}][{j}]: {a} vs {fd}"
                );
            }
        }
    }

    fn sample(rng: &mut Rng, d: usize, t: usize, label: usize) -> SequenceSample {
        SequenceSample::new(
            "p0",
            "r0",
            label,
            (0..t)
                .map(|_| Vector::new((0..d).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap())
                .collect(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn lambda_zero_matches_unregularized_path() {
        let mut rng = Rng::new(8);
        let p = CellParams::init(CellKind::Gru, 2, 3, 3, &mut rng).unwrap();
        let s = sample(&mut rng, 2, 5, 1);
        let (loss, grads) = total_loss(&p, &s, 0.0).unwrap();
        assert_eq!(loss.total, loss.l_cls);

        // Hand-assembled classification-only gradient.
        let tr = forward_from_zero(&p, &s.inputs).unwrap();
        let logits = p.logits(tr.last()).unwrap();
        let (_, dlogits) = cross_entropy(&logits, 1).unwrap();
        let mut upstream = vec![Vector::zeros(3); 5];
        upstream[4] = p.weights.readout.transpose_matvec(&dlogits);
        let mut expected = backward(&p, &tr, &upstream).unwrap().grads;
        expected.readout.add_outer(&dlogits, tr.last());
        for (b, d) in expected.readout_bias.iter_mut().zip(dlogits.iter()) {
            *b += d;
        }
        assert_eq!(grads, expected);
    }

    #[test]
    fn readout_uses_final_state() {
        let mut rng = Rng::new(2);
        let mut p = CellParams::init(CellKind::Gru, 2, 3, 2, &mut rng).unwrap();
        p.weights.readout = Matrix::new(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let s = sample(&mut rng, 2, 4, 0);
        let tr = forward_from_zero(&p, &s.inputs).unwrap();
        let h = tr.last();
        let (expected, _) = cross_entropy(&[h[0], h[1]], 0).unwrap();
        let loss = sample_loss(&p, &s, 0.3).unwrap();
        assert_eq!(loss.l_cls, expected);
    }

    #[test]
    fn doubling_lambda_doubles_penalty() {
        let mut rng = Rng::new(4);
        let p = CellParams::init(CellKind::Lstm, 2, 3, 2, &mut rng).unwrap();
        let s = sample(&mut rng, 2, 6, 1);
        let a = sample_loss(&p, &s, 0.05).unwrap();
        let b = sample_loss(&p, &s, 0.1).unwrap();
        assert_eq!(a.l_cls, b.l_cls);
        assert_eq!(2.0 * (a.total - a.l_cls), b.total - b.l_cls);
    }

    #[test]
    fn negative_lambda_rejected() {
        let mut rng = Rng::new(4);
        let p = CellParams::init(CellKind::Gru, 2, 3, 2, &mut rng).unwrap();
        let s = sample(&mut rng, 2, 3, 0);
        assert!(total_loss(&p, &s, -0.1).is_err());
    }

    #[test]
    fn batch_gradient_is_mean_of_samples() {
        let mut rng = Rng::new(12);
        let p = CellParams::init(CellKind::Gru, 2, 4, 3, &mut rng).unwrap();
        let samples: Vec<SequenceSample> = (0..5).map(|i| sample(&mut rng, 2, 6, i % 3)).collect();
        let refs: Vec<&SequenceSample> = samples.iter().collect();
        let (loss, grads) = batch_gradient(&p, &refs, 0.05, Execution::Sequential).unwrap();
        let (ploss, pgrads) = batch_gradient(&p, &refs, 0.05, Execution::Parallel).unwrap();
        assert_eq!(loss, ploss);
        assert_eq!(grads, pgrads);
        let mut sum = p.zero_grads();
        let mut cls = 0.0;
        for s in &samples {
            let (l, g) = total_loss(&p, s, 0.05).unwrap();
            sum.add_assign(&g);
            cls += l.l_cls;
        }
        sum.scale(0.2);
        assert_eq!(sum, grads);
        assert!((loss.l_cls - cls / 5.0).abs() < 1e-15);
        let eval = batch_loss(&p, &refs, 0.05, Execution::Sequential).unwrap();
        assert_eq!(eval, loss);
    }
}
