//! Drift measurements on hidden-state trajectories.
//!
//! Per step `t` the report compares the hidden-state jump `‖h_t − h_{t−1}‖`
//! with the input jump `‖x_t − x_{t−1}‖`. Two bounds on the largest jump are
//! recorded:
//!
//! * `√((T−1)·L_rc)`, which holds for every trajectory and is asserted;
//! * `√(L_rc/λ)`, which is only reported together with whether it held.

use std::fmt::Write as _;

use crate::cells::HiddenTrajectory;
use crate::error::{check_dim, Error, Result};
use crate::math::{distance, Vector};

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_DRIFT_THRESHOLD: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftOptions {
    /// Added to the input jump in the ratio denominator.
    pub epsilon: f64,
    /// Ratio above which a step counts as drifting.
    pub threshold: f64,
}

impl Default for DriftOptions {
    fn default() -> Self {
        DriftOptions {
            epsilon: DEFAULT_EPSILON,
            threshold: DEFAULT_DRIFT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub per_step_drift: Vec<f64>,
    pub per_step_input_delta: Vec<f64>,
    pub drift_ratios: Vec<f64>,
    pub mean_drift: f64,
    pub max_drift: f64,
    pub l_rc: f64,
    pub lambda: f64,
    /// `√(l_rc/λ)`, `+∞` when `λ = 0`.
    pub lambda_bound_rhs: f64,
    pub lambda_bound_holds: bool,
    /// `√((T−1)·l_rc)`
    pub algebraic_bound_rhs: f64,
    pub drifting_steps: usize,
}

pub fn drift_report(
    states: &[Vector],
    inputs: &[Vector],
    lambda: f64,
    options: DriftOptions,
) -> Result<DriftReport> {
    let t = states.len();
    if t < 2 {
        return Err(Error::SequenceTooShort { len: t, min: 2 });
    }
    check_dim("drift inputs", t, inputs.len())?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::param("lambda", format!("must be finite and >= 0, got {lambda}")));
    }
    if !(options.epsilon > 0.0) {
        return Err(Error::param("epsilon", "must be > 0"));
    }

    let per_step_drift: Vec<f64> = states.windows(2).map(|w| distance(&w[1], &w[0])).collect();
    let per_step_input_delta: Vec<f64> =
        inputs.windows(2).map(|w| distance(&w[1], &w[0])).collect();
    let drift_ratios: Vec<f64> = per_step_drift
        .iter()
        .zip(&per_step_input_delta)
        .map(|(h, x)| h / (x + options.epsilon))
        .collect();

    let steps = (t - 1) as f64;
    let sum_sq: f64 = states
        .windows(2)
        .map(|w| w[1].iter().zip(w[0].iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    let l_rc = sum_sq / steps;
    let mean_drift = per_step_drift.iter().sum::<f64>() / steps;
    let max_drift = per_step_drift.iter().cloned().fold(0.0, f64::max);

    let algebraic_bound_rhs = (steps * l_rc).sqrt();
    assert!(
        max_drift <= algebraic_bound_rhs + 1e-9 * (1.0 + algebraic_bound_rhs),
        "max drift {max_drift} exceeds sqrt((T-1) L_rc) = {algebraic_bound_rhs}"
    );
    let lambda_bound_rhs = if lambda > 0.0 {
        (l_rc / lambda).sqrt()
    } else {
        f64::INFINITY
    };
    let drifting_steps = drift_ratios.iter().filter(|&&r| r > options.threshold).count();

    Ok(DriftReport {
        per_step_drift,
        per_step_input_delta,
        drift_ratios,
        mean_drift,
        max_drift,
        l_rc,
        lambda,
        lambda_bound_rhs,
        lambda_bound_holds: max_drift <= lambda_bound_rhs,
        algebraic_bound_rhs,
        drifting_steps,
    })
}

pub fn trajectory_drift(
    trajectory: &HiddenTrajectory,
    lambda: f64,
    options: DriftOptions,
) -> Result<DriftReport> {
    drift_report(&trajectory.states, &trajectory.inputs, lambda, options)
}

impl DriftReport {
    pub fn steps(&self) -> usize {
        self.per_step_drift.len()
    }

    /// One row per step (`t` is the 1-based index of the later state) and a
    /// trailing `summary` row holding the column means.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,drift,input_delta,ratio\n");
        for i in 0..self.steps() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                i + 2,
                self.per_step_drift[i],
                self.per_step_input_delta[i],
                self.drift_ratios[i]
            );
        }
        let n = self.steps() as f64;
        let mean_delta = self.per_step_input_delta.iter().sum::<f64>() / n;
        let mean_ratio = self.drift_ratios.iter().sum::<f64>() / n;
        let _ = writeln!(out, "summary,{},{},{}", self.mean_drift, mean_delta, mean_ratio);
        out
    }
}

/// Aggregate over many sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftSummary {
    pub sequences: usize,
    pub mean_drift: f64,
    pub max_drift: f64,
    pub mean_l_rc: f64,
    /// Fraction of sequences for which `max_drift ≤ √(l_rc/λ)`.
    pub lambda_bound_hold_rate: f64,
    pub drifting_step_fraction: f64,
}

impl DriftSummary {
    pub fn from_reports(reports: &[DriftReport]) -> Option<DriftSummary> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let total_steps: usize = reports.iter().map(|r| r.steps()).sum();
        let drifting: usize = reports.iter().map(|r| r.drifting_steps).sum();
        Some(DriftSummary {
            sequences: reports.len(),
            mean_drift: reports.iter().map(|r| r.mean_drift).sum::<f64>() / n,
            max_drift: reports.iter().map(|r| r.max_drift).fold(0.0, f64::max),
            mean_l_rc: reports.iter().map(|r| r.l_rc).sum::<f64>() / n,
            lambda_bound_hold_rate: reports.iter().filter(|r| r.lambda_bound_holds).count() as f64 / n,
            drifting_step_fraction: drifting as f64 / total_steps as f64,
        })
    }

    pub fn to_text(&self) -> String {
        format!(
            "sequences = {}\nmean_drift = {}\nmax_drift = {}\nmean_l_rc = {}\nlambda_bound_hold_rate = {}\ndrifting_step_fraction = {}\n",
            self.sequences,
            self.mean_drift,
            self.max_drift,
            self.mean_l_rc,
            self.lambda_bound_hold_rate,
            self.drifting_step_fraction
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Rng;

    fn vecs(rows: &[&[f64]]) -> Vec<Vector> {
        rows.iter().map(|r| Vector::new(r.to_vec()).unwrap()).collect()
    }

    fn hand_case(lambda: f64) -> DriftReport {
        let h = vecs(&[&[0.0], &[1.0], &[3.0]]);
        let x = vecs(&[&[0.0], &[0.5], &[0.5]]);
        drift_report(&h, &x, lambda, DriftOptions::default()).unwrap()
    }

    #[test]
    fn constant_trajectory() {
        let h = vecs(&[&[2.0, 1.0][..]; 4]);
        let x = vecs(&[&[0.0][..]; 4]);
        let r = drift_report(&h, &x, 0.1, DriftOptions::default()).unwrap();
        assert!(r.per_step_drift.iter().all(|&d| d == 0.0));
        assert_eq!(r.l_rc, 0.0);
        assert!(r.lambda_bound_holds);
        assert_eq!(r.max_drift, 0.0);
        assert_eq!(r.drift_ratios, vec![0.0; 3]);
    }

    #[test]
    fn hand_case_small_lambda() {
        let r = hand_case(0.1);
        assert_eq!(r.l_rc, 2.5);
        assert_eq!(r.max_drift, 2.0);
        assert!((r.algebraic_bound_rhs - 5f64.sqrt()).abs() < 1e-15);
        assert!((r.lambda_bound_rhs - 5.0).abs() < 1e-12);
        assert!(r.lambda_bound_holds);
        assert_eq!(r.per_step_input_delta, vec![0.5, 0.0]);
        // Second step: drift 2 over a zero input change.
        assert_eq!(r.drift_ratios[1], 2.0 / DEFAULT_EPSILON);
        assert_eq!(r.drifting_steps, 1);
    }

    #[test]
    fn hand_case_large_lambda_violates_reported_bound() {
        let r = hand_case(10.0);
        assert!((r.lambda_bound_rhs - 0.5).abs() < 1e-15);
        assert!(!r.lambda_bound_holds);
    }

    #[test]
    fn zero_lambda_bound_is_infinite() {
        let r = hand_case(0.0);
        assert!(r.lambda_bound_rhs.is_infinite());
        assert!(r.lambda_bound_holds);
    }

    #[test]
    fn errors() {
        let h = vecs(&[&[1.0]]);
        assert!(matches!(
            drift_report(&h, &h, 0.1, DriftOptions::default()),
            Err(Error::SequenceTooShort { .. })
        ));
        let h = vecs(&[&[1.0], &[2.0]]);
        let bad = DriftOptions {
            epsilon: 0.0,
            ..DriftOptions::default()
        };
        assert!(drift_report(&h, &h, 0.1, bad).is_err());
        assert!(drift_report(&h, &h[..1], 0.1, DriftOptions::default()).is_err());
    }

    #[test]
    fn translation_invariance_of_ratios() {
        let mut rng = Rng::new(1);
        let rand = |rng: &mut Rng, n: usize, d: usize| -> Vec<Vector> {
            (0..n)
                .map(|_| Vector::new((0..d).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap())
                .collect()
        };
        let h = rand(&mut rng, 7, 3);
        let x = rand(&mut rng, 7, 2);
        let shift = |v: &[Vector], c: &[f64]| -> Vec<Vector> {
            v.iter()
                .map(|r| Vector::new(r.iter().zip(c).map(|(a, b)| a + b).collect()).unwrap())
                .collect()
        };
        let a = drift_report(&h, &x, 0.05, DriftOptions::default()).unwrap();
        let b = drift_report(
            &shift(&h, &[0.7, -1.3, 2.0]),
            &shift(&x, &[5.0, -0.25]),
            0.05,
            DriftOptions::default(),
        )
        .unwrap();
        for (p, q) in a.drift_ratios.iter().zip(&b.drift_ratios) {
            assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0));
        }
    }

    #[test]
    fn csv_layout() {
        let csv = hand_case(0.1).to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,drift,input_delta,ratio");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("2,1,0.5,"));
        assert!(lines[3].starts_with("summary,1.5,0.25,"));
    }

    #[test]
    fn summary_hold_rate() {
        let reports = vec![hand_case(0.1), hand_case(10.0)];
        let s = DriftSummary::from_reports(&reports).unwrap();
        assert_eq!(s.lambda_bound_hold_rate, 0.5);
        assert_eq!(s.max_drift, 2.0);
        assert_eq!(s.drifting_step_fraction, 0.5);
        assert!(DriftSummary::from_reports(&[]).is_none());
    }
}
