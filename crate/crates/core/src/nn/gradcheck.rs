//! Central finite-difference gradient checking.
//!
//! The caller fills the store's gradients with the analytic backward, then
//! hands over a closure that evaluates the loss at the store's current
//! values. Each scalar parameter is perturbed by ±h in turn. If the closure
//! reports an activation pattern and it differs between the two sides, the
//! perturbation crossed a kink and the element is skipped.

use std::fmt;

use crate::nn::ParameterStore;

/// Loss at one parameter setting, with an optional hash of the piecewise
/// branch taken (ReLU masks, signs of absolute values).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub loss: f64,
    pub pattern: Option<u64>,
}

impl Probe {
    pub fn smooth(loss: f64) -> Self {
        Self {
            loss,
            pattern: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-5,
            floor: 1e-6,
        }
    }
}

impl GradCheckConfig {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            tolerance,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamReport {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    /// A check passes when every error is strictly below the tolerance.
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tolerance)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.params
            .iter()
            .filter(|p| p.max_rel_error.is_nan() || p.max_rel_error >= self.tolerance)
            .map(|p| p.name.as_str())
            .collect()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{:<12} max_rel_err={:.3e} at [{}] checked={} skipped={} {}",
                p.name,
                p.max_rel_error,
                p.worst_index,
                p.checked,
                p.skipped,
                if p.max_rel_error < self.tolerance {
                    "ok"
                } else {
                    "FAIL"
                }
            )?;
        }
        write!(
            f,
            "overall max_rel_err={:.3e} tolerance={:.1e} => {}",
            self.max_rel_error(),
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Compares the gradients in `store` against central differences of `eval`.
pub fn grad_check(
    store: &mut ParameterStore,
    mut eval: impl FnMut(&ParameterStore) -> Probe,
    cfg: &GradCheckConfig,
) -> GradCheckReport {
    let h = cfg.step;
    let ids: Vec<_> = store.ids().collect();
    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let analytic = store.get(id).grad.data().to_vec();
        let mut report = ParamReport {
            name: store.get(id).name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            checked: 0,
            skipped: 0,
        };
        for (i, &a) in analytic.iter().enumerate() {
            let original = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = original + h;
            let plus = eval(store);
            store.get_mut(id).value.data_mut()[i] = original - h;
            let minus = eval(store);
            store.get_mut(id).value.data_mut()[i] = original;

            if plus.pattern != minus.pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * h);
            let denom = a.abs().max(numeric.abs()).max(cfg.floor);
            let err = (a - numeric).abs() / denom;
            let err = if err.is_nan() { f64::INFINITY } else { err };
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_index = i;
            }
        }
        params.push(report);
    }
    GradCheckReport {
        params,
        tolerance: cfg.tolerance,
    }
}

/// FNV-style running hash for activation patterns.
#[derive(Clone, Copy, Debug)]
pub struct PatternHasher(u64);

impl Default for PatternHasher {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl PatternHasher {
    pub fn push(&mut self, bit: bool) {
        self.0 = (self.0 ^ u64::from(bit)).wrapping_mul(0x0000_0100_0000_01B3);
    }

    pub fn push_signs(&mut self, values: &[f64]) {
        for &v in values {
            self.push(v > 0.0);
            self.push(v < 0.0);
        }
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}
