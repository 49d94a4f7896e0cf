use super::QModel;

/// A scalar function of the online parameters with an analytic gradient.
pub trait Objective {
    fn loss(&self, model: &QModel) -> f64;
    fn loss_and_grad(&self, model: &QModel) -> (f64, Vec<f64>);
    /// Identifies the smooth piece of the objective the model lies on; a
    /// change between two parameter vectors means a kink lies between
    /// them. Empty for objectives that are smooth everywhere.
    fn smooth_piece(&self, _model: &QModel) -> Vec<bool> {
        Vec::new()
    }
}

/// Outcome of a kink-aware gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteDiffReport {
    /// Max relative error over the parameters that were compared.
    pub max_rel_error: f64,
    pub compared: usize,
    /// Parameters whose `±eps` probe crossed a kink; central differences
    /// are not a derivative there, so they are left out.
    pub skipped_kinks: usize,
}

/// `(analytic, numeric)` derivative for every online parameter, the numeric
/// one by central differences of step `eps`.
pub fn finite_diff_pairs(model: &QModel, objective: &dyn Objective, eps: f64) -> Vec<(f64, f64)> {
    let (_, analytic) = objective.loss_and_grad(model);
    let mut probe = model.clone();
    analytic
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let original = probe.params()[i];
            probe.params_mut()[i] = original + eps;
            let plus = objective.loss(&probe);
            probe.params_mut()[i] = original - eps;
            let minus = objective.loss(&probe);
            probe.params_mut()[i] = original;
            (a, (plus - minus) / (2.0 * eps))
        })
        .collect()
}

fn relative_error(a: f64, n: f64) -> f64 {
    let err = (a - n).abs() / (a.abs() + n.abs()).max(1e-8);
    if err.is_nan() {
        f64::INFINITY
    } else {
        err
    }
}

/// Max over parameters of `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`,
/// skipping parameters whose probe crosses a kink of the objective.
/// The objective must be deterministic: no dropout, batch norm in eval mode.
pub fn finite_diff_report(model: &QModel, objective: &dyn Objective, eps: f64) -> FiniteDiffReport {
    let (_, analytic) = objective.loss_and_grad(model);
    let base_piece = objective.smooth_piece(model);
    let mut probe = model.clone();
    let mut report = FiniteDiffReport {
        max_rel_error: 0.0,
        compared: 0,
        skipped_kinks: 0,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let original = probe.params()[i];
        probe.params_mut()[i] = original + eps;
        let plus = objective.loss(&probe);
        let kink_plus = objective.smooth_piece(&probe) != base_piece;
        probe.params_mut()[i] = original - eps;
        let minus = objective.loss(&probe);
        let kink_minus = objective.smooth_piece(&probe) != base_piece;
        probe.params_mut()[i] = original;
        if kink_plus || kink_minus {
            report.skipped_kinks += 1;
            continue;
        }
        report.compared += 1;
        let err = relative_error(a, (plus - minus) / (2.0 * eps));
        report.max_rel_error = report.max_rel_error.max(err);
    }
    report
}

pub fn finite_diff_check(model: &QModel, objective: &dyn Objective, eps: f64) -> f64 {
    finite_diff_report(model, objective, eps).max_rel_error
}
