//! Central finite-difference oracles for checking analytic gradients.
//!
//! These routines only ever evaluate the forward function, so they stay
//! independent of the reverse sweep they are used to verify.

use crate::{Mat, ParamId, ParamStore};

/// Symmetric relative error `|a - n| / max(|a| + |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

/// `(f(x + h) - f(x - h)) / 2h`
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Numerical Jacobian `[outputs, inputs]` of `f` at `x`.
pub fn jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Mat {
    let m = f(x).len();
    let mut jac = Mat::zeros(m, x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        for i in 0..m {
            jac.set(i, j, (fp[i] - fm[i]) / (2.0 * h));
        }
    }
    jac
}

/// Frobenius relative error `‖A − N‖ / max(‖N‖, floor)`.
pub fn frobenius_relative_error(analytic: &Mat, numeric: &Mat, floor: f64) -> f64 {
    let diff: f64 = analytic.data().iter().zip(numeric.data()).map(|(a, n)| (a - n) * (a - n)).sum();
    diff.sqrt() / numeric.sq_norm().sqrt().max(floor)
}

#[derive(Clone, Debug)]
pub struct GroupCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub groups: Vec<GroupCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn entries(&self) -> usize {
        self.groups.iter().map(|g| g.entries).sum()
    }

    pub fn worst(&self) -> Option<&GroupCheck> {
        self.groups.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Compares `analytic` parameter gradients against central differences of
/// `loss` for every scalar of every parameter in `ids`. A parameter absent
/// from `analytic` is treated as having an all-zero gradient.
pub fn check_param_gradients(
    store: &ParamStore,
    ids: &[ParamId],
    analytic: &[(ParamId, Mat)],
    mut loss: impl FnMut(&ParamStore) -> f64,
    step: f64,
    floor: f64,
) -> GradCheckReport {
    let mut work = store.clone();
    let mut report = GradCheckReport::default();
    for &id in ids {
        let shape = store.get(id).shape();
        let zero = Mat::zeros(shape.0, shape.1);
        let a = analytic.iter().find(|(p, _)| *p == id).map_or(&zero, |(_, g)| g);
        let mut group = GroupCheck {
            name: store.name(id).to_string(),
            entries: a.len(),
            max_rel_err: 0.0,
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for i in 0..a.len() {
            let x0 = store.get(id).data()[i];
            let numeric = central_difference(
                |x| {
                    work.get_mut(id).data_mut()[i] = x;
                    loss(&work)
                },
                x0,
                step,
            );
            work.get_mut(id).data_mut()[i] = x0;
            let err = relative_error(a.data()[i], numeric, floor);
            if err > group.max_rel_err {
                group.max_rel_err = err;
                group.worst_index = i;
                group.worst_analytic = a.data()[i];
                group.worst_numeric = numeric;
            }
        }
        report.groups.push(group);
    }
    report
}
