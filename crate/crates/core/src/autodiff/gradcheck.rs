use super::{Dd, Gradients, Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// Per-parameter outcome of a finite-difference check.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
    /// Flat index of the entry with the largest relative error.
    pub worst_index: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    /// Aggregates parameter results by group: the name with its last
    /// dot-separated segment removed (`block.0.gate.i.W1` -> `block.0.gate.i`).
    pub fn groups(&self) -> Vec<ParamCheck> {
        let mut out: Vec<ParamCheck> = Vec::new();
        for p in &self.params {
            let group = p.name.rsplit_once('.').map_or(p.name.as_str(), |(g, _)| g);
            match out.iter_mut().find(|g| g.name == group) {
                Some(g) => {
                    if p.max_rel_error > g.max_rel_error {
                        g.max_rel_error = p.max_rel_error;
                    }
                    g.max_abs_analytic = g.max_abs_analytic.max(p.max_abs_analytic);
                    g.max_abs_numeric = g.max_abs_numeric.max(p.max_abs_numeric);
                }
                None => out.push(ParamCheck {
                    name: group.to_owned(),
                    ..p.clone()
                }),
            }
        }
        out
    }
}

/// Relative error used for gradient comparisons.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn evaluate<F>(store: &ParamStore, build: &mut F) -> Result<f64>
where
    F: FnMut(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let loss = build(&mut g)?;
    let value = g.value(loss);
    if value.shape() != [1, 1] {
        return Err(Error::contract("loss builder must return a scalar"));
    }
    Ok(value.item())
}

// Perturbed losses are taken from a double-double shadow of the tape so the
// difference quotient is not limited by the rounding of the `f64` loss.
fn evaluate_precise<F>(store: &ParamStore, build: &mut F) -> Result<Dd>
where
    F: FnMut(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::precise(store);
    let loss = build(&mut g)?;
    match g.precise_value(loss) {
        Some(&[v]) => Ok(v),
        _ => Err(Error::contract("loss builder must return a scalar")),
    }
}

/// Compares reverse-mode gradients of every trainable entry in `store` against
/// central differences with step `eps`. The two perturbed losses are
/// evaluated in double-double precision.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, build: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph) -> Result<Var>,
{
    grad_check_with(store, eps, build, |_| {})
}

/// [`grad_check`] with a hook that may alter the analytic gradients before
/// comparison (used to exercise failure reporting).
pub fn grad_check_with<F, T>(store: &mut ParamStore, eps: f64, mut build: F, tamper: T) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph) -> Result<Var>,
    T: FnOnce(&mut Gradients),
{
    if !(eps > 0.0) {
        return Err(Error::contract(format!("eps must be positive, got {eps}")));
    }
    let first = evaluate(store, &mut build)?;
    let second = evaluate(store, &mut build)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism(format!(
            "two evaluations at identical parameters gave {first:e} and {second:e}"
        )));
    }

    let mut analytic = {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        g.backward(loss)?
    };
    tamper(&mut analytic);

    let mut report = GradCheckReport::default();
    for pi in 0..store.len() {
        let id = crate::autodiff::ParamId(pi);
        if !store.by_id(id).trainable {
            continue;
        }
        let grad = analytic
            .by_id(id)
            .cloned()
            .ok_or_else(|| Error::contract("missing gradient for trainable parameter"))?;
        let mut check = ParamCheck {
            name: store.by_id(id).name.clone(),
            max_rel_error: 0.0,
            max_abs_analytic: 0.0,
            max_abs_numeric: 0.0,
            worst_index: 0,
        };
        for k in 0..grad.len() {
            let orig = store.by_id(id).tensor.data()[k];
            store.by_id_mut(id).tensor.data_mut()[k] = orig + eps;
            let plus = evaluate_precise(store, &mut build);
            store.by_id_mut(id).tensor.data_mut()[k] = orig - eps;
            let minus = evaluate_precise(store, &mut build);
            store.by_id_mut(id).tensor.data_mut()[k] = orig;
            let numeric = (plus? - minus?).to_f64() / (2.0 * eps);
            let a = grad.data()[k];
            let err = relative_error(a, numeric);
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = k;
            }
            check.max_abs_analytic = check.max_abs_analytic.max(a.abs());
            check.max_abs_numeric = check.max_abs_numeric.max(numeric.abs());
        }
        report.params.push(check);
    }
    Ok(report)
}
