use super::{Binding, Graph, ParamVector, Var};
use crate::error::{Error, Result};

/// Outcome of a central-difference gradient comparison.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// `max_i |g_ad − g_fd| / max(1, |g_ad|)`.
    pub max_rel_error: f64,
    /// Flat coordinate with the largest error.
    pub worst: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

fn evaluate<F>(loss: &F, params: &ParamVector) -> Result<(Graph, Binding, Var)>
where
    F: Fn(&mut Graph, Binding) -> Result<Var>,
{
    let mut g = Graph::new();
    let b = g.bind(params);
    let out = loss(&mut g, b)?;
    if g.value(out).shape() != (1, 1) {
        return Err(Error::Usage("gradient check needs a scalar loss".into()));
    }
    Ok((g, b, out))
}

/// Compares the reverse-mode gradient of `loss` at `params` against central
/// differences with step `h`, coordinate by coordinate.
pub fn finite_diff_check<F>(loss: F, params: &ParamVector, h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, Binding) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Usage(format!("step h = {h} outside [1e-7, 1e-3]")));
    }
    let (g, b, out) = evaluate(&loss, params)?;
    let grads = g.backward(out)?;
    let analytic = g.param_gradient(&grads, b).values().to_vec();

    let mut numeric = Vec::with_capacity(params.len());
    let mut probe = params.clone();
    for i in 0..params.len() {
        let x0 = params.values()[i];
        probe.values_mut()[i] = x0 + h;
        let (gp, _, op) = evaluate(&loss, &probe)?;
        probe.values_mut()[i] = x0 - h;
        let (gm, _, om) = evaluate(&loss, &probe)?;
        probe.values_mut()[i] = x0;
        let fp = gp.scalar_value(op).expect("scalar");
        let fm = gm.scalar_value(om).expect("scalar");
        numeric.push((fp - fm) / (2.0 * h));
    }

    let mut max_rel_error: f64 = 0.0;
    let mut worst = 0;
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        if a.is_nan() || n.is_nan() {
            let (name, k) = params.locate(i).unwrap_or(("?", i));
            return Err(Error::NonFinite(format!(
                "gradient coordinate {i} ({name}[{k}]) is NaN: analytic {a}, numeric {n}"
            )));
        }
        let err = (a - n).abs() / a.abs().max(1.0);
        if err > max_rel_error {
            max_rel_error = err;
            worst = i;
        }
    }
    Ok(GradCheck {
        max_rel_error,
        worst,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    #[test]
    fn linear_loss_is_exact() {
        let mut p = ParamVector::zeros([("w", 3, 1)]);
        p.values_mut().copy_from_slice(&[0.3, -1.2, 2.0]);
        let x = Matrix::from_rows(&[vec![1.0, 2.0, -0.5]]).unwrap();
        let check = finite_diff_check(
            |g, b| {
                let w = g.slot(b, 0);
                let xv = g.constant(x.clone());
                let y = g.matmul(xv, w)?;
                g.sum(y)
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-10, "{}", check.max_rel_error);
    }

    #[test]
    fn step_outside_range_is_rejected() {
        let p = ParamVector::zeros([("w", 1, 1)]);
        let r = finite_diff_check(|g, b| Ok(g.slot(b, 0)), &p, 1e-2);
        assert!(matches!(r, Err(Error::Usage(_))));
    }
}
