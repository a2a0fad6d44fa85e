use super::graph::{Graph, Var};
use super::layers::Parameterized;
use super::tensor::Tensor;
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Magnitude below which gradient entries are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// Maximum over entries of `|analytic − numeric| / max(|analytic|, |numeric|, REL_FLOOR)`
/// for the scalar function `f` at `x`.
pub fn grad_check<F>(f: F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let eval = |t: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(t.clone());
        let out = f(&mut g, v)?;
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::new();
    let v = g.param(x.clone());
    let out = f(&mut g, v)?;
    let grads = g.backward(out)?;
    let analytic = grads.get_or_zeros(v, x);

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - FD_STEP;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Same measure over every parameter of `module`. `f` receives the module
/// and its parameter vars in visiting order.
pub fn grad_check_params<M, F>(module: &M, f: F) -> Result<f64>
where
    M: Parameterized + Clone,
    F: Fn(&M, &mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = module.bind(&mut g, true);
    let out = f(module, &mut g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<f64> = vars
        .iter()
        .flat_map(|&v| grads.get_or_zeros(v, g.value(v)).into_data())
        .collect();

    let eval = |m: &M| -> Result<f64> {
        let mut g = Graph::new();
        let vars = m.bind(&mut g, false);
        let out = f(m, &mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };
    let flat = module.flatten().into_data();
    let mut probe = module.clone();
    let mut worst: f64 = 0.0;
    let mut x = flat.clone();
    for i in 0..flat.len() {
        x[i] = flat[i] + FD_STEP;
        probe.unflatten(&x);
        let up = eval(&probe)?;
        x[i] = flat[i] - FD_STEP;
        probe.unflatten(&x);
        let down = eval(&probe)?;
        x[i] = flat[i];
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR));
    }
    Ok(worst)
}
