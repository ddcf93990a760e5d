use super::{Graph, Tensor, Var};
use crate::error::{usage_err, Result};

/// Outcome of a central finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub entries: usize,
}

/// Magnitude below which gradient entries are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// Compare analytic gradients of the scalar built by `f` against central
/// differences with step `h`, for every entry of every tensor in `params`.
///
/// `f` receives a fresh graph and the parameter handles in order; it must be
/// deterministic.
pub fn check_gradients<F>(params: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let root = f(&mut g, &vars)?;
        Ok(g.scalar_value(root))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let root = f(&mut g, &vars)?;
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| g.grad_slice(*v).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
        .collect();

    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for k in 0..params.len() {
        for i in 0..params[k].len() {
            let orig = params[k].data()[i];
            work[k].data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[k][i];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(usage_err!("non-finite gradient at parameter {k}, entry {i}"));
            }
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
            entries += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        entries,
    })
}
