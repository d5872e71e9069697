use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst element-wise relative error between autodiff and central differences.
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if !(1e-5..=1e-2).contains(&eps) {
        return Err(Error::contract(format!(
            "finite-difference step {eps} outside [1e-5, 1e-2]"
        )));
    }
    Ok(())
}

/// Sixth-order central differences `(45·Δ₁ − 9·Δ₂ + Δ₃) / 60ε`, with
/// `Δₖ = f(x+kε) − f(x−kε)`, for `n` coordinates. `eval(i, d, pins)` returns the
/// function value with coordinate `i` shifted by `d`; when `pins` is given
/// the pass evaluates its kinks on those sides. Passing `None` for the base
/// pass yields the signature that pins every probe.
pub(crate) fn probe<E>(n: usize, analytic: Vec<f64>, eval: E, eps: f64) -> Result<GradCheckReport>
where
    E: Fn(usize, f64, Option<&[bool]>) -> Result<(f64, Vec<bool>)>,
{
    let (_, base) = eval(0, 0.0, None)?;
    let mut numeric = Vec::with_capacity(n);
    for i in 0..n {
        let at = |d: f64| eval(i, d, Some(&base)).map(|r| r.0);
        let d1 = at(eps)? - at(-eps)?;
        let d2 = at(2.0 * eps)? - at(-2.0 * eps)?;
        let d3 = at(3.0 * eps)? - at(-3.0 * eps)?;
        numeric.push((45.0 * d1 - 9.0 * d2 + d3) / (60.0 * eps));
    }
    Ok(compare(analytic, numeric))
}

/// Compares the tape gradient of the scalar function `f` at `x` against
/// central finite differences with step `eps`. The seven-point stencil keeps
/// truncation error at O(ε⁶); batch-normalized layers have enough curvature
/// that the three-point one misses 1e-4 at ε = 1e-3.
///
/// The relative error of element `i` is `|a_i − n_i| / max(|a_i|, |n_i|, s)`
/// where `s = 1e-3·max_j |a_j| + 1e-12`, so entries that are negligible next
/// to the gradient's overall scale are compared on that scale.
///
/// Probes are evaluated with every LeakyReLU, abs and clamp held on the side
/// the unperturbed pass took (see [`Tape::pin_kinks`]). Away from kinks this
/// is the same function, and a probe step wider than the distance to the
/// nearest kink no longer mixes two slopes.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    check_eps(eps)?;
    let gradient = |probe: Tensor| -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let xv = tape.leaf(probe, true);
        let loss = f(&mut tape, xv)?;
        let grads = tape.backward(loss)?;
        Ok(grads
            .wrt(xv)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(x.shape()))
            .into_data())
    };
    let eval = |i: usize, d: f64, pins: Option<&[bool]>| -> Result<(f64, Vec<bool>)> {
        let mut p = x.clone();
        p.data_mut()[i] += d;
        let mut t = Tape::new();
        if let Some(pins) = pins {
            t.pin_kinks(pins.to_vec());
        }
        let v = t.leaf(p, false);
        let out = f(&mut t, v)?;
        Ok((t.value(out).item(), t.kink_signature()))
    };
    probe(x.len(), gradient(x.clone())?, eval, eps)
}

/// Builds the report for paired analytic and numeric gradients.
pub(crate) fn compare(analytic: Vec<f64>, numeric: Vec<f64>) -> GradCheckReport {
    let scale = 1e-3 * analytic.iter().fold(0.0_f64, |m, v| m.max(v.abs())) + 1e-12;
    let (mut worst, mut worst_index) = (0.0_f64, 0);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(scale);
        if err > worst {
            worst = err;
            worst_index = i;
        }
    }
    GradCheckReport {
        max_rel_err: worst,
        worst_index,
        analytic,
        numeric,
    }
}
