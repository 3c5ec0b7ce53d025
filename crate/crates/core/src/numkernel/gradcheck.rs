use super::Matrix;

/// Worst disagreement between analytic gradients and central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub entries: usize,
}

/// Compares `analytic` against central differences of `loss` taken with
/// step `h` on every entry of every parameter.
///
/// Relative error is `|a - n| / max(|a|, |n|, floor)`; the floor keeps
/// entries whose true gradient is zero from dividing rounding noise by
/// nothing.
pub fn check_gradients(
    params: &[Matrix],
    analytic: &[Matrix],
    h: f64,
    floor: f64,
    mut loss: impl FnMut(&[Matrix]) -> f64,
) -> GradCheck {
    assert_eq!(params.len(), analytic.len());
    let mut work = params.to_vec();
    let mut out = GradCheck {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        entries: 0,
    };
    for (k, g) in analytic.iter().enumerate() {
        assert_eq!(g.shape(), params[k].shape());
        for e in 0..g.data().len() {
            let orig = work[k].data()[e];
            work[k].data_mut()[e] = orig + h;
            let up = loss(&work);
            work[k].data_mut()[e] = orig - h;
            let down = loss(&work);
            work[k].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = g.data()[e];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(floor);
            out.max_abs_err = out.max_abs_err.max(abs);
            out.max_rel_err = out.max_rel_err.max(rel);
            out.entries += 1;
        }
    }
    out
}
