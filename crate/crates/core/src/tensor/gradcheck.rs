use rand::Rng;

use super::{Graph, Result, Tensor, Var};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)`.
    pub rel_error: f64,
    pub checked: usize,
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// The scalar loss is `sum(f(inputs) * R)` for a fixed random `R`, so every
/// output element contributes. When `max_coords` is set only that many
/// randomly chosen input coordinates are perturbed.
pub fn gradcheck<R: Rng>(
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    inputs: &[Tensor<f64>],
    h: f64,
    max_coords: Option<usize>,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let mut probe: Option<Tensor<f64>> = None;
    let mut eval = |inputs: &[Tensor<f64>], want_grad: bool, rng: &mut R| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        g.set_check_finite(true);
        let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let shape = g.shape(out).to_vec();
        let r = probe
            .get_or_insert_with(|| {
                let n = shape.iter().product();
                Tensor::new(&shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
            })
            .clone();
        let rv = g.constant(r);
        let prod = g.mul(out, rv)?;
        let loss = g.sum(prod)?;
        let value = g.value(loss).item();
        if !want_grad {
            return Ok((value, vec![]));
        }
        g.backward(loss)?;
        let grads = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| g.grad(v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        Ok((value, grads))
    };

    let (_, analytic) = eval(inputs, true, rng)?;
    let mut coords: Vec<(usize, usize)> =
        inputs.iter().enumerate().flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j))).collect();
    if let Some(k) = max_coords {
        if coords.len() > k {
            for i in 0..k {
                let j = rng.gen_range(i..coords.len());
                coords.swap(i, j);
            }
            coords.truncate(k);
        }
    }
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    for &(i, j) in &coords {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + h;
        let (lp, _) = eval(&work, false, rng)?;
        work[i].data_mut()[j] = orig - h;
        let (lm, _) = eval(&work, false, rng)?;
        work[i].data_mut()[j] = orig;
        let num = (lp - lm) / (2.0 * h);
        let ana = analytic[i][j];
        diff2 += (ana - num).powi(2);
        a2 += ana * ana;
        n2 += num * num;
    }
    let denom = a2.sqrt().max(n2.sqrt()).max(1e-300);
    let rel_error = if a2 == 0.0 && n2 == 0.0 { 0.0 } else { diff2.sqrt() / denom };
    Ok(GradCheckReport { rel_error, checked: coords.len() })
}
