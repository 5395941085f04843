use super::optim::OptimizerState;
use crate::error::{shape_err, Result};
use crate::layers::KanLayerParams;
use crate::tensor::Matrix;

/// Full-batch Adam regression of a standalone KAN layer on mean squared
/// error. `x` is `n × input_dim`, `y` is `n × output_dim`. Returns the MSE
/// before each step followed by the final MSE.
pub fn fit_kan_layer(layer: &mut KanLayerParams, x: &Matrix, y: &Matrix, steps: usize, learning_rate: f64) -> Result<Vec<f64>> {
    if x.rows() != y.rows() || y.cols() != layer.output_dim {
        return Err(shape_err!("targets {:?} do not match inputs {:?}", y.shape(), x.shape()));
    }
    let mut opt = OptimizerState::new(learning_rate);
    let n = (y.rows() * y.cols()) as f64;
    let mut history = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let (pred, cache) = layer.forward_cached(x)?;
        let diff: Vec<f64> = pred.as_slice().iter().zip(y.as_slice()).map(|(p, t)| p - t).collect();
        history.push(diff.iter().map(|d| d * d).sum::<f64>() / n);
        if step == steps {
            break;
        }
        let dy = Matrix::from_vec(y.rows(), y.cols(), diff.iter().map(|d| 2.0 * d / n).collect())?;
        let mut grads = layer.zeros_like();
        layer.backward(&cache, &dy, &mut grads);
        opt.step_slices(
            &mut [layer.coeffs.as_mut_slice(), layer.base_weight.as_mut_slice()],
            &[grads.coeffs.as_slice(), grads.base_weight.as_slice()],
        )?;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::SplineGrid;

    #[test]
    fn fits_a_line_exactly_representable_by_splines() {
        let grid = SplineGrid::new(-1.0, 1.0, 3, 6).unwrap();
        let mut layer = KanLayerParams::zeros(1, 1, grid);
        let xs: Vec<f64> = (0..50).map(|i| -1.0 + 2.0 * i as f64 / 49.0).collect();
        let x = Matrix::from_vec(50, 1, xs.clone()).unwrap();
        let y = Matrix::from_vec(50, 1, xs.iter().map(|v| 0.5 * v).collect()).unwrap();
        let h = fit_kan_layer(&mut layer, &x, &y, 1500, 0.02).unwrap();
        assert!(h.last().unwrap() < &1e-5, "{:?}", h.last());
        assert!(h.last().unwrap() < &h[0]);
    }
}
