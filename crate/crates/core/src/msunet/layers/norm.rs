use ndarray::{Array1, Array2, Axis};

use crate::msunet::ModelWeights;

pub const LN_EPS: f64 = 1e-5;

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Row-wise LayerNorm with `{name}.gamma` / `{name}.beta`.
pub fn layer_norm_forward(
    w: &ModelWeights,
    name: &str,
    x: &Array2<f64>,
) -> (Array2<f64>, LayerNormCache) {
    let gamma = w.vec(&format!("{name}.gamma"));
    let beta = w.vec(&format!("{name}.beta"));
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.axis_iter_mut(Axis(0)).zip(inv_std.iter_mut()) {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n;
        *s = 1.0 / (var + LN_EPS).sqrt();
        let k = *s;
        row.mapv_inplace(|v| v * k);
    }
    let mut y = &xhat * &gamma;
    y += &beta;
    (y, LayerNormCache { xhat, inv_std })
}

pub fn layer_norm_backward(
    w: &ModelWeights,
    grads: &mut ModelWeights,
    name: &str,
    cache: &LayerNormCache,
    dy: &Array2<f64>,
) -> Array2<f64> {
    let gname = format!("{name}.gamma");
    let gamma = w.vec(&gname);
    grads
        .vec_mut(&gname)
        .scaled_add(1.0, &(dy * &cache.xhat).sum_axis(Axis(0)));
    grads
        .vec_mut(&format!("{name}.beta"))
        .scaled_add(1.0, &dy.sum_axis(Axis(0)));
    let n = dy.ncols() as f64;
    let mut dx = dy * &gamma;
    for ((mut row, xh), &s) in dx
        .axis_iter_mut(Axis(0))
        .zip(cache.xhat.axis_iter(Axis(0)))
        .zip(cache.inv_std.iter())
    {
        let mean_d = row.sum() / n;
        let mean_dx = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
        ndarray::Zip::from(&mut row)
            .and(&xh)
            .for_each(|d, &h| *d = s * (*d - mean_d - h * mean_dx));
    }
    dx
}
