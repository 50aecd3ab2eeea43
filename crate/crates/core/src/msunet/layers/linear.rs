use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis};

use crate::msunet::ModelWeights;

/// `y = x·W + b` with `W: [in, out]` stored as `{name}.weight`, `b` as `{name}.bias`.
pub fn linear_forward(w: &ModelWeights, name: &str, x: &Array2<f64>) -> Array2<f64> {
    let weight = w.mat(&format!("{name}.weight"));
    let bias = w.vec(&format!("{name}.bias"));
    let mut y = x.dot(&weight);
    y += &bias;
    y
}

pub fn linear_backward(
    w: &ModelWeights,
    grads: &mut ModelWeights,
    name: &str,
    x: &Array2<f64>,
    dy: &Array2<f64>,
) -> Array2<f64> {
    let wname = format!("{name}.weight");
    general_mat_mul(1.0, &x.t(), dy, 1.0, &mut grads.mat_mut(&wname));
    grads.vec_mut(&format!("{name}.bias")).scaled_add(1.0, &dy.sum_axis(Axis(0)));
    dy.dot(&w.mat(&wname).t())
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
pub fn gelu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| 0.5 * v * (1.0 + libm::erf(v * INV_SQRT_2)))
}

pub fn gelu_backward(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(x).for_each(|d, &v| {
        let cdf = 0.5 * (1.0 + libm::erf(v * INV_SQRT_2));
        let pdf = INV_SQRT_2PI * (-0.5 * v * v).exp();
        *d *= cdf + v * pdf;
    });
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    #[test]
    fn linear_matches_hand_product() {
        let mut w = ModelWeights::new();
        w.insert("l.weight", arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).into_dyn());
        w.insert("l.bias", arr1(&[0.5, -0.5]).into_dyn());
        let x = arr2(&[[1.0, 0.0, -1.0]]);
        assert_eq!(linear_forward(&w, "l", &x), arr2(&[[-3.5, -4.5]]));
    }

    #[test]
    fn gelu_known_values() {
        let y = gelu(&arr2(&[[0.0, 1.0, -1.0]]));
        assert_eq!(y[[0, 0]], 0.0);
        assert!((y[[0, 1]] - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!((y[[0, 2]] + 0.158_655_253_931_457_05).abs() < 1e-12);
    }
}
