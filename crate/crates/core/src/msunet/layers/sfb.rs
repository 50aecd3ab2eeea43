//! Skip fusion: channel-concatenate encoder and decoder tokens, then a kernel-size-1
//! convolution along the token axis (`2C → C`). With tokens as rows the permutes
//! around the convolution are layout no-ops, so it is a row-wise linear map.

use ndarray::{concatenate, s, Array2, Axis};

use super::linear::{linear_backward, linear_forward};
use crate::error::{Error, Result};
use crate::msunet::ModelWeights;

pub fn sfb_forward(
    w: &ModelWeights,
    name: &str,
    enc: &Array2<f64>,
    dec: &Array2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if enc.dim() != dec.dim() {
        return Err(Error::shape(
            format!("encoder {:?}", enc.dim()),
            format!("decoder {:?}", dec.dim()),
        ));
    }
    let cat = concatenate(Axis(1), &[enc.view(), dec.view()]).expect("same rows");
    let y = linear_forward(w, name, &cat);
    Ok((y, cat))
}

/// Returns `(d_enc, d_dec)`.
pub fn sfb_backward(
    w: &ModelWeights,
    grads: &mut ModelWeights,
    name: &str,
    cat: &Array2<f64>,
    dy: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let d_cat = linear_backward(w, grads, name, cat, dy);
    let c = d_cat.ncols() / 2;
    (
        d_cat.slice(s![.., ..c]).to_owned(),
        d_cat.slice(s![.., c..]).to_owned(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    #[test]
    fn identity_zero_kernel_passes_encoder_through() {
        let c = 3;
        let mut k = Array2::zeros((2 * c, c));
        for i in 0..c {
            k[[i, i]] = 1.0;
        }
        let mut w = ModelWeights::new();
        w.insert("f.weight", k.into_dyn());
        w.insert("f.bias", Array1::<f64>::zeros(c).into_dyn());
        let enc = Array2::from_shape_fn((5, c), |(i, j)| (i * 3 + j) as f64 - 4.0);
        let dec = Array2::from_elem((5, c), 9.0);
        let (y, _) = sfb_forward(&w, "f", &enc, &dec).unwrap();
        assert_eq!(y, enc);
        assert!(sfb_forward(&w, "f", &enc, &Array2::zeros((4, c))).is_err());
    }
}
