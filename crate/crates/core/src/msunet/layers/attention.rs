use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Relative-position lookup for one window: entry `(i, j)` indexes the bias table row
/// for the displacement between tokens `i` and `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelativeIndex {
    win: (usize, usize),
    index: Vec<usize>,
}

impl RelativeIndex {
    pub fn new(win: (usize, usize)) -> Self {
        let (wh, ww) = win;
        let n = wh * ww;
        let mut index = Vec::with_capacity(n * n);
        for t1 in 0..n {
            let (a1, c1) = (t1 / ww, t1 % ww);
            for t2 in 0..n {
                let (a2, c2) = (t2 / ww, t2 % ww);
                index.push((a1 + wh - 1 - a2) * (2 * ww - 1) + (c1 + ww - 1 - c2));
            }
        }
        Self { win, index }
    }

    pub fn table_len(&self) -> usize {
        (2 * self.win.0 - 1) * (2 * self.win.1 - 1)
    }

    pub fn tokens(&self) -> usize {
        self.win.0 * self.win.1
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> usize {
        self.index[i * self.tokens() + j]
    }
}

pub struct AttentionCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Softmax probabilities, one `N×N` matrix per (window, head) in window-major order.
    probs: Vec<Array2<f64>>,
    heads: usize,
    rel: RelativeIndex,
}

fn check_inputs(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, heads: usize, n: usize) -> Result<()> {
    if q.dim() != k.dim() || q.dim() != v.dim() {
        return Err(Error::shape(
            format!("q {:?}", q.dim()),
            format!("k {:?}, v {:?}", k.dim(), v.dim()),
        ));
    }
    if heads == 0 || q.ncols() % heads != 0 {
        return Err(Error::shape(
            format!("channels divisible by {heads} heads"),
            format!("{} channels", q.ncols()),
        ));
    }
    if n == 0 || q.nrows() % n != 0 {
        return Err(Error::shape(
            format!("rows multiple of window size {n}"),
            format!("{} rows", q.nrows()),
        ));
    }
    Ok(())
}

/// Multi-head window attention `Softmax(Q·Kᵀ/√d + B)·V` on window-ordered rows.
///
/// `table` is `[(2h−1)(2w−1), heads]`; heads occupy consecutive column blocks of width
/// `d = C / heads` and are concatenated back in the same order.
pub fn window_attention(
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    table: ArrayView2<f64>,
    heads: usize,
    win: (usize, usize),
) -> Result<(Array2<f64>, AttentionCache)> {
    let rel = RelativeIndex::new(win);
    let n = rel.tokens();
    check_inputs(&q, &k, &v, heads, n)?;
    if table.dim() != (rel.table_len(), heads) {
        return Err(Error::shape(
            format!("bias table {}×{heads}", rel.table_len()),
            format!("{:?}", table.dim()),
        ));
    }
    let d = q.ncols() / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let windows = q.nrows() / n;
    let mut out = Array2::zeros(q.raw_dim());
    let mut probs = Vec::with_capacity(windows * heads);
    for w in 0..windows {
        let rows = w * n..(w + 1) * n;
        for h in 0..heads {
            let cols = h * d..(h + 1) * d;
            let qs = q.slice(s![rows.clone(), cols.clone()]);
            let ks = k.slice(s![rows.clone(), cols.clone()]);
            let vs = v.slice(s![rows.clone(), cols.clone()]);
            let mut p = qs.dot(&ks.t());
            for i in 0..n {
                let mut row = p.row_mut(i);
                let mut max = f64::NEG_INFINITY;
                for j in 0..n {
                    let val = row[j] * scale + table[[rel.at(i, j), h]];
                    row[j] = val;
                    max = max.max(val);
                }
                let mut sum = 0.0;
                row.mapv_inplace(|x| {
                    let e = (x - max).exp();
                    sum += e;
                    e
                });
                row.mapv_inplace(|x| x / sum);
            }
            general_mat_mul(1.0, &p, &vs, 0.0, &mut out.slice_mut(s![rows.clone(), cols]));
            probs.push(p);
        }
    }
    Ok((
        out,
        AttentionCache {
            q,
            k,
            v,
            probs,
            heads,
            rel,
        },
    ))
}

/// Returns `(dq, dk, dv, d_table)`.
pub fn window_attention_backward(
    cache: &AttentionCache,
    d_out: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
    let heads = cache.heads;
    let n = cache.rel.tokens();
    let d = cache.q.ncols() / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let windows = cache.q.nrows() / n;
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    let mut d_table = Array2::zeros((cache.rel.table_len(), heads));
    for w in 0..windows {
        let rows = w * n..(w + 1) * n;
        for h in 0..heads {
            let cols = h * d..(h + 1) * d;
            let p = &cache.probs[w * heads + h];
            let dout = d_out.slice(s![rows.clone(), cols.clone()]);
            let qs = cache.q.slice(s![rows.clone(), cols.clone()]);
            let ks = cache.k.slice(s![rows.clone(), cols.clone()]);
            let vs = cache.v.slice(s![rows.clone(), cols.clone()]);
            general_mat_mul(1.0, &p.t(), &dout, 0.0, &mut dv.slice_mut(s![rows.clone(), cols.clone()]));
            let mut ds = dout.dot(&vs.t());
            for (mut drow, prow) in ds.axis_iter_mut(Axis(0)).zip(p.axis_iter(Axis(0))) {
                let dot: f64 = drow.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
                ndarray::Zip::from(&mut drow)
                    .and(&prow)
                    .for_each(|g, &pv| *g = pv * (*g - dot));
            }
            for i in 0..n {
                for j in 0..n {
                    d_table[[cache.rel.at(i, j), h]] += ds[[i, j]];
                }
            }
            general_mat_mul(scale, &ds, &ks, 0.0, &mut dq.slice_mut(s![rows.clone(), cols.clone()]));
            general_mat_mul(scale, &ds.t(), &qs, 0.0, &mut dk.slice_mut(s![rows.clone(), cols]));
        }
    }
    (dq, dk, dv, d_table)
}
