use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::msunet::feature::{FeatureMap, Layout};

/// Row permutation between grid order and (shifted) window order.
///
/// Windowed row `r` holds grid row `perm[r]`. The shift is a cyclic roll by
/// `(−shift.0, −shift.1)` before tiling, so window 0 starts at grid `(shift.0, shift.1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowIndex {
    perm: Vec<usize>,
}

impl WindowIndex {
    pub fn new(
        batch: usize,
        grid: (usize, usize),
        win: (usize, usize),
        shift: (usize, usize),
    ) -> Result<Self> {
        let (gh, gw) = grid;
        if win.0 == 0 || win.1 == 0 || gh % win.0 != 0 || gw % win.1 != 0 {
            return Err(Error::shape(
                format!("grid {gh}×{gw} divisible by window"),
                format!("window {}×{}", win.0, win.1),
            ));
        }
        let (nwh, nww) = (gh / win.0, gw / win.1);
        let mut perm = Vec::with_capacity(batch * gh * gw);
        for b in 0..batch {
            for wi in 0..nwh {
                for wj in 0..nww {
                    for a in 0..win.0 {
                        for c in 0..win.1 {
                            let i = (wi * win.0 + a + shift.0) % gh;
                            let j = (wj * win.1 + c + shift.1) % gw;
                            perm.push(b * gh * gw + i * gw + j);
                        }
                    }
                }
            }
        }
        Ok(Self { perm })
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Grid order → window order.
    pub fn gather(&self, x: &Array2<f64>) -> Array2<f64> {
        x.select(Axis(0), &self.perm)
    }

    /// Window order → grid order (the inverse of [`gather`](Self::gather)).
    pub fn scatter(&self, y: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(y.raw_dim());
        for (r, &src) in self.perm.iter().enumerate() {
            out.row_mut(src).assign(&y.row(r));
        }
        out
    }
}

pub fn window_partition(
    x: &FeatureMap,
    win: (usize, usize),
    shift: (usize, usize),
) -> Result<FeatureMap> {
    x.expect_grid()?;
    let idx = WindowIndex::new(x.batch, x.grid, win, shift)?;
    Ok(FeatureMap {
        data: idx.gather(&x.data),
        batch: x.batch,
        grid: x.grid,
        layout: Layout::Windows { win, shift },
    })
}

pub fn window_reverse(x: &FeatureMap) -> Result<FeatureMap> {
    let Layout::Windows { win, shift } = x.layout else {
        return Err(Error::shape("window layout", "grid layout"));
    };
    x.check()?;
    let idx = WindowIndex::new(x.batch, x.grid, win, shift)?;
    FeatureMap::grid(idx.scatter(&x.data), x.batch, x.grid)
}
