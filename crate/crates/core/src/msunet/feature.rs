use ndarray::Array2;

use crate::error::{Error, Result};

/// Row order of a token matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Rows ordered `(batch, row, col)` over the token grid.
    Grid,
    /// Rows grouped into `win.0 × win.1` windows of the grid after a cyclic shift.
    Windows {
        win: (usize, usize),
        shift: (usize, usize),
    },
}

/// Token features: `batch · grid_h · grid_w` rows by `C` channels, with a layout tag.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub data: Array2<f64>,
    pub batch: usize,
    pub grid: (usize, usize),
    pub layout: Layout,
}

impl FeatureMap {
    pub fn grid(data: Array2<f64>, batch: usize, grid: (usize, usize)) -> Result<Self> {
        let fm = Self {
            data,
            batch,
            grid,
            layout: Layout::Grid,
        };
        fm.check()?;
        Ok(fm)
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn tokens_per_image(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn check(&self) -> Result<()> {
        let rows = self.batch * self.grid.0 * self.grid.1;
        if self.data.nrows() != rows {
            return Err(Error::shape(
                format!("{rows} rows for batch {} on a {:?} grid", self.batch, self.grid),
                format!("{} rows", self.data.nrows()),
            ));
        }
        if let Layout::Windows { win, .. } = self.layout {
            if win.0 == 0 || win.1 == 0 || self.grid.0 % win.0 != 0 || self.grid.1 % win.1 != 0 {
                return Err(Error::shape(
                    format!("grid {:?} divisible by window", self.grid),
                    format!("window {win:?}"),
                ));
            }
        }
        Ok(())
    }

    pub fn expect_grid(&self) -> Result<()> {
        if self.layout != Layout::Grid {
            return Err(Error::shape("grid layout", format!("{:?}", self.layout)));
        }
        self.check()
    }
}
