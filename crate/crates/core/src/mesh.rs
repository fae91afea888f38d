//! Uniform finite-volume mesh of the truncated configuration space
//! `(0, P) x (0, 1)` and the uniform time axis.
//!
//! Cells are indexed by `(j, i)` with `j = 0..=J` along the polymer size `p`
//! and `i = 0..=I` along the ion ratio `r`. Edges are always computed as
//! `index * width`, never by accumulation.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    p_max: f64,
    j_max: usize,
    i_max: usize,
    dp: f64,
    dr: f64,
}

impl GridSpec {
    pub fn new(p_max: f64, j_max: usize, i_max: usize) -> Result<Self> {
        if !(p_max.is_finite() && p_max > 0.0) {
            return Err(Error::config(
                "grid.P",
                format!("expected a finite value > 0, got {p_max}"),
            ));
        }
        Ok(Self {
            p_max,
            j_max,
            i_max,
            dp: p_max / (j_max + 1) as f64,
            dr: 1.0 / (i_max + 1) as f64,
        })
    }

    /// Size cutoff `P`.
    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    /// Largest p-cell index `J`.
    pub fn j_max(&self) -> usize {
        self.j_max
    }

    /// Largest r-cell index `I`.
    pub fn i_max(&self) -> usize {
        self.i_max
    }

    /// Number of p-cells, `J + 1`.
    pub fn np(&self) -> usize {
        self.j_max + 1
    }

    /// Number of r-cells, `I + 1`.
    pub fn nr(&self) -> usize {
        self.i_max + 1
    }

    pub fn n_cells(&self) -> usize {
        self.np() * self.nr()
    }

    pub fn dp(&self) -> f64 {
        self.dp
    }

    pub fn dr(&self) -> f64 {
        self.dr
    }

    pub fn cell_volume(&self) -> f64 {
        self.dp * self.dr
    }

    /// Lower p-edge of cell `j`, i.e. `p_{j-1/2} = j dp`, for `j = 0..=J+1`.
    /// The last edge is pinned to `P`.
    pub fn p_edge(&self, j: usize) -> f64 {
        if j == self.j_max + 1 {
            self.p_max
        } else {
            j as f64 * self.dp
        }
    }

    /// Lower r-edge of cell `i`, `r_{i-1/2} = i dr`, for `i = 0..=I+1`.
    pub fn r_edge(&self, i: usize) -> f64 {
        if i == self.i_max + 1 {
            1.0
        } else {
            i as f64 * self.dr
        }
    }

    pub fn p_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dp
    }

    pub fn r_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dr
    }

    /// Flat row-major index of cell `(j, i)`.
    #[inline]
    pub fn idx(&self, j: usize, i: usize) -> usize {
        j * (self.i_max + 1) + i
    }

    /// Index `i` of the r-cell containing `v`, so that
    /// `r_edge(i) <= v < r_edge(i + 1)`; `None` when `v >= 1`.
    ///
    /// Negative inputs map to cell 0.
    pub fn r_cell_of(&self, v: f64) -> Option<usize> {
        if v >= 1.0 {
            return None;
        }
        if v <= 0.0 {
            return Some(0);
        }
        let mut i = ((v / self.dr).floor() as usize).min(self.i_max);
        // floor() can land one cell off when v sits on an edge
        while i > 0 && v < self.r_edge(i) {
            i -= 1;
        }
        while i < self.i_max && v >= self.r_edge(i + 1) {
            i += 1;
        }
        Some(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSpec {
    t_final: f64,
    steps: usize,
    dt: f64,
}

impl TimeSpec {
    /// `steps = 0` is only accepted together with `t_final = 0`, the empty run.
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if !(t_final.is_finite() && t_final >= 0.0) {
            return Err(Error::config(
                "time.T",
                format!("expected a finite value >= 0, got {t_final}"),
            ));
        }
        if (steps == 0) != (t_final == 0.0) {
            return Err(Error::config(
                "time.dt",
                format!("T = {t_final} with {steps} steps: only T = 0 may have no steps"),
            ));
        }
        let dt = if steps == 0 {
            0.0
        } else {
            t_final / steps as f64
        };
        Ok(Self { t_final, steps, dt })
    }

    /// Smallest uniform step no larger than `dt_target` that divides `t_final`.
    pub fn from_max_step(t_final: f64, dt_target: f64) -> Result<Self> {
        if !(dt_target.is_finite() && dt_target > 0.0) {
            return Err(Error::config(
                "time.dt",
                format!("expected a finite value > 0, got {dt_target}"),
            ));
        }
        if !(t_final.is_finite() && t_final >= 0.0) {
            return Err(Error::config(
                "time.T",
                format!("expected a finite value >= 0, got {t_final}"),
            ));
        }
        let steps = (t_final / dt_target).ceil() as usize;
        Self::new(t_final, steps)
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.t_final
        } else {
            n as f64 * self.dt
        }
    }
}
