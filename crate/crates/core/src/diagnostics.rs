//! Discrete moments, the total ion balance and the sorption nullcline.

use crate::error::{Error, Result};
use crate::field::Field;
use crate::mesh::GridSpec;
use crate::rates::RateModel;

/// Discrete moments with cell-center weights and the `dp dr` cell volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    /// `sum f dp dr`
    pub m0: f64,
    /// `sum p_j f dp dr`
    pub m1: f64,
    /// `sum r_i p_j f dp dr`, the ions bound to polymers.
    pub mrp: f64,
}

pub fn moments(field: &Field, grid: &GridSpec) -> Moments {
    let (mut m0, mut m1, mut mrp) = (0.0, 0.0, 0.0);
    for j in 0..grid.np() {
        let p = grid.p_center(j);
        let col = field.column(j);
        let s0: f64 = col.iter().sum();
        let sr: f64 = col
            .iter()
            .enumerate()
            .map(|(i, f)| grid.r_center(i) * f)
            .sum();
        m0 += s0;
        m1 += p * s0;
        mrp += p * sr;
    }
    let vol = grid.cell_volume();
    Moments {
        m0: m0 * vol,
        m1: m1 * vol,
        mrp: mrp * vol,
    }
}

/// Total ion balance `rho = u + M_rp` and its drift from `rho0`.
pub fn balance(field: &Field, u: f64, grid: &GridSpec, rho0: f64) -> (f64, f64) {
    let rho = u + moments(field, grid).mrp;
    (rho, rho - rho0)
}

/// One row of the per-step series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub t: f64,
    pub u: f64,
    pub m0: f64,
    pub m1: f64,
    pub mrp: f64,
    pub rho: f64,
    pub drift: f64,
    pub clamp_count: usize,
}

impl DiagnosticsRecord {
    pub fn new(
        step: usize,
        t: f64,
        field: &Field,
        u: f64,
        grid: &GridSpec,
        rho0: f64,
        clamp_count: usize,
    ) -> Self {
        let m = moments(field, grid);
        let rho = u + m.mrp;
        Self {
            step,
            t,
            u,
            m0: m.m0,
            m1: m.m1,
            mrp: m.mrp,
            rho,
            drift: rho - rho0,
            clamp_count,
        }
    }
}

const NULLCLINE_TOL: f64 = 1e-12;

/// Root in `[0, 1]` of the non-increasing map `r -> V(u, p, r)`.
///
/// Without a sign change the endpoint with the smaller `|V|` is returned.
pub fn sorption_root(model: &RateModel, u: f64, p: f64) -> Result<f64> {
    let v = |r: f64| model.velocity(u, p, r);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let (mut v_lo, mut v_hi) = (v(lo), v(hi));
    if v_hi > v_lo {
        return Err(Error::ModelValidation(format!(
            "V(u={u}, p={p}, .) increases on [0, 1]: V(0) = {v_lo}, V(1) = {v_hi}"
        )));
    }
    if v_lo <= 0.0 {
        return Ok(0.0);
    }
    if v_hi >= 0.0 {
        return Ok(1.0);
    }
    while hi - lo > NULLCLINE_TOL {
        let mid = 0.5 * (lo + hi);
        let v_mid = v(mid);
        if v_mid > v_lo || v_mid < v_hi {
            return Err(Error::ModelValidation(format!(
                "V(u={u}, p={p}, .) is not monotone: V({lo}) = {v_lo}, V({mid}) = {v_mid}, V({hi}) = {v_hi}"
            )));
        }
        if v_mid == 0.0 {
            return Ok(mid);
        }
        if v_mid > 0.0 {
            lo = mid;
            v_lo = v_mid;
        } else {
            hi = mid;
            v_hi = v_mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Nullcline `r_t(p_j)` at every p-center.
pub fn nullcline(model: &RateModel, u: f64, grid: &GridSpec) -> Result<Vec<f64>> {
    if !(u >= 0.0 && u.is_finite()) {
        return Err(Error::Domain(format!(
            "free-ion concentration u = {u} must be finite and >= 0"
        )));
    }
    (0..grid.np())
        .map(|j| sorption_root(model, u, grid.p_center(j)))
        .collect()
}

/// r-statistics of one p-column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnStats {
    pub p: f64,
    /// `sum_i f_{j,i} dr`
    pub mass: f64,
    /// Mass-weighted mean and standard deviation of `r`; `None` for
    /// columns carrying no mass.
    pub rbar: Option<f64>,
    pub rstd: Option<f64>,
    pub r_null: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnProfile {
    pub columns: Vec<ColumnStats>,
}

impl ColumnProfile {
    /// Mass-weighted mean of `|rbar_j - r_null_j|` over columns with mass.
    pub fn concentration_distance(&self) -> f64 {
        let (num, den) = self
            .columns
            .iter()
            .filter_map(|c| c.rbar.map(|rb| (c.mass * (rb - c.r_null).abs(), c.mass)))
            .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }
}

pub fn column_profile(field: &Field, grid: &GridSpec, r_null: &[f64]) -> ColumnProfile {
    assert_eq!(r_null.len(), grid.np(), "one nullcline value per column");
    let total: f64 = field.values().iter().map(|v| v.abs()).sum::<f64>() * grid.cell_volume();
    let dr = grid.dr();
    let columns = (0..grid.np())
        .map(|j| {
            let col = field.column(j);
            let s0: f64 = col.iter().sum();
            let mass = s0 * dr;
            let (rbar, rstd) = if s0 > 0.0 && mass * grid.dp() >= 1e-14 * total {
                let mean = col
                    .iter()
                    .enumerate()
                    .map(|(i, f)| grid.r_center(i) * f)
                    .sum::<f64>()
                    / s0;
                let var = col
                    .iter()
                    .enumerate()
                    .map(|(i, f)| (grid.r_center(i) - mean).powi(2) * f)
                    .sum::<f64>()
                    / s0;
                (Some(mean), Some(var.max(0.0).sqrt()))
            } else {
                (None, None)
            };
            ColumnStats {
                p: grid.p_center(j),
                mass,
                rbar,
                rstd,
                r_null: r_null[j],
            }
        })
        .collect();
    ColumnProfile { columns }
}
