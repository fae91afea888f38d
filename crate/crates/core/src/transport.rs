//! First-order upwind sorption fluxes in `r` with zero-flux walls at
//! `r = 0` and `r = 1`.

use crate::field::Field;
use crate::mesh::GridSpec;
use crate::rates::VelocityTable;

/// Interface fluxes `F_{j,i-1/2}` for `j = 0..=J`, `i = 0..=I+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxTable {
    nr_faces: usize,
    values: Vec<f64>,
}

impl FluxTable {
    #[inline]
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.values[j * self.nr_faces + i]
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.nr_faces..(j + 1) * self.nr_faces]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `sum_{j, i=0..=I} F_{j,i-1/2}`, the quantity feeding the ion update.
    pub fn interior_sum(&self) -> f64 {
        self.values
            .chunks(self.nr_faces)
            .map(|col| col[..self.nr_faces - 1].iter().sum::<f64>())
            .sum()
    }
}

/// Upwind fluxes of one column: `faces` receives `nr + 1` values.
#[inline]
pub fn column_fluxes(f: &[f64], vel: &[f64], faces: &mut [f64]) {
    let nr = f.len();
    debug_assert_eq!(vel.len(), nr + 1);
    debug_assert_eq!(faces.len(), nr + 1);
    faces[0] = 0.0;
    faces[nr] = 0.0;
    for i in 1..nr {
        let v = vel[i];
        faces[i] = v.max(0.0) * f[i - 1] + v.min(0.0) * f[i];
    }
}

/// Per-cell divergence `(F_{i+1/2} - F_{i-1/2}) / dr` of one column.
#[inline]
pub fn column_increment(faces: &[f64], dr: f64, out: &mut [f64]) {
    for (i, d) in out.iter_mut().enumerate() {
        *d = (faces[i + 1] - faces[i]) / dr;
    }
}

pub fn upwind_fluxes(f: &Field, vel: &VelocityTable, grid: &GridSpec) -> FluxTable {
    let nr_faces = grid.nr() + 1;
    let mut values = vec![0.0; grid.np() * nr_faces];
    for (j, faces) in values.chunks_mut(nr_faces).enumerate() {
        column_fluxes(f.column(j), vel.column(j), faces);
    }
    FluxTable { nr_faces, values }
}

/// `D_{j,i} = (F_{j,i+1/2} - F_{j,i-1/2}) / dr`, without the time step.
pub fn transport_increment(flux: &FluxTable, grid: &GridSpec) -> Field {
    let mut out = Field::zeros(grid);
    for j in 0..grid.np() {
        column_increment(flux.column(j), grid.dr(), out.column_mut(j));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(j: usize, i: usize) -> GridSpec {
        GridSpec::new(1.0, j, i).unwrap()
    }

    #[test]
    fn zero_field_gives_zero_fluxes() {
        let g = grid(3, 4);
        let vel = VelocityTable::uniform(&g, 2.5);
        let flux = upwind_fluxes(&Field::zeros(&g), &vel, &g);
        assert_eq!(flux.max_abs(), 0.0);
        assert_eq!(transport_increment(&flux, &g).max_abs(), 0.0);
    }

    #[test]
    fn positive_velocity_takes_left_value() {
        let g = grid(2, 1);
        let f = Field::from_fn(&g, |j, i| 1.0 + j as f64 + 10.0 * i as f64);
        let flux = upwind_fluxes(&f, &VelocityTable::uniform(&g, 1.0), &g);
        for j in 0..g.np() {
            assert_eq!(flux.get(j, 1), f[(j, 0)]);
            assert_eq!(flux.get(j, 0), 0.0);
            assert_eq!(flux.get(j, 2), 0.0);
        }
    }

    #[test]
    fn negative_velocity_takes_right_value() {
        let g = grid(2, 1);
        let f = Field::from_fn(&g, |j, i| 1.0 + j as f64 + 10.0 * i as f64);
        let flux = upwind_fluxes(&f, &VelocityTable::uniform(&g, -1.0), &g);
        for j in 0..g.np() {
            assert_eq!(flux.get(j, 1), -f[(j, 1)]);
        }
    }

    #[test]
    fn single_interface_increment() {
        let g = grid(0, 1);
        let f = Field::from_fn(&g, |_, i| if i == 0 { 1.0 } else { 0.0 });
        let flux = upwind_fluxes(&f, &VelocityTable::uniform(&g, 1.0), &g);
        let d = transport_increment(&flux, &g);
        assert_eq!(d[(0, 0)], 1.0 / g.dr());
        assert_eq!(d[(0, 1)], -1.0 / g.dr());
    }

    fn monotone_table(g: &GridSpec, seeds: &[f64]) -> VelocityTable {
        // cumulative sums of nonnegative drops from a random start keep
        // every column non-increasing
        let nf = g.nr() + 1;
        let mut k = 0;
        VelocityTable::from_fn(g, |_, i| {
            let v = seeds[k % seeds.len()] * 4.0 - 2.0 - i as f64 * seeds[(k + 1) % seeds.len()];
            k += 1;
            if k % nf == 0 {
                k += 3;
            }
            v
        })
    }

    proptest! {
        #[test]
        fn columns_telescope(
            values in proptest::collection::vec(0.0f64..10.0, 36),
            seeds in proptest::collection::vec(0.0f64..1.0, 7),
        ) {
            let g = grid(5, 5);
            let f = Field::from_values(&g, values);
            let vel = monotone_table(&g, &seeds);
            let flux = upwind_fluxes(&f, &vel, &g);
            let d = transport_increment(&flux, &g);
            let tol = 1e-13 * (flux.max_abs() + 1.0);
            for j in 0..g.np() {
                prop_assert_eq!(flux.get(j, 0), 0.0);
                prop_assert_eq!(flux.get(j, g.nr()), 0.0);
                let s: f64 = d.column(j).iter().map(|x| x * g.dr()).sum();
                prop_assert!(s.abs() <= tol, "column {} sums to {}", j, s);
            }
        }

        #[test]
        fn cfl_step_stays_nonnegative(
            values in proptest::collection::vec(0.0f64..10.0, 36),
            seeds in proptest::collection::vec(0.0f64..1.0, 7),
        ) {
            let g = grid(5, 5);
            let f = Field::from_values(&g, values);
            let vel = monotone_table(&g, &seeds);
            let dt = 0.99 * g.dr() / (4.0 * vel.max_abs().max(1e-12));
            let d = transport_increment(&upwind_fluxes(&f, &vel, &g), &g);
            for (x, dx) in f.values().iter().zip(d.values()) {
                prop_assert!(x - dt * dx >= -1e-13 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn positive_velocity_moves_mass_up(
            values in proptest::collection::vec(0.0f64..10.0, 36),
            speed in 0.0f64..3.0,
        ) {
            let g = grid(5, 5);
            let f = Field::from_values(&g, values);
            let vel = VelocityTable::uniform(&g, speed);
            let dt = 0.99 * g.dr() / (4.0 * speed.max(1e-12));
            let d = transport_increment(&upwind_fluxes(&f, &vel, &g), &g);
            for j in 0..g.np() {
                let col = f.column(j);
                let mass: f64 = col.iter().sum();
                if mass <= 0.0 {
                    continue;
                }
                let before: f64 = col.iter().enumerate().map(|(i, x)| g.r_center(i) * x).sum::<f64>() / mass;
                let next: Vec<f64> = col.iter().zip(d.column(j)).map(|(x, dx)| x - dt * dx).collect();
                let after: f64 = next.iter().enumerate().map(|(i, x)| g.r_center(i) * x).sum::<f64>()
                    / next.iter().sum::<f64>();
                prop_assert!(after >= before - 1e-12);
            }
        }
    }
}
