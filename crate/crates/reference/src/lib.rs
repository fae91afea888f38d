//! Brute-force oracles for testing the polysorb scheme.
//!
//! Nothing here is fast. Coagulation is evaluated by the literal corner-flux
//! quadruple sums, pure transport by integrating characteristics backwards.

use polysorb::coagulation::OverflowPolicy;
use polysorb::field::Field;
use polysorb::mesh::GridSpec;
use polysorb::rates::{KernelTable, RateModel};

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error(
        "grid with J = {j_max}, I = {i_max} is too large for the naive oracle (limit {limit})"
    )]
    TooLarge {
        j_max: usize,
        i_max: usize,
        limit: usize,
    },
    #[error("oracle validation failed: {0}")]
    Validation(String),
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// Largest `J` and `I` accepted by [`naive_coag`].
pub const NAIVE_LIMIT: usize = 16;

/// Which halves of the corner fluxes to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Both,
    GainOnly,
    LossOnly,
}

/// Literal indicator `V# < r_{i-1/2}` for the pair `(j1, i1)`, `(j2, i2)`
/// and the corner row `i`.
///
/// With `p_{k-1/2} = k dp` and `r_{k-1/2} = k dr` both sides are integer
/// multiples of `dr` over a common denominator, so the comparison is exact.
#[allow(clippy::too_many_arguments)]
fn below(
    grid: &GridSpec,
    policy: OverflowPolicy,
    j1: usize,
    i1: usize,
    j2: usize,
    i2: usize,
    i: usize,
) -> bool {
    let (j1, i1, j2, i2, i) = (j1 as u128, i1 as u128, j2 as u128, i2 as u128, i as u128);
    // V# / dr = num / den
    let (num, den) = if j1 + j2 == 0 {
        // both partners in the first p-cell: mean of the r-centers
        (2 * i1 + 1 + 2 * i2 + 1, 4)
    } else {
        ((i1 + 1) * (j1 + 1) + (i2 + 1) * (j2 + 1), j1 + j2)
    };
    let top = grid.nr() as u128;
    if i == top && num >= top * den {
        return policy == OverflowPolicy::Clamp;
    }
    num < i * den
}

/// Corner fluxes `C_{j-1/2, i-1/2}` for `j = 0..=J+1`, `i = 0..=I+1`.
pub fn naive_corners(
    f: &Field,
    kernel: &KernelTable,
    grid: &GridSpec,
    policy: OverflowPolicy,
    part: Part,
) -> Result<Vec<Vec<f64>>> {
    if grid.j_max() > NAIVE_LIMIT || grid.i_max() > NAIVE_LIMIT {
        return Err(OracleError::TooLarge {
            j_max: grid.j_max(),
            i_max: grid.i_max(),
            limit: NAIVE_LIMIT,
        });
    }
    let (np, nr) = (grid.np(), grid.nr());
    let vol2 = (grid.dp() * grid.dr()).powi(2);
    let cell = |j: usize, i: usize| j * nr + i;
    let pc = |j: usize| (j as f64 + 0.5) * grid.dp();
    let mut corners = vec![vec![0.0; nr + 1]; np + 1];
    for (j, row) in corners.iter_mut().enumerate() {
        for (i, c) in row.iter_mut().enumerate() {
            if j == 0 || i == 0 {
                continue;
            }
            let mut gain = 0.0;
            let mut loss = 0.0;
            for j1 in 0..j {
                for i1 in 0..nr {
                    let x1 = f[(j1, i1)];
                    if part != Part::LossOnly {
                        for j2 in 0..=(j - 1 - j1) {
                            for i2 in 0..nr {
                                if below(grid, policy, j1, i1, j2, i2, i) {
                                    gain += pc(j1)
                                        * kernel.get(cell(j1, i1), cell(j2, i2))
                                        * x1
                                        * f[(j2, i2)]
                                        * vol2;
                                }
                            }
                        }
                    }
                    if part != Part::GainOnly && i1 < i {
                        for j2 in 0..(np - j1) {
                            for i2 in 0..nr {
                                loss += pc(j1)
                                    * kernel.get(cell(j1, i1), cell(j2, i2))
                                    * x1
                                    * f[(j2, i2)]
                                    * vol2;
                            }
                        }
                    }
                }
            }
            *c = gain - loss;
        }
    }
    Ok(corners)
}

/// Coagulation increment `C_{j,i}` by double differences of the literal
/// corner fluxes.
pub fn naive_coag(
    f: &Field,
    kernel: &KernelTable,
    grid: &GridSpec,
    policy: OverflowPolicy,
    part: Part,
) -> Result<Field> {
    let c = naive_corners(f, kernel, grid, policy, part)?;
    Ok(Field::from_fn(grid, |j, i| {
        (c[j + 1][i + 1] - c[j + 1][i]) - (c[j][i + 1] - c[j][i])
    }))
}

/// One explicit step evaluated from the literal formulas, without gates or
/// clamping. Returns `(f^{n+1}, u^{n+1})`.
pub fn naive_step(
    f: &Field,
    u: f64,
    model: &RateModel,
    kernel: &KernelTable,
    grid: &GridSpec,
    policy: OverflowPolicy,
    dt: f64,
) -> Result<(Field, f64)> {
    let (np, nr) = (grid.np(), grid.nr());
    let (dp, dr) = (grid.dp(), grid.dr());
    let flux = |j: usize, i: usize| -> f64 {
        if i == 0 || i == nr {
            return 0.0;
        }
        let v = model.velocity(u, j as f64 * dp, i as f64 * dr);
        v.max(0.0) * f[(j, i - 1)] - (-v).max(0.0) * f[(j, i)]
    };
    let c = naive_coag(f, kernel, grid, policy, Part::Both)?;
    let mut next = f.clone();
    let mut sum = 0.0;
    for j in 0..np {
        let pj = (j as f64 + 0.5) * dp;
        for i in 0..nr {
            let pf = pj * f[(j, i)] - dt / dr * (flux(j, i + 1) - flux(j, i))
                + dt / (dr * dp) * c[(j, i)];
            next[(j, i)] = pf / pj;
            sum += flux(j, i);
        }
    }
    Ok((next, u - dt * sum * dr * dp))
}

/// Worst-case and relative L1 differences between two fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleReport {
    pub max_abs_diff: f64,
    /// `sum |a - b| / sum |b|`, or the absolute sum when `b` vanishes.
    pub rel_l1_diff: f64,
    pub worst: (usize, usize),
}

pub fn compare(a: &Field, b: &Field) -> OracleReport {
    assert_eq!((a.np(), a.nr()), (b.np(), b.nr()), "fields differ in shape");
    let nr = a.nr();
    let mut report = OracleReport {
        max_abs_diff: 0.0,
        rel_l1_diff: 0.0,
        worst: (0, 0),
    };
    let (mut diff, mut norm) = (0.0, 0.0);
    for (c, (x, y)) in a.values().iter().zip(b.values()).enumerate() {
        let d = (x - y).abs();
        diff += d;
        norm += y.abs();
        if d > report.max_abs_diff {
            report.max_abs_diff = d;
            report.worst = (c / nr, c % nr);
        }
    }
    report.rel_l1_diff = if norm > 0.0 { diff / norm } else { diff };
    report
}

/// Moment `M0(t)` of the constant-kernel coagulation equation without
/// truncation: `M0 / (1 + a M0 t / 2)`.
pub fn smoluchowski_m0(m0: f64, a: f64, t: f64) -> f64 {
    m0 / (1.0 + a * m0 * t / 2.0)
}

/// Pure transport in `r` at fixed `p`, `df/dt + d/dr (V f / p) = 0`.
pub struct TransportReference<'a, F, U> {
    pub f_in: F,
    pub model: &'a RateModel,
    pub u_path: U,
    pub p: f64,
    /// Integration steps of the backward characteristic.
    pub substeps: usize,
}

impl<F: Fn(f64) -> f64, U: Fn(f64) -> f64> TransportReference<'_, F, U> {
    /// Checks the wall signs `V(u, p, 0) >= 0 >= V(u, p, 1)` on the time
    /// path. Where a sign is violated, mass would leave through that wall,
    /// which the zero-flux scheme cannot represent; this is an error if
    /// `f_in` carries mass within reach of the wall by time `t`.
    pub fn check_walls(&self, t: f64) -> Result<()> {
        let samples = self.substeps.max(1);
        let mut reach: f64 = 0.0;
        let (mut bad_low, mut bad_high) = (false, false);
        for k in 0..=samples {
            let u = (self.u_path)(t * k as f64 / samples as f64);
            bad_low |= self.model.velocity(u, self.p, 0.0) < 0.0;
            bad_high |= self.model.velocity(u, self.p, 1.0) > 0.0;
            for s in 0..=64 {
                reach = reach.max(self.model.velocity(u, self.p, s as f64 / 64.0).abs());
            }
        }
        let reach = (reach * t / self.p).min(1.0);
        let scale = (0..=256)
            .map(|s| (self.f_in)(s as f64 / 256.0).abs())
            .fold(0.0, f64::max);
        let touches = |lo: f64, hi: f64| {
            (0..=64).any(|s| (self.f_in)(lo + (hi - lo) * s as f64 / 64.0).abs() > 1e-12 * scale)
        };
        if bad_low && touches(0.0, reach) {
            return Err(OracleError::Validation(format!(
                "V(u, {}, 0) < 0 moves mass out through r = 0",
                self.p
            )));
        }
        if bad_high && touches(1.0 - reach, 1.0) {
            return Err(OracleError::Validation(format!(
                "V(u, {}, 1) > 0 moves mass out through r = 1",
                self.p
            )));
        }
        Ok(())
    }

    /// Density at `(t, r)`. Characteristics traced back out of `[0, 1]`
    /// come from a wall with no inflow and give zero.
    pub fn density(&self, t: f64, r: f64) -> f64 {
        let p = self.p;
        let n = self.substeps.max(1);
        let h = t / n as f64;
        // state (R, L) with dR/ds = V/p and dL/ds = -(dV/dr)/p, from s = t down to 0
        let rhs = |s: f64, y: [f64; 2]| -> [f64; 2] {
            let u = (self.u_path)(s);
            let rr = y[0].clamp(0.0, 1.0);
            [
                self.model.velocity(u, p, rr) / p,
                -self.model.dv_dr(u, p, rr) / p,
            ]
        };
        let mut y = [r, 0.0];
        let mut s = t;
        for _ in 0..n {
            let k1 = rhs(s, y);
            let k2 = rhs(
                s - h / 2.0,
                [y[0] - h / 2.0 * k1[0], y[1] - h / 2.0 * k1[1]],
            );
            let k3 = rhs(
                s - h / 2.0,
                [y[0] - h / 2.0 * k2[0], y[1] - h / 2.0 * k2[1]],
            );
            let k4 = rhs(s - h, [y[0] - h * k3[0], y[1] - h * k3[1]]);
            for d in 0..2 {
                y[d] -= h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
            }
            s -= h;
            if !(0.0..=1.0).contains(&y[0]) {
                return 0.0;
            }
        }
        (self.f_in)(y[0]) * (-y[1]).exp()
    }

    /// Cell averages over `nr` uniform r-cells by 4-point Gauss-Legendre.
    pub fn cell_averages(&self, t: f64, nr: usize) -> Result<Vec<f64>> {
        self.check_walls(t)?;
        const X: [f64; 2] = [0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
        const W: [f64; 2] = [0.652_145_154_862_546_1, 0.347_854_845_137_453_9];
        let dr = 1.0 / nr as f64;
        Ok((0..nr)
            .map(|i| {
                let mid = (i as f64 + 0.5) * dr;
                let mut sum = 0.0;
                for (x, w) in X.iter().zip(W) {
                    for sign in [-1.0, 1.0] {
                        sum += w * self.density(t, mid + sign * x * dr / 2.0);
                    }
                }
                sum / 2.0
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use polysorb::coagulation::{coag_increment, CoagTables, TargetMode};
    use polysorb::rates::RateKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(j: usize, i: usize) -> GridSpec {
        GridSpec::new(1.0, j, i).unwrap()
    }

    #[test]
    fn zero_field_gives_zero() {
        let g = grid(4, 4);
        let c = naive_coag(
            &Field::zeros(&g),
            &KernelTable::Constant(1.0),
            &g,
            OverflowPolicy::Clamp,
            Part::Both,
        )
        .unwrap();
        assert_eq!(c.max_abs(), 0.0);
    }

    #[test]
    fn refuses_large_grids() {
        let g = grid(17, 3);
        let r = naive_coag(
            &Field::zeros(&g),
            &KernelTable::Constant(1.0),
            &g,
            OverflowPolicy::Clamp,
            Part::Both,
        );
        assert!(matches!(r, Err(OracleError::TooLarge { .. })));
    }

    #[test]
    fn agrees_with_fast_path_on_random_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = grid(6, 6);
        for policy in [OverflowPolicy::Clamp, OverflowPolicy::Drop] {
            let tables = CoagTables::new(
                &g,
                KernelTable::Constant(1.0),
                policy,
                TargetMode::Precomputed,
            )
            .unwrap();
            for _ in 0..5 {
                let f = Field::from_fn(&g, |_, _| rng.gen_range(0.0..1.0));
                let fast = coag_increment(&f, &tables);
                let slow =
                    naive_coag(&f, &KernelTable::Constant(1.0), &g, policy, Part::Both).unwrap();
                let rep = compare(&fast.values, &slow);
                assert!(rep.rel_l1_diff < 1e-12, "{rep:?}");
            }
        }
    }

    #[test]
    fn halves_add_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = grid(5, 4);
        let f = Field::from_fn(&g, |_, _| rng.gen_range(0.0..1.0));
        let k = KernelTable::Constant(0.7);
        let both = naive_coag(&f, &k, &g, OverflowPolicy::Clamp, Part::Both).unwrap();
        let gain = naive_coag(&f, &k, &g, OverflowPolicy::Clamp, Part::GainOnly).unwrap();
        let loss = naive_coag(&f, &k, &g, OverflowPolicy::Clamp, Part::LossOnly).unwrap();
        for c in 0..both.values().len() {
            let sum = gain.values()[c] + loss.values()[c];
            assert!((both.values()[c] - sum).abs() < 1e-15);
        }
    }

    #[test]
    fn smoluchowski_closed_form() {
        assert_eq!(smoluchowski_m0(1.3, 1.0, 0.0), 1.3);
        assert_eq!(smoluchowski_m0(1.0, 1.0, 2.0), 0.5);
    }

    fn gaussian(r: f64) -> f64 {
        (-(r - 0.4).powi(2) / (2.0 * 0.05f64.powi(2))).exp()
    }

    #[test]
    fn zero_velocity_keeps_profile() {
        let m = RateModel::new(RateKind::Constant { k: 0.0, l: 0.0 }, 1.0).unwrap();
        let oracle = TransportReference {
            f_in: gaussian,
            model: &m,
            u_path: |_| 0.5,
            p: 0.5,
            substeps: 100,
        };
        for r in [0.1, 0.4, 0.77] {
            assert_eq!(oracle.density(0.3, r), gaussian(r));
        }
    }

    #[test]
    fn constant_velocity_shifts_profile() {
        // V = k u - l = 0.2 at p = 0.5: speed 0.4
        let m = RateModel::new(RateKind::Constant { k: 1.0, l: 0.3 }, 1.0).unwrap();
        let oracle = TransportReference {
            f_in: gaussian,
            model: &m,
            u_path: |_| 0.5,
            p: 0.5,
            substeps: 50,
        };
        let t = 0.25;
        for r in [0.3, 0.5, 0.6] {
            assert!((oracle.density(t, r) - gaussian(r - 0.4 * t)).abs() < 1e-14);
        }
        assert_eq!(oracle.density(t, 0.05), 0.0);
    }

    #[test]
    fn benchmark_characteristic_conserves_mass() {
        let m = RateModel::benchmark(1.0);
        let oracle = TransportReference {
            f_in: gaussian,
            model: &m,
            u_path: |_| 0.9,
            p: 0.5,
            substeps: 400,
        };
        let before: f64 = oracle.cell_averages(0.0, 400).unwrap().iter().sum::<f64>() / 400.0;
        let after: f64 = oracle.cell_averages(0.1, 400).unwrap().iter().sum::<f64>() / 400.0;
        assert!(
            (before - after).abs() < 1e-8 * before,
            "{before} vs {after}"
        );
    }

    #[test]
    fn outward_wall_velocity_rejected() {
        // V = -0.3 < 0 at r = 0 pulls mass out through the lower wall
        let m = RateModel::new(RateKind::Constant { k: 0.0, l: 0.3 }, 1.0).unwrap();
        let oracle = TransportReference {
            f_in: |r: f64| (-(r - 0.05).powi(2) / 0.001).exp(),
            model: &m,
            u_path: |_| 0.5,
            p: 0.5,
            substeps: 50,
        };
        assert!(matches!(
            oracle.cell_averages(0.5, 20),
            Err(OracleError::Validation(_))
        ));
    }
}
