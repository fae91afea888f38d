//! Initial data, the explicit update of `(f, u)` and the run loop.

use crate::coagulation::{coag_parts, CoagTables};
use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::mesh::{GridSpec, TimeSpec};
use crate::rates::{gauss2, interface_velocity_table, RateModel, StabilityReport, VelocityTable};
use crate::transport::{column_fluxes, upwind_fluxes};

/// Negative entries smaller than this fraction of `max |f|` are rounding
/// noise and get clamped to zero.
pub const CLAMP_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub field: Field,
    pub u: f64,
    pub step: usize,
    pub time: f64,
}

impl SimState {
    pub fn initial(field: Field, u: f64) -> Self {
        Self {
            field,
            u,
            step: 0,
            time: 0.0,
        }
    }
}

/// Cell averages of `f_in` by the tensorized two-point Gauss rule.
pub fn discretize_initial(f_in: impl Fn(f64, f64) -> f64, grid: &GridSpec) -> Result<Field> {
    let mut field = Field::zeros(grid);
    for j in 0..grid.np() {
        let ps = gauss2(grid.p_edge(j), grid.p_edge(j + 1));
        for i in 0..grid.nr() {
            let rs = gauss2(grid.r_edge(i), grid.r_edge(i + 1));
            let mut sum = 0.0;
            for p in ps {
                for r in rs {
                    let v = f_in(p, r);
                    if !(v >= 0.0 && v.is_finite()) {
                        return Err(Error::InitialData(format!(
                            "f_in({p}, {r}) = {v}; expected a finite value >= 0"
                        )));
                    }
                    sum += v;
                }
            }
            field[(j, i)] = 0.25 * sum;
        }
    }
    Ok(field)
}

/// Scales `field` so that `sum r_i p_j f dp dr = target`; returns the factor.
pub fn normalize_to_target(mut field: Field, grid: &GridSpec, target: f64) -> Result<(Field, f64)> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::Normalization(format!(
            "target {target} must be finite and > 0"
        )));
    }
    let mrp = crate::diagnostics::moments(&field, grid).mrp;
    if !(mrp > 0.0 && mrp.is_finite()) {
        return Err(Error::Normalization(format!(
            "weighted moment sum r p f dp dr = {mrp}; cannot scale to {target}"
        )));
    }
    let m = target / mrp;
    field.scale(m);
    Ok((field, m))
}

/// Unnormalized initial density of the reference experiment: log-normal in
/// `p` around `e^-2`, Gaussian in `r` around 0.2.
pub fn benchmark_density(p: f64, r: f64) -> f64 {
    let lp = p.ln() + 2.0;
    (-(lp * lp) / (2.0 * 0.4 * 0.4) - (r - 0.2).powi(2) / (2.0 * 0.05 * 0.05)).exp()
}

/// Bookkeeping of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepOutcome {
    /// Entries clamped from rounding-scale negatives to zero.
    pub clamp_count: usize,
    /// Largest clamped magnitude.
    pub max_clamped: f64,
    /// Coagulation gain discarded by the drop policy, times `dt / (dr dp)`.
    pub dropped: f64,
}

/// Advances `(f, u)` with a fixed step.
#[derive(Debug, Clone)]
pub struct Stepper {
    grid: GridSpec,
    rates: RateModel,
    tables: CoagTables,
    dt: f64,
    m_in: f64,
    k_kernel: f64,
    parallel: bool,
}

impl Stepper {
    /// `m_in` and `k_kernel` enter the coagulation half of the per-step gate.
    pub fn new(
        grid: GridSpec,
        rates: RateModel,
        tables: CoagTables,
        dt: f64,
        m_in: f64,
        k_kernel: f64,
    ) -> Self {
        Self {
            grid,
            rates,
            tables,
            dt,
            m_in,
            k_kernel,
            parallel: false,
        }
    }

    /// Spreads the coagulation gain over threads. Results do not change.
    pub fn parallel(mut self, on: bool) -> Self {
        self.parallel = on;
        self
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn rates(&self) -> &RateModel {
        &self.rates
    }

    pub fn tables(&self) -> &CoagTables {
        &self.tables
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Gate quantities for the current ion level, with `V_sup` the largest
    /// interface speed at that level.
    pub fn current_report(&self, u: f64) -> Result<StabilityReport> {
        let vel = interface_velocity_table(&self.rates, u, &self.grid)?;
        Ok(self.report_for(&vel, u))
    }

    fn report_for(&self, vel: &VelocityTable, u: f64) -> StabilityReport {
        StabilityReport::new(
            self.m_in,
            u,
            u,
            vel.max_abs(),
            vel.outflow_speed(&self.grid),
            self.k_kernel,
            &self.grid,
            self.dt,
        )
    }

    /// One explicit step. On error the state is left untouched.
    pub fn step(&self, state: &mut SimState) -> Result<StepOutcome> {
        let grid = &self.grid;
        let n = state.step;
        let vel = interface_velocity_table(&self.rates, state.u, grid)?;
        let report = self.report_for(&vel, state.u);
        if !report.admits() {
            return Err(report.violation());
        }

        let (dt, dr, dp) = (self.dt, grid.dr(), grid.dp());
        let f = &state.field;
        let flux = upwind_fluxes(f, &vel, grid);
        let coag = if self.tables.kernel().is_zero() {
            None
        } else {
            Some(coag_parts(f, &self.tables, self.parallel))
        };

        let mut next = f.clone();
        let nr = grid.nr();
        let mut faces = vec![0.0; nr + 1];
        for j in 0..grid.np() {
            let inv_p = 1.0 / grid.p_center(j);
            column_fluxes(f.column(j), vel.column(j), &mut faces);
            let col = next.column_mut(j);
            for i in 0..nr {
                col[i] -= dt / dr * (faces[i + 1] - faces[i]) * inv_p;
            }
            if let Some(parts) = &coag {
                let (gain, loss) = (parts.gain.column(j), parts.loss.column(j));
                let w = dt / (dr * dp) * inv_p;
                for i in 0..nr {
                    col[i] += w * (gain[i] - loss[i]);
                }
            }
        }
        let u_next = state.u - dt * flux.interior_sum() * dr * dp;

        let scale = f.max_abs().max(next.max_abs());
        let tol = CLAMP_TOLERANCE * scale;
        let mut outcome = StepOutcome {
            dropped: coag.as_ref().map_or(0.0, |c| c.overflow) * dt / (dr * dp),
            ..Default::default()
        };
        for (c, v) in next.values_mut().iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numerical {
                    step: n,
                    message: format!("non-finite value {v} in cell ({}, {})", c / nr, c % nr),
                });
            }
            if *v < 0.0 {
                if -*v > tol {
                    return Err(Error::Numerical {
                        step: n,
                        message: format!(
                            "negative value {v:e} in cell ({}, {}) exceeds rounding scale {tol:e}",
                            c / nr,
                            c % nr
                        ),
                    });
                }
                outcome.clamp_count += 1;
                outcome.max_clamped = outcome.max_clamped.max(-*v);
                *v = 0.0;
            }
        }
        if !u_next.is_finite() {
            return Err(Error::Numerical {
                step: n,
                message: format!("free-ion concentration became {u_next}"),
            });
        }
        let u_next = if u_next < 0.0 {
            if -u_next > CLAMP_TOLERANCE * state.u.max(f64::MIN_POSITIVE) {
                return Err(Error::Numerical {
                    step: n,
                    message: format!("free-ion concentration became negative: {u_next:e}"),
                });
            }
            outcome.clamp_count += 1;
            0.0
        } else {
            u_next
        };

        state.field = next;
        state.u = u_next;
        state.step = n + 1;
        state.time = (n + 1) as f64 * dt;
        Ok(outcome)
    }
}

/// A snapshot request resolved to a step index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotPoint {
    pub step: usize,
    /// Requested time when scheduled by time rather than by stride.
    pub requested: Option<f64>,
    pub time: f64,
}

impl SnapshotPoint {
    /// Difference between the step time and the requested time.
    pub fn rounding(&self) -> f64 {
        self.requested.map_or(0.0, |t| self.time - t)
    }
}

/// Resolves snapshot times to the nearest steps, or every `stride` steps
/// (always including the first and last step). Duplicates are merged.
pub fn schedule_snapshots(
    times: &[f64],
    stride: Option<usize>,
    time: &TimeSpec,
) -> Result<Vec<SnapshotPoint>> {
    let n = time.steps();
    let mut points = Vec::new();
    if let Some(stride) = stride {
        if stride == 0 {
            return Err(Error::config(
                "output.snapshot_stride",
                "must be at least 1",
            ));
        }
        let mut k = 0;
        while k < n {
            points.push(SnapshotPoint {
                step: k,
                requested: None,
                time: time.time(k),
            });
            k += stride;
        }
        points.push(SnapshotPoint {
            step: n,
            requested: None,
            time: time.time(n),
        });
    } else {
        for (idx, &t) in times.iter().enumerate() {
            if !(t.is_finite() && t >= 0.0 && t <= time.t_final()) {
                return Err(Error::config(
                    format!("output.snapshots[{idx}]"),
                    format!("time {t} outside [0, T = {}]", time.t_final()),
                ));
            }
            let step = if n == 0 {
                0
            } else {
                ((t / time.dt()).round() as usize).min(n)
            };
            points.push(SnapshotPoint {
                step,
                requested: Some(t),
                time: time.time(step),
            });
        }
        points.sort_by_key(|p| p.step);
    }
    points.dedup_by_key(|p| p.step);
    Ok(points)
}

/// Receives the per-step diagnostics and the scheduled snapshots of a run.
pub trait RunObserver {
    fn record(&mut self, record: &DiagnosticsRecord) -> Result<()>;
    fn snapshot(&mut self, point: &SnapshotPoint, state: &SimState) -> Result<()>;
}

/// In-memory observer.
#[derive(Debug, Default, Clone)]
pub struct RunLog {
    pub records: Vec<DiagnosticsRecord>,
    pub snapshots: Vec<(SnapshotPoint, SimState)>,
}

impl RunObserver for RunLog {
    fn record(&mut self, record: &DiagnosticsRecord) -> Result<()> {
        self.records.push(*record);
        Ok(())
    }

    fn snapshot(&mut self, point: &SnapshotPoint, state: &SimState) -> Result<()> {
        self.snapshots.push((*point, state.clone()));
        Ok(())
    }
}

/// Summary of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub state: SimState,
    pub rho0: f64,
    pub total_clamps: usize,
    pub max_clamped: f64,
    pub dropped: f64,
}

/// Executes `time.steps()` steps from `state`, emitting one record per step
/// (step 0 included) and the scheduled snapshots.
pub fn run(
    stepper: &Stepper,
    mut state: SimState,
    time: &TimeSpec,
    snapshots: &[SnapshotPoint],
    observer: &mut dyn RunObserver,
) -> Result<RunSummary> {
    let grid = *stepper.grid();
    let rho0 = state.u + crate::diagnostics::moments(&state.field, &grid).mrp;
    let mut pending = snapshots.iter().peekable();
    let mut summary = RunSummary {
        state: state.clone(),
        rho0,
        total_clamps: 0,
        max_clamped: 0.0,
        dropped: 0.0,
    };
    let mut emit = |state: &SimState, clamps: usize, obs: &mut dyn RunObserver| -> Result<()> {
        obs.record(&DiagnosticsRecord::new(
            state.step,
            state.time,
            &state.field,
            state.u,
            &grid,
            rho0,
            clamps,
        ))?;
        while let Some(p) = pending.next_if(|p| p.step == state.step) {
            obs.snapshot(p, state)?;
        }
        Ok(())
    };
    emit(&state, 0, observer)?;
    for n in 0..time.steps() {
        let outcome = stepper.step(&mut state)?;
        state.time = time.time(n + 1);
        summary.total_clamps += outcome.clamp_count;
        summary.max_clamped = summary.max_clamped.max(outcome.max_clamped);
        summary.dropped += outcome.dropped;
        emit(&state, outcome.clamp_count, observer)?;
    }
    summary.state = state;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coagulation::{OverflowPolicy, TargetMode};
    use crate::diagnostics::moments;
    use crate::rates::{kernel_cell_average, KernelModel, RateKind};

    fn grid(p: f64, j: usize, i: usize) -> GridSpec {
        GridSpec::new(p, j, i).unwrap()
    }

    fn stepper(g: &GridSpec, rates: RateModel, a: f64, dt: f64, m_in: f64) -> Stepper {
        let kernel = KernelModel::Constant(a);
        let tables = CoagTables::new(
            g,
            kernel_cell_average(&kernel, g).unwrap(),
            OverflowPolicy::Clamp,
            TargetMode::Precomputed,
        )
        .unwrap();
        Stepper::new(*g, rates, tables, dt, m_in, a)
    }

    #[test]
    fn discretize_constants_and_zero() {
        let g = grid(2.0, 4, 6);
        assert_eq!(discretize_initial(|_, _| 0.0, &g).unwrap().max_abs(), 0.0);
        let f = discretize_initial(|_, _| 3.7, &g).unwrap();
        assert!(f.values().iter().all(|v| (v - 3.7).abs() <= 1e-14 * 3.7));
    }

    #[test]
    fn discretize_rejects_negative_samples() {
        let g = grid(1.0, 2, 2);
        assert!(matches!(
            discretize_initial(|_, r| r - 0.5, &g),
            Err(Error::InitialData(_))
        ));
    }

    #[test]
    fn discretize_is_exact_for_cubics() {
        let g = grid(1.0, 3, 3);
        let f = discretize_initial(|p, r| p * p * p + r * r * p, &g).unwrap();
        for j in 0..g.np() {
            for i in 0..g.nr() {
                let (a, b) = (g.p_edge(j), g.p_edge(j + 1));
                let (c, d) = (g.r_edge(i), g.r_edge(i + 1));
                let int_p3 = (b.powi(4) - a.powi(4)) / 4.0 * (d - c);
                let int_r2p = (b * b - a * a) / 2.0 * (d.powi(3) - c.powi(3)) / 3.0;
                let avg = (int_p3 + int_r2p) / ((b - a) * (d - c));
                assert!((f[(j, i)] - avg).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn benchmark_peak_location() {
        let g = grid(1.0, 99, 99);
        let f = discretize_initial(benchmark_density, &g).unwrap();
        let (mut best, mut at) = (0.0, (0, 0));
        for j in 0..g.np() {
            for i in 0..g.nr() {
                if f[(j, i)] > best {
                    best = f[(j, i)];
                    at = (j, i);
                }
            }
        }
        assert!((g.p_center(at.0) - (-2.0f64).exp()).abs() <= g.dp());
        assert!((g.r_center(at.1) - 0.2).abs() <= g.dr());
    }

    #[test]
    fn normalization_examples() {
        let g = grid(1.0, 0, 0);
        // one cell with center (0.5, 0.5): weighted moment 0.25 f
        let f = Field::from_fn(&g, |_, _| 0.8);
        let (scaled, m) = normalize_to_target(f, &g, 0.1).unwrap();
        assert_eq!(m, 0.5);
        assert!((moments(&scaled, &g).mrp - 0.1).abs() < 1e-16);
        let (_, m) = normalize_to_target(scaled, &g, 0.1).unwrap();
        assert!((m - 1.0).abs() < 1e-15);
        assert!(matches!(
            normalize_to_target(Field::zeros(&g), &g, 0.1),
            Err(Error::Normalization(_))
        ));
    }

    #[test]
    fn benchmark_balance_is_one() {
        let g = grid(1.0, 99, 99);
        let f = discretize_initial(benchmark_density, &g).unwrap();
        let (f, _) = normalize_to_target(f, &g, 0.1).unwrap();
        let m = moments(&f, &g);
        assert!((m.mrp - 0.1).abs() <= 1e-14 * 0.1);
        assert!((0.9 + m.mrp - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn zero_field_is_fixed() {
        let g = grid(1.0, 4, 4);
        let s = stepper(&g, RateModel::benchmark(1.0), 1.0, 1e-3, 1.0);
        let mut state = SimState::initial(Field::zeros(&g), 0.6);
        s.step(&mut state).unwrap();
        assert_eq!(state.field.max_abs(), 0.0);
        assert_eq!(state.u, 0.6);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn identity_step_without_rates_or_kernel() {
        let g = grid(1.0, 4, 4);
        let rates = RateModel::new(RateKind::Constant { k: 0.0, l: 0.0 }, 1.0).unwrap();
        let s = stepper(&g, rates, 0.0, 0.1, 1.0);
        let f = Field::from_fn(&g, |j, i| (1 + j * i) as f64);
        let mut state = SimState::initial(f.clone(), 0.3);
        s.step(&mut state).unwrap();
        assert_eq!(state.field, f);
        assert_eq!(state.u, 0.3);
    }

    #[test]
    fn single_cell_step_by_hand() {
        // J = I = 1, f = 1 in cell (1, 0) only; coagulation of (1,0) with
        // itself would exceed the cutoff, so only its loss against j' = 0 acts
        let g = grid(1.0, 1, 1);
        let (dp, dr) = (g.dp(), g.dr());
        let rates = RateModel::benchmark(1.0);
        let s = stepper(&g, rates.clone(), 1.0, 1e-3, dp * dr);
        let f = Field::from_fn(&g, |j, i| if (j, i) == (1, 0) { 1.0 } else { 0.0 });
        let mut state = SimState::initial(f, 0.9);
        s.step(&mut state).unwrap();

        let dt = 1e-3;
        let v = rates.velocity(0.9, g.p_edge(1), g.r_edge(1));
        assert!(v > 0.0);
        let flux = v * 1.0;
        let p1 = g.p_center(1);
        // self-loss: p_1 f (a f dp dr) dp dr over the j' <= J - 1 = 0 partners, all zero here
        let expect_10 = 1.0 - dt / dr * flux / p1;
        let expect_11 = dt / dr * flux / p1;
        assert!((state.field[(1, 0)] - expect_10).abs() < 1e-15);
        assert!((state.field[(1, 1)] - expect_11).abs() < 1e-15);
        assert_eq!(state.field[(0, 0)], 0.0);
        assert!((state.u - (0.9 - dt * flux * dr * dp)).abs() < 1e-16);
    }

    #[test]
    fn gate_refuses_without_mutation() {
        let g = grid(1.0, 4, 4);
        let s = stepper(&g, RateModel::benchmark(1.0), 1.0, 1.0, 1.0);
        let f = Field::from_fn(&g, |_, _| 1.0);
        let mut state = SimState::initial(f, 0.9);
        let before = state.clone();
        let err = s.step(&mut state).unwrap_err();
        assert!(matches!(err, Error::Cfl { .. }));
        assert_eq!(state, before);
    }

    #[test]
    fn schedule_rounds_to_nearest_step() {
        let t = TimeSpec::new(1.0, 8).unwrap();
        let pts = schedule_snapshots(&[0.0, 0.3, 1.0], None, &t).unwrap();
        let steps: Vec<_> = pts.iter().map(|p| p.step).collect();
        assert_eq!(steps, vec![0, 2, 8]);
        assert!((pts[1].rounding() - (0.25 - 0.3)).abs() < 1e-15);
        assert!(schedule_snapshots(&[1.5], None, &t).is_err());
        let pts = schedule_snapshots(&[], Some(3), &t).unwrap();
        assert_eq!(
            pts.iter().map(|p| p.step).collect::<Vec<_>>(),
            vec![0, 3, 6, 8]
        );
    }

    #[test]
    fn empty_run_emits_initial_state_only() {
        let g = grid(1.0, 3, 3);
        let s = stepper(&g, RateModel::benchmark(1.0), 1.0, 0.0, 1.0);
        let time = TimeSpec::new(0.0, 0).unwrap();
        let pts = schedule_snapshots(&[0.0], None, &time).unwrap();
        let mut log = RunLog::default();
        let f = Field::from_fn(&g, |_, _| 1.0);
        let summary = run(&s, SimState::initial(f.clone(), 0.5), &time, &pts, &mut log).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.snapshots.len(), 1);
        assert_eq!(log.records[0].drift, 0.0);
        assert_eq!(summary.state.field, f);
    }

    #[test]
    fn run_emits_every_step() {
        let g = grid(1.0, 5, 5);
        let f = discretize_initial(benchmark_density, &g).unwrap();
        let (f, _) = normalize_to_target(f, &g, 0.1).unwrap();
        let m_in = moments(&f, &g).m0;
        let time = TimeSpec::new(0.05, 50).unwrap();
        let s = stepper(&g, RateModel::benchmark(1.0), 1.0, time.dt(), m_in);
        let pts = schedule_snapshots(&[0.0, 0.025, 0.05], None, &time).unwrap();
        let mut log = RunLog::default();
        let summary = run(&s, SimState::initial(f, 0.9), &time, &pts, &mut log).unwrap();
        assert_eq!(log.records.len(), 51);
        assert_eq!(log.snapshots.len(), 3);
        assert_eq!(summary.state.time, 0.05);
        assert_eq!(log.records.last().unwrap().t, 0.05);
        for w in log.records.windows(2) {
            assert!(w[1].m0 <= w[0].m0 + 1e-12);
            assert!((w[1].m1 - w[0].m1).abs() <= 1e-13 * w[0].m1);
        }
    }
}
