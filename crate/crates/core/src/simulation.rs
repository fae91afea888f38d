//! Builds the discrete problem described by a [`SimConfig`].

use std::path::Path;

use crate::coagulation::CoagTables;
use crate::config::{DtSetting, Gate, InitialKind, KernelKind, RatesKind, SimConfig};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::mesh::{GridSpec, TimeSpec};
use crate::rates::{
    bilinear, kernel_cell_average, stability_bounds, KernelModel, RateKind, RateModel,
    StabilityReport,
};
use crate::stepper::{
    benchmark_density, discretize_initial, normalize_to_target, run, schedule_snapshots,
    RunObserver, RunSummary, SimState, SnapshotPoint, Stepper,
};

/// Initial density sampled on a tensor node grid, interpolated bilinearly
/// and held constant beyond the outer nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTable {
    p_nodes: Vec<f64>,
    r_nodes: Vec<f64>,
    values: Vec<f64>,
}

impl DensityTable {
    /// Parses `p r f` rows; blank lines and `#` comments are skipped. Rows
    /// may come in any order but must cover every node pair exactly once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let nums: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InitialData(format!("line {}: {e}", n + 1)))?;
            if nums.len() != 3 {
                return Err(Error::InitialData(format!(
                    "line {}: expected `p r f`, got {} values",
                    n + 1,
                    nums.len()
                )));
            }
            rows.push([nums[0], nums[1], nums[2]]);
        }
        let axis = |k: usize| {
            let mut v: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let (p_nodes, r_nodes) = (axis(0), axis(1));
        if p_nodes.len() < 2 || r_nodes.len() < 2 {
            return Err(Error::InitialData(
                "density table needs at least two nodes per axis".into(),
            ));
        }
        let nr = r_nodes.len();
        if rows.len() != p_nodes.len() * nr {
            return Err(Error::InitialData(format!(
                "density table has {} rows, expected {} x {} nodes",
                rows.len(),
                p_nodes.len(),
                nr
            )));
        }
        let mut values = vec![f64::NAN; rows.len()];
        for [p, r, f] in rows {
            if !(f.is_finite() && f >= 0.0) {
                return Err(Error::InitialData(format!(
                    "density {f} at ({p}, {r}) must be finite and >= 0"
                )));
            }
            let a = p_nodes.partition_point(|x| *x < p);
            let b = r_nodes.partition_point(|x| *x < r);
            if !values[a * nr + b].is_nan() {
                return Err(Error::InitialData(format!("node ({p}, {r}) appears twice")));
            }
            values[a * nr + b] = f;
        }
        Ok(Self {
            p_nodes,
            r_nodes,
            values,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn eval(&self, p: f64, r: f64) -> f64 {
        bilinear(&self.p_nodes, &self.r_nodes, &self.values, p, r)
    }
}

/// Everything needed to run, derived from a validated configuration.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub config: SimConfig,
    pub grid: GridSpec,
    pub time: TimeSpec,
    pub rates: RateModel,
    pub kernel: KernelModel,
    pub initial: Field,
    /// Factor applied to reach the target weighted moment, if any.
    pub normalization: Option<f64>,
    /// A priori stability quantities for the selected step.
    pub report: StabilityReport,
}

impl Simulation {
    /// Builds the discrete problem. The gate is not applied; see
    /// [`Simulation::check_gate`].
    pub fn prepare(config: &SimConfig) -> Result<Self> {
        let g = config.grid;
        let grid = GridSpec::new(g.p_max, g.j_max, g.i_max)?;
        let rates = Self::rate_model(config, grid.p_max())?;
        let kernel = kernel_model(config);
        kernel.validate()?;

        let field = match config.initial.kind {
            InitialKind::Benchmark => discretize_initial(benchmark_density, &grid)?,
            InitialKind::Table => {
                let path = config
                    .initial
                    .file
                    .as_deref()
                    .expect("validated config has a table file");
                let table = DensityTable::load(path)?;
                discretize_initial(|p, r| table.eval(p, r), &grid)?
            }
        };
        let (initial, normalization) = match config.initial.target_mrp {
            Some(target) => {
                let (f, m) = normalize_to_target(field, &grid, target)?;
                (f, Some(m))
            }
            None => (field, None),
        };

        let t_final = config.time.t_final;
        let u_in = config.initial.u_in;
        let safety = config.time.v_sup_safety;
        let time = match config.time.dt {
            DtSetting::Fixed(dt) => TimeSpec::from_max_step(t_final, dt)?,
            DtSetting::Auto => {
                // the bounds depend on T only, so any step count will do here
                let probe = TimeSpec::new(t_final, usize::from(t_final > 0.0))?;
                let bound =
                    stability_bounds(&rates, &kernel, &initial, u_in, &probe, &grid, safety).dt_max;
                if bound.is_finite() {
                    TimeSpec::from_max_step(t_final, config.time.safety * bound)?
                } else {
                    TimeSpec::new(t_final, usize::from(t_final > 0.0))?
                }
            }
        };
        let report = stability_bounds(&rates, &kernel, &initial, u_in, &time, &grid, safety);
        Ok(Self {
            config: config.clone(),
            grid,
            time,
            rates,
            kernel,
            initial,
            normalization,
            report,
        })
    }

    /// Refuses a step that breaks the a priori bounds, unless the config
    /// asks for the per-step gate only.
    pub fn check_gate(&self) -> Result<()> {
        match self.config.time.gate {
            Gate::APriori => self.report.check(),
            Gate::PerStep => Ok(()),
        }
    }

    pub fn initial_state(&self) -> SimState {
        SimState::initial(self.initial.clone(), self.config.initial.u_in)
    }

    pub fn stepper(&self) -> Result<Stepper> {
        let table = kernel_cell_average(&self.kernel, &self.grid)?;
        let k = &self.config.kernel;
        let tables = CoagTables::new(&self.grid, table, k.overflow, k.targets)?;
        Ok(Stepper::new(
            self.grid,
            self.rates.clone(),
            tables,
            self.time.dt(),
            self.report.m_in,
            self.report.k_kernel,
        )
        .parallel(!self.config.output.deterministic))
    }

    /// Snapshot steps; `stride` overrides the configured schedule.
    pub fn schedule(&self, stride: Option<usize>) -> Result<Vec<SnapshotPoint>> {
        let out = &self.config.output;
        match stride.or(out.snapshot_stride) {
            Some(s) => schedule_snapshots(&[], Some(s), &self.time),
            None => schedule_snapshots(&out.snapshots, None, &self.time),
        }
    }

    /// Checks the gate and runs to the final time.
    pub fn run(
        &self,
        snapshots: &[SnapshotPoint],
        observer: &mut dyn RunObserver,
    ) -> Result<RunSummary> {
        self.check_gate()?;
        let stepper = self.stepper()?;
        run(
            &stepper,
            self.initial_state(),
            &self.time,
            snapshots,
            observer,
        )
    }
}

impl Simulation {
    /// Sorption rate selected by the config.
    pub fn rate_model(config: &SimConfig, p_max: f64) -> Result<RateModel> {
        let r = &config.rates;
        let kind = match r.kind {
            RatesKind::Benchmark => RateKind::Benchmark,
            RatesKind::Langmuir => RateKind::Langmuir {
                k0: r.k0.unwrap_or_default(),
                alpha: r.alpha.unwrap_or_default(),
                l0: r.l0.unwrap_or_default(),
                beta: r.beta.unwrap_or_default(),
            },
            RatesKind::Constant => RateKind::Constant {
                k: r.k.unwrap_or_default(),
                l: r.l.unwrap_or_default(),
            },
        };
        RateModel::new(kind, p_max)
    }
}

fn kernel_model(config: &SimConfig) -> KernelModel {
    let k = &config.kernel;
    match k.kind {
        KernelKind::Constant => KernelModel::Constant(k.a.unwrap_or(1.0)),
        KernelKind::SeparableProduct => KernelModel::SeparableProduct {
            scale: k.scale.unwrap_or_default(),
            p_exp: k.p_exp.unwrap_or_default(),
            r_exp: k.r_exp.unwrap_or_default(),
        },
    }
}
