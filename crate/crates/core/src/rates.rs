//! Sorption rate `V(u, p, r) = k(p, r) u - l(p, r)`, the coagulation kernel
//! `a(p, r; p', r')`, their grid discretizations and the stability bounds of
//! the explicit scheme.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::mesh::{GridSpec, TimeSpec};

const GAUSS_OFFSET: f64 = 0.288_675_134_594_812_9; // 1 / (2 sqrt 3)

/// Two-point Gauss nodes on `[lo, hi]`; each carries weight 1/2.
pub(crate) fn gauss2(lo: f64, hi: f64) -> [f64; 2] {
    let mid = 0.5 * (lo + hi);
    let h = (hi - lo) * GAUSS_OFFSET;
    [mid - h, mid + h]
}

/// Rates sampled on a tensor node grid and interpolated bilinearly.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    p_nodes: Vec<f64>,
    r_nodes: Vec<f64>,
    k: Vec<f64>,
    l: Vec<f64>,
    bound: f64,
}

impl RateTable {
    /// `k` and `l` are row-major over `(p_nodes, r_nodes)`. `bound` is the
    /// declared sup bound of both rates.
    pub fn new(
        p_nodes: Vec<f64>,
        r_nodes: Vec<f64>,
        k: Vec<f64>,
        l: Vec<f64>,
        bound: f64,
    ) -> Result<Self> {
        let n = p_nodes.len() * r_nodes.len();
        if p_nodes.len() < 2 || r_nodes.len() < 2 {
            return Err(Error::ModelValidation(
                "rate table needs at least two nodes per axis".into(),
            ));
        }
        if k.len() != n || l.len() != n {
            return Err(Error::ModelValidation(format!(
                "rate table expects {n} values per rate, got k={} l={}",
                k.len(),
                l.len()
            )));
        }
        for nodes in [&p_nodes, &r_nodes] {
            if nodes.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::ModelValidation(
                    "rate table nodes must be strictly increasing".into(),
                ));
            }
        }
        if r_nodes[0] > 0.0 || *r_nodes.last().unwrap() < 1.0 || p_nodes[0] > 0.0 {
            return Err(Error::ModelValidation(
                "rate table must cover r in [0, 1] and start at p = 0".into(),
            ));
        }
        if k.iter().chain(&l).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::ModelValidation(
                "tabulated k and l must be finite and nonnegative".into(),
            ));
        }
        let max = k.iter().chain(&l).fold(0.0f64, |m, v| m.max(*v));
        if !(bound >= max) {
            return Err(Error::ModelValidation(format!(
                "declared rate bound {bound} is below the tabulated maximum {max}"
            )));
        }
        Ok(Self {
            p_nodes,
            r_nodes,
            k,
            l,
            bound,
        })
    }

    fn interp(&self, values: &[f64], p: f64, r: f64) -> f64 {
        bilinear(&self.p_nodes, &self.r_nodes, values, p, r)
    }

    fn covers(&self, p_max: f64) -> bool {
        *self.p_nodes.last().unwrap() >= p_max
    }
}

fn locate(nodes: &[f64], x: f64) -> (usize, f64) {
    let last = nodes.len() - 2;
    let s = nodes
        .partition_point(|n| *n <= x)
        .saturating_sub(1)
        .min(last);
    let t = ((x - nodes[s]) / (nodes[s + 1] - nodes[s])).clamp(0.0, 1.0);
    (s, t)
}

/// Bilinear interpolation of row-major `values` on a tensor node grid with
/// at least two nodes per axis; constant beyond the outer nodes.
pub(crate) fn bilinear(p_nodes: &[f64], r_nodes: &[f64], values: &[f64], p: f64, r: f64) -> f64 {
    let nr = r_nodes.len();
    let (a, s) = locate(p_nodes, p);
    let (b, t) = locate(r_nodes, r);
    let v00 = values[a * nr + b];
    let v01 = values[a * nr + b + 1];
    let v10 = values[(a + 1) * nr + b];
    let v11 = values[(a + 1) * nr + b + 1];
    (1.0 - s) * ((1.0 - t) * v00 + t * v01) + s * ((1.0 - t) * v10 + t * v11)
}

/// Functional form of the sorption rate.
#[derive(Debug, Clone, PartialEq)]
pub enum RateKind {
    /// `V = 4 p (1 - r) u - r`.
    Benchmark,
    /// `V = k0 p^alpha (1 - r)^alpha u - l0 p^beta r^beta`.
    Langmuir {
        k0: f64,
        alpha: f64,
        l0: f64,
        beta: f64,
    },
    /// `V = k u - l` with constant rates.
    Constant {
        k: f64,
        l: f64,
    },
    Tabulated(RateTable),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateModel {
    kind: RateKind,
    p_max: f64,
}

impl RateModel {
    pub fn new(kind: RateKind, p_max: f64) -> Result<Self> {
        match &kind {
            RateKind::Benchmark => {}
            RateKind::Langmuir {
                k0,
                alpha,
                l0,
                beta,
            } => {
                for (name, v) in [("k0", k0), ("alpha", alpha), ("l0", l0), ("beta", beta)] {
                    if !(v.is_finite() && *v >= 0.0) {
                        return Err(Error::config(
                            format!("rates.{name}"),
                            format!("expected a finite value >= 0, got {v}"),
                        ));
                    }
                }
            }
            RateKind::Constant { k, l } => {
                for (name, v) in [("k", k), ("l", l)] {
                    if !(v.is_finite() && *v >= 0.0) {
                        return Err(Error::config(
                            format!("rates.{name}"),
                            format!("expected a finite value >= 0, got {v}"),
                        ));
                    }
                }
            }
            RateKind::Tabulated(table) => {
                if !table.covers(p_max) {
                    return Err(Error::ModelValidation(format!(
                        "rate table does not reach p = {p_max}"
                    )));
                }
            }
        }
        Ok(Self { kind, p_max })
    }

    pub fn benchmark(p_max: f64) -> Self {
        Self {
            kind: RateKind::Benchmark,
            p_max,
        }
    }

    pub fn kind(&self) -> &RateKind {
        &self.kind
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    /// Adsorption rate `k(p, r)`.
    pub fn k(&self, p: f64, r: f64) -> f64 {
        match &self.kind {
            RateKind::Benchmark => 4.0 * p * (1.0 - r),
            RateKind::Langmuir { k0, alpha, .. } => k0 * (p * (1.0 - r)).powf(*alpha),
            RateKind::Constant { k, .. } => *k,
            RateKind::Tabulated(t) => t.interp(&t.k, p, r),
        }
    }

    /// Desorption rate `l(p, r)`.
    pub fn l(&self, p: f64, r: f64) -> f64 {
        match &self.kind {
            RateKind::Benchmark => r,
            RateKind::Langmuir { l0, beta, .. } => l0 * (p * r).powf(*beta),
            RateKind::Constant { l, .. } => *l,
            RateKind::Tabulated(t) => t.interp(&t.l, p, r),
        }
    }

    /// `V(u, p, r)` without domain checks.
    #[inline]
    pub fn velocity(&self, u: f64, p: f64, r: f64) -> f64 {
        self.k(p, r) * u - self.l(p, r)
    }

    /// `V(u, p, r)` with `p` in `[0, P]`, `r` in `[0, 1]`, `u >= 0`.
    pub fn eval(&self, u: f64, p: f64, r: f64) -> Result<f64> {
        if !(u >= 0.0 && u.is_finite()) {
            return Err(Error::Domain(format!(
                "free-ion concentration u = {u} must be finite and >= 0"
            )));
        }
        if !(0.0..=self.p_max).contains(&p) {
            return Err(Error::Domain(format!(
                "p = {p} outside [0, {}]",
                self.p_max
            )));
        }
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Domain(format!("r = {r} outside [0, 1]")));
        }
        Ok(self.velocity(u, p, r))
    }

    /// `dV/dr`, analytic for the closed-form kinds and a centered difference
    /// for tables.
    pub fn dv_dr(&self, u: f64, p: f64, r: f64) -> f64 {
        match &self.kind {
            RateKind::Benchmark => -4.0 * p * u - 1.0,
            RateKind::Langmuir {
                k0,
                alpha,
                l0,
                beta,
            } => {
                let gain = if *alpha == 0.0 {
                    0.0
                } else {
                    -k0 * alpha * p.powf(*alpha) * (1.0 - r).powf(alpha - 1.0)
                };
                let loss = if *beta == 0.0 {
                    0.0
                } else {
                    l0 * beta * p.powf(*beta) * r.powf(beta - 1.0)
                };
                gain * u - loss
            }
            RateKind::Constant { .. } => 0.0,
            RateKind::Tabulated(_) => {
                let h = 1e-6;
                let lo = (r - h).max(0.0);
                let hi = (r + h).min(1.0);
                (self.velocity(u, p, hi) - self.velocity(u, p, lo)) / (hi - lo)
            }
        }
    }

    /// Certified `sup k` over the truncated domain.
    pub fn k_sup(&self) -> f64 {
        match &self.kind {
            RateKind::Benchmark => 4.0 * self.p_max,
            RateKind::Langmuir { k0, alpha, .. } => k0 * self.p_max.powf(*alpha),
            RateKind::Constant { k, .. } => *k,
            RateKind::Tabulated(t) => t.bound,
        }
    }

    /// Certified `sup l` over the truncated domain.
    pub fn l_sup(&self) -> f64 {
        match &self.kind {
            RateKind::Benchmark => 1.0,
            RateKind::Langmuir { l0, beta, .. } => l0 * self.p_max.powf(*beta),
            RateKind::Constant { l, .. } => *l,
            RateKind::Tabulated(t) => t.bound,
        }
    }

    /// Rate bound `K_rate = max(sup k, sup l)`.
    pub fn k_rate(&self) -> f64 {
        self.k_sup().max(self.l_sup())
    }
}

/// Interface velocities `V_{j,i-1/2} = V(u, p_{j-1/2}, r_{i-1/2})` for
/// `j = 0..=J`, `i = 0..=I+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityTable {
    nr_faces: usize,
    values: Vec<f64>,
}

impl VelocityTable {
    pub fn from_fn(grid: &GridSpec, mut v: impl FnMut(usize, usize) -> f64) -> Self {
        let nr_faces = grid.nr() + 1;
        let mut values = Vec::with_capacity(grid.np() * nr_faces);
        for j in 0..grid.np() {
            for i in 0..nr_faces {
                values.push(v(j, i));
            }
        }
        Self { nr_faces, values }
    }

    pub fn uniform(grid: &GridSpec, v: f64) -> Self {
        Self::from_fn(grid, |_, _| v)
    }

    /// Velocities of column `j`, indexed by face `i = 0..=I+1`.
    #[inline]
    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.nr_faces..(j + 1) * self.nr_faces]
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.values[j * self.nr_faces + i]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max_{j,i} (max(V_{j,i+1/2}, 0) + max(-V_{j,i-1/2}, 0)) / p_j` over
    /// interior faces: the fastest rate at which a cell empties by transport.
    pub fn outflow_speed(&self, grid: &GridSpec) -> f64 {
        let nr = self.nr_faces - 1;
        let mut w = 0.0f64;
        for (j, col) in self.values.chunks(self.nr_faces).enumerate() {
            let inv_p = 1.0 / grid.p_center(j);
            for i in 0..nr {
                let up = if i + 1 < nr { col[i + 1].max(0.0) } else { 0.0 };
                let down = if i > 0 { (-col[i]).max(0.0) } else { 0.0 };
                w = w.max((up + down) * inv_p);
            }
        }
        w
    }

    /// Checks that every column is non-increasing in `i`.
    pub fn check_monotone(&self) -> Result<()> {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for (j, col) in self.values.chunks(self.nr_faces).enumerate() {
            for (i, w) in col.windows(2).enumerate() {
                if w[1] > w[0] + 1e-13 * scale {
                    return Err(Error::ModelValidation(format!(
                        "sorption rate increases in r at column {j}, faces {i}->{}: {} -> {}",
                        i + 1,
                        w[0],
                        w[1]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Samples the sorption rate at every interface of the grid and checks that it
/// is non-increasing in `r`.
pub fn interface_velocity_table(
    model: &RateModel,
    u: f64,
    grid: &GridSpec,
) -> Result<VelocityTable> {
    if !(u >= 0.0 && u.is_finite()) {
        return Err(Error::Domain(format!(
            "free-ion concentration u = {u} must be finite and >= 0"
        )));
    }
    let table = VelocityTable::from_fn(grid, |j, i| {
        model.velocity(u, grid.p_edge(j), grid.r_edge(i))
    });
    table.check_monotone()?;
    Ok(table)
}

pub type KernelFn = dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync;

/// Coagulation kernel `a(p, r; p', r')`.
#[derive(Clone)]
pub enum KernelModel {
    Constant(f64),
    /// `a = scale (p p')^p_exp (r r')^r_exp`.
    SeparableProduct {
        scale: f64,
        p_exp: f64,
        r_exp: f64,
    },
    /// Cell-averaged values given directly, row-major over flat cell pairs.
    Tabulated {
        n_cells: usize,
        values: Vec<f64>,
    },
    /// Pointwise symmetric kernel with a declared sup bound.
    Analytic {
        f: Arc<KernelFn>,
        bound: f64,
    },
}

impl fmt::Debug for KernelModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelModel::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            KernelModel::SeparableProduct {
                scale,
                p_exp,
                r_exp,
            } => f
                .debug_struct("SeparableProduct")
                .field("scale", scale)
                .field("p_exp", p_exp)
                .field("r_exp", r_exp)
                .finish(),
            KernelModel::Tabulated { n_cells, .. } => f
                .debug_struct("Tabulated")
                .field("n_cells", n_cells)
                .finish(),
            KernelModel::Analytic { bound, .. } => {
                f.debug_struct("Analytic").field("bound", bound).finish()
            }
        }
    }
}

impl KernelModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Error::KernelValidation(format!("{what} must be finite and >= 0, got {v}"))
        };
        match self {
            KernelModel::Constant(c) if !(c.is_finite() && *c >= 0.0) => {
                Err(bad("constant kernel", *c))
            }
            KernelModel::SeparableProduct {
                scale,
                p_exp,
                r_exp,
            } => {
                for (name, v) in [("scale", scale), ("p_exp", p_exp), ("r_exp", r_exp)] {
                    if !(v.is_finite() && *v >= 0.0) {
                        return Err(bad(name, *v));
                    }
                }
                Ok(())
            }
            KernelModel::Tabulated { n_cells, values } => {
                if values.len() != n_cells * n_cells {
                    return Err(Error::KernelValidation(format!(
                        "tabulated kernel needs {} entries, got {}",
                        n_cells * n_cells,
                        values.len()
                    )));
                }
                if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                    return Err(bad("tabulated kernel entry", *v));
                }
                for a in 0..*n_cells {
                    for b in 0..a {
                        let (x, y) = (values[a * n_cells + b], values[b * n_cells + a]);
                        if (x - y).abs() > 1e-14 * x.abs().max(y.abs()) {
                            return Err(Error::KernelValidation(format!(
                                "tabulated kernel is not symmetric at cells ({a}, {b}): {x} vs {y}"
                            )));
                        }
                    }
                }
                Ok(())
            }
            KernelModel::Analytic { bound, .. } if !(bound.is_finite() && *bound >= 0.0) => {
                Err(bad("kernel bound", *bound))
            }
            _ => Ok(()),
        }
    }

    /// Sup bound `K_kernel` on the truncated domain.
    pub fn sup_bound(&self, p_max: f64) -> f64 {
        match self {
            KernelModel::Constant(c) => *c,
            KernelModel::SeparableProduct { scale, p_exp, .. } => scale * p_max.powf(2.0 * p_exp),
            KernelModel::Tabulated { values, .. } => values.iter().fold(0.0, |m, v| m.max(*v)),
            KernelModel::Analytic { bound, .. } => *bound,
        }
    }
}

/// Cell-pair averages `a_{j,i;j',i'}` in a representation that keeps the
/// constant and separable cases free of the quadratic table.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelTable {
    Constant(f64),
    /// `a_{c,c'} = scale * weight[c] * weight[c']` over flat cell indices.
    Separable {
        scale: f64,
        weights: Vec<f64>,
    },
    Dense {
        n_cells: usize,
        values: Vec<f64>,
    },
}

impl KernelTable {
    /// Average over the cell pair with flat indices `a`, `b`.
    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        match self {
            KernelTable::Constant(c) => *c,
            KernelTable::Separable { scale, weights } => scale * weights[a] * weights[b],
            KernelTable::Dense { n_cells, values } => values[a * n_cells + b],
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            KernelTable::Constant(c) => *c == 0.0,
            KernelTable::Separable { scale, weights } => {
                *scale == 0.0 || weights.iter().all(|w| *w == 0.0)
            }
            KernelTable::Dense { values, .. } => values.iter().all(|v| *v == 0.0),
        }
    }
}

/// Largest dense kernel table built from an analytic kernel.
pub const MAX_DENSE_KERNEL_ENTRIES: usize = 1 << 26;

fn power_mean(lo: f64, hi: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else {
        (hi.powf(e + 1.0) - lo.powf(e + 1.0)) / ((e + 1.0) * (hi - lo))
    }
}

/// Averages the kernel over every pair of cells.
pub fn kernel_cell_average(kernel: &KernelModel, grid: &GridSpec) -> Result<KernelTable> {
    kernel.validate()?;
    let n = grid.n_cells();
    match kernel {
        KernelModel::Constant(c) => Ok(KernelTable::Constant(*c)),
        KernelModel::SeparableProduct {
            scale,
            p_exp,
            r_exp,
        } => {
            let mut weights = Vec::with_capacity(n);
            for j in 0..grid.np() {
                let wp = power_mean(grid.p_edge(j), grid.p_edge(j + 1), *p_exp);
                for i in 0..grid.nr() {
                    weights.push(wp * power_mean(grid.r_edge(i), grid.r_edge(i + 1), *r_exp));
                }
            }
            Ok(KernelTable::Separable {
                scale: *scale,
                weights,
            })
        }
        KernelModel::Tabulated { n_cells, values } => {
            if *n_cells != n {
                return Err(Error::KernelValidation(format!(
                    "tabulated kernel has {n_cells} cells, grid has {n}"
                )));
            }
            Ok(KernelTable::Dense {
                n_cells: n,
                values: values.clone(),
            })
        }
        KernelModel::Analytic { f, .. } => {
            if n.saturating_mul(n) > MAX_DENSE_KERNEL_ENTRIES {
                return Err(Error::KernelValidation(format!(
                    "analytic kernel on {n} cells needs a dense table of {} entries (limit {MAX_DENSE_KERNEL_ENTRIES})",
                    n as u128 * n as u128
                )));
            }
            let nodes: Vec<([f64; 2], [f64; 2])> = (0..grid.np())
                .flat_map(|j| {
                    (0..grid.nr()).map(move |i| {
                        (
                            gauss2(grid.p_edge(j), grid.p_edge(j + 1)),
                            gauss2(grid.r_edge(i), grid.r_edge(i + 1)),
                        )
                    })
                })
                .collect();
            let mut values = vec![0.0; n * n];
            for a in 0..n {
                let (pa, ra) = nodes[a];
                for b in a..n {
                    let (pb, rb) = nodes[b];
                    let mut sum = 0.0;
                    for p in pa {
                        for r in ra {
                            for q in pb {
                                for s in rb {
                                    sum += f(p, r, q, s);
                                }
                            }
                        }
                    }
                    let avg = sum / 16.0;
                    if !(avg.is_finite() && avg >= 0.0) {
                        return Err(Error::KernelValidation(format!(
                            "kernel average on cells ({a}, {b}) is {avg}"
                        )));
                    }
                    values[a * n + b] = avg;
                    values[b * n + a] = avg;
                }
            }
            Ok(KernelTable::Dense { n_cells: n, values })
        }
    }
}

/// Stability quantities of the explicit scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    /// Discrete zeroth moment of the initial field.
    pub m_in: f64,
    /// A priori bound on the free-ion concentration over `[0, T]`,
    /// `u_in + sup(l) * M_in * T`.
    pub u_bound: f64,
    /// The exponential form `exp(K_rate M_in T) u_in`, reported for comparison.
    pub u_bound_exponential: f64,
    /// `sup |V|` over `u in [0, u_bound]` and the interface points.
    pub v_sup: f64,
    pub k_kernel: f64,
    /// Largest cell outflow rate `W`, see [`VelocityTable::outflow_speed`].
    pub outflow_speed: f64,
    pub dt_max_transport: f64,
    pub dt_max_coag: f64,
    pub dt_max_positivity: f64,
    pub dt_max: f64,
    /// Step checked by this report.
    pub dt: f64,
    /// `4 dt V_sup / dr`, must be < 1.
    pub transport_margin: f64,
    /// `2 K M_in (1 + P) dt`, must be < 1.
    pub coag_margin: f64,
    /// `dt (W / dr + K M_in)`, must be < 1. Bounds the fraction of a cell
    /// removed in one step by transport and coagulation loss together.
    pub positivity_margin: f64,
}

impl StabilityReport {
    /// Assembles a report; `m_in` also bounds the current zeroth moment.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        m_in: f64,
        u_bound: f64,
        u_bound_exponential: f64,
        v_sup: f64,
        outflow_speed: f64,
        k_kernel: f64,
        grid: &GridSpec,
        dt: f64,
    ) -> Self {
        let (dr, p) = (grid.dr(), grid.p_max());
        let dtt = dt_max_transport(v_sup, dr);
        let dtc = dt_max_coag(k_kernel, m_in, p);
        let rate = outflow_speed / dr + k_kernel * m_in;
        let dtp = if rate > 0.0 {
            1.0 / rate
        } else {
            f64::INFINITY
        };
        StabilityReport {
            m_in,
            u_bound,
            u_bound_exponential,
            v_sup,
            k_kernel,
            outflow_speed,
            dt_max_transport: dtt,
            dt_max_coag: dtc,
            dt_max_positivity: dtp,
            dt_max: dtt.min(dtc).min(dtp),
            dt,
            transport_margin: 4.0 * dt * v_sup / dr,
            coag_margin: 2.0 * k_kernel * m_in * (1.0 + p) * dt,
            positivity_margin: dt * rate,
        }
    }

    pub fn admits(&self) -> bool {
        self.transport_margin < 1.0 && self.coag_margin < 1.0 && self.positivity_margin < 1.0
    }

    /// `Ok` when the configured step satisfies all three inequalities.
    pub fn check(&self) -> Result<()> {
        if self.admits() {
            Ok(())
        } else {
            Err(self.violation())
        }
    }

    pub(crate) fn violation(&self) -> Error {
        Error::Cfl {
            dt: self.dt,
            transport_margin: self.transport_margin,
            coag_margin: self.coag_margin,
            positivity_margin: self.positivity_margin,
            dt_max_transport: self.dt_max_transport,
            dt_max_coag: self.dt_max_coag,
            dt_max_positivity: self.dt_max_positivity,
        }
    }
}

pub fn dt_max_transport(v_sup: f64, dr: f64) -> f64 {
    if v_sup > 0.0 {
        dr / (4.0 * v_sup)
    } else {
        f64::INFINITY
    }
}

pub fn dt_max_coag(k_kernel: f64, m_in: f64, p_max: f64) -> f64 {
    let rate = 2.0 * k_kernel * m_in * (1.0 + p_max);
    if rate > 0.0 {
        1.0 / rate
    } else {
        f64::INFINITY
    }
}

/// Computes the stability bounds for a given initial field and time axis.
///
/// `v_sup_safety` multiplies the sampled `sup |V|`.
pub fn stability_bounds(
    model: &RateModel,
    kernel: &KernelModel,
    f_in: &Field,
    u_in: f64,
    time: &TimeSpec,
    grid: &GridSpec,
    v_sup_safety: f64,
) -> StabilityReport {
    let m_in: f64 = f_in.values().iter().sum::<f64>() * grid.cell_volume();
    let t = time.t_final();
    let u_bound = u_in + model.l_sup() * m_in * t;
    let u_bound_exponential = (model.k_rate() * m_in * t).exp() * u_in;

    // V is affine in u, so the sup over [0, u_bound] sits at an endpoint
    let mut v_sup = 0.0f64;
    let mut outflow = 0.0f64;
    for u in [0.0, u_bound] {
        let table = VelocityTable::from_fn(grid, |j, i| {
            model.velocity(u, grid.p_edge(j), grid.r_edge(i))
        });
        v_sup = v_sup.max(table.max_abs());
        outflow = outflow.max(table.outflow_speed(grid));
    }
    StabilityReport::new(
        m_in,
        u_bound,
        u_bound_exponential,
        v_sup * v_sup_safety,
        outflow * v_sup_safety,
        kernel.sup_bound(grid.p_max()),
        grid,
        time.dt(),
    )
}
