//! Conservative binary coagulation on the truncated grid.
//!
//! Two cells `(j', i')` and `(j'', i'')` with `j' + j'' <= J` merge into the
//! p-cell `j' + j''` and the r-cell containing the surrogate ratio
//!
//! ```text
//! V# = (r_{i'+1/2} p_{j'+1/2} + r_{i''+1/2} p_{j''+1/2}) / (p_{j'-1/2} + p_{j''-1/2})
//! ```
//!
//! The receiving r-cell does not depend on `u`, so it is tabulated once per
//! grid. The increment is evaluated in the reordered (cell) form; the corner
//! flux form is kept as a second route used for cross-checking and for the
//! ion-balance identity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::mesh::GridSpec;
use crate::rates::KernelTable;

/// What to do with a merged pair whose `V#` is at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverflowPolicy {
    /// Send it to the top r-cell `I`; keeps the first p-moment exact.
    #[default]
    Clamp,
    /// Discard it, as the indicator reads literally.
    Drop,
}

/// Whether receiving cells are stored or recomputed every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    #[default]
    Precomputed,
    Recompute,
}

/// Marker for a dropped pair in the target table.
pub const OVERFLOW: u16 = u16::MAX;

/// Surrogate post-merge ratio `V#` of a pair of cells.
///
/// The pair `j' = j'' = 0` has a zero denominator; it falls back to the
/// average of the two r-centers.
#[inline]
pub fn pair_ratio(grid: &GridSpec, j1: usize, i1: usize, j2: usize, i2: usize) -> f64 {
    if j1 == 0 && j2 == 0 {
        return 0.5 * (grid.r_center(i1) + grid.r_center(i2));
    }
    (grid.r_edge(i1 + 1) * grid.p_edge(j1 + 1) + grid.r_edge(i2 + 1) * grid.p_edge(j2 + 1))
        / (grid.p_edge(j1) + grid.p_edge(j2))
}

/// Receiving r-cell of a pair, `None` when dropped.
///
/// On the uniform grid `V# / dr` is the ratio of two integers, so the cell
/// `r_{i-1/2} <= V# < r_{i+1/2}` is found exactly; ratios that sit on an
/// edge go to the cell above it.
#[inline]
pub fn pair_target(
    grid: &GridSpec,
    policy: OverflowPolicy,
    j1: usize,
    i1: usize,
    j2: usize,
    i2: usize,
) -> Option<usize> {
    let (num, den) = pair_ratio_units(j1, i1, j2, i2);
    let nr = grid.nr() as u64;
    if num < nr * den {
        Some((num / den) as usize)
    } else {
        match policy {
            OverflowPolicy::Clamp => Some(grid.i_max()),
            OverflowPolicy::Drop => None,
        }
    }
}

/// `V# / dr` as `(numerator, denominator)`.
#[inline]
fn pair_ratio_units(j1: usize, i1: usize, j2: usize, i2: usize) -> (u64, u64) {
    let (j1, i1, j2, i2) = (j1 as u64, i1 as u64, j2 as u64, i2 as u64);
    if j1 == 0 && j2 == 0 {
        (i1 + i2 + 1, 2)
    } else {
        ((i1 + 1) * (j1 + 1) + (i2 + 1) * (j2 + 1), j1 + j2)
    }
}

/// Receiving r-cell for a surrogate ratio, `None` when dropped.
#[inline]
pub fn target_cell(grid: &GridSpec, v: f64, policy: OverflowPolicy) -> Option<usize> {
    match (grid.r_cell_of(v), policy) {
        (Some(i), _) => Some(i),
        (None, OverflowPolicy::Clamp) => Some(grid.i_max()),
        (None, OverflowPolicy::Drop) => None,
    }
}

fn fill_block(grid: &GridSpec, policy: OverflowPolicy, j1: usize, j2: usize, block: &mut [u16]) {
    let nr = grid.nr();
    for i1 in 0..nr {
        for i2 in 0..nr {
            block[i1 * nr + i2] =
                pair_target(grid, policy, j1, i1, j2, i2).map_or(OVERFLOW, |i| i as u16);
        }
    }
}

/// Receiving r-cells of every ordered pair with `j' + j'' <= J`, stored as
/// one `(I+1) x (I+1)` block per `(j', j'')`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTable {
    nr: usize,
    offsets: Vec<usize>,
    data: Vec<u16>,
}

impl TargetTable {
    /// Receiving cells of the block `(j', j'')`, indexed `i' * (I+1) + i''`.
    #[inline]
    pub fn block(&self, j1: usize, j2: usize) -> &[u16] {
        let b = self.offsets[j1] + j2;
        let len = self.nr * self.nr;
        &self.data[b * len..(b + 1) * len]
    }

    /// Target of one pair; `None` marks an overflow.
    pub fn target(&self, j1: usize, i1: usize, j2: usize, i2: usize) -> Option<usize> {
        let t = self.block(j1, j2)[i1 * self.nr + i2];
        (t != OVERFLOW).then_some(t as usize)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

fn block_offsets(grid: &GridSpec) -> Vec<usize> {
    let np = grid.np();
    let mut offsets = Vec::with_capacity(np);
    let mut acc = 0;
    for j1 in 0..np {
        offsets.push(acc);
        acc += np - j1;
    }
    offsets
}

pub fn precompute_targets(grid: &GridSpec, policy: OverflowPolicy) -> Result<TargetTable> {
    check_r_cells(grid)?;
    let nr = grid.nr();
    let offsets = block_offsets(grid);
    let blocks = offsets.last().map_or(0, |o| o + 1);
    let len = nr * nr;
    let mut data = vec![0u16; blocks * len];
    for j1 in 0..grid.np() {
        for j2 in 0..grid.np() - j1 {
            let b = offsets[j1] + j2;
            fill_block(grid, policy, j1, j2, &mut data[b * len..(b + 1) * len]);
        }
    }
    Ok(TargetTable { nr, offsets, data })
}

fn check_r_cells(grid: &GridSpec) -> Result<()> {
    if grid.nr() >= OVERFLOW as usize {
        return Err(Error::config(
            "grid.I",
            format!(
                "at most {} r-cells are supported, got {}",
                OVERFLOW as usize - 1,
                grid.nr()
            ),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
enum Targets {
    Precomputed(TargetTable),
    Recompute,
}

/// Everything the coagulation increment needs besides the field.
#[derive(Debug, Clone, PartialEq)]
pub struct CoagTables {
    grid: GridSpec,
    kernel: KernelTable,
    policy: OverflowPolicy,
    targets: Targets,
}

impl CoagTables {
    pub fn new(
        grid: &GridSpec,
        kernel: KernelTable,
        policy: OverflowPolicy,
        mode: TargetMode,
    ) -> Result<Self> {
        if let KernelTable::Dense { n_cells, .. } = &kernel {
            if *n_cells != grid.n_cells() {
                return Err(Error::KernelValidation(format!(
                    "kernel table has {n_cells} cells, grid has {}",
                    grid.n_cells()
                )));
            }
        }
        if let KernelTable::Separable { weights, .. } = &kernel {
            if weights.len() != grid.n_cells() {
                return Err(Error::KernelValidation(
                    "separable kernel weights do not match the grid".into(),
                ));
            }
        }
        check_r_cells(grid)?;
        let targets = match mode {
            TargetMode::Precomputed => Targets::Precomputed(precompute_targets(grid, policy)?),
            TargetMode::Recompute => Targets::Recompute,
        };
        Ok(Self {
            grid: *grid,
            kernel,
            policy,
            targets,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn kernel(&self) -> &KernelTable {
        &self.kernel
    }

    pub fn policy(&self) -> OverflowPolicy {
        self.policy
    }

    pub fn target_table(&self) -> Option<&TargetTable> {
        match &self.targets {
            Targets::Precomputed(t) => Some(t),
            Targets::Recompute => None,
        }
    }
}

/// Cell increment `C_{j,i}` plus the gain discarded by the drop policy.
#[derive(Debug, Clone, PartialEq)]
pub struct CoagIncrement {
    pub values: Field,
    /// Total gain of pairs whose `V#` overflowed (always 0 under clamp).
    pub overflow: f64,
}

impl CoagIncrement {
    pub fn total(&self) -> f64 {
        self.values.values().iter().sum()
    }

    pub fn l1(&self) -> f64 {
        self.values.values().iter().map(|v| v.abs()).sum()
    }
}

/// Gain and loss halves of the reordered increment, both nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct CoagParts {
    pub gain: Field,
    pub loss: Field,
    pub overflow: f64,
}

impl CoagParts {
    pub fn increment(&self) -> CoagIncrement {
        let mut values = self.gain.clone();
        for (c, l) in values.values_mut().iter_mut().zip(self.loss.values()) {
            *c -= l;
        }
        CoagIncrement {
            values,
            overflow: self.overflow,
        }
    }
}

/// Kernel-weighted field `h` with `a_{c,c'} f_c f_{c'} = s h_c h_{c'}` for
/// factorized kernels.
fn factorized(f: &Field, kernel: &KernelTable) -> Option<(f64, Vec<f64>)> {
    match kernel {
        KernelTable::Constant(c) => Some((*c, f.values().to_vec())),
        KernelTable::Separable { scale, weights } => Some((
            *scale,
            f.values().iter().zip(weights).map(|(x, w)| x * w).collect(),
        )),
        KernelTable::Dense { .. } => None,
    }
}

/// Gain of all pairs landing in p-cell `j`, accumulated in ascending
/// `(j', i', i'')`. Returns the overflow dropped on the way.
fn gain_column(
    tables: &CoagTables,
    f: &Field,
    fact: Option<&(f64, Vec<f64>)>,
    j: usize,
    out: &mut [f64],
) -> f64 {
    let grid = &tables.grid;
    let nr = grid.nr();
    let vol2 = grid.cell_volume() * grid.cell_volume();
    // slot `nr` collects the overflow
    let mut buf = vec![0.0; nr + 1];
    let mut scratch = match tables.targets {
        Targets::Recompute => vec![0u16; nr * nr],
        Targets::Precomputed(_) => Vec::new(),
    };
    for j1 in 0..=j {
        let j2 = j - j1;
        let block: &[u16] = match &tables.targets {
            Targets::Precomputed(t) => t.block(j1, j2),
            Targets::Recompute => {
                fill_block(grid, tables.policy, j1, j2, &mut scratch);
                &scratch
            }
        };
        let w = grid.p_center(j1) * vol2;
        match fact {
            Some((scale, h)) => {
                let h1 = &h[j1 * nr..(j1 + 1) * nr];
                let h2 = &h[j2 * nr..(j2 + 1) * nr];
                let w = w * scale;
                for (i1, &x1) in h1.iter().enumerate() {
                    if x1 == 0.0 {
                        continue;
                    }
                    let wx = w * x1;
                    let row = &block[i1 * nr..(i1 + 1) * nr];
                    for (&t, &x2) in row.iter().zip(h2) {
                        // overflow targets land in the spare slot `nr`
                        buf[(t as usize).min(nr)] += wx * x2;
                    }
                }
            }
            None => {
                let f1 = f.column(j1);
                let f2 = f.column(j2);
                for (i1, &x1) in f1.iter().enumerate() {
                    if x1 == 0.0 {
                        continue;
                    }
                    let c1 = grid.idx(j1, i1);
                    let wx = w * x1;
                    let row = &block[i1 * nr..(i1 + 1) * nr];
                    for (i2, (&t, &x2)) in row.iter().zip(f2).enumerate() {
                        buf[(t as usize).min(nr)] +=
                            wx * tables.kernel.get(c1, grid.idx(j2, i2)) * x2;
                    }
                }
            }
        }
    }
    out.copy_from_slice(&buf[..nr]);
    buf[nr]
}

/// Loss `p_j f_{j,i} |cell| sum_{j' <= J-j, i'} a f_{j',i'} |cell|` of every cell.
fn loss_field(tables: &CoagTables, f: &Field, fact: Option<&(f64, Vec<f64>)>) -> Field {
    let grid = &tables.grid;
    let nr = grid.nr();
    let np = grid.np();
    let vol = grid.cell_volume();
    let mut loss = Field::zeros(grid);
    match fact {
        Some((scale, h)) => {
            // prefix[k] = sum over p-cells 0..k of the kernel-weighted column mass
            let mut prefix = vec![0.0; np + 1];
            for j in 0..np {
                prefix[j + 1] = prefix[j] + h[j * nr..(j + 1) * nr].iter().sum::<f64>();
            }
            for j in 0..np {
                let partner = scale * prefix[np - j] * vol;
                let pj = grid.p_center(j);
                for i in 0..nr {
                    let c = j * nr + i;
                    loss.values_mut()[c] = pj * h[c] * partner * vol;
                }
            }
        }
        None => {
            for j in 0..np {
                let pj = grid.p_center(j);
                for i in 0..nr {
                    let c = grid.idx(j, i);
                    let fc = f.values()[c];
                    if fc == 0.0 {
                        continue;
                    }
                    let mut partner = 0.0;
                    for j2 in 0..np - j {
                        for i2 in 0..nr {
                            let c2 = grid.idx(j2, i2);
                            partner += tables.kernel.get(c, c2) * f.values()[c2];
                        }
                    }
                    loss.values_mut()[c] = pj * (partner * vol) * fc * vol;
                }
            }
        }
    }
    loss
}

/// Gain and loss of the reordered formula. With `parallel`, target columns
/// are distributed over threads; each column is still summed in the same
/// order, so the result does not depend on the thread count.
pub fn coag_parts(f: &Field, tables: &CoagTables, parallel: bool) -> CoagParts {
    let grid = &tables.grid;
    assert!(f.matches(grid), "field does not match the coagulation grid");
    let nr = grid.nr();
    let fact = factorized(f, &tables.kernel);
    let mut gain = Field::zeros(grid);
    let overflow_by_column: Vec<f64> = if parallel {
        gain.values_mut()
            .par_chunks_mut(nr)
            .enumerate()
            .map(|(j, col)| gain_column(tables, f, fact.as_ref(), j, col))
            .collect()
    } else {
        gain.values_mut()
            .chunks_mut(nr)
            .enumerate()
            .map(|(j, col)| gain_column(tables, f, fact.as_ref(), j, col))
            .collect()
    };
    let overflow = overflow_by_column.iter().sum();
    let loss = loss_field(tables, f, fact.as_ref());
    CoagParts {
        gain,
        loss,
        overflow,
    }
}

/// Reordered-form coagulation increment `C_{j,i}`.
pub fn coag_increment(f: &Field, tables: &CoagTables) -> CoagIncrement {
    coag_parts(f, tables, false).increment()
}

/// Corner fluxes `C_{j-1/2,i-1/2}` for `j = 0..=J+1`, `i = 0..=I+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerFluxes {
    nr_corners: usize,
    values: Vec<f64>,
}

impl CornerFluxes {
    /// `C_{j-1/2, i-1/2}`.
    #[inline]
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.values[j * self.nr_corners + i]
    }

    /// Cell increment by the double difference of the corner fluxes.
    pub fn difference(&self, grid: &GridSpec) -> Field {
        Field::from_fn(grid, |j, i| {
            (self.get(j + 1, i + 1) - self.get(j + 1, i)) - (self.get(j, i + 1) - self.get(j, i))
        })
    }
}

/// Corner fluxes built from a source-ordered pair sweep with targets
/// recomputed on the fly (no target table), followed by cumulative sums.
pub fn corner_fluxes(f: &Field, tables: &CoagTables) -> CornerFluxes {
    let grid = &tables.grid;
    assert!(f.matches(grid), "field does not match the coagulation grid");
    let (np, nr) = (grid.np(), grid.nr());
    let vol = grid.cell_volume();
    let vol2 = vol * vol;

    // gain binned by receiving cell, loss binned by losing cell
    let mut gain = vec![0.0; np * nr];
    let mut loss = vec![0.0; np * nr];
    for j1 in 0..np {
        let w = grid.p_center(j1) * vol2;
        for i1 in 0..nr {
            let c1 = grid.idx(j1, i1);
            let x1 = f.values()[c1];
            if x1 == 0.0 {
                continue;
            }
            for j2 in 0..np - j1 {
                for i2 in 0..nr {
                    let c2 = grid.idx(j2, i2);
                    let contrib = w * tables.kernel.get(c1, c2) * x1 * f.values()[c2];
                    loss[c1] += contrib;
                    if let Some(t) = pair_target(grid, tables.policy, j1, i1, j2, i2) {
                        gain[grid.idx(j1 + j2, t)] += contrib;
                    }
                }
            }
        }
    }

    let nc = nr + 1;
    let mut values = vec![0.0; (np + 1) * nc];
    // C_{j+1/2, i+1/2} = cumulative gain - cumulative loss over cells (<= j, <= i);
    // row 0 and column 0 stay zero.
    for j in 0..np {
        let mut run = 0.0;
        for i in 0..nr {
            run += gain[j * nr + i] - loss[j * nr + i];
            values[(j + 1) * nc + i + 1] = values[j * nc + i + 1] + run;
        }
    }
    CornerFluxes {
        nr_corners: nc,
        values,
    }
}

/// Flux-form coagulation increment; matches [`coag_increment`] up to rounding.
pub fn coag_flux_form(f: &Field, tables: &CoagTables) -> CoagIncrement {
    let corners = corner_fluxes(f, tables);
    let values = corners.difference(&tables.grid);
    // the top-right corner carries the total; under drop it is minus the dropped gain
    let overflow = match tables.policy {
        OverflowPolicy::Clamp => 0.0,
        OverflowPolicy::Drop => (-corners.get(tables.grid.np(), tables.grid.nr())).max(0.0),
    };
    CoagIncrement { values, overflow }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::{kernel_cell_average, KernelModel};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(p: f64, j: usize, i: usize) -> GridSpec {
        GridSpec::new(p, j, i).unwrap()
    }

    fn tables(g: &GridSpec, kernel: KernelTable, policy: OverflowPolicy) -> CoagTables {
        CoagTables::new(g, kernel, policy, TargetMode::Precomputed).unwrap()
    }

    fn random_field(g: &GridSpec, rng: &mut ChaCha8Rng) -> Field {
        Field::from_fn(g, |_, _| {
            if rng.gen_bool(0.2) {
                0.0
            } else {
                rng.gen_range(0.0..5.0)
            }
        })
    }

    fn random_symmetric_kernel(g: &GridSpec, rng: &mut ChaCha8Rng) -> KernelTable {
        let n = g.n_cells();
        let mut values = vec![0.0; n * n];
        for a in 0..n {
            for b in a..n {
                let v = rng.gen_range(0.0..2.0);
                values[a * n + b] = v;
                values[b * n + a] = v;
            }
        }
        KernelTable::Dense { n_cells: n, values }
    }

    #[test]
    fn surrogate_ratio_examples() {
        let g = grid(1.0, 3, 3);
        let v = pair_ratio(&g, 2, 0, 1, 0);
        assert!((v - 0.25 * 0.75 / 0.75 - 0.25 * 0.5 / 0.75).abs() < 1e-15);
        assert!((v - 5.0 / 12.0).abs() < 1e-15);
        assert_eq!(target_cell(&g, v, OverflowPolicy::Clamp), Some(1));

        let g = grid(1.0, 1, 1);
        let v = pair_ratio(&g, 1, 0, 0, 0);
        assert!((v - 1.5).abs() < 1e-15);
        assert_eq!(target_cell(&g, v, OverflowPolicy::Clamp), Some(1));
        assert_eq!(target_cell(&g, v, OverflowPolicy::Drop), None);
        let t = precompute_targets(&g, OverflowPolicy::Drop).unwrap();
        assert_eq!(t.target(1, 0, 0, 0), None);
        let t = precompute_targets(&g, OverflowPolicy::Clamp).unwrap();
        assert_eq!(t.target(1, 0, 0, 0), Some(1));

        let g = grid(1.0, 99, 99);
        let v = pair_ratio(&g, 80, 50, 80, 50);
        assert!((v - 0.516375).abs() < 1e-14);
        assert_eq!(g.r_cell_of(v), Some(51));
    }

    #[test]
    fn ratios_on_an_edge_go_up() {
        // (r_1 p_1 + r_1 p_2) / p_1 = 3 dr exactly, whatever dp is
        let g = grid(1.0, 2, 9);
        let v = pair_ratio(&g, 0, 0, 1, 0);
        assert!((v - 0.3).abs() < 1e-15);
        assert_eq!(pair_target(&g, OverflowPolicy::Drop, 0, 0, 1, 0), Some(3));
        // centers of cells 0 and 1 average to the edge r_1
        assert_eq!(pair_target(&g, OverflowPolicy::Drop, 0, 0, 0, 1), Some(1));
        // exactly 1 is outside the domain
        let g = grid(1.0, 1, 1);
        assert_eq!(pair_target(&g, OverflowPolicy::Drop, 1, 0, 0, 0), None);
        assert_eq!(pair_target(&g, OverflowPolicy::Drop, 0, 1, 0, 1), Some(1));
    }

    #[test]
    fn zero_denominator_uses_centers() {
        let g = grid(1.0, 4, 4);
        assert_eq!(
            pair_ratio(&g, 0, 1, 0, 3),
            0.5 * (g.r_center(1) + g.r_center(3))
        );
    }

    #[test]
    fn targets_bracket_the_ratio() {
        let g = grid(1.3, 6, 7);
        for policy in [OverflowPolicy::Clamp, OverflowPolicy::Drop] {
            let t = precompute_targets(&g, policy).unwrap();
            for j1 in 0..g.np() {
                for j2 in 0..g.np() - j1 {
                    for i1 in 0..g.nr() {
                        for i2 in 0..g.nr() {
                            let v = pair_ratio(&g, j1, i1, j2, i2);
                            match t.target(j1, i1, j2, i2) {
                                Some(i) if v < 1.0 - 1e-12 => {
                                    let (lo, hi) = (g.r_edge(i), g.r_edge(i + 1));
                                    assert!(lo - 1e-12 <= v && v < hi + 1e-12);
                                }
                                Some(i) => {
                                    assert_eq!(policy, OverflowPolicy::Clamp);
                                    assert_eq!(i, g.i_max());
                                }
                                None => {
                                    assert_eq!(policy, OverflowPolicy::Drop);
                                    assert!(v >= 1.0 - 1e-12);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn zero_field_zero_increment() {
        let g = grid(1.0, 3, 3);
        let t = tables(&g, KernelTable::Constant(1.0), OverflowPolicy::Clamp);
        let c = coag_increment(&Field::zeros(&g), &t);
        assert_eq!(c.l1(), 0.0);
        let corners = corner_fluxes(&Field::zeros(&g), &t);
        assert!(corners.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_occupied_cell_balances() {
        let g = grid(1.0, 1, 0);
        let t = tables(&g, KernelTable::Constant(1.0), OverflowPolicy::Clamp);
        let c0 = 3.0;
        let f = Field::from_fn(&g, |j, _| if j == 0 { c0 } else { 0.0 });
        let parts = coag_parts(&f, &t, false);
        let expected = 0.25 * c0 * c0 * 0.25;
        assert!((parts.gain[(0, 0)] - expected).abs() < 1e-15);
        assert!((parts.loss[(0, 0)] - expected).abs() < 1e-15);
        let c = parts.increment();
        assert_eq!(c.values[(0, 0)], 0.0);
        assert_eq!(c.values[(1, 0)], 0.0);
    }

    #[test]
    fn clamp_conserves_random_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = grid(1.0, 5, 5);
        let t = tables(&g, KernelTable::Constant(1.0), OverflowPolicy::Clamp);
        for _ in 0..20 {
            let f = random_field(&g, &mut rng);
            let c = coag_increment(&f, &t);
            assert!(c.total().abs() <= 1e-12 * c.l1());
            assert_eq!(c.overflow, 0.0);
        }
    }

    #[test]
    fn drop_deficit_equals_overflow() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = grid(1.0, 5, 5);
        let t = tables(&g, KernelTable::Constant(1.0), OverflowPolicy::Drop);
        for _ in 0..20 {
            let f = random_field(&g, &mut rng);
            let c = coag_increment(&f, &t);
            assert!(c.total() <= 1e-12 * c.l1());
            assert!(c.overflow > 0.0);
            assert!((c.total() + c.overflow).abs() <= 1e-12 * c.l1());
        }
    }

    #[test]
    fn flux_form_matches_reordered_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = grid(1.0, 4, 4);
        for policy in [OverflowPolicy::Clamp, OverflowPolicy::Drop] {
            for _ in 0..10 {
                let f = random_field(&g, &mut rng);
                let t = tables(&g, random_symmetric_kernel(&g, &mut rng), policy);
                let a = coag_increment(&f, &t);
                let b = coag_flux_form(&f, &t);
                let scale = 1.0 + a.values.max_abs();
                for (x, y) in a.values.values().iter().zip(b.values.values()) {
                    assert!((x - y).abs() <= 1e-12 * scale);
                }
                let corners = corner_fluxes(&f, &t);
                for j in 0..=g.np() {
                    assert_eq!(corners.get(j, 0), 0.0);
                }
                for i in 0..=g.nr() {
                    assert_eq!(corners.get(0, i), 0.0);
                }
            }
        }
    }

    #[test]
    fn recompute_mode_matches_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = grid(2.0, 6, 5);
        let f = random_field(&g, &mut rng);
        let k = kernel_cell_average(
            &KernelModel::SeparableProduct {
                scale: 0.5,
                p_exp: 1.0,
                r_exp: 2.0,
            },
            &g,
        )
        .unwrap();
        for policy in [OverflowPolicy::Clamp, OverflowPolicy::Drop] {
            let a = CoagTables::new(&g, k.clone(), policy, TargetMode::Precomputed).unwrap();
            let b = CoagTables::new(&g, k.clone(), policy, TargetMode::Recompute).unwrap();
            assert_eq!(coag_increment(&f, &a), coag_increment(&f, &b));
        }
    }

    #[test]
    fn parallel_mode_is_bitwise_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = grid(1.0, 9, 6);
        let f = random_field(&g, &mut rng);
        let t = tables(&g, KernelTable::Constant(1.0), OverflowPolicy::Drop);
        assert_eq!(coag_parts(&f, &t, false), coag_parts(&f, &t, true));
    }

    #[test]
    fn separable_matches_dense_equivalent() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = grid(1.0, 4, 3);
        let sep = kernel_cell_average(
            &KernelModel::SeparableProduct {
                scale: 2.0,
                p_exp: 1.0,
                r_exp: 1.0,
            },
            &g,
        )
        .unwrap();
        let n = g.n_cells();
        let dense = KernelTable::Dense {
            n_cells: n,
            values: (0..n * n).map(|k| sep.get(k / n, k % n)).collect(),
        };
        let f = random_field(&g, &mut rng);
        let a = coag_increment(&f, &tables(&g, sep, OverflowPolicy::Clamp));
        let b = coag_increment(&f, &tables(&g, dense, OverflowPolicy::Clamp));
        for (x, y) in a.values.values().iter().zip(b.values.values()) {
            assert!((x - y).abs() <= 1e-13 * (1.0 + x.abs()));
        }
    }

    proptest! {
        #[test]
        fn zeroth_moment_dissipates(values in proptest::collection::vec(0.0f64..4.0, 36)) {
            let g = grid(1.0, 5, 5);
            let f = Field::from_values(&g, values);
            for policy in [OverflowPolicy::Clamp, OverflowPolicy::Drop] {
                let c = coag_increment(&f, &tables(&g, KernelTable::Constant(1.0), policy));
                let m0_rate: f64 = (0..g.np())
                    .flat_map(|j| (0..g.nr()).map(move |i| (j, i)))
                    .map(|(j, i)| c.values[(j, i)] / g.p_center(j))
                    .sum();
                let norm: f64 = f.values().iter().sum::<f64>() * g.cell_volume();
                prop_assert!(m0_rate <= 1e-12 * norm * norm);
            }
        }

        #[test]
        fn increment_is_quadratic(values in proptest::collection::vec(0.0f64..4.0, 25), lambda in 0.1f64..10.0) {
            let g = grid(1.0, 4, 4);
            let t = tables(&g, KernelTable::Constant(1.5), OverflowPolicy::Clamp);
            let f = Field::from_values(&g, values.clone());
            let mut scaled = f.clone();
            scaled.scale(lambda);
            let a = coag_increment(&f, &t);
            let b = coag_increment(&scaled, &t);
            let scale = b.values.max_abs().max(1e-300);
            for (x, y) in a.values.values().iter().zip(b.values.values()) {
                prop_assert!((lambda * lambda * x - y).abs() <= 1e-13 * scale);
            }
        }

        #[test]
        fn clamp_total_vanishes(values in proptest::collection::vec(0.0f64..4.0, 36)) {
            let g = grid(1.0, 5, 5);
            let c = coag_increment(&Field::from_values(&g, values), &tables(&g, KernelTable::Constant(1.0), OverflowPolicy::Clamp));
            prop_assert!(c.total().abs() <= 1e-12 * c.l1().max(1e-300));
        }
    }
}
