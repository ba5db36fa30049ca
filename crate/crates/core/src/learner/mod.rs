//! Delay-aware control: per-flow potential tables, two-timescale Lagrange
//! multipliers, and stochastic partial-gradient power/rate updates driven by
//! ACK/NAK-style feedback.
//!
//! Everything here works in *rate units*: one unit is the number of bits a
//! 1 bit/s/Hz stream carries in a frame (W·τ). Queue lengths, rates,
//! capacities and the smoothing parameter η all use that unit; the simulator
//! converts to bits at the boundary.

mod objective;
mod online;
mod snapshot;

pub use objective::*;
pub use online::{ControlProblem, FrameOutcome, OnlineController, OnlineOptions};
pub use snapshot::{read_snapshot, write_snapshot};

use serde::{Deserialize, Serialize};

use crate::action::UserAction;
use crate::error::{Error, Result};

/// Uniform queue grid `0, Δ, 2Δ, ..., max`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueueGrid {
    levels: usize,
    max: f64,
}

impl QueueGrid {
    pub fn new(levels: usize, max: f64) -> Result<Self> {
        if levels < 2 || !(max > 0.0 && max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "queue grid needs >= 2 levels and a positive range, got {levels} over {max}"
            )));
        }
        Ok(Self { levels, max })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn spacing(&self) -> f64 {
        self.max / (self.levels - 1) as f64
    }

    pub fn level(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    /// Lower bracketing index and the weight of the upper neighbour, after
    /// clamping `q` to the grid range.
    pub fn locate(&self, q: f64) -> (usize, f64) {
        let x = q.clamp(0.0, self.max) / self.spacing();
        let lo = (x.floor() as usize).min(self.levels - 2);
        (lo, (x - lo as f64).clamp(0.0, 1.0))
    }

    /// Index of the nearest grid level.
    pub fn cell(&self, q: f64) -> usize {
        let (lo, w) = self.locate(q);
        if w >= 0.5 {
            lo + 1
        } else {
            lo
        }
    }
}

/// Per-user potential functions over post-decision queue levels, linearly
/// interpolated between grid points.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialTable {
    grid: QueueGrid,
    values: Vec<Vec<f64>>,
    reference: usize,
}

impl PotentialTable {
    /// All-zero tables with the empty queue as reference state.
    pub fn zeros(users: usize, grid: QueueGrid) -> Self {
        Self {
            grid,
            values: vec![vec![0.0; grid.levels]; users],
            reference: 0,
        }
    }

    pub fn from_values(grid: QueueGrid, values: Vec<Vec<f64>>) -> Result<Self> {
        if values
            .iter()
            .any(|v| v.len() != grid.levels || v.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::InvalidArgument(
                "potential values must be finite, one per grid level".into(),
            ));
        }
        Ok(Self {
            grid,
            values,
            reference: 0,
        })
    }

    pub fn grid(&self) -> &QueueGrid {
        &self.grid
    }

    pub fn users(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self, user: usize) -> &[f64] {
        &self.values[user]
    }

    pub fn values_mut(&mut self, user: usize) -> &mut [f64] {
        &mut self.values[user]
    }

    pub fn reference_level(&self) -> usize {
        self.reference
    }

    /// `V_k(q)` with `q` clamped to the grid range.
    pub fn value(&self, user: usize, q: f64) -> f64 {
        let (lo, w) = self.grid.locate(q);
        let v = &self.values[user];
        v[lo] + w * (v[lo + 1] - v[lo])
    }

    /// Derivative of `q ↦ V_k(clamp(q))`: zero outside the grid range.
    pub fn slope(&self, user: usize, q: f64) -> f64 {
        if !(0.0..=self.grid.max).contains(&q) {
            return 0.0;
        }
        let (lo, _) = self.grid.locate(q);
        let v = &self.values[user];
        (v[lo + 1] - v[lo]) / self.grid.spacing()
    }

    pub fn reference_value(&self, user: usize) -> f64 {
        self.values[user][self.reference]
    }

    /// Adds `step · delta` at `q`, split across the bracketing levels by the
    /// interpolation weights.
    pub fn nudge(&mut self, user: usize, q: f64, step: f64, delta: f64) {
        let (lo, w) = self.grid.locate(q);
        let v = &mut self.values[user];
        v[lo] += step * (1.0 - w) * delta;
        v[lo + 1] += step * w * delta;
    }

    /// Least-squares projection of `V_k` onto nondecreasing sequences
    /// (pool adjacent violators).
    pub fn make_monotone(&mut self, user: usize) {
        isotonic(&mut self.values[user]);
    }
}

fn isotonic(v: &mut [f64]) {
    if v.windows(2).all(|w| w[0] <= w[1]) {
        return;
    }
    // blocks of (mean, length)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(v.len());
    for &x in v.iter() {
        let mut block = (x, 1);
        while let Some(&(m, n)) = blocks.last() {
            if m <= block.0 {
                break;
            }
            blocks.pop();
            let len = n + block.1;
            block = ((m * n as f64 + block.0 * block.1 as f64) / len as f64, len);
        }
        blocks.push(block);
    }
    let mut i = 0;
    for (m, n) in blocks {
        v[i..i + n].fill(m);
        i += n;
    }
}

/// Per-BS power and backhaul prices, kept in `[0, bound]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Multipliers {
    pub gamma_p: Vec<f64>,
    pub gamma_c: Vec<f64>,
    pub bound: f64,
}

impl Multipliers {
    pub fn uniform(users: usize, initial: f64, bound: f64) -> Self {
        let g = initial.clamp(0.0, bound);
        Self {
            gamma_p: vec![g; users],
            gamma_c: vec![g; users],
            bound,
        }
    }

    pub fn project(&self, x: f64) -> f64 {
        x.clamp(0.0, self.bound)
    }

    pub fn is_valid(&self) -> bool {
        self.gamma_p
            .iter()
            .chain(&self.gamma_c)
            .all(|&g| (0.0..=self.bound).contains(&g))
    }
}

/// `κ(t) = scale / (1 + t/offset)^exponent`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSchedule {
    pub scale: f64,
    pub offset: f64,
    pub exponent: f64,
}

impl StepSchedule {
    pub fn kappa(&self, t: u64) -> f64 {
        self.scale / (1.0 + t as f64 / self.offset).powf(self.exponent)
    }

    pub fn constant(scale: f64) -> Self {
        Self {
            scale,
            offset: 1.0,
            exponent: 0.0,
        }
    }

    /// `Σκ = ∞` and `Σκ² < ∞`.
    pub fn is_robbins_monro(&self) -> bool {
        self.scale > 0.0 && self.offset > 0.0 && self.exponent > 0.5 && self.exponent <= 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedules {
    pub value: StepSchedule,
    pub multiplier: StepSchedule,
    pub action: StepSchedule,
}

impl Default for Schedules {
    fn default() -> Self {
        Self {
            value: StepSchedule {
                scale: 1.0,
                offset: 500.0,
                exponent: 0.6,
            },
            multiplier: StepSchedule {
                scale: 0.5,
                offset: 500.0,
                exponent: 1.0,
            },
            action: StepSchedule {
                scale: 0.5,
                offset: 500.0,
                exponent: 1.0,
            },
        }
    }
}

impl Schedules {
    /// Both sequences are Robbins–Monro and the multipliers run on the slower
    /// timescale (`κ_γ/κ_v → 0`).
    pub fn two_timescale(&self) -> bool {
        self.value.is_robbins_monro()
            && self.multiplier.is_robbins_monro()
            && self.action.is_robbins_monro()
            && self.multiplier.exponent > self.value.exponent
    }
}

/// What BS `k` observes about its own flow in one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowObservation {
    /// Post-decision backlog left by the previous frame.
    pub prev_post_decision: f64,
    /// Current pre-decision backlog.
    pub queue: f64,
    pub goodput: f64,
    /// Per-flow cost of the executed action (see [`flow_cost`]).
    pub cost: f64,
    /// Consumed minus budgeted power of BS `k`.
    pub power_excess: f64,
    /// Consumed minus budgeted backhaul of BS `k`.
    pub backhaul_excess: f64,
}

/// Per-flow cost of user `k`:
/// `β f(Q) + γ_kP(ΣP_p + P_cct·1(ΣP_p > 0) − P⁰) + Σ_n γ_nP P_(k,c),n + γ_kC(R_c − R⁰)`.
///
/// The common-power sum runs over every BS, including `k` itself, so that
/// the per-flow costs add up to the system cost.
#[allow(clippy::too_many_arguments)]
pub fn flow_cost(
    user: usize,
    queue_cost: f64,
    action: &UserAction,
    alpha: &[Vec<Vec<f64>>],
    mult: &Multipliers,
    p_cct: f64,
    power_budget: f64,
    backhaul_budget: f64,
) -> f64 {
    let private: f64 = action.p_p.iter().sum();
    let circuit = if private > 0.0 { p_cct } else { 0.0 };
    let mut common = 0.0;
    for (i, &p) in action.p_c.iter().enumerate() {
        for (bs, &a) in alpha[user][i].iter().enumerate() {
            common += mult.gamma_p[bs] * a * p;
        }
    }
    queue_cost
        + mult.gamma_p[user] * (private + circuit - power_budget)
        + common
        + mult.gamma_c[user] * (action.r_c - backhaul_budget)
}

/// One step of the potential and multiplier recursion for flow `user`.
pub fn algorithm1_update(
    table: &mut PotentialTable,
    mult: &mut Multipliers,
    user: usize,
    obs: &FlowObservation,
    schedules: &Schedules,
    t: u64,
) {
    let next = (obs.queue - obs.goodput).max(0.0);
    let td = obs.cost + table.value(user, next)
        - table.reference_value(user)
        - table.value(user, obs.prev_post_decision);
    table.nudge(user, obs.prev_post_decision, schedules.value.kappa(t), td);
    update_multipliers(
        mult,
        user,
        obs.power_excess,
        obs.backhaul_excess,
        schedules.multiplier.kappa(t),
    );
}

pub fn update_multipliers(
    mult: &mut Multipliers,
    user: usize,
    power_excess: f64,
    backhaul_excess: f64,
    step: f64,
) {
    mult.gamma_p[user] = mult.project(mult.gamma_p[user] + step * power_excess);
    mult.gamma_c[user] = mult.project(mult.gamma_c[user] + step * backhaul_excess);
}

/// `a ← [a − κ y]^+` for every component.
pub fn algorithm2_update(action: &mut UserAction, gradient: &UserAction, step: f64) {
    let upd = |a: &mut f64, y: f64| *a = (*a - step * y).max(0.0);
    for (a, &y) in action.p_c.iter_mut().zip(&gradient.p_c) {
        upd(a, y);
    }
    for (a, &y) in action.p_p.iter_mut().zip(&gradient.p_p) {
        upd(a, y);
    }
    upd(&mut action.r_c, gradient.r_c);
    upd(&mut action.r_p, gradient.r_p);
}

/// Persistent per-bucket actions for the online controller. A bucket is a
/// (queue cell, CSIT bucket) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionTable {
    csit_buckets: usize,
    queue_cells: usize,
    entries: Vec<Vec<Option<UserAction>>>,
    visits: Vec<Vec<u64>>,
}

impl ActionTable {
    pub fn new(users: usize, queue_cells: usize, csit_buckets: usize) -> Self {
        let n = queue_cells * csit_buckets;
        Self {
            csit_buckets,
            queue_cells,
            entries: vec![vec![None; n]; users],
            visits: vec![vec![0; n]; users],
        }
    }

    pub fn bucket(&self, queue_cell: usize, csit_bucket: usize) -> usize {
        queue_cell.min(self.queue_cells - 1) * self.csit_buckets
            + csit_bucket.min(self.csit_buckets - 1)
    }

    pub fn buckets(&self) -> usize {
        self.queue_cells * self.csit_buckets
    }

    pub fn csit_buckets(&self) -> usize {
        self.csit_buckets
    }

    pub fn get(&self, user: usize, bucket: usize) -> Option<&UserAction> {
        self.entries[user][bucket].as_ref()
    }

    /// Entry for `bucket`, initialised by `init` on first use.
    pub fn entry(
        &mut self,
        user: usize,
        bucket: usize,
        init: impl FnOnce() -> UserAction,
    ) -> &mut UserAction {
        self.entries[user][bucket].get_or_insert_with(init)
    }

    pub fn visits(&self, user: usize, bucket: usize) -> u64 {
        self.visits[user][bucket]
    }

    /// Counts a visit and returns the new count.
    pub fn visit(&mut self, user: usize, bucket: usize) -> u64 {
        self.visits[user][bucket] += 1;
        self.visits[user][bucket]
    }

    pub fn users(&self) -> usize {
        self.entries.len()
    }

    pub(crate) fn raw(&self) -> (&[Vec<Option<UserAction>>], &[Vec<u64>]) {
        (&self.entries, &self.visits)
    }

    pub(crate) fn from_raw(
        queue_cells: usize,
        csit_buckets: usize,
        entries: Vec<Vec<Option<UserAction>>>,
        visits: Vec<Vec<u64>>,
    ) -> Self {
        Self {
            csit_buckets,
            queue_cells,
            entries,
            visits,
        }
    }

    pub fn queue_cells(&self) -> usize {
        self.queue_cells
    }
}

/// Quantises the CSIT-estimated stream gains of one user into one of
/// `levels²` buckets (log2 of the summed common and private gains, each
/// clipped to `[-4, 4)`).
pub fn csit_bucket(sigma_c: &[f64], sigma_p: &[f64], levels: usize) -> usize {
    let q = |s: &[f64]| -> usize {
        if s.is_empty() || levels <= 1 {
            return 0;
        }
        let g: f64 = s.iter().sum::<f64>().max(1e-12).log2();
        let x = ((g + 4.0) / 8.0 * levels as f64).floor();
        x.clamp(0.0, (levels - 1) as f64) as usize
    };
    q(sigma_c) * levels + q(sigma_p)
}

/// Everything the online controller learns.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnerState {
    pub tables: PotentialTable,
    pub multipliers: Multipliers,
    pub actions: ActionTable,
    pub frame: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> QueueGrid {
        QueueGrid::new(5, 4.0).unwrap()
    }

    #[test]
    fn grid_location() {
        let g = grid();
        assert_eq!(g.locate(0.0), (0, 0.0));
        assert_eq!(g.locate(2.5), (2, 0.5));
        assert_eq!(g.locate(4.0), (3, 1.0));
        assert_eq!(g.locate(-3.0), (0, 0.0));
        assert_eq!(g.locate(9.0), (3, 1.0));
        assert_eq!(g.cell(2.6), 3);
        assert!(QueueGrid::new(1, 1.0).is_err());
    }

    #[test]
    fn interpolation_and_slope() {
        let t = PotentialTable::from_values(grid(), vec![vec![0.0, 1.0, 4.0, 9.0, 16.0]]).unwrap();
        assert_eq!(t.value(0, 2.5), 6.5);
        assert_eq!(t.value(0, -1.0), 0.0);
        assert_eq!(t.value(0, 5.0), 16.0);
        assert_eq!(t.slope(0, 2.5), 5.0);
        assert_eq!(t.slope(0, -0.1), 0.0);
        assert_eq!(t.slope(0, 4.1), 0.0);
    }

    #[test]
    fn single_cell_update() {
        let mut t = PotentialTable::zeros(1, grid());
        let mut m = Multipliers::uniform(1, 0.0, 10.0);
        let obs = FlowObservation {
            prev_post_decision: 2.0,
            queue: 0.0,
            goodput: 0.0,
            cost: 5.0,
            power_excess: 0.0,
            backhaul_excess: 0.0,
        };
        let s = Schedules {
            value: StepSchedule::constant(0.5),
            ..Schedules::default()
        };
        algorithm1_update(&mut t, &mut m, 0, &obs, &s, 1);
        assert_eq!(t.values(0), &[0.0, 0.0, 2.5, 0.0, 0.0]);
    }

    #[test]
    fn off_grid_update_splits_by_weight() {
        let mut t = PotentialTable::zeros(1, grid());
        t.nudge(0, 1.25, 1.0, 4.0);
        assert_eq!(t.values(0), &[0.0, 3.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn multiplier_projection() {
        let mut m = Multipliers {
            gamma_p: vec![1.0],
            gamma_c: vec![0.05],
            bound: 10.0,
        };
        update_multipliers(&mut m, 0, 2.0, -1.0, 0.1);
        assert!((m.gamma_p[0] - 1.2).abs() < 1e-15);
        assert_eq!(m.gamma_c[0], 0.0);
        update_multipliers(&mut m, 0, 1e6, 0.0, 0.1);
        assert_eq!(m.gamma_p[0], 10.0);
        assert!(m.is_valid());
    }

    #[test]
    fn action_projection() {
        let mut a = UserAction {
            p_c: vec![],
            p_p: vec![2.0],
            r_c: 1.0,
            r_p: 1.0,
        };
        let y = UserAction {
            p_c: vec![],
            p_p: vec![30.0],
            r_c: -1.0,
            r_p: 0.0,
        };
        algorithm2_update(&mut a, &y, 0.1);
        assert_eq!(a.p_p[0], 0.0);
        assert!((a.r_c - 1.1).abs() < 1e-15);
        assert_eq!(a.r_p, 1.0);
    }

    #[test]
    fn default_schedules_are_two_timescale() {
        let s = Schedules::default();
        assert!(s.two_timescale());
        assert!((s.value.kappa(0) - 1.0).abs() < 1e-15);
        assert!((s.multiplier.kappa(500) - 0.25).abs() < 1e-15);
        let ratio = |t| s.multiplier.kappa(t) / s.value.kappa(t);
        assert!(ratio(1_000_000_000) < ratio(1_000_000) && ratio(1_000_000) < ratio(1000));
        let swapped = Schedules {
            value: s.multiplier,
            multiplier: s.value,
            ..s
        };
        assert!(!swapped.two_timescale());
    }

    #[test]
    fn flow_cost_counts_every_common_share() {
        let m = Multipliers {
            gamma_p: vec![1.0, 2.0],
            gamma_c: vec![0.5, 0.5],
            bound: 10.0,
        };
        let a = UserAction {
            p_c: vec![1.0],
            p_p: vec![2.0],
            r_c: 3.0,
            r_p: 1.0,
        };
        let alpha = vec![vec![vec![0.25, 0.75]], vec![]];
        let g = flow_cost(0, 7.0, &a, &alpha, &m, 0.1, 5.0, 2.0);
        let expect = 7.0 + (2.0 + 0.1 - 5.0) + (0.25 + 2.0 * 0.75) + 0.5 * (3.0 - 2.0);
        assert!((g - expect).abs() < 1e-12);
    }

    #[test]
    fn csit_buckets_cover_range() {
        assert_eq!(csit_bucket(&[], &[1e-9], 8), 0);
        assert_eq!(csit_bucket(&[1e9], &[1e9], 8), 63);
        assert_eq!(csit_bucket(&[1.0], &[1.0], 8), 4 * 8 + 4);
    }

    #[test]
    fn action_table_initialises_once() {
        let mut t = ActionTable::new(1, 3, 4);
        let b = t.bucket(5, 1);
        assert_eq!(b, 2 * 4 + 1);
        t.entry(0, b, || UserAction::zeros(0, 1)).r_p = 2.0;
        assert_eq!(t.entry(0, b, || UserAction::zeros(0, 1)).r_p, 2.0);
        assert_eq!(t.visit(0, b), 1);
    }

    proptest::proptest! {
        #[test]
        fn isotonic_projection(v in proptest::collection::vec(-50.0..50.0f64, 1..30)) {
            use proptest::prop_assert;
            let mut fit = v.clone();
            isotonic(&mut fit);
            prop_assert!(fit.windows(2).all(|w| w[0] <= w[1] + 1e-12));
            let total = |x: &[f64]| x.iter().sum::<f64>();
            prop_assert!((total(&fit) - total(&v)).abs() < 1e-9);
            let mut again = fit.clone();
            isotonic(&mut again);
            prop_assert!(again.iter().zip(&fit).all(|(a, b)| (a - b).abs() < 1e-12));
            // no monotone candidate is closer: the sorted copy and the constant mean
            let dist = |x: &[f64]| x.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let mut sorted = v.clone();
            sorted.sort_by(f64::total_cmp);
            let mean = vec![total(&v) / v.len() as f64; v.len()];
            prop_assert!(dist(&fit) <= dist(&sorted) + 1e-9);
            prop_assert!(dist(&fit) <= dist(&mean) + 1e-9);
        }
    }
}
