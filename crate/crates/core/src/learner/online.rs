//! The online controller. Each BS starts from the channel-aware action
//! (waterfilling on its CSIT, rates at the estimated mutual information) and
//! learns a per-bucket correction to it from the realised feedback, on top
//! of the potential and multiplier recursions.
//!
//! The correction is updated with the partial gradients of the smoothed
//! per-stage objective, pushed through the parametrisation by the chain rule
//! (a rate moves with the powers because it is tied to the estimated
//! capacity). Steps are clipped so that a rate never jumps across the
//! logistic transition band in one update.

use serde::{Deserialize, Serialize};

use super::{
    algorithm1_update, csit_bucket, flow_cost, observe, partial_gradient, ActionTable,
    FlowObservation, GradientMode, LearnerState, Multipliers, PotentialTable, QueueGrid, Schedules,
    StageParams,
};
use crate::action::{ControlAction, UserAction};
use crate::baselines::channel_aware_powers;
use crate::error::{Error, Result};
use crate::phy::{power_consumption, LinkQuality, StreamGains};

/// Tunables of the online controller.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineOptions {
    pub eta: f64,
    pub grid_levels: usize,
    pub gamma_init: f64,
    pub gamma_bound: f64,
    pub gradient: GradientMode,
    /// Queue cells of the correction table, geometrically spaced: cell `j`
    /// below the top one ends at `buffer / 2^j`.
    pub action_cells: usize,
    /// Quantisation levels per gain group for the CSIT part of a bucket.
    pub csit_levels: usize,
    /// Per-stream power cap, as a multiple of the per-BS budget.
    pub peak_power: f64,
    /// Keep every potential nondecreasing in the backlog.
    pub monotone_potentials: bool,
    /// Frames during which only the potentials and multipliers learn and the
    /// corrections stay at zero; the potentials need some shape before their
    /// slopes can steer the action.
    pub action_warmup: u64,
    /// Largest change of a rate correction per update (rate units).
    pub rate_step: f64,
    /// Largest change of a power correction per update, as a fraction of the
    /// per-BS budget.
    pub power_step: f64,
    pub schedules: Schedules,
}

impl Default for OnlineOptions {
    fn default() -> Self {
        Self {
            eta: 50.0,
            grid_levels: 109,
            gamma_init: 0.01,
            gamma_bound: 1e3,
            gradient: GradientMode::Exact,
            action_cells: 8,
            csit_levels: 2,
            peak_power: 2.0,
            monotone_potentials: true,
            action_warmup: 5_000,
            rate_step: 0.02,
            power_step: 0.02,
            schedules: Schedules::default(),
        }
    }
}

/// Static problem data the controller needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlProblem {
    pub d_c: Vec<usize>,
    pub d_p: Vec<usize>,
    pub power_budget: Vec<f64>,
    /// Per-frame backhaul budget (units).
    pub backhaul_budget: Vec<f64>,
    pub p_cct: f64,
    pub beta: Vec<f64>,
    /// Buffer size (units).
    pub buffer: f64,
}

/// Where an executed component sits relative to its box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
enum Bound {
    #[default]
    Free,
    Lower,
    Upper,
    /// Forced, not chosen: no step moves it.
    Pinned,
}

impl Bound {
    /// Whether a descent step with gradient `g` would move off the bound.
    fn admits(self, g: f64) -> bool {
        match self {
            Bound::Free => true,
            Bound::Lower => g < 0.0,
            Bound::Upper => g > 0.0,
            Bound::Pinned => false,
        }
    }
}

/// What `act` decided for one user, kept for the learning step.
#[derive(Clone, Debug, Default)]
struct Decision {
    bucket: usize,
    p_c: Vec<Bound>,
    p_p: Vec<Bound>,
    r_c: Bound,
    r_p: Bound,
    /// `∂Ĉ/∂P` of every stream under the CSIT-estimated gains.
    slope_c: Vec<f64>,
    slope_p: Vec<f64>,
    idle: bool,
}

#[derive(Clone, Debug)]
pub struct OnlineController {
    pub problem: ControlProblem,
    pub options: OnlineOptions,
    /// Potentials, multipliers, and the per-bucket action corrections.
    pub state: LearnerState,
    /// Post-decision backlog each flow was left with by the previous frame.
    prev_post: Vec<f64>,
    decisions: Vec<Decision>,
}

/// What happened in one frame, as seen after the fact.
#[derive(Clone, Debug)]
pub struct FrameOutcome<'a> {
    pub queues: &'a [f64],
    pub action: &'a ControlAction,
    /// Per-BS power shares of every common stream, `alpha[k][i][bs]`.
    pub alpha: &'a [Vec<Vec<f64>>],
    pub link: &'a LinkQuality,
    pub goodput: &'a [f64],
    /// Delay cost `f(Q_k)` of each user.
    pub queue_cost: &'a [f64],
}

fn clamp(x: f64, lo: f64, hi: f64) -> (f64, Bound) {
    if x <= lo {
        (lo, Bound::Lower)
    } else if x >= hi {
        (hi, Bound::Upper)
    } else {
        (x, Bound::Free)
    }
}

fn estimated_rate(sigma: &[f64], p: &[f64]) -> (f64, Vec<f64>) {
    let rate = sigma
        .iter()
        .zip(p)
        .map(|(&s, &p)| (1.0 + s * p).log2())
        .sum();
    let slopes = sigma
        .iter()
        .zip(p)
        .map(|(&s, &p)| s / ((1.0 + s * p) * std::f64::consts::LN_2))
        .collect();
    (rate, slopes)
}

impl OnlineController {
    pub fn new(problem: ControlProblem, options: OnlineOptions) -> Result<Self> {
        if !(options.eta > 0.0
            && options.peak_power > 0.0
            && options.rate_step > 0.0
            && options.power_step > 0.0)
        {
            return Err(Error::InvalidArgument(
                "eta, peak power and step limits must be positive".into(),
            ));
        }
        if options.csit_levels == 0 || options.action_cells == 0 {
            return Err(Error::InvalidArgument(
                "csit_levels and action_cells must be at least 1".into(),
            ));
        }
        let k = problem.d_c.len();
        let grid = QueueGrid::new(options.grid_levels, problem.buffer)?;
        let state = LearnerState {
            tables: PotentialTable::zeros(k, grid),
            multipliers: Multipliers::uniform(k, options.gamma_init, options.gamma_bound),
            actions: ActionTable::new(
                k,
                options.action_cells,
                options.csit_levels * options.csit_levels,
            ),
            frame: 0,
        };
        Ok(Self {
            problem,
            options,
            state,
            prev_post: vec![0.0; k],
            decisions: vec![Decision::default(); k],
        })
    }

    /// Resumes from a saved learner state.
    pub fn with_state(
        problem: ControlProblem,
        options: OnlineOptions,
        state: LearnerState,
    ) -> Result<Self> {
        let mut c = Self::new(problem, options)?;
        if state.tables.users() != c.state.tables.users()
            || state.actions.users() != c.state.actions.users()
        {
            return Err(Error::InvalidArgument(
                "snapshot does not match the problem size".into(),
            ));
        }
        c.state = state;
        Ok(c)
    }

    fn users(&self) -> usize {
        self.problem.d_c.len()
    }

    fn action_cell(&self, q: f64) -> usize {
        let top = self.options.action_cells - 1;
        if q <= 0.0 {
            return 0;
        }
        let halvings = (self.problem.buffer / q).log2().floor().max(0.0) as usize;
        top.saturating_sub(halvings)
    }

    fn peak(&self, user: usize) -> f64 {
        self.options.peak_power * self.problem.power_budget[user]
    }

    /// Every user's action for the observed backlogs and CSIT-estimated
    /// gains: the channel-aware powers (waterfilling of the budget left after
    /// circuit power, scaled to every BS's budget) plus the bucket's power correction, rates at the
    /// estimated capacity plus the bucket's rate correction, capped at the
    /// backlog (private group first).
    pub fn act(
        &mut self,
        queues: &[f64],
        estimated: &StreamGains,
        alpha: &[Vec<Vec<f64>>],
    ) -> ControlAction {
        let tx_budget: Vec<f64> = self
            .problem
            .power_budget
            .iter()
            .map(|&p| (p - self.problem.p_cct).max(0.0))
            .collect();
        let bases = channel_aware_powers(estimated, alpha, &tx_budget);
        let mut users = Vec::with_capacity(self.users());
        for (k, &q) in queues.iter().enumerate() {
            let (dc, dp) = (self.problem.d_c[k], self.problem.d_p[k]);
            if q <= 0.0 {
                // nothing to send, nothing to learn
                self.decisions[k] = Decision {
                    bucket: 0,
                    p_c: vec![Bound::Pinned; dc],
                    p_p: vec![Bound::Pinned; dp],
                    r_c: Bound::Pinned,
                    r_p: Bound::Pinned,
                    slope_c: vec![0.0; dc],
                    slope_p: vec![0.0; dp],
                    idle: true,
                };
                users.push(UserAction::zeros(dc, dp));
                continue;
            }
            let cell = self.action_cell(q);
            let csit = csit_bucket(
                &estimated.sigma_c[k],
                &estimated.sigma_p[k],
                self.options.csit_levels,
            );
            let bucket = self.state.actions.bucket(cell, csit);
            let correction = self
                .state
                .actions
                .entry(k, bucket, || UserAction::zeros(dc, dp))
                .clone();
            let base: Vec<f64> = bases[k].p_c.iter().chain(&bases[k].p_p).copied().collect();
            let peak = self.peak(k);

            let (mut p_c, mut b_c) = (Vec::with_capacity(dc), Vec::with_capacity(dc));
            let (mut p_p, mut b_p) = (Vec::with_capacity(dp), Vec::with_capacity(dp));
            for (i, &b) in base.iter().enumerate() {
                if i < dc {
                    let (p, bound) = clamp(b + correction.p_c[i], 0.0, peak);
                    p_c.push(p);
                    b_c.push(bound);
                } else {
                    let (p, bound) = clamp(b + correction.p_p[i - dc], 0.0, peak);
                    p_p.push(p);
                    b_p.push(bound);
                }
            }
            let (cap_c, slope_c) = estimated_rate(&estimated.sigma_c[k], &p_c);
            let (cap_p, slope_p) = estimated_rate(&estimated.sigma_p[k], &p_p);
            // a group without power carries nothing, whatever the correction
            let rate = |cap: f64, theta: f64, hi: f64| {
                if cap > 0.0 {
                    clamp(cap + theta, 0.0, hi)
                } else {
                    (0.0, Bound::Pinned)
                }
            };
            let (r_p, r_p_bound) = rate(cap_p, correction.r_p, q);
            let (r_c, r_c_bound) = rate(
                cap_c,
                correction.r_c,
                (q - r_p).max(0.0).min(self.problem.backhaul_budget[k]),
            );
            self.decisions[k] = Decision {
                bucket,
                p_c: b_c,
                p_p: b_p,
                r_c: r_c_bound,
                r_p: r_p_bound,
                slope_c,
                slope_p,
                idle: false,
            };
            users.push(UserAction { p_c, p_p, r_c, r_p });
        }
        ControlAction { users }
    }

    /// Learns from the frame: correction step at the executed action,
    /// potential update, multiplier update.
    pub fn learn(&mut self, frame: &FrameOutcome) {
        let t = self.state.frame;
        let k = self.users();
        let obs = observe(frame.link, frame.action, self.options.eta);
        let power = power_consumption(frame.action, frame.alpha, self.problem.p_cct);

        let gradients: Vec<UserAction> = {
            let params = StageParams {
                tables: &self.state.tables,
                multipliers: &self.state.multipliers,
                alpha: frame.alpha,
                p_cct: self.problem.p_cct,
                eta: self.options.eta,
                mode: self.options.gradient,
            };
            (0..k)
                .map(|user| {
                    partial_gradient(user, frame.queues[user], frame.action, &obs[user], &params)
                })
                .collect()
        };
        if t >= self.options.action_warmup {
            for (user, y) in gradients.iter().enumerate() {
                self.step_correction(user, y);
            }
        }

        for (user, (a, drawn)) in frame.action.users.iter().zip(&power).enumerate() {
            let cost = flow_cost(
                user,
                self.problem.beta[user] * frame.queue_cost[user],
                a,
                frame.alpha,
                &self.state.multipliers,
                self.problem.p_cct,
                self.problem.power_budget[user],
                self.problem.backhaul_budget[user],
            );
            let fo = FlowObservation {
                prev_post_decision: self.prev_post[user],
                queue: frame.queues[user],
                goodput: frame.goodput[user],
                cost,
                power_excess: drawn.total - self.problem.power_budget[user],
                backhaul_excess: a.r_c - self.problem.backhaul_budget[user],
            };
            algorithm1_update(
                &mut self.state.tables,
                &mut self.state.multipliers,
                user,
                &fo,
                &self.options.schedules,
                t,
            );
            if self.options.monotone_potentials {
                self.state.tables.make_monotone(user);
            }
            self.prev_post[user] = (frame.queues[user] - frame.goodput[user]).max(0.0);
        }
        self.state.frame += 1;
    }

    /// Projected, clipped descent step on the correction of the bucket the
    /// user acted from.
    fn step_correction(&mut self, user: usize, y: &UserAction) {
        let d = &self.decisions[user];
        if d.idle {
            return;
        }
        let n = self.state.actions.visit(user, d.bucket);
        let kappa = self.options.schedules.action.kappa(n - 1);
        let rate_lim = self.options.rate_step;
        let power_lim = self.options.power_step * self.problem.power_budget[user];
        let peak = self.peak(user);
        let buffer = self.problem.buffer;

        // a free rate follows its powers through the estimated capacity
        let g_rc = if d.r_c == Bound::Free { y.r_c } else { 0.0 };
        let g_rp = if d.r_p == Bound::Free { y.r_p } else { 0.0 };
        let power_grad = |yp: &[f64], slopes: &[f64], g_rate: f64| -> Vec<f64> {
            yp.iter()
                .zip(slopes)
                .map(|(&g, &s)| g + g_rate * s)
                .collect()
        };
        let gc = power_grad(&y.p_c, &d.slope_c, g_rc);
        let gp = power_grad(&y.p_p, &d.slope_p, g_rp);
        let (bc, bp, brc, brp) = (d.p_c.clone(), d.p_p.clone(), d.r_c, d.r_p);
        let (dc, dp) = (self.problem.d_c[user], self.problem.d_p[user]);

        let entry = self
            .state
            .actions
            .entry(user, d.bucket, || UserAction::zeros(dc, dp));
        let update = |x: &mut f64, g: f64, bound: Bound, lim: f64, range: f64| {
            if bound.admits(g) {
                *x = (*x - (kappa * g).clamp(-lim, lim)).clamp(-range, range);
            }
        };
        for ((x, &g), &b) in entry.p_c.iter_mut().zip(&gc).zip(&bc) {
            update(x, g, b, power_lim, peak);
        }
        for ((x, &g), &b) in entry.p_p.iter_mut().zip(&gp).zip(&bp) {
            update(x, g, b, power_lim, peak);
        }
        update(&mut entry.r_c, y.r_c, brc, rate_lim, buffer);
        update(&mut entry.r_p, y.r_p, brp, rate_lim, buffer);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::{Leak, StreamGains};

    fn problem() -> ControlProblem {
        ControlProblem {
            d_c: vec![1, 1],
            d_p: vec![1, 1],
            power_budget: vec![6.0, 6.0],
            backhaul_budget: vec![3.0, 3.0],
            p_cct: 0.1,
            beta: vec![1.0, 1.0],
            buffer: 100.0,
        }
    }

    fn gains() -> StreamGains {
        StreamGains {
            sigma_c: vec![vec![1.0], vec![0.5]],
            sigma_p: vec![vec![2.0], vec![0.8]],
            leaks_c: vec![vec![Vec::<Leak>::new()]; 2],
            leaks_p: vec![vec![Vec::<Leak>::new()]; 2],
        }
    }

    fn local() -> Vec<Vec<Vec<f64>>> {
        vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]]
    }

    #[test]
    fn empty_queue_means_idle() {
        let mut c = OnlineController::new(problem(), OnlineOptions::default()).unwrap();
        let a = c.act(&[0.0, 0.0], &gains(), &local());
        assert_eq!(a, ControlAction::zeros(&[1, 1], &[1, 1]));
    }

    #[test]
    fn untrained_action_is_channel_aware() {
        let mut c = OnlineController::new(problem(), OnlineOptions::default()).unwrap();
        let a = c.act(&[50.0, 50.0], &gains(), &local());
        let u = &a.users[0];
        assert!((u.p_c[0] + u.p_p[0] - 5.9).abs() < 1e-12);
        assert!((u.r_c - (1.0 + u.p_c[0]).log2()).abs() < 1e-12);
        assert!((u.r_p - (1.0 + 2.0 * u.p_p[0]).log2()).abs() < 1e-12);
    }

    #[test]
    fn learning_keeps_everything_projected() {
        let mut c = OnlineController::new(problem(), OnlineOptions::default()).unwrap();
        let g = gains();
        let shared = vec![vec![vec![0.5, 0.5]]; 2];
        for t in 0..200 {
            let q = [(t % 40) as f64, (t % 17) as f64 * 3.0];
            let a = c.act(&q, &g, &shared);
            assert!(a.is_nonnegative());
            assert!(a
                .users
                .iter()
                .zip(&q)
                .all(|(u, &q)| u.r_c + u.r_p <= q + 1e-12));
            let lq = g.link_quality(&a);
            let (cc, cp) = crate::phy::mutual_information(&lq, &a, 1.0);
            let u = crate::phy::goodput(&a, &cc, &cp);
            c.learn(&FrameOutcome {
                queues: &q,
                action: &a,
                alpha: &shared,
                link: &lq,
                goodput: &u,
                queue_cost: &q,
            });
            assert!(c.state.multipliers.is_valid());
        }
        for user in 0..2 {
            for b in 0..c.state.actions.buckets() {
                if let Some(a) = c.state.actions.get(user, b) {
                    assert!(a.p_c.iter().chain(&a.p_p).all(|&p| p.abs() <= 24.0));
                    assert!(a.r_c.abs() <= 100.0 && a.r_p.abs() <= 100.0);
                }
            }
        }
    }
}
