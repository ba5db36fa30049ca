//! Per-stage objective, its logistic smoothing and the partial gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{algorithm2_update, Multipliers, PotentialTable, StepSchedule};
use crate::action::{ControlAction, UserAction};
use crate::channel::{full_rank, ChannelModel, GlobalChannelState};
use crate::linalg::CMat;
use crate::phy::{
    mutual_information, power_consumption, stream_gains, LinkQuality, PrecoderSet, StreamGains,
};

/// `1 / (1 + e^{(x−y)η})`, the smooth stand-in for `1(x <= y)`.
pub fn logistic(x: f64, y: f64, eta: f64) -> f64 {
    let z = (x - y) * eta;
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// `J(u) = −η e^{uη} / (1 + e^{uη})²`, the derivative of the logistic in `x`.
pub fn logistic_slope(u: f64, eta: f64) -> f64 {
    let e = (-(u * eta).abs()).exp();
    -eta * e / ((1.0 + e) * (1.0 + e))
}

/// Large-η stand-in for `J`: `−η/5` within `2/η` of the threshold, else 0.
pub fn ack_slope(near: bool, eta: f64) -> f64 {
    if near {
        -eta / 5.0
    } else {
        0.0
    }
}

/// Smoothed circuit-power indicator `tanh(ηP/2) = 2f^η(0, P) − 1`, which is 0
/// at `P = 0` like the indicator it replaces.
pub fn power_indicator(tx: f64, eta: f64) -> f64 {
    (0.5 * eta * tx).tanh()
}

pub fn power_indicator_slope(tx: f64, eta: f64) -> f64 {
    let s = power_indicator(tx, eta);
    0.5 * eta * (1.0 - s * s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientMode {
    /// Logistic slopes evaluated at the realised capacities.
    #[default]
    Exact,
    /// Only the binary feedback vector is used (box-shaped slope).
    Ack,
}

/// Binary feedback from one MS.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct FeedbackVector {
    pub ack_c: bool,
    pub near_c: bool,
    pub ack_p: bool,
    pub near_p: bool,
}

pub fn build_feedback(
    action: &ControlAction,
    c_c: &[f64],
    c_p: &[f64],
    eta: f64,
) -> Vec<FeedbackVector> {
    let band = 2.0 / eta;
    action
        .users
        .iter()
        .enumerate()
        .map(|(k, u)| FeedbackVector {
            ack_c: u.r_c <= c_c[k],
            near_c: (u.r_c - c_c[k]).abs() <= band,
            ack_p: u.r_p <= c_p[k],
            near_p: (u.r_p - c_p[k]).abs() <= band,
        })
        .collect()
}

/// Potentials at the four possible post-service backlogs and the slopes at
/// the three that depend on the rates.
#[derive(Clone, Copy, Debug)]
struct QueueTerms {
    v0: f64,
    vp: f64,
    vc: f64,
    vb: f64,
    sp: f64,
    sc: f64,
    sb: f64,
}

fn queue_terms(table: &PotentialTable, user: usize, q: f64, r_c: f64, r_p: f64) -> QueueTerms {
    QueueTerms {
        v0: table.value(user, q),
        vp: table.value(user, q - r_p),
        vc: table.value(user, q - r_c),
        vb: table.value(user, q - r_c - r_p),
        sp: table.slope(user, q - r_p),
        sc: table.slope(user, q - r_c),
        sb: table.slope(user, q - r_c - r_p),
    }
}

impl QueueTerms {
    /// Expected potential when the common/private groups succeed with
    /// probabilities (or smoothed indicators) `fc`, `fp`.
    fn mix(&self, fc: f64, fp: f64) -> f64 {
        (1.0 - fc) * (1.0 - fp) * self.v0
            + (1.0 - fc) * fp * self.vp
            + fc * (1.0 - fp) * self.vc
            + fc * fp * self.vb
    }
}

fn price_terms(
    action: &ControlAction,
    alpha: &[Vec<Vec<f64>>],
    mult: &Multipliers,
    p_cct: f64,
    indicator: impl Fn(f64) -> f64,
) -> f64 {
    power_consumption(action, alpha, 0.0)
        .iter()
        .enumerate()
        .map(|(k, bs)| {
            mult.gamma_p[k] * (bs.tx + p_cct * indicator(bs.tx))
                + mult.gamma_c[k] * action.users[k].r_c
        })
        .sum()
}

/// Per-stage objective for one realised channel, with hard indicators.
#[allow(clippy::too_many_arguments)]
pub fn stage_cost(
    queues: &[f64],
    action: &ControlAction,
    tables: &PotentialTable,
    mult: &Multipliers,
    alpha: &[Vec<Vec<f64>>],
    p_cct: f64,
    lq: &LinkQuality,
) -> f64 {
    let (cc, cp) = mutual_information(lq, action, 1.0);
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    let flows: f64 = action
        .users
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let t = queue_terms(tables, k, queues[k], u.r_c, u.r_p);
            t.mix(ind(u.r_c <= cc[k]), ind(u.r_p <= cp[k]))
        })
        .sum();
    price_terms(action, alpha, mult, p_cct, |tx| ind(tx > 0.0)) + flows
}

/// Per-stage objective for one realised channel with every indicator
/// replaced by its logistic smoothing.
#[allow(clippy::too_many_arguments)]
pub fn smoothed_stage_cost(
    queues: &[f64],
    action: &ControlAction,
    tables: &PotentialTable,
    mult: &Multipliers,
    alpha: &[Vec<Vec<f64>>],
    p_cct: f64,
    eta: f64,
    lq: &LinkQuality,
) -> f64 {
    let (cc, cp) = mutual_information(lq, action, 1.0);
    let flows: f64 = action
        .users
        .iter()
        .enumerate()
        .map(|(k, u)| smoothed_flow_cost(tables, k, queues[k], u.r_c, u.r_p, cc[k], cp[k], eta))
        .sum();
    price_terms(action, alpha, mult, p_cct, |tx| power_indicator(tx, eta)) + flows
}

/// The queue part of the smoothed per-flow cost.
#[allow(clippy::too_many_arguments)]
pub fn smoothed_flow_cost(
    table: &PotentialTable,
    user: usize,
    q: f64,
    r_c: f64,
    r_p: f64,
    c_c: f64,
    c_p: f64,
    eta: f64,
) -> f64 {
    queue_terms(table, user, q, r_c, r_p).mix(logistic(r_c, c_c, eta), logistic(r_p, c_p, eta))
}

/// BS `k`'s local view of its realised link after the frame.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct UserObservation {
    pub capacity_c: f64,
    pub capacity_p: f64,
    /// `∂C_c/∂P^i_c` for each common stream.
    pub capacity_slope_c: Vec<f64>,
    pub capacity_slope_p: Vec<f64>,
    pub feedback: FeedbackVector,
}

/// `σ / ((1 + I + σP) ln 2)` for each stream.
pub fn capacity_slopes(sigma: &[f64], interference: &[f64], power: &[f64]) -> Vec<f64> {
    sigma
        .iter()
        .zip(interference)
        .zip(power)
        .map(|((&s, &i), &p)| s / ((1.0 + i + s * p) * std::f64::consts::LN_2))
        .collect()
}

/// Realised observation of every user from one link-quality sample.
pub fn observe(lq: &LinkQuality, action: &ControlAction, eta: f64) -> Vec<UserObservation> {
    let (cc, cp) = mutual_information(lq, action, 1.0);
    let fb = build_feedback(action, &cc, &cp, eta);
    action
        .users
        .iter()
        .enumerate()
        .map(|(k, u)| UserObservation {
            capacity_c: cc[k],
            capacity_p: cp[k],
            capacity_slope_c: capacity_slopes(&lq.sigma_c[k], &lq.i_c[k], &u.p_c),
            capacity_slope_p: capacity_slopes(&lq.sigma_p[k], &lq.i_p[k], &u.p_p),
            feedback: fb[k],
        })
        .collect()
}

/// Shared inputs of the per-stage objective and its gradients.
#[derive(Clone, Copy, Debug)]
pub struct StageParams<'a> {
    pub tables: &'a PotentialTable,
    pub multipliers: &'a Multipliers,
    pub alpha: &'a [Vec<Vec<f64>>],
    pub p_cct: f64,
    pub eta: f64,
    pub mode: GradientMode,
}

/// Stochastic partial gradient `y(a_k)` for every component of user `k`'s
/// action. It is the exact derivative of BS `k`'s local share of the
/// smoothed objective; the coupling through other users' costs is left out.
pub fn partial_gradient(
    user: usize,
    queue: f64,
    action: &ControlAction,
    obs: &UserObservation,
    params: &StageParams,
) -> UserAction {
    let u = &action.users[user];
    let mult = params.multipliers;
    let eta = params.eta;
    let (fc, fp, jc, jp) = match params.mode {
        GradientMode::Exact => (
            logistic(u.r_c, obs.capacity_c, eta),
            logistic(u.r_p, obs.capacity_p, eta),
            logistic_slope(u.r_c - obs.capacity_c, eta),
            logistic_slope(u.r_p - obs.capacity_p, eta),
        ),
        GradientMode::Ack => {
            let b = |x: bool| if x { 1.0 } else { 0.0 };
            (
                b(obs.feedback.ack_c),
                b(obs.feedback.ack_p),
                ack_slope(obs.feedback.near_c, eta),
                ack_slope(obs.feedback.near_p, eta),
            )
        }
    };
    let t = queue_terms(params.tables, user, queue, u.r_c, u.r_p);
    // ∂g/∂fc and ∂g/∂fp
    let dc = -(1.0 - fp) * t.v0 - fp * t.vp + (1.0 - fp) * t.vc + fp * t.vb;
    let dp = -(1.0 - fc) * t.v0 + (1.0 - fc) * t.vp - fc * t.vc + fc * t.vb;

    // the feedback-only mode cannot see σ and I, so ∂C/∂P is taken as 1
    let ack = params.mode == GradientMode::Ack;
    let tx = power_consumption(action, params.alpha, 0.0)[user].tx;
    let circuit = 1.0 + params.p_cct * power_indicator_slope(tx, eta);

    let p_c = obs
        .capacity_slope_c
        .iter()
        .enumerate()
        .map(|(i, &dcap)| {
            let shares = &params.alpha[user][i];
            let remote: f64 = shares
                .iter()
                .enumerate()
                .filter(|&(bs, _)| bs != user)
                .map(|(bs, &a)| mult.gamma_p[bs] * a)
                .sum();
            let dcap = if ack { 1.0 } else { dcap };
            mult.gamma_p[user] * shares[user] * circuit + remote - dc * jc * dcap
        })
        .collect();
    let p_p = obs
        .capacity_slope_p
        .iter()
        .map(|&dcap| mult.gamma_p[user] * circuit - dp * jp * if ack { 1.0 } else { dcap })
        .collect();
    let r_c = mult.gamma_c[user] + dc * jc - fc * (1.0 - fp) * t.sc - fc * fp * t.sb;
    let r_p = dp * jp - (1.0 - fc) * fp * t.sp - fc * fp * t.sb;
    UserAction { p_c, p_p, r_c, r_p }
}

/// A realisation of the true channel consistent with the CSIT, with its
/// posterior probability.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub probability: f64,
    pub gains: StreamGains,
}

/// Largest posterior support that is enumerated exactly.
pub const MAX_EXACT_OUTCOMES: usize = 10_000;
pub const POSTERIOR_SAMPLES: usize = 1_000;
const POSTERIOR_SEED: u64 = 0x00c0_ffee;

/// Posterior over the true channel given the CSIT in `state`, pushed through
/// the CSIT-designed precoders. Enumerated exactly when the support has at
/// most [`MAX_EXACT_OUTCOMES`] points, otherwise sampled
/// ([`POSTERIOR_SAMPLES`] draws from a fixed seed). Rank-deficient channels
/// are dropped and the rest renormalised.
pub fn csit_outcomes(
    model: &ChannelModel,
    state: &GlobalChannelState,
    precoders: &PrecoderSet,
) -> Vec<Outcome> {
    // posterior of every independent "site" (matrix entry or whole link)
    let mut sites: Vec<Vec<(f64, usize)>> = Vec::new();
    match model {
        ChannelModel::Scalar { alphabet, kernel } => {
            for h in &state.csit {
                for z in h.iter() {
                    let obs = alphabet
                        .index_of(*z)
                        .expect("CSIT entry belongs to the alphabet");
                    sites.push(support(&kernel.posterior(alphabet.probabilities(), obs)));
                }
            }
        }
        ChannelModel::Matrix { alphabet, kernel } => {
            for h in &state.csit {
                let obs = alphabet
                    .index_of(h)
                    .expect("CSIT state belongs to the alphabet");
                sites.push(support(&kernel.posterior(alphabet.probabilities(), obs)));
            }
        }
    }
    let build = |choice: &[usize]| -> Vec<CMat> {
        match model {
            ChannelModel::Scalar { alphabet, .. } => {
                let (n, m) = state.csit[0].shape();
                let mut it = choice.iter();
                state
                    .csit
                    .iter()
                    .map(|_| {
                        let vals: Vec<_> = (0..n * m)
                            .map(|_| alphabet.values()[*it.next().unwrap()])
                            .collect();
                        CMat::from_fn(n, m, |r, c| vals[r * m + c])
                    })
                    .collect()
            }
            ChannelModel::Matrix { alphabet, .. } => choice
                .iter()
                .map(|&i| alphabet.states()[i].clone())
                .collect(),
        }
    };
    let mut outcomes = Vec::new();
    let mut push = |choice: &[usize], weight: f64| {
        let h = build(choice);
        if !h.iter().all(full_rank) {
            return;
        }
        if let Ok(set) = precoders.with_receivers(&h) {
            outcomes.push(Outcome {
                probability: weight,
                gains: stream_gains(&set, &h),
            });
        }
    };
    let size = sites
        .iter()
        .try_fold(1usize, |acc, s| acc.checked_mul(s.len()));
    match size {
        Some(n) if n <= MAX_EXACT_OUTCOMES => {
            let mut idx = vec![0usize; sites.len()];
            loop {
                let choice: Vec<usize> = idx.iter().zip(&sites).map(|(&i, s)| s[i].1).collect();
                let w: f64 = idx.iter().zip(&sites).map(|(&i, s)| s[i].0).product();
                push(&choice, w);
                let mut pos = 0;
                while pos < idx.len() {
                    idx[pos] += 1;
                    if idx[pos] < sites[pos].len() {
                        break;
                    }
                    idx[pos] = 0;
                    pos += 1;
                }
                if pos == idx.len() {
                    break;
                }
            }
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(POSTERIOR_SEED);
            for _ in 0..POSTERIOR_SAMPLES {
                let choice: Vec<usize> = sites.iter().map(|s| draw(s, &mut rng)).collect();
                push(&choice, 1.0);
            }
        }
    }
    let z: f64 = outcomes.iter().map(|o| o.probability).sum();
    for o in &mut outcomes {
        o.probability /= z;
    }
    outcomes
}

fn support(p: &[f64]) -> Vec<(f64, usize)> {
    p.iter()
        .enumerate()
        .filter(|&(_, &x)| x > 0.0)
        .map(|(i, &x)| (x, i))
        .collect()
}

fn draw<R: Rng>(s: &[(f64, usize)], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(p, i) in s {
        acc += p;
        if u < acc {
            return i;
        }
    }
    s.last().expect("nonempty support").1
}

/// Per-stage objective `h` averaged over CSIT outcomes.
pub fn per_stage_objective(
    queues: &[f64],
    action: &ControlAction,
    params: &StageParams,
    outcomes: &[Outcome],
) -> f64 {
    outcomes
        .iter()
        .map(|o| {
            let lq = o.gains.link_quality(action);
            o.probability
                * stage_cost(
                    queues,
                    action,
                    params.tables,
                    params.multipliers,
                    params.alpha,
                    params.p_cct,
                    &lq,
                )
        })
        .sum()
}

/// Smoothed per-stage objective averaged over CSIT outcomes.
pub fn smoothed_objective(
    queues: &[f64],
    action: &ControlAction,
    params: &StageParams,
    outcomes: &[Outcome],
) -> f64 {
    outcomes
        .iter()
        .map(|o| {
            let lq = o.gains.link_quality(action);
            o.probability
                * smoothed_stage_cost(
                    queues,
                    action,
                    params.tables,
                    params.multipliers,
                    params.alpha,
                    params.p_cct,
                    params.eta,
                    &lq,
                )
        })
        .sum()
}

/// Partial gradients of every user averaged over CSIT outcomes.
pub fn expected_partial_gradient(
    queues: &[f64],
    action: &ControlAction,
    params: &StageParams,
    outcomes: &[Outcome],
) -> ControlAction {
    let mut acc = ControlAction {
        users: action
            .users
            .iter()
            .map(|u| UserAction::zeros(u.p_c.len(), u.p_p.len()))
            .collect(),
    };
    for o in outcomes {
        let lq = o.gains.link_quality(action);
        let obs = observe(&lq, action, params.eta);
        for (k, total) in acc.users.iter_mut().enumerate() {
            let y = partial_gradient(k, queues[k], action, &obs[k], params);
            for (a, b) in total.p_c.iter_mut().zip(&y.p_c) {
                *a += o.probability * b;
            }
            for (a, b) in total.p_p.iter_mut().zip(&y.p_p) {
                *a += o.probability * b;
            }
            total.r_c += o.probability * y.r_c;
            total.r_p += o.probability * y.r_p;
        }
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerLoopOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub step: StepSchedule,
    /// Keep the rates at their starting values and only move powers.
    pub freeze_rates: bool,
}

impl Default for InnerLoopOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            tolerance: 1e-6,
            step: StepSchedule {
                scale: 0.05,
                offset: 1000.0,
                exponent: 1.0,
            },
            freeze_rates: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct InnerLoopResult {
    pub action: ControlAction,
    pub objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn projected_norm(action: &ControlAction, grad: &ControlAction, freeze_rates: bool) -> f64 {
    let mut s = 0.0;
    let mut add = |a: f64, y: f64| {
        // at the boundary only a descent direction into the feasible set counts
        let g = if a <= 0.0 { y.min(0.0) } else { y };
        s += g * g;
    };
    for (u, y) in action.users.iter().zip(&grad.users) {
        for (&a, &g) in u.p_c.iter().zip(&y.p_c).chain(u.p_p.iter().zip(&y.p_p)) {
            add(a, g);
        }
        if !freeze_rates {
            add(u.r_c, y.r_c);
            add(u.r_p, y.r_p);
        }
    }
    s.sqrt()
}

/// Iterates the projected partial-gradient update on the expected smoothed
/// objective until the projected gradient norm drops below the tolerance or
/// the iteration cap is hit; returns the best iterate seen.
pub fn solve_per_stage(
    queues: &[f64],
    start: &ControlAction,
    params: &StageParams,
    outcomes: &[Outcome],
    opts: &InnerLoopOptions,
) -> InnerLoopResult {
    let mut action = start.clone();
    let mut best = (f64::INFINITY, action.clone(), f64::INFINITY);
    for it in 0..opts.max_iterations {
        let grad = expected_partial_gradient(queues, &action, params, outcomes);
        let norm = projected_norm(&action, &grad, opts.freeze_rates);
        let obj = smoothed_objective(queues, &action, params, outcomes);
        if obj < best.0 || (obj == best.0 && norm < best.2) {
            best = (obj, action.clone(), norm);
        }
        if norm <= opts.tolerance {
            return InnerLoopResult {
                objective: obj,
                gradient_norm: norm,
                action,
                iterations: it,
                converged: true,
            };
        }
        let step = opts.step.kappa(it as u64);
        for (a, y) in action.users.iter_mut().zip(&grad.users) {
            let mut y = y.clone();
            if opts.freeze_rates {
                y.r_c = 0.0;
                y.r_p = 0.0;
            }
            algorithm2_update(a, &y, step);
        }
    }
    InnerLoopResult {
        objective: best.0,
        gradient_norm: best.2,
        action: best.1,
        iterations: opts.max_iterations,
        converged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::QueueGrid;

    #[test]
    fn logistic_values() {
        for eta in [0.1, 1.0, 50.0, 1e4] {
            assert_eq!(logistic(3.0, 3.0, eta), 0.5);
        }
        assert!((logistic(0.0, 1.0, 50.0) - 1.0).abs() <= 1e-20);
        assert!(logistic(1.0, 0.0, 50.0) < 1e-21);
        assert!(logistic(1e6, 0.0, 50.0) == 0.0 && logistic(-1e6, 0.0, 50.0) == 1.0);
    }

    #[test]
    fn logistic_slope_matches_difference_quotient() {
        let eta = 50.0;
        for u in [-0.1, -0.02, 0.0, 0.013, 0.08] {
            let h = 1e-7;
            let fd = (logistic(u + h, 0.0, eta) - logistic(u - h, 0.0, eta)) / (2.0 * h);
            assert!((fd - logistic_slope(u, eta)).abs() <= 1e-6 * eta, "u={u}");
        }
        assert_eq!(logistic_slope(0.0, 50.0), -12.5);
    }

    #[test]
    fn power_indicator_shape() {
        assert_eq!(power_indicator(0.0, 50.0), 0.0);
        assert!(power_indicator(1.0, 50.0) > 1.0 - 1e-15);
        let h = 1e-7;
        let fd = (power_indicator(0.01 + h, 50.0) - power_indicator(0.01 - h, 50.0)) / (2.0 * h);
        assert!((fd - power_indicator_slope(0.01, 50.0)).abs() < 1e-5);
    }

    #[test]
    fn feedback_examples() {
        let act = |rc: f64, rp: f64| ControlAction {
            users: vec![UserAction {
                p_c: vec![],
                p_p: vec![],
                r_c: rc,
                r_p: rp,
            }],
        };
        let f = build_feedback(&act(2.0, 5.0), &[3.0], &[1.0], 50.0)[0];
        assert!(f.ack_c && !f.near_c && !f.ack_p && !f.near_p);
        let f = build_feedback(&act(3.0, 0.0), &[3.0], &[0.0], 50.0)[0];
        assert!(f.ack_c && f.near_c);
    }

    fn flat_params<'a>(
        t: &'a PotentialTable,
        m: &'a Multipliers,
        alpha: &'a [Vec<Vec<f64>>],
    ) -> StageParams<'a> {
        StageParams {
            tables: t,
            multipliers: m,
            alpha,
            p_cct: 0.1,
            eta: 50.0,
            mode: GradientMode::Exact,
        }
    }

    #[test]
    fn idle_action_costs_nothing_with_flat_potentials() {
        let t = PotentialTable::zeros(2, QueueGrid::new(5, 10.0).unwrap());
        let m = Multipliers::uniform(2, 1.0, 10.0);
        let alpha = vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]];
        let a = ControlAction::zeros(&[1, 1], &[1, 1]);
        let lq = LinkQuality {
            sigma_c: vec![vec![1.0]; 2],
            sigma_p: vec![vec![1.0]; 2],
            i_c: vec![vec![0.0]; 2],
            i_p: vec![vec![0.0]; 2],
        };
        let p = flat_params(&t, &m, &alpha);
        assert_eq!(stage_cost(&[3.0, 3.0], &a, &t, &m, &alpha, 0.1, &lq), 0.0);
        let obs = observe(&lq, &a, 50.0);
        let y = partial_gradient(
            0,
            0.0,
            &a,
            &obs[0],
            &StageParams {
                multipliers: &Multipliers::uniform(2, 0.0, 1.0),
                ..p
            },
        );
        assert!(y.p_c.iter().chain(&y.p_p).all(|&v| v == 0.0) && y.r_c == 0.0 && y.r_p == 0.0);
    }

    #[test]
    fn backhaul_price_drives_idle_rate() {
        let t = PotentialTable::zeros(1, QueueGrid::new(5, 10.0).unwrap());
        let m = Multipliers {
            gamma_p: vec![0.0],
            gamma_c: vec![0.3],
            bound: 10.0,
        };
        let alpha = vec![vec![vec![1.0]]];
        let a = ControlAction {
            users: vec![UserAction {
                p_c: vec![1.0],
                p_p: vec![],
                r_c: 5.0,
                r_p: 0.0,
            }],
        };
        let obs = UserObservation {
            capacity_c: 1.0,
            capacity_p: 0.0,
            capacity_slope_c: vec![0.5],
            capacity_slope_p: vec![],
            feedback: FeedbackVector::default(),
        };
        let p = StageParams {
            mode: GradientMode::Ack,
            ..flat_params(&t, &m, &alpha)
        };
        let y = partial_gradient(0, 4.0, &a, &obs, &p);
        assert_eq!(y.r_c, 0.3);
    }
}
