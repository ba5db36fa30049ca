//! Exact solvers for tiny two-user instances: relative value iteration on the
//! post-decision Bellman equation, the per-flow fixed point, dual ascent over
//! the multipliers, and exhaustive enumeration of deterministic policies.

use rand::Rng;

use crate::error::{Error, Result};
use crate::learner::Multipliers;

const USERS: usize = 2;

/// One user's discrete action: stream powers and integer rates (packets).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowAction {
    pub p_c: f64,
    pub p_p: f64,
    pub r_c: usize,
    pub r_p: usize,
}

impl FlowAction {
    pub const IDLE: FlowAction = FlowAction {
        p_c: 0.0,
        p_p: 0.0,
        r_c: 0,
        r_p: 0,
    };
}

/// Two-user model small enough to enumerate. Queues hold `0..levels`
/// packets; the channel is one of a few global states observed through a
/// noisy kernel; each user picks from its own action list.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyInstance {
    pub levels: usize,
    pub channel_prior: Vec<f64>,
    /// `kernel[s][ŝ] = Pr(ŝ | s)`.
    pub kernel: Vec<Vec<f64>>,
    /// `gain_c[s][k]`, `gain_p[s][k]`: effective stream gains per state.
    pub gain_c: Vec<[f64; USERS]>,
    pub gain_p: Vec<[f64; USERS]>,
    /// `leak[s][ŝ]`: residual interference gain when precoding for `ŝ`
    /// meets the channel `s` (zero on the diagonal).
    pub leak: Vec<Vec<f64>>,
    pub actions: [Vec<FlowAction>; USERS],
    /// `alpha[k][bs]`: share of user `k`'s common power sent from BS `bs`.
    pub alpha: [[f64; USERS]; USERS],
    /// Arrival mass points `(packets, probability)`, i.i.d. per user.
    pub arrivals: Vec<(usize, f64)>,
    pub beta: [f64; USERS],
    pub p_cct: f64,
    pub power_budget: [f64; USERS],
    pub backhaul_budget: [f64; USERS],
}

/// Maximum number of states × joint actions the oracle accepts.
pub const MAX_ENUMERATION: usize = 100_000;

impl TinyInstance {
    /// Perfect CSIT and no circuit power: the regime where the system
    /// potential separates into per-flow potentials.
    pub fn decomposition() -> Self {
        let low = FlowAction {
            p_c: 0.0,
            p_p: 1.5,
            r_c: 0,
            r_p: 1,
        };
        let both = FlowAction {
            p_c: 2.0,
            p_p: 2.0,
            r_c: 1,
            r_p: 1,
        };
        let burst = FlowAction {
            p_c: 0.0,
            p_p: 6.0,
            r_c: 0,
            r_p: 2,
        };
        Self {
            levels: 6,
            channel_prior: vec![0.5, 0.3, 0.2],
            kernel: identity(3),
            gain_c: vec![[1.2, 0.8], [0.5, 1.5], [2.0, 0.3]],
            gain_p: vec![[1.0, 0.6], [0.4, 1.1], [1.6, 0.9]],
            leak: vec![vec![0.0; 3]; 3],
            actions: [
                vec![FlowAction::IDLE, low, both, burst],
                vec![FlowAction::IDLE, low],
            ],
            alpha: [[0.6, 0.4], [0.3, 0.7]],
            arrivals: vec![(0, 0.5), (1, 0.3), (2, 0.2)],
            beta: [1.0, 1.5],
            p_cct: 0.0,
            power_budget: [2.0, 2.0],
            backhaul_budget: [0.3, 0.3],
        }
    }

    /// Imperfect CSIT and circuit power on a two-level queue, small enough
    /// that every deterministic policy can be enumerated. The budgets are
    /// calibrated so that the policy that is greedy at
    /// [`Self::DUALITY_GAMMA`] meets them with equality.
    pub fn duality() -> Self {
        let mut inst = Self::duality_uncalibrated();
        let gamma = Self::duality_gamma();
        let values = relative_value_iteration(&inst, &gamma).expect("unichain by construction");
        let policy = greedy_policy(&inst, &gamma, &values.values);
        let stats = evaluate_policy(&inst, &policy);
        inst.power_budget = stats.power;
        inst.backhaul_budget = stats.backhaul;
        inst
    }

    pub const DUALITY_GAMMA: ([f64; USERS], [f64; USERS]) = ([0.35, 0.2], [0.15, 0.25]);

    pub fn duality_gamma() -> Multipliers {
        Multipliers {
            gamma_p: Self::DUALITY_GAMMA.0.to_vec(),
            gamma_c: Self::DUALITY_GAMMA.1.to_vec(),
            bound: 1e3,
        }
    }

    fn duality_uncalibrated() -> Self {
        let private = FlowAction {
            p_c: 0.0,
            p_p: 1.0,
            r_c: 0,
            r_p: 1,
        };
        let shared = FlowAction {
            p_c: 1.5,
            p_p: 0.0,
            r_c: 1,
            r_p: 0,
        };
        Self {
            levels: 2,
            channel_prior: vec![0.6, 0.4],
            kernel: vec![vec![0.85, 0.15], vec![0.25, 0.75]],
            gain_c: vec![[1.8, 1.4], [0.7, 2.2]],
            gain_p: vec![[1.3, 0.6], [0.5, 1.7]],
            leak: vec![vec![0.0, 0.4], vec![0.3, 0.0]],
            actions: [
                vec![FlowAction::IDLE, private],
                vec![FlowAction::IDLE, shared],
            ],
            alpha: [[0.7, 0.3], [0.45, 0.55]],
            arrivals: vec![(0, 0.55), (1, 0.45)],
            beta: [1.0, 1.0],
            p_cct: 0.1,
            power_budget: [10.0, 10.0],
            backhaul_budget: [10.0, 10.0],
        }
    }

    /// No queue cost and free resources: every potential is zero.
    pub fn zero_cost() -> Self {
        let mut inst = Self::decomposition();
        inst.beta = [0.0, 0.0];
        inst.power_budget = [0.0, 0.0];
        inst.backhaul_budget = [0.0, 0.0];
        inst
    }

    /// A single joint action (transmit whenever possible).
    pub fn single_action() -> Self {
        let mut inst = Self::decomposition();
        inst.actions = [vec![inst.actions[0][1]], vec![inst.actions[1][1]]];
        inst
    }

    pub fn channel_states(&self) -> usize {
        self.channel_prior.len()
    }

    pub fn queue_states(&self) -> usize {
        self.levels * self.levels
    }

    pub fn joint_actions(&self) -> usize {
        self.actions[0].len() * self.actions[1].len()
    }

    pub fn joint_action(&self, a: usize) -> [FlowAction; USERS] {
        let n1 = self.actions[1].len();
        [self.actions[0][a / n1], self.actions[1][a % n1]]
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.channel_states();
        let ok = self.levels >= 2
            && s >= 1
            && self.kernel.len() == s
            && self
                .kernel
                .iter()
                .all(|r| r.len() == s && (r.iter().sum::<f64>() - 1.0).abs() < 1e-12)
            && self.gain_c.len() == s
            && self.gain_p.len() == s
            && self.leak.len() == s
            && (self.channel_prior.iter().sum::<f64>() - 1.0).abs() < 1e-12
            && (self.arrivals.iter().map(|a| a.1).sum::<f64>() - 1.0).abs() < 1e-12
            && self.actions.iter().all(|a| !a.is_empty());
        if !ok {
            return Err(Error::InvalidArgument("malformed tiny instance".into()));
        }
        if self.queue_states() * s * self.joint_actions() > MAX_ENUMERATION {
            return Err(Error::InvalidArgument(
                "tiny instance too large to enumerate".into(),
            ));
        }
        Ok(())
    }

    /// Largest probability of a mismatched CSIT observation.
    pub fn epsilon(&self) -> f64 {
        let post = self.posterior();
        let mut eps: f64 = 0.0;
        for (sh, row) in post.iter().enumerate() {
            for (s, &p) in row.iter().enumerate() {
                if s != sh {
                    eps = eps.max(p);
                }
            }
        }
        eps
    }

    /// Probability of each observed CSIT state.
    fn observed_prior(&self) -> Vec<f64> {
        let s = self.channel_states();
        (0..s)
            .map(|sh| {
                (0..s)
                    .map(|x| self.channel_prior[x] * self.kernel[x][sh])
                    .sum()
            })
            .collect()
    }

    /// `post[ŝ][s] = Pr(s | ŝ)`.
    fn posterior(&self) -> Vec<Vec<f64>> {
        let s = self.channel_states();
        let obs = self.observed_prior();
        (0..s)
            .map(|sh| {
                (0..s)
                    .map(|x| {
                        if obs[sh] > 0.0 {
                            self.channel_prior[x] * self.kernel[x][sh] / obs[sh]
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Packets delivered to each user under channel `s`, CSIT `ŝ`.
    pub fn goodput(&self, s: usize, s_hat: usize, a: &[FlowAction; USERS]) -> [usize; USERS] {
        let mut out = [0; USERS];
        for k in 0..USERS {
            let other = a[1 - k];
            let interference = self.leak[s][s_hat] * (other.p_c + other.p_p);
            let cap = |g: f64, p: f64| (1.0 + g * p / (1.0 + interference)).log2();
            let c_c = cap(self.gain_c[s][k], a[k].p_c);
            let c_p = cap(self.gain_p[s][k], a[k].p_p);
            out[k] = if a[k].r_c as f64 <= c_c { a[k].r_c } else { 0 }
                + if a[k].r_p as f64 <= c_p { a[k].r_p } else { 0 };
        }
        out
    }

    /// Interference-free goodput of one user (the per-flow model).
    fn flow_goodput(&self, s: usize, k: usize, a: &FlowAction) -> usize {
        let c_c = (1.0 + self.gain_c[s][k] * a.p_c).log2();
        let c_p = (1.0 + self.gain_p[s][k] * a.p_p).log2();
        (if a.r_c as f64 <= c_c { a.r_c } else { 0 })
            + (if a.r_p as f64 <= c_p { a.r_p } else { 0 })
    }

    /// Transmit power of every BS.
    pub fn transmit_power(&self, a: &[FlowAction; USERS]) -> [f64; USERS] {
        let mut tx = [0.0; USERS];
        for (bs, t) in tx.iter_mut().enumerate() {
            *t = a[bs].p_p
                + (0..USERS)
                    .map(|k| self.alpha[k][bs] * a[k].p_c)
                    .sum::<f64>();
        }
        tx
    }

    fn total_power(&self, a: &[FlowAction; USERS]) -> [f64; USERS] {
        self.transmit_power(a)
            .map(|tx| tx + if tx > 0.0 { self.p_cct } else { 0.0 })
    }

    /// Lagrangian per-stage cost of a joint action at pre-decision backlogs.
    fn joint_cost(&self, q: [usize; USERS], a: &[FlowAction; USERS], gamma: &Multipliers) -> f64 {
        let power = self.total_power(a);
        (0..USERS)
            .map(|k| {
                self.beta[k] * q[k] as f64
                    + gamma.gamma_p[k] * (power[k] - self.power_budget[k])
                    + gamma.gamma_c[k] * (a[k].r_c as f64 - self.backhaul_budget[k])
            })
            .sum()
    }

    /// Per-flow cost `g_k` of user `k`'s own action.
    pub fn flow_cost(&self, k: usize, q: usize, a: &FlowAction, gamma: &Multipliers) -> f64 {
        let circuit = if a.p_p > 0.0 { self.p_cct } else { 0.0 };
        self.beta[k] * q as f64
            + gamma.gamma_p[k] * (a.p_p + circuit - self.power_budget[k])
            + (0..USERS)
                .map(|bs| gamma.gamma_p[bs] * self.alpha[k][bs] * a.p_c)
                .sum::<f64>()
            + gamma.gamma_c[k] * (a.r_c as f64 - self.backhaul_budget[k])
    }

    fn pre_decision(&self, post: usize, arrival: usize) -> usize {
        (post + arrival).min(self.levels - 1)
    }

    fn index(&self, q: [usize; USERS]) -> usize {
        q[0] * self.levels + q[1]
    }

    fn unindex(&self, i: usize) -> [usize; USERS] {
        [i / self.levels, i % self.levels]
    }

    /// Draws `(s, ŝ, arrivals)` for one frame.
    pub fn sample_frame<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize, [usize; USERS]) {
        let s = pick(&self.channel_prior, rng);
        let sh = pick(&self.kernel[s], rng);
        let arrivals_p: Vec<f64> = self.arrivals.iter().map(|a| a.1).collect();
        let a = [
            self.arrivals[pick(&arrivals_p, rng)].0,
            self.arrivals[pick(&arrivals_p, rng)].0,
        ];
        (s, sh, a)
    }

    /// Post-decision backlog of user `k` after serving `goodput` packets.
    pub fn serve(&self, q: usize, goodput: usize) -> usize {
        q.saturating_sub(goodput)
    }

    pub fn arrive(&self, post: usize, arrival: usize) -> usize {
        self.pre_decision(post, arrival)
    }

    /// Expected per-flow goodput is interference free, so it only needs the
    /// true channel state.
    pub fn flow_serve(&self, s: usize, k: usize, q: usize, a: &FlowAction) -> usize {
        self.serve(q, self.flow_goodput(s, k, a))
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn pick<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Decision rule: observed pre-decision state `(Q₁, Q₂, ŝ)` → joint action.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Policy {
    pub actions: Vec<usize>,
}

impl TinyInstance {
    fn observation_index(&self, q: [usize; USERS], s_hat: usize) -> usize {
        self.index(q) * self.channel_states() + s_hat
    }

    pub fn observations(&self) -> usize {
        self.queue_states() * self.channel_states()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RviResult {
    /// Optimal average Lagrangian cost per stage.
    pub theta: f64,
    /// Potential of each post-decision state `q₁·levels + q₂`, with `V(0) = 0`.
    pub values: Vec<f64>,
    pub residual: f64,
    pub sweeps: usize,
    pub converged: bool,
}

const RVI_TOLERANCE: f64 = 1e-10;
const RVI_MAX_SWEEPS: usize = 100_000;
const DAMPING: f64 = 0.5;

/// Expected cost-to-go of a joint action at an observed state, and the best
/// action for it.
fn q_value(
    inst: &TinyInstance,
    gamma: &Multipliers,
    v: &[f64],
    q: [usize; USERS],
    s_hat: usize,
    post: &[Vec<f64>],
    a: usize,
) -> f64 {
    let act = inst.joint_action(a);
    let mut future = 0.0;
    for (s, &p) in post[s_hat].iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let u = inst.goodput(s, s_hat, &act);
        let next = [inst.serve(q[0], u[0]), inst.serve(q[1], u[1])];
        future += p * v[inst.index(next)];
    }
    inst.joint_cost(q, &act, gamma) + future
}

fn best_action(
    inst: &TinyInstance,
    gamma: &Multipliers,
    v: &[f64],
    q: [usize; USERS],
    s_hat: usize,
    post: &[Vec<f64>],
) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for a in 0..inst.joint_actions() {
        let val = q_value(inst, gamma, v, q, s_hat, post, a);
        if val < best.1 - 1e-13 {
            best = (a, val);
        }
    }
    best
}

/// Right-hand side of the post-decision Bellman equation.
pub fn bellman_operator(inst: &TinyInstance, gamma: &Multipliers, v: &[f64]) -> Vec<f64> {
    let post = inst.posterior();
    let obs = inst.observed_prior();
    // value of every pre-decision backlog pair, averaged over the CSIT
    let pre: Vec<f64> = (0..inst.queue_states())
        .map(|i| {
            let q = inst.unindex(i);
            (0..inst.channel_states())
                .filter(|&sh| obs[sh] > 0.0)
                .map(|sh| obs[sh] * best_action(inst, gamma, v, q, sh, &post).1)
                .sum()
        })
        .collect();
    (0..inst.queue_states())
        .map(|i| {
            let qt = inst.unindex(i);
            let mut acc = 0.0;
            for &(a0, p0) in &inst.arrivals {
                for &(a1, p1) in &inst.arrivals {
                    let q = [inst.pre_decision(qt[0], a0), inst.pre_decision(qt[1], a1)];
                    acc += p0 * p1 * pre[inst.index(q)];
                }
            }
            acc
        })
        .collect()
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// State 0 must be reachable from every post-decision state when every
/// action is allowed; otherwise the average cost can depend on the start.
pub fn check_unichain(inst: &TinyInstance) -> Result<()> {
    inst.validate()?;
    let n = inst.queue_states();
    // reverse reachability to state 0 over the union of all transitions
    let mut reach = vec![false; n];
    reach[0] = true;
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..n {
            if reach[i] {
                continue;
            }
            let qt = inst.unindex(i);
            'search: for &(a0, _) in inst.arrivals.iter().filter(|a| a.1 > 0.0) {
                for &(a1, _) in inst.arrivals.iter().filter(|a| a.1 > 0.0) {
                    let q = [inst.pre_decision(qt[0], a0), inst.pre_decision(qt[1], a1)];
                    for s in 0..inst.channel_states() {
                        for sh in 0..inst.channel_states() {
                            if inst.channel_prior[s] * inst.kernel[s][sh] == 0.0 {
                                continue;
                            }
                            for a in 0..inst.joint_actions() {
                                let u = inst.goodput(s, sh, &inst.joint_action(a));
                                let next =
                                    inst.index([inst.serve(q[0], u[0]), inst.serve(q[1], u[1])]);
                                if reach[next] {
                                    reach[i] = true;
                                    changed = true;
                                    break 'search;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(bad) = reach.iter().position(|&r| !r) {
        return Err(Error::NotUnichain(format!(
            "empty queues unreachable from backlog {:?}",
            inst.unindex(bad)
        )));
    }
    Ok(())
}

/// Damped relative value iteration with `V(0) = 0`.
pub fn relative_value_iteration(inst: &TinyInstance, gamma: &Multipliers) -> Result<RviResult> {
    relative_value_iteration_from(inst, gamma, &vec![0.0; inst.queue_states()])
}

pub fn relative_value_iteration_from(
    inst: &TinyInstance,
    gamma: &Multipliers,
    init: &[f64],
) -> Result<RviResult> {
    check_unichain(inst)?;
    let mut v: Vec<f64> = init.iter().map(|x| x - init[0]).collect();
    let mut theta = 0.0;
    let mut residual = f64::INFINITY;
    for sweep in 0..RVI_MAX_SWEEPS {
        let tv = bellman_operator(inst, gamma, &v);
        theta = tv[0];
        let next: Vec<f64> = v
            .iter()
            .zip(&tv)
            .map(|(x, t)| (1.0 - DAMPING) * x + DAMPING * (t - theta))
            .collect();
        let change = sup_diff(&next, &v);
        v = next;
        if change <= RVI_TOLERANCE {
            let tv = bellman_operator(inst, gamma, &v);
            theta = tv[0];
            residual = v
                .iter()
                .zip(&tv)
                .map(|(x, t)| (x + theta - t).abs())
                .fold(0.0, f64::max);
            return Ok(RviResult {
                theta,
                values: v,
                residual,
                sweeps: sweep + 1,
                converged: true,
            });
        }
        residual = change;
    }
    Ok(RviResult {
        theta,
        values: v,
        residual,
        sweeps: RVI_MAX_SWEEPS,
        converged: false,
    })
}

/// Greedy decision rule with respect to the potentials `v`.
pub fn greedy_policy(inst: &TinyInstance, gamma: &Multipliers, v: &[f64]) -> Policy {
    let post = inst.posterior();
    let mut actions = vec![0; inst.observations()];
    for i in 0..inst.queue_states() {
        let q = inst.unindex(i);
        for sh in 0..inst.channel_states() {
            actions[inst.observation_index(q, sh)] = best_action(inst, gamma, v, q, sh, &post).0;
        }
    }
    Policy { actions }
}

/// Long-run averages of a stationary policy started from empty queues.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyStats {
    /// Weighted queue cost `Σ β_k Q_k` per stage.
    pub cost: f64,
    /// Average total power (transmit plus circuit) per BS.
    pub power: [f64; USERS],
    pub backhaul: [f64; USERS],
}

impl PolicyStats {
    pub fn lagrangian(&self, inst: &TinyInstance, gamma: &Multipliers) -> f64 {
        self.cost
            + (0..USERS)
                .map(|k| {
                    gamma.gamma_p[k] * (self.power[k] - inst.power_budget[k])
                        + gamma.gamma_c[k] * (self.backhaul[k] - inst.backhaul_budget[k])
                })
                .sum::<f64>()
    }

    pub fn feasible(&self, inst: &TinyInstance, tol: f64) -> bool {
        (0..USERS).all(|k| {
            self.power[k] <= inst.power_budget[k] + tol
                && self.backhaul[k] <= inst.backhaul_budget[k] + tol
        })
    }
}

/// Transition matrix over post-decision states and the expected per-stage
/// (cost, power, backhaul) of each post-decision state under `policy`.
fn policy_chain(inst: &TinyInstance, policy: &Policy) -> (Vec<Vec<f64>>, Vec<[f64; 5]>) {
    let n = inst.queue_states();
    let mut p = vec![vec![0.0; n]; n];
    let mut r = vec![[0.0; 5]; n];
    for i in 0..n {
        let qt = inst.unindex(i);
        for &(a0, p0) in &inst.arrivals {
            for &(a1, p1) in &inst.arrivals {
                let q = [inst.pre_decision(qt[0], a0), inst.pre_decision(qt[1], a1)];
                for s in 0..inst.channel_states() {
                    for sh in 0..inst.channel_states() {
                        let w = p0 * p1 * inst.channel_prior[s] * inst.kernel[s][sh];
                        if w == 0.0 {
                            continue;
                        }
                        let act = inst.joint_action(policy.actions[inst.observation_index(q, sh)]);
                        let u = inst.goodput(s, sh, &act);
                        let next = inst.index([inst.serve(q[0], u[0]), inst.serve(q[1], u[1])]);
                        p[i][next] += w;
                        let power = inst.total_power(&act);
                        let reward = [
                            inst.beta[0] * q[0] as f64 + inst.beta[1] * q[1] as f64,
                            power[0],
                            power[1],
                            act[0].r_c as f64,
                            act[1].r_c as f64,
                        ];
                        for (acc, x) in r[i].iter_mut().zip(reward) {
                            *acc += w * x;
                        }
                    }
                }
            }
        }
    }
    (p, r)
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let x = a[i][k];
            if x != 0.0 {
                for j in 0..n {
                    c[i][j] += x * b[k][j];
                }
            }
        }
    }
    c
}

/// Limiting distribution from state 0, via repeated squaring of the lazy
/// chain `(I + P)/2` (aperiodic, same stationary behaviour).
fn limiting_distribution(p: &[Vec<f64>]) -> Vec<f64> {
    let n = p.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| 0.5 * p[i][j] + if i == j { 0.5 } else { 0.0 })
                .collect()
        })
        .collect();
    for _ in 0..64 {
        let mut next = mat_mul(&m, &m);
        // squaring amplifies rounding in the row sums
        for row in &mut next {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= total);
        }
        let change = sup_diff(&next[0], &m[0]);
        m = next;
        if change <= 1e-15 {
            break;
        }
    }
    m.swap_remove(0)
}

pub fn evaluate_policy(inst: &TinyInstance, policy: &Policy) -> PolicyStats {
    let (p, r) = policy_chain(inst, policy);
    let pi = limiting_distribution(&p);
    let mut avg = [0.0; 5];
    for (w, rew) in pi.iter().zip(&r) {
        for (a, x) in avg.iter_mut().zip(rew) {
            *a += w * x;
        }
    }
    PolicyStats {
        cost: avg[0],
        power: [avg[1], avg[2]],
        backhaul: [avg[3], avg[4]],
    }
}

/// Per-flow Bellman operator `T_k(γ, V_k)` over user `k`'s post-decision
/// backlogs, with interference-free per-flow dynamics.
pub fn per_flow_operator(
    inst: &TinyInstance,
    user: usize,
    gamma: &Multipliers,
    v: &[f64],
) -> Vec<f64> {
    let post = inst.posterior();
    let obs = inst.observed_prior();
    let pre: Vec<f64> = (0..inst.levels)
        .map(|q| {
            (0..inst.channel_states())
                .filter(|&sh| obs[sh] > 0.0)
                .map(|sh| obs[sh] * per_flow_best(inst, user, gamma, v, q, sh, &post).1)
                .sum()
        })
        .collect();
    (0..inst.levels)
        .map(|qt| {
            inst.arrivals
                .iter()
                .map(|&(a, p)| p * pre[inst.pre_decision(qt, a)])
                .sum()
        })
        .collect()
}

fn per_flow_best(
    inst: &TinyInstance,
    user: usize,
    gamma: &Multipliers,
    v: &[f64],
    q: usize,
    s_hat: usize,
    post: &[Vec<f64>],
) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, a) in inst.actions[user].iter().enumerate() {
        let future: f64 = post[s_hat]
            .iter()
            .enumerate()
            .filter(|&(_, &p)| p > 0.0)
            .map(|(s, &p)| p * v[inst.flow_serve(s, user, q, a)])
            .sum();
        let val = inst.flow_cost(user, q, a, gamma) + future;
        if val < best.1 - 1e-13 {
            best = (i, val);
        }
    }
    best
}

/// Index into `inst.actions[user]` minimising the per-flow cost-to-go.
pub fn per_flow_greedy(
    inst: &TinyInstance,
    user: usize,
    gamma: &Multipliers,
    v: &[f64],
    q: usize,
    s_hat: usize,
) -> usize {
    per_flow_best(inst, user, gamma, v, q, s_hat, &inst.posterior()).0
}

/// `‖V + V(q̃⁰)e − T_k(V)‖_∞` with the empty queue as reference.
pub fn per_flow_residual(inst: &TinyInstance, user: usize, gamma: &Multipliers, v: &[f64]) -> f64 {
    let t = per_flow_operator(inst, user, gamma, v);
    v.iter()
        .zip(&t)
        .map(|(x, tx)| (x + v[0] - tx).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowFixedPoint {
    /// `V_k` satisfying `V_k + V_k(0)e = T_k(V_k)`.
    pub values: Vec<f64>,
    pub residual: f64,
    pub converged: bool,
}

/// Solves the per-flow fixed point by damped relative iteration and shifts
/// the solution so that `V_k(0)` equals the per-flow average cost.
pub fn per_flow_fixed_point(
    inst: &TinyInstance,
    user: usize,
    gamma: &Multipliers,
) -> Result<FlowFixedPoint> {
    inst.validate()?;
    let mut w = vec![0.0; inst.levels];
    let mut converged = false;
    for _ in 0..RVI_MAX_SWEEPS {
        let t = per_flow_operator(inst, user, gamma, &w);
        let next: Vec<f64> = w
            .iter()
            .zip(&t)
            .map(|(x, tx)| (1.0 - DAMPING) * x + DAMPING * (tx - t[0]))
            .collect();
        let change = sup_diff(&next, &w);
        w = next;
        if change <= RVI_TOLERANCE {
            converged = true;
            break;
        }
    }
    let theta = per_flow_operator(inst, user, gamma, &w)[0];
    let values: Vec<f64> = w.iter().map(|x| x + theta).collect();
    let residual = per_flow_residual(inst, user, gamma, &values);
    Ok(FlowFixedPoint {
        values,
        residual,
        converged,
    })
}

/// `sup |(V(q̃) − V(0)) − Σ_k (V_k(q̃_k) − V_k(0))|`.
pub fn decomposition_gap(inst: &TinyInstance, system: &[f64], flows: &[Vec<f64>]) -> f64 {
    (0..inst.queue_states())
        .map(|i| {
            let q = inst.unindex(i);
            let sum: f64 = (0..USERS).map(|k| flows[k][q[k]] - flows[k][0]).sum();
            (system[i] - system[0] - sum).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualSolution {
    pub gamma: Multipliers,
    pub theta: f64,
    pub policy: Policy,
    pub stats: PolicyStats,
    pub iterations: usize,
    pub converged: bool,
}

/// Projected supergradient ascent on the dual function, starting from
/// `start`, with RVI as the inner solver.
pub fn dual_solve(inst: &TinyInstance, start: &Multipliers) -> Result<DualSolution> {
    check_unichain(inst)?;
    let zero = Policy {
        actions: vec![idle_action(inst)?; inst.observations()],
    };
    if !evaluate_policy(inst, &zero).feasible(inst, 1e-12) {
        return Err(Error::Infeasible(
            "even the idle policy violates the budgets".into(),
        ));
    }
    let mut gamma = start.clone();
    let max_iter = 20_000;
    for it in 0..max_iter {
        let rvi = relative_value_iteration(inst, &gamma)?;
        let policy = greedy_policy(inst, &gamma, &rvi.values);
        let stats = evaluate_policy(inst, &policy);
        let step = 0.5 / (1.0 + it as f64 / 20.0);
        let mut moved: f64 = 0.0;
        let mut next = gamma.clone();
        for k in 0..USERS {
            next.gamma_p[k] =
                gamma.project(gamma.gamma_p[k] + step * (stats.power[k] - inst.power_budget[k]));
            next.gamma_c[k] = gamma
                .project(gamma.gamma_c[k] + step * (stats.backhaul[k] - inst.backhaul_budget[k]));
            moved = moved
                .max((next.gamma_p[k] - gamma.gamma_p[k]).abs())
                .max((next.gamma_c[k] - gamma.gamma_c[k]).abs());
        }
        if moved <= 1e-8 {
            return Ok(DualSolution {
                gamma,
                theta: rvi.theta,
                policy,
                stats,
                iterations: it + 1,
                converged: true,
            });
        }
        gamma = next;
    }
    let rvi = relative_value_iteration(inst, &gamma)?;
    let policy = greedy_policy(inst, &gamma, &rvi.values);
    let stats = evaluate_policy(inst, &policy);
    Ok(DualSolution {
        gamma,
        theta: rvi.theta,
        policy,
        stats,
        iterations: max_iter,
        converged: false,
    })
}

fn idle_action(inst: &TinyInstance) -> Result<usize> {
    (0..inst.joint_actions())
        .find(|&a| inst.joint_action(a).iter().all(|f| *f == FlowAction::IDLE))
        .ok_or_else(|| Error::Infeasible("instance has no idle joint action".into()))
}

/// Lowest average queue cost over all deterministic stationary policies that
/// meet the budgets (within `tol`).
pub fn best_constrained_policy(inst: &TinyInstance, tol: f64) -> Result<(Policy, PolicyStats)> {
    inst.validate()?;
    let n_obs = inst.observations();
    let n_act = inst.joint_actions();
    let total = (n_act as f64).powi(n_obs as i32);
    if total > 1e6 {
        return Err(Error::InvalidArgument(format!(
            "{total} policies are too many to enumerate"
        )));
    }
    let mut digits = vec![0usize; n_obs];
    let mut best: Option<(Policy, PolicyStats)> = None;
    loop {
        let policy = Policy {
            actions: digits.clone(),
        };
        let stats = evaluate_policy(inst, &policy);
        if stats.feasible(inst, tol) && best.as_ref().is_none_or(|b| stats.cost < b.1.cost) {
            best = Some((policy, stats));
        }
        let mut pos = 0;
        while pos < n_obs {
            digits[pos] += 1;
            if digits[pos] < n_act {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
        if pos == n_obs {
            break;
        }
    }
    best.ok_or_else(|| Error::Infeasible("no deterministic policy meets the budgets".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gamma(p: [f64; 2], c: [f64; 2]) -> Multipliers {
        Multipliers {
            gamma_p: p.to_vec(),
            gamma_c: c.to_vec(),
            bound: 1e3,
        }
    }

    #[test]
    fn presets_are_valid() {
        for inst in [
            TinyInstance::decomposition(),
            TinyInstance::duality(),
            TinyInstance::single_action(),
        ] {
            inst.validate().unwrap();
            check_unichain(&inst).unwrap();
        }
        assert_eq!(TinyInstance::decomposition().epsilon(), 0.0);
        assert!(TinyInstance::duality().epsilon() > 0.0);
    }

    #[test]
    fn zero_cost_instance() {
        let inst = TinyInstance::zero_cost();
        let r = relative_value_iteration(&inst, &gamma([0.0; 2], [0.0; 2])).unwrap();
        assert!(r.theta.abs() < 1e-12);
        assert!(r.values.iter().all(|v| v.abs() < 1e-12));
        let f = per_flow_fixed_point(&inst, 0, &gamma([0.0; 2], [0.0; 2])).unwrap();
        assert!(f.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn bellman_residual_and_initialisation() {
        let inst = TinyInstance::decomposition();
        let g = gamma([0.3, 0.5], [0.2, 0.1]);
        let a = relative_value_iteration(&inst, &g).unwrap();
        assert!(a.converged && a.residual <= 1e-9, "{}", a.residual);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let init: Vec<f64> = (0..inst.queue_states())
            .map(|_| rng.random_range(-50.0..50.0))
            .collect();
        let b = relative_value_iteration_from(&inst, &g, &init).unwrap();
        assert!((a.theta - b.theta).abs() <= 1e-8);
    }

    #[test]
    fn single_action_average_matches_simulation() {
        let inst = TinyInstance::single_action();
        let g = gamma([0.2, 0.2], [0.1, 0.1]);
        let theta = relative_value_iteration(&inst, &g).unwrap().theta;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let act = inst.joint_action(0);
        let mut post = [0usize; 2];
        let steps = 10_000_000;
        let mut total = 0.0;
        for _ in 0..steps {
            let (s, sh, a) = inst.sample_frame(&mut rng);
            let q = [inst.arrive(post[0], a[0]), inst.arrive(post[1], a[1])];
            total += inst.joint_cost(q, &act, &g);
            let u = inst.goodput(s, sh, &act);
            post = [inst.serve(q[0], u[0]), inst.serve(q[1], u[1])];
        }
        assert!(
            (total / steps as f64 - theta).abs() <= 1e-3 * (1.0 + theta.abs()),
            "{} vs {theta}",
            total / steps as f64
        );
    }

    #[test]
    fn dual_function_is_concave() {
        let inst = TinyInstance::duality();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = |x: &Multipliers| relative_value_iteration(&inst, x).unwrap().theta;
        for _ in 0..20 {
            let mut r = || [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let (a, b) = (gamma(r(), r()), gamma(r(), r()));
            let mid = Multipliers {
                gamma_p: a
                    .gamma_p
                    .iter()
                    .zip(&b.gamma_p)
                    .map(|(x, y)| 0.5 * (x + y))
                    .collect(),
                gamma_c: a
                    .gamma_c
                    .iter()
                    .zip(&b.gamma_c)
                    .map(|(x, y)| 0.5 * (x + y))
                    .collect(),
                bound: 1e3,
            };
            assert!(g(&mid) >= 0.5 * (g(&a) + g(&b)) - 1e-8);
        }
    }

    #[test]
    fn dual_optimum_matches_enumeration() {
        let inst = TinyInstance::duality();
        assert!(inst
            .power_budget
            .iter()
            .chain(&inst.backhaul_budget)
            .all(|b| b.is_finite()));
        let d = dual_solve(&inst, &gamma([0.0; 2], [0.0; 2])).unwrap();
        let (_, best) = best_constrained_policy(&inst, 1e-9).unwrap();
        assert!(d.converged);
        assert!(
            (d.theta - best.cost).abs() < 1e-6,
            "{} vs {}",
            d.theta,
            best.cost
        );
    }

    #[test]
    fn slack_budgets_give_zero_prices() {
        let mut inst = TinyInstance::duality();
        inst.power_budget = [100.0; 2];
        inst.backhaul_budget = [100.0; 2];
        let d = dual_solve(&inst, &gamma([0.0; 2], [0.0; 2])).unwrap();
        assert!(d.converged);
        assert!(d
            .gamma
            .gamma_p
            .iter()
            .chain(&d.gamma.gamma_c)
            .all(|&g| g == 0.0));
    }

    #[test]
    fn circuit_power_breaks_decomposition() {
        let mut inst = TinyInstance::decomposition();
        inst.p_cct = 0.5;
        let g = gamma([0.4, 0.6], [0.2, 0.1]);
        let sys = relative_value_iteration(&inst, &g).unwrap();
        let flows: Vec<Vec<f64>> = (0..2)
            .map(|k| per_flow_fixed_point(&inst, k, &g).unwrap().values)
            .collect();
        // only reported; the gap is expected to be positive
        assert!(decomposition_gap(&inst, &sys.values, &flows).is_finite());
    }

    #[test]
    fn policy_evaluation_of_idle_policy() {
        let inst = TinyInstance::duality();
        let idle = Policy {
            actions: vec![idle_action(&inst).unwrap(); inst.observations()],
        };
        let s = evaluate_policy(&inst, &idle);
        assert_eq!(s.power, [0.0, 0.0]);
        assert_eq!(s.backhaul, [0.0, 0.0]);
        // queues fill up and stay full
        assert!((s.cost - 2.0).abs() < 1e-9);
    }
}
