//! Frame loop, run configuration, metrics and multi-seed comparisons.
//!
//! Frame order: observe backlogs and CSIT → act → realise the channel,
//! capacities and goodput → learn → arrivals → queue update.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::ControlAction;
use crate::baselines::{baseline_streams, uco_direction, BaselineController, BaselineKind};
use crate::channel::{ChannelModel, CsiMode};
use crate::error::{Error, Result};
use crate::learner::{
    write_snapshot, ControlProblem, FrameOutcome, LearnerState, OnlineController, OnlineOptions,
};
use crate::phy::{
    design_precoders_with, goodput, mutual_information, power_consumption, stream_gains,
    validate_streams,
};
use crate::queueing::{sample_arrivals, step_queue, ArrivalModel, DelayCost, DelayCostKind};

/// Control scheme of a run.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// The delay-aware online controller.
    #[default]
    Proposed,
    Coordinative,
    Uco,
    FullCoop,
    ChannelAwarePco,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Proposed,
        Scheme::Coordinative,
        Scheme::Uco,
        Scheme::FullCoop,
        Scheme::ChannelAwarePco,
    ];

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            Scheme::Proposed => None,
            Scheme::Coordinative => Some(BaselineKind::Coordinative),
            Scheme::Uco => Some(BaselineKind::Uco),
            Scheme::FullCoop => Some(BaselineKind::FullCoop),
            Scheme::ChannelAwarePco => Some(BaselineKind::ChannelAwarePco),
        }
    }

    pub fn name(self) -> &'static str {
        match self.baseline() {
            None => "proposed",
            Some(b) => b.name(),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scheme {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhyConfig {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub d_c: Vec<usize>,
    pub d_p: Vec<usize>,
    /// Per-BS average power budget (dB, noise power normalised to 1).
    pub p0_db: f64,
    pub p_cct: f64,
    pub bandwidth_hz: f64,
    pub frame_s: f64,
    /// Per-BS average backhaul budget as a multiple of `W τ log2(1 + P⁰)`.
    pub backhaul_scale: f64,
}

impl Default for PhyConfig {
    fn default() -> Self {
        Self {
            k: 2,
            m: 3,
            n: 2,
            d_c: vec![1, 1],
            d_p: vec![1, 1],
            p0_db: 8.0,
            p_cct: 0.1,
            bandwidth_hz: 10e6,
            frame_s: 5e-3,
            backhaul_scale: 1.1,
        }
    }
}

impl PhyConfig {
    pub fn power_budget(&self) -> f64 {
        10f64.powf(self.p0_db / 10.0)
    }

    /// Bits carried by one rate unit in one frame.
    pub fn bits_per_unit(&self) -> f64 {
        self.bandwidth_hz * self.frame_s
    }

    /// Per-frame backhaul budget in rate units.
    pub fn backhaul_budget(&self) -> f64 {
        self.backhaul_scale * (1.0 + self.power_budget()).log2()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub mode: CsiMode,
    pub alphabet_size: usize,
    pub alphabet_seed: u64,
    pub sigma_e: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            mode: CsiMode::Scalar,
            alphabet_size: 20,
            alphabet_seed: 1,
            sigma_e: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficConfig {
    /// Packet arrival rate of every user (packets/s).
    pub lambda: f64,
    pub mean_packet_bits: f64,
    pub buffer_bits: f64,
    pub delay_cost: DelayCostKind,
    /// Threshold of [`DelayCostKind::Threshold`], in bits.
    pub threshold_bits: f64,
    /// Delay weight of every user.
    pub beta: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            lambda: 6.0,
            mean_packet_bits: 5e6,
            buffer_bits: 54e6,
            delay_cost: DelayCostKind::Linear,
            threshold_bits: 27e6,
            beta: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub scheme: Scheme,
    pub frames: u64,
    pub burn_in: u64,
    pub seed: u64,
    pub log_every: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Proposed,
            frames: 1_000_000,
            burn_in: 200_000,
            seed: 0,
            log_every: 100,
        }
    }
}

/// Everything a run needs. Parsed from TOML with dotted keys such as
/// `phy.M = 3`; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub phy: PhyConfig,
    pub channel: ChannelConfig,
    pub traffic: TrafficConfig,
    pub learner: OnlineOptions,
    pub sim: SimConfig,
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.phy;
        let t = &self.traffic;
        let positive = [
            ("phy.bandwidth_hz", p.bandwidth_hz),
            ("phy.frame_s", p.frame_s),
            ("traffic.mean_packet_bits", t.mean_packet_bits),
            ("traffic.buffer_bits", t.buffer_bits),
            ("learner.eta", self.learner.eta),
            ("learner.peak_power", self.learner.peak_power),
            ("learner.rate_step", self.learner.rate_step),
            ("learner.power_step", self.learner.power_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_error(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("phy.p_cct", p.p_cct),
            ("phy.backhaul_scale", p.backhaul_scale),
            ("traffic.lambda", t.lambda),
            ("traffic.beta", t.beta),
            ("channel.sigma_e", self.channel.sigma_e),
            ("learner.gamma_init", self.learner.gamma_init),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_error(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if !p.p0_db.is_finite() {
            return Err(config_error("phy.p0_db must be finite"));
        }
        if t.delay_cost == DelayCostKind::LinearOverLambda && t.lambda == 0.0 {
            return Err(config_error(
                "traffic.delay_cost = linear_over_lambda needs lambda > 0",
            ));
        }
        if self.sim.log_every == 0 {
            return Err(config_error("sim.log_every must be at least 1"));
        }
        if self.learner.grid_levels < 2
            || self.learner.csit_levels == 0
            || self.learner.action_cells == 0
        {
            return Err(config_error(
                "learner.grid_levels must be >= 2, learner.csit_levels and learner.action_cells >= 1",
            ));
        }
        if p.d_c.len() != p.k || p.d_p.len() != p.k {
            return Err(config_error(format!(
                "phy.d_c and phy.d_p need K = {} entries",
                p.k
            )));
        }
        let alloc = validate_streams(p.k, p.m, p.n, &p.d_c, &p.d_p)
            .map_err(|e| config_error(e.to_string()))?;
        if let Some(kind) = self.sim.scheme.baseline() {
            baseline_streams(kind, &alloc, 0).map_err(|e| config_error(e.to_string()))?;
        }
        Ok(())
    }

    fn delay_cost(&self) -> DelayCost {
        let bpu = self.phy.bits_per_unit();
        DelayCost {
            kind: self.traffic.delay_cost,
            // in rate units per frame, so that Q/λ is the delay in frames
            lambda: self.traffic.lambda * self.phy.frame_s * self.traffic.mean_packet_bits / bpu,
            threshold: self.traffic.threshold_bits / bpu,
        }
    }
}

/// Running mean updated one sample at a time.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningMean {
    pub count: u64,
    pub mean: f64,
}

impl RunningMean {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.mean += (x - self.mean) / self.count as f64;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UserMetrics {
    pub queue_bits: RunningMean,
    pub cost: RunningMean,
    pub power_w: RunningMean,
    pub backhaul_bpf: RunningMean,
}

impl UserMetrics {
    fn push(&mut self, s: &Sample) {
        self.queue_bits.push(s.queue_bits);
        self.cost.push(s.cost);
        self.power_w.push(s.power_w);
        self.backhaul_bpf.push(s.backhaul_bpf);
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Sample {
    queue_bits: f64,
    cost: f64,
    power_w: f64,
    backhaul_bpf: f64,
}

/// One CSV row: window means over the logging interval ending at `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub t: u64,
    pub user: usize,
    pub queue_bits: f64,
    pub cost: f64,
    pub power_w: f64,
    pub backhaul_bpf: f64,
    pub gamma_p: f64,
    pub gamma_c: f64,
}

pub const CSV_HEADER: &str = "t,user,queue_bits,cost,power_w,backhaul_bpf,gamma_p,gamma_c";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsLog {
    pub scheme: Scheme,
    pub frames: u64,
    pub burn_in: u64,
    /// Mean bits arriving per second per user, for Little's law.
    pub arrival_bps: f64,
    pub full: Vec<UserMetrics>,
    pub post_burn_in: Vec<UserMetrics>,
    pub rows: Vec<MetricsRow>,
    window: Vec<UserMetrics>,
}

impl MetricsLog {
    fn new(scheme: Scheme, users: usize, burn_in: u64, arrival_bps: f64) -> Self {
        Self {
            scheme,
            frames: 0,
            burn_in,
            arrival_bps,
            full: vec![UserMetrics::default(); users],
            post_burn_in: vec![UserMetrics::default(); users],
            rows: Vec::new(),
            window: vec![UserMetrics::default(); users],
        }
    }

    pub fn users(&self) -> usize {
        self.full.len()
    }

    fn record(&mut self, samples: &[Sample]) {
        let post = self.frames >= self.burn_in;
        for (u, s) in samples.iter().enumerate() {
            self.full[u].push(s);
            self.window[u].push(s);
            if post {
                self.post_burn_in[u].push(s);
            }
        }
        self.frames += 1;
    }

    fn flush(&mut self, gamma_p: &[f64], gamma_c: &[f64]) {
        for (u, w) in self.window.iter_mut().enumerate() {
            if w.queue_bits.count == 0 {
                continue;
            }
            self.rows.push(MetricsRow {
                t: self.frames,
                user: u,
                queue_bits: w.queue_bits.mean,
                cost: w.cost.mean,
                power_w: w.power_w.mean,
                backhaul_bpf: w.backhaul_bpf.mean,
                gamma_p: gamma_p[u],
                gamma_c: gamma_c[u],
            });
            *w = UserMetrics::default();
        }
    }

    /// Little's-law delay (s) of `user` from the mean backlog.
    pub fn delay_s(&self, user: usize, post_burn_in: bool) -> f64 {
        let m = if post_burn_in {
            &self.post_burn_in
        } else {
            &self.full
        };
        if self.arrival_bps == 0.0 {
            return 0.0;
        }
        m[user].queue_bits.mean / self.arrival_bps
    }

    /// Delay averaged over users, post burn-in when any post-burn-in frames
    /// exist.
    pub fn mean_delay_s(&self) -> f64 {
        let post = self
            .post_burn_in
            .first()
            .is_some_and(|m| m.queue_bits.count > 0);
        (0..self.users())
            .map(|u| self.delay_s(u, post))
            .sum::<f64>()
            / self.users() as f64
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.t, r.user, r.queue_bits, r.cost, r.power_w, r.backhaul_bpf, r.gamma_p, r.gamma_c
            )?;
        }
        if self.frames == 0 {
            return Ok(());
        }
        for (label, metrics) in [
            ("full_horizon", &self.full),
            ("post_burn_in", &self.post_burn_in),
        ] {
            for (u, m) in metrics.iter().enumerate() {
                let post = label == "post_burn_in";
                writeln!(
                    w,
                    "# {label} user={u} frames={} queue_bits={} delay_s={} cost={} power_w={} backhaul_bpf={}",
                    m.queue_bits.count,
                    m.queue_bits.mean,
                    self.delay_s(u, post),
                    m.cost.mean,
                    m.power_w.mean,
                    m.backhaul_bpf.mean
                )?;
            }
        }
        Ok(())
    }
}

/// Result of one run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub log: MetricsLog,
    /// Final learner state of the proposed scheme.
    pub learner: Option<LearnerState>,
}

/// What an observer sees after every frame.
pub struct FrameView<'a> {
    pub t: u64,
    pub queues_units: &'a [f64],
    pub action: &'a ControlAction,
    /// Units delivered to each user this frame.
    pub goodput: &'a [f64],
    pub controller: Option<&'a OnlineController>,
}

enum Controller {
    Online(Box<OnlineController>),
    Baseline(BaselineController),
}

/// Runs the configured scheme.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    run_observed(config, |_| {})
}

/// Runs the configured scheme and calls `observe` after every frame.
pub fn run_observed(config: &RunConfig, observe: impl FnMut(&FrameView)) -> Result<RunOutput> {
    run_inner(config, None, observe)
}

/// Like [`run`], but from frame `from` on the channel and the traffic are
/// drawn from fresh random streams. Everything logged before `from` must be
/// unchanged, since a frame only sees its own and earlier draws.
pub fn run_perturbed(config: &RunConfig, from: u64) -> Result<RunOutput> {
    run_inner(config, Some(from), |_| {})
}

fn run_inner(
    config: &RunConfig,
    perturb_from: Option<u64>,
    mut observe: impl FnMut(&FrameView),
) -> Result<RunOutput> {
    config.validate()?;
    let p = &config.phy;
    let k = p.k;
    let bpu = p.bits_per_unit();
    let model = ChannelModel::shared(
        config.channel.mode,
        config.channel.alphabet_size,
        config.channel.alphabet_seed,
        config.channel.sigma_e,
        p.n,
        p.m,
    )?;
    let pco = validate_streams(k, p.m, p.n, &p.d_c, &p.d_p)?;
    let p0 = p.power_budget();
    let r0 = p.backhaul_budget();
    let buffer = config.traffic.buffer_bits / bpu;
    let arrivals = ArrivalModel::new(
        vec![config.traffic.lambda; k],
        config.traffic.mean_packet_bits,
        p.frame_s,
    )?;
    let cost = config.delay_cost();

    // channel and traffic draw from separate streams of the run seed, so
    // every scheme sees the same realisations
    let mut channel_rng = ChaCha8Rng::seed_from_u64(config.sim.seed);
    channel_rng.set_stream(1);
    let mut traffic_rng = ChaCha8Rng::seed_from_u64(config.sim.seed);
    traffic_rng.set_stream(2);

    let scheme = config.sim.scheme;
    let arrival_bps = config.traffic.lambda * config.traffic.mean_packet_bits;
    let mut log = MetricsLog::new(scheme, k, config.sim.burn_in, arrival_bps);
    let mut controller: Option<Controller> = None;
    let mut queues = vec![0.0; k];

    for t in 0..config.sim.frames {
        if perturb_from == Some(t) {
            channel_rng.set_stream(3);
            traffic_rng.set_stream(4);
        }
        let state = model.sample(k, p.m, p.n, &mut channel_rng)?;
        if controller.is_none() {
            controller = Some(match scheme.baseline() {
                None => Controller::Online(Box::new(OnlineController::new(
                    ControlProblem {
                        d_c: pco.d_c.clone(),
                        d_p: pco.d_p.clone(),
                        power_budget: vec![p0; k],
                        backhaul_budget: vec![r0; k],
                        p_cct: p.p_cct,
                        beta: vec![config.traffic.beta; k],
                        buffer,
                    },
                    config.learner,
                )?)),
                Some(kind) => {
                    let common_user = if kind == BaselineKind::Uco {
                        uco_direction(&state.csit, k)
                    } else {
                        0
                    };
                    let streams = baseline_streams(kind, &pco, common_user)?;
                    Controller::Baseline(BaselineController::new(
                        kind,
                        streams,
                        &vec![p0; k],
                        p.p_cct,
                        &vec![r0; k],
                    ))
                }
            });
        }
        let ctrl = controller.as_mut().expect("initialised above");
        let streams = match ctrl {
            Controller::Online(_) => &pco,
            Controller::Baseline(b) => &b.streams,
        };

        // precoders and the transmitter's view from CSIT only
        let tx_set = design_precoders_with(streams, &state.csit, &state.csit)?;
        let estimated = stream_gains(&tx_set, &state.csit).without_leaks();
        let action = match ctrl {
            Controller::Online(c) => c.act(&queues, &estimated, &tx_set.alpha),
            Controller::Baseline(b) => b.act(&estimated, &tx_set.alpha, &queues),
        };

        // what actually happens on the true channel
        let rx_set = tx_set.with_receivers(&state.true_csi)?;
        let link = stream_gains(&rx_set, &state.true_csi).link_quality(&action);
        let (cc, cp) = mutual_information(&link, &action, 1.0);
        let served = goodput(&action, &cc, &cp);
        let power = power_consumption(&action, &tx_set.alpha, p.p_cct);
        let queue_cost: Vec<f64> = queues.iter().map(|&q| cost.eval(q)).collect();

        if let Controller::Online(c) = ctrl {
            c.learn(&FrameOutcome {
                queues: &queues,
                action: &action,
                alpha: &tx_set.alpha,
                link: &link,
                goodput: &served,
                queue_cost: &queue_cost,
            });
        }

        let samples: Vec<Sample> = (0..k)
            .map(|u| Sample {
                queue_bits: queues[u] * bpu,
                cost: config.traffic.beta * queue_cost[u],
                power_w: power[u].total,
                backhaul_bpf: action.users[u].r_c * bpu,
            })
            .collect();
        log.record(&samples);

        let online = match ctrl {
            Controller::Online(c) => Some(&**c),
            Controller::Baseline(_) => None,
        };
        observe(&FrameView {
            t,
            queues_units: &queues,
            action: &action,
            goodput: &served,
            controller: online,
        });
        if (t + 1) % config.sim.log_every == 0 || t + 1 == config.sim.frames {
            let (gp, gc) = match online {
                Some(c) => (
                    c.state.multipliers.gamma_p.clone(),
                    c.state.multipliers.gamma_c.clone(),
                ),
                None => (vec![0.0; k], vec![0.0; k]),
            };
            log.flush(&gp, &gc);
        }

        let a = sample_arrivals(&arrivals, &mut traffic_rng);
        for u in 0..k {
            queues[u] = step_queue(queues[u], served[u], a[u] / bpu, buffer).next;
        }
    }

    let learner = match controller {
        Some(Controller::Online(c)) => Some(c.state),
        _ => None,
    };
    Ok(RunOutput { log, learner })
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const SNAPSHOT_FILE: &str = "learner.snapshot";

/// Runs and writes `metrics.csv` (and `learner.snapshot` for the proposed
/// scheme) into `out`.
pub fn run_to_dir(config: &RunConfig, out: &Path) -> Result<RunOutput> {
    let output = run(config)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv = out.join(METRICS_FILE);
    let mut buf = Vec::new();
    output.log.write_csv(&mut buf).expect("writing to memory");
    std::fs::write(&csv, buf).map_err(|e| Error::io(&csv, e))?;
    if let Some(state) = &output.learner {
        if output.log.frames > 0 {
            write_snapshot(&out.join(SNAPSHOT_FILE), state)?;
        }
    }
    Ok(output)
}

/// Across-seed summary of one scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub scheme: Scheme,
    pub seeds: usize,
    /// Per-seed mean delay (s), averaged over users, post burn-in.
    pub delays: Vec<f64>,
    pub delay_s: f64,
    pub delay_se: f64,
    pub power_w: f64,
    pub power_se: f64,
    pub backhaul_bpf: f64,
    pub backhaul_se: f64,
}

/// Mean and standard error of the mean.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn post_mean(log: &MetricsLog, f: impl Fn(&UserMetrics) -> f64) -> f64 {
    let post = log
        .post_burn_in
        .first()
        .is_some_and(|m| m.queue_bits.count > 0);
    let m = if post { &log.post_burn_in } else { &log.full };
    m.iter().map(f).sum::<f64>() / m.len() as f64
}

/// Runs every scheme on seeds `base, base+1, ...` of the same config.
pub fn compare(config: &RunConfig, schemes: &[Scheme], seeds: usize) -> Result<Vec<ComparisonRow>> {
    compare_configs(
        &schemes
            .iter()
            .map(|&s| {
                let mut c = config.clone();
                c.sim.scheme = s;
                c
            })
            .collect::<Vec<_>>(),
        seeds,
    )
}

/// Like [`compare`] for explicit configs, which must differ only in the
/// scheme.
pub fn compare_configs(configs: &[RunConfig], seeds: usize) -> Result<Vec<ComparisonRow>> {
    if let Some(first) = configs.first() {
        for c in configs {
            let mut a = c.clone();
            a.sim.scheme = first.sim.scheme;
            if &a != first {
                return Err(Error::InvalidArgument(
                    "compared configs may differ only in the scheme".into(),
                ));
            }
        }
    }
    let mut rows = Vec::with_capacity(configs.len());
    for c in configs {
        let (mut delay, mut power, mut backhaul) = (Vec::new(), Vec::new(), Vec::new());
        for replica in 0..seeds {
            let mut cfg = c.clone();
            cfg.sim.seed = c.sim.seed + replica as u64;
            let out = run(&cfg)?;
            delay.push(out.log.mean_delay_s());
            power.push(post_mean(&out.log, |m| m.power_w.mean));
            backhaul.push(post_mean(&out.log, |m| m.backhaul_bpf.mean));
        }
        let (d, dse) = mean_se(&delay);
        let (pw, pse) = mean_se(&power);
        let (b, bse) = mean_se(&backhaul);
        rows.push(ComparisonRow {
            scheme: c.sim.scheme,
            seeds,
            delays: delay,
            delay_s: d,
            delay_se: dse,
            power_w: pw,
            power_se: pse,
            backhaul_bpf: b,
            backhaul_se: bse,
        });
    }
    Ok(rows)
}

pub fn write_comparison<W: Write>(rows: &[ComparisonRow], mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "scheme,seeds,delay_s,delay_se,power_w,power_se,backhaul_bpf,backhaul_se"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.scheme,
            r.seeds,
            r.delay_s,
            r.delay_se,
            r.power_w,
            r.power_se,
            r.backhaul_bpf,
            r.backhaul_se
        )?;
    }
    Ok(())
}

/// Runs the proposed scheme and writes the learner trajectory: potentials
/// at three probe backlogs, multipliers and executed actions, every
/// `sim.log_every` frames.
pub fn convergence<W: Write>(config: &RunConfig, mut w: W) -> Result<RunOutput> {
    let mut cfg = config.clone();
    cfg.sim.scheme = Scheme::Proposed;
    let k = cfg.phy.k;
    let buffer = cfg.traffic.buffer_bits / cfg.phy.bits_per_unit();
    let probes = [0.1 * buffer, 0.25 * buffer, 0.5 * buffer];
    let mut header = vec!["t".to_string()];
    for u in 0..k {
        for (i, _) in probes.iter().enumerate() {
            header.push(format!("v{u}_probe{i}"));
        }
    }
    for u in 0..k {
        header.push(format!("gamma_p{u}"));
        header.push(format!("gamma_c{u}"));
    }
    for u in 0..k {
        for i in 0..cfg.phy.d_c[u] {
            header.push(format!("p_c{u}_{i}"));
        }
        for i in 0..cfg.phy.d_p[u] {
            header.push(format!("p_p{u}_{i}"));
        }
        header.push(format!("r_c{u}"));
        header.push(format!("r_p{u}"));
    }
    let io_err = |e: std::io::Error| Error::io(PathBuf::from("<trajectory>"), e);
    writeln!(w, "{}", header.join(",")).map_err(io_err)?;
    let every = cfg.sim.log_every;
    let mut failure = None;
    let out = run_observed(&cfg, |view| {
        if (view.t + 1) % every != 0 || failure.is_some() {
            return;
        }
        let c = view.controller.expect("proposed scheme");
        let mut row = vec![(view.t + 1).to_string()];
        for u in 0..k {
            for &q in &probes {
                row.push(c.state.tables.value(u, q).to_string());
            }
        }
        for u in 0..k {
            row.push(c.state.multipliers.gamma_p[u].to_string());
            row.push(c.state.multipliers.gamma_c[u].to_string());
        }
        for a in &view.action.users {
            row.extend(a.p_c.iter().chain(&a.p_p).map(|x| x.to_string()));
            row.push(a.r_c.to_string());
            row.push(a.r_p.to_string());
        }
        if let Err(e) = writeln!(w, "{}", row.join(",")) {
            failure = Some(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(io_err(e));
    }
    Ok(out)
}
