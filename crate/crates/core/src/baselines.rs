//! Channel-aware comparison schemes: per-frame waterfilling on CSIT-estimated
//! gains, rates set to the estimated mutual information, and a running
//! backhaul allowance for common streams.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::action::{ControlAction, UserAction};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::phy::{d_kmn, dof, validate_streams, StreamAllocation, StreamGains};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// No data sharing: private streams only.
    Coordinative,
    /// One user's data is shared (K = 2 only).
    Uco,
    /// All data shared: common streams only.
    FullCoop,
    /// The Pco-MIMO allocation with channel-aware control.
    ChannelAwarePco,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::Coordinative,
        BaselineKind::Uco,
        BaselineKind::FullCoop,
        BaselineKind::ChannelAwarePco,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Coordinative => "coordinative",
            BaselineKind::Uco => "uco",
            BaselineKind::FullCoop => "full_coop",
            BaselineKind::ChannelAwarePco => "channel_aware_pco",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown baseline {s:?}")))
    }
}

/// Stream allocation used by each baseline. `pco` is the run's Pco-MIMO
/// allocation and `common_user` the user whose data Uco-MIMO shares.
pub fn baseline_streams(
    kind: BaselineKind,
    pco: &StreamAllocation,
    common_user: usize,
) -> Result<StreamAllocation> {
    let StreamAllocation { k, m, n, .. } = *pco;
    let dk = d_kmn(k, m, n);
    let total = n + (k - 1) * dk;
    match kind {
        BaselineKind::Coordinative => {
            // spread the maximal number of private streams evenly
            let d_p: Vec<usize> = (0..k)
                .map(|u| total / k + usize::from(u >= k - total % k))
                .collect();
            validate_streams(k, m, n, &vec![0; k], &d_p)
        }
        BaselineKind::Uco => {
            if k != 2 {
                return Err(Error::InvalidArgument(
                    "Uco-MIMO is only defined for K = 2".into(),
                ));
            }
            if common_user >= k {
                return Err(Error::InvalidArgument(format!("no user {common_user}")));
            }
            let d_p = vec![dk.max(1); k];
            let shared = total.saturating_sub(d_p.iter().sum());
            if shared == 0 {
                return Err(Error::InvalidArgument(format!(
                    "Uco-MIMO has no room for a common stream at M={m}, N={n}"
                )));
            }
            let mut d_c = vec![0; k];
            d_c[common_user] = shared;
            validate_streams(k, m, n, &d_c, &d_p)
        }
        BaselineKind::FullCoop => validate_streams(k, m, n, &vec![n; k], &vec![0; k]),
        BaselineKind::ChannelAwarePco => Ok(pco.clone()),
    }
}

/// User whose own link has the larger dominant singular value.
pub fn uco_direction(csit: &[CMat], k: usize) -> usize {
    (0..k)
        .map(|u| {
            (
                u,
                linalg::singular_values(&csit[u * k + u])
                    .first()
                    .copied()
                    .unwrap_or(0.0),
            )
        })
        .fold((0, f64::NEG_INFINITY), |best, (u, s)| {
            if s > best.1 {
                (u, s)
            } else {
                best
            }
        })
        .0
}

/// Maximises `Σ log2(1 + g_i p_i)` subject to `Σ p_i <= budget`:
/// `p_i = (μ − 1/g_i)^+` with the water level found by sorting.
pub fn waterfill(gains: &[f64], budget: f64) -> Vec<f64> {
    let mut p = vec![0.0; gains.len()];
    if budget <= 0.0 {
        return p;
    }
    let mut order: Vec<usize> = (0..gains.len()).filter(|&i| gains[i] > 0.0).collect();
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]));
    let mut level = 0.0;
    let mut inv_sum = 0.0;
    let mut active = 0;
    for (j, &i) in order.iter().enumerate() {
        inv_sum += 1.0 / gains[i];
        let candidate = (budget + inv_sum) / (j + 1) as f64;
        if candidate > 1.0 / gains[i] {
            level = candidate;
            active = j + 1;
        } else {
            break;
        }
    }
    for &i in &order[..active] {
        p[i] = (level - 1.0 / gains[i]).max(0.0);
    }
    p
}

/// Frame-by-frame controller of one baseline scheme. Rates are in the same
/// units as the capacities supplied (the simulator uses W·τ bits).
#[derive(Clone, Debug)]
pub struct BaselineController {
    pub kind: BaselineKind,
    pub streams: StreamAllocation,
    /// Per-BS transmit budget after circuit power.
    tx_budget: Vec<f64>,
    backhaul_budget: Vec<f64>,
    backhaul_used: Vec<f64>,
    /// Unused backhaul can be carried forward for at most this many frames'
    /// worth of budget.
    credit_frames: f64,
    frames: u64,
}

impl BaselineController {
    pub fn new(
        kind: BaselineKind,
        streams: StreamAllocation,
        power_budget: &[f64],
        p_cct: f64,
        backhaul_budget: &[f64],
    ) -> Self {
        let k = streams.k;
        Self {
            kind,
            streams,
            tx_budget: power_budget.iter().map(|&p| (p - p_cct).max(0.0)).collect(),
            backhaul_budget: backhaul_budget.to_vec(),
            backhaul_used: vec![0.0; k],
            credit_frames: 1.0,
            frames: 0,
        }
    }

    /// Lets unused backhaul accumulate up to `frames` frames of budget
    /// (default 1: every frame stays within its own budget).
    pub fn with_credit(mut self, frames: f64) -> Self {
        self.credit_frames = frames.max(1.0);
        self
    }

    /// Chooses this frame's action from CSIT-estimated stream gains
    /// (`estimated` must come from decorrelators designed on the CSIT and
    /// carry no interference) and the current backlogs.
    pub fn act(
        &mut self,
        estimated: &StreamGains,
        alpha: &[Vec<Vec<f64>>],
        queues: &[f64],
    ) -> ControlAction {
        let mut users = channel_aware_powers(estimated, alpha, &self.tx_budget);

        for (u, a) in users.iter_mut().enumerate() {
            let cap = |s: &[f64], p: &[f64]| -> f64 {
                s.iter().zip(p).map(|(&s, &p)| (1.0 + s * p).log2()).sum()
            };
            let c_c = cap(&estimated.sigma_c[u], &a.p_c);
            let c_p = cap(&estimated.sigma_p[u], &a.p_p);
            a.r_p = c_p.min(queues[u]);
            let budget = self.backhaul_budget[u];
            let allowance = (budget * (self.frames + 1) as f64 - self.backhaul_used[u])
                .min(budget * self.credit_frames)
                .max(0.0);
            a.r_c = c_c.min(allowance).min((queues[u] - a.r_p).max(0.0));
            self.backhaul_used[u] += a.r_c;
        }
        self.frames += 1;
        ControlAction { users }
    }
}

/// Per-user waterfilling of `tx_budget` over the estimated stream gains,
/// scaled down uniformly if some BS's total (own private streams plus its
/// shares of every common stream) overshoots its budget. Rates are left at
/// zero.
pub fn channel_aware_powers(
    estimated: &StreamGains,
    alpha: &[Vec<Vec<f64>>],
    tx_budget: &[f64],
) -> Vec<UserAction> {
    let k = tx_budget.len();
    let mut users: Vec<UserAction> = (0..k)
        .map(|u| {
            let gains: Vec<f64> = estimated.sigma_c[u]
                .iter()
                .chain(&estimated.sigma_p[u])
                .copied()
                .collect();
            let p = waterfill(&gains, tx_budget[u]);
            let (p_c, p_p) = p.split_at(estimated.sigma_c[u].len());
            UserAction {
                p_c: p_c.to_vec(),
                p_p: p_p.to_vec(),
                r_c: 0.0,
                r_p: 0.0,
            }
        })
        .collect();

    let mut worst: f64 = 1.0;
    for bs in 0..k {
        let mut tx: f64 = users[bs].p_p.iter().sum();
        for (u, a) in users.iter().enumerate() {
            for (i, &p) in a.p_c.iter().enumerate() {
                tx += p * alpha[u][i][bs];
            }
        }
        if tx > tx_budget[bs] && tx > 0.0 {
            worst = worst.max(tx / tx_budget[bs]);
        }
    }
    if worst > 1.0 {
        for a in &mut users {
            a.p_c
                .iter_mut()
                .chain(a.p_p.iter_mut())
                .for_each(|p| *p /= worst);
        }
    }
    users
}

/// One row of the DoF comparison: what each scheme achieves for `(K, M, N)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DofRow {
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub coordinative: usize,
    pub full_coop: usize,
    /// Smallest and largest DoF over the maximal Pco allocations (those to
    /// which no single stream can be added).
    pub pco: (usize, usize),
}

pub fn dof_table(k: usize, m: usize, n: usize) -> Result<DofRow> {
    let dk = d_kmn(k, m, n);
    // no user can carry more than N + (K-1) d_KMN streams of either kind
    let cap = n + (k - 1) * dk;
    let empty = validate_streams(k, m, n, &vec![0; k], &vec![0; k])?;
    let coordinative = dof(&baseline_streams(BaselineKind::Coordinative, &empty, 0)?).dof;
    let full_coop = dof(&baseline_streams(BaselineKind::FullCoop, &empty, 0)?).dof;

    let feasible = |d_c: &[usize], d_p: &[usize]| validate_streams(k, m, n, d_c, d_p).is_ok();
    let mut range: Option<(usize, usize)> = None;
    let mut counts = vec![0; 2 * k];
    loop {
        let (d_c, d_p) = counts.split_at(k);
        if feasible(d_c, d_p) {
            let maximal = (0..2 * k).all(|i| {
                let mut more = counts.clone();
                more[i] += 1;
                let (c, p) = more.split_at(k);
                !feasible(c, p)
            });
            if maximal {
                let d = counts.iter().sum();
                range = Some(range.map_or((d, d), |(lo, hi)| (lo.min(d), hi.max(d))));
            }
        }
        // odometer over [0, cap]^(2K)
        let Some(i) = counts.iter().position(|&c| c < cap) else {
            break;
        };
        counts[i] += 1;
        counts[..i].fill(0);
    }
    let pco = range.ok_or_else(|| {
        Error::InvalidArgument(format!("no feasible allocation at K={k} M={m} N={n}"))
    })?;
    Ok(DofRow {
        k,
        m,
        n,
        coordinative,
        full_coop,
        pco,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bisection_waterfill(g: &[f64], budget: f64) -> Vec<f64> {
        let alloc = |mu: f64| -> Vec<f64> { g.iter().map(|&g| (mu - 1.0 / g).max(0.0)).collect() };
        let (mut lo, mut hi) = (0.0, budget + g.iter().map(|&g| 1.0 / g).fold(0.0, f64::max));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if alloc(mid).iter().sum::<f64>() > budget {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        alloc(0.5 * (lo + hi))
    }

    proptest! {
        #[test]
        fn waterfill_matches_bisection(g in prop::collection::vec(0.01..20.0f64, 1..6), budget in 0.0..30.0f64) {
            let a = waterfill(&g, budget);
            let b = bisection_waterfill(&g, budget);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-8, "{a:?} vs {b:?}");
            }
            prop_assert!((a.iter().sum::<f64>() - budget).abs() <= 1e-9 * (1.0 + budget));
        }
    }

    #[test]
    fn single_stream_takes_everything() {
        assert_eq!(waterfill(&[0.3], 5.0), vec![5.0]);
        assert_eq!(waterfill(&[0.3, 1.0], 0.0), vec![0.0, 0.0]);
    }

    #[test]
    fn allocations_for_the_reference_geometry() {
        let pco = validate_streams(2, 3, 2, &[1, 1], &[1, 1]).unwrap();
        let c = baseline_streams(BaselineKind::Coordinative, &pco, 0).unwrap();
        assert_eq!((c.d_c.clone(), c.d_p.clone()), (vec![0, 0], vec![1, 2]));
        let u = baseline_streams(BaselineKind::Uco, &pco, 1).unwrap();
        assert_eq!((u.d_c.clone(), u.d_p.clone()), (vec![0, 1], vec![1, 1]));
        let f = baseline_streams(BaselineKind::FullCoop, &pco, 0).unwrap();
        assert_eq!((f.d_c.clone(), f.d_p.clone()), (vec![2, 2], vec![0, 0]));
        assert_eq!(
            baseline_streams(BaselineKind::ChannelAwarePco, &pco, 0).unwrap(),
            pco
        );
        let three = validate_streams(3, 5, 2, &[1, 1, 1], &[1, 1, 1]).unwrap();
        assert!(baseline_streams(BaselineKind::Uco, &three, 0).is_err());
    }

    #[test]
    fn names_round_trip() {
        for k in BaselineKind::ALL {
            assert_eq!(k.name().parse::<BaselineKind>().unwrap(), k);
        }
        assert!("best".parse::<BaselineKind>().is_err());
    }

    fn gains(sc: Vec<Vec<f64>>, sp: Vec<Vec<f64>>) -> StreamGains {
        let leaks = |s: &Vec<Vec<f64>>| {
            s.iter()
                .map(|u| u.iter().map(|_| Vec::new()).collect())
                .collect()
        };
        StreamGains {
            leaks_c: leaks(&sc),
            leaks_p: leaks(&sp),
            sigma_c: sc,
            sigma_p: sp,
        }
    }

    #[test]
    fn coordinative_never_uses_backhaul() {
        let pco = validate_streams(2, 3, 2, &[1, 1], &[1, 1]).unwrap();
        let s = baseline_streams(BaselineKind::Coordinative, &pco, 0).unwrap();
        let mut c =
            BaselineController::new(BaselineKind::Coordinative, s, &[6.0, 6.0], 0.1, &[3.0, 3.0]);
        let g = gains(vec![vec![], vec![]], vec![vec![1.0], vec![2.0, 0.5]]);
        for _ in 0..10 {
            let a = c.act(&g, &[vec![], vec![]], &[100.0, 100.0]);
            assert!(a.users.iter().all(|u| u.r_c == 0.0));
            assert!((a.users[1].p_p.iter().sum::<f64>() - 5.9).abs() < 1e-12);
        }
    }

    #[test]
    fn backhaul_allowance_is_respected() {
        let pco = validate_streams(2, 3, 2, &[1, 1], &[1, 1]).unwrap();
        let mut c = BaselineController::new(
            BaselineKind::ChannelAwarePco,
            pco,
            &[6.0, 6.0],
            0.1,
            &[1.0, 1.0],
        );
        let g = gains(vec![vec![3.0], vec![3.0]], vec![vec![3.0], vec![3.0]]);
        let alpha = vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]];
        let mut total = 0.0;
        for t in 1..=100 {
            let a = c.act(&g, &alpha, &[100.0, 100.0]);
            total += a.users[0].r_c;
            assert!(total <= t as f64 + 1e-9);
            for bs in 0..2 {
                let tx: f64 = a.users[bs].p_p.iter().sum::<f64>()
                    + a.users.iter().map(|u| 0.5 * u.p_c[0]).sum::<f64>();
                assert!(tx <= 5.9 + 1e-9);
            }
        }
        assert!(total > 99.0);
    }

    #[test]
    fn credit_is_bounded() {
        let pco = validate_streams(2, 3, 2, &[1, 1], &[1, 1]).unwrap();
        let g = gains(vec![vec![100.0], vec![100.0]], vec![vec![1.0], vec![1.0]]);
        let alpha = vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]];
        for (credit, cap) in [(1.0, 1.0), (3.0, 3.0)] {
            let mut c = BaselineController::new(
                BaselineKind::ChannelAwarePco,
                pco.clone(),
                &[6.0, 6.0],
                0.1,
                &[1.0, 1.0],
            )
            .with_credit(credit);
            for _ in 0..10 {
                c.act(&g, &alpha, &[0.0, 0.0]);
            }
            let a = c.act(&g, &alpha, &[100.0, 100.0]);
            assert!((a.users[0].r_c - cap).abs() < 1e-12, "{}", a.users[0].r_c);
        }
    }

    #[test]
    fn dof_rows() {
        let two = dof_table(2, 3, 2).unwrap();
        assert_eq!((two.coordinative, two.full_coop, two.pco), (3, 4, (3, 4)));
        let three = dof_table(3, 5, 2).unwrap();
        assert_eq!(
            (three.coordinative, three.full_coop, three.pco),
            (4, 6, (4, 6))
        );
    }
}
