//! Pco-MIMO physical layer: stream feasibility, DoF accounting, zero-forcing
//! precoders and decorrelators, per-stream link quality and the resulting
//! mutual information, goodput and power bookkeeping.

use std::io::Write;

use crate::action::ControlAction;
use crate::channel::GlobalChannelState;
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec};

/// Per-user common/private stream counts that satisfy the feasibility
/// constraints of the Pco-MIMO scheme.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamAllocation {
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub d_c: Vec<usize>,
    pub d_p: Vec<usize>,
    pub d_kmn: usize,
}

/// `[M - (K-1)N]^+`, the number of private streams a BS can zero-force at
/// every other MS on its own.
pub fn d_kmn(k: usize, m: usize, n: usize) -> usize {
    m.saturating_sub((k - 1) * n)
}

/// Checks the feasibility constraints for every user.
///
/// `d_p >= d_KMN` is waived when every user has zero private streams (the full
/// cooperative special case); that case instead requires `d_c <= N`.
pub fn validate_streams(
    k: usize,
    m: usize,
    n: usize,
    d_c: &[usize],
    d_p: &[usize],
) -> Result<StreamAllocation> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need K >= 2, got {k}")));
    }
    if !(m < k * n && n <= m) {
        return Err(Error::InvalidArgument(format!(
            "need M/K < N <= M, got K={k} M={m} N={n}"
        )));
    }
    if d_c.len() != k || d_p.len() != k {
        return Err(Error::InvalidArgument(format!(
            "stream counts must have one entry per user ({k})"
        )));
    }
    let dk = d_kmn(k, m, n);
    let total_private: usize = d_p.iter().sum();
    let full_coop = total_private == 0;
    for user in 0..k {
        if full_coop {
            if d_c[user] > n {
                return Err(Error::InfeasibleAllocation {
                    user,
                    constraint: format!("d_c = {} <= N = {n}", d_c[user]),
                });
            }
            continue;
        }
        if d_p[user] < dk {
            return Err(Error::InfeasibleAllocation {
                user,
                constraint: format!("d_p = {} >= d_KMN = {dk}", d_p[user]),
            });
        }
        let lhs = d_c[user] + total_private;
        let rhs = n + (k - 1) * dk;
        if lhs > rhs {
            return Err(Error::InfeasibleAllocation {
                user,
                constraint: format!("d_c + sum(d_p) = {lhs} <= N + (K-1) d_KMN = {rhs}"),
            });
        }
    }
    Ok(StreamAllocation {
        k,
        m,
        n,
        d_c: d_c.to_vec(),
        d_p: d_p.to_vec(),
        d_kmn: dk,
    })
}

impl StreamAllocation {
    /// Private streams of `user` that are zero-forced at the transmitter.
    pub fn zf_private(&self, user: usize) -> usize {
        self.d_kmn.min(self.d_p[user])
    }

    pub fn svd_private(&self, user: usize) -> usize {
        self.d_p[user] - self.zf_private(user)
    }

    pub fn total_streams(&self) -> usize {
        self.d_c.iter().sum::<usize>() + self.d_p.iter().sum::<usize>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dof {
    pub dof: usize,
    pub dof_max: usize,
    pub achieves_kn: bool,
}

/// System DoF of an allocation and the upper bound `N + (K-1)d_KMN +
/// min_k sum_{n != k} d_(n,c)`.
pub fn dof(alloc: &StreamAllocation) -> Dof {
    let dof = alloc.total_streams();
    let total_common: usize = alloc.d_c.iter().sum();
    let min_others = alloc
        .d_c
        .iter()
        .map(|&own| total_common - own)
        .min()
        .unwrap_or(0);
    Dof {
        dof,
        dof_max: alloc.n + (alloc.k - 1) * alloc.d_kmn + min_others,
        achieves_kn: dof == alloc.k * alloc.n,
    }
}

/// Precoders designed from CSIT and decorrelators designed from the CSI known
/// at each MS.
#[derive(Clone, Debug)]
pub struct PrecoderSet {
    /// Joint KM×d_(k,c) precoders across all BSs.
    pub common: Vec<CMat>,
    /// M×min(d_KMN, d_(k,p)) precoders nulled at every other MS.
    pub private_zf: Vec<CMat>,
    /// M×(d_(k,p) - d_KMN) dominant-eigenmode precoders.
    pub private_svd: Vec<CMat>,
    pub decorrelators_common: Vec<Vec<CVec>>,
    pub decorrelators_private: Vec<Vec<CVec>>,
    /// `alpha[n][i][k]`: share of common stream `i` of user `n` sent from BS `k`.
    pub alpha: Vec<Vec<Vec<f64>>>,
    pub(crate) k: usize,
}

impl PrecoderSet {
    /// Same precoders with decorrelators rebuilt for the channel `rx_csi`.
    pub fn with_receivers(&self, rx_csi: &[CMat]) -> Result<PrecoderSet> {
        let n = rx_csi[0].nrows();
        let (dc, dp) = design_decorrelators(self, rx_csi, n)?;
        Ok(PrecoderSet {
            decorrelators_common: dc,
            decorrelators_private: dp,
            ..self.clone()
        })
    }

    /// Column `i` of the user's full private precoder `[B1, B2]`.
    pub fn private_column(&self, user: usize, i: usize) -> CVec {
        let zf = self.private_zf[user].ncols();
        if i < zf {
            self.private_zf[user].column(i).into_owned()
        } else {
            self.private_svd[user].column(i - zf).into_owned()
        }
    }

    pub fn private_count(&self, user: usize) -> usize {
        self.private_zf[user].ncols() + self.private_svd[user].ncols()
    }

    /// Writes every precoder and decorrelator as text, one complex entry per
    /// `re im` pair.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        fn dump<W: Write>(w: &mut W, name: &str, m: &CMat) -> std::io::Result<()> {
            writeln!(w, "{name} {} {}", m.nrows(), m.ncols())?;
            for r in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols())
                    .map(|c| format!("{:.17e} {:.17e}", m[(r, c)].re, m[(r, c)].im))
                    .collect();
                writeln!(w, "{}", row.join(" "))?;
            }
            Ok(())
        }
        for u in 0..self.k {
            dump(&mut w, &format!("common[{u}]"), &self.common[u])?;
            dump(&mut w, &format!("private_zf[{u}]"), &self.private_zf[u])?;
            dump(&mut w, &format!("private_svd[{u}]"), &self.private_svd[u])?;
            for (i, v) in self.decorrelators_common[u].iter().enumerate() {
                dump(
                    &mut w,
                    &format!("u_common[{u}][{i}]"),
                    &CMat::from_column_slice(v.len(), 1, v.as_slice()),
                )?;
            }
            for (i, v) in self.decorrelators_private[u].iter().enumerate() {
                dump(
                    &mut w,
                    &format!("u_private[{u}][{i}]"),
                    &CMat::from_column_slice(v.len(), 1, v.as_slice()),
                )?;
            }
        }
        Ok(())
    }
}

/// `H_k = [H_k1, ..., H_kK]`, the N×KM channel from all BSs to MS `k`.
pub fn aggregate_channel(h: &[CMat], k: usize, ms: usize) -> CMat {
    let blocks: Vec<&CMat> = (0..k).map(|bs| &h[ms * k + bs]).collect();
    linalg::hstack(blocks[0].nrows(), &blocks)
}

/// Designs precoders from the CSIT in `state` and decorrelators from its true
/// CSI (perfect CSIR).
pub fn design_precoders(
    alloc: &StreamAllocation,
    state: &GlobalChannelState,
) -> Result<PrecoderSet> {
    design_precoders_with(alloc, &state.csit, &state.true_csi)
}

/// Designs precoders from `tx_csi` and decorrelators from `rx_csi`. Passing the
/// CSIT twice gives the transmitter's own estimate of the link.
pub fn design_precoders_with(
    alloc: &StreamAllocation,
    tx_csi: &[CMat],
    rx_csi: &[CMat],
) -> Result<PrecoderSet> {
    let StreamAllocation { k, m, n, .. } = *alloc;
    if tx_csi.len() != k * k || rx_csi.len() != k * k {
        return Err(Error::InvalidArgument("CSI must hold K*K matrices".into()));
    }
    let agg: Vec<CMat> = (0..k).map(|ms| aggregate_channel(tx_csi, k, ms)).collect();

    let mut common = Vec::with_capacity(k);
    let mut alpha = Vec::with_capacity(k);
    for user in 0..k {
        let d = alloc.d_c[user];
        if d == 0 {
            common.push(CMat::zeros(k * m, 0));
            alpha.push(Vec::new());
            continue;
        }
        let others: Vec<&CMat> = (0..k).filter(|&j| j != user).map(|j| &agg[j]).collect();
        let basis = linalg::null_space(&linalg::vstack(&others));
        if basis.ncols() < d {
            return Err(Error::InfeasibleGeometry(format!(
                "common null space of user {user} has dimension {} < {d}",
                basis.ncols()
            )));
        }
        let f = linalg::dominant_right_singular_vectors(&(&agg[user] * &basis), d);
        let b = &basis * f;
        let shares = (0..d)
            .map(|i| {
                (0..k)
                    .map(|bs| (0..m).map(|r| b[(bs * m + r, i)].norm_sqr()).sum())
                    .collect()
            })
            .collect();
        alpha.push(shares);
        common.push(b);
    }

    let mut private_zf = Vec::with_capacity(k);
    let mut private_svd = Vec::with_capacity(k);
    for user in 0..k {
        let h_own = &tx_csi[user * k + user];
        let zf = alloc.zf_private(user);
        if zf > 0 {
            let cross: Vec<&CMat> = (0..k)
                .filter(|&j| j != user)
                .map(|j| &tx_csi[j * k + user])
                .collect();
            let basis = linalg::null_space(&linalg::vstack(&cross));
            if basis.ncols() < zf {
                return Err(Error::InfeasibleGeometry(format!(
                    "private null space of user {user} has dimension {} < {zf}",
                    basis.ncols()
                )));
            }
            let f = linalg::dominant_right_singular_vectors(&(h_own * &basis), zf);
            private_zf.push(&basis * f);
        } else {
            private_zf.push(CMat::zeros(m, 0));
        }
        private_svd.push(linalg::dominant_right_singular_vectors(
            h_own,
            alloc.svd_private(user),
        ));
    }

    let mut set = PrecoderSet {
        common,
        private_zf,
        private_svd,
        decorrelators_common: Vec::new(),
        decorrelators_private: Vec::new(),
        alpha,
        k,
    };
    let (dc, dp) = design_decorrelators(&set, rx_csi, n)?;
    set.decorrelators_common = dc;
    set.decorrelators_private = dp;
    Ok(set)
}

/// Received direction of every stream at one MS, grouped by origin.
struct ReceivedStreams {
    own_common: Vec<CVec>,
    own_private: Vec<CVec>,
    /// Streams of other users that precoding cannot null (their SVD part).
    foreign_svd: Vec<CVec>,
}

fn received_at(set: &PrecoderSet, h: &[CMat], ms: usize) -> ReceivedStreams {
    let k = set.k;
    let h_agg = aggregate_channel(h, k, ms);
    let own_common = (0..set.common[ms].ncols())
        .map(|i| &h_agg * set.common[ms].column(i))
        .collect();
    let h_own = &h[ms * k + ms];
    let own_private = (0..set.private_count(ms))
        .map(|i| h_own * set.private_column(ms, i))
        .collect();
    let mut foreign_svd = Vec::new();
    for other in (0..k).filter(|&j| j != ms) {
        let h_cross = &h[ms * k + other];
        for i in 0..set.private_svd[other].ncols() {
            foreign_svd.push(h_cross * set.private_svd[other].column(i));
        }
    }
    ReceivedStreams {
        own_common,
        own_private,
        foreign_svd,
    }
}

/// Projects `desired` onto the orthogonal complement of `interferers` and
/// normalizes. A stream that cannot be separated from its interferers gets
/// the zero filter, i.e. no gain at all.
fn zf_decorrelator(desired: &CVec, interferers: &[&CVec], n: usize) -> CVec {
    let Some(proj) = linalg::project_out(desired, interferers) else {
        return CVec::zeros(n);
    };
    let psi = proj.norm();
    if psi <= 1e-300 {
        return CVec::zeros(n);
    }
    proj.unscale(psi)
}

type Decorrelators = (Vec<Vec<CVec>>, Vec<Vec<CVec>>);

fn design_decorrelators(set: &PrecoderSet, h: &[CMat], n: usize) -> Result<Decorrelators> {
    let k = set.k;
    let mut all_c = Vec::with_capacity(k);
    let mut all_p = Vec::with_capacity(k);
    for ms in 0..k {
        let rx = received_at(set, h, ms);
        let own: Vec<&CVec> = rx.own_common.iter().chain(rx.own_private.iter()).collect();
        let dc = rx.own_common.len();
        let mut us = Vec::with_capacity(own.len());
        for (s, desired) in own.iter().enumerate() {
            let interferers: Vec<&CVec> = own
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != s)
                .map(|(_, v)| *v)
                .chain(rx.foreign_svd.iter())
                .collect();
            us.push(zf_decorrelator(desired, &interferers, n));
        }
        let private = us.split_off(dc);
        all_c.push(us);
        all_p.push(private);
    }
    Ok((all_c, all_p))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamKind {
    Common,
    Private,
}

/// Residual interference coupling: power of stream (`user`, `kind`, `index`)
/// leaks into the victim with gain `gain`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Leak {
    pub user: usize,
    pub kind: StreamKind,
    pub index: usize,
    pub gain: f64,
}

/// Effective gains of every stream after decorrelation on the true channel.
#[derive(Clone, Debug, Default)]
pub struct StreamGains {
    pub sigma_c: Vec<Vec<f64>>,
    pub sigma_p: Vec<Vec<f64>>,
    pub leaks_c: Vec<Vec<Vec<Leak>>>,
    pub leaks_p: Vec<Vec<Vec<Leak>>>,
}

/// Per-stream gains and residual interference powers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinkQuality {
    pub sigma_c: Vec<Vec<f64>>,
    pub sigma_p: Vec<Vec<f64>>,
    pub i_c: Vec<Vec<f64>>,
    pub i_p: Vec<Vec<f64>>,
}

/// Computes `|u^H H b|^2` for the desired stream and for every stream of
/// another user that precoding was supposed to null (their common streams and
/// first d_KMN private streams).
pub fn stream_gains(set: &PrecoderSet, h: &[CMat]) -> StreamGains {
    let k = set.k;
    let mut g = StreamGains::default();
    for ms in 0..k {
        let h_agg = aggregate_channel(h, k, ms);
        let rx = received_at(set, h, ms);
        let mut sources: Vec<(Leak, CVec)> = Vec::new();
        for other in (0..k).filter(|&j| j != ms) {
            for i in 0..set.common[other].ncols() {
                let leak = Leak {
                    user: other,
                    kind: StreamKind::Common,
                    index: i,
                    gain: 0.0,
                };
                sources.push((leak, &h_agg * set.common[other].column(i)));
            }
            let h_cross = &h[ms * k + other];
            for i in 0..set.private_zf[other].ncols() {
                let leak = Leak {
                    user: other,
                    kind: StreamKind::Private,
                    index: i,
                    gain: 0.0,
                };
                sources.push((leak, h_cross * set.private_zf[other].column(i)));
            }
        }
        let victim = |u: &CVec, desired: &CVec| -> (f64, Vec<Leak>) {
            let sigma = linalg::inner_sq(u, desired);
            let leaks = sources
                .iter()
                .map(|(l, v)| Leak {
                    gain: linalg::inner_sq(u, v),
                    ..*l
                })
                .collect();
            (sigma, leaks)
        };
        let (sc, lc): (Vec<f64>, Vec<Vec<Leak>>) = set.decorrelators_common[ms]
            .iter()
            .zip(&rx.own_common)
            .map(|(u, d)| victim(u, d))
            .unzip();
        let (sp, lp): (Vec<f64>, Vec<Vec<Leak>>) = set.decorrelators_private[ms]
            .iter()
            .zip(&rx.own_private)
            .map(|(u, d)| victim(u, d))
            .unzip();
        g.sigma_c.push(sc);
        g.sigma_p.push(sp);
        g.leaks_c.push(lc);
        g.leaks_p.push(lp);
    }
    g
}

impl StreamGains {
    fn interference(leaks: &[Leak], action: &ControlAction) -> f64 {
        leaks
            .iter()
            .map(|l| {
                let u = &action.users[l.user];
                let p = match l.kind {
                    StreamKind::Common => u.p_c[l.index],
                    StreamKind::Private => u.p_p[l.index],
                };
                p * l.gain
            })
            .sum()
    }

    pub fn link_quality(&self, action: &ControlAction) -> LinkQuality {
        let ic = self
            .leaks_c
            .iter()
            .map(|user| user.iter().map(|l| Self::interference(l, action)).collect())
            .collect();
        let ip = self
            .leaks_p
            .iter()
            .map(|user| user.iter().map(|l| Self::interference(l, action)).collect())
            .collect();
        LinkQuality {
            sigma_c: self.sigma_c.clone(),
            sigma_p: self.sigma_p.clone(),
            i_c: ic,
            i_p: ip,
        }
    }

    /// Gains with every leak removed, i.e. what a transmitter that trusts its
    /// CSIT expects.
    pub fn without_leaks(&self) -> StreamGains {
        let strip = |v: &Vec<Vec<Vec<Leak>>>| {
            v.iter()
                .map(|u| u.iter().map(|_| Vec::new()).collect())
                .collect()
        };
        StreamGains {
            sigma_c: self.sigma_c.clone(),
            sigma_p: self.sigma_p.clone(),
            leaks_c: strip(&self.leaks_c),
            leaks_p: strip(&self.leaks_p),
        }
    }
}

/// Link quality of `action` when the precoders meet the true channel `h`.
pub fn link_quality(set: &PrecoderSet, h: &[CMat], action: &ControlAction) -> LinkQuality {
    stream_gains(set, h).link_quality(action)
}

/// Per-user capacity of the common and the private stream group, in
/// `bits_per_unit` × bit/s/Hz (pass W·τ to get bits per frame).
pub fn mutual_information(
    lq: &LinkQuality,
    action: &ControlAction,
    bits_per_unit: f64,
) -> (Vec<f64>, Vec<f64>) {
    let group = |sigma: &[f64], interf: &[f64], p: &[f64]| -> f64 {
        sigma
            .iter()
            .zip(interf)
            .zip(p)
            .map(|((&s, &i), &p)| (1.0 + s * p / (1.0 + i)).log2())
            .sum::<f64>()
            * bits_per_unit
    };
    let mut cc = Vec::with_capacity(action.users.len());
    let mut cp = Vec::with_capacity(action.users.len());
    for (k, u) in action.users.iter().enumerate() {
        cc.push(group(&lq.sigma_c[k], &lq.i_c[k], &u.p_c));
        cp.push(group(&lq.sigma_p[k], &lq.i_p[k], &u.p_p));
    }
    (cc, cp)
}

/// Bits delivered per user: each rate counts in full iff it does not exceed
/// the corresponding mutual information.
pub fn goodput(action: &ControlAction, c_c: &[f64], c_p: &[f64]) -> Vec<f64> {
    action
        .users
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let common = if u.r_c <= c_c[k] { u.r_c } else { 0.0 };
            let private = if u.r_p <= c_p[k] { u.r_p } else { 0.0 };
            common + private
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BsPower {
    pub tx: f64,
    pub total: f64,
}

/// Transmit power of every BS: its private streams plus its share of every
/// common stream, and the circuit power when it transmits at all.
pub fn power_consumption(
    action: &ControlAction,
    alpha: &[Vec<Vec<f64>>],
    p_cct: f64,
) -> Vec<BsPower> {
    let k = action.users.len();
    (0..k)
        .map(|bs| {
            let mut tx: f64 = action.users[bs].p_p.iter().sum();
            for (user, u) in action.users.iter().enumerate() {
                for (i, &p) in u.p_c.iter().enumerate() {
                    tx += p * alpha[user][i][bs];
                }
            }
            BsPower {
                tx,
                total: tx + if tx > 0.0 { p_cct } else { 0.0 },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::UserAction;
    use crate::channel::{build_alphabet, build_error_kernel, sample_frame, CsitErrorKernel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_allocation_is_feasible() {
        let a = validate_streams(2, 3, 2, &[1, 1], &[1, 1]).unwrap();
        assert_eq!(a.d_kmn, 1);
    }

    #[test]
    fn too_many_common_streams() {
        let e = validate_streams(2, 3, 2, &[2, 1], &[1, 1]).unwrap_err();
        match e {
            Error::InfeasibleAllocation { user, constraint } => {
                assert_eq!(user, 0);
                assert!(
                    constraint.contains("4 <= N + (K-1) d_KMN = 3"),
                    "{constraint}"
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn coordinative_special_case() {
        assert!(validate_streams(2, 3, 2, &[0, 0], &[1, 1]).is_ok());
        let a = validate_streams(2, 3, 2, &[0, 0], &[1, 2]).unwrap();
        assert_eq!(dof(&a).dof, 3);
    }

    #[test]
    fn private_lower_bound() {
        assert!(matches!(
            validate_streams(2, 3, 2, &[1, 1], &[0, 1]),
            Err(Error::InfeasibleAllocation { user: 0, .. })
        ));
    }

    #[test]
    fn full_cooperation_allows_zero_private() {
        let a = validate_streams(2, 3, 2, &[2, 2], &[0, 0]).unwrap();
        assert_eq!(dof(&a).dof, 4);
        assert!(validate_streams(2, 3, 2, &[3, 2], &[0, 0]).is_err());
    }

    #[test]
    fn dimension_preconditions() {
        assert!(matches!(
            validate_streams(1, 3, 2, &[0], &[1]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            validate_streams(2, 4, 2, &[0, 0], &[1, 1]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            validate_streams(2, 3, 2, &[0], &[1]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn dof_examples() {
        let d = dof(&validate_streams(2, 3, 2, &[1, 1], &[1, 1]).unwrap());
        assert_eq!(
            d,
            Dof {
                dof: 4,
                dof_max: 4,
                achieves_kn: true
            }
        );
        let d = dof(&validate_streams(3, 3, 2, &[2, 2, 2], &[0, 0, 0]).unwrap());
        assert_eq!(d.dof, 6);
        assert!(d.achieves_kn);
    }

    fn frame(seed: u64, sigma_e: f64) -> GlobalChannelState {
        let a = build_alphabet(20, 7).unwrap();
        let k = if sigma_e == 0.0 {
            CsitErrorKernel::identity(20)
        } else {
            build_error_kernel(&a, sigma_e).unwrap()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_frame(&a, &k, 2, 3, 2, &mut rng).unwrap()
    }

    fn full_power(alloc: &StreamAllocation, p: f64) -> ControlAction {
        ControlAction {
            users: (0..alloc.k)
                .map(|u| UserAction {
                    p_c: vec![p; alloc.d_c[u]],
                    p_p: vec![p; alloc.d_p[u]],
                    r_c: 0.0,
                    r_p: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn perfect_csit_has_no_interference() {
        let alloc = validate_streams(2, 3, 2, &[1, 1], &[1, 1]).unwrap();
        for seed in 0..20 {
            let s = frame(seed, 0.0);
            let set = design_precoders(&alloc, &s).unwrap();
            let lq = link_quality(&set, &s.true_csi, &full_power(&alloc, 5.0));
            for v in lq.i_c.iter().chain(&lq.i_p).flatten() {
                assert!(*v <= 1e-9, "interference {v}");
            }
        }
    }

    #[test]
    fn zero_power_means_zero_interference() {
        let alloc = validate_streams(2, 3, 2, &[1, 1], &[1, 1]).unwrap();
        let s = frame(3, 0.15);
        let set = design_precoders(&alloc, &s).unwrap();
        let lq = link_quality(&set, &s.true_csi, &full_power(&alloc, 0.0));
        assert!(lq.i_c.iter().chain(&lq.i_p).flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn no_common_streams_means_empty_alpha() {
        let alloc = validate_streams(2, 3, 2, &[0, 0], &[1, 1]).unwrap();
        let s = frame(4, 0.0);
        let set = design_precoders(&alloc, &s).unwrap();
        assert!(set.common.iter().all(|b| b.ncols() == 0));
        assert!(set.alpha.iter().all(|a| a.is_empty()));
    }

    #[test]
    fn alpha_partitions_each_common_stream() {
        let alloc = validate_streams(2, 3, 2, &[1, 1], &[1, 1]).unwrap();
        for seed in 0..20 {
            let set = design_precoders(&alloc, &frame(seed, 0.15)).unwrap();
            for shares in set.alpha.iter().flatten() {
                assert!(shares.iter().all(|&a| (0.0..=1.0).contains(&a)));
                assert!((shares.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn mutual_information_closed_forms() {
        let lq = LinkQuality {
            sigma_c: vec![vec![1.0]],
            sigma_p: vec![vec![1.0]],
            i_c: vec![vec![0.0]],
            i_p: vec![vec![1.0]],
        };
        let act = ControlAction {
            users: vec![UserAction {
                p_c: vec![3.0],
                p_p: vec![3.0],
                r_c: 0.0,
                r_p: 0.0,
            }],
        };
        let (cc, cp) = mutual_information(&lq, &act, 1.0);
        assert!((cc[0] - 2.0).abs() < 1e-15);
        assert!((cp[0] - 2.5f64.log2()).abs() < 1e-15);
        let zero = ControlAction {
            users: vec![UserAction::zeros(1, 1)],
        };
        let (cc, cp) = mutual_information(&lq, &zero, 1.0);
        assert_eq!((cc[0], cp[0]), (0.0, 0.0));
    }

    #[test]
    fn goodput_indicator_is_inclusive() {
        let act = |rc: f64, rp: f64| ControlAction {
            users: vec![UserAction {
                p_c: vec![],
                p_p: vec![],
                r_c: rc,
                r_p: rp,
            }],
        };
        assert_eq!(goodput(&act(2.0, 0.0), &[3.0], &[0.0]), vec![2.0]);
        assert_eq!(goodput(&act(4.0, 4.0), &[3.0], &[3.0]), vec![0.0]);
        assert_eq!(goodput(&act(3.0, 0.0), &[3.0], &[0.0]), vec![3.0]);
    }

    #[test]
    fn power_bookkeeping() {
        let idle = ControlAction {
            users: vec![UserAction::zeros(0, 1), UserAction::zeros(0, 1)],
        };
        let p = power_consumption(&idle, &[vec![], vec![]], 0.1);
        assert!(p.iter().all(|b| b.tx == 0.0 && b.total == 0.0));

        let mut one = idle.clone();
        one.users[0].p_p[0] = 2.0;
        let p = power_consumption(&one, &[vec![], vec![]], 0.1);
        assert!((p[0].total - 2.1).abs() < 1e-15);
        assert_eq!(p[1].total, 0.0);

        let common = ControlAction {
            users: vec![
                UserAction {
                    p_c: vec![1.0],
                    p_p: vec![],
                    r_c: 0.0,
                    r_p: 0.0,
                },
                UserAction::zeros(0, 0),
            ],
        };
        let p = power_consumption(&common, &[vec![vec![0.3, 0.7]], vec![]], 0.0);
        assert!((p[0].tx - 0.3).abs() < 1e-15 && (p[1].tx - 0.7).abs() < 1e-15);
    }

    #[test]
    fn diagnostic_dump_has_every_block() {
        let alloc = validate_streams(2, 3, 2, &[1, 1], &[1, 1]).unwrap();
        let set = design_precoders(&alloc, &frame(9, 0.0)).unwrap();
        let mut buf = Vec::new();
        set.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("common[1] 6 1"));
        assert!(text.contains("u_private[0][0] 2 1"));
    }
}
