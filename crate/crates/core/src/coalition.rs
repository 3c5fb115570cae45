//! Pairwise bargaining between players: cooperation costs, merge criteria,
//! two-player Shapley allocation and the per-instant negotiation round.
//!
//! A player is a single agent or an existing coalition acting as one entity.
//! Members of a coalition talk over a spanning tree of enabled links, so a
//! coalition with `k` members always holds `k - 1` links.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use num_rational::BigRational;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AgentId, CoupledNetwork, InputLayout};
use crate::mpc::{member_costs, merger_problem, solve_horizon, solve_player_mpc, MpcConfig, MpcSolution};

pub type Link = (AgentId, AgentId);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Player {
    pub members: BTreeSet<AgentId>,
    pub links: BTreeSet<Link>,
    pub born_at: usize,
}

impl Player {
    pub fn singleton(id: AgentId, born_at: usize) -> Self {
        Self {
            members: BTreeSet::from([id]),
            links: BTreeSet::new(),
            born_at,
        }
    }

    pub fn is_singleton(&self) -> bool {
        self.members.len() == 1
    }

    pub fn member_list(&self) -> Vec<AgentId> {
        self.members.iter().copied().collect()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    /// True when the links form a spanning tree over the members.
    pub fn links_span_members(&self) -> bool {
        if self.links.len() + 1 != self.members.len() {
            return false;
        }
        let Some(&start) = self.members.iter().next() else {
            return false;
        };
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &(a, b) in &self.links {
                let next = if a == v { b } else if b == v { a } else { continue };
                if self.members.contains(&next) && seen.insert(next) {
                    stack.push(next);
                }
            }
        }
        seen.len() == self.members.len()
    }

    fn first(&self) -> AgentId {
        *self.members.iter().next().expect("players are nonempty")
    }
}

/// Current coalition structure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionState {
    pub players: Vec<Player>,
    pub time: usize,
}

impl PartitionState {
    /// Every agent on its own.
    pub fn decentralized(agents: usize, time: usize) -> Self {
        Self {
            players: (0..agents).map(|i| Player::singleton(i, time)).collect(),
            time,
        }
    }

    /// All agents in one player, linked by a breadth-first spanning forest of
    /// the coupling graph.
    pub fn grand_coalition(net: &CoupledNetwork, time: usize) -> Self {
        let mut links = BTreeSet::new();
        let mut seen = vec![false; net.len()];
        for root in 0..net.len() {
            if seen[root] {
                continue;
            }
            seen[root] = true;
            let mut queue = std::collections::VecDeque::from([root]);
            while let Some(i) = queue.pop_front() {
                for j in net.subsystems[i].neighbors() {
                    if !seen[j] {
                        seen[j] = true;
                        links.insert((i.min(j), i.max(j)));
                        queue.push_back(j);
                    }
                }
            }
        }
        Self {
            players: vec![Player {
                members: (0..net.len()).collect(),
                links,
                born_at: time,
            }],
            time,
        }
    }

    pub fn is_partition_of(&self, agents: usize) -> bool {
        let mut seen = vec![false; agents];
        for p in &self.players {
            if p.members.is_empty() {
                return false;
            }
            for &m in &p.members {
                if m >= agents || seen[m] {
                    return false;
                }
                seen[m] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn coalitions(&self) -> impl Iterator<Item = &Player> {
        self.players.iter().filter(|p| !p.is_singleton())
    }

    fn sort(&mut self) {
        self.players.sort_by_key(Player::first);
    }
}

/// Nonnegative nondecreasing map from a count to a cooperation cost.
#[derive(Clone)]
pub enum CostMap {
    Zero,
    /// `c * k`
    Linear(f64),
    /// `c * k^2`
    Quadratic(f64),
    Custom(Arc<dyn Fn(usize) -> f64 + Send + Sync>),
}

impl CostMap {
    pub fn eval(&self, k: usize) -> f64 {
        let k_f = k as f64;
        match self {
            CostMap::Zero => 0.0,
            CostMap::Linear(c) => c * k_f,
            CostMap::Quadratic(c) => c * k_f * k_f,
            CostMap::Custom(f) => f(k),
        }
    }
}

impl fmt::Debug for CostMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostMap::Zero => write!(f, "Zero"),
            CostMap::Linear(c) => write!(f, "Linear({c})"),
            CostMap::Quadratic(c) => write!(f, "Quadratic({c})"),
            CostMap::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Which quantity the cooperation cost is charged on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoopCostKind {
    /// Index (a): number of agents involved.
    #[serde(rename = "a")]
    Members,
    /// Index (b): number of enabled links.
    #[serde(rename = "b")]
    Links,
}

#[derive(Clone, Debug)]
pub struct CoopCostConfig {
    pub kind: CoopCostKind,
    pub f_a: CostMap,
    pub f_b: CostMap,
}

impl CoopCostConfig {
    pub fn new(kind: CoopCostKind) -> Self {
        Self {
            kind,
            f_a: CostMap::Quadratic(1.0),
            f_b: CostMap::Linear(1.0),
        }
    }

    /// No cost for cooperating under either index.
    pub fn free(kind: CoopCostKind) -> Self {
        Self {
            kind,
            f_a: CostMap::Zero,
            f_b: CostMap::Zero,
        }
    }
}

impl Default for CoopCostConfig {
    fn default() -> Self {
        Self::new(CoopCostKind::Links)
    }
}

/// Cooperation cost of a merger (`p2` given) or of one player on its own.
pub fn cooperation_cost(cfg: &CoopCostConfig, p1: &Player, p2: Option<&Player>) -> f64 {
    match (cfg.kind, p2) {
        (CoopCostKind::Members, Some(p2)) => cfg.f_a.eval(p1.members.len() + p2.members.len()),
        (CoopCostKind::Members, None) => cfg.f_a.eval(p1.members.len()),
        (CoopCostKind::Links, Some(p2)) => cfg.f_b.eval(p1.link_count() + p2.link_count() + 1),
        (CoopCostKind::Links, None) => cfg.f_b.eval(p1.link_count()),
    }
}

/// Total cost `J_i` of a player acting alone, with its MPC solution.
pub fn player_total_cost(
    net: &CoupledNetwork,
    player: &Player,
    x0: &DVector<f64>,
    coop: &CoopCostConfig,
    mpc: &MpcConfig,
) -> Result<(f64, MpcSolution)> {
    let sol = solve_player_mpc(net, &player.member_list(), x0, mpc)?;
    Ok((sol.control_cost + cooperation_cost(coop, player, None), sol))
}

/// Total cost `J_12` of the merger of two players; `x0` is `[x_p1; x_p2]`.
pub fn merger_total_cost(
    net: &CoupledNetwork,
    p1: &Player,
    p2: &Player,
    x0: &DVector<f64>,
    coop: &CoopCostConfig,
    mpc: &MpcConfig,
) -> Result<(f64, MpcSolution)> {
    let (problem, layout) = merger_problem(net, &p1.member_list(), &p2.member_list(), x0, mpc.horizon)?;
    let sol = solve_horizon(&problem, layout, &mpc.qp, None)?;
    Ok((sol.control_cost + cooperation_cost(coop, p1, Some(p2)), sol))
}

fn exact(v: f64) -> Option<BigRational> {
    BigRational::from_float(v)
}

/// Merge iff `J12 <= J1 + J2`, compared exactly on the given values.
pub fn coo_decide(j1: f64, j2: f64, j12: f64) -> bool {
    match (exact(j1), exact(j2), exact(j12)) {
        (Some(a), Some(b), Some(c)) => c <= a + b,
        _ => j12 <= j1 + j2,
    }
}

/// Two-player Shapley allocation of `J12`: each player's average marginal
/// contribution over both join orders.
pub fn shapley_two_player(j1: f64, j2: f64, j12: f64) -> (f64, f64) {
    (0.5 * j1 + 0.5 * (j12 - j2), 0.5 * j2 + 0.5 * (j12 - j1))
}

/// Outcome of the individual-rationality test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CirDecision {
    pub merge: bool,
    pub phi: (f64, f64),
    /// Transfer to each player (positive = receives) that moves its locally
    /// incurred share of `J12` onto its Shapley share. The two sum to zero.
    pub side_payments: (f64, f64),
}

/// Merge iff both Shapley payoffs are no larger than the standalone costs.
///
/// The payoff inequalities are evaluated exactly, so the flag agrees with
/// [`coo_decide`] on every input. `incurred` is each player's share of `J12`
/// as it would accrue locally without transfers.
pub fn cir_decide(j1: f64, j2: f64, j12: f64, incurred: (f64, f64)) -> CirDecision {
    let phi = shapley_two_player(j1, j2, j12);
    let merge = match (exact(j1), exact(j2), exact(j12)) {
        (Some(a), Some(b), Some(c)) => {
            let half = BigRational::new(1.into(), 2.into());
            let phi1 = &half * &a + &half * (&c - &b);
            let phi2 = &half * &b + &half * (&c - &a);
            phi1 <= a && phi2 <= b
        }
        _ => phi.0 <= j1 && phi.1 <= j2,
    };
    let pay1 = incurred.0 - phi.0;
    CirDecision {
        merge,
        phi,
        side_payments: (pay1, -pay1),
    }
}

/// The lexicographically smallest coupled pair `(min, max)` across two players.
pub fn connecting_link(net: &CoupledNetwork, p1: &Player, p2: &Player) -> Result<Link> {
    let mut best: Option<Link> = None;
    for &i in &p1.members {
        for &j in &p2.members {
            if net.coupled(i, j) {
                let edge = (i.min(j), i.max(j));
                if best.is_none_or(|b| edge < b) {
                    best = Some(edge);
                }
            }
        }
    }
    best.ok_or_else(|| Error::NotCoupled(p1.member_list(), p2.member_list()))
}

/// Merge rule applied during a negotiation round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    #[serde(rename = "coo")]
    Cooperative,
    #[serde(rename = "cir")]
    IndividuallyRational,
}

/// Order in which approved mergers are executed within one round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RoundOrder {
    #[default]
    BestBenefit,
    Lexicographic,
}

#[derive(Clone, Debug)]
pub struct BargainConfig {
    pub criterion: Criterion,
    pub coop: CoopCostConfig,
    pub mpc: MpcConfig,
    pub order: RoundOrder,
}

/// Everything evaluated in one pairwise bargain.
#[derive(Clone, Debug, PartialEq)]
pub struct BargainOutcome {
    pub p1: Vec<AgentId>,
    pub p2: Vec<AgentId>,
    pub j1: f64,
    pub j2: f64,
    pub j12: f64,
    pub chi1: f64,
    pub chi2: f64,
    pub chi12: f64,
    pub phi1: f64,
    pub phi2: f64,
    /// The criterion approves the merger.
    pub merged: bool,
    /// The merger was executed in its round (approved and both players free).
    pub formed: bool,
    pub net_benefit: f64,
    /// Each player's locally incurred share of `J12`.
    pub incurred: (f64, f64),
    /// Transfers to each player under the individually rational criterion.
    pub side_payments: (f64, f64),
    /// Per-member transfers, summing to the player transfers.
    pub member_payments: Vec<(AgentId, f64)>,
    pub link: Link,
}

/// Evaluate one bargain at global state `x`.
pub fn bargain(
    net: &CoupledNetwork,
    p1: &Player,
    p2: &Player,
    x: &DVector<f64>,
    cfg: &BargainConfig,
) -> Result<BargainOutcome> {
    let link = connecting_link(net, p1, p2)?;
    let j1 = standalone(net, p1, x, cfg)?;
    let j2 = standalone(net, p2, x, cfg)?;
    merge_outcome(net, p1, p2, j1, j2, link, x, cfg)
}

fn standalone(net: &CoupledNetwork, p: &Player, x: &DVector<f64>, cfg: &BargainConfig) -> Result<f64> {
    let layout = InputLayout::for_members(net, &p.member_list())?;
    Ok(player_total_cost(net, p, &layout.gather_state(net, x), &cfg.coop, &cfg.mpc)?.0)
}

#[allow(clippy::too_many_arguments)]
fn merge_outcome(
    net: &CoupledNetwork,
    p1: &Player,
    p2: &Player,
    j1: f64,
    j2: f64,
    link: Link,
    x: &DVector<f64>,
    cfg: &BargainConfig,
) -> Result<BargainOutcome> {
    let (m1, m2) = (p1.member_list(), p2.member_list());
    let l1 = InputLayout::for_members(net, &m1)?;
    let l2 = InputLayout::for_members(net, &m2)?;
    let merged_layout = InputLayout::concat(net, &l1, &l2)?;
    let x0 = merged_layout.gather_state(net, x);
    let (problem, layout) = merger_problem(net, &m1, &m2, &x0, cfg.mpc.horizon)?;
    let sol = solve_horizon(&problem, layout, &cfg.mpc.qp, None)?;

    let chi1 = cooperation_cost(&cfg.coop, p1, None);
    let chi2 = cooperation_cost(&cfg.coop, p2, None);
    let chi12 = cooperation_cost(&cfg.coop, p1, Some(p2));
    let j12 = sol.control_cost + chi12;

    // Control cost splits exactly by member; the cooperation cost is shared
    // in proportion to member counts.
    let per_member = member_costs(net, &problem, &sol);
    let total_members = (m1.len() + m2.len()) as f64;
    let member_share: Vec<f64> = per_member
        .iter()
        .map(|c| c + chi12 / total_members)
        .collect();
    let inc1: f64 = member_share[..m1.len()].iter().sum();
    let incurred = (inc1, j12 - inc1);

    let cir = cir_decide(j1, j2, j12, incurred);
    let merged = match cfg.criterion {
        Criterion::Cooperative => coo_decide(j1, j2, j12),
        Criterion::IndividuallyRational => cir.merge,
    };
    let side_payments = match cfg.criterion {
        Criterion::IndividuallyRational => cir.side_payments,
        Criterion::Cooperative => (0.0, 0.0),
    };
    let mut member_payments = split_payment(&m1, &member_share[..m1.len()], side_payments.0);
    member_payments.extend(split_payment(&m2, &member_share[m1.len()..], side_payments.1));
    // close the books exactly under left-to-right summation
    if let Some((last, rest)) = member_payments.split_last_mut() {
        let others: f64 = rest.iter().map(|p| p.1).sum();
        last.1 = -others;
    }

    Ok(BargainOutcome {
        p1: m1,
        p2: m2,
        j1,
        j2,
        j12,
        chi1,
        chi2,
        chi12,
        phi1: cir.phi.0,
        phi2: cir.phi.1,
        merged,
        formed: false,
        net_benefit: j1 + j2 - j12,
        incurred,
        side_payments,
        member_payments,
        link,
    })
}

/// Split a player transfer over its members by their incurred shares, equal
/// shares when those vanish. The last member takes the rounding remainder.
fn split_payment(members: &[AgentId], shares: &[f64], amount: f64) -> Vec<(AgentId, f64)> {
    let total: f64 = shares.iter().sum();
    let mut out = Vec::with_capacity(members.len());
    let mut given = 0.0;
    for (k, &m) in members.iter().enumerate() {
        let v = if k + 1 == members.len() {
            amount - given
        } else if total > 0.0 {
            amount * shares[k] / total
        } else {
            amount / members.len() as f64
        };
        given += v;
        out.push((m, v));
    }
    out
}

fn merge_players(p1: &Player, p2: &Player, link: Link, time: usize) -> Player {
    let mut links: BTreeSet<Link> = p1.links.union(&p2.links).copied().collect();
    links.insert(link);
    Player {
        members: p1.members.union(&p2.members).copied().collect(),
        links,
        born_at: time,
    }
}

/// One noniterative bargaining round over all coupled player pairs.
///
/// Every eligible pair is evaluated against the state `x`; approved mergers
/// are executed greedily in the configured order and each player takes part
/// in at most one merger per round.
pub fn negotiation_round(
    state: &PartitionState,
    x: &DVector<f64>,
    net: &CoupledNetwork,
    cfg: &BargainConfig,
) -> Result<(PartitionState, Vec<BargainOutcome>)> {
    let mut players = state.players.clone();
    players.sort_by_key(Player::first);
    let time = state.time;

    let mut pairs = Vec::new();
    for a in 0..players.len() {
        for b in a + 1..players.len() {
            if let Ok(link) = connecting_link(net, &players[a], &players[b]) {
                pairs.push((a, b, link));
            }
        }
    }

    let mut involved: Vec<usize> = pairs.iter().flat_map(|&(a, b, _)| [a, b]).collect();
    involved.sort_unstable();
    involved.dedup();
    let standalone_costs: Vec<(usize, f64)> = involved
        .par_iter()
        .map(|&p| standalone(net, &players[p], x, cfg).map(|j| (p, j)))
        .collect::<Result<_>>()?;
    let cost_of = |p: usize| {
        standalone_costs
            .iter()
            .find(|(q, _)| *q == p)
            .map(|(_, j)| *j)
            .expect("standalone cost evaluated")
    };

    let mut outcomes: Vec<BargainOutcome> = pairs
        .par_iter()
        .map(|&(a, b, link)| merge_outcome(net, &players[a], &players[b], cost_of(a), cost_of(b), link, x, cfg))
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..outcomes.len()).filter(|&k| outcomes[k].merged).collect();
    if cfg.order == RoundOrder::BestBenefit {
        order.sort_by(|&a, &b| {
            outcomes[b]
                .net_benefit
                .total_cmp(&outcomes[a].net_benefit)
                .then_with(|| (&outcomes[a].p1, &outcomes[a].p2).cmp(&(&outcomes[b].p1, &outcomes[b].p2)))
        });
    }

    let mut taken = vec![false; players.len()];
    let mut next = Vec::new();
    for k in order {
        let (a, b, link) = pairs[k];
        if taken[a] || taken[b] {
            continue;
        }
        taken[a] = true;
        taken[b] = true;
        outcomes[k].formed = true;
        next.push(merge_players(&players[a], &players[b], link, time));
    }
    next.extend(
        players
            .iter()
            .enumerate()
            .filter(|(k, _)| !taken[*k])
            .map(|(_, p)| p.clone()),
    );
    let mut new_state = PartitionState { players: next, time };
    new_state.sort();
    Ok((new_state, outcomes))
}

/// Dissolve every coalition whose age reached `lifetime` into singletons.
pub fn expire_coalitions(state: &PartitionState, time: usize, lifetime: usize) -> PartitionState {
    let mut players = Vec::with_capacity(state.players.len());
    for p in &state.players {
        if !p.is_singleton() && time.saturating_sub(p.born_at) >= lifetime {
            players.extend(p.members.iter().map(|&m| Player::singleton(m, time)));
        } else {
            players.push(p.clone());
        }
    }
    let mut next = PartitionState { players, time };
    next.sort();
    next
}
