//! Input-coupled linear subsystems and block composition of player and
//! merger prediction models.
//!
//! Every agent `i` owns one input channel per neighbor `j` (its action on
//! `j`, which also moves its own state) plus optional external channels that
//! exchange with the environment. Channels are stacked by ascending owner and
//! then ascending target, with agent targets before external ones.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type AgentId = usize;

/// Where an input channel acts besides its owner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ChannelTarget {
    Agent(AgentId),
    /// Exchange with the environment, indexed into the owner's `b_ext`.
    External(usize),
}

impl std::fmt::Display for ChannelTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChannelTarget::Agent(j) => write!(f, "{j}"),
            ChannelTarget::External(e) => write!(f, "ext{e}"),
        }
    }
}

/// One agent of the coupled network.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsystemModel {
    pub id: AgentId,
    pub a: DMatrix<f64>,
    /// Effect on this agent's state of neighbor `j`'s action toward it.
    pub b_in: BTreeMap<AgentId, DMatrix<f64>>,
    /// Effect on this agent's state of its own action toward neighbor `j`.
    pub b_out: BTreeMap<AgentId, DMatrix<f64>>,
    /// Own channels exchanging with the environment (source pumps, sink drains).
    pub b_ext: Vec<DMatrix<f64>>,
    pub q: DMatrix<f64>,
    /// Weight over the stacked own input `u_i` (neighbor channels, then external).
    pub r: DMatrix<f64>,
    pub x_ref: DVector<f64>,
    pub u_ref: DVector<f64>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
}

impl SubsystemModel {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn neighbors(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.b_out.keys().copied()
    }

    /// Own channels in stacking order with their dimensions.
    pub fn own_channels(&self) -> Vec<(ChannelTarget, usize)> {
        self.b_out
            .iter()
            .map(|(&j, b)| (ChannelTarget::Agent(j), b.ncols()))
            .chain(
                self.b_ext
                    .iter()
                    .enumerate()
                    .map(|(e, b)| (ChannelTarget::External(e), b.ncols())),
            )
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.own_channels().iter().map(|(_, d)| d).sum()
    }

    fn own_block(&self, target: ChannelTarget) -> Option<&DMatrix<f64>> {
        match target {
            ChannelTarget::Agent(j) => self.b_out.get(&j),
            ChannelTarget::External(e) => self.b_ext.get(e),
        }
    }
}

/// The set of subsystems together with their coupling relation.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledNetwork {
    pub subsystems: Vec<SubsystemModel>,
    /// Constant per-agent additive term in the plant (and in the owner's own
    /// prediction).
    pub exogenous: Option<Vec<DVector<f64>>>,
}

impl CoupledNetwork {
    pub fn new(subsystems: Vec<SubsystemModel>) -> Self {
        Self {
            subsystems,
            exogenous: None,
        }
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn agent(&self, id: AgentId) -> Result<&SubsystemModel> {
        self.subsystems.get(id).ok_or(Error::UnknownAgent(id))
    }

    pub fn agents(&self) -> Vec<AgentId> {
        (0..self.len()).collect()
    }

    pub fn coupled(&self, i: AgentId, j: AgentId) -> bool {
        self.subsystems
            .get(i)
            .is_some_and(|s| s.b_out.contains_key(&j))
    }

    /// Undirected coupling edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(AgentId, AgentId)> {
        let mut edges = BTreeSet::new();
        for s in &self.subsystems {
            for j in s.neighbors() {
                edges.insert((s.id.min(j), s.id.max(j)));
            }
        }
        edges.into_iter().collect()
    }

    pub fn state_dim(&self) -> usize {
        self.subsystems.iter().map(|s| s.state_dim()).sum()
    }

    /// Offset of each agent's state inside the global stacked state.
    pub fn state_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.len());
        let mut acc = 0;
        for s in &self.subsystems {
            offsets.push(acc);
            acc += s.state_dim();
        }
        offsets
    }

    /// Layout of every channel in the network; the global input vector uses it.
    pub fn global_layout(&self) -> InputLayout {
        InputLayout::for_members(self, &self.agents()).expect("network agents are valid members")
    }

    fn disturbance(&self, id: AgentId) -> Option<&DVector<f64>> {
        self.exogenous.as_ref().and_then(|d| d.get(id))
    }

    /// Breadth-first hop distance over the coupling graph.
    pub fn hop_distances(&self, from: AgentId) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.len()];
        if from >= self.len() {
            return dist;
        }
        let mut queue = std::collections::VecDeque::from([from]);
        dist[from] = Some(0);
        while let Some(i) = queue.pop_front() {
            let d = dist[i].unwrap();
            for j in self.subsystems[i].neighbors() {
                if j < dist.len() && dist[j].is_none() {
                    dist[j] = Some(d + 1);
                    queue.push_back(j);
                }
            }
        }
        dist
    }
}

/// A stacked input channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Channel {
    pub owner: AgentId,
    pub target: ChannelTarget,
    pub offset: usize,
    pub dim: usize,
}

/// Stacking order of states and inputs for a set of agents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputLayout {
    members: Vec<AgentId>,
    state_offsets: Vec<usize>,
    state_dims: Vec<usize>,
    channels: Vec<Channel>,
    lookup: BTreeMap<(AgentId, ChannelTarget), usize>,
    state_dim: usize,
    input_dim: usize,
}

impl InputLayout {
    /// Sorted layout for the member set `members`.
    pub fn for_members(net: &CoupledNetwork, members: &[AgentId]) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyMembers);
        }
        let sorted: BTreeSet<AgentId> = members.iter().copied().collect();
        if sorted.len() != members.len() {
            let dup = members
                .iter()
                .find(|m| members.iter().filter(|x| x == m).count() > 1)
                .copied()
                .unwrap_or_default();
            return Err(Error::Overlap(dup));
        }
        Self::ordered(net, sorted.into_iter())
    }

    fn ordered(net: &CoupledNetwork, members: impl Iterator<Item = AgentId>) -> Result<Self> {
        let mut layout = InputLayout {
            members: Vec::new(),
            state_offsets: Vec::new(),
            state_dims: Vec::new(),
            channels: Vec::new(),
            lookup: BTreeMap::new(),
            state_dim: 0,
            input_dim: 0,
        };
        for id in members {
            let sub = net.agent(id)?;
            layout.members.push(id);
            layout.state_offsets.push(layout.state_dim);
            layout.state_dims.push(sub.state_dim());
            layout.state_dim += sub.state_dim();
            for (target, dim) in sub.own_channels() {
                layout.lookup.insert((id, target), layout.channels.len());
                layout.channels.push(Channel {
                    owner: id,
                    target,
                    offset: layout.input_dim,
                    dim,
                });
                layout.input_dim += dim;
            }
        }
        Ok(layout)
    }

    /// Layout of a merger: all of `first`'s states and channels, then `second`'s.
    pub fn concat(net: &CoupledNetwork, first: &InputLayout, second: &InputLayout) -> Result<Self> {
        if let Some(m) = first.members.iter().find(|m| second.members.contains(m)) {
            return Err(Error::Overlap(*m));
        }
        Self::ordered(
            net,
            first.members.iter().chain(second.members.iter()).copied(),
        )
    }

    pub fn members(&self) -> &[AgentId] {
        &self.members
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn contains(&self, id: AgentId) -> bool {
        self.members.contains(&id)
    }

    /// Position of `id`'s state block: `(offset, dim)`.
    pub fn state_block(&self, id: AgentId) -> Option<(usize, usize)> {
        let k = self.members.iter().position(|&m| m == id)?;
        Some((self.state_offsets[k], self.state_dims[k]))
    }

    pub fn channel(&self, owner: AgentId, target: ChannelTarget) -> Option<&Channel> {
        self.lookup.get(&(owner, target)).map(|&k| &self.channels[k])
    }

    /// Index map such that `self[i]` state entry is `other[map[i]]`.
    pub fn state_permutation(&self, other: &InputLayout) -> Option<Vec<usize>> {
        let mut map = Vec::with_capacity(self.state_dim);
        for (k, &id) in self.members.iter().enumerate() {
            let (off, dim) = other.state_block(id)?;
            if dim != self.state_dims[k] {
                return None;
            }
            map.extend(off..off + dim);
        }
        Some(map)
    }

    /// Index map such that `self[i]` input entry is `other[map[i]]`.
    pub fn input_permutation(&self, other: &InputLayout) -> Option<Vec<usize>> {
        let mut map = Vec::with_capacity(self.input_dim);
        for c in &self.channels {
            let o = other.channel(c.owner, c.target)?;
            if o.dim != c.dim {
                return None;
            }
            map.extend(o.offset..o.offset + o.dim);
        }
        Some(map)
    }

    /// Stacked member states taken from the global state vector.
    pub fn gather_state(&self, net: &CoupledNetwork, x: &DVector<f64>) -> DVector<f64> {
        let offsets = net.state_offsets();
        let mut out = DVector::zeros(self.state_dim);
        for (k, &id) in self.members.iter().enumerate() {
            let dim = self.state_dims[k];
            out.rows_mut(self.state_offsets[k], dim)
                .copy_from(&x.rows(offsets[id], dim));
        }
        out
    }

    /// Write this layout's inputs into a vector laid out by `global`.
    pub fn scatter_inputs(&self, u: &DVector<f64>, global: &InputLayout, out: &mut DVector<f64>) {
        for c in &self.channels {
            let g = global
                .channel(c.owner, c.target)
                .expect("channel present in global layout");
            out.rows_mut(g.offset, c.dim)
                .copy_from(&u.rows(c.offset, c.dim));
        }
    }
}

/// State-space matrices of a player or merger with their stacking layout.
#[derive(Clone, Debug, PartialEq)]
pub struct PlayerMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub layout: InputLayout,
}

/// Stacked weights, references, bounds and constant disturbance for a layout.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedCosts {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub x_ref: DVector<f64>,
    pub u_ref: DVector<f64>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub disturbance: DVector<f64>,
}

/// A single violated invariant.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub agents: Vec<AgentId>,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, agents: Vec<AgentId>, message: impl Into<String>) {
        self.violations.push(Violation {
            agents,
            message: message.into(),
        });
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            return Ok(());
        }
        let text = self
            .violations
            .iter()
            .map(|v| format!("{:?}: {}", v.agents, v.message))
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::InvalidNetwork(text))
    }
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(1.0);
    m.is_square() && (m - m.transpose()).amax() <= 1e-12 * scale
}

pub(crate) fn is_psd(m: &DMatrix<f64>) -> bool {
    if !is_symmetric(m) {
        return false;
    }
    if m.nrows() == 0 {
        return true;
    }
    let scale = m.amax().max(1.0);
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .all(|&l| l >= -1e-12 * scale)
}

fn is_pd(m: &DMatrix<f64>) -> bool {
    is_symmetric(m) && (m.nrows() == 0 || m.clone().cholesky().is_some())
}

/// Check every structural invariant of the network.
pub fn validate_network(net: &CoupledNetwork) -> ValidationReport {
    let mut report = ValidationReport::default();
    if net.is_empty() {
        report.push(vec![], "network has no subsystems");
    }
    for (idx, s) in net.subsystems.iter().enumerate() {
        let i = s.id;
        if i != idx {
            report.push(vec![idx], format!("subsystem at position {idx} has id {i}"));
        }
        let n = s.a.nrows();
        if !s.a.is_square() {
            report.push(vec![i], "A is not square");
        }
        if s.q.shape() != (n, n) {
            report.push(vec![i], format!("Q has shape {:?}, expected ({n}, {n})", s.q.shape()));
        } else if !is_psd(&s.q) {
            report.push(vec![i], "Q is not symmetric positive semidefinite");
        }
        let d = s.input_dim();
        if s.r.shape() != (d, d) {
            report.push(vec![i], format!("R has shape {:?}, expected ({d}, {d})", s.r.shape()));
        } else if !is_pd(&s.r) {
            report.push(vec![i], "R is not symmetric positive definite");
        }
        if s.x_ref.len() != n {
            report.push(vec![i], "x_ref length differs from the state dimension");
        }
        if s.u_ref.len() != d || s.u_min.len() != d || s.u_max.len() != d {
            report.push(vec![i], "u_ref/u_min/u_max length differs from the input dimension");
        } else {
            for k in 0..d {
                if !(s.u_min[k] <= s.u_ref[k] && s.u_ref[k] <= s.u_max[k]) {
                    report.push(
                        vec![i],
                        format!("input {k}: bounds do not bracket the reference"),
                    );
                }
            }
        }
        let in_keys: BTreeSet<_> = s.b_in.keys().collect();
        let out_keys: BTreeSet<_> = s.b_out.keys().collect();
        if in_keys != out_keys {
            report.push(vec![i], "incoming and outgoing coupling sets differ");
        }
        for (k, b) in s.b_ext.iter().enumerate() {
            if b.nrows() != n {
                report.push(vec![i], format!("external channel {k} has {} rows", b.nrows()));
            }
        }
        for (&j, b_out) in &s.b_out {
            if j == i {
                report.push(vec![i], "agent is coupled to itself");
                continue;
            }
            if b_out.nrows() != n {
                report.push(vec![i, j], "outgoing coupling row count differs from the state dimension");
            }
            let Some(other) = net.subsystems.get(j) else {
                report.push(vec![i, j], format!("neighbor {j} does not exist"));
                continue;
            };
            if !other.b_out.contains_key(&i) {
                report.push(vec![i, j], "coupling is not symmetric");
            }
            match other.b_in.get(&i) {
                Some(b_in) if b_in.ncols() != b_out.ncols() => {
                    report.push(vec![i, j], "channel dimension differs between its two ends");
                }
                Some(b_in) if b_in.nrows() != other.state_dim() => {
                    report.push(vec![i, j], "incoming coupling row count differs from the state dimension");
                }
                _ => {}
            }
        }
    }
    if let Some(exo) = &net.exogenous {
        if exo.len() != net.len() {
            report.push(vec![], "exogenous vector count differs from the agent count");
        }
        for (i, (d, s)) in exo.iter().zip(&net.subsystems).enumerate() {
            if d.len() != s.state_dim() {
                report.push(vec![i], "exogenous term length differs from the state dimension");
            }
        }
    }
    report
}

/// Advance the plant one step, including neighbors' actions and exogenous terms.
pub fn step_true(net: &CoupledNetwork, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    let layout = net.global_layout();
    if x.len() != net.state_dim() {
        return Err(Error::Dimension(format!(
            "state has length {}, network expects {}",
            x.len(),
            net.state_dim()
        )));
    }
    if u.len() != layout.input_dim() {
        return Err(Error::Dimension(format!(
            "input has length {}, network expects {}",
            u.len(),
            layout.input_dim()
        )));
    }
    let offsets = net.state_offsets();
    let mut next = DVector::zeros(x.len());
    for s in &net.subsystems {
        let i = s.id;
        let n = s.state_dim();
        let mut xi = &s.a * x.rows(offsets[i], n);
        for (target, _) in s.own_channels() {
            let c = layout.channel(i, target).unwrap();
            xi += s.own_block(target).unwrap() * u.rows(c.offset, c.dim);
        }
        for (&j, b) in &s.b_in {
            let c = layout
                .channel(j, ChannelTarget::Agent(i))
                .ok_or_else(|| Error::InvalidNetwork(format!("missing channel {j}->{i}")))?;
            xi += b * u.rows(c.offset, c.dim);
        }
        if let Some(d) = net.disturbance(i) {
            xi += d;
        }
        next.rows_mut(offsets[i], n).copy_from(&xi);
    }
    Ok(next)
}

/// Quadratic stage cost of one agent.
pub fn stage_cost(sub: &SubsystemModel, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    if x.len() != sub.state_dim() || u.len() != sub.input_dim() {
        return Err(Error::Dimension(format!(
            "agent {}: got state {} / input {}, expected {} / {}",
            sub.id,
            x.len(),
            u.len(),
            sub.state_dim(),
            sub.input_dim()
        )));
    }
    let dx = x - &sub.x_ref;
    let du = u - &sub.u_ref;
    Ok(dx.dot(&(&sub.q * &dx)) + du.dot(&(&sub.r * &du)))
}

/// Input block seen by the states of `rows` from the channels of `cols`.
///
/// Own channels act through `b_out`/`b_ext`; a channel owned by `o` aimed at
/// member `i` acts through `i`'s `b_in[o]`. Anything else is zero.
fn input_block(net: &CoupledNetwork, rows: &InputLayout, cols: &InputLayout) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(rows.state_dim(), cols.input_dim());
    for &i in rows.members() {
        let sub = &net.subsystems[i];
        let (r0, n) = rows.state_block(i).unwrap();
        for c in cols.channels() {
            let block = if c.owner == i {
                sub.own_block(c.target)
            } else if c.target == ChannelTarget::Agent(i) {
                sub.b_in.get(&c.owner)
            } else {
                None
            };
            if let Some(block) = block {
                b.view_mut((r0, c.offset), (n, c.dim)).copy_from(block);
            }
        }
    }
    b
}

fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Prediction model of a player: block-diagonal `A_p` and the input matrix
/// restricted to the members' own channels. Couplings from agents outside
/// the member set are dropped.
pub fn compose_player_matrices(net: &CoupledNetwork, members: &[AgentId]) -> Result<PlayerMatrices> {
    let layout = InputLayout::for_members(net, members)?;
    let a_blocks: Vec<_> = layout.members().iter().map(|&i| &net.subsystems[i].a).collect();
    let a = block_diag(&a_blocks);
    let b = input_block(net, &layout, &layout);
    Ok(PlayerMatrices { a, b, layout })
}

/// Prediction model of the merger of two disjoint players, stacked as
/// `[player 1; player 2]` with cross blocks for couplings between them.
pub fn compose_merger_matrices(
    net: &CoupledNetwork,
    p1: &[AgentId],
    p2: &[AgentId],
) -> Result<PlayerMatrices> {
    let first = compose_player_matrices(net, p1)?;
    let second = compose_player_matrices(net, p2)?;
    let layout = InputLayout::concat(net, &first.layout, &second.layout)?;
    let a = block_diag(&[&first.a, &second.a]);

    let (n1, m1) = (first.layout.state_dim(), first.layout.input_dim());
    let (n2, m2) = (second.layout.state_dim(), second.layout.input_dim());
    let mut b = DMatrix::zeros(n1 + n2, m1 + m2);
    b.view_mut((0, 0), (n1, m1)).copy_from(&first.b);
    b.view_mut((n1, m1), (n2, m2)).copy_from(&second.b);
    b.view_mut((0, m1), (n1, m2))
        .copy_from(&input_block(net, &first.layout, &second.layout));
    b.view_mut((n1, 0), (n2, m1))
        .copy_from(&input_block(net, &second.layout, &first.layout));
    Ok(PlayerMatrices { a, b, layout })
}

/// Block-diagonal weights and stacked references/bounds in `layout` order.
pub fn stack_costs(net: &CoupledNetwork, layout: &InputLayout) -> StackedCosts {
    let subs: Vec<_> = layout.members().iter().map(|&i| &net.subsystems[i]).collect();
    let q = block_diag(&subs.iter().map(|s| &s.q).collect::<Vec<_>>());
    let r = block_diag(&subs.iter().map(|s| &s.r).collect::<Vec<_>>());
    let cat = |f: &dyn Fn(&SubsystemModel) -> &DVector<f64>| {
        DVector::from_iterator(
            subs.iter().map(|s| f(s).len()).sum(),
            subs.iter().flat_map(|s| f(s).iter().copied()),
        )
    };
    let disturbance = DVector::from_iterator(
        layout.state_dim(),
        subs.iter().flat_map(|s| {
            net.disturbance(s.id)
                .map(|d| d.iter().copied().collect::<Vec<_>>())
                .unwrap_or_else(|| vec![0.0; s.state_dim()])
        }),
    );
    StackedCosts {
        q,
        r,
        x_ref: cat(&|s| &s.x_ref),
        u_ref: cat(&|s| &s.u_ref),
        u_min: cat(&|s| &s.u_min),
        u_max: cat(&|s| &s.u_max),
        disturbance,
    }
}
