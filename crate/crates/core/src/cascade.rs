//! Up- and downstream shock propagation to a fixed point.
//!
//! Production levels are tracked relative to the observed state: `h_d` is
//! the level a firm can reach given the inputs its suppliers still deliver,
//! `h_u` the level its remaining demand supports. Each iteration
//!
//! 1. computes every supplier's replaceability `σ_j` from its market share
//!    among the downstream-surviving output of its sector,
//! 2. for every buyer, turns the suppliers' losses into relative input
//!    availabilities: one per essential input sector and one pooled value
//!    for all non-essential inputs,
//! 3. sets `h_d` to the scarcest availability (capped by the exogenous
//!    shock `ψ`) and `h_u` to the share of sales still demanded (also capped
//!    by `ψ`).
//!
//! All firms are updated synchronously from the previous state. Every
//! per-firm sum runs in a fixed order, so a cascade is bitwise reproducible
//! regardless of how many cascades run concurrently.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::ProductionNetwork;
use crate::prodfun::ScenarioSpec;

pub const DEFAULT_EPSILON: f64 = 1e-2;
pub const DEFAULT_MAX_ITER: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LinkKind {
    Essential,
    NonEssential,
}

/// Sparse per-link impact coefficients.
///
/// Downstream entries are stored grouped by buyer: first the essential
/// links, ordered by supplier sector and then supplier index, followed by
/// the non-essential links ordered by supplier index. Each essential sector
/// forms one input group, all non-essential links form a single pooled
/// group. Upstream entries are stored grouped by the supplier they affect.
#[derive(Debug, Clone)]
pub struct ImpactMatrices {
    down_offsets: Vec<usize>,
    down_supplier: Vec<u32>,
    down_lambda: Vec<f64>,
    down_kind: Vec<LinkKind>,
    group_offsets: Vec<usize>,
    /// Exclusive end (edge index) of each group.
    group_end: Vec<usize>,
    /// Supplier sector of each group, `None` for the pooled group.
    group_sector: Vec<Option<u32>>,
    up_offsets: Vec<usize>,
    up_buyer: Vec<u32>,
    up_lambda: Vec<f64>,
}

impl ImpactMatrices {
    /// Builds downstream and upstream impact coefficients for every edge.
    ///
    /// For an edge `j -> i`, the downstream coefficient is `j`'s share of
    /// `i`'s purchases from `j`'s sector when that sector is essential to
    /// `i`, and `j`'s share of all of `i`'s purchases otherwise. The upstream
    /// coefficient is `i`'s share of `j`'s sales.
    pub fn build(net: &ProductionNetwork, spec: &ScenarioSpec) -> Self {
        assert_eq!(spec.len(), net.len(), "scenario spec does not cover the network");
        let n = net.len();
        let mut m = ImpactMatrices {
            down_offsets: Vec::with_capacity(n + 1),
            down_supplier: Vec::with_capacity(net.edge_count()),
            down_lambda: Vec::with_capacity(net.edge_count()),
            down_kind: Vec::with_capacity(net.edge_count()),
            group_offsets: Vec::with_capacity(n + 1),
            group_end: Vec::new(),
            group_sector: Vec::new(),
            up_offsets: Vec::with_capacity(n + 1),
            up_buyer: Vec::with_capacity(net.edge_count()),
            up_lambda: Vec::with_capacity(net.edge_count()),
        };

        m.down_offsets.push(0);
        m.group_offsets.push(0);
        let mut sector_in = vec![0.0; net.sectors().len()];
        let mut links: Vec<(bool, u32, u32, f64)> = Vec::new();
        for i in 0..n {
            let (src, w) = net.in_edges(i);
            links.clear();
            for (&j, &w) in src.iter().zip(w) {
                let k = net.sector_of(j as usize) as u32;
                let essential = spec.is_essential(i, net.nace_of(j as usize));
                if essential {
                    sector_in[k as usize] += w;
                }
                // essential links sort first
                links.push((!essential, if essential { k } else { 0 }, j, w));
            }
            links.sort_by_key(|&(ne, k, j, _)| (ne, k, j));

            let s_in = net.s_in()[i];
            let mut current: Option<Option<u32>> = None;
            for &(ne, k, j, w) in &links {
                let (lambda, kind, group) = if ne {
                    (w / s_in, LinkKind::NonEssential, None)
                } else {
                    (w / sector_in[k as usize], LinkKind::Essential, Some(k))
                };
                if current != Some(group) {
                    if current.is_some() {
                        m.group_end.push(m.down_supplier.len());
                    }
                    m.group_sector.push(group);
                    current = Some(group);
                }
                m.down_supplier.push(j);
                m.down_lambda.push(lambda);
                m.down_kind.push(kind);
            }
            if current.is_some() {
                m.group_end.push(m.down_supplier.len());
            }
            for &(ne, k, _, _) in &links {
                if !ne {
                    sector_in[k as usize] = 0.0;
                }
            }
            m.down_offsets.push(m.down_supplier.len());
            m.group_offsets.push(m.group_end.len());
        }

        m.up_offsets.push(0);
        for i in 0..n {
            let (dst, w) = net.out_edges(i);
            let s_out = net.s_out()[i];
            for (&j, &w) in dst.iter().zip(w) {
                m.up_buyer.push(j);
                m.up_lambda.push(w / s_out);
            }
            m.up_offsets.push(m.up_buyer.len());
        }
        m
    }

    /// Scales each firm's incoming impacts by the observed share of its
    /// activity: downstream coefficients of buyer `i` by
    /// `min(1, s_in_i / material_cost_i)`, upstream coefficients of supplier
    /// `i` by `min(1, s_out_i / revenue_i)`. Missing or zero accounting
    /// values give a factor of 1.
    pub fn rescale_for_coverage(mut self, net: &ProductionNetwork) -> Self {
        for i in 0..net.len() {
            let f = net.firm(i);
            let d = coverage_factor(net.s_in()[i], f.material_cost);
            if d != 1.0 {
                for l in &mut self.down_lambda[self.down_offsets[i]..self.down_offsets[i + 1]] {
                    *l *= d;
                }
            }
            let u = coverage_factor(net.s_out()[i], f.revenue);
            if u != 1.0 {
                for l in &mut self.up_lambda[self.up_offsets[i]..self.up_offsets[i + 1]] {
                    *l *= u;
                }
            }
        }
        self
    }

    pub fn len(&self) -> usize {
        self.down_offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Downstream coefficient of supplier `j` on buyer `i`.
    pub fn downstream(&self, j: usize, i: usize) -> Option<(f64, LinkKind)> {
        let r = self.down_offsets[i]..self.down_offsets[i + 1];
        self.down_supplier[r.clone()]
            .iter()
            .position(|&s| s as usize == j)
            .map(|p| (self.down_lambda[r.start + p], self.down_kind[r.start + p]))
    }

    /// Upstream coefficient of buyer `j` on supplier `i`.
    pub fn upstream(&self, j: usize, i: usize) -> Option<f64> {
        let r = self.up_offsets[i]..self.up_offsets[i + 1];
        self.up_buyer[r.clone()]
            .binary_search(&(j as u32))
            .ok()
            .map(|p| self.up_lambda[r.start + p])
    }

    /// Downstream links into buyer `i` as `(supplier, lambda, kind)`.
    pub fn downstream_into(&self, i: usize) -> impl Iterator<Item = (usize, f64, LinkKind)> + '_ {
        let r = self.down_offsets[i]..self.down_offsets[i + 1];
        r.map(move |e| (self.down_supplier[e] as usize, self.down_lambda[e], self.down_kind[e]))
    }

    /// Upstream links affecting supplier `i` as `(buyer, lambda)`.
    pub fn upstream_into(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.up_offsets[i]..self.up_offsets[i + 1];
        r.map(move |e| (self.up_buyer[e] as usize, self.up_lambda[e]))
    }

    /// Number of input groups of buyer `i` (essential sectors plus the
    /// pooled non-essential group, if present).
    pub fn group_count(&self, i: usize) -> usize {
        self.group_offsets[i + 1] - self.group_offsets[i]
    }

    pub fn total_groups(&self) -> usize {
        self.group_end.len()
    }

    /// Input groups of buyer `i`: dense supplier sector (`None` for the
    /// pooled non-essential group) and position in
    /// [`CascadeState::pi_tilde`].
    pub fn groups_of(&self, i: usize) -> impl Iterator<Item = (Option<usize>, usize)> + '_ {
        (self.group_offsets[i]..self.group_offsets[i + 1])
            .map(move |g| (self.group_sector[g].map(|k| k as usize), g))
    }
}

fn coverage_factor(observed: f64, reported: Option<f64>) -> f64 {
    match reported {
        Some(r) if r > 0.0 => (observed / r).min(1.0),
        _ => 1.0,
    }
}

/// Per-firm cap on the fraction of production still possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousShock(Vec<f64>);

impl ExogenousShock {
    pub fn new(psi: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = psi.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!("psi[{i}] = {v} outside [0, 1]")));
        }
        Ok(ExogenousShock(psi))
    }

    pub fn none(n: usize) -> Self {
        ExogenousShock(vec![1.0; n])
    }

    /// Complete failure of firm `i`, everyone else unconstrained.
    pub fn failure_of(n: usize, i: usize) -> Self {
        let mut psi = vec![1.0; n];
        psi[i] = 0.0;
        ExogenousShock(psi)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeState {
    pub t: usize,
    pub h_d: Vec<f64>,
    pub h_u: Vec<f64>,
    /// Replaceability computed from this state's `h_d`.
    pub sigma: Vec<f64>,
    /// Relative input availability per input group (see
    /// [`ImpactMatrices::groups_of`]) that produced this state; all ones at
    /// `t = 0`.
    pub pi_tilde: Vec<f64>,
}

impl CascadeState {
    pub fn initial(net: &ProductionNetwork, matrices: &ImpactMatrices) -> Self {
        let n = net.len();
        let h_d = vec![1.0; n];
        let sigma = replaceability(net, &h_d);
        CascadeState {
            t: 0,
            h_u: h_d.clone(),
            h_d,
            sigma,
            pi_tilde: vec![1.0; matrices.total_groups()],
        }
    }

    /// `min(h_d, h_u)` per firm.
    pub fn production(&self) -> Vec<f64> {
        self.h_d.iter().zip(&self.h_u).map(|(d, u)| d.min(*u)).collect()
    }
}

/// Replaceability of every firm given downstream production levels:
/// `σ_j = min(1, s_out_j / Σ_{l in sector(j)} s_out_l · h_d_l)`, and 1 when
/// the sector has no surviving output.
pub fn replaceability(net: &ProductionNetwork, h_d: &[f64]) -> Vec<f64> {
    let mut sigma = vec![0.0; net.len()];
    let mut scratch = vec![0.0; net.sectors().len()];
    replaceability_into(net, h_d, &mut scratch, &mut sigma);
    sigma
}

fn replaceability_into(net: &ProductionNetwork, h_d: &[f64], sector_out: &mut [f64], sigma: &mut [f64]) {
    let s_out = net.s_out();
    sector_out.fill(0.0);
    for (i, (&s, &h)) in s_out.iter().zip(h_d).enumerate() {
        sector_out[net.sector_of(i)] += s * h;
    }
    for (i, sg) in sigma.iter_mut().enumerate() {
        let denom = sector_out[net.sector_of(i)];
        *sg = if denom > 0.0 { (s_out[i] / denom).min(1.0) } else { 1.0 };
    }
}

/// Computes the next state from `cur` into `next` and returns the largest
/// per-firm drop of `h_d` or `h_u`.
fn step_into(
    net: &ProductionNetwork,
    m: &ImpactMatrices,
    psi: &[f64],
    cur: &CascadeState,
    next: &mut CascadeState,
    sector_scratch: &mut [f64],
) -> f64 {
    let n = net.len();
    let mut max_drop: f64 = 0.0;
    for i in 0..n {
        let mut h = psi[i];
        let mut start = m.down_offsets[i];
        for g in m.group_offsets[i]..m.group_offsets[i + 1] {
            let end = m.group_end[g];
            let mut loss = 0.0;
            for e in start..end {
                let j = m.down_supplier[e] as usize;
                loss += cur.sigma[j] * m.down_lambda[e] * (1.0 - cur.h_d[j]);
            }
            let avail = (1.0 - loss).clamp(0.0, 1.0);
            next.pi_tilde[g] = avail;
            h = h.min(avail);
            start = end;
        }
        next.h_d[i] = h;

        let mut loss = 0.0;
        for e in m.up_offsets[i]..m.up_offsets[i + 1] {
            loss += m.up_lambda[e] * (1.0 - cur.h_u[m.up_buyer[e] as usize]);
        }
        next.h_u[i] = (1.0 - loss).clamp(0.0, 1.0).min(psi[i]);

        max_drop = max_drop
            .max(cur.h_d[i] - next.h_d[i])
            .max(cur.h_u[i] - next.h_u[i]);
    }
    replaceability_into(net, &next.h_d, sector_scratch, &mut next.sigma);
    next.t = cur.t + 1;
    max_drop
}

/// One synchronous update of the whole network.
pub fn step(
    net: &ProductionNetwork,
    matrices: &ImpactMatrices,
    psi: &ExogenousShock,
    state: &CascadeState,
) -> CascadeState {
    let mut next = state.clone();
    let mut scratch = vec![0.0; net.sectors().len()];
    step_into(net, matrices, psi.values(), state, &mut next, &mut scratch);
    next
}

/// Stepwise cascade driver holding two state buffers.
pub struct Cascade<'a> {
    net: &'a ProductionNetwork,
    matrices: &'a ImpactMatrices,
    psi: &'a [f64],
    cur: CascadeState,
    prev: CascadeState,
    scratch: Vec<f64>,
}

impl<'a> Cascade<'a> {
    pub fn new(net: &'a ProductionNetwork, matrices: &'a ImpactMatrices, psi: &'a ExogenousShock) -> Self {
        assert_eq!(psi.len(), net.len(), "shock vector length");
        assert_eq!(matrices.len(), net.len(), "impact matrices length");
        let cur = CascadeState::initial(net, matrices);
        Cascade {
            net,
            matrices,
            psi: psi.values(),
            prev: cur.clone(),
            cur,
            scratch: vec![0.0; net.sectors().len()],
        }
    }

    pub fn state(&self) -> &CascadeState {
        &self.cur
    }

    pub fn previous(&self) -> &CascadeState {
        &self.prev
    }

    /// Advances one iteration and returns the largest drop of any `h_d` or
    /// `h_u`.
    pub fn advance(&mut self) -> f64 {
        let drop = step_into(
            self.net,
            self.matrices,
            self.psi,
            &self.cur,
            &mut self.prev,
            &mut self.scratch,
        );
        std::mem::swap(&mut self.cur, &mut self.prev);
        drop
    }

    /// Iterates until an update changes no level by more than `epsilon`
    /// and returns the state before that update.
    pub fn run(mut self, epsilon: f64, max_iter: usize) -> CascadeResult {
        // t = 1: the exogenous shock takes effect
        self.advance();
        loop {
            let drop = self.advance();
            if drop <= epsilon {
                return CascadeResult::from_state(self.prev, true);
            }
            if self.prev.t >= max_iter {
                return CascadeResult::from_state(self.prev, false);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeResult {
    /// Final production level `min(h_d, h_u)`.
    pub h: Vec<f64>,
    pub h_d: Vec<f64>,
    pub h_u: Vec<f64>,
    /// Convergence time.
    pub t: usize,
    pub converged: bool,
}

impl CascadeResult {
    fn from_state(s: CascadeState, converged: bool) -> Self {
        CascadeResult {
            h: s.production(),
            h_d: s.h_d,
            h_u: s.h_u,
            t: s.t,
            converged,
        }
    }
}

/// Sparse cascade runner.
///
/// Produces exactly the levels of [`Cascade::run`] but only recomputes a
/// firm when something it reads changed in the previous iteration: the
/// level or replaceability of one of its suppliers (downstream) or the
/// demand level of one of its buyers (upstream). A firm whose inputs are
/// bitwise unchanged would compute the same value again, and every skipped
/// term of a sum is an exact zero, so results are bitwise identical to the
/// full update.
pub struct Engine<'a> {
    net: &'a ProductionNetwork,
    matrices: &'a ImpactMatrices,
    base_sector_out: Vec<f64>,
}

/// Reusable per-thread buffers for [`Engine::run`].
#[derive(Debug, Clone)]
pub struct Workspace {
    h_d: Vec<f64>,
    h_u: Vec<f64>,
    /// Replaceability, kept current for firms with `h_d < 1` only; other
    /// entries are multiplied by zero.
    sigma: Vec<f64>,
    sector_out: Vec<f64>,
    /// Firms whose `h_d` is below 1.
    active: Vec<usize>,
    is_active: Vec<bool>,
    /// Sectors with a member whose `h_d` changed in the last iteration.
    dirty: Vec<usize>,
    sector_dirty: Vec<bool>,
    /// Firms whose `h_d` or `sigma` (resp. `h_u`) changed in the last
    /// iteration.
    changed_d: Vec<usize>,
    in_changed_d: Vec<bool>,
    changed_u: Vec<usize>,
    /// Firms to recompute in the current iteration and their new values.
    work_d: Vec<(usize, f64)>,
    work_u: Vec<(usize, f64)>,
    /// Stamps deduplicating the work lists; `clock` increases across runs.
    clock: usize,
    stamp_d: Vec<usize>,
    stamp_u: Vec<usize>,
    touched: Vec<usize>,
    is_touched: Vec<bool>,
    /// Firms that may ever move on each side: shocked firms, buyers of
    /// firms with `h_d < 1`, suppliers of firms with `h_u < 1`.
    cand_d: Vec<usize>,
    cand_u: Vec<usize>,
    listed_d: Vec<bool>,
    listed_u: Vec<bool>,
    up_moved: Vec<bool>,
}

impl Workspace {
    fn reset(&mut self) {
        for &i in &self.touched {
            self.h_d[i] = 1.0;
            self.h_u[i] = 1.0;
            self.sigma[i] = 0.0;
            self.is_active[i] = false;
            self.up_moved[i] = false;
            self.is_touched[i] = false;
        }
        for &k in &self.dirty {
            self.sector_dirty[k] = false;
        }
        for &i in &self.cand_d {
            self.listed_d[i] = false;
        }
        for &i in &self.cand_u {
            self.listed_u[i] = false;
        }
        self.cand_d.clear();
        self.cand_u.clear();
        self.touched.clear();
        self.active.clear();
        self.dirty.clear();
        for &i in &self.changed_d {
            self.in_changed_d[i] = false;
        }
        self.changed_d.clear();
        self.changed_u.clear();
        self.work_d.clear();
        self.work_u.clear();
    }

    fn touch(&mut self, i: usize) {
        if !self.is_touched[i] {
            self.is_touched[i] = true;
            self.touched.push(i);
        }
    }
}

impl<'a> Engine<'a> {
    pub fn new(net: &'a ProductionNetwork, matrices: &'a ImpactMatrices) -> Self {
        assert_eq!(matrices.len(), net.len(), "impact matrices length");
        let mut base_sector_out = vec![0.0; net.sectors().len()];
        for (i, &s) in net.s_out().iter().enumerate() {
            base_sector_out[net.sector_of(i)] += s * 1.0;
        }
        Engine {
            net,
            matrices,
            base_sector_out,
        }
    }

    pub fn workspace(&self) -> Workspace {
        let n = self.net.len();
        let k = self.base_sector_out.len();
        Workspace {
            h_d: vec![1.0; n],
            h_u: vec![1.0; n],
            sigma: vec![0.0; n],
            sector_out: vec![0.0; k],
            active: Vec::new(),
            is_active: vec![false; n],
            dirty: Vec::new(),
            sector_dirty: vec![false; k],
            changed_d: Vec::new(),
            in_changed_d: vec![false; n],
            changed_u: Vec::new(),
            work_d: Vec::new(),
            work_u: Vec::new(),
            clock: 0,
            stamp_d: vec![0; n],
            stamp_u: vec![0; n],
            touched: Vec::new(),
            is_touched: vec![false; n],
            cand_d: Vec::new(),
            cand_u: Vec::new(),
            listed_d: vec![false; n],
            listed_u: vec![false; n],
            up_moved: vec![false; n],
        }
    }

    /// Same contract as [`Cascade::run`].
    pub fn run(&self, psi: &[f64], epsilon: f64, max_iter: usize, ws: &mut Workspace) -> CascadeResult {
        assert_eq!(psi.len(), self.net.len(), "shock vector length");
        ws.reset();
        ws.sector_out.copy_from_slice(&self.base_sector_out);

        // t = 1: only shocked firms can move
        for (i, &p) in psi.iter().enumerate() {
            if p < 1.0 {
                ws.work_d.push((i, 0.0));
                ws.work_u.push((i, 0.0));
                ws.listed_d[i] = true;
                ws.cand_d.push(i);
                ws.listed_u[i] = true;
                ws.cand_u.push(i);
                ws.touch(i);
            }
        }
        self.compute(psi, ws);
        self.apply(ws);

        let mut t = 1;
        let converged = loop {
            self.schedule(ws);
            let drop = self.compute(psi, ws);
            if drop <= epsilon {
                break true;
            }
            if t >= max_iter {
                break false;
            }
            self.apply(ws);
            t += 1;
        };
        CascadeResult {
            h: ws.h_d.iter().zip(&ws.h_u).map(|(d, u)| d.min(*u)).collect(),
            h_d: ws.h_d.clone(),
            h_u: ws.h_u.clone(),
            t,
            converged,
        }
    }

    /// Refreshes replaceability after the last update and lists the firms
    /// whose inputs changed.
    fn schedule(&self, ws: &mut Workspace) {
        let net = self.net;
        ws.clock += 1;
        let stamp = ws.clock;
        let s_out = net.s_out();
        if !ws.dirty.is_empty() {
            for &k in &ws.dirty {
                let mut sum = 0.0;
                for &l in net.sector_members(k) {
                    sum += s_out[l] * ws.h_d[l];
                }
                ws.sector_out[k] = sum;
            }
            for &j in &ws.active {
                let k = net.sector_of(j);
                if !ws.sector_dirty[k] {
                    continue;
                }
                let denom = ws.sector_out[k];
                let sigma = if denom > 0.0 { (s_out[j] / denom).min(1.0) } else { 1.0 };
                if sigma != ws.sigma[j] {
                    ws.sigma[j] = sigma;
                    if !ws.in_changed_d[j] {
                        ws.in_changed_d[j] = true;
                        ws.changed_d.push(j);
                    }
                }
            }
            for &k in &ws.dirty {
                ws.sector_dirty[k] = false;
            }
            ws.dirty.clear();
        }

        ws.work_d.clear();
        if 4 * ws.changed_d.len() < ws.cand_d.len() {
            for c in 0..ws.changed_d.len() {
                let j = ws.changed_d[c];
                for &b in net.out_edges(j).0 {
                    let b = b as usize;
                    if ws.stamp_d[b] != stamp {
                        ws.stamp_d[b] = stamp;
                        ws.work_d.push((b, 0.0));
                    }
                }
            }
        } else if !ws.changed_d.is_empty() {
            ws.work_d.extend(ws.cand_d.iter().map(|&i| (i, 0.0)));
        }
        for &j in &ws.changed_d {
            ws.in_changed_d[j] = false;
        }
        ws.changed_d.clear();

        ws.work_u.clear();
        if 4 * ws.changed_u.len() < ws.cand_u.len() {
            for c in 0..ws.changed_u.len() {
                let j = ws.changed_u[c];
                for &s in net.in_edges(j).0 {
                    let s = s as usize;
                    if ws.stamp_u[s] != stamp {
                        ws.stamp_u[s] = stamp;
                        ws.work_u.push((s, 0.0));
                    }
                }
            }
        } else if !ws.changed_u.is_empty() {
            ws.work_u.extend(ws.cand_u.iter().map(|&i| (i, 0.0)));
        }
        ws.changed_u.clear();
    }

    /// Evaluates the scheduled firms against the current state and returns
    /// the largest drop.
    fn compute(&self, psi: &[f64], ws: &mut Workspace) -> f64 {
        let m = self.matrices;
        let mut max_drop: f64 = 0.0;
        for w in ws.work_d.iter_mut() {
            let i = w.0;
            let mut h = psi[i];
            let mut start = m.down_offsets[i];
            for g in m.group_offsets[i]..m.group_offsets[i + 1] {
                let end = m.group_end[g];
                let mut loss = 0.0;
                for (&j, &l) in m.down_supplier[start..end].iter().zip(&m.down_lambda[start..end]) {
                    let j = j as usize;
                    loss += ws.sigma[j] * l * (1.0 - ws.h_d[j]);
                }
                h = h.min((1.0 - loss).clamp(0.0, 1.0));
                start = end;
            }
            w.1 = h;
            max_drop = max_drop.max(ws.h_d[i] - h);
        }
        for w in ws.work_u.iter_mut() {
            let i = w.0;
            let r = m.up_offsets[i]..m.up_offsets[i + 1];
            let mut loss = 0.0;
            for (&b, &l) in m.up_buyer[r.clone()].iter().zip(&m.up_lambda[r]) {
                loss += l * (1.0 - ws.h_u[b as usize]);
            }
            let h = (1.0 - loss).clamp(0.0, 1.0).min(psi[i]);
            w.1 = h;
            max_drop = max_drop.max(ws.h_u[i] - h);
        }
        max_drop
    }

    fn apply(&self, ws: &mut Workspace) {
        for c in 0..ws.work_d.len() {
            let (i, h) = ws.work_d[c];
            if h != ws.h_d[i] {
                ws.h_d[i] = h;
                ws.in_changed_d[i] = true;
                ws.changed_d.push(i);
                ws.touch(i);
                let k = self.net.sector_of(i);
                if !ws.sector_dirty[k] {
                    ws.sector_dirty[k] = true;
                    ws.dirty.push(k);
                }
                if h < 1.0 && !ws.is_active[i] {
                    ws.is_active[i] = true;
                    ws.active.push(i);
                    for &b in self.net.out_edges(i).0 {
                        let b = b as usize;
                        if !ws.listed_d[b] {
                            ws.listed_d[b] = true;
                            ws.cand_d.push(b);
                        }
                    }
                }
            }
        }
        for c in 0..ws.work_u.len() {
            let (i, h) = ws.work_u[c];
            if h != ws.h_u[i] {
                ws.h_u[i] = h;
                ws.changed_u.push(i);
                ws.touch(i);
                if !ws.up_moved[i] {
                    ws.up_moved[i] = true;
                    for &s in self.net.in_edges(i).0 {
                        let s = s as usize;
                        if !ws.listed_u[s] {
                            ws.listed_u[s] = true;
                            ws.cand_u.push(s);
                        }
                    }
                }
            }
        }
    }
}

/// Propagates `psi` through the network to a fixed point.
///
/// The returned levels are those at the first iteration `T >= 1` whose
/// successor lowers no firm's `h_d` or `h_u` by more than `epsilon`. If no
/// such iteration occurs by `max_iter`, the state at `max_iter` is returned
/// with `converged = false`.
pub fn run_cascade(
    net: &ProductionNetwork,
    matrices: &ImpactMatrices,
    psi: &ExogenousShock,
    epsilon: f64,
    max_iter: usize,
) -> Result<CascadeResult> {
    check_controls(epsilon, max_iter)?;
    if psi.len() != net.len() {
        return Err(Error::InvalidParameter(format!(
            "shock covers {} firms, network has {}",
            psi.len(),
            net.len()
        )));
    }
    let engine = Engine::new(net, matrices);
    Ok(engine.run(psi.values(), epsilon, max_iter, &mut engine.workspace()))
}

pub(crate) fn check_controls(epsilon: f64, max_iter: usize) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nace::Nace;
    use crate::network::{FirmRecord, RawEdge};
    use crate::prodfun::{assign_scenario, Scenario};

    fn firm(id: &str, code: u16) -> FirmRecord {
        FirmRecord::new(id, Nace::Code(code))
    }

    fn net(firms: Vec<FirmRecord>, edges: &[(&str, &str, f64)]) -> ProductionNetwork {
        let raw: Vec<_> = edges.iter().map(|&(s, b, w)| RawEdge::new(s, b, w)).collect();
        ProductionNetwork::build(firms, &raw).unwrap()
    }

    #[test]
    fn within_sector_essential_shares() {
        let n = net(
            vec![firm("S1", 2410), firm("S2", 2410), firm("B", 2811)],
            &[("S1", "B", 30.0), ("S2", "B", 10.0)],
        );
        let m = ImpactMatrices::build(&n, &assign_scenario(&n, Scenario::Leo));
        assert_eq!(m.downstream(0, 2), Some((0.75, LinkKind::Essential)));
        assert_eq!(m.downstream(1, 2), Some((0.25, LinkKind::Essential)));
        assert_eq!(m.group_count(2), 1);
    }

    #[test]
    fn sole_essential_supplier_has_full_impact() {
        let n = net(
            vec![firm("S1", 2410), firm("S2", 7022), firm("B", 2811)],
            &[("S1", "B", 30.0), ("S2", "B", 10.0)],
        );
        let m = ImpactMatrices::build(&n, &assign_scenario(&n, Scenario::Gl));
        assert_eq!(m.downstream(0, 2), Some((1.0, LinkKind::Essential)));
        assert_eq!(m.downstream(1, 2), Some((0.25, LinkKind::NonEssential)));
        let groups: Vec<_> = m.groups_of(2).map(|(k, _)| k).collect();
        assert_eq!(groups, vec![Some(n.sector_of(0)), None]);
    }

    #[test]
    fn upstream_share_of_sales() {
        let n = net(
            vec![firm("S", 2410), firm("B1", 2811), firm("B2", 2811)],
            &[("S", "B1", 20.0), ("S", "B2", 60.0)],
        );
        let m = ImpactMatrices::build(&n, &assign_scenario(&n, Scenario::Gl));
        assert_eq!(m.upstream(1, 0), Some(0.25));
        assert_eq!(m.upstream(2, 0), Some(0.75));
        assert_eq!(m.upstream(0, 1), None);
    }

    #[test]
    fn coverage_rescaling() {
        let mut firms = vec![firm("S", 2410), firm("B", 2811), firm("C", 2811)];
        firms[0].revenue = Some(100.0);
        firms[1].material_cost = Some(80.0);
        // revenue below observed sales is capped
        firms[1].revenue = Some(10.0);
        let n = net(firms, &[("S", "B", 40.0), ("S", "C", 20.0), ("B", "C", 30.0)]);
        let m = ImpactMatrices::build(&n, &assign_scenario(&n, Scenario::Leo)).rescale_for_coverage(&n);
        // S sells 60 of revenue 100
        assert!((m.upstream(1, 0).unwrap() - 40.0 / 60.0 * 0.6).abs() < 1e-15);
        assert!((m.upstream(2, 0).unwrap() - 20.0 / 60.0 * 0.6).abs() < 1e-15);
        // B buys 40 of material cost 80
        assert_eq!(m.downstream(0, 1).unwrap().0, 0.5);
        // capped at 1
        assert_eq!(m.upstream(2, 1), Some(1.0));
        // C has no accounting data
        assert_eq!(m.downstream(0, 2).unwrap().0, 1.0);
    }

    #[test]
    fn replaceability_examples() {
        // ten firms of equal size in one sector
        let firms: Vec<_> = (0..11)
            .map(|i| firm(&format!("s{i}"), if i < 10 { 2410 } else { 2811 }))
            .collect();
        let edges: Vec<_> = (0..10)
            .map(|i| RawEdge::new(format!("s{i}"), "s10", 5.0))
            .collect();
        let n = ProductionNetwork::build(firms, &edges).unwrap();
        let sigma = replaceability(&n, &[1.0; 11]);
        assert!((sigma[0] - 0.1).abs() < 1e-15);
        // the buyer is alone in its sector and sells nothing
        assert_eq!(sigma[10], 1.0);

        let n = net(
            vec![firm("big", 2410), firm("small", 2410), firm("B", 2811)],
            &[("big", "B", 60.0), ("small", "B", 40.0)],
        );
        let sigma = replaceability(&n, &[0.0, 1.0, 1.0]);
        assert_eq!(sigma[0], 1.0);
        let sigma = replaceability(&n, &[0.0, 0.0, 1.0]);
        assert_eq!(sigma[0], 1.0);
        assert_eq!(sigma[1], 1.0);
    }

    #[test]
    fn worked_replaceability_example() {
        // supplier with 10% market share, half of the buyer's essential input
        let mut firms: Vec<_> = (0..10).map(|i| firm(&format!("s{i}"), 2410)).collect();
        firms.push(firm("other", 2410));
        firms.push(firm("B", 2811));
        firms.push(firm("X", 2811));
        let mut edges = vec![RawEdge::new("s0", "B", 5.0), RawEdge::new("other", "B", 5.0)];
        for i in 1..10 {
            edges.push(RawEdge::new(format!("s{i}"), "X", 5.0));
        }
        edges.push(RawEdge::new("other", "X", 0.0));
        let n = ProductionNetwork::build(firms, &edges).unwrap();
        let m = ImpactMatrices::build(&n, &assign_scenario(&n, Scenario::Leo));
        let mut state = CascadeState::initial(&n, &m);
        // market share of s0 is 5 / 55 here, so pin sigma directly
        state.h_d[0] = 0.8;
        state.sigma[0] = 0.1;
        let next = step(&n, &m, &ExogenousShock::none(n.len()), &state);
        assert!((next.h_d[11] - 0.99).abs() < 1e-12);
    }

    #[test]
    fn no_shock_is_a_fixed_point() {
        let n = net(
            vec![firm("A", 2410), firm("B", 2811), firm("C", 4711)],
            &[("A", "B", 3.0), ("B", "C", 4.0), ("C", "A", 1.0)],
        );
        let m = ImpactMatrices::build(&n, &assign_scenario(&n, Scenario::Gl));
        let s0 = CascadeState::initial(&n, &m);
        let s1 = step(&n, &m, &ExogenousShock::none(3), &s0);
        assert_eq!(s1.h_d, s0.h_d);
        assert_eq!(s1.h_u, s0.h_u);
        assert_eq!(s1.t, 1);

        let r = run_cascade(&n, &m, &ExogenousShock::none(3), DEFAULT_EPSILON, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(r.t, 1);
        assert!(r.converged);
        assert_eq!(r.h, vec![1.0; 3]);
    }

    #[test]
    fn two_firm_leontief_chain_fails_in_one_step() {
        let n = net(vec![firm("A", 2410), firm("B", 2811)], &[("A", "B", 5.0)]);
        let m = ImpactMatrices::build(&n, &assign_scenario(&n, Scenario::Leo));
        let psi = ExogenousShock::failure_of(2, 0);
        let s1 = step(&n, &m, &psi, &CascadeState::initial(&n, &m));
        assert_eq!(s1.h_d, vec![0.0, 1.0]);
        assert_eq!(s1.sigma[0], 1.0);
        let s2 = step(&n, &m, &psi, &s1);
        assert_eq!(s2.h_d[1], 0.0);
    }

    #[test]
    fn five_firm_chain() {
        let codes = [1000, 2000, 3000, 4000, 4500];
        let firms: Vec<_> = codes
            .iter()
            .enumerate()
            .map(|(i, &c)| firm(&format!("c{i}"), c))
            .collect();
        let n = net(
            firms,
            &[("c0", "c1", 5.0), ("c1", "c2", 4.0), ("c2", "c3", 3.0), ("c3", "c4", 2.0)],
        );
        let m = ImpactMatrices::build(&n, &assign_scenario(&n, Scenario::Leo));
        let r = run_cascade(&n, &m, &ExogenousShock::failure_of(5, 0), DEFAULT_EPSILON, DEFAULT_MAX_ITER)
            .unwrap();
        assert!(r.converged);
        assert!(r.t <= 6);
        assert_eq!(r.h, vec![0.0; 5]);
    }

    #[test]
    fn firm_without_inputs_follows_psi() {
        let n = net(vec![firm("A", 2410), firm("B", 2811)], &[("A", "B", 5.0)]);
        let m = ImpactMatrices::build(&n, &assign_scenario(&n, Scenario::Leo));
        let psi = ExogenousShock::new(vec![0.4, 1.0]).unwrap();
        let r = run_cascade(&n, &m, &psi, 1e-9, 100).unwrap();
        assert_eq!(r.h_d[0], 0.4);
        // A's only buyer is unaffected upstream, but A itself is capped by psi
        assert_eq!(r.h_u[0], 0.4);
        assert_eq!(r.h_d[1], 0.4);
        // B sells nothing, so its demand side is governed by psi alone
        assert_eq!(r.h_u[1], 1.0);
    }

    #[test]
    fn upstream_keeps_unobserved_demand() {
        let mut firms = vec![firm("S", 2410), firm("B", 2811)];
        firms[0].revenue = Some(20.0);
        let n = net(firms, &[("S", "B", 5.0)]);
        let m = ImpactMatrices::build(&n, &assign_scenario(&n, Scenario::Lin)).rescale_for_coverage(&n);
        let r = run_cascade(&n, &m, &ExogenousShock::failure_of(2, 1), 1e-9, 100).unwrap();
        assert!((r.h_u[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn max_iter_exhaustion_is_flagged() {
        let firms: Vec<_> = (0..6).map(|i| firm(&format!("c{i}"), 1000 + 100 * i as u16)).collect();
        let n = net(
            firms,
            &[("c0", "c1", 1.0), ("c1", "c2", 1.0), ("c2", "c3", 1.0), ("c3", "c4", 1.0), ("c4", "c5", 1.0)],
        );
        let m = ImpactMatrices::build(&n, &assign_scenario(&n, Scenario::Leo));
        let r = run_cascade(&n, &m, &ExogenousShock::failure_of(6, 0), 1e-2, 2).unwrap();
        assert!(!r.converged);
        assert_eq!(r.t, 2);
        assert_eq!(r.h[2], 1.0);
    }

    #[test]
    fn invalid_controls_rejected() {
        let n = net(vec![firm("A", 2410)], &[]);
        let m = ImpactMatrices::build(&n, &assign_scenario(&n, Scenario::Gl));
        let psi = ExogenousShock::none(1);
        assert!(run_cascade(&n, &m, &psi, 0.0, 10).is_err());
        assert!(run_cascade(&n, &m, &psi, 0.1, 0).is_err());
        assert!(ExogenousShock::new(vec![1.2]).is_err());
        assert!(run_cascade(&n, &m, &ExogenousShock::none(2), 0.1, 10).is_err());
    }

    #[test]
    fn sparse_engine_matches_full_update_bitwise() {
        use crate::synth::{generate_synthetic, SyntheticConfig};
        for seed in 0..6 {
            let cfg = SyntheticConfig {
                n_firms: 150,
                n_sectors: 10,
                coverage: if seed % 2 == 0 { 1.0 } else { 0.6 },
                ..Default::default()
            };
            let (firms, edges) = generate_synthetic(&cfg, seed).unwrap();
            let n = ProductionNetwork::build(firms, &edges).unwrap();
            for sc in Scenario::ALL {
                let m = ImpactMatrices::build(&n, &assign_scenario(&n, sc)).rescale_for_coverage(&n);
                let engine = Engine::new(&n, &m);
                let mut ws = engine.workspace();
                for f in (0..n.len()).step_by(7) {
                    let mut psi = vec![1.0; n.len()];
                    psi[f] = 0.0;
                    psi[(f * 13 + 5) % n.len()] = 0.5;
                    let shock = ExogenousShock::new(psi.clone()).unwrap();
                    for (eps, cap) in [(1e-2, 1000), (1e-9, 1000), (1e-9, 3)] {
                        let full = Cascade::new(&n, &m, &shock).run(eps, cap);
                        let sparse = engine.run(&psi, eps, cap, &mut ws);
                        assert_eq!(full, sparse, "seed {seed} {sc} firm {f} eps {eps}");
                    }
                }
            }
        }
    }
}
