//! The firm-level production network.
//!
//! A [`ProductionNetwork`] is an immutable weighted digraph in which an edge
//! `i -> j` carries the annual monetary volume supplier `i` delivered to
//! buyer `j`. Edges are stored twice (grouped by supplier and grouped by
//! buyer), each neighbour list sorted by firm index, so every per-firm sum in
//! the crate has a fixed accumulation order.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nace::Nace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmRecord {
    pub id: String,
    pub nace: Nace,
    pub revenue: Option<f64>,
    pub material_cost: Option<f64>,
}

impl FirmRecord {
    pub fn new(id: impl Into<String>, nace: Nace) -> Self {
        FirmRecord {
            id: id.into(),
            nace,
            revenue: None,
            material_cost: None,
        }
    }
}

/// An edge as read from input, addressed by firm id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEdge {
    pub supplier_id: String,
    pub buyer_id: String,
    pub weight: f64,
}

impl RawEdge {
    pub fn new(supplier: impl Into<String>, buyer: impl Into<String>, weight: f64) -> Self {
        RawEdge {
            supplier_id: supplier.into(),
            buyer_id: buyer.into(),
            weight,
        }
    }
}

/// Counts of input edges discarded while building a network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BuildReport {
    pub self_loops: usize,
    pub zero_weight: usize,
    pub merged_parallel: usize,
}

/// Per-firm in-, out- and total strength.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Strength {
    pub s_in: f64,
    pub s_out: f64,
    pub total: f64,
}

/// Compressed adjacency: the neighbours of firm `i` are
/// `targets[offsets[i]..offsets[i + 1]]`.
#[derive(Debug, Clone, Default)]
struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
}

impl Adjacency {
    fn from_sorted(n: usize, triples: impl Iterator<Item = (u32, u32, f64)>) -> Self {
        let mut adj = Adjacency {
            offsets: vec![0; n + 1],
            ..Default::default()
        };
        for (from, to, w) in triples {
            adj.offsets[from as usize + 1] += 1;
            adj.targets.push(to);
            adj.weights.push(w);
        }
        for i in 0..n {
            adj.offsets[i + 1] += adj.offsets[i];
        }
        adj
    }

    fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.targets[r.clone()], &self.weights[r])
    }
}

#[derive(Debug, Clone)]
pub struct ProductionNetwork {
    firms: Vec<FirmRecord>,
    index: HashMap<String, usize>,
    sectors: Vec<Nace>,
    firm_sector: Vec<u32>,
    sector_members: Vec<Vec<usize>>,
    out_adj: Adjacency,
    in_adj: Adjacency,
    s_in: Vec<f64>,
    s_out: Vec<f64>,
    report: BuildReport,
}

impl ProductionNetwork {
    /// Builds a network from firm records and id-addressed edges.
    ///
    /// Zero-weight edges and self-loops are dropped (and counted), parallel
    /// edges are summed.
    pub fn build(firms: Vec<FirmRecord>, raw_edges: &[RawEdge]) -> Result<Self> {
        let mut index = HashMap::with_capacity(firms.len());
        for (i, f) in firms.iter().enumerate() {
            if index.insert(f.id.clone(), i).is_some() {
                return Err(Error::DuplicateFirm(f.id.clone()));
            }
            for (name, v) in [("revenue", f.revenue), ("material_cost", f.material_cost)] {
                if let Some(v) = v {
                    if !(v.is_finite() && v >= 0.0) {
                        return Err(Error::InvalidValue(format!("{name} {v} for firm `{}`", f.id)));
                    }
                }
            }
        }

        let mut report = BuildReport::default();
        let mut merged: BTreeMap<(u32, u32), f64> = BTreeMap::new();
        for e in raw_edges {
            let s = *index
                .get(&e.supplier_id)
                .ok_or_else(|| Error::UnknownFirm(e.supplier_id.clone()))?;
            let b = *index
                .get(&e.buyer_id)
                .ok_or_else(|| Error::UnknownFirm(e.buyer_id.clone()))?;
            if !(e.weight.is_finite() && e.weight >= 0.0) {
                return Err(Error::InvalidValue(format!(
                    "weight {} on edge {} -> {}",
                    e.weight, e.supplier_id, e.buyer_id
                )));
            }
            if e.weight == 0.0 {
                report.zero_weight += 1;
                continue;
            }
            if s == b {
                report.self_loops += 1;
                continue;
            }
            match merged.entry((s as u32, b as u32)) {
                std::collections::btree_map::Entry::Vacant(v) => {
                    v.insert(e.weight);
                }
                std::collections::btree_map::Entry::Occupied(mut o) => {
                    *o.get_mut() += e.weight;
                    report.merged_parallel += 1;
                }
            }
        }
        let edges: Vec<(u32, u32, f64)> = merged.into_iter().map(|((s, b), w)| (s, b, w)).collect();
        Ok(Self::assemble(firms, index, edges, report))
    }

    /// Builds directly from index-addressed edges. Edges must reference
    /// valid indices, be free of self-loops and carry positive weights;
    /// parallel edges are summed.
    pub fn from_indexed(firms: Vec<FirmRecord>, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let raw: Vec<RawEdge> = edges
            .iter()
            .map(|&(s, b, w)| {
                let sid = firms.get(s).map(|f| f.id.clone());
                let bid = firms.get(b).map(|f| f.id.clone());
                match (sid, bid) {
                    (Some(sid), Some(bid)) => Ok(RawEdge::new(sid, bid, w)),
                    _ => Err(Error::UnknownFirm(format!("index {}", s.max(b)))),
                }
            })
            .collect::<Result<_>>()?;
        Self::build(firms, &raw)
    }

    fn assemble(
        firms: Vec<FirmRecord>,
        index: HashMap<String, usize>,
        mut edges: Vec<(u32, u32, f64)>,
        report: BuildReport,
    ) -> Self {
        let n = firms.len();

        let mut sectors: Vec<Nace> = firms.iter().map(|f| f.nace).collect();
        sectors.sort_unstable();
        sectors.dedup();
        let firm_sector: Vec<u32> = firms
            .iter()
            .map(|f| sectors.binary_search(&f.nace).expect("sector present") as u32)
            .collect();
        let mut sector_members = vec![Vec::new(); sectors.len()];
        for (i, &k) in firm_sector.iter().enumerate() {
            sector_members[k as usize].push(i);
        }

        // edges arrive sorted by (supplier, buyer)
        let out_adj = Adjacency::from_sorted(n, edges.iter().copied());
        edges.sort_unstable_by_key(|&(s, b, _)| (b, s));
        let in_adj = Adjacency::from_sorted(n, edges.iter().map(|&(s, b, w)| (b, s, w)));

        let s_out = (0..n).map(|i| out_adj.row(i).1.iter().sum()).collect();
        let s_in = (0..n).map(|i| in_adj.row(i).1.iter().sum()).collect();

        ProductionNetwork {
            firms,
            index,
            sectors,
            firm_sector,
            sector_members,
            out_adj,
            in_adj,
            s_in,
            s_out,
            report,
        }
    }

    pub fn len(&self) -> usize {
        self.firms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.firms.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.out_adj.targets.len()
    }

    pub fn firms(&self) -> &[FirmRecord] {
        &self.firms
    }

    pub fn firm(&self, i: usize) -> &FirmRecord {
        &self.firms[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn build_report(&self) -> BuildReport {
        self.report
    }

    /// Distinct sectors present, sorted.
    pub fn sectors(&self) -> &[Nace] {
        &self.sectors
    }

    /// Dense sector index of firm `i` into [`sectors`](Self::sectors).
    pub fn sector_of(&self, i: usize) -> usize {
        self.firm_sector[i] as usize
    }

    pub fn nace_of(&self, i: usize) -> Nace {
        self.firms[i].nace
    }

    pub fn sector_position(&self, nace: Nace) -> Option<usize> {
        self.sectors.binary_search(&nace).ok()
    }

    /// Member firm indices of the sector at dense index `k`, ascending.
    pub fn sector_members(&self, k: usize) -> &[usize] {
        &self.sector_members[k]
    }

    /// `(nace, members)` for every sector.
    pub fn sector_index(&self) -> impl Iterator<Item = (Nace, &[usize])> {
        self.sectors
            .iter()
            .zip(&self.sector_members)
            .map(|(n, m)| (*n, m.as_slice()))
    }

    /// Buyers of `i` and the volumes delivered to them, by buyer index.
    pub fn out_edges(&self, i: usize) -> (&[u32], &[f64]) {
        self.out_adj.row(i)
    }

    /// Suppliers of `i` and the volumes received from them, by supplier index.
    pub fn in_edges(&self, i: usize) -> (&[u32], &[f64]) {
        self.in_adj.row(i)
    }

    /// All edges as `(supplier, buyer, weight)`, supplier-major.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.len()).flat_map(move |i| {
            let (t, w) = self.out_edges(i);
            t.iter().zip(w).map(move |(&j, &w)| (i, j as usize, w))
        })
    }

    pub fn weight(&self, supplier: usize, buyer: usize) -> Option<f64> {
        let (t, w) = self.out_edges(supplier);
        t.binary_search(&(buyer as u32)).ok().map(|p| w[p])
    }

    pub fn total_weight(&self) -> f64 {
        self.out_adj.weights.iter().sum()
    }

    pub fn s_in(&self) -> &[f64] {
        &self.s_in
    }

    pub fn s_out(&self) -> &[f64] {
        &self.s_out
    }

    pub fn strengths(&self) -> Vec<Strength> {
        self.s_in
            .iter()
            .zip(&self.s_out)
            .map(|(&s_in, &s_out)| Strength {
                s_in,
                s_out,
                total: s_in + s_out,
            })
            .collect()
    }

    /// Per-firm input totals by supplier sector: row `j` lists
    /// `(sector, Σ_i W_ij)` over suppliers `i` in that sector, sorted by
    /// sector.
    pub fn input_matrix(&self) -> Vec<Vec<(Nace, f64)>> {
        (0..self.len()).map(|j| self.input_row(j)).collect()
    }

    pub fn input_row(&self, j: usize) -> Vec<(Nace, f64)> {
        let (src, w) = self.in_edges(j);
        let mut row: BTreeMap<Nace, f64> = BTreeMap::new();
        for (&i, &w) in src.iter().zip(w) {
            *row.entry(self.nace_of(i as usize)).or_insert(0.0) += w;
        }
        row.into_iter().collect()
    }

    /// Share of each firm's out-strength within its own sector.
    pub fn market_shares(&self) -> Vec<f64> {
        let mut sector_out = vec![0.0; self.sectors.len()];
        for (i, &k) in self.firm_sector.iter().enumerate() {
            sector_out[k as usize] += self.s_out[i];
        }
        self.firm_sector
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let total = sector_out[k as usize];
                if total > 0.0 {
                    self.s_out[i] / total
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Collapses firms into their sectors, summing volumes between sectors.
    pub fn aggregate_to_sectors(&self) -> SectorNetwork {
        let mut weights = BTreeMap::new();
        for (i, j, w) in self.edges() {
            *weights
                .entry((self.sector_of(i), self.sector_of(j)))
                .or_insert(0.0) += w;
        }
        SectorNetwork {
            sectors: self.sectors.clone(),
            weights,
        }
    }

    /// SHA-256 over firm records and edges, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for f in &self.firms {
            h.update(f.id.as_bytes());
            h.update([0]);
            h.update(f.nace.to_string().as_bytes());
            for v in [f.revenue, f.material_cost] {
                h.update(v.map_or(-1.0f64, |v| v).to_le_bytes());
            }
        }
        for (i, j, w) in self.edges() {
            h.update((i as u64).to_le_bytes());
            h.update((j as u64).to_le_bytes());
            h.update(w.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Inter-sector volumes obtained by aggregating a firm network.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorNetwork {
    pub sectors: Vec<Nace>,
    /// Keyed by dense `(from, to)` sector positions.
    pub weights: BTreeMap<(usize, usize), f64>,
}

impl SectorNetwork {
    pub fn weight(&self, from: Nace, to: Nace) -> f64 {
        let pos = |n| self.sectors.binary_search(&n).ok();
        match (pos(from), pos(to)) {
            (Some(a), Some(b)) => self.weights.get(&(a, b)).copied().unwrap_or(0.0),
            _ => 0.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.weights.values().sum()
    }
}
