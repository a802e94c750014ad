//! Seeded generator for synthetic production networks.
//!
//! Edges follow a Chung-Lu style model: every firm draws a Pareto distributed
//! out- and in-fitness, and each edge picks its supplier and buyer with
//! probability proportional to those fitnesses, which yields heavy-tailed
//! degree distributions. Volumes are log-normal.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nace::Nace;
use crate::network::{FirmRecord, RawEdge};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_firms: usize,
    pub n_sectors: usize,
    pub mean_out_degree: f64,
    /// Tail exponent of the fitness distribution driving degrees (> 2).
    pub degree_exponent: f64,
    /// Location of the log-normal edge volume distribution.
    pub weight_mu: f64,
    /// Scale of the log-normal edge volume distribution.
    pub weight_sigma: f64,
    /// Fraction of sectors placed in divisions 01-45.
    pub physical_share: f64,
    /// Fraction of firms without an industry code.
    pub unclassified_share: f64,
    /// Observed share of revenue and material cost; revenue is synthesized
    /// as `s_out / coverage` and material cost as `s_in / coverage`.
    pub coverage: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_firms: 1000,
            n_sectors: 50,
            mean_out_degree: 5.0,
            degree_exponent: 2.5,
            weight_mu: 0.0,
            weight_sigma: 1.5,
            physical_share: 0.5,
            unclassified_share: 0.02,
            coverage: 1.0,
        }
    }
}

const PHYSICAL_DIVISIONS: u16 = 45;
const SERVICE_DIVISIONS: u16 = 54;

impl SyntheticConfig {
    fn physical_sector_count(&self) -> usize {
        (self.n_sectors as f64 * self.physical_share).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.n_firms == 0 {
            return bad("n_firms must be at least 1");
        }
        if self.n_sectors == 0 {
            return bad("n_sectors must be at least 1");
        }
        if !(self.mean_out_degree.is_finite() && self.mean_out_degree >= 0.0) {
            return bad("mean_out_degree must be finite and non-negative");
        }
        if !(self.degree_exponent.is_finite() && self.degree_exponent > 2.0) {
            return bad("degree_exponent must exceed 2");
        }
        if !(self.weight_mu.is_finite() && self.weight_sigma.is_finite() && self.weight_sigma >= 0.0) {
            return bad("weight distribution parameters must be finite, sigma >= 0");
        }
        if !(0.0..=1.0).contains(&self.physical_share) {
            return bad("physical_share must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.unclassified_share) {
            return bad("unclassified_share must lie in [0, 1]");
        }
        if !(self.coverage > 0.0 && self.coverage <= 1.0) {
            return bad("coverage must lie in (0, 1]");
        }
        let phys = self.physical_sector_count();
        if phys > PHYSICAL_DIVISIONS as usize * 100
            || self.n_sectors - phys > SERVICE_DIVISIONS as usize * 100
        {
            return bad("too many sectors for 4-digit codes");
        }
        Ok(())
    }

    /// Distinct sector codes: the first `physical_sector_count` in divisions
    /// 01-45, the rest in 46-99.
    fn sector_codes(&self) -> Vec<Nace> {
        let phys = self.physical_sector_count();
        (0..self.n_sectors)
            .map(|s| {
                let code = if s < phys {
                    let p = s as u16;
                    (1 + p % PHYSICAL_DIVISIONS) * 100 + p / PHYSICAL_DIVISIONS
                } else {
                    let q = (s - phys) as u16;
                    (46 + q % SERVICE_DIVISIONS) * 100 + q / SERVICE_DIVISIONS
                };
                Nace::Code(code)
            })
            .collect()
    }
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn pick(cum: &[f64], rng: &mut impl Rng) -> usize {
    let u = rng.random::<f64>() * cum[cum.len() - 1];
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

/// Generates firms and edges. The output is a pure function of
/// `(config, seed)`.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<(Vec<FirmRecord>, Vec<RawEdge>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.n_firms;

    let codes = config.sector_codes();
    let naces: Vec<Nace> = (0..n)
        .map(|_| {
            if rng.random::<f64>() < config.unclassified_share {
                Nace::Unclassified
            } else {
                codes[rng.random_range(0..codes.len())]
            }
        })
        .collect();

    let tail = 1.0 / (config.degree_exponent - 1.0);
    let fitness = |rng: &mut ChaCha8Rng| (1.0 - rng.random::<f64>()).powf(-tail);
    let out_fit: Vec<f64> = (0..n).map(|_| fitness(&mut rng)).collect();
    let in_fit: Vec<f64> = (0..n).map(|_| fitness(&mut rng)).collect();
    let out_cum = cumulative(&out_fit);
    let in_cum = cumulative(&in_fit);

    let possible = n.saturating_mul(n - 1);
    let target = ((n as f64 * config.mean_out_degree).round() as usize).min(possible);
    let volume = LogNormal::new(config.weight_mu, config.weight_sigma)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;

    let mut edges: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let max_draws = target.saturating_mul(50).max(1000);
    let mut draws = 0;
    while edges.len() < target && draws < max_draws {
        draws += 1;
        let s = pick(&out_cum, &mut rng);
        let b = pick(&in_cum, &mut rng);
        if s == b || edges.contains_key(&(s, b)) {
            continue;
        }
        edges.insert((s, b), volume.sample(&mut rng));
    }

    let mut s_out = vec![0.0; n];
    let mut s_in = vec![0.0; n];
    for (&(s, b), &w) in &edges {
        s_out[s] += w;
        s_in[b] += w;
    }

    let firms = naces
        .into_iter()
        .enumerate()
        .map(|(i, nace)| FirmRecord {
            id: format!("f{i}"),
            nace,
            revenue: Some(s_out[i] / config.coverage),
            material_cost: Some(s_in[i] / config.coverage),
        })
        .collect::<Vec<_>>();
    let edges = edges
        .into_iter()
        .map(|((s, b), w)| RawEdge::new(firms[s].id.clone(), firms[b].id.clone(), w))
        .collect();
    Ok((firms, edges))
}
