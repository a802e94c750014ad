//! Statistics over ESRI vectors and the sector-shock comparison.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use crate::cascade::{run_cascade, ExogenousShock, ImpactMatrices};
use crate::error::{Error, Result};
use crate::esri::EsriVector;
use crate::nace::Nace;
use crate::network::ProductionNetwork;

/// Threshold levels used for the large-observation counts.
pub const DEFAULT_THRESHOLDS: [f64; 7] = [0.41, 0.22, 0.1, 0.05, 1e-2, 1e-3, 1e-4];
pub const DEFAULT_PLATEAU_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedFirm {
    pub rank: usize,
    pub firm_id: String,
    pub esri: f64,
}

/// ESRI values in descending order; rank 1 is the riskiest firm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankProfile {
    pub entries: Vec<RankedFirm>,
}

impl RankProfile {
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.esri)
    }
}

/// Sorts descending by value; ties keep ascending firm id order.
pub fn rank_profile(ids: &[String], values: &[f64]) -> Result<RankProfile> {
    if values.is_empty() {
        return Err(Error::InsufficientData("empty ESRI vector".into()));
    }
    assert_eq!(ids.len(), values.len());
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then_with(|| ids[a].cmp(&ids[b])));
    Ok(RankProfile {
        entries: order
            .into_iter()
            .enumerate()
            .map(|(r, i)| RankedFirm {
                rank: r + 1,
                firm_id: ids[i].clone(),
                esri: values[i],
            })
            .collect(),
    })
}

pub fn rank_esri(esri: &EsriVector) -> Result<RankProfile> {
    rank_profile(&esri.firm_ids, &esri.values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Plateau {
    pub size: usize,
    pub level: f64,
    pub rel_tol: f64,
}

/// The longest prefix of the profile within `rel_tol` of the top value.
pub fn detect_plateau(profile: &RankProfile, rel_tol: f64) -> Result<Plateau> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::InvalidParameter(format!("rel_tol must lie in (0, 1), got {rel_tol}")));
    }
    let top = profile
        .entries
        .first()
        .ok_or_else(|| Error::InsufficientData("empty profile".into()))?
        .esri;
    let cutoff = (1.0 - rel_tol) * top;
    let size = profile.values().take_while(|&v| v >= cutoff).count();
    let level = profile.values().take(size).sum::<f64>() / size as f64;
    Ok(Plateau { size, level, rel_tol })
}

/// Number of values strictly above each threshold. Thresholds must be
/// sorted descending.
pub fn count_above_thresholds(values: &[f64], thresholds: &[f64]) -> Result<Vec<usize>> {
    if thresholds.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidParameter("thresholds must be sorted descending".into()));
    }
    Ok(thresholds
        .iter()
        .map(|&t| values.iter().filter(|&&v| v > t).count())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLawFit {
    /// Exponent of the density, `p(x) ~ x^-alpha_hat`.
    pub alpha_hat: f64,
    /// Exponent of the complementary cumulative distribution, `alpha_hat - 1`.
    pub ccdf_exponent: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub n_used: usize,
    /// Fraction of all values inside the window.
    pub coverage: f64,
}

/// Maximum likelihood power-law exponent over values in `[x_min, x_max]`:
/// `1 + n / Σ ln(x_i / x_min)`.
pub fn fit_powerlaw_mle(values: &[f64], x_min: f64, x_max: f64) -> Result<PowerLawFit> {
    if !(x_min > 0.0 && x_min.is_finite()) {
        return Err(Error::InvalidParameter(format!("x_min must be positive, got {x_min}")));
    }
    if !(x_max > x_min) {
        return Err(Error::InvalidParameter(format!("x_max ({x_max}) must exceed x_min ({x_min})")));
    }
    let mut n = 0usize;
    let mut log_sum = 0.0;
    for &v in values.iter().filter(|&&v| v >= x_min && v <= x_max) {
        n += 1;
        log_sum += (v / x_min).ln();
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} values inside the fitting window")));
    }
    if log_sum <= 0.0 {
        return Err(Error::InsufficientData("all values equal x_min; exponent is infinite".into()));
    }
    let alpha_hat = 1.0 + n as f64 / log_sum;
    Ok(PowerLawFit {
        alpha_hat,
        ccdf_exponent: alpha_hat - 1.0,
        x_min,
        x_max,
        n_used: n,
        coverage: n as f64 / values.len() as f64,
    })
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx.sqrt() * syy.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YearComparison {
    /// `None` when either side is constant.
    pub pearson: Option<f64>,
    pub pearson_log: Option<f64>,
    pub matched: usize,
    /// Matched firms left out of the log correlation for a zero value.
    pub log_excluded: usize,
}

/// Correlation of two ESRI vectors over the firms they share.
pub fn year_over_year(
    ids_a: &[String],
    values_a: &[f64],
    ids_b: &[String],
    values_b: &[f64],
) -> Result<YearComparison> {
    let lookup: HashMap<&str, f64> = ids_b.iter().map(String::as_str).zip(values_b.iter().copied()).collect();
    let (mut xa, mut xb) = (Vec::new(), Vec::new());
    for (id, &va) in ids_a.iter().zip(values_a) {
        if let Some(&vb) = lookup.get(id.as_str()) {
            xa.push(va);
            xb.push(vb);
        }
    }
    if xa.len() < 3 {
        return Err(Error::InsufficientData(format!("only {} firms in common", xa.len())));
    }
    let (la, lb): (Vec<f64>, Vec<f64>) = xa
        .iter()
        .zip(&xb)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .unzip();
    Ok(YearComparison {
        pearson: pearson(&xa, &xb),
        pearson_log: pearson(&la, &lb),
        matched: xa.len(),
        log_excluded: xa.len() - la.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_used: usize,
    pub excluded: usize,
}

/// Least-squares fit of `ln(esri)` on `ln(strength)` over firms where both
/// are positive.
pub fn strength_esri_fit(esri: &[f64], strength: &[f64]) -> Result<LogLogFit> {
    assert_eq!(esri.len(), strength.len());
    let (x, y): (Vec<f64>, Vec<f64>) = strength
        .iter()
        .zip(esri)
        .filter(|(s, e)| **s > 0.0 && **e > 0.0)
        .map(|(s, e)| (s.ln(), e.ln()))
        .unzip();
    if x.len() < 3 {
        return Err(Error::InsufficientData(format!("{} firms with positive ESRI and strength", x.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(&y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= f64::EPSILON * n * mx.abs().max(1.0) {
        return Err(Error::InsufficientData("strength is constant across firms".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(LogLogFit {
        slope,
        intercept,
        r_squared,
        n_used: x.len(),
        excluded: esri.len() - x.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    Input,
    Customer,
}

fn neighbour_sectors(net: &ProductionNetwork, firm: usize, direction: Direction) -> BTreeSet<Nace> {
    let (nbrs, _) = match direction {
        Direction::Input => net.in_edges(firm),
        Direction::Customer => net.out_edges(firm),
    };
    nbrs.iter().map(|&j| net.nace_of(j as usize)).collect()
}

fn jaccard(a: &BTreeSet<Nace>, b: &BTreeSet<Nace>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

/// Jaccard index of the supplier (or customer) sector sets of two firms;
/// 0 when both are empty.
pub fn jaccard_overlap(net: &ProductionNetwork, a: usize, b: usize, direction: Direction) -> f64 {
    jaccard(&neighbour_sectors(net, a, direction), &neighbour_sectors(net, b, direction))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapStats {
    /// Firms of the sector with at least one neighbour sector.
    pub firms: usize,
    pub pairs: usize,
    pub disjoint_pairs: usize,
}

impl OverlapStats {
    pub fn disjoint_fraction(&self) -> f64 {
        if self.pairs == 0 {
            0.0
        } else {
            self.disjoint_pairs as f64 / self.pairs as f64
        }
    }
}

/// Among firms of `sector` with a non-empty neighbour sector set, counts the
/// pairs whose sets do not intersect.
pub fn sector_overlap_stats(net: &ProductionNetwork, sector: Nace, direction: Direction) -> OverlapStats {
    let sets: Vec<BTreeSet<Nace>> = net
        .sector_position(sector)
        .map(|k| net.sector_members(k))
        .unwrap_or(&[])
        .iter()
        .map(|&i| neighbour_sectors(net, i, direction))
        .filter(|s| !s.is_empty())
        .collect();
    let mut stats = OverlapStats {
        firms: sets.len(),
        pairs: 0,
        disjoint_pairs: 0,
    };
    for (i, a) in sets.iter().enumerate() {
        for b in &sets[i + 1..] {
            stats.pairs += 1;
            if a.is_disjoint(b) {
                stats.disjoint_pairs += 1;
            }
        }
    }
    stats
}

/// One firm-level shock scenario: `(firm index, psi)` pairs.
pub type FirmShock = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectorShockReport {
    pub shocked_sector: Nace,
    pub magnitude: f64,
    /// Sectors in report order.
    pub sectors: Vec<Nace>,
    /// Output share lost per sector under the homogeneous sector shock.
    pub received_ref: Vec<f64>,
    /// `received[s][k]`: output share lost by sector `k` under firm scenario `s`.
    pub received: Vec<Vec<f64>>,
    /// `rel_dev[s][k] = received[s][k] / received_ref[k]`, 1 where both are
    /// zero and infinite where only the reference is zero.
    pub rel_dev: Vec<Vec<f64>>,
    /// Pearson correlation of each pair of firm scenarios' deviation
    /// vectors, over sectors where all deviations are finite.
    pub deviation_correlation: Vec<Vec<Option<f64>>>,
    pub converged: bool,
}

fn received_shock(net: &ProductionNetwork, h: &[f64]) -> Vec<f64> {
    let mut lost = vec![0.0; net.sectors().len()];
    let mut out = vec![0.0; net.sectors().len()];
    for i in 0..net.len() {
        let k = net.sector_of(i);
        lost[k] += net.s_out()[i] * (1.0 - h[i]);
        out[k] += net.s_out()[i];
    }
    lost.iter()
        .zip(&out)
        .map(|(l, o)| if *o > 0.0 { (l / o).clamp(0.0, 1.0) } else { 0.0 })
        .collect()
}

/// Compares a homogeneous shock of size `magnitude` on every firm of
/// `sector` with firm-level shocks of the same size measured in sector
/// strength, and reports the output share lost by every sector.
pub fn sector_shock_experiment(
    net: &ProductionNetwork,
    matrices: &ImpactMatrices,
    sector: Nace,
    magnitude: f64,
    firm_scenarios: &[FirmShock],
    epsilon: f64,
    max_iter: usize,
) -> Result<SectorShockReport> {
    let k = net
        .sector_position(sector)
        .ok_or_else(|| Error::InvalidParameter(format!("sector {sector} has no firms")))?;
    if !(magnitude > 0.0 && magnitude <= 1.0) {
        return Err(Error::InvalidParameter(format!("magnitude must lie in (0, 1], got {magnitude}")));
    }
    let strength: Vec<f64> = net.s_in().iter().zip(net.s_out()).map(|(a, b)| a + b).collect();
    let members = net.sector_members(k);
    let sector_strength: f64 = members.iter().map(|&i| strength[i]).sum();
    let required = magnitude * sector_strength;

    let n = net.len();
    let mut psi_sets = Vec::with_capacity(firm_scenarios.len() + 1);
    let mut reference = vec![1.0; n];
    for &i in members {
        reference[i] = 1.0 - magnitude;
    }
    psi_sets.push(reference);
    for (s, scenario) in firm_scenarios.iter().enumerate() {
        let mut psi = vec![1.0; n];
        for &(i, p) in scenario {
            if i >= n || net.sector_of(i) != k {
                return Err(Error::InvalidParameter(format!(
                    "scenario {}: firm {} is not in sector {sector}",
                    s + 1,
                    net.firms().get(i).map_or("?", |f| f.id.as_str())
                )));
            }
            psi[i] = p;
        }
        let computed: f64 = members.iter().map(|&i| strength[i] * (1.0 - psi[i])).sum();
        if (computed - required).abs() > 1e-9 * required.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::ShockSizeMismatch {
                scenario: s + 1,
                computed,
                required,
            });
        }
        psi_sets.push(psi);
    }

    let mut converged = true;
    let mut received = Vec::with_capacity(psi_sets.len());
    for psi in psi_sets {
        let r = run_cascade(net, matrices, &ExogenousShock::new(psi)?, epsilon, max_iter)?;
        converged &= r.converged;
        received.push(received_shock(net, &r.h));
    }
    let received_ref = received.remove(0);

    let rel_dev: Vec<Vec<f64>> = received
        .iter()
        .map(|row| {
            row.iter()
                .zip(&received_ref)
                .map(|(&v, &r)| match (r > 0.0, v > 0.0) {
                    (true, _) => v / r,
                    (false, false) => 1.0,
                    (false, true) => f64::INFINITY,
                })
                .collect()
        })
        .collect();

    let finite: Vec<usize> = (0..net.sectors().len())
        .filter(|&c| rel_dev.iter().all(|row| row[c].is_finite()))
        .collect();
    let deviation_correlation = rel_dev
        .iter()
        .map(|a| {
            rel_dev
                .iter()
                .map(|b| {
                    let xa: Vec<f64> = finite.iter().map(|&c| a[c]).collect();
                    let xb: Vec<f64> = finite.iter().map(|&c| b[c]).collect();
                    pearson(&xa, &xb)
                })
                .collect()
        })
        .collect();

    // report order: ascending by the first firm scenario (or the reference)
    let key = received.first().unwrap_or(&received_ref).clone();
    let mut order: Vec<usize> = (0..net.sectors().len()).collect();
    order.sort_by(|&a, &b| key[a].total_cmp(&key[b]).then(a.cmp(&b)));
    let permute = |v: &[f64]| order.iter().map(|&c| v[c]).collect::<Vec<_>>();

    Ok(SectorShockReport {
        shocked_sector: sector,
        magnitude,
        sectors: order.iter().map(|&c| net.sectors()[c]).collect(),
        received_ref: permute(&received_ref),
        received: received.iter().map(|r| permute(r)).collect(),
        rel_dev: rel_dev.iter().map(|r| permute(r)).collect(),
        deviation_correlation,
        converged,
    })
}
