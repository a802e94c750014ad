//! Economic systemic risk index: the out-strength weighted share of the
//! economy's output lost after a single firm fails.

use rayon::prelude::*;
use serde::Serialize;

use crate::cascade::{check_controls, CascadeResult, Engine, ImpactMatrices, DEFAULT_EPSILON, DEFAULT_MAX_ITER};
use crate::error::{Error, Result};
use crate::network::ProductionNetwork;
use crate::prodfun::{assign_scenario, Scenario};

/// Caveat attached to every ESRI report.
pub const INTERPRETATION_NOTE: &str = "ESRI values assume that neither the inputs supplied by nor the demand of \
the failing firm are replaced by other firms; they rank firms by systemic importance rather than \
forecast the output actually lost.";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunControls {
    pub epsilon: f64,
    pub max_iter: usize,
    pub workers: usize,
}

impl Default for RunControls {
    fn default() -> Self {
        RunControls {
            epsilon: DEFAULT_EPSILON,
            max_iter: DEFAULT_MAX_ITER,
            workers: 1,
        }
    }
}

impl RunControls {
    fn validate(&self) -> Result<()> {
        check_controls(self.epsilon, self.max_iter)?;
        if self.workers == 0 {
            return Err(Error::InvalidParameter("worker count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EsriVector {
    /// `None` when computed from a custom scenario specification.
    pub scenario: Option<Scenario>,
    pub epsilon: f64,
    pub max_iter: usize,
    pub fingerprint: String,
    pub firm_ids: Vec<String>,
    pub values: Vec<f64>,
    /// Convergence time of each firm's cascade.
    pub t: Vec<usize>,
    pub converged: Vec<bool>,
}

impl EsriVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Indices of firms whose cascade hit the iteration cap.
    pub fn non_converged(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.converged[i]).collect()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    pub fn median(&self) -> f64 {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }
}

fn total_output(net: &ProductionNetwork) -> Result<f64> {
    let total: f64 = net.s_out().iter().sum();
    if total > 0.0 {
        Ok(total)
    } else {
        Err(Error::InsufficientData("network has no output; ESRI is undefined".into()))
    }
}

/// Output-weighted loss of the production levels `h`.
pub fn weighted_loss(net: &ProductionNetwork, h: &[f64]) -> Result<f64> {
    let total = total_output(net)?;
    Ok(loss_with_total(net.s_out(), h, total))
}

fn loss_with_total(s_out: &[f64], h: &[f64], total: f64) -> f64 {
    let lost: f64 = s_out.iter().zip(h).map(|(s, h)| s * (1.0 - h)).sum();
    (lost / total).clamp(0.0, 1.0)
}

/// ESRI of `firm` together with the cascade its failure triggers.
pub fn esri_single(
    net: &ProductionNetwork,
    matrices: &ImpactMatrices,
    firm: usize,
    epsilon: f64,
    max_iter: usize,
) -> Result<(f64, CascadeResult)> {
    check_controls(epsilon, max_iter)?;
    if firm >= net.len() {
        return Err(Error::InvalidParameter(format!("firm index {firm} out of range")));
    }
    let total = total_output(net)?;
    let engine = Engine::new(net, matrices);
    let mut psi = vec![1.0; net.len()];
    psi[firm] = 0.0;
    let result = engine.run(&psi, epsilon, max_iter, &mut engine.workspace());
    Ok((loss_with_total(net.s_out(), &result.h, total), result))
}

/// ESRI of every firm, one independent cascade each, spread over
/// `controls.workers` threads. The result does not depend on the worker
/// count.
pub fn esri_all(
    net: &ProductionNetwork,
    matrices: &ImpactMatrices,
    scenario: Option<Scenario>,
    controls: &RunControls,
) -> Result<EsriVector> {
    controls.validate()?;
    let total = total_output(net)?;
    let n = net.len();
    let engine = Engine::new(net, matrices);
    let init = || (engine.workspace(), vec![1.0; n]);
    let run = |(ws, psi): &mut (crate::cascade::Workspace, Vec<f64>), i: usize| {
        psi[i] = 0.0;
        let r = engine.run(psi, controls.epsilon, controls.max_iter, ws);
        psi[i] = 1.0;
        (loss_with_total(net.s_out(), &r.h, total), r.t, r.converged)
    };

    let per_firm: Vec<(f64, usize, bool)> = if controls.workers == 1 {
        let mut state = init();
        (0..n).map(|i| run(&mut state, i)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(controls.workers)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        pool.install(|| (0..n).into_par_iter().map_init(init, run).collect())
    };

    let mut out = EsriVector {
        scenario,
        epsilon: controls.epsilon,
        max_iter: controls.max_iter,
        fingerprint: net.fingerprint(),
        firm_ids: net.firms().iter().map(|f| f.id.clone()).collect(),
        values: Vec::with_capacity(n),
        t: Vec::with_capacity(n),
        converged: Vec::with_capacity(n),
    };
    for (v, t, c) in per_firm {
        out.values.push(v);
        out.t.push(t);
        out.converged.push(c);
    }
    Ok(out)
}

/// Impact matrices for a scenario, coverage-rescaled.
pub fn scenario_matrices(net: &ProductionNetwork, scenario: Scenario) -> ImpactMatrices {
    let spec = assign_scenario(net, scenario);
    ImpactMatrices::build(net, &spec).rescale_for_coverage(net)
}

/// ESRI vectors for LIN, GL, MIX and LEO, in that order.
pub fn scenario_suite(net: &ProductionNetwork, controls: &RunControls) -> Result<Vec<EsriVector>> {
    Scenario::ALL
        .iter()
        .map(|&sc| esri_all(net, &scenario_matrices(net, sc), Some(sc), controls))
        .collect()
}
