//! Test-only helpers: a dense reference cascade written from the model
//! definition without touching the sparse engine, plus fixture generators.

#![allow(dead_code)]

use prodnet::{FirmRecord, Nace, RawEdge, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense model of one network. `w[j][i]` is the volume supplier `j` ships to
/// buyer `i`.
pub struct Dense {
    pub n: usize,
    pub w: Vec<Vec<f64>>,
    pub nace: Vec<Nace>,
    pub revenue: Vec<Option<f64>>,
    pub material_cost: Vec<Option<f64>>,
}

impl Dense {
    pub fn new(firms: &[FirmRecord], edges: &[RawEdge]) -> Dense {
        let n = firms.len();
        let idx = |id: &str| firms.iter().position(|f| f.id == id).unwrap();
        let mut w = vec![vec![0.0; n]; n];
        for e in edges {
            let (j, i) = (idx(&e.supplier_id), idx(&e.buyer_id));
            if j != i {
                w[j][i] += e.weight;
            }
        }
        Dense {
            n,
            w,
            nace: firms.iter().map(|f| f.nace).collect(),
            revenue: firms.iter().map(|f| f.revenue).collect(),
            material_cost: firms.iter().map(|f| f.material_cost).collect(),
        }
    }

    pub fn s_out(&self, j: usize) -> f64 {
        self.w[j].iter().sum()
    }

    pub fn s_in(&self, i: usize) -> f64 {
        (0..self.n).map(|j| self.w[j][i]).sum()
    }

    fn physical(nace: Nace) -> bool {
        match nace {
            Nace::Code(c) => (1..=45).contains(&(c / 100)),
            Nace::Unclassified => false,
        }
    }

    /// Whether input from a firm of `supplier` sector is essential to buyer `i`.
    pub fn essential(&self, scenario: Scenario, i: usize, supplier: Nace) -> bool {
        match scenario {
            Scenario::Lin => false,
            Scenario::Leo => true,
            Scenario::Mix => Self::physical(self.nace[i]),
            Scenario::Gl => Self::physical(self.nace[i]) && Self::physical(supplier),
        }
    }

    fn factor(observed: f64, reported: Option<f64>) -> f64 {
        match reported {
            Some(r) if r > 0.0 => (observed / r).min(1.0),
            _ => 1.0,
        }
    }

    /// Downstream coefficient matrix `ld[j][i]`, coverage-rescaled.
    pub fn lambda_down(&self, scenario: Scenario) -> Vec<Vec<f64>> {
        let mut ld = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            let s_in = self.s_in(i);
            let c = Self::factor(s_in, self.material_cost[i]);
            for j in 0..self.n {
                if self.w[j][i] == 0.0 {
                    continue;
                }
                let denom = if self.essential(scenario, i, self.nace[j]) {
                    (0..self.n).filter(|&l| self.nace[l] == self.nace[j]).map(|l| self.w[l][i]).sum()
                } else {
                    s_in
                };
                ld[j][i] = self.w[j][i] / denom * c;
            }
        }
        ld
    }

    /// Upstream coefficient matrix `lu[j][i]`: impact of buyer `j` on supplier `i`.
    pub fn lambda_up(&self) -> Vec<Vec<f64>> {
        let mut lu = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            let s_out = self.s_out(i);
            let c = Self::factor(s_out, self.revenue[i]);
            for j in 0..self.n {
                if self.w[i][j] > 0.0 {
                    lu[j][i] = self.w[i][j] / s_out * c;
                }
            }
        }
        lu
    }

    pub fn sigma(&self, h_d: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|j| {
                let denom: f64 = (0..self.n)
                    .filter(|&l| self.nace[l] == self.nace[j])
                    .map(|l| self.s_out(l) * h_d[l])
                    .sum();
                if denom > 0.0 {
                    (self.s_out(j) / denom).min(1.0)
                } else {
                    1.0
                }
            })
            .collect()
    }

    /// Sequence of `(h_d, h_u)` states for `t = 0, 1, ..., steps`.
    pub fn trajectory(&self, scenario: Scenario, psi: &[f64], steps: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        let ld = self.lambda_down(scenario);
        let lu = self.lambda_up();
        let mut states = vec![(vec![1.0; self.n], vec![1.0; self.n])];
        for _ in 0..steps {
            let (hd, hu) = states.last().unwrap().clone();
            let sigma = self.sigma(&hd);
            let mut nd = vec![0.0; self.n];
            let mut nu = vec![0.0; self.n];
            for i in 0..self.n {
                let mut h = psi[i];
                // essential inputs: one availability per supplier sector
                let mut sectors: Vec<Nace> = (0..self.n)
                    .filter(|&j| ld[j][i] > 0.0 && self.essential(scenario, i, self.nace[j]))
                    .map(|j| self.nace[j])
                    .collect();
                sectors.sort();
                sectors.dedup();
                for k in sectors {
                    let loss: f64 = (0..self.n)
                        .filter(|&j| self.nace[j] == k && ld[j][i] > 0.0)
                        .map(|j| sigma[j] * ld[j][i] * (1.0 - hd[j]))
                        .sum();
                    h = h.min((1.0 - loss).clamp(0.0, 1.0));
                }
                let loss: f64 = (0..self.n)
                    .filter(|&j| ld[j][i] > 0.0 && !self.essential(scenario, i, self.nace[j]))
                    .map(|j| sigma[j] * ld[j][i] * (1.0 - hd[j]))
                    .sum();
                h = h.min((1.0 - loss).clamp(0.0, 1.0));
                nd[i] = h;

                let kept: f64 = (0..self.n).map(|j| lu[j][i] * hu[j]).sum();
                let total: f64 = (0..self.n).map(|j| lu[j][i]).sum();
                nu[i] = (kept + (1.0 - total)).clamp(0.0, 1.0).min(psi[i]);
            }
            states.push((nd, nu));
        }
        states
    }

    /// Runs to the first `T >= 1` whose next update drops no level by more
    /// than `epsilon`; returns `(T, h)` with `h = min(h_d, h_u)` at `T`.
    pub fn run(&self, scenario: Scenario, psi: &[f64], epsilon: f64, max_iter: usize) -> (usize, Vec<f64>, bool) {
        let traj = self.trajectory(scenario, psi, max_iter + 1);
        for t in 1..=max_iter {
            let (a, b) = (&traj[t], &traj[t + 1]);
            let drop = (0..self.n)
                .map(|i| (a.0[i] - b.0[i]).max(a.1[i] - b.1[i]))
                .fold(0.0, f64::max);
            if drop <= epsilon || t == max_iter {
                let h = (0..self.n).map(|i| a.0[i].min(a.1[i])).collect();
                return (t, h, drop <= epsilon);
            }
        }
        unreachable!()
    }

    pub fn esri(&self, scenario: Scenario, firm: usize, epsilon: f64, max_iter: usize) -> f64 {
        let mut psi = vec![1.0; self.n];
        psi[firm] = 0.0;
        let (_, h, _) = self.run(scenario, &psi, epsilon, max_iter);
        let total: f64 = (0..self.n).map(|j| self.s_out(j)).sum();
        let lost: f64 = (0..self.n).map(|j| self.s_out(j) * (1.0 - h[j])).sum();
        lost / total
    }
}

const CODES: [u16; 7] = [111, 111, 2511, 2511, 4120, 4711, 6201];

/// Small random network with mixed physical/service/unclassified sectors
/// and partial accounting coverage.
pub fn random_small(seed: u64, max_n: usize) -> (Vec<FirmRecord>, Vec<RawEdge>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_n);
    let p = rng.random_range(0.2..0.7);
    let mut edges = Vec::new();
    let mut s_out = vec![0.0; n];
    let mut s_in = vec![0.0; n];
    for j in 0..n {
        for i in 0..n {
            if i != j && rng.random::<f64>() < p {
                let w = rng.random_range(0.1..10.0);
                s_out[j] += w;
                s_in[i] += w;
                edges.push(RawEdge::new(format!("f{j}"), format!("f{i}"), w));
            }
        }
    }
    let firms = (0..n)
        .map(|i| {
            let nace = if rng.random::<f64>() < 0.1 {
                Nace::Unclassified
            } else {
                Nace::Code(CODES[rng.random_range(0..CODES.len())])
            };
            let mut f = FirmRecord::new(format!("f{i}"), nace);
            if rng.random::<f64>() < 0.5 {
                f.revenue = Some(s_out[i] / rng.random_range(0.3..1.0));
            }
            if rng.random::<f64>() < 0.5 {
                f.material_cost = Some(s_in[i] / rng.random_range(0.3..1.0));
            }
            f
        })
        .collect();
    (firms, edges)
}
