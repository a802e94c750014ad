//! Production-function scenarios and generalized Leontief calibration.
//!
//! Every firm's inputs are split into essential categories, which constrain
//! output in the Leontief sense (scarcest input wins), and non-essential
//! ones, which enter linearly on top of the level reachable with essential
//! inputs alone. Pure Leontief and pure linear producers are the two
//! extremes of that split.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::nace::Nace;
use crate::network::ProductionNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scenario {
    /// Every input non-essential.
    Lin,
    /// Every input essential.
    Leo,
    /// Physical producers fully Leontief, everyone else fully linear.
    Mix,
    /// Physical producers treat physical inputs as essential and services as
    /// non-essential; everyone else fully linear.
    Gl,
}

impl Scenario {
    /// Ordered from least to most essential inputs.
    pub const ALL: [Scenario; 4] = [Scenario::Lin, Scenario::Gl, Scenario::Mix, Scenario::Leo];

    pub fn tag(&self) -> &'static str {
        match self {
            Scenario::Lin => "LIN",
            Scenario::Leo => "LEO",
            Scenario::Mix => "MIX",
            Scenario::Gl => "GL",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "lin" => Ok(Scenario::Lin),
            "leo" => Ok(Scenario::Leo),
            "mix" => Ok(Scenario::Mix),
            "gl" => Ok(Scenario::Gl),
            _ => Err(Error::InvalidParameter(format!(
                "unknown scenario `{s}` (expected lin, leo, mix or gl)"
            ))),
        }
    }
}

const UNCLASSIFIED_BIT: u32 = 100;

/// A set of input categories: two-digit divisions `00`..`99` plus the
/// unclassified bucket.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DivisionSet(u128);

impl DivisionSet {
    pub const EMPTY: DivisionSet = DivisionSet(0);
    pub const ALL: DivisionSet = DivisionSet((1u128 << (UNCLASSIFIED_BIT + 1)) - 1);

    /// Divisions 01 to 45.
    pub fn physical() -> Self {
        (1..=45).fold(Self::EMPTY, |s, d| s.with_division(d))
    }

    pub fn with_division(self, d: u8) -> Self {
        assert!(d < 100, "division {d} out of range");
        DivisionSet(self.0 | 1 << d)
    }

    pub fn with_unclassified(self) -> Self {
        DivisionSet(self.0 | 1 << UNCLASSIFIED_BIT)
    }

    pub fn complement(self) -> Self {
        DivisionSet(!self.0 & Self::ALL.0)
    }

    pub fn contains(&self, nace: Nace) -> bool {
        let bit = nace.division().map_or(UNCLASSIFIED_BIT, u32::from);
        self.0 >> bit & 1 == 1
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn intersect(self, other: Self) -> Self {
        DivisionSet(self.0 & other.0)
    }
}

impl fmt::Debug for DivisionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut set = f.debug_set();
        for d in 0..100u32 {
            if self.0 >> d & 1 == 1 {
                set.entry(&format_args!("{d:02}"));
            }
        }
        if self.0 >> UNCLASSIFIED_BIT & 1 == 1 {
            set.entry(&format_args!("{}", crate::nace::UNCLASSIFIED));
        }
        set.finish()
    }
}

/// Per-firm partition of input categories into essential and non-essential.
/// Only the essential set is stored; its complement is non-essential.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    essential: Vec<DivisionSet>,
}

impl ScenarioSpec {
    pub fn from_essential_sets(essential: Vec<DivisionSet>) -> Self {
        ScenarioSpec { essential }
    }

    pub fn len(&self) -> usize {
        self.essential.len()
    }

    pub fn is_empty(&self) -> bool {
        self.essential.is_empty()
    }

    pub fn essential(&self, firm: usize) -> DivisionSet {
        self.essential[firm]
    }

    pub fn non_essential(&self, firm: usize) -> DivisionSet {
        self.essential[firm].complement()
    }

    pub fn is_essential(&self, firm: usize, input: Nace) -> bool {
        self.essential[firm].contains(input)
    }
}

pub fn assign_scenario(net: &ProductionNetwork, scenario: Scenario) -> ScenarioSpec {
    let physical = DivisionSet::physical();
    let essential = net
        .firms()
        .iter()
        .map(|f| match scenario {
            Scenario::Lin => DivisionSet::EMPTY,
            Scenario::Leo => DivisionSet::ALL,
            Scenario::Mix if f.nace.is_physical() => DivisionSet::ALL,
            Scenario::Gl if f.nace.is_physical() => physical,
            Scenario::Mix | Scenario::Gl => DivisionSet::EMPTY,
        })
        .collect();
    ScenarioSpec { essential }
}

/// An essential input category as observed in the calibration network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialInput {
    pub sector: Nace,
    /// Observed input volume `Π_ik(0)`.
    pub observed: f64,
    /// Technical coefficient `Π_ik(0) / x_i(0)`; absent for firms without
    /// output.
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirmParams {
    pub essential_set: DivisionSet,
    /// Observed output `x_i(0)`, the firm's out-strength.
    pub output: f64,
    /// Purchased essential categories, sorted by sector.
    pub essential: Vec<EssentialInput>,
    pub non_essential_total: f64,
    pub total_input: f64,
    /// Fraction of output attainable with essential inputs only.
    pub beta_tilde: f64,
}

impl FirmParams {
    /// Output attainable with the given input volumes per supplier sector.
    ///
    /// Inputs in essential categories the firm never purchased are ignored.
    pub fn evaluate(&self, inputs: &[(Nace, f64)]) -> f64 {
        if self.output == 0.0 {
            return 0.0;
        }
        let available = |sector: Nace| -> f64 {
            inputs
                .iter()
                .filter(|(n, _)| *n == sector)
                .map(|(_, v)| v)
                .sum()
        };

        let leontief = self
            .essential
            .iter()
            .filter_map(|e| e.alpha.map(|a| available(e.sector) / a))
            .fold(f64::INFINITY, f64::min);

        let beta = self.beta_tilde * self.output;
        let linear = if self.total_input > 0.0 {
            let ne: f64 = inputs
                .iter()
                .filter(|(n, _)| !self.essential_set.contains(*n))
                .map(|(_, v)| v)
                .sum();
            // 1/alpha_i with alpha_i = total input / output
            beta + self.output / self.total_input * ne
        } else {
            beta
        };
        leontief.min(linear)
    }

    /// The observed input vector this firm was calibrated on.
    pub fn observed_inputs(&self, net: &ProductionNetwork, firm: usize) -> Vec<(Nace, f64)> {
        net.input_row(firm)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductionParams {
    firms: Vec<FirmParams>,
}

impl ProductionParams {
    pub fn firm(&self, i: usize) -> &FirmParams {
        &self.firms[i]
    }

    pub fn len(&self) -> usize {
        self.firms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.firms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &FirmParams> {
        self.firms.iter()
    }

    pub fn beta_tilde(&self) -> Vec<f64> {
        self.firms.iter().map(|f| f.beta_tilde).collect()
    }
}

/// Calibrates technical coefficients and the essential-input fraction of
/// every firm to the observed network.
pub fn calibrate(net: &ProductionNetwork, spec: &ScenarioSpec) -> ProductionParams {
    assert_eq!(spec.len(), net.len(), "scenario spec does not cover the network");
    let firms = (0..net.len())
        .map(|i| {
            let set = spec.essential(i);
            let output = net.s_out()[i];
            let mut essential = Vec::new();
            let mut ess_total = 0.0;
            let mut ne_total = 0.0;
            for (sector, observed) in net.input_row(i) {
                if set.contains(sector) {
                    ess_total += observed;
                    essential.push(EssentialInput {
                        sector,
                        observed,
                        alpha: (output > 0.0).then(|| observed / output),
                    });
                } else {
                    ne_total += observed;
                }
            }
            let total_input = ess_total + ne_total;
            let beta_tilde = if total_input > 0.0 {
                (ess_total / total_input).clamp(0.0, 1.0)
            } else {
                1.0
            };
            FirmParams {
                essential_set: set,
                output,
                essential,
                non_essential_total: ne_total,
                total_input,
                beta_tilde,
            }
        })
        .collect();
    ProductionParams { firms }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{FirmRecord, RawEdge};
    use proptest::prelude::*;

    fn firm(id: &str, code: u16) -> FirmRecord {
        FirmRecord::new(id, Nace::Code(code))
    }

    #[test]
    fn scenario_parsing() {
        assert_eq!("gl".parse::<Scenario>().unwrap(), Scenario::Gl);
        assert_eq!("LEO".parse::<Scenario>().unwrap(), Scenario::Leo);
        assert!("cobb".parse::<Scenario>().is_err());
        assert_eq!(Scenario::Mix.to_string(), "MIX");
    }

    #[test]
    fn division_set_partition() {
        let phys = DivisionSet::physical();
        let ne = phys.complement();
        assert!(phys.intersect(ne).is_empty());
        assert_eq!(DivisionSet(phys.0 | ne.0), DivisionSet::ALL);
        assert!(phys.contains(Nace::Code(2611)));
        assert!(!phys.contains(Nace::Code(4611)));
        assert!(ne.contains(Nace::Unclassified));
        assert!(ne.contains(Nace::Code(9900)));
    }

    fn two_firms() -> ProductionNetwork {
        let firms = vec![
            firm("M", 2611),
            firm("T", 4711),
            FirmRecord::new("U", Nace::Unclassified),
        ];
        ProductionNetwork::build(firms, &[]).unwrap()
    }

    #[test]
    fn gl_physical_firm() {
        let spec = assign_scenario(&two_firms(), Scenario::Gl);
        assert_eq!(spec.essential(0), DivisionSet::physical());
        assert_eq!(
            spec.non_essential(0),
            DivisionSet::physical().complement()
        );
        assert!(spec.non_essential(0).contains(Nace::Unclassified));
    }

    #[test]
    fn gl_trade_firm_all_non_essential() {
        let spec = assign_scenario(&two_firms(), Scenario::Gl);
        assert_eq!(spec.non_essential(1), DivisionSet::ALL);
        assert_eq!(spec.non_essential(2), DivisionSet::ALL);
    }

    #[test]
    fn lin_and_leo_and_mix() {
        let net = two_firms();
        let lin = assign_scenario(&net, Scenario::Lin);
        let leo = assign_scenario(&net, Scenario::Leo);
        let mix = assign_scenario(&net, Scenario::Mix);
        for i in 0..3 {
            assert!(lin.essential(i).is_empty());
            assert_eq!(leo.essential(i), DivisionSet::ALL);
        }
        assert_eq!(mix.essential(0), DivisionSet::ALL);
        assert!(mix.essential(1).is_empty());
        assert!(mix.essential(2).is_empty());
    }

    /// Buyer with output 100, essential input 40 of steel (2410) and
    /// non-essential consulting (7022) of 10.
    fn steel_consulting() -> (ProductionNetwork, ScenarioSpec) {
        let firms = vec![firm("steel", 2410), firm("cons", 7022), firm("B", 2811), firm("C", 4711)];
        let net = ProductionNetwork::build(
            firms,
            &[
                RawEdge::new("steel", "B", 40.0),
                RawEdge::new("cons", "B", 10.0),
                RawEdge::new("B", "C", 100.0),
            ],
        )
        .unwrap();
        let spec = assign_scenario(&net, Scenario::Gl);
        (net, spec)
    }

    #[test]
    fn calibration_ratios() {
        let (net, spec) = steel_consulting();
        let p = calibrate(&net, &spec);
        let b = p.firm(2);
        assert_eq!(b.output, 100.0);
        assert_eq!(b.essential.len(), 1);
        assert_eq!(b.essential[0].alpha, Some(0.4));
        assert_eq!(b.beta_tilde, 0.8);
        assert_eq!(b.non_essential_total, 10.0);
    }

    #[test]
    fn leo_and_lin_beta_tilde() {
        let (net, _) = steel_consulting();
        let leo = calibrate(&net, &assign_scenario(&net, Scenario::Leo));
        let lin = calibrate(&net, &assign_scenario(&net, Scenario::Lin));
        assert_eq!(leo.firm(2).beta_tilde, 1.0);
        assert_eq!(lin.firm(2).beta_tilde, 0.0);
        assert!(lin.firm(2).essential.is_empty());
        // no inputs at all
        assert_eq!(lin.firm(0).beta_tilde, 1.0);
    }

    #[test]
    fn firm_without_output_has_no_alpha_and_evaluates_to_zero() {
        let (net, spec) = steel_consulting();
        let p = calibrate(&net, &spec);
        let c = p.firm(3);
        assert_eq!(c.output, 0.0);
        assert_eq!(c.evaluate(&net.input_row(3)), 0.0);

        let leo = calibrate(&net, &assign_scenario(&net, Scenario::Leo));
        assert!(leo.firm(3).essential.iter().all(|e| e.alpha.is_none()));
    }

    #[test]
    fn observed_inputs_reproduce_output() {
        let (net, spec) = steel_consulting();
        let p = calibrate(&net, &spec);
        for i in 0..net.len() {
            let x = p.firm(i).evaluate(&net.input_row(i));
            assert!((x - net.s_out()[i]).abs() <= 1e-12 * net.s_out()[i].max(1.0));
        }
    }

    #[test]
    fn pure_leontief_halving() {
        let firms = vec![firm("screws", 2594), firm("wood", 1610), firm("tables", 3101), firm("shop", 4759)];
        let net = ProductionNetwork::build(
            firms,
            &[
                RawEdge::new("screws", "tables", 10.0),
                RawEdge::new("wood", "tables", 30.0),
                RawEdge::new("tables", "shop", 80.0),
            ],
        )
        .unwrap();
        let p = calibrate(&net, &assign_scenario(&net, Scenario::Leo));
        let x = p
            .firm(2)
            .evaluate(&[(Nace::Code(2594), 10.0), (Nace::Code(1610), 15.0)]);
        assert_eq!(x, 40.0);
    }

    #[test]
    fn gl_without_non_essential_inputs_keeps_beta() {
        let (net, spec) = steel_consulting();
        let p = calibrate(&net, &spec);
        let x = p.firm(2).evaluate(&[(Nace::Code(2410), 40.0)]);
        assert!((x - 80.0).abs() < 1e-12);
    }

    #[test]
    fn gl_physical_firm_without_essential_inputs_is_linear() {
        let firms = vec![firm("cons", 7022), firm("B", 2811), firm("C", 4711)];
        let net = ProductionNetwork::build(
            firms,
            &[RawEdge::new("cons", "B", 10.0), RawEdge::new("B", "C", 50.0)],
        )
        .unwrap();
        let p = calibrate(&net, &assign_scenario(&net, Scenario::Gl));
        assert_eq!(p.firm(1).beta_tilde, 0.0);
        assert_eq!(p.firm(1).evaluate(&[(Nace::Code(7022), 5.0)]), 25.0);
    }

    fn random_case() -> impl Strategy<Value = (ProductionNetwork, Scenario)> {
        let n = 10usize;
        (
            prop::collection::vec(prop::sample::select(vec![1071u16, 2611, 2410, 4711, 6201, 7022]), n),
            prop::collection::vec((0..n, 0..n, 0.1f64..50.0), 25),
            prop::sample::select(Scenario::ALL.to_vec()),
        )
            .prop_map(move |(codes, edges, sc)| {
                let firms = codes
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| firm(&format!("f{i}"), c))
                    .collect();
                let edges: Vec<_> = edges.into_iter().filter(|(s, b, _)| s != b).collect();
                (ProductionNetwork::from_indexed(firms, &edges).unwrap(), sc)
            })
    }

    proptest! {
        #[test]
        fn calibration_identity((net, sc) in random_case()) {
            let p = calibrate(&net, &assign_scenario(&net, sc));
            for i in 0..net.len() {
                let x = p.firm(i).evaluate(&net.input_row(i));
                let x0 = net.s_out()[i];
                prop_assert!((x - x0).abs() <= 1e-12 * x0.max(1.0), "firm {} {} vs {}", i, x, x0);
                prop_assert!((0.0..=1.0).contains(&p.firm(i).beta_tilde));
            }
        }

        #[test]
        fn evaluate_is_monotone(
            (net, sc) in random_case(),
            cuts in prop::collection::vec(0.0f64..1.0, 6),
            bump in 0usize..6,
        ) {
            let p = calibrate(&net, &assign_scenario(&net, sc));
            for i in 0..net.len() {
                let row = net.input_row(i);
                let lower: Vec<_> = row
                    .iter()
                    .enumerate()
                    .map(|(k, &(n, v))| (n, v * cuts[k % cuts.len()]))
                    .collect();
                let mut higher = lower.clone();
                if let Some(e) = higher.get_mut(bump % row.len().max(1)) {
                    e.1 += 1.0;
                }
                let f = p.firm(i);
                prop_assert!(f.evaluate(&lower) <= f.evaluate(&higher) + 1e-12);
                prop_assert!(f.evaluate(&lower) <= f.evaluate(&row) + 1e-9);
            }
        }
    }
}
