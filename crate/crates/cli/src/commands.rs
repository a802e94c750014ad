use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use prodnet::analysis::{self, FirmShock, DEFAULT_THRESHOLDS};
use prodnet::esri::INTERPRETATION_NOTE;
use prodnet::io;
use prodnet::{
    esri_all, run_cascade, scenario_matrices, Error, EsriVector, ExogenousShock, Nace, ProductionNetwork,
    RunControls, Scenario, SyntheticConfig,
};
use serde::Serialize;

use crate::{AnalyzeArgs, Cli, Command, GenerateArgs, Global, NetworkArgs, SectorArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(Error),
    NotConverged(usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(e) if e.is_validation() => 1,
            CliError::Data(_) => 2,
            CliError::NotConverged(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Data(e) => write!(f, "{e}"),
            CliError::NotConverged(n) => write!(f, "{n} cascades did not converge within --max-iter"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    if !(g.epsilon > 0.0 && g.epsilon.is_finite()) {
        return Err(CliError::Usage(format!("--epsilon must be positive, got {}", g.epsilon)));
    }
    if g.max_iter == 0 {
        return Err(CliError::Usage("--max-iter must be at least 1".into()));
    }
    if g.workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    fs::create_dir_all(&g.out_dir).map_err(Error::from)?;
    match &cli.command {
        Command::Generate(args) => generate(g, args),
        Command::Filter { transactions } => filter(g, transactions),
        Command::Esri { network, psi_file } => esri(g, network, psi_file.as_deref()),
        Command::Analyze(args) => analyze(g, args),
        Command::SectorExperiment(args) => sector_experiment(g, args),
        Command::CompareYears { first, second } => compare_years(g, first, second),
    }
}

fn out(g: &Global, name: &str) -> PathBuf {
    g.out_dir.join(name)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    io::write_file(path, |w| io::write_json(w, value))?;
    Ok(())
}

fn parse_scenario(s: &str) -> Result<Scenario> {
    s.parse().map_err(|e: Error| CliError::Usage(e.to_string()))
}

fn load_network(args: &NetworkArgs) -> Result<ProductionNetwork> {
    let firms = io::read_firms(&args.firms)?;
    let edges = io::read_edges(&args.edges)?;
    Ok(ProductionNetwork::build(firms, &edges)?)
}

fn generate(g: &Global, a: &GenerateArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n_firms: a.n_firms,
        n_sectors: a.sectors,
        mean_out_degree: a.mean_out_degree,
        degree_exponent: a.degree_exponent,
        weight_mu: a.weight_mu,
        weight_sigma: a.weight_sigma,
        physical_share: a.physical_share,
        unclassified_share: a.unclassified_share,
        coverage: a.coverage,
    };
    let (firms, edges) = prodnet::generate_synthetic(&cfg, g.seed)?;
    io::write_file(&out(g, "firms.csv"), |w| io::write_firms(w, &firms))?;
    io::write_file(&out(g, "edges.csv"), |w| io::write_edges(w, &edges))?;
    println!("wrote {} firms and {} edges to {}", firms.len(), edges.len(), g.out_dir.display());
    Ok(())
}

#[derive(Serialize)]
struct FilterSummary {
    pairs_total: usize,
    links_kept: usize,
    kept_link_fraction: f64,
    volume_total: f64,
    volume_kept: f64,
    kept_volume_fraction: f64,
}

fn filter(g: &Global, transactions: &Path) -> Result<()> {
    let events = io::read_transactions(transactions)?;
    let outcome = prodnet::filter_long_term_links(&events);
    io::write_file(&out(g, "edges.csv"), |w| io::write_edges(w, &outcome.links))?;
    let summary = FilterSummary {
        pairs_total: outcome.pairs_total,
        links_kept: outcome.links.len(),
        kept_link_fraction: outcome.kept_link_fraction(),
        volume_total: outcome.volume_total,
        volume_kept: outcome.volume_kept,
        kept_volume_fraction: outcome.kept_volume_fraction(),
    };
    write_json(&out(g, "filter_summary.json"), &summary)?;
    println!(
        "kept {} of {} links ({:.1}% of links, {:.1}% of volume)",
        summary.links_kept,
        summary.pairs_total,
        100.0 * summary.kept_link_fraction,
        100.0 * summary.kept_volume_fraction
    );
    Ok(())
}

#[derive(Serialize)]
struct EsriSummary<'a> {
    scenario: String,
    epsilon: f64,
    max_iter: usize,
    fingerprint: &'a str,
    firms: usize,
    edges: usize,
    mean: f64,
    median: f64,
    max: f64,
    non_converged: Vec<&'a str>,
    note: &'static str,
}

fn summarize<'a>(net: &ProductionNetwork, v: &'a EsriVector) -> EsriSummary<'a> {
    EsriSummary {
        scenario: v.scenario.map_or("custom".into(), |s| s.to_string()),
        epsilon: v.epsilon,
        max_iter: v.max_iter,
        fingerprint: &v.fingerprint,
        firms: net.len(),
        edges: net.edge_count(),
        mean: v.mean(),
        median: v.median(),
        max: v.values.iter().copied().fold(0.0, f64::max),
        non_converged: v.non_converged().into_iter().map(|i| v.firm_ids[i].as_str()).collect(),
        note: INTERPRETATION_NOTE,
    }
}

fn esri(g: &Global, network: &NetworkArgs, psi_file: Option<&Path>) -> Result<()> {
    let all = g.scenario.eq_ignore_ascii_case("all");
    let scenarios = if all { Scenario::ALL.to_vec() } else { vec![parse_scenario(&g.scenario)?] };
    let net = load_network(network)?;

    if let Some(path) = psi_file {
        if all {
            return Err(CliError::Usage("--psi-file needs a single --scenario".into()));
        }
        return custom_shock(g, &net, scenarios[0], path);
    }

    let controls = RunControls {
        epsilon: g.epsilon,
        max_iter: g.max_iter,
        workers: g.workers,
    };
    let mut summaries = Vec::new();
    let mut not_converged = 0;
    let vectors: Vec<EsriVector> = scenarios
        .iter()
        .map(|&sc| esri_all(&net, &scenario_matrices(&net, sc), Some(sc), &controls))
        .collect::<prodnet::Result<_>>()?;
    for v in &vectors {
        let name = if all {
            format!("esri_{}.csv", v.scenario.unwrap().tag().to_ascii_lowercase())
        } else {
            "esri.csv".to_string()
        };
        io::write_file(&out(g, &name), |w| io::write_esri(w, v))?;
        not_converged += v.non_converged().len();
        summaries.push(summarize(&net, v));
    }
    if all {
        write_json(&out(g, "summary.json"), &summaries)?;
    } else {
        write_json(&out(g, "summary.json"), &summaries[0])?;
    }
    for s in &summaries {
        println!("{}: mean ESRI {:e}, median {:e}, max {:e}", s.scenario, s.mean, s.median, s.max);
    }
    if g.strict && not_converged > 0 {
        return Err(CliError::NotConverged(not_converged));
    }
    Ok(())
}

#[derive(Serialize)]
struct CascadeSummary {
    scenario: Scenario,
    epsilon: f64,
    max_iter: usize,
    fingerprint: String,
    weighted_loss: f64,
    t: usize,
    converged: bool,
    note: &'static str,
}

fn custom_shock(g: &Global, net: &ProductionNetwork, scenario: Scenario, path: &Path) -> Result<()> {
    let mut psi = vec![1.0; net.len()];
    for (id, p) in io::read_psi(path)? {
        let i = net.index_of(&id).ok_or(Error::UnknownFirm(id))?;
        psi[i] = p;
    }
    let m = scenario_matrices(net, scenario);
    let r = run_cascade(net, &m, &ExogenousShock::new(psi)?, g.epsilon, g.max_iter)?;
    let loss = prodnet::esri::weighted_loss(net, &r.h)?;
    io::write_file(&out(g, "cascade.csv"), |w| {
        use std::io::Write;
        writeln!(w, "firm_id,h,h_d,h_u")?;
        for (i, f) in net.firms().iter().enumerate() {
            writeln!(w, "{},{},{},{}", f.id, r.h[i], r.h_d[i], r.h_u[i])?;
        }
        Ok(())
    })?;
    write_json(
        &out(g, "summary.json"),
        &CascadeSummary {
            scenario,
            epsilon: g.epsilon,
            max_iter: g.max_iter,
            fingerprint: net.fingerprint(),
            weighted_loss: loss,
            t: r.t,
            converged: r.converged,
            note: INTERPRETATION_NOTE,
        },
    )?;
    println!("{scenario}: output-weighted loss {loss:e} after {} iterations", r.t);
    if g.strict && !r.converged {
        return Err(CliError::NotConverged(1));
    }
    Ok(())
}

#[derive(Serialize)]
struct ThresholdCount {
    threshold: f64,
    count: usize,
}

fn analyze(g: &Global, a: &AnalyzeArgs) -> Result<()> {
    let rows = io::read_esri(&a.esri)?;
    if rows.is_empty() {
        return Err(Error::InsufficientData(format!("{} has no rows", a.esri.display())).into());
    }
    let ids: Vec<String> = rows.iter().map(|r| r.firm_id.clone()).collect();
    let values: Vec<f64> = rows.iter().map(|r| r.esri).collect();

    let profile = analysis::rank_profile(&ids, &values)?;
    io::write_file(&out(g, "profile.csv"), |w| io::write_profile(w, &profile))?;

    let plateau = analysis::detect_plateau(&profile, a.plateau_tol)?;
    write_json(&out(g, "plateau.json"), &plateau)?;

    let x_min = match a.x_min {
        Some(x) => x,
        None => values.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min),
    };
    let x_max = a.x_max.unwrap_or_else(|| values.iter().copied().fold(0.0, f64::max));
    let fit = analysis::fit_powerlaw_mle(&values, x_min, x_max)?;
    write_json(&out(g, "powerlaw.json"), &fit)?;

    let thresholds = a.thresholds.clone().unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec());
    let counts = analysis::count_above_thresholds(&values, &thresholds)?;
    let counts: Vec<ThresholdCount> = thresholds
        .iter()
        .zip(counts)
        .map(|(&threshold, count)| ThresholdCount { threshold, count })
        .collect();
    write_json(&out(g, "thresholds.json"), &counts)?;

    if let (Some(firms), Some(edges)) = (&a.firms, &a.edges) {
        let net = load_network(&NetworkArgs {
            firms: firms.clone(),
            edges: edges.clone(),
        })?;
        let mut esri = Vec::with_capacity(net.len());
        let mut strength = Vec::with_capacity(net.len());
        for r in &rows {
            let i = net.index_of(&r.firm_id).ok_or_else(|| Error::UnknownFirm(r.firm_id.clone()))?;
            esri.push(r.esri);
            strength.push(net.s_in()[i] + net.s_out()[i]);
        }
        write_json(&out(g, "strength_fit.json"), &analysis::strength_esri_fit(&esri, &strength)?)?;
    }

    println!(
        "plateau of {} firms at {:.4}; power-law exponent {:.4} over [{x_min:e}, {x_max:e}] ({} values)",
        plateau.size, plateau.level, fit.alpha_hat, fit.n_used
    );
    Ok(())
}

/// Parses `ID=FRACTION[,ID=FRACTION...]` into `(firm, psi)` pairs.
fn parse_firm_shock(net: &ProductionNetwork, spec: &str) -> Result<FirmShock> {
    spec.split(',')
        .map(|part| {
            let (id, frac) = part
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--firm-shock `{part}`: expected ID=FRACTION")))?;
            let frac: f64 = frac
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("--firm-shock `{part}`: `{frac}` is not a number")))?;
            if !(0.0..=1.0).contains(&frac) {
                return Err(CliError::Usage(format!("--firm-shock `{part}`: fraction outside [0, 1]")));
            }
            let i = net
                .index_of(id.trim())
                .ok_or_else(|| CliError::Usage(format!("--firm-shock: unknown firm `{id}`")))?;
            Ok((i, 1.0 - frac))
        })
        .collect()
}

fn sector_experiment(g: &Global, a: &SectorArgs) -> Result<()> {
    let scenario = parse_scenario(&g.scenario)?;
    let sector: Nace = a.sector.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let net = load_network(&a.network)?;
    let shocks: Vec<FirmShock> = a
        .firm_shocks
        .iter()
        .map(|s| parse_firm_shock(&net, s))
        .collect::<Result<_>>()?;
    let m = scenario_matrices(&net, scenario);
    let report = analysis::sector_shock_experiment(&net, &m, sector, a.magnitude, &shocks, g.epsilon, g.max_iter)?;
    io::write_file(&out(g, "sector_report.csv"), |w| io::write_sector_report(w, &report))?;
    write_json(&out(g, "sector_report.json"), &report)?;
    println!(
        "shocked {sector} by {}: {} sectors reported, {} firm scenarios",
        a.magnitude,
        report.sectors.len(),
        shocks.len()
    );
    if g.strict && !report.converged {
        return Err(CliError::NotConverged(1));
    }
    Ok(())
}

fn compare_years(g: &Global, first: &Path, second: &Path) -> Result<()> {
    let a = io::read_esri(first)?;
    let b = io::read_esri(second)?;
    let split = |rows: Vec<io::EsriRow>| -> (Vec<String>, Vec<f64>) {
        rows.into_iter().map(|r| (r.firm_id, r.esri)).unzip()
    };
    let (ia, va) = split(a);
    let (ib, vb) = split(b);
    let c = analysis::year_over_year(&ia, &va, &ib, &vb)?;
    write_json(&out(g, "compare.json"), &c)?;
    let show = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    println!(
        "{} common firms: pearson {}, log pearson {} ({} zero values excluded)",
        c.matched,
        show(c.pearson),
        show(c.pearson_log),
        c.log_excluded
    );
    Ok(())
}
