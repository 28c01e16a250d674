//! `chargeshare`: batch runs of the shared-storage charging model.
//!
//! Every subcommand writes CSV/JSON into `--out`. Exit codes: 0 success,
//! 1 usage/IO error or failed check, 2 infeasible model, 3 no convergence.

mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use chargeshare_core::coordinator::{build_correction_matrices, check_condition_a1, RunStatus};
use chargeshare_core::experiments::{
    capacity_sweep, coefficient_sweep, default_capacity_multipliers, scalability_run, Coefficient, SplitRule,
};
use chargeshare_core::oracle::{
    audit_allocation, build_central, profit_allocation, verify_equilibrium, Allocation, ModelOptions, PricedAllocation,
    VerifyOptions,
};
use chargeshare_core::report;
use chargeshare_core::{
    run_benchmark, run_coordination, solve_centralized, BenchmarkVariant, CoordinationError, CoordinationParams,
    DualVariant, ExperimentError, OracleError, PriceSystem, Scenario, VariantKind,
};

use output::{resolve_scenario, OutDir};

#[derive(Parser)]
#[command(name = "chargeshare", version, about = "Charging stations sharing energy storage in a distribution network")]
struct Cli {
    /// Directory receiving every output file.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the joint social-cost problem and extract equilibrium prices.
    SolveCentral {
        /// Scenario JSON file, `bundled`, or `bundled:<name>`.
        scenario: String,
        /// Pin every EV to its as-soon-as-possible charging profile.
        #[arg(long)]
        fix_casap: bool,
        /// Also write the assembled program as a plain-text matrix listing.
        #[arg(long)]
        dump_program: bool,
    },
    /// Run the prediction–correction coordination loop.
    RunDistributed {
        scenario: String,
        #[command(flatten)]
        coord: CoordArgs,
        /// Solve centrally as well and report the deviation.
        #[arg(long)]
        compare: bool,
    },
    /// Solve benchmark variants and report the cost split.
    Benchmark {
        scenario: String,
        #[arg(long, value_delimiter = ',', default_value = "b1,b2,b3,proposed")]
        variant: Vec<VariantKind>,
        /// Capacity fractions per connected station for B2 (default: equal).
        #[arg(long, value_delimiter = ',')]
        split: Option<Vec<f64>>,
        /// Override the cyclic end-of-day storage condition.
        #[arg(long)]
        cyclic: Option<bool>,
        /// Run the proposed variant with distributed coordination.
        #[arg(long)]
        distributed: bool,
        #[command(flatten)]
        coord: CoordArgs,
    },
    /// Total cost per variant as the storage capacity is scaled.
    SweepCapacity {
        scenario: String,
        #[arg(long, value_delimiter = ',')]
        multipliers: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', default_value = "b1,b2,b3,proposed")]
        variant: Vec<VariantKind>,
    },
    /// Total cost per variant over a grid of cost coefficients.
    SweepCoeff {
        scenario: String,
        /// `bat` (storage degradation) or `ev` (charging inconvenience).
        #[arg(long)]
        which: Coefficient,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', default_value = "b1,b2,b3,proposed")]
        variant: Vec<VariantKind>,
    },
    /// Check the step-size condition for the correction step.
    CheckA1 {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        tau: f64,
        /// Penalty used when reporting the correction matrices.
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
    },
    /// Re-solve every agent at the given prices and check market clearing.
    VerifyEquilibrium {
        scenario: String,
        /// JSON file with `allocation` and `prices`, as written by solve-central.
        allocation_file: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long, default_value_t = 1e-4)]
        gap_tol: f64,
    },
    /// Distributed runs on replicas of a single-cluster template.
    Scale {
        template: String,
        #[arg(long)]
        groups: usize,
        /// Redraw every station's fleet at this size.
        #[arg(long)]
        ev_per_station: Option<usize>,
        /// Run every size from 1 up to `--groups`.
        #[arg(long)]
        all_sizes: bool,
        #[command(flatten)]
        coord: CoordArgs,
    },
}

#[derive(Args, Clone)]
struct CoordArgs {
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    dual_variant: Option<DualVariant>,
}

impl CoordArgs {
    fn params(&self) -> CoordinationParams {
        let d = CoordinationParams::default();
        CoordinationParams {
            beta: self.beta.unwrap_or(d.beta),
            alpha: self.alpha.unwrap_or(d.alpha),
            tau: self.tau.unwrap_or(d.tau),
            delta: self.delta.unwrap_or(d.delta),
            max_iterations: self.max_iter.unwrap_or(d.max_iterations),
            dual_variant: self.dual_variant.unwrap_or(d.dual_variant),
        }
    }
}

/// How a successful command ended.
enum Finish {
    Done,
    CheckFailed,
    NotConverged,
}

fn main() -> ExitCode {
    // Usage errors must not collide with the infeasibility exit code.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(Finish::Done) => ExitCode::SUCCESS,
        Ok(Finish::CheckFailed) => ExitCode::from(1),
        Ok(Finish::NotConverged) => {
            eprintln!("coordination stopped before convergence");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_infeasible(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn is_infeasible(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        if let Some(x) = c.downcast_ref::<ExperimentError>() {
            x.is_infeasible()
        } else if let Some(x) = c.downcast_ref::<OracleError>() {
            matches!(x, OracleError::Infeasible(_))
        } else if let Some(x) = c.downcast_ref::<CoordinationError>() {
            x.is_infeasible()
        } else {
            false
        }
    })
}

fn run(cli: Cli) -> Result<Finish> {
    let out = OutDir::create(&cli.out)?;
    match cli.command {
        Command::SolveCentral { scenario, fix_casap, dump_program } => {
            solve_central(&out, &resolve_scenario(&scenario)?, fix_casap, dump_program)
        }
        Command::RunDistributed { scenario, coord, compare } => {
            run_distributed(&out, &resolve_scenario(&scenario)?, &coord.params(), compare)
        }
        Command::Benchmark { scenario, variant, split, cyclic, distributed, coord } => {
            let s = resolve_scenario(&scenario)?;
            let params = distributed.then(|| coord.params());
            benchmark(&out, &s, &variant, split, cyclic, params)
        }
        Command::SweepCapacity { scenario, multipliers, variant } => {
            let s = resolve_scenario(&scenario)?;
            let mut m = multipliers.unwrap_or_else(default_capacity_multipliers);
            m.sort_by(f64::total_cmp);
            let rows = capacity_sweep(&s, &m, &variant)?;
            report::write_sweep(out.file("capacity_sweep.csv")?, &rows)?;
            out.json("capacity_sweep.json", &rows)?;
            println!("{} cells written to {}", rows.len(), out.path("capacity_sweep.csv").display());
            Ok(Finish::Done)
        }
        Command::SweepCoeff { scenario, which, values, variant } => {
            let s = resolve_scenario(&scenario)?;
            let v = values.unwrap_or_else(|| which.default_grid());
            anyhow::ensure!(v.iter().all(|&x| x > 0.0), "coefficient values must be positive");
            let rows = coefficient_sweep(&s, which, &v, &variant)?;
            report::write_sweep(out.file("coeff_sweep.csv")?, &rows)?;
            out.json("coeff_sweep.json", &rows)?;
            println!("{} cells written to {}", rows.len(), out.path("coeff_sweep.csv").display());
            Ok(Finish::Done)
        }
        Command::CheckA1 { alpha, tau, beta } => {
            let a1 = check_condition_a1(alpha, tau);
            let m = build_correction_matrices(alpha, tau, beta);
            let matrices: serde_json::Map<String, serde_json::Value> =
                m.rows().iter().map(|(name, rows)| (name.to_string(), json!(rows))).collect();
            out.json(
                "a1.json",
                &json!({ "alpha": alpha, "tau": tau, "beta": beta, "condition": a1, "matrices": matrices }),
            )?;
            println!(
                "alpha={alpha} tau={tau}: {} (minors {:.6}, {:.6}, {:.6}; min eigenvalue {:.6})",
                if a1.holds { "holds" } else { "fails" },
                a1.minors[0],
                a1.minors[1],
                a1.minors[2],
                a1.min_eigenvalue
            );
            Ok(Finish::Done)
        }
        Command::VerifyEquilibrium { scenario, allocation_file, tol, gap_tol } => {
            let s = resolve_scenario(&scenario)?;
            let text = std::fs::read_to_string(&allocation_file)
                .with_context(|| format!("reading {}", allocation_file.display()))?;
            let pa: PricedAllocation = serde_json::from_str(&text).context("parsing allocation file")?;
            let rep = verify_equilibrium(&s, &pa.allocation, &pa.prices, VerifyOptions { tol, gap_tol })?;
            out.json("equilibrium.json", &rep)?;
            println!(
                "{} mismatches, {} alternative optima, max agent gap {:.3e} $",
                rep.mismatches.len(),
                rep.alternative_optima.len(),
                rep.gaps.max()
            );
            Ok(if rep.is_equilibrium() { Finish::Done } else { Finish::CheckFailed })
        }
        Command::Scale { template, groups, ev_per_station, all_sizes, coord } => {
            let t = resolve_scenario(&template)?;
            let params = coord.params();
            let sizes: Vec<usize> = if all_sizes { (1..=groups).collect() } else { vec![groups] };
            let mut rows = Vec::new();
            for g in sizes {
                let (row, trace) = scalability_run(&t, g, ev_per_station, &params)?;
                trace.write_csv(out.file(&format!("trace_g{g}.csv"))?)?;
                println!(
                    "groups={g}: {} stations, {} EVs, {} iterations, {:.1} s (CSO mean {:.3} s)",
                    row.stations, row.evs, row.iterations, row.wall_s, row.cso_mean_s
                );
                rows.push(row);
            }
            report::write_scale(out.file("scale.csv")?, &rows)?;
            Ok(if rows.iter().all(|r| r.converged) { Finish::Done } else { Finish::NotConverged })
        }
    }
}

fn write_allocation_files(out: &OutDir, s: &Scenario, a: &Allocation, prices: &PriceSystem) -> Result<()> {
    out.json("allocation.json", &PricedAllocation { allocation: a.clone(), prices: prices.clone() })?;
    let profit = profit_allocation(s, a, prices);
    report::write_payment_breakdown(out.file("payments.csv")?, s, &profit)?;
    report::write_bus_voltages(out.file("bus_voltages.csv")?, s, &a.flow)?;
    report::write_line_flows(out.file("line_flows.csv")?, s, &a.flow)?;
    Ok(())
}

fn solve_central(out: &OutDir, s: &Scenario, fix_casap: bool, dump_program: bool) -> Result<Finish> {
    let opts = ModelOptions { fix_casap };
    if dump_program {
        out.text("program.txt", &build_central(s, opts).program.dump_text())?;
    }
    let sol = chargeshare_core::oracle::solve_centralized_with(s, opts)?;
    write_allocation_files(out, s, &sol.allocation, &sol.prices)?;
    let audit = audit_allocation(s, &sol.allocation);
    let profit = profit_allocation(s, &sol.allocation, &sol.prices);
    out.json(
        "summary.json",
        &json!({
            "objective": sol.objective,
            "stakeholder_total": profit.total(),
            "cso": profit.cso,
            "seso": profit.seso,
            "dso": profit.dso,
            "interior_iterations": sol.iterations,
            "residuals": sol.residuals,
            "feasibility": audit,
        }),
    )?;
    println!("social cost {:.4} $ (max relaxation gap {:.2e})", sol.objective, audit.max_relaxation_gap);
    Ok(Finish::Done)
}

fn run_distributed(out: &OutDir, s: &Scenario, params: &CoordinationParams, compare: bool) -> Result<Finish> {
    let res = run_coordination(s, params)?;
    res.trace.write_csv(out.file("trace.csv")?)?;
    write_allocation_files(out, s, &res.allocation, &res.prices)?;
    let audit = audit_allocation(s, &res.allocation);
    let total = res.total_cost(s);
    let mut summary = json!({
        "status": res.status,
        "iterations": res.iterations(),
        "settled": res.settled,
        "total_cost": total,
        "runtime_s": res.runtime_s,
        "params": params,
        "feasibility": audit,
    });
    if compare {
        let c = solve_centralized(s)?;
        summary["centralized_objective"] = json!(c.objective);
        summary["relative_cost_error"] = json!((total - c.objective) / c.objective);
        summary["max_price_error"] = json!(res.prices.max_abs_diff(&c.prices));
    }
    out.json("summary.json", &summary)?;
    println!("{:?} after {} iterations, total cost {:.4} $, {:.1} s", res.status, res.iterations(), total, res.runtime_s);
    Ok(match res.status {
        RunStatus::Converged => Finish::Done,
        RunStatus::MaxIterations => Finish::NotConverged,
    })
}

fn benchmark(
    out: &OutDir,
    s: &Scenario,
    kinds: &[VariantKind],
    split: Option<Vec<f64>>,
    cyclic: Option<bool>,
    distributed: Option<CoordinationParams>,
) -> Result<Finish> {
    let make = |kind| BenchmarkVariant {
        kind,
        split: split.clone().map_or(SplitRule::Equal, SplitRule::Fractions),
        cyclic_storage: cyclic,
        distributed,
    };
    let b1 = run_benchmark(s, &make(VariantKind::B1NoStorage))?;
    let mut results = Vec::new();
    let mut converged = true;
    for &k in kinds {
        let r = if k == VariantKind::B1NoStorage { b1.clone() } else { run_benchmark(s, &make(k))? };
        let r = r.with_baseline(b1.total);
        if let Some(d) = &r.detail {
            converged &= d.converged;
            let name = r.variant.label().to_lowercase();
            report::write_payment_breakdown(out.file(&format!("payments_{name}.csv"))?, &d.scenario, &d.profit)?;
            if let Some(trace) = &d.trace {
                trace.write_csv(out.file(&format!("trace_{name}.csv"))?)?;
            }
        }
        println!(
            "{:<8} total {:>10.4} $  reduction {:>6.2} %",
            r.variant.label(),
            r.total,
            100.0 * r.reduction.unwrap_or(0.0)
        );
        results.push(r);
    }
    report::write_cost_summary(out.file("cost_summary.csv")?, &results)?;
    out.json("benchmark.json", &results)?;
    Ok(if converged { Finish::Done } else { Finish::NotConverged })
}
