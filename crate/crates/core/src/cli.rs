//! Command-line front end.
//!
//! Exit codes: 0 optimal, 1 infeasible, 2 usage or input error, 3 a
//! suboptimal answer (limit hit, or a heuristic was requested).

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use crate::bnb::{bnb_solve, BnbOptions, MiqpStatus, WarmStartRule};
use crate::dual::{DualData, DualOptions};
use crate::error::{Error, Result};
use crate::gpad::{RestartRule, Tolerances};
use crate::heuristics::{
    heuristic_solve, midway_solve, HeuristicStatus, MidwayMode, MidwayOptions, Thresholds,
};
use crate::io::{
    format_solution, read_problem_file, read_warm_start, parse_sos1_groups, status_str,
    write_problem_file, write_trace, ProblemMeta,
};
use crate::oracle::{enumerate_miqp, OracleStatus};
use crate::problem::MiqpProblem;
use crate::problems::{
    build_arx_segmentation, build_hybrid_vehicle, gen_random_miqp, prbs,
    simulate_transport_delay, ArxSegConfig, RandomMiqpConfig, VehicleConfig, ARX_PRBS_STATE,
};

pub const EXIT_OPTIMAL: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SUBOPTIMAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "miqp", version, about = "Branch-and-bound MIQP solver")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a problem file.
    Solve(SolveArgs),
    /// Generate a benchmark problem file.
    Gen {
        #[command(subcommand)]
        family: GenFamily,
    },
    /// Solve by exhaustive enumeration with the reference QP solver.
    Oracle {
        file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MidwayModeArg {
    Fix,
    Prioritize,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BranchRuleArg {
    SmallestWarm,
    MaxFrac,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum RestartArg {
    Soft,
    Hard,
    None,
}

#[derive(Args, Debug)]
struct SolveArgs {
    file: PathBuf,
    /// Binary-projection heuristic only.
    #[arg(long, conflicts_with = "midway")]
    heuristic: bool,
    /// Mid-way approach: fix near-integral binaries, branch on the rest.
    #[arg(long)]
    midway: bool,
    #[arg(long, value_enum, default_value = "fix")]
    midway_mode: MidwayModeArg,
    /// Warm-start file with `lower:` / `upper:` lines of 1-based indices.
    #[arg(long)]
    warm_start: Option<PathBuf>,
    /// SOS1 groups, 1-based, e.g. `1,2;3,4`.
    #[arg(long)]
    sos1: Option<String>,
    #[arg(long, value_enum, default_value = "smallest-warm")]
    branch_rule: BranchRuleArg,
    #[arg(long, default_value_t = 1e-5)]
    eps_g: f64,
    #[arg(long, default_value_t = 1e-5)]
    eps_v: f64,
    #[arg(long, default_value_t = 1e-2)]
    eps_i: f64,
    /// Growth of the dual norm over which the infeasibility test must keep
    /// holding; 1 accepts the first passing check.
    #[arg(long, default_value_t = 2.0)]
    infeas_growth: f64,
    /// Integrality tolerance of the branching test.
    #[arg(long, default_value_t = 1e-4)]
    eps_int: f64,
    /// Mid-way lower threshold as a fraction of `ubar - lbar`.
    #[arg(long, default_value_t = 0.01)]
    eps_lbar: f64,
    /// Mid-way upper threshold as a fraction of `ubar - lbar`.
    #[arg(long, default_value_t = 0.99)]
    eps_ubar: f64,
    #[arg(long, default_value_t = 20000)]
    max_iter: usize,
    #[arg(long)]
    max_nodes: Option<usize>,
    /// Wall-clock limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Write the node trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "soft")]
    restart: RestartArg,
    /// Disable the dual-bound early stop of relaxations.
    #[arg(long)]
    no_early_stop: bool,
    /// Disable Jacobi scaling of the dual problem.
    #[arg(long)]
    no_precondition: bool,
    /// Write the solution block here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum GenFamily {
    /// Random MIQP with a conditioned Hessian.
    Random {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 0)]
        q: usize,
        #[arg(long, default_value_t = 10.0)]
        kappa: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hybrid vehicle energy management with a seeded demand profile.
    Vehicle {
        #[arg(long, default_value_t = 10)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// ARX segmentation on simulated transport-delay data.
    Arx {
        #[arg(long, default_value_t = 41)]
        samples: usize,
        #[arg(long, default_value_t = 20)]
        switch: usize,
        #[arg(long, default_value_t = 0.1)]
        noise_var: f64,
        #[arg(long, default_value_t = 0.7)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        big_m: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse `argv` (including the program name) and run; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OPTIMAL };
            let _ = e.print();
            return code;
        }
    };
    let res = match cli.cmd {
        Command::Solve(a) => solve(&a),
        Command::Gen { family } => generate(family).map(|_| EXIT_OPTIMAL),
        Command::Oracle { file, out } => oracle(&file, out.as_ref()),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn report(
    prob: &MiqpProblem,
    out: Option<&PathBuf>,
    status: &str,
    cost: f64,
    z: Option<&DVector<f64>>,
) -> Result<()> {
    emit(out, &format_solution(status, cost + prob.offset(), z))
}

fn miqp_exit(s: MiqpStatus) -> i32 {
    match s {
        MiqpStatus::Optimal => EXIT_OPTIMAL,
        MiqpStatus::Infeasible => EXIT_INFEASIBLE,
        MiqpStatus::Suboptimal | MiqpStatus::NoSolution => EXIT_SUBOPTIMAL,
    }
}

fn solve(a: &SolveArgs) -> Result<i32> {
    let (prob, _) = read_problem_file(&a.file)?;
    let tol = Tolerances {
        eps_g: a.eps_g,
        eps_v: a.eps_v,
        eps_i: a.eps_i,
        infeas_growth: a.infeas_growth,
        max_iter: a.max_iter,
        restart: match a.restart {
            RestartArg::Soft => RestartRule::SoftAssign,
            RestartArg::Hard => RestartRule::HardReset,
            RestartArg::None => RestartRule::None,
        },
        ..Tolerances::default()
    };
    tol.validate()?;
    let dual = DualData::with_options(
        &prob,
        &DualOptions {
            precondition: !a.no_precondition,
            ..DualOptions::default()
        },
    )?;
    let mut bnb = BnbOptions {
        eps_int: a.eps_int,
        early_stop: !a.no_early_stop,
        max_nodes: a.max_nodes,
        time_limit: match a.time_limit {
            Some(s) if s.is_finite() && s >= 0.0 => Some(Duration::from_secs_f64(s)),
            Some(s) => return Err(Error::Config(format!("bad time limit {s}"))),
            None => None,
        },
        warm_rule: match a.branch_rule {
            BranchRuleArg::SmallestWarm => WarmStartRule::SmallestIndex,
            BranchRuleArg::MaxFrac => WarmStartRule::MaxFractional,
        },
        ..BnbOptions::default()
    };
    if let Some(path) = &a.warm_start {
        bnb.warm_start = Some(read_warm_start(path, prob.p())?);
    }
    if let Some(g) = &a.sos1 {
        bnb.sos1 = Some(parse_sos1_groups(g, prob.p())?);
    }
    let out = a.out.as_ref();

    if a.heuristic {
        let h = heuristic_solve(&prob, &dual, &tol, a.eps_int)?;
        return Ok(match h.status {
            HeuristicStatus::Feasible => {
                report(&prob, out, "heuristic", h.v_h, h.z_h.as_ref())?;
                EXIT_SUBOPTIMAL
            }
            HeuristicStatus::NotFound if h.root_infeasible => {
                report(&prob, out, "infeasible", f64::INFINITY, None)?;
                EXIT_INFEASIBLE
            }
            HeuristicStatus::NotFound => {
                report(&prob, out, "not_found", f64::INFINITY, None)?;
                EXIT_SUBOPTIMAL
            }
        });
    }

    let (res, exact) = if a.midway {
        let opts = MidwayOptions {
            thresholds: Thresholds {
                lower: a.eps_lbar,
                upper: a.eps_ubar,
            },
            mode: match a.midway_mode {
                MidwayModeArg::Fix => MidwayMode::HardFix,
                MidwayModeArg::Prioritize => MidwayMode::Prioritize,
            },
            bnb,
        };
        let mw = midway_solve(&prob, &dual, &tol, &opts)?;
        let exact = opts.mode == MidwayMode::Prioritize || mw.partition.is_none();
        (mw.result, exact)
    } else {
        (bnb_solve(&prob, &dual, &tol, &bnb)?, true)
    };
    if let Some(path) = &a.trace {
        let f = std::fs::File::create(path)?;
        write_trace(std::io::BufWriter::new(f), &res.trace)?;
    }
    let mut code = miqp_exit(res.status);
    let mut status = status_str(res.status);
    if !exact && res.status == MiqpStatus::Optimal {
        code = EXIT_SUBOPTIMAL;
        status = "heuristic";
    }
    report(&prob, out, status, res.cost, res.zeta.as_ref())?;
    Ok(code)
}

fn generate(family: GenFamily) -> Result<()> {
    match family {
        GenFamily::Random {
            n,
            m,
            p,
            q,
            kappa,
            seed,
            out,
        } => {
            let prob = gen_random_miqp(&RandomMiqpConfig {
                n,
                m,
                p,
                q,
                kappa,
                seed,
            })?;
            let meta = ProblemMeta {
                name: Some(format!("random-n{n}-m{m}-p{p}-q{q}")),
                seed: Some(seed),
            };
            write_problem_file(out, &prob, &meta)
        }
        GenFamily::Vehicle { horizon, seed, out } => {
            let prob = build_hybrid_vehicle(&VehicleConfig::seeded(horizon, seed))?;
            let meta = ProblemMeta {
                name: Some(format!("vehicle-T{horizon}")),
                seed: Some(seed),
            };
            write_problem_file(out, &prob, &meta)
        }
        GenFamily::Arx {
            samples,
            switch,
            noise_var,
            gamma,
            big_m,
            seed,
            out,
        } => {
            let u = prbs(samples, ARX_PRBS_STATE);
            let y = simulate_transport_delay(&u, switch, noise_var, seed);
            let cfg = ArxSegConfig {
                m_bound: big_m,
                ..ArxSegConfig::new(y, u, gamma)
            };
            let prob = build_arx_segmentation(&cfg)?;
            let meta = ProblemMeta {
                name: Some(format!("arx-N{samples}")),
                seed: Some(seed),
            };
            write_problem_file(out, &prob, &meta)
        }
    }
}

fn oracle(file: &PathBuf, out: Option<&PathBuf>) -> Result<i32> {
    let (prob, _) = read_problem_file(file)?;
    let r = enumerate_miqp(&prob)?;
    match r.status {
        OracleStatus::Optimal => {
            report(&prob, out, "optimal", r.cost, Some(&r.z))?;
            Ok(EXIT_OPTIMAL)
        }
        OracleStatus::Infeasible => {
            report(&prob, out, "infeasible", f64::INFINITY, None)?;
            Ok(EXIT_INFEASIBLE)
        }
    }
}
