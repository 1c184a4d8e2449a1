//! `mmlab`: command-line front end for the mismatched-decoding library.
//!
//! Exit status: 0 on success, 1 when the instance is invalid or a
//! computation fails, 2 on usage errors (including unknown names).

mod format;
mod io;
mod repro;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mmlab::exponent::{esp_curve, finite_n_annotation};
use mmlab::maximality::{GammaStarReading, DEFAULT_TOL};
use mmlab::prob::{blahut_arimoto_capacity, marginal_yhat, mutual_information, Channel};
use mmlab::registry::{
    bound_strategies, lemma_suites, membership_checkers, BoundQuery, MembershipQuery,
};
use mmlab::search::SearchOptions;
use mmlab::sim::{
    dominant_conflict_type, estimate_pe_ensemble, estimate_pe_max, estimate_type_conflict,
    sample_codebook, ConflictMode, TieMode,
};
use mmlab::types::{nearest_type, JointType};

use format::{exact6, show};
use io::{write_json_atomic, write_text, InstanceSpec, Usage};

#[derive(Parser)]
#[command(name = "mmlab", version, about = "Mismatched decoding: bounds, exponents, membership checks and simulation")]
struct Cli {
    /// Base seed for every randomized step.
    #[arg(long, global = true, env = "MMLAB_SEED", default_value_t = 0)]
    seed: u64,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "MMLAB_THREADS")]
    threads: Option<usize>,

    /// Print the full JSON report instead of the text summary.
    #[arg(long, global = true)]
    json: bool,

    /// Also write the JSON report to this file (replaced atomically).
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct InstanceArgs {
    /// Built-in instance: `example` or `bsc:<p>` (matched metric).
    #[arg(long)]
    instance: Option<String>,
    /// Channel file `{"rows": [[...]]}`.
    #[arg(long, value_name = "FILE")]
    channel: Option<PathBuf>,
    /// Metric file `{"values": [[...]]}`.
    #[arg(long, value_name = "FILE")]
    metric: Option<PathBuf>,
    /// Metric file of nonnegative entries; the metric is their natural log.
    #[arg(long, value_name = "FILE")]
    metric_log_of: Option<PathBuf>,
    /// Value standing in for log(0) with --metric-log-of.
    #[arg(long, allow_negative_numbers = true, default_value_t = io::DEFAULT_LOG_FLOOR)]
    log_floor: f64,
    /// Coupling file `{"per_input": [KxK tables]}`.
    #[arg(long, value_name = "FILE")]
    coupling: Option<PathBuf>,
    /// `uniform` or a distribution file `{"probs": [...]}`.
    #[arg(long, value_name = "uniform|FILE")]
    px: Option<String>,
}

impl InstanceArgs {
    fn spec(&self) -> InstanceSpec {
        InstanceSpec {
            preset: self.instance.clone(),
            channel: self.channel.clone(),
            metric: self.metric.clone(),
            metric_log_of: self.metric_log_of.clone(),
            log_floor: Some(self.log_floor),
            coupling: self.coupling.clone(),
            px: self.px.clone(),
        }
    }
}

#[derive(Args, Clone)]
struct SearchArgs {
    /// Starting points for the coupling search.
    #[arg(long, default_value_t = 32)]
    starts: usize,
    /// Iterations per start.
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    /// Maximality tolerance.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
}

impl SearchArgs {
    fn options(&self, seed: u64) -> SearchOptions {
        SearchOptions {
            starts: self.starts,
            max_iter: self.max_iter,
            seed,
            tol: self.tol,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Channel capacity in bits (Blahut-Arimoto).
    Capacity {
        #[command(flatten)]
        inst: InstanceArgs,
        /// Stop when the two-sided gap is below this (bits).
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Membership of a coupling in one of the maximal sets.
    CheckMaximal {
        #[command(flatten)]
        inst: InstanceArgs,
        /// mmax | mmax-prior | theta-star | gamma-star | gamma-rho | vmax | mmax-td
        #[arg(long)]
        set: String,
        /// Second metric for gamma-rho (defaults to the metric itself).
        #[arg(long, value_name = "FILE")]
        rho: Option<PathBuf>,
        /// Input grid used by `mmax` when --px is omitted.
        #[arg(long, default_value_t = 0.01)]
        grid_step: f64,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, value_enum, default_value_t = Reading::Equality)]
        gamma_star_reading: Reading,
    },
    /// Converse bound on the mismatch capacity.
    Bound {
        #[command(flatten)]
        inst: InstanceArgs,
        /// auxiliary-capacity (alias corollary1) | full | prior
        #[arg(long)]
        mode: String,
        /// Input-distribution grid step.
        #[arg(long, default_value_t = 0.01)]
        grid_step: f64,
        /// Allowed deviation of the coupling's Y-marginal from the channel.
        #[arg(long, default_value_t = 1e-2)]
        tol_marginal: f64,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Sphere-packing exponent curve as CSV.
    Exponent {
        #[command(flatten)]
        inst: InstanceArgs,
        #[arg(long, default_value_t = 0.0)]
        r_min: f64,
        /// Defaults to I(px, W).
        #[arg(long)]
        r_max: Option<f64>,
        #[arg(long, default_value_t = 11)]
        steps: usize,
        /// Block length for the finite-length rate shift.
        #[arg(long)]
        n: Option<u64>,
        /// CSV destination (stdout when omitted).
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Monte Carlo decoding or type-conflict experiment.
    Simulate {
        #[command(flatten)]
        inst: InstanceArgs,
        #[arg(long, value_enum, default_value_t = SimMode::Codebook)]
        mode: SimMode,
        /// Block length.
        #[arg(long)]
        n: usize,
        /// Rate in bits; the codebook has round(2^(nR)) codewords.
        #[arg(long, conflicts_with = "messages")]
        rate: Option<f64>,
        /// Number of codewords.
        #[arg(long)]
        messages: Option<usize>,
        /// Trials per message (per ensemble draw in ensemble mode).
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long, value_enum, default_value_t = Ties::Error)]
        ties: Ties,
        /// Auxiliary channel for conflict mode (defaults to the coupling's Yhat-marginal).
        #[arg(long, value_name = "FILE")]
        auxiliary: Option<PathBuf>,
        /// Fix the conditional type of the auxiliary output (JointType JSON `{"dims", "counts"}`).
        #[arg(long, value_name = "FILE")]
        fixed_type: Option<PathBuf>,
    },
    /// Run a self-check suite.
    LemmaTest {
        /// counting (alias appendixB) | conditioning (alias appendixC) | decomposition | minimax
        #[arg(long)]
        which: String,
    },
    /// Reproduce the reference numbers of the built-in example.
    ReproPaper {
        #[arg(long, default_value_t = 0.01)]
        grid_step: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Reading {
    Equality,
    Support,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimMode {
    /// One random constant-composition codebook, maximal error probability.
    Codebook,
    /// Random-coding ensemble average.
    Ensemble,
    /// Type-conflict events on the auxiliary channel.
    Conflict,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ties {
    Error,
    Random,
}

/// Text summary plus the JSON report it came from.
struct Output {
    text: String,
    json: serde_json::Value,
    /// Overrides the exit status (a failed self-check is not a crash).
    failed: bool,
}

impl Output {
    fn new<T: Serialize>(text: String, report: &T) -> anyhow::Result<Output> {
        Ok(Output {
            text,
            json: serde_json::to_value(report)?,
            failed: false,
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot size the thread pool: {}", e);
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(out) => {
            let emitted = if cli.json {
                serde_json::to_string_pretty(&out.json).map(|s| s + "\n")
            } else {
                Ok(out.text.clone())
            };
            let written = emitted
                .map_err(anyhow::Error::from)
                .and_then(|s| write_text(None, &s))
                .and_then(|_| match &cli.out {
                    Some(p) => write_json_atomic(p, &out.json),
                    None => Ok(()),
                });
            match written {
                Ok(()) if out.failed => ExitCode::from(1),
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => report_error(e),
            }
        }
        Err(e) => report_error(e),
    }
}

fn report_error(e: anyhow::Error) -> ExitCode {
    eprintln!("error: {:#}", e);
    let usage = e.downcast_ref::<Usage>().is_some()
        || e.downcast_ref::<io::UnknownPreset>().is_some()
        || matches!(
            e.downcast_ref::<mmlab::Error>(),
            Some(mmlab::Error::UnknownName { .. })
        );
    ExitCode::from(if usage { 2 } else { 1 })
}

fn run(cli: &Cli) -> anyhow::Result<Output> {
    let seed = cli.seed;
    match &cli.command {
        Command::Capacity { inst, tol } => {
            let inst = inst.spec().load()?;
            let cap = blahut_arimoto_capacity(inst.channel()?, *tol);
            Output::new(format!("{}\n", show(cap.bits)), &cap)
        }
        Command::CheckMaximal {
            inst,
            set,
            rho,
            grid_step,
            tol,
            gamma_star_reading,
        } => {
            let registry = membership_checkers();
            let checker = registry.get(set)?;
            let inst = inst.spec().load()?;
            let rho = rho.as_deref().map(io::load_metric).transpose()?;
            let query = MembershipQuery {
                coupling: inst.coupling()?,
                px: inst.px.as_ref(),
                q: inst.metric()?,
                channel: inst.channel.as_ref(),
                rho: rho.as_ref(),
                td_metric: None,
                tol: *tol,
                grid_step: *grid_step,
                gamma_star_reading: match gamma_star_reading {
                    Reading::Equality => GammaStarReading::Equality,
                    Reading::Support => GammaStarReading::Support,
                },
            };
            let outcome = checker.check(&query)?;
            let mut text = String::from(if outcome.member { "member" } else { "not-member" });
            if let Some(s) = outcome.slack {
                text += &format!(" slack={}", show(s));
            }
            text.push('\n');
            if let mmlab::registry::Evidence::Support(s) = &outcome.evidence {
                for (x, y, yh, m) in &s.violations {
                    text += &format!("violation x={} y={} yhat={} mass={}\n", x, y, yh, show(*m));
                }
            }
            Output::new(text, &outcome)
        }
        Command::Bound {
            inst,
            mode,
            grid_step,
            tol_marginal,
            search,
        } => {
            let registry = bound_strategies();
            let strategy = registry.get(mode)?;
            let inst = inst.spec().load()?;
            let query = BoundQuery {
                w: inst.channel()?,
                q: inst.metric()?,
                coupling: inst.coupling.as_ref(),
                grid_step: *grid_step,
                tol_marginal: *tol_marginal,
                tol: search.tol,
                search: search.options(seed),
            };
            let rep = strategy.compute(&query)?;
            let text = format!("{}\n", show(rep.value_bits));
            for c in &rep.caveats {
                eprintln!("note: {}", c);
            }
            if !rep.certified {
                eprintln!("note: the witness did not pass its membership check");
            }
            Output::new(text, &rep)
        }
        Command::Exponent {
            inst,
            r_min,
            r_max,
            steps,
            n,
            csv,
            search,
        } => {
            let mut spec = inst.spec();
            spec.px.get_or_insert_with(|| "uniform".into());
            let inst = spec.load()?;
            let (w, q, px) = (inst.channel()?, inst.metric()?, inst.px()?);
            let r_max = match r_max {
                Some(r) => *r,
                None => mutual_information(px, w)?,
            };
            let mut curve = esp_curve(px, w, q, *r_min, r_max, *steps, &search.options(seed))?;
            if let Some(n) = n {
                curve = finite_n_annotation(&curve, *n, w.inputs(), w.outputs())?;
            }
            let mut table = String::from("rate_bits,exponent_bits,certified\n");
            for p in &curve.points {
                table += &format!(
                    "{},{},{}\n",
                    exact6(p.rate_bits),
                    exact6(p.exponent_bits),
                    p.certified
                );
            }
            let text = match csv {
                Some(path) => {
                    write_text(Some(path), &table)?;
                    format!("wrote {} points to {}\n", curve.points.len(), path.display())
                }
                None => table,
            };
            Output::new(text, &curve)
        }
        Command::Simulate {
            inst,
            mode,
            n,
            rate,
            messages,
            trials,
            ties,
            auxiliary,
            fixed_type,
        } => {
            let mut spec = inst.spec();
            spec.px.get_or_insert_with(|| "uniform".into());
            let inst = spec.load()?;
            simulate(
                &inst, *mode, *n, *rate, *messages, *trials, *ties, auxiliary, fixed_type, seed,
            )
        }
        Command::LemmaTest { which } => {
            let registry = lemma_suites();
            let rep = registry.get(which)?.run(seed)?;
            let mut text = String::new();
            for c in &rep.checks {
                text += &format!(
                    "{} {}: worst={:e} tolerance={:e} cases={}\n",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.worst,
                    c.tolerance,
                    c.cases
                );
            }
            let mut out = Output::new(text, &rep)?;
            out.failed = !rep.passed();
            Ok(out)
        }
        Command::ReproPaper { grid_step } => {
            let rep = repro::run(seed, *grid_step)?;
            let mut text = String::new();
            for c in &rep.checks {
                text += &format!(
                    "{} {}: {} (expected {} within {:e}, {:.1}s)\n",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    show(c.value),
                    show(c.expected),
                    c.tolerance,
                    c.seconds
                );
            }
            let mut out = Output::new(text, &rep)?;
            out.failed = !rep.passed();
            Ok(out)
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JointTypeFile {
    dims: Vec<usize>,
    counts: Vec<u32>,
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    inst: &io::Instance,
    mode: SimMode,
    n: usize,
    rate: Option<f64>,
    messages: Option<usize>,
    trials: u64,
    ties: Ties,
    auxiliary: &Option<PathBuf>,
    fixed_type: &Option<PathBuf>,
    seed: u64,
) -> anyhow::Result<Output> {
    if n == 0 {
        return Err(Usage("--n must be at least 1".into()).into());
    }
    let px = inst.px()?;
    let composition = nearest_type(px, n as u32)?;
    let log2_m = match (rate, messages) {
        (Some(r), _) => n as f64 * r,
        (None, Some(m)) => (m as f64).log2(),
        (None, None) => return Err(Usage("give --rate or --messages".into()).into()),
    };
    let tie = match ties {
        Ties::Error => TieMode::Error,
        Ties::Random => TieMode::Random,
    };
    let codebook = || -> anyhow::Result<_> {
        let m = match messages {
            Some(m) => m,
            None => {
                let m = log2_m.exp2().round();
                if m > usize::MAX as f64 / 2.0 {
                    return Err(anyhow!("a codebook of 2^{:.1} words is too large", log2_m));
                }
                m.max(1.0) as usize
            }
        };
        Ok(sample_codebook(n, m, &composition, seed)?)
    };
    match mode {
        SimMode::Codebook | SimMode::Ensemble => {
            let (w, q) = (inst.channel()?, inst.metric()?);
            let rep = match mode {
                SimMode::Codebook => estimate_pe_max(&codebook()?, w, q, trials, seed, tie)?,
                _ => estimate_pe_ensemble(&composition, log2_m, w, q, trials, seed, tie)?,
            };
            let text = format!(
                "pe_max={} interval=[{}, {}] message={} trials={} ties={}\n",
                show(rep.max_estimate),
                show(rep.interval.0),
                show(rep.interval.1),
                rep.max_message,
                rep.trials,
                rep.ties
            );
            Output::new(text, &rep)
        }
        SimMode::Conflict => {
            let v: Channel = match auxiliary {
                Some(p) => io::load_channel(p)?,
                None => marginal_yhat(inst.coupling().context(
                    "conflict mode needs --auxiliary or a coupling to take the auxiliary channel from",
                )?),
            };
            let conflict = match fixed_type {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .with_context(|| format!("{}: cannot read joint type file", p.display()))?;
                    let f: JointTypeFile = serde_json::from_str(&text)
                        .map_err(|e| anyhow!("{}: malformed joint type file: {}", p.display(), e))?;
                    ConflictMode::FixedType(
                        JointType::new(f.dims, f.counts)
                            .map_err(|e| anyhow!("{}: {}", p.display(), e))?,
                    )
                }
                None => ConflictMode::Channel,
            };
            let cb = codebook()?;
            let rep = estimate_type_conflict(&cb, &v, &conflict, trials, seed)?;
            let dom = dominant_conflict_type(&cb, &v, &conflict, trials, seed)?;
            let text = format!(
                "conflict_max={} interval=[{}, {}] message={} trials={} dominant_share={}\n",
                show(rep.max_estimate),
                show(rep.interval.0),
                show(rep.interval.1),
                rep.max_message,
                rep.trials,
                show(dom.fraction)
            );
            Output::new(
                text,
                &serde_json::json!({ "report": rep, "dominant": dom }),
            )
        }
    }
}
