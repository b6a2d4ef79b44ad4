//! The `tcpa` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use toml::Value;

use crate::array::ICtrlKind;
use crate::bench::{self, scenarios};
use crate::engine::{
    apply_overrides, parse_value, run, sweep, to_csv, Axis, RunOptions, SweepError, SweepOptions,
};
use crate::protocol::ProtocolParams;
use crate::validation::{engine_fuzz, fuzz, FuzzConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "tcpa", version, about = "Invasive processor array simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario; writes metrics.json and trace.txt.
    Simulate {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Switch::On)]
        trace: Switch,
        /// Check array and power invariants every cycle.
        #[arg(long)]
        check_invariants: bool,
    },
    /// Run the cartesian product of `--axis` values; writes sweep.csv.
    Sweep {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
        /// `path=v1,v2,...`, repeatable.
        #[arg(long = "axis", value_name = "PATH=V1,V2")]
        axes: Vec<String>,
        /// Run every point with the scenario seed instead of a derived one.
        #[arg(long)]
        same_seed: bool,
    },
    /// Exhaustive single-fault sweeps and the two-fault scheme differential.
    FtRun {
        #[arg(long, default_value_t = 4)]
        taps: usize,
        #[arg(long, default_value_t = 16)]
        iterations: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Distributed vs centralized claim latency over claim sizes.
    SpeedupBench {
        /// Workload template; defaults to the shipped one.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = bench::SPEEDUP_SIZES.to_vec())]
        sizes: Vec<u32>,
        #[arg(long, value_enum, default_value_t = KindArg::Both)]
        kind: KindArg,
        #[command(flatten)]
        common: Common,
    },
    /// Low-utilization workload over the domain grouping grid.
    EnergyBench {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Protocol fuzzing, engine invariants and shipped scenario checks.
    Validate {
        #[arg(long, default_value_t = 10_000)]
        scenarios: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(short, long, env = "TCPA_OUT_DIR", default_value = "out")]
    pub out: PathBuf,
    /// `path=value` override, repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Every threshold miss exits nonzero.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Fsm,
    Programmable,
    Both,
}

impl KindArg {
    fn kinds(self) -> Vec<ICtrlKind> {
        match self {
            KindArg::Fsm => vec![ICtrlKind::Fsm],
            KindArg::Programmable => vec![ICtrlKind::Programmable],
            KindArg::Both => vec![ICtrlKind::Fsm, ICtrlKind::Programmable],
        }
    }
}

struct Failure(i32, String);

fn usage(msg: impl Into<String>) -> Failure {
    Failure(EXIT_USAGE, msg.into())
}

fn fail(msg: impl ToString) -> Failure {
    Failure(EXIT_FAIL, msg.to_string())
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, Value)>, Failure> {
        let mut out = Vec::new();
        for s in &self.set {
            let (p, v) = s
                .split_once('=')
                .ok_or_else(|| usage(format!("bad --set `{s}`, expected path=value")))?;
            out.push((p.trim().to_string(), parse_value(v.trim())));
        }
        if let Some(seed) = self.seed {
            out.push(("rng_seed".into(), Value::Integer(seed as i64)));
        }
        Ok(out)
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf, Failure> {
        fs::create_dir_all(&self.out).map_err(|e| fail(format!("{}: {e}", self.out.display())))?;
        let path = self.out.join(name);
        fs::write(&path, text).map_err(|e| fail(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn template(path: &Option<PathBuf>, builtin: &str) -> Result<String, Failure> {
    path.as_deref().map_or(Ok(builtin.to_string()), read)
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Simulate {
            scenario,
            common,
            trace,
            check_invariants,
        } => {
            let sc =
                apply_overrides(&read(&scenario)?, &common.overrides()?).map_err(|e| match e {
                    SweepError::Point { source, .. } => fail(source),
                    other => fail(other),
                })?;
            let opts = RunOptions {
                trace: trace == Switch::On,
                check_invariants,
            };
            let out = run(&sc, &opts).map_err(fail)?;
            let m = common.write("metrics.json", &out.metrics.to_json())?;
            println!("wrote {}", m.display());
            if opts.trace {
                let t = common.write("trace.txt", &out.trace_text())?;
                println!("wrote {}", t.display());
            }
            let errors: Vec<_> = out
                .metrics
                .apps
                .iter()
                .filter_map(|a| a.error.as_ref())
                .collect();
            for e in &errors {
                println!("app error: {e}");
            }
            if !out.metrics.invariant_violations.is_empty() {
                return Err(fail(format!(
                    "{} invariant violations, first: {}",
                    out.metrics.invariant_violations.len(),
                    out.metrics.invariant_violations[0]
                )));
            }
            if common.strict && (out.metrics.truncated || !errors.is_empty()) {
                return Err(fail("run truncated or an application failed"));
            }
            Ok(())
        }
        Command::Sweep {
            scenario,
            common,
            axes,
            same_seed,
        } => {
            let axes: Vec<Axis> = axes
                .iter()
                .map(|a| Axis::parse(a))
                .collect::<Result<_, _>>()
                .map_err(|e| usage(e.to_string()))?;
            let mut text = read(&scenario)?;
            let set = common.overrides()?;
            if !set.is_empty() {
                let mut doc: Value = toml::from_str(&text).map_err(fail)?;
                for (p, v) in &set {
                    crate::engine::set_path(&mut doc, p, v.clone()).map_err(fail)?;
                }
                text = toml::to_string(&doc).map_err(fail)?;
            }
            let opts = SweepOptions {
                derive_seeds: !same_seed,
                ..Default::default()
            };
            let rows = sweep(&text, &axes, &opts).map_err(fail)?;
            let p = common.write("sweep.csv", &to_csv(&axes, &rows))?;
            println!("{} points, wrote {}", rows.len(), p.display());
            Ok(())
        }
        Command::FtRun {
            taps,
            iterations,
            common,
        } => {
            let r = bench::ft_bench(taps, iterations).map_err(fail)?;
            print!("{}", bench::ft_table(&r));
            let json = serde_json::to_string_pretty(&r).map_err(fail)? + "\n";
            common.write("ft.json", &json)?;
            threshold(&r.failures)
        }
        Command::SpeedupBench {
            scenario,
            sizes,
            kind,
            common,
        } => {
            let rows = bench::speedup_bench(
                &template(&scenario, scenarios::SPEEDUP)?,
                &sizes,
                &kind.kinds(),
                &common.overrides()?,
            )
            .map_err(fail)?;
            print!("{}", bench::speedup_table(&rows));
            common.write("speedup.csv", &csv_of(&rows))?;
            let misses: Vec<String> = rows
                .iter()
                .filter(|r| r.miss())
                .map(|r| {
                    format!(
                        "size {} {:?}: speedup {:.3} outside envelope",
                        r.size, r.kind, r.speedup
                    )
                })
                .collect();
            if common.strict {
                threshold(&misses)
            } else {
                Ok(())
            }
        }
        Command::EnergyBench { scenario, common } => {
            let r = bench::energy_bench(
                &template(&scenario, scenarios::ENERGY_LOW_UTIL)?,
                &common.overrides()?,
            )
            .map_err(fail)?;
            print!("{}", bench::energy_table(&r.points));
            common.write("energy.csv", &csv_of(&r.points))?;
            threshold(&r.failures)
        }
        Command::Validate {
            scenarios: n,
            common,
        } => {
            let cfg = FuzzConfig {
                scenarios: n,
                seed: common.seed.unwrap_or(0),
                ..Default::default()
            };
            let mut problems = Vec::new();
            let rep = fuzz(&cfg, &ProtocolParams::default());
            println!(
                "protocol fuzz: {} scenarios, {} invades, {} claims, {} retreats, {} violations",
                rep.scenarios,
                rep.invades,
                rep.claims,
                rep.retreats,
                rep.disjointness_violations
                    + rep.termination_violations
                    + rep.retreat_violations
                    + rep.shape_violations
                    + rep.state_violations
            );
            problems.extend(rep.failures.iter().flat_map(|(_, v)| v.iter().cloned()));
            let engine_cfg = FuzzConfig {
                scenarios: (n / 20).max(1),
                ..cfg
            };
            let engine = engine_fuzz(&engine_cfg);
            println!(
                "engine fuzz: {} scenarios, {} violations",
                engine_cfg.scenarios,
                engine.len()
            );
            problems.extend(engine);
            for (name, text) in scenarios::ALL {
                let opts = RunOptions {
                    trace: false,
                    check_invariants: true,
                };
                match crate::engine::run_text(text, &opts) {
                    Ok(out) => {
                        let v = out.metrics.invariant_violations;
                        println!("scenario {name}: {} violations", v.len());
                        problems.extend(v.into_iter().map(|x| format!("{name}: {x}")));
                    }
                    Err(e) => problems.push(format!("{name}: {e}")),
                }
            }
            let ft = bench::ft_bench(2, 3).map_err(fail)?;
            println!("ft smoke: {} failures", ft.failures.len());
            problems.extend(ft.failures);
            threshold(&problems)
        }
    }
}

fn threshold(failures: &[String]) -> Result<(), Failure> {
    match failures.first() {
        None => Ok(()),
        Some(first) => Err(fail(format!(
            "{} check(s) failed, first: {first}",
            failures.len()
        ))),
    }
}

fn csv_of<T: serde::Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
