mod load;
mod manifest;

use clap::{Args, Parser, Subcommand, ValueEnum};
use load::Inputs;
use manifest::RunManifest;
use opforge::amalgam::{extend_and_pair, nap_amalgamate_1exact, pushout_bounds};
use opforge::chain::{exactness_estimate, run_chain, ChainConfig};
use opforge::concretize::concretize;
use opforge::json::SCHEMA;
use opforge::linalg::ginibre;
use opforge::maps::{cb_norm_bounds, map_norm_bounds};
use opforge::metric::{fraisse_distance_bounds, inequality_suite};
use opforge::sdp::{solve_spectral_min, SpectralProgram};
use opforge::space::{check_ruan, random_space};
use opforge::{AmbientSignature, Budget, EvalCtx, LinearMap, OpError, Result, SpaceElement};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

#[derive(Parser, Debug, Serialize)]
#[command(name = "opforge", version, about = "Certified numerics for matrix-normed spaces")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Serialize)]
struct Common {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Random restarts and iterations per lower-bound search, as `RESTARTS,ITERATIONS`.
    #[arg(long, global = true, default_value = "25,200", value_parser = parse_budget)]
    #[serde(skip)]
    budget: (usize, usize),
    /// Level cap for 1-sum evaluators read from files that do not state one.
    #[arg(long, global = true, default_value_t = 2)]
    ncap: usize,
    #[arg(long, global = true)]
    gap_tol: Option<f64>,
    #[arg(long, global = true)]
    feas_tol: Option<f64>,
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    /// Write a run manifest here.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
}

fn parse_budget(s: &str) -> std::result::Result<(usize, usize), String> {
    let (r, i) = s.split_once(',').ok_or("expected RESTARTS,ITERATIONS")?;
    Ok((r.trim().parse().map_err(|e| format!("{e}"))?, i.trim().parse().map_err(|e| format!("{e}"))?))
}

#[derive(Subcommand, Debug, Serialize)]
enum Command {
    /// Norm of an element at its level.
    Norm {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        element: PathBuf,
        #[arg(long)]
        level: Option<usize>,
    },
    /// k-norm or cb-norm of a linear map.
    Mapnorm {
        #[arg(long)]
        domain: PathBuf,
        #[arg(long)]
        codomain: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long, conflicts_with = "cb")]
        level: Option<usize>,
        #[arg(long)]
        cb: bool,
    },
    /// Distance interval between two based spaces.
    Dist {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        a_tuple: Option<PathBuf>,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        b_tuple: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        level: usize,
        /// Also run the comparison inequalities.
        #[arg(long)]
        inequalities: bool,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 1e-4)]
        slack: f64,
    },
    /// Amalgamate `X -> B0` and `f: X -> B1`; staged 1-exact mode when `--eps` is given.
    Amalgamate {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        x_sub: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 3)]
        stages: usize,
        /// Stage records as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
        /// The amalgam as space JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the pushout on probe elements and check the canonical maps.
    PushoutCheck {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        #[arg(long)]
        probes_x: Option<PathBuf>,
        #[arg(long)]
        probes_y: Option<PathBuf>,
    },
    /// Iterated amalgamation chain with a defect ledger.
    Chain {
        #[arg(long, value_enum, default_value_t = Mode::Mn)]
        mode: Mode,
        #[arg(long, default_value_t = 1)]
        level: usize,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long)]
        probes: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        algebra_sizes: Option<Vec<usize>>,
        #[arg(long)]
        target: Option<f64>,
        #[arg(long, default_value_t = 2000)]
        dim_cap: usize,
        #[arg(long, default_value_t = 0)]
        snapshot_every: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Intervals for the MIN_n comparison constants of a concrete space.
    Exactness {
        #[arg(long)]
        space: PathBuf,
        #[arg(long, default_value_t = 3)]
        n_max: usize,
    },
    /// Randomized self-checks.
    Check {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 20)]
        count: usize,
    },
    /// Concrete copy of a derived space at a level.
    Concretize {
        #[arg(long)]
        space: PathBuf,
        #[arg(long, default_value_t = 1)]
        level: usize,
        #[arg(long, default_value_t = 0.01)]
        eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Mn,
    E1,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum Suite {
    Ruan,
    Solver,
}

struct Run {
    ctx: EvalCtx,
    ncap: usize,
    inputs: Inputs,
    outputs: Vec<(PathBuf, String)>,
}

impl Run {
    fn write(&mut self, path: &Path, contents: &str) -> Result<()> {
        std::fs::write(path, contents).map_err(|e| OpError::Invalid(format!("{}: {e}", path.display())))?;
        self.outputs.push((path.to_path_buf(), load::sha256_hex(contents.as_bytes())));
        Ok(())
    }
}

fn with_schema<T: Serialize>(v: &T) -> Value {
    let mut v = serde_json::to_value(v).expect("serializable");
    if let Value::Object(m) = &mut v {
        m.entry("schema").or_insert_with(|| SCHEMA.into());
    }
    v
}

fn execute(cmd: &Command, run: &mut Run) -> Result<(Value, bool)> {
    let ctx = run.ctx;
    let ncap = run.ncap;
    Ok(match cmd {
        Command::Norm { space, element, level } => {
            let s = run.inputs.space(space, ncap)?;
            let x = run.inputs.element(element)?;
            if let Some(l) = level {
                if *l != x.level {
                    return Err(OpError::Invalid(format!("element is at level {}, not {l}", x.level)));
                }
            }
            let b = s.norm_bounds(&x, &ctx)?;
            (json!({"schema": SCHEMA, "level": x.level, "bound": b}), true)
        }
        Command::Mapnorm { domain, codomain, map, level, cb } => {
            let d = Arc::new(run.inputs.space(domain, ncap)?);
            let t = Arc::new(run.inputs.space(codomain, ncap)?);
            let f = LinearMap::new(d, t, run.inputs.matrix(map)?)?;
            let (b, lvl) = if *cb {
                (cb_norm_bounds(&f, &ctx)?, Value::String("cb".into()))
            } else {
                let k = level.unwrap_or(1);
                (map_norm_bounds(&f, k, &ctx)?, k.into())
            };
            (json!({"schema": SCHEMA, "level": lvl, "bound": b}), true)
        }
        Command::Dist { a, a_tuple, b, b_tuple, level, inequalities, samples, slack } => {
            let a = run.inputs.based(a, a_tuple.as_deref(), &ctx)?;
            let b = run.inputs.based(b, b_tuple.as_deref(), &ctx)?;
            if *inequalities {
                let r = inequality_suite(&a, &b, *level, *samples, *slack, &ctx)?;
                let ok = r.all_hold;
                (with_schema(&r), ok)
            } else {
                (with_schema(&fraisse_distance_bounds(&a, &b, *level, &ctx)?), true)
            }
        }
        Command::Amalgamate { x, x_sub, y, map, delta, eps, stages, log, out } => {
            let b0 = run.inputs.concrete(x)?;
            let sub = run.inputs.matrix(x_sub)?;
            let b1 = run.inputs.concrete(y)?;
            let f = run.inputs.matrix(map)?;
            match eps {
                Some(eps) => {
                    let r = nap_amalgamate_1exact(&b0, &sub, &b1, &f, *delta, *eps, *stages, &ctx)?;
                    if let Some(p) = log {
                        let mut buf = Vec::new();
                        r.write_log(&mut buf).map_err(|e| OpError::Invalid(e.to_string()))?;
                        run.write(p, &String::from_utf8(buf).expect("utf8"))?;
                    }
                    if let Some(p) = out {
                        run.write(p, &r.final_space().to_json())?;
                    }
                    let v = json!({
                        "schema": SCHEMA,
                        "stages": r.stages,
                        "tolerance": r.tolerance,
                        "all_hold": r.all_hold,
                        "final_dim": r.final_space().dim(),
                    });
                    (v, r.all_hold)
                }
                None => {
                    let r = extend_and_pair(&b0, &sub, &b1, &f, *delta, &ctx)?;
                    if let Some(p) = out {
                        run.write(p, &r.amalgam.to_json())?;
                    }
                    (with_schema(&r.summary()), true)
                }
            }
        }
        Command::PushoutCheck { x, y, map, delta, probes_x, probes_y } => {
            let xs = run.inputs.concrete(x)?;
            let ys = run.inputs.concrete(y)?;
            let f = run.inputs.matrix(map)?;
            let basis = |d: usize| -> Vec<SpaceElement> {
                (0..d)
                    .map(|i| SpaceElement::single(d, i, opforge::linalg::CMat::identity(1, 1)))
                    .collect()
            };
            let px = match probes_x {
                Some(p) => run.inputs.elements(p)?,
                None => basis(xs.dim()),
            };
            let py = match probes_y {
                Some(p) => run.inputs.elements(p)?,
                None => basis(ys.dim()),
            };
            let r = pushout_bounds(&xs, &ys, &f, *delta, &px, &py, &ctx)?;
            let ok = r.all_consistent;
            (with_schema(&r), ok)
        }
        Command::Chain { mode, level, steps, probes, algebra_sizes, target, dim_cap, snapshot_every, out } => {
            let mut cfg = match mode {
                Mode::Mn => ChainConfig::mn(*level, *steps, ctx.seed),
                Mode::E1 => ChainConfig::e1(*steps, ctx.seed),
            };
            if let Some(p) = probes {
                cfg.probes = *p;
            }
            if let Some(a) = algebra_sizes {
                cfg.algebra_sizes = a.clone();
            }
            if let Some(t) = target {
                cfg.target = *t;
            }
            cfg.dim_cap = *dim_cap;
            cfg.snapshot_every = *snapshot_every;
            let (state, mut report) = run_chain(&cfg, &ctx)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(dir).map_err(|e| OpError::Invalid(format!("{}: {e}", dir.display())))?;
                for s in &report.snapshots {
                    run.write(&dir.join(format!("snapshot-{:05}.json", s.step)), &s.space.to_json())?;
                }
                run.write(&dir.join("final.json"), &state.current.to_json())?;
                let lines: String = state
                    .ledger
                    .iter()
                    .map(|e| serde_json::to_string(e).expect("serializable") + "\n")
                    .collect();
                run.write(&dir.join("ledger.jsonl"), &lines)?;
                report.snapshots.clear();
            }
            let mut v = with_schema(&report);
            v["target_met"] = (report.max_defect <= cfg.target).into();
            (v, true)
        }
        Command::Exactness { space, n_max } => {
            let s = run.inputs.concrete(space)?;
            let b = exactness_estimate(&s, *n_max, &ctx)?;
            (json!({"schema": SCHEMA, "levels": (1..=*n_max).collect::<Vec<_>>(), "bounds": b}), true)
        }
        Command::Check { suite, samples, count } => check(*suite, *samples, *count, &ctx),
        Command::Concretize { space, level, eps, out } => {
            let s = run.inputs.space(space, ncap.max(*level))?;
            let r = concretize(&s, *level, *eps, &ctx)?;
            if let Some(p) = out {
                run.write(p, &r.space.to_json())?;
            }
            let ok = r.target_met;
            (with_schema(&r), ok)
        }
    })
}

fn check(suite: Suite, samples: usize, count: usize, ctx: &EvalCtx) -> (Value, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    match suite {
        Suite::Ruan => {
            let mut worst: f64 = 0.0;
            let mut spaces = 0;
            for i in 0..count {
                let blocks: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=4)).collect();
                let amb = AmbientSignature(blocks);
                let dim = rng.random_range(1..=amb.dim().min(6));
                let Ok(s) = random_space(&amb, dim, rng.random()) else { continue };
                worst = worst.max(check_ruan(&s, samples, ctx.seed.wrapping_add(i as u64), 1e-8).max_violation());
                spaces += 1;
            }
            let ok = worst <= 1e-8;
            let v = json!({"schema": SCHEMA, "suite": "ruan", "spaces": spaces, "samples": samples,
                "max_violation": worst, "tolerance": 1e-8, "pass": ok});
            (v, ok)
        }
        Suite::Solver => {
            let mut gap: f64 = 0.0;
            let mut failures = 0;
            for _ in 0..count {
                let d = rng.random_range(1..=6);
                let mut p = SpectralProgram::new(d);
                for _ in 0..rng.random_range(1..=3) {
                    let (r, cc) = (rng.random_range(1..=3), rng.random_range(1..=3));
                    p.add_block(ginibre(&mut rng, r, cc), (0..d).map(|_| ginibre(&mut rng, r, cc)).collect());
                }
                let s = solve_spectral_min(&p);
                if s.status != opforge::sdp::SolveStatus::Optimal {
                    failures += 1;
                }
                gap = gap.max(s.gap);
            }
            let ok = failures == 0 && gap <= 1e-8;
            let v = json!({"schema": SCHEMA, "suite": "solver", "programs": count, "failures": failures,
                "max_gap": gap, "tolerance": 1e-8, "pass": ok});
            (v, ok)
        }
    }
}

fn error_json(e: &OpError) -> String {
    json!({"schema": SCHEMA, "error": e, "message": e.to_string()}).to_string()
}

/// Runs one command line and returns the process exit code.
fn dispatch(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let start = Instant::now();
    let mut ctx = EvalCtx::with_seed(cli.common.seed).with_budget(Budget::new(cli.common.budget.0, cli.common.budget.1));
    if let Some(t) = cli.common.gap_tol {
        ctx.solver.gap_tol = t;
    }
    if let Some(t) = cli.common.feas_tol {
        ctx.solver.feas_tol = t;
    }
    if let Some(m) = cli.common.max_iter {
        ctx.solver.max_iter = m;
    }
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.common.threads.max(1)).build_global();
    let mut run = Run {
        ctx,
        ncap: cli.common.ncap,
        inputs: Inputs::default(),
        outputs: Vec::new(),
    };
    match execute(&cli.command, &mut run) {
        Ok((value, ok)) => {
            let text = serde_json::to_string_pretty(&value).expect("serializable");
            println!("{text}");
            run.outputs.push((PathBuf::from("-"), load::sha256_hex(text.as_bytes())));
            if let Some(p) = &cli.common.manifest {
                let m = RunManifest::new(&argv, &cli, &run, start.elapsed().as_secs_f64());
                if let Err(e) = std::fs::write(p, serde_json::to_string_pretty(&m).expect("serializable")) {
                    eprintln!("{}", error_json(&OpError::Invalid(format!("{}: {e}", p.display()))));
                    return 1;
                }
            }
            if ok {
                0
            } else {
                eprintln!("{}", error_json(&OpError::Invalid("a reported check did not hold".into())));
                1
            }
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            1
        }
    }
}

fn main() {
    std::process::exit(dispatch(std::env::args().collect()));
}
