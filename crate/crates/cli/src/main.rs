//! Thin command surface over the birthtail library.
//!
//! Exit codes: 0 success, 1 domain/usage error, 2 numerical-precision error.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use birthtail::asymptotics::{
    birth_tail, monopoly_tail, quasi_limit_tail, symmetric_correlation_constant, Agent,
    MonopolyMc, QuadratureParams, UrnSystem,
};
use birthtail::density::{ExplosionModel, GridKind};
use birthtail::error::Error;
use birthtail::experiments::{
    list_experiments, load_config_file, run_experiment, write_atomic, ExperimentConfig, Verdict,
};
use birthtail::fmt_sig12;
use birthtail::rates::parse_rate;
use birthtail::sim::{run_batch, simulate_birth, write_birth_csv, write_urn_csv, UrnEmbedding};

const USAGE: &str = "\
birthtail: explosive birth processes and generalized Pólya urns

USAGE: birthtail <command> [--flag value ...]

COMMANDS:
  density         explosion-time density of a rate function
  survival        explosion-time survival P(T > t)
  predict-tail    conditional tail prediction P(Xi(t) > x | T > t)
  quasi-limit     quasi-limiting tail lim_t P(Xi(t) > x | T > t)
  simulate-birth  Monte Carlo of the birth process state at t
  simulate-urn    embedded Monte Carlo of an urn system
  c-constant      loser correlation constant c(A, a)
  montime         monopoly-time tail prediction
  experiment      list | run registered reproduction experiments
  help            this text

Run `birthtail <command> --help` for the command's flags.
All agent indices printed or accepted are 1-based. Every simulation
requires an explicit --seed; there is no wall-clock default.
";

fn command_usage(cmd: &str) -> String {
    match cmd {
        "density" | "survival" => format!(
            "birthtail {cmd} --rate <spec> --x0 <int> (--t <float> | --grid lo:hi:step --out <file>)\n\
             \x20 [--truncation <int, default 100>]\n\
             Rate spec grammar: poly:alpha=<f>,beta=<f> | exp:beta=<f> | polylog:beta=<f> |\n\
             \x20 const:lambda=<f> | table:values=<f>;<f>;...,tail=<spec with '|' for ':'>\n"
        ),
        "predict-tail" => "birthtail predict-tail --rate <spec> --x0 <int> --t <float> --x <int> \
                           [--truncation <int>]\n"
            .into(),
        "quasi-limit" => "birthtail quasi-limit --rate <spec> --x0 <int> --x <int>\n".into(),
        "simulate-birth" => "birthtail simulate-birth --rate <spec> --x0 <int> --t <float> \
                             --replicates <int> --seed <int>\n\x20 [--max-jumps <int, default 1000000>] \
                             [--workers <int>] [--out <file>]\n"
            .into(),
        "simulate-urn" => "birthtail simulate-urn --system <file> --replicates <int> --seed <int>\n\
                           \x20 [--eps <float, default 1e-9>] [--workers <int>] [--out <file>]\n\
                           System file: one `agent=<rate-spec>@<x0>` line per agent, `#` comments.\n"
            .into(),
        "c-constant" => "birthtail c-constant --rate <spec> --agents <int> --a <int> \
                         [--x0 <int, default 1>]\n\x20 [--quad-step <float, default 1e-4>] \
                         [--s-max <float, default 50>] [--truncation <int, default 100>]\n"
            .into(),
        "montime" => "birthtail montime --system <file> --winner <1-based int> --n <int>\n\
                      \x20 [--replicates <int>] [--seed <int>] [--eps <float>] [--workers <int>]\n"
            .into(),
        "experiment" => "birthtail experiment list\n\
                         birthtail experiment run --name <id> [--out-dir <dir, default .>]\n\
                         \x20 [--config <file>] [--set key=value ...] [--seed <int>] [--workers <int>]\n"
            .into(),
        _ => USAGE.to_string(),
    }
}

/// Parsed `--key value` flags; unknown keys are errors, not warnings.
struct Flags {
    values: BTreeMap<String, String>,
    sets: Vec<String>,
}

fn parse_flags(args: &[String], allowed: &[&str]) -> Result<Flags, Error> {
    let mut values = BTreeMap::new();
    let mut sets = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let Some(stripped) = arg.strip_prefix("--") else {
            return Err(Error::Parse(format!("expected a --flag, got `{arg}`")));
        };
        let (key, inline) = match stripped.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (stripped.to_string(), None),
        };
        if !allowed.contains(&key.as_str()) {
            return Err(Error::Parse(format!("unknown flag --{key}")));
        }
        let value = match inline {
            Some(v) => v,
            None => {
                i += 1;
                args.get(i)
                    .cloned()
                    .ok_or_else(|| Error::Parse(format!("--{key} needs a value")))?
            }
        };
        if key == "set" {
            sets.push(value);
        } else if values.insert(key.clone(), value).is_some() {
            return Err(Error::Parse(format!("--{key} given twice")));
        }
        i += 1;
    }
    Ok(Flags { values, sets })
}

impl Flags {
    fn required(&self, key: &str) -> Result<&str, Error> {
        self.values
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Parse(format!("missing required flag --{key}")))
    }

    fn optional(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn u64(&self, key: &str) -> Result<u64, Error> {
        self.required(key)?
            .parse()
            .map_err(|_| Error::Parse(format!("--{key} must be an integer")))
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64, Error> {
        match self.optional(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Parse(format!("--{key} must be an integer"))),
        }
    }

    fn f64(&self, key: &str) -> Result<f64, Error> {
        self.required(key)?
            .parse()
            .map_err(|_| Error::Parse(format!("--{key} must be a number")))
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, Error> {
        match self.optional(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Parse(format!("--{key} must be a number"))),
        }
    }

    fn workers(&self) -> Result<usize, Error> {
        match self.optional("workers") {
            Some(v) => v
                .parse()
                .map_err(|_| Error::Parse("--workers must be an integer".into())),
            None => match std::env::var("BIRTHTAIL_WORKERS") {
                Ok(v) => v
                    .parse()
                    .map_err(|_| Error::Parse("BIRTHTAIL_WORKERS must be an integer".into())),
                Err(_) => Ok(0),
            },
        }
    }
}

/// One `agent=<rate-spec>@<x0>` line per agent, `#` comments.
fn load_system(path: &Path) -> Result<UrnSystem, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut agents = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let rest = line.strip_prefix("agent=").ok_or_else(|| {
            Error::Parse(format!(
                "{}:{}: expected `agent=<rate-spec>@<x0>`, got `{raw}`",
                path.display(),
                lineno + 1
            ))
        })?;
        let (spec, x0) = rest.rsplit_once('@').ok_or_else(|| {
            Error::Parse(format!(
                "{}:{}: missing `@<x0>` in `{raw}`",
                path.display(),
                lineno + 1
            ))
        })?;
        let x0 = x0
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("initial count `{x0}` is not an integer")))?;
        agents.push(Agent {
            rate: parse_rate(spec)?,
            x0,
        });
    }
    UrnSystem::new(agents)
}

fn write_output(out: Option<&str>, bytes: Vec<u8>) -> Result<(), Error> {
    match out {
        Some(path) => write_atomic(Path::new(path), &bytes),
        None => {
            std::io::stdout().write_all(&bytes).map_err(Error::from)?;
            Ok(())
        }
    }
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, Error> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Parse(format!(
            "--grid expects lo:hi:step, got `{spec}`"
        )));
    }
    let lo: f64 = parts[0]
        .parse()
        .map_err(|_| Error::Parse("grid lo is not a number".into()))?;
    let hi: f64 = parts[1]
        .parse()
        .map_err(|_| Error::Parse("grid hi is not a number".into()))?;
    let step: f64 = parts[2]
        .parse()
        .map_err(|_| Error::Parse("grid step is not a number".into()))?;
    if !(step > 0.0) || hi <= lo || lo < 0.0 {
        return Err(Error::Parse("grid needs 0 <= lo < hi and step > 0".into()));
    }
    let n = ((hi - lo) / step).round() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).collect())
}

fn cmd_density(args: &[String], kind: GridKind) -> Result<(), Error> {
    let flags = parse_flags(args, &["rate", "x0", "t", "truncation", "grid", "out"])?;
    let rate = parse_rate(flags.required("rate")?)?;
    let x0 = flags.u64("x0")?;
    let truncation = flags.u64_or("truncation", 100)? as usize;
    let model = ExplosionModel::with_truncation(rate, x0, truncation)?;
    match (flags.optional("t"), flags.optional("grid")) {
        (Some(_), None) => {
            let t = flags.f64("t")?;
            let v = match kind {
                GridKind::Density => model.density(t)?,
                GridKind::Survival => model.survival(t)?,
                GridKind::Hazard => model.hazard_prefactor(t)?,
            };
            println!("{}", fmt_sig12(v));
            Ok(())
        }
        (None, Some(grid)) => {
            let ts = parse_grid(grid)?;
            let g = model.grid(ts, kind)?;
            let mut buf = Vec::new();
            g.write_csv(&mut buf)?;
            write_output(flags.optional("out"), buf)
        }
        _ => Err(Error::Parse(
            "give exactly one of --t <float> or --grid lo:hi:step".into(),
        )),
    }
}

fn cmd_predict_tail(args: &[String]) -> Result<(), Error> {
    let flags = parse_flags(args, &["rate", "x0", "t", "x", "truncation"])?;
    let rate = parse_rate(flags.required("rate")?)?;
    let model = ExplosionModel::with_truncation(
        rate,
        flags.u64("x0")?,
        flags.u64_or("truncation", 100)? as usize,
    )?;
    let v = birth_tail(&model, flags.f64("t")?, flags.u64("x")?)?;
    println!("{}", fmt_sig12(v));
    Ok(())
}

fn cmd_quasi_limit(args: &[String]) -> Result<(), Error> {
    let flags = parse_flags(args, &["rate", "x0", "x"])?;
    let rate = parse_rate(flags.required("rate")?)?;
    let v = quasi_limit_tail(&rate, flags.u64("x0")?, flags.u64("x")?)?;
    println!("{}", fmt_sig12(v));
    Ok(())
}

fn cmd_simulate_birth(args: &[String]) -> Result<(), Error> {
    let flags = parse_flags(
        args,
        &["rate", "x0", "t", "replicates", "seed", "max-jumps", "workers", "out"],
    )?;
    let rate = parse_rate(flags.required("rate")?)?;
    let x0 = flags.u64("x0")?;
    let t = flags.f64("t")?;
    let replicates = flags.u64("replicates")?;
    let seed = flags.u64("seed")?;
    let max_jumps = flags.u64_or("max-jumps", 1_000_000)?;
    let outs = run_batch(replicates, seed, flags.workers()?, |s| {
        simulate_birth(&rate, x0, t, max_jumps, s)
    })?;
    let mut buf = Vec::new();
    write_birth_csv(&outs, &mut buf)?;
    write_output(flags.optional("out"), buf)
}

fn cmd_simulate_urn(args: &[String]) -> Result<(), Error> {
    let flags = parse_flags(
        args,
        &["system", "replicates", "seed", "eps", "workers", "out"],
    )?;
    let system = load_system(Path::new(flags.required("system")?))?;
    let eps = flags.f64_or("eps", 1e-9)?;
    let embedding = UrnEmbedding::new(&system, eps)?;
    let outs = run_batch(
        flags.u64("replicates")?,
        flags.u64("seed")?,
        flags.workers()?,
        |s| embedding.simulate(s),
    )?;
    let mut buf = Vec::new();
    write_urn_csv(system.len(), &outs, &mut buf)?;
    write_output(flags.optional("out"), buf)
}

fn cmd_c_constant(args: &[String]) -> Result<(), Error> {
    let flags = parse_flags(
        args,
        &["rate", "agents", "a", "x0", "quad-step", "s-max", "truncation"],
    )?;
    let rate = parse_rate(flags.required("rate")?)?;
    let quad = QuadratureParams {
        step: flags.f64_or("quad-step", 1e-4)?,
        s_max: flags.f64_or("s-max", 50.0)?,
        truncation: flags.u64_or("truncation", 100)? as usize,
        ..QuadratureParams::default()
    };
    let c = symmetric_correlation_constant(
        &rate,
        flags.u64_or("x0", 1)?,
        flags.u64("agents")?,
        flags.u64("a")? as u32,
        &quad,
    )?;
    println!("{}", fmt_sig12(c));
    Ok(())
}

fn cmd_montime(args: &[String]) -> Result<(), Error> {
    let flags = parse_flags(
        args,
        &["system", "winner", "n", "replicates", "seed", "eps", "workers"],
    )?;
    let system = load_system(Path::new(flags.required("system")?))?;
    let winner = flags.u64("winner")? as usize;
    if winner < 1 {
        return Err(Error::Parse("--winner is 1-based".into()));
    }
    let mc = MonopolyMc {
        replicates: flags.u64_or("replicates", 100_000)?,
        master_seed: flags.u64_or("seed", MonopolyMc::default().master_seed)?,
        workers: flags.workers()?,
        eps: flags.f64_or("eps", 1e-4)?,
    };
    let t = monopoly_tail(&system, winner - 1, flags.u64("n")?, &mc)?;
    println!("{}", t.prediction.to_jsonl());
    if let Some(v) = t.survival_at_n {
        println!("survival_at_n = {}", fmt_sig12(v));
    }
    Ok(())
}

fn cmd_experiment(args: &[String]) -> Result<(), Error> {
    let sub = args
        .first()
        .ok_or_else(|| Error::Parse("expected `experiment list` or `experiment run`".into()))?;
    match sub.as_str() {
        "list" => {
            if args.len() > 1 {
                return Err(Error::Parse("`experiment list` takes no flags".into()));
            }
            for info in list_experiments() {
                println!("{:<22} {}", info.name, info.summary);
            }
            Ok(())
        }
        "run" => {
            let flags = parse_flags(
                &args[1..],
                &["name", "out-dir", "config", "set", "seed", "workers"],
            )?;
            let name = flags.required("name")?.to_string();
            let mut overrides: BTreeMap<String, String> = BTreeMap::new();
            if let Some(cfg_path) = flags.optional("config") {
                let file = load_config_file(Path::new(cfg_path))?;
                if let Some(section) = file.get(&name) {
                    overrides.extend(section.clone());
                }
            }
            // CLI --set and dedicated flags take precedence over the file
            for set in &flags.sets {
                let (k, v) = set
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("--set expects key=value, got `{set}`")))?;
                overrides.insert(k.trim().to_string(), v.trim().to_string());
            }
            if let Some(seed) = flags.optional("seed") {
                overrides.insert("seed".into(), seed.into());
            }
            let workers = flags.workers()?;
            if workers > 0 {
                overrides.insert("workers".into(), workers.to_string());
            }
            let out_dir = PathBuf::from(flags.optional("out-dir").unwrap_or("."));
            let report = run_experiment(&ExperimentConfig {
                name: name.clone(),
                overrides,
                output_dir: out_dir.clone(),
            })?;
            for m in &report.metrics {
                let verdict = match m.verdict {
                    Verdict::Pass => "pass",
                    Verdict::Fail => "FAIL",
                    Verdict::Flagged => "flagged",
                };
                println!(
                    "{verdict}: {} = {} (target {} ± {}){}",
                    m.metric,
                    fmt_sig12(m.value),
                    fmt_sig12(m.target),
                    fmt_sig12(m.tolerance),
                    m.note
                        .as_ref()
                        .map(|n| format!(" [{n}]"))
                        .unwrap_or_default()
                );
            }
            println!(
                "report: {}",
                out_dir.join(format!("{name}.report.jsonl")).display()
            );
            Ok(())
        }
        other => Err(Error::Parse(format!(
            "unknown experiment subcommand `{other}`"
        ))),
    }
}

fn dispatch(argv: &[String]) -> Result<(), Error> {
    let Some(cmd) = argv.first() else {
        print!("{USAGE}");
        return Ok(());
    };
    let rest = &argv[1..];
    if rest.iter().any(|a| a == "--help" || a == "-h") {
        print!("{}", command_usage(cmd));
        return Ok(());
    }
    match cmd.as_str() {
        "density" => cmd_density(rest, GridKind::Density),
        "survival" => cmd_density(rest, GridKind::Survival),
        "predict-tail" => cmd_predict_tail(rest),
        "quasi-limit" => cmd_quasi_limit(rest),
        "simulate-birth" => cmd_simulate_birth(rest),
        "simulate-urn" => cmd_simulate_urn(rest),
        "c-constant" => cmd_c_constant(rest),
        "montime" => cmd_montime(rest),
        "experiment" => cmd_experiment(rest),
        "help" | "--help" | "-h" => {
            print!("{USAGE}");
            Ok(())
        }
        other => Err(Error::Parse(format!(
            "unknown command `{other}`; run `birthtail help`"
        ))),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("birthtail: {e}");
            if e.is_precision_loss() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
