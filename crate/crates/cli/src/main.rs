//! `quantum`: validate, translate and analyze dependability models.
//!
//! Exit codes: 0 on success, 1 for problems with the model or the
//! arguments, 2 when a file cannot be read or written.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use quantum_core::analysis::render_report;
use quantum_core::ctmc::{Counterexample, DEFAULT_STATE_CAP};
use quantum_core::expr::fmt_real;
use quantum_core::faulttree::{emit_dot, emit_text, format_probability};
use quantum_core::seqdiag::{append_xmi, emit_plantuml};
use quantum_core::{
    build_global, csl, parse_native, parse_xmi, prepare, prism, validate, AnalysisOptions,
    QumModel, SearchConfig, TransientConfig,
};

#[derive(Parser)]
#[command(name = "quantum", version, about = "Dependability analysis of UML component models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model and list every problem found.
    Validate {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
    },
    /// Write the PRISM model (model.sm) and CSL properties (props.csl).
    Translate {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Artifacts to write [default: sm,csl].
        #[arg(long, value_delimiter = ',')]
        format: Vec<Format>,
    },
    /// Compute hazard probabilities and explain them.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Output directory; without it only the report is printed.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Mission times in hours; repeat the flag or give a comma list.
    #[arg(long = "time", value_name = "T", value_delimiter = ',', required = true)]
    times: Vec<f64>,
    /// State configuration to analyze; may be omitted if the model has one.
    #[arg(long)]
    config: Option<String>,
    #[arg(long, default_value_t = TransientConfig::default().epsilon)]
    epsilon: f64,
    /// Share of the hazard probability the counterexample must cover.
    #[arg(long, default_value_t = SearchConfig::default().mass_fraction)]
    mass_fraction: f64,
    #[arg(long, default_value_t = SearchConfig::default().path_cap)]
    path_cap: usize,
    #[arg(long, default_value_t = DEFAULT_STATE_CAP)]
    state_cap: usize,
    /// Artifacts to write [default: txt,dot,puml, plus xmi for XMI input].
    #[arg(long, value_delimiter = ',')]
    format: Vec<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Sm,
    Csl,
    Dot,
    Puml,
    Xmi,
    Txt,
}

struct Input {
    model: QumModel,
    /// Original bytes when the model came from XMI.
    xmi: Option<Vec<u8>>,
}

/// A model problem found by validation; the individual messages have
/// already been printed.
#[derive(Debug)]
struct Invalid(usize);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "model is invalid ({} problems)", self.0)
    }
}

impl std::error::Error for Invalid {}

fn load(path: &Path) -> Result<Input> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let is_xmi = bytes.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'<');
    let raw = if is_xmi {
        parse_xmi(&bytes).with_context(|| format!("{}: not a readable XMI model", path.display()))?
    } else {
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| anyhow!("{}: file is not UTF-8", path.display()))?;
        parse_native(text).with_context(|| format!("{}", path.display()))?
    };
    let model = validate(&raw).map_err(|errs| {
        for e in &errs {
            eprintln!("  {}: {e}", e.code());
        }
        Invalid(errs.len())
    })?;
    Ok(Input {
        model,
        xmi: is_xmi.then_some(bytes),
    })
}

fn write(dir: &Path, name: &str, contents: &[u8]) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn cmd_validate(input: &Path) -> Result<()> {
    let m = load(input)?.model;
    let machines: usize = m.components.iter().map(|c| c.machines().count()).sum();
    println!(
        "{}: ok ({} components, {} state machines, {} state configurations)",
        m.model_name,
        m.components.len(),
        machines,
        m.state_configs.len()
    );
    Ok(())
}

fn translation(model: &QumModel) -> Result<(String, String)> {
    let global = build_global(model)?;
    let sm = prism::emit_model(&global)?.render();
    let props = csl::render(&csl::generate(&global)?);
    Ok((sm, props))
}

fn cmd_translate(input: &Path, out: &Path, formats: &[Format]) -> Result<()> {
    let formats = if formats.is_empty() {
        vec![Format::Sm, Format::Csl]
    } else {
        formats.to_vec()
    };
    if let Some(f) = formats.iter().find(|f| !matches!(f, Format::Sm | Format::Csl)) {
        bail!(
            "translate writes only sm and csl, not {}",
            f.to_possible_value().unwrap().get_name()
        );
    }
    let model = load(input)?.model;
    let (sm, props) = translation(&model)?;
    create_dir(out)?;
    if formats.contains(&Format::Sm) {
        write(out, "model.sm", sm.as_bytes())?;
    }
    if formats.contains(&Format::Csl) {
        write(out, "props.csl", props.as_bytes())?;
    }
    Ok(())
}

fn render_counterexample(config: &str, t: f64, ce: &Counterexample) -> String {
    let mut s = format!(
        "counterexample for {config} at T = {}: {} paths, mass {} of {} ({})\n",
        fmt_real(t),
        ce.paths.len(),
        format_probability(ce.total_mass),
        format_probability(ce.model_probability),
        if ce.complete { "complete" } else { "truncated" }
    );
    for (i, p) in ce.paths.iter().enumerate() {
        let _ = writeln!(
            s,
            "{:>5}  {}  {}",
            i + 1,
            format_probability(p.probability),
            p.events.join(" -> ")
        );
    }
    s
}

fn check_ranges(a: &AnalyzeArgs) -> Result<()> {
    if let Some(t) = a.times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        bail!("mission time must be finite and non-negative, got {t}");
    }
    if !(a.mass_fraction > 0.0 && a.mass_fraction <= 1.0) {
        bail!("--mass-fraction must lie in (0, 1], got {}", a.mass_fraction);
    }
    if !(a.epsilon > 0.0 && a.epsilon < 1.0) {
        bail!("--epsilon must lie in (0, 1), got {}", a.epsilon);
    }
    if a.path_cap == 0 || a.state_cap == 0 {
        bail!("--path-cap and --state-cap must be positive");
    }
    Ok(())
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    check_ranges(a)?;
    let input = load(&a.input)?;
    let config = match &a.config {
        Some(c) => c.clone(),
        None => match input.model.state_configs.as_slice() {
            [only] => only.name.clone(),
            configs => bail!(
                "--config is required; the model defines {}",
                if configs.is_empty() {
                    "no state configurations".to_string()
                } else {
                    configs.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(", ")
                }
            ),
        },
    };
    let mut formats = a.format.clone();
    if formats.is_empty() {
        formats = vec![Format::Txt, Format::Dot, Format::Puml];
        if input.xmi.is_some() {
            formats.push(Format::Xmi);
        }
    }
    if formats.contains(&Format::Xmi) && input.xmi.is_none() {
        bail!("xmi output needs an XMI input model to extend");
    }

    let options = AnalysisOptions {
        transient: TransientConfig {
            epsilon: a.epsilon,
            ..Default::default()
        },
        search: SearchConfig {
            mass_fraction: a.mass_fraction,
            path_cap: a.path_cap,
            ..Default::default()
        },
        state_cap: a.state_cap,
        ..Default::default()
    };
    let prepared = prepare(&input.model, &config, &options)?;
    let mut results = Vec::new();
    for &t in &a.times {
        let r = prepared.run(t)?;
        if !r.counterexample.complete {
            log::warn!(
                "T = {}: counterexample covers {} of the requested {}",
                fmt_real(t),
                format_probability(r.counterexample.total_mass),
                format_probability(r.counterexample.target)
            );
        }
        results.push(r);
    }
    let report = render_report(&prepared, &results);
    print!("{report}");

    let Some(out) = &a.out else {
        return Ok(());
    };
    create_dir(out)?;
    write(out, "report.txt", report.as_bytes())?;
    if formats.iter().any(|f| matches!(f, Format::Sm | Format::Csl)) {
        let (sm, props) = translation(&input.model)?;
        if formats.contains(&Format::Sm) {
            write(out, "model.sm", sm.as_bytes())?;
        }
        if formats.contains(&Format::Csl) {
            write(out, "props.csl", props.as_bytes())?;
        }
    }
    let mut xmi = input.xmi.clone();
    for r in &results {
        let tag = format!("T{}", r.time);
        if formats.contains(&Format::Txt) {
            let ce = render_counterexample(&config, r.time, &r.counterexample);
            write(out, &format!("counterexample_{tag}.txt"), ce.as_bytes())?;
            write(out, &format!("fault_tree_{tag}.txt"), emit_text(&r.tree).as_bytes())?;
        }
        if formats.contains(&Format::Dot) {
            write(out, &format!("fault_tree_{tag}.dot"), emit_dot(&r.tree).as_bytes())?;
        }
        let mut diagram = r.diagram.clone();
        diagram.name = format!("{config} T={}", r.time);
        if formats.contains(&Format::Puml) {
            write(out, &format!("sequence_{tag}.puml"), emit_plantuml(&diagram).as_bytes())?;
        }
        if let (true, Some(doc)) = (formats.contains(&Format::Xmi), xmi.as_mut()) {
            *doc = append_xmi(&diagram, doc)?;
        }
    }
    if let (true, Some(doc)) = (formats.contains(&Format::Xmi), &xmi) {
        write(out, "model.xmi", doc)?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|c| c.is::<std::io::Error>()) {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QUANTUM_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Validate { input } => cmd_validate(input),
        Command::Translate { input, out, format } => cmd_translate(input, out, format),
        Command::Analyze(a) => cmd_analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
