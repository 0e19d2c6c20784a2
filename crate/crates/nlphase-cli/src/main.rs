mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, Settings};

/// Nonlocal phase-transition energies: kernel audits, energies, minimizers
/// and the scaling, perturbation and symmetry experiments.
#[derive(Parser, Debug)]
#[command(name = "nlphase", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the kernel structure assumptions on random samples
    Audit(Common),
    /// Energy decomposition of the configured data
    Energy(Common),
    /// Minimize in B_R with the configured exterior data
    Minimize(Common),
    /// Energy growth of minimizers over a list of radii
    Scaling(Common),
    /// Second-order response to a compactly supported domain perturbation
    Perturb(Common),
    /// One-dimensionality diagnostic of a planar minimizer or grid file
    Symmetry(Common),
    /// Randomized property suites
    Checks(Common),
}

/// Flags shadow config values, which shadow built-in defaults.
#[derive(Args, Debug, Clone)]
struct Common {
    /// Configuration file with [block] headers and key = value lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread cap
    #[arg(long)]
    threads: Option<usize>,
    /// pLaplacian or meanCurvature
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    s: Option<String>,
    #[arg(long)]
    p: Option<String>,
    /// doubleWell or zero
    #[arg(long)]
    potential: Option<String>,
    #[arg(long = "R")]
    r: Option<String>,
    #[arg(long = "R-box")]
    r_box: Option<String>,
    #[arg(long)]
    h: Option<String>,
    /// Comma-separated radii
    #[arg(long = "R-list")]
    r_list: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long = "max-iters")]
    max_iters: Option<String>,
    /// auto, analytic_constant, quadrature_1d or none
    #[arg(long)]
    tail: Option<String>,
    /// Exterior data rule
    #[arg(long)]
    data: Option<String>,
    /// Grid function file used as data
    #[arg(long)]
    input: Option<String>,
    /// Any config field, as block.key=value
    #[arg(long = "set", value_name = "BLOCK.KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn settings(&self) -> Result<Settings, ConfigError> {
        let mut st = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
                Settings::parse(&text)?
            }
            None => Settings::default(),
        };
        let seed = self.seed.map(|v| v.to_string());
        let out = self.out.as_ref().map(|p| p.display().to_string());
        let flags: [(&Option<String>, &str, &str, &str); 16] = [
            (&self.family, "kernel", "family", "family"),
            (&self.n, "kernel", "n", "n"),
            (&self.s, "kernel", "s", "s"),
            (&self.p, "kernel", "p", "p"),
            (&self.potential, "potential", "name", "potential"),
            (&self.r, "domain", "R", "R"),
            (&self.r_box, "domain", "R_box", "R-box"),
            (&self.h, "domain", "h", "h"),
            (&self.r_list, "experiment", "R_list", "R-list"),
            (&self.samples, "experiment", "sample_count", "samples"),
            (&self.max_iters, "solver", "max_iters", "max-iters"),
            (&self.tail, "quadrature", "tail", "tail"),
            (&self.data, "data", "rule", "data"),
            (&self.input, "data", "file", "input"),
            (&seed, "experiment", "seed", "seed"),
            (&out, "output", "dir", "out"),
        ];
        for a in &self.set {
            st.set_assignment(a)?;
        }
        for (v, block, key, flag) in flags {
            if let Some(v) = v {
                st.set_flag(block, key, v, flag)?;
            }
        }
        Ok(st)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Audit(c) => ("audit", c),
        Command::Energy(c) => ("energy", c),
        Command::Minimize(c) => ("minimize", c),
        Command::Scaling(c) => ("scaling", c),
        Command::Perturb(c) => ("perturb", c),
        Command::Symmetry(c) => ("symmetry", c),
        Command::Checks(c) => ("checks", c),
    };
    if let Some(t) = common.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let settings = match common.settings() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run::dispatch(name, &settings) {
        Ok(run::Verdict { passed, summary }) => {
            println!("{summary}");
            ExitCode::from(if passed { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
