//! `polysparse`: batch experiments for the sparsity testers and their
//! supporting machinery.
//!
//! Exit codes: 0 when a verdict or result was produced, 2 when the run ended
//! inconclusive or hit a budget, 1 on usage, parse or I/O errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_num, Num};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(polysparse::Error),
}

impl From<polysparse::Error> for CliError {
    fn from(e: polysparse::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

/// Whether the run reached a verdict.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Done,
    Inconclusive,
}

#[derive(Parser, Debug)]
#[command(name = "polysparse", version, about = "Sparsity testing for low-degree polynomials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML experiment config.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Write the result here instead of stdout.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct TesterArgs {
    #[command(flatten)]
    pub common: Common,
    /// Polynomial file for a simulated oracle (overrides the config).
    #[arg(long)]
    pub poly: Option<PathBuf>,
    /// Labeled sample CSV to test instead of simulating.
    #[arg(long, conflicts_with = "poly")]
    pub samples: Option<PathBuf>,
    /// Use exact moments of the polynomial instead of samples.
    #[arg(long)]
    pub exact: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of seeded repetitions; the report aggregates verdict rates.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Record wall time in reports (makes output run-dependent).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw labeled samples from a polynomial under the configured noise.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        poly: Option<PathBuf>,
        /// Number of samples.
        #[arg(long, short)]
        m: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Estimate the clean ℓ-th moment of the labels.
    EstimateMoments {
        #[command(flatten)]
        tester: TesterArgs,
        #[arg(long)]
        order: usize,
        #[arg(long, value_parser = parse_num)]
        tau: Num,
        #[arg(long, value_parser = parse_num, default_value = "1/10")]
        delta: Num,
    },
    /// Run the coarse (moment-threshold) tester.
    CoarseTest(TesterArgs),
    /// Run the sharp (net-based) tester.
    SharpTest(TesterArgs),
    /// Moment-sparsity-gap witnesses.
    Msg {
        #[command(subcommand)]
        cmd: MsgCmd,
    },
    /// Polynomial nets.
    Net {
        #[command(subcommand)]
        cmd: NetCmd,
    },
    /// Exact W₁ between two laws in the "value prob" text format.
    Wasserstein {
        a: PathBuf,
        b: PathBuf,
        /// Also report the moment distance over orders 1..=k.
        #[arg(long)]
        moments: Option<u32>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Anti-concentration checks.
    Dfko {
        #[command(subcommand)]
        cmd: DfkoCmd,
    },
    /// Indistinguishable instance ensembles.
    Hardness {
        #[command(subcommand)]
        cmd: HardnessCmd,
    },
}

#[derive(Subcommand, Debug)]
pub enum MsgCmd {
    /// Search for p (s-sparse) and q (t-sparse) with identical output laws.
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        s: usize,
        #[arg(long)]
        t: usize,
        /// Grid coefficients are ±k/denominator.
        #[arg(long, default_value_t = 4)]
        denominator: u32,
        #[arg(long, default_value_t = 8)]
        max_numerator: u32,
        /// Directory for p.poly, q.poly and certificate.json.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Certify that two given polynomials have identical output laws.
    Witness {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        p: PathBuf,
        #[arg(long)]
        q: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum NetCmd {
    /// Build the nets over s-sparse and ε-far polynomials and save them.
    Build {
        #[command(flatten)]
        common: Common,
        /// Covering radius in coefficient distance (overrides nets.zeta).
        #[arg(long, value_parser = parse_num)]
        zeta: Option<Num>,
        /// Output directory; nets go to <dir>/sparse and <dir>/far.
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum DfkoCmd {
    /// Check one polynomial against a structural theorem.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        poly: Option<PathBuf>,
        #[command(subcommand)]
        check: VerifyCheck,
    },
    /// Bracket the tail constant over a family of polynomials.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[command(subcommand)]
        mode: CalibrateMode,
    },
}

#[derive(Subcommand, Debug)]
pub enum VerifyCheck {
    /// Large-deviation tail theorem with influence hypotheses.
    Tail {
        /// Comma-separated variable indices of J.
        #[arg(long, value_delimiter = ',')]
        j: Vec<u32>,
        #[arg(long, value_parser = parse_num)]
        delta: Num,
        /// Threshold t; compared through t² exactly.
        #[arg(long, value_parser = parse_num)]
        t: Num,
        #[arg(long, value_parser = parse_num, default_value = "1")]
        c: Num,
        /// Divide the polynomial by its norm first.
        #[arg(long)]
        normalize: bool,
    },
    /// Large values of a polynomial far from T-sparse.
    FarSparse {
        #[arg(long)]
        s: usize,
        #[arg(long)]
        t: usize,
        #[arg(long, value_parser = parse_num)]
        eps: Num,
        #[arg(long, value_parser = parse_num, default_value = "1")]
        k: Num,
        #[arg(long, value_parser = parse_num, default_value = "1")]
        c: Num,
    },
    /// Hypercontractive moment bound at order q.
    Hypercontractive {
        #[arg(long, default_value_t = 4.0)]
        q: f64,
    },
    /// Noise operator at rate ρ, both routes.
    Noise {
        #[arg(long, value_parser = parse_num)]
        rho: Num,
    },
}

#[derive(Subcommand, Debug)]
pub enum CalibrateMode {
    /// Range of C meeting the tail theorem on every family member.
    Tail {
        #[arg(long, value_parser = parse_num)]
        delta: Num,
        #[arg(long, value_parser = parse_num)]
        t: Num,
        /// Members are normalized to unit norm.
        #[arg(required = true)]
        polys: Vec<PathBuf>,
    },
    /// Smallest C whose tail bound q(C) every far member meets.
    FarSparse {
        #[arg(long)]
        s: usize,
        #[arg(long, value_parser = parse_num)]
        eps: Num,
        #[arg(long, value_parser = parse_num, default_value = "1")]
        k: Num,
        #[arg(required = true)]
        polys: Vec<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
pub struct WitnessArgs {
    #[command(flatten)]
    pub common: Common,
    /// Sparse side of the witness.
    #[arg(long)]
    pub p: PathBuf,
    /// Dense side of the witness.
    #[arg(long)]
    pub q: PathBuf,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Subcommand, Debug)]
pub enum HardnessCmd {
    /// Samples from one YES or NO instance, as CSV x_1..x_n,y.
    Gen {
        #[command(flatten)]
        w: WitnessArgs,
        #[arg(long)]
        n: u32,
        /// "yes" or "no".
        #[arg(long)]
        case: String,
        #[arg(long, short)]
        m: usize,
    },
    /// Distinguisher advantage as CSV n,m,advantage.
    Curve {
        #[command(flatten)]
        w: WitnessArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<u32>,
        #[arg(long, value_delimiter = ',', required = true)]
        m: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
}

fn run(cli: Cli) -> Result<Status, CliError> {
    match cli.command {
        Command::Simulate { common, poly, m, seed } => commands::simulate(&common, poly.as_deref(), m, seed),
        Command::EstimateMoments { tester, order, tau, delta } => commands::estimate_moments(&tester, order, &tau, &delta),
        Command::CoarseTest(t) => commands::coarse_test(&t),
        Command::SharpTest(t) => commands::sharp_test(&t),
        Command::Msg { cmd } => commands::msg(cmd),
        Command::Net { cmd } => commands::net(cmd),
        Command::Wasserstein { a, b, moments, out } => commands::wasserstein(&a, &b, moments, out.as_deref()),
        Command::Dfko { cmd } => commands::dfko(cmd),
        Command::Hardness { cmd } => commands::hardness(cmd),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::Inconclusive) => ExitCode::from(2),
        Err(CliError::Core(e)) if e.is_budget() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
