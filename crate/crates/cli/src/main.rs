use std::io::Write;
use std::process::ExitCode;

use cfid_cli::{run, CliConfig, Format, GraphSource, OracleCheck};
use cfid_core::DataLevel;
use clap::Parser;

/// Decide whether a counterfactual query is identifiable in a causal diagram.
#[derive(Debug, Parser)]
#[command(name = "cfid", version)]
struct Args {
    /// Graph text such as "X -> Y; X <-> Y", or @path to a text or JSON file.
    #[arg(short, long)]
    graph: GraphSource,

    /// Vertex to project out as latent; repeatable.
    #[arg(long = "latent")]
    latents: Vec<String>,

    /// Query conjunction, e.g. "Y[X=0]=0 & X=1".
    #[arg(long)]
    gamma: String,

    /// Conditioning conjunction.
    #[arg(long)]
    delta: Option<String>,

    /// Distributions the answer may use: interventions, observations or both.
    #[arg(long, default_value = "interventions")]
    data: DataLevel,

    #[arg(long, value_enum, default_value_t = Format::Latex)]
    format: Format,

    /// Check the formula on random models, e.g. "n=2,seeds=100,base=42".
    #[arg(long)]
    oracle_check: Option<OracleCheck>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let outcome = run(&CliConfig {
        graph: args.graph,
        latents: args.latents,
        gamma: args.gamma,
        delta: args.delta,
        data: args.data,
        format: args.format,
        oracle_check: args.oracle_check,
    });
    print!("{}", outcome.stdout);
    eprint!("{}", outcome.stderr);
    let _ = std::io::stdout().flush();
    ExitCode::from(outcome.code as u8)
}
