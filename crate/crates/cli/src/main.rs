use clap::Parser;

fn main() -> anyhow::Result<()> {
    cfvq_cli::run(cfvq_cli::Cli::parse())?;
    Ok(())
}
