use std::process::ExitCode;

mod args;
mod commands;
mod config;
mod manifest;
mod svg;

use args::Command;
use commands::Globals;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast::<clap::Error>() {
            Ok(usage) => {
                let _ = usage.print();
                ExitCode::from(if usage.use_stderr() { 2 } else { 0 })
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}

fn run() -> anyhow::Result<()> {
    let cli = config::parse(std::env::args_os().collect())?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(clap::Error::raw(clap::error::ErrorKind::InvalidValue, "--threads must be >= 1\n").into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let g = Globals { seed: cli.seed, threads: cli.threads };
    log::debug!("running {}", cli.command.name());
    match &cli.command {
        Command::SynthGen(a) => commands::synth_gen(a, &g),
        Command::MinePairs(a) => commands::mine_pairs(a, &g),
        Command::Pretrain(a) => commands::pretrain(a, &g),
        Command::Finetune(a) => commands::finetune(a, &g),
        Command::EvalNdcg(a) => commands::eval_ndcg(a, &g),
        Command::EvalSpearman(a) => commands::eval_spearman(a, &g),
        Command::AnalyzeCosine(a) => commands::analyze_cosine(a, &g),
        Command::Report(a) => commands::report(a, &g),
    }
}
