mod args;
mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use manifest::{Ctx, Failure};

fn default_manifest(command: &Command) -> PathBuf {
    let beside = |p: &PathBuf| {
        let mut s = p.as_os_str().to_os_string();
        s.push(".manifest.json");
        PathBuf::from(s)
    };
    match command {
        Command::Gap(a) => beside(&a.out),
        Command::Pretrain(a) => beside(&a.out_checkpoint),
        Command::Cluster(a) => beside(&a.out_assignments),
        Command::Eval(a) => beside(&a.out),
        Command::Baseline(a) => beside(&a.out),
        Command::Project(a) => beside(&a.out),
        Command::Plot(a) => beside(&a.out),
        Command::Run(a) => a.out_dir.join("manifest.json"),
    }
}

fn flags(cli: &Cli) -> serde_json::Value {
    let mut v = match &cli.command {
        Command::Gap(a) => serde_json::to_value(a),
        Command::Pretrain(a) => serde_json::to_value(a),
        Command::Cluster(a) => serde_json::to_value(a),
        Command::Eval(a) => serde_json::to_value(a),
        Command::Baseline(a) => serde_json::to_value(a),
        Command::Project(a) => serde_json::to_value(a),
        Command::Plot(a) => serde_json::to_value(a),
        Command::Run(a) => serde_json::to_value(a),
    }
    .expect("arguments serialize");
    if let Some(map) = v.as_object_mut() {
        map.insert("csv_header".into(), cli.csv_header.into());
    }
    v
}

fn dispatch(ctx: &mut Ctx, command: &Command) -> Result<(), Failure> {
    match command {
        Command::Gap(a) => commands::gap(ctx, a),
        Command::Pretrain(a) => commands::pretrain_cmd(ctx, a),
        Command::Cluster(a) => commands::cluster_cmd(ctx, a),
        Command::Eval(a) => commands::eval_cmd(ctx, a),
        Command::Baseline(a) => commands::baseline_cmd(ctx, a),
        Command::Project(a) => commands::project_cmd(ctx, a),
        Command::Plot(a) => commands::plot_cmd(ctx, a),
        Command::Run(a) => commands::run_cmd(ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("delius: --threads must be at least 1");
        return ExitCode::from(2);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
    {
        eprintln!("delius: cannot start thread pool: {e}");
        return ExitCode::from(2);
    }

    let mut ctx = Ctx::new(cli.seed, cli.csv_header);
    let result = dispatch(&mut ctx, &cli.command);
    if result.is_err() {
        ctx.mark_partial();
    }
    let failure = result.as_ref().err();
    let manifest = cli
        .manifest
        .clone()
        .unwrap_or_else(|| default_manifest(&cli.command));
    let flags = flags(&cli);
    if let Err(e) = ctx.write_manifest(&manifest, cli.command.name(), cli.threads, &flags, failure)
    {
        if failure.is_none() {
            eprintln!("delius: cannot write manifest {}: {e}", manifest.display());
            return ExitCode::from(2);
        }
    }
    match failure {
        None => ExitCode::SUCCESS,
        Some(f) => {
            eprintln!("delius: error in {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
