use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use robust_secagg::experiment::{
    bandwidth_estimate, measure_bandwidth, parse_config, run_experiment, timing_table,
    write_outputs, Overrides,
};
use robust_secagg::proofsys::Backend;
use robust_secagg::protocol::ProtocolMode;

#[derive(Parser)]
#[command(name = "secagg", version, about = "Robust secure aggregation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train for the configured rounds and write metrics.
    Run(Common),
    /// Print per-leg transmission sizes for one client.
    Bandwidth {
        #[arg(long, value_delimiter = ',', default_value = "9000")]
        params: Vec<usize>,
        #[arg(long, default_value_t = 2048)]
        bits: u32,
        #[arg(long, default_value = "transparent")]
        backend: String,
        /// Encrypt and serialize real vectors instead of using the closed form.
        #[arg(long)]
        measure: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run one experiment per parameter count (or client count) and print
    /// the timing table.
    Table {
        #[command(flatten)]
        common: Common,
        /// Comma-separated sweep, e.g. `--sweep-params 8,16,32`.
        #[arg(long, value_delimiter = ',')]
        sweep_params: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        sweep_clients: Vec<usize>,
    },
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    params: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    /// `KIND:IDS[:ARG]`; repeatable.
    #[arg(long)]
    attack: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Result<Overrides> {
        let mode = match &self.mode {
            Some(m) => Some(m.parse::<ProtocolMode>()?),
            None => None,
        };
        Ok(Overrides {
            mode,
            clients: self.clients,
            params: self.params,
            rounds: self.rounds,
            attacks: self.attack.clone(),
            seed: self.seed,
            out: self.out.clone(),
        })
    }
}

fn run(common: &Common) -> Result<()> {
    let cfg = parse_config(common.config.as_deref(), &common.overrides()?)?;
    let outcome = run_experiment(&cfg)?;
    for r in &outcome.records {
        println!(
            "round {:>3}  loss {:>12.6}  accepted {:?}  rejected {:?}{}",
            r.round,
            r.loss,
            r.accepted,
            r.rejected,
            if r.degenerate { "  (degenerate)" } else { "" }
        );
    }
    println!("{}", outcome.bandwidth);
    if let Some(dir) = &cfg.output.dir {
        write_outputs(dir, &cfg, &outcome)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn table(common: &Common, sweep_params: &[usize], sweep_clients: &[usize]) -> Result<()> {
    if !sweep_params.is_empty() && !sweep_clients.is_empty() {
        bail!("sweep either parameters or clients, not both");
    }
    let base = common.overrides()?;
    let mut points: Vec<(String, Overrides)> = Vec::new();
    if !sweep_clients.is_empty() {
        for &m in sweep_clients {
            points.push((m.to_string(), Overrides { clients: Some(m), ..base.clone() }));
        }
    } else {
        let params = if sweep_params.is_empty() {
            vec![common.params.unwrap_or(16)]
        } else {
            sweep_params.to_vec()
        };
        for &l in &params {
            points.push((l.to_string(), Overrides { params: Some(l), ..base.clone() }));
        }
    }
    let mut columns = Vec::new();
    for (label, o) in &points {
        let cfg = parse_config(common.config.as_deref(), o)?;
        let outcome = run_experiment(&cfg)?;
        if let Some(dir) = &cfg.output.dir {
            write_outputs(&dir.join(label), &cfg, &outcome)?;
        }
        columns.push((label.clone(), outcome.records));
    }
    let t = timing_table(&columns);
    print!("{t}");
    if let Some(dir) = &common.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("summary.csv"), t.to_csv()?)
            .with_context(|| format!("writing {}", dir.display()))?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(common) => run(common),
        Command::Bandwidth {
            params,
            bits,
            backend,
            measure,
            seed,
        } => {
            let backend: Backend = backend.parse()?;
            for &l in params {
                let report = if *measure {
                    measure_bandwidth(l, *bits, 1, *seed)?
                } else {
                    bandwidth_estimate(l, *bits, backend)
                };
                println!("{report}");
            }
            Ok(())
        }
        Command::Table {
            common,
            sweep_params,
            sweep_clients,
        } => table(common, sweep_params, sweep_clients),
    }
}
