use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use twinroute::harness::{
    cmd_kpi, cmd_run, cmd_serve, cmd_sweep, load_scenario, KpiOptions, RunOptions, SweepParam,
    SweepSpec,
};
use twinroute::Result;

#[derive(Parser)]
#[command(name = "twinroute", version, about = "Traffic twin simulator and route service")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation and write metrics.csv.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        twin_journal: Option<PathBuf>,
        #[arg(long)]
        routes_journal: Option<PathBuf>,
        /// Count the vehicle-to-cloud leg once in the service latency.
        #[arg(long)]
        svc_single_v2c: bool,
    },
    /// Sweep the CAV share or the event count over several seeds.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// p_user or events.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values; defaults to 1/30..10/30 for p_user, 0..10 for events.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        seeds: u32,
        /// Base seed; defaults to the scenario's.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        svc_single_v2c: bool,
    },
    /// Monte-Carlo latency and reliability report.
    Kpi {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Speed for the service deadline, km/h.
        #[arg(long, default_value_t = 20.0)]
        v_free_kmh: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve route requests as line-delimited JSON over TCP on 127.0.0.1.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 7878)]
        port: u16,
    },
}

fn default_values(p: SweepParam) -> Vec<f64> {
    match p {
        SweepParam::PUser => (1..=10).map(|i| (i as f64 / 30.0 * 1000.0).round() / 1000.0).collect(),
        SweepParam::Events => (0..=10).map(f64::from).collect(),
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Run {
            scenario,
            seed,
            out,
            twin_journal,
            routes_journal,
            svc_single_v2c,
        } => {
            let m = cmd_run(
                &scenario,
                &RunOptions {
                    seed,
                    out_dir: out,
                    twin_journal,
                    routes_journal,
                    svc_single_v2c,
                },
            )?;
            print!("{}", m.to_csv());
        }
        Cmd::Sweep {
            scenario,
            param,
            values,
            seeds,
            seed,
            out,
            svc_single_v2c,
        } => {
            let base = load_scenario(&scenario, seed, svc_single_v2c)?;
            let values = if values.is_empty() { default_values(param) } else { values };
            let spec = SweepSpec {
                base,
                param,
                values,
                seeds,
                out_dir: Some(out),
            };
            let res = cmd_sweep(&spec)?;
            print!("{}", res.to_dat());
        }
        Cmd::Kpi {
            scenario,
            samples,
            seed,
            v_free_kmh,
            out,
        } => {
            let sc = load_scenario(&scenario, None, false)?;
            let o = cmd_kpi(
                &sc.latency,
                &KpiOptions {
                    samples,
                    seed,
                    v_free_mps: v_free_kmh / 3.6,
                    out_dir: out,
                    ..Default::default()
                },
            )?;
            print!("{}", o.text);
        }
        Cmd::Serve { scenario, port } => {
            let sc = load_scenario(&scenario, None, false)?;
            cmd_serve(&sc, port)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SMDT_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
