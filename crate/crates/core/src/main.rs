use clap::{Args, Parser, Subcommand};
use sppfem::harness::{
    oracle_on_grid, pml_study, report, run_adaptive, spectral_amplitude, spp_reference, trace_grid, write_oracle_csv,
    RunConfig,
};
use sppfem::{Error, Result};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sppfem", version, about = "Edge-element simulation of surface plasmons on a conducting sheet")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Adaptive refinement loop with traces, convergence table and VTK dumps.
    Run(Common),
    /// Analytic interface field on the trace grid.
    Oracle(Common),
    /// Fixed-mesh solves for several PML strengths.
    PmlStudy {
        #[command(flatten)]
        common: Common,
        /// Comma-separated PML strengths.
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,1,2,4,8")]
        s0_list: Vec<f64>,
    },
    /// Convergence table from a finished run directory.
    Report {
        /// Directory holding convergence.csv.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sheet conductivity, e.g. 2.56e-4+0.16j.
    #[arg(long)]
    sigma: Option<String>,
    /// Dipole height.
    #[arg(long)]
    a: Option<f64>,
    /// PML strength.
    #[arg(long)]
    s0: Option<f64>,
    /// Number of adaptive cycles.
    #[arg(long)]
    cycles: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = &self.sigma {
            cfg.set("sigma", s)?;
        }
        if let Some(a) = self.a {
            cfg.a = a;
        }
        if let Some(s0) = self.s0 {
            cfg.s0 = s0;
        }
        if let Some(c) = self.cycles {
            cfg.cycles = c;
        }
        cfg.out = Some(self.out.clone());
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.config()?;
            let rep = run_adaptive(&cfg)?;
            for r in &rep.records {
                let rate = r.rate.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
                println!(
                    "cycle {:>2}  cells {:>8}  dofs {:>8}  l2_error {:.4e}  rate {rate}  J {:.6e}",
                    r.cycle, r.n_cells, r.n_dofs, r.l2_error, r.qoi
                );
            }
            println!("wrote results to {}", common.out.display());
        }
        Command::Oracle(common) => {
            let cfg = common.config()?;
            let xs = trace_grid(cfg.r_outer, cfg.samples);
            let samples = oracle_on_grid(&xs, cfg.sigma_r, cfg.a, &cfg.oracle_quadrature())?;
            std::fs::create_dir_all(&common.out).map_err(|e| Error::Config(format!("{}: {e}", common.out.display())))?;
            let path = common.out.join("oracle.csv");
            write_oracle_csv(&path, &samples)?;
            println!("wrote {} samples to {}", samples.len(), path.display());
        }
        Command::PmlStudy { common, s0_list } => {
            let cfg = common.config()?;
            let runs = pml_study(&cfg, &s0_list)?;
            let (amp, k) = spp_reference(cfg.sigma_r, cfg.a)?;
            println!("analytic SPP amplitude {amp:.4e} at k = {k:.4}");
            for r in &runs {
                let a = spectral_amplitude(&r.trace, k, 5.0, 18.0);
                println!("s0 = {:<5}  amplitude {a:.4e}  ratio {:.3}", r.s0, a / amp);
            }
            println!("wrote {}", common.out.join("pml_study.csv").display());
        }
        Command::Report { out } => print!("{}", report(&out)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
