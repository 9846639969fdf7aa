use std::fs::{self, File};
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use promptcd::evaluation::{run_benchmark, BenchReport, BenchSettings};
use promptcd::parallel::Execution;
use promptcd::probe::read_records;

use crate::config::{BackendSpec, DecodeArgs};

#[derive(Debug, Args)]
pub struct BenchCmd {
    /// table:PATH or http:URL
    #[arg(long)]
    backend: BackendSpec,

    /// Conflict records, one JSON object per line
    #[arg(long)]
    dataset: PathBuf,

    #[arg(long)]
    positive: String,

    #[arg(long)]
    negative: String,

    #[command(flatten)]
    decode: DecodeArgs,

    /// Records decoded concurrently; 0 uses every core
    #[arg(long, default_value_t = 0)]
    jobs: usize,

    /// Report path; standard output when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[cfg(feature = "parallel")]
fn execute(jobs: usize, f: impl FnOnce(Execution) -> Result<BenchReport> + Send) -> Result<BenchReport> {
    if jobs == 1 {
        return f(Execution::Sequential);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    pool.install(|| f(Execution::Parallel))
}

#[cfg(not(feature = "parallel"))]
fn execute(jobs: usize, f: impl FnOnce(Execution) -> Result<BenchReport> + Send) -> Result<BenchReport> {
    if jobs > 1 {
        log::warn!("built without the parallel feature; --jobs {jobs} runs sequentially");
    }
    f(Execution::Sequential)
}

pub fn run(cmd: BenchCmd) -> Result<()> {
    let f = File::open(&cmd.dataset).with_context(|| format!("opening {}", cmd.dataset.display()))?;
    let records = read_records(BufReader::new(f))?;
    if records.is_empty() {
        bail!("dataset {} has no records", cmd.dataset.display());
    }
    let template = cmd.decode.template(None)?;
    let provider = cmd.backend.open()?;
    let config = cmd.decode.contrastive(None, &*provider)?;

    let report = execute(cmd.jobs, |exec| {
        let settings = BenchSettings {
            positive: cmd.positive.clone(),
            negative: cmd.negative.clone(),
            template,
            config,
            exec,
        };
        Ok(run_benchmark(&records, &provider, &settings)?)
    })?;
    log::info!(
        "{} records: {} scored, {} skipped; ConR {:.4} -> {:.4}",
        report.total,
        report.scored,
        report.skipped,
        report.vanilla.con_r,
        report.promptcd.con_r
    );

    let text = serde_json::to_string_pretty(&report)?;
    match &cmd.out {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}
