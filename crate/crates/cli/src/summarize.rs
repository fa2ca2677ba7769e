//! `summarize`: raw CSV in, summary JSON out.

use std::path::PathBuf;

use clap::Args;
use suremap::SummarizeConfig;

use crate::error::CliResult;
use crate::io::{self, SummaryFile};

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Raw record CSV (attribute columns, `value`, optional `task`)
    #[arg(long)]
    pub input: PathBuf,
    /// Inline attribute spec, e.g. `sex=F|M;age=<25|25-64|>64`
    #[arg(long)]
    pub attrs: Option<String>,
    /// Attribute spec JSON file `{"attributes": [...]}`
    #[arg(long, conflicts_with = "attrs")]
    pub space: Option<PathBuf>,
    /// Treat rows as labeled scores and summarize per-group AUC
    #[arg(long)]
    pub auc: bool,
    /// Minimum for the pooled variance estimate
    #[arg(long, default_value_t = 1e-12)]
    pub sigma2_floor: f64,
    /// Fallback variance when the residual degrees of freedom vanish
    #[arg(long)]
    pub sigma2_fallback: Option<f64>,
}

pub fn resolve_space(
    attrs: &Option<String>,
    space: &Option<PathBuf>,
) -> CliResult<Option<suremap::AttributeSpace>> {
    if let Some(spec) = attrs {
        return Ok(Some(io::parse_attrs_spec(spec)?));
    }
    if let Some(path) = space {
        return Ok(Some(io::load_space_file(path)?));
    }
    Ok(None)
}

pub fn run(args: &SummarizeArgs) -> CliResult<SummaryFile> {
    let space = resolve_space(&args.attrs, &args.space)?;
    let data = io::read_raw_csv(&args.input, space, args.auc)?;
    let config = SummarizeConfig {
        sigma2_floor: Some(args.sigma2_floor),
        sigma2_fallback: args.sigma2_fallback,
    };
    let tasks = if args.auc {
        io::auc_summaries_from_rows(&data.space, &data.task_ids, data.rows.iter())?
    } else {
        io::summaries_from_rows(&data.space, &data.task_ids, data.rows.iter(), &config)?
    };
    let sigma2 = tasks[0].1.sigma2;
    Ok(SummaryFile::from_summaries(&data.space, &tasks, sigma2))
}
