use crate::{Cli, Run};
use opforge::json::SCHEMA;
use opforge::EvalCtx;
use serde::Serialize;
use serde_json::Value;

#[derive(Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to replay a run: the command line, the resolved configuration and
/// digests of every file read or written. `-` stands for standard output.
#[derive(Serialize)]
pub struct RunManifest {
    pub schema: String,
    pub command_line: Vec<String>,
    pub config: Value,
    pub context: EvalCtx,
    pub seed: u64,
    pub versions: Value,
    pub wall_time_secs: f64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

fn digests(v: &[(std::path::PathBuf, String)]) -> Vec<FileDigest> {
    v.iter()
        .map(|(p, d)| FileDigest {
            path: p.display().to_string(),
            sha256: d.clone(),
        })
        .collect()
}

impl RunManifest {
    pub fn new(argv: &[String], cli: &Cli, run: &Run, wall_time_secs: f64) -> Self {
        RunManifest {
            schema: SCHEMA.into(),
            command_line: argv.to_vec(),
            config: serde_json::to_value(cli).expect("serializable"),
            context: run.ctx,
            seed: run.ctx.seed,
            versions: serde_json::json!({
                "opforge": env!("CARGO_PKG_VERSION"),
                "threads": cli.common.threads,
            }),
            wall_time_secs,
            inputs: digests(&run.inputs.digests),
            outputs: digests(&run.outputs),
        }
    }
}
