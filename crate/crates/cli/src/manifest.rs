//! Run manifest: everything needed to reproduce a run bit-exactly.
//!
//! The config snapshot is also written as `config.toml` next to the
//! manifest, so `iimt train --config <out>/config.toml` replays the run.

use serde::Serialize;

use iimt_core::IimtConfig;

#[derive(Serialize)]
pub struct RunManifest<'a> {
    pub command: &'static str,
    pub seed: u64,
    /// Hex sha256 of the canonical config serialization.
    pub config_hash: String,
    pub layout: Layout,
    pub config: &'a IimtConfig,
}

#[derive(Serialize)]
pub struct Layout {
    pub config: &'static str,
    pub metrics: Option<&'static str>,
    pub checkpoint: Option<&'static str>,
    pub summary_text: &'static str,
    pub summary_csv: &'static str,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
