//! Run manifest: records which config, seed, graph and scene set produced an
//! output directory. Content hashes are recomputed and verified on load so a
//! stale manifest cannot silently describe different inputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vrl_core::rng::fnv1a64;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PathBuf,
    pub seed: u64,
    pub variant: String,
    pub graph: PathBuf,
    pub graph_hash: String,
    pub scenes: PathBuf,
    pub scenes_hash: String,
    pub out_dir: PathBuf,
}

pub fn file_hash(path: &Path) -> Result<String, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(format!("{:016x}", fnv1a64(&bytes)))
}

impl RunManifest {
    pub fn create(
        config: &Path,
        seed: u64,
        variant: &str,
        graph: &Path,
        scenes: &Path,
        out_dir: &Path,
    ) -> Result<RunManifest, String> {
        Ok(RunManifest {
            config: config.to_path_buf(),
            seed,
            variant: variant.to_string(),
            graph: graph.to_path_buf(),
            graph_hash: file_hash(graph)?,
            scenes: scenes.to_path_buf(),
            scenes_hash: file_hash(scenes)?,
            out_dir: out_dir.to_path_buf(),
        })
    }

    /// Load a manifest and verify that the referenced graph and scene files
    /// still hash to the recorded values.
    pub fn load_verified(path: &Path) -> Result<RunManifest, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let m: RunManifest =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        for (file, recorded, what) in [
            (&m.graph, &m.graph_hash, "graph"),
            (&m.scenes, &m.scenes_hash, "scene set"),
        ] {
            let now = file_hash(file)?;
            if &now != recorded {
                return Err(format!(
                    "{}: {what} {} changed since the run (hash {now}, manifest {recorded})",
                    path.display(),
                    file.display()
                ));
            }
        }
        Ok(m)
    }
}
