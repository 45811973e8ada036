//! Optional TOML config file. Flags and environment take precedence.
//!
//! ```toml
//! server = "http://10.0.0.5:8080"
//! author = "kitchen-tablet"
//! jobs = 4
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::error::CliError;

pub const DEFAULT_SERVER: &str = "http://127.0.0.1:8080";
pub const DEFAULT_JOBS: usize = 4;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub server: Option<String>,
    pub author: Option<String>,
    pub jobs: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}
