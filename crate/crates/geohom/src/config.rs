//! Run configuration: every numeric knob of a CLI invocation, serializable
//! so a run is reproducible from its recorded config and seed.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub threads: usize,
    pub tol: f64,
    pub args: Vec<(String, String)>,
}

impl RunConfig {
    pub fn new(command: &str, seed: u64, threads: usize, tol: f64) -> Self {
        RunConfig {
            command: command.into(),
            seed,
            threads,
            tol,
            args: Vec::new(),
        }
    }

    pub fn arg(mut self, key: &str, value: impl ToString) -> Self {
        self.args.push((key.into(), value.to_string()));
        self
    }

    /// Stable hash of the config for artifact headers.
    pub fn hash(&self) -> u64 {
        let text = serde_json::to_string(self).expect("config serializes");
        crate::io::fnv1a(text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_depends_on_content() {
        let a = RunConfig::new("solve", 1, 1, 1e-9);
        let b = RunConfig::new("solve", 2, 1, 1e-9);
        assert_ne!(a.hash(), b.hash());
        let c = RunConfig::new("solve", 1, 1, 1e-9);
        assert_eq!(a.hash(), c.hash());
    }
}
