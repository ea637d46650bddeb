//! Transcripts of the three worked prompt/output examples.
//!
//! Each figure has three files under `data/figures`: the prompt block
//! (`.prompt.txt`, no trailing newline), the output block exactly as printed
//! (`.output.txt`) and a one-line JSONL record carrying library,
//! conversation and gold state.

use std::path::PathBuf;

pub const FIGURE_NAMES: [&str; 3] = ["registration", "money_transfer", "support"];

#[derive(Debug, Clone)]
pub struct Figure {
    pub name: &'static str,
    pub prompt: String,
    /// Output block as printed, including its comma quirks.
    pub output: String,
    pub jsonl: PathBuf,
}

pub fn figures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join("figures")
}

/// Loads one figure by name; panics on an unknown name or missing file.
pub fn figure(name: &'static str) -> Figure {
    let dir = figures_dir();
    let read = |ext: &str| {
        let path = dir.join(format!("{name}.{ext}"));
        std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
    };
    Figure {
        name,
        prompt: read("prompt.txt"),
        output: read("output.txt"),
        jsonl: dir.join(format!("{name}.jsonl")),
    }
}

/// Normalizes a printed output block: every line but the last ends in a
/// single comma, the last has none.
pub fn normalize_output(block: &str) -> String {
    block
        .lines()
        .map(|l| l.trim_end().trim_end_matches(','))
        .collect::<Vec<_>>()
        .join(",\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_output("'a': 'x'\n'b': 'y',\n'c': 'z',"), "'a': 'x',\n'b': 'y',\n'c': 'z'");
    }

    #[test]
    fn files_present() {
        for name in FIGURE_NAMES {
            let f = figure(name);
            assert!(f.prompt.starts_with("Find all the slots"));
            assert!(!f.prompt.ends_with('\n'));
            assert!(f.jsonl.exists());
        }
    }
}
