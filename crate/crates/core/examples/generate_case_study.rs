//! Regenerates the shipped case-study scenario files.
//!
//! ```text
//! cargo run -p riskdesk-core --example generate_case_study [-- OUT_DIR]
//! ```

use std::path::PathBuf;

use riskdesk_core::scenario::{case_study_template, freeze_scenario, split_phases};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios"));
    std::fs::create_dir_all(&out)?;
    let composite = freeze_scenario(&case_study_template())?;
    std::fs::write(out.join("case_study.json"), composite.to_json())?;
    for (i, phase) in split_phases(&composite)?.iter().enumerate() {
        std::fs::write(out.join(format!("phase{}.json", i + 1)), phase.to_json())?;
    }
    println!("wrote scenarios to {}", out.display());
    Ok(())
}
