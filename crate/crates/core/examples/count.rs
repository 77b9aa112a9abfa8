//! Prints the size of every preset architecture next to its published size.

use std::time::Instant;

use ictasnet::analysis::{closed_form_parameters, deviation_percent, format_millions, summarize_config};
use ictasnet::model::presets;

fn main() -> ictasnet::Result<()> {
    for p in presets() {
        let start = Instant::now();
        let summary = summarize_config(&p.config, 16000)?;
        let elapsed = start.elapsed();
        let closed = closed_form_parameters(&p.config)?;
        let reference = p
            .reference_millions
            .map(|r| format!("{r:>6} M  {:+.2}%", deviation_percent(summary.total_parameters, r)))
            .unwrap_or_default();
        println!(
            "{:<10} {:>11} {:>9}  closed-form {}  {:>6.1} ms  {}",
            p.name,
            summary.total_parameters,
            format_millions(summary.total_parameters),
            if closed == summary.total_parameters { "ok" } else { "MISMATCH" },
            elapsed.as_secs_f64() * 1e3,
            reference
        );
    }
    Ok(())
}
