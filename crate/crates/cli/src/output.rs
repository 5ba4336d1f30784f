//! Atomic file output and plot scripts.

use std::io::Write;
use std::path::Path;

use crate::CliError;

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let fail = |e: &dyn std::fmt::Display| CliError::Invalid(format!("cannot write {}: {e}", path.display()));
    std::fs::create_dir_all(dir).map_err(|e| fail(&e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| fail(&e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| fail(&e))?;
    tmp.as_file().sync_all().map_err(|e| fail(&e))?;
    tmp.persist(path).map_err(|e| fail(&e.error))?;
    Ok(())
}

pub fn json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summaries serialize");
    s.push('\n');
    s
}

const PREAMBLE: &str = "set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 900,600\n";

pub fn history_plot(csv: &str) -> String {
    format!(
        "{PREAMBLE}set output 'history.png'\nset multiplot layout 2,1\nset xlabel 'epoch'\n\
         plot '{csv}' using 1:6 with linespoints title 'aligned E_T'\n\
         plot '{csv}' using 1:5 with linespoints title 'clean accuracy'\nunset multiplot\n"
    )
}

pub fn sweep_plot(csv: &str, variable: &str, log_log: bool) -> String {
    let scale = if log_log { "set logscale xy\n" } else { "" };
    format!(
        "{PREAMBLE}set output 'sweep_{variable}.png'\n{scale}set xlabel '{variable}'\nset ylabel 'metric'\n\
         plot '{csv}' using 1:3 with points pointtype 7 title 'per seed'\n"
    )
}

pub fn ablation_plot(csv: &str) -> String {
    format!(
        "{PREAMBLE}set output 'ablation.png'\nset style fill solid 0.6\nset boxwidth 0.6\nset yrange [0:*]\n\
         set multiplot layout 2,1\n\
         plot '{csv}' using 0:2:xtic(1) with boxes title 'clean accuracy'\n\
         plot '{csv}' using 0:4:xtic(1) with boxes title 'aligned E_T'\nunset multiplot\n"
    )
}
