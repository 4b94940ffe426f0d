//! Report files: JSON, CSV series and gnuplot data.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;

use crate::config::Format;
use crate::pipeline::RunOutput;

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
}

/// Writes the requested formats into `dir` and returns the files written.
pub fn emit(out: &RunOutput, formats: &BTreeSet<Format>, dir: &Path, stem: &str) -> anyhow::Result<Vec<PathBuf>> {
    if formats.is_empty() {
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut written = Vec::new();
    let k = out.trace.first().map_or(0, |p| p.sup.len());
    let sup_cols = (0..k).map(|c| format!("sup_{c}")).collect::<Vec<_>>().join(",");

    if formats.contains(&Format::Json) {
        let path = dir.join(format!("{stem}.json"));
        let mut w = create(&path)?;
        serde_json::to_writer_pretty(&mut w, &out.report)?;
        writeln!(w)?;
        w.flush()?;
        written.push(path);
    }

    if formats.contains(&Format::Csv) {
        if !out.trace.is_empty() {
            let path = dir.join(format!("{stem}_trace.csv"));
            let mut w = create(&path)?;
            writeln!(w, "t,dt,{sup_cols}")?;
            for p in &out.trace {
                writeln!(w, "{:e},{:e},{}", p.t, p.dt, join(&p.sup))?;
            }
            w.flush()?;
            written.push(path);
        }
        if !out.rate_series.is_empty() {
            let path = dir.join(format!("{stem}_rate.csv"));
            let mut w = create(&path)?;
            writeln!(w, "t,T_minus_t,{sup_cols}")?;
            for (t, tau, s) in &out.rate_series {
                writeln!(w, "{t:e},{tau:e},{}", join(s))?;
            }
            w.flush()?;
            written.push(path);
        }
        if let Some(h) = &out.windowed {
            let path = dir.join(format!("{stem}_windowed.csv"));
            let mut w = create(&path)?;
            let m = h.r_star.len();
            let norms = (0..m).map(|c| format!("norm_{c}")).collect::<Vec<_>>().join(",");
            let scaled = (0..m).map(|c| format!("scaled_{c}")).collect::<Vec<_>>().join(",");
            writeln!(w, "t,rho,{norms},{scaled},scaled_sum")?;
            for s in &h.samples {
                writeln!(w, "{:e},{:e},{},{},{:e}", s.t, s.rho, join(&s.norms), join(&s.scaled), s.scaled_sum)?;
            }
            w.flush()?;
            written.push(path);
        }
    }

    if formats.contains(&Format::Plotdata) {
        if !out.rate_series.is_empty() {
            let path = dir.join(format!("{stem}_rate.dat"));
            let mut w = create(&path)?;
            let cols = (0..k).map(|c| format!("log_sup_{c}")).collect::<Vec<_>>().join(" ");
            writeln!(w, "# log(T-t) {cols}")?;
            for (_, tau, s) in &out.rate_series {
                let logs: Vec<String> = s.iter().map(|v| format!("{:e}", v.ln())).collect();
                writeln!(w, "{:e} {}", tau.ln(), logs.join(" "))?;
            }
            w.flush()?;
            written.push(path);
        } else if !out.trace.is_empty() {
            let path = dir.join(format!("{stem}_trace.dat"));
            let mut w = create(&path)?;
            writeln!(w, "# t {}", sup_cols.replace(',', " "))?;
            for p in &out.trace {
                let s: Vec<String> = p.sup.iter().map(|v| format!("{v:e}")).collect();
                writeln!(w, "{:e} {}", p.t, s.join(" "))?;
            }
            w.flush()?;
            written.push(path);
        }
    }
    Ok(written)
}
