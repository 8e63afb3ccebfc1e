//! Tab-separated stats file (tabs shown as spaces):
//!
//! ```text
//! # source: coco-val
//! category  width_mean  width_std  aspect_mean  aspect_std  sample_count
//! dog  0.31  0.12  0.9  0.3  412
//! *  0.27  0.14  1.1  0.5  2201
//! ```
//!
//! Floats use the shortest representation that reads back to the same bits.
//! The `*` row is the pooled entry used for unknown categories.

use std::path::Path;

use anysynth_core::stats::GLOBAL_CATEGORY;
use anysynth_core::{CategoryStats, StatsTable};

use crate::error::{Error, Result};
use crate::fsutil;

const HEADER: &str = "category\twidth_mean\twidth_std\taspect_mean\taspect_std\tsample_count";

fn row(s: &CategoryStats, name: &str) -> String {
    format!("{name}\t{}\t{}\t{}\t{}\t{}\n", s.width_mean, s.width_std, s.aspect_mean, s.aspect_std, s.sample_count)
}

pub fn write_stats(table: &StatsTable) -> String {
    let mut out = format!("# source: {}\n{HEADER}\n", table.source.replace('\n', " "));
    for (name, s) in &table.entries {
        out.push_str(&row(s, name));
    }
    if let Some(g) = &table.global {
        out.push_str(&row(g, GLOBAL_CATEGORY));
    }
    out
}

pub fn read_stats(text: &str) -> Result<StatsTable> {
    let mut source = String::new();
    let mut table: Option<StatsTable> = None;
    for (n, line) in text.lines().enumerate() {
        let what = || format!("stats line {}", n + 1);
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(src) = rest.trim_start().strip_prefix("source:") {
                source = src.trim().to_string();
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if line == HEADER {
            table = Some(StatsTable::new(source.clone()));
            continue;
        }
        let table = table.as_mut().ok_or_else(|| Error::parse(what(), "row before header"))?;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(Error::parse(what(), format!("expected 6 tab-separated fields, found {}", cols.len())));
        }
        let f = |i: usize| cols[i].parse::<f64>().map_err(|e| Error::parse(what(), format!("field {}: {e}", i + 1)));
        let stats = CategoryStats {
            category: cols[0].to_string(),
            width_mean: f(1)?,
            width_std: f(2)?,
            aspect_mean: f(3)?,
            aspect_std: f(4)?,
            sample_count: cols[5].parse().map_err(|e| Error::parse(what(), format!("field 6: {e}")))?,
        };
        if table.get(&stats.category).is_some() {
            return Err(Error::parse(what(), format!("duplicate category {:?}", stats.category)));
        }
        table.insert(stats).map_err(|e| Error::parse(what(), e))?;
    }
    let table = table.ok_or_else(|| Error::parse("stats file", "missing header row"))?;
    table.validate()?;
    Ok(table)
}

pub fn load_stats(path: &Path) -> Result<StatsTable> {
    read_stats(&fsutil::read_to_string(path)?).map_err(|e| match e {
        Error::Parse { what, detail } => Error::parse(format!("{}: {what}", path.display()), detail),
        other => other,
    })
}
