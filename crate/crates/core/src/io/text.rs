//! Comma-separated text outputs with a fixed column order and one header
//! line. Lines starting with `#` carry `key = value` metadata. Numbers are
//! written with Rust's shortest round-trip formatting, so reading a file
//! back gives the exact values that were written.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{IoError, Provenance};
use crate::coincidence::{CorrelationFunction, HistogramRange, TimeDifferenceHistogram};

/// Metadata lines and data rows of a delimited file.
struct Table {
    meta: BTreeMap<String, String>,
    rows: Vec<Vec<String>>,
}

fn write_meta(out: &mut String, prov: Option<&Provenance>, extra: &[(&str, String)]) {
    if let Some(p) = prov {
        let _ = writeln!(out, "# seed = {}", p.seed);
        let _ = writeln!(out, "# config_hash = {}", p.config_hash);
    }
    for (k, v) in extra {
        let _ = writeln!(out, "# {k} = {v}");
    }
}

fn parse_table(text: &str, what: &'static str, header: &str) -> Result<Table, IoError> {
    let mut meta = BTreeMap::new();
    let mut rows = Vec::new();
    let mut seen_header = false;
    let n_cols = header.split(',').count();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        if !seen_header {
            if line != header {
                return Err(IoError::malformed(what, format!("expected header {header:?}")));
            }
            seen_header = true;
            continue;
        }
        let cells: Vec<String> = line.split(',').map(str::to_string).collect();
        if cells.len() != n_cols {
            return Err(IoError::malformed(what, format!("row {} has {} columns", rows.len(), cells.len())));
        }
        rows.push(cells);
    }
    if !seen_header {
        return Err(IoError::malformed(what, "missing header".into()));
    }
    Ok(Table { meta, rows })
}

fn num<T: std::str::FromStr>(s: &str, what: &'static str) -> Result<T, IoError> {
    s.trim()
        .parse()
        .map_err(|_| IoError::malformed(what, format!("bad number {s:?}")))
}

impl Table {
    fn meta<T: std::str::FromStr>(&self, key: &str, what: &'static str) -> Result<T, IoError> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| IoError::malformed(what, format!("missing {key}")))?;
        num(v, what)
    }

    fn provenance(&self) -> Option<Provenance> {
        Some(Provenance {
            seed: self.meta.get("seed")?.parse().ok()?,
            config_hash: self.meta.get("config_hash")?.clone(),
        })
    }
}

pub const HISTOGRAM_HEADER: &str = "tau_lower_ps,tau_center_ps,counts";

pub fn format_histogram(h: &TimeDifferenceHistogram, prov: Option<&Provenance>) -> String {
    let mut out = String::new();
    write_meta(
        &mut out,
        prov,
        &[
            ("tau_min_ps", h.range.tau_min_ps.to_string()),
            ("bin_width_ps", h.range.bin_width_ps.to_string()),
            ("n_bins", h.range.n_bins.to_string()),
            ("n_electrons", h.n_electrons.to_string()),
            ("n_photons", h.n_photons.to_string()),
            ("duration_ps", h.duration_ps.to_string()),
        ],
    );
    out.push_str(HISTOGRAM_HEADER);
    out.push('\n');
    for (i, c) in h.counts.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", h.range.bin_lower(i), h.range.bin_center(i), c);
    }
    out
}

pub fn parse_histogram(text: &str) -> Result<(TimeDifferenceHistogram, Option<Provenance>), IoError> {
    const WHAT: &str = "histogram";
    let t = parse_table(text, WHAT, HISTOGRAM_HEADER)?;
    let tau_min: i64 = t.meta("tau_min_ps", WHAT)?;
    let bin_width: u64 = t.meta("bin_width_ps", WHAT)?;
    let n_bins: i64 = t.meta("n_bins", WHAT)?;
    let range = n_bins
        .checked_mul(bin_width as i64)
        .and_then(|span| tau_min.checked_add(span))
        .and_then(|tau_max| HistogramRange::new(tau_min, tau_max, bin_width).ok())
        .ok_or_else(|| IoError::malformed(WHAT, "bad range".into()))?;
    if t.rows.len() != range.n_bins {
        return Err(IoError::malformed(WHAT, format!("{} rows for {} bins", t.rows.len(), range.n_bins)));
    }
    let counts = t
        .rows
        .iter()
        .map(|r| num(&r[2], WHAT))
        .collect::<Result<_, _>>()?;
    let h = TimeDifferenceHistogram {
        range,
        counts,
        n_electrons: t.meta("n_electrons", WHAT)?,
        n_photons: t.meta("n_photons", WHAT)?,
        duration_ps: t.meta("duration_ps", WHAT)?,
    };
    Ok((h, t.provenance()))
}

pub const G2_HEADER: &str = "tau_ps,g2,sigma";

pub fn format_g2(g: &CorrelationFunction, prov: Option<&Provenance>) -> String {
    let mut out = String::new();
    write_meta(&mut out, prov, &[]);
    out.push_str(G2_HEADER);
    out.push('\n');
    for ((t, v), s) in g.tau_ps.iter().zip(&g.g2).zip(&g.sigma) {
        let _ = writeln!(out, "{t},{v},{s}");
    }
    out
}

pub fn parse_g2(text: &str) -> Result<(CorrelationFunction, Option<Provenance>), IoError> {
    const WHAT: &str = "g2";
    let t = parse_table(text, WHAT, G2_HEADER)?;
    let col = |c: usize| t.rows.iter().map(|r| num(&r[c], WHAT)).collect::<Result<Vec<f64>, _>>();
    let g = CorrelationFunction {
        tau_ps: col(0)?,
        g2: col(1)?,
        sigma: col(2)?,
    };
    Ok((g, t.provenance()))
}

/// One traced grid point: sample position, image position, and its
/// departure from the linear map at the focus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionSample {
    pub sample_um: [f64; 2],
    pub image_um: [f64; 2],
    pub distortion_um: [f64; 2],
}

pub const RAYTRACE_HEADER: &str = "x_um,y_um,u_um,v_um,du_um,dv_um";

pub fn format_raytrace(samples: &[DistortionSample], prov: Option<&Provenance>) -> String {
    let mut out = String::new();
    write_meta(&mut out, prov, &[]);
    out.push_str(RAYTRACE_HEADER);
    out.push('\n');
    for s in samples {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.sample_um[0], s.sample_um[1], s.image_um[0], s.image_um[1], s.distortion_um[0], s.distortion_um[1]
        );
    }
    out
}

pub fn parse_raytrace(text: &str) -> Result<(Vec<DistortionSample>, Option<Provenance>), IoError> {
    const WHAT: &str = "raytrace";
    let t = parse_table(text, WHAT, RAYTRACE_HEADER)?;
    let samples = t
        .rows
        .iter()
        .map(|r| {
            let v: Vec<f64> = r.iter().map(|c| num(c, WHAT)).collect::<Result<_, _>>()?;
            Ok(DistortionSample {
                sample_um: [v[0], v[1]],
                image_um: [v[2], v[3]],
                distortion_um: [v[4], v[5]],
            })
        })
        .collect::<Result<_, IoError>>()?;
    Ok((samples, t.provenance()))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    Ok(std::fs::write(path, text)?)
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    Ok(std::fs::read_to_string(path)?)
}
