//! Self-contained SVG charts of the evaluation reports.
//!
//! Output is a pure function of the input tables (fixed-precision numbers,
//! no timestamps), so identical reports give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{ensure, MgsError, Result};
use crate::pipeline::csv_err;

pub const HISTOGRAM_COLUMNS: [&str; 4] = ["set", "multiplier", "k", "count"];
pub const PROPORTION_COLUMNS: [&str; 3] = ["set", "mode", "proportion"];

const W: f64 = 640.0;
const H: f64 = 360.0;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 48.0;
const PALETTE: [&str; 4] = ["#4c72b0", "#dd8452", "#55a868", "#8172b3"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    s
}

fn no_data(mut s: String) -> String {
    let _ = writeln!(s, r##"<text x="{}" y="{}" text-anchor="middle" fill="#888">no data</text>"##, W / 2.0, H / 2.0);
    s.push_str("</svg>\n");
    s
}

fn axes(s: &mut String, y_max: f64, x_label: &str, y_label: &str) {
    let (x0, y0, x1, y1) = (LEFT, H - BOTTOM, W - RIGHT, TOP);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let y = y0 - (y0 - y1) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 6.0, y + 4.0, trim(v));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 10.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn legend(s: &mut String, names: &[&str]) {
    for (i, n) in names.iter().enumerate() {
        let x = W - RIGHT - 130.0;
        let y = TOP + 4.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<rect x="{x:.2}" y="{y:.2}" width="10" height="10" fill="{}"/>"#, PALETTE[i % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x + 14.0, y + 9.0, escape(n));
    }
}

fn trim(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Paired histogram of neighbour counts: one bar series per set over a
/// shared `k` axis. `series[i].1[k]` is the number of real samples with `k`
/// generated neighbours.
pub fn histogram_svg(title: &str, series: &[(&str, Vec<usize>)]) -> String {
    let s = open(title);
    let bins = series.iter().map(|(_, h)| h.len()).max().unwrap_or(0);
    let peak = series.iter().flat_map(|(_, h)| h.iter().copied()).max().unwrap_or(0);
    if bins == 0 || peak == 0 {
        return no_data(s);
    }
    let mut s = s;
    axes(&mut s, peak as f64, "generated neighbours k", "real samples");
    let slot = (W - LEFT - RIGHT) / bins as f64;
    let bar = slot / series.len() as f64;
    let scale = (H - BOTTOM - TOP) / peak as f64;
    for (si, (_, h)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        for (k, &c) in h.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let x = LEFT + slot * k as f64 + bar * si as f64;
            let hgt = c as f64 * scale;
            let _ = writeln!(s, r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{hgt:.2}" fill="{color}"/>"#, H - BOTTOM - hgt, bar);
        }
    }
    let step = (bins as f64 / 10.0).ceil().max(1.0) as usize;
    for k in (0..bins).step_by(step) {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{k}</text>"#, LEFT + slot * (k as f64 + 0.5), H - BOTTOM + 16.0);
    }
    legend(&mut s, &series.iter().map(|(n, _)| *n).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// Grouped bars of mode proportions, one group per mode.
pub fn proportions_svg(title: &str, series: &[(&str, Vec<f64>)]) -> String {
    let s = open(title);
    let modes = series.iter().map(|(_, p)| p.len()).max().unwrap_or(0);
    if modes == 0 {
        return no_data(s);
    }
    let mut s = s;
    axes(&mut s, 1.0, "mode", "proportion");
    let slot = (W - LEFT - RIGHT) / modes as f64;
    let bar = slot * 0.8 / series.len() as f64;
    let scale = H - BOTTOM - TOP;
    for (si, (_, p)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        for (m, &v) in p.iter().enumerate() {
            let x = LEFT + slot * m as f64 + slot * 0.1 + bar * si as f64;
            let hgt = v.clamp(0.0, 1.0) * scale;
            let _ = writeln!(s, r#"<rect x="{x:.2}" y="{:.2}" width="{bar:.2}" height="{hgt:.2}" fill="{color}"/>"#, H - BOTTOM - hgt);
        }
    }
    for m in 0..modes {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{m}</text>"#, LEFT + slot * (m as f64 + 0.5), H - BOTTOM + 16.0);
    }
    legend(&mut s, &series.iter().map(|(n, _)| *n).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// Rows of `path` projected onto `columns`; a missing column is an error
/// naming every absent one.
pub fn read_columns(path: &Path, columns: &[&str]) -> Result<Vec<Vec<String>>> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = rd.headers().map_err(csv_err)?.clone();
    let idx: Vec<Option<usize>> = columns.iter().map(|c| header.iter().position(|h| h == *c)).collect();
    let missing: Vec<&str> = columns.iter().zip(&idx).filter(|(_, i)| i.is_none()).map(|(c, _)| *c).collect();
    ensure!(missing.is_empty(), Format, "{}: missing columns {}", path.display(), missing.join(", "));
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        out.push(idx.iter().map(|i| rec.get(i.expect("checked")).unwrap_or("").to_string()).collect());
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(path: &Path, v: &str) -> Result<T> {
    v.parse().map_err(|_| MgsError::format(format!("{}: bad number `{v}`", path.display())))
}

/// Ordered (first appearance) groups of a column.
fn groups<T>(rows: impl Iterator<Item = (String, T)>) -> Vec<(String, Vec<T>)> {
    let mut out: Vec<(String, Vec<T>)> = Vec::new();
    for (k, v) in rows {
        match out.iter_mut().find(|(g, _)| *g == k) {
            Some((_, vs)) => vs.push(v),
            None => out.push((k, vec![v])),
        }
    }
    out
}

/// `histogram_c<mult>.svg` per radius multiplier and `proportions.svg`.
pub fn plot_reports(metrics: &Path, plots: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(plots)?;
    let mut written = Vec::new();

    let hp = metrics.join("histogram.csv");
    let rows = read_columns(&hp, &HISTOGRAM_COLUMNS)?;
    let mut parsed = Vec::with_capacity(rows.len());
    for r in &rows {
        parsed.push((r[1].clone(), (r[0].clone(), num::<usize>(&hp, &r[2])?, num::<usize>(&hp, &r[3])?)));
    }
    for (mult, entries) in groups(parsed.into_iter()) {
        let sets = groups(entries.into_iter().map(|(set, k, c)| (set, (k, c))));
        let series: Vec<(&str, Vec<usize>)> = sets
            .iter()
            .map(|(name, kc)| {
                let mut h = vec![0; kc.iter().map(|&(k, _)| k + 1).max().unwrap_or(0)];
                for &(k, c) in kc {
                    h[k] += c;
                }
                (name.as_str(), h)
            })
            .collect();
        let p = plots.join(format!("histogram_c{mult}.svg"));
        fs::write(&p, histogram_svg(&format!("Neighbour counts at {mult} x eps"), &series))?;
        written.push(p);
    }

    let pp = metrics.join("proportions.csv");
    let rows = read_columns(&pp, &PROPORTION_COLUMNS)?;
    let mut parsed = Vec::with_capacity(rows.len());
    for r in &rows {
        parsed.push((r[0].clone(), (num::<usize>(&pp, &r[1])?, num::<f64>(&pp, &r[2])?)));
    }
    let sets = groups(parsed.into_iter());
    let series: Vec<(&str, Vec<f64>)> = sets
        .iter()
        .map(|(name, mp)| {
            let mut p = vec![0.0; mp.iter().map(|&(m, _)| m + 1).max().unwrap_or(0)];
            for &(m, v) in mp {
                p[m] = v;
            }
            (name.as_str(), p)
        })
        .collect();
    let p = plots.join("proportions.svg");
    fs::write(&p, proportions_svg("Mode proportions", &series))?;
    written.push(p);
    Ok(written)
}
