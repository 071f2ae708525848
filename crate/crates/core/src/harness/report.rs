//! Charts as self-contained SVG, each next to the CSV it was drawn from.
//! Bars carry their source cell verbatim in a `data-value` attribute.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::phonetics::targets::REFERENCE_DPRIME_CSV;
use crate::{Error, Result};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_HEADER: [&str; 12] = [
    "target_id",
    "target_text",
    "model",
    "n_samples",
    "n_genuine",
    "n_impostor",
    "tmr_at_fmr_0p1",
    "d_prime",
    "mean_snr_db",
    "mean_gen_cosine",
    "wer",
    "cer",
];

/// A CSV cell kept as written, with its numeric reading when it has one.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub raw: String,
    pub value: Option<f64>,
}

impl Cell {
    fn new(raw: &str) -> Self {
        let value = raw.trim().parse::<f64>().ok().filter(|v| v.is_finite());
        Self {
            raw: raw.to_string(),
            value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub cells: Vec<Cell>,
}

/// Grouped bars over `categories`, optionally with lines on a second axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub y_label: String,
    pub categories: Vec<String>,
    pub bars: Vec<Series>,
    pub line_label: Option<String>,
    pub lines: Vec<Series>,
}

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 70.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 90.0;
const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// `[lo, hi]` covering zero and every value, padded to a round step.
fn axis_range(values: impl Iterator<Item = f64>) -> (f64, f64, f64) {
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    ((lo / step).floor() * step, (hi / step).ceil() * step, step)
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let plot_w = WIDTH - LEFT - RIGHT;
        let plot_h = HEIGHT - TOP - BOTTOM;
        let bar_vals = self.bars.iter().flat_map(|s| s.cells.iter().filter_map(|c| c.value));
        let (lo, hi, step) = axis_range(bar_vals);
        let y = |v: f64| TOP + plot_h * (hi - v) / (hi - lo);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );

        // axes and gridlines
        let mut t = lo;
        while t <= hi + step * 1e-9 {
            let yy = y(t);
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#e0e0e0"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT + plot_w,
                LEFT - 6.0,
                yy + 4.0,
                fmt_tick(t)
            );
            t += step;
        }
        let _ = writeln!(
            s,
            r#"<line class="axis" x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}" stroke="black"/>"#,
            TOP + plot_h
        );
        let _ = writeln!(
            s,
            r#"<line class="axis" x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
            y(0.0),
            LEFT + plot_w,
            y(0.0)
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            TOP + plot_h / 2.0,
            TOP + plot_h / 2.0,
            escape(&self.y_label)
        );

        let n = self.categories.len().max(1) as f64;
        let group_w = plot_w / n;
        let nb = self.bars.len().max(1) as f64;
        let bar_w = group_w * 0.8 / nb;
        for (ci, cat) in self.categories.iter().enumerate() {
            let gx = LEFT + group_w * ci as f64;
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end" transform="rotate(-45 {:.2} {:.2})">{}</text>"#,
                gx + group_w / 2.0,
                TOP + plot_h + 14.0,
                gx + group_w / 2.0,
                TOP + plot_h + 14.0,
                escape(cat)
            );
            for (si, series) in self.bars.iter().enumerate() {
                let Some(cell) = series.cells.get(ci) else { continue };
                let Some(v) = cell.value else { continue };
                let x = gx + group_w * 0.1 + bar_w * si as f64;
                let (y0, y1) = (y(v.max(0.0)), y(v.min(0.0)));
                let _ = writeln!(
                    s,
                    r#"<rect class="bar" data-series="{}" data-category="{}" data-value="{}" x="{x:.2}" y="{y0:.2}" width="{bar_w:.2}" height="{:.2}" fill="{}"><title>{} {}: {}</title></rect>"#,
                    escape(&series.name),
                    escape(cat),
                    escape(&cell.raw),
                    y1 - y0,
                    PALETTE[si % PALETTE.len()],
                    escape(cat),
                    escape(&series.name),
                    escape(&cell.raw)
                );
            }
        }

        if !self.lines.is_empty() {
            let line_vals = self.lines.iter().flat_map(|s| s.cells.iter().filter_map(|c| c.value));
            let (llo, lhi, lstep) = axis_range(line_vals);
            let ly = |v: f64| TOP + plot_h * (lhi - v) / (lhi - llo);
            let xr = LEFT + plot_w;
            let _ = writeln!(
                s,
                r#"<line class="axis" x1="{xr:.2}" y1="{TOP}" x2="{xr:.2}" y2="{:.2}" stroke="black"/>"#,
                TOP + plot_h
            );
            let mut t = llo;
            while t <= lhi + lstep * 1e-9 {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
                    xr + 6.0,
                    ly(t) + 4.0,
                    fmt_tick(t)
                );
                t += lstep;
            }
            if let Some(label) = &self.line_label {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" transform="rotate(90 {:.2} {:.2})">{}</text>"#,
                    WIDTH - 14.0,
                    TOP + plot_h / 2.0,
                    WIDTH - 14.0,
                    TOP + plot_h / 2.0,
                    escape(label)
                );
            }
            for (si, series) in self.lines.iter().enumerate() {
                let colour = PALETTE[(si + 3) % PALETTE.len()];
                let pts: Vec<(f64, f64, &Cell, &String)> = series
                    .cells
                    .iter()
                    .zip(&self.categories)
                    .enumerate()
                    .filter_map(|(ci, (c, cat))| {
                        c.value.map(|v| (LEFT + group_w * (ci as f64 + 0.5), ly(v), c, cat))
                    })
                    .collect();
                if pts.len() > 1 {
                    let path: Vec<String> =
                        pts.iter().map(|(x, y, _, _)| format!("{x:.2},{y:.2}")).collect();
                    let _ = writeln!(
                        s,
                        r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
                        path.join(" ")
                    );
                }
                for (x, yy, c, cat) in pts {
                    let _ = writeln!(
                        s,
                        r#"<circle class="point" data-series="{}" data-category="{}" data-value="{}" cx="{x:.2}" cy="{yy:.2}" r="3" fill="{colour}"/>"#,
                        escape(&series.name),
                        escape(cat),
                        escape(&c.raw)
                    );
                }
            }
        }

        // legend
        let mut lx = LEFT;
        let ly = HEIGHT - 16.0;
        let entries = self
            .bars
            .iter()
            .enumerate()
            .map(|(i, s)| (PALETTE[i % PALETTE.len()], s.name.clone()))
            .chain(self.lines.iter().enumerate().map(|(i, s)| {
                (PALETTE[(i + 3) % PALETTE.len()], format!("{} (line)", s.name))
            }));
        for (colour, name) in entries {
            let _ = writeln!(
                s,
                r#"<rect x="{lx:.2}" y="{:.2}" width="10" height="10" fill="{colour}"/><text x="{:.2}" y="{ly:.2}">{}</text>"#,
                ly - 9.0,
                lx + 14.0,
                escape(&name)
            );
            lx += 24.0 + 7.0 * name.len() as f64;
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Header-checked CSV table of raw cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str, required: &[&str]) -> Result<Self> {
        if text.trim().is_empty() {
            return Ok(Self {
                header: required.iter().map(|s| s.to_string()).collect(),
                rows: Vec::new(),
            });
        }
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let missing: Vec<String> = required
            .iter()
            .filter(|r| !header.iter().any(|h| h == *r))
            .map(|r| r.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Schema(missing));
        }
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()?;
        Ok(Self { header, rows })
    }

    fn col(&self, name: &str) -> usize {
        self.header.iter().position(|h| h == name).expect("checked at parse")
    }

    pub fn column(&self, name: &str) -> Vec<&str> {
        let i = self.col(name);
        self.rows.iter().map(|r| r[i].as_str()).collect()
    }
}

fn ordered_unique<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for i in items {
        if !out.iter().any(|o| o == i) {
            out.push(i.to_string());
        }
    }
    out
}

/// Pivot `value` by `(category, series)` from the summary table.
fn pivot(t: &Table, value: &str) -> (Vec<String>, Vec<Series>) {
    let cats = ordered_unique(t.column("target_id").into_iter());
    let models = ordered_unique(t.column("model").into_iter());
    let (ci, mi, vi) = (t.col("target_id"), t.col("model"), t.col(value));
    let mut cells: BTreeMap<(&str, &str), &str> = BTreeMap::new();
    for r in &t.rows {
        cells.insert((r[ci].as_str(), r[mi].as_str()), r[vi].as_str());
    }
    let series = models
        .iter()
        .map(|m| Series {
            name: m.clone(),
            cells: cats
                .iter()
                .map(|c| Cell::new(cells.get(&(c.as_str(), m.as_str())).copied().unwrap_or("")))
                .collect(),
        })
        .collect();
    (cats, series)
}

pub fn dprime_chart(summary: &Table) -> Chart {
    let (categories, bars) = pivot(summary, "d_prime");
    Chart {
        title: "d′ per target".into(),
        y_label: "d′".into(),
        categories,
        bars,
        line_label: None,
        lines: Vec::new(),
    }
}

pub fn snr_similarity_chart(summary: &Table) -> Chart {
    let (categories, bars) = pivot(summary, "mean_snr_db");
    let (_, lines) = pivot(summary, "mean_gen_cosine");
    let first_model_only = |mut v: Vec<Series>| {
        v.truncate(1);
        v
    };
    Chart {
        title: "Mean SNR (bars) and mean genuine cosine similarity (lines)".into(),
        y_label: "SNR (dB)".into(),
        categories,
        bars: first_model_only(bars),
        line_label: Some("cosine similarity".into()),
        lines,
    }
}

pub const REFERENCE_HEADER: [&str; 4] = ["T", "Target", "ECAPA", "RESNET50"];

pub fn reference_table() -> Table {
    Table::parse(REFERENCE_DPRIME_CSV, &REFERENCE_HEADER).expect("embedded table is well formed")
}

pub fn reference_chart() -> Chart {
    let t = reference_table();
    let series = |name: &str| Series {
        name: name.to_string(),
        cells: t.column(name).into_iter().map(Cell::new).collect(),
    };
    Chart {
        title: "Published d′ per target (reference)".into(),
        y_label: "d′".into(),
        categories: t.column("T").into_iter().map(str::to_string).collect(),
        bars: vec![series("ECAPA"), series("RESNET50")],
        line_label: None,
        lines: Vec::new(),
    }
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn table_csv(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 cells"))
}

/// Render the charts for an experiment directory and return the files
/// written. A header-only or empty summary yields charts with axes only.
pub fn report(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let summary = Table::parse(&text, &SUMMARY_HEADER)?;
    let charts = dir.join("charts");
    fs::create_dir_all(&charts).map_err(|e| Error::io(&charts, e))?;
    let mut out = Vec::new();

    let keep = |cols: &[&str]| {
        let idx: Vec<usize> = cols.iter().map(|c| summary.col(c)).collect();
        summary
            .rows
            .iter()
            .map(move |r| idx.iter().map(|&i| r[i].clone()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    let cols = ["target_id", "model", "d_prime"];
    out.push(write(charts.join("dprime.csv"), &table_csv(&cols, keep(&cols).into_iter())?)?);
    out.push(write(charts.join("dprime.svg"), &dprime_chart(&summary).to_svg())?);
    let cols = ["target_id", "model", "mean_snr_db", "mean_gen_cosine"];
    out.push(write(
        charts.join("snr_similarity.csv"),
        &table_csv(&cols, keep(&cols).into_iter())?,
    )?);
    out.push(write(
        charts.join("snr_similarity.svg"),
        &snr_similarity_chart(&summary).to_svg(),
    )?);
    out.push(write(charts.join("reference_dprime.csv"), REFERENCE_DPRIME_CSV)?);
    out.push(write(charts.join("reference_dprime.svg"), &reference_chart().to_svg())?);
    Ok(out)
}

/// `(category, series, data-value)` of every bar in an SVG produced here.
pub fn bars_in_svg(svg: &str) -> Vec<(String, String, String)> {
    let attr = |line: &str, name: &str| -> Option<String> {
        let key = format!(r#"{name}=""#);
        let start = line.find(&key)? + key.len();
        let end = start + line[start..].find('"')?;
        Some(
            line[start..end]
                .replace("&quot;", "\"")
                .replace("&lt;", "<")
                .replace("&gt;", ">")
                .replace("&amp;", "&"),
        )
    };
    svg.lines()
        .filter(|l| l.starts_with(r#"<rect class="bar""#))
        .filter_map(|l| {
            Some((
                attr(l, "data-category")?,
                attr(l, "data-series")?,
                attr(l, "data-value")?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bar(svg: &str, cat: &str, series: &str) -> Option<String> {
        bars_in_svg(svg)
            .into_iter()
            .find(|(c, s, _)| c == cat && s == series)
            .map(|b| b.2)
    }

    #[test]
    fn reference_bars_match_the_table() {
        let svg = reference_chart().to_svg();
        assert_eq!(bar(&svg, "T1", "ECAPA").as_deref(), Some("9.68"));
        assert_eq!(bar(&svg, "T1", "RESNET50").as_deref(), Some("9.43"));
        assert_eq!(bar(&svg, "T12", "ECAPA").as_deref(), Some("3.07"));
        assert_eq!(bar(&svg, "T12", "RESNET50").as_deref(), Some("3.63"));
        let t = reference_table();
        assert_eq!(t.rows.len(), 16);
        assert_eq!(bars_in_svg(&svg).len(), 32);
        for (row, (_, _, v)) in t.rows.iter().zip(bars_in_svg(&svg).iter().step_by(2)) {
            assert_eq!(&row[2], v);
        }
    }

    #[test]
    fn missing_columns_are_named() {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join(SUMMARY_FILE), "target_id,model,d_prime\nT1,a,1\n").unwrap();
        match report(d.path()) {
            Err(Error::Schema(cols)) => {
                assert!(cols.contains(&"mean_snr_db".to_string()));
                assert!(!cols.contains(&"d_prime".to_string()));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_summary_gives_axes_only() {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join(SUMMARY_FILE), SUMMARY_HEADER.join(",") + "\n").unwrap();
        let files = report(d.path()).unwrap();
        assert_eq!(files.len(), 6);
        let svg = fs::read_to_string(d.path().join("charts/dprime.svg")).unwrap();
        assert!(svg.contains(r#"class="axis""#));
        assert!(bars_in_svg(&svg).is_empty());
        fs::write(d.path().join(SUMMARY_FILE), "").unwrap();
        assert!(report(d.path()).is_ok());
    }

    #[test]
    fn summary_values_are_carried_verbatim_and_idempotent() {
        let d = tempfile::tempdir().unwrap();
        let mut text = SUMMARY_HEADER.join(",") + "\n";
        text += "T1,yes,sid-s0,9,3,6,1,4.25,20.5,0.9,0,0\n";
        text += "T1,yes,sid-s1,9,3,6,1,inf,20.5,0.8,0,0\n";
        text += "T2,open the door,sid-s0,9,3,6,0.5,-1.5,18,0.7,0.33,0.1\n";
        fs::write(d.path().join(SUMMARY_FILE), &text).unwrap();
        report(d.path()).unwrap();
        let first = fs::read(d.path().join("charts/dprime.svg")).unwrap();
        let svg = String::from_utf8(first.clone()).unwrap();
        assert_eq!(bar(&svg, "T1", "sid-s0").as_deref(), Some("4.25"));
        assert_eq!(bar(&svg, "T2", "sid-s0").as_deref(), Some("-1.5"));
        assert_eq!(bar(&svg, "T1", "sid-s1"), None);
        report(d.path()).unwrap();
        assert_eq!(fs::read(d.path().join("charts/dprime.svg")).unwrap(), first);
        let csv = fs::read_to_string(d.path().join("charts/snr_similarity.csv")).unwrap();
        assert!(csv.contains("T2,sid-s0,18,0.7"));
    }

    #[test]
    fn axis_covers_values() {
        let (lo, hi, step) = axis_range([0.3, 9.68].into_iter());
        assert!(lo <= 0.0 && hi >= 9.68 && step > 0.0);
        let (lo, _, _) = axis_range([-2.0].into_iter());
        assert!(lo <= -2.0);
    }
}
