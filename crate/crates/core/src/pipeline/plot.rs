//! Hand-written SVG figures on a fixed 800×400 canvas.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::report::DiagnosticsReport;
use super::{PipelineError, Result};
use crate::corpus::{TokenId, Vocabulary};
use crate::metrics::LmiDistribution;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 400.0;
pub const DEFAULT_ANNOTATE_TOP: usize = 5;

const GREEN_LIGHT: [u8; 3] = [0xed, 0xf8, 0xe9];
const GREEN_DARK: [u8; 3] = [0x00, 0x6d, 0x2c];
const PINK_LIGHT: [u8; 3] = [0xfd, 0xe0, 0xef];
const PINK_DARK: [u8; 3] = [0xc5, 0x1b, 0x7d];

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn header(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif">"#
    );
    let _ = writeln!(
        out,
        r##"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##
    );
}

/// Token ids ordered by ascending corpus frequency, ties by id.
pub fn frequency_order(vocab: &Vocabulary) -> Vec<TokenId> {
    let mut ids: Vec<TokenId> = (0..vocab.len() as TokenId).collect();
    ids.sort_by_key(|&id| (vocab.frequency(id), id));
    ids
}

/// Scatter of each token's LMI share against its frequency rank, with the
/// `annotate_top` highest tokens labeled.
pub fn render_lmi(
    dist: &LmiDistribution,
    vocab: &Vocabulary,
    annotate_top: usize,
    title: &str,
) -> Result<String> {
    if dist.degenerate {
        return Err(PipelineError::Plot(format!(
            "LMI distribution for label {} has no positive mass; there is nothing to plot \
             (check that the pool holds more than one label)",
            dist.label
        )));
    }
    if dist.values.len() != vocab.len() {
        return Err(PipelineError::Plot(format!(
            "distribution covers {} tokens but the vocabulary has {}",
            dist.values.len(),
            vocab.len()
        )));
    }
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 50.0);
    let (w, h) = (WIDTH - left - right, HEIGHT - top - bottom);
    let order = frequency_order(vocab);
    let n = order.len().max(1) as f64;
    let peak = dist.values.iter().copied().fold(0.0, f64::max);
    let mut rank = vec![0usize; vocab.len()];
    for (r, &id) in order.iter().enumerate() {
        rank[id as usize] = r;
    }
    let x_of = |id: TokenId| left + (rank[id as usize] as f64 + 0.5) / n * w;
    let y_of = |v: f64| top + h * (1.0 - v / peak);

    let mut out = String::new();
    header(&mut out);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="24" font-size="16" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r##"<line x1="{left:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#333333"/>"##,
        top + h,
        left + w,
        top + h
    );
    let _ = writeln!(
        out,
        r##"<line x1="{left:.2}" y1="{top:.2}" x2="{left:.2}" y2="{:.2}" stroke="#333333"/>"##,
        top + h
    );
    for tick in [0.0, 0.5, 1.0] {
        let v = peak * tick;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{v:.3}</text>"#,
            left - 6.0,
            y_of(v) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">tokens by ascending frequency</text>"#,
        left + w / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.2})">LMI share</text>"#,
        top + h / 2.0,
        top + h / 2.0
    );
    for &id in &order {
        let v = dist.values[id as usize];
        if v > 0.0 {
            let _ = writeln!(
                out,
                r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#2166ac"/>"##,
                x_of(id),
                y_of(v)
            );
        }
    }
    for (i, (id, v)) in dist.top_tokens(annotate_top).into_iter().enumerate() {
        let (x, y) = (x_of(id), y_of(v));
        let ly = (y - 14.0 - 14.0 * (i % 3) as f64).max(top - 8.0);
        let anchor = if x > left + w * 0.8 { "end" } else { "start" };
        let lx = if anchor == "end" { x - 8.0 } else { x + 8.0 };
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{y:.2}" x2="{lx:.2}" y2="{:.2}" stroke="#999999"/>"##,
            ly + 3.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{lx:.2}" y="{ly:.2}" font-size="12" text-anchor="{anchor}">{}</text>"#,
            escape(vocab.token(id))
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn plot_lmi(
    dist: &LmiDistribution,
    vocab: &Vocabulary,
    annotate_top: usize,
    title: &str,
    out: &Path,
) -> Result<()> {
    let svg = render_lmi(dist, vocab, annotate_top, title)?;
    write_file(out, &svg)
}

fn ramp(light: [u8; 3], dark: [u8; 3], t: f64) -> String {
    let mix = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * t).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(light[0], dark[0]),
        mix(light[1], dark[1]),
        mix(light[2], dark[2])
    )
}

/// Confusion heat-grid: rows gold, columns predicted. Diagonal cells use a
/// green ramp, the rest a pink ramp, both scaled by count / max count.
pub fn render_confusion(matrix: &[Vec<u64>], labels: &[String], title: &str) -> Result<String> {
    let c = matrix.len();
    if c == 0 || matrix.iter().any(|row| row.len() != c) {
        return Err(PipelineError::Plot(
            "confusion matrix must be square and non-empty".into(),
        ));
    }
    if labels.len() != c {
        return Err(PipelineError::Plot(format!(
            "{} labels for a {c}×{c} matrix",
            labels.len()
        )));
    }
    let max = matrix.iter().flatten().copied().max().unwrap_or(0);
    let cell = ((HEIGHT - 100.0) / c as f64).min((WIDTH - 260.0) / c as f64);
    let grid = cell * c as f64;
    let x0 = (WIDTH - grid) / 2.0;
    let y0 = 60.0;

    let mut out = String::new();
    header(&mut out);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="24" font-size="16" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="44" font-size="12" text-anchor="middle">predicted</text>"#,
        WIDTH / 2.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">gold</text>"#,
        x0 - 70.0,
        y0 + grid / 2.0,
        x0 - 70.0,
        y0 + grid / 2.0
    );
    for (j, label) in labels.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
            x0 + (j as f64 + 0.5) * cell,
            y0 + grid + 18.0,
            escape(label)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="end">{}</text>"#,
            x0 - 8.0,
            y0 + (j as f64 + 0.5) * cell + 4.0,
            escape(label)
        );
    }
    for (i, row) in matrix.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            let t = if max == 0 { 0.0 } else { count as f64 / max as f64 };
            let fill = if i == j {
                ramp(GREEN_LIGHT, GREEN_DARK, t)
            } else {
                ramp(PINK_LIGHT, PINK_DARK, t)
            };
            let (x, y) = (x0 + j as f64 * cell, y0 + i as f64 * cell);
            let _ = writeln!(
                out,
                r##"<rect x="{x:.2}" y="{y:.2}" width="{cell:.2}" height="{cell:.2}" fill="{fill}" stroke="#ffffff"/>"##
            );
            let ink = if t > 0.6 { "#ffffff" } else { "#000000" };
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle" fill="{ink}">{count}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 5.0
            );
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn plot_confusion(matrix: &[Vec<u64>], labels: &[String], title: &str, out: &Path) -> Result<()> {
    let svg = render_confusion(matrix, labels, title)?;
    write_file(out, &svg)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| PipelineError::Write {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| PipelineError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn lmi_figure_path(out_dir: &Path, ratio: f64, dataset: &str, label: &str) -> PathBuf {
    out_dir
        .join("figures")
        .join(format!("lmi-r{ratio}-{dataset}-{label}.svg"))
}

pub fn confusion_figure_path(out_dir: &Path, ratio: f64, dataset: &str) -> PathBuf {
    out_dir
        .join("figures")
        .join(format!("confusion-r{ratio}-{dataset}.svg"))
}

/// Seed-mean LMI scatter per (ratio, dataset, label) and the first seed's
/// confusion grid per (ratio, dataset).
pub fn emit_figures(report: &DiagnosticsReport, vocab: &Vocabulary, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for s in &report.label_summary {
        let Some(dist) = s.to_distribution(vocab.len()) else {
            continue;
        };
        let label = &report.labels[s.label];
        let path = lmi_figure_path(out_dir, s.ratio, &s.dataset, label);
        let title = format!(
            "{} r={} {} label {label}",
            report.metadata.model, s.ratio, s.dataset
        );
        plot_lmi(&dist, vocab, DEFAULT_ANNOTATE_TOP, &title, &path)?;
        written.push(path);
    }
    for s in &report.summary {
        let first = report
            .seeds
            .iter()
            .filter_map(|&seed| report.cell(s.ratio, seed))
            .find_map(|c| {
                c.splits
                    .iter()
                    .find(|sp| sp.dataset == s.dataset)
                    .map(|sp| (c.seed, sp))
            });
        let Some((seed, split)) = first else {
            continue;
        };
        let path = confusion_figure_path(out_dir, s.ratio, &s.dataset);
        let title = format!(
            "{} r={} {} seed {seed}",
            report.metadata.model, s.ratio, s.dataset
        );
        plot_confusion(&split.confusion, &report.labels, &title, &path)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, Document, LabeledCorpus};

    fn vocab() -> Vocabulary {
        let docs = vec![Document::new(
            "0",
            ["a", "a", "a", "b", "b", "c&d"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            0,
        )];
        build_vocabulary(
            &LabeledCorpus::new(docs, vec!["x".into(), "y".into()], "t").unwrap(),
            1,
        )
    }

    fn dist(values: Vec<f64>) -> LmiDistribution {
        LmiDistribution {
            label: 0,
            values,
            normalized: true,
            degenerate: false,
        }
    }

    #[test]
    fn point_mass_has_one_marker_and_one_annotation() {
        let v = vocab();
        let mut values = vec![0.0; v.len()];
        values[v.id_of("b").unwrap() as usize] = 1.0;
        let svg = render_lmi(&dist(values), &v, 5, "t").unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
        assert_eq!(svg.matches(">b</text>").count(), 1);
        assert!(svg.contains(r#"viewBox="0 0 800 400""#));
    }

    #[test]
    fn lmi_render_is_deterministic_and_escapes_tokens() {
        let v = vocab();
        let values: Vec<f64> = (0..v.len()).map(|i| i as f64 / 100.0).collect();
        let a = render_lmi(&dist(values.clone()), &v, 5, "a<b").unwrap();
        assert_eq!(a, render_lmi(&dist(values), &v, 5, "a<b").unwrap());
        assert!(a.contains("c&amp;d") && a.contains("a&lt;b"));
    }

    #[test]
    fn degenerate_distribution_is_refused() {
        let v = vocab();
        let mut d = dist(vec![0.0; v.len()]);
        d.degenerate = true;
        let err = render_lmi(&d, &v, 5, "t").unwrap_err();
        assert!(err.to_string().contains("no positive mass"));
    }

    #[test]
    fn frequency_order_is_ascending() {
        let v = vocab();
        let order = frequency_order(&v);
        let freqs: Vec<u64> = order.iter().map(|&id| v.frequency(id)).collect();
        assert!(freqs.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*order.last().unwrap(), v.id_of("a").unwrap());
    }

    fn fills(svg: &str) -> Vec<String> {
        svg.lines()
            .filter(|l| l.starts_with("<rect") && l.contains("stroke"))
            .map(|l| l.split("fill=\"").nth(1).unwrap()[..7].to_string())
            .collect()
    }

    #[test]
    fn zero_matrix_is_lightest_with_zeros_printed() {
        let labels = vec!["neg".to_string(), "pos".to_string()];
        let svg = render_confusion(&[vec![0, 0], vec![0, 0]], &labels, "t").unwrap();
        assert_eq!(fills(&svg), vec!["#edf8e9", "#fde0ef", "#fde0ef", "#edf8e9"]);
        assert_eq!(svg.matches(">0</text>").count(), 4);
    }

    #[test]
    fn diagonal_matrix_only_colors_green() {
        let labels = vec!["neg".to_string(), "pos".to_string()];
        let svg = render_confusion(&[vec![7, 0], vec![0, 3]], &labels, "t").unwrap();
        let f = fills(&svg);
        assert_eq!(f[0], "#006d2c");
        assert_eq!(f[1], "#fde0ef");
        assert_eq!(f[2], "#fde0ef");
        assert_ne!(f[3], "#edf8e9");
        assert!(svg.contains(">7</text>") && svg.contains(">3</text>"));
    }

    #[test]
    fn non_square_matrix_is_refused() {
        let labels = vec!["a".to_string(), "b".to_string()];
        assert!(render_confusion(&[vec![1, 2, 3], vec![1, 2, 3]], &labels, "t").is_err());
        assert!(render_confusion(&[vec![1, 2], vec![1, 2]], &labels[..1], "t").is_err());
    }
}
