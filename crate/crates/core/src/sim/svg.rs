//! Minimal SVG line plots for run reports. No plotting dependency: the
//! outputs are simple polyline charts meant for quick inspection and diffing.

use std::io::Write;
use std::path::Path;

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub fn line_plot(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series<'_>],
) -> std::io::Result<()> {
    let (w, h) = (860.0, 420.0);
    let (ml, mr, mt, mb) = (64.0, 16.0, 36.0, 46.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);

    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                xmin = xmin.min(x);
                xmax = xmax.max(x);
                ymin = ymin.min(y);
                ymax = ymax.max(y);
            }
        }
    }
    if !xmin.is_finite() || xmax <= xmin {
        xmin = 0.0;
        xmax = 1.0;
    }
    if !ymin.is_finite() || ymax <= ymin {
        ymin -= 0.5;
        ymax = ymin + 1.0;
    }
    let yr = (ymax - ymin).max(1e-9);
    ymin -= 0.05 * yr;
    ymax += 0.05 * yr;

    let sx = |x: f64| ml + (x - xmin) / (xmax - xmin) * pw;
    let sy = |y: f64| mt + (1.0 - (y - ymin) / (ymax - ymin)) * ph;

    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="monospace" font-size="12">"#
    )?;
    writeln!(f, r#"<rect width="{w}" height="{h}" fill="white"/>"#)?;
    writeln!(
        f,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        title
    )?;
    // Axes and grid.
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let gx = ml + t * pw;
        let gy = mt + t * ph;
        writeln!(
            f,
            r##"<line x1="{gx:.1}" y1="{mt}" x2="{gx:.1}" y2="{:.1}" stroke="#eee"/>"##,
            mt + ph
        )?;
        writeln!(
            f,
            r##"<line x1="{ml}" y1="{gy:.1}" x2="{:.1}" y2="{gy:.1}" stroke="#eee"/>"##,
            ml + pw
        )?;
        writeln!(
            f,
            r#"<text x="{gx:.1}" y="{:.1}" text-anchor="middle">{:.3}</text>"#,
            h - mb + 16.0,
            xmin + t * (xmax - xmin)
        )?;
        writeln!(
            f,
            r#"<text x="{:.1}" y="{gy:.1}" text-anchor="end">{:.3}</text>"#,
            ml - 6.0,
            ymax - t * (ymax - ymin)
        )?;
    }
    writeln!(
        f,
        r##"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    )?;
    writeln!(
        f,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        ml + pw / 2.0,
        h - 8.0,
        x_label
    )?;
    writeln!(
        f,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        y_label
    )?;

    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        writeln!(
            f,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        )?;
        writeln!(
            f,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
            ml + 8.0,
            mt + 16.0 + 16.0 * i as f64,
            s.label
        )?;
    }
    writeln!(f, "</svg>")?;
    Ok(())
}
