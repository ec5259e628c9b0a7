use crate::runner::{scaling_fits, RunRecord};
use anyhow::{bail, Result};
use std::collections::BTreeMap;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 18.0;
const MARGIN_T: f64 = 22.0;
const MARGIN_B: f64 = 48.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Data-space to pixel-space mapping over the plot area.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn around(xs: impl Iterator<Item = f64>, ys: impl Iterator<Item = f64>) -> Frame {
        let mut x0 = f64::INFINITY;
        let mut x1 = f64::NEG_INFINITY;
        for x in xs {
            x0 = x0.min(x);
            x1 = x1.max(x);
        }
        let mut y0 = f64::INFINITY;
        let mut y1 = f64::NEG_INFINITY;
        for y in ys {
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let pad = |lo: f64, hi: f64| {
            let span = if hi > lo { hi - lo } else { lo.abs().max(1.0) * 0.1 };
            (lo - 0.08 * span, hi + 0.08 * span)
        };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Frame { x0, x1, y0, y1 }
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn open_svg(out: &mut String) {
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    out.push_str(&format!("<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"));
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let (px0, px1) = (MARGIN_L, WIDTH - MARGIN_R);
    let (py0, py1) = (HEIGHT - MARGIN_B, MARGIN_T);
    out.push_str(&format!(
        "<line x1=\"{px0}\" y1=\"{py0}\" x2=\"{px1}\" y2=\"{py0}\" stroke=\"black\"/>\n\
         <line x1=\"{px0}\" y1=\"{py0}\" x2=\"{px0}\" y2=\"{py1}\" stroke=\"black\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{px0}\" y=\"{:.2}\" text-anchor=\"middle\">{:.3}</text>\n",
        py0 + 16.0,
        frame.x0
    ));
    out.push_str(&format!(
        "<text x=\"{px1}\" y=\"{:.2}\" text-anchor=\"middle\">{:.3}</text>\n",
        py0 + 16.0,
        frame.x1
    ));
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{py0}\" text-anchor=\"end\">{:.3}</text>\n",
        px0 - 6.0,
        frame.y0
    ));
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{py1}\" text-anchor=\"end\" dominant-baseline=\"hanging\">{:.3}</text>\n",
        px0 - 6.0,
        frame.y1
    ));
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
        (px0 + px1) / 2.0,
        HEIGHT - 10.0,
        esc(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"14\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.2})\">{}</text>\n",
        (py0 + py1) / 2.0,
        (py0 + py1) / 2.0,
        esc(y_label)
    ));
}

fn polyline(out: &mut String, pts: &[(f64, f64)], color: &str) {
    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    out.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
        coords.join(" ")
    ));
}

fn circle(out: &mut String, x: f64, y: f64, color: &str) {
    out.push_str(&format!("<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3.5\" fill=\"{color}\"/>\n"));
}

fn legend(out: &mut String, entries: &[(String, &str)]) {
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = MARGIN_T + 14.0 * i as f64 + 4.0;
        let x = WIDTH - MARGIN_R - 160.0;
        out.push_str(&format!(
            "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n",
            y - 9.0
        ));
        out.push_str(&format!("<text x=\"{:.2}\" y=\"{y:.2}\">{}</text>\n", x + 14.0, esc(label)));
    }
}

/// Full-data Dice against the natural log of the parameter count, with the
/// per-resolution least-squares line and its slope and fit quality.
pub fn scaling_plot(records: &[RunRecord]) -> Result<String> {
    let full: Vec<&RunRecord> = records.iter().filter(|r| r.fraction == 1.0).collect();
    if full.is_empty() {
        bail!("no full-data runs to plot");
    }
    let fits = scaling_fits(records).unwrap_or_default();
    let frame = Frame::around(
        full.iter().map(|r| (r.param_count as f64).ln()),
        full.iter().map(|r| r.metrics.dice),
    );
    let mut out = String::new();
    open_svg(&mut out);
    axes(&mut out, &frame, "ln(parameters)", "dice");

    let mut resolutions: Vec<usize> = full.iter().map(|r| r.resolution).collect();
    resolutions.sort_unstable();
    resolutions.dedup();
    let color_of =
        |res: usize| PALETTE[resolutions.iter().position(|&r| r == res).unwrap() % PALETTE.len()];

    for fit in &fits {
        let color = color_of(fit.resolution);
        let pts: Vec<(f64, f64)> = [frame.x0, frame.x1]
            .iter()
            .map(|&lx| (frame.sx(lx), frame.sy(fit.intercept + fit.slope * lx)))
            .collect();
        polyline(&mut out, &pts, color);
    }
    for r in &full {
        let lx = (r.param_count as f64).ln();
        circle(&mut out, frame.sx(lx), frame.sy(r.metrics.dice), color_of(r.resolution));
    }
    let mut entries: Vec<(String, &str)> = Vec::new();
    for fit in &fits {
        entries.push((
            format!("res {}: a={:.4}, R2={:.3}", fit.resolution, fit.slope, fit.r_squared),
            color_of(fit.resolution),
        ));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Test Dice over the training fraction, one polyline per method and
/// resolution.
pub fn starvation_plot(records: &[RunRecord]) -> Result<String> {
    if records.is_empty() {
        bail!("no runs to plot");
    }
    let mut series: BTreeMap<(String, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        series
            .entry((r.method.clone(), r.resolution))
            .or_default()
            .push((r.fraction, r.metrics.dice));
    }
    let frame =
        Frame::around(records.iter().map(|r| r.fraction), records.iter().map(|r| r.metrics.dice));
    let mut out = String::new();
    open_svg(&mut out);
    axes(&mut out, &frame, "training fraction", "dice");
    let mut entries = Vec::new();
    for (i, ((method, resolution), pts)) in series.iter_mut().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite fractions"));
        let pixel: Vec<(f64, f64)> = pts.iter().map(|&(f, d)| (frame.sx(f), frame.sy(d))).collect();
        if pixel.len() > 1 {
            polyline(&mut out, &pixel, color);
        }
        for &(x, y) in &pixel {
            circle(&mut out, x, y, color);
        }
        entries.push((format!("{method} @ {resolution}"), color));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Learning-curve area per method, one marker per resolution, markers of the
/// same method joined by a light line.
pub fn alc_plot(records: &[RunRecord]) -> Result<String> {
    let with_alc: Vec<&RunRecord> =
        records.iter().filter(|r| r.alc_val_dice.is_some() && r.fraction == 1.0).collect();
    if with_alc.is_empty() {
        bail!("no runs carry a learning-curve area");
    }
    let mut methods: Vec<String> = with_alc.iter().map(|r| r.method.clone()).collect();
    methods.sort();
    methods.dedup();
    let mut resolutions: Vec<usize> = with_alc.iter().map(|r| r.resolution).collect();
    resolutions.sort_unstable();
    resolutions.dedup();

    let frame = Frame::around(
        (0..methods.len()).map(|i| i as f64),
        with_alc.iter().map(|r| r.alc_val_dice.unwrap()),
    );
    let mut out = String::new();
    open_svg(&mut out);
    axes(&mut out, &frame, "method", "area under the dice learning curve");
    for (mi, method) in methods.iter().enumerate() {
        let mut pts: Vec<(usize, f64)> = with_alc
            .iter()
            .filter(|r| &r.method == method)
            .map(|r| (r.resolution, r.alc_val_dice.unwrap()))
            .collect();
        pts.sort_by_key(|&(res, _)| res);
        let pixel: Vec<(f64, f64)> =
            pts.iter().map(|&(_, a)| (frame.sx(mi as f64), frame.sy(a))).collect();
        if pixel.len() > 1 {
            polyline(&mut out, &pixel, "#bbbbbb");
        }
        for (&(res, _), &(x, y)) in pts.iter().zip(&pixel) {
            let color =
                PALETTE[resolutions.iter().position(|&r| r == res).unwrap() % PALETTE.len()];
            circle(&mut out, x, y, color);
        }
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            frame.sx(mi as f64),
            HEIGHT - MARGIN_B + 28.0,
            esc(method)
        ));
    }
    let entries: Vec<(String, &str)> = resolutions
        .iter()
        .enumerate()
        .map(|(i, r)| (format!("res {r}"), PALETTE[i % PALETTE.len()]))
        .collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}
