use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::records::{MetricsRecord, RecordMode, RecordSplit};
use crate::error::{Error, Result};

/// Seed-averaged per-epoch accuracies of one run, baseline and reflective.
#[derive(Clone, Debug, PartialEq)]
pub struct LearningCurves {
    pub config_hash: String,
    pub epochs: usize,
    pub base_train: Vec<Option<f64>>,
    pub base_test: Vec<Option<f64>>,
    pub reflective_train: Vec<Option<f64>>,
    pub reflective_test: Vec<Option<f64>>,
    /// Baseline minus reflective training accuracy.
    pub difference: Vec<Option<f64>>,
    /// Epochs below the last recorded one that lack a training row for either network.
    pub missing: Vec<usize>,
}

fn series(
    records: &[MetricsRecord],
    hash: &str,
    split: RecordSplit,
    pick: impl Fn(RecordMode) -> bool,
    epochs: usize,
) -> Vec<Option<f64>> {
    let mut by_epoch: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records {
        if r.config_hash == hash && r.split == split && pick(r.test_mode) {
            by_epoch.entry(r.epoch).or_default().push(r.accuracy);
        }
    }
    (0..epochs)
        .map(|e| {
            by_epoch
                .get(&e)
                .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}

/// Builds the curves of `config_hash`, or of the only run in `records` when `None`.
pub fn learning_curves(
    records: &[MetricsRecord],
    config_hash: Option<&str>,
) -> Result<LearningCurves> {
    let hash = match config_hash {
        Some(h) => h.to_string(),
        None => {
            let mut hashes: Vec<&str> = records.iter().map(|r| r.config_hash.as_str()).collect();
            hashes.sort_unstable();
            hashes.dedup();
            match hashes.as_slice() {
                [h] => h.to_string(),
                [] => return Err(Error::InvalidArgument("no records".into())),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "records hold {} runs; pick one",
                        hashes.len()
                    )))
                }
            }
        }
    };
    let epochs = records
        .iter()
        .filter(|r| r.config_hash == hash && r.split != RecordSplit::Eval)
        .map(|r| r.epoch + 1)
        .max()
        .ok_or_else(|| Error::InvalidArgument(format!("no per-epoch records for {hash}")))?;
    let is_base = |m| m == RecordMode::Base;
    let is_refl_test = |m| matches!(m, RecordMode::Test(_));
    let base_train = series(records, &hash, RecordSplit::Train, is_base, epochs);
    let reflective_train = series(
        records,
        &hash,
        RecordSplit::Train,
        |m| m == RecordMode::Policy,
        epochs,
    );
    let difference: Vec<Option<f64>> = base_train
        .iter()
        .zip(&reflective_train)
        .map(|(b, r)| Some((*b)? - (*r)?))
        .collect();
    let missing = (0..epochs).filter(|&e| difference[e].is_none()).collect();
    Ok(LearningCurves {
        base_test: series(records, &hash, RecordSplit::Test, is_base, epochs),
        reflective_test: series(records, &hash, RecordSplit::Test, is_refl_test, epochs),
        config_hash: hash,
        epochs,
        base_train,
        reflective_train,
        difference,
        missing,
    })
}

struct Panel {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    lo: f64,
    hi: f64,
    epochs: usize,
}

impl Panel {
    fn point(&self, epoch: usize, v: f64) -> (f64, f64) {
        let span = (self.epochs.max(2) - 1) as f64;
        let x = self.x0 + self.w * epoch as f64 / span;
        let y = self.y0 + self.h * (1.0 - (v - self.lo) / (self.hi - self.lo));
        (x, y)
    }

    /// One polyline per run of consecutive present values, so gaps stay visible.
    fn line(&self, svg: &mut String, values: &[Option<f64>], color: &str, dash: bool) {
        let dash = if dash {
            r#" stroke-dasharray="5,3""#
        } else {
            ""
        };
        let mut run: Vec<(f64, f64)> = Vec::new();
        let flush = |run: &mut Vec<(f64, f64)>, svg: &mut String| {
            if run.len() == 1 {
                let (x, y) = run[0];
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{x:.2}" cy="{y:.2}" r="2" fill="{color}"/>"#
                );
            } else if run.len() > 1 {
                let pts: Vec<String> = run.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = writeln!(
                    svg,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
                    pts.join(" ")
                );
            }
            run.clear();
        };
        for (e, v) in values.iter().enumerate() {
            match v {
                Some(v) => run.push(self.point(e, *v)),
                None => flush(&mut run, svg),
            }
        }
        flush(&mut run, svg);
    }

    fn frame(&self, svg: &mut String, title: &str, y_label: &str) {
        let (x0, y0, w, h) = (self.x0, self.y0, self.w, self.h);
        let _ = writeln!(
            svg,
            r#"<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{title}</text>"#,
            x0 + w / 2.0,
            y0 - 8.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="11" transform="rotate(-90 {} {})">{y_label}</text>"#,
            x0 - 38.0,
            y0 + h / 2.0,
            x0 - 38.0,
            y0 + h / 2.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="11">epoch</text>"#,
            x0 + w / 2.0,
            y0 + h + 30.0
        );
        for i in 0..=4 {
            let v = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
            let (_, y) = self.point(0, v);
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{:.2}" text-anchor="end" font-size="10">{v:.2}</text>"#,
                x0 - 4.0,
                y + 3.0
            );
        }
        let last = self.epochs.saturating_sub(1);
        for e in [0, last / 2, last] {
            let (x, _) = self.point(e, self.lo);
            let _ = writeln!(
                svg,
                r#"<text x="{x:.2}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
                y0 + h + 14.0,
                e + 1
            );
        }
        if self.lo < 0.0 && self.hi > 0.0 {
            let (xa, y) = self.point(0, 0.0);
            let (xb, _) = self.point(last, 0.0);
            let _ = writeln!(
                svg,
                r##"<line x1="{xa:.2}" y1="{y:.2}" x2="{xb:.2}" y2="{y:.2}" stroke="#999"/>"##
            );
        }
    }
}

fn legend(svg: &mut String, x: f64, y: f64, entries: &[(&str, &str, bool)]) {
    for (i, (label, color, dash)) in entries.iter().enumerate() {
        let yy = y + 14.0 * i as f64;
        let dash = if *dash {
            r#" stroke-dasharray="5,3""#
        } else {
            ""
        };
        let _ = writeln!(
            svg,
            r#"<line x1="{x}" y1="{yy}" x2="{}" y2="{yy}" stroke="{color}" stroke-width="1.5"{dash}/>"#,
            x + 18.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="10">{label}</text>"#,
            x + 22.0,
            yy + 3.0
        );
    }
}

/// Two-panel SVG: the learning curves, and the training-accuracy difference
/// `baseline - reflective` (solid) with its mirror `reflective - baseline` (dashed).
pub fn learning_curves_svg(c: &LearningCurves) -> String {
    let (width, height) = (900.0, 380.0);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let left = Panel {
        x0: 60.0,
        y0: 40.0,
        w: 340.0,
        h: 260.0,
        lo: 0.0,
        hi: 1.0,
        epochs: c.epochs,
    };
    left.frame(&mut svg, "Learning curves", "accuracy");
    left.line(&mut svg, &c.base_train, "#1f77b4", false);
    left.line(&mut svg, &c.base_test, "#1f77b4", true);
    left.line(&mut svg, &c.reflective_train, "#d62728", false);
    left.line(&mut svg, &c.reflective_test, "#d62728", true);
    legend(
        &mut svg,
        left.x0 + 8.0,
        left.y0 + left.h - 56.0,
        &[
            ("baseline train", "#1f77b4", false),
            ("baseline test", "#1f77b4", true),
            ("reflective train", "#d62728", false),
            ("reflective test", "#d62728", true),
        ],
    );

    let mirrored: Vec<Option<f64>> = c.difference.iter().map(|d| d.map(|v| -v)).collect();
    let extent = c
        .difference
        .iter()
        .flatten()
        .fold(0.05f64, |m, v| m.max(v.abs()))
        * 1.1;
    let right = Panel {
        x0: 520.0,
        lo: -extent,
        hi: extent,
        ..left
    };
    right.frame(
        &mut svg,
        "Training accuracy difference",
        "accuracy difference",
    );
    right.line(&mut svg, &c.difference, "#2ca02c", false);
    right.line(&mut svg, &mirrored, "#9467bd", true);
    legend(
        &mut svg,
        right.x0 + 8.0,
        right.y0 + 14.0,
        &[
            ("acc(baseline) - acc(reflective)", "#2ca02c", false),
            ("acc(reflective) - acc(baseline)", "#9467bd", true),
        ],
    );
    if !c.missing.is_empty() {
        let list: Vec<String> = c.missing.iter().map(|e| (e + 1).to_string()).collect();
        let _ = writeln!(
            svg,
            r##"<text x="20" y="{}" font-size="10" fill="#b00">missing epochs: {}</text>"##,
            height - 12.0,
            list.join(", ")
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="end">run {}</text>"#,
        width - 10.0,
        height - 12.0,
        c.config_hash
    );
    svg.push_str("</svg>\n");
    svg
}

pub fn render_learning_curves(
    records: &[MetricsRecord],
    config_hash: Option<&str>,
    path: &Path,
) -> Result<LearningCurves> {
    let curves = learning_curves(records, config_hash)?;
    std::fs::write(path, learning_curves_svg(&curves))?;
    Ok(curves)
}
