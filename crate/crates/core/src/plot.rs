//! SVG rendering of a data-efficiency curve.

use std::fmt::Write;

use crate::sweep::{BudgetMean, SweepReport};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

const WR_COLOR: &str = "#1f77b4";
const ACC_COLOR: &str = "#d62728";

struct Axes {
    log_min: f64,
    log_max: f64,
}

impl Axes {
    fn x(&self, budget: f64) -> f64 {
        let span = (self.log_max - self.log_min).max(1e-9);
        LEFT + (budget.log10() - self.log_min) / span * (W - LEFT - RIGHT)
    }

    fn y(&self, pct: f64) -> f64 {
        TOP + (1.0 - pct / 100.0) * (H - TOP - BOTTOM)
    }
}

/// Log-x line chart: one polyline per metric mean, seed scatter, and a
/// dashed vertical marker at the saturation budget.
pub fn render_curve(report: &SweepReport) -> String {
    let budgets: Vec<f64> = report.means.iter().map(|m| m.budget_percent).collect();
    let lo = budgets.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = budgets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (log_min, log_max) = if lo == hi {
        (lo.log10() - 0.5, hi.log10() + 0.5)
    } else {
        (lo.log10(), hi.log10())
    };
    let ax = Axes { log_min, log_max };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);

    // axes
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, ax.y(0.0), ax.y(100.0));
    let _ = writeln!(s, r#"<g class="axes" stroke="black">"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>"#);
    let _ = writeln!(s, "</g>");
    for &b in &budgets {
        let x = ax.x(b);
        let _ = writeln!(
            s,
            r#"<text class="xtick" x="{x:.2}" y="{:.2}" text-anchor="middle">{b}%</text>"#,
            y0 + 18.0
        );
    }
    for pct in [0.0, 25.0, 50.0, 75.0, 100.0] {
        let y = ax.y(pct);
        let _ = writeln!(
            s,
            r#"<text class="ytick" x="{:.2}" y="{:.2}" text-anchor="end">{pct}</text>"#,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">preference-data budget (% of train, log scale)</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0
    );

    type Series = (&'static str, &'static str, fn(&BudgetMean) -> f64);
    let series: [Series; 2] = [
        ("wr_logp", WR_COLOR, |m| m.wr_logp),
        ("style_acc", ACC_COLOR, |m| m.style_acc),
    ];
    for (name, color, get) in series {
        let pts: Vec<String> = report
            .means
            .iter()
            .map(|m| format!("{:.2},{:.2}", ax.x(m.budget_percent), ax.y(get(m))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="metric" data-metric="{name}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
    }
    for p in &report.points {
        for (name, color, v) in [("wr_logp", WR_COLOR, p.wr_logp), ("style_acc", ACC_COLOR, p.style_acc)] {
            let _ = writeln!(
                s,
                r#"<circle class="seed" data-metric="{name}" data-seed="{}" cx="{:.2}" cy="{:.2}" r="3" fill="{color}" fill-opacity="0.5"/>"#,
                p.subset_seed,
                ax.x(p.budget_percent),
                ax.y(v)
            );
        }
    }

    let xs = ax.x(report.saturation_budget);
    let _ = writeln!(
        s,
        r##"<line class="saturation" x1="{xs:.2}" y1="{y0:.2}" x2="{xs:.2}" y2="{y1:.2}" stroke="#555" stroke-dasharray="5,4"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}">saturation {}%</text>"#,
        xs + 4.0,
        y1 + 12.0,
        report.saturation_budget
    );

    // legend
    for (i, (name, color)) in [("WR-LogP", WR_COLOR), ("Style-Acc", ACC_COLOR)].iter().enumerate() {
        let y = TOP + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="{color}"/><text x="{:.2}" y="{:.2}">{name}</text>"#,
            W - RIGHT - 90.0,
            y - 9.0,
            W - RIGHT - 75.0,
            y
        );
    }
    s.push_str("</svg>\n");
    s
}
