//! Standalone SVG line plot of per-bucket cosine histograms.

use std::fmt::Write as _;

use coclick::eval::{BucketId, Histogram};

const W: f64 = 640.0;
const H: f64 = 380.0;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 44.0;
const COLORS: [&str; 7] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#666666"];

pub fn histogram_svg(title: &str, hists: &[(BucketId, Histogram)]) -> String {
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let y_max = hists
        .iter()
        .flat_map(|(_, h)| h.fractions())
        .fold(0.0f64, f64::max)
        .max(0.05);
    let y_max = (y_max * 10.0).ceil() / 10.0;
    let x = |v: f64| LEFT + (v - Histogram::LO) / (Histogram::HI - Histogram::LO) * plot_w;
    let y = |v: f64| TOP + plot_h * (1.0 - v / y_max);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="13">{}</text>"#, LEFT + plot_w / 2.0, escape(title));
    // axes
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT:.1} {TOP:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
        TOP + plot_h,
        LEFT + plot_w
    );
    for i in 0..=4 {
        let v = -1.0 + 0.5 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.1}</text>"#,
            x(v),
            TOP + plot_h + 16.0
        );
    }
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, LEFT - 6.0, y(v) + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">cosine score</text>"#,
        LEFT + plot_w / 2.0,
        H - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(14 {:.1}) rotate(-90)" text-anchor="middle">fraction of pairs</text>"#,
        TOP + plot_h / 2.0
    );

    for (i, (b, h)) in hists.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let edges = h.edges();
        let points: Vec<String> = h
            .fractions()
            .iter()
            .enumerate()
            .map(|(j, f)| format!("{:.2},{:.2}", x((edges[j] + edges[j + 1]) / 2.0), y(*f)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, points.join(" "));
        if let Some(m) = h.mean {
            let _ = writeln!(
                s,
                r#"<line x1="{0:.2}" y1="{TOP:.1}" x2="{0:.2}" y2="{1:.1}" stroke="{color}" stroke-dasharray="4 3"/>"#,
                x(m),
                TOP + plot_h
            );
        }
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = LEFT + plot_w + 14.0;
        let _ = writeln!(s, r#"<rect x="{lx:.1}" y="{:.1}" width="12" height="3" fill="{color}"/>"#, ly - 4.0);
        let mean = h.mean.map(|m| format!("{m:.4}")).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}">{} {} (n={}, mean {mean})</text>"#,
            lx + 18.0,
            b.index(),
            escape(b.name()),
            h.total
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use coclick::eval::cosine_histogram;

    #[test]
    fn well_formed_and_stable() {
        let h = cosine_histogram(&[0.1, 0.2, 0.9], 4).unwrap();
        let empty = cosine_histogram(&[], 4).unwrap();
        let a = histogram_svg("grade <1>", &[(BucketId::Seen, h.clone()), (BucketId::QSeenPSeen, empty)]);
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("grade &lt;1&gt;"));
        assert_eq!(a.matches("<polyline").count(), 2);
        assert!(a.contains("n=3, mean 0.4000"));
        assert_eq!(a, histogram_svg("grade <1>", &[(BucketId::Seen, h), (BucketId::QSeenPSeen, cosine_histogram(&[], 4).unwrap())]));
    }
}
