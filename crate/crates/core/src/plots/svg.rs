use std::fmt::Write;

/// Minimal SVG 1.1 writer. Coordinates are printed with two decimals so
/// identical inputs give identical bytes.
pub struct Canvas {
    buf: String,
    pub width: f64,
    pub height: f64,
}

impl Canvas {
    pub fn new(width: u32, height: u32) -> Self {
        let mut buf = String::with_capacity(16 * 1024);
        buf.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        let _ = writeln!(
            buf,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"Helvetica, Arial, sans-serif\">"
        );
        let _ = writeln!(
            buf,
            "<rect class=\"background\" x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>"
        );
        Self {
            buf,
            width: f64::from(width),
            height: f64::from(height),
        }
    }

    pub fn rect(&mut self, class: &str, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let (x, w) = if w < 0.0 { (x + w, -w) } else { (x, w) };
        let _ = writeln!(
            self.buf,
            "<rect class=\"{class}\" x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{fill}\"/>"
        );
    }

    pub fn circle(&mut self, class: &str, cx: f64, cy: f64, r: f64, fill: &str) {
        let _ = writeln!(
            self.buf,
            "<circle class=\"{class}\" cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{r:.2}\" fill=\"{fill}\" fill-opacity=\"0.8\"/>"
        );
    }

    pub fn line(&mut self, class: &str, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.buf,
            "<line class=\"{class}\" x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"{stroke}\" stroke-width=\"1\"/>"
        );
    }

    pub fn polyline(&mut self, class: &str, points: &[(f64, f64)], stroke: &str) {
        let mut pts = String::new();
        for (i, (x, y)) in points.iter().enumerate() {
            if i > 0 {
                pts.push(' ');
            }
            let _ = write!(pts, "{x:.2},{y:.2}");
        }
        let _ = writeln!(
            self.buf,
            "<polyline class=\"{class}\" points=\"{pts}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"1\" stroke-opacity=\"0.7\"/>"
        );
    }

    pub fn polygon(&mut self, class: &str, points: &[(f64, f64)], fill: &str) {
        let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.buf,
            "<polygon class=\"{class}\" points=\"{}\" fill=\"{fill}\"/>",
            pts.join(" ")
        );
    }

    pub fn text(&mut self, class: &str, x: f64, y: f64, anchor: Anchor, size: u32, content: &str) {
        let _ = writeln!(
            self.buf,
            "<text class=\"{class}\" x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"{}\" font-size=\"{size}\">{}</text>",
            anchor.as_str(),
            escape(content)
        );
    }

    pub fn title(&mut self, content: &str) {
        let x = self.width / 2.0;
        self.text("title", x, 22.0, Anchor::Middle, 15, content);
    }

    /// Horizontal axis with evenly spaced ticks along `y`.
    pub fn x_axis(&mut self, scale: &Scale, y: f64, label: &str) {
        self.line("axis", scale.r0, y, scale.r1, y, "#333333");
        for t in scale.ticks(5) {
            let x = scale.map(t);
            self.line("tick", x, y, x, y + 4.0, "#333333");
            self.text("tick-label", x, y + 16.0, Anchor::Middle, 10, &fmt_num(t));
        }
        let mid = (scale.r0 + scale.r1) / 2.0;
        self.text("axis-label", mid, y + 34.0, Anchor::Middle, 12, label);
    }

    pub fn finish(mut self) -> String {
        self.buf.push_str("</svg>\n");
        self.buf
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Anchor {
    Start,
    Middle,
    End,
}

impl Anchor {
    fn as_str(&self) -> &'static str {
        match self {
            Anchor::Start => "start",
            Anchor::Middle => "middle",
            Anchor::End => "end",
        }
    }
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
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

/// Rounds to two decimals and drops trailing zeros: `5.00 → "5"`, `0.50 → "0.5"`.
pub fn fmt_num(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".to_string()
    } else {
        s
    }
}

/// Linear map from data domain `[d0, d1]` to pixel range `[r0, r1]`.
#[derive(Debug, Clone, Copy)]
pub struct Scale {
    pub d0: f64,
    pub d1: f64,
    pub r0: f64,
    pub r1: f64,
}

impl Scale {
    /// Pads degenerate domains so the map stays finite.
    pub fn new(d0: f64, d1: f64, r0: f64, r1: f64) -> Self {
        let (d0, d1) = if (d1 - d0).abs() < 1e-12 {
            let pad = d0.abs().max(1.0) * 0.05;
            (d0 - pad, d1 + pad)
        } else {
            (d0, d1)
        };
        Self { d0, d1, r0, r1 }
    }

    pub fn padded(d0: f64, d1: f64, r0: f64, r1: f64, frac: f64) -> Self {
        let pad = (d1 - d0).abs() * frac;
        Self::new(d0 - pad, d1 + pad, r0, r1)
    }

    #[inline]
    pub fn map(&self, v: f64) -> f64 {
        self.r0 + (v - self.d0) / (self.d1 - self.d0) * (self.r1 - self.r0)
    }

    pub fn ticks(&self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| self.d0 + (self.d1 - self.d0) * i as f64 / (n - 1) as f64)
            .collect()
    }
}

fn lerp_rgb(a: (f64, f64, f64), b: (f64, f64, f64), t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let c = |x: f64, y: f64| (x + (y - x) * t).round().clamp(0.0, 255.0) as u8;
    format!("#{:02x}{:02x}{:02x}", c(a.0, b.0), c(a.1, b.1), c(a.2, b.2))
}

const NEGATIVE: (f64, f64, f64) = (30.0, 136.0, 229.0);
const NEUTRAL: (f64, f64, f64) = (242.0, 242.0, 242.0);
const POSITIVE: (f64, f64, f64) = (255.0, 13.0, 87.0);
const LOW: (f64, f64, f64) = (0.0, 138.0, 250.0);
const HIGH: (f64, f64, f64) = (255.0, 0.0, 82.0);

pub const POSITIVE_FILL: &str = "#ff0d57";
pub const NEGATIVE_FILL: &str = "#1e88e5";
pub const NEUTRAL_FILL: &str = "#999999";

/// Diverging scale symmetric about zero: negative blue, positive red.
pub fn diverging(v: f64, max_abs: f64) -> String {
    if max_abs <= 0.0 {
        return lerp_rgb(NEUTRAL, NEUTRAL, 0.0);
    }
    let t = (v / max_abs).clamp(-1.0, 1.0);
    if t < 0.0 {
        lerp_rgb(NEUTRAL, NEGATIVE, -t)
    } else {
        lerp_rgb(NEUTRAL, POSITIVE, t)
    }
}

/// Sequential scale over `[0, 1]`, low blue to high red.
pub fn sequential(q: f64) -> String {
    lerp_rgb(LOW, HIGH, q)
}

/// Mid-rank quantile of each value within `values`, in `[0, 1]`.
pub fn quantiles(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n <= 1 {
        return vec![0.5; n];
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    values
        .iter()
        .map(|v| {
            let below = sorted.partition_point(|s| s.total_cmp(v).is_lt());
            let through = sorted.partition_point(|s| s.total_cmp(v).is_le());
            let mid = below as f64 + (through - below - 1) as f64 / 2.0;
            mid / (n - 1) as f64
        })
        .collect()
}

/// Vertical low→high legend bar.
pub fn sequential_legend(c: &mut Canvas, x: f64, y0: f64, y1: f64, label: &str) {
    let steps = 20;
    let h = (y1 - y0) / steps as f64;
    for i in 0..steps {
        let q = 1.0 - i as f64 / (steps - 1) as f64;
        c.rect("legend", x, y0 + i as f64 * h, 8.0, h + 0.5, &sequential(q));
    }
    c.text("legend-label", x + 12.0, y0 + 8.0, Anchor::Start, 10, "high");
    c.text("legend-label", x + 12.0, y1, Anchor::Start, 10, "low");
    c.text("legend-label", x + 12.0, (y0 + y1) / 2.0, Anchor::Start, 10, label);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(5.0), "5");
        assert_eq!(fmt_num(0.5), "0.5");
        assert_eq!(fmt_num(-0.001), "0");
        assert_eq!(fmt_num(12.345), "12.35");
        assert_eq!(fmt_num(-3.1), "-3.1");
    }

    #[test]
    fn escaping() {
        assert_eq!(escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
    }

    #[test]
    fn quantile_ranks() {
        assert_eq!(quantiles(&[3.0, 1.0, 2.0]), vec![1.0, 0.0, 0.5]);
        assert_eq!(quantiles(&[1.0, 1.0]), vec![0.5, 0.5]);
        assert_eq!(quantiles(&[7.0]), vec![0.5]);
    }

    #[test]
    fn colors() {
        assert_eq!(diverging(1.0, 1.0), POSITIVE_FILL);
        assert_eq!(diverging(-1.0, 1.0), NEGATIVE_FILL);
        assert_eq!(diverging(0.0, 1.0), "#f2f2f2");
        assert_eq!(sequential(0.0), "#008afa");
        assert_eq!(sequential(1.0), "#ff0052");
    }

    #[test]
    fn scale_degenerate_domain() {
        let s = Scale::new(2.0, 2.0, 0.0, 100.0);
        assert!(s.map(2.0).is_finite());
        assert!((s.map(2.0) - 50.0).abs() < 1e-9);
    }
}
