//! Correlation heatmap rendering.
//!
//! Draws a word-by-word θ matrix as a standalone SVG: one cell per ordered
//! pair, colored on a blue-white-red ramp over [0, 2] so exclusives, the
//! unrelated middle, and synonyms read as three bands. Cells without a
//! defined correlation (dropped words) are hatched gray.

use std::fmt::Write as _;

const CELL: usize = 18;
const MARGIN: usize = 84;
const GAP: usize = 28;

fn channel(a: u8, b: u8, t: f64) -> u8 {
    (a as f64 + (b as f64 - a as f64) * t).round() as u8
}

/// Blue (#2166ac) at 0, white at 1, red (#b2182b) at 2.
fn ramp(theta: f64) -> String {
    let t = (theta / 2.0).clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let u = t / 0.5;
        (
            channel(0x21, 0xff, u),
            channel(0x66, 0xff, u),
            channel(0xac, 0xff, u),
        )
    } else {
        let u = (t - 0.5) / 0.5;
        (
            channel(0xff, 0xb2, u),
            channel(0xff, 0x18, u),
            channel(0xff, 0x2b, u),
        )
    };
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders a square θ matrix. `theta[r][c]` is the correlation of the pair
/// (words[r], words[c]); None marks an undefined entry. The config hash is
/// embedded as a comment for provenance.
pub fn theta_heatmap(
    title: &str,
    words: &[String],
    theta: &[Vec<Option<f64>>],
    config_hash: &str,
) -> String {
    let n = words.len();
    assert_eq!(theta.len(), n, "square matrix");
    assert!(theta.iter().all(|row| row.len() == n), "square matrix");

    let grid = n * CELL;
    let legend_h = 46;
    let width = MARGIN + grid + GAP;
    let height = MARGIN + grid + GAP + legend_h;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"monospace\" font-size=\"10\">"
    );
    let _ = writeln!(out, "<!-- config {config_hash} -->");
    let _ = writeln!(out, "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{MARGIN}\" y=\"14\" font-size=\"12\">{}</text>",
        escape(title)
    );

    for (r, row) in theta.iter().enumerate() {
        let y = MARGIN + r * CELL;
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            MARGIN - 4,
            y + CELL - 5,
            escape(&words[r])
        );
        for (c, value) in row.iter().enumerate() {
            let x = MARGIN + c * CELL;
            match value {
                Some(v) => {
                    let _ = writeln!(
                        out,
                        "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" \
                         fill=\"{}\" stroke=\"#ddd\"><title>{},{}: {v:.4}</title></rect>",
                        ramp(*v),
                        escape(&words[r]),
                        escape(&words[c]),
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" \
                         fill=\"#bbbbbb\" stroke=\"#ddd\"><title>{},{}: undefined</title></rect>",
                        escape(&words[r]),
                        escape(&words[c]),
                    );
                }
            }
        }
    }
    for (c, word) in words.iter().enumerate() {
        let x = MARGIN + c * CELL;
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" transform=\"rotate(-60 {} {})\">{}</text>",
            x + 4,
            MARGIN - 6,
            x + 4,
            MARGIN - 6,
            escape(word)
        );
    }

    let ly = MARGIN + grid + GAP;
    for step in 0..=40 {
        let v = step as f64 / 20.0;
        let _ = writeln!(
            out,
            "<rect x=\"{}\" y=\"{ly}\" width=\"4\" height=\"14\" fill=\"{}\"/>",
            MARGIN + step * 4,
            ramp(v)
        );
    }
    for (v, label) in [(0.0, "0"), (1.0, "1"), (2.0, "2")] {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\">{label}</text>",
            MARGIN + (v * 20.0) as usize * 4,
            ly + 28
        );
    }
    out.push_str("</svg>\n");
    out
}
