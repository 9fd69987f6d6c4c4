//! Per-token heatmaps of emphasis scores.
//!
//! Intensity is linear in the score. HTML output shades each token with
//! `rgba(220, 20, 60, score)`; a score of zero leaves the token unstyled.
//! ANSI output quantizes to an 8-step ramp, `level = round(score * 7)`,
//! where level 0 is unstyled and levels 1..=7 map to the 256-colour
//! backgrounds in [`ANSI_RAMP`], from pale to saturated red.
//!
//! With gold rows enabled every sentence is rendered twice, predictions
//! above gold, with columns aligned.

use std::fmt::Write as _;

use emph_core::data::Instance;
use emph_core::predictions::SCALE;
use emph_core::{PredictionSet, Result};

pub const ANSI_RAMP: [u8; 7] = [224, 217, 210, 203, 197, 160, 124];

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Ansi,
    Html,
}

/// One sentence ready to draw: surfaces plus one or two score rows in micros.
struct Row<'a> {
    inst: &'a Instance,
    pred: &'a [u32],
    gold: Option<Vec<u32>>,
}

fn rows<'a>(instances: &'a [Instance], preds: &'a PredictionSet, with_gold: bool) -> Result<Vec<Row<'a>>> {
    preds.check_aligned(instances)?;
    let gold = if with_gold { Some(PredictionSet::from_gold(instances)?) } else { None };
    Ok(instances
        .iter()
        .map(|inst| Row {
            inst,
            pred: preds.micros(&inst.id).expect("aligned"),
            gold: gold.as_ref().map(|g| g.micros(&inst.id).expect("gold for every instance").to_vec()),
        })
        .collect())
}

pub fn render(format: Format, instances: &[Instance], preds: &PredictionSet, with_gold: bool) -> Result<String> {
    let rows = rows(instances, preds, with_gold)?;
    Ok(match format {
        Format::Ansi => ansi(&rows),
        Format::Html => html(&rows),
    })
}

pub fn ansi_level(micros: u32) -> usize {
    ((micros as u64 * 7 + SCALE / 2) / SCALE) as usize
}

fn ansi_cell(out: &mut String, text: &str, width: usize, micros: u32) {
    let pad = width - text.chars().count();
    match ansi_level(micros) {
        0 => {
            out.push_str(text);
        }
        level => {
            let _ = write!(out, "\x1b[48;5;{}m{text}\x1b[0m", ANSI_RAMP[level - 1]);
        }
    }
    out.extend(std::iter::repeat_n(' ', pad));
}

fn ansi(rows: &[Row]) -> String {
    let mut out = String::new();
    for row in rows {
        let widths: Vec<usize> = row.inst.tokens.iter().map(|t| t.surface.chars().count()).collect();
        if row.gold.is_some() {
            let _ = writeln!(out, "# {}", row.inst.id);
        }
        let mut line = |label: &str, scores: &[u32]| {
            let _ = write!(out, "{label}");
            for ((tok, &w), &s) in row.inst.tokens.iter().zip(&widths).zip(scores) {
                out.push(' ');
                ansi_cell(&mut out, &tok.surface, w, s);
            }
            out.push('\n');
        };
        match &row.gold {
            Some(gold) => {
                line("pred", row.pred);
                line("gold", gold);
            }
            None => line(&row.inst.id, row.pred),
        }
    }
    out
}

/// Escapes markup characters. Characters that cannot appear in a
/// well-formed document are replaced with U+FFFD.
pub fn escape_html(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            '\t' | '\n' | '\r' => out.push(c),
            c if c.is_control() || matches!(c, '\u{FFFE}' | '\u{FFFF}') => out.push('\u{FFFD}'),
            c => out.push(c),
        }
    }
    out
}

fn html_cell(out: &mut String, text: &str, micros: u32) {
    let score = emph_core::predictions::format_score(micros);
    if micros == 0 {
        let _ = write!(out, "<td title=\"{score}\">{}</td>", escape_html(text));
    } else {
        let _ = write!(
            out,
            "<td title=\"{score}\" style=\"background-color: rgba(220, 20, 60, {score})\">{}</td>",
            escape_html(text)
        );
    }
}

fn html(rows: &[Row]) -> String {
    let mut out = String::from(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\"/>\n<title>Emphasis heatmap</title>\n\
         <style>table { border-collapse: collapse; margin-bottom: 1em; } \
         td { padding: 2px 4px; } th { text-align: left; padding-right: 8px; color: #666; }</style>\n\
         </head>\n<body>\n",
    );
    for row in rows {
        let _ = writeln!(out, "<table class=\"sentence\" data-id=\"{}\">", escape_html(&row.inst.id));
        let mut line = |label: &str, scores: &[u32]| {
            let _ = write!(out, "<tr><th>{}</th>", escape_html(label));
            for (tok, &s) in row.inst.tokens.iter().zip(scores) {
                html_cell(&mut out, &tok.surface, s);
            }
            out.push_str("</tr>\n");
        };
        match &row.gold {
            Some(gold) => {
                line("pred", row.pred);
                line("gold", gold);
            }
            None => line(&row.inst.id, row.pred),
        }
        out.push_str("</table>\n");
    }
    out.push_str("</body>\n</html>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use emph_core::data::{PosTag, Token};

    fn sample() -> (Vec<Instance>, PredictionSet) {
        let inst = Instance {
            id: "s1".into(),
            tokens: vec![
                Token::with_prob("<b>", PosTag::X, 1.0),
                Token::with_prob("plain", PosTag::Noun, 0.0),
                Token::with_prob("half", PosTag::Adj, 0.5),
            ],
        };
        let mut p = PredictionSet::new();
        p.insert("s1", &[1.0, 0.0, 0.5]).unwrap();
        (vec![inst], p)
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ansi_level(0), 0);
        assert_eq!(ansi_level(71_428), 0);
        assert_eq!(ansi_level(71_429), 1);
        assert_eq!(ansi_level(1_000_000), 7);
    }

    #[test]
    fn ansi_styles_only_nonzero_scores() {
        let (d, p) = sample();
        let s = render(Format::Ansi, &d, &p, false).unwrap();
        assert_eq!(s, "s1 \x1b[48;5;124m<b>\x1b[0m plain \x1b[48;5;203mhalf\x1b[0m\n");
    }

    #[test]
    fn html_escapes_and_scales() {
        let (d, p) = sample();
        let s = render(Format::Html, &d, &p, true).unwrap();
        assert!(s.contains("&lt;b&gt;"));
        assert!(!s.contains("<b>"));
        assert!(s.contains("rgba(220, 20, 60, 1.000000)"));
        assert!(s.contains("<td title=\"0.000000\">plain</td>"));
        assert_eq!(s.matches("<tr>").count(), 2);
    }

    #[test]
    fn misaligned_predictions_are_rejected() {
        let (d, _) = sample();
        let mut p = PredictionSet::new();
        p.insert("s1", &[0.1]).unwrap();
        assert!(render(Format::Html, &d, &p, false).is_err());
    }
}
