//! Fixed-width plain-text tables.
//!
//! Columns are right-aligned and joined by one space, with no row index.
//! Two padding styles exist, matching how a typed data frame prints:
//!
//! * [`TableStyle::Frame`] (labeled, several rows): numeric column headers
//!   carry one leading pad space, so a numeric column is at least one wider
//!   than its name.
//! * [`TableStyle::Record`] (a single unlabeled row): decimal cells carry a
//!   leading sign slot, so a decimal column is at least one wider than its
//!   value.

use crate::dataset::{FeatureKind, FeatureSchema, Label, SubjectRecord};
use crate::error::{Error, Result};

use super::templates::{LABEL_COLUMN, TARGET_LABEL_CELL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableStyle {
    Frame,
    Record,
}

struct Column<'a> {
    header: &'a str,
    cells: Vec<&'a str>,
    width: usize,
}

fn check_row(schema: &FeatureSchema, s: &SubjectRecord) -> Result<()> {
    if s.values.len() != schema.len() {
        return Err(Error::Render(format!(
            "subject {} has {} values, schema has {}",
            s.subject_id,
            s.values.len(),
            schema.len()
        )));
    }
    if let Some(i) = s.values.iter().position(|v| v.missing) {
        return Err(Error::Render(format!(
            "subject {} is missing {}",
            s.subject_id,
            schema.features()[i].name
        )));
    }
    Ok(())
}

/// Renders `rows` followed by `target`. With `labeled`, an
/// `AlzheimersDisease` column is appended and the target's cell is `X`.
pub fn render_table(
    schema: &FeatureSchema,
    rows: &[&SubjectRecord],
    target: &SubjectRecord,
    labeled: bool,
) -> Result<String> {
    let style = if labeled {
        TableStyle::Frame
    } else {
        TableStyle::Record
    };
    let all: Vec<&SubjectRecord> = rows.iter().copied().chain(std::iter::once(target)).collect();
    for s in &all {
        check_row(schema, s)?;
    }

    let mut columns: Vec<Column> = schema
        .features()
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let cells: Vec<&str> = all.iter().map(|s| s.values[j].raw_text.as_str()).collect();
            let widest = cells.iter().map(|c| c.chars().count()).max().unwrap_or(0);
            let header_len = spec.name.chars().count();
            let width = match (style, &spec.kind) {
                (TableStyle::Frame, k) if k.is_numeric() => (header_len + 1).max(widest),
                (TableStyle::Record, FeatureKind::Decimal) => header_len.max(widest + 1),
                _ => header_len.max(widest),
            };
            Column {
                header: &spec.name,
                cells,
                width,
            }
        })
        .collect();

    if labeled {
        let mut cells = Vec::with_capacity(all.len());
        for s in rows {
            let label = s
                .label
                .ok_or_else(|| Error::Render(format!("example subject {} has no label", s.subject_id)))?;
            cells.push(match label {
                Label::Cn => "0",
                Label::Ad => "1",
            });
        }
        cells.push(TARGET_LABEL_CELL);
        let width = LABEL_COLUMN.len().max(1);
        columns.push(Column {
            header: LABEL_COLUMN,
            cells,
            width,
        });
    }

    let mut out = String::new();
    push_line(&mut out, columns.iter().map(|c| (c.header, c.width)));
    for r in 0..all.len() {
        out.push('\n');
        push_line(&mut out, columns.iter().map(|c| (c.cells[r], c.width)));
    }
    Ok(out)
}

fn push_line<'a>(out: &mut String, cells: impl Iterator<Item = (&'a str, usize)>) {
    for (i, (cell, width)) in cells.enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format!("{cell:>width$}"));
    }
}

/// Splits a rendered table back into header names and cells, using the
/// right edge of each header as that column's boundary.
pub fn parse_table(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Render("empty table".into()))?;
    let mut bounds = Vec::new();
    let mut start = None;
    for (i, ch) in header.char_indices() {
        match (ch == ' ', start) {
            (false, None) => start = Some(i),
            (true, Some(_)) => {
                bounds.push(i);
                start = None;
            }
            _ => {}
        }
    }
    if start.is_some() {
        bounds.push(header.len());
    }
    let slice = |line: &str| -> Result<Vec<String>> {
        if line.len() != header.len() {
            return Err(Error::Render(format!(
                "row width {} differs from header width {}",
                line.len(),
                header.len()
            )));
        }
        let mut prev = 0;
        let mut cells = Vec::with_capacity(bounds.len());
        for &end in &bounds {
            cells.push(line[prev..end].trim().to_string());
            prev = end;
        }
        Ok(cells)
    };
    let headers = slice(header)?;
    let rows = lines.map(slice).collect::<Result<Vec<_>>>()?;
    Ok((headers, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureSpec, FeatureValue};

    fn one_int_schema() -> FeatureSchema {
        FeatureSchema::new(vec![FeatureSpec {
            name: "A".into(),
            kind: FeatureKind::Integer { min: None, max: None },
            unit: None,
            phrase: "a".into(),
        }])
        .unwrap()
    }

    fn subject(id: &str, raw: &str, label: Option<Label>) -> SubjectRecord {
        SubjectRecord {
            subject_id: id.into(),
            values: vec![FeatureValue::numeric(raw, raw.parse().unwrap())],
            label,
        }
    }

    #[test]
    fn minimal_table() {
        let s = subject("1", "7", None);
        assert_eq!(render_table(&one_int_schema(), &[], &s, false).unwrap(), "A\n7");
    }

    #[test]
    fn labeled_minimal_table() {
        let a = subject("1", "12", Some(Label::Ad));
        let t = subject("2", "7", None);
        let out = render_table(&one_int_schema(), &[&a], &t, true).unwrap();
        assert_eq!(
            out,
            " A AlzheimersDisease\n12                 1\n 7                 X"
        );
    }

    #[test]
    fn mismatched_row_is_error() {
        let mut bad = subject("1", "7", None);
        bad.values.push(FeatureValue::text("x"));
        assert!(matches!(
            render_table(&one_int_schema(), &[], &bad, false),
            Err(Error::Render(_))
        ));
    }

    #[test]
    fn unlabeled_example_row_is_error() {
        let a = subject("1", "12", None);
        let t = subject("2", "7", None);
        assert!(render_table(&one_int_schema(), &[&a], &t, true).is_err());
    }

    #[test]
    fn parse_recovers_cells() {
        let a = subject("1", "12", Some(Label::Cn));
        let t = subject("2", "7", None);
        let out = render_table(&one_int_schema(), &[&a], &t, true).unwrap();
        let (h, rows) = parse_table(&out).unwrap();
        assert_eq!(h, ["A", "AlzheimersDisease"]);
        assert_eq!(rows, vec![vec!["12", "0"], vec!["7", "X"]]);
    }
}
