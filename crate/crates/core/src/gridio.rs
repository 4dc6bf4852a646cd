//! CSV formats for layouts and click-probability grids.
//!
//! A grid file holds one matrix row per line and no header; rows may differ
//! in length. A long-format layout file has the header
//! `row,col,topic,item_id,attraction` with 0-based `row` and `col`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::models::{AttractionMatrix, ItemId};

pub const LAYOUT_HEADER: [&str; 5] = ["row", "col", "topic", "item_id", "attraction"];

/// One entry of a long-format layout file.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutCell {
    pub row: usize,
    pub col: usize,
    pub topic: String,
    pub item_id: u64,
    pub attraction: f64,
}

fn parse_error(source_name: &str, line: u64, message: String) -> Error {
    Error::Parse {
        source_name: source_name.into(),
        line,
        message,
    }
}

fn records<R: Read>(input: R, source_name: &str) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                kind => parse_error(source_name, line, format!("{kind:?}")),
            }
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        out.push((line, rec));
    }
    Ok(out)
}

fn parse_f64(field: &str, source_name: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_error(source_name, line, format!("`{field}` is not a finite number")))
}

/// Reads a headerless grid of reals.
pub fn read_grid<R: Read>(input: R, source_name: &str) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f64>> = records(input, source_name)?
        .into_iter()
        .map(|(line, rec)| rec.iter().map(|f| parse_f64(f, source_name, line)).collect())
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Err(parse_error(source_name, 1, "no rows".into()));
    }
    Ok(rows)
}

/// Writes a grid with shortest round-trip float formatting.
pub fn write_grid<W: Write>(mut out: W, rows: &[Vec<f64>]) -> Result<()> {
    for row in rows {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a long-format layout file.
pub fn read_layout_cells<R: Read>(input: R, source_name: &str) -> Result<Vec<LayoutCell>> {
    let mut recs = records(input, source_name)?.into_iter();
    let Some((_, header)) = recs.next() else {
        return Err(parse_error(source_name, 1, "empty file (missing header)".into()));
    };
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != LAYOUT_HEADER {
        return Err(parse_error(source_name, 1, format!("expected header {LAYOUT_HEADER:?}, found {got:?}")));
    }
    recs.map(|(line, rec)| {
        if rec.len() != LAYOUT_HEADER.len() {
            return Err(parse_error(source_name, line, format!("expected 5 fields, found {}", rec.len())));
        }
        let int = |k: usize| -> Result<u64> {
            rec[k]
                .trim()
                .parse()
                .map_err(|_| parse_error(source_name, line, format!("`{}` is not a {}", &rec[k], LAYOUT_HEADER[k])))
        };
        Ok(LayoutCell {
            row: int(0)? as usize,
            col: int(1)? as usize,
            topic: rec[2].trim().to_string(),
            item_id: int(3)?,
            attraction: parse_f64(&rec[4], source_name, line)?,
        })
    })
    .collect()
}

pub fn write_layout_cells<W: Write>(out: W, cells: &[LayoutCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Invalid(format!("{kind:?}")),
    };
    w.write_record(LAYOUT_HEADER).map_err(io)?;
    for c in cells {
        w.write_record([
            c.row.to_string(),
            c.col.to_string(),
            c.topic.clone(),
            c.item_id.to_string(),
            c.attraction.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Assembles layout cells into a matrix. Every row from 0 to the largest
/// index must be present with columns `0..len` each exactly once.
pub fn cells_to_matrix(cells: &[LayoutCell]) -> Result<AttractionMatrix> {
    if cells.is_empty() {
        return Err(Error::Size("layout has no cells".into()));
    }
    let n_rows = cells.iter().map(|c| c.row).max().expect("nonempty") + 1;
    let mut rows: Vec<Vec<Option<(f64, ItemId)>>> = vec![Vec::new(); n_rows];
    for c in cells {
        let id = u32::try_from(c.item_id)
            .map_err(|_| Error::Validation(format!("item id {} does not fit in 32 bits", c.item_id)))?;
        let row = &mut rows[c.row];
        if row.len() <= c.col {
            row.resize(c.col + 1, None);
        }
        if row[c.col].replace((c.attraction, ItemId(id))).is_some() {
            return Err(Error::Validation(format!("cell ({}, {}) given twice", c.row, c.col)));
        }
    }
    let mut probs = Vec::with_capacity(n_rows);
    let mut ids = Vec::with_capacity(n_rows);
    for (i, row) in rows.into_iter().enumerate() {
        if row.is_empty() {
            return Err(Error::Validation(format!("layout row {i} is empty")));
        }
        let filled: Vec<(f64, ItemId)> = row
            .into_iter()
            .enumerate()
            .map(|(j, c)| c.ok_or_else(|| Error::Validation(format!("layout cell ({i}, {j}) is missing"))))
            .collect::<Result<_>>()?;
        let (p, id): (Vec<f64>, Vec<ItemId>) = filled.into_iter().unzip();
        probs.push(p);
        ids.push(id);
    }
    AttractionMatrix::with_ids(probs, ids)
}

/// Reads a layout in either format, telling them apart by the first line.
pub fn read_layout<R: Read>(mut input: R, source_name: &str) -> Result<AttractionMatrix> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if first.trim_start().starts_with("row") {
        cells_to_matrix(&read_layout_cells(text.as_bytes(), source_name)?)
    } else {
        AttractionMatrix::new(read_grid(text.as_bytes(), source_name)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_round_trip() {
        let rows = vec![vec![0.1, 0.25], vec![1.0 / 3.0]];
        let mut buf = Vec::new();
        write_grid(&mut buf, &rows).unwrap();
        assert_eq!(read_grid(buf.as_slice(), "grid").unwrap(), rows);
    }

    #[test]
    fn grid_errors() {
        let err = read_grid("0.1,0.2\n0.3,abc\n".as_bytes(), "g").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        assert!(read_grid("".as_bytes(), "g").is_err());
        assert!(read_grid("0.1,inf\n".as_bytes(), "g").is_err());
    }

    #[test]
    fn long_layout_round_trip() {
        let cells = vec![
            LayoutCell { row: 0, col: 0, topic: "Drama".into(), item_id: 10, attraction: 0.3 },
            LayoutCell { row: 0, col: 1, topic: "Drama".into(), item_id: 11, attraction: 0.2 },
            LayoutCell { row: 1, col: 0, topic: "Sci-Fi, Space".into(), item_id: 12, attraction: 0.1 },
        ];
        let mut buf = Vec::new();
        write_layout_cells(&mut buf, &cells).unwrap();
        assert_eq!(read_layout_cells(buf.as_slice(), "l").unwrap(), cells);
        let mat = read_layout(buf.as_slice(), "l").unwrap();
        assert_eq!(mat.row_lengths(), vec![2, 1]);
        assert_eq!(mat.item_ids()[1], vec![ItemId(12)]);
    }

    #[test]
    fn layout_in_either_format() {
        let grid = read_layout("0.5,0.5\n0.5,0.5\n".as_bytes(), "g").unwrap();
        assert_eq!(grid.row_lengths(), vec![2, 2]);
        let shuffled = "row,col,topic,item_id,attraction\n1,0,b,3,0.4\n0,1,a,2,0.2\n0,0,a,1,0.3\n";
        let mat = read_layout(shuffled.as_bytes(), "l").unwrap();
        assert_eq!(mat.rows()[0].probs(), &[0.3, 0.2]);
        assert_eq!(mat.rows()[1].probs(), &[0.4]);
    }

    #[test]
    fn malformed_layouts() {
        let gap = "row,col,topic,item_id,attraction\n0,0,a,1,0.3\n0,2,a,2,0.2\n";
        assert!(matches!(read_layout(gap.as_bytes(), "l"), Err(Error::Validation(_))));
        let dup = "row,col,topic,item_id,attraction\n0,0,a,1,0.3\n0,0,a,2,0.2\n";
        assert!(matches!(read_layout(dup.as_bytes(), "l"), Err(Error::Validation(_))));
        let missing_row = "row,col,topic,item_id,attraction\n1,0,a,1,0.3\n";
        assert!(read_layout(missing_row.as_bytes(), "l").is_err());
        let bad = "row,col,topic,item_id,attraction\n0,x,a,1,0.3\n";
        assert!(matches!(read_layout(bad.as_bytes(), "l"), Err(Error::Parse { line: 2, .. })));
        assert!(read_layout("0.5,1.5\n".as_bytes(), "g").is_err());
        let wrong_header = "r,c,topic,item_id,attraction\n";
        assert!(read_layout_cells(wrong_header.as_bytes(), "l").is_err());
    }
}
