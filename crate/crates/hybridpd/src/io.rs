//! CSV files for grid functions, boundary traces, tables and sparse
//! matrices; JSON for reports.
//!
//! Field and boundary files start with one comment line describing the
//! grid, e.g. `# grid shape=32,32 spacing=0.03125,0.03125 origin=0.0,0.0`.
//! Numbers are written in the shortest form that parses back to the same
//! `f64`, so reading a written file reproduces it bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use hybridpd_core::sparse::CsrMatrix;
use hybridpd_core::{BoundaryData, Face, Grid, ScalarField, TraceKind};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

const AXES: [&str; 3] = ["x", "y", "z"];

pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn join(vals: impl Iterator<Item = String>) -> String {
    vals.collect::<Vec<_>>().join(",")
}

fn grid_header(g: &Grid) -> String {
    format!(
        "shape={} spacing={} origin={}",
        join(g.shape().iter().map(|n| n.to_string())),
        join(g.spacing().iter().map(|&h| fmt_f64(h))),
        join(g.origin().iter().map(|&o| fmt_f64(o)))
    )
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| CliError::parse(format!("bad {what} entry '{x}'"))))
        .collect()
}

/// Parses `key=value` pairs after the leading word of a header line.
fn parse_header(line: &str, word: &str) -> CliResult<Vec<(String, String)>> {
    let rest = line
        .strip_prefix('#')
        .map(str::trim_start)
        .and_then(|l| l.strip_prefix(word))
        .ok_or_else(|| CliError::parse(format!("first line must start with '# {word}'")))?;
    rest.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| CliError::parse(format!("malformed header entry '{kv}'")))
        })
        .collect()
}

fn header_grid(pairs: &[(String, String)]) -> CliResult<Grid> {
    let get = |k: &str| {
        pairs
            .iter()
            .find(|(a, _)| a == k)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| CliError::parse(format!("header lacks '{k}'")))
    };
    let shape: Vec<usize> = parse_list(get("shape")?, "shape")?;
    let spacing: Vec<f64> = parse_list(get("spacing")?, "spacing")?;
    let origin: Vec<f64> = parse_list(get("origin")?, "origin")?;
    Ok(Grid::with_origin(&shape, &spacing, &origin)?)
}

fn split_header(text: &str) -> CliResult<(&str, &str)> {
    text.split_once('\n')
        .map(|(h, b)| (h.trim_end_matches('\r'), b))
        .ok_or_else(|| CliError::parse("file has no header line"))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::from(e).at(path))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::from(e).at(path))
}

pub fn field_to_string(f: &ScalarField) -> String {
    let g = f.grid();
    let dim = g.dim();
    let mut out = format!("# grid {}\nindex,{},value\n", grid_header(g), AXES[..dim].join(","));
    for (i, &v) in f.values().iter().enumerate() {
        let p = g.coords(i);
        out.push_str(&format!("{i},{},{}\n", join(p[..dim].iter().map(|&c| fmt_f64(c))), fmt_f64(v)));
    }
    out
}

pub fn field_from_str(text: &str) -> CliResult<ScalarField> {
    let (head, body) = split_header(text)?;
    let g = header_grid(&parse_header(head, "grid")?)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let mut values = Vec::with_capacity(g.len());
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != g.dim() + 2 {
            return Err(CliError::parse(format!("row {k} has {} columns, expected {}", rec.len(), g.dim() + 2)));
        }
        let idx: usize = rec[0].parse().map_err(|_| CliError::parse(format!("row {k}: bad index")))?;
        if idx != k {
            return Err(CliError::parse(format!("row {k} carries index {idx}; rows must be in node order")));
        }
        let v: f64 = rec[g.dim() + 1]
            .parse()
            .map_err(|_| CliError::parse(format!("row {k}: bad value '{}'", &rec[g.dim() + 1])))?;
        values.push(v);
    }
    if values.len() != g.len() {
        return Err(CliError::parse(format!("{} rows for a grid of {} nodes", values.len(), g.len())));
    }
    Ok(ScalarField::new(g, values)?)
}

pub fn write_field(path: &Path, f: &ScalarField) -> CliResult<()> {
    write_bytes(path, field_to_string(f).as_bytes())
}

pub fn read_field(path: &Path) -> CliResult<ScalarField> {
    field_from_str(&read_text(path)?).map_err(|e| e.at(path))
}

fn kind_name(k: TraceKind) -> &'static str {
    match k {
        TraceKind::Dirichlet => "dirichlet",
        TraceKind::Neumann => "neumann",
    }
}

pub fn boundary_to_string(b: &BoundaryData) -> String {
    let g = b.grid();
    let dim = g.dim();
    let mut out = format!(
        "# boundary kind={} {}\nface,position,node,{},value\n",
        kind_name(b.kind()),
        grid_header(g),
        AXES[..dim].join(",")
    );
    for face in g.faces() {
        for (k, (&n, &v)) in g.face_nodes(face).iter().zip(b.face(face)).enumerate() {
            let p = g.coords(n);
            out.push_str(&format!(
                "{},{k},{n},{},{}\n",
                face.name(),
                join(p[..dim].iter().map(|&c| fmt_f64(c))),
                fmt_f64(v)
            ));
        }
    }
    out
}

pub fn boundary_from_str(text: &str) -> CliResult<BoundaryData> {
    let (head, body) = split_header(text)?;
    let pairs = parse_header(head, "boundary")?;
    let kind = match pairs.iter().find(|(k, _)| k == "kind").map(|(_, v)| v.as_str()) {
        Some("dirichlet") => TraceKind::Dirichlet,
        Some("neumann") => TraceKind::Neumann,
        other => return Err(CliError::parse(format!("header kind {other:?} is not dirichlet or neumann"))),
    };
    let g = header_grid(&pairs)?;
    let names: Vec<&str> = g.faces().map(Face::name).collect();
    let mut faces: Vec<Vec<f64>> = vec![Vec::new(); g.face_count()];
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != g.dim() + 4 {
            return Err(CliError::parse(format!("row {row} has {} columns, expected {}", rec.len(), g.dim() + 4)));
        }
        let id = names
            .iter()
            .position(|n| *n == &rec[0])
            .ok_or_else(|| CliError::parse(format!("row {row}: unknown face '{}'", &rec[0])))?;
        let pos: usize = rec[1].parse().map_err(|_| CliError::parse(format!("row {row}: bad position")))?;
        if pos != faces[id].len() {
            return Err(CliError::parse(format!("row {row}: face positions must be consecutive")));
        }
        let v: f64 = rec[g.dim() + 3]
            .parse()
            .map_err(|_| CliError::parse(format!("row {row}: bad value '{}'", &rec[g.dim() + 3])))?;
        faces[id].push(v);
    }
    Ok(BoundaryData::new(g, kind, faces)?)
}

pub fn write_boundary(path: &Path, b: &BoundaryData) -> CliResult<()> {
    write_bytes(path, boundary_to_string(b).as_bytes())
}

pub fn read_boundary(path: &Path) -> CliResult<BoundaryData> {
    boundary_from_str(&read_text(path)?).map_err(|e| e.at(path))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(v: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> CliResult<()> {
    write_bytes(path, to_json_string(v)?.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::from(e).at(path))
}

/// A CSV table from serializable rows.
pub fn write_table<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::precondition(e.to_string()))?;
    write_bytes(path, &bytes)
}

/// `row,col,value` triplets, zero-based, after a `# matrix rows=… cols=… nnz=…` line.
pub fn write_triplets(path: &Path, m: &CsrMatrix) -> CliResult<()> {
    let mut out = Vec::new();
    writeln!(out, "# matrix rows={} cols={} nnz={}", m.nrows(), m.ncols(), m.nnz())?;
    writeln!(out, "row,col,value")?;
    for (r, c, v) in m.triplets() {
        writeln!(out, "{r},{c},{}", fmt_f64(v))?;
    }
    write_bytes(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_round_trip_is_bit_identical() {
        let g = Grid::with_origin(&[7, 6], &[0.1, 1.0 / 3.0], &[-0.25, 1e-300]).unwrap();
        let f = ScalarField::from_fn(g, |p| (p[0] * 1e7).sin() / 3.0 + p[1].exp() * 1e-200).unwrap();
        let text = field_to_string(&f);
        let back = field_from_str(&text).unwrap();
        assert_eq!(back.grid(), f.grid());
        assert!(back.values().iter().zip(f.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(field_to_string(&back), text);
    }

    #[test]
    fn boundary_round_trip_in_3d() {
        let g = Grid::unit_cube(5).unwrap();
        let b = BoundaryData::from_fn(g, TraceKind::Neumann, |p, nu| p[0] * nu[0] - p[2] * nu[2] + 0.1).unwrap();
        let back = boundary_from_str(&boundary_to_string(&b)).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn malformed_files_are_parse_errors() {
        let g = Grid::unit_square(5).unwrap();
        let good = field_to_string(&ScalarField::constant(g, 1.0));
        for bad in [
            good.replacen("# grid", "# gird", 1),
            good.replacen("\n3,", "\n4,", 1),
            good.replacen(",1.0\n", ",abc\n", 1),
            good.lines().take(10).collect::<Vec<_>>().join("\n"),
        ] {
            assert_eq!(field_from_str(&bad).unwrap_err().exit_code(), 2, "{bad}");
        }
    }
}
