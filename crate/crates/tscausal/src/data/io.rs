//! CSV ingestion and emission for series and ground-truth graphs.
//!
//! Series files are rectangular numeric tables: columns are series, rows
//! are ascending time slots, with an optional header row of labels
//! (detected by any non-numeric field in the first row). Truth files are
//! `source,target,delay` rows with 1-based indices and an optional delay.
//! All floats are written in shortest round-trip form, so write → load
//! reproduces values bit-exactly and identical inputs produce identical
//! bytes.

use std::path::Path;

use csv::ReaderBuilder;

use crate::error::{Error, Result};
use crate::graph::{CausalGraph, Edge};
use crate::tensor::Tensor;

use super::DatasetBundle;

fn parse_err(path: &Path, detail: String) -> Error {
    Error::ParseError {
        path: path.display().to_string(),
        detail,
    }
}

/// Write a `[N, L]` series as CSV: one header row of labels, then one
/// row per time slot with one column per series.
pub fn write_series_csv(path: &Path, series: &Tensor, labels: &[String]) -> Result<()> {
    if series.shape().len() != 2 {
        return Err(Error::shape(format!(
            "series must be [N, L], got {:?}",
            series.shape()
        )));
    }
    let (n, len) = (series.shape()[0], series.shape()[1]);
    if labels.len() != n {
        return Err(Error::arg(format!(
            "{} labels for {n} series",
            labels.len()
        )));
    }
    let mut text = String::new();
    text.push_str(&labels.join(","));
    text.push('\n');
    for t0 in 0..len {
        for i in 0..n {
            if i > 0 {
                text.push(',');
            }
            text.push_str(&format!("{}", series.get2(i, t0)));
        }
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Load a rectangular numeric CSV into a bundle (no truth, no
/// provenance). Columns become series, rows ascending time slots; a
/// non-numeric first row is taken as the label header.
pub fn load_csv(path: &Path) -> Result<DatasetBundle> {
    let mut reader = ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, e.to_string()))?;

    let mut labels: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = 0usize;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, e.to_string()))?;
        let line = idx + 1;
        if record.iter().all(|f| f.is_empty()) {
            continue; // ignore blank lines
        }
        if idx == 0 {
            width = record.len();
            let numeric = record.iter().all(|f| f.parse::<f64>().is_ok());
            if !numeric {
                labels = Some(record.iter().map(str::to_string).collect());
                continue;
            }
        }
        if record.len() != width {
            return Err(parse_err(
                path,
                format!(
                    "row {line} has {} columns, expected {width}",
                    record.len()
                ),
            ));
        }
        let mut row = Vec::with_capacity(width);
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| {
                parse_err(
                    path,
                    format!("row {line}, column {}: `{field}` is not a number", col + 1),
                )
            })?;
            if !value.is_finite() {
                return Err(parse_err(
                    path,
                    format!(
                        "row {line}, column {}: non-finite value `{field}`",
                        col + 1
                    ),
                ));
            }
            row.push(value);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, "no data rows".to_string()));
    }
    let (n, len) = (width, rows.len());
    let mut series = Tensor::zeros(&[n, len]);
    for (t0, row) in rows.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            series.set2(i, t0, v);
        }
    }
    Ok(DatasetBundle {
        series,
        labels: labels.unwrap_or_else(|| DatasetBundle::default_labels(n)),
        truth: None,
        provenance: None,
    })
}

/// Write a graph as a truth CSV: header `source,target,delay`, one row
/// per edge with 1-based indices, delay column empty when unknown.
pub fn write_truth_csv(path: &Path, graph: &CausalGraph) -> Result<()> {
    let mut text = String::from("source,target,delay\n");
    for e in graph.edges() {
        let delay = e.delay.map(|d| d.to_string()).unwrap_or_default();
        text.push_str(&format!("{},{},{delay}\n", e.source + 1, e.target + 1));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Load a truth CSV: rows `source,target[,delay]` with 1-based indices.
///
/// `n_series` fixes the vertex count (and makes out-of-range edges an
/// error); without it the count is inferred as the largest index
/// mentioned. Absent or empty delays stay unknown. Duplicate ordered
/// pairs are rejected.
pub fn load_ground_truth(path: &Path, n_series: Option<usize>) -> Result<CausalGraph> {
    let mut reader = ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, e.to_string()))?;

    struct Row {
        source: usize,
        target: usize,
        delay: Option<u32>,
        line: usize,
    }
    let mut edges: Vec<Row> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, e.to_string()))?;
        let line = idx + 1;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if idx == 0 && record.iter().take(2).any(|f| f.parse::<usize>().is_err()) {
            continue; // header row
        }
        if record.len() < 2 || record.len() > 3 {
            return Err(parse_err(
                path,
                format!("row {line}: expected source,target[,delay], got {} fields", record.len()),
            ));
        }
        let field = |i: usize| record.get(i).unwrap_or("");
        let parse_index = |name: &str, text: &str| -> Result<usize> {
            let v: usize = text.parse().map_err(|_| {
                parse_err(path, format!("row {line}: {name} `{text}` is not an index"))
            })?;
            if v == 0 {
                return Err(parse_err(
                    path,
                    format!("row {line}: {name} must be 1-based, got 0"),
                ));
            }
            Ok(v)
        };
        let source = parse_index("source", field(0))?;
        let target = parse_index("target", field(1))?;
        let delay = match field(2) {
            "" => None,
            text => Some(text.parse::<u32>().map_err(|_| {
                parse_err(path, format!("row {line}: delay `{text}` is not a non-negative integer"))
            })?),
        };
        edges.push(Row {
            source,
            target,
            delay,
            line,
        });
    }

    let inferred = edges
        .iter()
        .map(|r| r.source.max(r.target))
        .max()
        .unwrap_or(0);
    let n = n_series.unwrap_or(inferred);
    let mut graph = CausalGraph::new(n);
    for r in edges {
        graph
            .add_edge(Edge {
                source: r.source - 1,
                target: r.target - 1,
                delay: r.delay,
                score: None,
            })
            .map_err(|e| parse_err(path, format!("row {}: {e}", r.line)))?;
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_basic, GeneratorSpec, Structure};
    use tempfile::tempdir;

    #[test]
    fn series_roundtrip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let series = Tensor::from_vec(
            &[2, 3],
            vec![0.1 + 0.2, -3.5, 1e-300, f64::MIN_POSITIVE, 12345.6789, -0.0],
        )
        .unwrap();
        let labels = vec!["alpha".to_string(), "beta".to_string()];
        write_series_csv(&path, &series, &labels).unwrap();
        let bundle = load_csv(&path).unwrap();
        assert_eq!(bundle.labels, labels);
        assert_eq!(bundle.series.shape(), &[2, 3]);
        for (a, b) in bundle.series.data().iter().zip(series.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let dir = tempdir().unwrap();
        let spec = GeneratorSpec::Basic {
            structure: Structure::Fork,
            length: 50,
            noise: 1.0,
            seed: 4,
            edges: None,
        };
        let bundle = gen_basic(&spec).unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_series_csv(&a, &bundle.series, &bundle.labels).unwrap();
        write_series_csv(&b, &bundle.series, &bundle.labels).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn shape_contract_and_headerless_files() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("plain.csv");
        let mut text = String::new();
        for t in 0..50 {
            text.push_str(&format!("{},{},{}\n", t, t * 2, t * 3));
        }
        std::fs::write(&path, text).unwrap();
        let bundle = load_csv(&path).unwrap();
        assert_eq!(bundle.series.shape(), &[3, 50]);
        assert_eq!(
            bundle.labels,
            vec!["series_1", "series_2", "series_3"]
        );
        assert_eq!(bundle.series.get2(2, 49), 147.0);
    }

    #[test]
    fn header_names_are_preserved() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("named.csv");
        std::fs::write(&path, "a,b,c\n1,2,3\n4,5,6\n").unwrap();
        let bundle = load_csv(&path).unwrap();
        assert_eq!(bundle.labels, vec!["a", "b", "c"]);
        assert_eq!(bundle.series.shape(), &[3, 2]);
    }

    #[test]
    fn bad_cells_are_rejected_with_position() {
        let dir = tempdir().unwrap();

        let path = dir.path().join("nan.csv");
        std::fs::write(&path, "1,2\n3,nan\n").unwrap();
        let err = load_csv(&path).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("column 2"), "{err}");

        let path = dir.path().join("text.csv");
        std::fs::write(&path, "1,2\n3,4\nx,6\n").unwrap();
        let err = load_csv(&path).unwrap_err().to_string();
        assert!(err.contains("row 3") && err.contains("column 1"), "{err}");

        let path = dir.path().join("ragged.csv");
        std::fs::write(&path, "1,2,3\n4,5\n").unwrap();
        let err = load_csv(&path).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("2 columns"), "{err}");

        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "").unwrap();
        assert!(load_csv(&path).is_err());

        let path = dir.path().join("missing.csv");
        std::fs::write(&path, "1,2\n3,\n").unwrap();
        assert!(load_csv(&path).is_err());
    }

    #[test]
    fn truth_roundtrip_with_and_without_delays() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("truth.csv");
        let mut g = CausalGraph::new(3);
        g.add_edge(Edge {
            source: 0,
            target: 1,
            delay: Some(1),
            score: None,
        })
        .unwrap();
        g.add_edge(Edge {
            source: 0,
            target: 2,
            delay: None,
            score: None,
        })
        .unwrap();
        write_truth_csv(&path, &g).unwrap();
        let back = load_ground_truth(&path, Some(3)).unwrap();
        assert_eq!(back.edge_count(), 2);
        assert_eq!(back.delay(0, 1), Some(1));
        assert!(back.has_edge(0, 2));
        assert_eq!(back.delay(0, 2), None);
        assert_eq!(back.vertex_count(), 3);
    }

    #[test]
    fn fork_truth_from_plain_rows() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("fork.csv");
        std::fs::write(&path, "1,2,1\n1,3,2\n").unwrap();
        let g = load_ground_truth(&path, None).unwrap();
        assert_eq!(g.vertex_count(), 3);
        assert_eq!(g.delay(0, 1), Some(1));
        assert_eq!(g.delay(0, 2), Some(2));
    }

    #[test]
    fn truth_edge_cases() {
        let dir = tempdir().unwrap();

        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "source,target,delay\n").unwrap();
        let g = load_ground_truth(&path, None).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.vertex_count(), 0);

        let path = dir.path().join("dup.csv");
        std::fs::write(&path, "1,2,1\n1,2,2\n").unwrap();
        let err = load_ground_truth(&path, None).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");

        let path = dir.path().join("range.csv");
        std::fs::write(&path, "1,5,1\n").unwrap();
        assert!(load_ground_truth(&path, Some(3)).is_err());

        let path = dir.path().join("zero.csv");
        std::fs::write(&path, "0,1,1\n").unwrap();
        let err = load_ground_truth(&path, None).unwrap_err().to_string();
        assert!(err.contains("1-based"), "{err}");

        let path = dir.path().join("badelay.csv");
        std::fs::write(&path, "1,2,x\n").unwrap();
        assert!(load_ground_truth(&path, None).is_err());
    }
}
