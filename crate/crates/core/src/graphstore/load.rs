use super::{GraphError, RawEdge, RawEdgeList, Result, SignedGraph};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    /// Commas, tabs or runs of spaces.
    #[default]
    Auto,
    Comma,
    Tab,
    Space,
}

impl Delimiter {
    fn split(self, line: &str) -> Vec<&str> {
        match self {
            Delimiter::Auto => line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect(),
            Delimiter::Comma => line.split(',').map(str::trim).collect(),
            Delimiter::Tab => line.split('\t').map(str::trim).collect(),
            Delimiter::Space => line.split(' ').filter(|s| !s.is_empty()).collect(),
        }
    }

    fn separator(self) -> &'static str {
        match self {
            Delimiter::Auto | Delimiter::Comma => ",",
            Delimiter::Tab => "\t",
            Delimiter::Space => " ",
        }
    }
}

impl FromStr for Delimiter {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Delimiter::Auto),
            "comma" | "," => Ok(Delimiter::Comma),
            "tab" | "\\t" | "\t" => Ok(Delimiter::Tab),
            "space" | " " => Ok(Delimiter::Space),
            other => Err(format!("unknown delimiter {other:?} (auto, comma, tab, space)")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeListFormat {
    pub delimiter: Delimiter,
    pub skip_header: bool,
}

/// Parses `source, target, weight[, ...]` records. Lines starting with `%`
/// or `#` and blank lines are skipped; extra trailing columns are ignored.
pub fn parse_edge_list(text: &str, format: EdgeListFormat) -> Result<RawEdgeList> {
    let mut records = Vec::new();
    let mut header_pending = format.skip_header;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') || trimmed.starts_with('#') {
            continue;
        }
        if header_pending {
            header_pending = false;
            continue;
        }
        let fields = format.delimiter.split(trimmed);
        if fields.len() < 3 {
            return Err(GraphError::Malformed {
                line: lineno,
                msg: format!("expected source, target, weight; got {} field(s)", fields.len()),
            });
        }
        let id = |s: &str| {
            s.parse::<i64>().map_err(|_| GraphError::Malformed {
                line: lineno,
                msg: format!("bad node id {s:?}"),
            })
        };
        let weight: f64 = fields[2].parse().map_err(|_| GraphError::Malformed {
            line: lineno,
            msg: format!("bad weight {:?}", fields[2]),
        })?;
        if !weight.is_finite() {
            return Err(GraphError::Malformed {
                line: lineno,
                msg: format!("non-finite weight {:?}", fields[2]),
            });
        }
        records.push(RawEdge {
            source: id(fields[0])?,
            target: id(fields[1])?,
            weight,
        });
    }
    Ok(RawEdgeList { records })
}

pub fn load_edge_list(path: &Path, format: EdgeListFormat) -> Result<RawEdgeList> {
    let text = std::fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_edge_list(&text, format)
}

pub fn write_raw_edge_list(path: &Path, raw: &RawEdgeList, delimiter: Delimiter) -> Result<()> {
    let io = |source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let sep = delimiter.separator();
    for r in &raw.records {
        writeln!(w, "{}{sep}{}{sep}{}", r.source, r.target, r.weight).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes the preprocessed graph with original node ids and ±1 weights.
pub fn write_edge_list(path: &Path, g: &SignedGraph, delimiter: Delimiter) -> Result<()> {
    write_raw_edge_list(path, &super::encode(g), delimiter)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_simple_records() {
        let r = parse_edge_list("0,1,4\n1,2,-2", EdgeListFormat::default()).unwrap();
        assert_eq!(
            r.records,
            vec![
                RawEdge {
                    source: 0,
                    target: 1,
                    weight: 4.0
                },
                RawEdge {
                    source: 1,
                    target: 2,
                    weight: -2.0
                }
            ]
        );
    }

    #[test]
    fn empty_and_comment_only() {
        assert!(parse_edge_list("", EdgeListFormat::default()).unwrap().records.is_empty());
        let r = parse_edge_list("% konect header\n# note\n\n3 4 1 99\n", EdgeListFormat::default()).unwrap();
        assert_eq!(r.records.len(), 1);
    }

    #[test]
    fn header_and_tabs() {
        let fmt = EdgeListFormat {
            delimiter: Delimiter::Tab,
            skip_header: true,
        };
        let r = parse_edge_list("src\tdst\tw\n5\t6\t-1\n", fmt).unwrap();
        assert_eq!(r.records[0].source, 5);
        assert_eq!(r.records[0].weight, -1.0);
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = parse_edge_list("0,1,1\n0,x,1\n", EdgeListFormat::default()).unwrap_err();
        assert!(matches!(err, GraphError::Malformed { line: 2, .. }), "{err}");
        let err = parse_edge_list("0,1,1\n\n2,3\n", EdgeListFormat::default()).unwrap_err();
        assert!(matches!(err, GraphError::Malformed { line: 3, .. }), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_edge_list(Path::new("/nonexistent/edges.csv"), EdgeListFormat::default()).unwrap_err();
        assert!(matches!(err, GraphError::Io { .. }));
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let raw = parse_edge_list("10,2,3\n2,7,-1\n", EdgeListFormat::default()).unwrap();
        write_raw_edge_list(&path, &raw, Delimiter::Comma).unwrap();
        assert_eq!(load_edge_list(&path, EdgeListFormat::default()).unwrap(), raw);
    }
}
