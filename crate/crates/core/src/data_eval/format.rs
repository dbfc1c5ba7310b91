//! Text format, one or more pairs per file:
//!
//! ```text
//! corrpairs v1 n=<N> gt=<0|1>
//! <3 rows of R and 1 row of t, when gt=1>
//! x y u v [label]      (N rows)
//! ```

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::{DataError, GroundTruth, ScenePair};
use crate::geometry::{Correspondence, RelativePose};

pub const PAIR_FILE_EXTENSION: &str = "corrpairs";

const MAGIC: &str = "corrpairs";
const VERSION: &str = "v1";

fn push_row(out: &mut String, vals: &[f64]) {
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        // 17 significant digits: exact f64 round trip
        write!(out, "{v:.16e}").expect("writing to a String");
    }
}

pub fn write_pairs<W: Write>(mut w: W, pairs: &[ScenePair]) -> Result<(), DataError> {
    let mut out = String::new();
    for pair in pairs {
        if let Some(l) = &pair.labels {
            if l.len() != pair.len() {
                return Err(DataError::Invalid(format!(
                    "{} labels for {} correspondences",
                    l.len(),
                    pair.len()
                )));
            }
        }
        out.clear();
        writeln!(
            out,
            "{MAGIC} {VERSION} n={} gt={}",
            pair.len(),
            u8::from(pair.ground_truth.is_some())
        )
        .expect("writing to a String");
        if let Some(gt) = &pair.ground_truth {
            let r = gt.pose.rotation_matrix();
            for i in 0..3 {
                push_row(&mut out, &[r[(i, 0)], r[(i, 1)], r[(i, 2)]]);
                out.push('\n');
            }
            push_row(&mut out, gt.pose.translation.as_slice());
            out.push('\n');
        }
        for (i, c) in pair.correspondences.iter().enumerate() {
            push_row(&mut out, &c.as_array());
            if let Some(l) = &pair.labels {
                out.push_str(if l[i] { " 1" } else { " 0" });
            }
            out.push('\n');
        }
        w.write_all(out.as_bytes())?;
    }
    Ok(())
}

struct Lines<'a, R> {
    inner: std::io::Lines<R>,
    path: &'a str,
    line: usize,
}

impl<R: BufRead> Lines<'_, R> {
    fn err(&self, msg: impl Into<String>) -> DataError {
        DataError::Parse {
            path: self.path.to_string(),
            line: self.line,
            msg: msg.into(),
        }
    }

    /// Next non-blank line, or `None` at end of input.
    fn next_line(&mut self) -> Result<Option<String>, DataError> {
        for l in self.inner.by_ref() {
            self.line += 1;
            let l = l?;
            if !l.trim().is_empty() {
                return Ok(Some(l));
            }
        }
        Ok(None)
    }

    fn require(&mut self, what: &str) -> Result<String, DataError> {
        self.next_line()?
            .ok_or_else(|| self.err(format!("unexpected end of input, expected {what}")))
    }

    fn floats(&self, line: &str) -> Result<Vec<f64>, DataError> {
        line.split_whitespace()
            .map(|t| {
                let v: f64 = t
                    .parse()
                    .map_err(|_| self.err(format!("bad number {t:?}")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(self.err(format!("non-finite value {t:?}")))
                }
            })
            .collect()
    }
}

fn parse_header<R: BufRead>(
    lines: &Lines<'_, R>,
    header: &str,
) -> Result<(usize, bool), DataError> {
    let tok: Vec<&str> = header.split_whitespace().collect();
    if tok.len() != 4 || tok[0] != MAGIC || tok[1] != VERSION {
        return Err(lines.err(format!("bad header {header:?}")));
    }
    let n = tok[2]
        .strip_prefix("n=")
        .and_then(|v| v.parse::<usize>().ok())
        .ok_or_else(|| lines.err(format!("bad count field {:?}", tok[2])))?;
    let gt = match tok[3] {
        "gt=0" => false,
        "gt=1" => true,
        other => return Err(lines.err(format!("bad gt field {other:?}"))),
    };
    Ok((n, gt))
}

/// Parses every pair in a stream. `path` is only used in error messages.
pub fn read_pairs<R: std::io::Read>(r: R, path: &str) -> Result<Vec<ScenePair>, DataError> {
    let mut lines = Lines {
        inner: BufReader::new(r).lines(),
        path,
        line: 0,
    };
    let mut pairs = Vec::new();
    while let Some(header) = lines.next_line()? {
        let (n, has_gt) = parse_header(&lines, &header)?;
        let ground_truth = if has_gt {
            let mut rows = Vec::with_capacity(9);
            for _ in 0..3 {
                let l = lines.require("rotation row")?;
                let v = lines.floats(&l)?;
                if v.len() != 3 {
                    return Err(lines.err("rotation row needs 3 values"));
                }
                rows.extend(v);
            }
            let l = lines.require("translation row")?;
            let t = lines.floats(&l)?;
            if t.len() != 3 {
                return Err(lines.err("translation row needs 3 values"));
            }
            let pose = RelativePose::new(
                Matrix3::from_row_slice(&rows),
                Vector3::from_column_slice(&t),
            )
            .map_err(|e| lines.err(e.to_string()))?;
            Some(GroundTruth::new(pose))
        } else {
            None
        };
        let mut correspondences = Vec::with_capacity(n);
        let mut labels: Vec<bool> = Vec::new();
        let mut columns = None;
        for _ in 0..n {
            let l = lines.require("correspondence row")?;
            let tok: Vec<&str> = l.split_whitespace().collect();
            if tok.len() != 4 && tok.len() != 5 {
                return Err(lines.err(format!("expected 4 or 5 columns, got {}", tok.len())));
            }
            if *columns.get_or_insert(tok.len()) != tok.len() {
                return Err(lines.err("inconsistent column count"));
            }
            let v = lines.floats(&tok[..4].join(" "))?;
            correspondences.push(Correspondence::new(v[0], v[1], v[2], v[3]));
            if tok.len() == 5 {
                labels.push(match tok[4] {
                    "1" => true,
                    "0" => false,
                    other => return Err(lines.err(format!("bad label {other:?}"))),
                });
            }
        }
        pairs.push(ScenePair {
            correspondences,
            labels: (columns == Some(5)).then_some(labels),
            ground_truth,
            params: None,
        });
    }
    Ok(pairs)
}

/// Reads one file, or every `*.corrpairs` file of a directory in name order.
pub fn load_pairs(path: &Path) -> Result<Vec<ScenePair>, DataError> {
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e == PAIR_FILE_EXTENSION));
        files.sort();
        let mut out = Vec::new();
        for f in files {
            out.extend(read_pairs(
                std::fs::File::open(&f)?,
                &f.display().to_string(),
            )?);
        }
        Ok(out)
    } else {
        read_pairs(std::fs::File::open(path)?, &path.display().to_string())
    }
}
