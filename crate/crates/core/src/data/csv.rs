//! CSV dataset files.
//!
//! Header `f0,f1,...,f{d-1},label[,gt]`, UTF-8, LF line endings. Feature cells
//! are decimal floats written in shortest round-trip form. `label` is a
//! signed integer: the class for source rows, `-1` for unlabelled target
//! rows. The optional `gt` column carries evaluation-only target truth.

use std::fmt::Write as _;
use std::path::Path;

use super::{GroundTruth, LabeledSet, TargetSet};
use crate::numkit::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Loaded {
    Source(LabeledSet),
    Target(TargetSet, Option<GroundTruth>),
}

fn header(dim: usize, with_gt: bool) -> String {
    let mut h: Vec<String> = (0..dim).map(|i| format!("f{i}")).collect();
    h.push("label".into());
    if with_gt {
        h.push("gt".into());
    }
    h.join(",")
}

fn push_row(out: &mut String, row: &[f64]) {
    for v in row {
        write!(out, "{v:?},").unwrap();
    }
}

pub fn write_source_csv(path: &Path, set: &LabeledSet) -> Result<()> {
    let mut out = header(set.dim(), false);
    out.push('\n');
    for (row, label) in set.features().iter_rows().zip(set.labels()) {
        push_row(&mut out, row);
        writeln!(out, "{label}").unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_target_csv(path: &Path, set: &TargetSet, truth: Option<&GroundTruth>) -> Result<()> {
    if let Some(gt) = truth {
        if gt.len() != set.len() {
            return Err(Error::shape("write_target_csv", set.len(), gt.len()));
        }
    }
    let mut out = header(set.dim(), truth.is_some());
    out.push('\n');
    for (i, row) in set.features().iter_rows().enumerate() {
        push_row(&mut out, row);
        out.push_str("-1");
        if let Some(gt) = truth {
            write!(out, ",{}", gt.labels()[i]).unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a dataset file. Errors carry the 1-based line number.
pub fn load_csv(path: &Path, schema: Schema) -> Result<Loaded> {
    let text = std::fs::read_to_string(path)?;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as u64,
        msg,
    };
    let last_line = text.split('\n').count();
    let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));

    let (_, head) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let cols: Vec<&str> = head.split(',').collect();
    let label_at = cols
        .iter()
        .position(|&c| c == "label")
        .ok_or_else(|| err(1, "missing `label` column".into()))?;
    let dim = label_at;
    let with_gt = match &cols[label_at + 1..] {
        [] => false,
        ["gt"] => true,
        rest => return Err(err(1, format!("unexpected columns after `label`: {rest:?}"))),
    };
    for (i, &c) in cols[..dim].iter().enumerate() {
        if c != format!("f{i}") {
            return Err(err(1, format!("column {} must be `f{i}`, found `{c}`", i + 1)));
        }
    }
    if dim == 0 {
        return Err(err(1, "no feature columns".into()));
    }
    if with_gt && schema == Schema::Source {
        return Err(err(1, "`gt` column is only valid in target files".into()));
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut gts = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() && lineno == last_line {
            break;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols.len() {
            return Err(err(
                lineno,
                format!("expected {} cells, found {}", cols.len(), cells.len()),
            ));
        }
        for (j, cell) in cells[..dim].iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| err(lineno, format!("f{j}: `{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("f{j}: non-finite value")));
            }
            data.push(v);
        }
        let label: i64 = cells[dim]
            .parse()
            .map_err(|_| err(lineno, format!("label: `{}` is not an integer", cells[dim])))?;
        match schema {
            Schema::Source if label < 0 => {
                return Err(err(lineno, format!("source label must be >= 0, found {label}")))
            }
            Schema::Target if label != -1 => {
                return Err(err(lineno, format!("target rows must have label -1, found {label}")))
            }
            _ => labels.push(label),
        }
        if with_gt {
            let g: usize = cells[dim + 1]
                .parse()
                .map_err(|_| err(lineno, format!("gt: `{}` is not a class index", cells[dim + 1])))?;
            gts.push(g);
        }
    }
    let n = labels.len();
    let features = Matrix::new(n, dim, data)?;
    match schema {
        Schema::Source => {
            let labels: Vec<usize> = labels.into_iter().map(|l| l as usize).collect();
            let k = labels.iter().max().map_or(0, |m| m + 1);
            Ok(Loaded::Source(LabeledSet::new(features, labels, k)?))
        }
        Schema::Target => {
            let set = TargetSet::new(features)?;
            Ok(Loaded::Target(set, with_gt.then(|| GroundTruth::new(gts))))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, ShiftSpec};
    use crate::numkit::Rng;

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let (s, t, gt) = generate(&ShiftSpec::default(), &mut Rng::new(4)).unwrap();
        let sp = dir.path().join("source.csv");
        let tp = dir.path().join("target.csv");
        write_source_csv(&sp, &s).unwrap();
        write_target_csv(&tp, &t, Some(&gt)).unwrap();
        assert_eq!(load_csv(&sp, Schema::Source).unwrap(), Loaded::Source(s));
        assert_eq!(load_csv(&tp, Schema::Target).unwrap(), Loaded::Target(t.clone(), Some(gt)));

        write_target_csv(&tp, &t, None).unwrap();
        assert_eq!(load_csv(&tp, Schema::Target).unwrap(), Loaded::Target(t, None));
    }

    #[test]
    fn extreme_values_survive() {
        let dir = tempfile::tempdir().unwrap();
        let x = Matrix::from_rows(&[[1e-300, -0.1], [1.0 / 3.0, 12345678.901234567]]).unwrap();
        let s = LabeledSet::new(x, vec![0, 1], 2).unwrap();
        let p = dir.path().join("s.csv");
        write_source_csv(&p, &s).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("f0,f1,label\n"));
        assert!(!text.contains('\r'));
        assert_eq!(load_csv(&p, Schema::Source).unwrap(), Loaded::Source(s));
    }

    fn write(dir: &Path, body: &str) -> std::path::PathBuf {
        let p = dir.join("x.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    fn line_of(r: Result<Loaded>) -> u64 {
        match r {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("f0,f1,label\n");
        for i in 0..10 {
            body.push_str(&format!("{i}.5,1,{}\n", i % 2));
        }
        body.push_str("1.0,abc,0\n");
        let p = write(dir.path(), &body);
        assert_eq!(line_of(load_csv(&p, Schema::Source)), 12);
    }

    #[test]
    fn schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        assert_eq!(line_of(load_csv(&write(d, "f0,f1,label\n1,2,0\n1,0\n"), Schema::Source)), 3);
        assert_eq!(line_of(load_csv(&write(d, "f0,g1,label\n1,2,0\n"), Schema::Source)), 1);
        assert_eq!(line_of(load_csv(&write(d, "f0,label,extra\n1,0,0\n"), Schema::Source)), 1);
        assert_eq!(line_of(load_csv(&write(d, "f0,label\n1,3\n"), Schema::Target)), 2);
        assert_eq!(line_of(load_csv(&write(d, "f0,label,gt\n1,0,0\n"), Schema::Source)), 1);
        assert_eq!(line_of(load_csv(&write(d, "f0,label\n1,-1\n"), Schema::Source)), 2);
        assert_eq!(line_of(load_csv(&write(d, "f0,label\nNaN,0\n"), Schema::Source)), 2);
        assert_eq!(line_of(load_csv(&write(d, "f0,label\n1,0\n\n2,0\n"), Schema::Source)), 3);
        assert!(load_csv(&d.join("missing.csv"), Schema::Source).is_err());
    }
}
