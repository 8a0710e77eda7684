//! Sequence CSV files and on-disk datasets.
//!
//! Sequence files have the header `sample_id,t,node_0,…,node_{N−1}` with an
//! optional trailing `label` column, and one row per (sample, time step).
//! Rows of a sample are contiguous with `t = 0, 1, …`, and every sample has
//! the same length. A dataset directory holds:
//!
//! * `graph.txt`: edge list (see [`Graph::write_edge_list`]),
//! * `coordinates.csv`: `x,y` per node, when the graph has coordinates,
//! * `metadata.json`: generator, seed, noise and shift-operator kind,
//! * `{train,val,test}_inputs.csv` and, for regression,
//!   `{train,val,test}_targets.csv`.
//!
//! `sample_id` is the sample's global index, so a loaded dataset keeps its
//! sample order.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{DatasetMetadata, NoiseSpec, ProcessDataset, Sample, Split, Splits, Target};
use crate::error::{Error, Result};
use crate::graph::{build_gso, Graph, GsoKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One sequence read from a CSV file.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRecord<T> {
    pub sample_id: u64,
    /// `T × N × 1`.
    pub values: Tensor<T>,
    pub label: Option<usize>,
}

fn fmt_value(v: f64) -> String {
    format!("{v:?}")
}

/// Writes sequences (each `T × N × 1`) in the CSV schema above.
pub fn write_sequences_csv<T: Scalar, W: Write>(
    out: W,
    records: &[(u64, &Tensor<T>, Option<usize>)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let Some((_, first, label)) = records.first() else {
        return Ok(());
    };
    let n = first.shape()[1];
    let mut header = vec!["sample_id".to_string(), "t".to_string()];
    header.extend((0..n).map(|i| format!("node_{i}")));
    if label.is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for (id, seq, label) in records {
        let d = seq.shape();
        if d.len() != 3 || d[1] != n || d[2] != 1 {
            return Err(Error::shape("write_sequences_csv", format!("sequence {:?} is not T × {n} × 1", d)));
        }
        for t in 0..d[0] {
            let mut row = vec![id.to_string(), t.to_string()];
            row.extend((0..n).map(|i| fmt_value(seq.at3(t, i, 0).to_f64_lossy())));
            if let Some(l) = label {
                row.push(l.to_string());
            }
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            msg: format!("{other:?}"),
        },
    }
}

/// Parses sequence rows for an `n_nodes` graph.
pub fn read_sequences_csv<T: Scalar, R: Read>(input: R, n_nodes: usize) -> Result<Vec<SequenceRecord<T>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows = reader.records();
    let Some(header) = rows.next() else {
        return Ok(Vec::new());
    };
    let header = header.map_err(csv_err)?;
    let fields: Vec<&str> = header.iter().collect();
    let has_label = fields.last() == Some(&"label");
    let n_found = fields.len().saturating_sub(2 + usize::from(has_label));
    let expected: Vec<String> = (0..n_found).map(|i| format!("node_{i}")).collect();
    if fields.len() < 3 || fields[0] != "sample_id" || fields[1] != "t" || fields[2..2 + n_found] != expected[..] {
        return Err(Error::Parse {
            line: 1,
            msg: "header must be `sample_id,t,node_0,…[,label]`".into(),
        });
    }
    if n_found != n_nodes {
        return Err(Error::Parse {
            line: 1,
            msg: format!("file has {n_found} node columns, graph has {n_nodes} nodes"),
        });
    }
    let width = fields.len();

    struct Pending<T> {
        id: u64,
        first_line: usize,
        values: Vec<T>,
        steps: usize,
        label: Option<usize>,
    }
    let mut out: Vec<SequenceRecord<T>> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut current: Option<Pending<T>> = None;
    let mut seq_len: Option<usize> = None;

    let finish = |p: Pending<T>, seq_len: &mut Option<usize>, out: &mut Vec<SequenceRecord<T>>| -> Result<()> {
        match *seq_len {
            Some(len) if len != p.steps => {
                return Err(Error::Parse {
                    line: p.first_line,
                    msg: format!("sample {} has {} steps, earlier samples have {len}", p.id, p.steps),
                })
            }
            None => *seq_len = Some(p.steps),
            _ => {}
        }
        out.push(SequenceRecord {
            sample_id: p.id,
            values: Tensor::from_vec(&[p.steps, n_nodes, 1], p.values)?,
            label: p.label,
        });
        Ok(())
    };

    for row in rows {
        let row = row.map_err(csv_err)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let perr = |msg: String| Error::Parse { line, msg };
        if row.len() != width {
            return Err(perr(format!("expected {width} cells, found {}", row.len())));
        }
        let id: u64 = row[0].parse().map_err(|_| perr(format!("bad sample_id `{}`", &row[0])))?;
        let t: usize = row[1].parse().map_err(|_| perr(format!("bad time index `{}`", &row[1])))?;
        let label = if has_label {
            Some(row[width - 1].parse::<usize>().map_err(|_| perr(format!("bad label `{}`", &row[width - 1])))?)
        } else {
            None
        };
        let mut values = Vec::with_capacity(n_nodes);
        for cell in row.iter().skip(2).take(n_nodes) {
            let v: f64 = cell.parse().map_err(|_| perr(format!("non-numeric reading `{cell}`")))?;
            if !v.is_finite() {
                return Err(perr(format!("non-finite reading `{cell}`")));
            }
            values.push(T::lit(v));
        }
        if current.as_ref().map(|p| p.id) != Some(id) {
            if let Some(p) = current.take() {
                finish(p, &mut seq_len, &mut out)?;
            }
            if !seen.insert(id) {
                return Err(perr(format!("rows of sample {id} are not contiguous")));
            }
            current = Some(Pending {
                id,
                first_line: line,
                values: Vec::new(),
                steps: 0,
                label,
            });
        }
        let p = current.as_mut().expect("just set");
        if t != p.steps {
            return Err(perr(format!("sample {id}: expected t = {}, found {t}", p.steps)));
        }
        if label != p.label {
            return Err(perr(format!("sample {id}: label changes within the sequence")));
        }
        p.values.extend(values);
        p.steps += 1;
    }
    if let Some(p) = current.take() {
        finish(p, &mut seq_len, &mut out)?;
    }
    Ok(out)
}

/// Reads externally supplied sequences into a dataset over `graph`.
///
/// All samples go to the training split. Samples carry their `label`
/// column as a class target, or [`Target::Unlabeled`] when the column is
/// absent.
pub fn ingest_csv_sequences<T: Scalar>(path: &Path, graph: &Graph<T>, gso_kind: GsoKind) -> Result<ProcessDataset<T>> {
    let records: Vec<SequenceRecord<T>> = read_sequences_csv(File::open(path)?, graph.n_nodes())?;
    let samples: Vec<Sample<T>> = records
        .into_iter()
        .map(|r| Sample {
            input: r.values,
            target: r.label.map_or(Target::Unlabeled, Target::Label),
        })
        .collect();
    let gso = build_gso(graph, gso_kind)?;
    let ds = ProcessDataset {
        splits: Splits {
            train: (0..samples.len()).collect(),
            ..Splits::default()
        },
        samples,
        graph: graph.clone(),
        gso,
        metadata: DatasetMetadata {
            generator: "csv".into(),
            seed: 0,
            noise: NoiseSpec::zero(),
            gso_kind,
            wave: None,
        },
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes `ds` into `dir` (created if missing).
pub fn save_dataset<T: Scalar>(ds: &ProcessDataset<T>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    ds.graph.write_edge_list(BufWriter::new(File::create(dir.join("graph.txt"))?))?;
    if let Some(coords) = ds.graph.coordinates() {
        let mut w = csv::Writer::from_writer(File::create(dir.join("coordinates.csv"))?);
        w.write_record(["x", "y"]).map_err(csv_err)?;
        for c in coords {
            w.write_record([fmt_value(c[0]), fmt_value(c[1])]).map_err(csv_err)?;
        }
        w.flush()?;
    }
    let meta = serde_json::to_string_pretty(&ds.metadata).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(dir.join("metadata.json"), meta + "\n")?;

    for split in Split::ALL {
        let idx = ds.splits.get(split);
        let mut inputs = Vec::with_capacity(idx.len());
        let mut targets = Vec::new();
        for &i in idx {
            let s = &ds.samples[i];
            let label = match &s.target {
                Target::Label(l) => Some(*l),
                Target::Sequence(t) => {
                    targets.push((i as u64, t, None));
                    None
                }
                Target::Unlabeled => None,
            };
            inputs.push((i as u64, &s.input, label));
        }
        write_sequences_csv(
            BufWriter::new(File::create(dir.join(format!("{}_inputs.csv", split.name())))?),
            &inputs,
        )?;
        if !targets.is_empty() {
            write_sequences_csv(
                BufWriter::new(File::create(dir.join(format!("{}_targets.csv", split.name())))?),
                &targets,
            )?;
        }
    }
    Ok(())
}

/// Reads a directory written by [`save_dataset`].
pub fn load_dataset<T: Scalar>(dir: &Path) -> Result<ProcessDataset<T>> {
    let graph_path = dir.join("graph.txt");
    let mut graph: Graph<T> = Graph::read_edge_list(File::open(&graph_path).map_err(|e| {
        Error::invalid(format!("{}: {e}", graph_path.display()))
    })?)?;
    let coord_path = dir.join("coordinates.csv");
    if coord_path.exists() {
        let mut r = csv::Reader::from_reader(File::open(&coord_path)?);
        let mut coords = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad coordinate `{s}`"),
                })
            };
            if rec.len() != 2 {
                return Err(Error::Parse { line, msg: "expected `x,y`".into() });
            }
            coords.push([parse(&rec[0])?, parse(&rec[1])?]);
        }
        graph = graph.with_coordinates(coords)?;
    }
    let metadata: DatasetMetadata = serde_json::from_str(&std::fs::read_to_string(dir.join("metadata.json"))?)
        .map_err(|e| Error::Parse {
            line: e.line(),
            msg: format!("metadata.json: {e}"),
        })?;
    let gso = build_gso(&graph, metadata.gso_kind)?;
    let n = graph.n_nodes();

    let mut indexed: Vec<(u64, Sample<T>, Split)> = Vec::new();
    for split in Split::ALL {
        let inputs_path = dir.join(format!("{}_inputs.csv", split.name()));
        let inputs: Vec<SequenceRecord<T>> = read_sequences_csv(File::open(&inputs_path)?, n)?;
        let targets_path = dir.join(format!("{}_targets.csv", split.name()));
        let mut targets = if targets_path.exists() {
            read_sequences_csv::<T, _>(File::open(&targets_path)?, n)?.into_iter()
        } else {
            Vec::new().into_iter()
        };
        for rec in inputs {
            let target = match rec.label {
                Some(l) => Target::Label(l),
                None => match targets.next() {
                    Some(t) if t.sample_id == rec.sample_id => Target::Sequence(t.values),
                    Some(t) => {
                        return Err(Error::invalid(format!(
                            "{}: target for sample {} found where sample {} was expected",
                            targets_path.display(),
                            t.sample_id,
                            rec.sample_id
                        )))
                    }
                    None => Target::Unlabeled,
                },
            };
            indexed.push((rec.sample_id, Sample { input: rec.values, target }, split));
        }
    }
    indexed.sort_by_key(|(id, _, _)| *id);
    if indexed.iter().enumerate().any(|(i, (id, _, _))| *id != i as u64) {
        return Err(Error::invalid("sample ids must be 0..count across the split files"));
    }
    let mut splits = Splits::default();
    let mut samples = Vec::with_capacity(indexed.len());
    for (id, sample, split) in indexed {
        match split {
            Split::Train => splits.train.push(id as usize),
            Split::Val => splits.val.push(id as usize),
            Split::Test => splits.test.push(id as usize),
        }
        samples.push(sample);
    }
    let ds = ProcessDataset {
        samples,
        splits,
        graph,
        gso,
        metadata,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_empty_dataset() {
        let recs: Vec<SequenceRecord<f64>> = read_sequences_csv("".as_bytes(), 3).unwrap();
        assert!(recs.is_empty());
    }

    #[test]
    fn handwritten_file() {
        let text = "sample_id,t,node_0,node_1,label\n7,0,0.5,-1.25,1\n7,1,2.0,3e-3,1\n";
        let recs: Vec<SequenceRecord<f64>> = read_sequences_csv(text.as_bytes(), 2).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].sample_id, 7);
        assert_eq!(recs[0].label, Some(1));
        assert_eq!(recs[0].values.shape(), &[2, 2, 1]);
        assert_eq!(recs[0].values.data(), &[0.5, -1.25, 2.0, 3e-3]);
    }

    fn parse_line(text: &str, n: usize) -> usize {
        match read_sequences_csv::<f64, _>(text.as_bytes(), n) {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_files_report_lines() {
        let h = "sample_id,t,node_0,node_1\n";
        assert_eq!(parse_line(&format!("{h}0,0,1,2\n0,1,1,x\n"), 2), 3);
        assert_eq!(parse_line(&format!("{h}0,0,1,2\n0,1,1\n"), 2), 3);
        assert_eq!(parse_line(&format!("{h}0,0,1,2\n0,1,1,2\n1,0,1,2\n"), 2), 4);
        assert_eq!(parse_line(&format!("{h}0,0,1,2\n0,2,1,2\n"), 2), 3);
        assert_eq!(parse_line(&format!("{h}0,0,1,2\n1,0,1,2\n0,1,1,2\n"), 2), 4);
        assert_eq!(parse_line(h, 3), 1);
        assert_eq!(parse_line("id,t,node_0\n", 1), 1);
    }
}
