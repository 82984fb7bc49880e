use std::io::{Read, Write};
use std::path::Path;

use super::{AtomicMeasure, ParticleSnapshot};
use crate::error::{Error, Result};

fn header(dim: usize, kept: bool, lineage: bool) -> Vec<String> {
    let mut h: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    h.push("mass".into());
    if kept {
        h.push("kept".into());
    }
    if lineage {
        h.push("lineage".into());
    }
    h
}

/// Writes `x1,...,xd,mass` rows in atom order.
pub fn write_measure_csv<W: Write>(m: &AtomicMeasure, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(m.dim(), false, false))?;
    for (x, mass) in m.iter() {
        let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        row.push(mass.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a snapshot with its `kept` column and, if present, `lineage`.
pub fn write_snapshot_csv<W: Write>(s: &ParticleSnapshot, out: W) -> Result<()> {
    let m = &s.measure;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(m.dim(), true, s.lineage.is_some()))?;
    for (i, (x, mass)) in m.iter().enumerate() {
        let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        row.push(mass.to_string());
        row.push(u8::from(s.kept[i]).to_string());
        if let Some(l) = &s.lineage {
            row.push(l[i].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

struct Parsed {
    measure: AtomicMeasure,
    kept: Option<Vec<bool>>,
    lineage: Option<Vec<u64>>,
}

fn parse<R: Read>(input: R, origin: &Path) -> Result<Parsed> {
    let bad = |reason: String| Error::InvalidData {
        path: origin.to_path_buf(),
        reason,
    };
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let mass_col = names
        .iter()
        .position(|h| *h == "mass")
        .ok_or_else(|| bad("missing 'mass' column".into()))?;
    if mass_col == 0 {
        return Err(bad("no coordinate columns before 'mass'".into()));
    }
    for (i, name) in names[..mass_col].iter().enumerate() {
        if *name != format!("x{}", i + 1) {
            return Err(bad(format!("unexpected column '{name}'")));
        }
    }
    let kept_col = names.iter().position(|h| *h == "kept");
    let lineage_col = names.iter().position(|h| *h == "lineage");
    let dim = mass_col;
    let mut measure = AtomicMeasure::new(dim)?;
    let mut kept = kept_col.map(|_| Vec::new());
    let mut lineage = lineage_col.map(|_| Vec::new());
    let mut pos = vec![0.0; dim];
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| {
                    bad(format!(
                        "row {}: column {} is not a number",
                        line + 1,
                        i + 1
                    ))
                })
        };
        for (k, p) in pos.iter_mut().enumerate() {
            *p = num(k)?;
        }
        measure
            .push(&pos, num(mass_col)?)
            .map_err(|e| bad(format!("row {}: {e}", line + 1)))?;
        if let (Some(c), Some(v)) = (kept_col, kept.as_mut()) {
            v.push(num(c)? != 0.0);
        }
        if let (Some(c), Some(v)) = (lineage_col, lineage.as_mut()) {
            let tag = rec
                .get(c)
                .and_then(|s| s.trim().parse::<u64>().ok())
                .ok_or_else(|| bad(format!("row {}: bad lineage tag", line + 1)))?;
            v.push(tag);
        }
    }
    Ok(Parsed {
        measure,
        kept,
        lineage,
    })
}

/// Reads a measure in `x1,...,xd,mass` format; extra `kept`/`lineage`
/// columns are ignored.
pub fn read_measure_csv<R: Read>(input: R, origin: &Path) -> Result<AtomicMeasure> {
    Ok(parse(input, origin)?.measure)
}

/// Reads a snapshot file; a missing `kept` column means every atom is kept.
pub fn read_snapshot_csv<R: Read>(input: R, origin: &Path, time: f64) -> Result<ParticleSnapshot> {
    let p = parse(input, origin)?;
    let n = p.measure.len();
    Ok(ParticleSnapshot {
        time,
        kept: p.kept.unwrap_or_else(|| vec![true; n]),
        lineage: p.lineage,
        measure: p.measure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measure_round_trip_is_exact() {
        let m = AtomicMeasure::from_parts(
            2,
            vec![0.1, -2.0 / 3.0, 1e-300, 12345.678901234567],
            vec![1.0 / 3.0, 2.5],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_measure_csv(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,mass\n"));
        let back = read_measure_csv(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn snapshot_round_trip_keeps_flags_and_tags() {
        let m = AtomicMeasure::from_parts(1, vec![0.5, 1.5, 2.5], vec![0.1, 0.1, 0.1]).unwrap();
        let s = ParticleSnapshot {
            time: 1.0,
            measure: m,
            kept: vec![true, false, true],
            lineage: Some(vec![3, 3, 9]),
        };
        let mut buf = Vec::new();
        write_snapshot_csv(&s, &mut buf).unwrap();
        let back = read_snapshot_csv(buf.as_slice(), Path::new("mem"), 1.0).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_malformed_files() {
        let bad = "x1,weight\n0,1\n";
        assert!(read_measure_csv(bad.as_bytes(), Path::new("bad")).is_err());
        let neg = "x1,mass\n0,-1\n";
        assert!(read_measure_csv(neg.as_bytes(), Path::new("neg")).is_err());
    }
}
