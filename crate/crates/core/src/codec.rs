//! Newline-delimited record files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::VisualJoin;

pub fn write_record<W: Write, T: Serialize>(w: &mut W, record: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Parses one record per non-blank line.
pub fn read_records<R: Read, T: DeserializeOwned>(r: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::corrupt(format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_records_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    read_records(file)
}

pub fn write_records_file<'a, T, I>(path: &Path, records: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        write_record(&mut w, r)?;
    }
    w.flush()?;
    Ok(())
}

fn check_sorted(joins: &[VisualJoin]) -> Result<()> {
    for pair in joins.windows(2) {
        if pair[0].doc_id >= pair[1].doc_id {
            return Err(Error::invalid(format!(
                "visualjoins must be strictly ascending by doc_id ({} then {})",
                pair[0].doc_id, pair[1].doc_id
            )));
        }
    }
    Ok(())
}

/// Writes a visualjoin file. Records must be strictly ascending by doc_id.
pub fn write_visualjoins<W: Write>(w: W, joins: &[VisualJoin]) -> Result<()> {
    check_sorted(joins)?;
    let mut w = BufWriter::new(w);
    for j in joins {
        write_record(&mut w, j)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_visualjoins<R: Read>(r: R) -> Result<Vec<VisualJoin>> {
    let joins: Vec<VisualJoin> = read_records(r)?;
    check_sorted(&joins)?;
    Ok(joins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BinaryCode, DocId, FeatureVersion};

    fn join(id: u64) -> VisualJoin {
        VisualJoin {
            doc_id: DocId(id),
            annotations: vec!["red bag".into()],
            binary_code: BinaryCode::from_bits([true, false, true]),
            embedding: vec![0.25, -1.5, 3.0],
            color_signature: None,
            detected_objects: vec![],
            feature_versions: vec![FeatureVersion::new("embedding", 1)],
            epoch: 2,
        }
    }

    #[test]
    fn line_format() {
        let mut buf = Vec::new();
        write_visualjoins(&mut buf, &[join(1)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.ends_with('\n'));
        assert!(text.contains("\"doc_id\":\"0000000000000001\""));
        assert!(text.contains("\"binary_code\":{\"nbits\":3,\"bits\":\"oA==\"}"));
    }

    #[test]
    fn rejects_unsorted() {
        let mut buf = Vec::new();
        assert!(write_visualjoins(&mut buf, &[join(2), join(1)]).is_err());
        assert!(write_visualjoins(&mut buf, &[join(2), join(2)]).is_err());
        let raw = format!(
            "{}\n{}\n",
            serde_json::to_string(&join(5)).unwrap(),
            serde_json::to_string(&join(4)).unwrap()
        );
        assert!(read_visualjoins(raw.as_bytes()).is_err());
    }
}
